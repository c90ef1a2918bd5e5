//! Closed-form reference values: Haar frame potentials, trace moments of
//! random unitaries, early and late decay rates, design times.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

fn binomial(n: &BigUint, k: usize) -> BigUint {
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * (n - BigUint::from(i)) / BigUint::from(i + 1);
    }
    acc
}

fn factorial(n: usize) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, i| acc * BigUint::from(i))
}

/// `binom(d^{2L}+k−1, k)^{-1}`, exactly.
pub fn haar_frame_potential_exact(d: usize, l: usize, k: usize) -> BigRational {
    let dim = BigUint::from(d).pow((2 * l) as u32);
    let denom = binomial(&(dim + BigUint::from(k) - BigUint::one()), k);
    BigRational::new(1.into(), denom.into())
}

pub fn haar_frame_potential(d: usize, l: usize, k: usize) -> f64 {
    haar_frame_potential_exact(d, l, k).to_f64().unwrap_or(0.0)
}

/// Leading large-`L` form `k!·d^{-2kL}`.
pub fn haar_frame_potential_asymptotic(d: usize, l: usize, k: usize) -> f64 {
    (ln_gamma(k as f64 + 1.0) - (2 * k * l) as f64 * (d as f64).ln()).exp()
}

pub const TRACE_MOMENT_MAX_K: usize = 8;

/// `T_{d,k} = E|tr U|^{2k}` over Haar `U(d)`: the number of pairs of standard
/// Young tableaux with at most `d` rows, summed over shapes of size `k`.
pub fn trace_moment(d: usize, k: usize) -> Result<BigUint> {
    if k > TRACE_MOMENT_MAX_K {
        return Err(Error::Budget(format!("trace moment limited to k ≤ {TRACE_MOMENT_MAX_K}, got {k}")));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("d must be ≥ 1".into()));
    }
    let kf = BigRational::from_integer(factorial(k).into());
    let mut total = BigRational::zero();
    let mut parts = Vec::new();
    partitions(k, k, d, &mut parts, &mut |s| {
        let l = s.len() as i64;
        let mut num = 1i64;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                num *= s[i] as i64 - s[j] as i64 - i as i64 + j as i64;
            }
        }
        let mut den = BigUint::one();
        for (i, &si) in s.iter().enumerate() {
            den *= factorial((l - 1 - i as i64 + si as i64) as usize);
        }
        let f = &kf * BigRational::new(num.into(), den.into());
        total += &f * &f;
    });
    if !total.is_integer() {
        return Err(Error::InvalidArgument("partition sum is not an integer".into()));
    }
    Ok(total.to_integer().to_biguint().expect("non-negative sum"))
}

// weakly decreasing positive parts, at most `max_len` of them
fn partitions(rest: usize, max_part: usize, max_len: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if rest == 0 {
        f(cur);
        return;
    }
    if cur.len() == max_len {
        return;
    }
    for part in (1..=max_part.min(rest)).rev() {
        cur.push(part);
        partitions(rest - part, part, max_len, cur, f);
        cur.pop();
    }
}

pub fn catalan(n: usize) -> BigUint {
    binomial(&BigUint::from(2 * n), n) / BigUint::from(n + 1)
}

/// Boundary driving sets of the early-time result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EarlyCase {
    /// Random Paulis at the boundary.
    A1,
    /// Haar-random one-site unitaries at the boundary.
    A2,
}

/// Early-time decay rate of `Δ₂^(k)` for dual-unitary circuits from Bell pairs.
pub fn du_early_rate(case: EarlyCase, d: usize, k: usize) -> Result<f64> {
    match case {
        EarlyCase::A1 => Ok(2.0 * std::f64::consts::LN_2),
        EarlyCase::A2 => {
            let t = trace_moment(d, k)?.to_f64().expect("finite");
            Ok(2.0 * k as f64 * (d as f64).ln() - t.ln())
        }
    }
}

/// Late-time rate of a brickwork of Haar-random two-site gates.
pub fn haar_circuit_rate(d: usize) -> f64 {
    let d = d as f64;
    4.0 * ((d * d + 1.0) / (2.0 * d)).ln()
}

/// Depth after which `Δ₂^(k) ≤ ε` given the subleading eigenvalue `λ̄₁`.
pub fn design_time(eps: f64, k: usize, l: usize, d: usize, lambda1_bar: f64) -> Result<f64> {
    if !(lambda1_bar > 0.0 && lambda1_bar < 1.0) {
        return Err(Error::InvalidArgument(format!("λ̄₁ must lie in (0, 1), got {lambda1_bar}")));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("ε must be positive, got {eps}")));
    }
    Ok(((2 * k * l) as f64 * (d as f64).ln() - eps.ln()) / (2.0 * (1.0 / lambda1_bar).ln()))
}

/// `E[X^r] = a^r Γ((q+r)/p) / Γ(q/p)` for the generalised gamma distribution.
pub fn gamma_moment(a: f64, p: f64, q: f64, r: f64) -> Result<f64> {
    if !(a > 0.0 && p > 0.0 && q > 0.0) || q + r <= 0.0 {
        return Err(Error::InvalidArgument(format!("gamma moment undefined for a={a}, p={p}, q={q}, r={r}")));
    }
    Ok((r * a.ln() + ln_gamma((q + r) / p) - ln_gamma(q / p)).exp())
}

/// Reference quantities for one `(d, L, k)`.
#[derive(Clone, Debug, Serialize)]
pub struct TheoryContext {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub k: usize,
    pub haar_frame_potential: f64,
    /// `binom(d^{2L}+k−1, k)` as a decimal string.
    pub haar_frame_potential_inverse: String,
    pub haar_frame_potential_asymptotic: f64,
    pub trace_moment: String,
    pub early_rate_a1: f64,
    pub early_rate_a2: f64,
    pub haar_circuit_rate: f64,
    pub design_time_unit_eps: f64,
}

impl TheoryContext {
    pub fn new(d: usize, l: usize, k: usize) -> Result<Self> {
        if d < 2 || l == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!("need d ≥ 2, L ≥ 1, k ≥ 1; got d={d}, L={l}, k={k}")));
        }
        let fh = haar_frame_potential_exact(d, l, k);
        Ok(TheoryContext {
            d,
            l,
            k,
            haar_frame_potential: fh.to_f64().unwrap_or(0.0),
            haar_frame_potential_inverse: fh.denom().to_string(),
            haar_frame_potential_asymptotic: haar_frame_potential_asymptotic(d, l, k),
            trace_moment: trace_moment(d, k)?.to_string(),
            early_rate_a1: du_early_rate(EarlyCase::A1, d, k)?,
            early_rate_a2: du_early_rate(EarlyCase::A2, d, k)?,
            haar_circuit_rate: haar_circuit_rate(d),
            design_time_unit_eps: design_time(1.0, k, l, d, 1.0 / (d * d) as f64)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::haar_unitary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haar_frame_potential_values() {
        assert_eq!(haar_frame_potential_exact(2, 1, 1), BigRational::new(1.into(), 4.into()));
        assert_eq!(haar_frame_potential_exact(2, 2, 2), BigRational::new(1.into(), 136.into()));
        // 257·256/2
        assert_eq!(haar_frame_potential_exact(2, 4, 2), BigRational::new(1.into(), 32896.into()));
        let ratio = haar_frame_potential(2, 12, 3) / haar_frame_potential_asymptotic(2, 12, 3);
        assert!((ratio - 1.0).abs() < 1e-3);
    }

    #[test]
    fn trace_moments() {
        for k in 1..=6 {
            assert_eq!(trace_moment(2, k).unwrap(), catalan(k), "k={k}");
        }
        for k in 1..=5 {
            for d in k..k + 3 {
                assert_eq!(trace_moment(d, k).unwrap(), factorial(k));
            }
        }
        assert_eq!(trace_moment(2, 3).unwrap(), BigUint::from(5u32));
        assert_eq!(trace_moment(2, 4).unwrap(), BigUint::from(14u32));
        // d=3, k=4: (f^λ)² summed over λ with ≤ 3 rows = 24 − 1 = 23
        assert_eq!(trace_moment(3, 4).unwrap(), BigUint::from(23u32));
        assert!(trace_moment(2, 9).is_err());
    }

    #[test]
    fn catalan_numbers() {
        let expect = [1u32, 1, 2, 5, 14, 42, 132];
        for (n, &c) in expect.iter().enumerate() {
            assert_eq!(catalan(n), BigUint::from(c));
        }
    }

    #[test]
    fn trace_moment_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let u = haar_unitary(2, &mut rng);
            acc += u.trace().norm_sqr().powi(4);
        }
        let mc = acc / n as f64;
        assert!((mc / 14.0 - 1.0).abs() < 0.03, "E|trU|^8 = {mc}");
    }

    #[test]
    fn early_rates() {
        let ln2 = std::f64::consts::LN_2;
        for k in 1..5 {
            assert!((du_early_rate(EarlyCase::A1, 2, k).unwrap() - 1.386_294).abs() < 1e-6);
        }
        assert!((du_early_rate(EarlyCase::A2, 2, 2).unwrap() - 8f64.ln()).abs() < 1e-12);
        assert!((du_early_rate(EarlyCase::A2, 2, 1).unwrap() - 2.0 * ln2).abs() < 1e-12);
        for d in 2..5 {
            let r1 = du_early_rate(EarlyCase::A2, d, 1).unwrap();
            for k in 1..7 {
                assert!(du_early_rate(EarlyCase::A2, d, k).unwrap() >= r1 - 1e-12);
            }
        }
    }

    #[test]
    fn circuit_rate() {
        assert!((haar_circuit_rate(2) - 0.892_574).abs() < 5e-7);
        assert!((haar_circuit_rate(3) - 2.0433).abs() < 1e-4);
        let mut prev = 0.0;
        for d in 2..50 {
            let r = haar_circuit_rate(d);
            assert!(r > prev);
            prev = r;
        }
        let d = 1e6f64;
        assert!((4.0 * ((d * d + 1.0) / (2.0 * d)).ln() - 4.0 * (d / 2.0).ln()).abs() < 1e-9);
    }

    #[test]
    fn design_times() {
        let eps: f64 = 1e-3;
        for (d, k, l) in [(2usize, 2usize, 4usize), (3, 3, 5)] {
            let lam = 1.0 / (d * d) as f64;
            let tau = design_time(eps, k, l, d, lam).unwrap();
            let expect = (k as f64 / 2.0) * l as f64 - eps.ln() / (4.0 * (d as f64).ln());
            assert!((tau - expect).abs() < 1e-12);
        }
        let tau = design_time(1.0, 2, 3, 2, 0.3).unwrap();
        assert!((tau - 6.0 * 2f64.ln() / (1.0 / 0.3f64).ln()).abs() < 1e-12);
        assert!(design_time(0.1, 2, 3, 2, 1.0).is_err());
        assert!(design_time(0.1, 2, 3, 2, 0.0).is_err());
    }

    #[test]
    fn gamma_moments() {
        assert!((gamma_moment(1.0, 2.0, 2.0, 0.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((gamma_moment(1.0, 2.0, 2.0, 2.0).unwrap() - 1.0).abs() < 1e-12);
        for k in 1..4 {
            let a = 2f64.powi(-5);
            let m = gamma_moment(a, 2.0, 2.0, 2.0 * k as f64).unwrap();
            let expect = a.powi(2 * k as i32) * (1..=k).product::<usize>() as f64;
            assert!((m / expect - 1.0).abs() < 1e-12);
        }
        for l in 10..13 {
            let m = gamma_moment(2f64.powi(-(l as i32)), 2.0, 2.0, 4.0).unwrap();
            assert!((m / haar_frame_potential(2, l, 2) - 1.0).abs() < 1e-3);
        }
        assert!(gamma_moment(-1.0, 2.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn context() {
        let c = TheoryContext::new(2, 4, 2).unwrap();
        assert_eq!(c.haar_frame_potential_inverse, "32896");
        assert!(TheoryContext::new(1, 4, 2).is_err());
    }
}

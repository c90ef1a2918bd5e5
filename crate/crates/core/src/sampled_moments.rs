//! Frame potentials `F^(k)(t) = E|⟨ψ_α|ψ_β⟩|^{2k}` over pairs of circuit
//! paths, by exhaustive enumeration (Pauli boundary driving) or by sampling.
//!
//! Sample `j` draws its randomness from `ChaCha8Rng::seed_from_u64(seed)` on
//! stream `j`, so results do not depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gates::{Draw, OneSiteKind};
use crate::kernel::pairwise_sum;
use crate::series::{Method, MomentRow, MomentSeries};
use crate::statevec::{step, step_with, CircuitPath, CircuitSpec, Driving, PureState};
use crate::theory::haar_frame_potential;

/// Upper bound on the number of overlap evaluations `4^{2 t_max}` in enumeration.
pub const ENUMERATION_BUDGET: f64 = 1e8;

const CHUNK: usize = 4096;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_orders(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("design orders must be a non-empty list of k ≥ 1".into()));
    }
    Ok(())
}

/// Exact `F^(k)(t)` for `t = 0..=t_max` and each `k` in `ks`.
///
/// All `4^t` branch states are kept and advanced together from `t` to `t+1`.
pub fn frame_potential_enumerate(spec: &CircuitSpec, psi0: &PureState, ks: &[usize], t_max: usize) -> Result<MomentSeries> {
    check_orders(ks)?;
    match spec.driving() {
        Driving::Boundary(set) if set.kind == OneSiteKind::PauliSet => {}
        _ => {
            return Err(Error::Unsupported(
                "enumeration needs Pauli boundary driving; use sampling for Haar or structured randomness".into(),
            ))
        }
    }
    let pairs = 16f64.powi(t_max as i32);
    if pairs > ENUMERATION_BUDGET {
        return Err(Error::Budget(format!(
            "enumerating t_max = {t_max} needs 4^{} ≈ {pairs:.2e} overlaps, limit {ENUMERATION_BUDGET:.0e}",
            2 * t_max
        )));
    }
    let l = spec.l();
    let d = spec.d();
    let mut rows = Vec::new();
    let mut branches = vec![psi0.clone()];
    for t in 0..=t_max {
        if t > 0 {
            branches = branches
                .par_iter()
                .flat_map_iter(|psi| {
                    (0..4u8).map(move |a| {
                        let mut next = psi.clone();
                        step_with(&mut next, spec, &[Draw::Pauli(a)]).map(|_| next)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
        }
        let f = all_pairs_mean(&branches, ks);
        for (i, &k) in ks.iter().enumerate() {
            rows.push(MomentRow::new(t, k, f[i], 0.0, haar_frame_potential(d, l, k), Method::Enumerate, branches.len() as u64));
        }
    }
    Ok(MomentSeries::new(rows))
}

// (1/N²) Σ_{a,b} |⟨ψ_a|ψ_b⟩|^{2k}, summed row by row in a fixed order
fn all_pairs_mean(states: &[PureState], ks: &[usize]) -> Vec<f64> {
    let n = states.len();
    let row_sums: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut acc = vec![0.0; ks.len()];
            for b in 0..n {
                let x = if a == b { 1.0 } else { states[a].inner(&states[b]).norm_sqr() };
                for (slot, &k) in acc.iter_mut().zip(ks) {
                    *slot += x.powi(k as i32);
                }
            }
            acc
        })
        .collect();
    (0..ks.len())
        .map(|i| pairwise_sum(&row_sums.iter().map(|r| r[i]).collect::<Vec<_>>()) / (n * n) as f64)
        .collect()
}

/// Running mean and variance that merge deterministically.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Welford) -> Welford {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        Welford { n, mean, m2 }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Delete-one jackknife error of the mean, which for a plain mean equals `s/√n`.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

fn merge_tree(v: &[Vec<Welford>]) -> Vec<Welford> {
    match v.len() {
        0 => Vec::new(),
        1 => v[0].clone(),
        n => {
            let (a, b) = v.split_at(n / 2);
            let (a, b) = (merge_tree(a), merge_tree(b));
            a.iter().zip(&b).map(|(x, y)| x.merge(y)).collect()
        }
    }
}

/// How sampled paths are paired into overlaps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pairing {
    /// `n_samples` independent pairs, `2·n_samples` evolutions.
    Disjoint,
    /// One pool of `n_samples` paths, every distinct pair used once.
    AllPairs,
}

fn trajectory(spec: &CircuitSpec, psi0: &PureState, t_max: usize, seed: u64, stream: u64) -> Result<Vec<PureState>> {
    let mut rng = rng_for(seed, stream);
    let mut psi = psi0.clone();
    let mut path = CircuitPath::default();
    let mut out = Vec::with_capacity(t_max + 1);
    out.push(psi.clone());
    for _ in 0..t_max {
        step(&mut psi, spec, &mut rng, &mut path)?;
        out.push(psi.clone());
    }
    Ok(out)
}

fn pair_overlaps(spec: &CircuitSpec, psi0: &PureState, t_max: usize, seed: u64, j: u64) -> Result<Vec<f64>> {
    let mut ra = rng_for(seed, 2 * j);
    let mut rb = rng_for(seed, 2 * j + 1);
    let (mut a, mut b) = (psi0.clone(), psi0.clone());
    let (mut pa, mut pb) = (CircuitPath::default(), CircuitPath::default());
    let mut out = Vec::with_capacity(t_max + 1);
    out.push(a.inner(&b).norm_sqr());
    for _ in 0..t_max {
        step(&mut a, spec, &mut ra, &mut pa)?;
        step(&mut b, spec, &mut rb, &mut pb)?;
        out.push(a.inner(&b).norm_sqr());
    }
    Ok(out)
}

/// Monte-Carlo estimate of `F^(k)(t)` for `t = 0..=t_max`.
pub fn frame_potential_sample(
    spec: &CircuitSpec,
    psi0: &PureState,
    ks: &[usize],
    t_max: usize,
    n_samples: usize,
    seed: u64,
    pairing: Pairing,
) -> Result<MomentSeries> {
    check_orders(ks)?;
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n_samples}")));
    }
    let (means, errs, count) = match pairing {
        Pairing::Disjoint => sample_disjoint(spec, psi0, ks, t_max, n_samples, seed)?,
        Pairing::AllPairs => sample_all_pairs(spec, psi0, ks, t_max, n_samples, seed)?,
    };
    let mut rows = Vec::new();
    for t in 0..=t_max {
        for (i, &k) in ks.iter().enumerate() {
            let idx = t * ks.len() + i;
            rows.push(MomentRow::new(t, k, means[idx], errs[idx], haar_frame_potential(spec.d(), spec.l(), k), Method::Sample, count));
        }
    }
    let mut s = MomentSeries::new(rows);
    s.seed = Some(seed);
    Ok(s)
}

type Estimates = (Vec<f64>, Vec<f64>, u64);

fn sample_disjoint(spec: &CircuitSpec, psi0: &PureState, ks: &[usize], t_max: usize, n: usize, seed: u64) -> Result<Estimates> {
    let width = (t_max + 1) * ks.len();
    let n_chunks = n.div_ceil(CHUNK);
    let chunks: Vec<Vec<Welford>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Welford::default(); width];
            for j in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let ov = pair_overlaps(spec, psi0, t_max, seed, j as u64)?;
                for (t, x) in ov.iter().enumerate() {
                    for (i, &k) in ks.iter().enumerate() {
                        acc[t * ks.len() + i].push(x.powi(k as i32));
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let total = merge_tree(&chunks);
    Ok((total.iter().map(|w| w.mean).collect(), total.iter().map(|w| w.stderr()).collect(), n as u64))
}

// U-statistic over the n(n−1)/2 distinct pairs of one pool; error from the
// delete-one jackknife over pool members
fn sample_all_pairs(spec: &CircuitSpec, psi0: &PureState, ks: &[usize], t_max: usize, n: usize, seed: u64) -> Result<Estimates> {
    if n < 3 {
        return Err(Error::InvalidArgument("all-pairs pooling needs at least 3 paths".into()));
    }
    let trajs: Vec<Vec<PureState>> = (0..n).into_par_iter().map(|j| trajectory(spec, psi0, t_max, seed, j as u64)).collect::<Result<_>>()?;
    let width = (t_max + 1) * ks.len();
    // row_sums[a][idx] = Σ_{b≠a} h_ab
    let row_sums: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut acc = vec![0.0; width];
            for b in 0..n {
                if a == b {
                    continue;
                }
                for t in 0..=t_max {
                    let x = trajs[a][t].inner(&trajs[b][t]).norm_sqr();
                    for (i, &k) in ks.iter().enumerate() {
                        acc[t * ks.len() + i] += x.powi(k as i32);
                    }
                }
            }
            acc
        })
        .collect();
    let pairs = (n * (n - 1) / 2) as f64;
    let pairs_minus = ((n - 1) * (n - 2) / 2) as f64;
    let mut means = vec![0.0; width];
    let mut errs = vec![0.0; width];
    for idx in 0..width {
        let col: Vec<f64> = row_sums.iter().map(|r| r[idx]).collect();
        let total = pairwise_sum(&col) / 2.0;
        let u = total / pairs;
        let loo: Vec<f64> = col.iter().map(|r| (total - r) / pairs_minus).collect();
        let loo_mean = pairwise_sum(&loo) / n as f64;
        let var = (n - 1) as f64 / n as f64 * pairwise_sum(&loo.iter().map(|x| (x - loo_mean).powi(2)).collect::<Vec<_>>());
        means[idx] = u;
        errs[idx] = var.sqrt();
    }
    Ok((means, errs, pairs as u64))
}

/// `|⟨ψ_α|ψ_β⟩|` after `t` steps for `n_samples` independent path pairs.
pub fn collect_overlaps(spec: &CircuitSpec, psi0: &PureState, t: usize, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    (0..n_samples)
        .into_par_iter()
        .with_min_len(64)
        .map(|j| pair_overlaps(spec, psi0, t, seed, j as u64).map(|v| v[t].sqrt().min(1.0)))
        .collect()
}

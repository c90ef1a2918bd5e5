//! Dominant subleading eigenvalue of a matrix-free channel after removing its
//! known unit eigenspace.
//!
//! The operator is wrapped as `Q B Q` with `Q = 𝟙 − VV†` projecting out the
//! orthonormalised fixed points `V`. Since `B` leaves `span V` invariant and
//! those vectors are also left fixed points, the spectrum of `QBQ` on `V⊥`
//! is the rest of the spectrum of `B`. Eigenvalues are found by a restarted
//! Rayleigh–Ritz iteration on a Krylov basis.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel;
use crate::perm_dynamics::{perm_vector, permutations, ReducedCircuit};
use crate::replica_channel::ReplicaChannel;

/// A linear map given only through its action on vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64], y: &mut [C64]);
}

impl LinearOperator for ReducedCircuit {
    fn dim(&self) -> usize {
        ReducedCircuit::dim(self)
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        y.copy_from_slice(x);
        ReducedCircuit::apply(self, y);
    }
}

impl LinearOperator for ReplicaChannel {
    fn dim(&self) -> usize {
        ReplicaChannel::dim(self)
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        y.copy_from_slice(x);
        ReplicaChannel::apply(self, y);
    }
}

/// A dense matrix as an operator (tests and small diagnostics).
pub struct DenseOperator(pub DMatrix<C64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        for (i, slot) in y.iter_mut().enumerate() {
            *slot = (0..x.len()).map(|j| self.0[(i, j)] * x[j]).sum();
        }
    }
}

/// `σ^{⊗2L}` in reduced coordinates, one vector per permutation.
pub fn reduced_unit_vectors(circuit: &ReducedCircuit) -> Vec<Vec<C64>> {
    let basis = circuit.basis();
    (0..basis.perms().len())
        .map(|i| {
            let v = basis.reduced_perm(i);
            let f: Vec<&[C64]> = (0..2 * circuit.l()).map(|_| v.as_slice()).collect();
            kernel::kron_vecs(&f)
        })
        .collect()
}

/// `σ^{⊗2L}` in the full replica space.
pub fn replica_unit_vectors(d: usize, l: usize, k: usize) -> Vec<Vec<C64>> {
    permutations(k)
        .iter()
        .map(|p| {
            let v = perm_vector(d, p);
            let f: Vec<&[C64]> = (0..2 * l).map(|_| v.as_slice()).collect();
            kernel::kron_vecs(&f)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Relative residual `‖Bv − λv‖/|λ|` required for convergence.
    pub tol: f64,
    pub max_applications: usize,
    /// Krylov basis size at which the iteration restarts.
    pub restart_dim: usize,
    /// Ritz vectors kept across a restart.
    pub keep: usize,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions { tol: 1e-8, max_applications: 10_000, restart_dim: 40, keep: 10, seed: 7 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RitzValue {
    pub magnitude: f64,
    pub phase: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralResult {
    /// Number of supplied fixed points that `B` leaves invariant.
    pub unit_multiplicity: usize,
    pub lambda1: f64,
    /// Ritz values within the degeneracy tolerance of `|λ₁|`.
    pub lambda1_values: Vec<RitzValue>,
    /// Relative residual of the leading Ritz pair.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

const DEGENERACY_TOL: f64 = 1e-6;

fn dot(a: &[C64], b: &[C64]) -> C64 {
    kernel::inner(a, b)
}

fn axpy(y: &mut [C64], alpha: C64, x: &[C64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

fn normalize(v: &mut [C64]) -> f64 {
    let n = kernel::norm_sqr(v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

// two passes of classical Gram–Schmidt
fn orthogonalize(v: &mut [C64], basis: &[Vec<C64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, v);
            axpy(v, -c, q);
        }
    }
}

struct Deflated<'a, O: LinearOperator + ?Sized> {
    op: &'a O,
    v: Vec<Vec<C64>>,
}

impl<'a, O: LinearOperator + ?Sized> Deflated<'a, O> {
    fn new(op: &'a O, vecs: &[Vec<C64>]) -> Self {
        let mut v: Vec<Vec<C64>> = Vec::new();
        for x in vecs {
            let scale = kernel::norm_sqr(x).sqrt();
            let mut q = x.clone();
            orthogonalize(&mut q, &v);
            if normalize(&mut q) > 1e-10 * scale {
                v.push(q);
            }
        }
        Deflated { op, v }
    }

    fn project(&self, x: &mut [C64]) {
        orthogonalize(x, &self.v);
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut xin = x.to_vec();
        self.project(&mut xin);
        let mut y = vec![C64::new(0.0, 0.0); x.len()];
        self.op.apply(&xin, &mut y);
        self.project(&mut y);
        y
    }
}

// eigenvectors of an upper-triangular T by back substitution
fn triangular_eigenvector(t: &DMatrix<C64>, i: usize) -> DVector<C64> {
    let n = t.nrows();
    let lam = t[(i, i)];
    let mut s = DVector::<C64>::zeros(n);
    s[i] = C64::new(1.0, 0.0);
    let scale = t.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1e-300);
    for r in (0..i).rev() {
        let acc: C64 = (r + 1..=i).map(|c| t[(r, c)] * s[c]).sum();
        let mut den = t[(r, r)] - lam;
        if den.norm() < 1e-14 * scale {
            den = C64::new(1e-14 * scale, 0.0);
        }
        s[r] = -acc / den;
    }
    let n2 = s.norm();
    s / C64::new(n2, 0.0)
}

struct Ritz {
    value: C64,
    coeffs: DVector<C64>,
}

fn ritz_pairs(h: &DMatrix<C64>) -> Vec<Ritz> {
    let (z, t) = Schur::new(h.clone()).unpack();
    let mut out: Vec<Ritz> = (0..h.nrows())
        .map(|i| Ritz { value: t[(i, i)], coeffs: &z * triangular_eigenvector(&t, i) })
        .collect();
    out.sort_by(|a, b| b.value.norm().total_cmp(&a.value.norm()));
    out
}

/// Leading eigenvalues of `op` on the orthogonal complement of `deflation`.
pub fn subleading_eigenvalue<O: LinearOperator + ?Sized>(op: &O, deflation: &[Vec<C64>], opts: &SpectralOptions) -> Result<SpectralResult> {
    let n = op.dim();
    if deflation.is_empty() {
        return Err(Error::InvalidArgument("deflation basis is empty".into()));
    }
    if deflation.iter().any(|v| v.len() != n) {
        return Err(Error::DimensionMismatch(format!("deflation vectors must have length {n}")));
    }
    if opts.restart_dim < 4 || opts.keep == 0 || opts.keep >= opts.restart_dim {
        return Err(Error::InvalidArgument("need restart_dim ≥ 4 and 0 < keep < restart_dim".into()));
    }

    let unit_multiplicity = deflation
        .iter()
        .filter(|x| {
            let mut y = vec![C64::new(0.0, 0.0); n];
            op.apply(x, &mut y);
            let err = y.iter().zip(x.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            err <= 1e-9 * kernel::norm_sqr(x).sqrt()
        })
        .count();
    let a = Deflated::new(op, deflation);
    let max_krylov = opts.restart_dim.min(n.saturating_sub(a.v.len()));
    if max_krylov == 0 {
        return Ok(SpectralResult { unit_multiplicity, lambda1: 0.0, lambda1_values: vec![], residual: 0.0, iterations: 0, converged: true });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<C64> = (0..n)
        .map(|_| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
        .collect();
    a.project(&mut start);
    normalize(&mut start);

    let mut q: Vec<Vec<C64>> = vec![start];
    let mut aq: Vec<Vec<C64>> = vec![a.apply(&q[0])];
    let mut h = DMatrix::<C64>::from_element(1, 1, dot(&q[0], &aq[0]));
    let mut applications = 1;

    loop {
        let pairs = ritz_pairs(&h);
        let lead = &pairs[0];
        let mut resid = vec![C64::new(0.0, 0.0); n];
        for (j, c) in lead.coeffs.iter().enumerate() {
            axpy(&mut resid, *c, &aq[j]);
            axpy(&mut resid, -lead.value * c, &q[j]);
        }
        let rnorm = kernel::norm_sqr(&resid).sqrt();
        let rel = if lead.value.norm() > 0.0 { rnorm / lead.value.norm() } else { rnorm };
        let converged = rel <= opts.tol || rnorm < 1e-14;
        if converged || applications >= opts.max_applications || q.len() >= n - a.v.len() {
            let converged = converged || q.len() >= n - a.v.len();
            return Ok(report(pairs, &q, &aq, unit_multiplicity, rel, applications, converged));
        }

        let next = if q.len() >= max_krylov {
            // thick restart on the leading Ritz vectors
            let keep = opts.keep.min(pairs.len());
            let mut ys: Vec<DVector<C64>> = Vec::new();
            for p in pairs.iter().take(keep) {
                let mut y = p.coeffs.clone();
                for prev in &ys {
                    let c = prev.dotc(&y);
                    y -= prev * c;
                }
                for prev in &ys {
                    let c = prev.dotc(&y);
                    y -= prev * c;
                }
                let nrm = y.norm();
                if nrm > 1e-8 {
                    ys.push(y / C64::new(nrm, 0.0));
                }
            }
            let combine = |src: &[Vec<C64>], y: &DVector<C64>| {
                let mut out = vec![C64::new(0.0, 0.0); n];
                for (j, c) in y.iter().enumerate() {
                    axpy(&mut out, *c, &src[j]);
                }
                out
            };
            let new_q: Vec<Vec<C64>> = ys.iter().map(|y| combine(&q, y)).collect();
            let new_aq: Vec<Vec<C64>> = ys.iter().map(|y| combine(&aq, y)).collect();
            let ymat = DMatrix::from_columns(&ys);
            h = ymat.adjoint() * &h * &ymat;
            q = new_q;
            aq = new_aq;
            resid
        } else {
            aq.last().expect("non-empty").clone()
        };

        let mut w = next;
        orthogonalize(&mut w, &q);
        if normalize(&mut w) < 1e-12 {
            // invariant subspace reached: the Ritz values are exact
            let pairs = ritz_pairs(&h);
            return Ok(report(pairs, &q, &aq, unit_multiplicity, 0.0, applications, true));
        }
        let aw = a.apply(&w);
        applications += 1;
        let m = q.len();
        let mut h2 = DMatrix::<C64>::zeros(m + 1, m + 1);
        h2.view_mut((0, 0), (m, m)).copy_from(&h);
        for i in 0..m {
            h2[(i, m)] = dot(&q[i], &aw);
            h2[(m, i)] = dot(&w, &aq[i]);
        }
        h2[(m, m)] = dot(&w, &aw);
        h = h2;
        q.push(w);
        aq.push(aw);
    }
}

fn report(pairs: Vec<Ritz>, q: &[Vec<C64>], aq: &[Vec<C64>], unit_multiplicity: usize, rel: f64, applications: usize, converged: bool) -> SpectralResult {
    let n = q[0].len();
    let top = pairs[0].value.norm();
    let mut values = Vec::new();
    for p in pairs.iter().filter(|p| (p.value.norm() - top).abs() <= DEGENERACY_TOL * top.max(1e-300)) {
        let mut r = vec![C64::new(0.0, 0.0); n];
        for (j, c) in p.coeffs.iter().enumerate() {
            axpy(&mut r, *c, &aq[j]);
            axpy(&mut r, -p.value * c, &q[j]);
        }
        let res = kernel::norm_sqr(&r).sqrt() / p.value.norm().max(1e-300);
        values.push(RitzValue { magnitude: p.value.norm(), phase: p.value.arg(), residual: res });
    }
    SpectralResult { unit_multiplicity, lambda1: top, lambda1_values: values, residual: rel, iterations: applications, converged }
}

/// What is known about the gate when predicting `|λ₁|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateContext {
    /// Entangling power of a dual-unitary gate (sufficient for `k = 2`).
    EntanglingPower(f64),
    /// Magnon-channel eigenvalue `ρ_k`.
    Magnon(f64),
}

/// `max{d^{-2}, (1−p)²}` for `k = 2`, `max{d^{-2}, ρ_k}` in general.
pub fn predicted_lambda1(d: usize, k: usize, ctx: GateContext) -> Result<f64> {
    let floor = 1.0 / (d * d) as f64;
    match ctx {
        GateContext::EntanglingPower(p) => {
            if k != 2 {
                return Err(Error::InvalidArgument("entangling power alone determines the prediction only for k = 2; supply ρ_k".into()));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("entangling power must lie in [0, 1], got {p}")));
            }
            Ok(floor.max((1.0 - p) * (1.0 - p)))
        }
        GateContext::Magnon(rho) => Ok(floor.max(rho)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm_dynamics::{AveragedGate, PermBasis};
    use std::sync::Arc;

    fn unit(n: usize, i: usize) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); n];
        v[i] = C64::new(1.0, 0.0);
        v
    }

    #[test]
    fn diagonal_operator() {
        let diag = [1.0, 0.7, 0.3];
        let op = DenseOperator(DMatrix::from_diagonal(&DVector::from_iterator(3, diag.iter().map(|&x| C64::new(x, 0.0)))));
        let r = subleading_eigenvalue(&op, &[unit(3, 0)], &SpectralOptions::default()).unwrap();
        assert!((r.lambda1 - 0.7).abs() < 1e-10);
        assert_eq!(r.unit_multiplicity, 1);
        assert!(r.converged);
    }

    #[test]
    fn non_normal_operator_with_restarts() {
        // upper-triangular 200×200 with known diagonal, forcing several restarts
        let n = 200;
        let mut m = DMatrix::<C64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(0.9 * 0.97f64.powi(i as i32 - 1), 0.0);
            if i + 1 < n {
                m[(i, i + 1)] = C64::new(0.05, 0.02);
            }
        }
        m[(0, 0)] = C64::new(1.0, 0.0);
        m[(0, 1)] = C64::new(0.0, 0.0);
        // B e₀ = e₀ and e₀ is also a left fixed point once row 0 is decoupled
        let op = DenseOperator(m);
        let opts = SpectralOptions { restart_dim: 20, keep: 6, ..Default::default() };
        let r = subleading_eigenvalue(&op, &[unit(n, 0)], &opts).unwrap();
        assert!(r.converged, "residual {}", r.residual);
        assert!((r.lambda1 - 0.9).abs() < 1e-8, "{}", r.lambda1);
    }

    #[test]
    fn complex_pair() {
        let c = 0.5f64;
        let s = 0.4f64;
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 0.0, 0.0,
            0.0, c, -s, 0.0,
            0.0, s, c, 0.0,
            0.0, 0.0, 0.0, 0.2,
        ]).map(|x| C64::new(x, 0.0));
        let r = subleading_eigenvalue(&DenseOperator(m), &[unit(4, 0)], &SpectralOptions::default()).unwrap();
        assert!((r.lambda1 - (c * c + s * s).sqrt()).abs() < 1e-10);
        assert_eq!(r.lambda1_values.len(), 2);
    }

    #[test]
    fn reduced_du_circuit_spectrum_is_bounded() {
        let w = AveragedGate::du_k2(2, 0.3).unwrap();
        let circ = ReducedCircuit::uniform(3, &w).unwrap();
        let defl = reduced_unit_vectors(&circ);
        let r = subleading_eigenvalue(&circ, &defl, &SpectralOptions::default()).unwrap();
        assert_eq!(r.unit_multiplicity, 2);
        assert!(r.lambda1 <= 1.0 + 1e-9);
        assert!(r.converged);
        // dense cross-check
        let n = circ.dim();
        let mut dense = DMatrix::<C64>::zeros(n, n);
        for j in 0..n {
            let mut y = vec![C64::new(0.0, 0.0); n];
            LinearOperator::apply(&circ, &unit(n, j), &mut y);
            for i in 0..n {
                dense[(i, j)] = y[i];
            }
        }
        let mut ev: Vec<f64> = crate::perm_dynamics::eigenvalues(dense).iter().map(|z| z.norm()).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        assert!((ev[0] - 1.0).abs() < 1e-9 && (ev[1] - 1.0).abs() < 1e-9);
        assert!((ev[2] - r.lambda1).abs() < 1e-8, "{} vs {}", ev[2], r.lambda1);
    }

    #[test]
    fn deflation_is_complete() {
        let basis = Arc::new(PermBasis::new(2, 2).unwrap());
        let w = AveragedGate::from_matrix(basis, AveragedGate::du_k2(2, 0.6).unwrap().matrix().clone()).unwrap();
        let circ = ReducedCircuit::uniform(2, &w).unwrap();
        let defl = reduced_unit_vectors(&circ);
        let a = Deflated::new(&circ, &defl);
        assert_eq!(a.v.len(), 2);
        let mut x: Vec<C64> = (0..circ.dim()).map(|i| C64::new(i as f64, 1.0)).collect();
        a.project(&mut x);
        for u in &defl {
            assert!(dot(u, &x).norm() < 1e-10);
        }
    }

    #[test]
    fn predictions() {
        assert!((predicted_lambda1(2, 2, GateContext::EntanglingPower(0.5)).unwrap() - 0.25).abs() < 1e-15);
        assert!((predicted_lambda1(2, 2, GateContext::EntanglingPower(0.2)).unwrap() - 0.64).abs() < 1e-12);
        assert!((predicted_lambda1(3, 3, GateContext::Magnon(0.0)).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        assert!(predicted_lambda1(2, 3, GateContext::EntanglingPower(0.5)).is_err());
    }

    #[test]
    fn errors() {
        let op = DenseOperator(DMatrix::identity(3, 3));
        assert!(subleading_eigenvalue(&op, &[], &SpectralOptions::default()).is_err());
        assert!(subleading_eigenvalue(&op, &[unit(2, 0)], &SpectralOptions::default()).is_err());
    }
}

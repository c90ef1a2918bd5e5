//! Structured-random (Case b) dynamics restricted to the span of permutation
//! states on every site.
//!
//! When every gate leg is twirled by Haar one-site unitaries, each site of the
//! replica state lives in `span{|σ⟩ : σ ∈ S_k}` and the channel is a brickwork
//! of averaged gates `W` acting on `m`-dimensional sites, `m ≤ k!`.

use std::sync::Arc;

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gates::{row_major, CMatrix, Gate};
use crate::kernel;
use crate::replica_channel::{apply_folded_gate, haar_residual};
use crate::series::{Delta2Route, Method, MomentRow, MomentSeries};
use crate::statevec::{bell_pair, InitialState};
use crate::theory::haar_frame_potential;

/// Largest number of replicas for which `k!` permutations are enumerated.
pub const MAX_REPLICAS: usize = 6;
/// Largest per-site replica dimension `d^{2k}` handled densely.
pub const MAX_SITE_DIM: usize = 4096;
const RANK_CUTOFF: f64 = 1e-10;

/// All permutations of `0..k` in lexicographic order of their one-line notation.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

pub fn cycle_count(p: &[usize]) -> usize {
    let mut seen = vec![false; p.len()];
    let mut cycles = 0;
    for start in 0..p.len() {
        if !seen[start] {
            cycles += 1;
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                i = p[i];
            }
        }
    }
    cycles
}

fn inverse(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &x) in p.iter().enumerate() {
        inv[x] = i;
    }
    inv
}

fn compose(a: &[usize], b: &[usize]) -> Vec<usize> {
    b.iter().map(|&x| a[x]).collect()
}

/// `⟨s₁r₁…s_kr_k|σ⟩ = Π_m δ(s_m, r_{σ(m)})`, unnormalised, length `d^{2k}`.
pub fn perm_vector(d: usize, perm: &[usize]) -> Vec<C64> {
    let k = perm.len();
    let mut v = vec![C64::new(0.0, 0.0); kernel::pow(d, 2 * k)];
    // choose r freely; s is then fixed by s_m = r_{σ(m)}
    for r_code in 0..kernel::pow(d, k) {
        let mut r = vec![0; k];
        let mut c = r_code;
        for m in (0..k).rev() {
            r[m] = c % d;
            c /= d;
        }
        let mut idx = 0;
        for m in 0..k {
            idx = (idx * d + r[perm[m]]) * d + r[m];
        }
        v[idx] = C64::new(1.0, 0.0);
    }
    v
}

/// Orthonormal basis of the span of permutation states on one site.
#[derive(Clone, Debug)]
pub struct PermBasis {
    d: usize,
    k: usize,
    perms: Vec<Vec<usize>>,
    gram: DMatrix<f64>,
    embed: CMatrix,
}

impl PermBasis {
    /// For `k = 2` the basis is `{|○⟩, |●⟩}` with `|●⟩ = (d|□⟩ − |○⟩)/√(d²−1)`;
    /// otherwise it is the symmetric (Löwdin) orthonormalisation.
    pub fn new(d: usize, k: usize) -> Result<Self> {
        if k == 2 {
            Self::circle_basis(d)
        } else {
            Self::lowdin(d, k)
        }
    }

    pub fn lowdin(d: usize, k: usize) -> Result<Self> {
        let (perms, gram, phi) = Self::raw(d, k)?;
        let eig = gram.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.max();
        let keep: Vec<usize> = (0..perms.len()).filter(|&i| eig.eigenvalues[i] > RANK_CUTOFF * lmax).collect();
        let embed = if keep.len() == perms.len() {
            // Φ G^{-1/2}
            let inv_sqrt = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()))
                * eig.eigenvectors.transpose();
            &phi * inv_sqrt.map(|x| C64::new(x, 0.0))
        } else {
            let mut sel = DMatrix::<f64>::zeros(perms.len(), keep.len());
            for (c, &i) in keep.iter().enumerate() {
                let s = 1.0 / eig.eigenvalues[i].sqrt();
                for r in 0..perms.len() {
                    sel[(r, c)] = eig.eigenvectors[(r, i)] * s;
                }
            }
            &phi * sel.map(|x| C64::new(x, 0.0))
        };
        Ok(PermBasis { d, k, perms, gram, embed })
    }

    fn circle_basis(d: usize) -> Result<Self> {
        let (perms, gram, phi) = Self::raw(d, 2)?;
        let df = d as f64;
        let circle = phi.column(0) / C64::new(df, 0.0);
        let square = phi.column(1) / C64::new(df, 0.0);
        let black = (square * C64::new(df, 0.0) - &circle) / C64::new((df * df - 1.0).sqrt(), 0.0);
        let embed = CMatrix::from_columns(&[circle, black]);
        Ok(PermBasis { d, k: 2, perms, gram, embed })
    }

    fn raw(d: usize, k: usize) -> Result<(Vec<Vec<usize>>, DMatrix<f64>, CMatrix)> {
        if d < 2 || k == 0 {
            return Err(Error::InvalidArgument(format!("need d ≥ 2 and k ≥ 1, got d={d}, k={k}")));
        }
        if k > MAX_REPLICAS {
            return Err(Error::Budget(format!("k = {k} replicas exceed the limit {MAX_REPLICAS}")));
        }
        let site = kernel::pow(d, 2 * k);
        if site > MAX_SITE_DIM {
            return Err(Error::Budget(format!("site dimension d^(2k) = {site} exceeds {MAX_SITE_DIM}")));
        }
        let perms = permutations(k);
        let n = perms.len();
        let gram = DMatrix::from_fn(n, n, |i, j| (d as f64).powi(cycle_count(&compose(&inverse(&perms[i]), &perms[j])) as i32));
        let mut phi = CMatrix::zeros(site, n);
        for (j, p) in perms.iter().enumerate() {
            for (i, x) in perm_vector(d, p).into_iter().enumerate() {
                phi[(i, j)] = x;
            }
        }
        Ok((perms, gram, phi))
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Reduced site dimension.
    pub fn m(&self) -> usize {
        self.embed.ncols()
    }

    pub fn site_dim(&self) -> usize {
        self.embed.nrows()
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    /// `G_{στ} = d^{#cycles(σ⁻¹τ)}`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `d^{2k} × m` isometry onto the permutation span.
    pub fn embed(&self) -> &CMatrix {
        &self.embed
    }

    /// Orthogonal projector onto the permutation span (the one-site Haar twirl).
    pub fn projector(&self) -> CMatrix {
        &self.embed * self.embed.adjoint()
    }

    /// Coordinates `embed† v` of a full site vector.
    pub fn reduce(&self, v: &[C64]) -> Vec<C64> {
        (0..self.m()).map(|a| (0..v.len()).map(|s| self.embed[(s, a)].conj() * v[s]).sum()).collect()
    }

    /// Reduced coordinates of the unnormalised permutation state `|σ_i⟩`.
    pub fn reduced_perm(&self, i: usize) -> Vec<C64> {
        self.reduce(&perm_vector(self.d, &self.perms[i]))
    }

    /// Reduced coordinates of `|○⟩`, the identity permutation normalised to 1.
    pub fn circle(&self) -> Vec<C64> {
        let scale = (self.d as f64).powf(-(self.k as f64) / 2.0);
        self.reduced_perm(0).into_iter().map(|x| x * scale).collect()
    }

    /// Reduced coordinates of `|●⟩` (`k = 2` only).
    pub fn black(&self) -> Result<Vec<C64>> {
        if self.k != 2 {
            return Err(Error::Unsupported("the magnon vector is defined for k = 2".into()));
        }
        let df = self.d as f64;
        let circle = self.circle();
        let square: Vec<C64> = self.reduced_perm(1).into_iter().map(|x| x / df).collect();
        let norm = (df * df - 1.0).sqrt();
        Ok(square.iter().zip(&circle).map(|(s, c)| (s * df - c) / norm).collect())
    }
}

/// The two-site gate `(D⊗D)(U⊗U*)^{⊗k}(D⊗D)` in the reduced basis.
#[derive(Clone, Debug)]
pub struct AveragedGate {
    basis: Arc<PermBasis>,
    matrix: CMatrix,
}

impl AveragedGate {
    pub fn new(g: &Gate, basis: Arc<PermBasis>) -> Result<Self> {
        if g.d() != basis.d {
            return Err(Error::DimensionMismatch(format!("gate d = {}, basis d = {}", g.d(), basis.d)));
        }
        let (d, k) = (basis.d, basis.k);
        let m = basis.m();
        let site = basis.site_dim();
        let e = basis.embed();
        let e_conj = e.map(|x| x.conj());
        let u = row_major(g.matrix());
        let uc: Vec<C64> = u.iter().map(|x| x.conj()).collect();
        let mut w = CMatrix::zeros(m * m, m * m);
        for i in 0..m {
            for j in 0..m {
                let mut v = kernel::kron_vecs(&[e.column(i).as_slice(), e.column(j).as_slice()]);
                apply_folded_gate(&mut v, d, k, 2, 0, &u, &uc);
                let vm = CMatrix::from_row_slice(site, site, &v);
                let out = e.adjoint() * vm * &e_conj;
                for a in 0..m {
                    for b in 0..m {
                        w[(a * m + b, i * m + j)] = out[(a, b)];
                    }
                }
            }
        }
        Ok(AveragedGate { basis, matrix: w })
    }

    /// Averaged dual-unitary gate with entangling power `p`, in the basis
    /// `{○○, ○●, ●○, ●●}`.
    pub fn du_k2(d: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("entangling power must lie in [0, 1], got {p}")));
        }
        let basis = Arc::new(PermBasis::new(d, 2)?);
        let s = p / ((d * d - 1) as f64).sqrt();
        let q = 1.0 - p;
        let r = 1.0 - 2.0 * p / (d * d - 1) as f64;
        #[rustfmt::skip]
        let rows = [
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, q, s,
            0.0, q, 0.0, s,
            0.0, s, s, r,
        ];
        let matrix = CMatrix::from_row_iterator(4, 4, rows.iter().map(|&x| C64::new(x, 0.0)));
        Ok(AveragedGate { basis, matrix })
    }

    /// Wraps an explicit `m² × m²` matrix.
    pub fn from_matrix(basis: Arc<PermBasis>, matrix: CMatrix) -> Result<Self> {
        let mm = basis.m() * basis.m();
        if matrix.nrows() != mm || matrix.ncols() != mm {
            return Err(Error::DimensionMismatch(format!("averaged gate must be {mm}×{mm}")));
        }
        Ok(AveragedGate { basis, matrix })
    }

    pub fn basis(&self) -> &Arc<PermBasis> {
        &self.basis
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// `max_σ ‖W|σσ⟩ − |σσ⟩‖`.
    pub fn fixed_point_defect(&self) -> f64 {
        (0..self.basis.perms.len())
            .map(|i| {
                let v = self.basis.reduced_perm(i);
                let vv = nalgebra::DVector::from_vec(kernel::kron_vecs(&[&v, &v]));
                (&self.matrix * &vv - vv).norm()
            })
            .fold(0.0, f64::max)
    }

    /// One-site map obtained by capping the output of the first leg and the
    /// input of the second leg with `|○⟩`.
    pub fn magnon_channel(&self) -> CMatrix {
        let m = self.basis.m();
        let o = self.basis.circle();
        CMatrix::from_fn(m, m, |j, i| {
            let mut acc = C64::new(0.0, 0.0);
            for a in 0..m {
                for b in 0..m {
                    acc += o[a].conj() * self.matrix[(a * m + j, i * m + b)] * o[b];
                }
            }
            acc
        })
    }

    /// Squared modulus of the largest non-trivial eigenvalue of the magnon channel.
    pub fn magnon_eigenvalue(&self) -> f64 {
        let mut ev = eigenvalues(self.magnon_channel());
        if ev.is_empty() {
            return 0.0;
        }
        let (pos, _) = ev
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
            .expect("non-empty");
        ev.remove(pos);
        ev.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max)
    }

    pub fn dump(&self) -> AveragedGateDump {
        let n = self.matrix.nrows();
        AveragedGateDump {
            d: self.basis.d,
            k: self.basis.k,
            m: self.basis.m(),
            re: (0..n).map(|r| (0..n).map(|c| self.matrix[(r, c)].re).collect()).collect(),
            im: (0..n).map(|r| (0..n).map(|c| self.matrix[(r, c)].im).collect()).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AveragedGateDump {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

pub(crate) fn eigenvalues(m: CMatrix) -> Vec<C64> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    let (_, t) = Schur::new(m).unpack();
    (0..n).map(|i| t[(i, i)]).collect()
}

/// `ρ_k` for the averaged version of `g`.
pub fn magnon_channel_eigenvalue(g: &Gate, k: usize) -> Result<f64> {
    let basis = Arc::new(PermBasis::new(g.d(), k)?);
    Ok(AveragedGate::new(g, basis)?.magnon_eigenvalue())
}

/// Brickwork of averaged gates on `2L` reduced sites: odd layer, then even layer.
#[derive(Clone, Debug)]
pub struct ReducedCircuit {
    basis: Arc<PermBasis>,
    l: usize,
    even: Vec<Vec<C64>>,
    odd: Vec<Vec<C64>>,
}

impl ReducedCircuit {
    pub fn uniform(l: usize, w: &AveragedGate) -> Result<Self> {
        Self::new(l, vec![w.clone(); l], vec![w.clone(); l.saturating_sub(1)])
    }

    pub fn new(l: usize, even: Vec<AveragedGate>, odd: Vec<AveragedGate>) -> Result<Self> {
        if l == 0 || even.len() != l || odd.len() != l - 1 {
            return Err(Error::DimensionMismatch(format!("L = {l} needs {l} even and L−1 odd averaged gates")));
        }
        let basis = even[0].basis.clone();
        if even.iter().chain(&odd).any(|w| w.basis.d != basis.d || w.basis.k != basis.k || w.basis.m() != basis.m()) {
            return Err(Error::DimensionMismatch("averaged gates use different bases".into()));
        }
        let rm = |w: &AveragedGate| row_major(&w.matrix);
        Ok(ReducedCircuit { l, even: even.iter().map(rm).collect(), odd: odd.iter().map(rm).collect(), basis })
    }

    /// Averages every gate of a circuit (its driving is ignored).
    pub fn from_spec(spec: &crate::statevec::CircuitSpec, k: usize) -> Result<Self> {
        let basis = Arc::new(PermBasis::new(spec.d(), k)?);
        let mut distinct: Vec<(&Gate, AveragedGate)> = Vec::new();
        let mut all = Vec::new();
        for g in spec.gates_even().iter().chain(spec.gates_odd()) {
            let w = match distinct.iter().find(|(h, _)| h.matrix() == g.matrix()) {
                Some((_, w)) => w.clone(),
                None => {
                    let w = AveragedGate::new(g, basis.clone())?;
                    distinct.push((g, w.clone()));
                    w
                }
            };
            all.push(w);
        }
        let odd = all.split_off(spec.l());
        Self::new(spec.l(), all, odd)
    }

    pub fn basis(&self) -> &Arc<PermBasis> {
        &self.basis
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Number of reduced amplitudes `m^{2L}`.
    pub fn dim(&self) -> usize {
        kernel::pow(self.basis.m(), 2 * self.l)
    }

    pub fn apply(&self, amps: &mut [C64]) {
        let m = self.basis.m();
        let n = 2 * self.l;
        for (i, w) in self.odd.iter().enumerate() {
            kernel::apply_two(amps, m, n, 2 * i + 1, 2 * i + 2, w);
        }
        for (i, w) in self.even.iter().enumerate() {
            kernel::apply_two(amps, m, n, 2 * i, 2 * i + 1, w);
        }
    }
}

/// Replica state in the reduced permutation basis, `m^{2L}` amplitudes.
#[derive(Clone, Debug)]
pub struct ReducedState {
    basis: Arc<PermBasis>,
    l: usize,
    amps: Vec<C64>,
}

/// Refuse reduced registers above this many amplitudes.
pub const MAX_REDUCED_AMPLITUDES: usize = 1 << 30;

impl ReducedState {
    pub fn from_amplitudes(basis: Arc<PermBasis>, l: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != kernel::pow(basis.m(), 2 * l) {
            return Err(Error::DimensionMismatch(format!("{} reduced amplitudes for L = {l}", amps.len())));
        }
        Ok(ReducedState { basis, l, amps })
    }

    pub fn basis(&self) -> &Arc<PermBasis> {
        &self.basis
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    /// `tr ρ²`; the embedding is isometric, so this is the full-space purity.
    pub fn frame_potential(&self) -> f64 {
        kernel::norm_sqr(&self.amps)
    }

    pub fn delta2(&self) -> f64 {
        self.frame_potential() / haar_frame_potential(self.basis.d, self.l, self.basis.k) - 1.0
    }

    /// `‖ρ − ρ_H‖²/F_H` with `ρ_H` the projection onto the permutation products.
    pub fn delta2_projected(&self) -> f64 {
        let site_vecs: Vec<Vec<C64>> = (0..self.basis.perms.len()).map(|i| self.basis.reduced_perm(i)).collect();
        let residual = haar_residual(&self.amps, self.basis.m(), 2 * self.l, &site_vecs);
        residual / haar_frame_potential(self.basis.d, self.l, self.basis.k)
    }

    /// `⟨○…○ ●_x ○…○|ρ⟩` for `k = 2`.
    pub fn magnon_overlap(&self, x: usize) -> Result<C64> {
        let n = 2 * self.l;
        if x >= n {
            return Err(Error::SiteOutOfRange { site: x, n_sites: n });
        }
        let circle = self.basis.circle();
        let black = self.basis.black()?;
        let factors: Vec<&[C64]> = (0..n).map(|i| if i == x { black.as_slice() } else { circle.as_slice() }).collect();
        Ok(kernel::product_overlap(&self.amps, self.basis.m(), &factors))
    }
}

/// Applies the reduced brickwork `steps` times.
pub fn evolve_reduced(state: &mut ReducedState, circuit: &ReducedCircuit, steps: usize) -> Result<()> {
    if state.l != circuit.l || state.basis.m() != circuit.basis.m() {
        return Err(Error::DimensionMismatch("reduced state does not match the circuit".into()));
    }
    for _ in 0..steps {
        circuit.apply(&mut state.amps);
    }
    Ok(())
}

/// `F^(k)(t)` and `Δ₂` for `t = 0..=t_max` in the reduced space.
pub fn reduced_series(circuit: &ReducedCircuit, state0: &ReducedState, t_max: usize, route: Delta2Route) -> Result<MomentSeries> {
    let mut s = state0.clone();
    let mut rows = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        if t > 0 {
            evolve_reduced(&mut s, circuit, 1)?;
        }
        let delta2 = match route {
            Delta2Route::Purity => s.delta2(),
            Delta2Route::Projected => s.delta2_projected(),
        };
        rows.push(MomentRow { t, k: s.basis.k, f: s.frame_potential(), f_stderr: 0.0, delta2, method: Method::Perm, n_samples: 0 });
    }
    Ok(MomentSeries::new(rows))
}

/// Projection of `(|ψ₀⟩⊗|ψ₀⟩*)^{⊗k}` onto the reduced basis, computed per pair
/// of sites `(2n, 2n+1)`.
pub fn reduced_initial(kind: InitialState, basis: Arc<PermBasis>, l: usize) -> Result<ReducedState> {
    let m = basis.m();
    if kernel::pow(m, 2 * l) > MAX_REDUCED_AMPLITUDES {
        return Err(Error::Budget(format!("m^(2L) = {m}^{} amplitudes exceed 2^30", 2 * l)));
    }
    let (d, k) = (basis.d, basis.k);
    let site = basis.site_dim();
    let pair: Vec<C64> = match kind {
        InitialState::AllZero => {
            let mut zero = vec![C64::new(0.0, 0.0); site];
            zero[0] = C64::new(1.0, 0.0);
            let r = basis.reduce(&zero);
            kernel::kron_vecs(&[&r, &r])
        }
        InitialState::BellPairs => {
            let phi = bell_pair(d);
            // ψ(s_a, s_b) on the pair; replica vector indexed site-major
            let mut v = vec![C64::new(0.0, 0.0); site * site];
            for (idx, slot) in v.iter_mut().enumerate() {
                let (mut a, mut b) = (idx / site, idx % site);
                let mut sa = vec![0; 2 * k];
                let mut sb = vec![0; 2 * k];
                for q in (0..2 * k).rev() {
                    sa[q] = a % d;
                    sb[q] = b % d;
                    a /= d;
                    b /= d;
                }
                let mut amp = C64::new(1.0, 0.0);
                for rep in 0..k {
                    amp *= phi[sa[2 * rep] * d + sb[2 * rep]] * phi[sa[2 * rep + 1] * d + sb[2 * rep + 1]].conj();
                }
                *slot = amp;
            }
            let vm = CMatrix::from_row_slice(site, site, &v);
            let e = basis.embed();
            let red = e.adjoint() * vm * e.map(|x| x.conj());
            (0..m * m).map(|i| red[(i / m, i % m)]).collect()
        }
    };
    let factors: Vec<&[C64]> = (0..l).map(|_| pair.as_slice()).collect();
    Ok(ReducedState { basis, l, amps: kernel::kron_vecs(&factors) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{build_du_phase_gate, build_perfect_tensor, build_xyz_gate, entangling_power, hadamard_phases, haar_unitary};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn permutation_enumeration() {
        let p3 = permutations(3);
        assert_eq!(p3.len(), 6);
        assert_eq!(p3[0], vec![0, 1, 2]);
        assert_eq!(p3[1], vec![0, 2, 1]);
        assert_eq!(p3[5], vec![2, 1, 0]);
        assert_eq!(cycle_count(&[0, 1, 2]), 3);
        assert_eq!(cycle_count(&[1, 2, 0]), 1);
        assert_eq!(cycle_count(&[1, 0, 2]), 2);
    }

    #[test]
    fn gram_matches_direct_overlaps() {
        for (d, k) in [(2, 2), (2, 3), (3, 3)] {
            let b = PermBasis::lowdin(d, k).unwrap();
            for (i, p) in b.perms().iter().enumerate() {
                for (j, q) in b.perms().iter().enumerate() {
                    let direct = kernel::inner(&perm_vector(d, p), &perm_vector(d, q)).re;
                    assert_eq!(direct, b.gram()[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn basis_ranks_and_isometry() {
        for (d, k, m) in [(2, 1, 1), (2, 2, 2), (3, 2, 2), (2, 3, 5), (3, 3, 6), (2, 4, 14)] {
            let b = PermBasis::new(d, k).unwrap();
            assert_eq!(b.m(), m, "d={d} k={k}");
            let e = b.embed();
            assert!((e.adjoint() * e - CMatrix::identity(m, m)).norm() < 1e-12);
            let p = b.projector();
            assert!((&p * &p - &p).norm() < 1e-10);
            for perm in b.perms() {
                let v = nalgebra::DVector::from_vec(perm_vector(d, perm));
                assert!((&p * &v - &v).norm() < 1e-10);
            }
        }
        assert!(PermBasis::new(2, 7).is_err());
    }

    #[test]
    fn circle_basis_for_two_replicas() {
        let b = PermBasis::new(2, 2).unwrap();
        let circle = b.circle();
        assert!((circle[0] - C64::new(1.0, 0.0)).norm() < 1e-14 && circle[1].norm() < 1e-14);
        let black = b.black().unwrap();
        assert!(black[0].norm() < 1e-14 && (black[1] - C64::new(1.0, 0.0)).norm() < 1e-14);
        // same span as the Löwdin basis
        let l = PermBasis::lowdin(2, 2).unwrap();
        assert!((b.projector() - l.projector()).norm() < 1e-12);
    }

    fn random_du(rng: &mut ChaCha8Rng) -> Gate {
        let mut e = || (rng.random::<f64>() * 6.3, rng.random::<f64>() * 6.3, rng.random::<f64>() * 6.3);
        let (a, b) = (e(), e());
        let j = rng.random::<f64>() * 3.2;
        build_xyz_gate(FRAC_PI_4, FRAC_PI_4, j, a, b)
    }

    #[test]
    fn averaged_du_gate_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let basis = Arc::new(PermBasis::new(2, 2).unwrap());
        for _ in 0..5 {
            let g = random_du(&mut rng);
            let w = AveragedGate::new(&g, basis.clone()).unwrap();
            let expect = AveragedGate::du_k2(2, entangling_power(&g)).unwrap();
            assert!((w.matrix() - expect.matrix()).camax() < 1e-10);
        }
        let j0 = AveragedGate::new(&build_xyz_gate(FRAC_PI_4, FRAC_PI_4, 0.0, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)), basis.clone()).unwrap();
        assert!((j0.matrix()[(3, 3)].re - 5.0 / 9.0).abs() < 1e-12);
        let sw = AveragedGate::new(&Gate::swap(2), basis).unwrap();
        assert!((sw.matrix() - AveragedGate::du_k2(2, 0.0).unwrap().matrix()).camax() < 1e-12);
    }

    #[test]
    fn averaged_gate_fixes_permutation_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (d, k) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
            let basis = Arc::new(PermBasis::new(d, k).unwrap());
            let g = Gate::with_tolerance(d, haar_unitary(d * d, &mut rng), "haar", 1e-10).unwrap();
            let w = AveragedGate::new(&g, basis).unwrap();
            assert!(w.fixed_point_defect() < 1e-10, "d={d} k={k}");
        }
    }

    #[test]
    fn capping_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let basis = Arc::new(PermBasis::new(2, 2).unwrap());
        let o = basis.circle();
        let oo = nalgebra::DVector::from_vec(kernel::kron_vecs(&[&o, &o]));
        let g = Gate::with_tolerance(2, haar_unitary(4, &mut rng), "haar", 1e-10).unwrap();
        for gate in [g, random_du(&mut rng)] {
            let w = AveragedGate::new(&gate, basis.clone()).unwrap();
            assert!((w.matrix() * &oo - &oo).norm() < 1e-12);
            assert!((oo.adjoint() * w.matrix() - oo.adjoint()).norm() < 1e-12);
        }
        // dual unitarity: capping both left legs leaves |○⟩⟨○| on the right
        let w = AveragedGate::new(&random_du(&mut rng), basis.clone()).unwrap();
        let m = 2;
        let cap = CMatrix::from_fn(m, m, |j, b| {
            let mut acc = C64::new(0.0, 0.0);
            for a in 0..m {
                for i in 0..m {
                    acc += o[a].conj() * w.matrix()[(a * m + j, i * m + b)] * o[i];
                }
            }
            acc
        });
        let expect = CMatrix::from_fn(m, m, |j, b| o[j] * o[b].conj());
        assert!((cap - expect).norm() < 1e-12);
    }

    #[test]
    fn magnon_eigenvalues() {
        for p in [0.0, 0.2, 0.5, 0.9] {
            let w = AveragedGate::du_k2(2, p).unwrap();
            assert!((w.magnon_eigenvalue() - (1.0 - p) * (1.0 - p)).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_du(&mut rng);
        let p = entangling_power(&g);
        assert!((magnon_channel_eigenvalue(&g, 2).unwrap() - (1.0 - p).powi(2)).abs() < 1e-10);
        assert!(magnon_channel_eigenvalue(&build_perfect_tensor(3).unwrap(), 3).unwrap() < 1e-10);
        let h = build_du_phase_gate(3, &hadamard_phases(3)).unwrap();
        let ph = entangling_power(&h);
        assert!((ph - 0.75).abs() < 1e-12);
        assert!((magnon_channel_eigenvalue(&h, 3).unwrap() - (1.0 - ph).powi(2)).abs() < 1e-10);
    }

    #[test]
    fn reduced_identity_and_fixed_points() {
        let basis = Arc::new(PermBasis::new(2, 3).unwrap());
        let id = AveragedGate::new(&Gate::identity(2), basis.clone()).unwrap();
        let circ = ReducedCircuit::uniform(2, &id).unwrap();
        let s0 = reduced_initial(InitialState::BellPairs, basis.clone(), 2).unwrap();
        let mut s = s0.clone();
        evolve_reduced(&mut s, &circ, 3).unwrap();
        for (a, b) in s.amplitudes().iter().zip(s0.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Gate::with_tolerance(2, haar_unitary(4, &mut rng), "haar", 1e-10).unwrap();
        let circ = ReducedCircuit::uniform(2, &AveragedGate::new(&g, basis.clone()).unwrap()).unwrap();
        for i in 0..6 {
            let v = basis.reduced_perm(i);
            let prod = kernel::kron_vecs(&[&v, &v, &v, &v]);
            let mut x = prod.clone();
            circ.apply(&mut x);
            let err: f64 = x.iter().zip(&prod).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10);
        }
    }

    #[test]
    fn bell_initial_state_single_pair() {
        // k=1: the only basis vector is |○⟩ = |𝟙⟩/√d; ⟨○○|Φ⊗Φ*⟩ = 1/d
        let basis = Arc::new(PermBasis::new(3, 1).unwrap());
        let s = reduced_initial(InitialState::BellPairs, basis, 1).unwrap();
        assert!((s.amplitudes()[0] - C64::new(1.0 / 3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn du_k2_rejects_bad_power() {
        assert!(AveragedGate::du_k2(2, 1.5).is_err());
    }
}

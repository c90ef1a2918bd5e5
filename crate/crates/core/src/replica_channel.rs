//! Exact evolution of the vectorised k-th moment `ρ_t^(k)` under the averaged
//! channel `B_k`, without ever forming `B_k` as a matrix.
//!
//! A replica state has `2L` sites of dimension `d^{2k}`. Within a site the
//! `2k` qudits are ordered `s₁ r₁ … s_k r_k` (ket and bra of each replica
//! interleaved), so qudit `(x, m, b)` sits at position `2k·x + 2m + b` of a
//! radix-`d` register. A folded gate is `U` on every ket pair and `U*` on
//! every bra pair.

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{kron, pauli, row_major, CMatrix, OneSiteKind};
use crate::kernel::{self, pairwise_sum};
use crate::perm_dynamics::{perm_vector, permutations, PermBasis};
use crate::series::{Delta2Route, Method, MomentRow, MomentSeries};
use crate::statevec::{CircuitSpec, Driving, PureState};
use crate::theory::haar_frame_potential;

/// Refuse full replica registers above this many amplitudes.
pub const MAX_REPLICA_AMPLITUDES: usize = 1 << 30;
/// Largest dense one-site twirl matrix dimension.
pub const MAX_TWIRL_DIM: usize = 4096;

pub(crate) fn apply_folded_gate(amps: &mut [C64], d: usize, k: usize, n_sites: usize, site: usize, u: &[C64], u_conj: &[C64]) {
    let n = n_sites * 2 * k;
    for m in 0..k {
        let a = site * 2 * k + 2 * m;
        let b = (site + 1) * 2 * k + 2 * m;
        kernel::apply_two(amps, d, n, a, b, u);
        kernel::apply_two(amps, d, n, a + 1, b + 1, u_conj);
    }
}

/// `‖v − Σ_σ x_σ w_σ^{⊗n}‖²`, the squared distance from `v` to the span of the
/// product vectors built from `site_vecs`.
pub(crate) fn haar_residual(amps: &[C64], dim: usize, n_sites: usize, site_vecs: &[Vec<C64>]) -> f64 {
    let units: Vec<Vec<C64>> = site_vecs
        .iter()
        .map(|v| {
            let nrm = kernel::norm_sqr(v).sqrt();
            v.iter().map(|x| x / nrm).collect()
        })
        .collect();
    let r = units.len();
    let gram = CMatrix::from_fn(r, r, |i, j| kernel::inner(&units[i], &units[j]).powu(n_sites as u32));
    let c = DVector::from_iterator(
        r,
        units.iter().map(|u| {
            let f: Vec<&[C64]> = (0..n_sites).map(|_| u.as_slice()).collect();
            kernel::product_overlap(amps, dim, &f)
        }),
    );
    let x = gram.svd(true, true).solve(&c, 1e-13).expect("SVD solve");

    let mut h = 0;
    while h < n_sites && kernel::pow(dim, h + 1) <= 4096 {
        h += 1;
    }
    let low = kernel::pow(dim, h);
    let lo_tables: Vec<Vec<C64>> = units
        .iter()
        .map(|u| (0..low).map(|j| kernel::product_entry(dim, &vec![u.as_slice(); h], j)).collect())
        .collect();
    let hi_digits = n_sites - h;
    let partial: Vec<f64> = amps
        .par_chunks(low)
        .enumerate()
        .map(|(b, chunk)| {
            let coef: Vec<C64> = (0..r)
                .map(|s| x[s] * kernel::product_entry(dim, &vec![units[s].as_slice(); hi_digits], b))
                .collect();
            chunk
                .iter()
                .enumerate()
                .map(|(j, a)| {
                    let proj: C64 = (0..r).map(|s| coef[s] * lo_tables[s][j]).sum();
                    (a - proj).norm_sqr()
                })
                .sum()
        })
        .collect();
    pairwise_sum(&partial)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwirlKind {
    PauliTwirl,
    HaarTwirl,
}

impl From<OneSiteKind> for TwirlKind {
    fn from(k: OneSiteKind) -> Self {
        match k {
            OneSiteKind::PauliSet => TwirlKind::PauliTwirl,
            OneSiteKind::HaarOnSite => TwirlKind::HaarTwirl,
        }
    }
}

/// One-site average `D_k` of `(α⊗α*)^{⊗k}`.
#[derive(Clone, Debug)]
pub struct TwirlOp {
    pub d: usize,
    pub k: usize,
    pub kind: TwirlKind,
    pub matrix: CMatrix,
}

pub fn build_twirl(d: usize, k: usize, kind: TwirlKind) -> Result<TwirlOp> {
    let dim = kernel::pow(d, 2 * k);
    if dim > MAX_TWIRL_DIM {
        return Err(Error::Budget(format!("twirl of dimension d^(2k) = {dim} exceeds {MAX_TWIRL_DIM}")));
    }
    let matrix = match kind {
        TwirlKind::PauliTwirl => {
            if d != 2 {
                return Err(Error::InvalidArgument(format!("Pauli twirl needs d = 2, got {d}")));
            }
            let mut acc = CMatrix::zeros(dim, dim);
            for a in 0..4 {
                let p = pauli(a);
                let one = kron(&p, &p.map(|x| x.conj()));
                let mut full = CMatrix::identity(1, 1);
                for _ in 0..k {
                    full = kron(&full, &one);
                }
                acc += full;
            }
            acc * C64::new(0.25, 0.0)
        }
        TwirlKind::HaarTwirl => PermBasis::new(d, k)?.projector(),
    };
    Ok(TwirlOp { d, k, kind, matrix })
}

/// Vectorised `ρ^(k)`: `d^{4kL}` amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaState {
    d: usize,
    l: usize,
    k: usize,
    amps: Vec<C64>,
}

fn check_budget(d: usize, l: usize, k: usize) -> Result<usize> {
    let n = 4 * k * l;
    let amps = (d as f64).powi(n as i32);
    if amps > MAX_REPLICA_AMPLITUDES as f64 {
        return Err(Error::Budget(format!(
            "replica state needs d^(4kL) = {d}^{n} ≈ {amps:.3e} amplitudes (limit 2^30); \
             use the reduced permutation-basis dynamics for structured circuits"
        )));
    }
    Ok(kernel::pow(d, n))
}

impl ReplicaState {
    /// `(|ψ⟩ ⊗ |ψ⟩*)^{⊗k}` in the interleaved site-major layout.
    pub fn from_pure(psi: &PureState, k: usize) -> Result<Self> {
        let d = psi.d();
        let n_sites = psi.n_sites();
        let l = n_sites / 2;
        let size = check_budget(d, l, k)?;
        let a = psi.amplitudes();
        let mut amps = vec![C64::new(0.0, 0.0); size];
        amps.par_iter_mut().enumerate().with_min_len(1024).for_each(|(mut i, slot)| {
            let mut ket = vec![0usize; k];
            let mut bra = vec![0usize; k];
            let mut weight = 1usize;
            for _x in (0..n_sites).rev() {
                for m in (0..k).rev() {
                    let r = i % d;
                    i /= d;
                    let s = i % d;
                    i /= d;
                    ket[m] += s * weight;
                    bra[m] += r * weight;
                }
                weight *= d;
            }
            let mut v = C64::new(1.0, 0.0);
            for m in 0..k {
                v *= a[ket[m]] * a[bra[m]].conj();
            }
            *slot = v;
        });
        Ok(ReplicaState { d, l, k, amps })
    }

    /// The Haar moment `(F_H/k!) Σ_σ P_σ`.
    pub fn haar(d: usize, l: usize, k: usize) -> Result<Self> {
        let size = check_budget(d, l, k)?;
        let fact: f64 = (1..=k).map(|x| x as f64).product();
        let scale = haar_frame_potential(d, l, k) / fact;
        let mut amps = vec![C64::new(0.0, 0.0); size];
        for p in permutations(k) {
            let v = perm_vector(d, &p);
            let f: Vec<&[C64]> = (0..2 * l).map(|_| v.as_slice()).collect();
            for (a, x) in amps.iter_mut().zip(kernel::kron_vecs(&f)) {
                *a += x * scale;
            }
        }
        Ok(ReplicaState { d, l, k, amps })
    }

    pub fn from_amplitudes(d: usize, l: usize, k: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != check_budget(d, l, k)? {
            return Err(Error::DimensionMismatch(format!("{} amplitudes for d={d}, L={l}, k={k}", amps.len())));
        }
        Ok(ReplicaState { d, l, k, amps })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    fn site_dim(&self) -> usize {
        kernel::pow(self.d, 2 * self.k)
    }

    /// Overlap with the identity on every site.
    pub fn trace(&self) -> C64 {
        let id = perm_vector(self.d, &(0..self.k).collect::<Vec<_>>());
        let f: Vec<&[C64]> = (0..2 * self.l).map(|_| id.as_slice()).collect();
        kernel::product_overlap(&self.amps, self.site_dim(), &f)
    }

    /// `max |ρ_{ij} − ρ*_{ji}|` over the ket↔bra exchange.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = 4 * self.k * self.l;
        let d = self.d;
        (0..self.amps.len())
            .into_par_iter()
            .with_min_len(1024)
            .map(|i| {
                let mut j = 0;
                let mut rest = i;
                let mut digits = vec![0; n];
                for q in (0..n).rev() {
                    digits[q] = rest % d;
                    rest /= d;
                }
                for q in (0..n).step_by(2) {
                    digits.swap(q, q + 1);
                }
                for &x in &digits {
                    j = j * d + x;
                }
                (self.amps[j] - self.amps[i].conj()).norm()
            })
            .reduce(|| 0.0, f64::max)
    }

    /// `tr ρ²`.
    pub fn frame_potential(&self) -> f64 {
        kernel::norm_sqr(&self.amps)
    }

    /// `F/F_H − 1`.
    pub fn delta2(&self) -> f64 {
        self.frame_potential() / haar_frame_potential(self.d, self.l, self.k) - 1.0
    }

    /// `‖ρ − ρ_H‖²/F_H`, evaluated as an explicit residual so it stays accurate
    /// when `F` and `F_H` agree to many digits.
    pub fn delta2_projected(&self) -> f64 {
        let vecs: Vec<Vec<C64>> = permutations(self.k).iter().map(|p| perm_vector(self.d, p)).collect();
        haar_residual(&self.amps, self.site_dim(), 2 * self.l, &vecs) / haar_frame_potential(self.d, self.l, self.k)
    }

    /// `⟨○…○ ●_x ○…○|ρ⟩` for `k = 2`.
    pub fn magnon_overlap(&self, x: usize) -> Result<C64> {
        if self.k != 2 {
            return Err(Error::Unsupported("magnon overlap is defined for k = 2".into()));
        }
        let n = 2 * self.l;
        if x >= n {
            return Err(Error::SiteOutOfRange { site: x, n_sites: n });
        }
        let df = self.d as f64;
        let circle: Vec<C64> = perm_vector(self.d, &[0, 1]).into_iter().map(|v| v / df).collect();
        let black: Vec<C64> = perm_vector(self.d, &[1, 0])
            .into_iter()
            .zip(&circle)
            .map(|(s, c)| (s - c) / (df * df - 1.0).sqrt())
            .collect();
        let f: Vec<&[C64]> = (0..n).map(|i| if i == x { black.as_slice() } else { circle.as_slice() }).collect();
        Ok(kernel::product_overlap(&self.amps, self.site_dim(), &f))
    }

    /// `ρ` as a `d^{2Lk} × d^{2Lk}` matrix (ket multi-index × bra multi-index).
    pub fn to_density_matrix(&self) -> Result<CMatrix> {
        let dim = kernel::pow(self.d, 2 * self.l * self.k);
        if dim > 1024 {
            return Err(Error::Budget(format!("density matrix of dimension {dim}")));
        }
        let (d, k) = (self.d, self.k);
        let n_sites = 2 * self.l;
        let hilbert = kernel::pow(d, n_sites);
        let mut rho = CMatrix::zeros(dim, dim);
        for (i, a) in self.amps.iter().enumerate() {
            let mut rest = i;
            let mut ket = vec![0usize; k];
            let mut bra = vec![0usize; k];
            let mut weight = 1;
            for _ in 0..n_sites {
                for m in (0..k).rev() {
                    bra[m] += (rest % d) * weight;
                    rest /= d;
                    ket[m] += (rest % d) * weight;
                    rest /= d;
                }
                weight *= d;
            }
            let row = ket.iter().fold(0, |acc, &x| acc * hilbert + x);
            let col = bra.iter().fold(0, |acc, &x| acc * hilbert + x);
            rho[(row, col)] = *a;
        }
        Ok(rho)
    }
}

/// Where the one-site twirl enters each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwirlPlacement {
    None,
    /// Last site, before the odd layer.
    Boundary,
    /// Both input and both output legs of every gate.
    EveryLeg,
}

/// One step of `B_k` for a circuit.
#[derive(Clone, Debug)]
pub struct ReplicaChannel {
    d: usize,
    l: usize,
    k: usize,
    even: Vec<(Vec<C64>, Vec<C64>)>,
    odd: Vec<(Vec<C64>, Vec<C64>)>,
    placement: TwirlPlacement,
    twirl: Option<Vec<C64>>,
}

impl ReplicaChannel {
    /// Boundary driving twirls the last site; structured driving twirls every leg.
    pub fn new(spec: &CircuitSpec, k: usize) -> Result<Self> {
        check_budget(spec.d(), spec.l(), k)?;
        let (placement, twirl) = match spec.driving() {
            Driving::None => (TwirlPlacement::None, None),
            Driving::Boundary(s) => (TwirlPlacement::Boundary, Some(build_twirl(s.d, k, s.kind.into())?)),
            Driving::Structured(s) => (TwirlPlacement::EveryLeg, Some(build_twirl(s.d, k, s.kind.into())?)),
        };
        let fold = |g: &crate::gates::Gate| {
            let u = row_major(g.matrix());
            let uc = u.iter().map(|x| x.conj()).collect();
            (u, uc)
        };
        Ok(ReplicaChannel {
            d: spec.d(),
            l: spec.l(),
            k,
            even: spec.gates_even().iter().map(fold).collect(),
            odd: spec.gates_odd().iter().map(fold).collect(),
            placement,
            twirl: twirl.map(|t| row_major(&t.matrix)),
        })
    }

    pub fn placement(&self) -> TwirlPlacement {
        self.placement
    }

    /// Length of the vectors the channel acts on.
    pub fn dim(&self) -> usize {
        kernel::pow(self.d, 4 * self.k * self.l)
    }

    fn twirl_site(&self, amps: &mut [C64], site: usize) {
        if let Some(t) = &self.twirl {
            kernel::apply_one(amps, kernel::pow(self.d, 2 * self.k), 2 * self.l, site, t);
        }
    }

    /// Applies one step to a raw amplitude vector of length `dim()`.
    pub fn apply(&self, amps: &mut [C64]) {
        let n_sites = 2 * self.l;
        if self.placement == TwirlPlacement::Boundary {
            self.twirl_site(amps, n_sites - 1);
        }
        let layers = [
            self.odd.iter().enumerate().map(|(i, g)| (2 * i + 1, g)).collect::<Vec<_>>(),
            self.even.iter().enumerate().map(|(i, g)| (2 * i, g)).collect::<Vec<_>>(),
        ];
        for layer in layers {
            for (site, (u, uc)) in layer {
                if self.placement == TwirlPlacement::EveryLeg {
                    self.twirl_site(amps, site);
                    self.twirl_site(amps, site + 1);
                }
                apply_folded_gate(amps, self.d, self.k, n_sites, site, u, uc);
                if self.placement == TwirlPlacement::EveryLeg {
                    self.twirl_site(amps, site);
                    self.twirl_site(amps, site + 1);
                }
            }
        }
    }

    pub fn evolve_step(&self, rho: &mut ReplicaState) -> Result<()> {
        if (rho.d, rho.l, rho.k) != (self.d, self.l, self.k) {
            return Err(Error::DimensionMismatch(format!(
                "state (d={}, L={}, k={}) vs channel (d={}, L={}, k={})",
                rho.d, rho.l, rho.k, self.d, self.l, self.k
            )));
        }
        self.apply(&mut rho.amps);
        Ok(())
    }
}

/// `F^(k)(t)` and `Δ₂` for `t = 0..=t_max` by exact replica evolution.
pub fn replica_series(channel: &ReplicaChannel, rho0: &ReplicaState, t_max: usize, route: Delta2Route) -> Result<MomentSeries> {
    let mut rho = rho0.clone();
    let mut rows = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        if t > 0 {
            channel.evolve_step(&mut rho)?;
        }
        let f = rho.frame_potential();
        let delta2 = match route {
            Delta2Route::Purity => rho.delta2(),
            Delta2Route::Projected => rho.delta2_projected(),
        };
        rows.push(MomentRow { t, k: rho.k, f, f_stderr: 0.0, delta2, method: Method::Replica, n_samples: 0 });
    }
    Ok(MomentSeries::new(rows))
}

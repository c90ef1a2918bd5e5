//! Dense pure-state evolution of `2L` qudits under the open brickwork circuit.
//!
//! Sites are numbered `0..2L` and stored big-endian (site 0 is the most
//! significant digit). One time step applies, in order: the random one-site
//! unitary on the last site (boundary driving), the odd layer on bonds
//! `(2n+1, 2n+2)` for `n < L−1`, then the even layer on bonds `(2n, 2n+1)`
//! for `n < L`. With structured driving every gate is replaced by
//! `(α ⊗ β)·U` with fresh `α, β` per gate and step.

use std::io::Write;

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{row_major, CMatrix, Draw, Gate, OneSiteSet};
use crate::kernel;

#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    d: usize,
    n_sites: usize,
    amps: Vec<C64>,
}

impl PureState {
    pub fn from_amplitudes(d: usize, n_sites: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != kernel::pow(d, n_sites) {
            return Err(Error::DimensionMismatch(format!(
                "{} amplitudes for {n_sites} sites of dimension {d}",
                amps.len()
            )));
        }
        Ok(PureState { d, n_sites, amps })
    }

    /// `|0⟩^{⊗2L}`.
    pub fn all_zero(d: usize, l: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); kernel::pow(d, 2 * l)];
        amps[0] = C64::new(1.0, 0.0);
        PureState { d, n_sites: 2 * l, amps }
    }

    /// Generalised Bell pairs `d^{-1/2} Σ_j |jj⟩` on sites `(2n, 2n+1)`.
    pub fn bell_pairs(d: usize, l: usize) -> Self {
        let pair = bell_pair(d);
        let factors: Vec<&[C64]> = (0..l).map(|_| pair.as_slice()).collect();
        PureState { d, n_sites: 2 * l, amps: kernel::kron_vecs(&factors) }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        kernel::norm_sqr(&self.amps).sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &PureState) -> C64 {
        kernel::inner(&self.amps, &other.amps)
    }

    pub fn apply_two_site(&mut self, g: &Gate, site: usize) -> Result<()> {
        self.apply_two_site_matrix(g.d(), &row_major(g.matrix()), site)
    }

    pub(crate) fn apply_two_site_matrix(&mut self, d: usize, mat: &[C64], site: usize) -> Result<()> {
        if d != self.d {
            return Err(Error::DimensionMismatch(format!("gate d = {d}, state d = {}", self.d)));
        }
        if site + 1 >= self.n_sites {
            return Err(Error::SiteOutOfRange { site, n_sites: self.n_sites });
        }
        kernel::apply_two(&mut self.amps, self.d, self.n_sites, site, site + 1, mat);
        Ok(())
    }

    pub fn apply_one_site(&mut self, u: &CMatrix, site: usize) -> Result<()> {
        if u.nrows() != self.d || u.ncols() != self.d {
            return Err(Error::DimensionMismatch(format!("one-site matrix is {}×{}", u.nrows(), u.ncols())));
        }
        if site >= self.n_sites {
            return Err(Error::SiteOutOfRange { site, n_sites: self.n_sites });
        }
        kernel::apply_one(&mut self.amps, self.d, self.n_sites, site, &row_major(u));
        Ok(())
    }

    /// Reduced purity `tr ρ_A²` of the first `n_left` sites.
    pub fn bipartite_purity(&self, n_left: usize) -> f64 {
        let right = kernel::pow(self.d, self.n_sites - n_left);
        let left = self.amps.len() / right;
        let mut purity = 0.0;
        for a in 0..left {
            for b in 0..left {
                let ra = &self.amps[a * right..(a + 1) * right];
                let rb = &self.amps[b * right..(b + 1) * right];
                let rho_ab: C64 = ra.iter().zip(rb).map(|(x, y)| x * y.conj()).sum();
                purity += rho_ab.norm_sqr();
            }
        }
        purity
    }

    /// Little-endian `(re, im)` f64 pairs, for debugging only.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for a in &self.amps {
            w.write_all(&a.re.to_le_bytes())?;
            w.write_all(&a.im.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Supported initial product states.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    AllZero,
    BellPairs,
}

impl PureState {
    pub fn initial(kind: InitialState, d: usize, l: usize) -> Self {
        match kind {
            InitialState::AllZero => Self::all_zero(d, l),
            InitialState::BellPairs => Self::bell_pairs(d, l),
        }
    }
}

pub(crate) fn bell_pair(d: usize) -> Vec<C64> {
    let amp = 1.0 / (d as f64).sqrt();
    let mut v = vec![C64::new(0.0, 0.0); d * d];
    for j in 0..d {
        v[j * d + j] = C64::new(amp, 0.0);
    }
    v
}

/// Where the circuit's randomness enters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Driving {
    /// Fully deterministic circuit.
    None,
    /// One random unitary on the last site per step (Case a).
    Boundary(OneSiteSet),
    /// Random unitaries on both output legs of every gate (Case b).
    Structured(OneSiteSet),
}

#[derive(Clone, Debug)]
pub struct CircuitSpec {
    d: usize,
    l: usize,
    gates_even: Vec<Gate>,
    gates_odd: Vec<Gate>,
    driving: Driving,
}

impl CircuitSpec {
    pub fn new(l: usize, gates_even: Vec<Gate>, gates_odd: Vec<Gate>, driving: Driving) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidArgument("L must be ≥ 1".into()));
        }
        if gates_even.len() != l || gates_odd.len() != l - 1 {
            return Err(Error::DimensionMismatch(format!(
                "L = {l} needs {l} even and {} odd gates, got {} and {}",
                l - 1,
                gates_even.len(),
                gates_odd.len()
            )));
        }
        let d = gates_even[0].d();
        if gates_even.iter().chain(&gates_odd).any(|g| g.d() != d) {
            return Err(Error::DimensionMismatch("gates have different local dimensions".into()));
        }
        match driving {
            Driving::Boundary(s) | Driving::Structured(s) if s.d != d => {
                return Err(Error::DimensionMismatch(format!("one-site set has d = {}, gates d = {d}", s.d)));
            }
            _ => {}
        }
        Ok(CircuitSpec { d, l, gates_even, gates_odd, driving })
    }

    /// Same gate on every bond.
    pub fn uniform(l: usize, gate: Gate, driving: Driving) -> Result<Self> {
        Self::new(l, vec![gate.clone(); l], vec![gate; l.saturating_sub(1)], driving)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n_sites(&self) -> usize {
        2 * self.l
    }

    pub fn driving(&self) -> Driving {
        self.driving
    }

    pub fn gates_even(&self) -> &[Gate] {
        &self.gates_even
    }

    pub fn gates_odd(&self) -> &[Gate] {
        &self.gates_odd
    }

    /// `(left site, gate)` pairs in application order: odd layer, then even layer.
    pub fn layers(&self) -> [Vec<(usize, &Gate)>; 2] {
        let odd = self.gates_odd.iter().enumerate().map(|(n, g)| (2 * n + 1, g)).collect();
        let even = self.gates_even.iter().enumerate().map(|(n, g)| (2 * n, g)).collect();
        [odd, even]
    }

    /// Same circuit with a different source of randomness.
    pub fn with_driving(&self, driving: Driving) -> Result<Self> {
        Self::new(self.l, self.gates_even.clone(), self.gates_odd.clone(), driving)
    }

    /// One full step as a dense `d^{2L} × d^{2L}` matrix for a given draw
    /// (small systems only; test oracle and full-spectrum diagnostics).
    pub fn dense_step(&self, draws: &[Draw]) -> Result<CMatrix> {
        let dim = kernel::pow(self.d, 2 * self.l);
        if dim > 1 << 10 {
            return Err(Error::Budget(format!("dense step of dimension {dim}")));
        }
        let mut m = CMatrix::zeros(dim, dim);
        for col in 0..dim {
            let mut amps = vec![C64::new(0.0, 0.0); dim];
            amps[col] = C64::new(1.0, 0.0);
            let mut psi = PureState { d: self.d, n_sites: 2 * self.l, amps };
            let mut replay = draws.iter().cloned();
            self.apply_step(&mut psi, &mut || replay.next().expect("not enough draws"))?;
            for row in 0..dim {
                m[(row, col)] = psi.amps[row];
            }
        }
        Ok(m)
    }

    fn apply_step(&self, psi: &mut PureState, next: &mut dyn FnMut() -> Draw) -> Result<()> {
        if psi.d != self.d || psi.n_sites != 2 * self.l {
            return Err(Error::DimensionMismatch("state does not match circuit".into()));
        }
        if let Driving::Boundary(_) = self.driving {
            let a = next().matrix();
            psi.apply_one_site(&a, 2 * self.l - 1)?;
        }
        for layer in self.layers() {
            for (site, g) in layer {
                match self.driving {
                    Driving::Structured(_) => {
                        let a = next().matrix();
                        let b = next().matrix();
                        let m = g.dressed(&a, &b);
                        psi.apply_two_site_matrix(self.d, &row_major(&m), site)?;
                    }
                    _ => psi.apply_two_site(g, site)?,
                }
            }
        }
        Ok(())
    }

    /// Number of one-site draws consumed per step.
    pub fn draws_per_step(&self) -> usize {
        match self.driving {
            Driving::None => 0,
            Driving::Boundary(_) => 1,
            Driving::Structured(_) => 2 * (2 * self.l - 1),
        }
    }
}

/// Record of the randomness drawn along one trajectory, one entry per step.
#[derive(Clone, Debug, Default)]
pub struct CircuitPath {
    pub steps: Vec<Vec<Draw>>,
}

impl CircuitPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Advances `psi` by one step, drawing fresh randomness from `rng` and
/// appending it to `path`.
pub fn step<R: Rng + ?Sized>(psi: &mut PureState, spec: &CircuitSpec, rng: &mut R, path: &mut CircuitPath) -> Result<()> {
    let set = match spec.driving {
        Driving::None => None,
        Driving::Boundary(s) | Driving::Structured(s) => Some(s),
    };
    let mut draws = Vec::with_capacity(spec.draws_per_step());
    spec.apply_step(psi, &mut || {
        let d = set.expect("deterministic circuit requested a draw").draw(rng);
        draws.push(d.clone());
        d
    })?;
    path.steps.push(draws);
    Ok(())
}

/// Advances `psi` by one step using pre-recorded draws.
pub fn step_with(psi: &mut PureState, spec: &CircuitSpec, draws: &[Draw]) -> Result<()> {
    if draws.len() != spec.draws_per_step() {
        return Err(Error::DimensionMismatch(format!(
            "{} draws supplied, the step consumes {}",
            draws.len(),
            spec.draws_per_step()
        )));
    }
    let mut it = draws.iter().cloned();
    spec.apply_step(psi, &mut || it.next().expect("draw count checked"))
}

/// Replays a whole recorded path from `psi0`.
pub fn evolve_path(psi0: &PureState, spec: &CircuitSpec, path: &CircuitPath) -> Result<PureState> {
    let mut psi = psi0.clone();
    for draws in &path.steps {
        step_with(&mut psi, spec, draws)?;
    }
    Ok(psi)
}

/// Applies an independent random one-site unitary to every site.
pub fn randomize_sites<R: Rng + ?Sized>(psi: &mut PureState, set: &OneSiteSet, rng: &mut R) -> Result<()> {
    for site in 0..psi.n_sites {
        let u = set.sample_one_site(rng);
        psi.apply_one_site(&u, site)?;
    }
    Ok(())
}

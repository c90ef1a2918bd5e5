//! Two-site gates, one-site random ensembles and their invariants.
//!
//! Matrices act on `|s₁ s₂⟩` with index `s₁·d + s₂`; entry `(out, in)` is
//! `⟨out|U|in⟩`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<C64>;

/// Unitarity tolerance every constructor must meet.
pub const UNITARY_TOL: f64 = 1e-12;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn pauli(label: u8) -> CMatrix {
    match label & 3 {
        0 => CMatrix::identity(2, 2),
        1 => CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        2 => CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        _ => CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
    }
}

/// `max |(AᴴA − 𝟙)_ij|`.
pub fn unitarity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let prod = m.adjoint() * m;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((prod[(i, j)] - target).norm());
        }
    }
    worst
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Row-major copy of a square matrix, the layout the amplitude kernels take.
pub fn row_major(m: &CMatrix) -> Vec<C64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Gate {
    d: usize,
    matrix: CMatrix,
    pub label: String,
}

impl Gate {
    /// Wraps a `d² × d²` matrix, rejecting anything not unitary to `tol`.
    pub fn with_tolerance(d: usize, matrix: CMatrix, label: impl Into<String>, tol: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument(format!("local dimension must be ≥ 2, got {d}")));
        }
        if matrix.nrows() != d * d || matrix.ncols() != d * d {
            return Err(Error::DimensionMismatch(format!(
                "gate matrix is {}×{}, expected {}×{}",
                matrix.nrows(),
                matrix.ncols(),
                d * d,
                d * d
            )));
        }
        let defect = unitarity_defect(&matrix);
        if defect > tol {
            return Err(Error::NotUnitary(defect));
        }
        Ok(Gate { d, matrix, label: label.into() })
    }

    pub fn new(d: usize, matrix: CMatrix, label: impl Into<String>) -> Result<Self> {
        Self::with_tolerance(d, matrix, label, UNITARY_TOL)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn identity(d: usize) -> Self {
        Gate { d, matrix: CMatrix::identity(d * d, d * d), label: "identity".into() }
    }

    pub fn swap(d: usize) -> Self {
        let mut m = CMatrix::zeros(d * d, d * d);
        for a in 0..d {
            for b in 0..d {
                m[(b * d + a, a * d + b)] = ONE;
            }
        }
        Gate { d, matrix: m, label: "swap".into() }
    }

    pub fn adjoint(&self) -> Self {
        Gate { d: self.d, matrix: self.matrix.adjoint(), label: format!("{}†", self.label) }
    }

    /// `(u₁ ⊗ u₂) · U`, i.e. one-site unitaries applied after the gate.
    pub fn dressed(&self, u1: &CMatrix, u2: &CMatrix) -> CMatrix {
        kron(u1, u2) * &self.matrix
    }

    /// Regroups the four legs of the gate into a new `d² × d²` matrix.
    ///
    /// Legs are numbered `0 = out₁, 1 = out₂, 2 = in₁, 3 = in₂`; `rows` and
    /// `cols` name the legs forming the new row and column index.
    pub fn reshuffle(&self, rows: [usize; 2], cols: [usize; 2]) -> CMatrix {
        let d = self.d;
        let mut out = CMatrix::zeros(d * d, d * d);
        let mut legs = [0usize; 4];
        for o1 in 0..d {
            for o2 in 0..d {
                for i1 in 0..d {
                    for i2 in 0..d {
                        legs[0] = o1;
                        legs[1] = o2;
                        legs[2] = i1;
                        legs[3] = i2;
                        let r = legs[rows[0]] * d + legs[rows[1]];
                        let c = legs[cols[0]] * d + legs[cols[1]];
                        out[(r, c)] = self.matrix[(o1 * d + o2, i1 * d + i2)];
                    }
                }
            }
        }
        out
    }

    /// Space-time dual `⟨s₁s₂|Ũ|s₃s₄⟩ = ⟨s₁s₃|U|s₂s₄⟩`.
    pub fn dual(&self) -> CMatrix {
        // s₁ = out₁, s₂ = in₁, s₃ = out₂, s₄ = in₂
        self.reshuffle([0, 2], [1, 3])
    }
}

pub fn euler_unitary(theta: (f64, f64, f64)) -> CMatrix {
    let rot = |angle: f64, label: u8| -> CMatrix {
        CMatrix::identity(2, 2) * C64::new(angle.cos(), 0.0) + pauli(label) * C64::new(0.0, angle.sin())
    };
    rot(theta.0, 3) * rot(theta.1, 1) * rot(theta.2, 3)
}

/// `exp(i[J_x σˣσˣ + J_y σʸσʸ + J σᶻσᶻ]) · (u₁ ⊗ u₂)` with each `u` given by Euler angles.
pub fn build_xyz_gate(jx: f64, jy: f64, jz: f64, euler_left: (f64, f64, f64), euler_right: (f64, f64, f64)) -> Gate {
    // the three Pauli products commute, so the exponential factorises
    let exp_pp = |angle: f64, label: u8| -> CMatrix {
        let pp = kron(&pauli(label), &pauli(label));
        CMatrix::identity(4, 4) * C64::new(angle.cos(), 0.0) + pp * C64::new(0.0, angle.sin())
    };
    let interaction = exp_pp(jx, 1) * exp_pp(jy, 2) * exp_pp(jz, 3);
    let local = kron(&euler_unitary(euler_left), &euler_unitary(euler_right));
    Gate {
        d: 2,
        matrix: interaction * local,
        label: format!("xyz(Jx={jx},Jy={jy},J={jz})"),
    }
}

/// `⟨cd|U|ab⟩ = δ_{a,d} δ_{b,c} e^{i J_ab}`; `phases` is row-major `d × d`.
pub fn build_du_phase_gate(d: usize, phases: &[f64]) -> Result<Gate> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("local dimension must be ≥ 2, got {d}")));
    }
    if phases.len() != d * d {
        return Err(Error::DimensionMismatch(format!(
            "phase matrix has {} entries, expected {}",
            phases.len(),
            d * d
        )));
    }
    let mut m = CMatrix::zeros(d * d, d * d);
    for a in 0..d {
        for b in 0..d {
            m[(b * d + a, a * d + b)] = C64::from_polar(1.0, phases[a * d + b]);
        }
    }
    Ok(Gate { d, matrix: m, label: "du_phase".into() })
}

/// Phases `2π a b / d` of the Hadamard-family dual-unitary gate.
pub fn hadamard_phases(d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            out.push(2.0 * std::f64::consts::PI * (a * b) as f64 / d as f64);
        }
    }
    out
}

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|i| i * i <= n).all(|i| !n.is_multiple_of(i))
}

/// Permutation gate `|a,b⟩ ↦ |a+b, a+2b⟩ (mod d)` for prime `d ≥ 3`.
pub fn build_perfect_tensor(d: usize) -> Result<Gate> {
    if d == 2 {
        return Err(Error::InvalidArgument("perfect tensors do not exist for d = 2".into()));
    }
    if !is_prime(d) {
        return Err(Error::InvalidArgument(format!("finite-field perfect tensor needs prime d, got {d}")));
    }
    let mut m = CMatrix::zeros(d * d, d * d);
    for a in 0..d {
        for b in 0..d {
            let c = (a + b) % d;
            let e = (a + 2 * b) % d;
            m[(c * d + e, a * d + b)] = ONE;
        }
    }
    Ok(Gate { d, matrix: m, label: format!("perfect_tensor(d={d})") })
}

/// Returns `(‖ŨᴴŨ − 𝟙‖_max ≤ tol, ‖ŨᴴŨ − 𝟙‖_max)`.
pub fn is_dual_unitary(g: &Gate, tol: f64) -> (bool, f64) {
    let defect = unitarity_defect(&g.dual());
    (defect <= tol, defect)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PerfectTensorReport {
    pub unitary_defect: f64,
    pub dual_defect: f64,
    pub diagonal_defect: f64,
}

impl PerfectTensorReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.unitary_defect <= tol && self.dual_defect <= tol && self.diagonal_defect <= tol
    }
}

/// Unitarity defects across the three 2|2 bipartitions of the gate's legs.
pub fn check_perfect_tensor(g: &Gate) -> PerfectTensorReport {
    PerfectTensorReport {
        unitary_defect: unitarity_defect(g.matrix()),
        dual_defect: unitarity_defect(&g.dual()),
        // (out₁, in₂) | (out₂, in₁)
        diagonal_defect: unitarity_defect(&g.reshuffle([0, 3], [1, 2])),
    }
}

/// Average linear entropy `1 − tr ρ_A²` produced on Haar-random product inputs,
/// evaluated exactly with the two-copy twirl `(𝟙 + S)/(d(d+1))` on each input site.
pub fn average_linear_entropy(g: &Gate) -> f64 {
    let d = g.d;
    let d2 = d * d;
    let d4 = d2 * d2;
    // two-copy index: (a, b, a', b') with copy 1 = (a, b), copy 2 = (a', b')
    let idx = |a: usize, b: usize, a2: usize, b2: usize| ((a * d + b) * d + a2) * d + b2;
    let norm = 1.0 / (d * (d + 1)) as f64;
    // single-site projector onto the symmetric subspace, normalised to unit trace
    let pi = |x: usize, x2: usize, y: usize, y2: usize| -> f64 {
        let id = if x == y && x2 == y2 { 1.0 } else { 0.0 };
        let sw = if x == y2 && x2 == y { 1.0 } else { 0.0 };
        (id + sw) * norm
    };
    let mut input = CMatrix::zeros(d4, d4);
    for a in 0..d {
        for b in 0..d {
            for a2 in 0..d {
                for b2 in 0..d {
                    for c in 0..d {
                        for e in 0..d {
                            for c2 in 0..d {
                                for e2 in 0..d {
                                    let v = pi(a, a2, c, c2) * pi(b, b2, e, e2);
                                    if v != 0.0 {
                                        input[(idx(a, b, a2, b2), idx(c, e, c2, e2))] = C64::new(v, 0.0);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let uu = kron(g.matrix(), g.matrix());
    let out = &uu * input * uu.adjoint();
    // tr[out · (S_A ⊗ 𝟙_B)]
    let mut purity = C64::new(0.0, 0.0);
    for a in 0..d {
        for b in 0..d {
            for a2 in 0..d {
                for b2 in 0..d {
                    purity += out[(idx(a, b, a2, b2), idx(a2, b, a, b2))];
                }
            }
        }
    }
    1.0 - purity.re
}

/// Entangling power normalised to `[0, 1]`: `(d+1)/(d−1)` times the average
/// linear entropy. Gives `(2/3)cos²(2J)` on the qubit dual-unitary family and
/// `1` on perfect tensors.
pub fn entangling_power(g: &Gate) -> f64 {
    let d = g.d as f64;
    (d + 1.0) / (d - 1.0) * average_linear_entropy(g)
}

/// Haar-distributed element of U(d): QR of a complex Ginibre matrix with the
/// phases of `R`'s diagonal moved into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let z = CMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    });
    let qr = z.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { ONE };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneSiteKind {
    PauliSet,
    HaarOnSite,
}

/// The set `S` and measure `μ_S` random one-site unitaries are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OneSiteSet {
    pub kind: OneSiteKind,
    pub d: usize,
}

/// One recorded draw from a [`OneSiteSet`].
#[derive(Clone, Debug)]
pub enum Draw {
    Pauli(u8),
    Unitary(CMatrix),
}

impl Draw {
    pub fn matrix(&self) -> CMatrix {
        match self {
            Draw::Pauli(l) => pauli(*l),
            Draw::Unitary(m) => m.clone(),
        }
    }
}

impl OneSiteSet {
    pub fn pauli() -> Self {
        OneSiteSet { kind: OneSiteKind::PauliSet, d: 2 }
    }

    pub fn haar(d: usize) -> Self {
        OneSiteSet { kind: OneSiteKind::HaarOnSite, d }
    }

    pub fn new(kind: OneSiteKind, d: usize) -> Result<Self> {
        if kind == OneSiteKind::PauliSet && d != 2 {
            return Err(Error::InvalidArgument(format!("the Pauli set needs d = 2, got {d}")));
        }
        Ok(OneSiteSet { kind, d })
    }

    /// Finite sets as `(weight, element)` pairs; `None` for continuous measures.
    pub fn elements(&self) -> Option<Vec<(f64, CMatrix)>> {
        match self.kind {
            OneSiteKind::PauliSet => Some((0..4).map(|l| (0.25, pauli(l))).collect()),
            OneSiteKind::HaarOnSite => None,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        match self.kind {
            OneSiteKind::PauliSet => Draw::Pauli(rng.random_range(0..4u8)),
            OneSiteKind::HaarOnSite => Draw::Unitary(haar_unitary(self.d, rng)),
        }
    }

    pub fn sample_one_site<R: Rng + ?Sized>(&self, rng: &mut R) -> CMatrix {
        self.draw(rng).matrix()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn du_gate(j: f64, seed: u64) -> Gate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut angles = || (rng.random::<f64>() * PI, rng.random::<f64>() * PI, rng.random::<f64>() * PI);
        build_xyz_gate(PI / 4.0, PI / 4.0, j, angles(), angles())
    }

    #[test]
    fn xyz_identity_case() {
        let g = build_xyz_gate(0.0, 0.0, 0.0, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0));
        assert!((g.matrix() - CMatrix::identity(4, 4)).norm() < 1e-15);
    }

    #[test]
    fn xyz_constructors_are_unitary() {
        for s in 0..20 {
            let g = du_gate(0.1 * s as f64, s);
            assert!(unitarity_defect(g.matrix()) < UNITARY_TOL);
        }
    }

    #[test]
    fn dual_unitarity_of_xyz_family() {
        for s in 0..10 {
            let (ok, defect) = is_dual_unitary(&du_gate(0.37 * s as f64, s), 1e-10);
            assert!(ok, "defect {defect}");
        }
        let off = build_xyz_gate(PI / 4.0 - 0.1, PI / 4.0 - 0.1, 0.3, (0.2, 0.4, 0.1), (1.0, 0.3, 0.5));
        let (ok, defect) = is_dual_unitary(&off, 1e-10);
        assert!(!ok && defect > 1e-6);
        let cnot_like = build_xyz_gate(0.0, 0.0, PI / 4.0, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0));
        assert!(!is_dual_unitary(&cnot_like, 1e-10).0);
    }

    #[test]
    fn swap_is_dual_unitary_with_zero_defect() {
        let (ok, defect) = is_dual_unitary(&Gate::swap(3), 0.0);
        assert!(ok);
        assert_eq!(defect, 0.0);
    }

    #[test]
    fn du_phase_zero_is_swap() {
        let g = build_du_phase_gate(3, &[0.0; 9]).unwrap();
        assert_eq!(g.matrix(), Gate::swap(3).matrix());
        assert!(build_du_phase_gate(3, &[0.0; 8]).is_err());
    }

    #[test]
    fn du_phase_gates_are_dual_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 2..=4 {
            for _ in 0..100 {
                let phases: Vec<f64> = (0..d * d).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
                let g = build_du_phase_gate(d, &phases).unwrap();
                assert!(unitarity_defect(g.matrix()) < UNITARY_TOL);
                let (_, defect) = is_dual_unitary(&g, 1e-12);
                assert!(defect < 1e-12);
            }
        }
    }

    #[test]
    fn perfect_tensor_conditions() {
        let g = build_perfect_tensor(3).unwrap();
        let report = check_perfect_tensor(&g);
        assert!(report.holds(1e-12), "{report:?}");
        assert!((entangling_power(&g) - 1.0).abs() < 1e-10);
        assert!(build_perfect_tensor(5).unwrap().label.contains('5'));
        assert!(build_perfect_tensor(2).is_err());
        assert!(build_perfect_tensor(4).is_err());
        // a generic dual-unitary qubit gate is not perfect
        assert!(!check_perfect_tensor(&du_gate(0.0, 1)).holds(1e-6));
    }

    #[test]
    fn entangling_power_calibration_points() {
        assert!(entangling_power(&Gate::swap(2)).abs() < 1e-12);
        assert!(entangling_power(&Gate::identity(3)).abs() < 1e-12);
        for &j in &[0.0, 0.1, 0.3, 0.6] {
            let expect = 2.0 / 3.0 * (2.0f64 * j).cos().powi(2);
            let got = entangling_power(&du_gate(j, 5));
            assert!((got - expect).abs() < 1e-12, "J={j}: {got} vs {expect}");
        }
        assert!((entangling_power(&du_gate(0.1, 2)) - 0.640_35).abs() < 1e-4);
    }

    #[test]
    fn entangling_power_monte_carlo_oracle() {
        // direct average of the linear entropy over Haar product inputs
        let g = du_gate(0.1, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let a = haar_unitary(2, &mut rng);
            let b = haar_unitary(2, &mut rng);
            let psi_in: Vec<C64> = (0..4).map(|i| a[(i / 2, 0)] * b[(i % 2, 0)]).collect();
            let v = nalgebra::DVector::from_vec(psi_in);
            let out = g.matrix() * v;
            // reduced density matrix of the first qubit
            let mut rho = [[C64::new(0.0, 0.0); 2]; 2];
            for x in 0..2 {
                for y in 0..2 {
                    for e in 0..2 {
                        rho[x][y] += out[x * 2 + e] * out[y * 2 + e].conj();
                    }
                }
            }
            let purity: f64 = (0..2).flat_map(|x| (0..2).map(move |y| (x, y))).map(|(x, y)| (rho[x][y] * rho[y][x]).re).sum();
            acc += 1.0 - purity;
        }
        let mc = 3.0 * acc / n as f64;
        let exact = 2.0 / 3.0 * (0.2f64).cos().powi(2);
        assert!((mc - exact).abs() / exact < 0.01, "{mc} vs {exact}");
    }

    #[test]
    fn entangling_power_is_locally_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for d in [2usize, 3] {
            let phases: Vec<f64> = (0..d * d).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
            let g = build_du_phase_gate(d, &phases).unwrap();
            let p = entangling_power(&g);
            let (u1, u2, u3, u4) = (haar_unitary(d, &mut rng), haar_unitary(d, &mut rng), haar_unitary(d, &mut rng), haar_unitary(d, &mut rng));
            let m = kron(&u1, &u2) * g.matrix() * kron(&u3, &u4);
            let dressed = Gate::with_tolerance(d, m, "dressed", 1e-10).unwrap();
            assert!((entangling_power(&dressed) - p).abs() < 1e-10);
        }
    }

    #[test]
    fn pauli_sampling_is_uniform() {
        let set = OneSiteSet::pauli();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 4_000_000u64;
        let mut counts = [0u64; 4];
        for _ in 0..n {
            if let Draw::Pauli(l) = set.draw(&mut rng) {
                counts[l as usize] += 1;
            }
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 4.0).abs() < 3.0 * sigma, "{counts:?}");
        }
        let w: f64 = set.elements().unwrap().iter().map(|(w, _)| w).sum();
        assert_eq!(w, 1.0);
    }

    #[test]
    fn haar_trace_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut m2, mut m4) = (0.0, 0.0);
        for _ in 0..n {
            let u = haar_unitary(2, &mut rng);
            let t = (u[(0, 0)] + u[(1, 1)]).norm_sqr();
            m2 += t;
            m4 += t * t;
        }
        m2 /= n as f64;
        m4 /= n as f64;
        assert!((m2 - 1.0).abs() < 0.01, "{m2}");
        assert!((m4 - 2.0).abs() < 0.04, "{m4}");
        assert!(unitarity_defect(&haar_unitary(5, &mut rng)) < 1e-12);
    }
}

use std::f64::consts::{FRAC_PI_4, TAU};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use kdesign::gates::{build_du_phase_gate, build_perfect_tensor, build_xyz_gate, hadamard_phases, haar_unitary, Gate, OneSiteKind, OneSiteSet};
use kdesign::sampled_moments::Pairing;
use kdesign::series::Delta2Route;
use kdesign::statevec::InitialState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    CaseAEnumerate,
    CaseASample,
    CaseAReplica,
    CaseBReduced,
    CaseBReplica,
    Spectrum,
    OverlapHist,
    Theory,
    Fit,
}

impl Mode {
    pub fn is_simulation(self) -> bool {
        matches!(self, Mode::CaseAEnumerate | Mode::CaseASample | Mode::CaseAReplica | Mode::CaseBReduced | Mode::CaseBReplica)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneSite {
    #[default]
    Pauli,
    Haar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingKind {
    #[default]
    Disjoint,
    AllPairs,
}

/// Which randomness the spectrum and overlap modes use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// One-site randomness on the last site only.
    A,
    /// One-site randomness on every gate leg.
    #[default]
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// `J_x = J_y = π/4 − δ`, `J_z = J`, fixed Euler angles.
    #[default]
    Xyz,
    DuPhase,
    Hadamard,
    PerfectTensor,
    Haar,
    /// The closed-form averaged dual-unitary gate of entangling power `p` (reduced dynamics, `k = 2`).
    AveragedDu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    #[serde(default)]
    pub kind: GateKind,
    #[serde(default)]
    pub delta: f64,
    #[serde(default, rename = "J")]
    pub j: f64,
    pub euler_left: Option<[f64; 3]>,
    pub euler_right: Option<[f64; 3]>,
    /// Draws both Euler triples uniformly from `[0, 2π)` with this seed.
    pub euler_seed: Option<u64>,
    /// With `euler_seed`, give every gate its own draw instead of sharing one.
    #[serde(default)]
    pub euler_per_gate: bool,
    pub phases: Option<Vec<f64>>,
    pub p: Option<f64>,
    pub seed: Option<u64>,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig { kind: GateKind::Xyz, delta: 0.0, j: 0.0, euler_left: None, euler_right: None, euler_seed: None, euler_per_gate: false, phases: None, p: None, seed: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(rename = "L")]
    pub l: Option<Vec<usize>>,
    pub delta: Option<Vec<f64>>,
    #[serde(rename = "J")]
    pub j: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
}

fn default_k() -> Vec<usize> {
    vec![2]
}

fn default_bins() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(default = "default_k")]
    pub k: Vec<usize>,
    pub t_max: Option<usize>,
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default)]
    pub one_site: OneSite,
    #[serde(default)]
    pub pairing: PairingKind,
    #[serde(default)]
    pub delta2_route: Delta2Route,
    #[serde(default)]
    pub case: Case,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub gate: GateConfig,
    #[serde(default)]
    pub sweep: Sweep,
    pub output: Option<String>,
}

/// Gates on the even bonds, then on the odd bonds.
pub type Layers = (Vec<Gate>, Vec<Gate>);

/// One point of a sweep: the base configuration with overrides applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub delta: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub p: Option<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| {
            let loc = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}: ")
                })
                .unwrap_or_default();
            format!("{loc}{}", e.message())
        })
    }

    pub fn one_site_set(&self) -> Result<OneSiteSet, String> {
        let kind = match self.one_site {
            OneSite::Pauli => OneSiteKind::PauliSet,
            OneSite::Haar => OneSiteKind::HaarOnSite,
        };
        OneSiteSet::new(kind, self.d).map_err(|e| e.to_string())
    }

    pub fn pairing(&self) -> Pairing {
        match self.pairing {
            PairingKind::Disjoint => Pairing::Disjoint,
            PairingKind::AllPairs => Pairing::AllPairs,
        }
    }

    /// Sweep points in a fixed order: `L` outermost, then `δ`, `J`, `p`.
    pub fn points(&self) -> Vec<SweepPoint> {
        let ls = self.sweep.l.clone().unwrap_or_else(|| vec![self.l]);
        let ds = self.sweep.delta.clone().unwrap_or_else(|| vec![self.gate.delta]);
        let js = self.sweep.j.clone().unwrap_or_else(|| vec![self.gate.j]);
        let ps: Vec<Option<f64>> = match &self.sweep.p {
            Some(v) => v.iter().map(|&p| Some(p)).collect(),
            None => vec![self.gate.p],
        };
        let mut out = Vec::new();
        for &l in &ls {
            for &delta in &ds {
                for &j in &js {
                    for &p in &ps {
                        out.push(SweepPoint { index: out.len(), l, delta, j, p });
                    }
                }
            }
        }
        out
    }

    /// Checks the fields each mode needs, before any computation.
    pub fn check(&self) -> Result<(), String> {
        if self.d < 2 {
            return Err(format!("d must be at least 2, got {}", self.d));
        }
        if self.points().iter().any(|p| p.l == 0) {
            return Err("L must be at least 1".into());
        }
        if self.k.is_empty() || self.k.contains(&0) {
            return Err("k must be a non-empty list of positive integers".into());
        }
        let need = |field: &str, v: Option<usize>| v.map(|_| ()).ok_or_else(|| format!("mode {:?} requires `{field}`", self.mode));
        match self.mode {
            Mode::CaseAEnumerate => {
                need("t_max", self.t_max)?;
                if self.one_site != OneSite::Pauli || self.d != 2 {
                    return Err("case_a_enumerate needs d = 2 and one_site = \"pauli\"".into());
                }
            }
            Mode::CaseASample => {
                need("t_max", self.t_max)?;
                need("n_samples", self.n_samples)?;
            }
            Mode::CaseAReplica | Mode::CaseBReplica | Mode::CaseBReduced => {
                need("t_max", self.t_max)?;
            }
            Mode::OverlapHist => {
                need("t_max", self.t_max)?;
                need("n_samples", self.n_samples)?;
                if self.bins == 0 {
                    return Err("bins must be positive".into());
                }
            }
            Mode::Spectrum => {}
            Mode::Theory | Mode::Fit => {
                return Err(format!("mode {:?} is run through its own subcommand", self.mode));
            }
        }
        if self.gate.kind == GateKind::AveragedDu {
            let reduced = matches!(self.mode, Mode::CaseBReduced) || (self.mode == Mode::Spectrum && self.case == Case::B);
            if !reduced || self.k != [2] {
                return Err("gate kind averaged_du is only available for reduced Case (b) dynamics with k = [2]".into());
            }
            if self.points().iter().any(|p| p.p.is_none()) {
                return Err("gate kind averaged_du requires `gate.p` or `sweep.p`".into());
            }
        }
        if matches!(self.gate.kind, GateKind::Xyz) && self.d != 2 {
            return Err("gate kind xyz is defined for d = 2".into());
        }
        Ok(())
    }

    /// The physical gate at a sweep point (`None` for `averaged_du`).
    pub fn build_gate(&self, pt: &SweepPoint) -> Result<Option<Gate>, String> {
        let g = &self.gate;
        let gate = match g.kind {
            GateKind::AveragedDu => return Ok(None),
            GateKind::Xyz => {
                let (el, er) = match g.euler_seed {
                    Some(s) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(s);
                        let mut e = || (rng.random::<f64>() * TAU, rng.random::<f64>() * TAU, rng.random::<f64>() * TAU);
                        (e(), e())
                    }
                    None => {
                        let t = |a: Option<[f64; 3]>| a.map(|v| (v[0], v[1], v[2])).unwrap_or((0.0, 0.0, 0.0));
                        (t(g.euler_left), t(g.euler_right))
                    }
                };
                let jxy = FRAC_PI_4 - pt.delta;
                build_xyz_gate(jxy, jxy, pt.j, el, er)
            }
            GateKind::DuPhase => {
                let ph = g.phases.as_ref().ok_or("gate kind du_phase requires `gate.phases`")?;
                build_du_phase_gate(self.d, ph).map_err(|e| e.to_string())?
            }
            GateKind::Hadamard => build_du_phase_gate(self.d, &hadamard_phases(self.d)).map_err(|e| e.to_string())?,
            GateKind::PerfectTensor => build_perfect_tensor(self.d).map_err(|e| e.to_string())?,
            GateKind::Haar => {
                let mut rng = ChaCha8Rng::seed_from_u64(g.seed.ok_or("gate kind haar requires `gate.seed`")?);
                Gate::with_tolerance(self.d, haar_unitary(self.d * self.d, &mut rng), "haar", 1e-10).map_err(|e| e.to_string())?
            }
        };
        Ok(Some(gate))
    }

    /// Gates for the even bonds `(2n, 2n+1)` and the odd bonds `(2n+1, 2n+2)`.
    pub fn build_layers(&self, pt: &SweepPoint) -> Result<Option<Layers>, String> {
        let g = &self.gate;
        match (g.kind, g.euler_seed) {
            (GateKind::Xyz, Some(s)) if g.euler_per_gate => {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let jxy = FRAC_PI_4 - pt.delta;
                let mut draw = |_| {
                    let mut e = || (rng.random::<f64>() * TAU, rng.random::<f64>() * TAU, rng.random::<f64>() * TAU);
                    let (el, er) = (e(), e());
                    build_xyz_gate(jxy, jxy, pt.j, el, er)
                };
                let even = (0..pt.l).map(&mut draw).collect();
                let odd = (0..pt.l.saturating_sub(1)).map(&mut draw).collect();
                Ok(Some((even, odd)))
            }
            _ => Ok(self.build_gate(pt)?.map(|gate| (vec![gate.clone(); pt.l], vec![gate; pt.l.saturating_sub(1)]))),
        }
    }

    pub fn initial(&self) -> InitialState {
        self.initial_state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal() {
        let c = ExperimentConfig::parse("mode = \"theory\"\nd = 2\nL = 4\n").unwrap();
        assert_eq!(c.k, vec![2]);
        assert_eq!(c.points().len(), 1);
    }

    #[test]
    fn parse_error_has_line() {
        let err = ExperimentConfig::parse("mode = \"case_a_sample\"\nd = 2\nL = = 3\n").unwrap_err();
        assert!(err.starts_with("line 3"), "{err}");
        let err = ExperimentConfig::parse("mode = \"case_a_sample\"\nd = 2\nL = 3\nbogus = 1\n").unwrap_err();
        assert!(err.starts_with("line 4"), "{err}");
    }

    #[test]
    fn sweep_order() {
        let c = ExperimentConfig::parse("mode = \"case_b_reduced\"\nd = 2\nL = 4\nt_max = 3\n[gate]\nkind = \"averaged_du\"\n[sweep]\nL = [2, 3]\np = [0.1, 0.2, 0.3]\n").unwrap();
        let pts = c.points();
        assert_eq!(pts.len(), 6);
        assert_eq!((pts[1].l, pts[1].p), (2, Some(0.2)));
        assert_eq!((pts[3].l, pts[3].p), (3, Some(0.1)));
        c.check().unwrap();
    }

    #[test]
    fn mode_requirements() {
        let c = ExperimentConfig::parse("mode = \"case_a_sample\"\nd = 2\nL = 2\nt_max = 3\n").unwrap();
        assert!(c.check().unwrap_err().contains("n_samples"));
        let c = ExperimentConfig::parse("mode = \"case_a_replica\"\nd = 2\nL = 2\nt_max = 3\n[gate]\nkind = \"averaged_du\"\np = 0.3\n").unwrap();
        assert!(c.check().is_err());
    }

    #[test]
    fn per_gate_euler_draws_differ() {
        let c = ExperimentConfig::parse("mode = \"spectrum\"\nd = 2\nL = 3\n[gate]\nJ = 0.1\neuler_seed = 4\neuler_per_gate = true\n").unwrap();
        let (even, odd) = c.build_layers(&c.points()[0]).unwrap().unwrap();
        assert_eq!((even.len(), odd.len()), (3, 2));
        assert!((even[0].matrix() - even[1].matrix()).norm() > 1e-3);
        let shared = ExperimentConfig::parse("mode = \"spectrum\"\nd = 2\nL = 3\n[gate]\nJ = 0.1\neuler_seed = 4\n").unwrap();
        let (even, odd) = shared.build_layers(&shared.points()[0]).unwrap().unwrap();
        assert!((even[0].matrix() - odd[1].matrix()).norm() < 1e-15);
    }

    #[test]
    fn xyz_gate_is_dual_unitary_at_zero_delta() {
        let c = ExperimentConfig::parse("mode = \"spectrum\"\nd = 2\nL = 2\n[gate]\nJ = 0.3\neuler_seed = 4\n").unwrap();
        let g = c.build_gate(&c.points()[0]).unwrap().unwrap();
        assert!(kdesign::gates::is_dual_unitary(&g, 1e-10).0);
    }
}

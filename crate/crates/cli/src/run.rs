use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use kdesign::fitting::{fit_overlap_distribution, fit_two_step, rate_vs_delta, RateTrend, TwoStepFit, TwoStepOptions};
use kdesign::gates::{entangling_power, is_dual_unitary};
use kdesign::perm_dynamics::{magnon_channel_eigenvalue, reduced_initial, reduced_series, AveragedGate, PermBasis, ReducedCircuit};
use kdesign::replica_channel::{replica_series, ReplicaChannel, ReplicaState};
use kdesign::sampled_moments::{collect_overlaps, frame_potential_enumerate, frame_potential_sample, ENUMERATION_BUDGET};
use kdesign::series::MomentSeries;
use kdesign::spectral::{predicted_lambda1, reduced_unit_vectors, replica_unit_vectors, subleading_eigenvalue, GateContext, SpectralOptions, SpectralResult};
use kdesign::statevec::{CircuitSpec, Driving, PureState};

use crate::config::{Case, ExperimentConfig, GateKind, Mode, SweepPoint};
use crate::CliError;

/// Registers above this many amplitudes are refused.
pub const MAX_AMPLITUDES: f64 = (1u64 << 30) as f64;
/// Refuse runs whose working memory estimate exceeds this.
pub const MEMORY_LIMIT_BYTES: f64 = 16.0 * (1u64 << 30) as f64;
const BYTES_PER_AMPLITUDE: f64 = 16.0;

pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// `Some(e)` when `x = 2^e` exactly.
fn log2_exact(x: f64) -> Option<u32> {
    let e = x.log2().round();
    ((2f64).powf(e) == x).then_some(e as u32)
}

fn fmt_count(x: f64) -> String {
    match log2_exact(x) {
        Some(e) if e >= 10 => format!("2^{e}"),
        _ => format!("{x:.3e}"),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PointEstimate {
    pub index: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub k: usize,
    /// Largest state vector the run holds.
    pub amplitudes: f64,
    pub amplitudes_text: String,
    pub memory_bytes: f64,
    /// Rough count of complex multiply-adds.
    pub ops: f64,
    pub accepted: bool,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub mode: Mode,
    pub accepted: bool,
    pub points: Vec<PointEstimate>,
}

fn reduced_rank(d: usize, k: usize) -> Result<usize, String> {
    PermBasis::new(d, k).map(|b| b.m()).map_err(|e| e.to_string())
}

fn estimate(cfg: &ExperimentConfig, pt: &SweepPoint, k: usize) -> PointEstimate {
    let d = cfg.d as f64;
    let l = pt.l;
    let t = cfg.t_max.unwrap_or(0) as f64;
    let n = cfg.n_samples.unwrap_or(0) as f64;
    let pure = d.powi(2 * l as i32);
    let replica = d.powi((4 * k * l) as i32);
    let mut reason = None;
    let (amps, mem_vectors, ops) = match cfg.mode {
        Mode::CaseAEnumerate => {
            let branches = 4f64.powf(t);
            let pairs = 16f64.powf(t);
            if pairs > ENUMERATION_BUDGET {
                reason = Some(format!("enumeration up to t_max = {t} needs 4^{} = {} overlaps, limit {ENUMERATION_BUDGET:.0e}; use case_a_sample", 2.0 * t, fmt_count(pairs)));
            }
            (pure, branches, pairs * pure)
        }
        Mode::CaseASample | Mode::OverlapHist => (pure, 4.0, 2.0 * n * t * pure * d * d * 2.0 * l as f64),
        Mode::CaseAReplica | Mode::CaseBReplica => (replica, 1.0, t * replica * d.powi(2 * k as i32) * 2.0 * l as f64),
        Mode::CaseBReduced => match reduced_rank(cfg.d, k) {
            Ok(m) => {
                let a = (m as f64).powi(2 * l as i32);
                (a, 1.0, t * a * (m * m) as f64 * 2.0 * l as f64)
            }
            Err(e) => {
                reason = Some(e);
                (0.0, 0.0, 0.0)
            }
        },
        Mode::Spectrum => {
            let a = match cfg.case {
                Case::A => replica,
                Case::B => match reduced_rank(cfg.d, k) {
                    Ok(m) => (m as f64).powi(2 * l as i32),
                    Err(e) => {
                        reason = Some(e);
                        0.0
                    }
                },
            };
            let opts = SpectralOptions::default();
            (a, (opts.restart_dim + 4) as f64, opts.max_applications as f64 * a * 2.0 * l as f64)
        }
        Mode::Theory | Mode::Fit => (0.0, 0.0, 0.0),
    };
    let memory = amps * mem_vectors * BYTES_PER_AMPLITUDE;
    if reason.is_none() && amps > MAX_AMPLITUDES {
        let what = match cfg.mode {
            Mode::CaseAReplica | Mode::CaseBReplica => format!("d^(4kL) = {}^{}", cfg.d, 4 * k * l),
            Mode::CaseBReduced | Mode::Spectrum => "register".to_string(),
            _ => format!("d^(2L) = {}^{}", cfg.d, 2 * l),
        };
        let hint = match cfg.mode {
            Mode::CaseBReplica => "; use case_b_reduced",
            Mode::CaseAReplica => "; reduce L or k, or use case_a_sample",
            _ => "; reduce L",
        };
        reason = Some(format!("{what} = {} amplitudes exceed the limit of 2^30{hint}", fmt_count(amps)));
    }
    if reason.is_none() && memory > MEMORY_LIMIT_BYTES {
        reason = Some(format!("estimated memory {:.1} GiB exceeds 16 GiB", memory / (1u64 << 30) as f64));
    }
    PointEstimate { index: pt.index, l, k, amplitudes: amps, amplitudes_text: fmt_count(amps), memory_bytes: memory, ops, accepted: reason.is_none(), reason }
}

pub fn validate(cfg: &ExperimentConfig) -> ValidationReport {
    let points: Vec<PointEstimate> = cfg.points().iter().flat_map(|pt| cfg.k.iter().map(move |&k| estimate(cfg, pt, k))).collect();
    ValidationReport { mode: cfg.mode, accepted: points.iter().all(|p| p.accepted), points }
}

/// Per-point seed: the first 8 bytes of `SHA-256(master ‖ index)`.
pub fn derive_seed(master: u64, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

pub fn config_hash(cfg: &ExperimentConfig, seed: Option<u64>) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serialises"));
    if let Some(s) = seed {
        h.update(s.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Writes through a temporary file and renames, so readers never see partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serialisable");
    s.push(b'\n');
    s
}

#[derive(Serialize)]
struct PointRecord {
    #[serde(flatten)]
    point: SweepPoint,
    seed: u64,
    files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    entangling_power: Option<f64>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a ExperimentConfig,
    config_hash: String,
    seed: Option<u64>,
    version: &'static str,
    points: Vec<PointRecord>,
}

pub fn run_dir(cfg: &ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> PathBuf {
    let root = out.map(Path::to_path_buf).or_else(|| cfg.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(config_hash(cfg, seed))
}

fn point_p(cfg: &ExperimentConfig, pt: &SweepPoint) -> Result<Option<f64>, CliError> {
    Ok(match cfg.build_gate(pt).map_err(CliError::Config)? {
        Some(g) => Some(entangling_power(&g)),
        None => pt.p,
    })
}

fn spec_for(cfg: &ExperimentConfig, pt: &SweepPoint, driving: Driving) -> Result<CircuitSpec, CliError> {
    let (even, odd) = cfg.build_layers(pt).map_err(CliError::Config)?.ok_or_else(|| CliError::Config("this mode needs a physical gate".into()))?;
    Ok(CircuitSpec::new(pt.l, even, odd, driving)?)
}

fn reduced_circuit(cfg: &ExperimentConfig, pt: &SweepPoint, k: usize) -> Result<ReducedCircuit, CliError> {
    if cfg.gate.kind == GateKind::AveragedDu {
        let w = AveragedGate::du_k2(cfg.d, pt.p.expect("checked"))?;
        Ok(ReducedCircuit::uniform(pt.l, &w)?)
    } else {
        let set = cfg.one_site_set().map_err(CliError::Config)?;
        Ok(ReducedCircuit::from_spec(&spec_for(cfg, pt, Driving::Structured(set))?, k)?)
    }
}

fn simulate_point(cfg: &ExperimentConfig, pt: &SweepPoint, seed: u64) -> Result<MomentSeries, CliError> {
    let t_max = cfg.t_max.expect("checked");
    let set = cfg.one_site_set().map_err(CliError::Config)?;
    let psi0 = PureState::initial(cfg.initial(), cfg.d, pt.l);
    let mut rows = Vec::new();
    match cfg.mode {
        Mode::CaseAEnumerate => return Ok(frame_potential_enumerate(&spec_for(cfg, pt, Driving::Boundary(set))?, &psi0, &cfg.k, t_max)?),
        Mode::CaseASample => {
            let spec = spec_for(cfg, pt, Driving::Boundary(set))?;
            return Ok(frame_potential_sample(&spec, &psi0, &cfg.k, t_max, cfg.n_samples.expect("checked"), seed, cfg.pairing())?);
        }
        Mode::CaseAReplica | Mode::CaseBReplica => {
            let driving = if cfg.mode == Mode::CaseAReplica { Driving::Boundary(set) } else { Driving::Structured(set) };
            let spec = spec_for(cfg, pt, driving)?;
            for &k in &cfg.k {
                let ch = ReplicaChannel::new(&spec, k)?;
                rows.extend(replica_series(&ch, &ReplicaState::from_pure(&psi0, k)?, t_max, cfg.delta2_route)?.rows);
            }
        }
        Mode::CaseBReduced => {
            for &k in &cfg.k {
                let circ = reduced_circuit(cfg, pt, k)?;
                let s0 = reduced_initial(cfg.initial(), circ.basis().clone(), pt.l)?;
                rows.extend(reduced_series(&circ, &s0, t_max, cfg.delta2_route)?.rows);
            }
        }
        _ => unreachable!("not a simulation mode"),
    }
    Ok(MomentSeries::new(rows))
}

fn ensure_accepted(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let report = validate(cfg);
    match report.points.iter().find(|p| !p.accepted) {
        Some(p) => Err(CliError::Budget(format!("sweep point {} (L={}, k={}): {}", p.index, p.l, p.k, p.reason.clone().unwrap_or_default()))),
        None => Ok(()),
    }
}

fn progress(cfg: &ExperimentConfig, pt: &SweepPoint, total: usize) {
    eprintln!("[{:?}] point {}/{}: L={} δ={} J={} p={:?}", cfg.mode, pt.index + 1, total, pt.l, pt.delta, pt.j, pt.p);
}

/// Runs a simulation mode; returns the output directory.
pub fn simulate(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<PathBuf, CliError> {
    cfg.check().map_err(CliError::Config)?;
    if !cfg.mode.is_simulation() {
        return Err(CliError::Config(format!("mode {:?} is not a simulate mode", cfg.mode)));
    }
    ensure_accepted(cfg)?;
    let dir = run_dir(cfg, Some(seed), out);
    fs::create_dir_all(&dir)?;
    let points = cfg.points();
    let records: Vec<PointRecord> = points
        .par_iter()
        .map(|pt| {
            progress(cfg, pt, points.len());
            let s = derive_seed(seed, pt.index);
            let mut series = simulate_point(cfg, pt, s)?;
            series.config_hash = Some(config_hash(cfg, Some(seed)));
            series.seed = Some(s);
            let name = format!("series_{:03}.csv", pt.index);
            let mut buf = Vec::new();
            series.write_csv(&mut buf)?;
            write_atomic(&dir.join(&name), &buf)?;
            Ok(PointRecord { point: pt.clone(), seed: s, files: vec![name], entangling_power: point_p(cfg, pt)? })
        })
        .collect::<Result<_, CliError>>()?;
    let side = Sidecar { config: cfg, config_hash: config_hash(cfg, Some(seed)), seed: Some(seed), version: version(), points: records };
    write_atomic(&dir.join("run.json"), &to_json(&side))?;
    Ok(dir)
}

#[derive(Serialize, serde::Deserialize, Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub d: usize,
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub p: Option<f64>,
    pub lambda1: f64,
    pub converged: bool,
    pub residual: f64,
}

#[derive(Serialize)]
struct SpectrumDetail {
    index: usize,
    k: usize,
    predicted_lambda1: Option<f64>,
    result: SpectralResult,
}

pub fn spectrum(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<PathBuf, CliError> {
    cfg.check().map_err(CliError::Config)?;
    ensure_accepted(cfg)?;
    let dir = run_dir(cfg, Some(seed), out);
    fs::create_dir_all(&dir)?;
    let points = cfg.points();
    let jobs: Vec<(&SweepPoint, usize)> = points.iter().flat_map(|pt| cfg.k.iter().map(move |&k| (pt, k))).collect();
    let results: Vec<(SpectrumRow, SpectrumDetail)> = jobs
        .par_iter()
        .map(|&(pt, k)| {
            progress(cfg, pt, points.len());
            let opts = SpectralOptions { seed: derive_seed(seed, pt.index), ..Default::default() };
            let r = match cfg.case {
                Case::B => {
                    let circ = reduced_circuit(cfg, pt, k)?;
                    subleading_eigenvalue(&circ, &reduced_unit_vectors(&circ), &opts)?
                }
                Case::A => {
                    let set = cfg.one_site_set().map_err(CliError::Config)?;
                    let ch = ReplicaChannel::new(&spec_for(cfg, pt, Driving::Boundary(set))?, k)?;
                    subleading_eigenvalue(&ch, &replica_unit_vectors(cfg.d, pt.l, k), &opts)?
                }
            };
            let p = point_p(cfg, pt)?;
            let predicted = match (cfg.case, cfg.build_gate(pt).map_err(CliError::Config)?) {
                (Case::B, None) => Some(predicted_lambda1(cfg.d, 2, GateContext::EntanglingPower(p.expect("averaged gate has p")))?),
                (Case::B, Some(g)) if is_dual_unitary(&g, 1e-10).0 => Some(predicted_lambda1(cfg.d, k, GateContext::Magnon(magnon_channel_eigenvalue(&g, k)?))?),
                _ => None,
            };
            let row = SpectrumRow { d: cfg.d, k, l: pt.l, p, lambda1: r.lambda1, converged: r.converged, residual: r.residual };
            Ok((row, SpectrumDetail { index: pt.index, k, predicted_lambda1: predicted, result: r }))
        })
        .collect::<Result<_, CliError>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (row, _) in &results {
        w.serialize(row).map_err(kdesign::Error::from)?;
    }
    write_atomic(&dir.join("spectra.csv"), &w.into_inner().map_err(|e| CliError::Io(e.into_error()))?)?;
    let details: Vec<&SpectrumDetail> = results.iter().map(|(_, d)| d).collect();
    write_atomic(&dir.join("spectra.json"), &to_json(&details))?;
    let side = Sidecar {
        config: cfg,
        config_hash: config_hash(cfg, Some(seed)),
        seed: Some(seed),
        version: version(),
        points: points
            .iter()
            .map(|pt| Ok(PointRecord { point: pt.clone(), seed: derive_seed(seed, pt.index), files: vec!["spectra.csv".into()], entangling_power: point_p(cfg, pt)? }))
            .collect::<Result<_, CliError>>()?,
    };
    write_atomic(&dir.join("run.json"), &to_json(&side))?;
    Ok(dir)
}

#[derive(Serialize)]
struct HistRow {
    bin_lo: f64,
    bin_hi: f64,
    count: u64,
    density: f64,
    fit_density: f64,
}

pub fn overlap_hist(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<PathBuf, CliError> {
    cfg.check().map_err(CliError::Config)?;
    if cfg.mode != Mode::OverlapHist {
        return Err(CliError::Config("overlap-hist needs mode = \"overlap_hist\"".into()));
    }
    if cfg.points().len() != 1 {
        return Err(CliError::Config("overlap_hist does not take a sweep".into()));
    }
    ensure_accepted(cfg)?;
    let pt = &cfg.points()[0];
    let set = cfg.one_site_set().map_err(CliError::Config)?;
    let driving = match cfg.case {
        Case::A => Driving::Boundary(set),
        Case::B => Driving::Structured(set),
    };
    let spec = spec_for(cfg, pt, driving)?;
    let psi0 = PureState::initial(cfg.initial(), cfg.d, pt.l);
    let s = derive_seed(seed, 0);
    let xs = collect_overlaps(&spec, &psi0, cfg.t_max.expect("checked"), cfg.n_samples.expect("checked"), s)?;
    let fit = fit_overlap_distribution(&xs)?;

    let dir = run_dir(cfg, Some(seed), out);
    fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["overlap"]).map_err(kdesign::Error::from)?;
    for x in &xs {
        w.write_record([x.to_string()]).map_err(kdesign::Error::from)?;
    }
    write_atomic(&dir.join("overlaps.csv"), &w.into_inner().map_err(|e| CliError::Io(e.into_error()))?)?;

    let hi = xs.iter().copied().fold(0.0, f64::max);
    let width = hi / cfg.bins as f64;
    let mut counts = vec![0u64; cfg.bins];
    for &x in &xs {
        counts[((x / width) as usize).min(cfg.bins - 1)] += 1;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, &c) in counts.iter().enumerate() {
        let (lo, up) = (i as f64 * width, (i + 1) as f64 * width);
        let row = HistRow { bin_lo: lo, bin_hi: up, count: c, density: c as f64 / (xs.len() as f64 * width), fit_density: (fit.cdf(up) - fit.cdf(lo)) / width };
        w.serialize(row).map_err(kdesign::Error::from)?;
    }
    write_atomic(&dir.join("histogram.csv"), &w.into_inner().map_err(|e| CliError::Io(e.into_error()))?)?;
    write_atomic(&dir.join("gamma_fit.json"), &to_json(&fit))?;
    let side = Sidecar {
        config: cfg,
        config_hash: config_hash(cfg, Some(seed)),
        seed: Some(seed),
        version: version(),
        points: vec![PointRecord {
            point: pt.clone(),
            seed: s,
            files: vec!["overlaps.csv".into(), "histogram.csv".into(), "gamma_fit.json".into()],
            entangling_power: point_p(cfg, pt)?,
        }],
    };
    write_atomic(&dir.join("run.json"), &to_json(&side))?;
    Ok(dir)
}

#[derive(Serialize, serde::Deserialize, Debug, Clone, PartialEq)]
pub struct FitRow {
    pub delta: Option<f64>,
    pub r1: f64,
    pub r2: f64,
    pub t_star: usize,
}

#[derive(Serialize)]
struct FitDetail {
    source: String,
    k: usize,
    delta: Option<f64>,
    fit: TwoStepFit,
}

#[derive(Serialize)]
struct FitSummary {
    fits: Vec<FitDetail>,
    rate_vs_delta: Option<RateTrend>,
}

/// Fits every series file; `deltas[i]` labels `files[i]` when given.
pub fn fit(files: &[PathBuf], deltas: &[Option<f64>], k: usize, opts: &TwoStepOptions, out_dir: &Path) -> Result<Vec<FitRow>, CliError> {
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for (path, &delta) in files.iter().zip(deltas) {
        let series = MomentSeries::read_csv(fs::File::open(path).map_err(|e| CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?)?;
        let f = fit_two_step(series.for_order(k), opts).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        rows.push(FitRow { delta, r1: f.r1, r2: f.r2, t_star: f.t_star });
        details.push(FitDetail { source: path.display().to_string(), k, delta, fit: f });
    }
    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.delta.map(|d| (d, r.r1))).collect();
    let trend = rate_vs_delta(&pts).ok();
    fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(kdesign::Error::from)?;
    }
    write_atomic(&out_dir.join("fits.csv"), &w.into_inner().map_err(|e| CliError::Io(e.into_error()))?)?;
    write_atomic(&out_dir.join("fits.json"), &to_json(&FitSummary { fits: details, rate_vs_delta: trend }))?;
    Ok(rows)
}

/// Series files and their `δ` labels from a run directory.
pub fn run_series(dir: &Path) -> Result<(Vec<PathBuf>, Vec<Option<f64>>), CliError> {
    let side: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("run.json"))?).map_err(|e| CliError::Data(format!("run.json: {e}")))?;
    let mut files = Vec::new();
    let mut deltas = Vec::new();
    for p in side["points"].as_array().ok_or_else(|| CliError::Data("run.json has no points".into()))? {
        for f in p["files"].as_array().into_iter().flatten() {
            if let Some(name) = f.as_str().filter(|n| n.starts_with("series_")) {
                files.push(dir.join(name));
                deltas.push(p["delta"].as_f64());
            }
        }
    }
    if files.is_empty() {
        return Err(CliError::Data(format!("{} contains no series files", dir.display())));
    }
    Ok((files, deltas))
}

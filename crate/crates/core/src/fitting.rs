//! Decay-rate extraction from `Δ₂(t)` series and maximum-likelihood fits of
//! overlap magnitudes to the generalised gamma distribution.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::series::MomentRow;

/// Least-squares line `y ≈ slope·t + intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Line {
    slope: f64,
    intercept: f64,
}

impl Line {
    fn at(&self, t: f64) -> f64 {
        self.slope * t + self.intercept
    }
}

fn least_squares(pts: &[(f64, f64)]) -> Line {
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    Line { slope, intercept: my - slope * mt }
}

fn rms(pts: &[(f64, f64)], line: &Line) -> f64 {
    (pts.iter().map(|p| (p.1 - line.at(p.0)).powi(2)).sum::<f64>() / pts.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TwoStepOptions {
    /// Δ₂ values at or below this are dropped, together with everything after them.
    pub noise_floor: f64,
    /// A point breaks the early regime when its log-residual exceeds this many early-window RMS residuals.
    pub rms_factor: f64,
    /// Lower bound on the breakpoint threshold, for noiseless data.
    pub min_threshold: f64,
    /// Points with `Δ₂ < stderr_factor·σ(Δ₂)` count as noise.
    pub stderr_factor: f64,
    pub min_early: usize,
}

impl Default for TwoStepOptions {
    fn default() -> Self {
        TwoStepOptions { noise_floor: 1e-12, rms_factor: 3.0, min_threshold: 1e-6, stderr_factor: 2.0, min_early: 3 }
    }
}

/// `ln Δ₂ ≈ −r₁ t + c₁` for `t < t*` and `−r₂ t + c₂` after.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStepFit {
    pub r1: f64,
    pub c1: f64,
    pub r2: f64,
    pub c2: f64,
    pub t_star: usize,
    pub window1: (usize, usize),
    pub window2: Option<(usize, usize)>,
    pub rms1: f64,
    pub rms2: f64,
}

/// Usable `(t, ln Δ₂)` points: the prefix of the series above the noise floor.
pub fn usable_points<'a>(rows: impl IntoIterator<Item = &'a MomentRow>, opts: &TwoStepOptions) -> Vec<(f64, f64)> {
    let mut rows: Vec<&MomentRow> = rows.into_iter().collect();
    rows.sort_by_key(|r| r.t);
    let mut out = Vec::new();
    for r in rows {
        let sigma = if r.f > 0.0 { r.f_stderr * (r.delta2 + 1.0) / r.f } else { 0.0 };
        if !(r.delta2 > opts.noise_floor && r.delta2 > opts.stderr_factor * sigma) || !r.delta2.is_finite() {
            break;
        }
        out.push((r.t as f64, r.delta2.ln()));
    }
    out
}

/// Fits the two-regime exponential decay of one order's `Δ₂` series.
pub fn fit_two_step<'a>(rows: impl IntoIterator<Item = &'a MomentRow>, opts: &TwoStepOptions) -> Result<TwoStepFit> {
    fit_two_step_points(&usable_points(rows, opts), opts)
}

/// As [`fit_two_step`] on pre-extracted `(t, ln Δ₂)` points.
pub fn fit_two_step_points(pts: &[(f64, f64)], opts: &TwoStepOptions) -> Result<TwoStepFit> {
    if pts.len() < 6 {
        return Err(Error::InsufficientData(format!("two-step fit needs at least 6 points above the noise floor, got {}", pts.len())));
    }
    let w0 = opts.min_early.max(2);
    let mut end = w0;
    let mut early = least_squares(&pts[..end]);
    let mut brk = None;
    while end < pts.len() {
        let thr = (opts.rms_factor * rms(&pts[..end], &early)).max(opts.min_threshold);
        let (t, y) = pts[end];
        if (y - early.at(t)).abs() > thr {
            brk = Some(end);
            break;
        }
        end += 1;
        early = least_squares(&pts[..end]);
    }
    let rms1 = rms(&pts[..end], &early);
    let window1 = (pts[0].0 as usize, pts[end - 1].0 as usize);
    let base = TwoStepFit {
        r1: -early.slope,
        c1: early.intercept,
        r2: -early.slope,
        c2: early.intercept,
        t_star: pts[pts.len() - 1].0 as usize,
        window1,
        window2: None,
        rms1,
        rms2: rms1,
    };
    let Some(b) = brk else {
        return Ok(base);
    };
    let mut late = &pts[b + 1..];
    if late.len() < 2 {
        late = &pts[b..];
    }
    if late.len() < 2 {
        return Err(Error::InsufficientData("the second regime has fewer than 2 points".into()));
    }
    let second = least_squares(late);
    Ok(TwoStepFit {
        r2: -second.slope,
        c2: second.intercept,
        t_star: pts[b].0 as usize,
        window2: Some((late[0].0 as usize, late[late.len() - 1].0 as usize)),
        rms2: rms(late, &second),
        ..base
    })
}

/// Log-linear trend `r(δ) ≈ exp(slope·δ + intercept)` with 95% intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTrend {
    pub slope: f64,
    pub intercept: f64,
    pub slope_ci: (f64, f64),
    pub intercept_ci: (f64, f64),
    pub n_points: usize,
}

/// Regresses `ln r` on `δ`. Points with `δ = 0` or `r ≤ 0` are skipped.
pub fn rate_vs_delta(points: &[(f64, f64)]) -> Result<RateTrend> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(d, r)| *d != 0.0 && *r > 0.0).map(|&(d, r)| (d, r.ln())).collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!("need at least 4 usable δ points, got {}", pts.len())));
    }
    let line = least_squares(&pts);
    let n = pts.len() as f64;
    let md = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - md).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all δ values coincide".into()));
    }
    let s2 = pts.iter().map(|p| (p.1 - line.at(p.0)).powi(2)).sum::<f64>() / (n - 2.0);
    let se_slope = (s2 / sxx).sqrt();
    let se_int = (s2 * (1.0 / n + md * md / sxx)).sqrt();
    let tq = StudentsT::new(0.0, 1.0, n - 2.0).expect("n > 2").inverse_cdf(0.975);
    Ok(RateTrend {
        slope: line.slope,
        intercept: line.intercept,
        slope_ci: (line.slope - tq * se_slope, line.slope + tq * se_slope),
        intercept_ci: (line.intercept - tq * se_int, line.intercept + tq * se_int),
        n_points: pts.len(),
    })
}

/// Generalised gamma density `p x^{q−1} e^{−(x/a)^p} / (a^q Γ(q/p))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub a: f64,
    pub p: f64,
    pub q: f64,
    /// Kolmogorov–Smirnov distance to the fitted CDF.
    pub ks: f64,
    pub n_samples: usize,
    pub log_likelihood: f64,
}

impl GammaFit {
    pub fn pdf(&self, x: f64) -> f64 {
        gg_pdf(x, self.a, self.p, self.q)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        gg_cdf(x, self.a, self.p, self.q)
    }
}

pub fn gg_pdf(x: f64, a: f64, p: f64, q: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    (p.ln() + (q - 1.0) * x.ln() - (x / a).powf(p) - q * a.ln() - ln_gamma(q / p)).exp()
}

pub fn gg_cdf(x: f64, a: f64, p: f64, q: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(q / p, (x / a).powf(p))
}

// negative mean log-likelihood in θ = (ln p, ln q), with the scale profiled
// out: for fixed (p, q) the optimum is a^p = p⟨x^p⟩/q
struct GgLikelihood<'a> {
    xs: &'a [f64],
    lnx_mean: f64,
}

impl GgLikelihood<'_> {
    fn scale(&self, p: f64, q: f64) -> f64 {
        let mp = self.xs.iter().map(|x| x.powf(p)).sum::<f64>() / self.xs.len() as f64;
        (p * mp / q).powf(1.0 / p)
    }

    fn nll(&self, a: f64, p: f64, q: f64) -> f64 {
        let n = self.xs.len() as f64;
        let s: f64 = self.xs.iter().map(|&x| (x / a).powf(p)).sum::<f64>() / n;
        -(p.ln() - q * a.ln() + (q - 1.0) * self.lnx_mean - s - ln_gamma(q / p))
    }
}

impl CostFunction for GgLikelihood<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, t: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let (p, q) = (t[0].exp(), t[1].exp());
        let v = self.nll(self.scale(p, q), p, q);
        Ok(if v.is_finite() { v } else { f64::INFINITY })
    }
}

/// Maximum-likelihood generalised-gamma fit to positive samples.
pub fn fit_overlap_distribution(overlaps: &[f64]) -> Result<GammaFit> {
    if overlaps.len() < 1000 {
        return Err(Error::InsufficientData(format!("need at least 1000 samples, got {}", overlaps.len())));
    }
    if overlaps.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument("samples must be positive and finite".into()));
    }
    let n = overlaps.len() as f64;
    let mean = overlaps.iter().sum::<f64>() / n;
    if overlaps.iter().all(|&x| (x - overlaps[0]).abs() <= 1e-15 * mean) {
        return Err(Error::InvalidArgument("degenerate data: all samples are equal".into()));
    }
    let xs: Vec<f64> = overlaps.iter().map(|x| x / mean).collect();
    let lnx_mean = xs.iter().map(|x| x.ln()).sum::<f64>() / n;
    let problem = GgLikelihood { xs: &xs, lnx_mean };
    // Rayleigh start; the scale follows from the data at every (p, q)
    let (l2, h) = (2f64.ln(), 0.3);
    let simplex = vec![vec![l2, l2], vec![l2 + h, l2], vec![l2, l2 + h]];
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-13).expect("positive tolerance");
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(2000))
        .run()
        .map_err(|e| Error::InvalidArgument(format!("likelihood maximisation failed: {e}")))?;
    let best = res.state.best_param.ok_or_else(|| Error::InvalidArgument("likelihood maximisation produced no estimate".into()))?;
    let problem = GgLikelihood { xs: &xs, lnx_mean };
    let (p, q) = (best[0].exp(), best[1].exp());
    let a = problem.scale(p, q);
    let log_likelihood = -n * problem.nll(a, p, q) - n * mean.ln();

    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    let ks = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = gg_cdf(x, a, p, q);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max);
    Ok(GammaFit { a: a * mean, p, q, ks, n_samples: overlaps.len(), log_likelihood })
}

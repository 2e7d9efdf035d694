//! Decay experiments: total-variation curves between two starting points or against the invariant law,
//! weighted rate fits, starting-point scaling and the aggregated report.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::conditions::{check_model, CheckSettings, Classification, ConditionReport};
use crate::error::{invalid, Error, Result};
use crate::levy::SmallJumpScheme;
use crate::ou::{coupling_frequency, sample_invariant, simulate_many, CouplingSampler, OUModel};
use crate::rng::{Execution, RandomStream};
use crate::spectral::{tv_distance_oracle, tv_to_stationary, OracleSettings};
use crate::stats::student_t_quantile;
use crate::vecops::norm;

/// Fewest rows above the noise floor a fit accepts.
pub const MIN_FIT_ROWS: usize = 6;

/// How a TV value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Fourier inversion; `err` is a deterministic bar.
    Oracle,
    /// `2 P(not coupled)` under the last-jump coupling, an upper bound; `err` is one standard error.
    Coupling,
    /// L1 distance of two histograms; `err` bounds the sampling inflation.
    Histogram,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Coupling => "coupling",
            Method::Histogram => "histogram",
        }
    }

    /// Value below which a row carries no signal.
    pub fn noise_floor(&self, err: f64) -> f64 {
        match self {
            Method::Oracle => err,
            _ => 3.0 * err,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub t: f64,
    pub tv: f64,
    pub err: f64,
    pub method: Method,
}

/// What the law of `X_t^x` is compared with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    Point(Vec<f64>),
    VsInvariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub x: Vec<f64>,
    pub reference: Reference,
    pub method: Method,
    pub seed: Option<u64>,
    pub scheme: Option<SmallJumpScheme>,
    pub rows: Vec<DecayRow>,
}

impl DecayTable {
    fn check(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Consistency("decay table times are not increasing".into()));
            }
        }
        if self.rows.iter().any(|r| !(0.0..=2.0).contains(&r.tv) || !(r.err >= 0.0)) {
            return Err(Error::Consistency("decay table value outside [0, 2] or negative error bar".into()));
        }
        Ok(())
    }

    /// Rows strictly above their noise floor.
    pub fn usable(&self) -> Vec<DecayRow> {
        self.rows.iter().copied().filter(|r| r.tv > 0.0 && r.tv > r.method.noise_floor(r.err)).collect()
    }
}

/// CSV with columns `t,tv,err,method`, tables one after another.
pub fn write_decay_csv<W: Write>(tables: &[DecayTable], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,tv,err,method")?;
    for table in tables {
        for r in &table.rows {
            writeln!(w, "{},{},{},{}", r.t, r.tv, r.err, r.method.as_str())?;
        }
    }
    Ok(())
}

/// Monte Carlo and oracle knobs shared by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub n: usize,
    pub seed: u64,
    /// Truncation level of the coupling.
    pub epsilon: f64,
    /// Small-jump scheme for plain simulation.
    pub scheme: SmallJumpScheme,
    /// Histogram bins per axis; `None` picks `n^{1/3}` (d = 1) or `n^{1/4}` (d = 2).
    pub histogram_bins: Option<usize>,
    /// Tail tolerance of the invariant sampler.
    pub invariant_tol: f64,
    #[serde(skip)]
    pub oracle: OracleSettings,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            n: 20_000,
            seed: 1,
            epsilon: 1.0,
            scheme: SmallJumpScheme::default(),
            histogram_bins: None,
            invariant_tol: 1e-6,
            oracle: OracleSettings::default(),
            execution: Execution::default(),
        }
    }
}

impl ExperimentSettings {
    fn row_stream(&self, tag: u64, row: usize) -> RandomStream {
        RandomStream::new(self.seed).split(tag).split(row as u64)
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(invalid("empty time grid"));
    }
    if t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("time grid must be positive, finite and strictly increasing"));
    }
    Ok(())
}

fn check_point(model: &OUModel, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() || x.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("starting point must be a finite vector of length {}", model.dim())));
    }
    Ok(())
}

fn finish(model_x: &[f64], reference: Reference, method: Method, settings: &ExperimentSettings, rows: Vec<DecayRow>) -> Result<DecayTable> {
    let mc = method != Method::Oracle;
    let table = DecayTable {
        x: model_x.to_vec(),
        reference,
        method,
        seed: mc.then_some(settings.seed),
        scheme: (method == Method::Histogram).then_some(settings.scheme),
        rows,
    };
    table.check()?;
    Ok(table)
}

/// `||P_t(x, .) - P_t(y, .)||_var` over `t_grid`.
pub fn tv_decay_two_points(model: &OUModel, x: &[f64], y: &[f64], t_grid: &[f64], method: Method, settings: &ExperimentSettings) -> Result<DecayTable> {
    check_grid(t_grid)?;
    check_point(model, x)?;
    check_point(model, y)?;
    let reference = Reference::Point(y.to_vec());
    if x == y {
        let rows = t_grid.iter().map(|&t| DecayRow { t, tv: 0.0, err: 0.0, method }).collect();
        return finish(x, reference, method, settings, rows);
    }
    let mut rows = Vec::with_capacity(t_grid.len());
    for (i, &t) in t_grid.iter().enumerate() {
        let (tv, err) = match method {
            Method::Oracle => {
                let e = tv_distance_oracle(model, t, x, y, &settings.oracle)?;
                (e.value, e.error)
            }
            Method::Coupling => {
                let st = coupling_frequency(model, x, y, settings.epsilon, t, settings.n, &settings.row_stream(1, i), &settings.execution)?;
                (st.tv_bound, st.tv_bound_se)
            }
            Method::Histogram => {
                let a = simulate_many(model, x, t, settings.scheme, settings.n, &settings.row_stream(2, i), &settings.execution)?;
                let b = simulate_many(model, y, t, settings.scheme, settings.n, &settings.row_stream(3, i), &settings.execution)?;
                histogram_l1(&a, &b, settings.histogram_bins)?
            }
        };
        rows.push(DecayRow { t, tv: tv.clamp(0.0, 2.0), err, method });
    }
    finish(x, reference, method, settings, rows)
}

/// `||P_t(x, .) - mu||_var` over `t_grid`, `mu` the invariant law.
///
/// The coupling estimate averages the two-point bound over `y ~ mu`: each sample draws `y` from the invariant
/// sampler and runs one coupled pair from `(x, y)`.
pub fn tv_decay_vs_invariant(model: &OUModel, x: &[f64], t_grid: &[f64], method: Method, settings: &ExperimentSettings) -> Result<DecayTable> {
    check_grid(t_grid)?;
    check_point(model, x)?;
    let mut rows = Vec::with_capacity(t_grid.len());
    for (i, &t) in t_grid.iter().enumerate() {
        let (tv, err) = match method {
            Method::Oracle => {
                let e = tv_to_stationary(model, t, x, &settings.oracle)?;
                (e.value, e.error)
            }
            Method::Coupling => {
                let sampler = CouplingSampler::new(model, settings.epsilon, t)?;
                let flags = settings.execution.sample(settings.n, &settings.row_stream(4, i), |rng| {
                    let y = sample_invariant(model, settings.scheme, settings.invariant_tol, rng)?;
                    sampler.draw(x, &y, rng).map(|p| !p.coupled)
                });
                let mut miss = 0usize;
                for f in flags {
                    miss += f? as usize;
                }
                let p = miss as f64 / settings.n as f64;
                (2.0 * p, 2.0 * (p * (1.0 - p) / settings.n as f64).sqrt())
            }
            Method::Histogram => {
                let a = simulate_many(model, x, t, settings.scheme, settings.n, &settings.row_stream(5, i), &settings.execution)?;
                let b = settings
                    .execution
                    .sample(settings.n, &settings.row_stream(6, i), |rng| sample_invariant(model, settings.scheme, settings.invariant_tol, rng))
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?;
                histogram_l1(&a, &b, settings.histogram_bins)?
            }
        };
        rows.push(DecayRow { t, tv: tv.clamp(0.0, 2.0), err, method });
    }
    finish(x, Reference::VsInvariant, method, settings, rows)
}

/// L1 distance between the histograms of two equal-size samples (d <= 2), with two overflow bins per axis.
///
/// Returns the value and the summed standard deviations of the bin differences, which bounds the upward
/// bias from sampling noise; binning itself biases the value down.
pub fn histogram_l1(a: &[Vec<f64>], b: &[Vec<f64>], bins: Option<usize>) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("histograms need non-empty samples"));
    }
    let d = a[0].len();
    if d == 0 || d > 2 {
        return Err(Error::Unsupported(format!("histograms support d <= 2, got {d}")));
    }
    let n = a.len().min(b.len());
    let k = bins.unwrap_or_else(|| if d == 1 { (n as f64).cbrt().ceil() as usize } else { (n as f64).powf(0.25).ceil() as usize }).max(1);
    let mut edges = Vec::with_capacity(d);
    for axis in 0..d {
        let mut pooled: Vec<f64> = a.iter().chain(b.iter()).map(|v| v[axis]).collect();
        pooled.sort_by(f64::total_cmp);
        let q = |p: f64| pooled[((pooled.len() - 1) as f64 * p).round() as usize];
        let (lo, hi) = (q(0.005), q(0.995));
        let hi = if hi > lo { hi } else { lo + 1.0 };
        edges.push((lo, (hi - lo) / k as f64));
    }
    let per_axis = k + 2;
    let index = |v: &[f64]| -> usize {
        let mut idx = 0;
        for (axis, (lo, w)) in edges.iter().enumerate() {
            let u = (v[axis] - lo) / w;
            let j = if u < 0.0 { 0 } else if u >= k as f64 { k + 1 } else { u as usize + 1 };
            idx = idx * per_axis + j;
        }
        idx
    };
    let cells = per_axis.pow(d as u32);
    let (mut ca, mut cb) = (vec![0usize; cells], vec![0usize; cells]);
    for v in &a[..n] {
        ca[index(v)] += 1;
    }
    for v in &b[..n] {
        cb[index(v)] += 1;
    }
    let nf = n as f64;
    let mut value = 0.0;
    let mut err = 0.0;
    for (x, y) in ca.iter().zip(&cb) {
        let (p, q) = (*x as f64 / nf, *y as f64 / nf);
        value += (p - q).abs();
        err += ((p * (1.0 - p) + q * (1.0 - q)) / nf).sqrt();
    }
    Ok((value, err))
}

/// Which decay law a fit assumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum RateFamily {
    /// `C e^{-kappa t}`.
    Exponential,
    /// `C t^{-p}`.
    Algebraic,
    /// `C (1 + |x|^alpha) e^{-kappa t}`: exponential in `t` with the start-dependence recorded.
    AlphaExponential { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResidual {
    pub t: f64,
    pub observed: f64,
    pub fitted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub family: RateFamily,
    pub prefactor: f64,
    /// `kappa` for exponential families, `p` for the algebraic one.
    pub rate: f64,
    /// 95% confidence interval of `rate`.
    pub ci: [f64; 2],
    /// Weighted R^2 on the log scale.
    pub r_squared: f64,
    /// The interval excludes zero from above.
    pub significant: bool,
    pub rows_used: usize,
    pub residuals: Vec<FitResidual>,
}

/// Weighted least squares of `log tv` on `t` (exponential families) or `log t` (algebraic).
///
/// Rows at or below the noise floor are dropped. Log-scale weights come from the relative error bars,
/// floored at 1e-3 so that no single exact row dominates.
pub fn fit_decay(table: &DecayTable, family: RateFamily) -> Result<RateFit> {
    let rows = table.usable();
    if rows.len() < MIN_FIT_ROWS {
        return Err(Error::FitDegenerate(format!(
            "{} of {} rows above the noise floor; need {MIN_FIT_ROWS}",
            rows.len(),
            table.rows.len()
        )));
    }
    let u: Vec<f64> = rows.iter().map(|r| if family == RateFamily::Algebraic { r.t.ln() } else { r.t }).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.tv.ln()).collect();
    let w: Vec<f64> = rows.iter().map(|r| (r.err / r.tv).max(1e-3).powi(-2)).collect();
    let sw: f64 = w.iter().sum();
    let ub = w.iter().zip(&u).map(|(w, u)| w * u).sum::<f64>() / sw;
    let yb = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let suu: f64 = w.iter().zip(&u).map(|(w, u)| w * (u - ub).powi(2)).sum();
    if suu <= 0.0 {
        return Err(Error::FitDegenerate("all usable rows share one abscissa".into()));
    }
    let suy: f64 = (0..u.len()).map(|i| w[i] * (u[i] - ub) * (y[i] - yb)).sum();
    let slope = suy / suu;
    let icept = yb - slope * ub;
    let fitted: Vec<f64> = u.iter().map(|u| icept + slope * u).collect();
    let ssr: f64 = (0..u.len()).map(|i| w[i] * (y[i] - fitted[i]).powi(2)).sum();
    let sst: f64 = (0..u.len()).map(|i| w[i] * (y[i] - yb).powi(2)).sum();
    let dof = (u.len() - 2) as f64;
    let se = (ssr / dof / suu).sqrt();
    let half = student_t_quantile(0.975, dof) * se;
    let rate = -slope;
    let ci = [rate - half, rate + half];
    Ok(RateFit {
        family,
        prefactor: icept.exp(),
        rate,
        ci,
        r_squared: if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 },
        significant: ci[0] > 0.0,
        rows_used: rows.len(),
        residuals: rows.iter().zip(&fitted).map(|(r, f)| FitResidual { t: r.t, observed: r.tv, fitted: f.exp() }).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    /// `|x|`, the start being `|x| e_1`.
    pub x: f64,
    pub tv: f64,
    pub err: f64,
    /// `tv / (1 + |x|^alpha)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub t: f64,
    pub alpha: f64,
    pub rows: Vec<ScalingRow>,
    pub max_ratio: f64,
    pub min_ratio: f64,
}

/// Oracle `||P_t(x, .) - mu||_var` against `1 + |x|^alpha` along the first axis.
pub fn starting_point_scaling(model: &OUModel, t: f64, x_grid: &[f64], alpha: f64, settings: &ExperimentSettings) -> Result<ScalingTable> {
    if x_grid.is_empty() || x_grid.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(invalid("starting-point grid must be non-empty, finite and non-negative"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let mut rows = Vec::with_capacity(x_grid.len());
    for &r in x_grid {
        let mut x = vec![0.0; model.dim()];
        x[0] = r;
        let e = tv_to_stationary(model, t, &x, &settings.oracle)?;
        rows.push(ScalingRow { x: r, tv: e.value, err: e.error, ratio: e.value / (1.0 + r.powf(alpha)) });
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(ScalingTable { t, alpha, rows, max_ratio, min_ratio })
}

/// Inputs of [`full_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportParams {
    /// Starting point; defaults to `2 e_1`.
    pub x: Option<Vec<f64>>,
    /// Second starting point for two-point experiments; defaults to the origin.
    pub y: Option<Vec<f64>>,
    /// Grid for exponential-type fits.
    pub t_grid_exponential: Vec<f64>,
    /// Grid for algebraic fits.
    pub t_grid_algebraic: Vec<f64>,
    /// Times at which oracle and coupling are cross-checked.
    pub t_grid_cross_check: Vec<f64>,
    pub checks: CheckSettings,
    pub experiment: ExperimentSettings,
}

impl Default for ReportParams {
    fn default() -> Self {
        ReportParams {
            x: None,
            y: None,
            t_grid_exponential: (1..=8).map(f64::from).collect(),
            t_grid_algebraic: (0..8).map(|k| 2f64.powi(k)).collect(),
            t_grid_cross_check: vec![0.5, 1.0, 2.0],
            checks: CheckSettings::default(),
            experiment: ExperimentSettings::default(),
        }
    }
}

/// Oracle against coupling at a few times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub oracle: DecayTable,
    pub coupling: DecayTable,
    /// `coupling + 3 sigma >= oracle - bar` on every row.
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub dim: usize,
    pub conditions: Option<ConditionReport>,
    pub expected_family: Option<RateFamily>,
    /// Why no decay experiment ran.
    pub skipped: Option<String>,
    pub tables: Vec<DecayTable>,
    pub fits: Vec<RateFit>,
    pub cross_check: Option<CrossCheck>,
    /// Whether the fitted decay agrees with the predicted family.
    pub agreement: Option<bool>,
    pub errors: Vec<String>,
}

impl FullReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| invalid(format!("report serialization: {e}")))
    }
}

/// Checks the conditions, runs the decay experiment their classification calls for, fits the predicted family
/// and cross-checks oracle against coupling. Component failures are collected in `errors`.
pub fn full_report(model: &OUModel, params: &ReportParams) -> FullReport {
    let d = model.dim();
    let x = params.x.clone().unwrap_or_else(|| {
        let mut v = vec![0.0; d];
        v[0] = 2.0;
        v
    });
    let y = params.y.clone().unwrap_or_else(|| vec![0.0; d]);
    let s = &params.experiment;
    let mut report = FullReport {
        dim: d,
        conditions: None,
        expected_family: None,
        skipped: None,
        tables: Vec::new(),
        fits: Vec::new(),
        cross_check: None,
        agreement: None,
        errors: Vec::new(),
    };
    let conditions = match check_model(model.triplet(), model.spectral(), &params.checks) {
        Ok(c) => c,
        Err(e) => {
            report.errors.push(format!("conditions: {e}"));
            report.skipped = Some("the condition checks failed to run".into());
            return report;
        }
    };
    let family = match conditions.classification {
        Classification::ExpErgodicAlpha => Some(RateFamily::AlphaExponential { alpha: conditions.alpha }),
        Classification::ExpErgodic => Some(RateFamily::Exponential),
        Classification::AlgebraicRate => Some(RateFamily::Algebraic),
        Classification::Ergodic => {
            report.skipped = Some("ergodic without a rate: there is no decay family to test".into());
            None
        }
        Classification::InvariantMeasureExists => {
            report.skipped = Some("the checks give an invariant law but no convergence to it".into());
            None
        }
        Classification::None => {
            report.skipped = Some("no invariant law is guaranteed by the checks".into());
            None
        }
    };
    report.conditions = Some(conditions);
    report.expected_family = family;
    let Some(family) = family else {
        return report;
    };
    let table = match family {
        RateFamily::Algebraic => tv_decay_two_points(model, &x, &y, &params.t_grid_algebraic, Method::Coupling, s),
        _ => {
            let grid = &params.t_grid_exponential;
            tv_decay_vs_invariant(model, &x, grid, Method::Oracle, s)
                .or_else(|e| {
                    report.errors.push(format!("oracle against the invariant law: {e}"));
                    tv_decay_two_points(model, &x, &y, grid, Method::Oracle, s)
                })
                .or_else(|e| {
                    report.errors.push(format!("two-point oracle: {e}"));
                    tv_decay_two_points(model, &x, &y, grid, Method::Coupling, s)
                })
        }
    };
    match table {
        Ok(t) => {
            match fit_decay(&t, family) {
                Ok(f) => {
                    report.agreement = Some(f.significant && (family == RateFamily::Algebraic || f.r_squared >= 0.9));
                    report.fits.push(f);
                }
                Err(e) => report.errors.push(format!("fit: {e}")),
            }
            report.tables.push(t);
        }
        Err(e) => report.errors.push(format!("decay experiment: {e}")),
    }
    if d <= 2 && !params.t_grid_cross_check.is_empty() {
        let oracle = tv_decay_two_points(model, &x, &y, &params.t_grid_cross_check, Method::Oracle, s);
        let coupling = tv_decay_two_points(model, &x, &y, &params.t_grid_cross_check, Method::Coupling, s);
        match (oracle, coupling) {
            (Ok(o), Ok(c)) => {
                let consistent = o.rows.iter().zip(&c.rows).all(|(o, c)| c.tv + 3.0 * c.err >= o.tv - o.err);
                if !consistent {
                    report.errors.push("coupling bound falls below the oracle beyond the error bars".into());
                    report.agreement = Some(false);
                }
                report.cross_check = Some(CrossCheck { oracle: o, coupling: c, consistent });
            }
            (Err(e), _) | (_, Err(e)) => report.errors.push(format!("cross-check: {e}")),
        }
    }
    report
}

/// `|e^{tA}(x - y)|`, the factor in front of two-point bounds.
pub fn flow_gap(model: &OUModel, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
    Ok(norm(&model.flow(&crate::vecops::sub(x, y), t)?))
}

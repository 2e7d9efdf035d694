//! Numeric checkers for the hypotheses on `nu`, the symbol and the drift matrix, and the classification
//! they support.
//!
//! Asymptotic conditions are decided on finite grids with explicit margins, and every decision is
//! taken with error-bar clearance: a value that cannot be separated from the threshold is reported
//! as inconclusive rather than rounded to pass or fail.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::levy::{moment_integral, small_ball_second_moment, symbol, truncate, LevyMeasure, LevyTriplet, MomentKind, MomentValue, TruncatedMeasure};
use crate::matrix::SpectralProfile;
use crate::measure::{discretize, overlap_mass, probe_points, shift, tv_with_error, GridSpec, GriddedMeasure, Source};
use crate::quad::{composite_rule, integrate, Tolerance};
use crate::rng::{Execution, RandomStream};
use crate::vecops::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionName {
    /// `int_{|z|>=1} log(1+|z|) nu(dz) < inf`.
    LogMoment,
    /// `int_{|z|>=1} |z|^p nu(dz) < inf`; the order is stored under `order`.
    PowerMoment,
    /// `inf_{|x|<=rho} (nu_eps ^ delta_x nu_eps)(R^d) > 0`.
    Overlap,
    /// `limsup_{rho->0} sup_{|x|<=rho} |nu_eps - delta_x nu_eps|_var / rho < inf`.
    TvRatio,
    /// `liminf int_{|z|<=1/|xi|} <z,xi>^2 nu(dz) / log(1+|xi|) > 0`.
    SmallJumpSpread,
    /// `liminf Re Phi(xi) / log(1+|xi|) > 0`.
    SymbolGrowth,
    /// `int_{|z-z0|<=eps} 1/rho(z) dz < inf`, sufficient for the overlap condition.
    DensityIntegrability,
    /// Shift regularity of a density, sufficient for the TV-ratio condition.
    DensityShift,
    /// A finite minorant `mu <= nu` satisfying the TV-ratio condition.
    Minorant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    fn rank(self) -> u8 {
        match self {
            Status::Fail => 0,
            Status::Inconclusive => 1,
            Status::Pass => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub label: String,
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub name: ConditionName,
    pub status: Status,
    pub evidence: Vec<Evidence>,
    pub parameters: BTreeMap<String, f64>,
    pub note: String,
}

impl ConditionRecord {
    fn new(name: ConditionName, status: Status) -> Self {
        ConditionRecord { name, status, evidence: Vec::new(), parameters: BTreeMap::new(), note: String::new() }
    }

    fn param(mut self, key: &str, v: f64) -> Self {
        self.parameters.insert(key.to_string(), v);
        self
    }

    fn evidence(mut self, label: impl Into<String>, value: f64, error: f64) -> Self {
        self.evidence.push(Evidence { label: label.into(), value, error });
        self
    }

    fn note(mut self, s: impl Into<String>) -> Self {
        self.note = s.into();
        self
    }

    fn inconclusive(name: ConditionName, err: &Error) -> Self {
        ConditionRecord::new(name, Status::Inconclusive).note(err.to_string())
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Strongest conclusion supported by the passing conditions, weakest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    None,
    InvariantMeasureExists,
    Ergodic,
    AlgebraicRate,
    ExpErgodic,
    ExpErgodicAlpha,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::None => "none",
            Classification::InvariantMeasureExists => "invariant-measure-exists",
            Classification::Ergodic => "ergodic",
            Classification::AlgebraicRate => "algebraic-rate",
            Classification::ExpErgodic => "exp-ergodic",
            Classification::ExpErgodicAlpha => "exp-ergodic-alpha",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub records: Vec<ConditionRecord>,
    pub classification: Classification,
    /// The conditions the classification rests on.
    pub justification: String,
    pub alpha: f64,
    pub strictly_stable: bool,
    pub weakly_stable_semisimple: bool,
}

impl ConditionReport {
    pub fn record(&self, name: ConditionName) -> Option<&ConditionRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| invalid(format!("report serialization: {e}")))
    }
}

/// Knobs shared by the checkers. Defaults are the documented ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckSettings {
    pub epsilon: f64,
    /// Extra truncation levels tried for the overlap and TV-ratio conditions of infinite measures.
    pub epsilon_sweep: Vec<f64>,
    pub rho: f64,
    /// Moment order for the alpha-rate; `None` picks `min(1, alpha0 / 2)`.
    pub alpha: Option<f64>,
    pub xi_max: f64,
    pub directions: usize,
    /// Relative margin for liminf decisions.
    pub margin: f64,
    /// Log10 drop per decade above which a ratio counts as decaying to zero.
    pub decay_per_decade: f64,
    /// Finest lattice spacing used for `nu_eps`.
    pub min_spacing: f64,
    /// Coarsest spacings; they bound the lattice radius.
    pub max_spacing_1d: f64,
    pub max_spacing_2d: f64,
    pub max_cells_1d: usize,
    pub max_cells_2d_axis: usize,
    /// Target for the lattice tail leak, relative to `C_eps`.
    pub leak_target: f64,
    /// Multiplies every error bar before deciding; 1 in normal use.
    pub bar_inflation: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings {
            epsilon: 1.0,
            epsilon_sweep: vec![0.5, 1.0, 2.0],
            rho: 0.5,
            alpha: None,
            xi_max: 1e4,
            directions: 8,
            margin: 1e-3,
            decay_per_decade: 0.2,
            min_spacing: 1.0 / 256.0,
            max_spacing_1d: 1.0 / 128.0,
            max_spacing_2d: 1.0 / 64.0,
            max_cells_1d: 1 << 20,
            max_cells_2d_axis: 768,
            leak_target: 1e-4,
            bar_inflation: 1.0,
            execution: Execution::default(),
        }
    }
}

/// Ratios whose last value exceeds the one three steps earlier by this factor are diverging.
pub const RATIO_GROWTH_LIMIT: f64 = 1.25;

fn moment_record(nu: &LevyMeasure, kind: MomentKind, name: ConditionName) -> ConditionRecord {
    match moment_integral(nu, kind) {
        Ok(MomentValue::Finite(v)) => ConditionRecord::new(name, Status::Pass).evidence("integral", v, 1e-8 * v.abs()),
        Ok(MomentValue::Divergent) => ConditionRecord::new(name, Status::Fail)
            .note("dyadic tail shells fail to decay geometrically"),
        Err(e) => ConditionRecord::inconclusive(name, &e),
    }
}

pub fn check_log_moment(nu: &LevyMeasure) -> ConditionRecord {
    moment_record(nu, MomentKind::Log1p, ConditionName::LogMoment)
}

pub fn check_power_moment(nu: &LevyMeasure, order: f64) -> ConditionRecord {
    moment_record(nu, MomentKind::Power(order), ConditionName::PowerMoment).param("order", order)
}

/// Lattice carrying `nu_eps` with room for shifts up to `reach`.
pub fn lattice_for(tm: &TruncatedMeasure, reach: f64, settings: &CheckSettings) -> Result<GriddedMeasure> {
    let d = tm.dim();
    if d > 2 {
        return Err(Error::Unsupported(format!("lattice checks need d <= 2, got {d}")));
    }
    if tm.is_empty() {
        return Err(Error::Precondition("the truncated measure is zero".into()));
    }
    let cells_axis = if d == 1 { settings.max_cells_1d } else { settings.max_cells_2d_axis };
    let target = settings.leak_target * tm.total_mass();
    let base = tm.base();
    // Largest radius the coarsest allowed spacing can afford; beyond it the leak goes into the error bar.
    let h_max = if d == 1 { settings.max_spacing_1d } else { settings.max_spacing_2d };
    let r_cap = (cells_axis as f64 * h_max * 0.5 - reach).max(1.0);
    let mut r = (2.0 * tm.cutoff()).max(1.0);
    while r < r_cap && base.mass_beyond(r)? > target {
        r *= 1.25;
    }
    let half = r.min(r_cap) + reach;
    let mut h = settings.min_spacing;
    while 2.0 * half / h + 1.0 > cells_axis as f64 {
        h *= 2.0;
    }
    let spec = if d == 1 {
        // Cell edges on multiples of h, so a dyadic cutoff never splits a cell.
        let k = (half / h).ceil() as usize;
        GridSpec::new(vec![(0.5 - k as f64) * h], vec![h], vec![2 * k])?
    } else {
        GridSpec::centered(d, half, h)?
    };
    discretize(Source::Truncated(tm), &spec, f64::INFINITY)
}

/// Overlap condition at `(eps, rho)`: the minimum of the overlap mass over shells `|x| = rho k / 8`.
pub fn check_overlap_condition(nu: &LevyMeasure, epsilon: f64, rho: f64, settings: &CheckSettings) -> ConditionRecord {
    let name = ConditionName::Overlap;
    let run = || -> Result<ConditionRecord> {
        if !(rho > 0.0) {
            return Err(invalid("rho must be positive"));
        }
        let tm = truncate(nu, epsilon)?;
        if tm.is_empty() {
            return Ok(ConditionRecord::new(name, Status::Fail).note("the truncated measure is zero"));
        }
        let g = lattice_for(&tm, rho, settings)?;
        overlap_on_lattice(&g, rho, settings)
    };
    match run() {
        Ok(r) => r.param("epsilon", epsilon).param("rho", rho),
        Err(e) => ConditionRecord::inconclusive(name, &e).param("epsilon", epsilon).param("rho", rho),
    }
}

fn overlap_on_lattice(g: &GriddedMeasure, rho: f64, settings: &CheckSettings) -> Result<ConditionRecord> {
    let probes = probe_points(g.spec().dim(), rho, 8, settings.directions);
    // The cellwise minimum converges at first order in h, so the gap to the doubled spacing bounds its error.
    let coarse = g.coarsened();
    let vals = settings.execution.map(probes.len(), |i| {
        let (m, e) = overlap_mass(g, &probes[i], f64::INFINITY)?;
        let (mc, _) = overlap_mass(&coarse, &probes[i], f64::INFINITY)?;
        Ok::<_, Error>((m, e + (m - mc).abs()))
    });
    let mut min = f64::INFINITY;
    let mut bar: f64 = 0.0;
    let mut arg = 0;
    for (i, v) in vals.into_iter().enumerate() {
        let (m, e) = v?;
        if m < min {
            min = m;
            arg = i;
        }
        bar = bar.max(e);
    }
    let b = bar * settings.bar_inflation;
    let status = if min - b > 0.0 {
        Status::Pass
    } else if min + b <= 0.0 {
        Status::Fail
    } else {
        Status::Inconclusive
    };
    Ok(ConditionRecord::new(ConditionName::Overlap, status)
        .evidence("min_overlap", min, bar)
        .evidence("argmin_norm", norm(&probes[arg]), 0.0)
        .evidence("mass", g.mass(), g.error_bar())
        .param("spacing", g.spec().spacing[0]))
}

/// One point of the TV-ratio sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub rho: f64,
    pub ratio: f64,
    pub error: f64,
}

/// `r_k = sup_{|x|<=rho_k} tv(g, delta_x g) / rho_k` for `rho_k = 2^-k`, `k >= 2`, down to twice the spacing.
pub fn tv_ratio_sequence(g: &GriddedMeasure, settings: &CheckSettings) -> Result<Vec<RatioPoint>> {
    let h = g.spec().spacing.iter().cloned().fold(0.0, f64::max);
    let mut rhos = Vec::new();
    let mut k = 2;
    while 2f64.powi(-k) >= 2.0 * h - 1e-15 && k < 40 {
        rhos.push(2f64.powi(-k));
        k += 1;
    }
    let dim = g.spec().dim();
    let jobs: Vec<(usize, Vec<f64>)> = rhos
        .iter()
        .enumerate()
        .flat_map(|(i, rho)| probe_points(dim, *rho, 4, settings.directions).into_iter().map(move |x| (i, x)))
        .collect();
    let tvs = settings.execution.map(jobs.len(), |j| -> Result<(f64, f64)> {
        let s = shift(g, &jobs[j].1, f64::INFINITY)?;
        tv_with_error(g, &s)
    });
    let mut best = vec![(0.0f64, 0.0f64); rhos.len()];
    for ((i, _), v) in jobs.iter().zip(tvs) {
        let (tv, e) = v?;
        best[*i].0 = best[*i].0.max(tv);
        best[*i].1 = best[*i].1.max(e);
    }
    Ok(rhos.iter().zip(best).map(|(rho, (tv, e))| RatioPoint { rho: *rho, ratio: tv / rho, error: e / rho }).collect())
}

/// Bounded-ratio decision on the last four points of a ratio sequence.
fn decide_ratio(points: &[RatioPoint], inflation: f64) -> Status {
    if points.len() < 4 {
        return Status::Inconclusive;
    }
    let a = points[points.len() - 1];
    let b = points[points.len() - 4];
    let (ea, eb) = (a.error * inflation, b.error * inflation);
    if a.ratio + ea <= 1e-12 {
        return Status::Pass;
    }
    let upper = (a.ratio + ea) / (b.ratio - eb).max(1e-300);
    let lower = (a.ratio - ea).max(0.0) / (b.ratio + eb);
    if upper <= RATIO_GROWTH_LIMIT {
        Status::Pass
    } else if lower > RATIO_GROWTH_LIMIT {
        Status::Fail
    } else {
        Status::Inconclusive
    }
}

fn ratio_record(name: ConditionName, points: &[RatioPoint], settings: &CheckSettings) -> ConditionRecord {
    let status = decide_ratio(points, settings.bar_inflation);
    let mut rec = ConditionRecord::new(name, status);
    for p in points {
        rec = rec.evidence(format!("ratio@{}", p.rho), p.ratio, p.error);
    }
    if let Some(last) = points.last() {
        rec = rec.evidence("limit_estimate", last.ratio, last.error);
    }
    if points.len() < 4 {
        rec = rec.note(format!("only {} resolvable radii; refine the lattice", points.len()));
    }
    rec
}

/// TV-ratio condition for `nu_eps`.
pub fn check_tv_ratio_condition(nu: &LevyMeasure, epsilon: f64, settings: &CheckSettings) -> ConditionRecord {
    let name = ConditionName::TvRatio;
    let run = || -> Result<ConditionRecord> {
        let tm = truncate(nu, epsilon)?;
        if tm.is_empty() {
            return Ok(ConditionRecord::new(name, Status::Fail).note("the truncated measure is zero"));
        }
        let g = lattice_for(&tm, 0.25, settings)?;
        let pts = tv_ratio_sequence(&g, settings)?;
        Ok(ratio_record(name, &pts, settings).param("spacing", g.spec().spacing[0]))
    };
    match run() {
        Ok(r) => r.param("epsilon", epsilon),
        Err(e) => ConditionRecord::inconclusive(name, &e).param("epsilon", epsilon),
    }
}

/// Deterministic directions on the half sphere (the ratios below are even in `xi`).
pub fn probe_directions(dim: usize, n: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0]],
        2 => (0..n.max(1))
            .map(|j| {
                let th = std::f64::consts::PI * j as f64 / n.max(1) as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            let mut out: Vec<Vec<f64>> = (0..dim)
                .map(|i| {
                    let mut e = vec![0.0; dim];
                    e[i] = 1.0;
                    e
                })
                .collect();
            let diag = 1.0 / (dim as f64).sqrt();
            out.push(vec![diag; dim]);
            let mut rng = RandomStream::new(0x5eed);
            while out.len() < n.max(dim + 1) {
                let v: Vec<f64> = (0..dim).map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)).collect();
                let r = norm(&v);
                out.push(v.iter().map(|x| x / r).collect());
            }
            out
        }
    }
}

/// Magnitudes `10^(1 + j/4)` up to `xi_max`.
pub fn xi_magnitudes(xi_max: f64) -> Vec<f64> {
    let top = xi_max.log10();
    let n = ((top - 1.0) * 4.0).round() as usize;
    (0..=n).map(|j| 10f64.powf(1.0 + j as f64 / 4.0)).collect()
}

/// Liminf decision on `value(xi) / log(1 + |xi|)` over the last two decades of magnitudes.
fn liminf_record(name: ConditionName, mags: &[f64], ratios: &[f64], rel_err: f64, settings: &CheckSettings) -> ConditionRecord {
    let xi_max = *mags.last().expect("non-empty grid");
    let tail: Vec<(f64, f64)> = mags.iter().cloned().zip(ratios.iter().cloned()).filter(|(m, _)| *m >= xi_max / 100.0 * (1.0 - 1e-12)).collect();
    let min = tail.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max = tail.iter().map(|p| p.1).fold(0.0, f64::max);
    let at = |m: f64| tail.iter().min_by(|a, b| (a.0 / m).ln().abs().total_cmp(&(b.0 / m).ln().abs())).map(|p| p.1).unwrap_or(0.0);
    let (prev, last) = (at(xi_max / 10.0), at(xi_max));
    let decay = if prev > 0.0 && last > 0.0 { (prev / last).log10() } else { 0.0 };
    let bar = |v: f64| rel_err * v.abs() * settings.bar_inflation;
    let status = if max + bar(max) <= settings.margin {
        Status::Fail
    } else if decay > settings.decay_per_decade {
        Status::Fail
    } else if min - bar(min) > settings.margin {
        Status::Pass
    } else {
        Status::Inconclusive
    };
    let mut rec = ConditionRecord::new(name, status)
        .evidence("min_ratio_last_two_decades", min, bar(min))
        .evidence("log10_drop_last_decade", decay, 0.0)
        .param("xi_max", xi_max)
        .param("margin", settings.margin);
    for (m, r) in mags.iter().zip(ratios) {
        rec = rec.evidence(format!("ratio@{m:.4e}"), *r, bar(*r));
    }
    if status == Status::Fail && decay > settings.decay_per_decade {
        rec = rec.note("ratio decays towards zero across the last decade");
    }
    rec
}

fn ratio_grid<F>(dim: usize, xi_max: f64, directions: usize, exec: &Execution, f: F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let mags = xi_magnitudes(xi_max);
    let dirs = probe_directions(dim, directions);
    let jobs: Vec<(usize, usize)> = (0..mags.len()).flat_map(|i| (0..dirs.len()).map(move |j| (i, j))).collect();
    let vals = exec.map(jobs.len(), |k| {
        let (i, j) = jobs[k];
        let xi: Vec<f64> = dirs[j].iter().map(|v| v * mags[i]).collect();
        f(&xi).map(|v| v / mags[i].ln_1p())
    });
    let mut ratios = vec![f64::INFINITY; mags.len()];
    for ((i, _), v) in jobs.iter().zip(vals) {
        ratios[*i] = ratios[*i].min(v?);
    }
    Ok((mags, ratios))
}

/// Small-jump spread condition on the magnitude grid `10..xi_max` times `n_dirs` directions.
pub fn check_small_jump_spread(nu: &LevyMeasure, xi_max: f64, n_dirs: usize, settings: &CheckSettings) -> ConditionRecord {
    let name = ConditionName::SmallJumpSpread;
    if !(xi_max >= 1e3) {
        return ConditionRecord::inconclusive(name, &invalid("xi_max must be at least 1e3"));
    }
    if nu.is_finite() {
        // <z, xi>^2 <= 1 on the small ball, so the numerator is at most nu(B(0, 1/|xi|)) -> 0.
        return ConditionRecord::new(name, Status::Fail).param("xi_max", xi_max).note("finite measure: the small-ball moment vanishes as |xi| grows");
    }
    match ratio_grid(nu.dim(), xi_max, n_dirs, &settings.execution, |xi| small_ball_second_moment(nu, xi)) {
        Ok((mags, ratios)) => liminf_record(name, &mags, &ratios, 1e-7, settings),
        Err(e) => ConditionRecord::inconclusive(name, &e).param("xi_max", xi_max),
    }
}

/// Symbol growth condition; the minimum ratio over the last two decades is the `c0` estimate.
pub fn check_symbol_growth(triplet: &LevyTriplet, xi_max: f64, n_dirs: usize, settings: &CheckSettings) -> ConditionRecord {
    let name = ConditionName::SymbolGrowth;
    if !(xi_max >= 1e3) {
        return ConditionRecord::inconclusive(name, &invalid("xi_max must be at least 1e3"));
    }
    let q_regular = triplet.q().matrix().symmetric_eigenvalues().iter().all(|v| *v > 1e-12);
    if triplet.nu().is_finite() && !q_regular {
        let bound = triplet.nu().total_mass().ok().flatten().unwrap_or(0.0) * 2.0;
        return ConditionRecord::new(name, Status::Fail)
            .evidence("re_symbol_bound_on_ker_q", bound, 0.0)
            .param("xi_max", xi_max)
            .note("finite measure and degenerate Q: Re Phi is bounded along ker Q");
    }
    match ratio_grid(triplet.dim(), xi_max, n_dirs, &settings.execution, |xi| Ok(symbol(triplet, xi)?.re)) {
        Ok((mags, ratios)) => {
            let mut rec = liminf_record(name, &mags, &ratios, 1e-7, settings);
            if rec.status == Status::Pass {
                let (c0, err) = (rec.evidence[0].value, rec.evidence[0].error);
                rec = rec.evidence("c0_estimate", c0, err);
            }
            rec
        }
        Err(e) => ConditionRecord::inconclusive(name, &e).param("xi_max", xi_max),
    }
}

/// Both density criteria around `z0`: integrability of `1/rho` on the ball and the shift-regularity ratio.
pub fn check_density_sufficient<F>(rho: F, dim: usize, z0: &[f64], eps: f64, settings: &CheckSettings) -> (ConditionRecord, ConditionRecord)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let inv = density_integrability(&rho, dim, z0, eps);
    let shift = density_shift_ratio(&rho, dim, z0, eps, settings);
    let tag = |r: ConditionRecord| r.param("radius", eps);
    match (inv, shift) {
        (Ok(a), Ok(b)) => (tag(a), tag(b)),
        (a, b) => (
            tag(a.unwrap_or_else(|e| ConditionRecord::inconclusive(ConditionName::DensityIntegrability, &e))),
            tag(b.unwrap_or_else(|e| ConditionRecord::inconclusive(ConditionName::DensityShift, &e))),
        ),
    }
}

/// Polar integral of `g` over the annulus `a <= |u| <= b` around `z0`.
fn annulus_integral<F: Fn(&[f64]) -> f64>(g: &F, dim: usize, z0: &[f64], a: f64, b: f64) -> Result<f64> {
    match dim {
        1 => {
            let tol = Tolerance::new(1e-13, 1e-9);
            let est = integrate(|r: f64| g(&[z0[0] + r]) + g(&[z0[0] - r]), a, b, &[], tol)?;
            Ok(est.value)
        }
        2 => {
            let (rs, rw) = composite_rule(a, b, 4, 8);
            let (ts, tw) = composite_rule(0.0, 2.0 * std::f64::consts::PI, 16, 8);
            let mut s = 0.0;
            for (r, wr) in rs.iter().zip(&rw) {
                for (t, wt) in ts.iter().zip(&tw) {
                    s += wr * wt * r * g(&[z0[0] + r * t.cos(), z0[1] + r * t.sin()]);
                }
            }
            Ok(s)
        }
        _ => Err(Error::Unsupported("density criteria are implemented for d <= 2".into())),
    }
}

fn density_integrability<F: Fn(&[f64]) -> f64>(rho: &F, dim: usize, z0: &[f64], eps: f64) -> Result<ConditionRecord> {
    use crate::levy::{RATIO_LIMIT, RATIO_WINDOW};
    let name = ConditionName::DensityIntegrability;
    if z0.len() != dim || !(eps > 0.0) {
        return Err(invalid("centre dimension or radius is wrong"));
    }
    let recip = |z: &[f64]| 1.0 / rho(z);
    // Shells shrink towards z0, where an isolated zero of rho would sit.
    let shells = 48;
    let mut vals = Vec::with_capacity(shells);
    for k in 0..shells {
        let hi = eps * 2f64.powi(-(k as i32));
        let v = annulus_integral(&recip, dim, z0, 0.5 * hi, hi);
        let v = match v {
            Ok(v) => v,
            Err(Error::Numeric { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if !v.is_finite() {
            return Ok(ConditionRecord::new(name, Status::Fail)
                .evidence("shell_outer_radius", hi, 0.0)
                .note("1/rho is not integrable on a shell (rho vanishes there)"));
        }
        vals.push(v);
    }
    let total: f64 = vals.iter().sum();
    let tail = &vals[shells - RATIO_WINDOW - 1..];
    let worst = tail.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).fold(0.0, f64::max);
    if worst > RATIO_LIMIT {
        return Ok(ConditionRecord::new(name, Status::Fail).evidence("worst_shell_ratio", worst, 0.0).note("shell contributions do not decay"));
    }
    let tail_bound = vals[shells - 1] * worst / (1.0 - worst).max(1e-12);
    Ok(ConditionRecord::new(name, Status::Pass).evidence("integral", total + tail_bound, tail_bound + 1e-9 * total))
}

fn density_shift_ratio<F: Fn(&[f64]) -> f64 + Sync>(rho: &F, dim: usize, z0: &[f64], eps: f64, settings: &CheckSettings) -> Result<ConditionRecord> {
    let l1 = |x: &[f64]| -> Result<f64> {
        let g = |z: &[f64]| {
            let zx: Vec<f64> = z.iter().zip(x).map(|(a, b)| a + b).collect();
            (rho(z) - rho(&zx)).abs()
        };
        annulus_integral(&g, dim, z0, 0.0, eps)
    };
    let mut pts = Vec::new();
    for k in 2..=10 {
        let r = 2f64.powi(-k);
        let probes = probe_points(dim, r, 2, settings.directions);
        let vals = settings.execution.map(probes.len(), |i| l1(&probes[i]));
        let mut best: f64 = 0.0;
        for v in vals {
            best = best.max(v?);
        }
        pts.push(RatioPoint { rho: r, ratio: best / r, error: 1e-8 * best / r });
    }
    Ok(ratio_record(ConditionName::DensityShift, &pts, settings))
}

/// Checks `mu <= nu` cell by cell on `mu`'s lattice and runs the TV-ratio test on `mu`.
pub fn check_minorant(nu: &LevyMeasure, mu: &GriddedMeasure, settings: &CheckSettings) -> ConditionRecord {
    let name = ConditionName::Minorant;
    let run = || -> Result<ConditionRecord> {
        if nu.dim() != mu.spec().dim() {
            return Err(invalid("minorant and measure dimensions differ"));
        }
        // A restriction of nu is smaller than nu, so dominating it is enough.
        let h = mu.spec().spacing.iter().cloned().fold(f64::INFINITY, f64::min);
        let tm = truncate(nu, 0.25 * h)?;
        let g = discretize(Source::Truncated(&tm), mu.spec(), f64::INFINITY)?;
        for (k, (m, v)) in mu.weights().iter().zip(g.weights()).enumerate() {
            let slack = 1e-9 * v + 1e-14;
            if *m > v + slack * settings.bar_inflation {
                let c = mu.spec().center(k);
                return Ok(ConditionRecord::new(name, Status::Fail)
                    .evidence("violating_cell_index", k as f64, 0.0)
                    .evidence("minorant_mass", *m, 0.0)
                    .evidence("measure_mass", *v, slack)
                    .note(format!("minorant exceeds the measure in the cell centred at {c:?}")));
            }
        }
        let pts = tv_ratio_sequence(mu, settings)?;
        let inner = ratio_record(name, &pts, settings);
        Ok(inner.evidence("minorant_mass", mu.mass(), mu.error_bar()))
    };
    run().unwrap_or_else(|e| ConditionRecord::inconclusive(name, &e))
}

/// Default moment order for the alpha-rate: `min(1, alpha0 / 2)` with `alpha0` the smallest stable index.
pub fn default_alpha(nu: &LevyMeasure) -> f64 {
    nu.stable_parts().iter().map(|(a, _)| 0.5 * a).fold(1.0, f64::min)
}

fn has_pass(records: &[ConditionRecord], name: ConditionName) -> bool {
    records.iter().any(|r| r.name == name && r.passed())
}

fn has_moment(records: &[ConditionRecord], order: f64) -> bool {
    records
        .iter()
        .any(|r| r.name == ConditionName::PowerMoment && r.passed() && r.parameters.get("order").is_some_and(|p| *p >= order - 1e-12))
}

/// Strongest classification the records support.
pub fn classify(records: Vec<ConditionRecord>, spectral: &SpectralProfile, alpha: f64) -> Result<ConditionReport> {
    let overlap = has_pass(&records, ConditionName::Overlap) || has_pass(&records, ConditionName::DensityIntegrability);
    let ratio = has_pass(&records, ConditionName::TvRatio)
        || has_pass(&records, ConditionName::Minorant)
        || has_pass(&records, ConditionName::DensityShift);
    let overlap_failed = records.iter().any(|r| r.name == ConditionName::Overlap && r.status == Status::Fail)
        && !records.iter().any(|r| r.name == ConditionName::Overlap && r.status != Status::Fail);
    if has_pass(&records, ConditionName::TvRatio) && overlap_failed {
        return Err(Error::Consistency("the TV-ratio condition passed but the overlap condition failed beyond its error bar".into()));
    }
    // A bounded TV ratio forces a positive overlap for small rho.
    let overlap = overlap || ratio;
    let spread = has_pass(&records, ConditionName::SmallJumpSpread) || has_pass(&records, ConditionName::SymbolGrowth);
    let stable = spectral.strictly_stable;
    let log = has_pass(&records, ConditionName::LogMoment);
    let first = has_moment(&records, 1.0);
    let (classification, justification) = if !stable {
        (Classification::None, "drift matrix is not strictly stable")
    } else if spread && has_moment(&records, alpha) {
        (Classification::ExpErgodicAlpha, "small-jump spread or symbol growth, alpha-moment, strictly stable drift")
    } else if ratio && first {
        (Classification::ExpErgodic, "TV-ratio (or minorant) condition, first moment, strictly stable drift")
    } else if overlap && first {
        (Classification::AlgebraicRate, "overlap condition, first moment, strictly stable drift")
    } else if overlap && log {
        (Classification::Ergodic, "overlap condition, log moment, strictly stable drift")
    } else if log {
        (Classification::InvariantMeasureExists, "log moment, strictly stable drift")
    } else {
        (Classification::None, "log moment not established")
    };
    Ok(ConditionReport {
        records,
        classification,
        justification: justification.to_string(),
        alpha,
        strictly_stable: spectral.strictly_stable,
        weakly_stable_semisimple: spectral.weakly_stable_semisimple,
    })
}

/// Runs every applicable checker and classifies.
///
/// The overlap and TV-ratio checks of an infinite measure are tried at `settings.epsilon` and every
/// level of the sweep; the best status is kept (ties favour the configured level).
pub fn check_model(triplet: &LevyTriplet, spectral: &SpectralProfile, settings: &CheckSettings) -> Result<ConditionReport> {
    let nu = triplet.nu();
    let alpha = settings.alpha.unwrap_or_else(|| default_alpha(nu));
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let mut records = vec![check_log_moment(nu), check_power_moment(nu, 1.0)];
    if alpha < 1.0 {
        records.push(check_power_moment(nu, alpha));
    }
    if nu.is_zero() {
        records.push(ConditionRecord::new(ConditionName::Overlap, Status::Fail).note("no jumps"));
        records.push(ConditionRecord::new(ConditionName::TvRatio, Status::Fail).note("no jumps"));
    } else {
        let mut levels = vec![settings.epsilon];
        if !nu.is_finite() {
            levels.extend(settings.epsilon_sweep.iter().filter(|e| **e != settings.epsilon));
        }
        let best = |f: &dyn Fn(f64) -> ConditionRecord| {
            let mut out: Option<ConditionRecord> = None;
            for &eps in &levels {
                let r = f(eps);
                if out.as_ref().is_none_or(|o| r.status.rank() > o.status.rank()) {
                    out = Some(r);
                }
                if out.as_ref().is_some_and(|o| o.passed()) {
                    break;
                }
            }
            out.expect("at least one level")
        };
        records.push(best(&|eps| check_overlap_condition(nu, eps, settings.rho, settings)));
        records.push(best(&|eps| check_tv_ratio_condition(nu, eps, settings)));
    }
    records.push(check_small_jump_spread(nu, settings.xi_max, settings.directions, settings));
    records.push(check_symbol_growth(triplet, settings.xi_max, settings.directions, settings));
    classify(records, spectral, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{spectral_profile, SquareMatrix};

    fn stable_a() -> SpectralProfile {
        spectral_profile(&SquareMatrix::scalar(-1.0).unwrap()).unwrap()
    }

    #[test]
    fn decide_ratio_rules() {
        let p = |r: f64| RatioPoint { rho: 0.0, ratio: r, error: 0.0 };
        assert_eq!(decide_ratio(&[p(1.0), p(1.0), p(1.0), p(1.0)], 1.0), Status::Pass);
        assert_eq!(decide_ratio(&[p(1.0), p(2.0), p(4.0), p(8.0)], 1.0), Status::Fail);
        assert_eq!(decide_ratio(&[p(1.0), p(1.0), p(1.0)], 1.0), Status::Inconclusive);
        let q = |r: f64| RatioPoint { rho: 0.0, ratio: r, error: 0.2 };
        assert_eq!(decide_ratio(&[q(1.0), q(1.0), q(1.0), q(1.2)], 1.0), Status::Inconclusive);
    }

    #[test]
    fn magnitudes_cover_two_decades() {
        let m = xi_magnitudes(1e4);
        assert_eq!(m.len(), 13);
        assert!((m[12] - 1e4).abs() < 1e-6);
    }

    #[test]
    fn zero_measure_classifies_by_log_moment_only() {
        let t = LevyTriplet::pure_jump(LevyMeasure::zero(1).unwrap());
        let r = check_model(&t, &stable_a(), &CheckSettings::default()).unwrap();
        assert_eq!(r.classification, Classification::InvariantMeasureExists);
    }

    #[test]
    fn unstable_drift_gives_none() {
        let t = LevyTriplet::pure_jump(LevyMeasure::stable(1, 1.0, 1.0).unwrap());
        let sp = spectral_profile(&SquareMatrix::scalar(0.5).unwrap()).unwrap();
        let r = classify(vec![check_log_moment(t.nu())], &sp, 0.5).unwrap();
        assert_eq!(r.classification, Classification::None);
    }

    #[test]
    fn inconsistent_records_are_rejected() {
        let recs = vec![
            ConditionRecord::new(ConditionName::TvRatio, Status::Pass),
            ConditionRecord::new(ConditionName::Overlap, Status::Fail),
        ];
        assert!(matches!(classify(recs, &stable_a(), 1.0), Err(Error::Consistency(_))));
    }

    #[test]
    fn report_round_trips_through_json() {
        let recs = vec![check_log_moment(&LevyMeasure::single_atom(vec![2.0], 1.0).unwrap())];
        let r = classify(recs, &stable_a(), 1.0).unwrap();
        let back: ConditionReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_json().unwrap().contains("\"invariant-measure-exists\""));
    }
}

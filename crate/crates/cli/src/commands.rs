//! The six commands. Each returns its exit code; output goes to files or stdout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use levy_ou::conditions::{check_model, default_alpha, Classification, ConditionReport};
use levy_ou::lab::{
    fit_decay, full_report, tv_decay_two_points, tv_decay_vs_invariant, write_decay_csv, DecayTable, FullReport, Method, RateFamily,
    RateFit, ReportParams,
};
use levy_ou::ou::{coupling_frequency, sample_invariant_many, simulate_many, CouplingStats, OUModel};
use levy_ou::rng::{Execution, RandomStream, CHUNK};
use levy_ou::spectral::stationary_density;
use levy_ou::stats::{ks_pvalue, ks_statistic};

use crate::config::{ModelConfig, SCHEMA};
use crate::{emit, CliError, Provenance, EXIT_CONDITIONS};

type Result<T> = std::result::Result<T, CliError>;

// Stream tags, one per command that draws random numbers.
const TAG_SIMULATE: u64 = 11;
const TAG_COUPLING: u64 = 12;
const TAG_INVARIANT: u64 = 13;

/// Seeding and worker metadata written next to every random output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema: String,
    pub seed: u64,
    /// 0 means one worker per core.
    pub workers: usize,
    pub streams: String,
}

/// A parsed config plus the run-wide seed and execution policy.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: ModelConfig,
    pub model: OUModel,
    pub seed: u64,
    pub workers: usize,
    pub execution: Execution,
}

impl Session {
    pub fn open(path: &Path, seed: Option<u64>, workers: Option<usize>) -> Result<Self> {
        Self::new(ModelConfig::read(path)?, seed, workers)
    }

    pub fn new(config: ModelConfig, seed: Option<u64>, workers: Option<usize>) -> Result<Self> {
        let model = config.model()?;
        let seed = seed.unwrap_or(config.defaults.seed);
        let workers = workers.or(config.defaults.workers).unwrap_or(0);
        let execution = if workers == 1 { Execution::sequential() } else { Execution { workers, ..Execution::default() } };
        Ok(Session { config, model, seed, workers, execution })
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            schema: SCHEMA.into(),
            seed: self.seed,
            workers: self.workers,
            streams: format!(
                "counter split of the master seed: experiment tag, then row, then chunk of {CHUNK} samples; \
                 results do not depend on the worker count"
            ),
        }
    }

    fn stream(&self, tag: u64) -> RandomStream {
        RandomStream::new(self.seed).split(tag)
    }
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(format!("serialization: {e}")))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn point(given: Option<Vec<f64>>, fallback: Vec<f64>, d: usize, name: &str) -> Result<Vec<f64>> {
    let v = given.unwrap_or(fallback);
    if v.len() != d {
        return Err(CliError::Usage(format!("--{name} needs {d} comma-separated values, got {}", v.len())));
    }
    Ok(v)
}

fn samples_csv(rows: &[Vec<f64>], d: usize) -> String {
    let mut out = (1..=d).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn cmd_check(s: &Session, out: Option<&Path>) -> Result<i32> {
    let report: ConditionReport = check_model(s.model.triplet(), s.model.spectral(), &s.config.check_settings(s.execution)).within("conditions")?;
    emit(out, &json(&report)?)?;
    Ok(if report.classification == Classification::None { EXIT_CONDITIONS } else { 0 })
}

pub fn cmd_simulate(s: &Session, x: Option<Vec<f64>>, t: f64, n: Option<usize>, out: Option<&Path>) -> Result<i32> {
    let d = s.model.dim();
    let x = point(x, s.config.x(), d, "x")?;
    let n = n.unwrap_or(s.config.defaults.n);
    let rows = simulate_many(&s.model, &x, t, s.config.scheme(), n, &s.stream(TAG_SIMULATE), &s.execution).within("ou")?;
    emit(out, samples_csv(&rows, d).as_bytes())?;
    Ok(0)
}

#[derive(Debug, Clone)]
pub struct TvDecayArgs {
    pub x: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub vs_invariant: bool,
    pub method: Method,
    pub t_grid: Option<Vec<f64>>,
    pub family: Option<RateFamily>,
    pub out: Option<PathBuf>,
    pub fit_out: Option<PathBuf>,
}

/// JSON companion of a decay CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvDecayOutput {
    pub run: RunMeta,
    pub table: DecayTable,
    pub fit: Option<RateFit>,
    /// Why no fit is reported.
    pub skipped: Option<String>,
}

pub fn cmd_tv_decay(s: &Session, args: TvDecayArgs) -> Result<i32> {
    let d = s.model.dim();
    let x = point(args.x, s.config.x(), d, "x")?;
    let grid = args.t_grid.unwrap_or_else(|| s.config.defaults.t_grid.clone());
    let settings = s.config.experiment(s.seed, s.execution);
    let table = if args.vs_invariant {
        tv_decay_vs_invariant(&s.model, &x, &grid, args.method, &settings)
    } else {
        let y = point(args.y, s.config.y(), d, "y")?;
        tv_decay_two_points(&s.model, &x, &y, &grid, args.method, &settings)
    }
    .within("lab")?;
    let family = args.family.unwrap_or(RateFamily::Exponential);
    let (fit, skipped) = if table.rows.iter().all(|r| r.tv == 0.0) {
        (None, Some("every row is zero: the two laws coincide".to_string()))
    } else {
        match fit_decay(&table, family) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let mut csv = Vec::new();
    write_decay_csv(std::slice::from_ref(&table), &mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    emit(args.out.as_deref(), &csv)?;
    let fit_path = args.fit_out.or_else(|| args.out.as_ref().map(|p| p.with_extension("fit.json")));
    let output = TvDecayOutput { run: s.meta(), table, fit, skipped };
    match fit_path {
        Some(p) => emit(Some(&p), &json(&output)?)?,
        None => match (&output.fit, &output.skipped) {
            (Some(f), _) => eprintln!("fit: rate {} in [{}, {}], R^2 {}", f.rate, f.ci[0], f.ci[1], f.r_squared),
            (None, Some(why)) => eprintln!("fit skipped: {why}"),
            _ => {}
        },
    }
    Ok(0)
}

/// Parses a family name; `alpha` defaults to the measure's.
pub fn family(name: &str, alpha: Option<f64>, s: &Session) -> Result<RateFamily> {
    match name {
        "exponential" => Ok(RateFamily::Exponential),
        "algebraic" => Ok(RateFamily::Algebraic),
        "alpha-exponential" => Ok(RateFamily::AlphaExponential {
            alpha: alpha.or(s.config.defaults.alpha).unwrap_or_else(|| default_alpha(&s.model.triplet().nu())),
        }),
        other => Err(CliError::Usage(format!("unknown rate family {other:?}"))),
    }
}

#[derive(Debug, Clone)]
pub struct CouplingArgs {
    pub x: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub t_grid: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn coupling_csv(rows: &[CouplingStats]) -> String {
    let mut out = String::from("t,n,coupled,no_jump,tv_bound,tv_bound_se,p_no_jump,p_no_jump_se,rate\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.t, r.n, r.coupled, r.no_jump, r.tv_bound, r.tv_bound_se, r.p_no_jump, r.p_no_jump_se, r.rate
        );
    }
    out
}

pub fn cmd_coupling(s: &Session, args: CouplingArgs) -> Result<i32> {
    let d = s.model.dim();
    let x = point(args.x, s.config.x(), d, "x")?;
    let y = point(args.y, s.config.y(), d, "y")?;
    let eps = args.epsilon.unwrap_or(s.config.defaults.epsilon);
    let n = args.n.unwrap_or(s.config.defaults.n);
    let grid = args.t_grid.unwrap_or_else(|| s.config.defaults.t_grid.clone());
    let stream = s.stream(TAG_COUPLING);
    let rows = grid
        .iter()
        .enumerate()
        .map(|(i, &t)| coupling_frequency(&s.model, &x, &y, eps, t, n, &stream.split(i as u64), &s.execution))
        .collect::<levy_ou::Result<Vec<_>>>()
        .within("ou")?;
    emit(args.out.as_deref(), coupling_csv(&rows).as_bytes())?;
    Ok(0)
}

/// JSON companion of an invariant sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantOutput {
    pub run: RunMeta,
    pub n: usize,
    /// Truncation horizon of the stationary integral.
    pub horizon: f64,
    /// Kolmogorov-Smirnov distance to the Fourier-inverted stationary law.
    pub ks: Option<f64>,
    pub p_value: Option<f64>,
    pub skipped: Option<String>,
}

pub fn cmd_invariant(s: &Session, n: Option<usize>, out: Option<&Path>, ks_out: Option<&Path>) -> Result<i32> {
    let d = s.model.dim();
    let n = n.unwrap_or(s.config.defaults.n);
    let (rows, horizon) =
        sample_invariant_many(&s.model, s.config.scheme(), s.config.defaults.tail_tol, n, &s.stream(TAG_INVARIANT), &s.execution).within("ou")?;
    emit(out, samples_csv(&rows, d).as_bytes())?;
    let mut result = InvariantOutput { run: s.meta(), n, horizon, ks: None, p_value: None, skipped: None };
    if d != 1 {
        result.skipped = Some("the KS comparison needs a one-dimensional model".into());
    } else {
        let settings = s.config.experiment(s.seed, s.execution).oracle;
        match stationary_density(&s.model, None, &settings).and_then(|dens| {
            let cdf = dens.cdf_fn()?;
            let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
            Ok(ks_statistic(&xs, cdf))
        }) {
            Ok(ks) => {
                result.ks = Some(ks);
                result.p_value = Some(ks_pvalue(ks, n));
            }
            Err(e) => result.skipped = Some(format!("spectral: {e}")),
        }
    }
    let path = ks_out.map(Path::to_path_buf).or_else(|| out.map(|p| p.with_extension("ks.json")));
    match path {
        Some(p) => emit(Some(&p), &json(&result)?)?,
        None => match result.ks {
            Some(ks) => eprintln!("KS distance to the stationary law: {ks}"),
            None => eprintln!("KS skipped: {}", result.skipped.as_deref().unwrap_or("")),
        },
    }
    Ok(0)
}

/// Everything `report` writes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub run: RunMeta,
    pub report: FullReport,
}

pub fn report_params(s: &Session) -> ReportParams {
    ReportParams {
        x: Some(s.config.x()),
        y: Some(s.config.y()),
        checks: s.config.check_settings(s.execution),
        experiment: s.config.experiment(s.seed, s.execution),
        ..ReportParams::default()
    }
}

/// Writes `report.json`, `conditions.json` and `decay.csv` into `out_dir`.
pub fn cmd_report(s: &Session, out_dir: &Path) -> Result<i32> {
    let report = full_report(&s.model, &report_params(s));
    let mut csv = Vec::new();
    write_decay_csv(&report.tables, &mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    emit(Some(&out_dir.join("decay.csv")), &csv)?;
    if let Some(c) = &report.conditions {
        emit(Some(&out_dir.join("conditions.json")), &json(c)?)?;
    }
    let code = match &report.conditions {
        None => crate::EXIT_ERROR,
        Some(c) if c.classification == Classification::None => EXIT_CONDITIONS,
        Some(_) if report.agreement == Some(false) => EXIT_CONDITIONS,
        Some(_) => 0,
    };
    for e in &report.errors {
        eprintln!("report: {e}");
    }
    emit(Some(&out_dir.join("report.json")), &json(&ReportBundle { run: s.meta(), report })?)?;
    Ok(code)
}

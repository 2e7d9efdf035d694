//! Model configuration documents.

use serde::{Deserialize, Serialize};

use levy_ou::conditions::CheckSettings;
use levy_ou::lab::ExperimentSettings;
use levy_ou::levy::{stable_symbol_constant, Atom, LevyMeasure, LevyTriplet, SmallJumpScheme};
use levy_ou::matrix::SquareMatrix;
use levy_ou::ou::OUModel;
use levy_ou::rng::Execution;

use crate::CliError;

/// Accepted value of the `schema` field.
pub const SCHEMA: &str = "levy-ou/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema: String,
    pub dimension: usize,
    /// Drift matrix, row-major.
    pub a: Vec<f64>,
    /// Gaussian covariance, row-major; zero when absent.
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    /// Drift of the driving process; zero when absent.
    #[serde(default)]
    pub b: Option<Vec<f64>>,
    pub levy: LevyConfig,
    #[serde(default)]
    pub defaults: Defaults,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub location: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LevyConfig {
    Zero,
    Atoms {
        atoms: Vec<AtomConfig>,
    },
    Gaussian {
        mass: f64,
        mean: Vec<f64>,
        std: f64,
    },
    Uniform {
        mass: f64,
        center: Vec<f64>,
        radius: f64,
    },
    /// Isotropic stable measure. Give either the density `scale` (`scale |z|^{-d-index}`) or the
    /// `symbol_scale` `s` with `Re Phi(xi) = s |xi|^index`.
    Stable {
        index: f64,
        #[serde(default)]
        scale: Option<f64>,
        #[serde(default)]
        symbol_scale: Option<f64>,
    },
    LogTail {
        scale: f64,
    },
    LogSingular {
        scale: f64,
    },
    Sum {
        parts: Vec<LevyConfig>,
    },
}

/// Run defaults; command-line flags override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    /// Starting point; `2 e_1` when absent.
    pub x: Option<Vec<f64>>,
    /// Second starting point; the origin when absent.
    pub y: Option<Vec<f64>>,
    /// Truncation level for the checks and the coupling.
    pub epsilon: f64,
    pub rho: f64,
    /// Moment order of the alpha-rate; picked from the measure when absent.
    pub alpha: Option<f64>,
    pub xi_max: f64,
    /// Times for `tv-decay` and `coupling`.
    pub t_grid: Vec<f64>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub n: usize,
    /// Tail tolerance of the invariant sampler.
    pub tail_tol: f64,
    /// Refinement target of the Fourier oracle.
    pub oracle_target: f64,
    /// Truncation level of plain simulation; smaller jumps become a Gaussian.
    pub small_jump_epsilon: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            x: None,
            y: None,
            epsilon: 1.0,
            rho: 0.5,
            alpha: None,
            xi_max: 1e4,
            t_grid: (1..=8).map(f64::from).collect(),
            seed: 1,
            workers: None,
            n: 20_000,
            tail_tol: 1e-6,
            oracle_target: 1e-6,
            small_jump_epsilon: 0.01,
        }
    }
}

fn field(path: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{path}`: {e}"))
}

impl ModelConfig {
    /// Parses a JSON document; errors name the offending field and position.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ModelConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::Config(format!("field `{path}`: {inner}"))
        })?;
        if cfg.schema != SCHEMA {
            return Err(field("schema", format!("expected \"{SCHEMA}\", got \"{}\"", cfg.schema)));
        }
        cfg.model()?;
        Ok(cfg)
    }

    pub fn read(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn model(&self) -> Result<OUModel, CliError> {
        let d = self.dimension;
        let a = SquareMatrix::from_row_major(d, &self.a).map_err(|e| field("a", e))?;
        let q = match &self.q {
            Some(q) => SquareMatrix::from_row_major(d, q).map_err(|e| field("q", e))?,
            None => SquareMatrix::zeros(d),
        };
        let b = self.b.clone().unwrap_or_else(|| vec![0.0; d]);
        let nu = levy_measure(&self.levy, d, "levy")?;
        let triplet = LevyTriplet::new(q, b, nu).map_err(|e| field("q/b/levy", e))?;
        OUModel::new(a, triplet).map_err(|e| field("a", e))
    }

    pub fn x(&self) -> Vec<f64> {
        self.defaults.x.clone().unwrap_or_else(|| {
            let mut v = vec![0.0; self.dimension];
            v[0] = 2.0;
            v
        })
    }

    pub fn y(&self) -> Vec<f64> {
        self.defaults.y.clone().unwrap_or_else(|| vec![0.0; self.dimension])
    }

    pub fn scheme(&self) -> SmallJumpScheme {
        SmallJumpScheme { epsilon: self.defaults.small_jump_epsilon, ..SmallJumpScheme::default() }
    }

    pub fn check_settings(&self, exec: Execution) -> CheckSettings {
        let d = &self.defaults;
        CheckSettings { epsilon: d.epsilon, rho: d.rho, alpha: d.alpha, xi_max: d.xi_max, execution: exec, ..CheckSettings::default() }
    }

    pub fn experiment(&self, seed: u64, exec: Execution) -> ExperimentSettings {
        let d = &self.defaults;
        let mut s = ExperimentSettings {
            n: d.n,
            seed,
            epsilon: d.epsilon,
            scheme: self.scheme(),
            invariant_tol: d.tail_tol,
            execution: exec,
            ..ExperimentSettings::default()
        };
        s.oracle.target = d.oracle_target;
        s.oracle.execution = exec;
        s
    }
}

fn levy_measure(cfg: &LevyConfig, d: usize, path: &str) -> Result<LevyMeasure, CliError> {
    let built = match cfg {
        LevyConfig::Zero => LevyMeasure::zero(d),
        LevyConfig::Atoms { atoms } => LevyMeasure::atoms(d, atoms.iter().map(|a| Atom::new(a.location.clone(), a.mass)).collect()),
        LevyConfig::Gaussian { mass, mean, std } => LevyMeasure::gaussian(*mass, mean.clone(), *std),
        LevyConfig::Uniform { mass, center, radius } => LevyMeasure::uniform(*mass, center.clone(), *radius),
        LevyConfig::Stable { index, scale, symbol_scale } => match (scale, symbol_scale) {
            (Some(c), None) => LevyMeasure::stable(d, *index, *c),
            (None, Some(s)) if *index > 0.0 && *index < 2.0 => LevyMeasure::stable(d, *index, s / stable_symbol_constant(d, *index)),
            (None, Some(_)) => LevyMeasure::stable(d, *index, 1.0),
            _ => return Err(field(path, "give exactly one of `scale` and `symbol_scale`")),
        },
        LevyConfig::LogTail { scale } => LevyMeasure::log_tail(d, *scale),
        LevyConfig::LogSingular { scale } => LevyMeasure::log_singular(d, *scale),
        LevyConfig::Sum { parts } => {
            let parts = parts
                .iter()
                .enumerate()
                .map(|(i, p)| levy_measure(p, d, &format!("{path}.parts[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            LevyMeasure::sum(parts)
        }
    };
    let nu = built.map_err(|e| field(path, e))?;
    if nu.dim() != d {
        return Err(field(path, format!("measure lives in dimension {}, model in {d}", nu.dim())));
    }
    Ok(nu)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAUCHY: &str = r#"{"schema": "levy-ou/1", "dimension": 1, "a": [-1.0],
        "levy": {"kind": "stable", "index": 1.0, "symbol_scale": 1.0}}"#;

    #[test]
    fn minimal_config_parses() {
        let c = ModelConfig::parse(CAUCHY).unwrap();
        assert_eq!(c.defaults, Defaults::default());
        assert_eq!(c.x(), vec![2.0]);
        assert_eq!(c.model().unwrap().dim(), 1);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = CAUCHY.replace("\"index\": 1.0", "\"index\": \"one\"");
        let e = ModelConfig::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("levy") && e.contains("line"), "{e}");
        let e = ModelConfig::parse(&CAUCHY.replace("levy-ou/1", "levy-ou/0")).unwrap_err().to_string();
        assert!(e.contains("`schema`"), "{e}");
        let e = ModelConfig::parse(&CAUCHY.replace("1.0, \"symbol", "2.5, \"symbol")).unwrap_err().to_string();
        assert!(e.contains("`levy`"), "{e}");
        let e = ModelConfig::parse(&CAUCHY.replace("[-1.0]", "[-1.0, 0.0]")).unwrap_err().to_string();
        assert!(e.contains("`a`"), "{e}");
        let e = ModelConfig::parse(&CAUCHY.replace("\"a\"", "\"typo\": 1, \"a\"")).unwrap_err().to_string();
        assert!(e.contains("typo"), "{e}");
    }

    #[test]
    fn nested_sum_paths() {
        let text = r#"{"schema": "levy-ou/1", "dimension": 1, "a": [-1.0],
            "levy": {"kind": "sum", "parts": [{"kind": "zero"}, {"kind": "gaussian", "mass": -1.0, "mean": [0.0], "std": 1.0}]}}"#;
        let e = ModelConfig::parse(text).unwrap_err().to_string();
        assert!(e.contains("levy.parts[1]"), "{e}");
    }

    #[test]
    fn config_round_trips() {
        let c = ModelConfig::parse(CAUCHY).unwrap();
        let again = ModelConfig::parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }
}

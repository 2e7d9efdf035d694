use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::measure::{LevyMeasure, Region, Shape};
use super::symbol::{stable_symbol_constant, LevyTriplet};
use super::truncate::{truncate, TruncatedMeasure};
use crate::error::{invalid, Error, Result};
use crate::matrix::psd_sqrt;
use crate::quad::Tolerance;
use crate::rng::RandomStream;
use crate::vecops::{axpy, dot};

/// Expected jumps per unit time above which a scheme is rejected.
pub const MAX_JUMP_RATE: f64 = 1e6;

/// How jumps below the truncation level are treated when they cannot be sampled exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallJumpScheme {
    pub epsilon: f64,
    /// Replace the discarded jumps by a Gaussian with covariance `int_{|z|<eps} z z^T nu(dz)`.
    pub gaussian_fill: bool,
    /// Sample isotropic stable components exactly instead of truncating them.
    pub exact_stable: bool,
}

impl Default for SmallJumpScheme {
    fn default() -> Self {
        SmallJumpScheme { epsilon: 0.01, gaussian_fill: true, exact_stable: true }
    }
}

/// Symmetric stable variable with `E exp(i xi S) = exp(-|xi|^a)`.
pub fn symmetric_stable(index: f64, rng: &mut RandomStream) -> f64 {
    let v = PI * (rng.open01() - 0.5);
    let w = -rng.open01().ln();
    if (index - 1.0).abs() < 1e-15 {
        return v.tan();
    }
    (index * v).sin() / v.cos().powf(1.0 / index) * (((1.0 - index) * v).cos() / w).powf((1.0 - index) / index)
}

/// Positive stable variable with `E exp(-s W) = exp(-s^b)`, `0 < b < 1`.
pub fn positive_stable(b: f64, rng: &mut RandomStream) -> f64 {
    let u = PI * rng.open01();
    let e = -rng.open01().ln();
    ((b * u).sin() / u.sin().powf(1.0 / b)) * (((1.0 - b) * u).sin() / e).powf((1.0 - b) / b)
}

/// Isotropic stable vector with characteristic function `exp(-|xi|^a)`.
///
/// One dimension uses the trigonometric transform directly; higher dimensions mix a Gaussian
/// `N(0, 2I)` with an independent positive `a/2`-stable variance.
pub fn isotropic_stable(dim: usize, index: f64, rng: &mut RandomStream) -> Vec<f64> {
    if dim == 1 {
        return vec![symmetric_stable(index, rng)];
    }
    let w = positive_stable(index / 2.0, rng).sqrt() * 2f64.sqrt();
    (0..dim).map(|_| w * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Decomposition of a triplet into independently sampled pieces.
#[derive(Debug, Clone)]
pub struct DrivingPlan {
    /// Drift of the sampled pieces, compensators included.
    pub drift: Vec<f64>,
    /// `Q` plus the small-jump fill.
    pub covariance: DMatrix<f64>,
    /// Stable components sampled exactly, as `(index, kappa)` with `Re Phi = kappa |xi|^index`.
    pub stable: Vec<(f64, f64)>,
    /// The compound-Poisson part.
    pub jumps: Option<TruncatedMeasure>,
    pub scheme: SmallJumpScheme,
}

impl DrivingPlan {
    /// `exact_stable_allowed` is false when stable parts cannot be propagated exactly (e.g. a general drift matrix).
    pub fn new(triplet: &LevyTriplet, scheme: SmallJumpScheme, exact_stable_allowed: bool) -> Result<Self> {
        if !(scheme.epsilon > 0.0 && scheme.epsilon.is_finite()) {
            return Err(Error::Config(format!("scheme epsilon must be positive, got {}", scheme.epsilon)));
        }
        let d = triplet.dim();
        let exact = scheme.exact_stable && exact_stable_allowed;
        let mut stable = Vec::new();
        let mut rest = Vec::new();
        for leaf in triplet.nu().leaves() {
            match leaf {
                LevyMeasure::Stable { index, scale, .. } if exact => {
                    stable.push((*index, scale * stable_symbol_constant(d, *index)));
                }
                other => rest.push(other.clone()),
            }
        }
        let mut drift = triplet.b().to_vec();
        let mut covariance = triplet.q().matrix().clone();
        let jumps = if rest.is_empty() {
            None
        } else {
            let rest = LevyMeasure::sum(rest)?;
            let tm = truncate(&rest, scheme.epsilon)?;
            let cut = tm.cutoff();
            let tol = Tolerance::default();
            // Compensator of the jumps we actually sample: those in [cut, 1).
            if !rest.is_isotropic() {
                for i in 0..d {
                    let m = rest.integrate(Region::new(cut, 1.0, false), Shape::General, &[1.0], &|z: &[f64]| z[i], tol)?;
                    drift[i] -= m.value;
                }
            }
            if cut > 0.0 && scheme.gaussian_fill {
                covariance += small_jump_covariance(&rest, cut)?;
            }
            if tm.total_mass() > MAX_JUMP_RATE {
                return Err(Error::Config(format!(
                    "truncation at {} leaves {:e} jumps per unit time; raise epsilon or sample stable parts exactly",
                    scheme.epsilon,
                    tm.total_mass()
                )));
            }
            if tm.is_empty() {
                None
            } else {
                Some(tm)
            }
        };
        Ok(DrivingPlan { drift, covariance, stable, jumps, scheme })
    }

    pub fn jump_rate(&self) -> f64 {
        self.jumps.as_ref().map_or(0.0, |j| j.total_mass())
    }
}

/// `int_{|z|<r} z z^T nu(dz)`.
pub fn small_jump_covariance(nu: &LevyMeasure, r: f64) -> Result<DMatrix<f64>> {
    let d = nu.dim();
    let tol = Tolerance::default();
    let region = Region::new(0.0, r, false);
    if nu.is_isotropic() {
        let s = nu.integrate(region, Shape::Radial, &[], &|z: &[f64]| dot(z, z), tol)?.value;
        return Ok(DMatrix::identity(d, d) * (s / d as f64));
    }
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = nu.integrate(region, Shape::General, &[], &|z: &[f64]| z[i] * z[j], tol)?.value;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Repeated draws of `Z_{t+h} - Z_t` under a fixed scheme.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    plan: DrivingPlan,
    h: f64,
    chol: DMatrix<f64>,
    poisson: Option<Poisson<f64>>,
}

/// One increment and the number of compound-Poisson jumps it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub value: Vec<f64>,
    pub jumps: u64,
}

impl IncrementSampler {
    pub fn new(triplet: &LevyTriplet, h: f64, scheme: SmallJumpScheme) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("increment length must be positive, got {h}")));
        }
        let plan = DrivingPlan::new(triplet, scheme, true)?;
        let chol = psd_sqrt(&(plan.covariance.clone() * h));
        let rate = plan.jump_rate() * h;
        let poisson = if rate > 0.0 {
            Some(Poisson::new(rate).map_err(|e| Error::Config(format!("Poisson rate {rate}: {e}")))?)
        } else {
            None
        };
        Ok(IncrementSampler { plan, h, chol, poisson })
    }

    pub fn plan(&self) -> &DrivingPlan {
        &self.plan
    }

    pub fn draw(&self, rng: &mut RandomStream) -> Result<Increment> {
        let d = self.plan.drift.len();
        let mut x: Vec<f64> = self.plan.drift.iter().map(|b| b * self.h).collect();
        if self.chol.iter().any(|v| *v != 0.0) {
            let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            for i in 0..d {
                x[i] += (0..d).map(|j| self.chol[(i, j)] * g[j]).sum::<f64>();
            }
        }
        for &(index, kappa) in &self.plan.stable {
            let s = isotropic_stable(d, index, rng);
            axpy(&mut x, (kappa * self.h).powf(1.0 / index), &s);
        }
        let mut jumps = 0;
        if let (Some(pois), Some(tm)) = (&self.poisson, &self.plan.jumps) {
            jumps = pois.sample(rng) as u64;
            for _ in 0..jumps {
                axpy(&mut x, 1.0, &tm.sample(rng)?.z);
            }
        }
        Ok(Increment { value: x, jumps })
    }
}

/// One draw of `Z_{t+h} - Z_t`.
pub fn sample_increment(triplet: &LevyTriplet, h: f64, scheme: SmallJumpScheme, rng: &mut RandomStream) -> Result<Vec<f64>> {
    Ok(IncrementSampler::new(triplet, h, scheme)?.draw(rng)?.value)
}

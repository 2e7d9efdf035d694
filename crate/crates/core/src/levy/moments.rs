use serde::{Deserialize, Serialize};

use super::measure::{DensityKind, LevyMeasure, Region, Shape};
use crate::error::{invalid, Result};
use crate::quad::{integrate_to_infinity, Tolerance};
use crate::vecops::{norm, sphere_area};

/// Integrand of a moment condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "order", rename_all = "snake_case")]
pub enum MomentKind {
    /// `int_{|z|>=1} log(1 + |z|) nu(dz)`.
    Log1p,
    /// `int_{|z|>=1} |z|^p nu(dz)`, `p` in (0, 1].
    Power(f64),
    /// `int_{0<|z|<1} |z|^2 nu(dz)`.
    SquareSmall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum MomentValue {
    Finite(f64),
    Divergent,
}

impl MomentValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, MomentValue::Finite(_))
    }
}

/// Dyadic shells examined by the divergence test.
pub const SHELLS: usize = 96;
/// Shell ratios above this over the last [`RATIO_WINDOW`] shells mean divergence.
pub const RATIO_LIMIT: f64 = 0.985;
pub const RATIO_WINDOW: usize = 8;

fn weight(kind: MomentKind, r: f64) -> f64 {
    match kind {
        MomentKind::Log1p => r.ln_1p(),
        MomentKind::Power(p) => r.powf(p),
        MomentKind::SquareSmall => r * r,
    }
}

pub fn moment_integral(nu: &LevyMeasure, kind: MomentKind) -> Result<MomentValue> {
    if let MomentKind::Power(p) = kind {
        if !(p > 0.0 && p <= 1.0) {
            return Err(invalid(format!("power moment order must lie in (0, 1], got {p}")));
        }
    }
    let mut total = 0.0;
    for leaf in nu.leaves() {
        match leaf_moment(leaf, kind)? {
            MomentValue::Finite(v) => total += v,
            MomentValue::Divergent => return Ok(MomentValue::Divergent),
        }
    }
    Ok(MomentValue::Finite(total))
}

fn leaf_moment(leaf: &LevyMeasure, kind: MomentKind) -> Result<MomentValue> {
    let d = leaf.dim();
    let tol = Tolerance::default();
    let f = |z: &[f64]| weight(kind, norm(z));
    match leaf {
        LevyMeasure::Stable { index, scale, .. } => {
            let s = scale * sphere_area(d);
            Ok(match kind {
                MomentKind::SquareSmall => MomentValue::Finite(s / (2.0 - index)),
                MomentKind::Power(p) if p < *index => MomentValue::Finite(s / (index - p)),
                MomentKind::Power(_) => MomentValue::Divergent,
                MomentKind::Log1p => {
                    let a = *index;
                    let v = integrate_to_infinity(|r: f64| r.ln_1p() * r.powf(-1.0 - a), 1.0, tol)?;
                    MomentValue::Finite(s * v.value)
                }
            })
        }
        LevyMeasure::Density { kind: DensityKind::Custom(c), .. } if c.r_max.is_infinite() && kind != MomentKind::SquareSmall => {
            shell_test(leaf, kind)
        }
        LevyMeasure::Density { kind: DensityKind::LogTail { .. }, .. } if kind != MomentKind::SquareSmall => shell_test(leaf, kind),
        _ => {
            let region = match kind {
                MomentKind::SquareSmall => Region::new(0.0, 1.0, false),
                _ => Region::new(1.0, f64::INFINITY, true),
            };
            Ok(MomentValue::Finite(leaf.integrate(region, Shape::Radial, &[], &f, tol)?.value))
        }
    }
}

/// Sums the moment over the shells `[2^k, 2^{k+1})` and applies the ratio test.
fn shell_test(leaf: &LevyMeasure, kind: MomentKind) -> Result<MomentValue> {
    let tol = Tolerance::new(1e-14, 1e-10);
    let f = |z: &[f64]| weight(kind, norm(z));
    let mut shells = Vec::with_capacity(SHELLS);
    for k in 0..SHELLS {
        let lo = 2f64.powi(k as i32);
        let v = leaf.integrate(Region::new(lo, 2.0 * lo, false), Shape::Radial, &[], &f, tol)?.value;
        shells.push(v);
    }
    let total: f64 = shells.iter().sum();
    let tail = &shells[SHELLS - RATIO_WINDOW - 1..];
    if tail.iter().all(|v| *v == 0.0) {
        return Ok(MomentValue::Finite(total));
    }
    let worst = tail
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::INFINITY })
        .fold(0.0, f64::max);
    if worst > RATIO_LIMIT {
        return Ok(MomentValue::Divergent);
    }
    let last = shells[SHELLS - 1];
    Ok(MomentValue::Finite(total + last * worst / (1.0 - worst)))
}

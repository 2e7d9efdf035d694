use std::f64::consts::E;

use rand::Rng;
use rand_distr::StandardNormal;

use super::measure::{DensityKind, LevyMeasure};
use crate::error::{invalid, Error, Result};
use crate::rng::RandomStream;
use crate::vecops::{add, norm, sub};

/// Rejection samplers give up below this acceptance rate.
const MIN_ACCEPTANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
struct Part {
    leaf: LevyMeasure,
    mass: f64,
    /// Envelope for rejection sampling of custom densities.
    bound: f64,
}

/// `nu_eps`: `nu` itself when finite, else `nu` restricted to `{|z| >= eps}`.
#[derive(Debug, Clone)]
pub struct TruncatedMeasure {
    epsilon: f64,
    cutoff: f64,
    base: LevyMeasure,
    parts: Vec<Part>,
    total_mass: f64,
}

/// A draw from the normalized truncated measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Mark {
    pub z: Vec<f64>,
    /// True when the draw is an atom of the measure.
    pub atomic: bool,
}

pub fn truncate(nu: &LevyMeasure, epsilon: f64) -> Result<TruncatedMeasure> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("truncation level must be positive, got {epsilon}")));
    }
    let cutoff = if nu.is_finite() { 0.0 } else { epsilon };
    let mut parts = Vec::new();
    let mut total = 0.0;
    for leaf in nu.leaves() {
        let mass = leaf.leaf_mass_beyond(cutoff)?;
        if !mass.is_finite() {
            return Err(Error::Numeric { what: "truncated mass".into(), residual: f64::INFINITY });
        }
        if mass <= 0.0 {
            continue;
        }
        let bound = match leaf {
            LevyMeasure::Density { kind: DensityKind::Custom(_), .. } => custom_bound(leaf, cutoff)?,
            _ => 0.0,
        };
        total += mass;
        parts.push(Part { leaf: leaf.clone(), mass, bound });
    }
    Ok(TruncatedMeasure { epsilon, cutoff, base: nu.clone(), parts, total_mass: total })
}

fn custom_bound(leaf: &LevyMeasure, cutoff: f64) -> Result<f64> {
    let LevyMeasure::Density { kind: DensityKind::Custom(c), dim } = leaf else { unreachable!() };
    let lo = c.r_min.max(cutoff);
    if !c.r_max.is_finite() {
        return Err(Error::Unsupported("sampling custom densities needs a bounded support".into()));
    }
    let n = 400;
    let mut best: f64 = 0.0;
    for i in 0..=n {
        let r = lo + (c.r_max - lo) * i as f64 / n as f64;
        if *dim == 1 {
            best = best.max(leaf.leaf_density(&[r])).max(leaf.leaf_density(&[-r]));
        } else {
            for j in 0..64 {
                let th = 2.0 * std::f64::consts::PI * j as f64 / 64.0;
                best = best.max(leaf.leaf_density(&[r * th.cos(), r * th.sin()]));
            }
        }
    }
    if !(best.is_finite() && best > 0.0) {
        return Err(Error::Unsupported("custom density has no finite envelope on its support".into()));
    }
    Ok(1.5 * best)
}

fn closed_form_tail(leaf: &LevyMeasure) -> bool {
    matches!(
        leaf,
        LevyMeasure::Stable { .. } | LevyMeasure::Density { kind: DensityKind::LogTail { .. } | DensityKind::LogSingular { .. }, .. }
    )
}

fn unit_direction(d: usize, rng: &mut RandomStream) -> Vec<f64> {
    if d == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

impl TruncatedMeasure {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Radius below which mass was removed (0 when the base measure is finite).
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn base(&self) -> &LevyMeasure {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// `C_eps`.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn is_empty(&self) -> bool {
        self.total_mass == 0.0
    }

    /// True when every part is absolutely continuous.
    pub fn is_continuous(&self) -> bool {
        self.parts.iter().all(|p| !matches!(p.leaf, LevyMeasure::Atoms { .. }))
    }

    /// The truncated measure as an ordinary Levy measure (atoms and densities only when finite).
    pub fn atoms(&self) -> Vec<super::measure::Atom> {
        self.parts
            .iter()
            .flat_map(|p| match &p.leaf {
                LevyMeasure::Atoms { atoms, .. } => atoms.iter().filter(|a| norm(&a.location) >= self.cutoff).cloned().collect(),
                _ => Vec::new(),
            })
            .collect()
    }

    /// Density of the continuous part of `nu_eps` (not normalized).
    pub fn density(&self, z: &[f64]) -> f64 {
        if norm(z) < self.cutoff {
            return 0.0;
        }
        self.parts.iter().map(|p| p.leaf.leaf_density(z)).sum()
    }

    /// In one dimension, `nu_eps([a, b])` restricted to the parts whose tail mass has a closed form
    /// (stable and logarithmic densities); other parts are covered by [`Self::quadrature_density`].
    pub(crate) fn closed_form_interval_mass(&self, a: f64, b: f64) -> Result<f64> {
        let mut total = 0.0;
        for p in self.parts.iter().filter(|p| closed_form_tail(&p.leaf)) {
            let beyond = |r: f64| -> Result<f64> { p.leaf.leaf_mass_beyond(r.max(self.cutoff)) };
            // Symmetric in one dimension: half of the tail mass sits on each side.
            let half_open = |lo: f64, hi: f64| -> Result<f64> { Ok(0.5 * (beyond(lo)? - beyond(hi)?)) };
            total += if a >= 0.0 {
                half_open(a, b)?
            } else if b <= 0.0 {
                half_open(-b, -a)?
            } else {
                p.mass - 0.5 * beyond(-a)? - 0.5 * beyond(b)?
            };
        }
        Ok(total.max(0.0))
    }

    /// Density of the parts not handled by [`Self::closed_form_interval_mass`].
    pub(crate) fn quadrature_density(&self, z: &[f64]) -> f64 {
        if norm(z) < self.cutoff {
            return 0.0;
        }
        self.parts.iter().filter(|p| !closed_form_tail(&p.leaf)).map(|p| p.leaf.leaf_density(z)).sum()
    }

    /// Mass of the atom of `nu_eps` at `z` (not normalized); 0 when there is none.
    pub fn atom_mass(&self, z: &[f64]) -> f64 {
        let mut m = 0.0;
        for a in self.atoms() {
            let gap = norm(&sub(&a.location, z));
            if gap <= 1e-12 * (1.0 + norm(z)) {
                m += a.mass;
            }
        }
        m
    }

    /// Density (w.r.t. Lebesgue plus counting measure on atoms) of the normalized law at a mark.
    fn weight(&self, z: &[f64], atomic: bool) -> f64 {
        if atomic {
            self.atom_mass(z) / self.total_mass
        } else {
            self.density(z) / self.total_mass
        }
    }

    /// One draw from `nu_eps / C_eps`.
    pub fn sample(&self, rng: &mut RandomStream) -> Result<Mark> {
        if self.is_empty() {
            return Err(Error::Config("cannot sample from a zero measure".into()));
        }
        let mut u = rng.random::<f64>() * self.total_mass;
        let mut chosen = self.parts.last().expect("non-empty");
        for p in &self.parts {
            if u < p.mass {
                chosen = p;
                break;
            }
            u -= p.mass;
        }
        self.sample_part(chosen, rng)
    }

    fn sample_part(&self, part: &Part, rng: &mut RandomStream) -> Result<Mark> {
        let d = self.dim();
        let r0 = self.cutoff;
        let z = match &part.leaf {
            LevyMeasure::Atoms { atoms, .. } => {
                let kept: Vec<_> = atoms.iter().filter(|a| norm(&a.location) >= r0).collect();
                let mut u = rng.random::<f64>() * part.mass;
                let mut pick = kept.last().expect("atom part has mass");
                for a in &kept {
                    if u < a.mass {
                        pick = a;
                        break;
                    }
                    u -= a.mass;
                }
                return Ok(Mark { z: pick.location.clone(), atomic: true });
            }
            LevyMeasure::Stable { index, .. } => {
                let r = r0 * rng.open01().powf(-1.0 / index);
                unit_direction(d, rng).iter().map(|x| x * r).collect()
            }
            LevyMeasure::Density { kind, .. } => match kind {
                DensityKind::LogTail { .. } => {
                    let r = (r0.max(E).ln() / rng.open01()).exp();
                    unit_direction(d, rng).iter().map(|x| x * r).collect()
                }
                DensityKind::LogSingular { .. } => {
                    let a = if r0 > 0.0 { 1.0 / (1.0 / r0).ln() } else { 0.0 };
                    let u = rng.open01();
                    let r = (-1.0 / (a + u * (1.0 - a))).exp();
                    unit_direction(d, rng).iter().map(|x| x * r).collect()
                }
                DensityKind::Gaussian { mass, mean, std } => {
                    self.reject(part.mass / mass, rng, |rng| {
                        mean.iter().map(|m| m + std * rng.sample::<f64, _>(StandardNormal)).collect()
                    })?
                }
                DensityKind::Uniform { mass, center, radius } => self.reject(part.mass / mass, rng, |rng| {
                    let r = radius * rng.open01().powf(1.0 / d as f64);
                    add(center, &unit_direction(d, rng).iter().map(|x| x * r).collect::<Vec<_>>())
                })?,
                DensityKind::Custom(c) => {
                    let lo = c.r_min.max(r0);
                    let hi = c.r_max;
                    loop {
                        // Uniform proposal on the annulus/interval lo <= |z| <= hi.
                        let r = if d == 1 {
                            lo + (hi - lo) * rng.random::<f64>()
                        } else {
                            (lo * lo + (hi * hi - lo * lo) * rng.random::<f64>()).sqrt()
                        };
                        let z: Vec<f64> = unit_direction(d, rng).iter().map(|x| x * r).collect();
                        if rng.random::<f64>() * part.bound <= part.leaf.leaf_density(&z) {
                            break z;
                        }
                    }
                }
            },
            LevyMeasure::Sum { .. } => unreachable!("parts are leaves"),
        };
        Ok(Mark { z, atomic: false })
    }

    fn reject<F>(&self, acceptance: f64, rng: &mut RandomStream, mut draw: F) -> Result<Vec<f64>>
    where
        F: FnMut(&mut RandomStream) -> Vec<f64>,
    {
        if acceptance < MIN_ACCEPTANCE {
            return Err(Error::Config(format!("truncation keeps only {acceptance:e} of a component; lower epsilon")));
        }
        loop {
            let z = draw(rng);
            if norm(&z) >= self.cutoff {
                return Ok(z);
            }
        }
    }

    /// Maximal coupling of `nu_eps / C_eps` with its translate by `shift`.
    ///
    /// Returns `(U, U', coupled)` with `U ~ nu_bar`, `U' - shift ~ nu_bar` and `U = U'` exactly when coupled.
    /// The success probability equals the overlap of the two laws.
    pub fn maximal_coupling(&self, shift: &[f64], rng: &mut RandomStream) -> Result<(Mark, Mark, bool)> {
        let first = self.sample(rng)?;
        let p = self.weight(&first.z, first.atomic);
        let q = self.weight(&sub(&first.z, shift), first.atomic);
        if rng.random::<f64>() * p <= q {
            return Ok((first.clone(), first, true));
        }
        loop {
            let w = self.sample(rng)?;
            let y = add(&w.z, shift);
            let pw = self.weight(&w.z, w.atomic);
            let py = self.weight(&y, w.atomic);
            if rng.random::<f64>() * pw > py {
                return Ok((first, Mark { z: y, atomic: w.atomic }, false));
            }
        }
    }
}

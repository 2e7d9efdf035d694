use std::cell::RefCell;
use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::quad::{integrate, integrate_to_infinity, Estimate, QuadValue, Tolerance};
use crate::vecops::{ball_volume, dot, norm, sphere_area, sub};

pub const MAX_DIM: usize = 8;

/// A point mass of the Levy measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub location: Vec<f64>,
    pub mass: f64,
}

impl Atom {
    pub fn new(location: Vec<f64>, mass: f64) -> Self {
        Atom { location, mass }
    }
}

pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A user supplied density, with the hints the integrators need.
#[derive(Clone)]
pub struct CustomDensity {
    pub density: DensityFn,
    /// The density vanishes outside `r_min <= |z| <= r_max`.
    pub r_min: f64,
    pub r_max: f64,
    /// True when the total mass is finite.
    pub finite: bool,
    /// True when the density depends on `|z|` only.
    pub isotropic: bool,
    /// Radii where the density has kinks or jumps.
    pub breaks: Vec<f64>,
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("r_min", &self.r_min)
            .field("r_max", &self.r_max)
            .field("finite", &self.finite)
            .field("isotropic", &self.isotropic)
            .finish()
    }
}

/// Density families with closed-form metadata.
#[derive(Debug, Clone)]
pub enum DensityKind {
    /// `mass` times the `N(mean, std^2 I)` density.
    Gaussian { mass: f64, mean: Vec<f64>, std: f64 },
    /// `mass` spread uniformly on the ball `B(center, radius)`.
    Uniform { mass: f64, center: Vec<f64>, radius: f64 },
    /// `scale / (|z|^d log^2 |z|)` on `|z| >= e`: finite, but with no logarithmic moment.
    LogTail { scale: f64 },
    /// `scale / (|z|^d log^2 (1/|z|))` on `0 < |z| <= 1/e`: finite, piled up at the origin.
    LogSingular { scale: f64 },
    Custom(CustomDensity),
}

/// Symbolic Levy measure on `R^d`.
#[derive(Debug, Clone)]
pub enum LevyMeasure {
    Atoms { dim: usize, atoms: Vec<Atom> },
    Density { dim: usize, kind: DensityKind },
    /// Isotropic stable density `scale * |z|^{-d-index}`.
    Stable { dim: usize, index: f64, scale: f64 },
    Sum { dim: usize, parts: Vec<LevyMeasure> },
}

/// Which symmetry an integrand has; lets the integrator skip angular work.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Shape<'a> {
    /// Depends on `|z|` only.
    Radial,
    /// Depends on `|z|` and `<z, e>` only, `e` a unit vector.
    Axial(&'a [f64]),
    General,
}

/// `{lo <= |z| <= hi}` (or `< hi` when `include_hi` is false).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Region {
    pub lo: f64,
    pub hi: f64,
    pub include_hi: bool,
}

impl Region {
    pub fn new(lo: f64, hi: f64, include_hi: bool) -> Self {
        Region { lo, hi, include_hi }
    }

    pub fn all() -> Self {
        Region { lo: 0.0, hi: f64::INFINITY, include_hi: true }
    }

    fn contains(&self, r: f64) -> bool {
        r >= self.lo && (r < self.hi || (self.include_hi && r == self.hi))
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(invalid(format!("dimension must be in 1..={MAX_DIM}, got {dim}")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

fn finite_vec(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{name} has non-finite entries")));
    }
    Ok(())
}

impl LevyMeasure {
    pub fn zero(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(LevyMeasure::Atoms { dim, atoms: Vec::new() })
    }

    pub fn atoms(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        check_dim(dim)?;
        for a in &atoms {
            if a.location.len() != dim {
                return Err(invalid(format!("atom location has length {}, expected {dim}", a.location.len())));
            }
            finite_vec("atom location", &a.location)?;
            positive("atom mass", a.mass)?;
            if norm(&a.location) == 0.0 {
                return Err(invalid("atoms must not sit at the origin"));
            }
        }
        Ok(LevyMeasure::Atoms { dim, atoms })
    }

    pub fn single_atom(location: Vec<f64>, mass: f64) -> Result<Self> {
        let dim = location.len();
        Self::atoms(dim, vec![Atom::new(location, mass)])
    }

    pub fn gaussian(mass: f64, mean: Vec<f64>, std: f64) -> Result<Self> {
        let dim = mean.len();
        check_dim(dim)?;
        positive("Gaussian mass", mass)?;
        positive("Gaussian std", std)?;
        finite_vec("Gaussian mean", &mean)?;
        if dim > 2 && norm(&mean) > 0.0 {
            return Err(Error::Unsupported("off-centre Gaussian densities are limited to d <= 2".into()));
        }
        Ok(LevyMeasure::Density { dim, kind: DensityKind::Gaussian { mass, mean, std } })
    }

    pub fn uniform(mass: f64, center: Vec<f64>, radius: f64) -> Result<Self> {
        let dim = center.len();
        check_dim(dim)?;
        positive("uniform mass", mass)?;
        positive("uniform radius", radius)?;
        finite_vec("uniform center", &center)?;
        if dim > 2 && norm(&center) > 0.0 {
            return Err(Error::Unsupported("off-centre uniform densities are limited to d <= 2".into()));
        }
        Ok(LevyMeasure::Density { dim, kind: DensityKind::Uniform { mass, center, radius } })
    }

    pub fn log_tail(dim: usize, scale: f64) -> Result<Self> {
        check_dim(dim)?;
        positive("log-tail scale", scale)?;
        Ok(LevyMeasure::Density { dim, kind: DensityKind::LogTail { scale } })
    }

    pub fn log_singular(dim: usize, scale: f64) -> Result<Self> {
        check_dim(dim)?;
        positive("log-singular scale", scale)?;
        Ok(LevyMeasure::Density { dim, kind: DensityKind::LogSingular { scale } })
    }

    pub fn stable(dim: usize, index: f64, scale: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(index > 0.0 && index < 2.0) {
            return Err(invalid(format!("stable index must lie in (0, 2), got {index}")));
        }
        positive("stable scale", scale)?;
        Ok(LevyMeasure::Stable { dim, index, scale })
    }

    /// Wraps a user density; `int (1 ^ |z|^2) nu(dz)` is checked numerically.
    pub fn custom(dim: usize, density: CustomDensity) -> Result<Self> {
        check_dim(dim)?;
        if dim > 2 && !density.isotropic {
            return Err(Error::Unsupported("non-isotropic custom densities are limited to d <= 2".into()));
        }
        if !(density.r_min >= 0.0 && density.r_max > density.r_min) || density.r_min.is_nan() {
            return Err(invalid("custom density needs 0 <= r_min < r_max"));
        }
        let m = LevyMeasure::Density { dim, kind: DensityKind::Custom(density) };
        let tol = Tolerance::default();
        let near = m.integrate(Region::new(0.0, 1.0, false), Shape::Radial, &[], &|z: &[f64]| dot(z, z), tol)?;
        let far = m.integrate(Region::new(1.0, f64::INFINITY, true), Shape::Radial, &[], &|_: &[f64]| 1.0, tol)?;
        if !(near.value.is_finite() && far.value.is_finite()) {
            return Err(invalid("custom density is not a Levy measure: int (1 ^ |z|^2) diverges"));
        }
        Ok(m)
    }

    pub fn sum(parts: Vec<LevyMeasure>) -> Result<Self> {
        let dim = parts.first().map(|p| p.dim()).ok_or_else(|| invalid("sum of no measures"))?;
        if parts.iter().any(|p| p.dim() != dim) {
            return Err(invalid("summands have different dimensions"));
        }
        Ok(LevyMeasure::Sum { dim, parts })
    }

    pub fn dim(&self) -> usize {
        match self {
            LevyMeasure::Atoms { dim, .. }
            | LevyMeasure::Density { dim, .. }
            | LevyMeasure::Stable { dim, .. }
            | LevyMeasure::Sum { dim, .. } => *dim,
        }
    }

    /// Non-sum components, flattened.
    pub fn leaves(&self) -> Vec<&LevyMeasure> {
        match self {
            LevyMeasure::Sum { parts, .. } => parts.iter().flat_map(|p| p.leaves()).collect(),
            other => vec![other],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.leaves().iter().all(|l| matches!(l, LevyMeasure::Atoms { atoms, .. } if atoms.is_empty()))
    }

    pub fn is_finite(&self) -> bool {
        self.leaves().iter().all(|l| match l {
            LevyMeasure::Stable { .. } => false,
            LevyMeasure::Density { kind: DensityKind::Custom(c), .. } => c.finite,
            _ => true,
        })
    }

    /// Stable components `(index, scale)`.
    pub fn stable_parts(&self) -> Vec<(f64, f64)> {
        self.leaves()
            .iter()
            .filter_map(|l| match l {
                LevyMeasure::Stable { index, scale, .. } => Some((*index, *scale)),
                _ => None,
            })
            .collect()
    }

    /// True when every component is invariant under rotations about the origin.
    pub fn is_isotropic(&self) -> bool {
        self.leaves().iter().all(|l| l.leaf_isotropic())
    }

    /// Total mass, or `None` when the measure is infinite.
    pub fn total_mass(&self) -> Result<Option<f64>> {
        if !self.is_finite() {
            return Ok(None);
        }
        Ok(Some(self.mass_beyond(0.0)?))
    }

    /// `nu({|z| >= r})`; must be finite (`r > 0` for infinite measures).
    pub fn mass_beyond(&self, r: f64) -> Result<f64> {
        let mut total = 0.0;
        for leaf in self.leaves() {
            total += leaf.leaf_mass_beyond(r)?;
        }
        Ok(total)
    }

    fn leaf_isotropic(&self) -> bool {
        match self {
            LevyMeasure::Atoms { atoms, .. } => atoms.is_empty(),
            LevyMeasure::Stable { .. } => true,
            LevyMeasure::Density { kind, .. } => match kind {
                DensityKind::Gaussian { mean, .. } => norm(mean) == 0.0,
                DensityKind::Uniform { center, .. } => norm(center) == 0.0,
                DensityKind::LogTail { .. } | DensityKind::LogSingular { .. } => true,
                DensityKind::Custom(c) => c.isotropic,
            },
            LevyMeasure::Sum { .. } => self.is_isotropic(),
        }
    }

    pub(crate) fn leaf_mass_beyond(&self, r: f64) -> Result<f64> {
        let d = self.dim();
        match self {
            LevyMeasure::Atoms { atoms, .. } => {
                Ok(atoms.iter().filter(|a| norm(&a.location) >= r).map(|a| a.mass).sum())
            }
            LevyMeasure::Stable { index, scale, .. } => {
                if r <= 0.0 {
                    return Err(invalid("stable measures have infinite mass; truncate at a positive radius"));
                }
                Ok(scale * sphere_area(d) * r.powf(-index) / index)
            }
            LevyMeasure::Density { kind, .. } => match kind {
                DensityKind::LogTail { scale } => Ok(scale * sphere_area(d) / r.max(E).ln()),
                DensityKind::LogSingular { scale } => {
                    let s = scale * sphere_area(d);
                    if r <= 0.0 {
                        Ok(s)
                    } else if r >= 1.0 / E {
                        Ok(0.0)
                    } else {
                        Ok(s * (1.0 - 1.0 / (1.0 / r).ln()))
                    }
                }
                DensityKind::Gaussian { mass, .. } | DensityKind::Uniform { mass, .. } => {
                    if r <= 0.0 {
                        return Ok(*mass);
                    }
                    let inner = self.integrate(Region::new(0.0, r, false), Shape::Radial, &[], &|_: &[f64]| 1.0, Tolerance::default())?;
                    Ok((mass - inner.value).max(0.0))
                }
                DensityKind::Custom(c) => {
                    if r <= c.r_min && !c.finite {
                        return Err(invalid("custom density has infinite mass near the origin; truncate above r_min"));
                    }
                    let est = self.integrate(Region::new(r, f64::INFINITY, true), Shape::Radial, &[], &|_: &[f64]| 1.0, Tolerance::default())?;
                    Ok(est.value)
                }
            },
            LevyMeasure::Sum { .. } => self.mass_beyond(r),
        }
    }

    /// Density of an absolutely continuous leaf at `z`.
    pub(crate) fn leaf_density(&self, z: &[f64]) -> f64 {
        let d = self.dim();
        let r = norm(z);
        match self {
            LevyMeasure::Stable { index, scale, .. } => {
                if r == 0.0 {
                    0.0
                } else {
                    scale * r.powf(-(d as f64) - index)
                }
            }
            LevyMeasure::Density { kind, .. } => match kind {
                DensityKind::Gaussian { mass, mean, std } => {
                    let q = sub(z, mean);
                    let s2 = std * std;
                    mass * (-dot(&q, &q) / (2.0 * s2)).exp() / (2.0 * PI * s2).powf(d as f64 / 2.0)
                }
                DensityKind::Uniform { mass, center, radius } => {
                    if norm(&sub(z, center)) <= *radius {
                        mass / (ball_volume(d) * radius.powi(d as i32))
                    } else {
                        0.0
                    }
                }
                DensityKind::LogTail { scale } => {
                    if r >= E {
                        scale / (r.powi(d as i32) * r.ln().powi(2))
                    } else {
                        0.0
                    }
                }
                DensityKind::LogSingular { scale } => {
                    if r > 0.0 && r <= 1.0 / E {
                        scale / (r.powi(d as i32) * r.ln().powi(2))
                    } else {
                        0.0
                    }
                }
                DensityKind::Custom(c) => {
                    if r >= c.r_min && r <= c.r_max {
                        (c.density)(z).max(0.0)
                    } else {
                        0.0
                    }
                }
            },
            _ => 0.0,
        }
    }

    /// Radii outside of which a continuous leaf vanishes.
    fn radial_support(&self) -> (f64, f64) {
        let d = self.dim() as f64;
        match self {
            LevyMeasure::Stable { .. } => (0.0, f64::INFINITY),
            LevyMeasure::Density { kind, .. } => match kind {
                DensityKind::Gaussian { mean, std, .. } => (0.0, norm(mean) + std * (12.0 + d.sqrt())),
                DensityKind::Uniform { center, radius, .. } => {
                    let c = norm(center);
                    ((c - radius).max(0.0), c + radius)
                }
                DensityKind::LogTail { .. } => (E, f64::INFINITY),
                DensityKind::LogSingular { .. } => (0.0, 1.0 / E),
                DensityKind::Custom(c) => (c.r_min, c.r_max),
            },
            _ => (0.0, 0.0),
        }
    }

    fn radial_breaks(&self) -> Vec<f64> {
        match self {
            LevyMeasure::Density { kind, .. } => match kind {
                DensityKind::Gaussian { mean, std, .. } => {
                    let m = norm(mean);
                    (-4..=4).map(|k| m + k as f64 * std).filter(|r| *r > 0.0).collect()
                }
                DensityKind::Uniform { center, radius, .. } => {
                    let c = norm(center);
                    vec![(c - radius).abs(), c + radius]
                }
                DensityKind::Custom(c) => c.breaks.clone(),
                _ => Vec::new(),
            },
            _ => Vec::new(),
        }
    }

    /// Polar angle of the mass centre, for the angular breakpoints in 2-d.
    fn angle_hint(&self) -> Option<f64> {
        match self {
            LevyMeasure::Density { kind: DensityKind::Gaussian { mean: c, .. }, .. }
            | LevyMeasure::Density { kind: DensityKind::Uniform { center: c, .. }, .. }
                if c.len() == 2 && norm(c) > 0.0 =>
            {
                Some(c[1].atan2(c[0]))
            }
            _ => None,
        }
    }

    /// `int_{region} f(z) nu(dz)`.
    pub(crate) fn integrate<T, F>(&self, region: Region, shape: Shape<'_>, breaks: &[f64], f: &F, tol: Tolerance) -> Result<Estimate<T>>
    where
        T: QuadValue,
        F: Fn(&[f64]) -> T + ?Sized,
    {
        let mut value = T::zero();
        let mut error = 0.0;
        for leaf in self.leaves() {
            let e = match leaf {
                LevyMeasure::Atoms { atoms, .. } => {
                    let mut v = T::zero();
                    for a in atoms.iter().filter(|a| region.contains(norm(&a.location))) {
                        v = v + f(&a.location) * a.mass;
                    }
                    Estimate { value: v, error: 0.0 }
                }
                _ => leaf.integrate_continuous(region, shape, breaks, f, tol)?,
            };
            value = value + e.value;
            error += e.error;
        }
        Ok(Estimate { value, error })
    }

    fn integrate_continuous<T, F>(&self, region: Region, shape: Shape<'_>, breaks: &[f64], f: &F, tol: Tolerance) -> Result<Estimate<T>>
    where
        T: QuadValue,
        F: Fn(&[f64]) -> T + ?Sized,
    {
        let d = self.dim();
        let (s_lo, s_hi) = self.radial_support();
        let a = region.lo.max(s_lo);
        let b = region.hi.min(s_hi);
        if !(b > a) {
            return Ok(Estimate { value: T::zero(), error: 0.0 });
        }
        let isotropic = self.leaf_isotropic();
        if d > 2 && !isotropic {
            return Err(Error::Unsupported("integration of non-isotropic densities in d > 2".into()));
        }
        if d > 2 && matches!(shape, Shape::General) {
            return Err(Error::Unsupported("integrands without axial symmetry in d > 2".into()));
        }
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let inner_tol = Tolerance { abs: 1e-15, rel: 1e-11, max_intervals: 2000 };
        let mut unit = vec![0.0; d];
        unit[0] = 1.0;
        let theta0 = self.angle_hint();

        let g = |r: f64| -> T {
            if r <= 0.0 {
                return T::zero();
            }
            match (d, shape) {
                (1, _) => f(&[r]) * self.leaf_density(&[r]) + f(&[-r]) * self.leaf_density(&[-r]),
                (_, Shape::Radial) if isotropic => {
                    let z: Vec<f64> = unit.iter().map(|u| u * r).collect();
                    f(&z) * (self.leaf_density(&z) * sphere_area(d) * r.powi(d as i32 - 1))
                }
                (2, _) => {
                    let mut ab = Vec::new();
                    if let Some(t0) = theta0 {
                        let t0 = t0.rem_euclid(2.0 * PI);
                        ab.push(t0);
                        ab.push((t0 + PI).rem_euclid(2.0 * PI));
                    }
                    let res = integrate(
                        |th: f64| {
                            let z = [r * th.cos(), r * th.sin()];
                            f(&z) * self.leaf_density(&z)
                        },
                        0.0,
                        2.0 * PI,
                        &ab,
                        inner_tol,
                    );
                    match res {
                        Ok(e) => e.value * r,
                        Err(err) => {
                            failure.borrow_mut().get_or_insert(err);
                            T::zero()
                        }
                    }
                }
                (_, Shape::Axial(e)) => {
                    let perp = orthogonal_unit(e);
                    let rho = self.leaf_density(&crate::vecops::scale(e, r));
                    let res = integrate(
                        |th: f64| {
                            let (s, c) = th.sin_cos();
                            let z: Vec<f64> = e.iter().zip(&perp).map(|(a, p)| r * (c * a + s * p)).collect();
                            f(&z) * s.powi(d as i32 - 2)
                        },
                        0.0,
                        PI,
                        &[],
                        inner_tol,
                    );
                    match res {
                        Ok(est) => est.value * (rho * sphere_area(d - 1) * r.powi(d as i32 - 1)),
                        Err(err) => {
                            failure.borrow_mut().get_or_insert(err);
                            T::zero()
                        }
                    }
                }
                _ => T::zero(),
            }
        };

        let mut bk: Vec<f64> = self.radial_breaks();
        bk.extend_from_slice(breaks);
        bk.retain(|x| x.is_finite() && *x > a && *x < b);
        let est = if b.is_finite() {
            integrate(g, a, b, &bk, tol)?
        } else {
            let cut = bk.iter().copied().fold(a.max(1.0), f64::max) * 2.0;
            let head = integrate(&g, a, cut, &bk, tol)?;
            // Logarithmic substitution r = cut e^s tames slowly decaying tails.
            let tail = integrate_to_infinity(
                |s: f64| {
                    let r = cut * s.exp();
                    if r.is_finite() {
                        g(r) * r
                    } else {
                        T::zero()
                    }
                },
                0.0,
                tol,
            )?;
            Estimate { value: head.value + tail.value, error: head.error + tail.error }
        };
        if let Some(err) = failure.into_inner() {
            return Err(err);
        }
        Ok(est)
    }
}

/// Some unit vector orthogonal to the unit vector `e` (`d >= 2`).
pub(crate) fn orthogonal_unit(e: &[f64]) -> Vec<f64> {
    let k = e
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut v = vec![0.0; e.len()];
    v[k] = 1.0;
    let p = dot(&v, e);
    for (vi, ei) in v.iter_mut().zip(e) {
        *vi -= p * ei;
    }
    let n = norm(&v);
    v.iter().map(|x| x / n).collect()
}

//! Finite measures on regular lattices (d <= 2): meet, total variation, sub-cell shifts and maximal coupling.
//!
//! Cell `k` along an axis is centred at `origin + k h` and covers `[origin + (k - 1/2) h, origin + (k + 1/2) h)`.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::levy::TruncatedMeasure;
use crate::quad::{gauss_legendre, integrate, Tolerance};
use crate::rng::RandomStream;
use crate::vecops::norm;

/// Lattice geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub cells: Vec<usize>,
}

impl GridSpec {
    pub fn new(origin: Vec<f64>, spacing: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let d = origin.len();
        if d == 0 || d > 2 {
            return Err(Error::Unsupported(format!("lattice measures support d <= 2, got {d}")));
        }
        if spacing.len() != d || cells.len() != d {
            return Err(invalid("grid origin, spacing and cell counts must have the same length"));
        }
        if spacing.iter().any(|h| !(*h > 0.0 && h.is_finite())) || cells.iter().any(|n| *n == 0) {
            return Err(invalid("grid spacing must be positive and every axis needs at least one cell"));
        }
        Ok(GridSpec { origin, spacing, cells })
    }

    /// Symmetric grid with a node at the origin covering `[-half_width, half_width]^d`.
    pub fn centered(dim: usize, half_width: f64, h: f64) -> Result<Self> {
        if !(half_width > 0.0 && h > 0.0) {
            return Err(invalid("grid half width and spacing must be positive"));
        }
        let k = (half_width / h).ceil() as usize;
        let n = 2 * k + 1;
        Self::new(vec![-(k as f64) * h; dim], vec![h; dim], vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest radius fully covered by the grid around the origin.
    pub fn inner_radius(&self) -> f64 {
        (0..self.dim())
            .map(|a| {
                let lo = self.origin[a] - 0.5 * self.spacing[a];
                let hi = lo + self.cells[a] as f64 * self.spacing[a];
                (-lo).min(hi)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn center(&self, index: usize) -> Vec<f64> {
        if self.dim() == 1 {
            vec![self.origin[0] + index as f64 * self.spacing[0]]
        } else {
            let (i, j) = (index / self.cells[1], index % self.cells[1]);
            vec![self.origin[0] + i as f64 * self.spacing[0], self.origin[1] + j as f64 * self.spacing[1]]
        }
    }

    /// Cell containing `z`, if any.
    pub fn locate(&self, z: &[f64]) -> Option<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for a in 0..self.dim() {
            let k = ((z[a] - self.origin[a]) / self.spacing[a] + 0.5).floor();
            if k < 0.0 || k >= self.cells[a] as f64 {
                return None;
            }
            idx.push(k as usize);
        }
        Some(if self.dim() == 1 { idx[0] } else { idx[0] * self.cells[1] + idx[1] })
    }

    fn cell_bounds(&self, index: usize) -> Vec<(f64, f64)> {
        self.center(index)
            .iter()
            .zip(&self.spacing)
            .map(|(c, h)| (c - 0.5 * h, c + 0.5 * h))
            .collect()
    }
}

/// A nonnegative measure on a lattice with an error bar for discretization and tail leaks.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedMeasure {
    spec: GridSpec,
    weights: Vec<f64>,
    /// Mass known to lie outside the grid.
    leak: f64,
    /// Quadrature error accumulated in the cell weights.
    quad_error: f64,
}

/// What to put on the lattice.
pub enum Source<'a> {
    Truncated(&'a TruncatedMeasure),
    /// A density with its total mass, when known, for the tail leak.
    Density { f: &'a (dyn Fn(&[f64]) -> f64 + Sync), total_mass: Option<f64> },
}

impl GriddedMeasure {
    pub fn from_weights(spec: GridSpec, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != spec.len() {
            return Err(invalid(format!("expected {} weights, got {}", spec.len(), weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        Ok(GriddedMeasure { spec, weights, leak: 0.0, quad_error: 0.0 })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.len();
        GriddedMeasure { spec, weights: vec![0.0; n], leak: 0.0, quad_error: 0.0 }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn leak(&self) -> f64 {
        self.leak
    }

    /// Discretization plus tail error bar.
    pub fn error_bar(&self) -> f64 {
        self.leak + self.quad_error
    }

    /// Rescaled copy with unit mass.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if m <= 0.0 {
            return Err(invalid("cannot normalize a zero measure"));
        }
        Ok(GriddedMeasure {
            spec: self.spec.clone(),
            weights: self.weights.iter().map(|w| w / m).collect(),
            leak: self.leak / m,
            quad_error: self.quad_error / m,
        })
    }

    /// Merges blocks of `2^d` cells into a lattice of twice the spacing (odd axes are padded).
    pub fn coarsened(&self) -> Self {
        let spec = &self.spec;
        let cells: Vec<usize> = spec.cells.iter().map(|n| n.div_ceil(2)).collect();
        let coarse = GridSpec {
            origin: spec.origin.iter().zip(&spec.spacing).map(|(o, h)| o + 0.5 * h).collect(),
            spacing: spec.spacing.iter().map(|h| 2.0 * h).collect(),
            cells: cells.clone(),
        };
        let mut weights = vec![0.0; coarse.len()];
        for (i, w) in self.weights.iter().enumerate() {
            let j = if spec.dim() == 1 { i / 2 } else { (i / spec.cells[1] / 2) * cells[1] + (i % spec.cells[1]) / 2 };
            weights[j] += w;
        }
        GriddedMeasure { spec: coarse, weights, leak: self.leak, quad_error: self.quad_error }
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.spec != other.spec {
            return Err(invalid("gridded measures live on different grids"));
        }
        Ok(())
    }
}

/// Cell integrals of `source`; errors when the mass outside the grid exceeds `tail_tol`.
pub fn discretize(source: Source<'_>, spec: &GridSpec, tail_tol: f64) -> Result<GriddedMeasure> {
    let n = spec.len();
    let mut weights = vec![0.0; n];
    let mut quad_error = 0.0;
    let (density, total): (Box<dyn Fn(&[f64]) -> f64 + Sync + '_>, Option<f64>) = match source {
        Source::Truncated(tm) => {
            if tm.dim() != spec.dim() {
                return Err(invalid("measure and grid dimensions differ"));
            }
            // Atoms off the grid show up in the leak below.
            for a in tm.atoms() {
                if let Some(k) = spec.locate(&a.location) {
                    weights[k] += a.mass;
                }
            }
            if spec.dim() == 1 {
                // Singular or heavy-tailed radial parts are placed by differencing their tail mass.
                for (k, w) in weights.iter_mut().enumerate() {
                    let b = spec.cell_bounds(k)[0];
                    *w += tm.closed_form_interval_mass(b.0, b.1)?;
                }
                (Box::new(move |z: &[f64]| tm.quadrature_density(z)), Some(tm.total_mass()))
            } else {
                (Box::new(move |z: &[f64]| tm.density(z)), Some(tm.total_mass()))
            }
        }
        Source::Density { f, total_mass } => (Box::new(f), total_mass),
    };
    if spec.dim() == 1 {
        let tol = Tolerance { abs: 1e-15, rel: 1e-12, max_intervals: 200 };
        for (k, w) in weights.iter_mut().enumerate() {
            let b = spec.cell_bounds(k)[0];
            let est = integrate(|x: f64| density(&[x]), b.0, b.1, &[], tol)?;
            *w += est.value.max(0.0);
            quad_error += est.error;
        }
    } else {
        for (k, w) in weights.iter_mut().enumerate() {
            let b = spec.cell_bounds(k);
            let (v, e) = cell_integral_2d(&*density, b[0], b[1], 0);
            *w += v.max(0.0);
            quad_error += e;
        }
    }
    let covered: f64 = weights.iter().sum();
    let leak = match total {
        Some(t) => (t - covered).max(0.0),
        None => 0.0,
    };
    if leak > tail_tol {
        return Err(Error::Coverage { leak, tol: tail_tol });
    }
    Ok(GriddedMeasure { spec: spec.clone(), weights, leak, quad_error })
}

/// Tensor Gauss-Legendre on a rectangle, split into quarters while the 3- and 5-point rules disagree.
fn cell_integral_2d(f: &(dyn Fn(&[f64]) -> f64 + Sync), x: (f64, f64), y: (f64, f64), depth: u32) -> (f64, f64) {
    let rule = |n: usize| {
        let (nodes, weights) = gauss_legendre(n);
        let (cx, hx) = (0.5 * (x.0 + x.1), 0.5 * (x.1 - x.0));
        let (cy, hy) = (0.5 * (y.0 + y.1), 0.5 * (y.1 - y.0));
        let mut s = 0.0;
        for (xi, wx) in nodes.iter().zip(&weights) {
            for (yj, wy) in nodes.iter().zip(&weights) {
                s += wx * wy * f(&[cx + hx * xi, cy + hy * yj]);
            }
        }
        s * hx * hy
    };
    let fine = rule(5);
    let coarse = rule(3);
    let err = (fine - coarse).abs();
    if err <= 1e-13 + 1e-9 * fine.abs() || depth >= 5 {
        return (fine, err);
    }
    let mx = 0.5 * (x.0 + x.1);
    let my = 0.5 * (y.0 + y.1);
    let mut v = 0.0;
    let mut e = 0.0;
    for (xa, ya) in [((x.0, mx), (y.0, my)), ((mx, x.1), (y.0, my)), ((x.0, mx), (my, y.1)), ((mx, x.1), (my, y.1))] {
        let (a, b) = cell_integral_2d(f, xa, ya, depth + 1);
        v += a;
        e += b;
    }
    (v, e)
}

/// Cellwise minimum.
pub fn meet(a: &GriddedMeasure, b: &GriddedMeasure) -> Result<GriddedMeasure> {
    a.same_grid(b)?;
    Ok(GriddedMeasure {
        spec: a.spec.clone(),
        weights: a.weights.iter().zip(&b.weights).map(|(x, y)| x.min(*y)).collect(),
        leak: a.leak + b.leak,
        quad_error: a.quad_error + b.quad_error,
    })
}

/// `sum |w1 - w2|` over the cells.
pub fn tv_norm(a: &GriddedMeasure, b: &GriddedMeasure) -> Result<f64> {
    a.same_grid(b)?;
    Ok(a.weights.iter().zip(&b.weights).map(|(x, y)| (x - y).abs()).sum())
}

/// TV on the grid together with the combined error bar of the inputs.
pub fn tv_with_error(a: &GriddedMeasure, b: &GriddedMeasure) -> Result<(f64, f64)> {
    Ok((tv_norm(a, b)?, a.error_bar() + b.error_bar()))
}

/// One-axis split: mass at cell k moves to k + n (weight 1 - f) and k + n + 1 (weight f).
fn shift_axis(w: &[f64], cells: &[usize], axis: usize, steps: f64) -> (Vec<f64>, f64) {
    let n_whole = steps.floor();
    let frac = steps - n_whole;
    let n_whole = n_whole as i64;
    let mut out = vec![0.0; w.len()];
    let mut lost = 0.0;
    let (len_axis, stride, outer) = if cells.len() == 1 {
        (cells[0], 1, 1)
    } else if axis == 0 {
        (cells[0], cells[1], cells[1])
    } else {
        (cells[1], 1, cells[0])
    };
    for o in 0..outer {
        let base = if cells.len() == 1 { 0 } else if axis == 0 { o } else { o * cells[1] };
        for k in 0..len_axis {
            let m = w[base + k * stride];
            if m == 0.0 {
                continue;
            }
            for (target, part) in [(k as i64 + n_whole, m * (1.0 - frac)), (k as i64 + n_whole + 1, m * frac)] {
                if part == 0.0 {
                    continue;
                }
                if target >= 0 && (target as usize) < len_axis {
                    out[base + target as usize * stride] += part;
                } else {
                    lost += part;
                }
            }
        }
    }
    (out, lost)
}

/// `delta_x * mu` by multilinear mass splitting; errors when the mass pushed off the grid exceeds `leak_tol`.
pub fn shift(mu: &GriddedMeasure, x: &[f64], leak_tol: f64) -> Result<GriddedMeasure> {
    let spec = &mu.spec;
    if x.len() != spec.dim() {
        return Err(invalid("shift vector has the wrong dimension"));
    }
    let mut w = mu.weights.clone();
    let mut lost = 0.0;
    for (axis, xa) in x.iter().enumerate() {
        let steps = xa / spec.spacing[axis];
        let rounded = steps.round();
        // Snap to the lattice when the shift is a whole number of steps up to rounding noise.
        let steps = if (steps - rounded).abs() < 1e-12 { rounded } else { steps };
        if steps == 0.0 {
            continue;
        }
        let (out, l) = shift_axis(&w, &spec.cells, axis, steps);
        w = out;
        lost += l;
    }
    if lost > leak_tol {
        return Err(Error::Coverage { leak: lost, tol: leak_tol });
    }
    Ok(GriddedMeasure { spec: spec.clone(), weights: w, leak: mu.leak + lost, quad_error: mu.quad_error })
}

/// Overlap `nu_eps ^ (delta_x * nu_eps)` total mass with its error bar.
pub fn overlap_mass(nu: &GriddedMeasure, x: &[f64], leak_tol: f64) -> Result<(f64, f64)> {
    let s = shift(nu, x, leak_tol)?;
    let m = meet(nu, &s)?;
    Ok((m.mass(), nu.error_bar() + s.error_bar()))
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    w.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn draw_index(cum: &[f64], rng: &mut RandomStream) -> usize {
    let total = *cum.last().expect("non-empty");
    let u = rng.random::<f64>() * total;
    cum.partition_point(|c| *c <= u).min(cum.len() - 1)
}

/// Two-phase maximal coupling of a unit-mass lattice measure with its shift by `x`.
#[derive(Debug, Clone)]
pub struct LatticeCoupling {
    spec: GridSpec,
    overlap: f64,
    meet_cum: Vec<f64>,
    left_cum: Vec<f64>,
    right_cum: Vec<f64>,
}

/// A coupled draw: lattice points `u ~ mu`, `u_shifted ~ delta_x * mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledDraw {
    pub u: Vec<f64>,
    pub u_shifted: Vec<f64>,
    pub coupled: bool,
}

impl LatticeCoupling {
    pub fn new(mu: &GriddedMeasure, x: &[f64], leak_tol: f64) -> Result<Self> {
        let m = mu.mass();
        if (m - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("maximal coupling needs a unit-mass measure, got mass {m}")));
        }
        let s = shift(mu, x, leak_tol)?;
        // Mass shifted off the grid is returned to the residual so both marginals stay probability laws.
        let mt = meet(mu, &s)?;
        let left: Vec<f64> = mu.weights.iter().zip(&mt.weights).map(|(a, b)| (a - b).max(0.0)).collect();
        let right: Vec<f64> = s.weights.iter().zip(&mt.weights).map(|(a, b)| (a - b).max(0.0)).collect();
        Ok(LatticeCoupling {
            spec: mu.spec.clone(),
            overlap: mt.mass(),
            meet_cum: cumulative(&mt.weights),
            left_cum: cumulative(&left),
            right_cum: cumulative(&right),
        })
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    pub fn sample(&self, rng: &mut RandomStream) -> CoupledDraw {
        let total_right = self.right_cum.last().copied().unwrap_or(0.0);
        if rng.random::<f64>() < self.overlap || total_right <= 0.0 {
            let u = self.spec.center(draw_index(&self.meet_cum, rng));
            return CoupledDraw { u: u.clone(), u_shifted: u, coupled: true };
        }
        let u = self.spec.center(draw_index(&self.left_cum, rng));
        let v = self.spec.center(draw_index(&self.right_cum, rng));
        // Residual supports are disjoint, so the pair is never equal.
        CoupledDraw { u, u_shifted: v, coupled: false }
    }
}

/// One coupled pair; build a [`LatticeCoupling`] directly when drawing many.
pub fn maximal_coupling_sample(mu: &GriddedMeasure, x: &[f64], rng: &mut RandomStream) -> Result<CoupledDraw> {
    Ok(LatticeCoupling::new(mu, x, f64::INFINITY)?.sample(rng))
}

/// Sup over `|x| <= rho` of `tv(nu, delta_x nu)` on a ring/direction grid, with the error bar.
pub fn sup_shift_tv(nu: &GriddedMeasure, rho: f64, rings: usize, directions: usize, leak_tol: f64) -> Result<(f64, f64)> {
    let mut best: f64 = 0.0;
    let mut bar: f64 = 0.0;
    for x in probe_points(nu.spec.dim(), rho, rings, directions) {
        let s = shift(nu, &x, leak_tol)?;
        let (tv, e) = tv_with_error(nu, &s)?;
        if tv > best {
            best = tv;
        }
        bar = bar.max(e);
    }
    Ok((best, bar))
}

/// Points on spheres `|x| = rho k / rings`, `k = 1..=rings`, along `directions` directions (both signs in 1-d).
pub fn probe_points(dim: usize, rho: f64, rings: usize, directions: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for k in 1..=rings {
        let r = rho * k as f64 / rings as f64;
        if dim == 1 {
            out.push(vec![r]);
            out.push(vec![-r]);
        } else {
            for j in 0..directions.max(1) {
                let th = 2.0 * std::f64::consts::PI * j as f64 / directions.max(1) as f64;
                out.push(vec![r * th.cos(), r * th.sin()]);
            }
        }
    }
    out
}

/// Helper for tests and reports: mean of the lattice law.
pub fn mean(mu: &GriddedMeasure) -> Vec<f64> {
    let m = mu.mass();
    let d = mu.spec.dim();
    let mut acc = vec![0.0; d];
    for (k, w) in mu.weights.iter().enumerate() {
        let c = mu.spec.center(k);
        for a in 0..d {
            acc[a] += w * c[a];
        }
    }
    acc.iter().map(|v| v / m).collect()
}

/// Largest distance of a charged cell from the origin.
pub fn support_radius(mu: &GriddedMeasure) -> f64 {
    mu.weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(k, _)| norm(&mu.spec.center(k)))
        .fold(0.0, f64::max)
}

//! Laws of `X_t^x` from their characteristic functions.
//!
//! `E exp(i <xi, X_t^x>) = exp(i <xi, e^{tA} x> - psi_t(xi))` with `psi_t(xi) = int_0^t Phi(e^{sA^T} xi) ds`.
//! Densities and total-variation distances are obtained by FFT inversion on power-of-two grids (d <= 2).
//! A compound-Poisson driver without Gaussian part leaves an atom (no jump up to time t); it is split off
//! and handled exactly.

use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::levy::{jump_symbol, symbol, stable_symbol_constant, DrivingPlan, LevyMeasure, LevyTriplet, SmallJumpScheme};
use crate::matrix::{gaussian_convolution_covariance, integrated_exponential, matrix_exponential, operator_norm, SquareMatrix};
use crate::ou::{invariant_horizon, OUModel};
use crate::quad::{composite_rule, integrate, Tolerance};
use crate::rng::Execution;
use crate::vecops::{dot, norm, sub};

use std::f64::consts::PI;

const RULE_ORDER: usize = 12;
const MAX_PANELS: usize = 4096;
const OVERSAMPLE_1D: f64 = 16.0;
const OVERSAMPLE_2D: f64 = 4.0;

/// `psi_t(xi)` by adaptive quadrature in `s`, one matrix exponential per node.
///
/// Slow but independent of [`AccumulatedSymbol`]; meant for spot checks.
pub fn accumulated_symbol(model: &OUModel, t: f64, xi: &[f64]) -> Result<Complex64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("time must be finite and non-negative, got {t}")));
    }
    if xi.len() != model.dim() {
        return Err(invalid("frequency has the wrong dimension"));
    }
    if t == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let at = model.a().transpose();
    let mut failure = None;
    let est = integrate(
        |s: f64| match matrix_exponential(&at, s).and_then(|e| symbol(model.triplet(), &e.apply(xi))) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                Complex64::new(0.0, 0.0)
            }
        },
        0.0,
        t,
        &[],
        Tolerance::new(1e-12, 1e-10),
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(est.value),
    }
}

/// Fast evaluator of `psi_t` at many frequencies for one horizon.
///
/// Gaussian and drift parts are exact through `Sigma_t` and `int_0^t e^{sA} ds`. Isotropic stable parts are
/// exact when `A` is a multiple of the identity. Everything else goes through a composite Gauss-Legendre rule
/// in `s` whose nodes `e^{s_j A^T}` are computed once.
#[derive(Debug, Clone)]
pub struct AccumulatedSymbol {
    horizon: f64,
    stationary: bool,
    sigma: SquareMatrix,
    drift: Vec<f64>,
    /// `(index, kappa * int_0^t e^{index a s} ds)` when `A = a I`.
    stable_exact: Vec<(f64, f64)>,
    rest: Option<LevyMeasure>,
    nodes: Vec<SquareMatrix>,
    weights: Vec<f64>,
}

impl AccumulatedSymbol {
    pub fn new(model: &OUModel, t: f64) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid(format!("time must be finite and non-negative, got {t}")));
        }
        Self::build(model, t, false)
    }

    /// `psi_infinity`, the exponent of the invariant law, with the time integral cut where the envelope makes
    /// the remainder negligible.
    pub fn stationary(model: &OUModel) -> Result<Self> {
        let horizon = invariant_horizon(model, 1e-13)?;
        Self::build(model, horizon, true)
    }

    fn build(model: &OUModel, t: f64, stationary: bool) -> Result<Self> {
        let a = model.a();
        let tr = model.triplet();
        let d = model.dim();
        let scalar = a.as_scalar_multiple();
        let sigma = gaussian_convolution_covariance(a, tr.q(), t)?;
        let drift = integrated_exponential(a, t)?.apply(tr.b());
        let mut stable_exact = Vec::new();
        let mut rest = Vec::new();
        for leaf in tr.nu().leaves() {
            match (leaf, scalar) {
                (LevyMeasure::Stable { index, scale, .. }, Some(l)) => {
                    let k = scale * stable_symbol_constant(d, *index);
                    stable_exact.push((*index, k * growth(index * l, t, stationary)));
                }
                (LevyMeasure::Atoms { atoms, .. }, _) if atoms.is_empty() => {}
                (other, _) => rest.push(other.clone()),
            }
        }
        let rest = if rest.is_empty() { None } else { Some(LevyMeasure::sum(rest)?) };
        let (mut nodes, mut weights) = (Vec::new(), Vec::new());
        if rest.is_some() && t > 0.0 {
            let rate = operator_norm(a.matrix()).max(0.25);
            let panels = ((4.0 * t * rate).ceil() as usize).clamp(4, MAX_PANELS);
            let (s, w) = composite_rule(0.0, t, panels, RULE_ORDER);
            let at = a.transpose();
            for sj in &s {
                nodes.push(matrix_exponential(&at, *sj)?);
            }
            weights = w;
        }
        Ok(AccumulatedSymbol { horizon: t, stationary, sigma, drift, stable_exact, rest, nodes, weights })
    }

    /// Time horizon of the integral (the cut point for the stationary exponent).
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_stationary(&self) -> bool {
        self.stationary
    }

    pub fn eval(&self, xi: &[f64]) -> Result<Complex64> {
        if xi.len() != self.drift.len() {
            return Err(invalid("frequency has the wrong dimension"));
        }
        let k = norm(xi);
        let gauss = 0.5 * dot(&self.sigma.apply(xi), xi);
        let mut v = Complex64::new(gauss, -dot(&self.drift, xi));
        if k > 0.0 {
            for (index, c) in &self.stable_exact {
                v.re += c * k.powf(*index);
            }
        }
        if let Some(nu) = &self.rest {
            for (e, w) in self.nodes.iter().zip(&self.weights) {
                v += jump_symbol(nu, &e.apply(xi))? * *w;
            }
        }
        Ok(v)
    }

    pub fn re(&self, xi: &[f64]) -> Result<f64> {
        Ok(self.eval(xi)?.re)
    }
}

/// `int_0^t e^{k s} ds`, or `int_0^inf` when `stationary` (then `k < 0`).
fn growth(k: f64, t: f64, stationary: bool) -> f64 {
    if stationary && k < 0.0 {
        return -1.0 / k;
    }
    if (k * t).abs() < 1e-8 {
        t * (1.0 + 0.5 * k * t)
    } else {
        (k * t).exp_m1() / k
    }
}

fn probe_directions(d: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..64)
            .map(|j| {
                let th = 2.0 * PI * j as f64 / 64.0;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            // Normalised nonzero vectors of {-1, 0, 1}^d.
            let mut out = Vec::new();
            for code in 1..3usize.pow(d as u32) {
                let mut c = code;
                let v: Vec<f64> = (0..d)
                    .map(|_| {
                        let digit = c % 3;
                        c /= 3;
                        digit as f64 - 1.0
                    })
                    .collect();
                let n = norm(&v);
                if n > 0.0 {
                    out.push(v.iter().map(|x| x / n).collect());
                }
            }
            out
        }
    }
}

fn phi_with(sym: &AccumulatedSymbol, dirs: &[Vec<f64>], rho: f64) -> Result<f64> {
    let mut best: f64 = 0.0;
    for e in dirs {
        for k in 1..=8 {
            let r = rho * k as f64 / 8.0;
            let xi: Vec<f64> = e.iter().map(|v| v * r).collect();
            best = best.max(sym.re(&xi)?);
        }
    }
    Ok(best)
}

/// `phi_t(rho) = sup_{|xi| <= rho} Re psi_t(xi)`, over the sphere and seven interior shells.
pub fn phi_t(model: &OUModel, t: f64, rho: f64) -> Result<f64> {
    if !(t > 0.0 && rho > 0.0) {
        return Err(invalid("phi_t needs t > 0 and rho > 0"));
    }
    let sym = AccumulatedSymbol::new(model, t)?;
    phi_with(&sym, &probe_directions(model.dim()), rho)
}

/// Smallest `rho` with `phi_t(rho) >= y`, by bisection to relative tolerance 1e-10.
pub fn phi_t_inverse(model: &OUModel, t: f64, y: f64) -> Result<f64> {
    if !(t > 0.0 && y > 0.0) {
        return Err(invalid("phi_t_inverse needs t > 0 and y > 0"));
    }
    let tr = model.triplet();
    let bounded = tr.q().matrix().iter().all(|v| *v == 0.0) && tr.nu().is_finite();
    if bounded {
        let c = tr.nu().total_mass()?.unwrap_or(0.0);
        let bound = 2.0 * c * t;
        if y > bound {
            return Err(Error::Domain(format!("phi_t is bounded by 2 nu(R^d) t = {bound}, below {y}")));
        }
    }
    let sym = AccumulatedSymbol::new(model, t)?;
    let dirs = probe_directions(model.dim());
    let phi = |r: f64| phi_with(&sym, &dirs, r);
    let (mut lo, mut hi) = (0.0, 1.0);
    while phi(hi)? < y {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return Err(Error::Domain(format!("phi_t stays below {y} up to rho = 1e15 (reached {})", phi(lo)?)));
        }
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if phi(mid)? >= y {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Accuracy and size limits of the Fourier oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    /// Frequency cutoff: `|chi| < cf_tol` beyond it.
    pub cf_tol: f64,
    /// Stop refining the spatial window once successive TV values agree to this.
    pub target: f64,
    pub max_points_1d: usize,
    pub max_points_2d_axis: usize,
    pub execution: Execution,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings { cf_tol: 1e-10, target: 1e-6, max_points_1d: 1 << 22, max_points_2d_axis: 1 << 10, execution: Execution::default() }
    }
}

/// A uniform lattice `center + (j - n/2) h` per axis, `n` a power of two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FftGrid {
    pub center: Vec<f64>,
    pub n: usize,
    pub spacing: f64,
}

impl FftGrid {
    pub fn new(center: Vec<f64>, n: usize, spacing: f64) -> Result<Self> {
        if center.is_empty() || center.len() > 2 {
            return Err(Error::Unsupported(format!("Fourier inversion supports d <= 2, got {}", center.len())));
        }
        if !(n >= 8 && n.is_power_of_two()) || !(spacing > 0.0 && spacing.is_finite()) {
            return Err(invalid("FFT grids need a power-of-two size >= 8 and a positive spacing"));
        }
        Ok(FftGrid { center, n, spacing })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of node `j` along `axis`.
    pub fn coordinate(&self, axis: usize, j: usize) -> f64 {
        self.center[axis] + (j as f64 - (self.n / 2) as f64) * self.spacing
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        if self.dim() == 1 {
            vec![self.coordinate(0, index)]
        } else {
            vec![self.coordinate(0, index / self.n), self.coordinate(1, index % self.n)]
        }
    }

    fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }
}

/// A law on an FFT grid: point values of the absolutely continuous part plus an optional atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierDensity {
    pub grid: FftGrid,
    pub values: Vec<f64>,
    pub atom: Option<(Vec<f64>, f64)>,
    /// Mass removed by clipping negative ringing to zero.
    pub clipped_mass: f64,
    /// Most negative value before clipping.
    pub min_raw: f64,
}

impl FourierDensity {
    /// Riemann sum of the density plus the atom.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume() + self.atom.as_ref().map_or(0.0, |a| a.1)
    }

    /// Distribution function at the nodes (d = 1), trapezoidal in the density, atom included.
    pub fn cdf_nodes(&self) -> Result<Vec<f64>> {
        if self.grid.dim() != 1 {
            return Err(Error::Unsupported("distribution functions are one-dimensional".into()));
        }
        let h = self.grid.spacing;
        let mut acc = 0.5 * self.values[0] * h;
        let mut out = Vec::with_capacity(self.values.len());
        for j in 0..self.values.len() {
            if j > 0 {
                acc += 0.5 * (self.values[j - 1] + self.values[j]) * h;
            }
            let atom = match &self.atom {
                Some((z, m)) if z[0] <= self.grid.coordinate(0, j) => *m,
                _ => 0.0,
            };
            out.push(acc + atom);
        }
        Ok(out)
    }

    /// Linear interpolation of [`FourierDensity::cdf_nodes`], clamped to `[0, 1]`.
    pub fn cdf_fn(&self) -> Result<impl Fn(f64) -> f64 + '_> {
        let nodes = self.cdf_nodes()?;
        let g = &self.grid;
        Ok(move |x: f64| {
            let u = (x - g.coordinate(0, 0)) / g.spacing;
            if u <= 0.0 {
                return nodes[0].clamp(0.0, 1.0);
            }
            let j = u.floor() as usize;
            if j + 1 >= nodes.len() {
                return nodes[nodes.len() - 1].clamp(0.0, 1.0);
            }
            let f = u - j as f64;
            ((1.0 - f) * nodes[j] + f * nodes[j + 1]).clamp(0.0, 1.0)
        })
    }

    /// CSV with a header: `z,density` or `z1,z2,density`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if self.grid.dim() == 1 {
            writeln!(w, "z,density")?;
        } else {
            writeln!(w, "z1,z2,density")?;
        }
        for (i, v) in self.values.iter().enumerate() {
            let p = self.grid.point(i);
            let coords: Vec<String> = p.iter().map(|c| format!("{c}")).collect();
            writeln!(w, "{},{v}", coords.join(","))?;
        }
        Ok(())
    }
}

/// A total-variation value with its error bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    pub value: f64,
    pub error: f64,
    pub points: usize,
    pub spacing: f64,
    /// The grid could not resolve the law; `value +- error` is a rigorous bracket instead.
    #[serde(default)]
    pub bracketed: bool,
}

/// Law of `Y_t` split into the no-jump atom and the rest.
struct LawParts {
    sym: AccumulatedSymbol,
    /// `(location, mass)` of the atom of `Y_t`.
    atom: Option<(Vec<f64>, f64)>,
    heavy: bool,
}

impl LawParts {
    fn new(model: &OUModel, t: f64) -> Result<Self> {
        let sym = AccumulatedSymbol::new(model, t)?;
        let tr = model.triplet();
        let atom = if tr.q().matrix().iter().all(|v| *v == 0.0) && tr.nu().is_finite() {
            let c = tr.nu().total_mass()?.unwrap_or(0.0);
            Some((integrated_exponential(model.a(), t)?.apply(&compensated_drift(tr)?), (-c * t).exp()))
        } else {
            None
        };
        Ok(LawParts { sym, atom, heavy: heavy_tailed(tr.nu()) })
    }

    fn stationary(model: &OUModel) -> Result<Self> {
        Ok(LawParts { sym: AccumulatedSymbol::stationary(model)?, atom: None, heavy: heavy_tailed(model.triplet().nu()) })
    }

    /// `E e^{i<xi, Y_t - shift>}` without the atom.
    fn continuous(&self, xi: &[f64], shift: &[f64]) -> Result<Complex64> {
        let phase = -dot(xi, shift);
        let full = (-self.sym.eval(xi)? + Complex64::new(0.0, phase)).exp();
        Ok(match &self.atom {
            Some((z, m)) => full - Complex64::from_polar(*m, dot(xi, z) + phase),
            None => full,
        })
    }

    fn continuous_abs(&self, xi: &[f64]) -> Result<f64> {
        self.continuous(xi, &vec![0.0; xi.len()]).map(|c| c.norm())
    }
}

/// `b - int_{|z|<1} z nu(dz)`: the drift of a finite-activity driver with its compensator removed.
fn compensated_drift(tr: &LevyTriplet) -> Result<Vec<f64>> {
    let scheme = SmallJumpScheme { epsilon: 1.0, gaussian_fill: false, exact_stable: false };
    Ok(DrivingPlan::new(tr, scheme, false)?.drift)
}

fn heavy_tailed(nu: &LevyMeasure) -> bool {
    use crate::levy::{moment_integral, MomentKind};
    !nu.is_zero()
        && !matches!(moment_integral(nu, MomentKind::Power(2.0)), Ok(v) if v.is_finite())
}

/// Radius beyond which `env` stays below `tol`, and a width proxy from where `env` halves.
fn scales(dim: usize, env: &dyn Fn(&[f64]) -> Result<f64>, tol: f64) -> Result<(f64, f64)> {
    let dirs = probe_directions(dim);
    let at = |r: f64| -> Result<(f64, f64)> {
        let mut hi: f64 = 0.0;
        let mut lo = f64::INFINITY;
        for e in &dirs {
            let xi: Vec<f64> = e.iter().map(|v| v * r).collect();
            let v = env(&xi)?;
            hi = hi.max(v);
            lo = lo.min(v);
        }
        Ok((hi, lo))
    };
    let zero = env(&vec![0.0; dim])?;
    if zero <= 0.0 {
        return Err(Error::Resolution("the continuous part has zero mass".into()));
    }
    let mut r = 1e-3;
    let cut = loop {
        if r > 1e8 {
            let (v, _) = at(1e8)?;
            return Err(Error::Resolution(format!(
                "characteristic function not integrable at this resolution: |chi| = {v:e} at |xi| = 1e8 (tolerance {tol:e})"
            )));
        }
        let ok = [1.0, 1.25, 1.5, 2.0, 4.0].iter().try_fold(true, |acc, m| at(r * m).map(|(hi, _)| acc && hi < tol))?;
        if ok {
            break r;
        }
        r *= 1.25;
    };
    // Widest direction: largest radius where every direction is still above half.
    let mut rh = cut;
    while rh > 1e-9 {
        let (_, lo) = at(rh)?;
        if lo >= 0.5 * zero {
            break;
        }
        rh /= 1.1;
    }
    Ok((cut, 1.2 / rh.max(1e-9)))
}

/// Inverse transform of `f` on `grid` (real part, density units).
/// Frequencies with a coordinate beyond `cut` are taken as zero, which oversamples in space for free.
fn invert(grid: &FftGrid, f: &(dyn Fn(&[f64]) -> Result<Complex64> + Sync), cut: f64, exec: &Execution) -> Result<Vec<f64>> {
    let n = grid.n;
    let dxi = 2.0 * PI / (n as f64 * grid.spacing);
    let freq = |k: usize| (k as f64 - (n / 2) as f64) * dxi;
    let zero = Complex64::new(0.0, 0.0);
    let f = |xi: &[f64]| if xi.iter().any(|v| v.abs() > cut) { Ok(zero) } else { f(xi) };
    let sign = |k: usize| if k % 2 == 0 { 1.0 } else { -1.0 };
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    if grid.dim() == 1 {
        let rows = exec.map(n.div_ceil(1024), |b| {
            (b * 1024..((b + 1) * 1024).min(n)).map(|k| f(&[freq(k)]).map(|v| v * sign(k))).collect::<Result<Vec<_>>>()
        });
        let mut buf: Vec<Complex64> = Vec::with_capacity(n);
        for r in rows {
            buf.extend(r?);
        }
        fft.process(&mut buf);
        let c = dxi / (2.0 * PI);
        return Ok(buf.iter().enumerate().map(|(j, v)| c * sign(j) * v.re).collect());
    }
    let rows = exec.map(n, |k1| {
        let mut row = (0..n).map(|k2| f(&[freq(k1), freq(k2)]).map(|v| v * sign(k1 + k2))).collect::<Result<Vec<_>>>()?;
        fft.process(&mut row);
        Ok::<_, Error>(row)
    });
    let mut m: Vec<Complex64> = Vec::with_capacity(n * n);
    for r in rows {
        m.extend(r?);
    }
    // Columns.
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for k2 in 0..n {
        for k1 in 0..n {
            col[k1] = m[k1 * n + k2];
        }
        fft.process(&mut col);
        for j1 in 0..n {
            m[j1 * n + k2] = col[j1];
        }
    }
    let c = (dxi / (2.0 * PI)).powi(2);
    Ok(m.iter().enumerate().map(|(i, v)| c * sign(i / n + i % n) * v.re).collect())
}

/// Rough bound on the L1 error over the window from frequencies beyond `cut`.
fn truncation_error(dim: usize, env: &dyn Fn(&[f64]) -> Result<f64>, cut: f64, window: f64) -> Result<f64> {
    let dirs = probe_directions(dim);
    let mut tail = 0.0;
    let mut r = cut;
    for _ in 0..12 {
        let mut m: f64 = 0.0;
        for e in &dirs {
            m = m.max(env(&e.iter().map(|v| v * r).collect::<Vec<_>>())?);
        }
        let shell = if dim == 1 { 2.0 } else { 2.0 * PI * r };
        tail += m * shell * r;
        r *= 2.0;
    }
    Ok(window.powi(dim as i32) * tail / (2.0 * PI).powi(dim as i32))
}

fn first_grid(dim: usize, cut: f64, window: f64, settings: &OracleSettings) -> Result<(usize, f64)> {
    // L1 sums of |f| lose accuracy at sign changes; a finer spatial step than pi / cut keeps that below the target.
    let h = PI / (cut * if dim == 1 { OVERSAMPLE_1D } else { OVERSAMPLE_2D });
    let cap = if dim == 1 { settings.max_points_1d } else { settings.max_points_2d_axis };
    let n = ((window / h).ceil() as usize).next_power_of_two().max(64);
    if n > cap {
        return Err(Error::Resolution(format!(
            "grid of {n} points per axis needed (window {window:.3e}, spacing {h:.3e}); limit is {cap}"
        )));
    }
    Ok((n, h))
}

fn window_for(width: f64, heavy: bool, offset: f64) -> f64 {
    let mult = if heavy { 1024.0 } else { 16.0 };
    mult * width + 2.0 * offset
}

fn clip(values: Vec<f64>, cell: f64) -> (Vec<f64>, f64, f64) {
    let mut clipped = 0.0;
    let mut min_raw = f64::INFINITY;
    let out = values
        .into_iter()
        .map(|v| {
            min_raw = min_raw.min(v);
            if v < 0.0 {
                clipped -= v * cell;
                0.0
            } else {
                v
            }
        })
        .collect();
    (out, clipped, min_raw)
}

fn check_model_dim(model: &OUModel) -> Result<()> {
    if model.dim() > 2 {
        return Err(Error::Unsupported(format!("Fourier inversion supports d <= 2, got {}", model.dim())));
    }
    Ok(())
}

/// Density of `X_t^x` on `grid`, or on an automatic grid centred at the law's location.
pub fn density_by_fft(model: &OUModel, t: f64, x: &[f64], grid: Option<&FftGrid>, settings: &OracleSettings) -> Result<FourierDensity> {
    check_model_dim(model)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("time must be positive and finite, got {t}")));
    }
    if x.len() != model.dim() {
        return Err(invalid("starting point has the wrong dimension"));
    }
    let law = LawParts::new(model, t)?;
    let mx = model.flow(x, t)?;
    density_of(model.dim(), &law, &mx, grid, settings)
}

/// Density of the invariant law.
pub fn stationary_density(model: &OUModel, grid: Option<&FftGrid>, settings: &OracleSettings) -> Result<FourierDensity> {
    check_model_dim(model)?;
    let law = LawParts::stationary(model)?;
    density_of(model.dim(), &law, &vec![0.0; model.dim()], grid, settings)
}

fn density_of(dim: usize, law: &LawParts, mx: &[f64], grid: Option<&FftGrid>, settings: &OracleSettings) -> Result<FourierDensity> {
    let env = |xi: &[f64]| law.continuous_abs(xi);
    let (grid, shift, cut) = match grid {
        Some(g) => {
            if g.dim() != dim {
                return Err(invalid("grid dimension differs from the model"));
            }
            (g.clone(), sub(&g.center, mx), f64::INFINITY)
        }
        None => {
            let (cut, width) = scales(dim, &env, settings.cf_tol)?;
            let (n, h) = first_grid(dim, cut, window_for(width, law.heavy, 0.0), settings)?;
            (FftGrid::new(mx.to_vec(), n, h)?, vec![0.0; dim], cut)
        }
    };
    // The continuous part of X_t^x - center is that of Y_t shifted by center - e^{tA} x.
    let f = |xi: &[f64]| law.continuous(xi, &shift);
    let raw = invert(&grid, &f, cut, &settings.execution)?;
    let (values, clipped_mass, min_raw) = clip(raw, grid.cell_volume());
    let atom = law.atom.as_ref().map(|(z, m)| (z.iter().zip(mx).map(|(a, b)| a + b).collect(), *m));
    Ok(FourierDensity { grid, values, atom, clipped_mass, min_raw })
}

/// `||P_t(x, .) - P_t(y, .)||_var` from the inverse transform of the difference.
///
/// Only `e^{tA}(y - x)` enters, so the value is translation invariant by construction. The error bar is the
/// change when the spatial window is halved (aliasing) plus the frequency-truncation bound.
pub fn tv_distance_oracle(model: &OUModel, t: f64, x: &[f64], y: &[f64], settings: &OracleSettings) -> Result<TvEstimate> {
    check_model_dim(model)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("time must be positive and finite, got {t}")));
    }
    if x.len() != model.dim() || y.len() != model.dim() {
        return Err(invalid("starting points have the wrong dimension"));
    }
    let delta = model.flow(&sub(y, x), t)?;
    if delta.iter().all(|v| *v == 0.0) {
        return Ok(TvEstimate { value: 0.0, error: 0.0, points: 0, spacing: 0.0, bracketed: false });
    }
    match tv_for_gap(model, t, &delta, settings) {
        Err(Error::Resolution(why)) => bracket(model, t, &delta, settings).map_err(|_| Error::Resolution(why)),
        other => other,
    }
}

/// TV between `P_t(x, .)` and `P_t(y, .)` given `delta = e^{tA}(y - x)`.
fn tv_for_gap(model: &OUModel, t: f64, delta: &[f64], settings: &OracleSettings) -> Result<TvEstimate> {
    let law = LawParts::new(model, t)?;
    let half: Vec<f64> = delta.iter().map(|v| 0.5 * v).collect();
    let neg: Vec<f64> = half.iter().map(|v| -v).collect();
    // With c the midpoint of the two locations, X^x - c = Y - half and X^y - c = Y + half.
    let diff = |xi: &[f64]| -> Result<Complex64> { Ok(law.continuous(xi, &half)? - law.continuous(xi, &neg)?) };
    let env = |xi: &[f64]| law.continuous_abs(xi).map(|v| 2.0 * v);
    let atoms = law.atom.as_ref().map_or(0.0, |a| 2.0 * a.1);
    tv_from_difference(model.dim(), &diff, &env, law.heavy, norm(delta), atoms, settings)
}

/// Bracket for laws too rough to invert on the grid.
///
/// Below: `|E e^{i<xi,X^x>} - E e^{i<xi,X^y>}|` at any `xi` bounds the TV from below. Above: `X_t` is
/// `e^{tau A} X_{t-tau}` plus an independent copy of `Y_tau`, and convolution only shrinks TV, so the TV
/// at `tau` for the same gap `delta` bounds it from above. `tau` is halved until the grid resolves it.
fn bracket(model: &OUModel, t: f64, delta: &[f64], settings: &OracleSettings) -> Result<TvEstimate> {
    let sym = AccumulatedSymbol::new(model, t)?;
    let dn = norm(delta);
    let unit: Vec<f64> = delta.iter().map(|v| v / dn).collect();
    let mut lower = 0.0f64;
    for k in 0..=200 {
        let r = PI / dn * 10f64.powf(-0.1 * k as f64);
        let xi: Vec<f64> = unit.iter().map(|u| u * r).collect();
        lower = lower.max((-sym.re(&xi)?).exp() * 2.0 * (0.5 * r * dn).sin().abs());
    }
    let mut tau = 0.5 * t;
    for _ in 0..12 {
        match tv_for_gap(model, tau, delta, settings) {
            Ok(e) => {
                let upper = (e.value + e.error).min(2.0).max(lower);
                return Ok(TvEstimate {
                    value: 0.5 * (upper + lower),
                    error: 0.5 * (upper - lower),
                    points: e.points,
                    spacing: e.spacing,
                    bracketed: true,
                });
            }
            Err(Error::Resolution(_)) => tau *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Resolution("no earlier horizon resolves the gap".into()))
}

/// `||P_t(x, .) - mu||_var` against the invariant law.
pub fn tv_to_stationary(model: &OUModel, t: f64, x: &[f64], settings: &OracleSettings) -> Result<TvEstimate> {
    check_model_dim(model)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("time must be positive and finite, got {t}")));
    }
    let law = LawParts::new(model, t)?;
    let inv = LawParts::stationary(model)?;
    let mx = model.flow(x, t)?;
    let half: Vec<f64> = mx.iter().map(|v| 0.5 * v).collect();
    let neg: Vec<f64> = half.iter().map(|v| -v).collect();
    // Centre c = e^{tA}x / 2: X^x - c = Y_t + half, X_inf - c = X_inf - half.
    let diff = |xi: &[f64]| -> Result<Complex64> { Ok(law.continuous(xi, &neg)? - inv.continuous(xi, &half)?) };
    let env = |xi: &[f64]| Ok(law.continuous_abs(xi)? + inv.continuous_abs(xi)?);
    let atoms = law.atom.as_ref().map_or(0.0, |a| a.1);
    let offset = norm(&mx) + norm(&inv.sym.drift) + norm(&law.sym.drift);
    tv_from_difference(model.dim(), &diff, &env, law.heavy, offset, atoms, settings)
}

fn tv_from_difference(
    dim: usize,
    diff: &(dyn Fn(&[f64]) -> Result<Complex64> + Sync),
    env: &dyn Fn(&[f64]) -> Result<f64>,
    heavy: bool,
    offset: f64,
    atoms: f64,
    settings: &OracleSettings,
) -> Result<TvEstimate> {
    let (cut, width) = scales(dim, env, settings.cf_tol)?;
    let (mut n, h) = first_grid(dim, cut, window_for(width, heavy, offset), settings)?;
    let cap = if dim == 1 { settings.max_points_1d } else { settings.max_points_2d_axis };
    let l1 = |n: usize| -> Result<f64> {
        let g = FftGrid::new(vec![0.0; dim], n, h)?;
        let v = invert(&g, diff, cut, &settings.execution)?;
        Ok(v.iter().map(|x| x.abs()).sum::<f64>() * g.cell_volume())
    };
    let mut prev = l1(n / 2)?;
    let mut cur = l1(n)?;
    while (cur - prev).abs() > settings.target && 2 * n <= cap {
        n *= 2;
        prev = cur;
        cur = l1(n)?;
    }
    let trunc = truncation_error(dim, env, cut, n as f64 * h)?;
    let value = (cur + atoms).clamp(0.0, 2.0);
    Ok(TvEstimate { value, error: (cur - prev).abs() + trunc, points: n, spacing: h, bracketed: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyTriplet;

    fn brownian(a: f64) -> OUModel {
        let t = LevyTriplet::new(SquareMatrix::identity(1), vec![0.0], LevyMeasure::zero(1).unwrap()).unwrap();
        OUModel::new(SquareMatrix::scalar(a).unwrap(), t).unwrap()
    }

    #[test]
    fn zero_horizon_is_zero() {
        let m = brownian(-1.0);
        assert_eq!(accumulated_symbol(&m, 0.0, &[3.0]).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(AccumulatedSymbol::new(&m, 0.0).unwrap().eval(&[3.0]).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn growth_limits() {
        assert!((growth(-2.0, 50.0, false) - 0.5).abs() < 1e-12);
        assert_eq!(growth(-2.0, 5.0, true), 0.5);
        assert!((growth(1e-12, 3.0, false) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn fast_and_adaptive_agree_for_general_drift() {
        let a = SquareMatrix::from_row_major(2, &[-1.0, 0.7, -0.3, -0.6]).unwrap();
        let nu = LevyMeasure::sum(vec![LevyMeasure::stable(2, 1.3, 0.4).unwrap(), LevyMeasure::gaussian(0.8, vec![0.3, -0.2], 0.5).unwrap()]).unwrap();
        let t = LevyTriplet::new(SquareMatrix::diagonal(&[0.2, 0.1]).unwrap(), vec![0.3, 0.1], nu).unwrap();
        let m = OUModel::new(a, t).unwrap();
        let fast = AccumulatedSymbol::new(&m, 2.5).unwrap();
        for xi in [[1.0, 0.0], [-2.0, 3.0], [0.1, 0.05]] {
            let u = fast.eval(&xi).unwrap();
            let v = accumulated_symbol(&m, 2.5, &xi).unwrap();
            assert!((u - v).norm() < 1e-7 * (1.0 + v.norm()), "{u} vs {v}");
        }
    }

    #[test]
    fn bounded_phi_reports_the_bound() {
        let nu = LevyMeasure::gaussian(1.5, vec![0.0], 1.0).unwrap();
        let m = OUModel::new(SquareMatrix::scalar(-1.0).unwrap(), LevyTriplet::pure_jump(nu)).unwrap();
        match phi_t_inverse(&m, 2.0, 7.0) {
            Err(Error::Domain(msg)) => assert!(msg.contains('6')),
            other => panic!("{other:?}"),
        }
    }
}

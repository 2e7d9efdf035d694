//! Simulation of `X_t = e^{tA} x + int_0^t e^{(t-s)A} dZ_s`, the invariant law and the last-jump coupling.
//!
//! Everything except jumps below the truncation level is sampled exactly: the flow and drift integral by
//! matrix exponentials, the Gaussian part from its covariance, isotropic stable parts (scalar `A` only)
//! by self-similarity, and big jumps at their arrival times. No time stepping is involved.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditions::check_log_moment;
use crate::error::{invalid, Error, Result};
use crate::levy::{isotropic_stable, moment_integral, DrivingPlan, LevyTriplet, Mark, MomentKind, SmallJumpScheme, TruncatedMeasure};
use crate::matrix::{gaussian_convolution_covariance, integrated_exponential, matrix_exponential, psd_sqrt, spectral_profile, SpectralProfile, SquareMatrix};
use crate::rng::{Execution, RandomStream};
use crate::stats::mean_and_se;
use crate::vecops::{axpy, norm, sub};

/// `dX = AX dt + dZ` with cached spectral data of `A`.
#[derive(Debug, Clone)]
pub struct OUModel {
    a: SquareMatrix,
    triplet: LevyTriplet,
    spectral: SpectralProfile,
}

impl OUModel {
    pub fn new(a: SquareMatrix, triplet: LevyTriplet) -> Result<Self> {
        if a.dim() != triplet.dim() {
            return Err(invalid(format!("drift matrix is {}x{} but the noise lives in dimension {}", a.dim(), a.dim(), triplet.dim())));
        }
        let spectral = spectral_profile(&a)?;
        Ok(OUModel { a, triplet, spectral })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn a(&self) -> &SquareMatrix {
        &self.a
    }

    pub fn triplet(&self) -> &LevyTriplet {
        &self.triplet
    }

    pub fn spectral(&self) -> &SpectralProfile {
        &self.spectral
    }

    /// `e^{tA} x`.
    pub fn flow(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(matrix_exponential(&self.a, t)?.apply(x))
    }

    /// Stable parts can be propagated exactly only when `A` commutes with rotations.
    pub fn exact_stable_allowed(&self) -> bool {
        self.dim() == 1 || self.a.as_scalar_multiple().is_some()
    }
}

/// Arrival times and marks of the compound-Poisson part on `[0, t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundPoissonPath {
    /// Inter-arrival clocks `tau_i`, i.i.d. exponential with rate `C_eps`.
    pub clocks: Vec<f64>,
    pub marks: Vec<Vec<f64>>,
    pub horizon: f64,
}

impl CompoundPoissonPath {
    /// Draws clocks until their sum passes `t`; the last clock is discarded.
    pub fn sample(jumps: &TruncatedMeasure, t: f64, rng: &mut RandomStream) -> Result<Self> {
        let rate = jumps.total_mass();
        let mut clocks = Vec::new();
        let mut marks = Vec::new();
        if rate > 0.0 {
            let mut s = 0.0;
            loop {
                let tau = -rng.open01().ln() / rate;
                if s + tau > t {
                    break;
                }
                s += tau;
                clocks.push(tau);
                marks.push(jumps.sample(rng)?.z);
            }
        }
        Ok(CompoundPoissonPath { clocks, marks, horizon: t })
    }

    /// `N_t`.
    pub fn count(&self) -> usize {
        self.clocks.len()
    }

    pub fn arrival_times(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.clocks
            .iter()
            .map(|c| {
                acc += c;
                acc
            })
            .collect()
    }

    /// `sum_k e^{(t - s_k)A} U_k`.
    pub fn convolve(&self, a: &SquareMatrix) -> Result<Vec<f64>> {
        let mut out = vec![0.0; a.dim()];
        for (s, u) in self.arrival_times().iter().zip(&self.marks) {
            axpy(&mut out, 1.0, &propagate(a, self.horizon - s, u)?);
        }
        Ok(out)
    }
}

fn propagate(a: &SquareMatrix, t: f64, v: &[f64]) -> Result<Vec<f64>> {
    if let Some(l) = a.as_scalar_multiple() {
        let f = (l * t).exp();
        return Ok(v.iter().map(|x| x * f).collect());
    }
    Ok(matrix_exponential(a, t)?.apply(v))
}

/// Everything needed to draw `X_t` repeatedly at a fixed horizon.
#[derive(Debug, Clone)]
pub struct EndpointSampler {
    a: SquareMatrix,
    t: f64,
    flow: SquareMatrix,
    /// `int_0^t e^{sA} ds b'` with `b'` the drift of the sampled pieces.
    drift: Vec<f64>,
    chol: DMatrix<f64>,
    /// `(index, scale)`: the stable part contributes `scale * S` with `E e^{i xi S} = e^{-|xi|^index}`.
    stable: Vec<(f64, f64)>,
    jumps: Option<TruncatedMeasure>,
    scheme: SmallJumpScheme,
}

impl EndpointSampler {
    pub fn new(model: &OUModel, t: f64, scheme: SmallJumpScheme) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid(format!("time must be finite and nonnegative, got {t}")));
        }
        let plan = DrivingPlan::new(&model.triplet, scheme, model.exact_stable_allowed())?;
        let flow = matrix_exponential(&model.a, t)?;
        if flow.matrix().iter().any(|v| v.abs() > 1e150) {
            return Err(Error::Numeric { what: format!("flow e^(tA) overflows at t = {t}"), residual: f64::INFINITY });
        }
        let drift = integrated_exponential(&model.a, t)?.apply(&plan.drift);
        let cov = gaussian_convolution_covariance(&model.a, &SquareMatrix::new(plan.covariance.clone())?, t)?;
        let chol = psd_sqrt(cov.matrix());
        let stable = plan
            .stable
            .iter()
            .map(|&(index, kappa)| {
                // A = l I: int_0^t kappa |e^{l s} xi|^index ds = kappa |xi|^index (e^{index l t} - 1) / (index l).
                let l = model.a.as_scalar_multiple().unwrap_or_else(|| model.a.matrix()[(0, 0)]);
                let m = if (index * l * t).abs() < 1e-10 { t } else { (index * l * t).exp_m1() / (index * l) };
                (index, (kappa * m).powf(1.0 / index))
            })
            .collect();
        Ok(EndpointSampler { a: model.a.clone(), t, flow, drift, chol, stable, jumps: plan.jumps, scheme })
    }

    pub fn scheme(&self) -> SmallJumpScheme {
        self.scheme
    }

    pub fn jumps(&self) -> Option<&TruncatedMeasure> {
        self.jumps.as_ref()
    }

    /// The noise part `Y_t` minus its compound-Poisson component, plus the drift integral.
    fn continuous_part(&self, rng: &mut RandomStream) -> Vec<f64> {
        let d = self.drift.len();
        let mut y = self.drift.clone();
        if self.chol.iter().any(|v| *v != 0.0) {
            let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            for i in 0..d {
                y[i] += (0..d).map(|j| self.chol[(i, j)] * g[j]).sum::<f64>();
            }
        }
        for &(index, scale) in &self.stable {
            axpy(&mut y, scale, &isotropic_stable(d, index, rng));
        }
        y
    }

    /// One draw of `X_t^x` together with the jump path used.
    pub fn draw_with_path(&self, x: &[f64], rng: &mut RandomStream) -> Result<(Vec<f64>, CompoundPoissonPath)> {
        let mut out = self.flow.apply(x);
        axpy(&mut out, 1.0, &self.continuous_part(rng));
        let path = match &self.jumps {
            Some(j) => CompoundPoissonPath::sample(j, self.t, rng)?,
            None => CompoundPoissonPath { clocks: vec![], marks: vec![], horizon: self.t },
        };
        axpy(&mut out, 1.0, &path.convolve(&self.a)?);
        Ok((out, path))
    }

    pub fn draw(&self, x: &[f64], rng: &mut RandomStream) -> Result<Vec<f64>> {
        Ok(self.draw_with_path(x, rng)?.0)
    }
}

/// One draw of `X_t^x`.
pub fn simulate_endpoint(model: &OUModel, x: &[f64], t: f64, scheme: SmallJumpScheme, rng: &mut RandomStream) -> Result<Vec<f64>> {
    check_start(model, x)?;
    EndpointSampler::new(model, t, scheme)?.draw(x, rng)
}

/// One draw of `Y_t = int_0^t e^{(t-s)A} dZ_s`.
pub fn simulate_convolution(model: &OUModel, t: f64, scheme: SmallJumpScheme, rng: &mut RandomStream) -> Result<Vec<f64>> {
    simulate_endpoint(model, &vec![0.0; model.dim()], t, scheme, rng)
}

/// `n` endpoint draws, chunk `k` seeded from `stream.split(k)`.
pub fn simulate_many(model: &OUModel, x: &[f64], t: f64, scheme: SmallJumpScheme, n: usize, stream: &RandomStream, exec: &Execution) -> Result<Vec<Vec<f64>>> {
    check_start(model, x)?;
    let s = EndpointSampler::new(model, t, scheme)?;
    exec.sample(n, stream, |rng| s.draw(x, rng)).into_iter().collect()
}

fn check_start(model: &OUModel, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() || x.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("starting point must be a finite vector of length {}", model.dim())));
    }
    Ok(())
}

/// Horizon used by the invariant sampler for a given tail tolerance.
///
/// `T = log(c s / tol) / lambda` with `(c, lambda)` the decay envelope and `s` a crude size of the noise:
/// drift, Gaussian scale, mass of big jumps and the small-jump second moment.
pub fn invariant_horizon(model: &OUModel, tail_tol: f64) -> Result<f64> {
    let sp = &model.spectral;
    if !sp.strictly_stable {
        return Err(Error::Precondition("an invariant law needs a strictly stable drift matrix".into()));
    }
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(invalid(format!("tail tolerance must lie in (0, 1), got {tail_tol}")));
    }
    let nu = model.triplet.nu();
    let small = match moment_integral(nu, MomentKind::SquareSmall)? {
        crate::levy::MomentValue::Finite(v) => v,
        crate::levy::MomentValue::Divergent => f64::INFINITY,
    };
    let scale = 1.0 + norm(model.triplet.b()) + model.triplet.q().matrix().trace().sqrt() + nu.mass_beyond(1.0)? + small.sqrt();
    Ok(((sp.envelope_c * scale / tail_tol).ln() / sp.envelope_lambda).max(1.0))
}

/// A draw of `int_0^T e^{sA} dZ_s` (equal in law to `Y_T`), `T` from [`invariant_horizon`].
pub fn sample_invariant(model: &OUModel, scheme: SmallJumpScheme, tail_tol: f64, rng: &mut RandomStream) -> Result<Vec<f64>> {
    let t = invariant_precheck(model, tail_tol)?;
    simulate_convolution(model, t, scheme, rng)
}

fn invariant_precheck(model: &OUModel, tail_tol: f64) -> Result<f64> {
    let t = invariant_horizon(model, tail_tol)?;
    if !check_log_moment(model.triplet.nu()).passed() {
        return Err(Error::Precondition("the log moment of the big jumps is not finite".into()));
    }
    Ok(t)
}

/// `n` invariant draws and the horizon used.
pub fn sample_invariant_many(model: &OUModel, scheme: SmallJumpScheme, tail_tol: f64, n: usize, stream: &RandomStream, exec: &Execution) -> Result<(Vec<Vec<f64>>, f64)> {
    let t = invariant_precheck(model, tail_tol)?;
    Ok((simulate_many(model, &vec![0.0; model.dim()], t, scheme, n, stream, exec)?, t))
}

/// Endpoints of the pair started at `x` and `y` under the last-jump coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledEndpoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub coupled: bool,
    pub n_jumps: usize,
    pub last_jump_time: Option<f64>,
}

/// Sampler for the coupled pair at a fixed horizon and truncation level.
///
/// Jumps of size at least `epsilon` form the compound-Poisson part; smaller ones are replaced by their
/// Gaussian moment match and shared by both copies, as are the drift and Gaussian parts, the clocks and
/// every mark but the last. The last marks are maximally coupled against the shift `e^{s_N A}(y - x)`,
/// which makes the two endpoints coincide on success.
#[derive(Debug, Clone)]
pub struct CouplingSampler {
    inner: EndpointSampler,
    jumps: TruncatedMeasure,
}

impl CouplingSampler {
    pub fn new(model: &OUModel, epsilon: f64, t: f64) -> Result<Self> {
        if !model.spectral.weakly_stable_semisimple {
            return Err(Error::Precondition("the coupling needs Re(eig A) <= 0 with semisimple imaginary eigenvalues".into()));
        }
        let scheme = SmallJumpScheme { epsilon, gaussian_fill: true, exact_stable: false };
        let inner = EndpointSampler::new(model, t, scheme)?;
        let jumps = inner.jumps.clone().ok_or_else(|| Error::Config(format!("no jumps of size >= {epsilon}: C_eps = 0")))?;
        Ok(CouplingSampler { inner, jumps })
    }

    /// Scheme under which the marginals are exact [`simulate_endpoint`] laws.
    pub fn scheme(&self) -> SmallJumpScheme {
        self.inner.scheme
    }

    /// `C_eps`.
    pub fn rate(&self) -> f64 {
        self.jumps.total_mass()
    }

    pub fn draw(&self, x: &[f64], y: &[f64], rng: &mut RandomStream) -> Result<CoupledEndpoint> {
        let a = &self.inner.a;
        let t = self.inner.t;
        let common = self.inner.continuous_part(rng);
        let mut path = CompoundPoissonPath::sample(&self.jumps, t, rng)?;
        let n = path.count();
        let mut ex = self.inner.flow.apply(x);
        let mut ey = self.inner.flow.apply(y);
        axpy(&mut ex, 1.0, &common);
        axpy(&mut ey, 1.0, &common);
        if n == 0 {
            return Ok(CoupledEndpoint { x: ex, y: ey, coupled: false, n_jumps: 0, last_jump_time: None });
        }
        let s_last = path.arrival_times()[n - 1];
        // Redraw the last mark jointly: U for x, W for y, with W = U + e^{s_N A}(x - y) on success.
        let shift = propagate(a, s_last, &sub(y, x))?;
        let (u, u_shifted, coupled): (Mark, Mark, bool) = self.jumps.maximal_coupling(&shift, rng)?;
        let w = sub(&u_shifted.z, &shift);
        path.marks[n - 1] = u.z.clone();
        let shared = path.convolve(a)?;
        axpy(&mut ex, 1.0, &shared);
        if coupled {
            return Ok(CoupledEndpoint { y: ex.clone(), x: ex, coupled: true, n_jumps: n, last_jump_time: Some(s_last) });
        }
        axpy(&mut ey, 1.0, &shared);
        axpy(&mut ey, 1.0, &propagate(a, t - s_last, &sub(&w, &u.z))?);
        Ok(CoupledEndpoint { x: ex, y: ey, coupled: false, n_jumps: n, last_jump_time: Some(s_last) })
    }
}

pub fn coupled_pair_endpoint(model: &OUModel, x: &[f64], y: &[f64], epsilon: f64, t: f64, rng: &mut RandomStream) -> Result<CoupledEndpoint> {
    check_start(model, x)?;
    check_start(model, y)?;
    CouplingSampler::new(model, epsilon, t)?.draw(x, y, rng)
}

/// Summary of many coupled draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingStats {
    pub t: f64,
    pub n: usize,
    pub coupled: usize,
    pub no_jump: usize,
    /// `2 P(not coupled)`, an upper bound for the TV distance.
    pub tv_bound: f64,
    pub tv_bound_se: f64,
    pub p_no_jump: f64,
    pub p_no_jump_se: f64,
    pub rate: f64,
}

pub fn coupling_frequency(model: &OUModel, x: &[f64], y: &[f64], epsilon: f64, t: f64, n: usize, stream: &RandomStream, exec: &Execution) -> Result<CouplingStats> {
    check_start(model, x)?;
    check_start(model, y)?;
    let s = CouplingSampler::new(model, epsilon, t)?;
    let flags: Vec<Result<(bool, bool)>> = exec.sample(n, stream, |rng| s.draw(x, y, rng).map(|c| (c.coupled, c.n_jumps == 0)));
    let mut coupled = 0;
    let mut none = 0;
    for f in flags {
        let (c, z) = f?;
        coupled += c as usize;
        none += z as usize;
    }
    let p_nc = (n - coupled) as f64 / n as f64;
    let p0 = none as f64 / n as f64;
    let se = |p: f64| (p * (1.0 - p) / n as f64).sqrt();
    Ok(CouplingStats {
        t,
        n,
        coupled,
        no_jump: none,
        tv_bound: 2.0 * p_nc,
        tv_bound_se: 2.0 * se(p_nc),
        p_no_jump: p0,
        p_no_jump_se: se(p0),
        rate: s.rate(),
    })
}

/// One row of the moment table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub alpha: f64,
    pub rows: Vec<MomentRow>,
    /// The last three means agree pairwise within their combined 3-sigma bands.
    pub plateau: bool,
}

/// Monte Carlo `E|Y_t|^alpha` over a time grid.
pub fn uniform_moment_check(model: &OUModel, alpha: f64, t_grid: &[f64], n: usize, scheme: SmallJumpScheme, stream: &RandomStream, exec: &Execution) -> Result<MomentTable> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if !moment_integral(model.triplet.nu(), MomentKind::Power(alpha))?.is_finite() {
        return Err(Error::Precondition(format!("the order-{alpha} moment of the big jumps is infinite")));
    }
    if n < 2 {
        return Err(invalid("need at least two draws per time"));
    }
    let zero = vec![0.0; model.dim()];
    let mut rows = Vec::with_capacity(t_grid.len());
    for (k, &t) in t_grid.iter().enumerate() {
        let ys = simulate_many(model, &zero, t, scheme, n, &stream.split(k as u64), exec)?;
        let vals: Vec<f64> = ys.iter().map(|y| norm(y).powf(alpha)).collect();
        let (mean, se) = mean_and_se(&vals);
        rows.push(MomentRow { t, mean, se });
    }
    let plateau = rows.len() >= 3 && {
        let tail = &rows[rows.len() - 3..];
        tail.iter().all(|a| tail.iter().all(|b| (a.mean - b.mean).abs() <= 3.0 * (a.se * a.se + b.se * b.se).sqrt()))
    };
    Ok(MomentTable { alpha, rows, plateau })
}

use std::f64::consts::{E, PI};

use num_complex::Complex64;
use statrs::function::gamma::gamma;

use super::measure::{DensityKind, LevyMeasure, Region, Shape};
use crate::error::{invalid, Error, Result};
use crate::matrix::{check_psd, SquareMatrix};
use crate::quad::{integrate, Tolerance};
use crate::vecops::{dot, norm, sphere_area};

/// The generating triplet `(Q, b, nu)` of a Levy process.
///
/// `b` is the drift: a triplet with `Q = 0` and `nu = 0` moves as `Z_t = t b`.
#[derive(Debug, Clone)]
pub struct LevyTriplet {
    q: SquareMatrix,
    b: Vec<f64>,
    nu: LevyMeasure,
}

impl LevyTriplet {
    pub fn new(q: SquareMatrix, b: Vec<f64>, nu: LevyMeasure) -> Result<Self> {
        let d = q.dim();
        if b.len() != d || nu.dim() != d {
            return Err(invalid(format!("triplet dimensions disagree: Q is {d}x{d}, b has {}, nu has {}", b.len(), nu.dim())));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(invalid("drift has non-finite entries"));
        }
        check_psd(&q)?;
        Ok(LevyTriplet { q, b, nu })
    }

    /// Pure-jump triplet with no drift.
    pub fn pure_jump(nu: LevyMeasure) -> Self {
        let d = nu.dim();
        LevyTriplet { q: SquareMatrix::zeros(d), b: vec![0.0; d], nu }
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    pub fn q(&self) -> &SquareMatrix {
        &self.q
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn nu(&self) -> &LevyMeasure {
        &self.nu
    }

    pub fn has_gaussian_part(&self) -> bool {
        self.q.matrix().iter().any(|v| *v != 0.0)
    }
}

/// `K(d, a)` with `int (1 - cos <xi, z>) |z|^{-d-a} dz = K(d, a) |xi|^a`.
pub fn stable_symbol_constant(dim: usize, index: f64) -> f64 {
    let d = dim as f64;
    PI.powf(d / 2.0) * gamma(1.0 - index / 2.0) / (index * 2f64.powf(index - 1.0) * gamma((d + index) / 2.0))
}

/// `Phi(xi)` with the convention `E exp(i <xi, Z_t>) = exp(-t Phi(xi))`.
pub fn symbol(triplet: &LevyTriplet, xi: &[f64]) -> Result<Complex64> {
    check_xi(triplet.dim(), xi)?;
    let qx = triplet.q.apply(xi);
    let gauss = 0.5 * dot(&qx, xi);
    let drift = dot(&triplet.b, xi);
    let jump = jump_symbol(&triplet.nu, xi)?;
    Ok(Complex64::new(gauss, -drift) + jump)
}

fn check_xi(d: usize, xi: &[f64]) -> Result<()> {
    if xi.len() != d {
        return Err(invalid(format!("frequency has length {}, expected {d}", xi.len())));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(invalid("frequency has non-finite entries"));
    }
    Ok(())
}

/// `int (1 - e^{i<xi,z>} + i <xi,z> 1{|z|<1}) nu(dz)`.
pub fn jump_symbol(nu: &LevyMeasure, xi: &[f64]) -> Result<Complex64> {
    check_xi(nu.dim(), xi)?;
    let k = norm(xi);
    if k == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let mut total = Complex64::new(0.0, 0.0);
    for leaf in nu.leaves() {
        total += leaf_symbol(leaf, xi, k)?;
    }
    Ok(total)
}

fn jump_integrand(xi: &[f64]) -> impl Fn(&[f64]) -> Complex64 + '_ {
    move |z: &[f64]| {
        let p = dot(xi, z);
        let comp = if dot(z, z) < 1.0 { p } else { 0.0 };
        Complex64::new(2.0 * (0.5 * p).sin().powi(2), comp - p.sin())
    }
}

fn leaf_symbol(leaf: &LevyMeasure, xi: &[f64], k: f64) -> Result<Complex64> {
    let d = leaf.dim();
    let tol = Tolerance::default();
    match leaf {
        LevyMeasure::Atoms { atoms, .. } => {
            let f = jump_integrand(xi);
            Ok(atoms.iter().map(|a| f(&a.location) * a.mass).sum())
        }
        LevyMeasure::Stable { index, scale, .. } => Ok(Complex64::new(scale * stable_symbol_constant(d, *index) * k.powf(*index), 0.0)),
        LevyMeasure::Density { kind: DensityKind::Gaussian { mass, mean, std }, .. } => {
            let phase = dot(xi, mean);
            let damp = (-0.5 * std * std * k * k).exp();
            let mut v = Complex64::new(mass * (1.0 - damp * phase.cos()), -mass * damp * phase.sin());
            if phase == 0.0 {
                // Avoid cancellation in 1 - exp(-s^2 k^2 / 2) at small k.
                v.re = -mass * (-0.5 * std * std * k * k).exp_m1();
            }
            if norm(mean) > 0.0 {
                let comp = leaf.integrate(Region::new(0.0, 1.0, false), Shape::General, &[], &|z: &[f64]| dot(xi, z), tol)?;
                v.im += comp.value;
            }
            Ok(v)
        }
        LevyMeasure::Density { kind: DensityKind::LogTail { scale }, .. } => {
            if d != 1 {
                return Err(Error::Unsupported("symbol of the log-tail density is implemented for d = 1 only".into()));
            }
            // Even density: the symbol is real.
            log_tail_symbol_1d(*scale, k).map(|v| Complex64::new(v, 0.0))
        }
        _ => {
            let e: Vec<f64> = xi.iter().map(|v| v / k).collect();
            let shape = if leaf.is_isotropic() { Shape::Axial(&e) } else { Shape::General };
            let est = leaf.integrate(Region::all(), shape, &[1.0, 1.0 / k], &jump_integrand(xi), tol)?;
            Ok(est.value)
        }
    }
}

/// `2 s int_e^inf (1 - cos(k r)) / (r log^2 r) dr`, with the oscillatory tail summed by three integrations by parts.
fn log_tail_symbol_1d(scale: f64, k: f64) -> Result<f64> {
    let g = |r: f64| 1.0 / (r * r.ln().powi(2));
    // Remainder after three integrations by parts is at most |g''(R)| / k^3.
    let g1 = |r: f64| {
        let l = r.ln();
        -(l.powi(-2) + 2.0 * l.powi(-3)) / (r * r)
    };
    let g2 = |r: f64| {
        let l = r.ln();
        (2.0 * l.powi(-2) + 6.0 * l.powi(-3) + 6.0 * l.powi(-4)) / r.powi(3)
    };
    let mut big_r = (E * 4.0).max(8.0 * PI / k);
    while g2(big_r) / k.powi(3) > 1e-11 {
        big_r *= 2.0;
    }
    let period = 2.0 * PI / k;
    let breaks: Vec<f64> = (1..)
        .map(|n| n as f64 * period)
        .take_while(|x| *x < big_r)
        .take(4000)
        .collect();
    let head = integrate(|r: f64| 2.0 * (0.5 * k * r).sin().powi(2) * g(r), E, big_r, &breaks, Tolerance::new(1e-12, 1e-10))?;
    let (s, c) = (k * big_r).sin_cos();
    // int_R^inf cos(k r) g(r) dr, expanded to three terms.
    let cos_tail = -s * g(big_r) / k - c * g1(big_r) / (k * k) + s * g2(big_r) / k.powi(3);
    let mass_tail = 1.0 / big_r.ln();
    Ok(2.0 * scale * (head.value + mass_tail - cos_tail))
}

/// `int_{|z| <= 1/|xi|} <z, xi>^2 nu(dz)`.
pub fn small_ball_second_moment(nu: &LevyMeasure, xi: &[f64]) -> Result<f64> {
    check_xi(nu.dim(), xi)?;
    let k = norm(xi);
    if k == 0.0 {
        return Err(invalid("the small-ball moment needs xi != 0"));
    }
    let d = nu.dim();
    let e: Vec<f64> = xi.iter().map(|v| v / k).collect();
    let mut total = 0.0;
    for leaf in nu.leaves() {
        total += match leaf {
            LevyMeasure::Stable { index, scale, .. } => scale * sphere_area(d) * k.powf(*index) / (d as f64 * (2.0 - index)),
            _ => {
                let shape = if leaf.is_isotropic() { Shape::Axial(&e) } else { Shape::General };
                leaf.integrate(Region::new(0.0, 1.0 / k, true), shape, &[], &|z: &[f64]| dot(z, xi).powi(2), Tolerance::default())?
                    .value
            }
        };
    }
    Ok(total)
}

/// `(cos 1)/2 * int_{|z| <= 1/|xi|} <z, xi>^2 nu(dz)`, a lower bound for the real part of the jump symbol.
pub fn re_symbol_small_jump_bound(nu: &LevyMeasure, xi: &[f64]) -> Result<f64> {
    Ok(0.5 * 1f64.cos() * small_ball_second_moment(nu, xi)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::measure::Atom;

    fn brownian() -> LevyTriplet {
        LevyTriplet::new(SquareMatrix::identity(1), vec![0.0], LevyMeasure::zero(1).unwrap()).unwrap()
    }

    #[test]
    fn brownian_symbol() {
        let v = symbol(&brownian(), &[2.0]).unwrap();
        assert!((v.re - 2.0).abs() < 1e-15 && v.im == 0.0);
    }

    #[test]
    fn drift_sign() {
        let t = LevyTriplet::new(SquareMatrix::zeros(1), vec![3.0], LevyMeasure::zero(1).unwrap()).unwrap();
        let v = symbol(&t, &[0.5]).unwrap();
        assert_eq!(v, Complex64::new(0.0, -1.5));
    }

    #[test]
    fn single_atom_symbol() {
        let nu = LevyMeasure::single_atom(vec![1.0], 1.0).unwrap();
        for xi in [0.3, 1.0, -2.5, 7.0] {
            let v = jump_symbol(&nu, &[xi]).unwrap();
            let want = Complex64::new(1.0, 0.0) - Complex64::new(0.0, xi).exp();
            assert!((v - want).norm() < 1e-15);
        }
    }

    #[test]
    fn compensated_atom_inside_unit_ball() {
        let nu = LevyMeasure::atoms(1, vec![Atom::new(vec![0.5], 2.0)]).unwrap();
        let v = jump_symbol(&nu, &[1.0]).unwrap();
        let want = (Complex64::new(1.0, 0.0) - Complex64::new(0.0, 0.5).exp() + Complex64::new(0.0, 0.5)) * 2.0;
        assert!((v - want).norm() < 1e-15);
    }

    #[test]
    fn stable_constant_in_one_dimension() {
        assert!((stable_symbol_constant(1, 1.0) - PI).abs() < 1e-12);
        let a: f64 = 0.7;
        let alt = 2.0 * gamma(1.0 - a) * (PI * a / 2.0).cos() / a;
        assert!((stable_symbol_constant(1, a) - alt).abs() < 1e-10);
    }

    #[test]
    fn off_centre_gaussian_symbol_matches_quadrature() {
        let nu = LevyMeasure::gaussian(1.5, vec![0.4], 0.3).unwrap();
        let xi = [2.3];
        let closed = jump_symbol(&nu, &xi).unwrap();
        let f = jump_integrand(&xi);
        let quad = integrate(|z: f64| f(&[z]) * nu.leaf_density(&[z]), -6.0, 6.0, &[-1.0, 1.0, 0.4], Tolerance::new(1e-13, 1e-12)).unwrap();
        assert!((closed - quad.value).norm() < 1e-9);
    }

    #[test]
    fn log_tail_symbol_matches_brute_force() {
        let xi = 3.0;
        let v = log_tail_symbol_1d(1.0, xi).unwrap();
        // Brute force: integrate up to a huge cutoff period by period; remaining mass bounds the error.
        let period = 2.0 * PI / xi;
        let mut acc = 0.0;
        let mut a = E;
        let mut b = period * ((E / period).floor() + 1.0);
        while b < 2e5 {
            acc += integrate(|r: f64| (1.0 - (xi * r).cos()) / (r * r.ln().powi(2)), a, b, &[], Tolerance::new(1e-15, 1e-12)).unwrap().value;
            a = b;
            b += period;
        }
        let tail = 1.0 / a.ln();
        let brute = 2.0 * (acc + tail);
        // The averaged cosine tail beyond 2e5 is far below 1e-6.
        assert!((v - brute).abs() < 1e-6, "{v} vs {brute}");
    }

    #[test]
    fn small_jump_bound_examples() {
        let far = LevyMeasure::atoms(1, vec![Atom::new(vec![1.5], 1.0), Atom::new(vec![-2.0], 3.0)]).unwrap();
        assert_eq!(re_symbol_small_jump_bound(&far, &[2.0]).unwrap(), 0.0);
        let st = LevyMeasure::stable(1, 1.3, 0.8).unwrap();
        let xi: f64 = 5.0;
        let want = 0.5 * 1f64.cos() * 2.0 * 0.8 * xi.powf(1.3) / (2.0 - 1.3);
        assert!((re_symbol_small_jump_bound(&st, &[xi]).unwrap() - want).abs() < 1e-12 * want);
    }

    #[test]
    fn stable_small_ball_closed_form_agrees_with_radial_quadrature() {
        let nu = LevyMeasure::stable(2, 0.9, 1.1).unwrap();
        let xi = [3.0, -1.0];
        let k = norm(&xi);
        let e: Vec<f64> = xi.iter().map(|v| v / k).collect();
        let quad = nu
            .integrate(Region::new(0.0, 1.0 / k, true), Shape::Axial(&e), &[], &|z: &[f64]| dot(z, &xi).powi(2), Tolerance::default())
            .unwrap();
        let closed = small_ball_second_moment(&nu, &xi).unwrap();
        assert!((quad.value - closed).abs() < 1e-7 * closed);
    }

    #[test]
    fn triplet_rejects_mismatch() {
        assert!(LevyTriplet::new(SquareMatrix::identity(2), vec![0.0], LevyMeasure::zero(2).unwrap()).is_err());
        let bad_q = SquareMatrix::from_row_major(2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(LevyTriplet::new(bad_q, vec![0.0; 2], LevyMeasure::zero(2).unwrap()).is_err());
    }
}

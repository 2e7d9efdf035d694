//! Matrix exponentials, spectral diagnostics and the decay envelope `|e^{tA}| <= c e^{-lambda t}`.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A finite, square, real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix(DMatrix<f64>);

impl SquareMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(invalid(format!("matrix must be square and non-empty, got {}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(invalid("matrix has non-finite entries"));
        }
        Ok(SquareMatrix(m))
    }

    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(invalid(format!("expected {} entries for a {dim}x{dim} matrix, got {}", dim * dim, entries.len())));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(dim: usize) -> Self {
        SquareMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SquareMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn scalar(a: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, a))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn transpose(&self) -> SquareMatrix {
        SquareMatrix(self.0.transpose())
    }

    pub fn row_major(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| self.0[(i, j)]).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.0[(i, j)] == 0.0))
    }

    /// `Some(a)` when the matrix equals `a * I`.
    pub fn as_scalar_multiple(&self) -> Option<f64> {
        let a = self.0[(0, 0)];
        (self.is_diagonal() && (0..self.dim()).all(|i| self.0[(i, i)] == a)).then_some(a)
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(v)).as_slice().to_vec()
    }
}

pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Spectral (operator 2-) norm.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_230e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA13: f64 = 5.371_920_351_148_152;

fn pade_coefficients(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        _ => &[
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ],
    }
}

fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu().solve(&p).expect("Pade denominator is nonsingular within the theta bounds")
}

fn expm_raw(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, a[(0, 0)].exp());
    }
    let ident = DMatrix::<f64>::identity(n, n);
    let nrm = norm1(a);
    for &(m, theta) in THETA.iter() {
        if nrm <= theta {
            let b = pade_coefficients(m);
            let a2 = a * a;
            let mut pow = ident.clone();
            let mut u_inner = &ident * b[1];
            let mut v = &ident * b[0];
            for k in 1..=m / 2 {
                pow = &pow * &a2;
                u_inner += &pow * b[2 * k + 1];
                v += &pow * b[2 * k];
            }
            return pade_solve(a * u_inner, v);
        }
    }
    let s = if nrm > THETA13 { (nrm / THETA13).log2().ceil().max(0.0) as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let b = pade_coefficients(13);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u1 = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = &a * (&a6 * u1 + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let v1 = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * v1 + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    let mut r = pade_solve(u, v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// `e^{tA}` by scaling and squaring with a diagonal Pade approximant.
pub fn matrix_exponential(a: &SquareMatrix, t: f64) -> Result<SquareMatrix> {
    if !t.is_finite() {
        return Err(invalid(format!("time must be finite, got {t}")));
    }
    if a.is_diagonal() {
        let d: Vec<f64> = (0..a.dim()).map(|i| (a.0[(i, i)] * t).exp()).collect();
        return Ok(SquareMatrix(DMatrix::from_diagonal(&DVector::from_vec(d))));
    }
    let r = expm_raw(&(a.matrix() * t));
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { what: "matrix exponential overflow".into(), residual: f64::INFINITY });
    }
    Ok(SquareMatrix(r))
}

/// `int_0^t e^{sA} ds`, read off the augmented exponential of `[[A, I], [0, 0]]`.
pub fn integrated_exponential(a: &SquareMatrix, t: f64) -> Result<SquareMatrix> {
    let d = a.dim();
    if let Some(l) = a.as_scalar_multiple() {
        let v = if (l * t).abs() < 1e-8 { t * (1.0 + 0.5 * l * t) } else { (l * t).exp_m1() / l };
        return Ok(SquareMatrix(DMatrix::identity(d, d) * v));
    }
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(a.matrix());
    m.view_mut((0, d), (d, d)).fill_with_identity();
    let e = expm_raw(&(m * t));
    SquareMatrix::new(e.view((0, d), (d, d)).into_owned())
}

/// Eigen-structure and decay envelope of a drift matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    /// Eigenvalues as `[re, im]` pairs.
    pub eigenvalues: Vec<[f64; 2]>,
    pub strictly_stable: bool,
    pub weakly_stable_semisimple: bool,
    pub envelope_c: f64,
    pub envelope_lambda: f64,
    pub max_real_part: f64,
}

impl SpectralProfile {
    pub fn envelope(&self, t: f64) -> f64 {
        self.envelope_c * (-self.envelope_lambda * t).exp()
    }
}

/// Log-spaced certification grid on `[1e-3, 1e3]`.
pub fn envelope_grid() -> Vec<f64> {
    let per_decade = 40;
    (0..=6 * per_decade).map(|k| 10f64.powf(-3.0 + k as f64 / per_decade as f64)).collect()
}

pub fn spectral_profile(a: &SquareMatrix) -> Result<SpectralProfile> {
    let d = a.dim();
    let scale = a.matrix().norm().max(1.0);
    let eig: Vec<Complex64> = if d == 1 {
        vec![Complex64::new(a.0[(0, 0)], 0.0)]
    } else {
        let schur = Schur::try_new(a.matrix().clone(), f64::EPSILON, 10_000).ok_or_else(|| Error::Numeric {
            what: format!("Schur eigen-solver did not converge (|A|_F = {scale:e})"),
            residual: f64::NAN,
        })?;
        schur.complex_eigenvalues().iter().copied().collect()
    };
    let tol = 1e-8 * scale;
    // Defective eigenvalues split by about sqrt(eps)|A|, so clusters are gathered more loosely than ranks are judged.
    let cluster_tol = 1e-6 * scale;
    let max_re = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let strictly_stable = max_re < -tol;
    let mut semisimple_imag = true;
    if !strictly_stable && max_re <= tol {
        let ac = a.matrix().map(|v| Complex64::new(v, 0.0));
        let imag: Vec<Complex64> = eig.iter().copied().filter(|z| z.re.abs() <= tol).collect();
        let mut used = vec![false; imag.len()];
        for i in 0..imag.len() {
            if used[i] {
                continue;
            }
            let members: Vec<usize> =
                (0..imag.len()).filter(|&j| !used[j] && (imag[j] - imag[i]).norm() <= cluster_tol).collect();
            for &j in &members {
                used[j] = true;
            }
            let center = members.iter().map(|&j| imag[j]).sum::<Complex64>() / members.len() as f64;
            let shifted = &ac - DMatrix::<Complex64>::identity(d, d) * center;
            let rank = shifted.singular_values().iter().filter(|&&s| s > tol).count();
            if d - rank < members.len() {
                semisimple_imag = false;
            }
        }
    }
    let weakly_stable_semisimple = max_re <= tol && semisimple_imag;
    let lambda = if strictly_stable { 0.99 * max_re.abs() } else { 0.0 };
    let mut c: f64 = 1.0;
    for t in envelope_grid() {
        match matrix_exponential(a, t) {
            Ok(e) => {
                let v = operator_norm(e.matrix()) * (lambda * t).exp();
                if v.is_finite() {
                    c = c.max(v);
                }
            }
            Err(_) if !strictly_stable => break,
            Err(e) => return Err(e),
        }
    }
    Ok(SpectralProfile {
        eigenvalues: eig.iter().map(|z| [z.re, z.im]).collect(),
        strictly_stable,
        weakly_stable_semisimple,
        envelope_c: c,
        envelope_lambda: lambda,
        max_real_part: max_re,
    })
}

pub(crate) fn check_psd(q: &SquareMatrix) -> Result<()> {
    let m = q.matrix();
    let scale = m.norm().max(1e-300);
    if (m - m.transpose()).norm() > 1e-12 * scale.max(1.0) {
        return Err(invalid("Gaussian covariance Q is not symmetric"));
    }
    let min_eig = m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 * scale.max(1.0) {
        return Err(invalid(format!("Gaussian covariance Q is not positive semi-definite (min eigenvalue {min_eig:e})")));
    }
    Ok(())
}

/// Symmetric square root `L` with `L L^T = m` for a PSD matrix; tiny negative eigenvalues are clipped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// `Sigma_t = int_0^t e^{sA} Q e^{sA^T} ds`.
///
/// Evaluated by the Van Loan block exponential on a short step and extended by doubling,
/// `Sigma_{2s} = Sigma_s + e^{sA} Sigma_s e^{sA^T}`, which avoids the `e^{-tA}` blow-up of a single long step.
pub fn gaussian_convolution_covariance(a: &SquareMatrix, q: &SquareMatrix, t: f64) -> Result<SquareMatrix> {
    if a.dim() != q.dim() {
        return Err(invalid("A and Q dimensions differ"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("time must be finite and non-negative, got {t}")));
    }
    check_psd(q)?;
    let d = a.dim();
    if t == 0.0 {
        return Ok(SquareMatrix::zeros(d));
    }
    let nrm = norm1(a.matrix());
    let doublings = if nrm * t > 1.0 { (nrm * t).log2().ceil() as i32 } else { 0 };
    let s = t / 2f64.powi(doublings);
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&(-a.matrix()));
    m.view_mut((0, d), (d, d)).copy_from(q.matrix());
    m.view_mut((d, d), (d, d)).copy_from(&a.matrix().transpose());
    let e = expm_raw(&(m * s));
    let f12 = e.view((0, d), (d, d)).into_owned();
    let f22 = e.view((d, d), (d, d)).into_owned();
    let mut sigma = f22.transpose() * f12;
    let mut step = s;
    for _ in 0..doublings {
        let es = matrix_exponential(a, step)?.into_inner();
        sigma = &sigma + &es * &sigma * es.transpose();
        step *= 2.0;
    }
    let sym = (&sigma + sigma.transpose()) * 0.5;
    SquareMatrix::new(sym)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, Tolerance};
    use std::f64::consts::PI;

    fn fro(a: &DMatrix<f64>) -> f64 {
        a.norm()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = matrix_exponential(&SquareMatrix::zeros(2), 5.0).unwrap();
        assert_eq!(e.matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn scalar_exponential() {
        let e = matrix_exponential(&SquareMatrix::scalar(-1.0).unwrap(), 1.0).unwrap();
        assert!((e.matrix()[(0, 0)] - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn rotation_generator() {
        let a = SquareMatrix::from_row_major(2, &[0.0, -1.0, 1.0, 0.0]).unwrap();
        let e = matrix_exponential(&a, PI / 2.0).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(fro(&(e.matrix() - expect)) < 1e-14);
    }

    #[test]
    fn nilpotent_matches_series() {
        let a = SquareMatrix::from_row_major(3, &[0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let e = matrix_exponential(&a, 1.5).unwrap();
        let am = a.matrix() * 1.5;
        let expect = DMatrix::identity(3, 3) + &am + &am * &am * 0.5;
        assert!(fro(&(e.matrix() - expect)) < 1e-12);
    }

    #[test]
    fn non_finite_entries_rejected() {
        assert!(SquareMatrix::from_row_major(1, &[f64::NAN]).is_err());
        assert!(matrix_exponential(&SquareMatrix::identity(2), f64::INFINITY).is_err());
    }

    #[test]
    fn negative_identity_profile() {
        let p = spectral_profile(&SquareMatrix::diagonal(&[-1.0, -1.0]).unwrap()).unwrap();
        assert!(p.strictly_stable);
        assert!((p.envelope_lambda - 0.99).abs() < 1e-12);
        assert!((p.envelope_c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jordan_block_is_not_semisimple() {
        let p = spectral_profile(&SquareMatrix::from_row_major(2, &[0.0, 1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!(!p.strictly_stable);
        assert!(!p.weakly_stable_semisimple);
    }

    #[test]
    fn rotation_is_weakly_stable_semisimple() {
        let p = spectral_profile(&SquareMatrix::from_row_major(2, &[0.0, -1.0, 1.0, 0.0]).unwrap()).unwrap();
        assert!(!p.strictly_stable);
        assert!(p.weakly_stable_semisimple);
        assert!((p.envelope_c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_matrix_is_semisimple() {
        let p = spectral_profile(&SquareMatrix::zeros(3)).unwrap();
        assert!(p.weakly_stable_semisimple);
    }

    #[test]
    fn rotated_jordan_block_detected() {
        // P J P^{-1} with J a Jordan block at eigenvalue 0.
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 3.0]);
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let m = &p * j * p.clone().try_inverse().unwrap();
        let prof = spectral_profile(&SquareMatrix::new(m).unwrap()).unwrap();
        assert!(!prof.weakly_stable_semisimple);
    }

    #[test]
    fn non_normal_envelope_matches_grid_oracle() {
        let a = SquareMatrix::from_row_major(2, &[-1.0, 100.0, 0.0, -1.0]).unwrap();
        let p = spectral_profile(&a).unwrap();
        assert!(p.strictly_stable);
        // Oracle: closed form e^{tA} = e^{-t}[[1, 100t], [0, 1]], maximised on a fine grid.
        let lam = 0.99;
        let mut best: f64 = 1.0;
        for k in 0..=60_000 {
            let t = 10f64.powf(-3.0 + 6.0 * k as f64 / 60_000.0);
            let m = DMatrix::from_row_slice(2, 2, &[1.0, 100.0 * t, 0.0, 1.0]);
            best = best.max(operator_norm(&m) * ((lam - 1.0) * t).exp());
        }
        assert!((p.envelope_c - best).abs() / best < 1e-3, "{} vs {}", p.envelope_c, best);
    }

    #[test]
    fn scalar_covariance() {
        let a = SquareMatrix::scalar(-1.0).unwrap();
        let q = SquareMatrix::scalar(1.0).unwrap();
        for &t in &[0.0, 0.1, 1.0, 7.0, 300.0] {
            let s = gaussian_convolution_covariance(&a, &q, t).unwrap();
            let expect = (1.0 - (-2.0 * t).exp()) / 2.0;
            assert!((s.matrix()[(0, 0)] - expect).abs() < 1e-13, "t={t}");
        }
    }

    #[test]
    fn covariance_matches_quadrature() {
        let a = SquareMatrix::from_row_major(2, &[-0.7, 0.4, -0.3, -1.2]).unwrap();
        let q = SquareMatrix::identity(2);
        let t = 2.5;
        let s = gaussian_convolution_covariance(&a, &q, t).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let r = integrate(
                    |u: f64| {
                        let e = matrix_exponential(&a, u).unwrap().into_inner();
                        (&e * e.transpose())[(i, j)]
                    },
                    0.0,
                    t,
                    &[],
                    Tolerance::new(1e-13, 1e-13),
                )
                .unwrap();
                assert!((s.matrix()[(i, j)] - r.value).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_non_psd_q() {
        let a = SquareMatrix::scalar(-1.0).unwrap();
        let q = SquareMatrix::scalar(-1.0).unwrap();
        assert!(gaussian_convolution_covariance(&a, &q, 1.0).is_err());
        let q2 = SquareMatrix::from_row_major(2, &[1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(gaussian_convolution_covariance(&SquareMatrix::identity(2), &q2, 1.0).is_err());
    }

    #[test]
    fn integrated_exponential_scalar_and_matrix() {
        let a = SquareMatrix::scalar(-2.0).unwrap();
        let i = integrated_exponential(&a, 1.0).unwrap();
        assert!((i.matrix()[(0, 0)] - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-15);
        let a = SquareMatrix::from_row_major(2, &[-1.0, 1.0, 0.0, -2.0]).unwrap();
        let i = integrated_exponential(&a, 1.3).unwrap();
        let r = integrate(|u: f64| matrix_exponential(&a, u).unwrap().matrix()[(0, 1)], 0.0, 1.3, &[], Tolerance::default())
            .unwrap();
        assert!((i.matrix()[(0, 1)] - r.value).abs() < 1e-10);
    }
}

//! Small dense linear-algebra helpers used by the affine machinery.

use nalgebra::{DMatrix, DVector};

/// Matrix exponential by scaling-and-squaring with a Taylor core.
///
/// The factor matrices here are tiny (n <= 4 in practice), so a degree-18
/// Taylor expansion after scaling to norm <= 1/2 reaches machine precision.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");
    let norm = a.amax() * n as f64;
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s as i32);

    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=18 {
        term = (&term * &scaled) / k as f64;
        result += &term;
    }
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

/// Integral of the matrix exponential: (expm(A x), int_0^x expm(A s) ds b).
///
/// Computed from the (n+1)-dimensional augmented exponential
/// exp([[A, b], [0, 0]] x), whose top-right column is the integral.
pub fn expm_with_integral(a: &DMatrix<f64>, b: &DVector<f64>, x: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * x));
    aug.view_mut((0, n), (n, 1)).copy_from(&(b * x));
    let e = expm(&aug);
    let phi = e.view((0, 0), (n, n)).into_owned();
    let integral = e.view((0, n), (n, 1)).column(0).into_owned();
    (phi, integral)
}

/// Symmetric positive-semidefinite square root via eigendecomposition.
///
/// Negative eigenvalues from roundoff are clamped to zero, so degenerate
/// covariances (zero volatility directions) are handled without panicking.
pub fn psd_sqrt(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let sym = (q + q.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        d[(i, i)] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_scalar_matches_exp() {
        let a = DMatrix::from_row_slice(1, 1, &[-0.7]);
        let e = expm(&a);
        assert!((e[(0, 0)] - (-0.7f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn expm_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.1, 0.0, 0.0, -2.5]);
        let e = expm(&a);
        assert!((e[(0, 0)] - (-0.1f64).exp()).abs() < 1e-14);
        assert!((e[(1, 1)] - (-2.5f64).exp()).abs() < 1e-14);
        assert!(e[(0, 1)].abs() < 1e-16);
    }

    #[test]
    fn expm_nilpotent() {
        // exp([[0,1],[0,0]]) = [[1,1],[0,1]]
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&a);
        assert!((e[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((e[(0, 1)] - 1.0).abs() < 1e-15);
        assert!(e[(1, 0)].abs() < 1e-16);
    }

    #[test]
    fn integral_of_exponential_scalar() {
        // int_0^x e^{-k s} ds = (1 - e^{-k x}) / k
        let a = DMatrix::from_row_slice(1, 1, &[-0.2]);
        let b = DVector::from_row_slice(&[1.0]);
        let (_, integral) = expm_with_integral(&a, &b, 3.0);
        let exact = (1.0 - (-0.6f64).exp()) / 0.2;
        assert!((integral[0] - exact).abs() < 1e-14);
    }

    #[test]
    fn psd_sqrt_roundtrip_and_degenerate() {
        let q = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 1.0]); // rank 1
        let l = psd_sqrt(&q);
        let back = &l * l.transpose();
        assert!((&back - &q).amax() < 1e-12);
    }
}

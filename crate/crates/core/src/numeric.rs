use nalgebra::DMatrix;

/// Largest singular value.
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Largest entry of `|a - b|`.
pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest entry of `|a - I|`.
pub(crate) fn max_abs_from_identity(a: &DMatrix<f64>) -> f64 {
    max_abs_diff(a, &DMatrix::identity(a.nrows(), a.ncols()))
}

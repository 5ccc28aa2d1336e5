use nalgebra::{DMatrix, DVector};

pub(crate) const RIDGE_PENALTY: f64 = 1e-6;

/// Least squares of `y` on the columns of `x` (no intercept).
/// Falls back to a small ridge penalty when the Gram matrix is near singular;
/// the flag reports whether that happened.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, bool) {
    let p = x.ncols();
    if p == 0 {
        return (DVector::zeros(0), false);
    }
    let gram = x.transpose() * x;
    let rhs = x.transpose() * y;
    if let Some(chol) = gram.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if lo > 0.0 && (lo / hi) * (lo / hi) > 1e-12 {
            return (chol.solve(&rhs), false);
        }
    }
    let mut ridged = gram;
    for j in 0..p {
        ridged[(j, j)] += RIDGE_PENALTY;
    }
    let coef = ridged
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| ridged.lu().solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(p));
    (coef, true)
}

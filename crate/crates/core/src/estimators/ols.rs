use super::WeightedRegressionProblem;

/// Weighted covariance over weighted variance (regression with intercept).
/// `None` when the weighted variance of `x` is zero.
pub fn ols_beta(p: &WeightedRegressionProblem) -> Option<f64> {
    let w = p.weights();
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(&p.x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(&p.y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for ((w, x), y) in w.iter().zip(&p.x).zip(&p.y) {
        let dx = x - mx;
        sxy += w * dx * (y - my);
        sxx += w * dx * dx;
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Weighted least-squares slope without intercept, `Σ w x y / Σ w x²`.
pub fn ols_beta_through_origin(p: &WeightedRegressionProblem) -> Option<f64> {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for ((w, x), y) in p.weights().iter().zip(&p.x).zip(&p.y) {
        sxy += w * x * y;
        sxx += w * x * x;
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

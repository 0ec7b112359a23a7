//! Weighted linear quantile regression solved exactly.
//!
//! The objective `Σ w_t ρ_θ(y_t - α - β x_t)` is convex and piecewise linear,
//! and some optimal line interpolates two observations. The solver walks
//! between such lines: it holds one interpolated observation fixed, rotates
//! the line around it to the best slope (a one-dimensional weighted quantile
//! problem), and repeats around the newly interpolated observation. At a
//! candidate optimum every interpolated observation is tried as a pivot; no
//! improving rotation means no improving direction at all.

use super::WeightedRegressionProblem;
use crate::error::{Error, Result};

const MAX_ROTATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit {
    pub alpha: f64,
    pub beta: f64,
    pub objective: f64,
    /// Objective after each accepted rotation, starting with the initial fit.
    pub trace: Vec<f64>,
    pub converged: bool,
}

fn check_fn(u: f64, theta: f64) -> f64 {
    if u >= 0.0 {
        theta * u
    } else {
        (theta - 1.0) * u
    }
}

fn objective(p: &WeightedRegressionProblem, theta: f64, alpha: f64, beta: f64) -> f64 {
    p.weights()
        .iter()
        .zip(&p.x)
        .zip(&p.y)
        .map(|((w, x), y)| w * check_fn(y - alpha - beta * x, theta))
        .sum()
}

/// One kink of a 1-D piecewise-linear convex objective: passing `at` from
/// left to right raises the slope by `jump`.
struct Kink {
    at: f64,
    jump: f64,
    index: usize,
}

/// Minimize `Σ c_t ρ_{θ_t}(b_t - s)` over `s` given its slope far to the left
/// and its kinks. Returns the minimizing kink.
fn minimize_piecewise(start_slope: f64, kinks: &mut [Kink]) -> Option<(f64, usize)> {
    kinks.sort_by(|a, b| a.at.total_cmp(&b.at).then(a.index.cmp(&b.index)));
    let mut slope = start_slope;
    for k in kinks.iter() {
        slope += k.jump;
        if slope >= 0.0 {
            return Some((k.at, k.index));
        }
    }
    kinks.last().map(|k| (k.at, k.index))
}

/// Best intercept for a fixed slope: the weighted θ-quantile of `y - βx`.
fn best_intercept(p: &WeightedRegressionProblem, theta: f64, beta: f64) -> (f64, usize) {
    let w = p.weights();
    let mut kinks: Vec<Kink> = (0..p.len())
        .map(|t| Kink {
            at: p.y[t] - beta * p.x[t],
            jump: w[t],
            index: t,
        })
        .collect();
    let start = -theta * w.iter().sum::<f64>();
    minimize_piecewise(start, &mut kinks).expect("non-empty problem")
}

/// Best line through observation `j`. Returns `(slope, other observation)`,
/// or `None` when every other observation shares `x_j`.
fn best_rotation(p: &WeightedRegressionProblem, theta: f64, j: usize) -> Option<(f64, usize)> {
    let w = p.weights();
    let (xj, yj) = (p.x[j], p.y[j]);
    let mut start = 0.0;
    let mut kinks = Vec::with_capacity(p.len());
    for t in 0..p.len() {
        let d = p.x[t] - xj;
        if d == 0.0 || w[t] == 0.0 {
            continue;
        }
        let c = w[t] * d.abs();
        // Residual (y_t - y_j) - s d is positive left of the kink when d > 0.
        let th = if d > 0.0 { theta } else { 1.0 - theta };
        start -= c * th;
        kinks.push(Kink {
            at: (p.y[t] - yj) / d,
            jump: c,
            index: t,
        });
    }
    if kinks.is_empty() {
        return None;
    }
    minimize_piecewise(start, &mut kinks)
}

fn improves(new: f64, old: f64) -> bool {
    new < old - 1e-13 * (1.0 + old.abs())
}

/// Weighted quantile regression `(α, β)` at level `θ`. Errors when `x` has
/// a single distinct value, so the slope is undefined.
pub fn quantile_beta(p: &WeightedRegressionProblem, theta: f64) -> Result<QuantileFit> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Config(format!(
            "quantile level must lie in (0, 1), got {theta}"
        )));
    }
    let x0 = p.x[0];
    if p.x.iter().all(|&x| x == x0) {
        return Err(Error::Domain(
            "quantile slope undefined: x has no spread".into(),
        ));
    }

    let start_beta = super::ols_beta(p).unwrap_or(0.0);
    let (mut alpha, mut pivot) = best_intercept(p, theta, start_beta);
    let mut beta = start_beta;
    let mut obj = objective(p, theta, alpha, beta);
    let mut trace = vec![obj];
    let scale =
        p.y.iter()
            .chain(&p.x)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-300);

    let mut rotations = 0;
    let mut converged = false;
    while rotations < MAX_ROTATIONS {
        rotations += 1;
        let mut step = best_rotation(p, theta, pivot).map(|(s, other)| {
            let a = p.y[pivot] - s * p.x[pivot];
            (a, s, other, objective(p, theta, a, s))
        });
        if !matches!(step, Some((_, _, _, o)) if improves(o, obj)) {
            // Try every interpolated observation before declaring optimality.
            step = None;
            for j in 0..p.len() {
                if j == pivot {
                    continue;
                }
                let r = p.y[j] - alpha - beta * p.x[j];
                if r.abs() > 1e-12 * scale {
                    continue;
                }
                if let Some((s, other)) = best_rotation(p, theta, j) {
                    let a = p.y[j] - s * p.x[j];
                    let o = objective(p, theta, a, s);
                    if improves(o, obj) {
                        step = Some((a, s, other, o));
                        break;
                    }
                }
            }
        }
        match step {
            Some((a, s, other, o)) => {
                alpha = a;
                beta = s;
                obj = o;
                pivot = other;
                trace.push(obj);
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    Ok(QuantileFit {
        alpha,
        beta,
        objective: obj,
        trace,
        converged,
    })
}

/// Median (least absolute deviation) regression slope.
pub fn mad_beta(p: &WeightedRegressionProblem) -> Result<f64> {
    Ok(quantile_beta(p, 0.5)?.beta)
}

/// Tukey's trimean of the quartile slopes.
pub fn trimean_combine(q25: f64, q50: f64, q75: f64) -> f64 {
    0.25 * q25 + 0.5 * q50 + 0.25 * q75
}

pub fn trimean_beta(p: &WeightedRegressionProblem) -> Result<f64> {
    Ok(trimean_combine(
        quantile_beta(p, 0.25)?.beta,
        quantile_beta(p, 0.5)?.beta,
        quantile_beta(p, 0.75)?.beta,
    ))
}

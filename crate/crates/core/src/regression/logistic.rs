//! Fractional-response logistic regression fit by IRLS.

use super::linalg::{ColMatrix, PivotedQr};
use super::FitWarning;

pub const MAX_IRLS_ITERATIONS: usize = 100;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-10;
/// L2 penalty used when the unpenalized fit diverges.
pub const RIDGE_FALLBACK: f64 = 1e-6;
/// Linear predictors beyond this magnitude are treated as a sign of separation.
const SEPARATION_ETA: f64 = 30.0;
const MIN_WEIGHT: f64 = 1e-12;
const DIVERGING_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub ridge: f64,
    /// Largest coefficient change of the last accepted step.
    pub last_step: f64,
    pub warnings: Vec<FitWarning>,
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `y ln σ(η) + (1 - y) ln(1 - σ(η))`, for fractional `y` in [0, 1].
pub fn bernoulli_llh(y: f64, eta: f64) -> f64 {
    -y * softplus(-eta) - (1.0 - y) * softplus(eta)
}

fn objective(x: &ColMatrix, y: &[f64], beta: &[f64], ridge: f64) -> (f64, Vec<f64>) {
    let eta = x.mul_vec(beta);
    let llh: f64 = y.iter().zip(&eta).map(|(&yi, &e)| bernoulli_llh(yi, e)).sum();
    let penalty = 0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>();
    (llh - penalty, eta)
}

fn irls(x: &ColMatrix, y: &[f64], ridge: f64) -> LogisticFit {
    let (n, d) = (x.rows, x.cols);
    let extra = if ridge > 0.0 { d } else { 0 };
    let mut beta = vec![0.0; d];
    let (mut obj, mut eta) = objective(x, y, &beta, ridge);
    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;

    while iterations < MAX_IRLS_ITERATIONS {
        iterations += 1;
        let m = n + extra;
        let mut a = ColMatrix::zeros(m, d);
        let mut rhs = vec![0.0; m];
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            let w = (mu * (1.0 - mu)).max(MIN_WEIGHT);
            let sw = w.sqrt();
            for j in 0..d {
                a.data[j * m + i] = sw * x.get(i, j);
            }
            rhs[i] = (y[i] - mu) / sw;
        }
        if ridge > 0.0 {
            let s = ridge.sqrt();
            for j in 0..d {
                a.data[j * m + n + j] = s;
                rhs[n + j] = -s * beta[j];
            }
        }
        let step = PivotedQr::new(a).solve_least_squares(&rhs);

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let (trial_obj, trial_eta) = objective(x, y, &trial, ridge);
            if trial_obj.is_finite() && trial_obj >= obj - 1e-12 * obj.abs().max(1.0) {
                accepted = Some((trial, trial_obj, trial_eta));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_obj, next_eta)) = accepted else {
            converged = true;
            break;
        };
        let max_step = step.iter().map(|s| (s * scale).abs()).fold(0.0, f64::max);
        last_step = max_step;
        let gain = next_obj - obj;
        beta = next;
        obj = next_obj;
        eta = next_eta;
        if max_step < CONVERGENCE_TOLERANCE || gain.abs() < CONVERGENCE_TOLERANCE * obj.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    LogisticFit {
        coefficients: beta,
        iterations,
        converged,
        ridge,
        last_step,
        warnings: Vec::new(),
    }
}

/// Maximizes the fractional Bernoulli likelihood. Falls back to a tiny ridge
/// penalty when the data are (quasi-)separable.
pub fn fit_logistic_design(x: &ColMatrix, y: &[f64]) -> LogisticFit {
    let plain = irls(x, y, 0.0);
    let eta = x.mul_vec(&plain.coefficients);
    // Under separation the likelihood gain vanishes while Newton steps stay
    // of order one, so a large final step means the coefficients still run off.
    let diverging = eta.iter().any(|e| e.abs() > SEPARATION_ETA) || plain.last_step > DIVERGING_STEP;
    if plain.converged && !diverging {
        return plain;
    }
    log::warn!("logistic fit separated or did not converge; refitting with ridge {RIDGE_FALLBACK:e}");
    let mut fit = irls(x, y, RIDGE_FALLBACK);
    fit.warnings.push(FitWarning::Separation);
    if !fit.converged {
        fit.warnings.push(FitWarning::NotConverged);
    }
    fit
}

/// Fits a row-major design with `cols` columns.
pub fn fit_logistic(values: &[f64], cols: usize, y: &[f64]) -> LogisticFit {
    let x = ColMatrix::from_row_major_rows(values, cols, 0..y.len());
    fit_logistic_design(&x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_half_response() {
        let values = [1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0];
        let fit = fit_logistic(&values, 2, &[0.5; 4]);
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.coefficients[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.coefficients[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(bernoulli_llh(0.5, 0.0), 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn recovers_fractional_slope() {
        let xs: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let values: Vec<f64> = xs.iter().flat_map(|&x| [1.0, x]).collect();
        let y: Vec<f64> = xs.iter().map(|&x| sigmoid(2.0 * x)).collect();
        let fit = fit_logistic(&values, 2, &y);
        assert!(fit.warnings.is_empty());
        assert_abs_diff_eq!(fit.coefficients[0], 0.0, epsilon = 1e-3);
        assert_abs_diff_eq!(fit.coefficients[1], 2.0, epsilon = 1e-3);
    }

    #[test]
    fn single_row_separation_is_penalized() {
        let fit = fit_logistic(&[1.0], 1, &[1.0]);
        assert!(fit.warnings.contains(&FitWarning::Separation));
        assert!(fit.coefficients[0].is_finite() && fit.coefficients[0] > 5.0);
    }

    #[test]
    fn stable_llh_at_extremes() {
        assert!(bernoulli_llh(1.0, 800.0).abs() < 1e-300);
        assert_abs_diff_eq!(bernoulli_llh(0.0, 800.0), -800.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sigmoid(-800.0), 0.0);
    }
}

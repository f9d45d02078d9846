//! Linear (Gaussian) and logistic (fractional response) regressors, scored by
//! average held-out log-likelihood under k-fold cross-validation.

mod folds;
pub mod linalg;
mod logistic;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::WordKey;
use crate::error::{Error, Result};
use crate::predictors::{FeatureMatrix, Response, Term};
use linalg::{ColMatrix, PivotedQr};

pub use folds::{FoldPlan, DEFAULT_FOLDS};
pub use logistic::{
    bernoulli_llh, fit_logistic, fit_logistic_design, sigmoid, LogisticFit, MAX_IRLS_ITERATIONS, RIDGE_FALLBACK,
};

/// Lower bound on the residual variance.
pub const SIGMA2_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Logistic,
}

impl ModelKind {
    pub fn for_response(response: Response) -> Self {
        match response {
            Response::ReadingTime => ModelKind::Linear,
            Response::SkipRatio => ModelKind::Logistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWarning {
    RankDeficient { rank: usize, columns: usize },
    VarianceFloored,
    Separation,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub sigma2: f64,
    pub warnings: Vec<FitWarning>,
}

/// Average Gaussian log-likelihood (nats) of `y` around `y_hat`.
pub fn gaussian_llh(y: &[f64], y_hat: &[f64], sigma2: f64) -> f64 {
    let n = y.len() as f64;
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    -(2.0 * PI * sigma2).sqrt().ln() - sse / (2.0 * n * sigma2)
}

fn gaussian_item_llh(y: f64, y_hat: f64, sigma2: f64) -> f64 {
    -0.5 * (2.0 * PI * sigma2).ln() - (y - y_hat).powi(2) / (2.0 * sigma2)
}

fn check_design(values: &[f64], response: &[f64], n: usize, d: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Validation("cannot fit a model on zero rows".into()));
    }
    if d == 0 {
        return Err(Error::Validation("cannot fit a model without columns".into()));
    }
    if n < d {
        return Err(Error::Validation(format!("{n} rows for {d} columns")));
    }
    if values.iter().chain(response).any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "design matrix or response has non-finite entries".into(),
        ));
    }
    Ok(())
}

/// Ordinary least squares on an explicit column-major design.
pub fn fit_linear_design(x: ColMatrix, y: &[f64]) -> LinearFit {
    let d = x.cols;
    let n = x.rows;
    let qr = PivotedQr::new(x.clone());
    let mut warnings = Vec::new();
    if qr.rank < d {
        log::warn!(
            "rank-deficient design ({} of {d}); using the minimum-norm solution",
            qr.rank
        );
        warnings.push(FitWarning::RankDeficient {
            rank: qr.rank,
            columns: d,
        });
    }
    let coefficients = qr.solve_least_squares(y);
    let y_hat = x.mul_vec(&coefficients);
    let ssr: f64 = y.iter().zip(&y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    let mut sigma2 = ssr / n as f64;
    if !(sigma2 >= SIGMA2_FLOOR) {
        log::warn!("residual variance {sigma2:e} clamped to {SIGMA2_FLOOR:e}");
        warnings.push(FitWarning::VarianceFloored);
        sigma2 = SIGMA2_FLOOR;
    }
    LinearFit {
        coefficients,
        sigma2,
        warnings,
    }
}

/// Least-squares fit of the matrix's response on all its columns.
pub fn fit_linear(matrix: &FeatureMatrix) -> Result<LinearFit> {
    let (n, d) = (matrix.n_rows(), matrix.n_cols());
    check_design(&matrix.values, &matrix.response, n, d)?;
    Ok(fit_linear_design(
        ColMatrix::from_row_major_rows(&matrix.values, d, 0..n),
        &matrix.response,
    ))
}

fn predict(values: &[f64], d: usize, row: usize, coefficients: &[f64]) -> f64 {
    values[row * d..(row + 1) * d]
        .iter()
        .zip(coefficients)
        .map(|(a, b)| a * b)
        .sum()
}

/// Cross-validated fit of one design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: ModelKind,
    pub columns: Vec<Term>,
    pub rows: Vec<WordKey>,
    /// Fit on all rows.
    pub coefficients: Vec<f64>,
    /// Residual variance of the all-rows fit (linear only).
    pub sigma2: Option<f64>,
    /// Average in-sample log-likelihood of the all-rows fit, nats.
    pub train_llh: f64,
    /// Each row scored once by the model trained on the other folds.
    pub per_item_heldout_llh: Vec<f64>,
    pub fold_coefficients: Vec<Vec<f64>>,
    /// Training-fold residual variances used for scoring (linear only).
    pub fold_sigma2: Vec<f64>,
    pub plan: FoldPlan,
    pub warnings: Vec<FitWarning>,
}

struct FoldFit {
    coefficients: Vec<f64>,
    sigma2: Option<f64>,
    warnings: Vec<FitWarning>,
}

fn fit_rows(matrix: &FeatureMatrix, model: ModelKind, rows: &[usize]) -> FoldFit {
    let d = matrix.n_cols();
    let x = ColMatrix::from_row_major_rows(&matrix.values, d, rows.iter().copied());
    let y: Vec<f64> = rows.iter().map(|&r| matrix.response[r]).collect();
    match model {
        ModelKind::Linear => {
            let fit = fit_linear_design(x, &y);
            FoldFit {
                coefficients: fit.coefficients,
                sigma2: Some(fit.sigma2),
                warnings: fit.warnings,
            }
        }
        ModelKind::Logistic => {
            let fit = fit_logistic_design(&x, &y);
            FoldFit {
                coefficients: fit.coefficients,
                sigma2: None,
                warnings: fit.warnings,
            }
        }
    }
}

fn item_llh(model: ModelKind, y: f64, eta: f64, sigma2: Option<f64>) -> f64 {
    match model {
        ModelKind::Linear => gaussian_item_llh(y, eta, sigma2.unwrap()),
        ModelKind::Logistic => bernoulli_llh(y, eta),
    }
}

/// Fits on each fold's complement and scores the fold's rows.
pub fn cross_validate(matrix: &FeatureMatrix, model: ModelKind, plan: &FoldPlan) -> Result<FitResult> {
    let (n, d) = (matrix.n_rows(), matrix.n_cols());
    if plan.len() != n {
        return Err(Error::Contract(format!(
            "fold plan covers {} rows, matrix has {n}",
            plan.len()
        )));
    }
    if n < plan.k {
        return Err(Error::Validation(format!("{n} rows cannot fill {} folds", plan.k)));
    }
    check_design(&matrix.values, &matrix.response, n, d)?;
    if model == ModelKind::Logistic && matrix.response.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::Validation("logistic responses must lie in [0, 1]".into()));
    }

    let folds: Vec<(Vec<usize>, FoldFit)> = (0..plan.k)
        .into_par_iter()
        .map(|f| (plan.test_rows(f), fit_rows(matrix, model, &plan.train_rows(f))))
        .collect();

    let mut heldout = vec![f64::NAN; n];
    let mut warnings = Vec::new();
    for (test, fit) in &folds {
        for &r in test {
            let eta = predict(&matrix.values, d, r, &fit.coefficients);
            heldout[r] = item_llh(model, matrix.response[r], eta, fit.sigma2);
        }
        for w in &fit.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
    }

    let all: Vec<usize> = (0..n).collect();
    let full = fit_rows(matrix, model, &all);
    let train_llh = all
        .iter()
        .map(|&r| {
            let eta = predict(&matrix.values, d, r, &full.coefficients);
            item_llh(model, matrix.response[r], eta, full.sigma2)
        })
        .sum::<f64>()
        / n as f64;
    for w in full.warnings {
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }

    Ok(FitResult {
        model,
        columns: matrix.columns.clone(),
        rows: matrix.rows.clone(),
        coefficients: full.coefficients,
        sigma2: full.sigma2,
        train_llh,
        per_item_heldout_llh: heldout,
        fold_coefficients: folds.iter().map(|(_, f)| f.coefficients.clone()).collect(),
        fold_sigma2: folds.iter().filter_map(|(_, f)| f.sigma2).collect(),
        plan: plan.clone(),
        warnings,
    })
}

/// JSON-facing view of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: ModelKind,
    pub n_rows: usize,
    pub coefficients: BTreeMap<String, f64>,
    /// Standard deviation of each coefficient across folds.
    pub coefficient_sd: BTreeMap<String, f64>,
    pub sigma2: Option<f64>,
    pub train_llh: f64,
    pub heldout_llh: f64,
    pub folds: Vec<FoldSummary>,
    pub warnings: Vec<FitWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_test: usize,
    pub mean_heldout_llh: f64,
}

impl FitResult {
    pub fn mean_heldout_llh(&self) -> f64 {
        self.per_item_heldout_llh.iter().sum::<f64>() / self.per_item_heldout_llh.len() as f64
    }

    /// Mean and sample standard deviation of each coefficient across folds.
    pub fn fold_coefficient_stats(&self) -> Vec<(f64, f64)> {
        let k = self.fold_coefficients.len() as f64;
        (0..self.columns.len())
            .map(|j| {
                let vals: Vec<f64> = self.fold_coefficients.iter().map(|c| c[j]).collect();
                let mean = vals.iter().sum::<f64>() / k;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
                (mean, var.sqrt())
            })
            .collect()
    }

    pub fn summary(&self) -> FitSummary {
        let names: Vec<String> = self.columns.iter().map(Term::to_string).collect();
        let stats = self.fold_coefficient_stats();
        let folds = (0..self.plan.k)
            .map(|f| {
                let test = self.plan.test_rows(f);
                FoldSummary {
                    fold: f,
                    n_test: test.len(),
                    mean_heldout_llh: test.iter().map(|&r| self.per_item_heldout_llh[r]).sum::<f64>()
                        / test.len() as f64,
                }
            })
            .collect();
        FitSummary {
            model: self.model,
            n_rows: self.rows.len(),
            coefficients: names.iter().cloned().zip(self.coefficients.iter().copied()).collect(),
            coefficient_sd: names.into_iter().zip(stats.into_iter().map(|s| s.1)).collect(),
            sigma2: self.sigma2,
            train_llh: self.train_llh,
            heldout_llh: self.mean_heldout_llh(),
            folds,
            warnings: self.warnings.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn matrix(x: &[Vec<f64>], y: &[f64]) -> FeatureMatrix {
        let d = x[0].len();
        FeatureMatrix {
            rows: (0..x.len() as u32).map(|i| WordKey::new(0, i)).collect(),
            columns: (0..d)
                .map(|j| {
                    if j == 0 {
                        Term::intercept()
                    } else {
                        Term::length(j as u8 - 1)
                    }
                })
                .collect(),
            values: x.iter().flatten().copied().collect(),
            response: y.to_vec(),
            response_kind: Response::ReadingTime,
            dropped: 0,
        }
    }

    #[test]
    fn three_point_ols() {
        let m = matrix(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]], &[0.0, 1.0, 3.0]);
        let fit = fit_linear(&m).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], -1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.sigma2, 1.0 / 18.0, epsilon = 1e-12);
        let y_hat: Vec<f64> = (0..3).map(|r| predict(&m.values, 2, r, &fit.coefficients)).collect();
        let llh = gaussian_llh(&m.response, &y_hat, fit.sigma2);
        assert_abs_diff_eq!(llh, -0.5 * (2.0 * PI / 18.0).ln() - 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(llh, 0.02625, epsilon = 1e-5);
    }

    #[test]
    fn exact_fit_floors_variance() {
        let m = matrix(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]], &[1.0, 3.0, 5.0]);
        let fit = fit_linear(&m).unwrap();
        assert_eq!(fit.sigma2, SIGMA2_FLOOR);
        assert!(fit.warnings.contains(&FitWarning::VarianceFloored));
    }

    #[test]
    fn duplicated_column_keeps_predictions() {
        let xs: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0, 5.0];
        let y = [0.3, 1.1, 2.4, 2.9, 5.2];
        let single = matrix(&xs.iter().map(|&x| vec![1.0, x]).collect::<Vec<_>>(), &y);
        let double = matrix(&xs.iter().map(|&x| vec![1.0, x, x]).collect::<Vec<_>>(), &y);
        let a = fit_linear(&single).unwrap();
        let b = fit_linear(&double).unwrap();
        assert!(matches!(
            b.warnings[0],
            FitWarning::RankDeficient { rank: 2, columns: 3 }
        ));
        for r in 0..5 {
            let pa = predict(&single.values, 2, r, &a.coefficients);
            let pb = predict(&double.values, 3, r, &b.coefficients);
            assert_abs_diff_eq!(pa, pb, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(b.coefficients[1], b.coefficients[2], epsilon = 1e-10);
    }

    #[test]
    fn gaussian_llh_examples() {
        assert_abs_diff_eq!(
            gaussian_llh(&[1.0, 2.0], &[1.0, 2.0], 1.0 / (2.0 * PI)),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(gaussian_llh(&[0.0], &[1.0], 1.0), -1.41894, epsilon = 1e-5);
        let once = gaussian_llh(&[0.0, 1.0], &[0.5, 0.5], 0.7);
        let twice = gaussian_llh(&[0.0, 1.0, 0.0, 1.0], &[0.5, 0.5, 0.5, 0.5], 0.7);
        assert_abs_diff_eq!(once, twice, epsilon = 1e-15);
    }

    #[test]
    fn fit_errors() {
        let m = matrix(&[vec![1.0, f64::NAN], vec![1.0, 1.0]], &[0.0, 1.0]);
        assert!(fit_linear(&m).is_err());
        let mut empty = matrix(&[vec![1.0]], &[1.0]);
        empty.rows.clear();
        empty.values.clear();
        empty.response.clear();
        assert!(fit_linear(&empty).is_err());
    }

    #[test]
    fn cross_validation_scores_every_row_once() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![1.0, i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<f64> = (0..30)
            .map(|i| 2.0 + 0.5 * i as f64 + ((i * 13) % 7) as f64 * 0.1)
            .collect();
        let m = matrix(&x, &y);
        let plan = FoldPlan::random(3, 30, 10).unwrap();
        let fit = cross_validate(&m, ModelKind::Linear, &plan).unwrap();
        assert_eq!(fit.per_item_heldout_llh.len(), 30);
        assert!(fit.per_item_heldout_llh.iter().all(|v| v.is_finite()));
        assert_eq!(fit.fold_coefficients.len(), 10);

        // Row 0 is scored by the model trained without its fold.
        let f0 = plan.assignment[0];
        let train = plan.train_rows(f0);
        let own = fit_rows(&m, ModelKind::Linear, &train);
        let eta = predict(&m.values, 3, 0, &own.coefficients);
        assert_abs_diff_eq!(
            fit.per_item_heldout_llh[0],
            gaussian_item_llh(y[0], eta, own.sigma2.unwrap()),
            epsilon = 1e-12
        );

        let summary = fit.summary();
        assert_eq!(summary.folds.len(), 10);
        assert!(summary.coefficients.contains_key("length@t-1"));
        assert!(cross_validate(
            &matrix(&x[..9], &y[..9]),
            ModelKind::Linear,
            &FoldPlan::random(3, 9, 3).unwrap()
        )
        .is_ok());
        assert!(cross_validate(&m, ModelKind::Linear, &FoldPlan::random(3, 29, 10).unwrap()).is_err());
    }
}

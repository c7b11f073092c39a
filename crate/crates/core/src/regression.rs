//! Ordinary least squares and logistic regression, the nuisance estimators
//! behind debiasing and mediation. Both add an intercept internally.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::{Cholesky, Matrix, Qr};

/// Relative threshold on the diagonal of R below which a column counts as
/// linearly dependent.
pub const RANK_TOL: f64 = 1e-10;
/// Ridge scale for rank-deficient OLS: `λ = RIDGE_SCALE · trace(XᵀX) / p`.
pub const RIDGE_SCALE: f64 = 1e-6;
/// Penalty used to refit a logistic model whose MLE does not exist.
pub const SEPARATION_RIDGE: f64 = 1.0;
/// Linear predictors beyond this magnitude indicate diverging coefficients.
const ETA_LIMIT: f64 = 30.0;
const IRLS_MAX_ITER: usize = 100;
/// Relative tolerance on log-likelihood decreases attributable to rounding.
const LOGLIK_SLACK: f64 = 1e-12;
const IRLS_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressionError {
    #[error("design has {rows} rows but needs at least {needed}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("response length {response} does not match {rows} design rows")]
    LengthMismatch { rows: usize, response: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("design matrix is rank deficient (rank {rank} of {cols})")]
    RankDeficient { rank: usize, cols: usize },
    #[error("binary response must take values 0 and 1, found {0}")]
    NotBinary(f64),
    #[error("binary response has a single class")]
    SingleClass,
    #[error("perfect separation: maximum likelihood estimate does not exist")]
    Separation,
}

/// Named feature columns, one row per observation, without the intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    names: Vec<String>,
    matrix: Matrix,
}

impl Design {
    pub fn new(names: Vec<String>, matrix: Matrix) -> Self {
        assert_eq!(names.len(), matrix.cols(), "one name per column");
        Self { names, matrix }
    }

    /// Builds a design from named columns of equal length.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Self {
        let n = columns.first().map_or(0, |(_, c)| c.len());
        let p = columns.len();
        let mut data = vec![0.0; n * p];
        for (j, (_, col)) in columns.iter().enumerate() {
            assert_eq!(col.len(), n, "ragged design columns");
            for (i, v) in col.iter().enumerate() {
                data[i * p + j] = *v;
            }
        }
        let names = columns.into_iter().map(|(name, _)| name).collect();
        Self {
            names,
            matrix: Matrix::from_row_major(n, p, data),
        }
    }

    /// Unnamed design; columns are called `x0, x1, …`.
    pub fn unnamed(matrix: Matrix) -> Self {
        let names = (0..matrix.cols()).map(|j| format!("x{j}")).collect();
        Self { names, matrix }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            matrix: self.matrix.select_rows(indices),
        }
    }
}

fn dot_with_intercept(intercept: f64, coefficients: &[f64], row: &[f64]) -> f64 {
    intercept
        + coefficients
            .iter()
            .zip(row)
            .map(|(b, x)| b * x)
            .sum::<f64>()
}

fn coefficient_by_name(names: &[String], coefficients: &[f64], name: &str) -> Option<f64> {
    names
        .iter()
        .position(|n| n == name)
        .map(|j| coefficients[j])
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub names: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Standard errors, intercept first.
    pub std_errors: Vec<f64>,
    /// Set when the ridge fallback replaced plain least squares.
    pub ridge_fallback: bool,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        dot_with_intercept(self.intercept, &self.coefficients, row)
    }

    pub fn predict(&self, design: &Design) -> Vec<f64> {
        (0..design.rows())
            .map(|i| self.predict_row(design.matrix.row(i)))
            .collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        coefficient_by_name(&self.names, &self.coefficients, name)
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.std_errors[j + 1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OlsOptions {
    /// On rank deficiency, fit a slightly ridged model instead of failing.
    pub ridge_fallback: bool,
}

impl Default for OlsOptions {
    fn default() -> Self {
        Self {
            ridge_fallback: true,
        }
    }
}

fn check_inputs(
    design: &Design,
    response: &[f64],
    name: &'static str,
) -> Result<(), RegressionError> {
    if response.len() != design.rows() {
        return Err(RegressionError::LengthMismatch {
            rows: design.rows(),
            response: response.len(),
        });
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(RegressionError::NonFinite(name));
    }
    if (0..design.rows()).any(|i| design.matrix.row(i).iter().any(|v| !v.is_finite())) {
        return Err(RegressionError::NonFinite("design"));
    }
    Ok(())
}

/// `diag(0, 1, …, 1)`-penalized normal equations; the intercept is never shrunk.
fn ridge_system(gram: &Matrix, lambda: f64) -> Matrix {
    let mut a = gram.clone();
    for j in 1..a.cols() {
        a.set(j, j, a.get(j, j) + lambda);
    }
    a
}

pub fn ols_fit(design: &Design, z: &[f64]) -> Result<LinearModel, RegressionError> {
    ols_fit_with(design, z, OlsOptions::default())
}

pub fn ols_fit_with(
    design: &Design,
    z: &[f64],
    options: OlsOptions,
) -> Result<LinearModel, RegressionError> {
    check_inputs(design, z, "response")?;
    let x = design.matrix.with_intercept();
    let (n, p) = (x.rows(), x.cols());
    if n < p {
        return Err(RegressionError::TooFewRows { rows: n, needed: p });
    }
    let qr = Qr::new(&x);
    let rank = qr.rank(RANK_TOL);
    let (beta, inv_diag, ridge_fallback) = if rank == p {
        (qr.solve_least_squares(z), qr.gram_inverse_diagonal(), false)
    } else if options.ridge_fallback {
        let gram = x.weighted_gram(None);
        let lambda = RIDGE_SCALE * gram.trace() / p as f64;
        let ch = Cholesky::new(&ridge_system(&gram, lambda))
            .ok_or(RegressionError::RankDeficient { rank, cols: p })?;
        (ch.solve(&x.tr_mul_vec(z)), ch.inverse_diagonal(), true)
    } else {
        return Err(RegressionError::RankDeficient { rank, cols: p });
    };

    let fitted = x.mul_vec(&beta);
    let rss: f64 = z.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    let sigma2 = if n > p { rss / (n - p) as f64 } else { 0.0 };
    let std_errors = inv_diag
        .iter()
        .map(|d| libm::sqrt((sigma2 * d).max(0.0)))
        .collect();
    Ok(LinearModel {
        names: design.names.clone(),
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        std_errors,
        ridge_fallback,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub names: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Standard errors from the inverse (penalized) Hessian, intercept first.
    pub std_errors: Vec<f64>,
    /// Perfect or quasi-complete separation was detected and the reported
    /// coefficients come from a ridge-penalized refit.
    pub separation: bool,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        dot_with_intercept(self.intercept, &self.coefficients, row)
    }

    pub fn probability_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(row))
    }

    pub fn probabilities(&self, design: &Design) -> Vec<f64> {
        (0..design.rows())
            .map(|i| self.probability_row(design.matrix.row(i)))
            .collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        coefficient_by_name(&self.names, &self.coefficients, name)
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.std_errors[j + 1])
    }
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + libm::exp(-eta))
    } else {
        let e = libm::exp(eta);
        e / (1.0 + e)
    }
}

fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + libm::log1p(libm::exp(-eta.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticOptions {
    /// L2 penalty on the slopes; 0 for maximum likelihood.
    pub ridge: f64,
    /// Report separation as an error instead of refitting with a penalty.
    pub strict_separation: bool,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            ridge: 0.0,
            strict_separation: false,
        }
    }
}

struct IrlsFit {
    beta: Vec<f64>,
    hessian: Matrix,
    iterations: usize,
    converged: bool,
}

fn penalized_loglik(x: &Matrix, b: &[f64], beta: &[f64], ridge: f64) -> f64 {
    let eta = x.mul_vec(beta);
    let ll: f64 = eta.iter().zip(b).map(|(e, y)| y * e - softplus(*e)).sum();
    ll - 0.5 * ridge * beta[1..].iter().map(|v| v * v).sum::<f64>()
}

fn irls(x: &Matrix, b: &[f64], ridge: f64) -> Result<IrlsFit, RegressionError> {
    let p = x.cols();
    let mut beta = vec![0.0; p];
    let mut ll = penalized_loglik(x, b, &beta, ridge);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let eta = x.mul_vec(&beta);
        let prob: Vec<f64> = eta.iter().map(|e| sigmoid(*e)).collect();
        let resid: Vec<f64> = b.iter().zip(&prob).map(|(y, q)| y - q).collect();
        let mut grad = x.tr_mul_vec(&resid);
        for j in 1..p {
            grad[j] -= ridge * beta[j];
        }
        let weights: Vec<f64> = prob.iter().map(|q| q * (1.0 - q)).collect();
        let hessian = ridge_system(&x.weighted_gram(Some(&weights)), ridge);
        let gnorm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        if gnorm <= IRLS_GRAD_TOL {
            converged = true;
        }
        if converged || iterations >= IRLS_MAX_ITER {
            return Ok(IrlsFit {
                beta,
                hessian,
                iterations,
                converged,
            });
        }
        iterations += 1;
        let Some(ch) = Cholesky::new(&hessian) else {
            // Weights collapsed to zero: the fit has run off to infinity.
            return Ok(IrlsFit {
                beta,
                hessian,
                iterations,
                converged: false,
            });
        };
        let step = ch.solve(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(v, s)| v + scale * s).collect();
            let trial_ll = penalized_loglik(x, b, &trial, ridge);
            // Near the optimum the gain drops below the rounding error of the
            // log-likelihood sum; such steps still count as non-decreasing.
            if trial_ll >= ll - LOGLIK_SLACK * (1.0 + ll.abs()) {
                beta = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No ascent possible at machine precision; treat as converged.
            converged = true;
        }
    }
}

fn separated(x: &Matrix, b: &[f64], beta: &[f64]) -> bool {
    let eta = x.mul_vec(beta);
    let diverging = eta.iter().any(|e| e.abs() > ETA_LIMIT);
    let perfect = eta
        .iter()
        .zip(b)
        .all(|(e, y)| if *y > 0.5 { *e > 0.0 } else { *e < 0.0 });
    diverging || perfect
}

pub fn logistic_fit(design: &Design, b: &[f64]) -> Result<LogisticModel, RegressionError> {
    logistic_fit_with(design, b, LogisticOptions::default())
}

pub fn logistic_fit_with(
    design: &Design,
    b: &[f64],
    options: LogisticOptions,
) -> Result<LogisticModel, RegressionError> {
    check_inputs(design, b, "response")?;
    if let Some(v) = b.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(RegressionError::NotBinary(*v));
    }
    let ones = b.iter().filter(|v| **v == 1.0).count();
    if ones == 0 || ones == b.len() {
        return Err(RegressionError::SingleClass);
    }
    let x = design.matrix.with_intercept();
    if x.rows() < x.cols() {
        return Err(RegressionError::TooFewRows {
            rows: x.rows(),
            needed: x.cols(),
        });
    }

    let mut fit = irls(&x, b, options.ridge)?;
    let mut separation = false;
    if options.ridge == 0.0 && separated(&x, b, &fit.beta) {
        if options.strict_separation {
            return Err(RegressionError::Separation);
        }
        separation = true;
        fit = irls(&x, b, SEPARATION_RIDGE)?;
    }
    let std_errors = match Cholesky::new(&fit.hessian) {
        Some(ch) => ch
            .inverse_diagonal()
            .iter()
            .map(|d| libm::sqrt(d.max(0.0)))
            .collect(),
        None => vec![f64::INFINITY; x.cols()],
    };
    Ok(LogisticModel {
        names: design.names.clone(),
        intercept: fit.beta[0],
        coefficients: fit.beta[1..].to_vec(),
        std_errors,
        separation,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

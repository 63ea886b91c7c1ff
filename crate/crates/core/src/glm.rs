//! Linear and logistic GLM fitting by iteratively reweighted least squares.
//!
//! Every fit starts from β = 0 and stops once the linear predictor moves by
//! less than 1e-10 between iterations. Fitted values, and therefore every
//! test statistic built from them, are then identical for designs related by
//! an invertible block-triangular transformation.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::coding::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg;

pub const MAX_ITERATIONS: usize = 100;
pub const ETA_TOLERANCE: f64 = 1e-10;
pub const SEPARATION_ETA: f64 = 30.0;
const RANK_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Identity link, constant variance, unknown dispersion σ².
    Linear,
    /// Logit link, variance μ(1-μ), dispersion fixed at 1.
    Logistic,
}

impl Family {
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::Linear => eta,
            Family::Logistic => 1.0 / (1.0 + (-eta).exp()),
        }
    }

    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Linear => 1.0,
            Family::Logistic => mu * (1.0 - mu),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Logistic => "logistic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "gaussian" => Some(Family::Linear),
            "logistic" | "binomial" => Some(Family::Logistic),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub family: Family,
    /// Full-length coefficients; tested entries are exactly 0 when constrained.
    pub beta: DVector<f64>,
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    /// IRLS weights at the fitted means.
    pub weights: DVector<f64>,
    pub phi: f64,
    /// Residual sum of squares `Σ (y - μ̂)²`.
    pub rss: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub constrained: bool,
    /// Columns forced to zero (empty for unconstrained fits).
    pub tested_columns: Vec<usize>,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// Number of estimated (non-constrained) coefficients.
    pub fn free_parameters(&self) -> usize {
        self.beta.len() - self.tested_columns.len()
    }
}

/// Fits `family` to `(x, y)` by IRLS. With `constrain_tested` the tested
/// columns are dropped and their coefficients reported as 0.
pub fn fit(x: &DesignMatrix, y: &[f64], family: Family, constrain_tested: bool) -> Result<FitResult> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::LengthMismatch {
            what: "response",
            got: y.len(),
            expected: n,
        });
    }
    let (xf, kept): (DMatrix<f64>, Vec<usize>) = if constrain_tested {
        let kept = x.untested();
        (linalg::select_columns(&x.values, &kept), kept)
    } else {
        (x.values.clone(), (0..x.ncols()).collect())
    };
    let p = xf.ncols();
    if n <= p {
        return Err(Error::Precondition(format!("need n > p, got n = {n}, p = {p}")));
    }
    if family == Family::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Precondition("logistic response must be 0/1".into()));
    }
    if linalg::numerical_rank(&xf, RANK_CUTOFF) < p {
        return Err(Error::SingularDesign);
    }

    let yv = DVector::from_column_slice(y);
    let (b, iterations, converged) = match family {
        Family::Linear => {
            let ones = DVector::from_element(n, 1.0);
            let gram = linalg::weighted_gram(&xf, &ones);
            (linalg::spd_solve(&gram, &(xf.transpose() * &yv))?, 1, true)
        }
        Family::Logistic => irls_logistic(&xf, &yv)?,
    };

    let eta = &xf * &b;
    let mu = eta.map(|e| family.inverse_link(e));
    let weights = mu.map(|m| family.variance(m));
    let phi = estimate_dispersion(y, mu.as_slice(), family)?;
    let loglik = log_likelihood(y, mu.as_slice(), family);
    let rss = y.iter().zip(mu.iter()).map(|(y, m)| (y - m).powi(2)).sum();

    let mut beta = DVector::zeros(x.ncols());
    for (j, &c) in kept.iter().enumerate() {
        beta[c] = b[j];
    }
    Ok(FitResult {
        family,
        beta,
        eta,
        mu,
        weights,
        phi,
        rss,
        loglik,
        iterations,
        converged,
        constrained: constrain_tested,
        tested_columns: if constrain_tested { x.tested.clone() } else { Vec::new() },
    })
}

fn irls_logistic(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, usize, bool)> {
    let n = x.nrows();
    let mut beta = DVector::zeros(x.ncols());
    let mut eta = DVector::zeros(n);
    for iter in 1..=MAX_ITERATIONS {
        let mu = eta.map(|e| Family::Logistic.inverse_link(e));
        let w = mu.map(|m| m * (1.0 - m));
        if w.iter().any(|&v| v <= 0.0) {
            return Err(Error::SeparationDetected);
        }
        let z = DVector::from_fn(n, |i, _| eta[i] + (y[i] - mu[i]) / w[i]);
        let gram = linalg::weighted_gram(x, &w);
        let rhs = x.transpose() * z.component_mul(&w);
        beta = linalg::spd_solve(&gram, &rhs)?;
        let next = x * &beta;
        if next.iter().any(|e| !e.is_finite() || e.abs() > SEPARATION_ETA) {
            return Err(Error::SeparationDetected);
        }
        let change = (&next - &eta).amax();
        eta = next;
        if change < ETA_TOLERANCE {
            return Ok((beta, iter, true));
        }
    }
    log::debug!("IRLS stopped after {MAX_ITERATIONS} iterations");
    Ok((beta, MAX_ITERATIONS, false))
}

/// Pearson dispersion with divisor n. Logistic returns 1.
pub fn estimate_dispersion(y: &[f64], mu: &[f64], family: Family) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(Error::LengthMismatch {
            what: "fitted means",
            got: mu.len(),
            expected: y.len(),
        });
    }
    match family {
        Family::Logistic => Ok(1.0),
        Family::Linear => Ok(pearson_sum(y, mu, family)? / y.len() as f64),
    }
}

pub(crate) fn pearson_sum(y: &[f64], mu: &[f64], family: Family) -> Result<f64> {
    y.iter().zip(mu).try_fold(0.0, |acc, (&y, &m)| {
        let v = family.variance(m);
        if v <= 0.0 {
            return Err(Error::DegenerateFittedValue);
        }
        Ok(acc + (y - m).powi(2) / v)
    })
}

/// Profile log-likelihood (σ² at its MLE) for linear, Bernoulli for logistic.
pub fn log_likelihood(y: &[f64], mu: &[f64], family: Family) -> f64 {
    let n = y.len() as f64;
    match family {
        Family::Linear => {
            let rss: f64 = y.iter().zip(mu).map(|(y, m)| (y - m).powi(2)).sum();
            -0.5 * n * ((2.0 * std::f64::consts::PI * rss / n).ln() + 1.0)
        }
        Family::Logistic => y
            .iter()
            .zip(mu)
            .map(|(&y, &m)| if y == 1.0 { m.ln() } else { (1.0 - m).ln() })
            .sum(),
    }
}

//! Wald, score, likelihood-ratio and F tests of `H0: β_tested = 0`.
//!
//! Scaling conventions, with `W` the unnormalized IRLS weights and
//! `φ` the Pearson dispersion with divisor n:
//!
//! * Wald  `β̂₂ᵀ [(XᵀŴX)⁻¹]₂₂⁻¹ β̂₂ / φ̂`
//! * Score `vᵀ (RᵀW̃R)⁻¹ v / φ̃` with `v = X₂ᵀ(y - μ̃)` and
//!   `R = X₂ - X₁(X₁ᵀW̃X₁)⁻¹X₁ᵀW̃X₂`
//! * LRT   `2(ℓ̂ - ℓ̃)`, the profile form `n·ln(RSS₀/RSS₁)` for linear models
//!
//! For linear models these satisfy, with `F` on `(q, n - p)` degrees of freedom,
//! `Wald = nqF/(n - p)`, `LRT = n·ln(1 + qF/(n - p))` and
//! `Score = nqF/(qF + n - p)`, hence `Wald ≥ LRT ≥ Score`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::chisq;
use crate::coding::DesignMatrix;
use crate::error::{Error, Result};
use crate::glm::{self, Family, FitResult};
use crate::linalg;

const NESTING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TestKind {
    Wald,
    Score,
    Lrt,
    F,
}

impl TestKind {
    pub const CHI_SQUARED: [TestKind; 3] = [TestKind::Wald, TestKind::Score, TestKind::Lrt];

    pub fn name(self) -> &'static str {
        match self {
            TestKind::Wald => "wald",
            TestKind::Score => "score",
            TestKind::Lrt => "lrt",
            TestKind::F => "f",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wald" => Some(TestKind::Wald),
            "score" => Some(TestKind::Score),
            "lrt" => Some(TestKind::Lrt),
            "f" => Some(TestKind::F),
            _ => None,
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub df: usize,
    /// Denominator degrees of freedom `n - p` (F only).
    pub df2: Option<usize>,
    pub p_value: f64,
}

fn chisq_result(kind: TestKind, statistic: f64, df: usize) -> Result<TestResult> {
    let p_value = chisq::chisq_sf(statistic.max(0.0), df as u32)?;
    Ok(TestResult {
        kind,
        statistic,
        df,
        df2: None,
        p_value,
    })
}

fn require_converged(fit: &FitResult) -> Result<()> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    Ok(())
}

fn require_tested(x: &DesignMatrix) -> Result<()> {
    if x.q() == 0 {
        return Err(Error::Precondition("no tested columns".into()));
    }
    Ok(())
}

/// Tested-block quadratic form `β̂₂ᵀ [(XᵀWX)⁻¹]₂₂⁻¹ β̂₂`.
fn tested_quadratic(x: &DesignMatrix, fit: &FitResult) -> Result<f64> {
    let h = linalg::weighted_gram(&x.values, &fit.weights);
    let cov = linalg::spd_inverse(&h)?;
    let v22 = linalg::select_block(&cov, &x.tested, &x.tested);
    let b2 = linalg::select_entries(&fit.beta, &x.tested);
    Ok(linalg::quad_form(&linalg::spd_inverse(&v22)?, &b2))
}

/// Classical F test for linear models, from the tested-block projection.
pub fn f_test(x: &DesignMatrix, y: &[f64], fit_full: &FitResult, fit_null: &FitResult) -> Result<TestResult> {
    if fit_full.family != Family::Linear || fit_null.family != Family::Linear {
        return Err(Error::FTestRequiresLinear);
    }
    require_tested(x)?;
    if fit_full.constrained || !fit_null.constrained {
        return Err(Error::Precondition("f_test needs a full and a constrained fit".into()));
    }
    let n = y.len();
    let p = x.ncols();
    let q = x.q();
    let q_stat = tested_quadratic(x, fit_full)?;
    let rss = fit_full.rss;
    let df2 = n - p;
    let statistic = if rss > 0.0 {
        (q_stat / q as f64) / (rss / df2 as f64)
    } else if q_stat > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let p_value = if statistic.is_finite() {
        let dist = FisherSnedecor::new(q as f64, df2 as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        dist.sf(statistic)
    } else {
        0.0
    };
    Ok(TestResult {
        kind: TestKind::F,
        statistic,
        df: q,
        df2: Some(df2),
        p_value,
    })
}

pub fn wald_test(x: &DesignMatrix, fit_full: &FitResult, family: Family) -> Result<TestResult> {
    require_tested(x)?;
    require_converged(fit_full)?;
    if fit_full.constrained || fit_full.family != family {
        return Err(Error::Precondition(
            "wald_test needs an unconstrained fit of the same family".into(),
        ));
    }
    let q_stat = tested_quadratic(x, fit_full)?;
    let statistic = if fit_full.phi > 0.0 {
        q_stat / fit_full.phi
    } else if q_stat > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    chisq_result(TestKind::Wald, statistic, x.q())
}

pub fn score_test(x: &DesignMatrix, y: &[f64], fit_null: &FitResult, family: Family) -> Result<TestResult> {
    require_tested(x)?;
    require_converged(fit_null)?;
    if !fit_null.constrained || fit_null.family != family {
        return Err(Error::Precondition("score_test needs a constrained fit of the same family".into()));
    }
    let x1 = x.untested_matrix();
    let x2 = x.tested_matrix();
    let w = &fit_null.weights;
    let h11 = linalg::weighted_gram(&x1, w);
    let mut wx2 = x2.clone();
    for (i, mut row) in wx2.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let proj = linalg::spd_inverse(&h11)? * (x1.transpose() * &wx2);
    let r: DMatrix<f64> = &x2 - &x1 * proj;
    let info = linalg::weighted_gram(&r, w);
    // Both families use canonical links, so the score reduces to X₂ᵀ(y - μ̃).
    let resid = DVector::from_column_slice(y) - &fit_null.mu;
    let v = x2.transpose() * resid;
    let u = linalg::quad_form(&linalg::spd_inverse(&info)?, &v);
    let statistic = if fit_null.phi > 0.0 { u / fit_null.phi } else { 0.0 };
    chisq_result(TestKind::Score, statistic, x.q())
}

pub fn lrt_test(fit_full: &FitResult, fit_null: &FitResult, family: Family) -> Result<TestResult> {
    if fit_full.family != family || fit_null.family != family {
        return Err(Error::Precondition("fits must share the family".into()));
    }
    if fit_full.constrained || !fit_null.constrained {
        return Err(Error::Precondition("lrt_test needs a full and a constrained fit".into()));
    }
    if fit_full.n() != fit_null.n() {
        return Err(Error::LengthMismatch {
            what: "null fit",
            got: fit_null.n(),
            expected: fit_full.n(),
        });
    }
    let q = fit_full.free_parameters() - fit_null.free_parameters().min(fit_full.free_parameters());
    if q == 0 {
        return Err(Error::Precondition("full and null models have the same columns".into()));
    }
    let statistic = match family {
        Family::Linear => {
            let n = fit_full.n() as f64;
            if fit_full.rss > 0.0 {
                n * ((fit_null.rss - fit_full.rss) / fit_full.rss).ln_1p()
            } else if fit_null.rss > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        }
        Family::Logistic => 2.0 * (fit_full.loglik - fit_null.loglik),
    };
    if statistic < -NESTING_TOL * (1.0 + fit_full.loglik.abs().max(1.0) * 1e-6) {
        return Err(Error::NestingViolated(statistic));
    }
    chisq_result(TestKind::Lrt, statistic.max(0.0), q)
}

/// Fits the full and constrained models once and runs every requested test.
/// F results are skipped for logistic models.
pub fn run_tests(x: &DesignMatrix, y: &[f64], family: Family, kinds: &[TestKind]) -> Result<Vec<TestResult>> {
    let full = glm::fit(x, y, family, false)?;
    let null = glm::fit(x, y, family, true)?;
    require_converged(&full)?;
    require_converged(&null)?;
    kinds
        .iter()
        .filter(|k| !(family == Family::Logistic && **k == TestKind::F))
        .map(|&k| match k {
            TestKind::Wald => wald_test(x, &full, family),
            TestKind::Score => score_test(x, y, &null, family),
            TestKind::Lrt => lrt_test(&full, &null, family),
            TestKind::F => f_test(x, y, &full, &null),
        })
        .collect()
}

//! Association testing for X-chromosome and autosome SNPs.
//!
//! Genotype codings under every baseline-allele and X-inactivation choice,
//! linear and logistic GLM tests for the nested models M0 to M4, analytic
//! non-centrality parameters and power, and a seeded simulation harness.

pub mod assoc;
pub mod chisq;
pub mod coding;
pub mod error;
pub mod glm;
pub mod io;
pub mod linalg;
pub mod ncp;
pub mod power;
pub mod scan;
pub mod sim;

pub use error::{Error, Result};

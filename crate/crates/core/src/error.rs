use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing genotype")]
    MissingGenotype,
    #[error("invalid male genotype: males are hemizygous on the X chromosome")]
    InvalidMaleGenotype,
    #[error("sex/genotype conflict: {0}")]
    SexGenotypeConflict(String),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("all genotypes missing")]
    AllMissing,
    #[error("degenerate SNP: additive coding is constant")]
    DegenerateSnp,
    #[error("singular design")]
    SingularDesign,
    #[error("separation detected")]
    SeparationDetected,
    #[error("degenerate fitted value")]
    DegenerateFittedValue,
    #[error("fit did not converge")]
    NotConverged,
    #[error("nesting violated: LRT statistic {0} is negative")]
    NestingViolated(f64),
    #[error("F-test requires linear family")]
    FTestRequiresLinear,
    #[error("model {model} is not supported on {chrom}")]
    UnsupportedModel { model: String, chrom: String },
    #[error("model {fitted} is not nested in the generating model")]
    NotNested { fitted: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

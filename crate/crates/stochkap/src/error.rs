use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to act on without
/// consulting the call site.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is out of its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Vector or matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A matrix required to be symmetric is not, beyond roundoff.
    #[error("matrix not symmetric: max asymmetry {max_asym:.3e} exceeds {tol:.3e} (relative)")]
    NotSymmetric { max_asym: f64, tol: f64 },

    /// Cholesky factorization hit a nonpositive pivot.
    #[error("matrix not positive definite: leading minor of order {order} is not positive ({context})")]
    NotPositiveDefinite { order: usize, context: String },

    /// A linear solve met a pivot too small to proceed.
    #[error("singular system: {0}")]
    Singular(String),

    /// An iterative eigensolver or search exhausted its budget.
    #[error("failed to converge: {0}")]
    Convergence(String),

    /// Orthonormalization collapsed: the measure cannot support the degree.
    #[error("degenerate inner product: {0}")]
    Degenerate(String),

    /// A NaN or infinity appeared where finite data is required.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// A quadrature rule with signed weights was passed where a
    /// positive-weight rule is mandatory.
    #[error(
        "negative quadrature weights: {0}; supply a positive-weight rule \
         (tensor rule, or a filtered rule with nonpositive-weight nodes removed)"
    )]
    NegativeWeights(String),

    /// Configuration failed schema or range validation.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed external data (CSV import and similar).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

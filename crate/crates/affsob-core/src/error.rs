use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("quadrature did not converge: last estimates {prev:e} and {last:e}")]
    QuadratureNonConvergence { prev: f64, last: f64 },

    #[error("grid backend supports n = 2 or 3, got n = {0}")]
    UnsupportedDimension(usize),

    #[error("truncation loss {loss:e} exceeds tolerance {tol:e} (K_max = {kmax})")]
    TruncationLoss { loss: f64, tol: f64, kmax: usize },

    #[error("field magnitude {value:e} at the boundary shell exceeds threshold {threshold:e}")]
    BoundaryTruncation { value: f64, threshold: f64 },

    #[error("resampling needs points {excess:.3} outside the box, margin is {margin:.3}")]
    OutOfBox { excess: f64, margin: f64 },

    #[error("directional energy table spread {spread:e} exceeds {tol:e}")]
    GridResolution { spread: f64, tol: f64 },

    #[error("gauge must be positive, found {0:e}")]
    NonPositiveGauge(f64),

    #[error("{0} did not converge after {1} iterations")]
    NonConvergence(&'static str, usize),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("linear fit residual {residual:e} exceeds tolerance {tol:e}")]
    FitQuality { residual: f64, tol: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

/// Errors raised by the numerical pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("axis {axis} out of range for space dimension {dim}")]
    Axis { axis: usize, dim: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("field shape does not match grid")]
    Shape,

    #[error("derivative order {needed} exceeds available depth {available}")]
    DerivativeDepth { needed: usize, available: usize },

    #[error("point {0} lies outside the extension strip")]
    OutsideStrip(String),

    #[error("metric is not elliptic at {point:?}: smallest eigenvalue {eigen:.3e}")]
    Ellipticity { point: Vec<f64>, eigen: f64 },

    #[error("singular metric at {0:?}")]
    SingularMetric(Vec<f64>),

    #[error("weight is not a quadratic polynomial")]
    NonQuadraticWeight,

    #[error("exponential weight overflows: max of tau*phi is {0:.3e}")]
    WeightOverflow(f64),

    #[error("frequency {needed:.3e} beyond grid Nyquist {nyquist:.3e}")]
    Nyquist { needed: f64, nyquist: f64 },

    #[error("extension strip too thin: needs {needed:.3e}, have {rho:.3e}")]
    StripTooThin { needed: f64, rho: f64 },

    #[error("quadrature did not converge: estimated error {0:.3e}")]
    Quadrature(f64),

    #[error("supports overlap: distance {0:.3e}")]
    OverlappingSupports(f64),

    #[error("fit needs at least {needed} positive values, got {got}")]
    Fit { needed: usize, got: usize },

    #[error("inadmissible weight: {0}")]
    Inadmissible(String),

    #[error("characteristic surface: g(dPsi, dPsi) = {0:.3e}")]
    Characteristic(f64),

    #[error("data does not vanish on the positive side of the surface: sup = {0:.3e}")]
    NotVanishing(f64),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter { name, reason: reason.into() }
}

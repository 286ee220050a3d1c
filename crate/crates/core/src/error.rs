use thiserror::Error;

/// Errors raised by the geometry, mesh, solver and reporting layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate tangent frame: |e_x|^2 + |e_y|^2 = {0:e}")]
    DegenerateFrame(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid collar radius {0}: must lie in (0, 1)")]
    InvalidCollar(f64),
    #[error("loop of radius {radius} around ({cx}, {cy}) leaves the open unit disc")]
    InvalidLoop { cx: f64, cy: f64, radius: f64 },
    #[error("p = {0} and q = {1} are not coprime")]
    NotCoprime(i64, i64),
    #[error("matrix is not unitary (defect {0:e})")]
    NotUnitary(f64),
    #[error("point is not on the domain boundary (defect {0:e})")]
    NotOnBoundary(f64),
    #[error("projection onto the boundary diverged")]
    ProjectionDiverged,
    #[error("operation unsupported for this domain kind: {0}")]
    Unsupported(&'static str),
    #[error("boundary normal degenerates: |X| = {0:e}")]
    DegenerateNormal(f64),
    #[error("flow box is not invertible: {0}")]
    FlowNotInvertible(String),
    #[error("flow tube too large: {0}")]
    TubeTooLarge(String),
    #[error("angle field inconsistent with the map (defect {0:e})")]
    InconsistentAngle(f64),
    #[error("angle field is not unit modulus (defect {0:e})")]
    NotUnitModulus(f64),
    #[error("hamiltonian is not admissible (residual {0:e})")]
    InadmissibleHamiltonian(f64),
    #[error("hamiltonian support meets the interior boundary of the subdomain (|f| + |grad f| = {0:e})")]
    SupportViolation(f64),
    #[error("degenerate point cloud: {0}")]
    DegeneratePointCloud(String),
    #[error("line search stalled at iteration {0}")]
    LineSearchStalled(usize),
    #[error("config error in `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

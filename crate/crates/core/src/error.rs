use thiserror::Error;

/// Errors raised by the solver suite.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    /// The assembled system is (numerically) singular. For the scattering
    /// problem this may indicate a resonant frequency of the structure.
    #[error("near-singular system in {context}: condition estimate {condition:.3e}")]
    NearSingular { context: String, condition: f64 },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("anisotropic effective permittivity is not supported by the layered solver: {0}")]
    Anisotropic(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

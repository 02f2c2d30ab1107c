use thiserror::Error;

/// Errors raised by the simulator. Each message is prefixed with the module
/// that produced it so CLI diagnostics can be traced back to their source.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{module}: shape mismatch: {detail}")]
    Shape { module: &'static str, detail: String },

    #[error("{module}: value out of range: {detail}")]
    Range { module: &'static str, detail: String },

    #[error("{module}: invalid parameter: {detail}")]
    Parameter { module: &'static str, detail: String },

    #[error("{module}: non-finite value: {detail}")]
    Numeric { module: &'static str, detail: String },

    #[error("devices: unknown preset {name:?}; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("interconnect: {detail} (residual {residual:e} A)")]
    Solver { detail: String, residual: f64 },

    #[error("mitigation: unsupported mapping scheme: {0}")]
    UnsupportedScheme(String),

    #[error("nn: training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{module}: {detail}")]
    Io { module: &'static str, detail: String },

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { module, detail: detail.into() }
    }

    pub(crate) fn range(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Range { module, detail: detail.into() }
    }

    pub(crate) fn param(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Parameter { module, detail: detail.into() }
    }

    pub(crate) fn numeric(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric { module, detail: detail.into() }
    }

    pub(crate) fn io(module: &'static str, err: impl std::fmt::Display) -> Self {
        Error::Io { module, detail: err.to_string() }
    }

    /// Attach a location prefix (for instance a cell coordinate) to the detail text.
    pub fn at(self, location: impl std::fmt::Display) -> Self {
        match self {
            Error::Shape { module, detail } => Error::Shape { module, detail: format!("{location}: {detail}") },
            Error::Range { module, detail } => Error::Range { module, detail: format!("{location}: {detail}") },
            Error::Parameter { module, detail } => {
                Error::Parameter { module, detail: format!("{location}: {detail}") }
            }
            Error::Numeric { module, detail } => Error::Numeric { module, detail: format!("{location}: {detail}") },
            Error::Solver { detail, residual } => Error::Solver { detail: format!("{location}: {detail}"), residual },
            Error::Io { module, detail } => Error::Io { module, detail: format!("{location}: {detail}") },
            Error::Config(detail) => Error::Config(format!("{location}: {detail}")),
            other => other,
        }
    }
}

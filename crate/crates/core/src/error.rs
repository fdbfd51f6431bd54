use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong between netlist text and a measurement.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Structural problems found while flattening or validating a circuit.
    #[error("netlist: {0}")]
    Netlist(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular matrix at unknown {unknown}")]
    Singular { unknown: String },

    #[error("no convergence{}: {message} (last residual {residual:.3e})", at_time.map(|t| format!(" at t={t:.6e}s")).unwrap_or_default())]
    Convergence {
        message: String,
        residual: f64,
        at_time: Option<f64>,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("measurement: {0}")]
    Measurement(String),

    #[error("i/o: {0}")]
    Io(String),

    /// One point of a parameter sweep failed.
    #[error("sweep point {param}={value:e}: {source}")]
    SweepPoint {
        param: String,
        value: f64,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

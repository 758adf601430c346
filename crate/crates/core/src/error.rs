use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A level, threshold or other scalar parameter is outside its domain.
    #[error("{0}")]
    Domain(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Dimensions of two inputs that must agree do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The design does not identify the parameters (rank deficient or singular scatter).
    #[error("not identifiable: {0}")]
    Identifiability(String),

    /// The optimizer could not certify optimality; `best` is the last iterate.
    #[error("solver failure: {message}")]
    SolverFailure { message: String, best: Vec<f64> },

    #[error("tail too small: {0}")]
    TailTooSmall(String),

    #[error("no exceedance: {0}")]
    NoExceedance(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed input, localized to a data row (1-based, header excluded) when known.
    #[error("{}", parse_message(.row, .column, .message))]
    Parse {
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },

    /// Every invalid configuration field found in a single validation pass.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("io: {0}")]
    Io(String),
}

fn parse_message(row: &Option<usize>, column: &Option<String>, message: &str) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!("row {r}, column '{c}': {message}"),
        (Some(r), None) => format!("row {r}: {message}"),
        (None, Some(c)) => format!("column '{c}': {message}"),
        (None, None) => message.to_string(),
    }
}

impl Error {
    /// Stable machine-readable code, used as the CLI error prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "E_DOMAIN",
            Error::InvalidData(_) => "E_DATA",
            Error::Dimension(_) => "E_DIMENSION",
            Error::Identifiability(_) => "E_IDENTIFIABILITY",
            Error::SolverFailure { .. } => "E_SOLVER",
            Error::TailTooSmall(_) => "E_TAIL",
            Error::NoExceedance(_) => "E_NO_EXCEEDANCE",
            Error::Degenerate(_) => "E_DEGENERATE",
            Error::Numerical(_) => "E_NUMERICAL",
            Error::Parse { .. } => "E_PARSE",
            Error::Config(_) => "E_CONFIG",
            Error::Io(_) => "E_IO",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_level(alpha: f64, what: &str) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must lie in (0, 1), got {alpha}")))
    }
}

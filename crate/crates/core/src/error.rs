use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument error: {0}")]
    Argument(String),

    #[error("domain error: {what} (valid interval [{lo}, {hi}])")]
    Domain { what: String, lo: f64, hi: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{method} stencil undefined at index {index}; valid indices are {valid}")]
    Stencil {
        method: &'static str,
        index: usize,
        valid: String,
    },

    #[error("missing dependency: {0}")]
    MissingDependency(String),

    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("numerical blow-up at time index {index}{}", path.map(|k| format!(" on path {k}")).unwrap_or_default())]
    Blowup { index: usize, path: Option<usize> },

    #[error("library evaluation failed at sample {sample} for term `{term}`")]
    Evaluation { sample: usize, term: String },

    #[error("negative fitted variance {value:.3e} on component {component} at state {state:?}")]
    DiffusionExtraction {
        component: usize,
        value: f64,
        state: Vec<f64>,
    },

    #[error("{failed} of {total} per-path fits failed; first failure: {first}")]
    AggregateFailure {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("config serialization error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// `true` for errors raised while validating inputs, before or instead of
    /// any numerical work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Argument(_)
                | Error::Domain { .. }
                | Error::Config(_)
                | Error::Stencil { .. }
                | Error::MissingDependency(_)
                | Error::InsufficientData { .. }
                | Error::TomlDe(_)
        )
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            1
        } else {
            2
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

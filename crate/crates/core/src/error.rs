use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scenario or preset value violates its schema. `path` names the field.
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("failed to parse scenario: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("user {user} at y = {y} m lies outside the propagation grid (|y| <= {extent} m)")]
    UserOutsideGrid { user: usize, y: f64, extent: f64 },

    #[error("degenerate codeword: amplitude profile is identically zero")]
    DegenerateCodeword,

    #[error("empty sampling set `{0}`")]
    EmptySamplingSet(&'static str),

    #[error("effective channel is rank deficient (condition number {cond:.3e})")]
    RankDeficient { cond: f64 },

    #[error("precoder column {0} is zero")]
    ZeroColumn(usize),

    #[error("channel vector is zero")]
    ZeroChannel,

    /// An error raised while evaluating one point of an experiment.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input files, presets or overrides
    /// (as opposed to numerical failures during a run).
    pub fn is_config(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_config(),
            _ => matches!(
                self,
                Error::Config { .. }
                    | Error::Parse(_)
                    | Error::Io { .. }
                    | Error::InvalidArgument(_)
                    | Error::UserOutsideGrid { .. }
                    | Error::EmptySamplingSet(_)
            ),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

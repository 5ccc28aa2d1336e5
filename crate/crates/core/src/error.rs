use std::path::PathBuf;

/// Broad failure classes; each maps to a process exit code and a stderr prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Io | ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            ErrorKind::Config => "E_CONFIG",
            ErrorKind::Io => "E_IO",
            ErrorKind::Data => "E_DATA",
            ErrorKind::Numeric => "E_NUMERIC",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate row id `{0}`")]
    DuplicateRowId(String),
    #[error("no rows survived validation")]
    NoRows,
    #[error("feature `{0}` has zero variance")]
    DegenerateFeature(String),
    #[error("column mismatch: expected [{expected}], found [{found}]")]
    ColumnMismatch { expected: String, found: String },
    #[error("split fraction {0} leaves an empty partition")]
    EmptySplit(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mixture component {0} collapsed")]
    DegenerateComponent(usize),
    #[error("insufficient data: {rows} rows, at least {required} required")]
    InsufficientData { rows: usize, required: usize },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("graph contains a cycle")]
    Cyclic,
    #[error("graphs share no node names")]
    NodeMismatch,
    #[error("test target is constant")]
    DegenerateTarget,
    #[error("no interventable feature has a causal effect on `{0}`")]
    NoCausalLever(String),
    #[error("fingerprint width mismatch: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("unknown row id `{0}`")]
    UnknownRow(String),
    #[error("config: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::DegenerateComponent(_) | Error::Numeric(_) | Error::NoCausalLever(_) => {
                ErrorKind::Numeric
            }
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

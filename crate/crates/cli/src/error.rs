use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("output {0} already exists (use --force to replace it)")]
    OutputExists(PathBuf),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Core(#[from] kernood::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const MISSING: i32 = 4;
    pub const DIMENSION: i32 = 5;
    pub const EXISTS: i32 = 6;
    pub const MODEL: i32 = 7;
    pub const METRIC: i32 = 8;
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile(path)
        } else {
            CliError::Io { path, source }
        }
    }

    pub fn kind(&self) -> &'static str {
        use kernood::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) | CliError::Schema { .. } => "config",
            CliError::MissingFile(_) => "missing_file",
            CliError::Io { .. } => "io",
            CliError::OutputExists(_) => "output_exists",
            CliError::Dimension(_) => "dimension",
            CliError::Core(e) => match e {
                E::Config(_) => "config",
                E::Json(_) | E::Csv(_) => "schema",
                E::Io(_) => "io",
                E::Version { .. } | E::Load(_) => "model",
                E::UndefinedMetric(_) | E::InsufficientData(_) => "metric",
                E::Shape(_)
                | E::Data(_)
                | E::Bounds { .. }
                | E::EmptyPartition { .. }
                | E::WindowSize(_)
                | E::EpisodeTooShort { .. }
                | E::TrainingContamination { .. } => "dimension",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => exit::USAGE,
            "config" | "schema" => exit::CONFIG,
            "missing_file" | "io" => exit::MISSING,
            "dimension" => exit::DIMENSION,
            "output_exists" => exit::EXISTS,
            "model" => exit::MODEL,
            "metric" => exit::METRIC,
            _ => exit::OTHER,
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a str,
            code: i32,
            message: String,
        }
        serde_json::to_string(&Record {
            error: self.kind(),
            code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("error record serializes")
    }
}

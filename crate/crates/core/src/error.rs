use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported YAML feature: {feature} (line {line})")]
    UnsupportedYaml { feature: &'static str, line: usize },

    #[error("config group file `{group}/{name}.yaml` not found; searched: {}", display_paths(.searched))]
    MissingGroup {
        group: String,
        name: String,
        searched: Vec<PathBuf>,
    },

    #[error("include cycle: {}", .0.join(" -> "))]
    IncludeCycle(Vec<String>),

    #[error("path not found: {0}")]
    PathNotFound(String),

    #[error("cannot index into non-container at `{0}`")]
    NotAContainer(String),

    #[error("invalid override `{0}`: expected `path=value`")]
    BadOverride(String),

    #[error("sweep axis `{0}` has no values")]
    EmptySweepAxis(String),

    /// A config value is missing or has the wrong type.
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown {kind} `{id}`{}", suggestion_suffix(.suggestion))]
    UnknownId {
        kind: &'static str,
        id: String,
        suggestion: Option<String>,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("{count} file(s) not found: {}", .first.join(", "))]
    FilesNotFound { count: usize, first: Vec<String> },

    #[error("unparseable target `{0}`")]
    UnparseableTarget(String),

    #[error("label `{0}` is not in the declared label set")]
    UnknownLabel(String),

    #[error("cannot balance: class `{0}` is absent from the training subset")]
    CannotBalance(String),

    #[error("malformed WAV: {0}")]
    MalformedWav(String),

    #[error("unsupported codec: {0}")]
    UnsupportedCodec(u16),

    #[error("malformed feature file: {0}")]
    MalformedFeature(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("augmentation node `{0}` cannot be placed in an offline pipeline")]
    OfflineAugmentation(String),

    #[error("stale forward trace: model parameters changed since the forward pass")]
    StaleTrace,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("run directory {0} is locked by another run")]
    RunLocked(PathBuf),

    #[error("aggregation group `{0}` mixes different tracking metrics")]
    MixedTrackingMetrics(String),

    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Whether the error originates from configuration rather than from
    /// executing a workflow step.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Syntax { .. }
                | Error::UnsupportedYaml { .. }
                | Error::MissingGroup { .. }
                | Error::IncludeCycle(_)
                | Error::PathNotFound(_)
                | Error::NotAContainer(_)
                | Error::BadOverride(_)
                | Error::EmptySweepAxis(_)
                | Error::Config { .. }
                | Error::UnknownId { .. }
                | Error::OfflineAugmentation(_)
        )
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn suggestion_suffix(suggestion: &Option<String>) -> String {
    match suggestion {
        Some(s) => format!(" (did you mean `{s}`?)"),
        None => String::new(),
    }
}

/// Closest candidate to a misspelled id, if any is near enough.
pub fn suggest(id: &str, candidates: &[&str]) -> Option<String> {
    candidates
        .iter()
        .map(|name| (strsim::levenshtein(id, name), *name))
        .filter(|&(d, name)| d <= (name.len() / 3).max(2))
        .min()
        .map(|(_, name)| name.to_string())
}

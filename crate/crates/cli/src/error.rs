use std::fmt;
use std::path::Path;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// An input file does not parse or violates its schema.
    Input = 2,
    /// The run configuration or command line is invalid.
    Config = 3,
    /// An engine invariant broke.
    Internal = 4,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Input,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Config,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Internal,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }

    /// Prefixes the message with the offending file.
    pub fn in_file(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<mapc::Error> for CliError {
    fn from(e: mapc::Error) -> Self {
        use mapc::Error as E;
        let kind = match e {
            E::InvalidBox(_)
            | E::MalformedTaxonomy(_)
            | E::UnknownClass(_)
            | E::InvalidDetection(_)
            | E::InstanceTooLarge { .. } => ExitKind::Input,
            E::InvalidConfig(_)
            | E::UnknownParameter(_)
            | E::SpecInvalid(_)
            | E::GridTooLarge { .. }
            | E::AmbiguousTargets(..) => ExitKind::Config,
            E::EmptyCandidateSet
            | E::ScoreBelowThreshold { .. }
            | E::DimensionMismatch { .. }
            | E::TraceDisabled => ExitKind::Internal,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

use std::fmt;

use uhi_core::Error;

/// Failure class, which fixes the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Ingestion,
    Numeric,
    Service,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Ingestion => 3,
            ErrorClass::Numeric => 4,
            ErrorClass::Service => 5,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub stage: Option<&'static str>,
    pub message: String,
}

impl CliError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            class,
            stage: None,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Config, message)
    }

    /// Classifies a library error raised inside `stage`. Argument errors take
    /// the stage's own class.
    pub fn from_core(stage: &'static str, fallback: ErrorClass, e: Error) -> Self {
        let class = match &e {
            Error::Service(_) | Error::MalformedResponse { .. } => ErrorClass::Service,
            Error::Weights(_)
            | Error::Infeasible { .. }
            | Error::RankDeficient { .. }
            | Error::NonConvergence(_)
            | Error::ZeroVariance(_)
            | Error::Empty(_) => ErrorClass::Numeric,
            Error::InvalidArgument(_) => fallback,
            _ => ErrorClass::Ingestion,
        };
        Self {
            class,
            stage: Some(stage),
            message: e.to_string(),
        }
    }

    pub fn in_stage(mut self, stage: &'static str) -> Self {
        self.stage.get_or_insert(stage);
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.class.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(stage) => write!(f, "[{stage}] {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for CliError {}

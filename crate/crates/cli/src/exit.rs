//! Errors and their process exit codes.

use std::fmt;
use std::path::Path;

use chartext_core::llm::{StageError, StageErrorKind};

pub const IO: u8 = 1;
pub const PARSE: u8 = 2;
pub const GROUNDING: u8 = 3;
pub const BACKEND: u8 = 4;
pub const RENDER: u8 = 5;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    /// Bad arguments, configuration or input files.
    Input(String),
    NoData,
    Render(String),
    Stage(StageError),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => IO,
            CliError::Input(_) => PARSE,
            CliError::NoData | CliError::Render(_) => RENDER,
            CliError::Stage(e) => stage_code(&e.kind),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) | CliError::Input(m) | CliError::Render(m) => f.write_str(m),
            CliError::NoData => f.write_str("table has no numeric values to chart"),
            CliError::Stage(e) => write!(f, "{e}"),
        }
    }
}

pub fn stage_code(kind: &StageErrorKind) -> u8 {
    match kind {
        StageErrorKind::EmptyStatement
        | StageErrorKind::EmptyExtraction
        | StageErrorKind::DegenerateSchema
        | StageErrorKind::ContractViolation(_)
        | StageErrorKind::Prompt(_) => PARSE,
        StageErrorKind::GroundingFailure(_) => GROUNDING,
        StageErrorKind::BackendFailure(_) => BACKEND,
        StageErrorKind::InvalidBinding(_) | StageErrorKind::NoData | StageErrorKind::Render(_) => RENDER,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_errors_map_to_documented_codes() {
        assert_eq!(stage_code(&StageErrorKind::ContractViolation("x".into())), 2);
        assert_eq!(stage_code(&StageErrorKind::GroundingFailure("x".into())), 3);
        assert_eq!(stage_code(&StageErrorKind::BackendFailure("x".into())), 4);
        assert_eq!(stage_code(&StageErrorKind::Render("x".into())), 5);
        assert_eq!(stage_code(&StageErrorKind::NoData), 5);
    }
}

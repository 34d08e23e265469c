use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("comparison curve invalid: {0}")]
    OracleInvalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::OracleInvalid(_) => 4,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Solver(_) => "solver",
            CliError::OracleInvalid(_) => "oracle_invalid",
            CliError::Io(_) | CliError::Csv(_) => "io",
        }
    }

    /// One-line TOML inline table for machine consumption.
    pub fn diagnostic(&self) -> String {
        #[derive(Serialize)]
        struct Diagnostic<'a> {
            kind: &'a str,
            exit_code: i32,
            message: String,
        }
        let d = Diagnostic {
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        };
        toml::to_string(&d).expect("diagnostic serializes").replace('\n', " ").trim().to_owned()
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One row-level problem found while reading a cohort file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// 1-based line number in the source file (the header is line 1).
    pub line: usize,
    pub column: Option<String>,
    pub message: String,
}

/// Machine-readable list of diagnostics produced by cohort validation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.diagnostics.is_empty()
    }

    pub(crate) fn push(&mut self, line: usize, column: Option<&str>, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            line,
            column: column.map(str::to_owned),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.diagnostics.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            match &d.column {
                Some(c) => write!(f, "line {} [{}]: {}", d.line, c, d.message)?,
                None => write!(f, "line {}: {}", d.line, d.message)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: columns missing from header: {}", .0.join(", "))]
    MissingColumns(Vec<String>),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("cohort validation failed:\n{0}")]
    Rows(ValidationReport),

    #[error("failed to read delimited input: {0}")]
    Csv(#[from] csv::Error),

    #[error("binning error: {0}")]
    Binning(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("unknown score column `{0}`")]
    UnknownModel(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("nothing to compare: attribute `{attribute}` has {included} level(s) after filtering")]
    NothingToCompare { attribute: String, included: usize },

    #[error("input lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("empty input")]
    Empty,

    #[error("undefined: input contains a single outcome class")]
    SingleClass,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariate `{0}` is entirely missing on the selected records")]
    CovariateAllMissing(String),

    #[error("propensity covariates must exclude protected attributes (got `{0}`)")]
    ProtectedCovariate(String),

    #[error(
        "level `{level}` of attribute `{attribute}` has {count} record(s); at least 2 required"
    )]
    LevelTooSmall {
        attribute: String,
        level: String,
        count: usize,
    },

    #[error("Hessian is numerically singular; refit with a ridge penalty > 0")]
    SingularHessian,

    #[error("design matrix columns do not match the model's column descriptors")]
    DescriptorMismatch,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

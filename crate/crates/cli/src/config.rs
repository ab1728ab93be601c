//! Run configuration files (TOML).
//!
//! ```toml
//! cohort = "cohort.csv"            # relative to this file
//! output_dir = "report"            # relative to this file
//! formats = ["json", "csv", "markdown", "svg-calibration"]
//! models_with_protected = ["M2"]   # score columns whose model saw protected attributes
//! calibration_bins = 10
//!
//! [schema]
//! id_column = "id"
//! label_column = "label"
//! score_columns = [{ model = "M1", column = "m1" }]
//! protected_columns = [{ name = "sex", kind = "categorical" }]
//! covariate_columns = [{ name = "age", kind = "numeric" }]
//!
//! [audit]
//! metrics = ["AUROC", "FNR"]
//! n_bootstrap = 150
//! alpha = 0.05
//! seed = 7
//! propensity_covariates = ["age"]
//! caliper_multiplier = 0.2        # 0 disables the caliper
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use biasaudit::audit::AuditConfig;
use biasaudit::cohort::CohortSchema;
use biasaudit::metrics::DEFAULT_CALIBRATION_BINS;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
    Markdown,
    SvgCalibration,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            "svg-calibration" | "svg" => Ok(Format::SvgCalibration),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("report")
}

fn default_formats() -> Vec<Format> {
    vec![
        Format::Json,
        Format::Csv,
        Format::Markdown,
        Format::SvgCalibration,
    ]
}

fn default_bins() -> usize {
    DEFAULT_CALIBRATION_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cohort: PathBuf,
    pub schema: CohortSchema,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    #[serde(default)]
    pub models_with_protected: Vec<String>,
    #[serde(default = "default_bins")]
    pub calibration_bins: usize,
}

/// A parsed config plus the SHA-256 of its bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads and validates a config; relative paths are resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| CliError::Validation(format!("{} is not UTF-8", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.cohort = resolve(base, &config.cohort);
        config.output_dir = resolve(base, &config.output_dir);
        if config.audit.caliper_multiplier == Some(0.0) {
            config.audit.caliper_multiplier = None;
        }
        config.validate()?;
        Ok(LoadedConfig {
            config,
            sha256: sha256_hex(&bytes),
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.schema.validate()?;
        self.audit.validate()?;
        if self.formats.is_empty() {
            return Err(CliError::Validation("no report formats selected".into()));
        }
        if self.calibration_bins < 2 {
            return Err(CliError::Validation(
                "calibration_bins must be at least 2".into(),
            ));
        }
        if let Some(c) = self.audit.caliper_multiplier {
            if !(c > 0.0 && c.is_finite()) {
                return Err(CliError::Validation(format!(
                    "caliper_multiplier must be > 0, got {c}"
                )));
            }
        }
        for a in &self.audit.attributes {
            if self.schema.protected_index(a).is_none() {
                return Err(CliError::Validation(format!(
                    "unknown protected attribute `{a}`"
                )));
            }
        }
        for c in &self.audit.propensity_covariates {
            if self.schema.protected_index(c).is_some() {
                return Err(biasaudit::Error::ProtectedCovariate(c.clone()).into());
            }
            if self.schema.covariate_index(c).is_none() {
                return Err(CliError::Validation(format!(
                    "unknown propensity covariate `{c}`"
                )));
            }
        }
        for m in &self.models_with_protected {
            if self.schema.score_index(m).is_none() {
                return Err(CliError::Validation(format!(
                    "models_with_protected names unknown model `{m}`"
                )));
            }
        }
        Ok(())
    }

    pub fn models(&self) -> Vec<String> {
        self.schema
            .score_columns
            .iter()
            .map(|s| s.model.clone())
            .collect()
    }
}

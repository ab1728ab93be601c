//! Subcommand implementations. Each returns the files it wrote or a
//! [`CliError`] carrying the exit code.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use biasaudit::audit::{
    bootstrap_audit, build_contrasts, comparison_rows, matched_audit, matched_audit_with,
    summarize_discrepancy, BootstrapAudit, Contrast, MatchedAudit, ModelRun, ModelVariant,
};
use biasaudit::cohort::{parse_cohort, subgroup_partition, write_cohort, Cohort};
use biasaudit::matching::write_matched_pairs;
use biasaudit::metrics::calibration_curve;
use biasaudit::synth::{generate, SynthConfig};

use crate::config::{read_file, sha256_hex, Format, LoadedConfig, RunConfig};
use crate::error::CliError;
use crate::report::{
    file_stem, render, table_csv, ComparisonSummary, ContrastReport, ModelReport, ReportBundle,
    RunMetadata, REPORT_SCHEMA_VERSION,
};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_bootstrap: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Overrides {
    fn apply(&self, config: &mut RunConfig) -> Result<(), CliError> {
        if let Some(s) = self.seed {
            config.audit.seed = s;
        }
        if let Some(b) = self.n_bootstrap {
            config.audit.n_bootstrap = b;
        }
        if let Some(o) = &self.output_dir {
            config.output_dir = o.clone();
        }
        if !self.formats.is_empty() {
            config.formats = self.formats.clone();
        }
        config.validate()
    }
}

/// Result of a command that writes files.
#[derive(Debug, Clone)]
pub struct Written {
    pub files: Vec<PathBuf>,
    /// Process exit code: 0, or 3 when every cell was INSUFFICIENT.
    pub exit_code: i32,
}

fn load(
    config_path: &Path,
    overrides: &Overrides,
) -> Result<(LoadedConfig, Cohort, String), CliError> {
    let mut loaded = RunConfig::load(config_path)?;
    overrides.apply(&mut loaded.config)?;
    let bytes = read_file(&loaded.config.cohort)?;
    let cohort = parse_cohort(bytes.as_slice(), &loaded.config.schema)?;
    if cohort.is_empty() {
        return Err(CliError::Validation(format!(
            "{} has no records",
            loaded.config.cohort.display()
        )));
    }
    Ok((loaded, cohort, sha256_hex(&bytes)))
}

fn variant_of(config: &RunConfig, model: &str) -> ModelVariant {
    if config.models_with_protected.iter().any(|m| m == model) {
        ModelVariant::WithProtected
    } else {
        ModelVariant::WithoutProtected
    }
}

fn fully_scored(cohort: &Cohort, model: &str) -> Result<bool, CliError> {
    Ok(cohort.scores(model)?.iter().all(Option::is_some))
}

/// Audits the given models and assembles the report bundle.
pub fn build_bundle(
    loaded: &LoadedConfig,
    cohort: &Cohort,
    cohort_sha256: &str,
    models: &[String],
) -> Result<ReportBundle, CliError> {
    let config = &loaded.config;
    let audit = &config.audit;
    for m in models {
        if config.schema.score_index(m).is_none() {
            return Err(biasaudit::Error::UnknownModel(m.clone()).into());
        }
    }

    let do_match = !audit.propensity_covariates.is_empty();
    if !do_match {
        log::warn!("no propensity covariates configured; matched audit skipped");
    }
    let mut shared: Option<Vec<Contrast>> = None;
    if do_match
        && models
            .iter()
            .map(|m| fully_scored(cohort, m))
            .collect::<Result<Vec<_>, _>>()?
            .iter()
            .all(|&b| b)
    {
        shared = Some(build_contrasts(cohort, audit)?);
    }

    let mut runs: Vec<(String, BootstrapAudit, Option<MatchedAudit>)> = Vec::new();
    for m in models {
        log::info!("auditing `{m}`");
        let boot = bootstrap_audit(cohort, m, audit)?;
        let matched = match (&shared, do_match) {
            (Some(c), _) => Some(matched_audit_with(cohort, m, audit, c)?),
            (None, true) => Some(matched_audit(cohort, m, audit)?),
            (None, false) => None,
        };
        runs.push((m.clone(), boot, matched));
    }

    let mut reports = Vec::new();
    for (model, boot, matched) in &runs {
        let scores = cohort.scores(model)?;
        let labels = cohort.labels();
        let (l, s): (Vec<bool>, Vec<f64>) = labels
            .iter()
            .zip(&scores)
            .filter_map(|(&y, s)| s.map(|s| (y, s)))
            .unzip();
        let calibration = calibration_curve(&l, &s, config.calibration_bins).ok();
        let variant = variant_of(config, model);
        let matched_results = matched.as_ref().map(|m| m.results.clone());
        let discrepancy = audit
            .metrics
            .iter()
            .flat_map(|&metric| {
                summarize_discrepancy(
                    &boot.results,
                    matched_results.as_deref().unwrap_or(&[]),
                    metric,
                    variant,
                )
            })
            .collect();
        reports.push(ModelReport {
            model: model.clone(),
            variant,
            records: s.len(),
            overall: boot.overall.clone(),
            mean_threshold: boot.mean_threshold,
            subgroup: boot.results.clone(),
            matched: matched_results,
            calibration,
            discrepancy,
        });
    }

    let comparison = if runs.len() >= 2 {
        let (a, b) = (&runs[0], &runs[1]);
        let empty = |m: &str| MatchedAudit {
            model: m.to_owned(),
            results: Vec::new(),
            contrasts: Vec::new(),
        };
        let run_a = ModelRun {
            audit: a.1.clone(),
            matched: a.2.clone().unwrap_or_else(|| empty(&a.0)),
        };
        let run_b = ModelRun {
            audit: b.1.clone(),
            matched: b.2.clone().unwrap_or_else(|| empty(&b.0)),
        };
        Some(ComparisonSummary {
            model_a: a.0.clone(),
            model_b: b.0.clone(),
            rows: comparison_rows(&run_a, &run_b),
        })
    } else {
        None
    };

    let balance = runs
        .first()
        .and_then(|r| r.2.as_ref())
        .map(|m| m.contrasts.iter().map(ContrastReport::from).collect())
        .unwrap_or_default();

    Ok(ReportBundle {
        schema_version: REPORT_SCHEMA_VERSION,
        metadata: RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: audit.seed,
            n_bootstrap: audit.n_bootstrap,
            alpha: audit.alpha,
            rounding: audit.rounding,
            threshold_policy: audit.threshold_policy,
            metrics: audit.metrics.clone(),
            config_sha256: loaded.sha256.clone(),
            cohort_sha256: cohort_sha256.to_owned(),
            cohort_records: cohort.len(),
        },
        partitions: runs
            .first()
            .map(|r| r.1.partitions.clone())
            .unwrap_or_default(),
        models: reports,
        balance,
        comparison,
    })
}

fn render_all(bundle: &ReportBundle, config: &RunConfig) -> Result<Written, CliError> {
    let mut files = Vec::new();
    for &f in &config.formats {
        files.extend(render(bundle, f, &config.output_dir)?);
    }
    let exit_code = if bundle.all_insufficient() {
        log::error!("every subgroup cell is INSUFFICIENT");
        3
    } else {
        0
    };
    Ok(Written { files, exit_code })
}

/// `audit`: every score column, with a comparison of the first two when
/// there are at least two. `compare` demands that a comparison is possible.
pub fn cmd_audit(
    config_path: &Path,
    overrides: &Overrides,
    compare: bool,
) -> Result<Written, CliError> {
    let (loaded, cohort, cohort_sha) = load(config_path, overrides)?;
    let models = loaded.config.models();
    if compare && models.len() < 2 {
        return Err(CliError::Validation(format!(
            "--compare needs two score columns, the schema has {}",
            models.len()
        )));
    }
    let bundle = build_bundle(&loaded, &cohort, &cohort_sha, &models)?;
    render_all(&bundle, &loaded.config)
}

/// `compare`: audits exactly the two named models.
pub fn cmd_compare(
    config_path: &Path,
    overrides: &Overrides,
    model_a: &str,
    model_b: &str,
) -> Result<Written, CliError> {
    let (loaded, cohort, cohort_sha) = load(config_path, overrides)?;
    let bundle = build_bundle(
        &loaded,
        &cohort,
        &cohort_sha,
        &[model_a.to_owned(), model_b.to_owned()],
    )?;
    render_all(&bundle, &loaded.config)
}

/// `match`: propensity matching only. Writes one pairs file per matched
/// contrast plus `balance.csv` and `balance.json`.
pub fn cmd_match(config_path: &Path, overrides: &Overrides) -> Result<Written, CliError> {
    let (loaded, cohort, _) = load(config_path, overrides)?;
    let config = &loaded.config;
    if config.audit.propensity_covariates.is_empty() {
        return Err(CliError::Validation(
            "no propensity covariates configured".into(),
        ));
    }
    let contrasts = build_contrasts(&cohort, &config.audit)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for c in &contrasts {
        if let Some(m) = &c.matched {
            let path = dir.join(format!(
                "pairs_{}_{}_vs_{}.csv",
                file_stem(&c.attribute),
                file_stem(&m.treated_level),
                file_stem(&m.control_level)
            ));
            let f = File::create(&path)
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
            write_matched_pairs(&cohort, m, BufWriter::new(f))?;
            files.push(path);
        }
    }
    let reports: Vec<ContrastReport> = contrasts.iter().map(ContrastReport::from).collect();
    let bundle_stub = ReportBundle {
        schema_version: REPORT_SCHEMA_VERSION,
        metadata: RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: config.audit.seed,
            n_bootstrap: config.audit.n_bootstrap,
            alpha: config.audit.alpha,
            rounding: config.audit.rounding,
            threshold_policy: config.audit.threshold_policy,
            metrics: Vec::new(),
            config_sha256: loaded.sha256.clone(),
            cohort_sha256: String::new(),
            cohort_records: cohort.len(),
        },
        partitions: Vec::new(),
        models: Vec::new(),
        balance: reports.clone(),
        comparison: None,
    };
    let table = crate::report::tables(&bundle_stub)
        .into_iter()
        .find(|t| t.name == "balance")
        .expect("balance table");
    let path = dir.join("balance.csv");
    fs::write(&path, table_csv(&table)?)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    files.push(path);
    let json = serde_json::json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "contrasts": reports,
    });
    let path = dir.join("balance.json");
    let mut text = serde_json::to_string_pretty(&json).expect("serializable");
    text.push('\n');
    fs::write(&path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    files.push(path);
    Ok(Written {
        files,
        exit_code: 0,
    })
}

/// Paths written by `synth` next to the cohort file.
pub fn manifest_path(cohort_path: &Path) -> PathBuf {
    cohort_path.with_extension("manifest.json")
}

/// `synth`: writes the cohort, its manifest, and one JSON file per trained
/// stand-in model.
pub fn cmd_synth(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<Written, CliError> {
    let bytes = read_file(config_path)?;
    let text =
        String::from_utf8(bytes).map_err(|_| CliError::Validation("config is not UTF-8".into()))?;
    let mut config: SynthConfig = toml::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", config_path.display())))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let output = generate(&config)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
    }
    let mut files = Vec::new();
    let f = File::create(out)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", out.display())))?;
    write_cohort(&output.cohort, BufWriter::new(f))?;
    files.push(out.to_path_buf());
    let mpath = manifest_path(out);
    let mut text = serde_json::to_string_pretty(&output.manifest).expect("serializable");
    text.push('\n');
    fs::write(&mpath, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", mpath.display())))?;
    files.push(mpath);
    for (name, model) in &output.models {
        let p = out.with_extension(format!("{}.model.json", file_stem(name)));
        fs::write(&p, model.to_json())
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))?;
        files.push(p);
    }
    Ok(Written {
        files,
        exit_code: 0,
    })
}

/// `validate`: checks the config and cohort and describes the partitions.
pub fn cmd_validate(config_path: &Path) -> Result<String, CliError> {
    let (loaded, cohort, _) = load(config_path, &Overrides::default())?;
    let config = &loaded.config;
    let mut out = format!(
        "{}: {} records, score columns: {}\n",
        config.cohort.display(),
        cohort.len(),
        config.models().join(", ")
    );
    let attributes: Vec<String> = if config.audit.attributes.is_empty() {
        config
            .schema
            .protected_columns
            .iter()
            .map(|p| p.name.clone())
            .collect()
    } else {
        config.audit.attributes.clone()
    };
    for a in attributes {
        let p = subgroup_partition(&cohort, &a, config.audit.min_group_size)?;
        out.push_str(&format!("{a}:\n"));
        for g in &p.groups {
            out.push_str(&format!("  {} {}\n", g.level, g.indices.len()));
        }
        for e in &p.excluded {
            out.push_str(&format!(
                "  {} {} excluded ({:?})\n",
                e.level, e.count, e.reason
            ));
        }
    }
    Ok(out)
}

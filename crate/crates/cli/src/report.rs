//! Report bundle and its renderings: one JSON document, one CSV file per
//! table, a Markdown report, and one SVG reliability diagram per score
//! column.
//!
//! Numbers in tables are rounded to the configured number of decimals and
//! trimmed (`0.10` prints as `0.1`); a rounded zero never carries a minus
//! sign. Significant cells get a trailing `*`. Cells with several matched
//! contrasts print as `[a, b]`, one value per opponent level in table order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use biasaudit::audit::{
    CellOutcome, ComparisonRow, Contrast, ContrastOutcome, ContrastStatus, DiscrepancySummary,
    MatchedAuditResult, MatchingCondition, ModelVariant, OverallMetric, SubgroupAuditResult,
    SubgroupPartitionSummary, ThresholdPolicy,
};
use biasaudit::matching::BalanceReport;
use biasaudit::metrics::{CalibrationCurve, Metric};
use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::error::CliError;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub seed: u64,
    pub n_bootstrap: usize,
    pub alpha: f64,
    pub rounding: usize,
    pub threshold_policy: ThresholdPolicy,
    pub metrics: Vec<Metric>,
    pub config_sha256: String,
    pub cohort_sha256: String,
    pub cohort_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub variant: ModelVariant,
    pub records: usize,
    pub overall: Vec<OverallMetric>,
    pub mean_threshold: Option<f64>,
    pub subgroup: Vec<SubgroupAuditResult>,
    /// `None` when no propensity covariates were configured.
    pub matched: Option<Vec<MatchedAuditResult>>,
    pub calibration: Option<CalibrationCurve<f64>>,
    pub discrepancy: Vec<DiscrepancySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub attribute: String,
    pub levels: (String, String),
    pub treated_level: Option<String>,
    pub control_level: Option<String>,
    pub pairs: usize,
    pub unmatched_treated: usize,
    pub caliper: Option<f64>,
    pub status: ContrastStatus,
    pub balance: Option<BalanceReport>,
}

impl From<&Contrast> for ContrastReport {
    fn from(c: &Contrast) -> Self {
        let m = c.matched.as_ref();
        Self {
            attribute: c.attribute.clone(),
            levels: c.levels.clone(),
            treated_level: m.map(|m| m.treated_level.clone()),
            control_level: m.map(|m| m.control_level.clone()),
            pairs: m.map_or(0, |m| m.pairs.len()),
            unmatched_treated: m.map_or(0, |m| m.unmatched_treated),
            caliper: m.and_then(|m| m.caliper),
            status: c.status.clone(),
            balance: c.balance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub model_a: String,
    pub model_b: String,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    pub partitions: Vec<SubgroupPartitionSummary>,
    pub models: Vec<ModelReport>,
    pub balance: Vec<ContrastReport>,
    pub comparison: Option<ComparisonSummary>,
}

impl ReportBundle {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let b: ReportBundle = serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("invalid report: {e}")))?;
        if b.schema_version != REPORT_SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "unsupported report schema_version {}",
                b.schema_version
            )));
        }
        Ok(b)
    }

    /// True when no subgroup cell of any model could be tested.
    pub fn all_insufficient(&self) -> bool {
        self.models
            .iter()
            .flat_map(|m| &m.subgroup)
            .all(|r| matches!(r.outcome, CellOutcome::Insufficient))
    }
}

/// Rounds to `decimals`, trims trailing zeros (keeping one) and drops the
/// sign of a rounded zero.
pub fn format_value(x: f64, decimals: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') && !s.ends_with(".0") {
            s.pop();
        }
    }
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s.remove(0);
    }
    s
}

pub fn format_cell(x: f64, significant: bool, decimals: usize) -> String {
    let mut s = format_value(x, decimals);
    if significant {
        s.push('*');
    }
    s
}

fn outcome_cell(r: &SubgroupAuditResult, decimals: usize) -> String {
    match &r.outcome {
        CellOutcome::Tested(s) => format_cell(s.mean_diff, s.significant, decimals),
        CellOutcome::Insufficient => "INSUFFICIENT".into(),
    }
}

/// PSM cell: one entry per opponent, bracketed when there are several.
pub fn matched_cell(m: &MatchedAuditResult, decimals: usize) -> String {
    let parts: Vec<String> = m
        .opponents
        .iter()
        .map(|o| match &o.outcome {
            ContrastOutcome::Audited(r) => outcome_cell(r, decimals),
            ContrastOutcome::Skipped { .. } => "SKIPPED".into(),
            ContrastOutcome::Failed { .. } => "FAILED".into(),
        })
        .collect();
    match parts.len() {
        0 => "-".into(),
        1 => parts.into_iter().next().unwrap(),
        _ => format!("[{}]", parts.join(", ")),
    }
}

fn opt(x: Option<f64>, decimals: usize) -> String {
    x.map_or_else(|| "-".into(), |v| format_value(v, decimals))
}

fn variant_label(v: ModelVariant) -> &'static str {
    match v {
        ModelVariant::WithProtected => "with",
        ModelVariant::WithoutProtected => "without",
    }
}

/// A rendered table: the same strings go to CSV and Markdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn subgroup_table(bundle: &ReportBundle, metric: Metric) -> Table {
    let d = bundle.metadata.rounding;
    let mut header = vec!["Attribute".to_owned(), "Level".to_owned(), "N".to_owned()];
    for m in &bundle.models {
        header.push(m.model.clone());
        if m.matched.is_some() {
            header.push(format!("{} (PSM)", m.model));
        }
    }
    let mut rows = Vec::new();
    for p in &bundle.partitions {
        for (level, count) in &p.levels {
            let mut row = vec![p.attribute.clone(), level.clone(), count.to_string()];
            for m in &bundle.models {
                let cell = m
                    .subgroup
                    .iter()
                    .find(|r| r.attribute == p.attribute && &r.level == level && r.metric == metric)
                    .map_or_else(|| "-".into(), |r| outcome_cell(r, d));
                row.push(cell);
                if let Some(matched) = &m.matched {
                    row.push(
                        matched
                            .iter()
                            .find(|r| {
                                r.attribute == p.attribute
                                    && &r.level == level
                                    && r.metric == metric
                            })
                            .map_or_else(|| "-".into(), |r| matched_cell(r, d)),
                    );
                }
            }
            rows.push(row);
        }
    }
    Table {
        name: format!("subgroup_{}", metric.as_str().to_lowercase()),
        title: format!("{metric}: group minus average"),
        header,
        rows,
    }
}

fn discrepancy_table(bundle: &ReportBundle, metric: Metric) -> Table {
    let d = bundle.metadata.rounding;
    let mut rows = Vec::new();
    for p in &bundle.partitions {
        for m in &bundle.models {
            let gap = |cond: MatchingCondition| {
                m.discrepancy
                    .iter()
                    .find(|s| {
                        s.attribute == p.attribute && s.metric == metric && s.matching == cond
                    })
                    .map(|s| s.gap)
            };
            rows.push(vec![
                p.attribute.clone(),
                m.model.clone(),
                variant_label(m.variant).to_owned(),
                opt(gap(MatchingCondition::BeforeMatching), d),
                opt(gap(MatchingCondition::AfterMatching), d),
            ]);
        }
    }
    Table {
        name: format!("discrepancy_{}", metric.as_str().to_lowercase()),
        title: format!("{metric}: max minus min of group differences"),
        header: [
            "Attribute",
            "Model",
            "Protected attributes",
            "Before matching",
            "After matching",
        ]
        .map(String::from)
        .to_vec(),
        rows,
    }
}

fn overall_table(bundle: &ReportBundle) -> Table {
    let d = bundle.metadata.rounding;
    let mut rows = Vec::new();
    for m in &bundle.models {
        for o in &m.overall {
            rows.push(vec![
                m.model.clone(),
                o.metric.to_string(),
                opt(o.mean, d),
                opt(o.sd, d),
                o.n_effective.to_string(),
                opt(m.mean_threshold, d),
            ]);
        }
    }
    Table {
        name: "overall".into(),
        title: "Pooled metrics (bootstrap mean)".into(),
        header: [
            "Model",
            "Metric",
            "Mean",
            "SD",
            "N effective",
            "Mean threshold",
        ]
        .map(String::from)
        .to_vec(),
        rows,
    }
}

fn balance_table(bundle: &ReportBundle) -> Table {
    let d = bundle.metadata.rounding;
    let mut rows = Vec::new();
    for c in &bundle.balance {
        let status = match &c.status {
            ContrastStatus::Ready => "OK".to_owned(),
            ContrastStatus::Skipped {
                matched_n,
                required,
            } => format!("SKIPPED ({matched_n} < {required})"),
            ContrastStatus::Failed { reason } => format!("FAILED: {reason}"),
        };
        let prefix = vec![
            c.attribute.clone(),
            c.treated_level.clone().unwrap_or_else(|| "-".into()),
            c.control_level.clone().unwrap_or_else(|| "-".into()),
            status,
            c.pairs.to_string(),
            c.unmatched_treated.to_string(),
            opt(c.caliper, d),
        ];
        match &c.balance {
            Some(b) if !b.covariates.is_empty() => {
                for cov in &b.covariates {
                    let mut row = prefix.clone();
                    row.extend([
                        cov.name.clone(),
                        opt(cov.smd_before, d),
                        opt(cov.smd_after, d),
                    ]);
                    rows.push(row);
                }
            }
            _ => {
                let mut row = prefix;
                row.extend(["-".into(), "-".into(), "-".into()]);
                rows.push(row);
            }
        }
    }
    Table {
        name: "balance".into(),
        title: "Covariate balance of matched contrasts".into(),
        header: [
            "Attribute",
            "Treated",
            "Control",
            "Status",
            "Pairs",
            "Unmatched treated",
            "Caliper",
            "Covariate",
            "SMD before",
            "SMD after",
        ]
        .map(String::from)
        .to_vec(),
        rows,
    }
}

fn comparison_table(bundle: &ReportBundle, c: &ComparisonSummary) -> Table {
    let d = bundle.metadata.rounding;
    let cell = |x: Option<f64>, sig: bool| x.map_or_else(|| "-".into(), |v| format_cell(v, sig, d));
    let rows = c
        .rows
        .iter()
        .map(|r| {
            vec![
                r.attribute.clone(),
                r.level.clone(),
                r.metric.to_string(),
                r.opponent.clone().unwrap_or_else(|| "-".into()),
                cell(r.a, r.a_significant),
                cell(r.b, r.b_significant),
                opt(r.delta, d),
            ]
        })
        .collect();
    Table {
        name: "comparison".into(),
        title: format!("{} vs {}", c.model_a, c.model_b),
        header: vec![
            "Attribute".into(),
            "Level".into(),
            "Metric".into(),
            "Matched against".into(),
            c.model_a.clone(),
            c.model_b.clone(),
            "Delta".into(),
        ],
        rows,
    }
}

fn calibration_table(bundle: &ReportBundle) -> Table {
    let d = bundle.metadata.rounding;
    let mut rows = Vec::new();
    for m in &bundle.models {
        if let Some(c) = &m.calibration {
            for (k, b) in c.bins.iter().enumerate() {
                rows.push(vec![
                    m.model.clone(),
                    k.to_string(),
                    format_value(b.mean_score, d),
                    format_value(b.observed_fraction, d),
                    b.count.to_string(),
                ]);
            }
        }
    }
    Table {
        name: "calibration".into(),
        title: "Calibration (equal-width bins, empty bins omitted)".into(),
        header: ["Model", "Bin", "Mean score", "Observed fraction", "Count"]
            .map(String::from)
            .to_vec(),
        rows,
    }
}

/// Every table of the bundle, in report order.
pub fn tables(bundle: &ReportBundle) -> Vec<Table> {
    let mut out = Vec::new();
    for &metric in &bundle.metadata.metrics {
        out.push(subgroup_table(bundle, metric));
    }
    for &metric in &bundle.metadata.metrics {
        if bundle
            .models
            .iter()
            .flat_map(|m| &m.discrepancy)
            .any(|s| s.metric == metric)
        {
            out.push(discrepancy_table(bundle, metric));
        }
    }
    out.push(overall_table(bundle));
    if !bundle.balance.is_empty() {
        out.push(balance_table(bundle));
    }
    if let Some(c) = &bundle.comparison {
        out.push(comparison_table(bundle, c));
    }
    if bundle.models.iter().any(|m| m.calibration.is_some()) {
        out.push(calibration_table(bundle));
    }
    out
}

pub fn table_csv(table: &Table) -> Result<String, CliError> {
    let mut buf = format!("# schema_version: {REPORT_SCHEMA_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(&table.header).map_err(csv_err)?;
        for r in &table.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(buf).expect("utf-8 cells"))
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

pub fn table_markdown(table: &Table) -> String {
    let mut s = format!("## {}\n\n", table.title);
    let line = |cells: &[String]| {
        format!(
            "| {} |\n",
            cells
                .iter()
                .map(|c| md_escape(c))
                .collect::<Vec<_>>()
                .join(" | ")
        )
    };
    s.push_str(&line(&table.header));
    s.push_str(&format!("|{}\n", "---|".repeat(table.header.len())));
    for r in &table.rows {
        s.push_str(&line(r));
    }
    s
}

pub fn markdown(bundle: &ReportBundle) -> String {
    let m = &bundle.metadata;
    let mut s =
        format!("<!-- schema_version: {REPORT_SCHEMA_VERSION} -->\n# Subgroup audit report\n\n");
    s.push_str(&format!(
        "- tool version: {}\n- seed: {}\n- bootstrap replicates: {}\n- alpha: {} (`*` marks p < alpha)\n- records: {}\n- config sha256: `{}`\n- cohort sha256: `{}`\n\n",
        m.tool_version, m.seed, m.n_bootstrap, m.alpha, m.cohort_records, m.config_sha256, m.cohort_sha256
    ));
    s.push_str(
        "PSM cells hold one value per opponent level, in table order, each computed on the sample matched against that level.\n\n",
    );
    for t in tables(bundle) {
        s.push_str(&table_markdown(&t));
        s.push('\n');
    }
    s
}

/// Reliability diagram: bin points over the diagonal.
pub fn calibration_svg(model: &str, curve: &CalibrationCurve<f64>) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    let span = SIZE - 2.0 * PAD;
    let x = |v: f64| PAD + v * span;
    let y = |v: f64| SIZE - PAD - v * span;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    s.push_str(&format!(
        "<!-- schema_version: {REPORT_SCHEMA_VERSION} -->\n"
    ));
    s.push_str(&format!(
        "<title>Calibration: {}</title>\n",
        xml_escape(model)
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        x(0.0),
        y(0.0),
        x(1.0),
        y(0.0)
    ));
    s.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        x(0.0),
        y(0.0),
        x(0.0),
        y(1.0)
    ));
    for k in 0..=5 {
        let v = f64::from(k) / 5.0;
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{v:.1}</text>\n",
            x(v),
            y(0.0) + 16.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{v:.1}</text>\n",
            x(0.0) - 6.0,
            y(v) + 4.0
        ));
    }
    s.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n",
        x(0.0), y(0.0), x(1.0), y(1.0)
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">Mean predicted score</text>\n",
        SIZE / 2.0, SIZE - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">Observed fraction</text>\n",
        SIZE / 2.0, SIZE / 2.0
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        SIZE / 2.0,
        xml_escape(model)
    ));
    if !curve.bins.is_empty() {
        let pts: Vec<String> = curve
            .bins
            .iter()
            .map(|b| format!("{:.2},{:.2}", x(b.mean_score), y(b.observed_fraction)))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\"/>\n",
            pts.join(" ")
        ));
        for b in &curve.bins {
            s.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"steelblue\"><title>n={}</title></circle>\n",
                x(b.mean_score),
                y(b.observed_fraction),
                b.count
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// File-name-safe version of a model or level name.
pub fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut f = fs::File::create(&path)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    written.push(path);
    Ok(())
}

/// Writes one format into `dir` and returns the files written.
pub fn render(bundle: &ReportBundle, format: Format, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();
    match format {
        Format::Json => write(dir.join("report.json"), &bundle.to_json(), &mut written)?,
        Format::Csv => {
            for t in tables(bundle) {
                write(
                    dir.join(format!("{}.csv", t.name)),
                    &table_csv(&t)?,
                    &mut written,
                )?;
            }
        }
        Format::Markdown => write(dir.join("report.md"), &markdown(bundle), &mut written)?,
        Format::SvgCalibration => {
            for m in &bundle.models {
                if let Some(c) = &m.calibration {
                    write(
                        dir.join(format!("calibration_{}.svg", file_stem(&m.model))),
                        &calibration_svg(&m.model, c),
                        &mut written,
                    )?;
                }
            }
        }
    }
    Ok(written)
}

//! Cohort data model: schema, delimited-file ingestion, binning of continuous
//! protected attributes and subgroup partitioning.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationReport};

/// Level label used for records whose protected attribute is missing.
pub const MISSING_LEVEL: &str = "MISSING";

/// Default minimum subgroup size.
pub const DEFAULT_MIN_GROUP_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Comma,
    Tab,
}

impl Delimiter {
    pub fn byte(self) -> u8 {
        match self {
            Delimiter::Comma => b',',
            Delimiter::Tab => b'\t',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreColumn {
    pub model: String,
    pub column: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtectedKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedColumn {
    pub name: String,
    pub kind: ProtectedKind,
    /// Explicit bin edges for continuous attributes. Tertiles when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
}

impl ProtectedColumn {
    pub fn categorical(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            kind: ProtectedKind::Categorical,
            edges: None,
        }
    }

    pub fn continuous(name: &str, edges: Option<Vec<f64>>) -> Self {
        Self {
            name: name.to_owned(),
            kind: ProtectedKind::Continuous,
            edges,
        }
    }

    fn binning(&self) -> Binning {
        match &self.edges {
            Some(e) => Binning::Edges(e.clone()),
            None => Binning::Tertiles,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Numeric,
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    pub kind: CovariateKind,
}

impl CovariateColumn {
    pub fn new(name: &str, kind: CovariateKind) -> Self {
        Self {
            name: name.to_owned(),
            kind,
        }
    }
}

fn default_id_column() -> String {
    "id".to_owned()
}

fn default_label_column() -> String {
    "label".to_owned()
}

fn default_missing_tokens() -> Vec<String> {
    vec!["".to_owned(), "NA".to_owned()]
}

/// Column layout of a cohort file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSchema {
    #[serde(default = "default_id_column")]
    pub id_column: String,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    pub score_columns: Vec<ScoreColumn>,
    #[serde(default)]
    pub protected_columns: Vec<ProtectedColumn>,
    #[serde(default)]
    pub covariate_columns: Vec<CovariateColumn>,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
    #[serde(default)]
    pub delimiter: Delimiter,
}

impl CohortSchema {
    pub fn new(id_column: &str, label_column: &str) -> Self {
        Self {
            id_column: id_column.to_owned(),
            label_column: label_column.to_owned(),
            score_columns: Vec::new(),
            protected_columns: Vec::new(),
            covariate_columns: Vec::new(),
            missing_tokens: default_missing_tokens(),
            delimiter: Delimiter::Comma,
        }
    }

    pub fn with_score(mut self, model: &str, column: &str) -> Self {
        self.score_columns.push(ScoreColumn {
            model: model.to_owned(),
            column: column.to_owned(),
        });
        self
    }

    pub fn with_protected(mut self, column: ProtectedColumn) -> Self {
        self.protected_columns.push(column);
        self
    }

    pub fn with_covariate(mut self, name: &str, kind: CovariateKind) -> Self {
        self.covariate_columns
            .push(CovariateColumn::new(name, kind));
        self
    }

    /// Checks the column-name invariants.
    pub fn validate(&self) -> Result<()> {
        if self.score_columns.is_empty() {
            return Err(Error::Schema(
                "at least one score column is required".into(),
            ));
        }
        let mut seen = HashSet::new();
        let mut models = HashSet::new();
        let columns = self.columns();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!(
                    "column `{c}` is named more than once"
                )));
            }
        }
        for s in &self.score_columns {
            if !models.insert(s.model.as_str()) {
                return Err(Error::Schema(format!(
                    "model `{}` is named more than once",
                    s.model
                )));
            }
        }
        for p in &self.protected_columns {
            if let Some(edges) = &p.edges {
                if p.kind == ProtectedKind::Categorical {
                    return Err(Error::Schema(format!(
                        "bin edges given for categorical attribute `{}`",
                        p.name
                    )));
                }
                check_edges(edges)?;
            }
        }
        Ok(())
    }

    /// All column names in file order: id, label, scores, protected, covariates.
    pub fn columns(&self) -> Vec<String> {
        let mut out = vec![self.id_column.clone(), self.label_column.clone()];
        out.extend(self.score_columns.iter().map(|s| s.column.clone()));
        out.extend(self.protected_columns.iter().map(|p| p.name.clone()));
        out.extend(self.covariate_columns.iter().map(|c| c.name.clone()));
        out
    }

    pub fn score_index(&self, model: &str) -> Option<usize> {
        self.score_columns.iter().position(|s| s.model == model)
    }

    pub fn protected_index(&self, name: &str) -> Option<usize> {
        self.protected_columns.iter().position(|p| p.name == name)
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_columns.iter().position(|c| c.name == name)
    }

    /// Schema for re-reading a cohort written by [`write_cohort`]: binned
    /// attributes are stored as their category labels.
    pub fn as_written(&self) -> CohortSchema {
        let mut out = self.clone();
        for p in &mut out.protected_columns {
            p.kind = ProtectedKind::Categorical;
            p.edges = None;
        }
        out
    }

    fn is_missing(&self, raw: &str) -> bool {
        let t = raw.trim();
        self.missing_tokens.iter().any(|m| m == t)
    }
}

/// A covariate cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateValue {
    Numeric(f64),
    Binary(bool),
    Category(String),
    Missing,
}

impl CovariateValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, CovariateValue::Missing)
    }

    /// Numeric view: numbers as-is, flags as 0/1, categories and missing as `None`.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            CovariateValue::Numeric(x) => Some(*x),
            CovariateValue::Binary(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub id: String,
    pub label: bool,
    /// Aligned with `CohortSchema::score_columns`.
    pub scores: Vec<Option<f64>>,
    /// Aligned with `CohortSchema::protected_columns`; `None` is missing.
    pub protected: Vec<Option<String>>,
    /// Aligned with `CohortSchema::covariate_columns`.
    pub covariates: Vec<CovariateValue>,
}

/// A validated table of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    records: Vec<CohortRecord>,
    schema: CohortSchema,
    attribute_levels: Vec<(String, Vec<String>)>,
}

impl Cohort {
    /// Validates records against the schema and derives attribute levels.
    ///
    /// Levels of categorical attributes are listed in first-appearance order.
    /// Levels of continuous attributes must already be bin labels; they are
    /// listed in bin order when `bin_order` supplies one.
    pub fn new(schema: CohortSchema, records: Vec<CohortRecord>) -> Result<Self> {
        Self::with_bin_order(schema, records, &HashMap::new())
    }

    fn with_bin_order(
        schema: CohortSchema,
        records: Vec<CohortRecord>,
        bin_order: &HashMap<usize, Vec<String>>,
    ) -> Result<Self> {
        schema.validate()?;
        let mut report = ValidationReport::default();
        let mut ids = HashSet::new();
        let (ns, np, nc) = (
            schema.score_columns.len(),
            schema.protected_columns.len(),
            schema.covariate_columns.len(),
        );
        for (i, r) in records.iter().enumerate() {
            let line = i + 2;
            if !ids.insert(r.id.as_str()) {
                report.push(
                    line,
                    Some(&schema.id_column),
                    format!("duplicate id `{}`", r.id),
                );
            }
            if r.scores.len() != ns || r.protected.len() != np || r.covariates.len() != nc {
                report.push(line, None, "record does not match schema width");
                continue;
            }
            if r.scores.iter().all(Option::is_none) {
                report.push(line, None, "all scores missing");
            }
            for (s, col) in r.scores.iter().zip(&schema.score_columns) {
                if let Some(v) = s {
                    if !v.is_finite() || !(0.0..=1.0).contains(v) {
                        report.push(line, Some(&col.column), "score out of [0,1]");
                    }
                }
            }
        }
        if !report.is_empty() {
            return Err(Error::Rows(report));
        }
        let attribute_levels = schema
            .protected_columns
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let mut levels: Vec<String> = Vec::new();
                let mut seen = HashSet::new();
                for r in &records {
                    if let Some(v) = &r.protected[j] {
                        if seen.insert(v.as_str()) {
                            levels.push(v.clone());
                        }
                    }
                }
                if let Some(order) = bin_order.get(&j) {
                    levels.sort_by_key(|l| order.iter().position(|o| o == l));
                }
                (p.name.clone(), levels)
            })
            .collect();
        Ok(Self {
            records,
            schema,
            attribute_levels,
        })
    }

    pub fn records(&self) -> &[CohortRecord] {
        &self.records
    }

    pub fn schema(&self) -> &CohortSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Observed levels of a protected attribute.
    pub fn levels(&self, attribute: &str) -> Option<&[String]> {
        self.attribute_levels
            .iter()
            .find(|(n, _)| n == attribute)
            .map(|(_, l)| l.as_slice())
    }

    pub fn attribute_levels(&self) -> &[(String, Vec<String>)] {
        &self.attribute_levels
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Scores of one model, `None` where the record has no score.
    pub fn scores(&self, model: &str) -> Result<Vec<Option<f64>>> {
        let j = self
            .schema
            .score_index(model)
            .ok_or_else(|| Error::UnknownModel(model.to_owned()))?;
        Ok(self.records.iter().map(|r| r.scores[j]).collect())
    }

    /// Returns a copy with an extra score column appended.
    pub fn with_score_column(
        &self,
        model: &str,
        column: &str,
        scores: &[Option<f64>],
    ) -> Result<Cohort> {
        if scores.len() != self.records.len() {
            return Err(Error::LengthMismatch(scores.len(), self.records.len()));
        }
        let schema = self.schema.clone().with_score(model, column);
        let records = self
            .records
            .iter()
            .zip(scores)
            .map(|(r, s)| {
                let mut r = r.clone();
                r.scores.push(*s);
                r
            })
            .collect();
        let mut out = Cohort::new(schema, records)?;
        out.attribute_levels = self.attribute_levels.clone();
        Ok(out)
    }

    /// Returns a copy holding only the given records, in the given order.
    /// Attribute level order is preserved.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        let records: Vec<CohortRecord> = indices.iter().map(|&i| self.records[i].clone()).collect();
        let attribute_levels = self
            .attribute_levels
            .iter()
            .enumerate()
            .map(|(j, (name, levels))| {
                let present: HashSet<&str> = records
                    .iter()
                    .filter_map(|r| r.protected[j].as_deref())
                    .collect();
                let kept = levels
                    .iter()
                    .filter(|l| present.contains(l.as_str()))
                    .cloned()
                    .collect();
                (name.clone(), kept)
            })
            .collect();
        Cohort {
            records,
            schema: self.schema.clone(),
            attribute_levels,
        }
    }
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::Binning("at least two bin edges are required".into()));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Binning(
            "bin edges must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Strategy for turning a continuous attribute into categories.
#[derive(Debug, Clone, PartialEq)]
pub enum Binning {
    /// Cut at the 1/3 and 2/3 empirical quantiles.
    Tertiles,
    /// Strictly increasing edges `e_1 < ... < e_k`, giving `k - 1` bins.
    Edges(Vec<f64>),
}

/// Bin edges for `values` under `strategy`.
///
/// Tertile cuts are the order statistics at positions `floor(n/3)` and
/// `floor(2n/3)` of the sorted non-missing values, so each bin of distinct
/// values holds `n/3` of them up to rounding.
pub fn bin_edges(values: &[Option<f64>], strategy: &Binning) -> Result<Vec<f64>> {
    let mut present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Binning("all values are missing".into()));
    }
    match strategy {
        Binning::Edges(edges) => {
            check_edges(edges)?;
            Ok(edges.clone())
        }
        Binning::Tertiles => {
            if present.iter().any(|v| !v.is_finite()) {
                return Err(Error::Binning("non-finite value".into()));
            }
            if present.len() < 3 {
                return Err(Error::Binning(
                    "tertiles need at least 3 non-missing values".into(),
                ));
            }
            present.sort_by(f64::total_cmp);
            let n = present.len();
            let lo = present[0];
            let hi = present[n - 1];
            let c1 = present[n / 3];
            let c2 = present[2 * n / 3];
            if lo == c1 || c1 == c2 {
                return Err(Error::Binning(
                    "degenerate tertiles (ties at a cut point); supply explicit bin edges".into(),
                ));
            }
            Ok(vec![lo, c1, c2, hi])
        }
    }
}

fn fmt_edge(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Labels for the bins defined by `edges`: `[lo - hi)`, last bin `[lo - hi]`.
pub fn bin_labels(edges: &[f64]) -> Vec<String> {
    let k = edges.len().saturating_sub(1);
    (0..k)
        .map(|i| {
            let close = if i + 1 == k { ']' } else { ')' };
            format!(
                "[{} - {}{}",
                fmt_edge(edges[i]),
                fmt_edge(edges[i + 1]),
                close
            )
        })
        .collect()
}

fn assign_bin(edges: &[f64], v: f64) -> Option<usize> {
    let k = edges.len() - 1;
    if v < edges[0] || v > edges[k] || v.is_nan() {
        return None;
    }
    // first edge strictly greater than v, minus one
    let pos = edges.partition_point(|&e| e <= v);
    Some((pos - 1).min(k - 1))
}

/// Maps continuous values onto bin labels. Missing values, and values
/// outside the outer edges, come back as `None`.
pub fn bin_continuous(values: &[Option<f64>], strategy: &Binning) -> Result<Vec<Option<String>>> {
    let edges = bin_edges(values, strategy)?;
    let labels = bin_labels(&edges);
    let mut outside = 0usize;
    let out = values
        .iter()
        .map(|v| {
            v.and_then(|x| {
                let b = assign_bin(&edges, x);
                if b.is_none() {
                    outside += 1;
                }
                b.map(|i| labels[i].clone())
            })
        })
        .collect();
    if outside > 0 {
        log::warn!("{outside} value(s) fall outside the bin edges and are treated as missing");
    }
    Ok(out)
}

/// Reads a header-first delimited file.
///
/// Any row-level problem (bad label, score outside [0,1], duplicate id, ...)
/// fails the whole parse; the error carries every diagnostic found.
pub fn parse_cohort<R: Read>(source: R, schema: &CohortSchema) -> Result<Cohort> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter.byte())
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_owned())
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);

    let missing: Vec<String> = schema
        .columns()
        .into_iter()
        .filter(|c| find(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing));
    }
    let id_at = find(&schema.id_column).unwrap();
    let label_at = find(&schema.label_column).unwrap();
    let score_at: Vec<usize> = schema
        .score_columns
        .iter()
        .map(|s| find(&s.column).unwrap())
        .collect();
    let prot_at: Vec<usize> = schema
        .protected_columns
        .iter()
        .map(|p| find(&p.name).unwrap())
        .collect();
    let cov_at: Vec<usize> = schema
        .covariate_columns
        .iter()
        .map(|c| find(&c.name).unwrap())
        .collect();

    let mut report = ValidationReport::default();
    let mut records = Vec::new();
    // raw numeric values of continuous protected columns, per record
    let mut continuous: Vec<Vec<Option<f64>>> = Vec::new();

    for (row_no, row) in reader.records().enumerate() {
        let row = row?;
        let line = row
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(row_no + 2);
        if row.len() != header.len() {
            report.push(
                line,
                None,
                format!("expected {} fields, found {}", header.len(), row.len()),
            );
            continue;
        }
        let cell = |i: usize| row.get(i).unwrap_or("").trim();
        let before = report.diagnostics.len();

        let id = cell(id_at);
        if schema.is_missing(id) {
            report.push(line, Some(&schema.id_column), "missing id");
        }

        let raw_label = cell(label_at);
        let label = if schema.is_missing(raw_label) {
            report.push(line, Some(&schema.label_column), "missing label");
            false
        } else {
            match raw_label {
                "0" => false,
                "1" => true,
                other => {
                    report.push(
                        line,
                        Some(&schema.label_column),
                        format!("label must be 0 or 1, got `{other}`"),
                    );
                    false
                }
            }
        };

        let mut scores = Vec::with_capacity(score_at.len());
        for (&at, col) in score_at.iter().zip(&schema.score_columns) {
            let raw = cell(at);
            if schema.is_missing(raw) {
                scores.push(None);
                continue;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() && (0.0..=1.0).contains(&v) => scores.push(Some(v)),
                Ok(_) => {
                    report.push(line, Some(&col.column), "score out of [0,1]");
                    scores.push(None);
                }
                Err(_) => {
                    report.push(
                        line,
                        Some(&col.column),
                        format!("unparseable score `{raw}`"),
                    );
                    scores.push(None);
                }
            }
        }
        if report.diagnostics.len() == before && scores.iter().all(Option::is_none) {
            report.push(line, None, "all scores missing");
        }

        let mut protected = Vec::with_capacity(prot_at.len());
        let mut cont_row = Vec::new();
        for (&at, col) in prot_at.iter().zip(&schema.protected_columns) {
            let raw = cell(at);
            match col.kind {
                ProtectedKind::Categorical => {
                    protected.push((!schema.is_missing(raw)).then(|| raw.to_owned()));
                }
                ProtectedKind::Continuous => {
                    protected.push(None);
                    if schema.is_missing(raw) {
                        cont_row.push(None);
                    } else {
                        match raw.parse::<f64>() {
                            Ok(v) if v.is_finite() => cont_row.push(Some(v)),
                            _ => {
                                report.push(
                                    line,
                                    Some(&col.name),
                                    format!("unparseable number `{raw}`"),
                                );
                                cont_row.push(None);
                            }
                        }
                    }
                }
            }
        }

        let mut covariates = Vec::with_capacity(cov_at.len());
        for (&at, col) in cov_at.iter().zip(&schema.covariate_columns) {
            let raw = cell(at);
            if schema.is_missing(raw) {
                covariates.push(CovariateValue::Missing);
                continue;
            }
            let value = match col.kind {
                CovariateKind::Numeric => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => CovariateValue::Numeric(v),
                    _ => {
                        report.push(line, Some(&col.name), format!("unparseable number `{raw}`"));
                        CovariateValue::Missing
                    }
                },
                CovariateKind::Binary => match raw.to_ascii_lowercase().as_str() {
                    "0" | "false" => CovariateValue::Binary(false),
                    "1" | "true" => CovariateValue::Binary(true),
                    _ => {
                        report.push(
                            line,
                            Some(&col.name),
                            format!("binary value must be 0 or 1, got `{raw}`"),
                        );
                        CovariateValue::Missing
                    }
                },
                CovariateKind::Categorical => CovariateValue::Category(raw.to_owned()),
            };
            covariates.push(value);
        }

        records.push(CohortRecord {
            id: id.to_owned(),
            label,
            scores,
            protected,
            covariates,
        });
        continuous.push(cont_row);
    }

    let mut ids = HashSet::new();
    for (i, r) in records.iter().enumerate() {
        if !ids.insert(r.id.as_str()) {
            report.push(
                i + 2,
                Some(&schema.id_column),
                format!("duplicate id `{}`", r.id),
            );
        }
    }
    if !report.is_empty() {
        report.diagnostics.sort_by_key(|d| d.line);
        return Err(Error::Rows(report));
    }

    let mut bin_order = HashMap::new();
    let mut k = 0;
    for (j, col) in schema.protected_columns.iter().enumerate() {
        if col.kind != ProtectedKind::Continuous {
            continue;
        }
        let values: Vec<Option<f64>> = continuous.iter().map(|row| row[k]).collect();
        let edges = bin_edges(&values, &col.binning())
            .map_err(|e| Error::Binning(format!("attribute `{}`: {e}", col.name)))?;
        let labels = bin_continuous(&values, &Binning::Edges(edges.clone()))?;
        for (r, l) in records.iter_mut().zip(labels) {
            r.protected[j] = l;
        }
        bin_order.insert(j, bin_labels(&edges));
        k += 1;
    }

    Cohort::with_bin_order(schema.clone(), records, &bin_order)
}

/// Writes a cohort in the delimited format [`parse_cohort`] reads, using
/// `schema.as_written()` column semantics. Missing cells use the first
/// missing token.
pub fn write_cohort<W: Write>(cohort: &Cohort, sink: W) -> Result<()> {
    let schema = cohort.schema();
    let missing = schema.missing_tokens.first().cloned().unwrap_or_default();
    let mut w = csv::WriterBuilder::new()
        .delimiter(schema.delimiter.byte())
        .from_writer(sink);
    w.write_record(schema.columns())?;
    for r in cohort.records() {
        let mut row: Vec<String> =
            Vec::with_capacity(2 + r.scores.len() + r.protected.len() + r.covariates.len());
        row.push(r.id.clone());
        row.push(if r.label { "1" } else { "0" }.to_owned());
        for s in &r.scores {
            row.push(s.map_or_else(|| missing.clone(), |v| format!("{v}")));
        }
        for p in &r.protected {
            row.push(p.clone().unwrap_or_else(|| missing.clone()));
        }
        for c in &r.covariates {
            row.push(match c {
                CovariateValue::Numeric(v) => format!("{v}"),
                CovariateValue::Binary(b) => if *b { "1" } else { "0" }.to_owned(),
                CovariateValue::Category(s) => s.clone(),
                CovariateValue::Missing => missing.clone(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Missing,
    TooSmall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    pub level: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedLevel {
    pub level: String,
    pub count: usize,
    pub reason: ExclusionReason,
}

/// Records split by the levels of one protected attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupPartition {
    pub attribute: String,
    pub groups: Vec<Subgroup>,
    pub excluded: Vec<ExcludedLevel>,
}

impl SubgroupPartition {
    pub fn level_names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.level.as_str()).collect()
    }

    /// Group position per cohort record, `None` for records outside every
    /// included group.
    pub fn membership(&self, n_records: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_records];
        for (g, group) in self.groups.iter().enumerate() {
            for &i in &group.indices {
                out[i] = Some(g);
            }
        }
        out
    }
}

/// Splits the cohort by `attribute`. Levels smaller than `min_group_size`
/// are excluded; missing values form a [`MISSING_LEVEL`] group only when it
/// is large enough.
pub fn subgroup_partition(
    cohort: &Cohort,
    attribute: &str,
    min_group_size: usize,
) -> Result<SubgroupPartition> {
    let j = cohort
        .schema()
        .protected_index(attribute)
        .ok_or_else(|| Error::UnknownAttribute(attribute.to_owned()))?;
    let levels = cohort.levels(attribute).unwrap_or(&[]);
    let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); levels.len()];
    let mut missing = Vec::new();
    let position: HashMap<&str, usize> = levels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    for (i, r) in cohort.records().iter().enumerate() {
        match r.protected[j].as_deref() {
            Some(v) => by_level[position[v]].push(i),
            None => missing.push(i),
        }
    }

    let mut groups = Vec::new();
    let mut excluded = Vec::new();
    for (level, indices) in levels.iter().zip(by_level) {
        if indices.len() >= min_group_size && !indices.is_empty() {
            groups.push(Subgroup {
                level: level.clone(),
                indices,
            });
        } else {
            excluded.push(ExcludedLevel {
                level: level.clone(),
                count: indices.len(),
                reason: ExclusionReason::TooSmall,
            });
        }
    }
    if !missing.is_empty() {
        if missing.len() >= min_group_size {
            groups.push(Subgroup {
                level: MISSING_LEVEL.to_owned(),
                indices: missing,
            });
        } else {
            excluded.push(ExcludedLevel {
                level: MISSING_LEVEL.to_owned(),
                count: missing.len(),
                reason: ExclusionReason::Missing,
            });
        }
    }
    if groups.len() < 2 {
        return Err(Error::NothingToCompare {
            attribute: attribute.to_owned(),
            included: groups.len(),
        });
    }
    Ok(SubgroupPartition {
        attribute: attribute.to_owned(),
        groups,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_schema() -> CohortSchema {
        CohortSchema::new("id", "y")
            .with_score("m1", "score")
            .with_protected(ProtectedColumn::categorical("sex"))
            .with_covariate("bmi", CovariateKind::Numeric)
    }

    #[test]
    fn parses_four_rows() {
        let src = "id,y,score,sex,bmi\na,0,0.1,F,20\nb,0,0.4,M,NA\nc,1,0.35,F,31.5\nd,1,0.8,M,25\n";
        let c = parse_cohort(src.as_bytes(), &small_schema()).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.labels(), vec![false, false, true, true]);
        assert_eq!(
            c.scores("m1").unwrap(),
            vec![Some(0.1), Some(0.4), Some(0.35), Some(0.8)]
        );
        assert_eq!(c.levels("sex").unwrap(), &["F".to_owned(), "M".to_owned()]);
        assert_eq!(c.records()[1].covariates[0], CovariateValue::Missing);
    }

    #[test]
    fn bad_label_cites_line() {
        let src = "id,y,score,sex,bmi\na,0,0.1,F,20\nb,2,0.4,M,22\n";
        match parse_cohort(src.as_bytes(), &small_schema()) {
            Err(Error::Rows(r)) => {
                assert_eq!(r.diagnostics.len(), 1);
                assert_eq!(r.diagnostics[0].line, 3);
                assert_eq!(r.diagnostics[0].column.as_deref(), Some("y"));
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn score_out_of_range() {
        let src = "id,y,score,sex,bmi\na,0,1.2,F,20\n";
        let Err(Error::Rows(r)) = parse_cohort(src.as_bytes(), &small_schema()) else {
            panic!("expected row error");
        };
        assert_eq!(r.diagnostics[0].message, "score out of [0,1]");
    }

    #[test]
    fn missing_header_column_is_named() {
        let src = "id,y,score,bmi\na,0,0.2,20\n";
        match parse_cohort(src.as_bytes(), &small_schema()) {
            Err(Error::MissingColumns(cols)) => assert_eq!(cols, vec!["sex".to_owned()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_missing_labels_rejected() {
        let src = "id,y,score,sex,bmi\na,0,0.1,F,20\na,1,0.4,M,22\nc,NA,0.4,M,22\nd,1,NA,M,1\n";
        let Err(Error::Rows(r)) = parse_cohort(src.as_bytes(), &small_schema()) else {
            panic!("expected row error");
        };
        let msgs: Vec<_> = r
            .diagnostics
            .iter()
            .map(|d| (d.line, d.message.as_str()))
            .collect();
        assert!(msgs.contains(&(3, "duplicate id `a`")));
        assert!(msgs.contains(&(4, "missing label")));
        assert!(msgs.contains(&(5, "all scores missing")));
    }

    #[test]
    fn tab_delimited() {
        let mut schema = small_schema();
        schema.delimiter = Delimiter::Tab;
        let src = "id\ty\tscore\tsex\tbmi\na\t1\t0.9\tF\t20\n";
        let c = parse_cohort(src.as_bytes(), &schema).unwrap();
        assert_eq!(c.records()[0].scores[0], Some(0.9));
    }

    #[test]
    fn explicit_edges_close_last_bin() {
        let b = bin_continuous(
            &[
                Some(74.0),
                Some(18.0),
                Some(57.0),
                Some(89.9),
                Some(90.0),
                None,
            ],
            &Binning::Edges(vec![18.0, 57.0, 74.0, 90.0]),
        )
        .unwrap();
        assert_eq!(b[0].as_deref(), Some("[74 - 90]"));
        assert_eq!(b[1].as_deref(), Some("[18 - 57)"));
        assert_eq!(b[2].as_deref(), Some("[57 - 74)"));
        assert_eq!(b[3].as_deref(), Some("[74 - 90]"));
        assert_eq!(b[4].as_deref(), Some("[74 - 90]"));
        assert_eq!(b[5], None);
    }

    #[test]
    fn tertiles_reject_ties_and_all_missing() {
        let ties = vec![Some(1.0); 4];
        assert!(matches!(
            bin_continuous(&ties, &Binning::Tertiles),
            Err(Error::Binning(_))
        ));
        assert!(matches!(
            bin_continuous(&[None, None], &Binning::Tertiles),
            Err(Error::Binning(_))
        ));
        assert!(bin_continuous(&[Some(1.0), Some(2.0)], &Binning::Tertiles).is_err());
    }

    #[test]
    fn edges_must_increase() {
        assert!(bin_continuous(&[Some(1.0)], &Binning::Edges(vec![3.0, 2.0])).is_err());
        assert!(bin_continuous(&[Some(1.0)], &Binning::Edges(vec![3.0])).is_err());
    }

    #[test]
    fn continuous_attribute_levels_in_bin_order() {
        let schema = CohortSchema::new("id", "y")
            .with_score("m", "s")
            .with_protected(ProtectedColumn::continuous(
                "age",
                Some(vec![0.0, 50.0, 100.0]),
            ));
        let src = "id,y,s,age\na,0,0.1,70\nb,1,0.2,20\nc,1,0.3,NA\n";
        let c = parse_cohort(src.as_bytes(), &schema).unwrap();
        assert_eq!(
            c.levels("age").unwrap(),
            &["[0 - 50)".to_owned(), "[50 - 100]".to_owned()]
        );
        assert_eq!(c.records()[2].protected[0], None);
    }

    fn cohort_with_levels(levels: &[(&str, usize)], missing: usize) -> Cohort {
        let schema = CohortSchema::new("id", "y")
            .with_score("m", "s")
            .with_protected(ProtectedColumn::categorical("race"));
        let mut records = Vec::new();
        let mut k = 0;
        let mut push = |level: Option<&str>| {
            records.push(CohortRecord {
                id: format!("r{k}"),
                label: k % 2 == 0,
                scores: vec![Some(0.5)],
                protected: vec![level.map(str::to_owned)],
                covariates: vec![],
            });
            k += 1;
        };
        for (l, n) in levels {
            for _ in 0..*n {
                push(Some(l));
            }
        }
        for _ in 0..missing {
            push(None);
        }
        Cohort::new(schema, records).unwrap()
    }

    #[test]
    fn table_one_race_partition() {
        let c = cohort_with_levels(&[("Black", 971), ("White", 2747)], 94);
        let p = subgroup_partition(&c, "race", 100).unwrap();
        let sizes: Vec<_> = p
            .groups
            .iter()
            .map(|g| (g.level.as_str(), g.indices.len()))
            .collect();
        assert_eq!(sizes, vec![("Black", 971), ("White", 2747)]);
        assert_eq!(
            p.excluded,
            vec![ExcludedLevel {
                level: MISSING_LEVEL.into(),
                count: 94,
                reason: ExclusionReason::Missing
            }]
        );
    }

    #[test]
    fn single_level_has_nothing_to_compare() {
        let c = cohort_with_levels(&[("White", 300)], 0);
        assert!(matches!(
            subgroup_partition(&c, "race", 100),
            Err(Error::NothingToCompare { included: 1, .. })
        ));
        assert!(matches!(
            subgroup_partition(&c, "sex", 1),
            Err(Error::UnknownAttribute(_))
        ));
    }

    #[test]
    fn no_filtering_with_zero_minimum() {
        let c = cohort_with_levels(&[("A", 1), ("B", 1)], 0);
        let p = subgroup_partition(&c, "race", 0).unwrap();
        assert_eq!(p.groups.len(), 2);
        assert!(p.excluded.is_empty());
    }

    #[test]
    fn small_levels_excluded_as_too_small() {
        let c = cohort_with_levels(&[("A", 150), ("B", 120), ("C", 30)], 200);
        let p = subgroup_partition(&c, "race", 100).unwrap();
        assert_eq!(p.level_names(), vec!["A", "B", MISSING_LEVEL]);
        assert_eq!(p.excluded[0].reason, ExclusionReason::TooSmall);
        let covered: usize = p.groups.iter().map(|g| g.indices.len()).sum::<usize>()
            + p.excluded.iter().map(|e| e.count).sum::<usize>();
        assert_eq!(covered, c.len());
    }
}

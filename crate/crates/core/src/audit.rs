//! Bootstrap subgroup audits: diff-from-average metrics with one-sample
//! t-tests, propensity-matched re-evaluation, model comparison and
//! max-minus-min discrepancy summaries.
//!
//! Randomness: every bootstrap replicate draws from its own ChaCha8 stream.
//! The key is built from `(seed, domain, contrast)` and the stream id is the
//! replicate index, so results do not depend on how replicates are scheduled
//! across threads.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{subgroup_partition, Cohort, SubgroupPartition, DEFAULT_MIN_GROUP_SIZE};
use crate::error::{Error, Result};
use crate::glm::{FitOptions, DEFAULT_RIDGE};
use crate::matching::{
    balance_report, estimate_propensity, BalanceReport, MatchedSample, DEFAULT_CALIPER_MULTIPLIER,
    DEFAULT_MIN_MATCHED_N,
};
use crate::metrics::{auroc_sorted, threshold_metrics, youden_sorted, ConfusionCounts, Metric};
use crate::num::{mean, sample_variance};
use crate::stats::t_test_one_sample;

pub const DEFAULT_BOOTSTRAPS: usize = 150;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_ROUNDING: usize = 2;

const DOMAIN_SUBGROUP: u64 = 0;
const DOMAIN_MATCHED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Youden threshold recomputed on each pooled replicate and applied to
    /// every subgroup.
    YoudenPooledPerReplicate,
    Fixed(f64),
}

/// Which level of a two-level contrast plays the treated role.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatedChoice {
    /// The level with fewer records (ties: the earlier level).
    #[default]
    Smaller,
    /// The earlier level in table order.
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    /// Protected attributes to audit; empty means all of them.
    pub attributes: Vec<String>,
    pub metrics: Vec<Metric>,
    pub n_bootstrap: usize,
    pub alpha: f64,
    pub seed: u64,
    pub threshold_policy: ThresholdPolicy,
    pub propensity_covariates: Vec<String>,
    pub caliper_multiplier: Option<f64>,
    pub min_group_size: usize,
    pub min_matched_n: usize,
    pub rounding: usize,
    pub ridge: f64,
    pub treated: TreatedChoice,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            attributes: Vec::new(),
            metrics: Metric::ALL.to_vec(),
            n_bootstrap: DEFAULT_BOOTSTRAPS,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            threshold_policy: ThresholdPolicy::YoudenPooledPerReplicate,
            propensity_covariates: Vec::new(),
            caliper_multiplier: Some(DEFAULT_CALIPER_MULTIPLIER),
            min_group_size: DEFAULT_MIN_GROUP_SIZE,
            min_matched_n: DEFAULT_MIN_MATCHED_N,
            rounding: DEFAULT_ROUNDING,
            ridge: DEFAULT_RIDGE,
            treated: TreatedChoice::Smaller,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n_bootstrap < 2 {
            return Err(Error::Config("n_bootstrap must be at least 2".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("no metrics selected".into()));
        }
        if let ThresholdPolicy::Fixed(t) = self.threshold_policy {
            if !t.is_finite() {
                return Err(Error::Config("fixed threshold must be finite".into()));
            }
        }
        if self.ridge < 0.0 {
            return Err(Error::Config("ridge must be >= 0".into()));
        }
        Ok(())
    }

    fn attributes_of(&self, cohort: &Cohort) -> Result<Vec<String>> {
        let schema = cohort.schema();
        if self.attributes.is_empty() {
            return Ok(schema
                .protected_columns
                .iter()
                .map(|p| p.name.clone())
                .collect());
        }
        for a in &self.attributes {
            if schema.protected_index(a).is_none() {
                return Err(Error::UnknownAttribute(a.clone()));
            }
        }
        Ok(self.attributes.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    /// Bootstrap mean of (group metric - attribute average).
    pub mean_diff: f64,
    /// Bootstrap standard deviation of the diffs.
    pub sd: f64,
    /// `None` for a degenerate (zero-variance) sample with nonzero mean.
    pub t_stat: Option<f64>,
    pub p_value: f64,
    pub significant: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Tested(CellStats),
    /// Fewer than two replicates with a defined diff.
    Insufficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAuditResult {
    pub attribute: String,
    pub level: String,
    pub metric: Metric,
    /// Replicates in which the level's metric was defined.
    pub n_effective: usize,
    pub outcome: CellOutcome,
}

impl SubgroupAuditResult {
    pub fn stats(&self) -> Option<&CellStats> {
        match &self.outcome {
            CellOutcome::Tested(s) => Some(s),
            CellOutcome::Insufficient => None,
        }
    }

    pub fn mean_diff(&self) -> Option<f64> {
        self.stats().map(|s| s.mean_diff)
    }

    pub fn is_significant(&self) -> bool {
        self.stats().is_some_and(|s| s.significant)
    }
}

/// Summarizes bootstrap diffs of one cell.
pub fn summarize_cell(diffs: &[f64], alpha: f64) -> CellOutcome {
    if diffs.len() < 2 {
        return CellOutcome::Insufficient;
    }
    let t = t_test_one_sample(diffs, 0.0).expect("at least two samples");
    CellOutcome::Tested(CellStats {
        mean_diff: mean(diffs),
        sd: sample_variance(diffs).sqrt(),
        t_stat: t.t_stat.is_finite().then_some(t.t_stat),
        p_value: t.p_value,
        significant: t.p_value < alpha,
        degenerate: t.degenerate,
    })
}

/// Diff of each value from the unweighted mean of the defined values.
/// `None` when fewer than two values are defined; undefined entries stay
/// undefined.
pub fn diff_from_average(values: &[Option<f64>]) -> Option<Vec<Option<f64>>> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.len() < 2 {
        return None;
    }
    let avg = mean(&defined);
    Some(values.iter().map(|v| v.map(|x| x - avg)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiff {
    pub level: String,
    pub value: Option<f64>,
    pub diff: Option<f64>,
}

/// One sorted evaluation sample: `(score, label, record)` by ascending score.
type Sample = Vec<(f64, bool, usize)>;

fn sorted_sample(
    scores: &[f64],
    labels: &[bool],
    records: impl IntoIterator<Item = usize>,
) -> Sample {
    let mut s: Sample = records
        .into_iter()
        .map(|i| (scores[i], labels[i], i))
        .collect();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    s
}

fn sample_threshold(sample: &Sample, policy: ThresholdPolicy) -> Option<f64> {
    match policy {
        ThresholdPolicy::Fixed(t) => Some(t),
        ThresholdPolicy::YoudenPooledPerReplicate => {
            let pairs: Vec<(f64, bool)> = sample.iter().map(|p| (p.0, p.1)).collect();
            youden_sorted(&pairs).ok()
        }
    }
}

/// Metric values for the members of `sample` accepted by `member`.
fn metric_values(
    sample: &Sample,
    member: impl Fn(usize) -> bool,
    threshold: Option<f64>,
    metrics: &[Metric],
) -> Vec<Option<f64>> {
    let mut counts = ConfusionCounts::default();
    if let Some(t) = threshold {
        for &(s, y, i) in sample {
            if member(i) {
                counts.add(y, s >= t);
            }
        }
    }
    let tm = threshold.map(|t| threshold_metrics(&counts, t));
    let auc = if metrics.contains(&Metric::Auroc) {
        auroc_sorted(sample.iter().filter(|p| member(p.2)).map(|p| (p.0, p.1))).ok()
    } else {
        None
    };
    metrics
        .iter()
        .map(|&m| match m {
            Metric::Auroc => auc,
            other => tm.and_then(|tm| tm.get(other)),
        })
        .collect()
}

/// Group metric values and diffs from average for one attribute and metric.
///
/// `indices` are cohort record positions (repeats allowed); records outside
/// the partition's groups or without a score for `model` are ignored.
pub fn group_diffs(
    cohort: &Cohort,
    model: &str,
    indices: &[usize],
    partition: &SubgroupPartition,
    metric: Metric,
    threshold: Option<f64>,
) -> Result<Vec<LevelDiff>> {
    let scores = cohort.scores(model)?;
    let labels = cohort.labels();
    let member = partition.membership(cohort.len());
    let dense: Vec<f64> = scores.iter().map(|s| s.unwrap_or(f64::NAN)).collect();
    let sample = sorted_sample(
        &dense,
        &labels,
        indices.iter().copied().filter(|&i| scores[i].is_some()),
    );
    if metric.needs_threshold() && threshold.is_none() {
        return Err(Error::InvalidArgument(format!(
            "{metric} needs a threshold"
        )));
    }
    let values: Vec<Option<f64>> = (0..partition.groups.len())
        .map(|g| metric_values(&sample, |i| member[i] == Some(g), threshold, &[metric])[0])
        .collect();
    let diffs = diff_from_average(&values).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "fewer than two levels of `{}` have a defined {metric}",
            partition.attribute
        ))
    })?;
    Ok(partition
        .groups
        .iter()
        .zip(values.iter().zip(diffs))
        .map(|(g, (v, d))| LevelDiff {
            level: g.level.clone(),
            value: *v,
            diff: d,
        })
        .collect())
}

fn replicate_rng(seed: u64, domain: u64, contrast: u64, replicate: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&contrast.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replicate as u64);
    rng
}

/// Diffs from one replicate for one (attribute, metric): one entry per
/// level, `None` where the level's metric was undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateDiffs {
    pub replicate: usize,
    pub attribute: String,
    pub metric: Metric,
    pub diffs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMetric {
    pub metric: Metric,
    /// Mean over replicates of the pooled metric.
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n_effective: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapAudit {
    pub model: String,
    pub results: Vec<SubgroupAuditResult>,
    pub overall: Vec<OverallMetric>,
    pub partitions: Vec<SubgroupPartitionSummary>,
    /// Mean decision threshold over replicates where one was defined.
    pub mean_threshold: Option<f64>,
    #[serde(skip)]
    pub replicate_diffs: Vec<ReplicateDiffs>,
}

/// Level sizes of a partition, without the index sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupPartitionSummary {
    pub attribute: String,
    pub levels: Vec<(String, usize)>,
    pub excluded: Vec<crate::cohort::ExcludedLevel>,
}

impl From<&SubgroupPartition> for SubgroupPartitionSummary {
    fn from(p: &SubgroupPartition) -> Self {
        Self {
            attribute: p.attribute.clone(),
            levels: p
                .groups
                .iter()
                .map(|g| (g.level.clone(), g.indices.len()))
                .collect(),
            excluded: p.excluded.clone(),
        }
    }
}

/// Records with a score for `model`, as a standalone cohort.
fn scored(cohort: &Cohort, model: &str) -> Result<Cohort> {
    let scores = cohort.scores(model)?;
    if scores.iter().all(Option::is_some) {
        return Ok(cohort.clone());
    }
    let keep: Vec<usize> = (0..cohort.len()).filter(|&i| scores[i].is_some()).collect();
    Ok(cohort.subset(&keep))
}

fn dense_scores(cohort: &Cohort, model: &str) -> Result<Vec<f64>> {
    Ok(cohort
        .scores(model)?
        .into_iter()
        .map(|s| s.expect("scored cohort"))
        .collect())
}

struct ReplicateEval {
    threshold: Option<f64>,
    overall: Vec<Option<f64>>,
    /// [attribute][metric] -> per-level diffs, `None` if < 2 defined levels.
    diffs: Vec<Vec<Option<Vec<Option<f64>>>>>,
}

fn evaluate(
    sample: &Sample,
    memberships: &[(Vec<Option<usize>>, usize)],
    config: &AuditConfig,
) -> ReplicateEval {
    let threshold = sample_threshold(sample, config.threshold_policy);
    let overall = metric_values(sample, |_| true, threshold, &config.metrics);
    let diffs = memberships
        .iter()
        .map(|(member, n_groups)| {
            let per_group: Vec<Vec<Option<f64>>> = (0..*n_groups)
                .map(|g| {
                    metric_values(sample, |i| member[i] == Some(g), threshold, &config.metrics)
                })
                .collect();
            (0..config.metrics.len())
                .map(|m| {
                    let values: Vec<Option<f64>> = per_group.iter().map(|v| v[m]).collect();
                    diff_from_average(&values)
                })
                .collect()
        })
        .collect();
    ReplicateEval {
        threshold,
        overall,
        diffs,
    }
}

fn aggregate_overall(evals: &[ReplicateEval], metrics: &[Metric]) -> Vec<OverallMetric> {
    metrics
        .iter()
        .enumerate()
        .map(|(m, &metric)| {
            let v: Vec<f64> = evals.iter().filter_map(|e| e.overall[m]).collect();
            OverallMetric {
                metric,
                mean: (!v.is_empty()).then(|| mean(&v)),
                sd: (v.len() >= 2).then(|| sample_variance(&v).sqrt()),
                n_effective: v.len(),
            }
        })
        .collect()
}

fn mean_threshold(evals: &[ReplicateEval]) -> Option<f64> {
    let t: Vec<f64> = evals.iter().filter_map(|e| e.threshold).collect();
    (!t.is_empty()).then(|| mean(&t))
}

/// Collects per-cell diffs across replicates and tests each against zero.
fn aggregate_cells(
    evals: &[ReplicateEval],
    attribute: &str,
    a: usize,
    levels: &[String],
    config: &AuditConfig,
) -> Vec<SubgroupAuditResult> {
    let mut out = Vec::new();
    for (g, level) in levels.iter().enumerate() {
        for (m, &metric) in config.metrics.iter().enumerate() {
            let diffs: Vec<f64> = evals
                .iter()
                .filter_map(|e| e.diffs[a][m].as_ref().and_then(|d| d[g]))
                .collect();
            let skipped = evals.len() - diffs.len();
            if skipped > 0 {
                log::info!("{attribute}={level} {metric}: {skipped} replicate(s) undefined");
            }
            out.push(SubgroupAuditResult {
                attribute: attribute.to_owned(),
                level: level.clone(),
                metric,
                n_effective: diffs.len(),
                outcome: summarize_cell(&diffs, config.alpha),
            });
        }
    }
    out
}

/// Bootstrap audit of subgroup diffs from average for one score column.
///
/// Each replicate resamples the scored records with replacement, sets the
/// threshold according to the policy, and computes per-level diffs for every
/// selected attribute and metric.
pub fn bootstrap_audit(
    cohort: &Cohort,
    model: &str,
    config: &AuditConfig,
) -> Result<BootstrapAudit> {
    config.validate()?;
    let base = scored(cohort, model)?;
    if base.is_empty() {
        return Err(Error::Empty);
    }
    let attributes = config.attributes_of(&base)?;
    let partitions: Vec<SubgroupPartition> = attributes
        .iter()
        .map(|a| subgroup_partition(&base, a, config.min_group_size))
        .collect::<Result<_>>()?;
    let memberships: Vec<(Vec<Option<usize>>, usize)> = partitions
        .iter()
        .map(|p| (p.membership(base.len()), p.groups.len()))
        .collect();
    let scores = dense_scores(&base, model)?;
    let labels = base.labels();
    let n = base.len();

    let evals: Vec<ReplicateEval> = (0..config.n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(config.seed, DOMAIN_SUBGROUP, 0, b);
            let draw = (0..n).map(|_| rng.random_range(0..n)).collect::<Vec<_>>();
            evaluate(&sorted_sample(&scores, &labels, draw), &memberships, config)
        })
        .collect();

    let mut results = Vec::new();
    let mut replicate_diffs = Vec::new();
    for (a, p) in partitions.iter().enumerate() {
        let levels: Vec<String> = p.groups.iter().map(|g| g.level.clone()).collect();
        results.extend(aggregate_cells(&evals, &p.attribute, a, &levels, config));
        for (b, e) in evals.iter().enumerate() {
            for (m, &metric) in config.metrics.iter().enumerate() {
                if let Some(d) = &e.diffs[a][m] {
                    replicate_diffs.push(ReplicateDiffs {
                        replicate: b,
                        attribute: p.attribute.clone(),
                        metric,
                        diffs: d.clone(),
                    });
                }
            }
        }
    }
    Ok(BootstrapAudit {
        model: model.to_owned(),
        results,
        overall: aggregate_overall(&evals, &config.metrics),
        partitions: partitions
            .iter()
            .map(SubgroupPartitionSummary::from)
            .collect(),
        mean_threshold: mean_threshold(&evals),
        replicate_diffs,
    })
}

/// Why a contrast has no matched audit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ContrastStatus {
    Ready,
    /// Matched records (both arms) below the configured minimum.
    Skipped {
        matched_n: usize,
        required: usize,
    },
    Failed {
        reason: String,
    },
}

/// A propensity-matched two-level contrast, built once and reused across
/// score columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub attribute: String,
    /// The two levels in table order.
    pub levels: (String, String),
    pub matched: Option<MatchedSample>,
    pub balance: Option<BalanceReport>,
    pub status: ContrastStatus,
}

/// Fits the propensity model and matches every unordered level pair of each
/// audited attribute. Indices in the returned samples refer to `cohort`.
pub fn build_contrasts(cohort: &Cohort, config: &AuditConfig) -> Result<Vec<Contrast>> {
    config.validate()?;
    let schema = cohort.schema();
    if let Some(c) = config
        .propensity_covariates
        .iter()
        .find(|c| schema.protected_index(c).is_some())
    {
        return Err(Error::ProtectedCovariate(c.clone()));
    }
    if let Some(c) = config
        .propensity_covariates
        .iter()
        .find(|c| schema.covariate_index(c).is_none())
    {
        return Err(Error::UnknownCovariate(c.clone()));
    }
    let options = FitOptions::default().with_ridge(config.ridge);
    let mut out = Vec::new();
    for attribute in config.attributes_of(cohort)? {
        let p = subgroup_partition(cohort, &attribute, config.min_group_size)?;
        for x in 0..p.groups.len() {
            for y in x + 1..p.groups.len() {
                let (gx, gy) = (&p.groups[x], &p.groups[y]);
                let x_treated = match config.treated {
                    TreatedChoice::First => true,
                    TreatedChoice::Smaller => gx.indices.len() <= gy.indices.len(),
                };
                let (treated, control) = if x_treated { (gx, gy) } else { (gy, gx) };
                let levels = (gx.level.clone(), gy.level.clone());
                let fit = estimate_propensity(
                    cohort,
                    &attribute,
                    &treated.level,
                    &control.level,
                    &config.propensity_covariates,
                    options,
                )
                .and_then(|fit| MatchedSample::from_fit(&fit, config.caliper_multiplier));
                let contrast = match fit {
                    Err(e) => Contrast {
                        attribute: attribute.clone(),
                        levels,
                        matched: None,
                        balance: None,
                        status: ContrastStatus::Failed {
                            reason: e.to_string(),
                        },
                    },
                    Ok(matched) => {
                        let balance = balance_report(
                            cohort,
                            &matched,
                            &config.propensity_covariates,
                            config.min_matched_n,
                        )?;
                        let status = if balance.passes_min_n {
                            ContrastStatus::Ready
                        } else {
                            ContrastStatus::Skipped {
                                matched_n: matched.pairs.len() * 2,
                                required: config.min_matched_n,
                            }
                        };
                        Contrast {
                            attribute: attribute.clone(),
                            levels,
                            matched: Some(matched),
                            balance: Some(balance),
                            status,
                        }
                    }
                };
                out.push(contrast);
            }
        }
    }
    Ok(out)
}

/// Matched-audit outcome against one opponent level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContrastOutcome {
    Audited(SubgroupAuditResult),
    Skipped { matched_n: usize, required: usize },
    Failed { reason: String },
}

impl ContrastOutcome {
    pub fn mean_diff(&self) -> Option<f64> {
        match self {
            ContrastOutcome::Audited(r) => r.mean_diff(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpponentCell {
    pub opponent: String,
    pub outcome: ContrastOutcome,
}

/// Matched-sample diffs of one level against each other level, opponents
/// in table order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedAuditResult {
    pub attribute: String,
    pub level: String,
    pub metric: Metric,
    pub opponents: Vec<OpponentCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedAudit {
    pub model: String,
    pub results: Vec<MatchedAuditResult>,
    pub contrasts: Vec<Contrast>,
}

/// Bootstrap over matched pairs of one contrast: resamples pairs with
/// replacement and computes two-level diffs between the arms.
fn audit_contrast(
    cohort: &Cohort,
    scores: &[f64],
    labels: &[bool],
    contrast: &Contrast,
    contrast_id: u64,
    config: &AuditConfig,
) -> Vec<SubgroupAuditResult> {
    let matched = contrast
        .matched
        .as_ref()
        .expect("ready contrast has a sample");
    let first_is_treated = matched.treated_level == contrast.levels.0;
    let mut member = vec![None; cohort.len()];
    for p in &matched.pairs {
        member[p.treated] = Some(if first_is_treated { 0 } else { 1 });
        member[p.control] = Some(if first_is_treated { 1 } else { 0 });
    }
    let memberships = vec![(member, 2)];
    let n_pairs = matched.pairs.len();
    let evals: Vec<ReplicateEval> = (0..config.n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(config.seed, DOMAIN_MATCHED, contrast_id, b);
            let mut draw = Vec::with_capacity(2 * n_pairs);
            for _ in 0..n_pairs {
                let p = &matched.pairs[rng.random_range(0..n_pairs)];
                draw.push(p.treated);
                draw.push(p.control);
            }
            evaluate(&sorted_sample(scores, labels, draw), &memberships, config)
        })
        .collect();
    let levels = [contrast.levels.0.clone(), contrast.levels.1.clone()];
    aggregate_cells(&evals, &contrast.attribute, 0, &levels, config)
}

/// Matched audit using contrasts from [`build_contrasts`] on the same cohort.
pub fn matched_audit_with(
    cohort: &Cohort,
    model: &str,
    config: &AuditConfig,
    contrasts: &[Contrast],
) -> Result<MatchedAudit> {
    config.validate()?;
    let scores: Vec<Option<f64>> = cohort.scores(model)?;
    if scores.iter().any(Option::is_none) {
        return Err(Error::InvalidArgument(format!(
            "matched audit needs a score for every record of `{model}`; audit the scored subset"
        )));
    }
    let scores: Vec<f64> = scores.into_iter().flatten().collect();
    let labels = cohort.labels();

    // (attribute, level, opponent) -> per-metric outcome
    let mut cells: HashMap<(String, String, String), Vec<ContrastOutcome>> = HashMap::new();
    for (k, c) in contrasts.iter().enumerate() {
        let (lx, ly) = &c.levels;
        match &c.status {
            ContrastStatus::Ready => {
                let res = audit_contrast(cohort, &scores, &labels, c, k as u64, config);
                for r in res {
                    let opponent = if &r.level == lx {
                        ly.clone()
                    } else {
                        lx.clone()
                    };
                    cells
                        .entry((c.attribute.clone(), r.level.clone(), opponent))
                        .or_default()
                        .push(ContrastOutcome::Audited(r));
                }
            }
            other => {
                let outcome = match other {
                    ContrastStatus::Skipped {
                        matched_n,
                        required,
                    } => ContrastOutcome::Skipped {
                        matched_n: *matched_n,
                        required: *required,
                    },
                    ContrastStatus::Failed { reason } => ContrastOutcome::Failed {
                        reason: reason.clone(),
                    },
                    ContrastStatus::Ready => unreachable!(),
                };
                for (level, opponent) in [(lx, ly), (ly, lx)] {
                    cells.insert(
                        (c.attribute.clone(), level.clone(), opponent.clone()),
                        vec![outcome.clone(); config.metrics.len()],
                    );
                }
            }
        }
    }

    let mut results = Vec::new();
    let mut attributes: Vec<&str> = Vec::new();
    for c in contrasts {
        if !attributes.contains(&c.attribute.as_str()) {
            attributes.push(&c.attribute);
        }
    }
    for attribute in attributes {
        let mut levels: Vec<&str> = Vec::new();
        for c in contrasts.iter().filter(|c| c.attribute == attribute) {
            for l in [&c.levels.0, &c.levels.1] {
                if !levels.contains(&l.as_str()) {
                    levels.push(l);
                }
            }
        }
        for &level in &levels {
            for (m, &metric) in config.metrics.iter().enumerate() {
                let opponents = levels
                    .iter()
                    .filter(|&&o| o != level)
                    .filter_map(|&o| {
                        cells
                            .get(&(attribute.to_owned(), level.to_owned(), o.to_owned()))
                            .map(|v| OpponentCell {
                                opponent: o.to_owned(),
                                outcome: v[m].clone(),
                            })
                    })
                    .collect();
                results.push(MatchedAuditResult {
                    attribute: attribute.to_owned(),
                    level: level.to_owned(),
                    metric,
                    opponents,
                });
            }
        }
    }
    Ok(MatchedAudit {
        model: model.to_owned(),
        results,
        contrasts: contrasts.to_vec(),
    })
}

/// Propensity-matched audit of one score column: every level is compared
/// with every other level on a 1-to-1 matched sample.
pub fn matched_audit(cohort: &Cohort, model: &str, config: &AuditConfig) -> Result<MatchedAudit> {
    let base = scored(cohort, model)?;
    let contrasts = build_contrasts(&base, config)?;
    matched_audit_with(&base, model, config, &contrasts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingCondition {
    BeforeMatching,
    AfterMatching,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    WithProtected,
    WithoutProtected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancySummary {
    pub attribute: String,
    pub metric: Metric,
    pub matching: MatchingCondition,
    pub variant: ModelVariant,
    /// max - min of the collapsed per-level diffs.
    pub gap: f64,
    /// Collapsed diff per level, in input order.
    pub levels: Vec<(String, f64)>,
}

fn collapse(mut values: Vec<f64>) -> f64 {
    // sorted so the result does not depend on opponent order
    values.sort_by(f64::total_cmp);
    mean(&values)
}

fn gap_of(levels: &[(String, f64)]) -> f64 {
    let max = levels.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
    let min = levels.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
    max - min
}

/// Max-minus-min gap of bootstrap-averaged diffs per attribute, before
/// matching (from `before`) and after matching (from `after`, each level's
/// per-opponent values collapsed by their unweighted mean). Attributes
/// with fewer than two usable levels produce no summary.
pub fn summarize_discrepancy(
    before: &[SubgroupAuditResult],
    after: &[MatchedAuditResult],
    metric: Metric,
    variant: ModelVariant,
) -> Vec<DiscrepancySummary> {
    let mut attributes: Vec<&str> = Vec::new();
    for a in before
        .iter()
        .map(|r| r.attribute.as_str())
        .chain(after.iter().map(|r| r.attribute.as_str()))
    {
        if !attributes.contains(&a) {
            attributes.push(a);
        }
    }
    let mut out = Vec::new();
    for attribute in attributes {
        let pre: Vec<(String, f64)> = before
            .iter()
            .filter(|r| r.attribute == attribute && r.metric == metric)
            .filter_map(|r| r.mean_diff().map(|d| (r.level.clone(), d)))
            .collect();
        let post: Vec<(String, f64)> = after
            .iter()
            .filter(|r| r.attribute == attribute && r.metric == metric)
            .filter_map(|r| {
                let v: Vec<f64> = r
                    .opponents
                    .iter()
                    .filter_map(|o| o.outcome.mean_diff())
                    .collect();
                (!v.is_empty()).then(|| (r.level.clone(), collapse(v)))
            })
            .collect();
        for (matching, levels) in [
            (MatchingCondition::BeforeMatching, pre),
            (MatchingCondition::AfterMatching, post),
        ] {
            if levels.len() >= 2 {
                out.push(DiscrepancySummary {
                    attribute: attribute.to_owned(),
                    metric,
                    matching,
                    variant,
                    gap: gap_of(&levels),
                    levels,
                });
            }
        }
    }
    out
}

/// Side-by-side cell of two models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub attribute: String,
    pub level: String,
    pub metric: Metric,
    /// `None` for unmatched cells, otherwise the opponent level.
    pub opponent: Option<String>,
    pub a: Option<f64>,
    pub a_significant: bool,
    pub b: Option<f64>,
    pub b_significant: bool,
    /// `b - a` of the mean diffs.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub audit: BootstrapAudit,
    pub matched: MatchedAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model_a: String,
    pub model_b: String,
    pub run_a: ModelRun,
    pub run_b: ModelRun,
    pub rows: Vec<ComparisonRow>,
}

fn row(
    r_a: &SubgroupAuditResult,
    b: Option<&SubgroupAuditResult>,
    opponent: Option<String>,
) -> ComparisonRow {
    let a = r_a.mean_diff();
    let bv = b.and_then(SubgroupAuditResult::mean_diff);
    ComparisonRow {
        attribute: r_a.attribute.clone(),
        level: r_a.level.clone(),
        metric: r_a.metric,
        opponent,
        a,
        a_significant: r_a.is_significant(),
        b: bv,
        b_significant: b.is_some_and(SubgroupAuditResult::is_significant),
        delta: a.zip(bv).map(|(x, y)| y - x),
    }
}

/// Lines up the cells of two model runs: unmatched cells first, then
/// matched cells that were audited in `run_a`.
pub fn comparison_rows(run_a: &ModelRun, run_b: &ModelRun) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for r in &run_a.audit.results {
        let other = run_b
            .audit
            .results
            .iter()
            .find(|x| x.attribute == r.attribute && x.level == r.level && x.metric == r.metric);
        rows.push(row(r, other, None));
    }
    for m in &run_a.matched.results {
        for o in &m.opponents {
            let ContrastOutcome::Audited(r) = &o.outcome else {
                continue;
            };
            let other = run_b
                .matched
                .results
                .iter()
                .find(|x| x.attribute == m.attribute && x.level == m.level && x.metric == m.metric)
                .and_then(|x| x.opponents.iter().find(|xo| xo.opponent == o.opponent))
                .and_then(|xo| match &xo.outcome {
                    ContrastOutcome::Audited(r) => Some(r),
                    _ => None,
                });
            rows.push(row(r, other, Some(o.opponent.clone())));
        }
    }
    rows
}

/// Runs both audits for each model with the same seed, so replicate `b`
/// resamples the same records for both, and lines up the cells.
pub fn compare_models(
    cohort: &Cohort,
    model_a: &str,
    model_b: &str,
    config: &AuditConfig,
) -> Result<ComparisonReport> {
    let base_a = scored(cohort, model_a)?;
    let base_b = scored(cohort, model_b)?;
    let contrasts_a = build_contrasts(&base_a, config)?;
    let contrasts_b = if base_a.len() == base_b.len() && base_a.records() == base_b.records() {
        contrasts_a.clone()
    } else {
        build_contrasts(&base_b, config)?
    };
    let run_a = ModelRun {
        audit: bootstrap_audit(&base_a, model_a, config)?,
        matched: matched_audit_with(&base_a, model_a, config, &contrasts_a)?,
    };
    let run_b = ModelRun {
        audit: bootstrap_audit(&base_b, model_b, config)?,
        matched: matched_audit_with(&base_b, model_b, config, &contrasts_b)?,
    };

    let rows = comparison_rows(&run_a, &run_b);
    Ok(ComparisonReport {
        model_a: model_a.to_owned(),
        model_b: model_b.to_owned(),
        run_a,
        run_b,
        rows,
    })
}

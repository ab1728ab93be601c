//! Seeded synthetic cohorts with configurable confounding and injected
//! subgroup bias, plus the stratified split and logistic stand-in model
//! used to give them realistic score columns.
//!
//! Randomness: record `i` draws from ChaCha8 keyed by `(seed, domain)` on
//! stream `i`. Base draws and injection draws use different domains, so
//! adding or removing an injection leaves every other value unchanged.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    Cohort, CohortRecord, CohortSchema, CovariateKind, CovariateValue, ProtectedColumn,
};
use crate::error::{Error, Result};
use crate::glm::{
    encode_design, encode_with, fit_logistic, predict_proba, FitOptions, LogisticModel,
    MissingPolicy, DEFAULT_RIDGE,
};
use crate::num::{mean, sample_variance, sigmoid};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TEST_FRACTION: f64 = 0.3;

const DOMAIN_BASE: u64 = 0x5359_4e54_4841_5345;
const DOMAIN_INJECT: u64 = 0x5359_4e54_494e_4a45;
const DOMAIN_SPLIT: u64 = 0x5359_4e54_5350_4c54;

fn record_rng(seed: u64, domain: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelProbability {
    pub level: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedSpec {
    pub name: String,
    pub levels: Vec<LevelProbability>,
}

impl ProtectedSpec {
    pub fn new(name: &str, levels: &[(&str, f64)]) -> Self {
        Self {
            name: name.to_owned(),
            levels: levels
                .iter()
                .map(|(l, p)| LevelProbability {
                    level: (*l).to_owned(),
                    probability: *p,
                })
                .collect(),
        }
    }
}

/// Additive effect of membership in one protected level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEffect {
    pub attribute: String,
    pub level: String,
    pub coefficient: f64,
}

impl LevelEffect {
    pub fn new(attribute: &str, level: &str, coefficient: f64) -> Self {
        Self {
            attribute: attribute.to_owned(),
            level: level.to_owned(),
            coefficient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateGenerator {
    /// `mean + effects + sd * z`.
    Gaussian { mean: f64, sd: f64 },
    /// Success probability `sigmoid(logit(p) + effects)`.
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub generator: CovariateGenerator,
    #[serde(default)]
    pub dependence: Vec<LevelEffect>,
}

impl CovariateSpec {
    pub fn gaussian(name: &str, mean: f64, sd: f64) -> Self {
        Self {
            name: name.to_owned(),
            generator: CovariateGenerator::Gaussian { mean, sd },
            dependence: Vec::new(),
        }
    }

    pub fn bernoulli(name: &str, p: f64) -> Self {
        Self {
            name: name.to_owned(),
            generator: CovariateGenerator::Bernoulli { p },
            dependence: Vec::new(),
        }
    }

    pub fn depends_on(mut self, attribute: &str, level: &str, coefficient: f64) -> Self {
        self.dependence
            .push(LevelEffect::new(attribute, level, coefficient));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateCoefficient {
    pub covariate: String,
    pub coefficient: f64,
}

/// Logistic model generating the true outcome.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutcomeModel {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub coefficients: Vec<CovariateCoefficient>,
    #[serde(default)]
    pub protected_effects: Vec<LevelEffect>,
}

impl OutcomeModel {
    pub fn with_coefficient(mut self, covariate: &str, coefficient: f64) -> Self {
        self.coefficients.push(CovariateCoefficient {
            covariate: covariate.to_owned(),
            coefficient,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSpec {
    /// Score column name.
    pub name: String,
    /// Covariate and/or protected attribute names.
    pub features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreModel {
    /// True outcome probability plus Gaussian noise, clamped to [0, 1].
    OracleNoise {
        sd: f64,
        #[serde(default = "default_score_column")]
        column: String,
    },
    /// Logistic models fitted on a stratified training split; only the test
    /// split is emitted.
    TrainedLogistic {
        models: Vec<TrainedSpec>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
}

fn default_score_column() -> String {
    "score".into()
}

fn default_test_fraction() -> f64 {
    DEFAULT_TEST_FRACTION
}

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

impl ScoreModel {
    pub fn oracle(sd: f64) -> Self {
        ScoreModel::OracleNoise {
            sd,
            column: default_score_column(),
        }
    }

    fn columns(&self) -> Vec<String> {
        match self {
            ScoreModel::OracleNoise { column, .. } => vec![column.clone()],
            ScoreModel::TrainedLogistic { models, .. } => {
                models.iter().map(|m| m.name.clone()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    pub attribute: String,
    pub level: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// Extra Gaussian score noise with this standard deviation.
    ExtraNoise {
        sd: f64,
    },
    ScoreShift {
        delta: f64,
    },
    /// Each selected label is flipped with this probability.
    LabelFlip {
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub selector: Selector,
    pub mechanism: Mechanism,
    /// Score columns affected; empty means all.
    #[serde(default)]
    pub models: Vec<String>,
}

impl Injection {
    pub fn new(attribute: &str, level: &str, mechanism: Mechanism) -> Self {
        Self {
            selector: Selector {
                attribute: attribute.to_owned(),
                level: level.to_owned(),
            },
            mechanism,
            models: Vec::new(),
        }
    }

    pub fn only_for(mut self, model: &str) -> Self {
        self.models.push(model.to_owned());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub protected: Vec<ProtectedSpec>,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    #[serde(default)]
    pub outcome: OutcomeModel,
    pub score: ScoreModel,
    #[serde(default)]
    pub injections: Vec<Injection>,
}

fn check_prob(what: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what}: probability {p} outside [0, 1]"
        )))
    }
}

fn check_sd(what: &str, sd: f64) -> Result<()> {
    if sd >= 0.0 && sd.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what}: standard deviation {sd} must be >= 0"
        )))
    }
}

impl SynthConfig {
    fn level_probability(&self, attribute: &str, level: &str) -> Result<f64> {
        let spec = self
            .protected
            .iter()
            .find(|p| p.name == attribute)
            .ok_or_else(|| Error::Config(format!("unknown protected attribute `{attribute}`")))?;
        spec.levels
            .iter()
            .find(|l| l.level == level)
            .map(|l| l.probability)
            .ok_or_else(|| Error::Config(format!("attribute `{attribute}` has no level `{level}`")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Empty);
        }
        let mut names: Vec<&str> = vec!["id", "label"];
        for p in &self.protected {
            if p.levels.is_empty() {
                return Err(Error::Config(format!(
                    "attribute `{}` has no levels",
                    p.name
                )));
            }
            let mut total = 0.0;
            for l in &p.levels {
                check_prob(&format!("{}={}", p.name, l.level), l.probability)?;
                total += l.probability;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "level probabilities of `{}` sum to {total}, not 1",
                    p.name
                )));
            }
            names.push(&p.name);
        }
        for c in &self.covariates {
            match c.generator {
                CovariateGenerator::Gaussian { sd, .. } => check_sd(&c.name, sd)?,
                CovariateGenerator::Bernoulli { p } => check_prob(&c.name, p)?,
            }
            for e in &c.dependence {
                self.level_probability(&e.attribute, &e.level)?;
            }
            names.push(&c.name);
        }
        for e in &self.outcome.protected_effects {
            self.level_probability(&e.attribute, &e.level)?;
        }
        for c in &self.outcome.coefficients {
            if !self.covariates.iter().any(|s| s.name == c.covariate) {
                return Err(Error::Config(format!(
                    "outcome uses unknown covariate `{}`",
                    c.covariate
                )));
            }
        }
        let columns = self.score.columns();
        match &self.score {
            ScoreModel::OracleNoise { sd, .. } => check_sd("score noise", *sd)?,
            ScoreModel::TrainedLogistic {
                models,
                test_fraction,
                ridge,
            } => {
                if models.is_empty() {
                    return Err(Error::Config("no trained models listed".into()));
                }
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(Error::Config("test_fraction must be in (0, 1)".into()));
                }
                if *ridge < 0.0 {
                    return Err(Error::Config("ridge must be >= 0".into()));
                }
                for m in models {
                    for f in &m.features {
                        if !names[2..].contains(&f.as_str()) {
                            return Err(Error::Config(format!(
                                "model `{}` uses unknown feature `{f}`",
                                m.name
                            )));
                        }
                    }
                }
            }
        }
        names.extend(columns.iter().map(String::as_str));
        let mut sorted = names.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("column name `{}` used twice", w[0])));
        }
        for inj in &self.injections {
            let p = self.level_probability(&inj.selector.attribute, &inj.selector.level)?;
            if p == 0.0 {
                return Err(Error::Config(format!(
                    "injection targets `{}={}`, which has probability 0",
                    inj.selector.attribute, inj.selector.level
                )));
            }
            match inj.mechanism {
                Mechanism::ExtraNoise { sd } => check_sd("injected noise", sd)?,
                Mechanism::ScoreShift { delta } => {
                    if !delta.is_finite() {
                        return Err(Error::Config("score shift must be finite".into()));
                    }
                }
                Mechanism::LabelFlip { rate } => check_prob("label flip rate", rate)?,
            }
            for m in &inj.models {
                if !columns.contains(m) {
                    return Err(Error::Config(format!(
                        "injection targets unknown score column `{m}`"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Measured effect of one injection on the emitted records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionTruth {
    pub selector: Selector,
    pub mechanism: Mechanism,
    pub models: Vec<String>,
    /// Emitted records in the targeted subgroup.
    pub affected: usize,
    /// Standard deviation of the applied score change after clamping
    /// (noise injections only).
    pub realized_noise_sd: Option<f64>,
    /// Mean applied score change after clamping (noise and shift).
    pub realized_shift: Option<f64>,
    /// Fraction of targeted labels flipped (label flips only).
    pub realized_flip_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTruth {
    pub attribute: String,
    pub level: String,
    pub count: usize,
    /// Observed label rate after any label flips.
    pub prevalence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub n_generated: usize,
    pub n_emitted: usize,
    pub score_columns: Vec<String>,
    pub subgroups: Vec<SubgroupTruth>,
    pub injections: Vec<InjectionTruth>,
    pub config: SynthConfig,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub cohort: Cohort,
    pub manifest: SynthManifest,
    /// Fitted stand-in models, one per trained score column.
    pub models: Vec<(String, LogisticModel<f64>)>,
}

struct BaseRecord {
    protected: Vec<usize>,
    covariates: Vec<f64>,
    probability: f64,
    label: bool,
    noise: f64,
}

fn draw_level(rng: &mut ChaCha8Rng, spec: &ProtectedSpec) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, l) in spec.levels.iter().enumerate() {
        acc += l.probability;
        if u < acc {
            return k;
        }
    }
    // rounding slack: last level with nonzero probability
    spec.levels
        .iter()
        .rposition(|l| l.probability > 0.0)
        .unwrap_or(0)
}

fn effects(config: &SynthConfig, effects: &[LevelEffect], levels: &[usize]) -> f64 {
    effects
        .iter()
        .filter(|e| {
            config
                .protected
                .iter()
                .position(|p| p.name == e.attribute)
                .is_some_and(|a| config.protected[a].levels[levels[a]].level == e.level)
        })
        .map(|e| e.coefficient)
        .sum()
}

fn draw_base(config: &SynthConfig, i: usize) -> BaseRecord {
    let mut rng = record_rng(config.seed, DOMAIN_BASE, i as u64);
    let protected: Vec<usize> = config
        .protected
        .iter()
        .map(|p| draw_level(&mut rng, p))
        .collect();
    let covariates: Vec<f64> = config
        .covariates
        .iter()
        .map(|c| {
            let shift = effects(config, &c.dependence, &protected);
            match c.generator {
                CovariateGenerator::Gaussian { mean, sd } => {
                    let z: f64 = rng.sample(StandardNormal);
                    mean + shift + sd * z
                }
                CovariateGenerator::Bernoulli { p } => {
                    let q = if shift == 0.0 || p == 0.0 || p == 1.0 {
                        p
                    } else {
                        sigmoid((p / (1.0 - p)).ln() + shift)
                    };
                    let u: f64 = rng.random();
                    if u < q {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect();
    let mut eta =
        config.outcome.intercept + effects(config, &config.outcome.protected_effects, &protected);
    for c in &config.outcome.coefficients {
        let j = config
            .covariates
            .iter()
            .position(|s| s.name == c.covariate)
            .expect("validated");
        eta += c.coefficient * covariates[j];
    }
    let probability = sigmoid(eta);
    let u: f64 = rng.random();
    let noise: f64 = rng.sample(StandardNormal);
    BaseRecord {
        protected,
        covariates,
        probability,
        label: u < probability,
        noise,
    }
}

fn schema_for(config: &SynthConfig, score_columns: &[String]) -> CohortSchema {
    let mut schema = CohortSchema::new("id", "label");
    for s in score_columns {
        schema = schema.with_score(s, s);
    }
    for p in &config.protected {
        schema = schema.with_protected(ProtectedColumn::categorical(&p.name));
    }
    for c in &config.covariates {
        let kind = match c.generator {
            CovariateGenerator::Gaussian { .. } => CovariateKind::Numeric,
            CovariateGenerator::Bernoulli { .. } => CovariateKind::Binary,
        };
        schema = schema.with_covariate(&c.name, kind);
    }
    schema
}

fn id_width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

fn build_cohort(
    config: &SynthConfig,
    base: &[BaseRecord],
    score_columns: &[String],
    scores: &[Vec<f64>],
) -> Result<Cohort> {
    let width = id_width(base.len());
    let records = base
        .iter()
        .enumerate()
        .map(|(i, b)| CohortRecord {
            id: format!("s{i:0width$}"),
            label: b.label,
            scores: scores.iter().map(|col| Some(col[i])).collect(),
            protected: config
                .protected
                .iter()
                .zip(&b.protected)
                .map(|(p, &k)| Some(p.levels[k].level.clone()))
                .collect(),
            covariates: config
                .covariates
                .iter()
                .zip(&b.covariates)
                .map(|(c, &v)| match c.generator {
                    CovariateGenerator::Gaussian { .. } => CovariateValue::Numeric(v),
                    CovariateGenerator::Bernoulli { .. } => CovariateValue::Binary(v == 1.0),
                })
                .collect(),
        })
        .collect();
    Cohort::new(schema_for(config, score_columns), records)
}

fn selected(config: &SynthConfig, b: &BaseRecord, s: &Selector) -> bool {
    let a = config
        .protected
        .iter()
        .position(|p| p.name == s.attribute)
        .expect("validated");
    config.protected[a].levels[b.protected[a]].level == s.level
}

/// Generates a cohort and its ground-truth manifest. Fully determined by
/// the config, including the seed.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut base: Vec<BaseRecord> = (0..config.n).map(|i| draw_base(config, i)).collect();
    let score_columns = config.score.columns();

    // scores before injections, one vector per column; `rows` are the
    // emitted records
    let (rows, mut scores, models): (Vec<usize>, Vec<Vec<f64>>, Vec<(String, LogisticModel<f64>)>) =
        match &config.score {
            ScoreModel::OracleNoise { sd, .. } => {
                let s = base
                    .iter()
                    .map(|b| (b.probability + sd * b.noise).clamp(0.0, 1.0))
                    .collect();
                ((0..config.n).collect(), vec![s], Vec::new())
            }
            ScoreModel::TrainedLogistic {
                models,
                test_fraction,
                ridge,
            } => {
                let oracle: Vec<f64> = base.iter().map(|b| b.probability).collect();
                let placeholder = build_cohort(config, &base, &["oracle".to_owned()], &[oracle])?;
                let (train, test) = split_train_test(&placeholder, *test_fraction, config.seed)?;
                let mut cols = Vec::new();
                let mut fitted = Vec::new();
                for m in models {
                    let (p, model) = fit_scores(&placeholder, &train, &m.features, *ridge)?;
                    cols.push(test.iter().map(|&i| p[i]).collect::<Vec<f64>>());
                    fitted.push((m.name.clone(), model));
                }
                (test, cols, fitted)
            }
        };

    let mut truths = Vec::new();
    for (k, inj) in config.injections.iter().enumerate() {
        let targets: Vec<usize> = (0..score_columns.len())
            .filter(|&c| inj.models.is_empty() || inj.models.contains(&score_columns[c]))
            .collect();
        let mut changes = Vec::new();
        let mut flips = 0usize;
        let mut affected = 0usize;
        for (r, &i) in rows.iter().enumerate() {
            if !selected(config, &base[i], &inj.selector) {
                continue;
            }
            affected += 1;
            let mut rng = record_rng(
                config.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                DOMAIN_INJECT,
                i as u64,
            );
            match inj.mechanism {
                Mechanism::ExtraNoise { sd } => {
                    let z: f64 = rng.sample(StandardNormal);
                    for (t, &c) in targets.iter().enumerate() {
                        let old = scores[c][r];
                        let new = (old + sd * z).clamp(0.0, 1.0);
                        scores[c][r] = new;
                        if t == 0 {
                            changes.push(new - old);
                        }
                    }
                }
                Mechanism::ScoreShift { delta } => {
                    for (t, &c) in targets.iter().enumerate() {
                        let old = scores[c][r];
                        let new = (old + delta).clamp(0.0, 1.0);
                        scores[c][r] = new;
                        if t == 0 {
                            changes.push(new - old);
                        }
                    }
                }
                Mechanism::LabelFlip { rate } => {
                    let u: f64 = rng.random();
                    if u < rate {
                        base[i].label = !base[i].label;
                        flips += 1;
                    }
                }
            }
        }
        let is_score = !matches!(inj.mechanism, Mechanism::LabelFlip { .. });
        truths.push(InjectionTruth {
            selector: inj.selector.clone(),
            mechanism: inj.mechanism,
            models: targets.iter().map(|&c| score_columns[c].clone()).collect(),
            affected,
            realized_noise_sd: matches!(inj.mechanism, Mechanism::ExtraNoise { .. })
                .then(|| sample_variance(&changes).sqrt()),
            realized_shift: (is_score && !changes.is_empty()).then(|| mean(&changes)),
            realized_flip_rate: (!is_score && affected > 0).then(|| flips as f64 / affected as f64),
        });
    }

    let emitted: Vec<BaseRecord> = {
        let mut slots: Vec<Option<BaseRecord>> = base.into_iter().map(Some).collect();
        rows.iter()
            .map(|&i| slots[i].take().expect("distinct rows"))
            .collect()
    };
    let cohort = build_cohort(config, &emitted, &score_columns, &scores)?;

    let mut subgroups = Vec::new();
    for (a, p) in config.protected.iter().enumerate() {
        for (k, l) in p.levels.iter().enumerate() {
            let members: Vec<&BaseRecord> =
                emitted.iter().filter(|b| b.protected[a] == k).collect();
            let positives = members.iter().filter(|b| b.label).count();
            subgroups.push(SubgroupTruth {
                attribute: p.name.clone(),
                level: l.level.clone(),
                count: members.len(),
                prevalence: (!members.is_empty()).then(|| positives as f64 / members.len() as f64),
            });
        }
    }
    Ok(SynthOutput {
        manifest: SynthManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            seed: config.seed,
            n_generated: config.n,
            n_emitted: emitted.len(),
            score_columns,
            subgroups,
            injections: truths,
            config: config.clone(),
        },
        cohort,
        models,
    })
}

/// Outcome-stratified split: positives and negatives are shuffled
/// separately and `round(test_fraction * class size)` of each (at least one,
/// at most all but one) go to the test set. Both index sets are sorted.
pub fn split_train_test(
    cohort: &Cohort,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let labels = cohort.labels();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (stream, class) in [(0u64, true), (1, false)] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class {} has {} record(s); a stratified split needs at least 2",
                u8::from(class),
                members.len()
            )));
        }
        let mut rng = record_rng(seed, DOMAIN_SPLIT, stream);
        members.shuffle(&mut rng);
        let k =
            ((test_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn fit_scores(
    cohort: &Cohort,
    train: &[usize],
    features: &[String],
    ridge: f64,
) -> Result<(Vec<f64>, LogisticModel<f64>)> {
    let design = encode_design::<f64>(cohort, train, features, MissingPolicy::ImputeWithIndicator)?;
    let labels = cohort.labels();
    let outcomes: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
    if outcomes.iter().all(|&y| y) || outcomes.iter().all(|&y| !y) {
        return Err(Error::SingleClass);
    }
    let model = fit_logistic(&design, &outcomes, FitOptions::default().with_ridge(ridge))?;
    let all: Vec<usize> = (0..cohort.len()).collect();
    let full = encode_with::<f64>(cohort, &all, design.columns().to_vec())?;
    Ok((predict_proba(&model, &full)?, model))
}

/// Fits a logistic model on the training records and adds its predicted
/// probabilities for every record as a new score column `name`.
pub fn demo_train(
    cohort: &Cohort,
    train: &[usize],
    features: &[String],
    ridge: f64,
    name: &str,
) -> Result<(Cohort, LogisticModel<f64>)> {
    let (p, model) = fit_scores(cohort, train, features, ridge)?;
    let scores: Vec<Option<f64>> = p.into_iter().map(Some).collect();
    Ok((cohort.with_score_column(name, name, &scores)?, model))
}

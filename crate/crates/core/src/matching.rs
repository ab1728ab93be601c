//! Propensity-score matching for a two-level contrast of a protected
//! attribute, with standardized-mean-difference balance diagnostics.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CovariateKind, CovariateValue, MISSING_LEVEL};
use crate::error::{Error, Result};
use crate::glm::{
    encode_design, fit_logistic, predict_proba, FitOptions, LogisticModel, MissingPolicy,
};
use crate::num::{logit, mean, sample_variance, Real};

/// Default caliper, in standard deviations of the pooled logit propensity.
pub const DEFAULT_CALIPER_MULTIPLIER: f64 = 0.2;

/// Default minimum number of matched records (both arms) for a usable contrast.
pub const DEFAULT_MIN_MATCHED_N: usize = 100;

/// Version tag written into matched-pair exports.
pub const PAIRS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair<T> {
    pub treated: usize,
    pub control: usize,
    /// Absolute difference of logit propensities.
    pub distance: T,
}

/// Result of 1-to-1 matching without replacement. Indices refer to
/// positions in the vectors passed to the matcher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMatching<T> {
    pub pairs: Vec<MatchedPair<T>>,
    pub unmatched_treated: usize,
    pub caliper: Option<T>,
}

/// Greedy nearest-neighbour matching on the logit-propensity scale.
///
/// Treated units are visited in descending propensity order (ties by lower
/// position) and each takes the nearest unmatched control, distance ties
/// going to the lower control position. With a caliper multiplier, pairs
/// farther apart than `multiplier * sd(pooled logits)` are not formed.
pub fn greedy_match_logits<T: Real>(
    logits: &[T],
    treated: &[bool],
    caliper_multiplier: Option<T>,
) -> Result<PairMatching<T>> {
    if logits.len() != treated.len() {
        return Err(Error::LengthMismatch(logits.len(), treated.len()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "logit propensities must be finite".into(),
        ));
    }
    if !treated.iter().any(|&t| t) || treated.iter().all(|&t| t) {
        return Err(Error::InvalidArgument(
            "matching needs at least one treated and one control".into(),
        ));
    }
    let caliper = caliper_multiplier.and_then(|m| {
        let sd = sample_variance(logits).sqrt();
        if sd > T::zero() && sd.is_finite() {
            Some(m * sd)
        } else {
            log::warn!("logit propensities have zero spread; caliper disabled");
            None
        }
    });

    let mut controls: Vec<(T, usize)> = (0..logits.len())
        .filter(|&i| !treated[i])
        .map(|i| (logits[i], i))
        .collect();
    controls.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut alive: BTreeSet<usize> = (0..controls.len()).collect();

    let mut order: Vec<usize> = (0..logits.len()).filter(|&i| treated[i]).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));

    let mut pairs = Vec::new();
    let mut unmatched = 0;
    for t in order {
        let target = logits[t];
        let k = controls.partition_point(|c| c.0 < target);
        let right = alive.range(k..).next().copied();
        let left = alive.range(..k).next_back().map(|&l| {
            // lowest alive position sharing this logit
            let start = controls.partition_point(|c| c.0 < controls[l].0);
            *alive.range(start..).next().unwrap()
        });
        let pick = match (left, right) {
            (None, None) => None,
            (Some(l), None) => Some((l, target - controls[l].0)),
            (None, Some(r)) => Some((r, controls[r].0 - target)),
            (Some(l), Some(r)) => {
                let dl = target - controls[l].0;
                let dr = controls[r].0 - target;
                if dl < dr || (dl == dr && controls[l].1 < controls[r].1) {
                    Some((l, dl))
                } else {
                    Some((r, dr))
                }
            }
        };
        match pick {
            Some((pos, d)) if caliper.is_none_or(|c| d <= c) => {
                alive.remove(&pos);
                pairs.push(MatchedPair {
                    treated: t,
                    control: controls[pos].1,
                    distance: d,
                });
            }
            _ => unmatched += 1,
        }
    }
    Ok(PairMatching {
        pairs,
        unmatched_treated: unmatched,
        caliper,
    })
}

/// [`greedy_match_logits`] on propensities in (0, 1). Propensities are
/// clamped away from 0 and 1 before the logit transform.
pub fn greedy_match<T: Real>(
    propensities: &[T],
    treated: &[bool],
    caliper_multiplier: Option<T>,
) -> Result<PairMatching<T>> {
    let eps = T::epsilon();
    let logits: Vec<T> = propensities
        .iter()
        .map(|&p| logit(p.max(eps).min(T::one() - eps)))
        .collect();
    greedy_match_logits(&logits, treated, caliper_multiplier)
}

/// Standardized mean difference `|mean_a - mean_b| / sqrt((var_a + var_b) / 2)`
/// with sample variances; `None` when the pooled variance is zero.
pub fn smd<T: Real>(values: &[T], group_a: &[usize], group_b: &[usize]) -> Option<T> {
    if group_a.is_empty() || group_b.is_empty() {
        return None;
    }
    let a: Vec<T> = group_a.iter().map(|&i| values[i]).collect();
    let b: Vec<T> = group_b.iter().map(|&i| values[i]).collect();
    let pooled = (sample_variance(&a) + sample_variance(&b)) / T::lit(2.0);
    if !(pooled > T::zero()) {
        return None;
    }
    Some((mean(&a) - mean(&b)).abs() / pooled.sqrt())
}

fn level_of(cohort: &Cohort, j: usize, i: usize) -> &str {
    cohort.records()[i].protected[j]
        .as_deref()
        .unwrap_or(MISSING_LEVEL)
}

/// Propensity model for one contrast.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub attribute: String,
    pub treated_level: String,
    pub control_level: String,
    /// Cohort record positions at either level, in cohort order.
    pub indices: Vec<usize>,
    /// Aligned with `indices`.
    pub treated: Vec<bool>,
    /// `P(treated | covariates)`, aligned with `indices`.
    pub propensity: Vec<f64>,
    pub model: LogisticModel<f64>,
}

/// Fits `P(level = treated_level | covariates)` on the records at the two
/// levels.
pub fn estimate_propensity(
    cohort: &Cohort,
    attribute: &str,
    treated_level: &str,
    control_level: &str,
    covariates: &[String],
    options: FitOptions<f64>,
) -> Result<PropensityFit> {
    let schema = cohort.schema();
    let j = schema
        .protected_index(attribute)
        .ok_or_else(|| Error::UnknownAttribute(attribute.to_owned()))?;
    if let Some(c) = covariates
        .iter()
        .find(|c| schema.protected_index(c).is_some())
    {
        return Err(Error::ProtectedCovariate(c.clone()));
    }
    if treated_level == control_level {
        return Err(Error::InvalidArgument(
            "treated and control levels must differ".into(),
        ));
    }
    let mut indices = Vec::new();
    let mut treated = Vec::new();
    for i in 0..cohort.len() {
        let l = level_of(cohort, j, i);
        if l == treated_level || l == control_level {
            indices.push(i);
            treated.push(l == treated_level);
        }
    }
    for (level, flag) in [(treated_level, true), (control_level, false)] {
        let count = treated.iter().filter(|&&t| t == flag).count();
        if count < 2 {
            return Err(Error::LevelTooSmall {
                attribute: attribute.to_owned(),
                level: level.to_owned(),
                count,
            });
        }
    }
    let design = encode_design::<f64>(cohort, &indices, covariates, MissingPolicy::default())?;
    let model = fit_logistic(&design, &treated, options)?;
    let propensity = predict_proba(&model, &design)?;
    Ok(PropensityFit {
        attribute: attribute.to_owned(),
        treated_level: treated_level.to_owned(),
        control_level: control_level.to_owned(),
        indices,
        treated,
        propensity,
        model,
    })
}

/// A matched sample in cohort record positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSample {
    pub attribute: String,
    pub treated_level: String,
    pub control_level: String,
    /// `treated` / `control` are cohort record positions.
    pub pairs: Vec<MatchedPair<f64>>,
    pub unmatched_treated: usize,
    pub caliper: Option<f64>,
}

impl MatchedSample {
    pub fn from_fit(fit: &PropensityFit, caliper_multiplier: Option<f64>) -> Result<Self> {
        let m = greedy_match(&fit.propensity, &fit.treated, caliper_multiplier)?;
        Ok(Self {
            attribute: fit.attribute.clone(),
            treated_level: fit.treated_level.clone(),
            control_level: fit.control_level.clone(),
            pairs: m
                .pairs
                .iter()
                .map(|p| MatchedPair {
                    treated: fit.indices[p.treated],
                    control: fit.indices[p.control],
                    distance: p.distance,
                })
                .collect(),
            unmatched_treated: m.unmatched_treated,
            caliper: m.caliper,
        })
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.treated).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.control).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBalance {
    pub name: String,
    pub smd_before: Option<f64>,
    pub smd_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub covariates: Vec<CovariateBalance>,
    pub matched_n: usize,
    pub passes_min_n: bool,
}

/// Numeric views of the covariates for balance checks: one column per
/// numeric or binary covariate, one indicator per level for categorical ones.
fn balance_columns(
    cohort: &Cohort,
    indices: &[usize],
    covariates: &[String],
) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let schema = cohort.schema();
    let n = cohort.len();
    let mut out = Vec::new();
    for name in covariates {
        let j = schema
            .covariate_index(name)
            .ok_or_else(|| Error::UnknownCovariate(name.clone()))?;
        let value = |i: usize| &cohort.records()[i].covariates[j];
        match schema.covariate_columns[j].kind {
            CovariateKind::Numeric | CovariateKind::Binary => {
                let mut col = vec![None; n];
                for &i in indices {
                    col[i] = value(i).as_f64();
                }
                out.push((name.clone(), col));
            }
            CovariateKind::Categorical => {
                let cat = |i: usize| match value(i) {
                    CovariateValue::Category(s) => s.clone(),
                    _ => MISSING_LEVEL.to_owned(),
                };
                let mut levels: Vec<String> = Vec::new();
                for &i in indices {
                    let l = cat(i);
                    if !levels.contains(&l) {
                        levels.push(l);
                    }
                }
                for level in levels {
                    let mut col = vec![None; n];
                    for &i in indices {
                        col[i] = Some(if cat(i) == level { 1.0 } else { 0.0 });
                    }
                    out.push((format!("{name}={level}"), col));
                }
            }
        }
    }
    Ok(out)
}

fn smd_observed(col: &[Option<f64>], a: &[usize], b: &[usize]) -> Option<f64> {
    let values: Vec<f64> = col.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let a: Vec<usize> = a.iter().copied().filter(|&i| col[i].is_some()).collect();
    let b: Vec<usize> = b.iter().copied().filter(|&i| col[i].is_some()).collect();
    smd(&values, &a, &b)
}

/// Covariate balance before matching (all records at the two levels) and
/// after (matched records only).
pub fn balance_report(
    cohort: &Cohort,
    matched: &MatchedSample,
    covariates: &[String],
    min_matched_n: usize,
) -> Result<BalanceReport> {
    let j = cohort
        .schema()
        .protected_index(&matched.attribute)
        .ok_or_else(|| Error::UnknownAttribute(matched.attribute.clone()))?;
    let mut all_treated = Vec::new();
    let mut all_control = Vec::new();
    for i in 0..cohort.len() {
        let l = level_of(cohort, j, i);
        if l == matched.treated_level {
            all_treated.push(i);
        } else if l == matched.control_level {
            all_control.push(i);
        }
    }
    let subset: Vec<usize> = all_treated.iter().chain(&all_control).copied().collect();
    let mt = matched.treated_indices();
    let mc = matched.control_indices();
    let covariates = balance_columns(cohort, &subset, covariates)?
        .into_iter()
        .map(|(name, col)| CovariateBalance {
            smd_before: smd_observed(&col, &all_treated, &all_control),
            smd_after: smd_observed(&col, &mt, &mc),
            name,
        })
        .collect();
    let matched_n = matched.pairs.len();
    Ok(BalanceReport {
        covariates,
        matched_n,
        passes_min_n: matched_n * 2 >= min_matched_n,
    })
}

/// Writes `treated_id,control_id,distance` rows after a schema-version
/// comment line.
pub fn write_matched_pairs<W: Write>(
    cohort: &Cohort,
    matched: &MatchedSample,
    mut sink: W,
) -> std::io::Result<()> {
    writeln!(sink, "# schema_version: {PAIRS_SCHEMA_VERSION}")?;
    writeln!(
        sink,
        "# attribute: {}; treated: {}; control: {}",
        matched.attribute, matched.treated_level, matched.control_level
    )?;
    writeln!(sink, "treated_id,control_id,distance")?;
    let recs = cohort.records();
    for p in &matched.pairs {
        writeln!(
            sink,
            "{},{},{:.10}",
            recs[p.treated].id, recs[p.control].id, p.distance
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equidistant_tie_goes_to_lower_index() {
        // positions: 0 treated, 1 and 2 controls at equal distance
        let m = greedy_match_logits(&[0.5, 0.4, 0.6], &[true, false, false], None).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].control, 1);

        let m = greedy_match_logits(&[0.5, 0.6, 0.4], &[true, false, false], None).unwrap();
        assert_eq!(m.pairs[0].control, 1);
    }

    #[test]
    fn greedy_order_is_descending_propensity() {
        let logits = [0.5, 0.9, 0.55, 0.88];
        let treated = [true, true, false, false];
        let m = greedy_match_logits(&logits, &treated, None).unwrap();
        let pairs: Vec<(usize, usize)> = m.pairs.iter().map(|p| (p.treated, p.control)).collect();
        assert_eq!(pairs, vec![(1, 3), (0, 2)]);
    }

    #[test]
    fn caliper_excludes_distant_controls() {
        // pooled sd is about 4.6, caliper 0.2 * sd ~ 0.9; nearest control is 5 away
        let logits = [5.0, 0.0, -1.0, -2.0, 0.5];
        let treated = [true, false, false, false, false];
        let m = greedy_match_logits(&logits, &treated, Some(0.2)).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_treated, 1);
    }

    #[test]
    fn zero_spread_disables_caliper() {
        let m = greedy_match(&[0.3, 0.3, 0.3], &[true, false, false], Some(0.2)).unwrap();
        assert_eq!(m.caliper, None);
        assert_eq!(m.pairs.len(), 1);
    }

    #[test]
    fn smd_examples() {
        let v = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        assert_eq!(smd(&v, &[0, 1, 2], &[3, 4, 5]), Some(0.0));
        // means 1 and 0, sample variances 1 each
        let v = [0.0, 1.0, 2.0, -1.0, 0.0, 1.0];
        assert_eq!(smd(&v, &[0, 1, 2], &[3, 4, 5]), Some(1.0));
        assert_eq!(smd(&[4.0, 4.0, 4.0, 4.0], &[0, 1], &[2, 3]), None);
    }

    proptest! {
        #[test]
        fn matching_is_sound(
            logits in proptest::collection::vec(-3.0f64..3.0, 2..80),
            flags in proptest::collection::vec(any::<bool>(), 80),
            use_caliper in any::<bool>(),
        ) {
            let treated = &flags[..logits.len()];
            prop_assume!(treated.iter().any(|&t| t) && treated.iter().any(|&t| !t));
            let cal = use_caliper.then_some(0.2);
            let m = greedy_match_logits(&logits, treated, cal).unwrap();
            let mut seen = std::collections::HashSet::new();
            for p in &m.pairs {
                prop_assert!(treated[p.treated] && !treated[p.control]);
                prop_assert!(seen.insert(p.treated) && seen.insert(p.control));
                prop_assert_eq!(p.distance, (logits[p.treated] - logits[p.control]).abs());
                if let Some(c) = m.caliper {
                    prop_assert!(p.distance <= c);
                }
            }
            let n_treated = treated.iter().filter(|&&t| t).count();
            prop_assert_eq!(m.pairs.len() + m.unmatched_treated, n_treated);
            prop_assert_eq!(&greedy_match_logits(&logits, treated, cal).unwrap(), &m);
        }

        #[test]
        fn greedy_matches_quadratic_reference(
            logits in proptest::collection::vec((0i32..40).prop_map(|k| k as f64 / 8.0), 2..60),
            flags in proptest::collection::vec(any::<bool>(), 60),
        ) {
            let treated = &flags[..logits.len()];
            prop_assume!(treated.iter().any(|&t| t) && treated.iter().any(|&t| !t));
            let m = greedy_match_logits(&logits, treated, None).unwrap();
            // O(n^2) reference scan with the same ordering rules
            let mut order: Vec<usize> = (0..logits.len()).filter(|&i| treated[i]).collect();
            order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
            let mut used = vec![false; logits.len()];
            let mut expected = Vec::new();
            for t in order {
                let best = (0..logits.len())
                    .filter(|&c| !treated[c] && !used[c])
                    .min_by(|&a, &b| {
                        let da = (logits[a] - logits[t]).abs();
                        let db = (logits[b] - logits[t]).abs();
                        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                    });
                if let Some(c) = best {
                    used[c] = true;
                    expected.push((t, c));
                }
            }
            let got: Vec<(usize, usize)> = m.pairs.iter().map(|p| (p.treated, p.control)).collect();
            prop_assert_eq!(got, expected);
        }
    }
}

//! Threshold metrics, AUROC, Youden thresholding and calibration curves.
//!
//! A record is predicted positive iff `score >= threshold`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

/// Default number of equal-width calibration bins.
pub const DEFAULT_CALIBRATION_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Ppv,
    Sens,
    Spec,
    Fnr,
    Fpr,
    Auroc,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Ppv,
        Metric::Sens,
        Metric::Spec,
        Metric::Fnr,
        Metric::Fpr,
        Metric::Auroc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ppv => "PPV",
            Metric::Sens => "SENS",
            Metric::Spec => "SPEC",
            Metric::Fnr => "FNR",
            Metric::Fpr => "FPR",
            Metric::Auroc => "AUROC",
        }
    }

    /// Whether the metric depends on a decision threshold.
    pub fn needs_threshold(self) -> bool {
        self != Metric::Auroc
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub(crate) fn add(&mut self, label: bool, predicted: bool) {
        match (label, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

/// Classification metrics at one threshold. `None` marks an undefined
/// value (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics<T> {
    pub threshold: T,
    pub ppv: Option<T>,
    pub sensitivity: Option<T>,
    pub specificity: Option<T>,
    pub fnr: Option<T>,
    pub fpr: Option<T>,
}

impl<T: Real> ThresholdMetrics<T> {
    /// Value of a threshold metric; `None` for AUROC or undefined values.
    pub fn get(&self, metric: Metric) -> Option<T> {
        match metric {
            Metric::Ppv => self.ppv,
            Metric::Sens => self.sensitivity,
            Metric::Spec => self.specificity,
            Metric::Fnr => self.fnr,
            Metric::Fpr => self.fpr,
            Metric::Auroc => None,
        }
    }
}

fn check_inputs<T: Real>(labels: &[bool], scores: &[T]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::LengthMismatch(labels.len(), scores.len()));
    }
    if labels.is_empty() {
        return Err(Error::Empty);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("score is NaN".into()));
    }
    Ok(())
}

pub fn confusion<T: Real>(labels: &[bool], scores: &[T], threshold: T) -> Result<ConfusionCounts> {
    check_inputs(labels, scores)?;
    let mut c = ConfusionCounts::default();
    for (&y, &s) in labels.iter().zip(scores) {
        c.add(y, s >= threshold);
    }
    Ok(c)
}

fn ratio<T: Real>(num: usize, den: usize) -> Option<T> {
    (den > 0).then(|| T::from_usize_lossy(num) / T::from_usize_lossy(den))
}

pub fn threshold_metrics<T: Real>(counts: &ConfusionCounts, threshold: T) -> ThresholdMetrics<T> {
    let c = counts;
    ThresholdMetrics {
        threshold,
        ppv: ratio(c.tp, c.tp + c.fp),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        fnr: ratio(c.fn_, c.tp + c.fn_),
        fpr: ratio(c.fp, c.tn + c.fp),
    }
}

/// AUROC from `(score, label)` pairs already sorted by ascending score.
///
/// Computes the Mann-Whitney U statistic from mid-ranks. Twice U is an
/// integer, so the result is exact up to the final division.
pub(crate) fn auroc_sorted<T: Real, I>(pairs: I) -> Result<T>
where
    I: IntoIterator<Item = (T, bool)>,
{
    let mut iter = pairs.into_iter().peekable();
    let mut position: u64 = 0;
    let mut n_pos: u64 = 0;
    let mut n_neg: u64 = 0;
    // twice the rank sum of the positives
    let mut rank_sum2: u64 = 0;
    while let Some((s, y)) = iter.next() {
        let mut tie_pos = u64::from(y);
        let mut tie_len: u64 = 1;
        while let Some(&(s2, y2)) = iter.peek() {
            if s2 != s {
                break;
            }
            tie_len += 1;
            tie_pos += u64::from(y2);
            iter.next();
        }
        // mid-rank of the tie block (1-based) is position + (tie_len + 1) / 2
        rank_sum2 += tie_pos * (2 * position + tie_len + 1);
        n_pos += tie_pos;
        n_neg += tie_len - tie_pos;
        position += tie_len;
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(T::from_u64(u2).unwrap() / T::from_u64(2 * n_pos * n_neg).unwrap())
}

fn sorted_pairs<T: Real>(labels: &[bool], scores: &[T]) -> Vec<(T, bool)> {
    let mut pairs: Vec<(T, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are not NaN"));
    pairs
}

/// Area under the ROC curve: the fraction of (positive, negative) pairs in
/// which the positive scores higher, ties counting one half.
pub fn auroc<T: Real>(labels: &[bool], scores: &[T]) -> Result<T> {
    check_inputs(labels, scores)?;
    auroc_sorted(sorted_pairs(labels, scores))
}

/// Youden threshold from pairs sorted by ascending score.
pub(crate) fn youden_sorted<T: Real>(pairs: &[(T, bool)]) -> Result<T> {
    let n_pos = pairs.iter().filter(|p| p.1).count() as i128;
    let n_neg = pairs.len() as i128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    // Candidate t = distinct score starting at index i: records i.. are
    // predicted positive. J * P * N = TP * N + TN * P - P * N, compared in
    // integers so exact ties resolve to the smallest threshold.
    let mut best: Option<(i128, T)> = None;
    let mut tn: i128 = 0; // negatives strictly below the candidate
    let mut fn_: i128 = 0;
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        let tp = n_pos - fn_;
        let j = tp * n_neg + tn * n_pos - n_pos * n_neg;
        if best.is_none_or(|(b, _)| j > b) {
            best = Some((j, s));
        }
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                fn_ += 1;
            } else {
                tn += 1;
            }
            i += 1;
        }
    }
    Ok(best.expect("non-empty input").1)
}

/// Threshold maximizing sensitivity + specificity - 1 over the observed
/// scores. Ties go to the smallest maximizing threshold.
pub fn youden_threshold<T: Real>(labels: &[bool], scores: &[T]) -> Result<T> {
    check_inputs(labels, scores)?;
    youden_sorted(&sorted_pairs(labels, scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin<T> {
    pub mean_score: T,
    pub observed_fraction: T,
    pub count: usize,
}

/// Reliability curve over equal-width bins on [0, 1]. Empty bins are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve<T> {
    pub n_bins: usize,
    pub bins: Vec<CalibrationBin<T>>,
}

pub fn calibration_curve<T: Real>(
    labels: &[bool],
    scores: &[T],
    n_bins: usize,
) -> Result<CalibrationCurve<T>> {
    check_inputs(labels, scores)?;
    if n_bins < 2 {
        return Err(Error::InvalidArgument(
            "calibration needs at least 2 bins".into(),
        ));
    }
    let mut sums = vec![(T::zero(), 0usize, 0usize); n_bins];
    let width = T::from_usize_lossy(n_bins);
    for (&y, &s) in labels.iter().zip(scores) {
        if s < T::zero() || s > T::one() {
            return Err(Error::InvalidArgument("score outside [0,1]".into()));
        }
        let b = (s * width).floor().to_usize().unwrap_or(0).min(n_bins - 1);
        let e = &mut sums[b];
        e.0 = e.0 + s;
        e.1 += usize::from(y);
        e.2 += 1;
    }
    let bins = sums
        .into_iter()
        .filter(|e| e.2 > 0)
        .map(|(sum, pos, count)| {
            let n = T::from_usize_lossy(count);
            CalibrationBin {
                mean_score: sum / n,
                observed_fraction: T::from_usize_lossy(pos) / n,
                count,
            }
        })
        .collect();
    Ok(CalibrationCurve { n_bins, bins })
}

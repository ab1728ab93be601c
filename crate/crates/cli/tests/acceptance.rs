mod common;

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use biasaudit::audit::{
    bootstrap_audit, summarize_discrepancy, AuditConfig, CellOutcome, CellStats, ContrastOutcome,
    MatchedAuditResult, MatchingCondition, ModelVariant, OpponentCell, SubgroupAuditResult,
};
use biasaudit::glm::{
    fit_logistic, gradient, log_likelihood, predict_proba, DesignMatrix, FitOptions,
};
use biasaudit::matching::{balance_report, estimate_propensity, MatchedSample};
use biasaudit::metrics::{auroc, Metric};
use biasaudit::stats::{student_t_two_sided_p, t_test_one_sample};
use biasaudit::synth::{
    generate, CovariateSpec, Injection, Mechanism, OutcomeModel, ProtectedSpec, ScoreModel,
    SynthConfig,
};
use biasaudit_cli::report::{format_value, ReportBundle};
use common::{code, csv_cells, read, run, stderr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1. Discrepancy gaps from reference per-group AUROC differences.

type Before = &'static [(&'static str, f64)];
type After = &'static [(&'static str, &'static [f64])];

struct Block {
    dataset: &'static str,
    attribute: &'static str,
    levels: &'static [&'static str],
    with_before: Before,
    with_after: After,
    without_before: Before,
    without_after: After,
    /// with-before, with-after, without-before, without-after
    expected: [f64; 4],
}

const ICU_RACE: &[&str] = &["Hispanic", "White", "Black"];
const ICU_AGE: &[&str] = &["[18 - 57)", "[57 - 74)", "[74 - 90]"];
const SEX_MF: &[&str] = &["Male", "Female"];
const SURGICAL_RACE: &[&str] = &["White", "Black"];
const SURGICAL_AGE: &[&str] = &["[14 - 52)", "[52 - 67)", "[67 - 102]"];

const BLOCKS: &[Block] = &[
    Block {
        dataset: "icu",
        attribute: "race",
        levels: ICU_RACE,
        with_before: &[("Hispanic", 0.02), ("White", -0.01), ("Black", -0.01)],
        with_after: &[
            ("Hispanic", &[0.03, 0.01]),
            ("White", &[-0.01, -0.01]),
            ("Black", &[0.01, -0.03]),
        ],
        without_before: &[("Hispanic", 0.0), ("White", 0.0), ("Black", 0.01)],
        without_after: &[
            ("Hispanic", &[0.01, -0.0]),
            ("White", &[-0.0, 0.0]),
            ("Black", &[0.0, -0.01]),
        ],
        expected: [0.03, 0.04, 0.01, 0.01],
    },
    Block {
        dataset: "icu",
        attribute: "sex",
        levels: SEX_MF,
        with_before: &[("Male", 0.01), ("Female", -0.01)],
        with_after: &[("Male", &[0.02]), ("Female", &[-0.02])],
        without_before: &[("Male", 0.01), ("Female", -0.01)],
        without_after: &[("Male", &[0.01]), ("Female", &[-0.01])],
        expected: [0.02, 0.04, 0.02, 0.02],
    },
    Block {
        dataset: "icu",
        attribute: "age",
        levels: ICU_AGE,
        with_before: &[
            ("[18 - 57)", -0.01),
            ("[57 - 74)", 0.0),
            ("[74 - 90]", 0.01),
        ],
        with_after: &[
            ("[18 - 57)", &[0.01]),
            ("[57 - 74)", &[-0.01, -0.01]),
            ("[74 - 90]", &[0.01]),
        ],
        without_before: &[
            ("[18 - 57)", -0.01),
            ("[57 - 74)", 0.01),
            ("[74 - 90]", 0.01),
        ],
        without_after: &[
            ("[18 - 57)", &[0.0]),
            ("[57 - 74)", &[0.0, 0.0]),
            ("[74 - 90]", &[0.0]),
        ],
        expected: [0.02, 0.02, 0.02, 0.0],
    },
    Block {
        dataset: "surgical",
        attribute: "race",
        levels: SURGICAL_RACE,
        with_before: &[("White", -0.01), ("Black", 0.01)],
        with_after: &[("White", &[0.02]), ("Black", &[-0.02])],
        without_before: &[("White", -0.01), ("Black", 0.01)],
        without_after: &[("White", &[0.01]), ("Black", &[-0.01])],
        expected: [0.02, 0.04, 0.02, 0.02],
    },
    Block {
        dataset: "surgical",
        attribute: "sex",
        levels: SEX_MF,
        with_before: &[("Male", -0.01), ("Female", 0.01)],
        with_after: &[("Male", &[-0.01]), ("Female", &[0.01])],
        without_before: &[("Male", -0.01), ("Female", 0.01)],
        without_after: &[("Male", &[-0.01]), ("Female", &[0.01])],
        expected: [0.02, 0.02, 0.02, 0.02],
    },
    Block {
        dataset: "surgical",
        attribute: "age",
        levels: SURGICAL_AGE,
        with_before: &[
            ("[14 - 52)", 0.02),
            ("[52 - 67)", -0.01),
            ("[67 - 102]", -0.01),
        ],
        with_after: &[
            ("[14 - 52)", &[0.01]),
            ("[52 - 67)", &[-0.01, 0.0]),
            ("[67 - 102]", &[0.0]),
        ],
        without_before: &[
            ("[14 - 52)", 0.02),
            ("[52 - 67)", -0.01),
            ("[67 - 102]", -0.02),
        ],
        without_after: &[
            ("[14 - 52)", &[0.0]),
            ("[52 - 67)", &[0.0, 0.0]),
            ("[67 - 102]", &[-0.0]),
        ],
        expected: [0.03, 0.01, 0.04, 0.0],
    },
];

fn cell(attribute: &str, level: &str, mean_diff: f64) -> SubgroupAuditResult {
    SubgroupAuditResult {
        attribute: attribute.into(),
        level: level.into(),
        metric: Metric::Auroc,
        n_effective: 150,
        outcome: CellOutcome::Tested(CellStats {
            mean_diff,
            sd: 0.01,
            t_stat: None,
            p_value: 0.0,
            significant: true,
            degenerate: false,
        }),
    }
}

fn before_cells(attribute: &str, values: Before) -> Vec<SubgroupAuditResult> {
    values.iter().map(|(l, v)| cell(attribute, l, *v)).collect()
}

/// Opponents are the other levels in table order, as in the reference cells.
fn after_cells(attribute: &str, levels: &[&str], values: After) -> Vec<MatchedAuditResult> {
    values
        .iter()
        .map(|(level, diffs)| {
            let opponents: Vec<&str> = levels.iter().copied().filter(|l| l != level).collect();
            // a single reference value stands for the whole cell
            let pairs: Vec<(&str, f64)> = if diffs.len() == opponents.len() {
                opponents
                    .iter()
                    .copied()
                    .zip(diffs.iter().copied())
                    .collect()
            } else {
                vec![(opponents[0], diffs[0])]
            };
            MatchedAuditResult {
                attribute: attribute.into(),
                level: (*level).into(),
                metric: Metric::Auroc,
                opponents: pairs
                    .into_iter()
                    .map(|(o, d)| OpponentCell {
                        opponent: o.into(),
                        outcome: ContrastOutcome::Audited(cell(attribute, level, d)),
                    })
                    .collect(),
            }
        })
        .collect()
}

fn gap(
    before: &[SubgroupAuditResult],
    after: &[MatchedAuditResult],
    variant: ModelVariant,
    matching: MatchingCondition,
) -> f64 {
    summarize_discrepancy(before, after, Metric::Auroc, variant)
        .into_iter()
        .find(|s| s.matching == matching)
        .expect("summary present")
        .gap
}

#[test]
fn criterion_1_reference_discrepancy_gaps() {
    let start = Instant::now();
    let mut report = Vec::new();
    let mut matches_by_dataset = std::collections::BTreeMap::<&str, (usize, usize)>::new();
    for b in BLOCKS {
        let wb = before_cells(b.attribute, b.with_before);
        let wa = after_cells(b.attribute, b.levels, b.with_after);
        let ob = before_cells(b.attribute, b.without_before);
        let oa = after_cells(b.attribute, b.levels, b.without_after);
        let got = [
            gap(
                &wb,
                &wa,
                ModelVariant::WithProtected,
                MatchingCondition::BeforeMatching,
            ),
            gap(
                &wb,
                &wa,
                ModelVariant::WithProtected,
                MatchingCondition::AfterMatching,
            ),
            gap(
                &ob,
                &oa,
                ModelVariant::WithoutProtected,
                MatchingCondition::BeforeMatching,
            ),
            gap(
                &ob,
                &oa,
                ModelVariant::WithoutProtected,
                MatchingCondition::AfterMatching,
            ),
        ];
        for (k, (g, e)) in got.iter().zip(b.expected).enumerate() {
            let shown = format_value(*g, 2);
            let ok = (shown.parse::<f64>().unwrap() - e).abs() < 1e-9;
            let entry = matches_by_dataset.entry(b.dataset).or_default();
            entry.1 += 1;
            if ok {
                entry.0 += 1;
            } else {
                report.push(format!(
                    "{} {} column {}: got {shown}, expected {e}",
                    b.dataset,
                    b.attribute,
                    k + 1
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    let enough = matches_by_dataset
        .values()
        .all(|(m, t)| *t == 12 && *m >= 10);
    let summary: Vec<String> = matches_by_dataset
        .iter()
        .map(|(d, (m, t))| format!("{d} {m}/{t}"))
        .collect();
    verdict(
        1,
        enough && elapsed < Duration::from_secs(1),
        &format!(
            "cells matched: {}; mismatches: {report:?}; {elapsed:?}",
            summary.join(", ")
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Rank AUROC against pairwise enumeration.

fn brute_force_auroc(labels: &[bool], scores: &[f64]) -> f64 {
    let mut half_wins = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        if yi {
            p += 1;
        } else {
            n += 1;
        }
        if !yi {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj {
                continue;
            }
            if scores[i] > scores[j] {
                half_wins += 2;
            } else if scores[i] == scores[j] {
                half_wins += 1;
            }
        }
    }
    half_wins as f64 / (2 * p * n) as f64
}

#[test]
fn criterion_2_auroc_matches_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut instances = 0;
    while instances < 1000 {
        let n = rng.random_range(2..=200);
        // coarse grid so ties are common
        let levels = rng.random_range(2..=20);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
            continue;
        }
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..levels)) / 10.0)
            .collect();
        if auroc(&labels, &scores).unwrap() != brute_force_auroc(&labels, &scores) {
            mismatches += 1;
        }
        instances += 1;
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        mismatches == 0 && elapsed < Duration::from_secs(10),
        &format!("{mismatches} mismatches in {instances} instances; {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 3. Student t tail probabilities against quadrature.

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// P(|T| > t) via the substitution t = sqrt(df) tan(theta).
fn quadrature_p(t: f64, df: f64) -> f64 {
    let f = |th: f64| th.cos().powf(df - 1.0);
    let lo = (t.abs() / df.sqrt()).atan();
    simpson(f, lo, FRAC_PI_2, 200_000) / simpson(f, 0.0, FRAC_PI_2, 200_000)
}

#[test]
fn criterion_3_t_distribution_accuracy() {
    let mut worst = 0.0f64;
    for df in [1.0, 4.0, 29.0, 149.0] {
        for t in [0.0, 0.5, 2.0, 4.2426, 8.0] {
            worst = worst.max((student_t_two_sided_p(t, df) - quadrature_p(t, df)).abs());
        }
    }
    let example = t_test_one_sample(&[1.0f64, 2.0, 3.0, 4.0, 5.0], 0.0).unwrap();
    let t_ok = (example.t_stat - 4.2426).abs() < 5e-5;
    let p_ok = (example.p_value - 0.0132).abs() <= 0.0005;
    verdict(
        3,
        worst <= 1e-8 && t_ok && p_ok,
        &format!(
            "max |p - oracle| = {worst:.2e}; worked example t = {:.4}, p = {:.4}",
            example.t_stat, example.p_value
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Logistic regression.

fn logistic_data(n: usize, seed: u64) -> (DesignMatrix<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.random_range(-2.0..2.0);
        let b: f64 = rng.random_range(-2.0..2.0);
        let c = f64::from(u8::from(rng.random_bool(0.3)));
        let eta = -0.4 + 0.9 * a - 0.6 * b + 0.8 * c;
        rows.push(vec![a, b, c]);
        y.push(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()));
    }
    (DesignMatrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn criterion_4_logistic_regression() {
    let (x, y) = logistic_data(1000, 4);
    let mut worst_rel = 0.0f64;
    let mut worst_score = 0.0f64;
    for ridge in [0.0, 0.5] {
        let m = fit_logistic(&x, &y, FitOptions::default().with_ridge(ridge)).unwrap();
        let g = gradient(&x, &y, &m.coefficients, ridge);
        for j in 0..g.len() {
            let h = 1e-5 * (1.0 + m.coefficients[j].abs());
            let mut up = m.coefficients.clone();
            let mut down = m.coefficients.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (log_likelihood(&x, &y, &up, ridge) - log_likelihood(&x, &y, &down, ridge))
                / (2.0 * h);
            worst_rel = worst_rel.max((g[j] - fd).abs() / g[j].abs().max(1.0));
        }
        if ridge == 0.0 {
            let p = predict_proba(&m, &x).unwrap();
            let s: f64 = y
                .iter()
                .zip(&p)
                .map(|(&yi, pi)| f64::from(u8::from(yi)) - pi)
                .sum();
            worst_score = s.abs();
        }
    }
    let sep_x = DesignMatrix::from_rows(&[vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]]).unwrap();
    let sep = fit_logistic(
        &sep_x,
        &[false, false, true, true],
        FitOptions::default().with_ridge(0.0),
    )
    .unwrap();
    verdict(
        4,
        worst_rel <= 1e-5 && worst_score <= 1e-8 && !sep.converged,
        &format!(
            "gradient rel err {worst_rel:.2e}; |sum(y - p)| {worst_score:.2e}; separation flagged: {}",
            !sep.converged
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Propensity matching balance.

fn confounded(seed: u64) -> SynthConfig {
    SynthConfig {
        n: 2000,
        seed,
        protected: vec![ProtectedSpec::new("grp", &[("A", 0.3), ("B", 0.7)])],
        covariates: vec![CovariateSpec::gaussian("x", 0.0, 1.0).depends_on("grp", "A", 0.8)],
        outcome: OutcomeModel::default().with_coefficient("x", 1.0),
        score: ScoreModel::oracle(0.05),
        injections: Vec::new(),
    }
}

#[test]
fn criterion_5_matching_balance() {
    let start = Instant::now();
    let covs = ["x".to_owned()];
    let (mut improved, mut balanced) = (0, 0);
    for seed in 0..100 {
        let cohort = generate(&confounded(seed)).unwrap().cohort;
        let fit =
            estimate_propensity(&cohort, "grp", "A", "B", &covs, FitOptions::default()).unwrap();
        let matched = MatchedSample::from_fit(&fit, Some(0.2)).unwrap();
        let b = &balance_report(&cohort, &matched, &covs, 100)
            .unwrap()
            .covariates[0];
        let (before, after) = (b.smd_before.unwrap(), b.smd_after.unwrap());
        improved += usize::from(after < before);
        balanced += usize::from(after < 0.1);
    }
    let elapsed = start.elapsed();
    verdict(
        5,
        improved >= 95 && balanced >= 80 && elapsed < Duration::from_secs(60),
        &format!("smd reduced in {improved}/100, smd < 0.1 in {balanced}/100; {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 6 and 7. Bootstrap detection power and null behaviour.

fn oracle_cohort(seed: u64, noise_on_f: Option<f64>) -> biasaudit::cohort::Cohort {
    let mut config = SynthConfig {
        n: 3000,
        seed,
        protected: vec![ProtectedSpec::new("sex", &[("F", 0.5), ("M", 0.5)])],
        covariates: vec![CovariateSpec::gaussian("x", 0.0, 1.0)],
        outcome: OutcomeModel {
            intercept: -1.0,
            ..Default::default()
        }
        .with_coefficient("x", 1.5),
        score: ScoreModel::oracle(0.05),
        injections: Vec::new(),
    };
    if let Some(sd) = noise_on_f {
        config
            .injections
            .push(Injection::new("sex", "F", Mechanism::ExtraNoise { sd }));
    }
    generate(&config).unwrap().cohort
}

#[test]
fn criterion_6_detection_power() {
    let start = Instant::now();
    let mut flagged = 0;
    for seed in 0..100 {
        let config = AuditConfig {
            metrics: vec![Metric::Auroc],
            seed,
            ..AuditConfig::default()
        };
        let audit = bootstrap_audit(&oracle_cohort(seed, Some(0.3)), "score", &config).unwrap();
        let f = audit.results.iter().find(|r| r.level == "F").unwrap();
        if f.is_significant() && f.mean_diff().unwrap() < 0.0 {
            flagged += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        6,
        flagged >= 95 && elapsed < Duration::from_secs(300),
        &format!("flagged in {flagged}/100 seeds; {elapsed:?}"),
    );
}

#[test]
fn criterion_7_null_significance_rate() {
    let (mut significant, mut tested) = (0usize, 0usize);
    for seed in 0..100 {
        let config = AuditConfig {
            seed,
            ..AuditConfig::default()
        };
        let audit = bootstrap_audit(&oracle_cohort(seed, None), "score", &config).unwrap();
        for r in &audit.results {
            if let Some(s) = r.stats() {
                tested += 1;
                significant += usize::from(s.significant);
            }
        }
    }
    let rate = significant as f64 / tested as f64;
    verdict(
        7,
        (0.01..=0.15).contains(&rate),
        &format!("significance rate {rate:.3} ({significant}/{tested} cells) against [0.01, 0.15]"),
    );
}

// ---------------------------------------------------------------------------
// 8. Per-replicate diffs sum to zero.

#[test]
fn criterion_8_zero_sum() {
    let mut config = confounded(8);
    config.n = 3000;
    config.protected.push(ProtectedSpec::new(
        "band",
        &[("lo", 0.3), ("mid", 0.4), ("hi", 0.3)],
    ));
    config.protected.push(ProtectedSpec::new(
        "site",
        &[("s1", 0.25), ("s2", 0.25), ("s3", 0.25), ("s4", 0.25)],
    ));
    let cohort = generate(&config).unwrap().cohort;
    let audit = bootstrap_audit(
        &cohort,
        "score",
        &AuditConfig {
            seed: 8,
            ..AuditConfig::default()
        },
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for r in &audit.replicate_diffs {
        let defined: Vec<f64> = r.diffs.iter().flatten().copied().collect();
        if !defined.is_empty() {
            worst = worst.max(defined.iter().sum::<f64>().abs());
            checked += 1;
        }
    }
    verdict(
        8,
        checked > 0 && worst <= 1e-12,
        &format!("max |sum of diffs| {worst:.2e} over {checked} replicate groups"),
    );
}

// ---------------------------------------------------------------------------
// 9. Thread-count determinism of the CLI.

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn criterion_9_thread_determinism() {
    let f = common::Fixture::new("", "");
    let cfg = f.config_str();
    let one = f.path("t1");
    let eight = f.path("t8");
    let a = run(&[
        "--threads",
        "1",
        "audit",
        &cfg,
        "--bootstrap",
        "150",
        "--format",
        "csv,json",
        "--out",
        one.to_str().unwrap(),
    ]);
    let b = run(&[
        "--threads",
        "8",
        "audit",
        &cfg,
        "--bootstrap",
        "150",
        "--format",
        "csv,json",
        "--out",
        eight.to_str().unwrap(),
    ]);
    assert_eq!(
        (code(&a), code(&b)),
        (0, 0),
        "{} {}",
        stderr(&a),
        stderr(&b)
    );
    let (fa, fb) = (files_in(&one), files_in(&eight));
    let identical = fa == fb && !fa.is_empty();
    verdict(9, identical, &format!("{} files compared", fa.len()));
}

// ---------------------------------------------------------------------------
// 10. Demo pipeline end to end.

#[test]
fn criterion_10_end_to_end() {
    let start = Instant::now();
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo");
    let dir = tempfile::tempdir().unwrap();
    fs::copy(demo.join("audit.toml"), dir.path().join("audit.toml")).unwrap();
    let cohort = dir.path().join("out/cohort.csv");
    let s = run(&[
        "synth",
        demo.join("synth.toml").to_str().unwrap(),
        "--out",
        cohort.to_str().unwrap(),
    ]);
    assert_eq!(code(&s), 0, "{}", stderr(&s));
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("out/cohort.manifest.json"))).unwrap();
    assert_eq!(manifest["n_generated"], 5000);
    let a = run(&[
        "audit",
        dir.path().join("audit.toml").to_str().unwrap(),
        "--compare",
    ]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let elapsed = start.elapsed();

    let report = dir.path().join("out/report");
    let bundle = ReportBundle::from_json(&read(&report.join("report.json"))).unwrap();
    let subgroup = csv_cells(&read(&report.join("subgroup_auroc.csv")));
    let per_group_shape = subgroup[0]
        == [
            "Attribute",
            "Level",
            "N",
            "M1",
            "M1 (PSM)",
            "M2",
            "M2 (PSM)",
        ]
        && subgroup.len() == 1 + 2 + 3 + 3;
    let discrepancy = csv_cells(&read(&report.join("discrepancy_auroc.csv")));
    let gap_shape = discrepancy[0]
        == [
            "Attribute",
            "Model",
            "Protected attributes",
            "Before matching",
            "After matching",
        ]
        && discrepancy.len() == 1 + 3 * 2
        && discrepancy[1..].iter().all(|r| r[3] != "-" && r[4] != "-");
    let variants_ok = bundle
        .models
        .iter()
        .any(|m| m.model == "M1" && m.variant == ModelVariant::WithoutProtected)
        && bundle
            .models
            .iter()
            .any(|m| m.model == "M2" && m.variant == ModelVariant::WithProtected);
    let compared = bundle.comparison.is_some() && report.join("comparison.csv").exists();
    verdict(
        10,
        per_group_shape && gap_shape && variants_ok && compared && elapsed < Duration::from_secs(300),
        &format!(
            "per-group table {per_group_shape}, gap table {gap_shape}, variants {variants_ok}, comparison {compared}; {elapsed:?}"
        ),
    );
}

use biasaudit::cohort::{
    bin_edges, parse_cohort, subgroup_partition, write_cohort, Binning, Cohort, CohortRecord,
    CohortSchema, CovariateKind, CovariateValue, ProtectedColumn,
};
use proptest::prelude::*;

fn schema() -> CohortSchema {
    CohortSchema::new("id", "label")
        .with_score("m", "score")
        .with_protected(ProtectedColumn::categorical("grp"))
        .with_covariate("num", CovariateKind::Numeric)
        .with_covariate("flag", CovariateKind::Binary)
        .with_covariate("cat", CovariateKind::Categorical)
}

fn level() -> impl Strategy<Value = Option<String>> {
    prop_oneof![
        1 => Just(None),
        4 => "[a-e]{1,3}".prop_map(Some),
    ]
}

fn record() -> impl Strategy<
    Value = (
        bool,
        f64,
        Option<String>,
        Option<f64>,
        Option<bool>,
        Option<String>,
    ),
> {
    (
        any::<bool>(),
        0.0f64..=1.0,
        level(),
        proptest::option::of(-1e6f64..1e6),
        proptest::option::of(any::<bool>()),
        level(),
    )
}

fn build(
    rows: Vec<(
        bool,
        f64,
        Option<String>,
        Option<f64>,
        Option<bool>,
        Option<String>,
    )>,
) -> Cohort {
    let records = rows
        .into_iter()
        .enumerate()
        .map(|(i, (label, score, grp, num, flag, cat))| CohortRecord {
            id: format!("r{i}"),
            label,
            scores: vec![Some(score)],
            protected: vec![grp],
            covariates: vec![
                num.map_or(CovariateValue::Missing, CovariateValue::Numeric),
                flag.map_or(CovariateValue::Missing, CovariateValue::Binary),
                cat.map_or(CovariateValue::Missing, CovariateValue::Category),
            ],
        })
        .collect();
    Cohort::new(schema(), records).unwrap()
}

proptest! {
    #[test]
    fn write_then_parse_is_identity(rows in proptest::collection::vec(record(), 1..60)) {
        let cohort = build(rows);
        let mut buf = Vec::new();
        write_cohort(&cohort, &mut buf).unwrap();
        let back = parse_cohort(buf.as_slice(), &cohort.schema().as_written()).unwrap();
        prop_assert_eq!(back, cohort);
    }

    #[test]
    fn partition_accounts_for_every_record(
        rows in proptest::collection::vec(record(), 1..200),
        min in 0usize..30,
    ) {
        let cohort = build(rows);
        match subgroup_partition(&cohort, "grp", min) {
            Ok(p) => {
                let mut seen = std::collections::HashSet::new();
                for g in &p.groups {
                    for &i in &g.indices {
                        prop_assert!(seen.insert(i), "record {} in two groups", i);
                    }
                }
                let excluded: usize = p.excluded.iter().map(|e| e.count).sum();
                prop_assert_eq!(seen.len() + excluded, cohort.len());
            }
            Err(biasaudit::Error::NothingToCompare { .. }) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn tertile_edges_ignore_order(
        values in proptest::collection::vec(proptest::option::of(-100i32..100), 3..80),
        seed in any::<u64>(),
    ) {
        let as_f: Vec<Option<f64>> = values.iter().map(|v| v.map(f64::from)).collect();
        let mut shuffled = as_f.clone();
        // deterministic Fisher-Yates driven by the seed
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (s >> 33) as usize % (i + 1);
            shuffled.swap(i, j);
        }
        let a = bin_edges(&as_f, &Binning::Tertiles).map_err(|e| e.to_string());
        let b = bin_edges(&shuffled, &Binning::Tertiles).map_err(|e| e.to_string());
        prop_assert_eq!(a, b);
    }
}

#[test]
fn continuous_attribute_round_trips_as_categorical() {
    let text = "id,label,score,age\na,1,0.9,20\nb,0,0.1,40\nc,1,0.7,60\nd,0,0.3,80\ne,1,0.6,30\nf,0,0.2,70\n";
    let schema = CohortSchema::new("id", "label")
        .with_score("m", "score")
        .with_protected(ProtectedColumn::continuous("age", None));
    let cohort = parse_cohort(text.as_bytes(), &schema).unwrap();
    let mut buf = Vec::new();
    write_cohort(&cohort, &mut buf).unwrap();
    let back = parse_cohort(buf.as_slice(), &cohort.schema().as_written()).unwrap();
    assert_eq!(back.records(), cohort.records());
    assert_eq!(back.levels("age"), cohort.levels("age"));
}

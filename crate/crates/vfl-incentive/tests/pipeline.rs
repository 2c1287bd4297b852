use std::path::PathBuf;

use proptest::prelude::*;
use vfl_incentive::config::{ExperimentConfig, Variant};
use vfl_incentive::data::{
    generate_synthetic, preprocess, read_csv, standardize, train_test_split, vertical_partition,
    PartitionSpec, PartySpec, SyntheticParams,
};
use vfl_incentive::pipeline::run_experiment;
use vfl_incentive::report::{emit_report, ReportFormat};
use vfl_incentive::Stage;

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name);
    ExperimentConfig::load(path).unwrap()
}

fn assert_efficient(r: &vfl_incentive::report::AllocationReport) {
    let total: f64 = r.payouts.iter().sum();
    assert!((total - (r.clamped_estate - r.undistributed)).abs() <= 1e-9);
}

#[test]
fn heart_plain_report() {
    let r = run_experiment(&config("heart.json")).unwrap();
    assert_eq!(r.parties, ["P_h1", "P_h2", "P_h3"]);
    assert_eq!(r.claims.len(), 3);
    assert!(r.estate > 0.0);
    assert_efficient(&r);
    let phi = r.shapley.as_ref().unwrap();
    assert!((phi.iter().sum::<f64>() - r.estate).abs() <= 1e-9);
    assert_eq!(r.models_trained, 8);
    let pct: f64 = r.payout_percent.iter().sum();
    assert!((pct - 100.0 * (1.0 - r.undistributed / r.estate)).abs() < 1e-9);
}

#[test]
fn payout_path_trains_n_plus_two() {
    let mut c = config("heart.json");
    c.shapley = false;
    let r = run_experiment(&c).unwrap();
    assert_eq!(r.models_trained, 5);
    assert!(r.shapley.is_none());
    let md = emit_report(&r, ReportFormat::Markdown).unwrap();
    assert!(!md.contains("Shapley"));
}

#[test]
fn reruns_are_byte_identical() {
    let c = config("heart_symmetry.json");
    let a = emit_report(&run_experiment(&c).unwrap(), ReportFormat::Json).unwrap();
    let b = emit_report(&run_experiment(&c).unwrap(), ReportFormat::Json).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dummy_party_is_not_rewarded_when_claim_clamps() {
    let c = config("heart_dummy.json");
    let r = run_experiment(&c).unwrap();
    let i = r.parties.iter().position(|p| p == "P_h1").unwrap();
    if r.claims[i] <= 0.0 {
        assert_eq!(r.payouts[i], 0.0);
        assert!(r.normalization.clamped_claims.contains(&"P_h1".to_string()));
    }
    assert_efficient(&r);
    let phi = r.shapley.unwrap();
    assert!((phi.iter().sum::<f64>() - r.estate).abs() <= 1e-9);
}

#[test]
fn duplicated_parties_are_treated_identically() {
    let r = run_experiment(&config("heart_symmetry.json")).unwrap();
    assert_eq!(r.claims[0], r.claims[1]);
    assert_eq!(r.payouts[0], r.payouts[1]);
    let phi = r.shapley.unwrap();
    assert_eq!(phi[0], phi[1]);
}

#[test]
fn failures_name_their_stage() {
    let mut c = config("heart.json");
    c.dataset = vfl_incentive::config::DatasetSource::Csv {
        path: "/nowhere/heart.csv".into(),
    };
    let err = run_experiment(&c).unwrap_err();
    assert!(matches!(
        err,
        vfl_incentive::Error::Stage {
            stage: Stage::Load,
            ..
        }
    ));
    assert_eq!(err.exit_code(), 2);

    let mut c = config("heart.json");
    c.partition.parties[1].columns.push("nonexistent".into());
    let err = run_experiment(&c).unwrap_err();
    assert!(err.to_string().starts_with("[partition]"), "{err}");
}

fn synthetic_config(seed: u64) -> ExperimentConfig {
    let text = format!(
        r#"{{
        "dataset": {{"synthetic": {{"n_samples": 400, "n_features": 6, "n_informative": 2}}}},
        "partition": {{"label": "target", "active": "A", "parties": [
            {{"id": "A", "columns": ["feature_1", "feature_2"]}},
            {{"id": "B", "columns": ["feature_3", "feature_4"]}},
            {{"id": "C", "columns": ["feature_5", "feature_6"]}}]}},
        "training": {{"rounds": 20}},
        "shapley": true,
        "budget": 100,
        "seed": {seed}
    }}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

#[test]
fn noise_only_federations_report_consistently() {
    // Passive parties hold only uninformative columns, so the estate's sign varies by seed.
    for seed in 0..6 {
        let r = run_experiment(&synthetic_config(seed)).unwrap();
        assert_efficient(&r);
        assert_eq!(r.federation_beneficial, r.estate >= 0.0);
        if r.estate < 0.0 {
            assert!(r.payouts.iter().all(|&p| p == 0.0));
            assert_eq!(r.budget.as_ref().unwrap().residual, 100.0);
        } else if r.estate > 0.0 {
            let spent: f64 = r.budget.as_ref().unwrap().shares.iter().sum();
            assert!(spent <= 100.0 + 1e-9);
        }
        assert_eq!(r.variant, Variant::Plain);
    }
}

fn mixed_csv(rows: &[(f64, &str, f64, u8)]) -> String {
    let mut s = String::from("num,cat,other,y\n");
    for (a, b, c, y) in rows {
        s.push_str(&format!("{a},{b},{c},{y}\n"));
    }
    s
}

fn row_strategy() -> impl Strategy<Value = Vec<(f64, &'static str, f64, u8)>> {
    prop::collection::vec(
        (
            -50.0..50.0f64,
            prop::sample::select(vec!["red", "green", "blue"]),
            -1.0..1.0f64,
            0u8..2,
        ),
        4..60,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_hot_rows_sum_to_one(rows in row_strategy()) {
        let table = read_csv(mixed_csv(&rows).as_bytes(), "y").unwrap();
        let enc = preprocess(&table).unwrap();
        let group: Vec<usize> = enc.columns.iter().enumerate()
            .filter(|(_, c)| c.source == "cat").map(|(j, _)| j).collect();
        prop_assert!(!group.is_empty());
        for i in 0..enc.features.rows() {
            let s: f64 = group.iter().map(|&j| enc.features.get(i, j)).sum();
            prop_assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn split_and_standardize_invariants(rows in row_strategy(), seed in any::<u64>(), ratio in 0.2..0.8f64) {
        let table = read_csv(mixed_csv(&rows).as_bytes(), "y").unwrap();
        let enc = preprocess(&table).unwrap();
        prop_assume!(enc.features.rows() >= 2);
        let spec = PartitionSpec {
            label: "y".into(),
            active: "a".into(),
            parties: vec![
                PartySpec { id: "a".into(), columns: vec!["num".into()] },
                PartySpec { id: "b".into(), columns: vec!["cat".into(), "other".into()] },
            ],
            drop: vec![],
        };
        let parties = vertical_partition(&enc, &spec).unwrap();
        let (mut train, mut test) = train_test_split(&parties, ratio, seed).unwrap();
        prop_assert_eq!(&train[0].row_index, &train[1].row_index);
        prop_assert_eq!(&test[0].row_index, &test[1].row_index);
        prop_assert_eq!(train[0].rows() + test[0].rows(), enc.features.rows());

        standardize(&mut train, &mut test).unwrap();
        for party in &train {
            for (j, col) in party.columns.iter().enumerate() {
                let v = party.features.column(j);
                if !col.continuous {
                    prop_assert!(v.iter().all(|&x| x == 0.0 || x == 1.0));
                    continue;
                }
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!(var.abs() < 1e-12 || (var - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn synthetic_generator_is_seeded() {
    let p = SyntheticParams {
        n_samples: 200,
        seed: 3,
        ..SyntheticParams::default()
    };
    assert_eq!(
        generate_synthetic(&p).unwrap(),
        generate_synthetic(&p).unwrap()
    );
    let q = SyntheticParams { seed: 4, ..p };
    assert_ne!(
        generate_synthetic(&p).unwrap(),
        generate_synthetic(&q).unwrap()
    );
}

use imm_core::experiments::logreg::{run_logreg, LogRegConfig, LogRegMethod, LogRegSweep, LogRegTarget};
use imm_core::experiments::output::{parse_csv, to_csv, write_results, ResultRow};
use imm_core::experiments::plot::{line_band_chart, series_from_rows};
use imm_core::restricted::{AnalyticRestrictedLogistic, RestrictedModel};
use proptest::prelude::*;

fn small(method: LogRegMethod) -> LogRegConfig {
    LogRegConfig { n: 8, runs: 6, epochs: 40, test_size: 500, method, seed: 11, ..Default::default() }
}

#[test]
fn zero_lambda_imm_is_bitwise_baseline() {
    let base = run_logreg(&small(LogRegMethod::Baseline)).unwrap();
    let imm = run_logreg(&LogRegConfig { lambda: Some(0.0), ..small(LogRegMethod::Imm) }).unwrap();
    assert_eq!(base.accuracies(), imm.accuracies());
}

#[test]
fn reruns_are_identical() {
    let a = run_logreg(&small(LogRegMethod::Imm)).unwrap();
    let b = run_logreg(&small(LogRegMethod::Imm)).unwrap();
    assert_eq!(a, b);
    let other = run_logreg(&LogRegConfig { seed: 12, ..small(LogRegMethod::Imm) }).unwrap();
    assert_ne!(a.accuracies(), other.accuracies());
}

#[test]
fn clean_target_is_the_analytic_predictor() {
    let truth = AnalyticRestrictedLogistic::default();
    let target = LogRegTarget { truth, epsilon: 0.0 };
    for x1 in [-0.95, -0.3, 0.0, 0.42, 1.0] {
        assert_eq!(target.predict(&x1).unwrap().probs(), truth.predict(&x1).unwrap().probs());
    }
}

#[test]
fn sweep_expands_every_cell() {
    let sweep = LogRegSweep { sizes: vec![3, 7], runs: 5, seed: 4, ..Default::default() };
    let c = sweep.config(7, LogRegMethod::Noising);
    assert_eq!((c.n, c.method, c.runs, c.seed), (7, LogRegMethod::Noising, 5, 4));
    assert!(sweep.validate().is_ok());
    assert!(LogRegSweep { sizes: vec![1], ..Default::default() }.validate().is_err());
}

#[test]
fn written_results_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![ResultRow::new(0, 2, "imm", "accuracy", 91.25), ResultRow::new(1, 2, "imm", "accuracy", 88.0)];
    let cfg = small(LogRegMethod::Imm);
    let paths = write_results(dir.path(), "logreg", &cfg, &rows).unwrap();
    assert_eq!(parse_csv(&std::fs::read_to_string(&paths.csv).unwrap()).unwrap(), rows);
    let echoed: LogRegConfig = serde_json::from_str(&std::fs::read_to_string(&paths.json).unwrap()).unwrap();
    assert_eq!(echoed, cfg);
}

proptest! {
    #[test]
    fn csv_round_trip(values in prop::collection::vec((0usize..50, 0usize..300, -1e6f64..1e6), 0..40)) {
        let rows: Vec<ResultRow> = values.iter().map(|(r, x, v)| ResultRow::new(*r, *x, "m", "metric", *v)).collect();
        prop_assert_eq!(parse_csv(&to_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn chart_is_a_function_of_rows(values in prop::collection::vec((0usize..5, 1usize..4, 0.0f64..1.0), 1..30)) {
        let rows: Vec<ResultRow> = values.iter().map(|(r, x, v)| ResultRow::new(*r, *x, "m", "acc", *v)).collect();
        let a = line_band_chart("t", "x", "y", &series_from_rows(&rows, "acc"));
        let b = line_band_chart("t", "x", "y", &series_from_rows(&rows, "acc"));
        prop_assert!(a.starts_with("<svg"));
        prop_assert_eq!(a, b);
    }
}

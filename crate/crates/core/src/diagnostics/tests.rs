use proptest::prelude::*;
use proptest::test_runner::RngSeed;

use super::*;
use crate::fixtures::toy_cell;
use crate::oracle::{make_dataset, DatasetKind, DatasetSizes};
use crate::search_space::{CellSpec, OpKind};
use crate::supernet::SupernetConfig;
use crate::trainer::{search, TrainConfig};

fn short_run(epochs: usize, batch_size: usize, variant: Variant) -> SearchResult {
    let sizes = DatasetSizes {
        train: 24,
        val: 24,
        input_dim: 2,
        classes: 2,
    };
    let ds = make_dataset(DatasetKind::TeacherNet, 4, sizes).unwrap();
    let config = TrainConfig {
        epochs,
        batch_size,
        variant,
        alpha_lr: 3e-3,
        ..TrainConfig::default()
    };
    search(&config, &SupernetConfig::new(toy_cell(), 2, 2, 2), &ds).unwrap()
}

#[test]
fn ema_examples() {
    let mut ema = EmaTrace::new(0.9).unwrap();
    for _ in 0..50 {
        assert_eq!(ema.update("c", 2.5), 2.5);
    }

    let mut ema = EmaTrace::new(0.5).unwrap();
    ema.update("s", 0.0);
    assert_eq!(ema.update("s", 1.0), 0.5);

    let mut ema = EmaTrace::new(0.999).unwrap();
    ema.update("s", 0.0);
    let mut v = 0.0;
    for _ in 0..1000 {
        v = ema.update("s", 1.0);
    }
    let closed = 1.0 - 0.999_f64.powi(1000);
    assert!((v - closed).abs() <= 1e-12);
    assert!((v - 0.632).abs() < 1e-3);
    assert_eq!(ema.get("s").unwrap().history.len(), 1001);
}

#[test]
fn ema_rejects_bad_decay() {
    for d in [0.0, 1.0, -0.5, f64::NAN] {
        assert!(EmaTrace::new(d).is_err());
    }
}

#[test]
fn l1_change_examples() {
    assert_eq!(l1_change(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
    assert!((l1_change(&[0.5, 0.5], &[0.7, 0.3]).unwrap() - 0.4).abs() <= 1e-15);
    assert!(matches!(l1_change(&[1.0], &[0.5, 0.5]), Err(DiagnosticsError::Length(1, 2))));
    assert_eq!(cumulative(&[0.5, 0.25, 0.0, 1.0]), vec![0.5, 0.75, 0.75, 1.75]);
}

#[test]
fn cumulative_l1_matches_epoch_records() {
    let r = short_run(3, 8, Variant::Cosine);
    let per: Vec<f64> = r.epochs.iter().map(|e| e.l1_change).collect();
    let cum: Vec<f64> = r.epochs.iter().map(|e| e.cumulative_l1).collect();
    assert_eq!(cumulative(&per), cum);
    assert!(cum.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn collapse_flag_rule() {
    let cell = CellSpec::fully_connected(2, vec![OpKind::Skip, OpKind::Affine, OpKind::Nonlinear], 2).unwrap();
    assert!(collapse_flag(&Genotype::new(vec![0, 0, 2]), &cell));
    assert!(!collapse_flag(&Genotype::new(vec![0, 1, 2]), &cell));
    let two = CellSpec::new(3, vec![(0, 1), (1, 2)], vec![OpKind::AvgScale, OpKind::Affine], 2).unwrap();
    assert!(collapse_flag(&Genotype::new(vec![0, 1]), &two));
}

#[test]
fn one_step_export_has_one_row() {
    let r = short_run(1, 24, Variant::Cosine);
    let mut one = r.clone();
    one.trace.truncate(1);
    let dir = tempfile::tempdir().unwrap();
    export_traces(&one, ExportFormat::Csv, dir.path(), None).unwrap();
    let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().next().unwrap(), TraceRecord::FIELDS.join(","));
}

#[test]
fn export_round_trips() {
    let r = short_run(2, 8, Variant::Sign);
    let dir = tempfile::tempdir().unwrap();
    export_traces(&r, ExportFormat::Json, dir.path(), None).unwrap();
    assert_eq!(read_trace_jsonl(&dir.path().join("trace.jsonl")).unwrap(), r.trace);

    export_traces(&r, ExportFormat::Csv, dir.path(), None).unwrap();
    let back = read_trace_csv(&dir.path().join("trace.csv")).unwrap();
    assert_eq!(back.len(), r.trace.len());
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    for (a, b) in back.iter().zip(&r.trace) {
        assert_eq!((a.step, a.epoch, a.phase, a.skipped_reg), (b.step, b.epoch, b.phase, b.skipped_reg));
        assert!(close(a.loss, b.loss) && close(a.lambda_t, b.lambda_t));
        assert!(close(a.grad_norm_alpha, b.grad_norm_alpha) && close(a.min_layer_grad_norm, b.min_layer_grad_norm));
        assert_eq!(a.lambda.is_some(), b.lambda.is_some());
        assert_eq!(a.lambda_sign.is_some(), b.lambda_sign.is_some());
        if let (Some(x), Some(y)) = (a.lambda, b.lambda) {
            assert!(close(x, y));
        }
    }
}

#[test]
fn summary_contents() {
    let r = short_run(2, 24, Variant::None);
    let dir = tempfile::tempdir().unwrap();
    let s = export_traces(&r, ExportFormat::Json, dir.path(), None).unwrap();
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["genotype"], r.genotype.to_string());
    assert_eq!(v["epochs"], 2);
    assert_eq!(v["collapse_flag"], collapse_flag(&r.genotype, &r.net.cell));
    assert!(v["rank"].is_null());
    assert_eq!(s.final_lambda, r.final_lambda());
}

#[test]
fn empty_trace_and_bad_paths_are_errors() {
    let mut r = short_run(1, 24, Variant::None);
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let err = export_traces(&r, ExportFormat::Json, &blocker.join("sub"), None).unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
    r.trace.clear();
    assert!(matches!(export_traces(&r, ExportFormat::Csv, dir.path(), None), Err(DiagnosticsError::EmptyTrace)));
}

#[test]
fn op_grad_replay_is_deterministic() {
    let r = short_run(2, 8, Variant::Cosine);
    let a = op_grad_traces(&r, OP_GRAD_DECAY).unwrap();
    let b = op_grad_traces(&r, OP_GRAD_DECAY).unwrap();
    assert_eq!(a, b);
    for (_, s) in a.series() {
        assert_eq!(s.history.len(), r.op_grads.len());
    }
}

#[test]
fn report_writes_long_format_series() {
    let r = short_run(3, 8, Variant::Cosine);
    let dir = tempfile::tempdir().unwrap();
    let paths = write_report(dir.path(), &[("cosine".to_string(), &r)]).unwrap();
    assert_eq!(paths.len(), 3);
    for p in &paths {
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "step,series,value");
        assert!(text.lines().count() > 1);
    }
    let l1 = std::fs::read_to_string(dir.path().join("l1_change.csv")).unwrap();
    assert_eq!(l1.lines().count(), 1 + r.epochs.len());
}

#[test]
fn plateau_increments_split_into_thirds() {
    let r = short_run(6, 24, Variant::None);
    let (mid, last) = plateau_increments(&r).unwrap();
    let c: Vec<f64> = r.epochs.iter().map(|e| e.cumulative_l1).collect();
    assert_eq!(mid, c[3] - c[1]);
    assert_eq!(last, c[5] - c[3]);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, rng_seed: RngSeed::Fixed(0xd1a6), ..ProptestConfig::default() })]

    #[test]
    fn l1_change_is_a_metric(
        a in proptest::collection::vec(-1.0f64..1.0, 5),
        b in proptest::collection::vec(-1.0f64..1.0, 5),
        c in proptest::collection::vec(-1.0f64..1.0, 5),
    ) {
        let ab = l1_change(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, l1_change(&b, &a).unwrap());
        prop_assert_eq!(ab == 0.0, a == b);
        prop_assert!(l1_change(&a, &c).unwrap() <= ab + l1_change(&b, &c).unwrap() + 1e-12);
    }

    #[test]
    fn ema_stays_within_sample_range(xs in proptest::collection::vec(-5.0f64..5.0, 1..40), d in 0.01f64..0.99) {
        let mut ema = EmaTrace::new(d).unwrap();
        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        for &x in &xs {
            let v = ema.update("s", x);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
        prop_assert_eq!(ema.get("s").unwrap().history.len(), xs.len());
    }
}

mod common;

use std::fs;

use dgn::experiment::{prepare_graph, run_experiment, ExperimentConfig, RESULTS_CSV, RESULTS_JSONL, RESULT_COLUMNS};
use dgn::export::{export_embeddings, ASSIGNMENTS, EMBEDDINGS, GROUP_MEANS};
use dgn::io::{content_cites, load_generic, save_generic};
use dgn::sweep::{sweep, SweepSpec, BEST_K_CSV, CURVES_CSV};
use dgn_core::train::{train_with_input, ModelInput, NormKind};
use serde_json::Value;

const DGN_MODEL: &str = r#"{"kind": "gcn", "depth": 3, "norm": "dgn", "groups": 10, "lambda": 0.01}"#;

fn without_seconds(line: &str) -> Value {
    let mut v: Value = serde_json::from_str(line).unwrap();
    v.as_object_mut().unwrap().remove("seconds");
    v
}

#[test]
fn repeated_runs_give_identical_records() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = ExperimentConfig::from_json(&common::dataset(tmp.path(), &out, DGN_MODEL, "")).unwrap();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.runs, b.runs);
    let text = fs::read_to_string(out.join(RESULTS_JSONL)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(without_seconds(lines[0]), without_seconds(lines[1]));

    let csv = fs::read_to_string(out.join(RESULTS_CSV)).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next().unwrap(), RESULT_COLUMNS.join(","));
    assert_eq!(rows.count(), 2);
    assert!(a.acc_mean > 0.5, "accuracy {}", a.acc_mean);
    assert!(a.acc_std >= 0.0 && a.metrics.g_ins >= 0.0 && a.metrics.r_group > 0.0);
}

#[test]
fn single_repeat_has_zero_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let model = r#"{"kind": "sgc", "depth": 2}"#;
    let mut cfg = ExperimentConfig::from_json(&common::dataset(tmp.path(), &tmp.path().join("o"), model, "")).unwrap();
    cfg.repeats = 1;
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.acc_std, 0.0);
    assert_eq!(r.seeds, [0]);
}

#[test]
fn missing_features_zero_val_and_test_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let model = r#"{"kind": "gcn", "depth": 2}"#;
    let extra = r#", "scenario": "missing_features""#;
    let cfg = ExperimentConfig::from_json(&common::dataset(tmp.path(), &tmp.path().join("o"), model, extra)).unwrap();
    let g = prepare_graph(&cfg).unwrap();
    let original = load_generic(&cfg.dataset.path).unwrap();
    let m = g.masks();
    let mut zeroed = 0;
    for v in 0..g.num_nodes() {
        if m.val[v] || m.test[v] {
            assert!(g.features().row(v).iter().all(|&x| x == 0.0));
            zeroed += 1;
        } else {
            assert_eq!(g.features().row(v), original.features().row(v));
        }
    }
    assert_eq!(zeroed, 120);
    run_experiment(&cfg).unwrap();
}

#[test]
fn single_cell_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_text = common::dataset(tmp.path(), &tmp.path().join("run"), DGN_MODEL, "");
    let cfg = ExperimentConfig::from_json(&cfg_text).unwrap();
    let direct = run_experiment(&cfg).unwrap();
    let mut sweep_cfg = cfg.clone();
    sweep_cfg.output_dir = tmp.path().join("sweep");
    let spec = SweepSpec {
        depths: vec![3],
        norms: vec![NormKind::Dgn],
        groups: vec![10],
        lambdas: vec![0.01],
        tune_lambda: false,
        jobs: 1,
    };
    let out = sweep(&sweep_cfg, &spec).unwrap();
    let from_sweep = out.cells[0].result.as_ref().unwrap();
    assert_eq!(from_sweep.runs, direct.runs);
    assert_eq!(from_sweep.model, direct.model);
    let a = fs::read_to_string(tmp.path().join("run").join(RESULTS_JSONL)).unwrap();
    let b = fs::read_to_string(tmp.path().join("sweep").join(RESULTS_JSONL)).unwrap();
    assert_eq!(without_seconds(a.trim()), without_seconds(b.trim()));
}

#[test]
fn sweep_emits_one_row_per_cell_in_parallel() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let model = r#"{"kind": "sgc", "depth": 1}"#;
    let mut cfg = ExperimentConfig::from_json(&common::dataset(tmp.path(), &out, model, "")).unwrap();
    cfg.repeats = 1;
    let spec = SweepSpec {
        depths: vec![1, 4],
        norms: vec![NormKind::None, NormKind::Pair, NormKind::Dgn],
        groups: vec![2, 4],
        lambdas: vec![0.01],
        tune_lambda: false,
        jobs: 3,
    };
    let serial = sweep(&cfg, &SweepSpec { jobs: 1, ..spec.clone() }).unwrap();
    let parallel = sweep(&cfg, &spec).unwrap();
    assert_eq!(parallel.failures(), 0);
    let curves = fs::read_to_string(out.join(CURVES_CSV)).unwrap();
    assert_eq!(curves.lines().count(), 1 + 12);
    assert!(curves.starts_with("K,norm,G,lambda,acc_mean,acc_std,g_ins,r_group,intra_group,seconds"));
    for (s, p) in serial.cells.iter().zip(&parallel.cells) {
        assert_eq!(s.result.as_ref().unwrap().runs, p.result.as_ref().unwrap().runs);
    }
    let best = fs::read_to_string(out.join(BEST_K_CSV)).unwrap();
    assert_eq!(best.lines().count(), 1 + 3);
    assert_eq!(parallel.best[0].improvement_abs, Some(0.0));
    let jsonl = fs::read_to_string(out.join(RESULTS_JSONL)).unwrap();
    assert_eq!(jsonl.lines().count(), 24);
}

#[test]
fn lambda_tuning_picks_a_candidate() {
    let tmp = tempfile::tempdir().unwrap();
    let model = r#"{"kind": "sgc", "depth": 2}"#;
    let mut cfg = ExperimentConfig::from_json(&common::dataset(tmp.path(), &tmp.path().join("o"), model, "")).unwrap();
    cfg.repeats = 1;
    let spec = SweepSpec {
        depths: vec![2],
        norms: vec![NormKind::None, NormKind::Dgn],
        groups: vec![3],
        lambdas: vec![0.01],
        tune_lambda: true,
        jobs: 1,
    };
    let out = sweep(&cfg, &spec).unwrap();
    assert_eq!(out.cells.len(), 2);
    assert!(out.cells[0].tuning.len() == 1);
    let tuned = &out.cells[1];
    assert_eq!(tuned.tuning.len(), 9);
    let best_val = tuned.tuning.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let chosen = tuned.result.as_ref().unwrap();
    assert_eq!(chosen.val_mean, best_val);
    assert!(dgn::sweep::LAMBDA_CANDIDATES.contains(&chosen.model.lambda));
}

#[test]
fn export_files_are_consistent_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(&common::dataset(tmp.path(), &tmp.path().join("o"), DGN_MODEL, "")).unwrap();
    let g = prepare_graph(&cfg).unwrap();
    let input = ModelInput::<f32>::new(&g);
    let outcome = train_with_input(&cfg.model_config(), &cfg.train_config(), &g, &input).unwrap();
    let first = tmp.path().join("e1");
    let second = tmp.path().join("e2");
    export_embeddings(&outcome.model, &input, &g, &first).unwrap();
    export_embeddings(&outcome.model, &input, &g, &second).unwrap();
    for f in [EMBEDDINGS, GROUP_MEANS, ASSIGNMENTS] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    let means = fs::read_to_string(first.join(GROUP_MEANS)).unwrap();
    assert_eq!(means.lines().count(), 1 + 10);
    let mut reader = csv::Reader::from_path(first.join(ASSIGNMENTS)).unwrap();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.unwrap();
        let total: f64 = record.iter().skip(1).map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-6);
        rows += 1;
    }
    assert_eq!(rows, g.num_nodes());
    let embeddings = fs::read_to_string(first.join(EMBEDDINGS)).unwrap();
    assert!(embeddings.starts_with("node_id,label,h0,"));
    assert_eq!(embeddings.lines().count(), 1 + g.num_nodes());
}

#[test]
fn export_without_dgn_writes_embeddings_only() {
    let tmp = tempfile::tempdir().unwrap();
    let model = r#"{"kind": "gcn", "depth": 2, "norm": "batch"}"#;
    let mut cfg = ExperimentConfig::from_json(&common::dataset(tmp.path(), &tmp.path().join("o"), model, "")).unwrap();
    cfg.export = true;
    cfg.repeats = 1;
    run_experiment(&cfg).unwrap();
    assert!(cfg.output_dir.join(EMBEDDINGS).exists());
    assert!(!cfg.output_dir.join(GROUP_MEANS).exists());
}

#[test]
fn content_cites_round_trip_through_generic() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    fs::create_dir(&raw).unwrap();
    fs::write(raw.join("toy.content"), "p1 1 0 0 x\np2 0 1 0 y\np3 0 0 1 x\np4 1 1 0 z\n").unwrap();
    fs::write(raw.join("toy.cites"), "p1 p2\np2 p3\np3 p2\np4 p1\nghost p1\n").unwrap();
    let loaded = content_cites::load_dir(&raw).unwrap();
    assert_eq!(loaded.skipped_edges, 1);
    let g = loaded.graph;
    let converted = tmp.path().join("generic");
    save_generic(&g, &converted).unwrap();
    let back = load_generic(&converted).unwrap();
    assert_eq!(back.adjacency(), g.adjacency());
    assert_eq!(back.features(), g.features());
    assert_eq!(back.labels(), g.labels());
    assert_eq!(back.num_classes(), g.num_classes());
    assert_eq!(back.masks(), g.masks());
}

use std::path::Path;
use std::process::Command;

use dip_cli::bench::{loglog_slope, run_bench, BenchMode};
use dip_cli::commands::{self, Overrides, Run};
use dip_cli::config::BenchConfig;
use dip_core::{load_bundle, AblationFlags};
use dip_tensor::load_checkpoint;

fn nc_config(out: &Path, n: usize, extra: &str) -> String {
    format!(
        r#"
task = "node-classification"
out_dir = "{}"
[data.synth]
n = {n}
seed = 3
[model]
d_s = 16
tau = 4
n_p_v = 4
n_p_t = 4
{extra}
"#,
        out.display()
    )
}

fn run(text: &str) -> Run {
    Run::from_toml(text).unwrap()
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn gen_round_trips_and_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let text = nc_config(&a, 120, "");
    commands::gen(&run(&text)).unwrap();
    let mut second = run(&text);
    second.cfg.out_dir = b.clone();
    commands::gen(&second).unwrap();

    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 3);
    for name in &names {
        assert_eq!(read(a.join(name)), read(b.join(name)), "{name:?} differs");
    }

    let loaded = load_bundle(&a).unwrap();
    let original = dip_cli::data::prepare(&run(&text).cfg).unwrap();
    assert_eq!(loaded, original.graph);
    // the bundle's split is picked up again
    let from_bundle = Run::new(
        run(&text).cfg,
        text.clone(),
        &Overrides {
            data: Some(a),
            ..Overrides::default()
        },
    )
    .unwrap();
    assert_eq!(dip_cli::data::prepare(&from_bundle.cfg).unwrap().split, original.split);
}

#[test]
fn default_synthetic_bundle_has_expected_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "task = \"node-classification\"\nout_dir = \"{}\"\n[data.synth]\n",
        tmp.path().display()
    );
    commands::gen(&run(&text)).unwrap();
    let g = load_bundle(tmp.path()).unwrap();
    assert_eq!(g.n(), 2000);
    assert_eq!(g.num_classes(), Some(4));
    assert!(g.labels().unwrap().iter().all(|&c| c < 4));
}

#[test]
fn zero_learning_rate_leaves_parameters_and_loss_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let text = nc_config(tmp.path(), 150, "[training]\nepochs = 4\nlr = 0.0\n");
    let r = run(&text);
    let out = commands::train(&r).unwrap();
    let data = dip_cli::data::prepare(&r.cfg).unwrap();
    let (_, init) = dip_cli::run::new_model(&r.cfg, &data).unwrap();
    assert_eq!(out.best, init);
    let (saved, _) = load_checkpoint(&tmp.path().join("checkpoint.bin")).unwrap();
    assert_eq!(saved, init);
    let first = out.log[0].train_loss;
    assert_eq!(out.log.len(), 4);
    assert!(out.log.iter().all(|row| row.train_loss.to_bits() == first.to_bits()));
}

#[test]
fn training_is_deterministic_and_learns() {
    let tmp = tempfile::tempdir().unwrap();
    let text = nc_config(&tmp.path().join("a"), 400, "[training]\nepochs = 40\nlr = 0.01\n");
    let a = run(&text);
    let mut b = run(&text);
    b.cfg.out_dir = tmp.path().join("b");
    let out = commands::train(&a).unwrap();
    commands::train(&b).unwrap();
    assert_eq!(
        read(tmp.path().join("a/train_log.csv")),
        read(tmp.path().join("b/train_log.csv"))
    );
    assert_eq!(
        read(tmp.path().join("a/checkpoint.bin")),
        read(tmp.path().join("b/checkpoint.bin"))
    );
    assert_eq!(read(tmp.path().join("a/config.toml")), text.as_bytes());

    let last = out.log.last().unwrap().train_loss;
    assert!(last < 4f64.ln(), "final loss {last}");
    assert!(last < out.log[0].train_loss);
    // the checkpoint holds the best validation epoch
    let best = out
        .log
        .iter()
        .filter_map(|r| r.valid_metric)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_metric, best);
}

fn strip_timing(report: &dip_core::metrics::MetricsReport) -> serde_json::Value {
    let mut v = serde_json::to_value(report).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("wall_time_s");
    obj.remove("peak_bytes");
    v
}

#[test]
fn eval_is_deterministic_and_sweeps_six_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let text = nc_config(tmp.path(), 200, "[training]\nepochs = 5\nlr = 0.01\n");
    let r = run(&text);
    commands::train(&r).unwrap();
    let once = commands::eval(&r, None, false).unwrap();
    let twice = commands::eval(&r, None, false).unwrap();
    assert_eq!(once.len(), 1);
    assert_eq!(once[0].variant, "full");
    assert_eq!(strip_timing(&once[0]), strip_timing(&twice[0]));
    assert_eq!(once[0].config_sha256, r.config_sha256);

    let sweep = commands::eval(&r, None, true).unwrap();
    let names: Vec<&str> = sweep.iter().map(|s| s.variant.as_str()).collect();
    assert_eq!(
        names,
        [
            "full",
            "no-visual-pseudo",
            "no-textual-pseudo",
            "no-local",
            "no-global",
            "no-cross-modal"
        ]
    );
    for name in names {
        assert!(tmp.path().join(format!("report_{name}.json")).is_file());
    }
    assert_eq!(strip_timing(&sweep[0]), strip_timing(&once[0]));
}

#[test]
fn link_prediction_pipeline_reports_rank_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "task = \"link-prediction\"\nout_dir = \"{}\"\n[data.synth]\nn = 200\np_in = 0.1\np_out = 0.01\n\
         [model]\nd_s = 8\ntau = 2\nn_p_v = 2\nn_p_t = 2\n[training]\nepochs = 3\n[eval]\nnegatives = 50\n",
        tmp.path().display()
    );
    let r = run(&text);
    commands::train(&r).unwrap();
    let report = commands::eval(&r, None, false).unwrap().remove(0);
    let link = report.link.unwrap();
    assert!(link.mrr > 0.0 && link.mrr <= 1.0);
    assert!(link.hits_at_1 <= link.hits_at_10);
    assert!(report.classification.is_none());
}

#[test]
fn untrained_model_is_at_chance_level() {
    let tmp = tempfile::tempdir().unwrap();
    let text = nc_config(tmp.path(), 2000, "[training]\nepochs = 1\nlr = 0.0\n");
    let r = run(&text);
    commands::train(&r).unwrap();
    let report = commands::eval(&r, None, false).unwrap().remove(0);
    let acc = report.classification.unwrap().accuracy;
    let n_test: f64 = 600.0;
    let sigma = (0.25 * 0.75 / n_test).sqrt();
    assert!((acc - 0.25).abs() <= 4.0 * sigma, "accuracy {acc}");
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn diagnose_exports_energies_and_heatmaps() {
    let tmp = tempfile::tempdir().unwrap();
    let text = nc_config(tmp.path(), 150, "[training]\nepochs = 2\n");
    let r = run(&text);
    commands::train(&r).unwrap();
    let diag = commands::diagnose(&r, None).unwrap();
    assert_eq!(diag.nodes.len(), 64);
    for (m, n_p) in [("visual", 4), ("textual", 4)] {
        let rows = csv_rows(&tmp.path().join(format!("heatmap_{m}.csv")));
        assert_eq!(rows.len(), 1 + n_p);
        assert!(rows.iter().all(|r| r.len() == 64));
    }
    let energy = csv_rows(&tmp.path().join("dirichlet_full.csv"));
    assert_eq!(energy[0], ["depth", "energy", "seed"]);
    let depths: Vec<&str> = energy[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(depths, ["1", "2", "4", "8"]);
    assert_eq!(csv_rows(&tmp.path().join("dirichlet_local_only.csv")).len(), 5);

    // a local-only run has no pseudo pathways to show
    let mut local = run(&text);
    local.cfg.ablation = AblationFlags::LOCAL_ONLY;
    commands::diagnose(&local, None).unwrap();
    for m in ["visual", "textual"] {
        let rows = csv_rows(&tmp.path().join(format!("heatmap_{m}.csv")));
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].len(), 64);
    }
}

#[test]
fn bench_follows_trial_protocol() {
    let cfg = BenchConfig {
        sizes: vec![100, 200],
        dense_sizes: vec![50, 100, 4000],
        n_p: 4,
        tau: 2,
        d_s: 8,
        repeats: 5,
        dense_max_bytes: 1 << 20,
        ..BenchConfig::default()
    };
    let (rows, summary) = run_bench(&cfg).unwrap();
    assert_eq!(rows.len(), 5);
    for row in &rows[..4] {
        assert_eq!(row.trials.len(), 5);
        let mut sorted = row.trials.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(row.forward_time_s, Some(sorted[2]));
        assert!(sorted[0] > 0.0);
    }
    assert_eq!(rows[4].mode, BenchMode::DenseOracle);
    assert_eq!(rows[4].forward_time_s, None);
    assert!(summary.dip_slope.is_some() && summary.dense_slope.is_some());
    assert_eq!(summary.threads, 1);

    let tmp = tempfile::tempdir().unwrap();
    commands::bench(&cfg, tmp.path()).unwrap();
    let csv = csv_rows(&tmp.path().join("scaling.csv"));
    assert_eq!(
        csv[0],
        ["n", "n_p", "tau", "mode", "forward_time_s", "peak_bytes", "status"]
    );
    assert_eq!(csv[5][6], "skipped");
}

#[test]
fn slope_fit_recovers_power_laws() {
    let pts: Vec<(usize, f64)> = [100usize, 200, 400, 800]
        .iter()
        .map(|&n| (n, 3e-7 * (n as f64).powi(2)))
        .collect();
    assert!((loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(loglog_slope(&pts[..1]), None);
}

#[test]
fn bench_rejects_unsorted_sizes() {
    let cfg = BenchConfig {
        sizes: vec![400, 200],
        ..BenchConfig::default()
    };
    assert!(run_bench(&cfg).is_err());
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(
        &bad,
        "task = \"node-classification\"\n[data.synth]\nn = 100\n[model]\nd_s = 30\ntau = 8\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dip"))
        .args(["train", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));

    let good = tmp.path().join("good.toml");
    std::fs::write(&good, nc_config(&tmp.path().join("bundle"), 100, "")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dip"))
        .args(["gen", "--seed", "9", "--config"])
        .arg(&good)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(tmp.path().join("bundle/graph.json").is_file());
}

#[test]
fn seed_override_is_recorded_in_config_copy() {
    let tmp = tempfile::tempdir().unwrap();
    let text = nc_config(tmp.path(), 100, "");
    let overridden = Run::new(
        run(&text).cfg,
        text.clone(),
        &Overrides {
            seed: Some(11),
            ..Overrides::default()
        },
    )
    .unwrap();
    assert_eq!(overridden.cfg.training.seed, 11);
    assert_eq!(overridden.cfg.data.synth.as_ref().unwrap().seed, 11);
    let reparsed = Run::from_toml(&overridden.config_text).unwrap();
    assert_eq!(reparsed.cfg, overridden.cfg);
    assert_ne!(overridden.config_sha256, run(&text).config_sha256);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let nc = dip_cli::RunConfig::load(&dir.join("node_classification.toml")).unwrap().0;
    assert_eq!(nc.epochs(), 200);
    assert_eq!(nc.ablation, AblationFlags::FULL);
    let lp = dip_cli::RunConfig::load(&dir.join("link_prediction.toml")).unwrap().0;
    assert_eq!(lp.epochs(), 100);
    assert_eq!(lp.data.synth, nc.data.synth);
}

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dip_cli::alloc::TrackingAlloc;
use dip_cli::bench::run_bench;
use dip_cli::commands::{self, Run};
use dip_cli::config::{BenchConfig, RunConfig};
use dip_cli::data::{self, Dataset};
use dip_cli::eval::evaluate_variants;
use dip_cli::run::infer;
use dip_cli::train::{train, TrainOutcome};
use dip_core::heads;
use dip_core::metrics::{dirichlet_energy, rank_metrics};
use dip_core::model::{forward_fused, GraphInputs};
use dip_core::reference::{DenseModel, Mat};
use dip_core::{
    build_adjacency, dip_forward, gen_synthetic, AblationFlags, Modality, ModelConfig, ModelLayout, MultimodalGraph,
    Normalize, SynthConfig,
};
use dip_tensor::{finite_diff_check, ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static ALLOC: TrackingAlloc = TrackingAlloc;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn small_graph(n: usize, seed: u64) -> MultimodalGraph {
    let cfg = SynthConfig {
        n,
        blocks: 2,
        p_in: 0.3,
        p_out: 0.05,
        d_v: 4,
        d_t: 3,
        seed,
        ..SynthConfig::default()
    };
    gen_synthetic(&cfg).unwrap().0
}

fn small_config(d_s: usize, tau: usize, n_p_v: usize, n_p_t: usize, normalize: Normalize) -> ModelConfig {
    ModelConfig {
        d_v: 4,
        d_t: 3,
        d_s,
        tau,
        n_p_v,
        n_p_t,
        normalize,
        num_classes: Some(2),
    }
}

/// Initialization plus uniform noise, so biases and channel weights are
/// off their initial constants.
fn perturbed_model(cfg: ModelConfig, seed: u64) -> (ModelLayout, ParamStore) {
    let (layout, mut store) = ModelLayout::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
    }
    (layout, store)
}

fn forward(
    layout: &ModelLayout,
    store: &ParamStore,
    graph: &MultimodalGraph,
    layers: usize,
    flags: AblationFlags,
) -> (Tensor, Tensor) {
    let mut tape = Tape::<f64>::new();
    let params = layout.bind(&mut tape, store);
    let inputs = GraphInputs::new(&mut tape, graph, graph.adjacency());
    let (zv, zt) = dip_forward(&mut tape, &inputs, &params, layout.config.normalize, layers, flags).unwrap();
    (tape.value(zv).clone(), tape.value(zt).clone())
}

fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn max_dev(t: &Tensor, m: &Mat) -> f64 {
    (0..t.rows())
        .flat_map(|i| t.row(i).iter().zip(&m[i]).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

fn a1_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for case in 0..20u64 {
        let n = rng.random_range(5..=25);
        let tau = [1, 2, 4][rng.random_range(0..3)];
        let d_s = tau * rng.random_range(1..=2) * 2;
        let normalize = if case % 4 == 3 {
            Normalize::None
        } else {
            Normalize::RowSoftmax
        };
        let cfg = small_config(d_s, tau, rng.random_range(1..=4), rng.random_range(1..=4), normalize);
        let graph = small_graph(n, 500 + case);
        let (layout, mut store) = perturbed_model(cfg, 500 + case);
        if normalize == Normalize::None {
            // raw proximities sum over all nodes; keep them O(1/n)
            for m in Modality::BOTH {
                let b = layout.ids.branch(m);
                for ch in [b.gp, b.pp, b.pg, b.cross] {
                    store
                        .get_mut(ch.lambda)
                        .data_mut()
                        .iter_mut()
                        .for_each(|x| *x /= n as f64);
                }
            }
        }
        let layers = rng.random_range(0..=2);
        let flags = AblationFlags::sweep()[case as usize % 6].1;
        let (zv, zt) = forward(&layout, &store, &graph, layers, flags);
        let dense = DenseModel::load(&layout, &store);
        let (rv, rt) = dense.forward(
            &to_mat(graph.feat_v()),
            &to_mat(graph.feat_t()),
            graph.adjacency(),
            layers,
            flags,
        );
        worst = worst.max(max_dev(&zv, &rv)).max(max_dev(&zt, &rt));
    }
    outcome(worst < 1e-10, format!("max deviation {worst:.2e} over 20 instances"))
}

fn a2_gradients() -> Outcome {
    let graph = small_graph(30, 0);
    let (layout, store) = ModelLayout::init(small_config(8, 2, 3, 2, Normalize::RowSoftmax), 0).unwrap();
    let labels = graph.labels().unwrap().to_vec();
    let mask: Vec<usize> = (0..30).step_by(2).collect();
    let pos: Vec<(usize, usize)> = graph.adjacency().edges().take(20).collect();
    let neg: Vec<(usize, usize)> = pos.iter().map(|&(u, v)| (u, (v + 7) % 30)).collect();
    let loss = |tape: &mut Tape, vars: &[Var], link: bool| -> dip_tensor::Result<Var> {
        let params = layout.vars(vars);
        let inputs = GraphInputs::new(tape, &graph, graph.adjacency());
        let out = forward_fused(tape, &params, &inputs, &layout.config, 2, AblationFlags::FULL)?;
        if link {
            return Ok(heads::lp_loss(tape, out.fused, &pos, &neg)?);
        }
        let logits = heads::nc_logits(tape, out.fused, params.classifier.as_ref().expect("classifier"))?;
        Ok(heads::nc_loss(tape, logits, &labels, &mask)?)
    };
    let mut errors = Vec::new();
    for link in [true, false] {
        match finite_diff_check(&store, |t, v| loss(t, v, link), 64, 1e-5, 0) {
            Ok(r) => errors.push(r.max_rel_error),
            Err(e) => return outcome(false, format!("gradient check failed: {e}")),
        }
    }
    let worst = errors.iter().copied().fold(0.0, f64::max);
    outcome(
        worst < 1e-4,
        format!("max relative error link {:.2e}, node {:.2e}", errors[0], errors[1]),
    )
}

fn a3_permutation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut failures = 0;
    for trial in 0..10u64 {
        let graph = small_graph(50, 300 + trial);
        let (layout, store) = perturbed_model(small_config(8, 2, 3, 4, Normalize::RowSoftmax), 300 + trial);
        let layers = 1 + trial as usize % 4;
        let mut perm: Vec<usize> = (0..50).collect();
        perm.shuffle(&mut rng);
        let permuted = graph.permuted(&perm).unwrap();
        let (zv, zt) = forward(&layout, &store, &graph, layers, AblationFlags::FULL);
        let (pv, pt) = forward(&layout, &store, &permuted, layers, AblationFlags::FULL);
        if !(pv.bitwise_eq(&zv.select_rows(&perm)) && pt.bitwise_eq(&zt.select_rows(&perm))) {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{} of 10 permutations bitwise equivariant", 10 - failures),
    )
}

fn a4_scaling() -> Outcome {
    let (_, summary) = match run_bench(&BenchConfig::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("benchmark failed: {e}")),
    };
    let (Some(dip), Some(dense)) = (summary.dip_slope, summary.dense_slope) else {
        return outcome(false, "missing slope".into());
    };
    outcome(
        (0.8..=1.3).contains(&dip) && dense >= 1.7,
        format!("pathway slope {dip:.3}, dense attention slope {dense:.3}"),
    )
}

/// The default synthetic node-classification run with the given seed.
fn default_run(seed: u64) -> (RunConfig, Dataset, TrainOutcome) {
    let text = format!("task = \"node-classification\"\n[data.synth]\nseed = {seed}\n[training]\nseed = {seed}\n");
    let cfg = RunConfig::from_toml(&text).unwrap();
    let data = data::prepare(&cfg).unwrap();
    let trained = train(&cfg, &data, None, "acceptance").unwrap();
    (cfg, data, trained)
}

fn a5_energy(runs: &[(RunConfig, Dataset, TrainOutcome)]) -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for (_, data, trained) in runs {
        let energy = |flags| {
            let emb = infer(&trained.layout, &trained.best, data, 8, flags).unwrap();
            dirichlet_energy(&emb.fused, &data.adjacency)
        };
        let (full, local) = (energy(AblationFlags::FULL), energy(AblationFlags::LOCAL_ONLY));
        wins += usize::from(full > local);
        pairs.push(format!("{full:.3e}/{local:.3e}"));
    }
    outcome(
        wins >= 4,
        format!(
            "full > local-only at depth 8 in {wins}/{} seeds (full/local {})",
            runs.len(),
            pairs.join(" ")
        ),
    )
}

fn a6_cross_modal(runs: &[(RunConfig, Dataset, TrainOutcome)]) -> Outcome {
    let no_cross = AblationFlags {
        use_cross_modal: false,
        ..AblationFlags::FULL
    };
    let mut full = Vec::new();
    let mut ablated = Vec::new();
    for (cfg, data, trained) in runs {
        let variants = [("full", AblationFlags::FULL), ("no-cross-modal", no_cross)];
        let reports = evaluate_variants(cfg, data, &trained.layout, &trained.best, &variants, "acceptance").unwrap();
        let acc: Vec<f64> = reports
            .iter()
            .map(|r| r.classification.as_ref().unwrap().accuracy)
            .collect();
        full.push(acc[0]);
        ablated.push(acc[1]);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (f, a) = (mean(&full), mean(&ablated));
    outcome(
        f >= 0.85 && f - a >= 0.05,
        format!(
            "mean test accuracy full {f:.4}, without cross-modal {a:.4}, gap {:.2} points",
            100.0 * (f - a)
        ),
    )
}

fn a7_identity() -> Outcome {
    let graph = small_graph(30, 700);
    let mut checked = 0;
    for normalize in [Normalize::RowSoftmax, Normalize::None] {
        let (layout, mut store) = perturbed_model(small_config(8, 4, 3, 2, normalize), 700);
        layout.zero_update_sites(&mut store);
        let (z0v, z0t) = forward(&layout, &store, &graph, 0, AblationFlags::FULL);
        for layers in 1..=8 {
            for (name, flags) in AblationFlags::sweep() {
                let (zv, zt) = forward(&layout, &store, &graph, layers, flags);
                if !(zv.bitwise_eq(&z0v) && zt.bitwise_eq(&z0t)) {
                    return outcome(false, format!("L={layers} {name} changed the embeddings"));
                }
                checked += 1;
            }
        }
    }
    outcome(true, format!("{checked} depth/variant combinations bitwise identical"))
}

fn a8_metrics() -> Outcome {
    // scores placing the positive at ranks 1, 3 and 20 among 20 negatives
    let k = 20;
    let pos = vec![0.0; 3];
    let negs: Vec<Vec<f64>> = [1usize, 3, 20]
        .iter()
        .map(|&rank| (0..k).map(|j| if j + 1 < rank { 1.0 } else { -1.0 }).collect())
        .collect();
    let m = rank_metrics(&pos, &negs).unwrap();
    let adj = build_adjacency(&[(0, 1)], 2).unwrap();
    let z = Tensor::from_vec(2, 1, vec![0.0, 2.0]).unwrap();
    let energy = dirichlet_energy(&z, &adj);
    let pass =
        (m.mrr - 0.46111).abs() <= 1e-5 && m.hits_at_1 == 1.0 / 3.0 && m.hits_at_10 == 2.0 / 3.0 && energy == 4.0;
    outcome(
        pass,
        format!(
            "MRR {:.5}, Hits@1 {:.4}, Hits@10 {:.4}, energy {energy}",
            m.mrr, m.hits_at_1, m.hits_at_10
        ),
    )
}

fn a9_sweep() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "task = \"node-classification\"\nout_dir = \"{}\"\n[data.synth]\nn = 200\n[model]\nd_s = 16\ntau = 4\nn_p_v = 4\nn_p_t = 4\n[training]\nepochs = 5\n",
        tmp.path().display()
    );
    let run = Run::from_toml(&text).unwrap();
    commands::train(&run).unwrap();
    let reports = commands::eval(&run, None, true).unwrap();
    let names: Vec<String> = reports.iter().map(|r| r.variant.clone()).collect();
    let files = names
        .iter()
        .filter(|n| tmp.path().join(format!("report_{n}.json")).is_file())
        .count();
    let expected = [
        "full",
        "no-visual-pseudo",
        "no-textual-pseudo",
        "no-local",
        "no-global",
        "no-cross-modal",
    ];

    let data = data::prepare(&run.cfg).unwrap();
    let (layout, store, _) = dip_cli::run::load_model(&run.cfg, &data, &tmp.path().join("checkpoint.bin")).unwrap();
    let mut reinit = store.clone();
    layout.reinit_pseudo(&mut reinit, 4242);
    let no_global = AblationFlags::sweep()[4].1;
    let a = infer(&layout, &store, &data, run.cfg.model.layers, no_global).unwrap();
    let b = infer(&layout, &reinit, &data, run.cfg.model.layers, no_global).unwrap();
    let dev = a.fused.max_abs_diff(&b.fused);
    outcome(
        names == expected && files == 6 && reinit != store && dev == 0.0,
        format!(
            "{} reports ({}), {files} files, pseudo reinit deviation {dev}",
            names.len(),
            names.join(", ")
        ),
    )
}

fn report(id: &str, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    if let Some(limit) = budget {
        if elapsed > limit {
            out.pass = false;
            out.detail.push_str(&format!("; over the {}s budget", limit.as_secs()));
        }
    }
    let status = if out.pass { "PASS" } else { "FAIL" };
    println!("{id} {status} {name}: {} [{:.1}s]", out.detail, elapsed.as_secs_f64());
    out.pass
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut all = true;
    all &= report("A1", "oracle equivalence", Some(secs(10)), a1_oracle);
    all &= report("A2", "gradient integrity", Some(secs(60)), a2_gradients);
    all &= report("A3", "permutation equivariance", None, a3_permutation);
    all &= report("A4", "linear scaling", Some(secs(600)), a4_scaling);

    // five trained default runs; the first three also serve the
    // cross-modal comparison
    let mut runs = Vec::new();
    let mut train_time = [Duration::ZERO; 5];
    for (seed, t) in train_time.iter_mut().enumerate() {
        let start = Instant::now();
        runs.push(default_run(seed as u64));
        *t = start.elapsed();
    }
    let trained_5: Duration = train_time.iter().sum();
    let trained_3: Duration = train_time[..3].iter().sum();
    all &= report(
        "A5",
        "over-smoothing direction",
        Some(secs(900).saturating_sub(trained_5)),
        || a5_energy(&runs),
    );
    all &= report(
        "A6",
        "cross-modal benefit",
        Some(secs(1200).saturating_sub(trained_3)),
        || a6_cross_modal(&runs[..3]),
    );
    println!(
        "   (training: {:.1}s for five seeds, {:.1}s for the first three)",
        trained_5.as_secs_f64(),
        trained_3.as_secs_f64()
    );

    all &= report("A7", "identity preservation", None, a7_identity);
    all &= report("A8", "metric unit exactness", None, a8_metrics);
    all &= report("A9", "ablation sweep completeness", None, a9_sweep);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

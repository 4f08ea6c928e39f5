//! Forward-pass timing of the pathway model against dense all-pairs
//! attention, in 32-bit arithmetic on a fixed-size thread pool.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use dip_core::model::{forward_fused, GraphInputs};
use dip_core::{gen_synthetic, AblationFlags, ModelConfig, ModelLayout, MultimodalGraph, Normalize, SynthConfig};
use dip_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alloc;
use crate::config::BenchConfig;
use crate::error::{CliError, Result};

pub const SCALING_FILE: &str = "scaling.csv";
pub const SUMMARY_FILE: &str = "bench_summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    Dip,
    DenseOracle,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Dip => "dip",
            BenchMode::DenseOracle => "dense-oracle",
        }
    }
}

/// One benchmark row. Skipped rows have no timing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub n_p: usize,
    pub tau: usize,
    pub mode: BenchMode,
    /// Median over the timed trials.
    pub forward_time_s: Option<f64>,
    pub peak_bytes: Option<u64>,
    /// Every timed trial, warmup excluded.
    #[serde(skip)]
    pub trials: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub dip_slope: Option<f64>,
    pub dense_slope: Option<f64>,
    pub threads: usize,
    pub repeats: usize,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `ln t` against `ln n`.
pub fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, t)| t.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn bench_graph(cfg: &BenchConfig, n: usize) -> Result<MultimodalGraph> {
    // 80% of the expected degree inside the block, 20% across
    let blocks = 4;
    let block = n as f64 / blocks as f64;
    let synth = SynthConfig {
        n,
        blocks,
        p_in: (0.8 * cfg.avg_degree / (block - 1.0)).min(1.0),
        p_out: (0.2 * cfg.avg_degree / (n as f64 - block)).min(1.0),
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    Ok(gen_synthetic(&synth)?.0)
}

/// Runs `repeats + 1` trials and drops the first.
fn time_trials(repeats: usize, mut trial: impl FnMut() -> Result<()>) -> Result<(Vec<f64>, u64)> {
    let mut times = Vec::with_capacity(repeats);
    let mut peak = 0;
    for i in 0..=repeats {
        alloc::reset_peak();
        let start = Instant::now();
        trial()?;
        let elapsed = start.elapsed().as_secs_f64();
        if i > 0 {
            times.push(elapsed);
            peak = peak.max(alloc::peak_bytes() as u64);
        }
    }
    Ok((times, peak))
}

fn dip_row(cfg: &BenchConfig, n: usize) -> Result<ScalingRow> {
    let graph = bench_graph(cfg, n)?;
    let model = ModelConfig {
        d_v: graph.feat_v().cols(),
        d_t: graph.feat_t().cols(),
        d_s: cfg.d_s,
        tau: cfg.tau,
        n_p_v: cfg.n_p,
        n_p_t: cfg.n_p,
        normalize: Normalize::RowSoftmax,
        num_classes: None,
    };
    let (layout, store) = ModelLayout::init(model, cfg.seed)?;
    let store = store.cast::<f32>();
    let (trials, peak) = time_trials(cfg.repeats, || {
        let mut tape = Tape::<f32>::new();
        let params = layout.bind(&mut tape, &store);
        let inputs = GraphInputs::new(&mut tape, &graph, graph.adjacency());
        forward_fused(
            &mut tape,
            &params,
            &inputs,
            &layout.config,
            cfg.layers,
            AblationFlags::FULL,
        )?;
        Ok(())
    })?;
    Ok(ScalingRow {
        n,
        n_p: cfg.n_p,
        tau: cfg.tau,
        mode: BenchMode::Dip,
        forward_time_s: Some(median(&trials)),
        peak_bytes: Some(peak),
        trials,
    })
}

fn dense_row(cfg: &BenchConfig, n: usize) -> Result<ScalingRow> {
    let mut row = ScalingRow {
        n,
        n_p: cfg.n_p,
        tau: cfg.tau,
        mode: BenchMode::DenseOracle,
        forward_time_s: None,
        peak_bytes: None,
        trials: Vec::new(),
    };
    // logits and attention weights, each n x n in 32-bit
    let need = 2 * (n as u64) * (n as u64) * 4;
    if need > cfg.dense_max_bytes {
        return Ok(row);
    }
    let graph = bench_graph(cfg, n)?;
    let x: Tensor<f32> = graph.feat_v().cast();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = (6.0 / (x.cols() + cfg.d_s) as f64).sqrt();
    let w = Tensor::from_vec(
        x.cols(),
        cfg.d_s,
        (0..x.cols() * cfg.d_s)
            .map(|_| rng.random_range(-bound..bound) as f32)
            .collect(),
    )?;
    let (trials, peak) = time_trials(cfg.repeats, || {
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let h = tape.matmul(xv, wv)?;
        let scores = tape.matmul_nt(h, h)?;
        let attn = tape.softmax_rows(scores)?;
        tape.matmul(attn, h)?;
        Ok(())
    })?;
    row.forward_time_s = Some(median(&trials));
    row.peak_bytes = Some(peak);
    row.trials = trials;
    Ok(row)
}

/// Times every configured size for both modes on a dedicated pool of
/// `cfg.threads` threads.
pub fn run_bench(cfg: &BenchConfig) -> Result<(Vec<ScalingRow>, BenchSummary)> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut rows = Vec::new();
        for &n in &cfg.sizes {
            rows.push(dip_row(cfg, n)?);
        }
        for &n in &cfg.dense_sizes {
            rows.push(dense_row(cfg, n)?);
        }
        let slope = |mode| {
            let pts: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| r.mode == mode)
                .filter_map(|r| r.forward_time_s.map(|t| (r.n, t)))
                .collect();
            loglog_slope(&pts)
        };
        let summary = BenchSummary {
            dip_slope: slope(BenchMode::Dip),
            dense_slope: slope(BenchMode::DenseOracle),
            threads: cfg.threads,
            repeats: cfg.repeats,
        };
        Ok((rows, summary))
    })
}

pub fn render_rows(rows: &[ScalingRow]) -> String {
    let mut out = String::from("n,n_p,tau,mode,forward_time_s,peak_bytes,status\n");
    for r in rows {
        let (time, peak, status) = match (r.forward_time_s, r.peak_bytes) {
            (Some(t), Some(p)) => (format!("{t:.9e}"), p.to_string(), "ok"),
            _ => (String::new(), String::new(), "skipped"),
        };
        writeln!(
            out,
            "{},{},{},{},{time},{peak},{status}",
            r.n,
            r.n_p,
            r.tau,
            r.mode.name()
        )
        .expect("string write");
    }
    out
}

pub fn write_bench(dir: &Path, rows: &[ScalingRow], summary: &BenchSummary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(SCALING_FILE);
    std::fs::write(&path, render_rows(rows)).map_err(|e| CliError::io(path, e))?;
    let path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_vec_pretty(summary).expect("summary serializes");
    std::fs::write(&path, json).map_err(|e| CliError::io(path, e))
}

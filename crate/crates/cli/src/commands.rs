//! The workflows behind each `dip` subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dip_core::metrics::{dirichlet_energy, MetricsReport};
use dip_core::model::GraphInputs;
use dip_core::pathways::pathway_heatmap;
use dip_core::{AblationFlags, Modality};
use dip_tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{run_bench, write_bench, BenchSummary, ScalingRow};
use crate::config::{sha256_hex, BenchConfig, RunConfig};
use crate::data::{self, Dataset};
use crate::error::{CliError, Result};
use crate::eval::{evaluate_variants, write_report};
use crate::run::{infer, load_model};
use crate::train::{self, TrainOutcome, CHECKPOINT_FILE};

pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const DIAGNOSE_DEPTHS: [usize; 4] = [1, 2, 4, 8];
pub const HEATMAP_NODES: usize = 64;

/// Command-line values that replace config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// A validated config together with the exact text it is persisted as.
#[derive(Clone, Debug)]
pub struct Run {
    pub cfg: RunConfig,
    pub config_text: String,
    pub config_sha256: String,
}

impl Run {
    /// Without overrides the file text is kept verbatim; otherwise the
    /// resolved config is re-serialized.
    pub fn new(mut cfg: RunConfig, text: String, overrides: &Overrides) -> Result<Self> {
        let before = cfg.clone();
        if let Some(dir) = &overrides.data {
            cfg.data.bundle = Some(dir.clone());
            cfg.data.synth = None;
        }
        if let Some(out) = &overrides.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = overrides.seed {
            cfg.training.seed = seed;
            cfg.bench.seed = seed;
            if let Some(s) = cfg.data.synth.as_mut() {
                s.seed = seed;
            }
        }
        if let Some(k) = overrides.threads {
            cfg.bench.threads = k;
        }
        cfg.validate()?;
        let config_text = if cfg == before {
            text
        } else {
            toml::to_string(&cfg).map_err(|e| CliError::Config(e.to_string()))?
        };
        Ok(Self {
            config_sha256: sha256_hex(config_text.as_bytes()),
            cfg,
            config_text,
        })
    }

    pub fn from_file(path: &Path, overrides: &Overrides) -> Result<Self> {
        let (cfg, text) = RunConfig::load(path)?;
        Self::new(cfg, text, overrides)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::new(RunConfig::from_toml(text)?, text.to_string(), &Overrides::default())
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn prepare_out_dir(&self) -> Result<()> {
        let dir = self.out_dir();
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, &self.config_text).map_err(|e| CliError::io(path, e))
    }

    fn checkpoint(&self, explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.out_dir().join(CHECKPOINT_FILE))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes the configured synthetic graph and its split as a bundle in the
/// output directory.
pub fn gen(run: &Run) -> Result<PathBuf> {
    if run.cfg.data.synth.is_none() {
        return Err(CliError::Config("gen needs a `data.synth` section".into()));
    }
    let data = data::prepare(&run.cfg)?;
    let dir = run.out_dir();
    data::write_dataset(dir, &data)?;
    Ok(dir.to_path_buf())
}

pub fn train(run: &Run) -> Result<TrainOutcome> {
    run.prepare_out_dir()?;
    let data = data::prepare(&run.cfg)?;
    train::train(&run.cfg, &data, Some(run.out_dir()), &run.config_sha256)
}

fn variant_name(flags: AblationFlags) -> &'static str {
    AblationFlags::sweep()
        .into_iter()
        .find(|(_, f)| *f == flags)
        .map(|(name, _)| name)
        .unwrap_or("configured")
}

/// Test metrics for the configured flags, or for the six sweep variants
/// when `ablate` is set (one `report_<variant>.json` each).
pub fn eval(run: &Run, checkpoint: Option<&Path>, ablate: bool) -> Result<Vec<MetricsReport>> {
    run.prepare_out_dir()?;
    let data = data::prepare(&run.cfg)?;
    let (layout, store, _) = load_model(&run.cfg, &data, &run.checkpoint(checkpoint))?;
    let variants: Vec<(&str, AblationFlags)> = if ablate {
        AblationFlags::sweep().to_vec()
    } else {
        vec![(variant_name(run.cfg.ablation), run.cfg.ablation)]
    };
    let reports = evaluate_variants(&run.cfg, &data, &layout, &store, &variants, &run.config_sha256)?;
    for report in &reports {
        let file = if ablate {
            format!("report_{}.json", report.variant)
        } else {
            REPORT_FILE.to_string()
        };
        write_report(&run.out_dir().join(file), report)?;
    }
    Ok(reports)
}

/// Dirichlet energy of the fused embedding per depth for the full model
/// and the local-only ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnosis {
    pub full: Vec<(usize, f64)>,
    pub local_only: Vec<(usize, f64)>,
    /// `n_p x 64` raw proximities per modality; `None` when that
    /// modality's global pathway is disabled.
    pub heatmaps: [Option<dip_tensor::Tensor>; 2],
    pub nodes: Vec<usize>,
}

pub fn dirichlet_by_depth(
    run: &Run,
    data: &Dataset,
    checkpoint: Option<&Path>,
    flags: AblationFlags,
) -> Result<Vec<(usize, f64)>> {
    let (layout, store, _) = load_model(&run.cfg, data, &run.checkpoint(checkpoint))?;
    DIAGNOSE_DEPTHS
        .iter()
        .map(|&depth| {
            let emb = infer(&layout, &store, data, depth, flags)?;
            Ok((depth, dirichlet_energy(&emb.fused, &data.adjacency)))
        })
        .collect()
}

fn render_energy(rows: &[(usize, f64)], seed: u64) -> String {
    let mut out = String::from("depth,energy,seed\n");
    for (depth, energy) in rows {
        writeln!(out, "{depth},{energy:.17e},{seed}").expect("string write");
    }
    out
}

fn render_heatmap(nodes: &[usize], heatmap: Option<&dip_tensor::Tensor>) -> String {
    let header: Vec<String> = nodes.iter().map(|i| format!("node_{i}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    if let Some(w) = heatmap {
        for r in 0..w.rows() {
            let row: Vec<String> = w.row(r).iter().map(|x| format!("{x:.17e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

/// Writes `dirichlet_full.csv`, `dirichlet_local_only.csv` and one
/// `heatmap_<modality>.csv` per modality.
pub fn diagnose(run: &Run, checkpoint: Option<&Path>) -> Result<Diagnosis> {
    run.prepare_out_dir()?;
    let cfg = &run.cfg;
    let data = data::prepare(cfg)?;
    let full = dirichlet_by_depth(run, &data, checkpoint, AblationFlags::FULL)?;
    let local_only = dirichlet_by_depth(run, &data, checkpoint, AblationFlags::LOCAL_ONLY)?;
    let seed = cfg.training.seed;
    write_file(&run.out_dir().join("dirichlet_full.csv"), &render_energy(&full, seed))?;
    write_file(
        &run.out_dir().join("dirichlet_local_only.csv"),
        &render_energy(&local_only, seed),
    )?;

    let n = data.graph.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = rand::seq::index::sample(&mut rng, n, HEATMAP_NODES.min(n)).into_vec();
    let (layout, store, _) = load_model(cfg, &data, &run.checkpoint(checkpoint))?;
    let mut tape = Tape::new();
    let params = layout.bind(&mut tape, &store);
    let inputs = GraphInputs::new(&mut tape, &data.graph, &data.adjacency);
    let mut heatmaps = [None, None];
    for (slot, m) in heatmaps.iter_mut().zip(Modality::BOTH) {
        if cfg.ablation.global_for(m) {
            *slot = Some(pathway_heatmap(&mut tape, &inputs, &params, m, &nodes)?);
        }
        let path = run.out_dir().join(format!("heatmap_{}.csv", m.name()));
        write_file(&path, &render_heatmap(&nodes, slot.as_ref()))?;
    }
    Ok(Diagnosis {
        full,
        local_only,
        heatmaps,
        nodes,
    })
}

/// Runs the scaling benchmark and writes its table and slopes.
pub fn bench(cfg: &BenchConfig, out_dir: &Path) -> Result<(Vec<ScalingRow>, BenchSummary)> {
    let (rows, summary) = run_bench(cfg)?;
    write_bench(out_dir, &rows, &summary)?;
    Ok((rows, summary))
}

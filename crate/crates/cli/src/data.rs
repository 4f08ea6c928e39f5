//! Loading or generating the graph, its split and the message-passing
//! adjacency for a run.

use std::path::Path;

use dip_core::graph::Task;
use dip_core::{gen_synthetic, load_bundle, split_edges, split_nodes, write_bundle, Csr, MultimodalGraph, SplitSet};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const SPLITS_FILE: &str = "splits.json";
pub const EDGE_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);
pub const NODE_RATIOS: (f64, f64, f64) = (0.6, 0.1, 0.3);

#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: MultimodalGraph,
    pub split: SplitSet,
    /// Edges messages may travel along; held-out link edges are removed.
    pub adjacency: Csr,
}

impl Dataset {
    pub fn num_classes(&self) -> Option<usize> {
        self.graph.num_classes()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.graph
            .labels()
            .ok_or_else(|| CliError::Config("node classification needs a labelled graph".into()))
    }
}

fn for_task(graph: MultimodalGraph, task: Task, node_split: Option<SplitSet>, seed: u64) -> Result<Dataset> {
    match task {
        Task::LinkPrediction => {
            let (split, adjacency) = split_edges(&graph, EDGE_RATIOS, seed)?;
            Ok(Dataset {
                graph,
                split,
                adjacency,
            })
        }
        Task::NodeClassification => {
            let split = match node_split {
                Some(s) => s,
                None => split_nodes(graph.n(), NODE_RATIOS, seed)?,
            };
            Ok(Dataset {
                adjacency: graph.adjacency().clone(),
                graph,
                split,
            })
        }
    }
}

/// Builds the dataset from the configured source. A bundle's own
/// `splits.json` is used when it matches the task.
pub fn prepare(cfg: &RunConfig) -> Result<Dataset> {
    let data = match (&cfg.data.bundle, &cfg.data.synth) {
        (Some(dir), _) => {
            let graph = load_bundle(dir)?;
            match read_splits(dir)? {
                Some(split) if split.task() == cfg.task => from_split(graph, split)?,
                _ => for_task(graph, cfg.task, None, cfg.training.seed)?,
            }
        }
        (None, Some(synth)) => {
            let (graph, node_split) = gen_synthetic(synth)?;
            for_task(graph, cfg.task, Some(node_split), synth.seed)?
        }
        (None, None) => return Err(CliError::Config("no data source".into())),
    };
    if cfg.task == Task::NodeClassification {
        data.labels()?;
    }
    Ok(data)
}

fn from_split(graph: MultimodalGraph, split: SplitSet) -> Result<Dataset> {
    let adjacency = match &split {
        SplitSet::LinkPrediction { train, .. } => dip_core::build_adjacency(train, graph.n())?,
        SplitSet::NodeClassification { .. } => graph.adjacency().clone(),
    };
    Ok(Dataset {
        graph,
        split,
        adjacency,
    })
}

fn read_splits(dir: &Path) -> Result<Option<SplitSet>> {
    let path = dir.join(SPLITS_FILE);
    match std::fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CliError::io(path, e)),
    }
}

/// Writes the graph bundle plus the split for the configured task.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    write_bundle(dir, &data.graph)?;
    let path = dir.join(SPLITS_FILE);
    let json = serde_json::to_vec_pretty(&data.split).expect("splits serialize");
    std::fs::write(&path, json).map_err(|e| CliError::io(path, e))
}

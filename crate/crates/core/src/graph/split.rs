use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_adjacency, Csr, MultimodalGraph};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    LinkPrediction,
    NodeClassification,
}

/// Disjoint train/valid/test partitions, of edges or of nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum SplitSet {
    LinkPrediction {
        train: Vec<(usize, usize)>,
        valid: Vec<(usize, usize)>,
        test: Vec<(usize, usize)>,
        seed: u64,
    },
    NodeClassification {
        train: Vec<usize>,
        valid: Vec<usize>,
        test: Vec<usize>,
        seed: u64,
    },
}

impl SplitSet {
    pub fn task(&self) -> Task {
        match self {
            SplitSet::LinkPrediction { .. } => Task::LinkPrediction,
            SplitSet::NodeClassification { .. } => Task::NodeClassification,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            SplitSet::LinkPrediction { seed, .. } | SplitSet::NodeClassification { seed, .. } => *seed,
        }
    }
}

fn partition_counts(m: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidConfig(format!(
            "split ratios ({a}, {b}, {c}) must be in [0, 1] and sum to 1"
        )));
    }
    let valid = ((b * m as f64).round() as usize).min(m);
    let test = ((c * m as f64).round() as usize).min(m - valid);
    Ok((m - valid - test, valid, test))
}

/// Shuffles the undirected edges and partitions them. The returned
/// adjacency holds the training edges only.
pub fn split_edges(graph: &MultimodalGraph, ratios: (f64, f64, f64), seed: u64) -> Result<(SplitSet, Csr)> {
    let mut edges: Vec<(usize, usize)> = graph.adjacency().edges().collect();
    let (n_train, n_valid, _) = partition_counts(edges.len(), ratios)?;
    edges.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = edges.split_off(n_train + n_valid);
    let valid = edges.split_off(n_train);
    let train = edges;
    let adjacency = build_adjacency(&train, graph.n())?;
    Ok((
        SplitSet::LinkPrediction {
            train,
            valid,
            test,
            seed,
        },
        adjacency,
    ))
}

/// Shuffles node indices and partitions them.
pub fn split_nodes(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitSet> {
    let (n_train, n_valid, _) = partition_counts(n, ratios)?;
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = nodes.split_off(n_train + n_valid);
    let valid = nodes.split_off(n_train);
    Ok(SplitSet::NodeClassification {
        train: nodes,
        valid,
        test,
        seed,
    })
}

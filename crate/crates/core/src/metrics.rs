//! Ranking and classification metrics, and the Dirichlet-energy diagnostic.

use serde::{Deserialize, Serialize};

use dip_tensor::{Real, Tensor};

use crate::error::{CoreError, Result};
use crate::graph::Csr;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub mrr: f64,
    #[serde(rename = "hits@1")]
    pub hits_at_1: f64,
    #[serde(rename = "hits@10")]
    pub hits_at_10: f64,
}

/// Rank of a positive among its negatives; ties count half.
pub fn rank_of(pos: f64, negs: &[f64]) -> f64 {
    let above = negs.iter().filter(|&&s| s > pos).count() as f64;
    let tied = negs.iter().filter(|&&s| s == pos).count() as f64;
    1.0 + above + tied / 2.0
}

/// MRR and Hits@{1,10} over queries, each a positive score and its
/// negatives. Every query must carry the same nonzero number of negatives.
pub fn rank_metrics(pos: &[f64], negs: &[Vec<f64>]) -> Result<RankMetrics> {
    if pos.is_empty() || pos.len() != negs.len() {
        return Err(CoreError::InvalidConfig(format!(
            "{} positives for {} negative lists",
            pos.len(),
            negs.len()
        )));
    }
    let k = negs[0].len();
    if k == 0 || negs.iter().any(|n| n.len() != k) {
        return Err(CoreError::InvalidConfig(
            "every query needs the same nonzero number of negatives".into(),
        ));
    }
    let ranks: Vec<f64> = pos.iter().zip(negs).map(|(&p, n)| rank_of(p, n)).collect();
    Ok(metrics_from_ranks(&ranks))
}

pub fn metrics_from_ranks(ranks: &[f64]) -> RankMetrics {
    let q = ranks.len() as f64;
    RankMetrics {
        mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / q,
        hits_at_1: ranks.iter().filter(|&&r| r <= 1.0).count() as f64 / q,
        hits_at_10: ranks.iter().filter(|&&r| r <= 10.0).count() as f64 / q,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro-F1 over the nodes in `mask`. Classes that appear in
/// neither predictions nor labels contribute an F1 of 0.
pub fn classification_metrics(
    preds: &[usize],
    labels: &[usize],
    mask: &[usize],
    num_classes: usize,
) -> Result<ClassMetrics> {
    if mask.is_empty() {
        return Err(CoreError::InvalidConfig(
            "classification metrics over an empty mask".into(),
        ));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    let mut correct = 0usize;
    for &i in mask {
        let (p, y) = (preds[i], labels[i]);
        if p >= num_classes || y >= num_classes {
            return Err(CoreError::IndexOutOfRange {
                index: p.max(y),
                n: num_classes,
            });
        }
        if p == y {
            correct += 1;
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fneg[y] += 1;
        }
    }
    let f1_sum: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(ClassMetrics {
        accuracy: correct as f64 / mask.len() as f64,
        macro_f1: f1_sum / num_classes as f64,
    })
}

/// Mean squared embedding difference over undirected edges; 0 without edges.
pub fn dirichlet_energy<T: Real>(z: &Tensor<T>, adjacency: &Csr) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, j) in adjacency.edges() {
        total += z
            .row(i)
            .iter()
            .zip(z.row(j))
            .map(|(a, b)| {
                let d = a.to_f64() - b.to_f64();
                d * d
            })
            .sum::<f64>();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Evaluation output of one model variant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub link: Option<RankMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classification: Option<ClassMetrics>,
    #[serde(default)]
    pub dirichlet_by_depth: Vec<(usize, f64)>,
    pub wall_time_s: f64,
    pub peak_bytes: u64,
    /// sha256 of the resolved run config.
    pub config_sha256: String,
}

//! Test-set evaluation and the ablation sweep.

use std::path::Path;
use std::time::Instant;

use dip_core::heads::argmax_rows;
use dip_core::metrics::{classification_metrics, rank_metrics, ClassMetrics, MetricsReport, RankMetrics};
use dip_core::{sample_negatives, AblationFlags, ModelLayout, SplitSet};
use dip_tensor::{ParamStore, Tensor};

use crate::alloc;
use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{CliError, Result};
use crate::run::infer;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Frozen ranking pool: `k` negatives per positive, avoiding every known
/// edge of the full graph.
pub fn negative_pool(data: &Dataset, positives: &[(usize, usize)], cfg: &RunConfig) -> Result<Vec<Vec<usize>>> {
    Ok(sample_negatives(
        data.graph.adjacency(),
        positives,
        cfg.eval.negatives,
        cfg.eval.negative_seed,
    )?)
}

/// Ranks each positive pair against its pool by raw inner product, which
/// orders pairs exactly as the sigmoid link score does.
pub fn link_metrics(z: &Tensor, positives: &[(usize, usize)], pool: &[Vec<usize>]) -> Result<RankMetrics> {
    let pos: Vec<f64> = positives.iter().map(|&(u, v)| dot(z.row(u), z.row(v))).collect();
    let negs: Vec<Vec<f64>> = positives
        .iter()
        .zip(pool)
        .map(|(&(u, _), ws)| ws.iter().map(|&w| dot(z.row(u), z.row(w))).collect())
        .collect();
    Ok(rank_metrics(&pos, &negs)?)
}

pub fn node_metrics(logits: &Tensor, labels: &[usize], mask: &[usize], num_classes: usize) -> Result<ClassMetrics> {
    Ok(classification_metrics(&argmax_rows(logits), labels, mask, num_classes)?)
}

/// Test metrics for every requested variant, in order. The ranking pool is
/// drawn once and shared.
pub fn evaluate_variants(
    cfg: &RunConfig,
    data: &Dataset,
    layout: &ModelLayout,
    store: &ParamStore,
    variants: &[(&str, AblationFlags)],
    config_sha256: &str,
) -> Result<Vec<MetricsReport>> {
    let pool = match &data.split {
        SplitSet::LinkPrediction { test, .. } => Some(negative_pool(data, test, cfg)?),
        SplitSet::NodeClassification { .. } => None,
    };
    let mut reports = Vec::with_capacity(variants.len());
    for &(name, flags) in variants {
        alloc::reset_peak();
        let start = Instant::now();
        let emb = infer(layout, store, data, cfg.model.layers, flags)?;
        let mut report = MetricsReport {
            variant: name.to_string(),
            config_sha256: config_sha256.to_string(),
            ..MetricsReport::default()
        };
        match &data.split {
            SplitSet::LinkPrediction { test, .. } => {
                report.link = Some(link_metrics(
                    &emb.fused,
                    test,
                    pool.as_ref().expect("pool for link task"),
                )?);
            }
            SplitSet::NodeClassification { test, .. } => {
                let logits = emb
                    .logits
                    .as_ref()
                    .ok_or_else(|| CliError::Config("checkpoint has no classifier".into()))?;
                let classes = data.num_classes().unwrap_or(logits.cols());
                report.classification = Some(node_metrics(logits, data.labels()?, test, classes)?);
            }
        }
        report.wall_time_s = start.elapsed().as_secs_f64();
        report.peak_bytes = alloc::peak_bytes() as u64;
        reports.push(report);
    }
    Ok(reports)
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    let json = serde_json::to_vec_pretty(report).expect("report serializes");
    std::fs::write(path, json).map_err(|e| CliError::io(path, e))
}

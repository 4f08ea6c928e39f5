//! Full-graph training with Adam and best-validation checkpointing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dip_core::heads;
use dip_core::model::{forward_fused, GraphInputs};
use dip_core::{sample_negatives, CoreError, ModelLayout, SplitSet};
use dip_tensor::{save_checkpoint, AdamConfig, AdamState, ParamStore, Tape, TensorError};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{CliError, Result};
use crate::eval::{link_metrics, negative_pool, node_metrics};
use crate::run::{new_model, CheckpointMeta};

pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub layout: ModelLayout,
    /// Parameters at the best validation epoch.
    pub best: ParamStore,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub log: Vec<LogRow>,
    pub checkpoint: Option<PathBuf>,
}

fn diverged(epoch: usize) -> impl Fn(CoreError) -> CliError {
    move |e| match e {
        CoreError::NumericalAbort { source, step } => CliError::Diverged {
            epoch,
            reason: format!("step {step}: {source}"),
        },
        CoreError::Tensor(t @ TensorError::NonFinite { .. }) => CliError::Diverged {
            epoch,
            reason: t.to_string(),
        },
        other => other.into(),
    }
}

pub fn render_log(rows: &[LogRow]) -> String {
    let mut out = String::from("epoch,train_loss,valid_metric\n");
    for r in rows {
        let valid = r.valid_metric.map(|v| format!("{v:.17e}")).unwrap_or_default();
        writeln!(out, "{},{:.17e},{valid}", r.epoch, r.train_loss).expect("string write");
    }
    out
}

/// Trains from a fresh initialization. Each epoch evaluates the loss and,
/// every `eval_every` epochs, the validation metric (accuracy or MRR) at
/// the current parameters before taking one Adam step. When `out_dir` is
/// given, the log and the best checkpoint are written there.
pub fn train(cfg: &RunConfig, data: &Dataset, out_dir: Option<&Path>, config_sha256: &str) -> Result<TrainOutcome> {
    let (layout, mut store) = new_model(cfg, data)?;
    let mut adam = AdamState::new(
        &store,
        AdamConfig {
            lr: cfg.training.lr,
            ..AdamConfig::default()
        },
    );
    let valid_pool = match &data.split {
        SplitSet::LinkPrediction { valid, .. } if !valid.is_empty() => Some(negative_pool(data, valid, cfg)?),
        _ => None,
    };
    let labels = match &data.split {
        SplitSet::NodeClassification { .. } => Some(data.labels()?),
        SplitSet::LinkPrediction { .. } => None,
    };

    let has_valid = match &data.split {
        SplitSet::LinkPrediction { valid, .. } => !valid.is_empty(),
        SplitSet::NodeClassification { valid, .. } => !valid.is_empty(),
    };
    let mut best = store.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::new();
    let checkpoint = out_dir.map(|d| d.join(CHECKPOINT_FILE));

    for epoch in 0..cfg.epochs() {
        let mut tape = Tape::new();
        let params = layout.bind(&mut tape, &store);
        let inputs = GraphInputs::new(&mut tape, &data.graph, &data.adjacency);
        let out = forward_fused(
            &mut tape,
            &params,
            &inputs,
            &layout.config,
            cfg.model.layers,
            cfg.ablation,
        )
        .map_err(diverged(epoch))?;
        let evaluate = epoch % cfg.training.eval_every == 0;
        let (loss, valid_metric) = match &data.split {
            SplitSet::NodeClassification { train, valid, .. } => {
                let labels = labels.expect("labels checked");
                let cls = params.classifier.as_ref().expect("classifier for node task");
                let logits = heads::nc_logits(&mut tape, out.fused, cls).map_err(diverged(epoch))?;
                let loss = heads::nc_loss(&mut tape, logits, labels, train).map_err(diverged(epoch))?;
                let metric = match (evaluate, valid.is_empty()) {
                    (true, false) => {
                        let classes = data.num_classes().expect("labelled graph");
                        Some(node_metrics(tape.value(logits), labels, valid, classes)?.accuracy)
                    }
                    _ => None,
                };
                (loss, metric)
            }
            SplitSet::LinkPrediction { train, valid, .. } => {
                let negs = sample_negatives(&data.adjacency, train, 1, cfg.training.seed.wrapping_add(epoch as u64))?;
                let neg_pairs: Vec<(usize, usize)> = train.iter().zip(&negs).map(|(&(u, _), w)| (u, w[0])).collect();
                let loss = heads::lp_loss(&mut tape, out.fused, train, &neg_pairs).map_err(diverged(epoch))?;
                let metric = match (evaluate, &valid_pool) {
                    (true, Some(pool)) => Some(link_metrics(tape.value(out.fused), valid, pool)?.mrr),
                    _ => None,
                };
                (loss, metric)
            }
        };
        let train_loss = tape.value(loss).item()?;
        if !train_loss.is_finite() {
            return Err(CliError::Diverged {
                epoch,
                reason: "non-finite loss".into(),
            });
        }
        log.push(LogRow {
            epoch,
            train_loss,
            valid_metric,
        });

        // Without a validation set the latest parameters are kept.
        let improved = match (has_valid, valid_metric) {
            (false, _) => true,
            (true, Some(m)) => m > best_metric,
            (true, None) => false,
        };
        if improved {
            best_metric = valid_metric.unwrap_or(best_metric);
            best_epoch = epoch;
            best = store.clone();
            if let Some(path) = &checkpoint {
                let meta = CheckpointMeta {
                    config_sha256: config_sha256.to_string(),
                    epoch,
                    valid_metric,
                };
                save_checkpoint(path, &best, serde_json::to_value(meta).expect("meta serializes"))?;
            }
        } else if has_valid && epoch - best_epoch >= cfg.training.patience {
            break;
        }

        let grads = tape.backward(loss).map_err(|e| diverged(epoch)(e.into()))?;
        adam.step(&mut store, grads.as_slice())?;
    }

    if let Some(dir) = out_dir {
        let path = dir.join(LOG_FILE);
        std::fs::write(&path, render_log(&log)).map_err(|e| CliError::io(path, e))?;
    }
    Ok(TrainOutcome {
        layout,
        best,
        best_epoch,
        best_metric,
        log,
        checkpoint,
    })
}

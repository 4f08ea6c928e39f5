//! Forward passes over a whole dataset and checkpoint handling.

use std::path::Path;

use dip_core::heads;
use dip_core::model::{forward_fused, GraphInputs};
use dip_core::{AblationFlags, ModelLayout};
use dip_tensor::{load_checkpoint, ParamStore, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{CliError, Result};

/// Fused node embeddings and, for classification models, class logits.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub fused: Tensor,
    pub logits: Option<Tensor>,
}

pub fn infer(
    layout: &ModelLayout,
    store: &ParamStore,
    data: &Dataset,
    layers: usize,
    flags: AblationFlags,
) -> Result<Embeddings> {
    let mut tape = Tape::new();
    let params = layout.bind(&mut tape, store);
    let inputs = GraphInputs::new(&mut tape, &data.graph, &data.adjacency);
    let out = forward_fused(&mut tape, &params, &inputs, &layout.config, layers, flags)?;
    let logits = match &params.classifier {
        Some(cls) => {
            let l = heads::nc_logits(&mut tape, out.fused, cls)?;
            Some(tape.value(l).clone())
        }
        None => None,
    };
    Ok(Embeddings {
        fused: tape.value(out.fused).clone(),
        logits,
    })
}

pub fn new_model(cfg: &RunConfig, data: &Dataset) -> Result<(ModelLayout, ParamStore)> {
    let model = cfg.model_config(
        data.graph.feat_v().cols(),
        data.graph.feat_t().cols(),
        data.num_classes(),
    );
    Ok(ModelLayout::init(model, cfg.training.seed)?)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_sha256: String,
    pub epoch: usize,
    pub valid_metric: Option<f64>,
}

/// Loads a checkpoint and checks it against the model the config
/// describes for this dataset.
pub fn load_model(cfg: &RunConfig, data: &Dataset, path: &Path) -> Result<(ModelLayout, ParamStore, CheckpointMeta)> {
    let (store, header) = load_checkpoint(path)?;
    let model = cfg.model_config(
        data.graph.feat_v().cols(),
        data.graph.feat_t().cols(),
        data.num_classes(),
    );
    let layout = ModelLayout::for_store(model, &store)?;
    let meta =
        serde_json::from_value(header.meta).map_err(|e| CliError::Config(format!("checkpoint metadata: {e}")))?;
    Ok((layout, store, meta))
}

//! Multimodal graph learning with dynamic pathways.
//!
//! Graph nodes carry a visual and a textual feature row. Each modality is
//! embedded into a shared state space where learnable pseudo nodes relay
//! messages across the whole graph; pseudo nodes of the two modalities
//! exchange information with each other before redistributing it to graph
//! nodes. All edge weights on these pathways are computed from a learned
//! multi-channel proximity, so the parameter count does not grow with the
//! graph.

mod error;
pub mod graph;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod pathways;
pub mod proximity;
pub mod reference;

pub use error::{CoreError, Result};
pub use graph::{
    build_adjacency, gen_synthetic, load_bundle, sample_negatives, split_edges, split_nodes, write_bundle, Csr,
    MultimodalGraph, SplitSet, SynthConfig,
};
pub use model::{Modality, ModelConfig, ModelLayout, Normalize};
pub use pathways::{dip_forward, AblationFlags};

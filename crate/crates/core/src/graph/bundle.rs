//! On-disk graph bundle: a `graph.json` manifest next to little-endian
//! binary arrays (`u32` edge pairs, row-major `f32` features, `u32` labels).

use std::fs;
use std::path::Path;

use dip_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{build_adjacency, MultimodalGraph};
use crate::error::{CoreError, Result};

pub const MANIFEST: &str = "graph.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub n: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub edge_file: String,
    pub feat_v_file: String,
    pub feat_t_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    /// Drop self-loops instead of rejecting the bundle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allow_drop: Option<bool>,
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| CoreError::io(path, e))
}

fn read_u32s(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn read_features(dir: &Path, name: &str, n: usize, d: usize) -> Result<Tensor> {
    let bytes = read(dir, name)?;
    if bytes.len() != n * d * 4 {
        return Err(CoreError::DimensionMismatch(format!(
            "{name} holds {} bytes, manifest implies {n}x{d} f32 = {}",
            bytes.len(),
            n * d * 4
        )));
    }
    let mut data = Vec::with_capacity(n * d);
    for (index, c) in bytes.chunks_exact(4).enumerate() {
        let x = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !x.is_finite() {
            return Err(CoreError::NonFiniteFeature {
                file: name.to_string(),
                index,
            });
        }
        data.push(f64::from(x));
    }
    Ok(Tensor::from_vec(n, d, data)?)
}

/// Reads and validates a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<MultimodalGraph> {
    let manifest: BundleManifest =
        serde_json::from_slice(&read(dir, MANIFEST)?).map_err(|e| CoreError::Manifest(e.to_string()))?;
    let n = manifest.n;

    let edge_bytes = read(dir, &manifest.edge_file)?;
    if edge_bytes.len() % 8 != 0 {
        return Err(CoreError::DimensionMismatch(format!(
            "{} length {} is not a whole number of u32 pairs",
            manifest.edge_file,
            edge_bytes.len()
        )));
    }
    let allow_drop = manifest.allow_drop.unwrap_or(false);
    let mut edges = Vec::with_capacity(edge_bytes.len() / 8);
    for pair in read_u32s(&edge_bytes).chunks_exact(2) {
        let (u, v) = (pair[0] as usize, pair[1] as usize);
        for x in [u, v] {
            if x >= n {
                return Err(CoreError::IndexOutOfRange { index: x, n });
            }
        }
        if u == v {
            if allow_drop {
                continue;
            }
            return Err(CoreError::SelfLoop(u));
        }
        edges.push((u, v));
    }
    let adjacency = build_adjacency(&edges, n)?;

    let feat_v = read_features(dir, &manifest.feat_v_file, n, manifest.d_v)?;
    let feat_t = read_features(dir, &manifest.feat_t_file, n, manifest.d_t)?;

    let labels = match &manifest.labels_file {
        Some(name) => {
            let bytes = read(dir, name)?;
            if bytes.len() != n * 4 {
                return Err(CoreError::DimensionMismatch(format!(
                    "{name} holds {} bytes for {n} labels",
                    bytes.len()
                )));
            }
            Some(read_u32s(&bytes).into_iter().map(|l| l as usize).collect())
        }
        None => None,
    };
    MultimodalGraph::new(adjacency, feat_v, feat_t, labels, manifest.num_classes)
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CoreError::io(path, e))
}

fn feature_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|&x| (x as f32).to_le_bytes()).collect()
}

/// Writes `graph` as a bundle. Features are stored as `f32`.
pub fn write_bundle(dir: &Path, graph: &MultimodalGraph) -> Result<BundleManifest> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let manifest = BundleManifest {
        n: graph.n(),
        d_v: graph.feat_v().cols(),
        d_t: graph.feat_t().cols(),
        edge_file: "edges.bin".into(),
        feat_v_file: "feat_v.bin".into(),
        feat_t_file: "feat_t.bin".into(),
        labels_file: graph.labels().map(|_| "labels.bin".into()),
        num_classes: graph.num_classes(),
        allow_drop: None,
    };
    let edges: Vec<u8> = graph
        .adjacency()
        .edges()
        .flat_map(|(u, v)| [u as u32, v as u32])
        .flat_map(u32::to_le_bytes)
        .collect();
    write(dir, &manifest.edge_file, &edges)?;
    write(dir, &manifest.feat_v_file, &feature_bytes(graph.feat_v()))?;
    write(dir, &manifest.feat_t_file, &feature_bytes(graph.feat_t()))?;
    if let (Some(name), Some(labels)) = (&manifest.labels_file, graph.labels()) {
        let bytes: Vec<u8> = labels.iter().flat_map(|&l| (l as u32).to_le_bytes()).collect();
        write(dir, name, &bytes)?;
    }
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| CoreError::Manifest(e.to_string()))?;
    write(dir, MANIFEST, &json)?;
    Ok(manifest)
}

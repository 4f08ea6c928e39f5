//! Graph data model: CSR adjacency, dual-modality features, bundles,
//! synthetic generation, splits and negative sampling.

mod bundle;
mod csr;
mod negatives;
mod split;
mod synth;

use dip_tensor::Tensor;

pub use bundle::{load_bundle, write_bundle, BundleManifest};
pub use csr::{build_adjacency, Csr};
pub use negatives::sample_negatives;
pub use split::{split_edges, split_nodes, SplitSet, Task};
pub use synth::{gen_synthetic, SynthConfig};

use crate::error::{CoreError, Result};

/// Undirected graph whose nodes each carry a visual and a textual feature row.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalGraph {
    adjacency: Csr,
    feat_v: Tensor,
    feat_t: Tensor,
    labels: Option<Vec<usize>>,
    num_classes: Option<usize>,
}

impl MultimodalGraph {
    pub fn new(
        adjacency: Csr,
        feat_v: Tensor,
        feat_t: Tensor,
        labels: Option<Vec<usize>>,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        let n = adjacency.n();
        for (name, f) in [("feat_v", &feat_v), ("feat_t", &feat_t)] {
            if f.rows() != n {
                return Err(CoreError::DimensionMismatch(format!(
                    "{name} has {} rows for {n} nodes",
                    f.rows()
                )));
            }
            if let Some(index) = f.data().iter().position(|x| !x.is_finite()) {
                return Err(CoreError::NonFiniteFeature {
                    file: name.into(),
                    index,
                });
            }
        }
        let num_classes = match &labels {
            Some(l) => {
                if l.len() != n {
                    return Err(CoreError::DimensionMismatch(format!(
                        "{} labels for {n} nodes",
                        l.len()
                    )));
                }
                let observed = l.iter().max().map_or(0, |m| m + 1);
                let c = num_classes.unwrap_or(observed);
                if observed > c {
                    return Err(CoreError::DimensionMismatch(format!(
                        "label {} >= num_classes {c}",
                        observed - 1
                    )));
                }
                Some(c)
            }
            None => num_classes,
        };
        Ok(Self {
            adjacency,
            feat_v,
            feat_t,
            labels,
            num_classes,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.edge_count()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.degree(i)
    }

    pub fn feat_v(&self) -> &Tensor {
        &self.feat_v
    }

    pub fn feat_t(&self) -> &Tensor {
        &self.feat_t
    }

    pub fn features(&self, m: crate::Modality) -> &Tensor {
        match m {
            crate::Modality::Visual => &self.feat_v,
            crate::Modality::Textual => &self.feat_t,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    /// Same nodes and features over a different edge set.
    pub fn with_adjacency(&self, adjacency: Csr) -> Result<Self> {
        if adjacency.n() != self.n() {
            return Err(CoreError::DimensionMismatch(format!(
                "adjacency over {} nodes for a {}-node graph",
                adjacency.n(),
                self.n()
            )));
        }
        Ok(Self {
            adjacency,
            ..self.clone()
        })
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(CoreError::InvalidConfig("not a permutation".into()));
            }
            inverse[old] = new;
        }
        if perm.len() != n {
            return Err(CoreError::InvalidConfig("not a permutation".into()));
        }
        let edges: Vec<(usize, usize)> = self.adjacency.edges().map(|(u, v)| (inverse[u], inverse[v])).collect();
        Ok(Self {
            adjacency: build_adjacency(&edges, n)?,
            feat_v: self.feat_v.select_rows(perm),
            feat_t: self.feat_t.select_rows(perm),
            labels: self.labels.as_ref().map(|l| perm.iter().map(|&o| l[o]).collect()),
            num_classes: self.num_classes,
        })
    }
}

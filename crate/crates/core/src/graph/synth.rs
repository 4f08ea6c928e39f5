use dip_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{build_adjacency, split_nodes, MultimodalGraph, SplitSet};
use crate::error::{CoreError, Result};

const EDGE_STREAM: u64 = 1;
const FEATURE_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;

/// Stochastic block model with modality-split class signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    /// Number of blocks, which are also the classes.
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub d_v: usize,
    pub d_t: usize,
    /// Fraction of classes whose signal lives only in the visual features.
    pub signal_split: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            blocks: 4,
            p_in: 0.02,
            p_out: 0.002,
            d_v: 16,
            d_t: 16,
            signal_split: 0.5,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::InvalidConfig(m.to_string()));
        if self.blocks < 2 {
            return bad("blocks must be at least 2");
        }
        if self.n < self.blocks {
            return bad("need at least one node per block");
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) || self.p_out > self.p_in {
            return bad("edge probabilities must satisfy 0 <= p_out <= p_in <= 1");
        }
        if !(0.0..=1.0).contains(&self.signal_split) {
            return bad("signal_split must lie in [0, 1]");
        }
        if self.d_v < self.blocks || self.d_t < self.blocks {
            return bad("feature dimensions must be at least the number of classes");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative");
        }
        Ok(())
    }

    /// Number of classes whose class mean is written into the visual features.
    pub fn visual_classes(&self) -> usize {
        (self.signal_split * self.blocks as f64).round() as usize
    }

    pub fn block_of(&self, node: usize) -> usize {
        node * self.blocks / self.n
    }

    fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        // smallest node with block_of(node) >= b
        let start = (b * self.n).div_ceil(self.blocks);
        let end = ((b + 1) * self.n).div_ceil(self.blocks);
        start..end
    }
}

/// Visits the indices in `0..count` selected independently with
/// probability `p`, by geometric skipping.
fn bernoulli_indices(rng: &mut ChaCha8Rng, count: usize, p: f64, mut visit: impl FnMut(usize)) {
    if p <= 0.0 || count == 0 {
        return;
    }
    if p >= 1.0 {
        (0..count).for_each(visit);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut idx: usize = 0;
    let mut first = true;
    loop {
        let u: f64 = rng.random();
        let skip = ((1.0 - u).ln() / log_q).floor();
        if !skip.is_finite() || skip >= count as f64 {
            return;
        }
        let step = skip as usize + usize::from(!first);
        idx = match idx.checked_add(step) {
            Some(i) if i < count => i,
            _ => return,
        };
        first = false;
        visit(idx);
    }
}

fn sbm_edges(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..cfg.blocks {
        let ra = cfg.block_range(a);
        let sa = ra.len();
        // pairs i < j inside the block, enumerated row by row
        let mut row = 0usize;
        let mut row_start = 0usize;
        bernoulli_indices(rng, sa * sa.saturating_sub(1) / 2, cfg.p_in, |k| {
            while k >= row_start + (sa - 1 - row) {
                row_start += sa - 1 - row;
                row += 1;
            }
            let col = row + 1 + (k - row_start);
            edges.push((ra.start + row, ra.start + col));
        });
        for b in a + 1..cfg.blocks {
            let rb = cfg.block_range(b);
            let sb = rb.len();
            bernoulli_indices(rng, sa * sb, cfg.p_out, |k| {
                edges.push((ra.start + k / sb, rb.start + k % sb));
            });
        }
    }
    edges
}

/// Samples an SBM graph with class-mean features and a 6/1/3 node split.
///
/// Class `c` has mean `e_c` (a standard basis vector). Classes below
/// [`SynthConfig::visual_classes`] carry it in the visual features, the rest
/// in the textual features; the other modality is pure noise. Feature values
/// are rounded to `f32` so bundles round-trip exactly.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<(MultimodalGraph, SplitSet)> {
    cfg.validate()?;
    let n = cfg.n;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(EDGE_STREAM);
    let edges = sbm_edges(cfg, &mut rng);
    let adjacency = build_adjacency(&edges, n)?;

    let labels: Vec<usize> = (0..n).map(|i| cfg.block_of(i)).collect();
    let visual = cfg.visual_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(FEATURE_STREAM);
    let mut feat_v = Tensor::zeros(n, cfg.d_v);
    let mut feat_t = Tensor::zeros(n, cfg.d_t);
    for (i, &c) in labels.iter().enumerate() {
        for (tensor, has_signal) in [(&mut feat_v, c < visual), (&mut feat_t, c >= visual)] {
            let row = tensor.row_mut(i);
            for (j, x) in row.iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                let mean = if has_signal && j == c { 1.0 } else { 0.0 };
                *x = (mean + cfg.noise_sigma * noise) as f32 as f64;
            }
        }
    }
    let graph = MultimodalGraph::new(adjacency, feat_v, feat_t, Some(labels), Some(cfg.blocks))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SPLIT_STREAM);
    let split_seed: u64 = rng.random();
    let split = split_nodes(n, (0.6, 0.1, 0.3), split_seed)?;
    Ok((graph, split))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_nodes_in_order() {
        let cfg = SynthConfig {
            n: 10,
            blocks: 3,
            ..SynthConfig::default()
        };
        let mut seen = 0;
        for b in 0..3 {
            let r = cfg.block_range(b);
            assert_eq!(r.start, seen);
            assert!(r.clone().all(|i| cfg.block_of(i) == b));
            seen = r.end;
        }
        assert_eq!(seen, 10);
    }

    #[test]
    fn skipping_with_p_one_takes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut got = Vec::new();
        bernoulli_indices(&mut rng, 5, 1.0, |k| got.push(k));
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn invalid_probabilities_rejected() {
        let cfg = SynthConfig {
            p_in: 0.01,
            p_out: 0.1,
            ..SynthConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(CoreError::InvalidConfig(_))));
    }
}

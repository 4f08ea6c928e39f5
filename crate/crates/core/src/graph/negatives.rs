use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Csr;
use crate::error::{CoreError, Result};

/// For each anchor `(u, v)`, `k` distinct destinations `w` with `w != u`
/// and `(u, w)` neither an edge of `adjacency` nor an anchor.
///
/// Draws uniformly with rejection; nodes whose admissible set is small
/// relative to `k` are sampled by a partial shuffle of the admissible set
/// instead, which gives the same distribution.
pub fn sample_negatives(adjacency: &Csr, anchors: &[(usize, usize)], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(CoreError::InvalidConfig("negative count must be at least 1".into()));
    }
    let n = adjacency.n();
    let mut partners: HashMap<usize, HashSet<usize>> = HashMap::new();
    for &(u, v) in anchors {
        for x in [u, v] {
            if x >= n {
                return Err(CoreError::IndexOutOfRange { index: x, n });
            }
        }
        partners.entry(u).or_default().insert(v);
        partners.entry(v).or_default().insert(u);
    }
    let forbidden =
        |u: usize, w: usize| w == u || adjacency.contains(u, w) || partners.get(&u).is_some_and(|p| p.contains(&w));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(anchors.len());
    for &(u, _) in anchors {
        let anchored = partners.get(&u).map_or(0, |p| {
            p.iter().filter(|&&w| w != u && !adjacency.contains(u, w)).count()
        });
        let available = n - 1 - adjacency.degree(u) - anchored;
        if available < k {
            return Err(CoreError::TooDense {
                anchor: u,
                available,
                k,
            });
        }
        let mut row = Vec::with_capacity(k);
        if available >= 2 * k {
            let mut taken = HashSet::with_capacity(k);
            while row.len() < k {
                let w = rng.random_range(0..n);
                if !forbidden(u, w) && taken.insert(w) {
                    row.push(w);
                }
            }
        } else {
            let mut pool: Vec<usize> = (0..n).filter(|&w| !forbidden(u, w)).collect();
            for i in 0..k {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
                row.push(pool[i]);
            }
        }
        out.push(row);
    }
    Ok(out)
}

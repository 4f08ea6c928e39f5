use std::sync::Arc;

use dip_tensor::Segments;

use crate::error::{CoreError, Result};

/// Symmetric adjacency in compressed sparse row form. Rows are sorted,
/// duplicate-free and never contain their own index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

/// Symmetrized, deduplicated, self-loop-free adjacency from an edge list.
pub fn build_adjacency(edges: &[(usize, usize)], n: usize) -> Result<Csr> {
    let mut degree = vec![0usize; n];
    for &(u, v) in edges {
        for x in [u, v] {
            if x >= n {
                return Err(CoreError::IndexOutOfRange { index: x, n });
            }
        }
        if u != v {
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    let mut offsets = vec![0usize; n + 1];
    for i in 0..n {
        offsets[i + 1] = offsets[i] + degree[i];
    }
    let mut fill = offsets.clone();
    let mut indices = vec![0usize; offsets[n]];
    for &(u, v) in edges {
        if u == v {
            continue;
        }
        indices[fill[u]] = v;
        fill[u] += 1;
        indices[fill[v]] = u;
        fill[v] += 1;
    }
    // sort + dedup each row, then compact
    let mut compact = Vec::with_capacity(indices.len());
    let mut new_offsets = Vec::with_capacity(n + 1);
    new_offsets.push(0);
    for i in 0..n {
        let row = &mut indices[offsets[i]..offsets[i + 1]];
        row.sort_unstable();
        let mut last = None;
        for &j in row.iter() {
            if last != Some(j) {
                compact.push(j);
                last = Some(j);
            }
        }
        new_offsets.push(compact.len());
    }
    Ok(Csr {
        offsets: new_offsets,
        indices: compact,
    })
}

impl Csr {
    pub fn empty(n: usize) -> Self {
        Self {
            offsets: vec![0; n + 1],
            indices: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        u < self.n() && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |u| self.neighbors(u).iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    /// Neighborhood segments for mean aggregation on the tape.
    pub fn segments(&self) -> Arc<Segments> {
        Arc::new(Segments::new(self.offsets.clone(), self.indices.clone()).expect("CSR offsets are well formed"))
    }

    /// Structural invariants: symmetry, sorted unique rows, no self-loops.
    pub fn is_valid(&self) -> bool {
        let n = self.n();
        self.offsets[0] == 0
            && self.offsets[n] == self.indices.len()
            && (0..n).all(|i| {
                let row = self.neighbors(i);
                row.windows(2).all(|w| w[0] < w[1]) && row.iter().all(|&j| j < n && j != i && self.contains(j, i))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_edge_list() {
        let a = build_adjacency(&[], 3).unwrap();
        assert_eq!(a.offsets(), &[0, 0, 0, 0]);
        assert!((0..3).all(|i| a.degree(i) == 0));
    }

    #[test]
    fn duplicates_and_reversals_collapse() {
        let a = build_adjacency(&[(0, 1), (1, 0), (0, 1)], 2).unwrap();
        assert_eq!(a.offsets(), &[0, 1, 2]);
        assert_eq!(a.edge_count(), 1);
        assert!(a.is_valid());
    }

    #[test]
    fn self_loops_dropped() {
        let a = build_adjacency(&[(0, 0), (0, 1)], 2).unwrap();
        assert_eq!(a.edge_count(), 1);
        assert!(!a.contains(0, 0));
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(matches!(
            build_adjacency(&[(0, 3)], 3),
            Err(CoreError::IndexOutOfRange { index: 3, n: 3 })
        ));
    }
}

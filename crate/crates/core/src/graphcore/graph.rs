use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::sparse::SparseMatrix;
use crate::{Error, Result};

/// Immutable undirected graph with non-negative edge weights.
///
/// The adjacency is stored as a symmetric CSR matrix; `degrees[v]` is the row
/// sum of `A` at `v`, self-loop weight included.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adj: SparseMatrix,
    degrees: Vec<f64>,
}

impl Graph {
    /// Unit-weight graph from (possibly directed, possibly repeated) pairs.
    ///
    /// Each pair is symmetrised; repeats collapse to a single unit edge.
    /// With `self_loops`, every node receives a unit self-loop.
    pub fn from_pairs(
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
        self_loops: bool,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, j) in pairs {
            for id in [i, j] {
                if id >= n {
                    return Err(Error::NodeOutOfRange { id, n });
                }
            }
            map.insert((i, j), 1.0);
            map.insert((j, i), 1.0);
        }
        if self_loops {
            for v in 0..n {
                map.insert((v, v), 1.0);
            }
        }
        let triplets: Vec<_> = map.into_iter().map(|((i, j), w)| (i, j, w)).collect();
        Self::from_adjacency(SparseMatrix::from_triplets(n, &triplets)?)
    }

    /// Weighted graph from undirected entries, each unordered pair listed once.
    pub fn from_weighted(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut triplets = Vec::with_capacity(entries.len() * 2);
        for &(i, j, w) in entries {
            triplets.push((i, j, w));
            if i != j {
                triplets.push((j, i, w));
            }
        }
        Self::from_adjacency(SparseMatrix::from_triplets(n, &triplets)?)
    }

    /// Wrap an adjacency matrix after checking symmetry and non-negativity.
    pub fn from_adjacency(adj: SparseMatrix) -> Result<Self> {
        if let Some(&w) = adj.vals().iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidGraph(format!("invalid edge weight {w}")));
        }
        if !adj.is_symmetric(0.0) {
            return Err(Error::InvalidGraph("adjacency is not symmetric".into()));
        }
        let degrees = adj.row_sums();
        Ok(Self { adj, degrees })
    }

    pub fn n(&self) -> usize {
        self.adj.n()
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adj
    }

    pub fn row_ptr(&self) -> &[usize] {
        self.adj.pattern().row_ptr()
    }

    pub fn cols(&self) -> &[usize] {
        self.adj.pattern().col_idx()
    }

    pub fn vals(&self) -> &[f64] {
        self.adj.vals()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adj.get(i, j)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj.pattern().find(i, j).is_some()
    }

    /// Stored neighbours of `v` with weights, self-loop included if present.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adj
            .pattern()
            .row_range(v)
            .map(move |p| (self.cols()[p], self.vals()[p]))
    }

    /// Undirected non-self edges `(i, j, w)` with `i < j`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj
            .pattern()
            .entries()
            .filter(|&(_, r, c)| r < c)
            .map(move |(p, r, c)| (r, c, self.vals()[p]))
    }

    /// Number of undirected non-self edges.
    pub fn num_edges(&self) -> usize {
        self.edges().count()
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.n()).all(|v| self.has_edge(v, v))
    }
}

/// Which population a node of a synthetic mixed graph belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Hom,
    Het,
}

/// Provenance of a generated mixed graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedMeta {
    /// Fraction of heterophilic nodes, `n_het / (n_hom + n_het)`.
    pub het_fraction: f64,
    pub blocks: Vec<Block>,
}

/// Graph, node features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graph: Graph,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub meta: Option<MixedMeta>,
}

impl DatasetBundle {
    pub fn new(
        name: impl Into<String>,
        graph: Graph,
        features: Array2<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = graph.n();
        if features.nrows() != n || labels.len() != n {
            return Err(Error::Shape(format!(
                "graph has {n} nodes, features {} rows, labels {}",
                features.nrows(),
                labels.len()
            )));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self { name: name.into(), graph, features, labels, num_classes, meta: None })
    }

    pub fn with_graph(&self, graph: Graph) -> Self {
        Self { graph, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_symmetrise_and_add_loops() {
        let g = Graph::from_pairs(2, [(0, 1)], true).unwrap();
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0) && g.has_edge(0, 0) && g.has_edge(1, 1));
        assert_eq!(g.degrees(), &[2.0, 2.0]);
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn out_of_range_node_rejected() {
        assert!(matches!(
            Graph::from_pairs(2, [(0, 2)], false),
            Err(Error::NodeOutOfRange { id: 2, n: 2 })
        ));
    }

    #[test]
    fn negative_weight_rejected() {
        assert!(Graph::from_weighted(2, &[(0, 1, -1.0)]).is_err());
    }

    #[test]
    fn degrees_are_row_sums() {
        let g = Graph::from_weighted(3, &[(0, 1, 0.5), (1, 2, 2.0), (2, 2, 1.0)]).unwrap();
        assert_eq!(g.degrees(), &[0.5, 2.5, 3.0]);
    }
}

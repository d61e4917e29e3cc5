//! Typed-edge graphs.
//!
//! An [`Edge`] `(relation, target, source)` means `source ∈ N_target^(relation)`:
//! messages flow from `source` into `target`. Edges are always held in
//! canonical order, sorted by `(relation, target, source)`, and duplicates are
//! rejected at construction.

mod batch;
mod document;
mod synthetic;

pub use batch::{batch_graphs, BatchedGraph};
pub use document::{
    parse_dataset, parse_graph, serialize_dataset, serialize_dataset_stamped, serialize_graph, Dataset, GraphDocument,
    GraphTargets, LabelSet, Split,
};
pub use synthetic::{generate_planted, planted_dataset, PlantedConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub relation: usize,
    pub target: usize,
    pub source: usize,
}

impl Edge {
    pub fn new(relation: usize, target: usize, source: usize) -> Self {
        Self {
            relation,
            target,
            source,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    Dense(Matrix),
    /// Node identity; the model learns an `N×feature_dim` embedding table.
    OneHotIndex { dim: usize },
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Dense(m) => m.cols(),
            Features::OneHotIndex { dim } => *dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelGraph {
    num_nodes: usize,
    num_relations: usize,
    edges: Vec<Edge>,
    /// `offsets[r]..offsets[r + 1]` is the slice of `edges` under relation `r`.
    offsets: Vec<usize>,
    features: Features,
    self_relation: Option<usize>,
}

impl RelGraph {
    pub fn new(
        num_nodes: usize,
        num_relations: usize,
        edges: Vec<Edge>,
        features: Features,
    ) -> Result<Self> {
        Self::build(num_nodes, num_relations, edges, features, None)
    }

    pub(crate) fn build(
        num_nodes: usize,
        num_relations: usize,
        mut edges: Vec<Edge>,
        features: Features,
        self_relation: Option<usize>,
    ) -> Result<Self> {
        if features.dim() == 0 {
            return Err(Error::DimensionMismatch("feature_dim must be at least 1".into()));
        }
        if let Features::Dense(m) = &features {
            if m.rows() != num_nodes {
                return Err(Error::DimensionMismatch(format!(
                    "{} feature rows for {num_nodes} nodes",
                    m.rows()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite("node features".into()));
            }
        }
        if let Some(r) = self_relation {
            if r >= num_relations {
                return Err(Error::IndexOutOfRange {
                    what: "self relation",
                    index: r,
                    limit: num_relations,
                });
            }
        }
        for e in &edges {
            if e.relation >= num_relations {
                return Err(Error::IndexOutOfRange {
                    what: "relation",
                    index: e.relation,
                    limit: num_relations,
                });
            }
            for idx in [e.target, e.source] {
                if idx >= num_nodes {
                    return Err(Error::IndexOutOfRange {
                        what: "node",
                        index: idx,
                        limit: num_nodes,
                    });
                }
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            let e = w[0];
            return Err(Error::DuplicateEdge {
                relation: e.relation,
                target: e.target,
                src: e.source,
            });
        }
        let mut offsets = vec![0; num_relations + 1];
        for e in &edges {
            offsets[e.relation + 1] += 1;
        }
        for r in 0..num_relations {
            offsets[r + 1] += offsets[r];
        }
        Ok(Self {
            num_nodes,
            num_relations,
            edges,
            offsets,
            features,
            self_relation,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dim()
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    /// Dense feature matrix, if the graph carries one.
    pub fn dense_features(&self) -> Option<&Matrix> {
        match &self.features {
            Features::Dense(m) => Some(m),
            Features::OneHotIndex { .. } => None,
        }
    }

    /// All edges in canonical `(relation, target, source)` order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn relation_edges(&self, r: usize) -> &[Edge] {
        &self.edges[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn self_relation(&self) -> Option<usize> {
        self.self_relation
    }

    /// `|N_i^(r)|` for every node, per relation: `degree[r][i]`.
    pub fn in_degrees(&self) -> Vec<Vec<usize>> {
        let mut deg = vec![vec![0; self.num_nodes]; self.num_relations];
        for e in &self.edges {
            deg[e.relation][e.target] += 1;
        }
        deg
    }

    /// Same graph with a new, dedicated relation `R` holding every `i → i` edge.
    pub fn with_self_relation(&self) -> Result<Self> {
        if self.self_relation.is_some() {
            return Err(Error::SelfRelationPresent);
        }
        let r = self.num_relations;
        let mut edges = self.edges.clone();
        edges.extend((0..self.num_nodes).map(|i| Edge::new(r, i, i)));
        Self::build(self.num_nodes, r + 1, edges, self.features.clone(), Some(r))
    }

    /// Same structure, restricted to edges whose `keep` flag is set.
    pub fn filter_edges(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.edges.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} keep flags for {} edges",
                keep.len(),
                self.edges.len()
            )));
        }
        let edges = self
            .edges
            .iter()
            .zip(keep)
            .filter_map(|(e, &k)| k.then_some(*e))
            .collect();
        Self::build(
            self.num_nodes,
            self.num_relations,
            edges,
            self.features.clone(),
            self.self_relation,
        )
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge::new(e.relation, perm[e.target], perm[e.source]))
            .collect();
        let features = match &self.features {
            Features::Dense(m) => Features::Dense(permute_rows(m, perm)),
            f @ Features::OneHotIndex { .. } => f.clone(),
        };
        Self::build(
            self.num_nodes,
            self.num_relations,
            edges,
            features,
            self.self_relation,
        )
    }
}

/// Row `i` of the input becomes row `perm[i]` of the output.
pub fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(p).copy_from_slice(m.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(n: usize, f: usize) -> Features {
        Features::Dense(Matrix::zeros(n, f))
    }

    #[test]
    fn edges_are_canonicalised() {
        let g = RelGraph::new(
            3,
            2,
            vec![Edge::new(1, 2, 1), Edge::new(0, 1, 0), Edge::new(0, 0, 2)],
            dense(3, 4),
        )
        .unwrap();
        assert_eq!(
            g.edges(),
            &[Edge::new(0, 0, 2), Edge::new(0, 1, 0), Edge::new(1, 2, 1)]
        );
        assert_eq!(g.relation_edges(1), &[Edge::new(1, 2, 1)]);
    }

    #[test]
    fn out_of_range_node() {
        let err = RelGraph::new(3, 1, vec![Edge::new(0, 0, 5)], dense(3, 1)).unwrap_err();
        assert!(err.to_string().contains("index out of range"));
    }

    #[test]
    fn duplicate_edge_rejected() {
        let err = RelGraph::new(
            2,
            1,
            vec![Edge::new(0, 0, 1), Edge::new(0, 0, 1)],
            dense(2, 1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateEdge { .. }));
    }

    #[test]
    fn zero_width_features_rejected() {
        assert!(RelGraph::new(2, 1, vec![], dense(2, 0)).is_err());
    }

    #[test]
    fn self_relation_added_once() {
        let g = RelGraph::new(2, 1, vec![], dense(2, 1)).unwrap();
        let s = g.with_self_relation().unwrap();
        assert_eq!(s.num_relations(), 2);
        assert_eq!(s.relation_edges(1), &[Edge::new(1, 0, 0), Edge::new(1, 1, 1)]);
        assert_eq!(s.self_relation(), Some(1));
        assert!(matches!(s.with_self_relation(), Err(Error::SelfRelationPresent)));
    }

    #[test]
    fn self_relation_on_empty_graph() {
        let g = RelGraph::new(0, 3, vec![], dense(0, 2)).unwrap();
        let s = g.with_self_relation().unwrap();
        assert_eq!(s.num_relations(), 4);
        assert_eq!(s.num_edges(), 0);
    }

    #[test]
    fn self_relation_keeps_existing_edges() {
        let g = RelGraph::new(
            3,
            2,
            vec![Edge::new(0, 1, 0), Edge::new(1, 2, 1), Edge::new(1, 0, 2)],
            dense(3, 2),
        )
        .unwrap();
        let s = g.with_self_relation().unwrap();
        for r in 0..2 {
            assert_eq!(g.relation_edges(r), s.relation_edges(r));
        }
    }
}

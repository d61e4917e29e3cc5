use std::sync::Arc;

use super::{Edge, Features, RelGraph};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Several graphs merged into one block-diagonal graph.
#[derive(Clone, Debug)]
pub struct BatchedGraph {
    pub graph: RelGraph,
    /// Graph id of every node, in input order.
    pub segment: Arc<[usize]>,
    pub graph_count: usize,
    /// Node offset of each input graph; `offsets[graph_count]` is the total.
    pub offsets: Vec<usize>,
}

impl BatchedGraph {
    /// Node range occupied by graph `g`.
    pub fn nodes_of(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }
}

pub fn batch_graphs(graphs: &[&RelGraph]) -> Result<BatchedGraph> {
    let Some(first) = graphs.first() else {
        return Err(Error::Degenerate("cannot batch zero graphs".into()));
    };
    let (r, f) = (first.num_relations(), first.feature_dim());
    let self_rel = first.self_relation();
    for g in graphs {
        if g.num_relations() != r {
            return Err(Error::RelationCountMismatch {
                expected: r,
                found: g.num_relations(),
            });
        }
        if g.feature_dim() != f {
            return Err(Error::DimensionMismatch(format!(
                "feature_dim {} vs {f}",
                g.feature_dim()
            )));
        }
        if g.dense_features().is_none() {
            return Err(Error::DimensionMismatch(
                "batching requires dense node features".into(),
            ));
        }
        if g.self_relation() != self_rel {
            return Err(Error::Malformed("graphs disagree on the self relation".into()));
        }
    }

    let mut offsets = Vec::with_capacity(graphs.len() + 1);
    let mut total = 0;
    for g in graphs {
        offsets.push(total);
        total += g.num_nodes();
    }
    offsets.push(total);

    let mut edges = Vec::with_capacity(graphs.iter().map(|g| g.num_edges()).sum());
    let mut segment = Vec::with_capacity(total);
    let mut rows: Vec<&Matrix> = Vec::with_capacity(graphs.len());
    for (gi, g) in graphs.iter().enumerate() {
        let off = offsets[gi];
        edges.extend(
            g.edges()
                .iter()
                .map(|e| Edge::new(e.relation, e.target + off, e.source + off)),
        );
        segment.extend(std::iter::repeat_n(gi, g.num_nodes()));
        rows.push(g.dense_features().expect("checked above"));
    }
    let features = Features::Dense(Matrix::vcat(&rows)?);
    let graph = RelGraph::build(total, r, edges, features, self_rel)?;
    Ok(BatchedGraph {
        graph,
        segment: segment.into(),
        graph_count: graphs.len(),
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize, r: usize, edges: &[(usize, usize, usize)]) -> RelGraph {
        let feats = Matrix::new(n, 2, (0..n * 2).map(|v| v as f64).collect()).unwrap();
        RelGraph::new(
            n,
            r,
            edges.iter().map(|&(a, b, c)| Edge::new(a, b, c)).collect(),
            Features::Dense(feats),
        )
        .unwrap()
    }

    #[test]
    fn offsets_and_segments() {
        let a = g(2, 2, &[(0, 0, 1)]);
        let b = g(3, 2, &[(1, 2, 0), (0, 1, 2)]);
        let batch = batch_graphs(&[&a, &b]).unwrap();
        assert_eq!(batch.graph.num_nodes(), 5);
        assert_eq!(&*batch.segment, &[0, 0, 1, 1, 1]);
        assert_eq!(
            batch.graph.edges(),
            &[Edge::new(0, 0, 1), Edge::new(0, 3, 4), Edge::new(1, 4, 2)]
        );
        assert_eq!(batch.nodes_of(1), 2..5);
        for e in batch.graph.edges() {
            assert_eq!(batch.segment[e.target], batch.segment[e.source]);
        }
    }

    #[test]
    fn single_graph_is_identity() {
        let a = g(3, 2, &[(0, 0, 1), (1, 2, 2)]);
        let batch = batch_graphs(&[&a]).unwrap();
        assert_eq!(batch.graph, a);
        assert!(batch.segment.iter().all(|&s| s == 0));
    }

    #[test]
    fn relation_count_mismatch() {
        let a = g(2, 2, &[]);
        let b = g(2, 3, &[]);
        let err = batch_graphs(&[&a, &b]).unwrap_err();
        assert!(err.to_string().contains("relation-count mismatch"));
    }
}

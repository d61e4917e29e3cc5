#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rgat::graph::{Edge, Features, RelGraph};
use rgat::tensor::Matrix;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Each ordered `(relation, target, source)` triple is present with
/// probability `density`; features are uniform in `[-1, 1)`.
pub fn random_graph(n: usize, r: usize, density: f64, f: usize, rng: &mut impl Rng) -> RelGraph {
    let mut edges = BTreeSet::new();
    let expected = (density * (n * n * r) as f64).round() as usize;
    if density > 0.3 {
        for rel in 0..r {
            for t in 0..n {
                for s in 0..n {
                    if rng.random_bool(density) {
                        edges.insert((rel, t, s));
                    }
                }
            }
        }
    } else {
        for _ in 0..expected {
            edges.insert((rng.random_range(0..r), rng.random_range(0..n), rng.random_range(0..n)));
        }
    }
    let edges = edges.into_iter().map(|(rel, t, s)| Edge::new(rel, t, s)).collect();
    RelGraph::new(n, r, edges, Features::Dense(random_matrix(n, f, rng))).unwrap()
}

//! Planted-structure graphs for end-to-end checks.
//!
//! Each graph has a *readout* node and a *marker* node. The marker sends to
//! the readout over relation 0 when the label is 1 and over relation 1 when
//! it is 0. Feature column 0 flags the marker, column 1 flags the readout, and
//! any remaining columns are standard-normal noise. Noise edges use relations
//! `2..R` only, so relation-0 adjacency alone determines the label.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Edge, Features, GraphTargets, RelGraph, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub seed: u64,
    pub n_graphs: usize,
    pub nodes_per_graph: usize,
    pub num_relations: usize,
    pub feature_dim: usize,
    pub noise_edges: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_graphs: 100,
            nodes_per_graph: 20,
            num_relations: 4,
            feature_dim: 6,
            noise_edges: 30,
        }
    }
}

pub fn generate_planted(cfg: &PlantedConfig) -> Result<Vec<(RelGraph, usize)>> {
    let n = cfg.nodes_per_graph;
    if cfg.num_relations < 2 {
        return Err(Error::Degenerate("planted graphs need at least 2 relations".into()));
    }
    if cfg.n_graphs == 0 || n < 2 {
        return Err(Error::Degenerate(format!(
            "{} graphs of {n} nodes",
            cfg.n_graphs
        )));
    }
    if cfg.feature_dim < 2 {
        return Err(Error::Degenerate("feature_dim must be at least 2".into()));
    }
    let noise_relations = cfg.num_relations - 2;
    let capacity = noise_relations * n * (n - 1);
    if cfg.noise_edges > capacity {
        return Err(Error::Degenerate(format!(
            "{} noise edges exceed the {capacity} available slots",
            cfg.noise_edges
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels: Vec<usize> = (0..cfg.n_graphs).map(|i| usize::from(i < cfg.n_graphs / 2)).collect();
    labels.shuffle(&mut rng);

    let mut out = Vec::with_capacity(cfg.n_graphs);
    for label in labels {
        let readout = rng.random_range(0..n);
        let marker = loop {
            let m = rng.random_range(0..n);
            if m != readout {
                break m;
            }
        };
        let planted_relation = if label == 1 { 0 } else { 1 };
        let mut edges = BTreeSet::new();
        edges.insert(Edge::new(planted_relation, readout, marker));
        while edges.len() < cfg.noise_edges + 1 {
            let relation = 2 + rng.random_range(0..noise_relations);
            let target = rng.random_range(0..n);
            let source = rng.random_range(0..n);
            if target != source {
                edges.insert(Edge::new(relation, target, source));
            }
        }

        let mut features = Matrix::zeros(n, cfg.feature_dim);
        for i in 0..n {
            for c in 2..cfg.feature_dim {
                features.set(i, c, rng.sample(StandardNormal));
            }
        }
        features.set(marker, 0, 1.0);
        features.set(readout, 1, 1.0);

        let graph = RelGraph::new(
            n,
            cfg.num_relations,
            edges.into_iter().collect(),
            Features::Dense(features),
        )?;
        out.push((graph, label));
    }
    Ok(out)
}

/// Planted graphs packaged as a binary single-task inductive dataset.
///
/// Graph indices are shuffled with the generator seed and split into
/// `n_validation`, `n_test`, and the remaining training graphs.
pub fn planted_dataset(cfg: &PlantedConfig, n_validation: usize, n_test: usize) -> Result<Dataset> {
    if n_validation + n_test >= cfg.n_graphs {
        return Err(Error::Degenerate("split leaves no training graphs".into()));
    }
    let pairs = generate_planted(cfg)?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed));
    let mut split = Split {
        validation: order[..n_validation].to_vec(),
        test: order[n_validation..n_validation + n_test].to_vec(),
        train: order[n_validation + n_test..].to_vec(),
    };
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    let (graphs, targets) = pairs
        .into_iter()
        .map(|(g, y)| (g, GraphTargets::single(2, y)))
        .unzip();
    Ok(Dataset::Inductive {
        graphs,
        targets,
        num_tasks: 1,
        num_classes: 2,
        class_weights: None,
        split,
    })
}

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgat::autodiff::Tape;
use rgat::graph::{planted_dataset, Dataset, GraphTargets, PlantedConfig, RelGraph, Split};
use rgat::layer::{LogitMode, NormKind, ParamRole};
use rgat::models::{
    weighted_cross_entropy, GraphClassifier, GraphClassifierConfig, Model, NodeClassifier,
    NodeClassifierConfig, RgatSettings,
};
use rgat::tensor::Matrix;
use rgat::training::{evaluate, train, TrainConfig};

use common::random_graph;

fn attention(mode: LogitMode, norm: NormKind) -> RgatSettings {
    RgatSettings {
        logit_mode: mode,
        norm,
        heads: 2,
        query_dim: if mode == LogitMode::Additive { 1 } else { 2 },
        use_bias: true,
        kernel_basis: None,
        attention_basis: None,
    }
}

fn node_config(classes: usize, norm: NormKind) -> NodeClassifierConfig {
    NodeClassifierConfig {
        num_relations: 2,
        feature_dim: 4,
        embedding_nodes: None,
        hidden_units: 6,
        num_classes: classes,
        attention: attention(LogitMode::Additive, norm),
        self_relation: true,
    }
}

fn node_data(rng: &mut ChaCha8Rng) -> Dataset {
    let n = 24;
    let graph = random_graph(n, 2, 0.1, 4, rng);
    let labels = (0..n).map(|i| (i, rng.random_range(0..3))).collect();
    let idx: Vec<usize> = (0..n).collect();
    Dataset::Transductive {
        graph,
        num_classes: 3,
        labels,
        split: Split {
            train: idx[..12].to_vec(),
            validation: idx[12..18].to_vec(),
            test: idx[18..].to_vec(),
        },
    }
}

#[test]
fn single_class_outputs_are_exactly_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = random_graph(7, 2, 0.2, 4, &mut rng);
    let model = NodeClassifier::new(node_config(1, NormKind::Argat)).unwrap();
    let probs = model.predict(&model.init_params(1).unwrap(), &g, false).unwrap();
    assert!(probs.data().iter().all(|&p| p == 1.0));
}

fn graph_model(tasks: usize) -> GraphClassifier {
    graph_model_for(2, 3, tasks)
}

fn graph_model_for(relations: usize, features: usize, tasks: usize) -> GraphClassifier {
    GraphClassifier::new(GraphClassifierConfig {
        num_relations: relations,
        feature_dim: features,
        graph_units: 8,
        dense_units: 5,
        num_tasks: tasks,
        num_classes: 2,
        attention: attention(LogitMode::Multiplicative, NormKind::Argat),
        self_relation: true,
    })
    .unwrap()
}

#[test]
fn identical_graphs_give_identical_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_graph(6, 2, 0.3, 3, &mut rng);
    let model = graph_model(12);
    assert_eq!(model.logit_width(), 24);
    let probs = model.predict(&model.init_params(0).unwrap(), &[&g, &g, &g], false).unwrap();
    assert_eq!(probs.shape(), (3, 24));
    assert_eq!(probs.row(0), probs.row(1));
    assert_eq!(probs.row(0), probs.row(2));
    for t in 0..12 {
        assert!((probs.get(0, 2 * t) + probs.get(0, 2 * t + 1) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn weighted_loss_is_linear_in_weights() {
    let probs = Matrix::from_rows(&[vec![0.2, 0.8, 0.6, 0.4], vec![0.9, 0.1, 0.3, 0.7]]).unwrap();
    let targets = [
        GraphTargets { num_tasks: 2, num_classes: 2, targets: vec![Some(1), Some(0)] },
        GraphTargets { num_tasks: 2, num_classes: 2, targets: vec![Some(0), None] },
    ];
    let refs: Vec<&GraphTargets> = targets.iter().collect();
    let loss = |p: &Matrix, w: &Matrix| {
        let mut tape = Tape::new();
        let v = tape.constant(p.clone());
        let l = weighted_cross_entropy(&mut tape, v, &refs, w).unwrap();
        tape.value(l).data()[0]
    };
    let w = Matrix::from_rows(&[vec![0.5, 1.5], vec![1.2, 0.8]]).unwrap();
    let expected = -(1.5 * 0.8f64.ln() + 1.2 * 0.6f64.ln() + 0.5 * 0.9f64.ln());
    assert!((loss(&probs, &w) - expected).abs() < 1e-14);
    assert!((loss(&probs, &w.scale(2.0)) - 2.0 * expected).abs() < 1e-14);
    let perfect = Matrix::from_rows(&[vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0, 0.5, 0.5]]).unwrap();
    assert_eq!(loss(&perfect, &Matrix::filled(2, 2, 1.0)), 0.0);
}

#[test]
fn one_epoch_is_one_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = node_data(&mut rng);
    let model = Model::Node(NodeClassifier::new(node_config(3, NormKind::Wirgat)).unwrap());
    let mut cfg = TrainConfig::new(0.01);
    cfg.max_epochs = 1;
    cfg.patience = None;
    let out = train(&model, &data, &cfg).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_ne!(out.params.values(), model.init_params(cfg.seed).unwrap().values());
}

#[test]
fn identical_seeds_reproduce_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = node_data(&mut rng);
    let model = Model::Node(NodeClassifier::new(node_config(3, NormKind::Argat)).unwrap());
    let mut cfg = TrainConfig::new(0.01);
    cfg.max_epochs = 15;
    cfg.feature_dropout = 0.3;
    cfg.edge_dropout = 0.2;
    cfg.seed = 9;
    let a = train(&model, &data, &cfg).unwrap();
    let b = train(&model, &data, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);

    let planted = planted_dataset(&PlantedConfig { n_graphs: 20, ..PlantedConfig::default() }, 4, 4).unwrap();
    let gmodel = Model::Graph(graph_model_for(4, 6, 1));
    let mut gcfg = TrainConfig::new(0.01);
    gcfg.max_epochs = 3;
    gcfg.batch_size = 5;
    gcfg.edge_dropout = 0.1;
    assert_eq!(train(&gmodel, &planted, &gcfg).unwrap().history, train(&gmodel, &planted, &gcfg).unwrap().history);
}

#[test]
fn zero_attention_kernels_make_constant_mode_irrelevant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = node_data(&mut rng);
    let model = Model::Node(NodeClassifier::new(node_config(3, NormKind::Wirgat)).unwrap());
    let mut cfg = TrainConfig::new(0.02);
    cfg.max_epochs = 10;
    let mut params = train(&model, &data, &cfg).unwrap().params;
    let zeroed: Vec<Matrix> = params
        .specs()
        .iter()
        .zip(params.values())
        .map(|(s, m)| if s.role == ParamRole::Attention { Matrix::zeros(m.rows(), m.cols()) } else { m.clone() })
        .collect();
    params.set_values(zeroed).unwrap();
    let all: Vec<usize> = (0..24).collect();
    let on = evaluate(&model, &params, &data, &all, false).unwrap();
    let off = evaluate(&model, &params, &data, &all, true).unwrap();
    assert_eq!(on.accuracy, off.accuracy);
    assert!((on.loss - off.loss).abs() < 1e-12);
}

#[test]
fn mean_auc_averages_task_aucs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let graphs: Vec<RelGraph> = (0..16).map(|_| random_graph(5, 2, 0.3, 3, &mut rng)).collect();
    let targets: Vec<GraphTargets> = (0..16)
        .map(|g| GraphTargets { num_tasks: 3, num_classes: 2, targets: vec![Some(g % 2), Some(g / 8), Some(0)] })
        .collect();
    let data = Dataset::Inductive {
        graphs,
        targets,
        num_tasks: 3,
        num_classes: 2,
        class_weights: None,
        split: Split { train: (0..16).collect(), validation: vec![], test: vec![] },
    };
    let model = Model::Graph(graph_model(3));
    let params = model.init_params(0).unwrap();
    let m = evaluate(&model, &params, &data, &(0..16).collect::<Vec<_>>(), false).unwrap();
    // The third task has a single class, so its AUC is undefined.
    assert!(m.task_auc[2].is_none());
    let defined: Vec<f64> = m.task_auc.iter().flatten().copied().collect();
    assert_eq!(defined.len(), 2);
    assert_eq!(m.mean_auc, Some(defined.iter().sum::<f64>() / 2.0));
}

mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgat::graph::{batch_graphs, permute_rows, Edge, Features, RelGraph};
use rgat::layer::{
    attention_logits, intermediate_representations, rgcn_forward, Activation, HeadAggregation, Kernels,
    LayerConfig, LayerParams, LogitMode, NormKind, RgatLayer,
};
use rgat::tensor::Matrix;

use common::{random_graph, random_matrix};

fn config(r: usize, f: usize, units: usize, heads: usize, mode: LogitMode, norm: NormKind) -> LayerConfig {
    LayerConfig {
        num_relations: r,
        input_dim: f,
        units,
        heads,
        query_dim: if mode == LogitMode::Additive { 1 } else { 2 },
        logit_mode: mode,
        norm,
        head_agg: HeadAggregation::Concat,
        activation: Activation::Tanh,
        use_bias: true,
        kernel_basis: None,
        attention_basis: None,
    }
}

fn with_bias(mut p: LayerParams, rng: &mut ChaCha8Rng) -> LayerParams {
    if let Some(b) = &mut p.bias {
        *b = random_matrix(b.rows(), b.cols(), rng);
    }
    p
}

#[test]
fn identity_kernel_leaves_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = config(1, 3, 3, 1, LogitMode::Additive, NormKind::Wirgat);
    let mut p = LayerParams::init(&cfg, &mut rng).unwrap();
    p.kernels = Kernels::Full(vec![Matrix::identity(3)]);
    let h = random_matrix(4, 3, &mut rng);
    assert_eq!(intermediate_representations(&h, &p, &cfg, 0, 0).unwrap(), h);
}

#[test]
fn one_hot_rows_look_up_kernel_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = config(2, 5, 3, 1, LogitMode::Additive, NormKind::Wirgat);
    let p = LayerParams::init(&cfg, &mut rng).unwrap();
    let g = intermediate_representations(&Matrix::identity(5), &p, &cfg, 1, 0).unwrap();
    let Kernels::Full(w) = &p.kernels else { unreachable!() };
    assert_eq!(g, w[1]);
    let zero = intermediate_representations(&Matrix::zeros(4, 5), &p, &cfg, 0, 0).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn value_level_logits_match_the_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for mode in [LogitMode::Additive, LogitMode::Multiplicative] {
        let g = random_graph(15, 3, 0.2, 4, &mut rng);
        let cfg = config(3, 4, 6, 2, mode, NormKind::Argat);
        let layer = RgatLayer::new(cfg.clone()).unwrap();
        let p = LayerParams::init(&cfg, &mut rng).unwrap();
        let h = g.dense_features().unwrap();
        let traced = layer.attention(&g, h, &p, false).unwrap();
        for (k, head) in traced.iter().enumerate() {
            let mut expected = Vec::new();
            for r in 0..3 {
                let gr = intermediate_representations(h, &p, &cfg, r, k).unwrap();
                expected.extend(attention_logits(&gr, &g, &p, &cfg, r, k).unwrap());
            }
            let ours = head.logits.as_ref().unwrap();
            let diff = ours.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert_eq!(ours.len(), expected.len());
            assert!(diff < 1e-13, "{mode:?}: {diff}");
        }
    }
}

#[test]
fn constant_wirgat_uses_inverse_neighborhood_size() {
    let edges = (1..5).map(|s| Edge::new(0, 0, s)).collect();
    let g = RelGraph::new(5, 1, edges, Features::Dense(Matrix::filled(5, 2, 1.0))).unwrap();
    let cfg = config(1, 2, 2, 1, LogitMode::Additive, NormKind::Wirgat);
    let layer = RgatLayer::new(cfg.clone()).unwrap();
    let p = LayerParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let a = layer.attention(&g, g.dense_features().unwrap(), &p, true).unwrap();
    assert_eq!(a[0].alpha, vec![0.25; 4]);
}

#[test]
fn argat_with_equal_logits_is_uniform_across_relations() {
    // Node 0 has one neighbour under relation 0 and three under relation 1.
    let edges = vec![Edge::new(0, 0, 1), Edge::new(1, 0, 1), Edge::new(1, 0, 2), Edge::new(1, 0, 3)];
    let g = RelGraph::new(4, 2, edges, Features::Dense(Matrix::filled(4, 2, 0.5))).unwrap();
    let cfg = config(2, 2, 2, 1, LogitMode::Multiplicative, NormKind::Argat);
    let layer = RgatLayer::new(cfg.clone()).unwrap();
    let mut p = LayerParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    p.zero_attention();
    let a = layer.attention(&g, g.dense_features().unwrap(), &p, false).unwrap();
    assert!(a[0].alpha.iter().all(|&x| (x - 0.25).abs() < 1e-15));
}

#[test]
fn single_head_constant_identity_is_rgcn() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_graph(12, 3, 0.2, 4, &mut rng);
    let mut cfg = config(3, 4, 3, 1, LogitMode::Additive, NormKind::Wirgat);
    cfg.activation = Activation::Identity;
    cfg.use_bias = false;
    let layer = RgatLayer::new(cfg.clone()).unwrap();
    let p = LayerParams::init(&cfg, &mut rng).unwrap();
    let h = g.dense_features().unwrap();
    let Kernels::Full(w) = &p.kernels else { unreachable!() };
    let ours = layer.apply(&g, h, &p, true, None).unwrap();
    let reference = rgcn_forward(&g, h, w, None, Activation::Identity).unwrap();
    assert!(ours.max_abs_diff(&reference) <= 1e-12);
}

#[test]
fn node_permutation_permutes_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for norm in [NormKind::Wirgat, NormKind::Argat] {
        let g = random_graph(20, 3, 0.15, 4, &mut rng);
        let cfg = config(3, 4, 6, 2, LogitMode::Multiplicative, norm);
        let layer = RgatLayer::new(cfg.clone()).unwrap();
        let p = with_bias(LayerParams::init(&cfg, &mut rng).unwrap(), &mut rng);
        let mut perm: Vec<usize> = (0..20).collect();
        perm.shuffle(&mut rng);
        let pg = g.permute_nodes(&perm).unwrap();
        let out = layer.apply(&g, g.dense_features().unwrap(), &p, false, None).unwrap();
        let pout = layer.apply(&pg, pg.dense_features().unwrap(), &p, false, None).unwrap();
        // Summation order changes with the relabelling, so equality is up to roundoff.
        assert!(permute_rows(&out, &perm).max_abs_diff(&pout) <= 1e-12);
    }
}

#[test]
fn batched_forward_equals_per_graph_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let graphs: Vec<RelGraph> = (0..4)
        .map(|_| {
            let n = rng.random_range(1..9);
            random_graph(n, 2, 0.3, 3, &mut rng)
        })
        .collect();
    let batch = batch_graphs(&graphs.iter().collect::<Vec<_>>()).unwrap();
    for norm in [NormKind::Wirgat, NormKind::Argat] {
        let cfg = config(2, 3, 4, 2, LogitMode::Additive, norm);
        let layer = RgatLayer::new(cfg.clone()).unwrap();
        let p = with_bias(LayerParams::init(&cfg, &mut rng).unwrap(), &mut rng);
        let whole = layer.apply(&batch.graph, batch.graph.dense_features().unwrap(), &p, false, None).unwrap();
        for (i, g) in graphs.iter().enumerate() {
            let single = layer.apply(g, g.dense_features().unwrap(), &p, false, None).unwrap();
            let rows = batch.nodes_of(i);
            assert_eq!(whole.slice_rows(rows.start, rows.end), single);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coefficients_normalise_per_support(
        seed in any::<u64>(),
        n in 1usize..30,
        r in 1usize..5,
        density in 0.0f64..0.5,
        wirgat in any::<bool>(),
        additive in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(n, r, density, 3, &mut rng);
        let norm = if wirgat { NormKind::Wirgat } else { NormKind::Argat };
        let mode = if additive { LogitMode::Additive } else { LogitMode::Multiplicative };
        let cfg = config(r, 3, 4, 2, mode, norm);
        let layer = RgatLayer::new(cfg.clone()).unwrap();
        let p = LayerParams::init(&cfg, &mut rng).unwrap();
        for head in layer.attention(&g, &g.dense_features().unwrap().scale(5.0), &p, false).unwrap() {
            let mut sums = std::collections::BTreeMap::new();
            let mut e = 0;
            for rel in 0..r {
                for edge in g.relation_edges(rel) {
                    let key = if wirgat { (edge.target, rel) } else { (edge.target, 0) };
                    *sums.entry(key).or_insert(0.0) += head.alpha[e];
                    prop_assert!(head.alpha[e] > 0.0);
                    e += 1;
                }
            }
            for s in sums.values() {
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }
}

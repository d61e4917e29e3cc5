//! The two task architectures and their losses.
//!
//! Node classification stacks an RGAT layer with concatenated heads and relu,
//! then an RGAT layer whose heads are averaged into `C` logits, followed by a
//! softmax per node. Graph classification stacks two concatenating RGAT
//! layers with relu, gathers each graph into `mean ⊕ max` of its node rows
//! (tanh), then a relu dense layer and a dense layer with `T·C` logits,
//! followed by a softmax per (graph, task).

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Index, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{BatchedGraph, Features, GraphTargets, RelGraph};
use crate::layer::{
    glorot, Activation, EdgeIndex, HeadAggregation, HeadTrace, Kernels, LayerConfig, LayerParams,
    LogitMode, NormKind, ParamRole, RgatLayer,
};
use crate::provenance::Provenance;
use crate::tensor::{self, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embedding,
    Layer1,
    Layer2,
    Dense1,
    Dense2,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub role: ParamRole,
    pub group: ParamGroup,
}

/// Flat, ordered parameter storage. Order is the declaration order used by
/// checkpoints and by the optimizer.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    specs: Vec<ParamSpec>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    fn push(&mut self, name: String, role: ParamRole, group: ParamGroup, value: Matrix) -> usize {
        self.specs.push(ParamSpec { name, role, group });
        self.values.push(value);
        self.values.len() - 1
    }

    fn push_layer(&mut self, group: ParamGroup, prefix: &str, layer: &LayerParams) -> LayerParams<usize> {
        let names: Vec<(String, ParamRole)> = layer
            .tensors(prefix)
            .into_iter()
            .map(|(n, r, _)| (n, r))
            .collect();
        let mut names = names.into_iter();
        layer.map(&mut |m| {
            let (name, role) = names.next().expect("tensor listing matches map order");
            self.push(name, role, group, m.clone())
        })
    }

    /// Registers every tensor on `tape` as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|m| tape.param(m.clone())).collect()
    }

    /// Registers every tensor as a constant (no gradients).
    pub fn register_constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|m| tape.constant(m.clone())).collect()
    }

    /// Replaces values, keeping the layout. Shapes must match.
    pub fn set_values(&mut self, values: Vec<Matrix>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} tensors for {} parameters",
                values.len(),
                self.values.len()
            )));
        }
        for ((spec, old), new) in self.specs.iter().zip(&self.values).zip(&values) {
            if old.shape() != new.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "{} has shape {:?}, expected {:?}",
                    spec.name,
                    new.shape(),
                    old.shape()
                )));
            }
        }
        self.values = values;
        Ok(())
    }
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// RGAT settings shared by every graph layer of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgatSettings {
    pub logit_mode: LogitMode,
    pub norm: NormKind,
    pub heads: usize,
    #[serde(default = "one")]
    pub query_dim: usize,
    #[serde(default)]
    pub use_bias: bool,
    #[serde(default)]
    pub kernel_basis: Option<usize>,
    #[serde(default)]
    pub attention_basis: Option<usize>,
}

impl RgatSettings {
    fn layer(
        &self,
        num_relations: usize,
        input_dim: usize,
        units: usize,
        head_agg: HeadAggregation,
        activation: Activation,
    ) -> LayerConfig {
        let slots = num_relations * self.heads;
        let clamp = |b: Option<usize>, what: &str| {
            b.map(|b| {
                if b > slots {
                    log::warn!("{what} basis size {b} exceeds {slots} kernel slots; clamped");
                    slots.max(1)
                } else {
                    b
                }
            })
        };
        LayerConfig {
            num_relations,
            input_dim,
            units,
            heads: self.heads,
            query_dim: self.query_dim,
            logit_mode: self.logit_mode,
            norm: self.norm,
            head_agg,
            activation,
            use_bias: self.use_bias,
            kernel_basis: clamp(self.kernel_basis, "kernel"),
            attention_basis: clamp(self.attention_basis, "attention"),
        }
    }
}

/// Per-forward switches.
pub struct Regime<'a> {
    /// Replace learned coefficients with uniform ones over the same support.
    pub constant_attention: bool,
    /// Inverted feature dropout on every graph-layer input, when training.
    pub feature_dropout: Option<(f64, &'a mut dyn RngCore)>,
}

impl Regime<'_> {
    pub fn eval(constant_attention: bool) -> Self {
        Self {
            constant_attention,
            feature_dropout: None,
        }
    }

    fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match &mut self.feature_dropout {
            Some((rate, rng)) if *rate > 0.0 => {
                let (r, c) = tape.shape(x);
                let mask = dropout_mask(r, c, *rate, &mut **rng);
                tape.mul_const(x, mask)
            }
            _ => Ok(x),
        }
    }
}

/// Keep-mask with survivors scaled by `1 / (1 − rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Matrix::new(rows, cols, data).expect("sized")
}

/// Model output recorded on a tape.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Row-wise probabilities: `N × C` or `graphs × (T·C)`.
    pub probs: Var,
    /// Attention traces of each graph layer.
    pub attention: Vec<Vec<HeadTrace>>,
}

fn no_slots() -> LayerParams<usize> {
    LayerParams {
        kernels: Kernels::Full(Vec::new()),
        attention: Kernels::Full(Vec::new()),
        bias: None,
    }
}

fn add_self_relation(graph: &RelGraph, wanted: bool) -> Result<RelGraph> {
    if wanted && graph.self_relation().is_none() {
        graph.with_self_relation()
    } else {
        Ok(graph.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeClassifierConfig {
    /// Relations in the input graph, before any self relation is added.
    pub num_relations: usize,
    /// Dense feature width, or the embedding width for one-hot-index input.
    pub feature_dim: usize,
    /// Set for one-hot-index input: rows of the learned embedding table.
    #[serde(default)]
    pub embedding_nodes: Option<usize>,
    pub hidden_units: usize,
    pub num_classes: usize,
    pub attention: RgatSettings,
    #[serde(default = "yes")]
    pub self_relation: bool,
}

#[derive(Clone, Debug)]
pub struct NodeClassifier {
    pub config: NodeClassifierConfig,
    layer1: RgatLayer,
    layer2: RgatLayer,
    embedding: Option<usize>,
    slots1: LayerParams<usize>,
    slots2: LayerParams<usize>,
}

impl NodeClassifier {
    pub fn new(config: NodeClassifierConfig) -> Result<Self> {
        if config.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        let r = config.num_relations + usize::from(config.self_relation);
        let s = &config.attention;
        let layer1 = RgatLayer::new(s.layer(
            r,
            config.feature_dim,
            config.hidden_units,
            HeadAggregation::Concat,
            Activation::Relu,
        ))?;
        let layer2 = RgatLayer::new(s.layer(
            r,
            layer1.config.output_dim(),
            config.num_classes,
            HeadAggregation::Mean,
            Activation::Identity,
        ))?;
        let mut model = Self {
            config,
            layer1,
            layer2,
            embedding: None,
            slots1: no_slots(),
            slots2: no_slots(),
        };
        model.build(&mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(model)
    }

    fn build(&mut self, rng: &mut ChaCha8Rng) -> Result<ParamSet> {
        let mut set = ParamSet::default();
        self.embedding = match self.config.embedding_nodes {
            Some(n) => Some(set.push(
                "embedding".into(),
                ParamRole::Embedding,
                ParamGroup::Embedding,
                glorot(n, self.config.feature_dim, rng),
            )),
            None => None,
        };
        let p1 = LayerParams::init(&self.layer1.config, rng)?;
        self.slots1 = set.push_layer(ParamGroup::Layer1, "layer1", &p1);
        let p2 = LayerParams::init(&self.layer2.config, rng)?;
        self.slots2 = set.push_layer(ParamGroup::Layer2, "layer2", &p2);
        Ok(set)
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        self.clone().build(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn layers(&self) -> [&RgatLayer; 2] {
        [&self.layer1, &self.layer2]
    }

    /// Layer parameters as matrices, for inspection.
    pub fn layer_params(&self, params: &ParamSet, layer: usize) -> LayerParams {
        let slots = if layer == 0 { &self.slots1 } else { &self.slots2 };
        slots.map(&mut |&i| params.values()[i].clone())
    }

    /// Graph as the layers see it (self relation added when configured).
    pub fn prepare(&self, graph: &RelGraph) -> Result<RelGraph> {
        if graph.num_relations() != self.config.num_relations && graph.self_relation().is_none() {
            return Err(Error::RelationCountMismatch {
                expected: self.config.num_relations,
                found: graph.num_relations(),
            });
        }
        let g = add_self_relation(graph, self.config.self_relation)?;
        match (g.features(), self.config.embedding_nodes) {
            (Features::OneHotIndex { .. }, Some(n)) if n == g.num_nodes() => {}
            (Features::Dense(m), None) if m.cols() == self.config.feature_dim => {}
            _ => {
                return Err(Error::DimensionMismatch(
                    "graph features do not match the model input".into(),
                ))
            }
        }
        Ok(g)
    }

    /// Records the forward pass. `graph` must come from [`Self::prepare`]
    /// (possibly with edges removed) and `index` must describe it.
    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &RelGraph,
        index: &EdgeIndex,
        vars: &[Var],
        regime: &mut Regime,
    ) -> Result<ModelOutput> {
        let h0 = match (self.embedding, graph.dense_features()) {
            (Some(slot), _) => vars[slot],
            (None, Some(m)) => tape.constant(m.clone()),
            (None, None) => {
                return Err(Error::DimensionMismatch("model expects dense features".into()))
            }
        };
        let h0 = regime.dropout(tape, h0)?;
        let p1 = self.slots1.map(&mut |&i| vars[i]);
        let out1 = self
            .layer1
            .forward(tape, index, h0, &p1, regime.constant_attention)?;
        let h1 = regime.dropout(tape, out1.output)?;
        let p2 = self.slots2.map(&mut |&i| vars[i]);
        let out2 = self
            .layer2
            .forward(tape, index, h1, &p2, regime.constant_attention)?;
        let probs = tape.group_softmax(out2.output, self.config.num_classes)?;
        Ok(ModelOutput {
            probs,
            attention: vec![out1.heads, out2.heads],
        })
    }

    /// `N × C` class probabilities with dropout disabled.
    pub fn predict(&self, params: &ParamSet, graph: &RelGraph, constant_attention: bool) -> Result<Matrix> {
        let g = self.prepare(graph)?;
        let index = EdgeIndex::new(&g);
        let mut tape = Tape::new();
        let vars = params.register_constants(&mut tape);
        let out = self.forward(&mut tape, &g, &index, &vars, &mut Regime::eval(constant_attention))?;
        Ok(tape.value(out.probs).clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphClassifierConfig {
    pub num_relations: usize,
    pub feature_dim: usize,
    /// Output width of each RGAT layer.
    pub graph_units: usize,
    pub dense_units: usize,
    pub num_tasks: usize,
    pub num_classes: usize,
    pub attention: RgatSettings,
    #[serde(default = "yes")]
    pub self_relation: bool,
}

#[derive(Clone, Debug)]
pub struct GraphClassifier {
    pub config: GraphClassifierConfig,
    layer1: RgatLayer,
    layer2: RgatLayer,
    slots1: LayerParams<usize>,
    slots2: LayerParams<usize>,
    /// `(W, b)` slots of the two dense layers.
    dense: [(usize, usize); 2],
}

impl GraphClassifier {
    pub fn new(config: GraphClassifierConfig) -> Result<Self> {
        if config.num_classes == 0 || config.num_tasks == 0 || config.dense_units == 0 {
            return Err(Error::InvalidConfig(
                "num_tasks, num_classes and dense_units must be positive".into(),
            ));
        }
        let r = config.num_relations + usize::from(config.self_relation);
        let s = &config.attention;
        let layer1 = RgatLayer::new(s.layer(
            r,
            config.feature_dim,
            config.graph_units,
            HeadAggregation::Concat,
            Activation::Relu,
        ))?;
        let layer2 = RgatLayer::new(s.layer(
            r,
            layer1.config.output_dim(),
            config.graph_units,
            HeadAggregation::Concat,
            Activation::Relu,
        ))?;
        let mut model = Self {
            config,
            layer1,
            layer2,
            slots1: no_slots(),
            slots2: no_slots(),
            dense: [(0, 0); 2],
        };
        model.build(&mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(model)
    }

    /// Width of the gathered graph representation.
    pub fn gather_width(&self) -> usize {
        2 * self.layer2.config.output_dim()
    }

    pub fn logit_width(&self) -> usize {
        self.config.num_tasks * self.config.num_classes
    }

    fn build(&mut self, rng: &mut ChaCha8Rng) -> Result<ParamSet> {
        let mut set = ParamSet::default();
        let p1 = LayerParams::init(&self.layer1.config, rng)?;
        self.slots1 = set.push_layer(ParamGroup::Layer1, "layer1", &p1);
        let p2 = LayerParams::init(&self.layer2.config, rng)?;
        self.slots2 = set.push_layer(ParamGroup::Layer2, "layer2", &p2);
        let dims = [
            (self.gather_width(), self.config.dense_units, ParamGroup::Dense1, "dense1"),
            (self.config.dense_units, self.logit_width(), ParamGroup::Dense2, "dense2"),
        ];
        for (d, (fan_in, fan_out, group, name)) in dims.into_iter().enumerate() {
            let w = set.push(format!("{name}.W"), ParamRole::Dense, group, glorot(fan_in, fan_out, rng));
            let b = set.push(format!("{name}.bias"), ParamRole::Bias, group, Matrix::zeros(1, fan_out));
            self.dense[d] = (w, b);
        }
        Ok(set)
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        self.clone().build(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn layers(&self) -> [&RgatLayer; 2] {
        [&self.layer1, &self.layer2]
    }

    pub fn layer_params(&self, params: &ParamSet, layer: usize) -> LayerParams {
        let slots = if layer == 0 { &self.slots1 } else { &self.slots2 };
        slots.map(&mut |&i| params.values()[i].clone())
    }

    pub fn prepare(&self, graph: &RelGraph) -> Result<RelGraph> {
        if graph.num_relations() != self.config.num_relations && graph.self_relation().is_none() {
            return Err(Error::RelationCountMismatch {
                expected: self.config.num_relations,
                found: graph.num_relations(),
            });
        }
        if graph.dense_features().map(Matrix::cols) != Some(self.config.feature_dim) {
            return Err(Error::DimensionMismatch(
                "graph features do not match the model input".into(),
            ));
        }
        add_self_relation(graph, self.config.self_relation)
    }

    /// Records the forward pass over a batch of prepared graphs.
    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &BatchedGraph,
        index: &EdgeIndex,
        vars: &[Var],
        regime: &mut Regime,
    ) -> Result<ModelOutput> {
        let features = batch
            .graph
            .dense_features()
            .ok_or_else(|| Error::DimensionMismatch("model expects dense features".into()))?;
        let h0 = tape.constant(features.clone());
        let h0 = regime.dropout(tape, h0)?;
        let p1 = self.slots1.map(&mut |&i| vars[i]);
        let out1 = self
            .layer1
            .forward(tape, index, h0, &p1, regime.constant_attention)?;
        let h1 = regime.dropout(tape, out1.output)?;
        let p2 = self.slots2.map(&mut |&i| vars[i]);
        let out2 = self
            .layer2
            .forward(tape, index, h1, &p2, regime.constant_attention)?;

        let gathered = graph_gather_on(tape, out2.output, &batch.segment, batch.graph_count)?;
        let g = tape.tanh(gathered);
        let (w1, b1) = self.dense[0];
        let d1 = tape.matmul(g, vars[w1])?;
        let d1 = tape.add_row(d1, vars[b1])?;
        let d1 = tape.relu(d1);
        let (w2, b2) = self.dense[1];
        let logits = tape.matmul(d1, vars[w2])?;
        let logits = tape.add_row(logits, vars[b2])?;
        let probs = tape.group_softmax(logits, self.config.num_classes)?;
        Ok(ModelOutput {
            probs,
            attention: vec![out1.heads, out2.heads],
        })
    }

    /// `graphs × (T·C)` probabilities for raw (unprepared) graphs.
    pub fn predict(&self, params: &ParamSet, graphs: &[&RelGraph], constant_attention: bool) -> Result<Matrix> {
        let prepared: Vec<RelGraph> = graphs.iter().map(|g| self.prepare(g)).collect::<Result<_>>()?;
        let refs: Vec<&RelGraph> = prepared.iter().collect();
        let batch = crate::graph::batch_graphs(&refs)?;
        let index = EdgeIndex::new(&batch.graph);
        let mut tape = Tape::new();
        let vars = params.register_constants(&mut tape);
        let out = self.forward(&mut tape, &batch, &index, &vars, &mut Regime::eval(constant_attention))?;
        Ok(tape.value(out.probs).clone())
    }
}

fn check_segments(segments: &[usize], num_graphs: usize) -> Result<Index> {
    let counts = tensor::segment_counts(segments, num_graphs);
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptySegment(g));
    }
    Ok(Arc::from(segments))
}

fn graph_gather_on(tape: &mut Tape, h: Var, segments: &[usize], num_graphs: usize) -> Result<Var> {
    let segs = check_segments(segments, num_graphs)?;
    let mean = tape.segment_mean(h, segs.clone(), num_graphs)?;
    let max = tape.segment_max(h, segs, num_graphs)?;
    tape.concat_cols(&[mean, max])
}

/// Per-graph `mean ⊕ max` of node rows, before the tanh.
pub fn graph_gather(h: &Matrix, segments: &[usize], num_graphs: usize) -> Result<Matrix> {
    if segments.len() != h.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} segment ids for {} rows",
            segments.len(),
            h.rows()
        )));
    }
    check_segments(segments, num_graphs)?;
    let mean = tensor::segment_reduce(h, segments, num_graphs, tensor::Reduce::Mean)?;
    let max = tensor::segment_reduce(h, segments, num_graphs, tensor::Reduce::Max)?;
    Matrix::hcat(&[&mean, &max])
}

/// `−Σ_{(i, y)} ln ŷ_{i,y}` over the supervised `(node, class)` pairs.
pub fn masked_cross_entropy(tape: &mut Tape, probs: Var, labels: &[(usize, usize)]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::NoSupervisedNodes);
    }
    let (n, c) = tape.shape(probs);
    let mut entries = Vec::with_capacity(labels.len());
    for &(node, class) in labels {
        if node >= n || class >= c {
            return Err(Error::IndexOutOfRange {
                what: "supervised entry",
                index: node * c + class,
                limit: n * c,
            });
        }
        entries.push(node * c + class);
    }
    let picked = tape.pick(probs, Arc::from(entries))?;
    let logs = tape.ln(picked);
    let total = tape.sum(logs);
    Ok(tape.scale(total, -1.0))
}

/// `−Σ_g Σ_t w_{t,y} ln ŷ_{g,t,y}` over valid task entries.
///
/// `probs` is `graphs × (T·C)`; `targets[g]` labels row `g`.
pub fn weighted_cross_entropy(
    tape: &mut Tape,
    probs: Var,
    targets: &[&GraphTargets],
    weights: &Matrix,
) -> Result<Var> {
    if let Some(&w) = weights.data().iter().find(|&&w| w < 0.0 || w.is_nan()) {
        return Err(Error::NegativeWeight(w));
    }
    let (t, c) = weights.shape();
    let (rows, cols) = tape.shape(probs);
    if rows != targets.len() || cols != t * c {
        return Err(Error::DimensionMismatch(format!(
            "probabilities {rows}x{cols} for {} graphs with {t} tasks of {c} classes",
            targets.len()
        )));
    }
    let mut entries = Vec::new();
    let mut w = Vec::new();
    for (g, target) in targets.iter().enumerate() {
        if target.targets.len() != t {
            return Err(Error::DimensionMismatch("target task count".into()));
        }
        for (task, y) in target.targets.iter().enumerate() {
            if let Some(y) = *y {
                if y >= c {
                    return Err(Error::IndexOutOfRange {
                        what: "class",
                        index: y,
                        limit: c,
                    });
                }
                entries.push(g * cols + task * c + y);
                w.push(weights.get(task, y));
            }
        }
    }
    if entries.is_empty() {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let picked = tape.pick(probs, Arc::from(entries))?;
    let logs = tape.ln(picked);
    let weighted = tape.mul_const(logs, Matrix::column(w))?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0))
}

/// Inverse class frequency over `indices`, normalised to mean 1 per task.
///
/// Classes absent from `indices` get weight 0; a task with no valid labels
/// gets all-ones.
pub fn default_class_weights(
    targets: &[GraphTargets],
    indices: &[usize],
    num_tasks: usize,
    num_classes: usize,
) -> Matrix {
    let mut w = Matrix::zeros(num_tasks, num_classes);
    for t in 0..num_tasks {
        let mut counts = vec![0usize; num_classes];
        for &g in indices {
            if let Some(Some(y)) = targets.get(g).and_then(|tg| tg.targets.get(t)) {
                counts[*y] += 1;
            }
        }
        let inv: Vec<f64> = counts
            .iter()
            .map(|&n| if n > 0 { 1.0 / n as f64 } else { 0.0 })
            .collect();
        let total: f64 = inv.iter().sum();
        for (c, &v) in inv.iter().enumerate() {
            let value = if total > 0.0 {
                v * num_classes as f64 / total
            } else {
                1.0
            };
            w.set(t, c, value);
        }
    }
    w
}

/// Either task architecture, as stored in configs and checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum ModelConfig {
    NodeClassifier(NodeClassifierConfig),
    GraphClassifier(GraphClassifierConfig),
}

#[derive(Clone, Debug)]
pub enum Model {
    Node(NodeClassifier),
    Graph(GraphClassifier),
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        Ok(match config {
            ModelConfig::NodeClassifier(c) => Model::Node(NodeClassifier::new(c.clone())?),
            ModelConfig::GraphClassifier(c) => Model::Graph(GraphClassifier::new(c.clone())?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Node(m) => ModelConfig::NodeClassifier(m.config.clone()),
            Model::Graph(m) => ModelConfig::GraphClassifier(m.config.clone()),
        }
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        match self {
            Model::Node(m) => m.init_params(seed),
            Model::Graph(m) => m.init_params(seed),
        }
    }
}

const CHECKPOINT_FORMAT: &str = "rgat-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub format_version: u32,
    pub provenance: Provenance,
    pub model: ModelConfig,
    /// File name of the parameter blob, relative to the manifest.
    pub binary: String,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `path` (JSON manifest) and a sibling `.bin` file holding every
/// parameter as little-endian f64 in declaration order.
pub fn save_checkpoint(
    path: &Path,
    model: &ModelConfig,
    params: &ParamSet,
    provenance: &Provenance,
) -> Result<()> {
    let bin_path = path.with_extension("bin");
    let binary = bin_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidConfig(format!("bad checkpoint path {}", path.display())))?
        .to_string();
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        format_version: CHECKPOINT_VERSION,
        provenance: provenance.clone(),
        model: model.clone(),
        binary,
        tensors: params
            .specs()
            .iter()
            .zip(params.values())
            .map(|(s, m)| TensorEntry {
                name: s.name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let mut bytes = Vec::with_capacity(params.num_scalars() * 8);
    for m in params.values() {
        for v in m.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(&bin_path)?.write_all(&bytes)?;
    fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, ParamSet, CheckpointManifest)> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Malformed(format!(
            "unsupported checkpoint format {} v{}",
            manifest.format, manifest.format_version
        )));
    }
    let model = Model::new(&manifest.model)?;
    let mut params = model.init_params(0)?;
    let bin_path = path.with_file_name(&manifest.binary);
    let bytes = fs::read(&bin_path)?;
    if bytes.len() != params.num_scalars() * 8 {
        return Err(Error::Malformed(format!(
            "{} holds {} bytes, expected {}",
            bin_path.display(),
            bytes.len(),
            params.num_scalars() * 8
        )));
    }
    if manifest.tensors.len() != params.len() {
        return Err(Error::Malformed("tensor listing does not match the model".into()));
    }
    let mut values = Vec::with_capacity(params.len());
    let mut offset = 0;
    for ((entry, spec), old) in manifest.tensors.iter().zip(params.specs()).zip(params.values()) {
        if entry.name != spec.name || (entry.rows, entry.cols) != old.shape() {
            return Err(Error::Malformed(format!("tensor {} does not match the model", entry.name)));
        }
        let n = entry.rows * entry.cols;
        let data = bytes[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset += n * 8;
        values.push(Matrix::new(entry.rows, entry.cols, data)?);
    }
    params.set_values(values)?;
    Ok((model, params, manifest))
}

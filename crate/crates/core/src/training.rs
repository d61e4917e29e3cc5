//! Optimisation, regularisation, early stopping and evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, Dataset, GraphTargets, RelGraph};
use crate::layer::{EdgeIndex, ParamRole};
use crate::models::{
    default_class_weights, dropout_mask, masked_cross_entropy, weighted_cross_entropy, Model,
    ParamGroup, ParamSet, Regime,
};
use crate::provenance::Provenance;
use crate::tensor::Matrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// L2 coefficients per graph layer, for `W` kernels and attention kernels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L2Coefficients {
    pub layer1_kernel: f64,
    pub layer1_attention: f64,
    pub layer2_kernel: f64,
    pub layer2_attention: f64,
}

impl L2Coefficients {
    /// Coefficient applied to a tensor; biases, coefficients tables, dense
    /// layers and embeddings are not penalised.
    pub fn for_param(&self, group: ParamGroup, role: ParamRole) -> f64 {
        match (group, role) {
            (ParamGroup::Layer1, ParamRole::Kernel) => self.layer1_kernel,
            (ParamGroup::Layer1, ParamRole::Attention) => self.layer1_attention,
            (ParamGroup::Layer2, ParamRole::Kernel) => self.layer2_kernel,
            (ParamGroup::Layer2, ParamRole::Attention) => self.layer2_attention,
            _ => 0.0,
        }
    }
}

fn default_epochs() -> usize {
    200
}

fn default_patience() -> Option<usize> {
    Some(30)
}

fn default_batch() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; `None` never stops early.
    #[serde(default = "default_patience")]
    pub patience: Option<usize>,
    #[serde(default)]
    pub feature_dropout: f64,
    #[serde(default)]
    pub edge_dropout: f64,
    #[serde(default)]
    pub l2: L2Coefficients,
    #[serde(default)]
    pub seed: u64,
    /// Graphs per optimizer step (inductive only).
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl TrainConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            max_epochs: default_epochs(),
            patience: default_patience(),
            feature_dropout: 0.0,
            edge_dropout: 0.0,
            l2: L2Coefficients::default(),
            seed: 0,
            batch_size: default_batch(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        for (name, r) in [("feature", self.feature_dropout), ("edge", self.edge_dropout)] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} dropout rate {r} outside [0, 1)"));
            }
        }
        let l2 = &self.l2;
        for c in [l2.layer1_kernel, l2.layer1_attention, l2.layer2_kernel, l2.layer2_attention] {
            if !(c.is_finite() && c >= 0.0) {
                return bad(format!("L2 coefficient {c} must be non-negative"));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        Ok(())
    }
}

/// Adam moment estimates for a parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected Adam update. Fails without touching anything if a
    /// gradient is non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((theta, &gi), (mi, vi)) in it {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")))
    }
}

/// Inverted feature dropout: returns the dropped matrix and the scaled mask.
pub fn feature_dropout(h: &Matrix, rate: f64, rng: &mut dyn RngCore) -> Result<(Matrix, Matrix)> {
    check_rate(rate)?;
    let mask = dropout_mask(h.rows(), h.cols(), rate, rng);
    Ok((h.zip_map(&mask, |a, b| a * b)?, mask))
}

/// Removes each edge independently with probability `rate`. Returns the
/// reduced graph and the keep flags in canonical edge order.
pub fn edge_dropout(graph: &RelGraph, rate: f64, rng: &mut dyn RngCore) -> Result<(RelGraph, Vec<bool>)> {
    check_rate(rate)?;
    let keep: Vec<bool> = (0..graph.num_edges())
        .map(|_| rate == 0.0 || rand::Rng::random::<f64>(rng) >= rate)
        .collect();
    Ok((graph.filter_edges(&keep)?, keep))
}

/// Fraction of concordant (positive, negative) pairs, ties counted one half.
///
/// `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    if scores.len() != labels.len() {
        return None;
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Walk tie groups in increasing score order.
    let mut negatives_below = 0usize;
    let mut concordant = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..j].iter().filter(|&&k| labels[k]).count();
        let group_neg = (j - i) - group_pos;
        concordant += group_pos as f64 * (negatives_below as f64 + 0.5 * group_neg as f64);
        negatives_below += group_neg;
        i = j;
    }
    Some(concordant / (pos as f64 * neg as f64))
}

/// `k` (train, validation) pairs over a seeded shuffle of `indices`.
/// Validation folds are disjoint, cover every index, and differ in size by at most one.
pub fn kfold_split(indices: &[usize], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k = {k}; need at least 2 folds")));
    }
    if k > indices.len() {
        return Err(Error::InvalidConfig(format!(
            "{k} folds for {} items",
            indices.len()
        )));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (shuffled.len() / k, shuffled.len() % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut val = shuffled[start..start + len].to_vec();
        let mut train: Vec<usize> = shuffled[..start]
            .iter()
            .chain(&shuffled[start + len..])
            .copied()
            .collect();
        val.sort_unstable();
        train.sort_unstable();
        out.push((train, val));
        start += len;
    }
    Ok(out)
}

/// Evaluation summary on one index set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Cross-entropy without penalties (class-weighted for graph tasks).
    pub loss: f64,
    pub accuracy: f64,
    /// Per-task ROC-AUC for binary graph tasks; `None` where a task is single-class.
    pub task_auc: Vec<Option<f64>>,
    /// Mean over tasks with a defined AUC.
    pub mean_auc: Option<f64>,
}

impl Metrics {
    /// Value watched by early stopping: mean AUC when defined, else accuracy.
    pub fn monitored(&self) -> f64 {
        self.mean_auc.unwrap_or(self.accuracy)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn class_weights(data: &Dataset, train: &[usize]) -> Option<Matrix> {
    match data {
        Dataset::Inductive {
            targets,
            num_tasks,
            num_classes,
            class_weights,
            ..
        } => Some(
            class_weights
                .clone()
                .unwrap_or_else(|| default_class_weights(targets, train, *num_tasks, *num_classes)),
        ),
        Dataset::Transductive { .. } => None,
    }
}

const EVAL_CHUNK: usize = 64;

/// Evaluates with dropout disabled. With `constant_attention` every layer
/// uses uniform coefficients while keeping the trained kernels.
pub fn evaluate(
    model: &Model,
    params: &ParamSet,
    data: &Dataset,
    indices: &[usize],
    constant_attention: bool,
) -> Result<Metrics> {
    let weights = class_weights(data, &data.split().train);
    evaluate_with(model, params, data, indices, constant_attention, weights.as_ref())
}

fn evaluate_with(
    model: &Model,
    params: &ParamSet,
    data: &Dataset,
    indices: &[usize],
    constant_attention: bool,
    weights: Option<&Matrix>,
) -> Result<Metrics> {
    match (model, data) {
        (
            Model::Node(m),
            Dataset::Transductive {
                graph, labels, ..
            },
        ) => {
            let probs = m.predict(params, graph, constant_attention)?;
            let label_of: BTreeMap<usize, usize> = labels.iter().copied().collect();
            let mut correct = 0usize;
            let mut loss = 0.0;
            let mut count = 0usize;
            for &i in indices {
                let Some(&y) = label_of.get(&i) else { continue };
                if i >= probs.rows() {
                    return Err(Error::IndexOutOfRange {
                        what: "node",
                        index: i,
                        limit: probs.rows(),
                    });
                }
                count += 1;
                correct += usize::from(argmax(probs.row(i)) == y);
                loss -= probs.get(i, y).ln();
            }
            Ok(Metrics {
                loss,
                accuracy: if count == 0 { 0.0 } else { correct as f64 / count as f64 },
                task_auc: Vec::new(),
                mean_auc: None,
            })
        }
        (
            Model::Graph(m),
            Dataset::Inductive {
                graphs,
                targets,
                num_tasks,
                num_classes,
                ..
            },
        ) => {
            let (t, c) = (*num_tasks, *num_classes);
            let mut correct = 0usize;
            let mut count = 0usize;
            let mut loss = 0.0;
            let mut scores: Vec<Vec<(f64, bool)>> = vec![Vec::new(); t];
            for chunk in indices.chunks(EVAL_CHUNK) {
                let gs: Vec<&RelGraph> = chunk.iter().map(|&g| &graphs[g]).collect();
                let probs = m.predict(params, &gs, constant_attention)?;
                for (row, &g) in chunk.iter().enumerate() {
                    for (task, y) in targets[g].targets.iter().enumerate() {
                        let Some(y) = *y else { continue };
                        let p = &probs.row(row)[task * c..(task + 1) * c];
                        count += 1;
                        correct += usize::from(argmax(p) == y);
                        let w = weights.map_or(1.0, |w| w.get(task, y));
                        loss -= w * p[y].ln();
                        if c == 2 {
                            scores[task].push((p[1], y == 1));
                        }
                    }
                }
            }
            let task_auc: Vec<Option<f64>> = if c == 2 {
                scores
                    .iter()
                    .enumerate()
                    .map(|(task, s)| {
                        let (sc, lb): (Vec<f64>, Vec<bool>) = s.iter().copied().unzip();
                        let auc = roc_auc(&sc, &lb);
                        if auc.is_none() && !s.is_empty() {
                            log::warn!("task {task} has a single class; AUC excluded");
                        }
                        auc
                    })
                    .collect()
            } else {
                vec![None; t]
            };
            let defined: Vec<f64> = task_auc.iter().flatten().copied().collect();
            let mean_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            Ok(Metrics {
                loss,
                accuracy: if count == 0 { 0.0 } else { correct as f64 / count as f64 },
                task_auc,
                mean_auc,
            })
        }
        _ => Err(Error::InvalidConfig(
            "model task does not match the dataset kind".into(),
        )),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training objective including L2 penalties, summed over the epoch.
    pub loss: f64,
    pub train: Metrics,
    pub validation: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best monitored validation metric.
    pub params: ParamSet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

fn l2_penalty(tape: &mut Tape, params: &ParamSet, vars: &[Var], l2: &L2Coefficients) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for (spec, &v) in params.specs().iter().zip(vars) {
        let coef = l2.for_param(spec.group, spec.role);
        if coef == 0.0 {
            continue;
        }
        let sq = tape.sum_squares(v);
        let term = tape.scale(sq, coef);
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total)
}

/// Optimizer state plus the dropout rng.
struct Stepper<'a> {
    cfg: &'a TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
}

impl Stepper<'_> {
    /// One optimisation step on a prepared graph; returns the objective value.
    fn step(
        &mut self,
        params: &mut ParamSet,
        loss_fn: &mut dyn FnMut(&mut Tape, &[Var], &mut Regime, &EdgeIndex) -> Result<Var>,
        graph: &RelGraph,
    ) -> Result<f64> {
        let index = if self.cfg.edge_dropout > 0.0 {
            EdgeIndex::new(&edge_dropout(graph, self.cfg.edge_dropout, &mut self.rng)?.0)
        } else {
            EdgeIndex::new(graph)
        };
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let mut regime = Regime {
            constant_attention: false,
            feature_dropout: Some((self.cfg.feature_dropout, &mut self.rng)),
        };
        let data_loss = loss_fn(&mut tape, &vars, &mut regime, &index)?;
        let loss = match l2_penalty(&mut tape, params, &vars, &self.cfg.l2)? {
            Some(p) => tape.add(data_loss, p)?,
            None => data_loss,
        };
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Matrix> = vars.iter().map(|&v| grads.wrt(v).clone()).collect();
        self.adam.step(params.values_mut(), &g, self.cfg.learning_rate)?;
        Ok(value)
    }
}

/// Trains from a seeded initialisation.
pub fn train(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let params = model.init_params(cfg.seed)?;
    train_from(model, params, data, cfg)
}

/// Trains starting from `params`, using the dataset's split. Early stopping
/// watches validation accuracy (node tasks) or mean validation AUC (graph
/// tasks); with an empty validation set it watches the training metric.
pub fn train_from(model: &Model, mut params: ParamSet, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let split = data.split().clone();
    if split.train.is_empty() {
        return Err(Error::NoSupervisedNodes);
    }
    let weights = class_weights(data, &split.train);
    let mut stepper = Stepper {
        cfg,
        adam: AdamState::new(params.values()),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a1d_c0de),
    };

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut waited = 0usize;

    let prepared_node;
    let prepared_graphs: Vec<RelGraph>;
    let train_labels: Vec<(usize, usize)>;
    match (model, data) {
        (Model::Node(m), Dataset::Transductive { graph, labels, .. }) => {
            prepared_node = Some(m.prepare(graph)?);
            prepared_graphs = Vec::new();
            let wanted: std::collections::BTreeSet<usize> = split.train.iter().copied().collect();
            train_labels = labels.iter().copied().filter(|(n, _)| wanted.contains(n)).collect();
            if train_labels.is_empty() {
                return Err(Error::NoSupervisedNodes);
            }
        }
        (Model::Graph(m), Dataset::Inductive { graphs, .. }) => {
            prepared_node = None;
            prepared_graphs = graphs.iter().map(|g| m.prepare(g)).collect::<Result<_>>()?;
            train_labels = Vec::new();
        }
        _ => {
            return Err(Error::InvalidConfig(
                "model task does not match the dataset kind".into(),
            ))
        }
    }

    for epoch in 0..cfg.max_epochs {
        let mut epoch_loss = 0.0;
        match (model, data) {
            (Model::Node(m), _) => {
                let graph = prepared_node.as_ref().expect("node task");
                epoch_loss += stepper.step(
                    &mut params,
                    &mut |tape, vars, regime, index| {
                        let out = m.forward(tape, graph, index, vars, regime)?;
                        masked_cross_entropy(tape, out.probs, &train_labels)
                    },
                    graph,
                )?;
            }
            (Model::Graph(m), Dataset::Inductive { targets, .. }) => {
                let mut order = split.train.clone();
                order.shuffle(&mut stepper.rng);
                let weights = weights.as_ref().expect("graph task");
                for chunk in order.chunks(cfg.batch_size) {
                    let gs: Vec<&RelGraph> = chunk.iter().map(|&g| &prepared_graphs[g]).collect();
                    let batch = batch_graphs(&gs)?;
                    let tg: Vec<&GraphTargets> = chunk.iter().map(|&g| &targets[g]).collect();
                    let batch_ref = &batch;
                    epoch_loss += stepper.step(
                        &mut params,
                        &mut |tape, vars, regime, index| {
                            let out = m.forward(tape, batch_ref, index, vars, regime)?;
                            weighted_cross_entropy(tape, out.probs, &tg, weights)
                        },
                        &batch.graph,
                    )?;
                }
            }
            _ => unreachable!("checked above"),
        }

        let train_metrics = evaluate_with(model, &params, data, &split.train, false, weights.as_ref())?;
        let validation = if split.validation.is_empty() {
            None
        } else {
            Some(evaluate_with(model, &params, data, &split.validation, false, weights.as_ref())?)
        };
        let monitored = validation.as_ref().unwrap_or(&train_metrics).monitored();
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            train: train_metrics,
            validation,
        });

        if best.as_ref().is_none_or(|(b, _, _)| monitored > *b) {
            best = Some((monitored, epoch, params.clone()));
            waited = 0;
        } else {
            waited += 1;
            if cfg.patience.is_some_and(|p| waited >= p) {
                break;
            }
        }
    }

    let (best_metric, best_epoch, params) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
        best_metric,
    })
}

/// One JSON-lines metric record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub trial: u64,
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
    #[serde(flatten)]
    pub provenance: Provenance,
}

fn metric_records(trial: u64, epoch: usize, split: &str, m: &Metrics, prov: &Provenance, out: &mut Vec<MetricRecord>) {
    let mut push = |metric: String, value: f64| {
        out.push(MetricRecord {
            trial,
            epoch,
            split: split.to_string(),
            metric,
            value,
            provenance: prov.clone(),
        })
    };
    push("loss".into(), m.loss);
    push("accuracy".into(), m.accuracy);
    for (t, auc) in m.task_auc.iter().enumerate() {
        if let Some(a) = auc {
            push(format!("auc_task_{t}"), *a);
        }
    }
    if let Some(a) = m.mean_auc {
        push("mean_auc".into(), a);
    }
}

/// Flattens a training history into metric records.
pub fn history_records(trial: u64, history: &[EpochRecord], prov: &Provenance) -> Vec<MetricRecord> {
    let mut out = Vec::new();
    for rec in history {
        out.push(MetricRecord {
            trial,
            epoch: rec.epoch,
            split: "train".into(),
            metric: "objective".into(),
            value: rec.loss,
            provenance: prov.clone(),
        });
        metric_records(trial, rec.epoch, "train", &rec.train, prov, &mut out);
        if let Some(v) = &rec.validation {
            metric_records(trial, rec.epoch, "validation", v, prov, &mut out);
        }
    }
    out
}

/// Records for a single evaluation (e.g. final test metrics).
pub fn evaluation_records(trial: u64, epoch: usize, split: &str, m: &Metrics, prov: &Provenance) -> Vec<MetricRecord> {
    let mut out = Vec::new();
    metric_records(trial, epoch, split, m, prov, &mut out);
    out
}

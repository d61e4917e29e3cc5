//! Relational graph attention layers.
//!
//! For every head `k` and relation `r` a node's intermediate representation is
//! `g_i = h_i · W^(r,k)`. Queries and keys come from the attention kernel
//! `A^(r,k)`, whose first `F′` rows are the query kernel and last `F′` rows the
//! key kernel. Logits are either additive, `leaky_relu(q_i + k_j)` with scalar
//! queries and keys, or multiplicative, the unscaled dot product `q_i · k_j`.
//!
//! Normalisation decides which logits compete:
//!
//! * [`NormKind::Wirgat`]: one softmax per `(target, relation)` pair.
//! * [`NormKind::Argat`]: one softmax per target, pooling all relations.
//!
//! With constant attention the learned coefficients are replaced by a uniform
//! distribution over the same support, which for WIRGAT gives the RGCN
//! coefficients `1 / |N_i^(r)|`.
//!
//! Each head aggregates `Σ_r Σ_j α_ij^(r,k) g_j^(r,k)`, adds an optional bias,
//! applies the activation, and heads are concatenated or averaged.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Index, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::RelGraph;
use crate::tensor::{self, Matrix};

/// Negative slope of the leaky relu in additive logits.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitMode {
    Additive,
    Multiplicative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Wirgat,
    Argat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadAggregation {
    Concat,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply_value(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// How attention coefficients are produced for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionPlan {
    pub logit_mode: LogitMode,
    pub norm: NormKind,
    /// Uniform coefficients over the softmax support (C-WIRGAT / C-ARGAT).
    pub constant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub num_relations: usize,
    pub input_dim: usize,
    /// Output width. For concatenated heads each head gets `units / heads`.
    pub units: usize,
    pub heads: usize,
    /// Query/key width `D`; must be 1 for additive logits.
    pub query_dim: usize,
    pub logit_mode: LogitMode,
    pub norm: NormKind,
    pub head_agg: HeadAggregation,
    pub activation: Activation,
    pub use_bias: bool,
    /// Number of shared `W` basis matrices; `None` keeps one kernel per (r, k).
    pub kernel_basis: Option<usize>,
    /// Number of shared attention basis matrices; `None` for full kernels.
    pub attention_basis: Option<usize>,
}

impl LayerConfig {
    pub fn units_per_head(&self) -> usize {
        match self.head_agg {
            HeadAggregation::Concat => self.units / self.heads.max(1),
            HeadAggregation::Mean => self.units,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.head_agg {
            HeadAggregation::Concat => self.units_per_head() * self.heads,
            HeadAggregation::Mean => self.units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.heads == 0 || self.units == 0 || self.input_dim == 0 || self.query_dim == 0 {
            return bad("heads, units, input_dim and query_dim must be positive".into());
        }
        if self.num_relations == 0 {
            return bad("layer needs at least one relation".into());
        }
        if self.head_agg == HeadAggregation::Concat && self.units % self.heads != 0 {
            return bad(format!(
                "{} units do not split evenly over {} heads",
                self.units, self.heads
            ));
        }
        if self.logit_mode == LogitMode::Additive && self.query_dim != 1 {
            return bad(format!(
                "additive logits need query_dim 1, got {}",
                self.query_dim
            ));
        }
        if self.kernel_basis == Some(0) || self.attention_basis == Some(0) {
            return bad("basis sizes must be at least 1".into());
        }
        Ok(())
    }

    pub fn plan(&self, constant: bool) -> AttentionPlan {
        AttentionPlan {
            logit_mode: self.logit_mode,
            norm: self.norm,
            constant,
        }
    }
}

/// One kernel per `(relation, head)`, or a shared basis with coefficients.
///
/// Kernel `(r, k)` lives at slot `r * heads + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Kernels<T = Matrix> {
    Full(Vec<T>),
    Basis {
        bases: Vec<T>,
        /// `(R·K) × B` coefficient table.
        coeffs: T,
    },
}

impl<T> Kernels<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Kernels<U> {
        match self {
            Kernels::Full(ks) => Kernels::Full(ks.iter().map(&mut *f).collect()),
            Kernels::Basis { bases, coeffs } => Kernels::Basis {
                bases: bases.iter().map(&mut *f).collect(),
                coeffs: f(coeffs),
            },
        }
    }

    fn visit<'a>(&'a self, name: &str, role: ParamRole, coeff_role: ParamRole, out: &mut Vec<(String, ParamRole, &'a T)>) {
        match self {
            Kernels::Full(ks) => {
                for (i, k) in ks.iter().enumerate() {
                    out.push((format!("{name}[{i}]"), role, k));
                }
            }
            Kernels::Basis { bases, coeffs } => {
                for (b, m) in bases.iter().enumerate() {
                    out.push((format!("{name}.basis[{b}]"), role, m));
                }
                out.push((format!("{name}.coeffs"), coeff_role, coeffs));
            }
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        match self {
            Kernels::Full(ks) => out.extend(ks.iter_mut()),
            Kernels::Basis { bases, coeffs } => {
                out.extend(bases.iter_mut());
                out.push(coeffs);
            }
        }
    }
}

impl Kernels<Matrix> {
    /// Value of kernel slot `slot`: `Σ_b c[slot, b] · basis_b` for bases.
    pub fn compose(&self, slot: usize) -> Result<Matrix> {
        match self {
            Kernels::Full(ks) => ks.get(slot).cloned().ok_or(Error::IndexOutOfRange {
                what: "kernel slot",
                index: slot,
                limit: ks.len(),
            }),
            Kernels::Basis { bases, coeffs } => {
                let first = bases
                    .first()
                    .ok_or_else(|| Error::Degenerate("empty basis".into()))?;
                if slot >= coeffs.rows() {
                    return Err(Error::IndexOutOfRange {
                        what: "kernel slot",
                        index: slot,
                        limit: coeffs.rows(),
                    });
                }
                if coeffs.cols() != bases.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} coefficients per slot for {} basis matrices",
                        coeffs.cols(),
                        bases.len()
                    )));
                }
                let mut out = Matrix::zeros(first.rows(), first.cols());
                for (b, m) in bases.iter().enumerate() {
                    if m.shape() != first.shape() {
                        return Err(Error::ShapeMismatch {
                            op: "basis",
                            left: first.shape(),
                            right: m.shape(),
                        });
                    }
                    out.axpy(coeffs.get(slot, b), m);
                }
                Ok(out)
            }
        }
    }

    fn check(&self, slots: usize, shape: (usize, usize), what: &str) -> Result<()> {
        let mismatch = |found: (usize, usize)| {
            Err(Error::DimensionMismatch(format!(
                "{what} has shape {found:?}, expected {shape:?}"
            )))
        };
        match self {
            Kernels::Full(ks) => {
                if ks.len() != slots {
                    return Err(Error::DimensionMismatch(format!(
                        "{} {what} kernels for {slots} (relation, head) slots",
                        ks.len()
                    )));
                }
                for k in ks {
                    if k.shape() != shape {
                        return mismatch(k.shape());
                    }
                }
            }
            Kernels::Basis { bases, coeffs } => {
                if bases.is_empty() {
                    return Err(Error::Degenerate(format!("{what} basis is empty")));
                }
                for b in bases {
                    if b.shape() != shape {
                        return mismatch(b.shape());
                    }
                }
                if coeffs.shape() != (slots, bases.len()) {
                    return mismatch(coeffs.shape());
                }
            }
        }
        Ok(())
    }
}

impl Kernels<Var> {
    fn compose_on(&self, tape: &mut Tape, slot: usize) -> Result<Var> {
        match self {
            Kernels::Full(ks) => Ok(ks[slot]),
            Kernels::Basis { bases, coeffs } => {
                let mut acc = tape.scale_by_entry(*coeffs, slot, 0, bases[0])?;
                for (b, &m) in bases.iter().enumerate().skip(1) {
                    let term = tape.scale_by_entry(*coeffs, slot, b, m)?;
                    acc = tape.add(acc, term)?;
                }
                Ok(acc)
            }
        }
    }
}

/// What a parameter tensor is, for regularisation and reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Kernel,
    KernelCoeff,
    Attention,
    AttentionCoeff,
    Bias,
    Dense,
    Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams<T = Matrix> {
    pub kernels: Kernels<T>,
    pub attention: Kernels<T>,
    /// `K × F′`, one bias row per head.
    pub bias: Option<T>,
}

impl<T> LayerParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LayerParams<U> {
        LayerParams {
            kernels: self.kernels.map(f),
            attention: self.attention.map(f),
            bias: self.bias.as_ref().map(f),
        }
    }

    /// Tensors in declaration order with their names and roles.
    pub fn tensors(&self, prefix: &str) -> Vec<(String, ParamRole, &T)> {
        let mut out = Vec::new();
        self.kernels
            .visit(&format!("{prefix}.W"), ParamRole::Kernel, ParamRole::KernelCoeff, &mut out);
        self.attention.visit(
            &format!("{prefix}.A"),
            ParamRole::Attention,
            ParamRole::AttentionCoeff,
            &mut out,
        );
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), ParamRole::Bias, b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.kernels.visit_mut(&mut out);
        self.attention.visit_mut(&mut out);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
        out
    }
}

/// `Uniform(−s, s)` with `s = √(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-s..=s)).collect();
    Matrix::new(rows, cols, data).expect("sized")
}

impl LayerParams<Matrix> {
    pub fn init(cfg: &LayerConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let slots = cfg.num_relations * cfg.heads;
        let (f, fp, d) = (cfg.input_dim, cfg.units_per_head(), cfg.query_dim);
        let make = |basis: Option<usize>, rows: usize, cols: usize, rng: &mut dyn FnMut(usize, usize) -> Matrix| {
            match basis {
                None => Kernels::Full((0..slots).map(|_| rng(rows, cols)).collect()),
                Some(b) => Kernels::Basis {
                    bases: (0..b).map(|_| rng(rows, cols)).collect(),
                    coeffs: rng(slots, b),
                },
            }
        };
        let mut draw = |r: usize, c: usize| glorot(r, c, rng);
        let kernels = make(cfg.kernel_basis, f, fp, &mut draw);
        let attention = make(cfg.attention_basis, 2 * fp, d, &mut draw);
        let bias = cfg.use_bias.then(|| Matrix::zeros(cfg.heads, fp));
        Ok(Self {
            kernels,
            attention,
            bias,
        })
    }

    pub fn validate(&self, cfg: &LayerConfig) -> Result<()> {
        cfg.validate()?;
        let slots = cfg.num_relations * cfg.heads;
        let fp = cfg.units_per_head();
        self.kernels.check(slots, (cfg.input_dim, fp), "W")?;
        self.attention.check(slots, (2 * fp, cfg.query_dim), "A")?;
        match (&self.bias, cfg.use_bias) {
            (Some(b), true) if b.shape() == (cfg.heads, fp) => Ok(()),
            (None, false) => Ok(()),
            _ => Err(Error::DimensionMismatch("bias does not match use_bias/heads".into())),
        }
    }

    /// Sets every attention kernel (and basis) to zero.
    pub fn zero_attention(&mut self) {
        let mut ms = Vec::new();
        self.attention.visit_mut(&mut ms);
        for m in ms {
            m.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// `(W^(r,k), A^(r,k))` with basis decompositions expanded.
pub fn compose_kernels(
    params: &LayerParams,
    cfg: &LayerConfig,
    r: usize,
    k: usize,
) -> Result<(Matrix, Matrix)> {
    if r >= cfg.num_relations || k >= cfg.heads {
        return Err(Error::IndexOutOfRange {
            what: "(relation, head)",
            index: r * cfg.heads + k,
            limit: cfg.num_relations * cfg.heads,
        });
    }
    let slot = r * cfg.heads + k;
    Ok((params.kernels.compose(slot)?, params.attention.compose(slot)?))
}

/// Edge bookkeeping shared by every head of a layer.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    num_nodes: usize,
    num_relations: usize,
    /// Relations that carry at least one edge, with their edge endpoints.
    relations: Vec<(usize, Index, Index)>,
    /// Targets of all edges in canonical order.
    targets: Index,
    wirgat_segments: Index,
    /// `1 / |support|` per edge, for both normalisations.
    uniform_wirgat: Vec<f64>,
    uniform_argat: Vec<f64>,
}

impl EdgeIndex {
    pub fn new(graph: &RelGraph) -> Self {
        let (n, r_count) = (graph.num_nodes(), graph.num_relations());
        let mut relations = Vec::new();
        for r in 0..r_count {
            let edges = graph.relation_edges(r);
            if edges.is_empty() {
                continue;
            }
            let t: Vec<usize> = edges.iter().map(|e| e.target).collect();
            let s: Vec<usize> = edges.iter().map(|e| e.source).collect();
            relations.push((r, Arc::from(t), Arc::from(s)));
        }
        let targets: Vec<usize> = graph.edges().iter().map(|e| e.target).collect();
        let wirgat: Vec<usize> = graph
            .edges()
            .iter()
            .map(|e| e.target * r_count + e.relation)
            .collect();
        let per_rel = tensor::segment_counts(&wirgat, n * r_count);
        let per_node = tensor::segment_counts(&targets, n);
        let uniform_wirgat = wirgat.iter().map(|&s| 1.0 / per_rel[s] as f64).collect();
        let uniform_argat = targets.iter().map(|&t| 1.0 / per_node[t] as f64).collect();
        Self {
            num_nodes: n,
            num_relations: r_count,
            relations,
            targets: Arc::from(targets),
            wirgat_segments: Arc::from(wirgat),
            uniform_wirgat,
            uniform_argat,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    /// Segment ids and segment count for a normalisation.
    pub fn segments(&self, norm: NormKind) -> (Index, usize) {
        match norm {
            NormKind::Wirgat => (
                self.wirgat_segments.clone(),
                self.num_nodes * self.num_relations,
            ),
            NormKind::Argat => (self.targets.clone(), self.num_nodes),
        }
    }

    pub fn uniform(&self, norm: NormKind) -> &[f64] {
        match norm {
            NormKind::Wirgat => &self.uniform_wirgat,
            NormKind::Argat => &self.uniform_argat,
        }
    }
}

/// Per-head attention record, edge-aligned in canonical edge order.
#[derive(Clone, Copy, Debug)]
pub struct HeadTrace {
    /// Absent under constant attention.
    pub logits: Option<Var>,
    pub alpha: Var,
}

#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub output: Var,
    pub heads: Vec<HeadTrace>,
}

/// Attention coefficients and logits for one head, in canonical edge order.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionResult {
    pub logits: Option<Vec<f64>>,
    pub alpha: Vec<f64>,
}

impl AttentionResult {
    /// Coefficients split by relation.
    pub fn per_relation<'a>(&'a self, graph: &RelGraph) -> Vec<&'a [f64]> {
        let mut out = Vec::with_capacity(graph.num_relations());
        let mut start = 0;
        for r in 0..graph.num_relations() {
            let len = graph.relation_edges(r).len();
            out.push(&self.alpha[start..start + len]);
            start += len;
        }
        out
    }
}

/// Edge-aligned logits for one `(relation, head)`: `targets`/`sources` index
/// rows of the query and key matrices.
fn edge_logits(
    tape: &mut Tape,
    mode: LogitMode,
    queries: Var,
    keys: Var,
    targets: &Index,
    sources: &Index,
) -> Result<Var> {
    let qi = tape.gather_rows(queries, targets.clone())?;
    let kj = tape.gather_rows(keys, sources.clone())?;
    match mode {
        LogitMode::Additive => {
            let s = tape.add(qi, kj)?;
            Ok(tape.leaky_relu(s, LEAKY_SLOPE))
        }
        LogitMode::Multiplicative => tape.row_dot(qi, kj),
    }
}

/// Attention coefficients from edge-aligned logits (canonical edge order).
///
/// Learned mode runs a segment softmax over the support of `norm`; constant
/// mode ignores the logits and returns `1 / |support|`.
pub fn attention_coefficients(
    tape: &mut Tape,
    logits: Option<Var>,
    index: &EdgeIndex,
    norm: NormKind,
    constant: bool,
) -> Result<Var> {
    match (constant, logits) {
        (true, _) => Ok(tape.constant(Matrix::column(index.uniform(norm).to_vec()))),
        (false, Some(l)) => {
            let (segs, n) = index.segments(norm);
            tape.segment_softmax(l, segs, n)
        }
        (false, None) => Err(Error::InvalidConfig("learned attention needs logits".into())),
    }
}

/// A relational graph attention layer: configuration plus forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgatLayer {
    pub config: LayerConfig,
}

impl RgatLayer {
    pub fn new(config: LayerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Records the layer on `tape`. `h` is `N × input_dim`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        index: &EdgeIndex,
        h: Var,
        params: &LayerParams<Var>,
        constant: bool,
    ) -> Result<LayerOutput> {
        let cfg = &self.config;
        if index.num_relations != cfg.num_relations {
            return Err(Error::RelationCountMismatch {
                expected: cfg.num_relations,
                found: index.num_relations,
            });
        }
        let (n, f) = tape.shape(h);
        if n != index.num_nodes || f != cfg.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "layer input is {n}x{f}, expected {}x{}",
                index.num_nodes, cfg.input_dim
            )));
        }
        let fp = cfg.units_per_head();
        let mut head_outputs = Vec::with_capacity(cfg.heads);
        let mut traces = Vec::with_capacity(cfg.heads);

        for k in 0..cfg.heads {
            let mut logits = Vec::with_capacity(index.relations.len());
            let mut messages = Vec::with_capacity(index.relations.len());
            for (r, targets, sources) in &index.relations {
                let slot = r * cfg.heads + k;
                let w = params.kernels.compose_on(tape, slot)?;
                let g = tape.matmul(h, w)?;
                messages.push(tape.gather_rows(g, sources.clone())?);
                if !constant {
                    let a = params.attention.compose_on(tape, slot)?;
                    let q_kernel = tape.slice_rows(a, 0, fp)?;
                    let k_kernel = tape.slice_rows(a, fp, 2 * fp)?;
                    let queries = tape.matmul(g, q_kernel)?;
                    let keys = tape.matmul(g, k_kernel)?;
                    logits.push(edge_logits(tape, cfg.logit_mode, queries, keys, targets, sources)?);
                }
            }

            let aggregated = if messages.is_empty() {
                let alpha = tape.constant(Matrix::zeros(0, 1));
                traces.push(HeadTrace {
                    logits: (!constant).then_some(alpha),
                    alpha,
                });
                tape.constant(Matrix::zeros(n, fp))
            } else {
                let logit_var = if constant {
                    None
                } else {
                    Some(tape.concat_rows(&logits)?)
                };
                let alpha = attention_coefficients(tape, logit_var, index, cfg.norm, constant)?;
                traces.push(HeadTrace {
                    logits: logit_var,
                    alpha,
                });
                let msgs = tape.concat_rows(&messages)?;
                let weighted = tape.scale_rows(msgs, alpha)?;
                tape.segment_sum(weighted, index.targets.clone(), n)?
            };

            let pre = match params.bias {
                Some(b) => {
                    let row = tape.slice_rows(b, k, k + 1)?;
                    tape.add_row(aggregated, row)?
                }
                None => aggregated,
            };
            head_outputs.push(cfg.activation.apply(tape, pre));
        }

        let output = match cfg.head_agg {
            HeadAggregation::Concat if head_outputs.len() == 1 => head_outputs[0],
            HeadAggregation::Concat => tape.concat_cols(&head_outputs)?,
            HeadAggregation::Mean => {
                let mut acc = head_outputs[0];
                for &o in &head_outputs[1..] {
                    acc = tape.add(acc, o)?;
                }
                if head_outputs.len() > 1 {
                    tape.scale(acc, 1.0 / head_outputs.len() as f64)
                } else {
                    acc
                }
            }
        };
        Ok(LayerOutput {
            output,
            heads: traces,
        })
    }

    /// Value-level forward. `edge_keep` removes edges before any logit is
    /// computed (edge dropout).
    pub fn apply(
        &self,
        graph: &RelGraph,
        h: &Matrix,
        params: &LayerParams,
        constant: bool,
        edge_keep: Option<&[bool]>,
    ) -> Result<Matrix> {
        Ok(self.run(graph, h, params, constant, edge_keep)?.0)
    }

    /// Value-level attention coefficients for every head.
    pub fn attention(
        &self,
        graph: &RelGraph,
        h: &Matrix,
        params: &LayerParams,
        constant: bool,
    ) -> Result<Vec<AttentionResult>> {
        Ok(self.run(graph, h, params, constant, None)?.1)
    }

    fn run(
        &self,
        graph: &RelGraph,
        h: &Matrix,
        params: &LayerParams,
        constant: bool,
        edge_keep: Option<&[bool]>,
    ) -> Result<(Matrix, Vec<AttentionResult>)> {
        params.validate(&self.config)?;
        let filtered;
        let graph = match edge_keep {
            Some(keep) => {
                filtered = graph.filter_edges(keep)?;
                &filtered
            }
            None => graph,
        };
        let index = EdgeIndex::new(graph);
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let pv = params.map(&mut |m| tape.constant(m.clone()));
        let out = self.forward(&mut tape, &index, hv, &pv, constant)?;
        let results = out
            .heads
            .iter()
            .map(|t| AttentionResult {
                logits: t.logits.map(|l| tape.value(l).data().to_vec()),
                alpha: tape.value(t.alpha).data().to_vec(),
            })
            .collect();
        Ok((tape.value(out.output).clone(), results))
    }
}

/// `G^(r,k) = H · W^(r,k)`, computed on plain matrices.
pub fn intermediate_representations(
    h: &Matrix,
    params: &LayerParams,
    cfg: &LayerConfig,
    r: usize,
    k: usize,
) -> Result<Matrix> {
    h.matmul(&compose_kernels(params, cfg, r, k)?.0)
}

/// Logits of relation `r`'s edges for head `k`, aligned with
/// `graph.relation_edges(r)`. `g` is the matching intermediate representation.
pub fn attention_logits(
    g: &Matrix,
    graph: &RelGraph,
    params: &LayerParams,
    cfg: &LayerConfig,
    r: usize,
    k: usize,
) -> Result<Vec<f64>> {
    let a = compose_kernels(params, cfg, r, k)?.1;
    let fp = cfg.units_per_head();
    let queries = g.matmul(&a.slice_rows(0, fp))?;
    let keys = g.matmul(&a.slice_rows(fp, 2 * fp))?;
    Ok(graph
        .relation_edges(r)
        .iter()
        .map(|e| {
            let (q, key) = (queries.row(e.target), keys.row(e.source));
            match cfg.logit_mode {
                LogitMode::Additive => {
                    let s = q[0] + key[0];
                    if s >= 0.0 {
                        s
                    } else {
                        LEAKY_SLOPE * s
                    }
                }
                LogitMode::Multiplicative => q.iter().zip(key).map(|(a, b)| a * b).sum(),
            }
        })
        .collect())
}

/// Reference RGCN propagation:
/// `h′_i = σ(Σ_r |N_i^(r)|⁻¹ Σ_{j∈N_i^(r)} h_j W^(r) + b)`.
///
/// Computed directly on matrices, independent of the tape.
pub fn rgcn_forward(
    graph: &RelGraph,
    h: &Matrix,
    kernels: &[Matrix],
    bias: Option<&[f64]>,
    activation: Activation,
) -> Result<Matrix> {
    if kernels.len() != graph.num_relations() {
        return Err(Error::RelationCountMismatch {
            expected: graph.num_relations(),
            found: kernels.len(),
        });
    }
    if h.rows() != graph.num_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} nodes",
            h.rows(),
            graph.num_nodes()
        )));
    }
    let out_dim = kernels.first().map_or(0, Matrix::cols);
    let degrees = graph.in_degrees();
    let mut out = Matrix::zeros(graph.num_nodes(), out_dim);
    for (r, w) in kernels.iter().enumerate() {
        let edges = graph.relation_edges(r);
        if edges.is_empty() {
            continue;
        }
        let g = h.matmul(w)?;
        if g.cols() != out_dim {
            return Err(Error::DimensionMismatch("kernels differ in output width".into()));
        }
        for e in edges {
            let c = 1.0 / degrees[r][e.target] as f64;
            for (o, &v) in out.row_mut(e.target).iter_mut().zip(g.row(e.source)) {
                *o += c * v;
            }
        }
    }
    if let Some(b) = bias {
        for i in 0..out.rows() {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
    Ok(out.map(|v| activation.apply_value(v)))
}

/// Degree-specific kernels for [`degree_rgcn_forward`], indexed by degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeKernels {
    pub self_kernels: Vec<Matrix>,
    pub neighbor_kernels: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Degree-conditioned graph convolution:
/// `h′_i = σ(W_dᵀ h_i + Σ_{j∈N_i} U_dᵀ h_j + b_d)` with `d = min(deg(i), max_degree)`.
///
/// Kernels are stored `F × F′`, so `W_dᵀ h_i` is the row product `h_i · W_d`.
/// Neighborhoods pool every relation except the self relation.
pub fn degree_rgcn_forward(
    graph: &RelGraph,
    h: &Matrix,
    kernels: &DegreeKernels,
    max_degree: usize,
    activation: Activation,
) -> Result<Matrix> {
    let need = max_degree + 1;
    for list_len in [
        kernels.self_kernels.len(),
        kernels.neighbor_kernels.len(),
        kernels.biases.len(),
    ] {
        if list_len < need {
            return Err(Error::MissingDegreeKernel(list_len));
        }
    }
    let n = graph.num_nodes();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in graph.edges() {
        if Some(e.relation) != graph.self_relation() {
            neighbors[e.target].push(e.source);
        }
    }
    let out_dim = kernels.self_kernels[0].cols();
    let mut out = Matrix::zeros(n, out_dim);
    for i in 0..n {
        let d = neighbors[i].len().min(max_degree);
        let mut pooled = vec![0.0; h.cols()];
        for &j in &neighbors[i] {
            for (p, &v) in pooled.iter_mut().zip(h.row(j)) {
                *p += v;
            }
        }
        let own = Matrix::new(1, h.cols(), h.row(i).to_vec())?.matmul(&kernels.self_kernels[d])?;
        let nb = Matrix::new(1, h.cols(), pooled)?.matmul(&kernels.neighbor_kernels[d])?;
        let b = &kernels.biases[d];
        if b.len() != out_dim || own.cols() != out_dim || nb.cols() != out_dim {
            return Err(Error::DimensionMismatch(format!("degree {d} kernels disagree in width")));
        }
        for c in 0..out_dim {
            let v = own.get(0, c) + nb.get(0, c) + b[c];
            out.set(i, c, activation.apply_value(v));
        }
    }
    Ok(out)
}

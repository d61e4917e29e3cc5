//! JSON graph documents.
//!
//! A single-graph document:
//!
//! ```json
//! {"num_nodes":3,"num_relations":2,"feature_dim":4,
//!  "features":[[...],[...],[...]],          // or "one_hot_index"
//!  "edges":[[relation,target,source],...],
//!  "labels":{"kind":"node","num_classes":2,"nodes":[[node,class],...]},
//!  "splits":{"train":[...],"validation":[...],"test":[...]}}
//! ```
//!
//! An inductive dataset wraps several graph documents (each labelled with
//! `{"kind":"graph",...}`) under `"graphs"`, with dataset-level `"splits"` over
//! graph indices and optional `"class_weights"` (tasks × classes).
//!
//! Serialization is canonical: fixed key order, compact separators, edges
//! sorted by `(relation, target, source)`, labels sorted by node and split
//! index lists sorted ascending.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Edge, Features, RelGraph};
use crate::error::{Error, Result};
use crate::provenance::Provenance;
use crate::tensor::Matrix;

const ONE_HOT_INDEX: &str = "one_hot_index";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphTargets {
    pub num_tasks: usize,
    pub num_classes: usize,
    /// One entry per task; `None` marks a missing (masked) label.
    pub targets: Vec<Option<usize>>,
}

impl GraphTargets {
    pub fn single(num_classes: usize, class: usize) -> Self {
        Self {
            num_tasks: 1,
            num_classes,
            targets: vec![Some(class)],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.targets.len() != self.num_tasks {
            return Err(Error::DimensionMismatch(format!(
                "{} targets for {} tasks",
                self.targets.len(),
                self.num_tasks
            )));
        }
        for &c in self.targets.iter().flatten() {
            if c >= self.num_classes {
                return Err(Error::IndexOutOfRange {
                    what: "class",
                    index: c,
                    limit: self.num_classes,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LabelSet {
    /// `(node, class)` pairs, sorted by node with no node repeated.
    Node {
        num_classes: usize,
        labels: Vec<(usize, usize)>,
    },
    Graph(GraphTargets),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    fn canonicalize(&mut self) {
        self.train.sort_unstable();
        self.validation.sort_unstable();
        self.test.sort_unstable();
    }

    /// Checks pairwise disjointness and `union ⊆ labelled`.
    pub fn validate(&self, labelled: &BTreeSet<usize>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, part) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for &i in part {
                if !labelled.contains(&i) {
                    return Err(Error::Malformed(format!(
                        "{name} split index {i} is not labelled"
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Malformed(format!(
                        "split index {i} appears more than once"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphDocument {
    pub graph: RelGraph,
    pub labels: Option<LabelSet>,
    pub split: Option<Split>,
}

/// Training data in either task setting.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    /// One graph with a labelled node subset; splits index nodes.
    Transductive {
        graph: RelGraph,
        num_classes: usize,
        labels: Vec<(usize, usize)>,
        split: Split,
    },
    /// Many graphs with per-graph task labels; splits index graphs.
    Inductive {
        graphs: Vec<RelGraph>,
        targets: Vec<GraphTargets>,
        num_tasks: usize,
        num_classes: usize,
        class_weights: Option<Matrix>,
        split: Split,
    },
}

impl Dataset {
    pub fn split(&self) -> &Split {
        match self {
            Dataset::Transductive { split, .. } | Dataset::Inductive { split, .. } => split,
        }
    }

    pub fn num_relations(&self) -> usize {
        match self {
            Dataset::Transductive { graph, .. } => graph.num_relations(),
            Dataset::Inductive { graphs, .. } => graphs.first().map_or(0, RelGraph::num_relations),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Dataset::Transductive { graph, .. } => graph.feature_dim(),
            Dataset::Inductive { graphs, .. } => graphs.first().map_or(0, RelGraph::feature_dim),
        }
    }

    /// Adds the self relation to every graph.
    pub fn with_self_relation(&self) -> Result<Self> {
        Ok(match self.clone() {
            Dataset::Transductive {
                graph,
                num_classes,
                labels,
                split,
            } => Dataset::Transductive {
                graph: graph.with_self_relation()?,
                num_classes,
                labels,
                split,
            },
            Dataset::Inductive {
                graphs,
                targets,
                num_tasks,
                num_classes,
                class_weights,
                split,
            } => Dataset::Inductive {
                graphs: graphs
                    .iter()
                    .map(RelGraph::with_self_relation)
                    .collect::<Result<_>>()?,
                targets,
                num_tasks,
                num_classes,
                class_weights,
                split,
            },
        })
    }

    pub fn with_split(&self, split: Split) -> Self {
        let mut out = self.clone();
        match &mut out {
            Dataset::Transductive { split: s, .. } | Dataset::Inductive { split: s, .. } => {
                *s = split
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FeaturesDoc {
    Keyword(String),
    Dense(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LabelsDoc {
    Node {
        num_classes: usize,
        nodes: Vec<(usize, usize)>,
    },
    Graph {
        num_tasks: usize,
        num_classes: usize,
        targets: Vec<Option<usize>>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    num_nodes: usize,
    num_relations: usize,
    feature_dim: usize,
    features: FeaturesDoc,
    edges: Vec<(usize, usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    self_relation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<LabelsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    splits: Option<Split>,
    /// Ignored on read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    num_tasks: usize,
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_weights: Option<Vec<Vec<f64>>>,
    graphs: Vec<GraphDoc>,
    splits: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

fn malformed(e: serde_json::Error) -> Error {
    Error::Malformed(e.to_string())
}

fn graph_from_doc(doc: GraphDoc) -> Result<GraphDocument> {
    let features = match doc.features {
        FeaturesDoc::Keyword(k) if k == ONE_HOT_INDEX => Features::OneHotIndex {
            dim: doc.feature_dim,
        },
        FeaturesDoc::Keyword(k) => {
            return Err(Error::Malformed(format!("unknown features keyword `{k}`")))
        }
        FeaturesDoc::Dense(rows) => {
            let m = if rows.is_empty() {
                Matrix::zeros(0, doc.feature_dim)
            } else {
                Matrix::from_rows(&rows)?
            };
            if m.cols() != doc.feature_dim {
                return Err(Error::DimensionMismatch(format!(
                    "features have {} columns, feature_dim is {}",
                    m.cols(),
                    doc.feature_dim
                )));
            }
            Features::Dense(m)
        }
    };
    let edges = doc
        .edges
        .into_iter()
        .map(|(r, t, s)| Edge::new(r, t, s))
        .collect();
    let graph = RelGraph::build(
        doc.num_nodes,
        doc.num_relations,
        edges,
        features,
        doc.self_relation,
    )?;

    let labels = match doc.labels {
        None => None,
        Some(LabelsDoc::Node { num_classes, nodes }) => {
            let mut labels = nodes;
            labels.sort_unstable();
            for w in labels.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Malformed(format!("node {} labelled twice", w[0].0)));
                }
            }
            for &(node, class) in &labels {
                if node >= graph.num_nodes() {
                    return Err(Error::IndexOutOfRange {
                        what: "labelled node",
                        index: node,
                        limit: graph.num_nodes(),
                    });
                }
                if class >= num_classes {
                    return Err(Error::IndexOutOfRange {
                        what: "class",
                        index: class,
                        limit: num_classes,
                    });
                }
            }
            Some(LabelSet::Node {
                num_classes,
                labels,
            })
        }
        Some(LabelsDoc::Graph {
            num_tasks,
            num_classes,
            targets,
        }) => {
            let t = GraphTargets {
                num_tasks,
                num_classes,
                targets,
            };
            t.validate()?;
            Some(LabelSet::Graph(t))
        }
    };

    let split = match doc.splits {
        None => None,
        Some(mut s) => {
            s.canonicalize();
            let labelled: BTreeSet<usize> = match &labels {
                Some(LabelSet::Node { labels, .. }) => labels.iter().map(|&(n, _)| n).collect(),
                _ => {
                    return Err(Error::Malformed(
                        "node splits require node labels".into(),
                    ))
                }
            };
            s.validate(&labelled)?;
            Some(s)
        }
    };

    Ok(GraphDocument {
        graph,
        labels,
        split,
    })
}

fn graph_to_doc(doc: &GraphDocument) -> GraphDoc {
    let g = &doc.graph;
    GraphDoc {
        num_nodes: g.num_nodes(),
        num_relations: g.num_relations(),
        feature_dim: g.feature_dim(),
        features: match g.features() {
            Features::Dense(m) => FeaturesDoc::Dense(m.to_rows()),
            Features::OneHotIndex { .. } => FeaturesDoc::Keyword(ONE_HOT_INDEX.into()),
        },
        edges: g
            .edges()
            .iter()
            .map(|e| (e.relation, e.target, e.source))
            .collect(),
        self_relation: g.self_relation(),
        labels: doc.labels.as_ref().map(|l| match l {
            LabelSet::Node {
                num_classes,
                labels,
            } => LabelsDoc::Node {
                num_classes: *num_classes,
                nodes: labels.clone(),
            },
            LabelSet::Graph(t) => LabelsDoc::Graph {
                num_tasks: t.num_tasks,
                num_classes: t.num_classes,
                targets: t.targets.clone(),
            },
        }),
        splits: doc.split.clone(),
        provenance: None,
    }
}

/// Parses and validates a single-graph document.
pub fn parse_graph(bytes: &[u8]) -> Result<GraphDocument> {
    let doc: GraphDoc = serde_json::from_slice(bytes).map_err(malformed)?;
    graph_from_doc(doc)
}

/// Canonical compact JSON for a single-graph document.
pub fn serialize_graph(doc: &GraphDocument) -> Result<String> {
    Ok(serde_json::to_string(&graph_to_doc(doc))?)
}

/// Parses either a single labelled graph (transductive) or a `"graphs"`
/// collection (inductive).
pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(malformed)?;
    if value.get("graphs").is_some() {
        let doc: DatasetDoc = serde_json::from_value(value).map_err(malformed)?;
        let mut graphs = Vec::with_capacity(doc.graphs.len());
        let mut targets = Vec::with_capacity(doc.graphs.len());
        for (i, g) in doc.graphs.into_iter().enumerate() {
            let parsed = graph_from_doc(g)?;
            match parsed.labels {
                Some(LabelSet::Graph(t)) => {
                    if t.num_tasks != doc.num_tasks || t.num_classes != doc.num_classes {
                        return Err(Error::DimensionMismatch(format!(
                            "graph {i} labels are {}x{}, dataset is {}x{}",
                            t.num_tasks, t.num_classes, doc.num_tasks, doc.num_classes
                        )));
                    }
                    targets.push(t);
                }
                _ => {
                    return Err(Error::Malformed(format!("graph {i} lacks graph labels")))
                }
            }
            graphs.push(parsed.graph);
        }
        if let Some(first) = graphs.first() {
            for g in &graphs {
                if g.num_relations() != first.num_relations() {
                    return Err(Error::RelationCountMismatch {
                        expected: first.num_relations(),
                        found: g.num_relations(),
                    });
                }
                if g.feature_dim() != first.feature_dim() {
                    return Err(Error::DimensionMismatch("graphs differ in feature_dim".into()));
                }
            }
        }
        let class_weights = match doc.class_weights {
            None => None,
            Some(rows) => {
                let m = Matrix::from_rows(&rows)?;
                if m.shape() != (doc.num_tasks, doc.num_classes) {
                    return Err(Error::DimensionMismatch(format!(
                        "class_weights shape {:?}, expected {:?}",
                        m.shape(),
                        (doc.num_tasks, doc.num_classes)
                    )));
                }
                if let Some(&w) = m.data().iter().find(|w| !(**w >= 0.0)) {
                    return Err(Error::NegativeWeight(w));
                }
                Some(m)
            }
        };
        let mut split = doc.splits;
        split.canonicalize();
        split.validate(&(0..graphs.len()).collect())?;
        Ok(Dataset::Inductive {
            graphs,
            targets,
            num_tasks: doc.num_tasks,
            num_classes: doc.num_classes,
            class_weights,
            split,
        })
    } else {
        let doc: GraphDoc = serde_json::from_value(value).map_err(malformed)?;
        let parsed = graph_from_doc(doc)?;
        match parsed.labels {
            Some(LabelSet::Node {
                num_classes,
                labels,
            }) => Ok(Dataset::Transductive {
                graph: parsed.graph,
                num_classes,
                labels,
                split: parsed.split.unwrap_or_default(),
            }),
            _ => Err(Error::Malformed(
                "a single-graph dataset needs node labels".into(),
            )),
        }
    }
}

/// Canonical JSON for a dataset; inverse of [`parse_dataset`].
pub fn serialize_dataset(data: &Dataset) -> Result<String> {
    serialize_dataset_stamped(data, None)
}

/// As [`serialize_dataset`], with an optional top-level provenance stamp.
pub fn serialize_dataset_stamped(data: &Dataset, provenance: Option<&Provenance>) -> Result<String> {
    match data {
        Dataset::Transductive {
            graph,
            num_classes,
            labels,
            split,
        } => {
            let mut doc = graph_to_doc(&GraphDocument {
                graph: graph.clone(),
                labels: Some(LabelSet::Node {
                    num_classes: *num_classes,
                    labels: labels.clone(),
                }),
                split: Some(split.clone()),
            });
            doc.provenance = provenance.cloned();
            Ok(serde_json::to_string(&doc)?)
        }
        Dataset::Inductive {
            graphs,
            targets,
            num_tasks,
            num_classes,
            class_weights,
            split,
        } => {
            let doc = DatasetDoc {
                num_tasks: *num_tasks,
                num_classes: *num_classes,
                class_weights: class_weights.as_ref().map(Matrix::to_rows),
                graphs: graphs
                    .iter()
                    .zip(targets)
                    .map(|(g, t)| {
                        graph_to_doc(&GraphDocument {
                            graph: g.clone(),
                            labels: Some(LabelSet::Graph(t.clone())),
                            split: None,
                        })
                    })
                    .collect(),
                splits: split.clone(),
                provenance: provenance.cloned(),
            };
            Ok(serde_json::to_string(&doc)?)
        }
    }
}

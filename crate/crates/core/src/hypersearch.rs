//! Random search over hyperparameter priors with durable, resumable records.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Split};
use crate::models::{Model, ModelConfig};
use crate::provenance::Provenance;
use crate::training::{kfold_split, train, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    OneOf { options: Vec<Value> },
    MultiplesOfFour { low: u64, high: u64 },
    MultiplesOfEight { low: u64, high: u64 },
}

impl Prior {
    pub fn validate(&self, name: &str) -> Result<()> {
        let invalid = |reason: String| {
            Err(Error::InvalidPrior {
                name: name.to_string(),
                reason,
            })
        };
        match self {
            Prior::Uniform { low, high } | Prior::LogUniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return invalid(format!("bounds {low}, {high} need low < high"));
                }
                if matches!(self, Prior::LogUniform { .. }) && *low <= 0.0 {
                    return invalid("log-uniform bounds must be positive".into());
                }
            }
            Prior::OneOf { options } => {
                if options.is_empty() {
                    return invalid("no options".into());
                }
            }
            Prior::MultiplesOfFour { low, high } | Prior::MultiplesOfEight { low, high } => {
                if low >= high {
                    return invalid(format!("bounds {low}, {high} need low < high"));
                }
            }
        }
        Ok(())
    }

    /// Every value the prior can produce, for discrete priors.
    pub fn support(&self) -> Option<Vec<Value>> {
        match self {
            Prior::OneOf { options } => Some(options.clone()),
            Prior::MultiplesOfFour { low, high } => Some((*low..=*high).step_by(4).map(Value::from).collect()),
            Prior::MultiplesOfEight { low, high } => Some((*low..=*high).step_by(8).map(Value::from).collect()),
            _ => None,
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Value {
        match self {
            Prior::Uniform { low, high } => json!(rng.random_range(*low..*high)),
            Prior::LogUniform { low, high } => json!(rng.random_range(low.ln()..high.ln()).exp()),
            _ => {
                let support = self.support().expect("discrete prior");
                support[rng.random_range(0..support.len())].clone()
            }
        }
    }
}

/// Named priors; drawn in name order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorSpace {
    pub priors: BTreeMap<String, Prior>,
}

impl PriorSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in &self.priors {
            p.validate(name)?;
        }
        Ok(())
    }

    fn with(mut self, name: &str, prior: Prior) -> Self {
        self.priors.insert(name.to_string(), prior);
        self
    }
}

pub type SampledConfig = BTreeMap<String, Value>;

pub fn sample_config(space: &PriorSpace, rng: &mut dyn RngCore) -> Result<SampledConfig> {
    space.validate()?;
    Ok(space
        .priors
        .iter()
        .map(|(name, p)| (name.clone(), p.sample(rng)))
        .collect())
}

fn l2_prior() -> Prior {
    Prior::LogUniform {
        low: 1e-6,
        high: 1e-1,
    }
}

fn dropout_prior() -> Prior {
    Prior::Uniform {
        low: 0.0,
        high: 0.8,
    }
}

fn shared(space: PriorSpace) -> PriorSpace {
    space
        .with("feature_dropout", dropout_prior())
        .with("edge_dropout", dropout_prior())
        .with("l2_layer1_kernel", l2_prior())
        .with("l2_layer2_kernel", l2_prior())
        .with("l2_layer1_attention", l2_prior())
        .with("l2_layer2_attention", l2_prior())
        .with(
            "learning_rate",
            Prior::LogUniform {
                low: 1e-5,
                high: 1e-1,
            },
        )
        .with(
            "use_bias",
            Prior::OneOf {
                options: vec![json!(true), json!(false)],
            },
        )
}

/// Node-classification search space. The batch-normalisation flag is omitted.
pub fn transductive_space() -> PriorSpace {
    let basis = Prior::OneOf {
        options: vec![json!("full"), json!(5), json!(10), json!(20), json!(30)],
    };
    shared(PriorSpace::default())
        .with("graph_units", Prior::MultiplesOfFour { low: 4, high: 20 })
        .with(
            "heads",
            Prior::OneOf {
                options: vec![json!(1), json!(2), json!(4)],
            },
        )
        .with("kernel_basis", basis.clone())
        .with("attention_basis", basis)
}

/// Graph-classification search space; no basis decomposition.
pub fn inductive_space() -> PriorSpace {
    shared(PriorSpace::default())
        .with("graph_units", Prior::MultiplesOfEight { low: 32, high: 128 })
        .with("dense_units", Prior::MultiplesOfEight { low: 32, high: 128 })
        .with(
            "heads",
            Prior::OneOf {
                options: vec![json!(1), json!(2), json!(4), json!(8)],
            },
        )
}

fn as_f64(name: &str, v: &Value) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::InvalidConfig(format!("{name} = {v} is not a number")))
}

fn as_usize(name: &str, v: &Value) -> Result<usize> {
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| Error::InvalidConfig(format!("{name} = {v} is not a count")))
}

fn as_basis(name: &str, v: &Value) -> Result<Option<usize>> {
    match v {
        Value::String(s) if s == "full" => Ok(None),
        _ => as_usize(name, v).map(Some),
    }
}

/// Overlays sampled values onto base configurations.
pub fn apply_sample(
    sample: &SampledConfig,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<(ModelConfig, TrainConfig)> {
    let mut model = model.clone();
    let mut train = train.clone();
    for (name, v) in sample {
        let attention = match &mut model {
            ModelConfig::NodeClassifier(c) => &mut c.attention,
            ModelConfig::GraphClassifier(c) => &mut c.attention,
        };
        match name.as_str() {
            "heads" => attention.heads = as_usize(name, v)?,
            "use_bias" => {
                attention.use_bias = v
                    .as_bool()
                    .ok_or_else(|| Error::InvalidConfig(format!("use_bias = {v}")))?
            }
            "kernel_basis" => attention.kernel_basis = as_basis(name, v)?,
            "attention_basis" => attention.attention_basis = as_basis(name, v)?,
            "graph_units" => match &mut model {
                ModelConfig::NodeClassifier(c) => c.hidden_units = as_usize(name, v)?,
                ModelConfig::GraphClassifier(c) => c.graph_units = as_usize(name, v)?,
            },
            "dense_units" => match &mut model {
                ModelConfig::GraphClassifier(c) => c.dense_units = as_usize(name, v)?,
                ModelConfig::NodeClassifier(_) => {
                    return Err(Error::InvalidConfig("node classifier has no dense layer".into()))
                }
            },
            "feature_dropout" => train.feature_dropout = as_f64(name, v)?,
            "edge_dropout" => train.edge_dropout = as_f64(name, v)?,
            "learning_rate" => train.learning_rate = as_f64(name, v)?,
            "l2_layer1_kernel" => train.l2.layer1_kernel = as_f64(name, v)?,
            "l2_layer2_kernel" => train.l2.layer2_kernel = as_f64(name, v)?,
            "l2_layer1_attention" => train.l2.layer1_attention = as_f64(name, v)?,
            "l2_layer2_attention" => train.l2.layer2_attention = as_f64(name, v)?,
            "batch_size" => train.batch_size = as_usize(name, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown hyperparameter {other}"))),
        }
    }
    Ok((model, train))
}

fn default_folds() -> usize {
    5
}

/// Everything a sweep needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub space: PriorSpace,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub trials: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Run only the first this-many folds of the k-fold split.
    #[serde(default)]
    pub fold_limit: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    /// Training seed of the trial.
    pub trial_seed: u64,
    pub config: SampledConfig,
    pub fold_metrics: Vec<f64>,
    /// Mean validation metric over folds.
    pub final_metric: Option<f64>,
    pub status: TrialStatus,
    #[serde(default)]
    pub error: Option<String>,
    pub wall_time_s: f64,
    #[serde(flatten)]
    pub provenance: Provenance,
}

/// Config draw and training seed of trial `id`; independent of other trials.
pub fn trial_draw(space: &PriorSpace, master_seed: u64, id: u64) -> Result<(SampledConfig, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(id);
    let config = sample_config(space, &mut rng)?;
    Ok((config, rng.next_u64()))
}

/// Reads completed records, skipping lines that do not parse (for example
/// a partial line left by an interrupted write).
pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("{}:{}: skipping unreadable record: {e}", path.display(), n + 1),
        }
    }
    Ok(out)
}

pub type Trainer = dyn Fn(&Model, &Dataset, &TrainConfig) -> Result<TrainOutcome> + Sync;

fn run_trial(
    spec: &SweepSpec,
    data: &Dataset,
    id: u64,
    trainer: &Trainer,
    provenance: &Provenance,
) -> Result<TrialRecord> {
    let start = Instant::now();
    let (config, trial_seed) = trial_draw(&spec.space, spec.seed, id)?;
    let split = data.split();
    let mut pool: Vec<usize> = split.train.iter().chain(&split.validation).copied().collect();
    pool.sort_unstable();

    let outcome = (|| -> Result<Vec<f64>> {
        let (model_cfg, mut train_cfg) = apply_sample(&config, &spec.model, &spec.train)?;
        train_cfg.seed = trial_seed;
        let model = Model::new(&model_cfg)?;
        let folds = kfold_split(&pool, spec.folds, trial_seed)?;
        let limit = spec.fold_limit.unwrap_or(folds.len()).min(folds.len());
        let mut metrics = Vec::with_capacity(limit);
        for (train_idx, val_idx) in folds.into_iter().take(limit) {
            let fold_data = data.with_split(Split {
                train: train_idx,
                validation: val_idx,
                test: Vec::new(),
            });
            metrics.push(trainer(&model, &fold_data, &train_cfg)?.best_metric);
        }
        Ok(metrics)
    })();

    let wall_time_s = start.elapsed().as_secs_f64();
    Ok(match outcome {
        Ok(fold_metrics) => TrialRecord {
            trial: id,
            trial_seed,
            final_metric: Some(fold_metrics.iter().sum::<f64>() / fold_metrics.len().max(1) as f64),
            fold_metrics,
            config,
            status: TrialStatus::Ok,
            error: None,
            wall_time_s,
            provenance: provenance.clone(),
        },
        Err(e) => TrialRecord {
            trial: id,
            trial_seed,
            config,
            fold_metrics: Vec::new(),
            final_metric: None,
            status: TrialStatus::Failed,
            error: Some(e.to_string()),
            wall_time_s,
            provenance: provenance.clone(),
        },
    })
}

/// Runs every trial not yet present in `records_path`, appending one JSON
/// line per finished trial. Returns all records sorted by trial id.
pub fn run_sweep(
    spec: &SweepSpec,
    data: &Dataset,
    records_path: &Path,
    parallelism: usize,
    provenance: &Provenance,
) -> Result<Vec<TrialRecord>> {
    run_sweep_with(spec, data, records_path, parallelism, provenance, &train)
}

pub fn run_sweep_with(
    spec: &SweepSpec,
    data: &Dataset,
    records_path: &Path,
    parallelism: usize,
    provenance: &Provenance,
    trainer: &Trainer,
) -> Result<Vec<TrialRecord>> {
    spec.space.validate()?;
    spec.train.validate()?;
    let mut records = read_records(records_path)?;
    let done: BTreeSet<u64> = records.iter().map(|r| r.trial).collect();
    let pending: Vec<u64> = (0..spec.trials).filter(|id| !done.contains(id)).collect();
    if !done.is_empty() {
        log::info!("resuming: {} of {} trials already recorded", done.len(), spec.trials);
    }

    let mut file = OpenOptions::new().create(true).append(true).open(records_path)?;
    // A torn final line must not swallow the next record.
    if fs::read(records_path)?.last().is_some_and(|&b| b != b'\n') {
        file.write_all(b"\n")?;
    }
    let sink = Mutex::new((file, Vec::new()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;

    pool.install(|| {
        pending.par_iter().try_for_each(|&id| -> Result<()> {
            let record = run_trial(spec, data, id, trainer, provenance)?;
            if let Some(e) = &record.error {
                log::warn!("trial {id} failed: {e}");
            }
            let line = serde_json::to_string(&record)? + "\n";
            let mut guard = sink.lock().expect("record sink poisoned");
            guard.0.write_all(line.as_bytes())?;
            guard.0.flush()?;
            guard.0.sync_data()?;
            guard.1.push(record);
            Ok(())
        })
    })?;

    records.extend(sink.into_inner().expect("record sink poisoned").1);
    records.sort_by_key(|r| r.trial);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiples_of_four_support() {
        let p = Prior::MultiplesOfFour { low: 4, high: 20 };
        assert_eq!(p.support().unwrap(), vec![json!(4), json!(8), json!(12), json!(16), json!(20)]);
    }

    #[test]
    fn invalid_priors() {
        assert!(Prior::Uniform { low: 1.0, high: 1.0 }.validate("x").is_err());
        assert!(Prior::LogUniform { low: 0.0, high: 1.0 }.validate("x").is_err());
        assert!(Prior::OneOf { options: vec![] }.validate("x").is_err());
        assert!(Prior::MultiplesOfEight { low: 8, high: 8 }.validate("x").is_err());
    }

    #[test]
    fn prior_json_shape() {
        let space = transductive_space();
        let text = serde_json::to_string(&space).unwrap();
        let back: PriorSpace = serde_json::from_str(&text).unwrap();
        assert_eq!(back, space);
        assert!(text.contains(r#""graph_units":{"kind":"multiples_of_four","low":4,"high":20}"#));
    }

    #[test]
    fn draws_are_per_trial_deterministic() {
        let s = inductive_space();
        assert_eq!(trial_draw(&s, 9, 3).unwrap(), trial_draw(&s, 9, 3).unwrap());
        assert_ne!(trial_draw(&s, 9, 3).unwrap(), trial_draw(&s, 9, 4).unwrap());
    }
}

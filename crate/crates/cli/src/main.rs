use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use rgat::graph::{parse_dataset, planted_dataset, serialize_dataset_stamped, Dataset, PlantedConfig};
use rgat::hypersearch::{inductive_space, read_records, run_sweep, transductive_space, SweepSpec, TrialRecord, TrialStatus};
use rgat::layer::{LogitMode, NormKind};
use rgat::models::{load_checkpoint, save_checkpoint, GraphClassifierConfig, Model, ModelConfig, RgatSettings};
use rgat::provenance::{config_hash, Provenance, VERSION};
use rgat::stats::{empirical_cdf, mann_whitney_u, pairwise_p_values, EmpiricalCdf, SampleSet, UTest};
use rgat::training::{evaluate, evaluation_records, history_records, train, Metrics, MetricRecord, TrainConfig};

#[derive(Parser)]
#[command(name = "rgat", version, about = "Relational graph attention networks")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and evaluate it with learned and constant attention.
    Train(TrainArgs),
    /// Evaluate a checkpoint on every split of a dataset.
    Eval(EvalArgs),
    /// Random hyperparameter search with k-fold validation.
    Sweep(SweepArgs),
    /// Pairwise Mann-Whitney p-values and empirical CDFs of result files.
    Stats(StatsArgs),
    /// Generate the planted-structure synthetic dataset.
    Gen(GenArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON with `model` and `train` sections.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the training seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replace learned attention with uniform coefficients.
    #[arg(long)]
    constant_attention: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec; `space` may be "transductive", "inductive" or a prior map.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the master seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    /// JSON-lines trial or metric records; one sample set per file.
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Split selected from metric records.
    #[arg(long, default_value = "test")]
    split: String,
    /// Metric selected from metric records.
    #[arg(long, default_value = "accuracy")]
    metric: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenArgs {
    /// Optional generator settings (`PlantedConfig` fields plus split sizes).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

/// Exit status 2 for bad input, 1 for failures while running.
enum Failure {
    Input(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Run(_) => 1,
        }
    }
}

type CliResult<T> = Result<T, Failure>;

trait InputContext<T> {
    fn input(self, what: impl FnOnce() -> String) -> CliResult<T>;
    fn run(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> InputContext<T> for Result<T, E> {
    fn input(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| Failure::Input(e.into().context(what())))
    }
    fn run(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| Failure::Run(e.into().context(what())))
    }
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).input(|| format!("cannot read {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).input(|| format!("invalid JSON in {}", path.display()))
}

fn read_dataset(path: &Path) -> CliResult<Dataset> {
    parse_dataset(&read_bytes(path)?).input(|| format!("invalid dataset {}", path.display()))
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).input(|| format!("cannot create output directory {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).run(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).run(|| "serialisation failed".into())?;
    write_text(path, &(text + "\n"))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut text = String::new();
    for r in rows {
        text += &serde_json::to_string(r).run(|| "serialisation failed".into())?;
        text.push('\n');
    }
    write_text(path, &text)
}

fn csv_header(p: &Provenance) -> String {
    format!("# version={} config_hash={} seed={}\n", p.version, p.config_hash, p.seed)
}

fn check_compatible(model: &ModelConfig, data: &Dataset, path: &Path) -> CliResult<()> {
    let (relations, tasks) = match (model, data) {
        (ModelConfig::NodeClassifier(c), Dataset::Transductive { num_classes, .. }) => {
            (c.num_relations, (1, c.num_classes, 1, *num_classes))
        }
        (ModelConfig::GraphClassifier(c), Dataset::Inductive { num_tasks, num_classes, .. }) => {
            (c.num_relations, (c.num_tasks, c.num_classes, *num_tasks, *num_classes))
        }
        _ => {
            return Err(Failure::Input(anyhow!(
                "{}: model task does not match the dataset kind",
                path.display()
            )))
        }
    };
    if relations != data.num_relations() {
        return Err(Failure::Input(anyhow!(
            "{}: dataset has {} relations, model expects {relations}",
            path.display(),
            data.num_relations()
        )));
    }
    if (tasks.0, tasks.1) != (tasks.2, tasks.3) {
        return Err(Failure::Input(anyhow!(
            "{}: dataset has {} tasks with {} classes, model expects {} with {}",
            path.display(),
            tasks.2,
            tasks.3,
            tasks.0,
            tasks.1
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
    /// Stamp left by `gen`; ignored.
    #[allow(dead_code)]
    #[serde(default, skip_serializing)]
    provenance: Option<Value>,
}

#[derive(Serialize)]
struct SplitMetrics {
    train: Option<Metrics>,
    validation: Option<Metrics>,
    test: Option<Metrics>,
}

fn split_metrics(model: &Model, params: &rgat::models::ParamSet, data: &Dataset, constant: bool) -> CliResult<SplitMetrics> {
    let split = data.split();
    let eval = |idx: &[usize]| -> CliResult<Option<Metrics>> {
        if idx.is_empty() {
            return Ok(None);
        }
        evaluate(model, params, data, idx, constant)
            .map(Some)
            .run(|| "evaluation failed".into())
    };
    Ok(SplitMetrics {
        train: eval(&split.train)?,
        validation: eval(&split.validation)?,
        test: eval(&split.test)?,
    })
}

#[derive(Serialize)]
struct TrainSummary {
    provenance: Provenance,
    config: RunConfig,
    epochs_run: usize,
    best_epoch: usize,
    best_validation_metric: f64,
    attention: SplitMetrics,
    constant_attention: SplitMetrics,
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let mut cfg: RunConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.train
        .validate()
        .input(|| format!("invalid training settings in {}", args.config.display()))?;
    let data = read_dataset(&args.data)?;
    check_compatible(&cfg.model, &data, &args.data)?;
    let model = Model::new(&cfg.model).input(|| format!("invalid model in {}", args.config.display()))?;
    prepare_out(&args.out)?;
    let provenance = Provenance::new(&serde_json::to_vec(&cfg).expect("config serialises"), cfg.train.seed);

    let outcome = train(&model, &data, &cfg.train).run(|| "training failed".into())?;
    let attention = split_metrics(&model, &outcome.params, &data, false)?;
    let constant_attention = split_metrics(&model, &outcome.params, &data, true)?;

    let mut records: Vec<MetricRecord> = history_records(0, &outcome.history, &provenance);
    for (m, split) in [
        (&attention.test, "test"),
        (&constant_attention.test, "test_constant_attention"),
    ] {
        if let Some(m) = m {
            records.extend(evaluation_records(0, outcome.best_epoch, split, m, &provenance));
        }
    }
    write_jsonl(&args.out.join("metrics.jsonl"), &records)?;
    save_checkpoint(&args.out.join("checkpoint.json"), &cfg.model, &outcome.params, &provenance)
        .run(|| "cannot write checkpoint".into())?;

    let summary = TrainSummary {
        provenance,
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_validation_metric: outcome.best_metric,
        config: cfg,
        attention,
        constant_attention,
    };
    let show = |m: &Option<Metrics>| m.as_ref().map_or("-".to_string(), |m| format!("{:.4}", m.accuracy));
    println!(
        "accuracy train {} validation {} test {} | constant attention test {}",
        show(&summary.attention.train),
        show(&summary.attention.validation),
        show(&summary.attention.test),
        show(&summary.constant_attention.test)
    );
    write_json(&args.out.join("summary.json"), &summary)
}

#[derive(Serialize)]
struct EvalReport {
    provenance: Provenance,
    checkpoint: String,
    data: String,
    constant_attention: bool,
    metrics: SplitMetrics,
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    if !args.checkpoint.exists() {
        return Err(Failure::Input(anyhow!("cannot read {}: no such file", args.checkpoint.display())));
    }
    let (model, params, manifest) =
        load_checkpoint(&args.checkpoint).input(|| format!("invalid checkpoint {}", args.checkpoint.display()))?;
    let data = read_dataset(&args.data)?;
    check_compatible(&manifest.model, &data, &args.data)?;
    prepare_out(&args.out)?;
    let report = EvalReport {
        provenance: Provenance {
            version: VERSION.to_string(),
            ..manifest.provenance
        },
        checkpoint: args.checkpoint.display().to_string(),
        data: args.data.display().to_string(),
        constant_attention: args.constant_attention,
        metrics: split_metrics(&model, &params, &data, args.constant_attention)?,
    };
    write_json(&args.out.join("eval.json"), &report)
}

#[derive(Serialize)]
struct SweepSummary {
    provenance: Provenance,
    trials: usize,
    completed: usize,
    failed: usize,
    best: Option<TrialRecord>,
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let mut raw: Value = read_json(&args.config)?;
    if let Some(Value::String(name)) = raw.get("space") {
        let space = match name.as_str() {
            "transductive" => transductive_space(),
            "inductive" => inductive_space(),
            other => {
                return Err(Failure::Input(anyhow!(
                    "{}: unknown built-in space `{other}`",
                    args.config.display()
                )))
            }
        };
        raw["space"] = serde_json::to_value(space).expect("space serialises");
    }
    let mut spec: SweepSpec =
        serde_json::from_value(raw).input(|| format!("invalid sweep spec {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.space
        .validate()
        .input(|| format!("invalid prior space in {}", args.config.display()))?;
    let data = read_dataset(&args.data)?;
    check_compatible(&spec.model, &data, &args.data)?;
    prepare_out(&args.out)?;
    let provenance = Provenance::new(&serde_json::to_vec(&spec).expect("spec serialises"), spec.seed);

    let records_path = args.out.join("trials.jsonl");
    let existing = read_records(&records_path).input(|| format!("cannot read {}", records_path.display()))?;
    if let Some(r) = existing.iter().find(|r| r.provenance.config_hash != provenance.config_hash) {
        return Err(Failure::Input(anyhow!(
            "{}: trial {} was produced by a different sweep spec",
            records_path.display(),
            r.trial
        )));
    }
    let parallelism = args
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let records = run_sweep(&spec, &data, &records_path, parallelism, &provenance).run(|| "sweep failed".into())?;

    let completed = records.iter().filter(|r| r.status == TrialStatus::Ok).count();
    let best = records
        .iter()
        .filter(|r| r.final_metric.is_some())
        .max_by(|a, b| a.final_metric.unwrap().total_cmp(&b.final_metric.unwrap()))
        .cloned();
    println!("{completed} of {} trials completed", records.len());
    write_json(
        &args.out.join("sweep_summary.json"),
        &SweepSummary {
            provenance,
            trials: records.len(),
            completed,
            failed: records.len() - completed,
            best,
        },
    )
}

/// Values of one results file: final metrics of completed trials, or the
/// selected metric at the last recorded epoch of each trial.
fn load_samples(path: &Path, split: &str, metric: &str) -> CliResult<Vec<f64>> {
    let text = String::from_utf8(read_bytes(path)?).input(|| format!("{} is not UTF-8", path.display()))?;
    let mut values = Vec::new();
    let mut latest: BTreeMap<u64, (usize, f64)> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Ok(value) = serde_json::from_str::<Value>(line) else {
            log::warn!("{}:{}: skipping unreadable line", path.display(), n + 1);
            continue;
        };
        if value.get("final_metric").is_some() {
            let r: TrialRecord =
                serde_json::from_value(value).input(|| format!("{}:{}: bad trial record", path.display(), n + 1))?;
            if let (TrialStatus::Ok, Some(v)) = (r.status, r.final_metric) {
                values.push(v);
            }
        } else {
            let r: MetricRecord =
                serde_json::from_value(value).input(|| format!("{}:{}: bad metric record", path.display(), n + 1))?;
            if r.split == split && r.metric == metric {
                let slot = latest.entry(r.trial).or_insert((r.epoch, r.value));
                if r.epoch >= slot.0 {
                    *slot = (r.epoch, r.value);
                }
            }
        }
    }
    values.extend(latest.values().map(|&(_, v)| v));
    Ok(values)
}

#[derive(Serialize)]
struct PairTest {
    x: String,
    y: String,
    #[serde(flatten)]
    test: UTest,
}

#[derive(Serialize)]
struct PValueReport {
    provenance: Provenance,
    labels: Vec<String>,
    p: Vec<Vec<Option<f64>>>,
    tests: Vec<PairTest>,
}

#[derive(Serialize)]
struct LabelledCdf {
    label: String,
    n: usize,
    cdf: EmpiricalCdf,
}

#[derive(Serialize)]
struct CdfReport {
    provenance: Provenance,
    cdfs: Vec<LabelledCdf>,
}

fn cmd_stats(args: &StatsArgs) -> CliResult<()> {
    let mut sets = Vec::new();
    let mut fingerprint = Vec::new();
    for path in &args.data {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        if sets.iter().any(|s: &SampleSet| s.label == label) {
            return Err(Failure::Input(anyhow!("{}: duplicate sample label `{label}`", path.display())));
        }
        let values = load_samples(path, &args.split, &args.metric)?;
        fingerprint.push(serde_json::json!({ "label": label, "sha256": config_hash(&read_bytes(path)?) }));
        sets.push(SampleSet::new(label, values).input(|| format!("{}: no usable values", path.display()))?);
    }
    prepare_out(&args.out)?;
    let options = serde_json::json!({ "inputs": fingerprint, "split": args.split, "metric": args.metric });
    let provenance = Provenance::new(&serde_json::to_vec(&options).expect("options serialise"), args.seed);

    let matrix = pairwise_p_values(&sets).run(|| "test failed".into())?;
    let mut tests = Vec::new();
    for x in &sets {
        for y in &sets {
            if x.label != y.label {
                tests.push(PairTest {
                    x: x.label.clone(),
                    y: y.label.clone(),
                    test: mann_whitney_u(x, y).run(|| "test failed".into())?,
                });
            }
        }
    }
    write_text(&args.out.join("pvalues.csv"), &(csv_header(&provenance) + &matrix.to_csv()))?;
    write_json(
        &args.out.join("pvalues.json"),
        &PValueReport {
            provenance: provenance.clone(),
            labels: matrix.labels,
            p: matrix.p,
            tests,
        },
    )?;

    let mut cdfs = Vec::new();
    let mut csv = csv_header(&provenance) + "label,x,F\n";
    for s in &sets {
        let cdf = empirical_cdf(&s.values).run(|| "cdf failed".into())?;
        for (x, f) in &cdf.points {
            csv += &format!("{},{x},{f}\n", s.label);
        }
        cdfs.push(LabelledCdf {
            label: s.label.clone(),
            n: s.values.len(),
            cdf,
        });
    }
    write_text(&args.out.join("cdf.csv"), &csv)?;
    write_json(&args.out.join("cdf.json"), &CdfReport { provenance, cdfs })?;
    println!("{} sample sets, {} ordered pairs", sets.len(), sets.len() * sets.len().saturating_sub(1));
    Ok(())
}

fn default_validation() -> usize {
    20
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenConfig {
    #[serde(flatten)]
    planted: PlantedConfig,
    #[serde(default = "default_validation")]
    n_validation: usize,
    #[serde(default = "default_validation")]
    n_test: usize,
}

/// Training setup known to learn the planted task.
fn planted_run_config(gen: &GenConfig) -> RunConfig {
    let mut train = TrainConfig::new(0.01);
    train.patience = None;
    train.batch_size = 16;
    train.seed = gen.planted.seed;
    RunConfig {
        model: ModelConfig::GraphClassifier(GraphClassifierConfig {
            num_relations: gen.planted.num_relations,
            feature_dim: gen.planted.feature_dim,
            graph_units: 16,
            dense_units: 16,
            num_tasks: 1,
            num_classes: 2,
            attention: RgatSettings {
                logit_mode: LogitMode::Multiplicative,
                norm: NormKind::Argat,
                heads: 2,
                query_dim: 4,
                use_bias: true,
                kernel_basis: None,
                attention_basis: None,
            },
            self_relation: true,
        }),
        train,
        provenance: None,
    }
}

fn cmd_gen(args: &GenArgs) -> CliResult<()> {
    let mut gen = match &args.config {
        Some(p) => read_json(p)?,
        None => GenConfig {
            planted: PlantedConfig::default(),
            n_validation: default_validation(),
            n_test: default_validation(),
        },
    };
    if let Some(seed) = args.seed {
        gen.planted.seed = seed;
    }
    let data = planted_dataset(&gen.planted, gen.n_validation, gen.n_test).input(|| "invalid generator settings".into())?;
    prepare_out(&args.out)?;
    let provenance = Provenance::new(&serde_json::to_vec(&gen).expect("settings serialise"), gen.planted.seed);
    let text = serialize_dataset_stamped(&data, Some(&provenance)).run(|| "serialisation failed".into())?;
    write_text(&args.out.join("dataset.json"), &(text + "\n"))?;
    let mut run = serde_json::to_value(planted_run_config(&gen)).expect("config serialises");
    run["provenance"] = serde_json::to_value(&provenance).expect("provenance serialises");
    write_json(&args.out.join("run_config.json"), &run)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            let (Failure::Input(e) | Failure::Run(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

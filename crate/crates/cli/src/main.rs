//! `eventline`: dataset ingestion, preprocessing, training and parameter
//! sweeps for spiking line-detection preprocessing.
//!
//! Exit codes: 0 success, 1 plan or usage error, 2 sweep finished with
//! failed rows, 3 dataset error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use eventline_core::classifier::{Classifier, SparseFrames};
use eventline_core::dataset::{ingest_nmnist, write_split, DatasetSpec, Manifest, Split};
use eventline_core::event::{EventSample, PolarityMode, SensorGeometry};
use eventline_core::harness::{
    self, architecture_table, classifier_config, emit, from_json, prepare, select, Criterion, DatasetSource,
    EmitFormat, ExperimentPlan, Prepared, TrainingOverrides, DEFAULT_BIN_US, DEFAULT_DENOISE_US,
};
use eventline_core::lif::LifParams;
use eventline_core::parallel::Execution;
use eventline_core::strategies::{build_network, preprocess_all, Sidecar, StrategyConfig, StrategyKind};
use eventline_core::synth;
use serde_json::json;

#[derive(Parser)]
#[command(name = "eventline", version, about = "Spiking line-detection preprocessing for event cameras")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset into canonical event files plus a manifest.
    Ingest(IngestArgs),
    /// Run a dataset through a preprocessing layer and store its output.
    Preprocess(PreprocessArgs),
    /// Train a classifier on a manifest's training split.
    Train(TrainArgs),
    /// Evaluate a trained classifier on a manifest's test split.
    Eval(EvalArgs),
    /// Run an experiment plan and write its report.
    Sweep(SweepArgs),
    /// Print neuron and synapse counts of every strategy.
    Arch(ArchArgs),
    /// Re-emit a stored report or select its best rows.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Nmnist,
    SynthPips,
    SynthDigits,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(value_enum)]
    source: Source,
    /// Output directory for the canonical files and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// N-MNIST root holding Train/ and Test/.
    #[arg(long, required_if_eq("source", "nmnist"))]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 48)]
    train: usize,
    #[arg(long, default_value_t = 12)]
    test: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Tiling name (ws, ce, cr, cq-ad, cq-id) or a `+`-joined combination.
    #[arg(long)]
    strategy: String,
    #[arg(long, default_value = "merged")]
    polarity: PolarityMode,
    #[arg(long, default_value_t = 30)]
    k: u16,
    #[arg(long, default_value_t = 5.0)]
    omega: f64,
    #[arg(long, default_value_t = DEFAULT_DENOISE_US)]
    denoise_us: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainingFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl TrainingFlags {
    fn overrides(&self) -> TrainingOverrides {
        TrainingOverrides {
            epochs: self.epochs,
            threshold: self.threshold,
            batch_size: self.batch_size,
            lr: self.lr,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Polarity channels of the classifier input. Detector output is
    /// already channel-separated, so keep `merged` for it.
    #[arg(long, default_value = "merged")]
    polarity: PolarityMode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    training: TrainingFlags,
    #[arg(long, default_value_t = DEFAULT_DENOISE_US)]
    denoise_us: u64,
    #[arg(long, default_value_t = DEFAULT_BIN_US)]
    bin_us: u64,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "merged")]
    polarity: PolarityMode,
    #[arg(long, default_value_t = DEFAULT_DENOISE_US)]
    denoise_us: u64,
    #[arg(long, default_value_t = DEFAULT_BIN_US)]
    bin_us: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Plan file (JSON).
    #[arg(long)]
    plan: PathBuf,
    /// Write a default plan for this manifest to `--plan` and stop.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated strategy names, `none` for the plain classifier.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    polarities: Option<Vec<PolarityMode>>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<u16>>,
    #[arg(long, value_delimiter = ',')]
    omega_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Args)]
struct ArchArgs {
    #[arg(long, value_delimiter = ',', default_value = "34,35,128")]
    sides: Vec<u16>,
    #[arg(long, default_value_t = 30)]
    k: u16,
    #[arg(long, default_value_t = 5.0)]
    omega: f64,
    #[arg(long, default_value_t = 10)]
    labels: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json written by a sweep.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    format: Option<EmitFormat>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the chosen row per strategy and polarity.
    #[arg(long)]
    select: Option<Criterion>,
}

/// An error tagged with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Tag<T> {
    fn plan_error(self) -> Result<T, Failure>;
    fn dataset_error(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn plan_error(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }

    fn dataset_error(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 3, error: e.into() })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Preprocess(a) => preprocess_cmd(a, exec),
        Command::Train(a) => train(a, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Sweep(a) => sweep_cmd(a, exec),
        Command::Arch(a) => arch(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}

fn ingest(a: IngestArgs) -> Result<u8, Failure> {
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display())).dataset_error()?;
    let manifest = match a.source {
        Source::Nmnist => {
            let input = a.input.as_deref().context("--input is required for nmnist").plan_error()?;
            ingest_nmnist(input, &a.out).dataset_error()?
        }
        Source::SynthPips | Source::SynthDigits => {
            let (name, (spec, train, test)) = match a.source {
                Source::SynthPips => ("synth-pips", synth::synth_pips(a.train, a.test, a.seed)),
                _ => ("synth-digits", synth::synth_digits(a.train, a.test, a.seed)),
            };
            let mut m = Manifest::new(spec, format!("{name}:seed={}", a.seed));
            write_split(&mut m, &a.out, Split::Train, &train).dataset_error()?;
            write_split(&mut m, &a.out, Split::Test, &test).dataset_error()?;
            m
        }
    };
    let path = a.out.join("manifest.json");
    manifest.write(&path).dataset_error()?;
    println!(
        "{}",
        json!({
            "manifest": path,
            "samples": manifest.samples.len(),
            "hash": manifest.hash(),
        })
    );
    Ok(0)
}

fn load(manifest: &Path) -> Result<(DatasetSpec, Vec<EventSample>, Vec<EventSample>), Failure> {
    harness::load_dataset(&DatasetSource::Manifest { path: manifest.to_path_buf() })
        .with_context(|| format!("loading {}", manifest.display()))
        .dataset_error()
}

/// Detector output lives on a one-row sensor and was cleaned before it was
/// simulated, so it is binned as is.
fn prepared(spec: DatasetSpec, train: &[EventSample], test: &[EventSample], denoise_us: u64, bin_us: u64) -> Result<Prepared, Failure> {
    if spec.geometry.height > 1 {
        return prepare(spec, train, test, denoise_us, bin_us).dataset_error();
    }
    if bin_us == 0 {
        return Err(Failure { code: 1, error: anyhow!("bin width must be positive") });
    }
    let labels = |s: &[EventSample]| -> Result<Vec<usize>, Failure> {
        s.iter()
            .map(|e| e.label.map(|l| l as usize).context("unlabelled sample"))
            .collect::<anyhow::Result<_>>()
            .dataset_error()
    };
    Ok(Prepared {
        time_bins: spec.keep_us.div_ceil(bin_us).max(1) as usize,
        hash: harness::dataset_hash(train, test).dataset_error()?,
        train_labels: labels(train)?,
        test_labels: labels(test)?,
        train: train.to_vec(),
        test: test.to_vec(),
        spec,
        bin_us,
        denoise_us: 0,
    })
}

fn preprocess_cmd(a: PreprocessArgs, exec: Execution) -> Result<u8, Failure> {
    let kind: StrategyKind = a.strategy.parse().plan_error()?;
    let config = StrategyConfig::new(kind, a.polarity, a.k, a.omega);
    config.validate().plan_error()?;
    let (spec, train, test) = load(&a.manifest)?;
    let prep = prepare(spec.clone(), &train, &test, a.denoise_us, DEFAULT_BIN_US).dataset_error()?;
    let net = build_network(spec.geometry, &config, &LifParams::default()).plan_error()?;
    let train_out = preprocess_all(&prep.train, &net, exec).dataset_error()?;
    let test_out = preprocess_all(&prep.test, &net, exec).dataset_error()?;

    let mut out_spec = spec;
    out_spec.geometry = SensorGeometry::unit_row(net.n_outputs() as u16);
    let mut m = Manifest::new(out_spec, format!("preprocess:{}:{}:k={}:omega={}", config.kind, a.polarity.as_str(), a.k, a.omega));
    let samples = |o: &[eventline_core::strategies::PreprocessOutput]| o.iter().map(|o| o.sample.clone()).collect::<Vec<_>>();
    std::fs::create_dir_all(&a.out).dataset_error()?;
    write_split(&mut m, &a.out, Split::Train, &samples(&train_out)).dataset_error()?;
    write_split(&mut m, &a.out, Split::Test, &samples(&test_out)).dataset_error()?;
    m.write(&a.out.join("manifest.json")).dataset_error()?;
    for (name, outs) in [("train", &train_out), ("test", &test_out)] {
        Sidecar::new(&net, outs, Some(prep.hash.clone()))
            .write(&a.out.join(format!("sidecar_{name}.json")))
            .dataset_error()?;
    }
    let census = net.census();
    println!(
        "{}",
        json!({
            "strategy": config.kind.to_string(),
            "polarity": a.polarity.as_str(),
            "n_outputs": net.n_outputs(),
            "synapses": census.synapses,
            "max_fan_in": census.max_fan_in,
            "train": train_out.len(),
            "test": test_out.len(),
        })
    );
    Ok(0)
}

fn frames(samples: &[EventSample], mode: PolarityMode, prep: &Prepared) -> Vec<SparseFrames> {
    samples.iter().map(|s| SparseFrames::from_sample(s, prep.bin_us, mode, prep.time_bins, false)).collect()
}

fn train(a: TrainArgs, exec: Execution) -> Result<u8, Failure> {
    let (spec, train, test) = load(&a.manifest)?;
    let prep = prepared(spec, &train, &test, a.denoise_us, a.bin_us)?;
    let xs = frames(&prep.train, a.polarity, &prep);
    let d = prep.spec.geometry.pixels() * a.polarity.channels();
    let config = classifier_config(&prep.spec, &a.training.overrides(), d, a.seed);
    let mut clf = Classifier::new(config).plan_error()?;
    let stats = clf.train(&xs, &prep.train_labels, exec).plan_error()?;
    for s in &stats {
        log::info!("epoch {} loss {:.5} train accuracy {:.3}", s.epoch, s.loss, s.train_accuracy);
    }
    clf.save(&a.out).with_context(|| format!("writing {}", a.out.display())).plan_error()?;
    println!("{}", json!({ "model": a.out, "epochs": stats }));
    Ok(0)
}

fn eval(a: EvalArgs, exec: Execution) -> Result<u8, Failure> {
    let clf = Classifier::load(&a.model).with_context(|| format!("reading {}", a.model.display())).plan_error()?;
    let (spec, train, test) = load(&a.manifest)?;
    let prep = prepared(spec, &train, &test, a.denoise_us, a.bin_us)?;
    let xs = frames(&prep.test, a.polarity, &prep);
    if xs.first().is_some_and(|x| x.dim != clf.config.d_in) {
        return Err(Failure {
            code: 1,
            error: anyhow!("model expects {} inputs, data has {}", clf.config.d_in, xs[0].dim),
        });
    }
    let ev = clf.evaluate(&xs, &prep.test_labels, exec).plan_error()?;
    let n_c = clf.config.n_labels as f64;
    let events = prep.test.iter().map(|s| s.len()).sum::<usize>() as f64 / prep.test.len().max(1) as f64;
    let sidecar = a.manifest.parent().map(|p| p.join("sidecar_test.json")).filter(|p| p.exists());
    let se_p = match sidecar {
        Some(p) => {
            let s = Sidecar::read(&p).dataset_error()?;
            s.se_p_total as f64 / s.samples.max(1) as f64
        }
        None => 0.0,
    };
    let se = se_p + events * n_c;
    println!(
        "{}",
        json!({
            "accuracy": ev.accuracy,
            "samples": prep.test.len(),
            "events_in": events,
            "se_p": se_p,
            "se": se,
            "efficiency": (se > 0.0).then(|| ev.accuracy / se),
        })
    );
    Ok(0)
}

fn sweep_cmd(a: SweepArgs, exec: Execution) -> Result<u8, Failure> {
    if let Some(manifest) = &a.init {
        let out = a.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
        let plan = ExperimentPlan::new(DatasetSource::Manifest { path: manifest.clone() }, out);
        plan.write(&a.plan).plan_error()?;
        println!("{}", json!({ "plan": a.plan, "grid_points": plan.grid().plan_error()?.len() }));
        return Ok(0);
    }
    let mut plan = ExperimentPlan::read(&a.plan).with_context(|| format!("reading {}", a.plan.display())).plan_error()?;
    if let Some(v) = a.out {
        plan.output_dir = v;
    }
    if let Some(v) = a.strategies {
        plan.strategies = v;
    }
    if let Some(v) = a.polarities {
        plan.polarities = v;
    }
    if let Some(v) = a.k_grid {
        plan.k_grid = v;
    }
    if let Some(v) = a.omega_grid {
        plan.omega_grid = v;
    }
    if let Some(v) = a.seeds {
        plan.seeds = v;
    }
    if a.workers.is_some() {
        plan.workers = a.workers;
    }
    let t = a.training.overrides();
    plan.training = TrainingOverrides {
        epochs: t.epochs.or(plan.training.epochs),
        threshold: t.threshold.or(plan.training.threshold),
        batch_size: t.batch_size.or(plan.training.batch_size),
        lr: t.lr.or(plan.training.lr),
    };
    plan.validate().plan_error()?;

    let (spec, train, test) = harness::load_dataset(&plan.dataset).dataset_error()?;
    let prep = prepare(spec, &train, &test, plan.denoise_us, plan.bin_us).dataset_error()?;
    let outcome = harness::sweep_prepared(&plan, &prep, exec).plan_error()?;
    for format in [EmitFormat::Csv, EmitFormat::Json, EmitFormat::Plotdata] {
        emit(&outcome.report, format, &plan.output_dir).plan_error()?;
    }
    println!(
        "{}",
        json!({
            "rows": outcome.report.rows.len(),
            "reused": outcome.reused,
            "failed": outcome.failed,
            "baseline_accuracy": outcome.report.baseline_accuracy,
            "output_dir": plan.output_dir,
        })
    );
    Ok(if outcome.failed > 0 { 2 } else { 0 })
}

fn arch(a: ArchArgs) -> Result<u8, Failure> {
    if a.sides.is_empty() {
        return Err(Failure { code: 1, error: anyhow!("no sensor sides given") });
    }
    let table = architecture_table(&a.sides, a.k, a.omega, a.labels).plan_error()?;
    match a.out {
        Some(p) => std::fs::write(&p, table).with_context(|| format!("writing {}", p.display())).plan_error()?,
        None => print!("{table}"),
    }
    Ok(0)
}

fn report(a: ReportArgs) -> Result<u8, Failure> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display())).plan_error()?;
    let report = from_json(&text).plan_error()?;
    if a.format.is_none() && a.select.is_none() {
        return Err(Failure { code: 1, error: anyhow!("nothing to do: pass --format and/or --select") });
    }
    if let Some(format) = a.format {
        let Some(out) = &a.out else {
            return Err(Failure { code: 1, error: anyhow!("--format needs --out") });
        };
        for p in emit(&report, format, out).plan_error()? {
            log::info!("wrote {}", p.display());
        }
    }
    if let Some(criterion) = a.select {
        let sel = select(&report, criterion).plan_error()?;
        let chosen: Vec<_> = sel
            .chosen
            .iter()
            .map(|r| {
                json!({
                    "strategy": r.strategy,
                    "polarity": r.polarity.as_str(),
                    "k": r.k,
                    "omega": r.omega,
                    "accuracy": r.accuracy,
                    "se": r.se(),
                    "efficiency": r.efficiency,
                })
            })
            .collect();
        let gated: Vec<_> = sel
            .gated_out
            .iter()
            .map(|g| json!({ "strategy": g.strategy, "polarity": g.polarity.as_str(), "best_accuracy": g.best_accuracy, "gate": g.gate }))
            .collect();
        println!("{}", json!({ "criterion": criterion.as_str(), "chosen": chosen, "gated_out": gated }));
    }
    match report.failed_rows() {
        0 => Ok(0),
        n => Err(Failure { code: 2, error: anyhow!("report has {n} failed rows") }),
    }
}

/// The error chain joined with `: `, skipping causes already quoted by the
/// message above them.
fn describe(error: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

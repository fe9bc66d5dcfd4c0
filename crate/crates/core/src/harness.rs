//! Experiment plans, grid sweeps with a preprocess-once cache and resume,
//! parametrisation selection and report emission.
//!
//! A sweep runs every (strategy, polarity, k, omega) grid point plus one
//! no-preprocessing row per polarity. Each grid point simulates the
//! preprocessing layer once, trains one classifier per seed and averages
//! test accuracy. Rows are written to `<output>/rows/<config hash>.json` as
//! they finish, so an interrupted sweep resumes where it stopped.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, BaselineConfig, BaselineKind};
use crate::classifier::{Classifier, ClassifierConfig, SparseFrames};
use crate::dataset::{DatasetSpec, Manifest, Split};
use crate::error::{Error, Result};
use crate::event::{denoise, shorten, EventSample, PolarityMode};
use crate::format;
use crate::lif::LifParams;
use crate::metrics::{self, ArchitectureCensus, EnergyReport};
use crate::parallel::{self, Execution};
use crate::strategies::{build_network, preprocess_all, PreprocessNetwork, PreprocessOutput, StrategyConfig, StrategyKind};
use crate::synth;

pub const PLAN_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_K_GRID: [u16; 7] = [1, 5, 10, 15, 20, 25, 30];
pub const DEFAULT_OMEGA_GRID: [f64; 5] = [1.0, 2.5, 5.0, 7.5, 10.0];
pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];
pub const DEFAULT_DENOISE_US: u64 = 10_000;
pub const DEFAULT_BIN_US: u64 = 1_000;
/// Strategy name of the classifier fed directly with sensor events.
pub const NO_PREPROCESSING: &str = "none";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    /// A manifest written by `eventline ingest`; sample paths are relative
    /// to the manifest's directory.
    Manifest { path: PathBuf },
    SynthPips { train: usize, test: usize, seed: u64 },
    SynthDigits { train: usize, test: usize, seed: u64 },
}

/// Classifier settings that replace the dataset defaults when set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
}

/// A two-layer comparison network trained alongside the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    #[serde(flatten)]
    pub baseline: BaselineConfig,
    pub polarity: PolarityMode,
}

impl Comparison {
    pub fn name(&self) -> String {
        match self.baseline.prune {
            Some(_) => format!("{}-pruned", self.baseline.kind.as_str()),
            None => self.baseline.kind.as_str().to_string(),
        }
    }
}

fn default_denoise() -> u64 {
    DEFAULT_DENOISE_US
}

fn default_bin() -> u64 {
    DEFAULT_BIN_US
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub schema_version: u32,
    pub dataset: DatasetSource,
    /// Strategy names such as `ce`, `cq-ad` or `cr+ce`; `none` is accepted
    /// and always implied.
    pub strategies: Vec<String>,
    pub polarities: Vec<PolarityMode>,
    pub k_grid: Vec<u16>,
    pub omega_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub comparisons: Vec<Comparison>,
    #[serde(default)]
    pub training: TrainingOverrides,
    #[serde(default = "default_denoise")]
    pub denoise_us: u64,
    #[serde(default = "default_bin")]
    pub bin_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

/// One unit of sweep work.
#[derive(Clone, Debug, PartialEq)]
pub enum GridPoint {
    Baseline(PolarityMode),
    Line(StrategyConfig),
    Comparison(Comparison),
}

impl ExperimentPlan {
    /// Default grids, all five single strategies and both polarity modes.
    pub fn new(dataset: DatasetSource, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: PLAN_SCHEMA_VERSION,
            dataset,
            strategies: ["ws", "ce", "cr", "cq-ad", "cq-id"].iter().map(|s| s.to_string()).collect(),
            polarities: vec![PolarityMode::Merged, PolarityMode::Split],
            k_grid: DEFAULT_K_GRID.to_vec(),
            omega_grid: DEFAULT_OMEGA_GRID.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            output_dir: output_dir.into(),
            comparisons: Vec::new(),
            training: TrainingOverrides::default(),
            denoise_us: DEFAULT_DENOISE_US,
            bin_us: DEFAULT_BIN_US,
            workers: None,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let plan: ExperimentPlan = serde_json::from_slice(&fs::read(path)?)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != PLAN_SCHEMA_VERSION {
            return bad(format!("unsupported plan schema_version {}", self.schema_version));
        }
        if self.polarities.is_empty() || self.seeds.is_empty() {
            return bad("polarity list and seed list must be non-empty".into());
        }
        if self.k_grid.is_empty() || self.omega_grid.is_empty() {
            return bad("k and omega grids must be non-empty".into());
        }
        if self.k_grid.contains(&0) {
            return bad("k must be at least 1".into());
        }
        if let Some(w) = self.omega_grid.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return bad(format!("omega must be positive, got {w}"));
        }
        if self.bin_us == 0 {
            return bad("bin width must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("worker limit must be positive".into());
        }
        self.line_strategies()?;
        Ok(())
    }

    fn line_strategies(&self) -> Result<Vec<StrategyKind>> {
        let mut out: Vec<StrategyKind> = Vec::new();
        for s in &self.strategies {
            if s == NO_PREPROCESSING {
                continue;
            }
            let kind: StrategyKind = s.parse()?;
            kind.validate()?;
            if !out.contains(&kind) {
                out.push(kind);
            }
        }
        Ok(out)
    }

    /// Baselines first, then strategies in plan order with k and omega
    /// varying fastest, then comparison networks.
    pub fn grid(&self) -> Result<Vec<GridPoint>> {
        self.validate()?;
        let mut points: Vec<GridPoint> = self.polarities.iter().map(|&p| GridPoint::Baseline(p)).collect();
        for kind in self.line_strategies()? {
            for &polarity in &self.polarities {
                for &k in &self.k_grid {
                    for &omega in &self.omega_grid {
                        points.push(GridPoint::Line(StrategyConfig::new(kind.clone(), polarity, k, omega)));
                    }
                }
            }
        }
        points.extend(self.comparisons.iter().cloned().map(GridPoint::Comparison));
        Ok(points)
    }

    /// Hash of everything that affects results; output location and worker
    /// count are excluded.
    pub fn hash(&self) -> String {
        let mut p = self.clone();
        p.output_dir = PathBuf::new();
        p.workers = None;
        sha256_hex(&serde_json::to_vec(&p).expect("plan serializes"))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash over every sample's canonical encoding and label.
pub fn dataset_hash(train: &[EventSample], test: &[EventSample]) -> Result<String> {
    let mut h = Sha256::new();
    for (tag, split) in [(b'r', train), (b'e', test)] {
        h.update([tag]);
        h.update((split.len() as u64).to_le_bytes());
        for s in split {
            h.update(s.label.map_or(-1i64, |l| l as i64).to_le_bytes());
            h.update(format::encode(s)?);
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Loads or generates both splits of a dataset.
pub fn load_dataset(source: &DatasetSource) -> Result<(DatasetSpec, Vec<EventSample>, Vec<EventSample>)> {
    match source {
        DatasetSource::Manifest { path } => {
            let manifest = Manifest::read(path)?;
            let root = path.parent().unwrap_or_else(|| Path::new("."));
            let train = manifest.load_split(root, Split::Train)?;
            let test = manifest.load_split(root, Split::Test)?;
            Ok((manifest.dataset, train, test))
        }
        DatasetSource::SynthPips { train, test, seed } => Ok(synth::synth_pips(*train, *test, *seed)),
        DatasetSource::SynthDigits { train, test, seed } => Ok(synth::synth_digits(*train, *test, *seed)),
    }
}

/// Denoised, shortened samples ready for every grid point.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub spec: DatasetSpec,
    pub train: Vec<EventSample>,
    pub test: Vec<EventSample>,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
    /// Hash of the raw samples before denoising.
    pub hash: String,
    pub bin_us: u64,
    pub time_bins: usize,
    pub denoise_us: u64,
}

fn labels_of(samples: &[EventSample], n_labels: usize) -> Result<Vec<usize>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| match s.label {
            Some(l) if (l as usize) < n_labels => Ok(l as usize),
            Some(l) => Err(Error::Config(format!("sample {i} has label {l}, expected < {n_labels}"))),
            None => Err(Error::Config(format!("sample {i} is unlabelled"))),
        })
        .collect()
}

pub fn prepare(
    spec: DatasetSpec,
    train: &[EventSample],
    test: &[EventSample],
    denoise_us: u64,
    bin_us: u64,
) -> Result<Prepared> {
    if bin_us == 0 {
        return Err(Error::Config("bin width must be positive".into()));
    }
    let hash = dataset_hash(train, test)?;
    let clean = |s: &EventSample| shorten(&denoise(s, denoise_us), spec.keep_us);
    let train_p = parallel::map_slice(train, Execution::Parallel, clean);
    let test_p = parallel::map_slice(test, Execution::Parallel, clean);
    Ok(Prepared {
        train_labels: labels_of(&train_p, spec.n_labels)?,
        test_labels: labels_of(&test_p, spec.n_labels)?,
        time_bins: spec.keep_us.div_ceil(bin_us).max(1) as usize,
        train: train_p,
        test: test_p,
        spec,
        hash,
        bin_us,
        denoise_us,
    })
}

/// Dataset defaults with plan overrides applied.
pub fn classifier_config(spec: &DatasetSpec, training: &TrainingOverrides, d_in: usize, seed: u64) -> ClassifierConfig {
    let mut c = ClassifierConfig::linear(
        d_in,
        spec.n_labels,
        training.threshold.unwrap_or(spec.threshold),
        training.batch_size.unwrap_or(spec.batch_size),
        seed,
    );
    if let Some(e) = training.epochs {
        c.epochs = e;
    }
    if let Some(lr) = training.lr {
        c.lr = lr;
    }
    c
}

/// One line of the report: a grid point's metrics averaged over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub polarity: PolarityMode,
    pub k: Option<u16>,
    pub omega: Option<f64>,
    /// Hidden size of a comparison network.
    pub n_i: Option<usize>,
    pub seeds: Vec<u64>,
    /// Mean test accuracy over seeds.
    pub accuracy: Option<f64>,
    pub accuracy_per_seed: Vec<f64>,
    pub energy: Option<EnergyReport>,
    pub census: Option<ArchitectureCensus>,
    pub efficiency: Option<f64>,
    pub gate: Option<f64>,
    pub admissible: Option<bool>,
    pub config_hash: String,
    pub dataset_hash: String,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn is_baseline(&self) -> bool {
        self.strategy == NO_PREPROCESSING
    }

    pub fn is_line(&self) -> bool {
        self.k.is_some()
    }

    pub fn se(&self) -> Option<f64> {
        self.energy.as_ref().map(|e| e.se)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub dataset: String,
    pub dataset_hash: String,
    pub plan_hash: String,
    /// Best no-preprocessing accuracy; the gate is a fixed fraction of it.
    pub baseline_accuracy: Option<f64>,
    pub gate: Option<f64>,
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    /// Assembles rows and fills in efficiency and the accuracy gate.
    pub fn assemble(dataset: impl Into<String>, dataset_hash: impl Into<String>, plan_hash: impl Into<String>, mut rows: Vec<ReportRow>) -> Self {
        let baseline_accuracy = rows
            .iter()
            .filter(|r| r.is_baseline())
            .filter_map(|r| r.accuracy)
            .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))));
        for r in &mut rows {
            r.efficiency = None;
            r.gate = None;
            r.admissible = None;
            if let (Some(acc), Some(se), Some(base)) = (r.accuracy, r.se(), baseline_accuracy) {
                let e = metrics::efficiency(acc, se, base);
                r.efficiency = e.efficiency;
                r.gate = Some(e.gate);
                r.admissible = Some(e.admissible);
            }
        }
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            dataset: dataset.into(),
            dataset_hash: dataset_hash.into(),
            plan_hash: plan_hash.into(),
            gate: baseline_accuracy.map(|b| metrics::GATE_FRACTION * b),
            baseline_accuracy,
            rows,
        }
    }

    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

#[derive(Serialize)]
struct RowKey<'a> {
    point: String,
    polarity: PolarityMode,
    k: Option<u16>,
    omega: Option<f64>,
    comparison: Option<&'a BaselineConfig>,
    seeds: &'a [u64],
    training: &'a TrainingOverrides,
    spec: &'a DatasetSpec,
    denoise_us: u64,
    bin_us: u64,
    dataset_hash: &'a str,
}

fn point_key(p: &GridPoint) -> (String, PolarityMode, Option<u16>, Option<f64>, Option<&BaselineConfig>) {
    match p {
        GridPoint::Baseline(pol) => (NO_PREPROCESSING.to_string(), *pol, None, None, None),
        GridPoint::Line(c) => (c.kind.to_string(), c.polarity, Some(c.k), Some(c.omega), None),
        GridPoint::Comparison(c) => (c.name(), c.polarity, None, None, Some(&c.baseline)),
    }
}

/// Hash identifying one grid point's result.
pub fn config_hash(point: &GridPoint, plan: &ExperimentPlan, prep: &Prepared) -> String {
    let (name, polarity, k, omega, comparison) = point_key(point);
    let key = RowKey {
        point: name,
        polarity,
        k,
        omega,
        comparison,
        seeds: &plan.seeds,
        training: &plan.training,
        spec: &prep.spec,
        denoise_us: prep.denoise_us,
        bin_us: prep.bin_us,
        dataset_hash: &prep.hash,
    };
    sha256_hex(&serde_json::to_vec(&key).expect("row key serializes"))
}

fn preprocess_key(config: &StrategyConfig, prep: &Prepared) -> String {
    let key = (
        config.kind.to_string(),
        config.polarity,
        config.k,
        config.omega,
        &prep.hash,
        prep.denoise_us,
        prep.spec.keep_us,
    );
    sha256_hex(&serde_json::to_vec(&key).expect("cache key serializes"))
}

const CACHE_MAGIC: &[u8; 4] = b"ELPC";
const CACHE_VERSION: u32 = 1;

fn encode_outputs(outputs: &[PreprocessOutput]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(outputs.len() as u64).to_le_bytes());
    for o in outputs {
        let body = format::encode(&o.sample)?;
        out.extend_from_slice(&o.sample.label.map_or(-1i64, |l| l as i64).to_le_bytes());
        out.extend_from_slice(&o.se_p.to_le_bytes());
        out.extend_from_slice(&o.wta_events.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
    }
    Ok(out)
}

fn decode_outputs(bytes: &[u8]) -> Result<Vec<PreprocessOutput>> {
    let truncated = || Error::Parse("truncated preprocessing cache".into());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(truncated)?;
        pos += n;
        Ok(s)
    };
    if take(4)? != CACHE_MAGIC {
        return Err(Error::Parse("bad preprocessing cache magic".into()));
    }
    let u64_of = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(Error::Parse(format!("unsupported preprocessing cache version {version}")));
    }
    let n = u64_of(take(8)?) as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let label = u64_of(take(8)?) as i64;
        let se_p = u64_of(take(8)?);
        let wta_events = u64_of(take(8)?);
        let len = u64_of(take(8)?) as usize;
        let sample = format::decode(take(len)?, u32::try_from(label).ok())?;
        out.push(PreprocessOutput {
            sample,
            record: Default::default(),
            se_p,
            wta_events,
        });
    }
    Ok(out)
}

/// Preprocessed train and test splits, read from `cache_dir` when present.
pub fn preprocess_cached(
    net: &PreprocessNetwork,
    prep: &Prepared,
    cache_dir: Option<&Path>,
    exec: Execution,
) -> Result<(Vec<PreprocessOutput>, Vec<PreprocessOutput>)> {
    let path = cache_dir.map(|d| d.join(format!("{}.bin", preprocess_key(&net.config, prep))));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let bytes = fs::read(p)?;
        match decode_outputs(&bytes) {
            Ok(mut all) if all.len() == prep.train.len() + prep.test.len() => {
                let test = all.split_off(prep.train.len());
                return Ok((all, test));
            }
            _ => log::warn!("ignoring unreadable cache {}", p.display()),
        }
    }
    let train = preprocess_all(&prep.train, net, exec)?;
    let test = preprocess_all(&prep.test, net, exec)?;
    if let Some(p) = path {
        let mut all = train.clone();
        all.extend(test.iter().cloned());
        let tmp = p.with_extension("tmp");
        fs::write(&tmp, encode_outputs(&all)?)?;
        fs::rename(&tmp, &p)?;
    }
    Ok((train, test))
}

fn frames(samples: &[EventSample], mode: PolarityMode, prep: &Prepared, exec: Execution) -> Vec<SparseFrames> {
    parallel::map_slice(samples, exec, |s| SparseFrames::from_sample(s, prep.bin_us, mode, prep.time_bins, false))
}

fn train_seeds(
    plan: &ExperimentPlan,
    prep: &Prepared,
    train: &[SparseFrames],
    test: &[SparseFrames],
    exec: Execution,
) -> Result<Vec<f64>> {
    let d = train.first().or(test.first()).map_or(1, |f| f.dim);
    plan.seeds
        .iter()
        .map(|&seed| {
            let mut c = Classifier::new(classifier_config(&prep.spec, &plan.training, d, seed))?;
            c.train(train, &prep.train_labels, exec)?;
            Ok(c.evaluate(test, &prep.test_labels, exec)?.accuracy)
        })
        .collect()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

struct Measured {
    accuracy_per_seed: Vec<f64>,
    energy: EnergyReport,
    census: ArchitectureCensus,
    n_i: Option<usize>,
}

fn run_baseline(plan: &ExperimentPlan, prep: &Prepared, polarity: PolarityMode, exec: Execution) -> Result<Measured> {
    let tr = frames(&prep.train, polarity, prep, exec);
    let te = frames(&prep.test, polarity, prep, exec);
    Ok(Measured {
        accuracy_per_seed: train_seeds(plan, prep, &tr, &te, exec)?,
        energy: metrics::count_se_no_preprocessing(&prep.test, prep.spec.n_labels),
        census: metrics::census_no_preprocessing(prep.spec.geometry.width, polarity, prep.spec.n_labels),
        n_i: None,
    })
}

fn run_line(plan: &ExperimentPlan, prep: &Prepared, config: &StrategyConfig, cache_dir: Option<&Path>, exec: Execution) -> Result<Measured> {
    let net = build_network(prep.spec.geometry, config, &LifParams::default())?;
    let (train_out, test_out) = preprocess_cached(&net, prep, cache_dir, exec)?;
    let energy = metrics::count_se(&net, &prep.test, &test_out, prep.spec.n_labels)?;
    let outputs = |o: &[PreprocessOutput]| -> Vec<EventSample> { o.iter().map(|o| o.sample.clone()).collect() };
    let tr = frames(&outputs(&train_out), PolarityMode::Merged, prep, exec);
    let te = frames(&outputs(&test_out), PolarityMode::Merged, prep, exec);
    Ok(Measured {
        accuracy_per_seed: train_seeds(plan, prep, &tr, &te, exec)?,
        energy,
        census: metrics::census_of(&net, Some(prep.spec.n_labels)),
        n_i: None,
    })
}

fn run_comparison(plan: &ExperimentPlan, prep: &Prepared, cmp: &Comparison, exec: Execution) -> Result<Measured> {
    let tr = frames(&prep.train, cmp.polarity, prep, exec);
    let te = frames(&prep.test, cmp.polarity, prep, exec);
    let n_c = prep.spec.n_labels;
    let mut accs = Vec::new();
    let (mut se_p, mut se_c, mut hidden_spikes) = (0.0, 0.0, 0.0);
    let mut census = None;
    let mut n_i = None;
    for &seed in &plan.seeds {
        let base = classifier_config(&prep.spec, &plan.training, 1, seed);
        let (mut c, shape) = baselines::build_baseline(prep.spec.geometry, cmp.polarity, &cmp.baseline, &base)?;
        c.train(&tr, &prep.train_labels, exec)?;
        if let Some(t) = cmp.baseline.prune {
            baselines::prune(&mut c, t);
        }
        let ev = c.evaluate(&te, &prep.test_labels, exec)?;
        let hidden = ev.layer_spikes[0];
        accs.push(ev.accuracy);
        se_c += hidden * n_c as f64;
        se_p += ev.synaptic_events - hidden * n_c as f64;
        hidden_spikes += hidden;
        n_i = Some(shape.n_i);
        // Pruned censuses differ per seed; the first seed's is reported.
        census.get_or_insert_with(|| baselines::census(&c));
    }
    let n = plan.seeds.len() as f64;
    let events = metrics::count_se_no_preprocessing(&prep.test, n_c).events_raw;
    let (se_p, se_c) = (se_p / n, se_c / n);
    Ok(Measured {
        accuracy_per_seed: accs,
        energy: EnergyReport {
            samples: prep.test.len(),
            se_p,
            se_c,
            se: se_p + se_c,
            events_in: hidden_spikes / n,
            events_raw: events,
            n_c,
            wta_events: 0.0,
        },
        census: census.unwrap_or_default(),
        n_i,
    })
}

/// Runs one grid point. Failures become rows carrying the error.
pub fn run_point(plan: &ExperimentPlan, prep: &Prepared, point: &GridPoint, cache_dir: Option<&Path>, exec: Execution) -> ReportRow {
    let (strategy, polarity, k, omega, _) = point_key(point);
    let result = match point {
        GridPoint::Baseline(p) => run_baseline(plan, prep, *p, exec),
        GridPoint::Line(c) => run_line(plan, prep, c, cache_dir, exec),
        GridPoint::Comparison(c) => run_comparison(plan, prep, c, exec),
    };
    let mut row = ReportRow {
        strategy,
        polarity,
        k,
        omega,
        n_i: None,
        seeds: plan.seeds.clone(),
        accuracy: None,
        accuracy_per_seed: Vec::new(),
        energy: None,
        census: None,
        efficiency: None,
        gate: None,
        admissible: None,
        config_hash: config_hash(point, plan, prep),
        dataset_hash: prep.hash.clone(),
        error: None,
    };
    match result {
        Ok(m) => {
            row.accuracy = mean(&m.accuracy_per_seed);
            row.accuracy_per_seed = m.accuracy_per_seed;
            row.energy = Some(m.energy);
            row.census = Some(m.census);
            row.n_i = m.n_i;
        }
        Err(e) => {
            log::warn!("grid point {} {} failed: {e}", row.strategy, polarity.as_str());
            row.error = Some(e.to_string());
        }
    }
    row
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub report: RunReport,
    /// Rows read back from a previous run.
    pub reused: usize,
    pub failed: usize,
}

/// Timestamps and counters kept out of the report so reruns stay
/// byte-identical.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub elapsed_s: f64,
    pub rows: usize,
    pub reused: usize,
    pub failed: usize,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Loads the plan's dataset and sweeps it.
pub fn sweep(plan: &ExperimentPlan, exec: Execution) -> Result<SweepOutcome> {
    plan.validate()?;
    let (spec, train, test) = load_dataset(&plan.dataset)?;
    let prep = prepare(spec, &train, &test, plan.denoise_us, plan.bin_us)?;
    sweep_prepared(plan, &prep, exec)
}

/// Sweeps every grid point of `plan` over an already prepared dataset,
/// reusing finished rows found under the output directory.
pub fn sweep_prepared(plan: &ExperimentPlan, prep: &Prepared, exec: Execution) -> Result<SweepOutcome> {
    let points = plan.grid()?;
    let rows_dir = plan.output_dir.join("rows");
    let cache_dir = plan.output_dir.join("cache");
    fs::create_dir_all(&rows_dir)?;
    fs::create_dir_all(&cache_dir)?;
    let started = unix_now();
    let clock = Instant::now();
    let run = || {
        parallel::map_slice(&points, exec, |point| -> Result<(ReportRow, bool)> {
            let hash = config_hash(point, plan, prep);
            let path = rows_dir.join(format!("{hash}.json"));
            if let Ok(bytes) = fs::read(&path) {
                if let Ok(row) = serde_json::from_slice::<ReportRow>(&bytes) {
                    if row.error.is_none() && row.config_hash == hash {
                        return Ok((row, true));
                    }
                }
            }
            let row = run_point(plan, prep, point, Some(&cache_dir), exec);
            if row.error.is_none() {
                let tmp = path.with_extension("tmp");
                fs::write(&tmp, serde_json::to_vec_pretty(&row)?)?;
                fs::rename(&tmp, &path)?;
            }
            Ok((row, false))
        })
    };
    let results = parallel::with_workers(plan.workers, run);
    let mut rows = Vec::with_capacity(results.len());
    let mut reused = 0;
    for r in results {
        let (row, was_reused) = r?;
        reused += was_reused as usize;
        rows.push(row);
    }
    let report = RunReport::assemble(prep.spec.name.as_str(), prep.hash.clone(), plan.hash(), rows);
    let failed = report.failed_rows();
    let meta = RunMeta {
        started_unix_s: started,
        finished_unix_s: unix_now(),
        elapsed_s: clock.elapsed().as_secs_f64(),
        rows: report.rows.len(),
        reused,
        failed,
    };
    fs::write(plan.output_dir.join("report_meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(SweepOutcome { report, reused, failed })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    BestAccuracy,
    BestEfficiency,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::BestAccuracy => "best-accuracy",
            Criterion::BestEfficiency => "best-efficiency",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "best-accuracy" | "accuracy" => Ok(Criterion::BestAccuracy),
            "best-efficiency" | "efficiency" => Ok(Criterion::BestEfficiency),
            other => Err(Error::Config(format!("unknown selection criterion {other:?}"))),
        }
    }
}

/// A strategy with no row passing the accuracy gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatedOut {
    pub strategy: String,
    pub polarity: PolarityMode,
    pub best_accuracy: Option<f64>,
    pub gate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub criterion: Criterion,
    pub chosen: Vec<ReportRow>,
    pub gated_out: Vec<GatedOut>,
}

fn tie_order(a: &ReportRow, b: &ReportRow) -> std::cmp::Ordering {
    let se = |r: &ReportRow| r.se().unwrap_or(f64::INFINITY);
    se(a)
        .total_cmp(&se(b))
        .then(a.k.cmp(&b.k))
        .then(a.omega.unwrap_or(0.0).total_cmp(&b.omega.unwrap_or(0.0)))
}

/// Best row per (strategy, polarity). Efficiency only considers rows that
/// pass the accuracy gate; ties go to smaller SE, then k, then omega.
pub fn select(report: &RunReport, criterion: Criterion) -> Result<Selection> {
    let base = report
        .baseline_accuracy
        .ok_or_else(|| Error::Config("report has no successful baseline row".into()))?;
    let gate = metrics::GATE_FRACTION * base;
    let mut groups: Vec<((String, PolarityMode), Vec<&ReportRow>)> = Vec::new();
    for r in report.rows.iter().filter(|r| r.error.is_none()) {
        let key = (r.strategy.clone(), r.polarity);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut chosen = Vec::new();
    let mut gated_out = Vec::new();
    for ((strategy, polarity), rows) in groups {
        let best = match criterion {
            Criterion::BestAccuracy => rows
                .iter()
                .filter_map(|r| r.accuracy.map(|a| (a, *r)))
                .min_by(|(a, ra), (b, rb)| b.total_cmp(a).then_with(|| tie_order(ra, rb)))
                .map(|(_, r)| r),
            Criterion::BestEfficiency => rows
                .iter()
                .filter(|r| r.admissible == Some(true))
                .filter_map(|r| r.efficiency.map(|e| (e, *r)))
                .min_by(|(a, ra), (b, rb)| b.total_cmp(a).then_with(|| tie_order(ra, rb)))
                .map(|(_, r)| r),
        };
        match best {
            Some(r) => chosen.push(r.clone()),
            None if criterion == Criterion::BestEfficiency => gated_out.push(GatedOut {
                strategy,
                polarity,
                best_accuracy: rows.iter().filter_map(|r| r.accuracy).reduce(f64::max),
                gate,
            }),
            None => {}
        }
    }
    Ok(Selection {
        criterion,
        chosen,
        gated_out,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmitFormat {
    Csv,
    Json,
    Plotdata,
}

impl std::str::FromStr for EmitFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EmitFormat::Csv),
            "json" => Ok(EmitFormat::Json),
            "plotdata" => Ok(EmitFormat::Plotdata),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 30] = [
    "strategy",
    "polarity",
    "k",
    "omega",
    "n_i",
    "seeds",
    "accuracy",
    "accuracy_per_seed",
    "se_p",
    "se_c",
    "se",
    "wta_events",
    "events_in",
    "events_raw",
    "n_c",
    "efficiency",
    "gate",
    "admissible",
    "neurons",
    "preprocess_neurons",
    "classifier_neurons",
    "input_synapses",
    "wta_synapses",
    "classifier_synapses",
    "synapses",
    "max_fan_in",
    "mean_fan_in",
    "config_hash",
    "dataset_hash",
    "error",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn joined<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(&r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Flat CSV with one line per row; empty cells mean "not applicable".
pub fn to_csv(report: &RunReport) -> Result<String> {
    let rows = report.rows.iter().map(|r| {
        let e = r.energy.as_ref();
        let c = r.census.as_ref();
        vec![
            r.strategy.clone(),
            r.polarity.as_str().to_string(),
            opt(r.k),
            opt(r.omega),
            opt(r.n_i),
            joined(&r.seeds),
            opt(r.accuracy),
            joined(&r.accuracy_per_seed),
            opt(e.map(|e| e.se_p)),
            opt(e.map(|e| e.se_c)),
            opt(e.map(|e| e.se)),
            opt(e.map(|e| e.wta_events)),
            opt(e.map(|e| e.events_in)),
            opt(e.map(|e| e.events_raw)),
            opt(e.map(|e| e.n_c)),
            opt(r.efficiency),
            opt(r.gate),
            opt(r.admissible),
            opt(c.map(|c| c.neurons)),
            opt(c.map(|c| c.preprocess_neurons)),
            opt(c.map(|c| c.classifier_neurons)),
            opt(c.map(|c| c.input_synapses)),
            opt(c.map(|c| c.wta_synapses)),
            opt(c.map(|c| c.classifier_synapses)),
            opt(c.map(|c| c.synapses)),
            opt(c.map(|c| c.max_fan_in)),
            opt(c.map(|c| c.mean_fan_in)),
            r.config_hash.clone(),
            r.dataset_hash.clone(),
            r.error.clone().unwrap_or_default(),
        ]
    });
    csv_string(&CSV_COLUMNS, rows)
}

pub fn to_json(report: &RunReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn from_json(s: &str) -> Result<RunReport> {
    let r: RunReport = serde_json::from_str(s)?;
    if r.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Parse(format!("unsupported report schema_version {}", r.schema_version)));
    }
    Ok(r)
}

/// Long-form tables, one per figure, as (file name, CSV text).
pub fn plotdata(report: &RunReport) -> Result<Vec<(&'static str, String)>> {
    let ok: Vec<&ReportRow> = report.rows.iter().filter(|r| r.error.is_none()).collect();
    let line: Vec<&ReportRow> = ok.iter().copied().filter(|r| r.is_line()).collect();

    // Weights do not change the census, so omega is collapsed.
    let mut arch: Vec<Vec<String>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for r in &ok {
        if !seen.insert((r.strategy.clone(), r.polarity, r.k, r.n_i)) {
            continue;
        }
        let c = r.census.clone().unwrap_or_default();
        arch.push(vec![
            r.strategy.clone(),
            r.polarity.as_str().into(),
            opt(r.k),
            opt(r.n_i),
            c.neurons.to_string(),
            c.synapses.to_string(),
            c.max_fan_in.to_string(),
            c.mean_fan_in.to_string(),
        ]);
    }
    let fig5 = csv_string(
        &["strategy", "polarity", "k", "n_i", "neurons", "synapses", "max_fan_in", "mean_fan_in"],
        arch,
    )?;

    let fig6 = csv_string(
        &["strategy", "polarity", "k", "omega", "accuracy", "se", "efficiency", "admissible"],
        line.iter().map(|r| {
            vec![
                r.strategy.clone(),
                r.polarity.as_str().into(),
                opt(r.k),
                opt(r.omega),
                opt(r.accuracy),
                opt(r.se()),
                opt(r.efficiency),
                opt(r.admissible),
            ]
        }),
    )?;

    let mut fig7 = Vec::new();
    let best_eff = select(report, Criterion::BestEfficiency).ok();
    let line_best: Vec<ReportRow> = best_eff
        .as_ref()
        .map(|s| s.chosen.iter().filter(|r| r.is_line()).cloned().collect())
        .unwrap_or_default();
    for r in ok.iter().copied().filter(|r| !r.is_line()).chain(line_best.iter()) {
        fig7.push(vec![
            r.strategy.clone(),
            r.polarity.as_str().into(),
            opt(r.k),
            opt(r.omega),
            opt(r.n_i),
            opt(r.accuracy),
            opt(r.se()),
            opt(r.census.as_ref().map(|c| c.synapses)),
            opt(r.efficiency),
        ]);
    }
    let fig7 = csv_string(
        &["strategy", "polarity", "k", "omega", "n_i", "accuracy", "se", "synapses", "efficiency"],
        fig7,
    )?;

    let mut sel = Vec::new();
    for criterion in [Criterion::BestAccuracy, Criterion::BestEfficiency] {
        if let Ok(s) = select(report, criterion) {
            for r in &s.chosen {
                sel.push(vec![
                    criterion.as_str().into(),
                    r.strategy.clone(),
                    r.polarity.as_str().into(),
                    opt(r.k),
                    opt(r.omega),
                    opt(r.accuracy),
                    opt(r.se()),
                    opt(r.efficiency),
                    "false".into(),
                ]);
            }
            for g in &s.gated_out {
                sel.push(vec![
                    criterion.as_str().into(),
                    g.strategy.clone(),
                    g.polarity.as_str().into(),
                    String::new(),
                    String::new(),
                    opt(g.best_accuracy),
                    String::new(),
                    String::new(),
                    "true".into(),
                ]);
            }
        }
    }
    let fig8 = csv_string(
        &["criterion", "strategy", "polarity", "k", "omega", "accuracy", "se", "efficiency", "gated_out"],
        sel,
    )?;

    let mut seeds = Vec::new();
    for r in &ok {
        for (s, a) in r.seeds.iter().zip(&r.accuracy_per_seed) {
            seeds.push(vec![
                r.strategy.clone(),
                r.polarity.as_str().into(),
                opt(r.k),
                opt(r.omega),
                s.to_string(),
                a.to_string(),
            ]);
        }
    }
    let fig9 = csv_string(&["strategy", "polarity", "k", "omega", "seed", "accuracy"], seeds)?;

    Ok(vec![
        ("fig5_architecture.csv", fig5),
        ("fig6_tradeoff.csv", fig6),
        ("fig7_comparisons.csv", fig7),
        ("fig8_selection.csv", fig8),
        ("fig9_accuracy_by_seed.csv", fig9),
    ])
}

/// Writes the report in `format` under `dir`; returns the files written.
pub fn emit(report: &RunReport, format: EmitFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files: Vec<(String, String)> = match format {
        EmitFormat::Csv => vec![("report.csv".into(), to_csv(report)?)],
        EmitFormat::Json => vec![("report.json".into(), to_json(report)?)],
        EmitFormat::Plotdata => {
            fs::create_dir_all(dir.join("plotdata"))?;
            plotdata(report)?
                .into_iter()
                .map(|(n, s)| (format!("plotdata/{n}"), s))
                .collect()
        }
    };
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}

/// Census of every strategy at each sensor side, for architecture plots.
pub fn architecture_table(sides: &[u16], k: u16, omega: f64, n_labels: usize) -> Result<String> {
    let mut rows = Vec::new();
    for &side in sides {
        let g = crate::event::SensorGeometry::square(side)?;
        for polarity in [PolarityMode::Merged, PolarityMode::Split] {
            let base = metrics::census_no_preprocessing(side, polarity, n_labels);
            let mut push = |name: String, n_p: usize, c: &ArchitectureCensus| {
                rows.push(vec![
                    side.to_string(),
                    name,
                    polarity.as_str().into(),
                    k.to_string(),
                    n_p.to_string(),
                    c.neurons.to_string(),
                    c.synapses.to_string(),
                    c.max_fan_in.to_string(),
                    c.mean_fan_in.to_string(),
                ]);
            };
            push(NO_PREPROCESSING.into(), 0, &base);
            for tiling in crate::strategies::Tiling::ALL {
                let cfg = StrategyConfig::new(StrategyKind::Single(tiling), polarity, k, omega);
                let net = build_network(g, &cfg, &LifParams::default())?;
                push(tiling.short_name().into(), net.n_outputs(), &metrics::census_of(&net, Some(n_labels)));
            }
        }
    }
    csv_string(
        &["side", "strategy", "polarity", "k", "n_p", "neurons", "synapses", "max_fan_in", "mean_fan_in"],
        rows,
    )
}

/// Comparison networks sized like a strategy's preprocessing layer, as in
/// the convolution and pruning study: a convolution, a dense hidden layer
/// and its pruned variant.
pub fn comparisons_like(strategy: &StrategyConfig, side: u16) -> Vec<Comparison> {
    let n_i = strategy.kind.n_p(side) * strategy.polarity.channels();
    [
        (BaselineKind::Conv, None),
        (BaselineKind::FcHidden, None),
        (BaselineKind::FcHidden, Some(baselines::PRUNE_THRESHOLD)),
    ]
    .into_iter()
    .map(|(kind, prune)| Comparison {
        baseline: BaselineConfig { kind, n_i, prune },
        polarity: strategy.polarity,
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_row(strategy: &str, k: Option<u16>, omega: Option<f64>, acc: f64, se: f64) -> ReportRow {
        ReportRow {
            strategy: strategy.into(),
            polarity: PolarityMode::Merged,
            k,
            omega,
            n_i: None,
            seeds: vec![1],
            accuracy: Some(acc),
            accuracy_per_seed: vec![acc],
            energy: Some(EnergyReport {
                se,
                ..Default::default()
            }),
            census: None,
            efficiency: None,
            gate: None,
            admissible: None,
            config_hash: String::new(),
            dataset_hash: String::new(),
            error: None,
        }
    }

    #[test]
    fn default_grid_size() {
        let plan = ExperimentPlan::new(DatasetSource::SynthPips { train: 4, test: 4, seed: 1 }, "out");
        assert_eq!(plan.grid().unwrap().len(), 7 * 5 * 5 * 2 + 2);
        let mut one = plan.clone();
        one.strategies = vec!["ce".into(), "none".into()];
        one.polarities = vec![PolarityMode::Merged];
        one.k_grid = vec![30];
        one.omega_grid = vec![5.0];
        one.seeds = vec![1];
        assert_eq!(one.grid().unwrap().len(), 2);
    }

    #[test]
    fn plan_validation() {
        let plan = ExperimentPlan::new(DatasetSource::SynthPips { train: 4, test: 4, seed: 1 }, "out");
        for f in [
            |p: &mut ExperimentPlan| p.k_grid.clear(),
            |p: &mut ExperimentPlan| p.omega_grid = vec![0.0],
            |p: &mut ExperimentPlan| p.seeds.clear(),
            |p: &mut ExperimentPlan| p.strategies = vec!["diagonal".into()],
            |p: &mut ExperimentPlan| p.schema_version = 9,
            |p: &mut ExperimentPlan| p.k_grid = vec![0],
        ] {
            let mut p = plan.clone();
            f(&mut p);
            assert!(p.validate().is_err());
        }
    }

    #[test]
    fn mocked_selection() {
        let rows = vec![
            mock_row("none", None, None, 1.0, 10.0),
            mock_row("ce", Some(30), Some(5.0), 0.9, 0.9),
            mock_row("ce", Some(30), Some(1.0), 0.95, 1.9),
        ];
        let report = RunReport::assemble("x", "h", "p", rows);
        assert!((report.gate.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let acc = select(&report, Criterion::BestAccuracy).unwrap();
        let ce = acc.chosen.iter().find(|r| r.strategy == "ce").unwrap();
        assert_eq!(ce.omega, Some(1.0));
        let eff = select(&report, Criterion::BestEfficiency).unwrap();
        let ce = eff.chosen.iter().find(|r| r.strategy == "ce").unwrap();
        assert_eq!(ce.omega, Some(5.0));
    }

    #[test]
    fn ties_prefer_small_se_then_k_then_omega() {
        let rows = vec![
            mock_row("none", None, None, 0.9, 10.0),
            mock_row("cr", Some(20), Some(2.5), 0.8, 8.0),
            mock_row("cr", Some(10), Some(2.5), 0.8, 8.0),
            mock_row("cr", Some(10), Some(1.0), 0.8, 8.0),
            mock_row("cr", Some(5), Some(1.0), 0.8, 9.0),
        ];
        let report = RunReport::assemble("x", "h", "p", rows);
        for c in [Criterion::BestAccuracy, Criterion::BestEfficiency] {
            let s = select(&report, c).unwrap();
            let cr = s.chosen.iter().find(|r| r.strategy == "cr").unwrap();
            assert_eq!((cr.k, cr.omega), (Some(10), Some(1.0)), "{c:?}");
        }
    }

    #[test]
    fn gated_out_strategies_are_flagged() {
        let rows = vec![
            mock_row("none", None, None, 0.9, 10.0),
            mock_row("ws", Some(5), Some(1.0), 0.3, 1.0),
            mock_row("ws", Some(30), Some(1.0), 0.5, 0.5),
        ];
        let report = RunReport::assemble("x", "h", "p", rows);
        let eff = select(&report, Criterion::BestEfficiency).unwrap();
        assert!(eff.chosen.iter().all(|r| r.strategy != "ws"));
        assert_eq!(eff.gated_out.len(), 1);
        assert_eq!(eff.gated_out[0].best_accuracy, Some(0.5));
        assert!((eff.gated_out[0].gate - 0.6).abs() < 1e-12);

        let none = RunReport::assemble("x", "h", "p", vec![mock_row("ws", Some(5), Some(1.0), 0.3, 1.0)]);
        assert!(select(&none, Criterion::BestEfficiency).is_err());
    }

    #[test]
    fn failed_rows_are_kept_and_skipped() {
        let mut bad = mock_row("ce", Some(5), Some(1.0), 0.0, 0.0);
        bad.accuracy = None;
        bad.energy = None;
        bad.error = Some("boom".into());
        let report = RunReport::assemble("x", "h", "p", vec![mock_row("none", None, None, 0.9, 10.0), bad]);
        assert_eq!(report.failed_rows(), 1);
        let s = select(&report, Criterion::BestEfficiency).unwrap();
        assert!(s.chosen.iter().all(|r| r.strategy != "ce"));
        assert!(s.gated_out.is_empty());
        assert!(to_csv(&report).unwrap().contains("boom"));
    }

    #[test]
    fn empty_report_csv_is_header_only() {
        let report = RunReport::assemble("x", "h", "p", Vec::new());
        let csv = to_csv(&report).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert_eq!(csv.trim_end().split(',').count(), CSV_COLUMNS.len());
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let rows = vec![
            mock_row("none", None, None, 0.9166666666666666, 4606.123456789),
            mock_row("ce", Some(30), Some(7.5), 1.0 / 3.0, 1764.1),
        ];
        let report = RunReport::assemble("x", "h", "p", rows);
        let a = to_json(&report).unwrap();
        let back = from_json(&a).unwrap();
        assert_eq!(back, report);
        assert_eq!(to_json(&back).unwrap(), a);
    }

    #[test]
    fn plotdata_tradeoff_has_one_row_per_grid_point() {
        let mut rows = vec![mock_row("none", None, None, 0.9, 10.0)];
        for k in [1u16, 5, 30] {
            for w in [1.0, 5.0] {
                rows.push(mock_row("ce", Some(k), Some(w), 0.8, k as f64 + w));
            }
        }
        let report = RunReport::assemble("x", "h", "p", rows);
        let tables = plotdata(&report).unwrap();
        let fig6 = &tables.iter().find(|(n, _)| *n == "fig6_tradeoff.csv").unwrap().1;
        assert_eq!(fig6.lines().count(), 1 + 6);
    }

    #[test]
    fn cache_round_trip() {
        let g = crate::event::SensorGeometry::unit_row(5);
        let s = EventSample::new(vec![crate::event::Event::new(3, 0, 7, crate::event::Polarity::Off)], g, Some(2), 10).unwrap();
        let o = PreprocessOutput {
            sample: s,
            record: Default::default(),
            se_p: 11,
            wta_events: 4,
        };
        let back = decode_outputs(&encode_outputs(&[o.clone(), o.clone()]).unwrap()).unwrap();
        assert_eq!(back, vec![o.clone(), o]);
        assert!(decode_outputs(b"ELPC").is_err());
    }
}

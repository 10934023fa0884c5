//! Experiment runner: layered configuration, single runs, sweeps with a
//! shared manifest, and comparison reports.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checks::prob_grid;
use crate::data::{downsample2x, filter_first_k, load_idx, take_split, train_paths, LabeledImageSet};
use crate::error::{Error, Result};
use crate::models::{save_checkpoint, EpochMetrics, Model, ModelKind, TrainConfig, Trainer, N_CLASSES};
use crate::noise::{NoiseKind, NoiseSpec};
use crate::rng::SplitMix64;

pub const CSV_HEADER: &str = "model,dataset,noise,prob,seed,epoch,train_loss,train_acc,val_acc,wall_seconds";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const DELTAS_FILE: &str = "deltas.csv";
/// Accuracy within this distance of 1/4 counts as chance level.
pub const CHANCE_BAND: f64 = 0.05;

/// Stream for the model-initialisation draw; the split uses the seed itself.
const INIT_STREAM: u64 = 1;
/// Stream for the per-epoch training order.
const ORDER_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Mnist,
    Fmnist,
}

impl Dataset {
    pub fn token(self) -> &'static str {
        match self {
            Dataset::Mnist => "mnist",
            Dataset::Fmnist => "fmnist",
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Dataset::Mnist => 0.01,
            Dataset::Fmnist => 0.005,
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(Dataset::Mnist),
            "fmnist" | "fashion-mnist" | "fashion_mnist" => Ok(Dataset::Fmnist),
            other => Err(Error::config(format!(
                "unknown dataset `{other}` (expected mnist or fmnist)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub dataset: Dataset,
    pub noise: NoiseSpec,
    pub epochs: usize,
    pub batch: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub lr: f64,
    pub seed: u64,
    pub image_size: usize,
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,
}

/// Partially specified configuration; one layer of the precedence stack.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub model: Option<ModelKind>,
    pub dataset: Option<Dataset>,
    pub noise: Option<NoiseKind>,
    pub prob: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub image_size: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

impl ConfigOverrides {
    /// Parse `key = value` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut o = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            let (key, value) = (key.trim().replace('-', "_"), value.trim());
            match key.as_str() {
                "model" => o.model = Some(value.parse()?),
                "dataset" => o.dataset = Some(value.parse()?),
                "noise" => o.noise = Some(value.parse()?),
                "prob" => o.prob = Some(parse_value(&key, value)?),
                "epochs" => o.epochs = Some(parse_value(&key, value)?),
                "batch" => o.batch = Some(parse_value(&key, value)?),
                "train_samples" => o.n_train = Some(parse_value(&key, value)?),
                "val_samples" => o.n_val = Some(parse_value(&key, value)?),
                "lr" => o.lr = Some(parse_value(&key, value)?),
                "seed" => o.seed = Some(parse_value(&key, value)?),
                "image_size" => o.image_size = Some(parse_value(&key, value)?),
                "out" => o.out_dir = Some(PathBuf::from(value)),
                "data_dir" => o.data_dir = Some(PathBuf::from(value)),
                other => return Err(Error::config(format!("line {}: unknown key `{other}`", n + 1))),
            }
        }
        Ok(o)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Fields set in `self` win over `lower`.
    pub fn over(self, lower: &Self) -> Self {
        Self {
            model: self.model.or(lower.model),
            dataset: self.dataset.or(lower.dataset),
            noise: self.noise.or(lower.noise),
            prob: self.prob.or(lower.prob),
            epochs: self.epochs.or(lower.epochs),
            batch: self.batch.or(lower.batch),
            n_train: self.n_train.or(lower.n_train),
            n_val: self.n_val.or(lower.n_val),
            lr: self.lr.or(lower.lr),
            seed: self.seed.or(lower.seed),
            image_size: self.image_size.or(lower.image_size),
            out_dir: self.out_dir.or_else(|| lower.out_dir.clone()),
            data_dir: self.data_dir.or_else(|| lower.data_dir.clone()),
        }
    }

    /// Fill unset fields with the defaults: QuanNN on MNIST, noise-free,
    /// 20 epochs, batch 5, 500/150 samples, per-dataset learning rate,
    /// 28×28 inputs, `runs/` output and `data/<dataset>` input.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let dataset = self.dataset.unwrap_or(Dataset::Mnist);
        let kind = self.noise.unwrap_or(NoiseKind::None);
        let prob = if kind == NoiseKind::None {
            0.0
        } else {
            self.prob.unwrap_or(0.0)
        };
        let cfg = ExperimentConfig {
            model: self.model.unwrap_or(ModelKind::Quannn),
            dataset,
            noise: NoiseSpec::new(kind, prob)?,
            epochs: self.epochs.unwrap_or(20),
            batch: self.batch.unwrap_or(5),
            n_train: self.n_train.unwrap_or(500),
            n_val: self.n_val.unwrap_or(150),
            lr: self.lr.unwrap_or(dataset.default_lr()),
            seed: self.seed.unwrap_or(0),
            image_size: self.image_size.unwrap_or(28),
            out_dir: self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs")),
            data_dir: self
                .data_dir
                .clone()
                .unwrap_or_else(|| Path::new("data").join(dataset.token())),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be ≥ 1"));
        }
        if self.batch == 0 || self.n_train == 0 || self.n_val == 0 {
            return Err(Error::config("batch, train-samples and val-samples must be ≥ 1"));
        }
        if self.image_size != 28 && self.image_size != 14 {
            return Err(Error::config(format!(
                "image size must be 28 or 14, got {}",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Everything that affects the results, in a fixed textual form.
    fn canonical(&self) -> String {
        format!(
            "model={};dataset={};noise={};prob={:?};epochs={};batch={};n_train={};n_val={};lr={:?};seed={};image_size={}",
            self.model,
            self.dataset,
            self.noise.kind,
            self.noise.prob,
            self.epochs,
            self.batch,
            self.n_train,
            self.n_val,
            self.lr,
            self.seed,
            self.image_size
        )
    }

    /// Hex SHA-256 of the result-affecting fields (paths excluded).
    pub fn config_hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn run_id(&self) -> String {
        format!(
            "{}_{}_{}_p{:.2}_s{}_{}",
            self.model,
            self.dataset,
            self.noise.kind,
            self.noise.prob,
            self.seed,
            &self.config_hash()[..10]
        )
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.run_id())
    }

    /// Same config without noise.
    pub fn baseline(&self) -> Self {
        Self {
            noise: NoiseSpec::NONE,
            ..self.clone()
        }
    }
}

/// One CSV row per epoch. `wall_seconds` is left empty so identical runs
/// produce identical files; timings live in the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: ModelKind,
    pub dataset: Dataset,
    pub noise: NoiseKind,
    pub prob: f64,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub wall_seconds: Option<f64>,
}

impl MetricsRow {
    fn new(cfg: &ExperimentConfig, m: &EpochMetrics) -> Self {
        Self {
            model: cfg.model,
            dataset: cfg.dataset,
            noise: cfg.noise.kind,
            prob: cfg.noise.prob,
            seed: cfg.seed,
            epoch: m.epoch + 1,
            train_loss: m.train_loss,
            train_acc: m.train_acc,
            val_acc: m.val_acc,
            wall_seconds: None,
        }
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CSV_HEADER {
        return Err(Error::format(
            "metrics header",
            format!("{}: unexpected header `{header}`", path.display()),
        ));
    }
    rdr.deserialize().map(|r| r.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format("csv", format!("{}: {other:?}", path.display())),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub config_hash: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub started_unix: f64,
    pub wall_seconds: f64,
    pub epoch_wall_seconds: Vec<f64>,
    pub filtered_pool: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub final_train_loss: f64,
    pub final_train_acc: f64,
    pub final_val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub summary: RunSummary,
    pub history: Vec<EpochMetrics>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Load, filter to the first four classes and resize the training pool.
pub fn prepare_pool(data_dir: &Path, image_size: usize) -> Result<LabeledImageSet> {
    let (images, labels) = train_paths(data_dir);
    let set = filter_first_k(&load_idx(&images, &labels)?, N_CLASSES as u8)?;
    let mut set = set;
    while set.height() > image_size && set.height() % 2 == 0 && set.height() / 2 >= image_size {
        set = downsample2x(&set)?;
    }
    if set.height() != image_size || set.width() != image_size {
        return Err(Error::config(format!(
            "cannot produce {image_size}x{image_size} inputs from {}x{} images",
            set.height(),
            set.width()
        )));
    }
    Ok(set)
}

/// Train per `cfg` on an already prepared pool.
pub fn run_with_pool(cfg: &ExperimentConfig, pool: &LabeledImageSet) -> Result<RunOutcome> {
    cfg.validate()?;
    let started_unix = unix_now();
    let t0 = Instant::now();
    let (train, val) = take_split(pool, cfg.n_train, cfg.n_val, cfg.seed)?;
    let init_seed = SplitMix64::derive(cfg.seed, INIT_STREAM).next_u64();
    let model = Model::new(cfg.model, pool.height(), pool.width(), init_seed)?;
    let mut trainer = Trainer::new(
        model,
        TrainConfig {
            batch: cfg.batch,
            lr: cfg.lr,
            noise: cfg.noise,
            seed: SplitMix64::derive(cfg.seed, ORDER_STREAM).next_u64(),
        },
    )?;

    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let metrics_path = run_dir.join(METRICS_FILE);
    let mut wtr = csv::Writer::from_path(&metrics_path).map_err(|e| csv_error(&metrics_path, e))?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut epoch_wall_seconds = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let te = Instant::now();
        let m = trainer.train_epoch(&train, &val)?;
        epoch_wall_seconds.push(te.elapsed().as_secs_f64());
        wtr.serialize(MetricsRow::new(cfg, &m))
            .map_err(|e| csv_error(&metrics_path, e))?;
        wtr.flush().map_err(|e| Error::io(&metrics_path, e))?;
        history.push(m);
    }
    drop(wtr);

    save_checkpoint(&trainer.model, &run_dir.join(CHECKPOINT_FILE))?;
    let last = *history.last().expect("epochs ≥ 1");
    let summary = RunSummary {
        run_id: cfg.run_id(),
        config_hash: cfg.config_hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        started_unix,
        wall_seconds: t0.elapsed().as_secs_f64(),
        epoch_wall_seconds,
        filtered_pool: pool.len(),
        image_height: pool.height(),
        image_width: pool.width(),
        final_train_loss: last.train_loss,
        final_train_acc: last.train_acc,
        final_val_acc: last.val_acc,
    };
    let summary_path = run_dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    fs::write(&summary_path, json + "\n").map_err(|e| Error::io(&summary_path, e))?;
    Ok(RunOutcome {
        run_dir,
        metrics_path,
        summary,
        history,
    })
}

pub fn run_single(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let pool = prepare_pool(&cfg.data_dir, cfg.image_size)?;
    run_with_pool(cfg, &pool)
}

// ---------------------------------------------------------------- sweeps

/// Grid axes; the template supplies everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub models: Vec<ModelKind>,
    pub datasets: Vec<Dataset>,
    pub kinds: Vec<NoiseKind>,
    pub probs: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// Five channels × 0.1..=1.0 for both models and datasets.
    pub fn full_grid(seed: u64) -> Self {
        Self {
            models: vec![ModelKind::Quannn, ModelKind::Qcnn],
            datasets: vec![Dataset::Mnist, Dataset::Fmnist],
            kinds: NoiseKind::ALL_CHANNELS.to_vec(),
            probs: prob_grid()[1..].to_vec(),
            seeds: vec![seed],
        }
    }
}

/// Expand the grid into run configs: per (model, dataset, seed) one
/// noise-free baseline plus every kind × prob cell. Duplicates (same config
/// hash) are dropped, keeping first occurrence.
pub fn plan_sweep(template: &ConfigOverrides, spec: &SweepSpec) -> Result<Vec<ExperimentConfig>> {
    if spec.models.is_empty() || spec.datasets.is_empty() || spec.seeds.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    if spec.kinds.is_empty() != spec.probs.is_empty() && !spec.kinds.iter().all(|k| *k == NoiseKind::None) {
        return Err(Error::config("sweep needs both noise kinds and probabilities"));
    }
    for &p in &spec.probs {
        if !prob_grid().iter().any(|g| (g - p).abs() < 1e-9) {
            return Err(Error::config(format!(
                "sweep probability {p} is not on the 0.0, 0.1, …, 1.0 grid"
            )));
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for &model in &spec.models {
        for &dataset in &spec.datasets {
            for &seed in &spec.seeds {
                let mut cells = vec![(NoiseKind::None, 0.0)];
                for &kind in &spec.kinds {
                    for &p in &spec.probs {
                        cells.push((kind, (p * 10.0).round() / 10.0));
                    }
                }
                for (kind, prob) in cells {
                    let layer = ConfigOverrides {
                        model: Some(model),
                        dataset: Some(dataset),
                        noise: Some(kind),
                        prob: Some(prob),
                        seed: Some(seed),
                        data_dir: template.data_dir.clone().map(|d| per_dataset_dir(&d, dataset, spec)),
                        ..Default::default()
                    };
                    let cfg = layer.over(template).resolve()?;
                    if seen.insert(cfg.config_hash()) {
                        out.push(cfg);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// With several datasets a single `--data-dir` is treated as the parent of
/// per-dataset directories.
fn per_dataset_dir(dir: &Path, dataset: Dataset, spec: &SweepSpec) -> PathBuf {
    if spec.datasets.len() > 1 {
        dir.join(dataset.token())
    } else {
        dir.to_path_buf()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: String,
    pub config_hash: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Paths relative to the sweep directory.
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

/// Append one JSON line while holding an exclusive lock on the manifest.
pub fn append_manifest(dir: &Path, entry: &ManifestEntry) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    file.lock().map_err(|e| Error::io(&path, e))?;
    let line = serde_json::to_string(entry).expect("manifest entry serialises") + "\n";
    let res = file.write_all(line.as_bytes()).and_then(|_| file.flush());
    file.unlock().map_err(|e| Error::io(&path, e))?;
    res.map_err(|e| Error::io(&path, e))
}

/// Entries in file order; a missing manifest reads as empty.
pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(&path, e)),
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format("manifest", format!("{} line {}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOutcome {
    pub planned: usize,
    pub skipped: usize,
    pub succeeded: usize,
    pub failed: Vec<(String, String)>,
}

/// Run every planned config not already recorded as successful in the
/// manifest. Failures are recorded and the sweep continues.
pub fn run_sweep(
    template: &ConfigOverrides,
    spec: &SweepSpec,
    mut on_run: impl FnMut(&str, &Result<RunOutcome>),
) -> Result<SweepOutcome> {
    let plan = plan_sweep(template, spec)?;
    let out_dir = plan[0].out_dir.clone();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let done: HashSet<String> = read_manifest(&out_dir)?
        .into_iter()
        .filter(|e| e.status == RunStatus::Ok)
        .map(|e| e.config_hash)
        .collect();

    let mut pools: HashMap<(PathBuf, usize), LabeledImageSet> = HashMap::new();
    let mut outcome = SweepOutcome {
        planned: plan.len(),
        ..Default::default()
    };
    for cfg in &plan {
        if done.contains(&cfg.config_hash()) {
            outcome.skipped += 1;
            continue;
        }
        let key = (cfg.data_dir.clone(), cfg.image_size);
        let result = match pools.get(&key) {
            Some(pool) => run_with_pool(cfg, pool),
            None => prepare_pool(&cfg.data_dir, cfg.image_size).and_then(|pool| {
                let r = run_with_pool(cfg, &pool);
                pools.insert(key, pool);
                r
            }),
        };
        on_run(&cfg.run_id(), &result);
        let run_id = cfg.run_id();
        let entry = match &result {
            Ok(_) => {
                outcome.succeeded += 1;
                ManifestEntry {
                    run_id: run_id.clone(),
                    config_hash: cfg.config_hash(),
                    status: RunStatus::Ok,
                    error: None,
                    files: [METRICS_FILE, SUMMARY_FILE, CHECKPOINT_FILE]
                        .iter()
                        .map(|f| format!("{run_id}/{f}"))
                        .collect(),
                    config: cfg.clone(),
                }
            }
            Err(e) => {
                outcome.failed.push((run_id.clone(), e.to_string()));
                ManifestEntry {
                    run_id,
                    config_hash: cfg.config_hash(),
                    status: RunStatus::Failed,
                    error: Some(e.to_string()),
                    files: Vec::new(),
                    config: cfg.clone(),
                }
            }
        };
        append_manifest(&out_dir, &entry)?;
    }
    Ok(outcome)
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub model: ModelKind,
    pub dataset: Dataset,
    pub seed: u64,
    pub noise: NoiseKind,
    pub prob: f64,
    pub val_acc: f64,
    pub baseline_acc: Option<f64>,
    pub delta: Option<f64>,
    pub chance_level: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub rows: Vec<DeltaRow>,
    /// Runs listed in the manifest without usable results.
    pub gaps: Vec<String>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<7} {:<7} {:>5} {:<17} {:>5} {:>8} {:>8} {:>8}  {}\n",
            "model", "dataset", "seed", "noise", "prob", "val_acc", "baseline", "delta", "flag"
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:+.4}"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<7} {:<7} {:>5} {:<17} {:>5.2} {:>8.4} {:>8} {:>8}  {}\n",
                r.model.token(),
                r.dataset.token(),
                r.seed,
                r.noise.token(),
                r.prob,
                r.val_acc,
                r.baseline_acc.map_or_else(|| "-".to_string(), |x| format!("{x:.4}")),
                opt(r.delta),
                if r.chance_level { "CHANCE" } else { "" }
            ));
        }
        for g in &self.gaps {
            out.push_str(&format!("gap: {g}\n"));
        }
        out
    }
}

pub fn is_chance_level(acc: f64) -> bool {
    (acc - 1.0 / N_CLASSES as f64).abs() < CHANCE_BAND
}

fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("summary", format!("{}: {e}", path.display())))
}

/// Compare each run's final validation accuracy with its noise-free
/// baseline, and write `deltas.csv` next to the manifest.
pub fn report(dir: &Path) -> Result<Report> {
    let mut rep = Report::default();
    let entries = read_manifest(dir)?;
    if entries.is_empty() {
        rep.warnings.push(format!("no runs recorded in {}", dir.display()));
        return Ok(rep);
    }
    // Later entries for the same config supersede earlier ones.
    let mut latest: BTreeMap<String, ManifestEntry> = BTreeMap::new();
    for e in entries {
        latest.insert(e.config_hash.clone(), e);
    }
    let mut acc: HashMap<String, f64> = HashMap::new();
    for (hash, e) in &latest {
        if e.status == RunStatus::Failed {
            rep.gaps
                .push(format!("{} failed: {}", e.run_id, e.error.clone().unwrap_or_default()));
            continue;
        }
        match read_summary(&dir.join(&e.run_id).join(SUMMARY_FILE)) {
            Ok(s) => {
                acc.insert(hash.clone(), s.final_val_acc);
            }
            Err(err) => rep.gaps.push(format!("{}: {err}", e.run_id)),
        }
    }
    for (hash, e) in &latest {
        let Some(&val_acc) = acc.get(hash) else { continue };
        let baseline_acc = acc.get(&e.config.baseline().config_hash()).copied();
        rep.rows.push(DeltaRow {
            model: e.config.model,
            dataset: e.config.dataset,
            seed: e.config.seed,
            noise: e.config.noise.kind,
            prob: e.config.noise.prob,
            val_acc,
            baseline_acc,
            delta: baseline_acc.map(|b| val_acc - b),
            chance_level: is_chance_level(val_acc),
        });
    }
    rep.rows.sort_by(|a, b| {
        (a.model.token(), a.dataset.token(), a.seed, a.noise.token())
            .cmp(&(b.model.token(), b.dataset.token(), b.seed, b.noise.token()))
            .then(a.prob.total_cmp(&b.prob))
    });
    let path = dir.join(DELTAS_FILE);
    let mut wtr = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    for r in &rep.rows {
        wtr.serialize(r).map_err(|e| csv_error(&path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rep)
}

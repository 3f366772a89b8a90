//! Experiment configuration files and the end-to-end pipeline behind `run`.
//!
//! A config is TOML with a few flat sections:
//!
//! ```toml
//! seed = 7
//! out = "runs/mnist"
//!
//! [dataset]
//! kind = "idx"                 # idx | csv | corpus
//! images = "train-images-idx3-ubyte.gz"
//! labels = "train-labels-idx1-ubyte.gz"
//! limit = 2000
//! test_fraction = 0.2
//!
//! [model]
//! variants = ["sae", "ncae"]   # one metrics row per variant
//! layers = [49]
//!
//! [optimizer]
//! max_iterations = 150
//! ```
//!
//! Relative paths are resolved against the directory holding the config.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{reconstruct, reconstruction_cost, AutoencoderParams, Dataset, TrainConfig};
use crate::coremath::Matrix;
use crate::deepnet::{accuracy, fine_tune, greedy_pretrain_layers, predict, train_softmax_head, FineTuneConfig};
use crate::error::{Error, Result};
use crate::imagedata::{load_csv_matrix, load_idx_dataset, load_idx_images, split, subset};
use crate::metrics::{
    decoding_filter_sparseness, mean_live, negative_weight_fraction, receptive_field_sparseness, representation_kl,
    sparsity_report,
};
use crate::modelio::{save_model, Model, FORMAT_VERSION};
use crate::nmf::{nmf_encode, nmf_factorize, samples_as_columns, NmfModel};
use crate::optimizer::OptimizerConfig;
use crate::par::Exec;
use crate::render::{render_receptive_fields, write_pgm, Scaling, TileGrid};
use crate::textdata::{
    frequency_filter, information_gain_select, tfidf, top_k_words, top_words_json, top_words_text, Corpus,
    FrequencyKind,
};

/// Bumped whenever a column of `metrics.csv` is added, removed or redefined.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub const METRICS_COLUMNS: [&str; 15] = [
    "schema_version",
    "variant",
    "layers",
    "train_samples",
    "test_samples",
    "iterations",
    "layer1_cost",
    "reconstruction_error",
    "kl_divergence",
    "mean_sparseness",
    "dead_units",
    "negative_fraction",
    "accuracy_before",
    "accuracy_after",
    "termination",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Idx,
    Csv,
    Corpus,
}

fn default_test_fraction() -> f64 {
    0.2
}
fn default_low() -> u64 {
    crate::textdata::DEFAULT_LOW
}
fn default_high() -> u64 {
    crate::textdata::DEFAULT_HIGH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// IDX image file.
    pub images: Option<PathBuf>,
    /// IDX label file; optional for unsupervised runs.
    pub labels: Option<PathBuf>,
    /// CSV or corpus file.
    pub path: Option<PathBuf>,
    /// CSV only: last column holds integer labels.
    #[serde(default)]
    pub has_labels: bool,
    /// Seeded random subset taken before splitting.
    pub limit: Option<usize>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_low")]
    pub min_frequency: u64,
    #[serde(default = "default_high")]
    pub max_frequency: u64,
    #[serde(default)]
    pub frequency: FrequencyKind,
    /// Corpus only: vocabulary size kept by information gain.
    pub target_dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Sae,
    Ncae,
    Dae,
    Dpae,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Sae => "sae",
            Variant::Ncae => "ncae",
            Variant::Dae => "dae",
            Variant::Dpae => "dpae",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sae" => Ok(Variant::Sae),
            "ncae" => Ok(Variant::Ncae),
            "dae" => Ok(Variant::Dae),
            "dpae" => Ok(Variant::Dpae),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Ncae]
}
fn default_layers() -> Vec<usize> {
    vec![196]
}
fn default_beta() -> f64 {
    3.0
}
fn default_rho() -> f64 {
    0.05
}
fn default_penalty() -> f64 {
    0.003
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    /// Hidden widths, bottom to top. More than one means greedy pretraining.
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_rho")]
    pub sparsity_target: f64,
    /// Weight decay for the variants that use it.
    #[serde(default = "default_penalty")]
    pub lambda: f64,
    /// Nonnegativity penalty for NCAE.
    #[serde(default = "default_penalty")]
    pub alpha: f64,
    pub input_corruption_rate: Option<f64>,
    pub hidden_dropout_rate: Option<f64>,
    /// Train a softmax head; defaults to whether the data carries labels.
    pub classify: Option<bool>,
    #[serde(default = "yes")]
    pub fine_tune: bool,
    /// Softmax nonnegativity penalty for NCAE; defaults to `alpha`.
    pub fine_tune_alpha: Option<f64>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        toml::from_str("").expect("all model fields have defaults")
    }
}

impl ModelSpec {
    pub fn train_config(&self, variant: Variant, hidden: usize, seed: u64) -> TrainConfig {
        let mut cfg = match variant {
            Variant::Sae => TrainConfig::sae(hidden),
            Variant::Ncae => TrainConfig::ncae(hidden),
            Variant::Dae => TrainConfig::dae(hidden),
            Variant::Dpae => TrainConfig::dpae(hidden),
        };
        if matches!(variant, Variant::Sae | Variant::Ncae) {
            cfg.beta = self.beta;
        }
        cfg.sparsity_target = self.sparsity_target;
        if variant == Variant::Ncae {
            cfg.alpha = self.alpha;
        } else {
            cfg.lambda = self.lambda;
        }
        if let Some(r) = self.input_corruption_rate {
            cfg.input_corruption_rate = r;
        }
        if let Some(r) = self.hidden_dropout_rate {
            cfg.hidden_dropout_rate = r;
        }
        cfg.with_seed(seed)
    }

    pub fn softmax_alpha(&self, variant: Variant) -> f64 {
        match variant {
            Variant::Ncae => self.fine_tune_alpha.unwrap_or(self.alpha),
            _ => 0.0,
        }
    }
}

fn default_iterations() -> usize {
    400
}
fn default_tolerance() -> f64 {
    1e-9
}
fn default_memory() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    /// Iteration cap for the softmax head and fine-tuning; defaults to `max_iterations`.
    pub fine_tune_iterations: Option<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_memory")]
    pub memory: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        toml::from_str("").expect("all optimizer fields have defaults")
    }
}

impl OptimizerSpec {
    pub fn pretrain(&self, exec: Exec) -> OptimizerConfig {
        OptimizerConfig {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            memory: self.memory,
            exec,
            ..OptimizerConfig::default()
        }
    }

    pub fn fine_tune(&self, exec: Exec) -> OptimizerConfig {
        OptimizerConfig {
            max_iterations: self.fine_tune_iterations.unwrap_or(self.max_iterations),
            ..self.pretrain(exec)
        }
    }
}

fn default_bins() -> usize {
    20
}
fn default_gap() -> usize {
    1
}
fn default_top_words() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "yes")]
    pub pgm: bool,
    /// Tile height and width for first-layer fields; square tiles are
    /// inferred when the input width is a perfect square.
    pub tile: Option<[usize; 2]>,
    #[serde(default = "default_gap")]
    pub gap: usize,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default = "default_top_words")]
    pub top_words: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        toml::from_str("").expect("all output fields have defaults")
    }
}

fn default_nmf_iterations() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmfSpec {
    pub rank: usize,
    #[serde(default = "default_nmf_iterations")]
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub output: OutputSpec,
    pub nmf: Option<NmfSpec>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub max_iterations: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub variant: Option<Variant>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file and makes its dataset paths absolute.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.dataset.images,
            &mut cfg.dataset.labels,
            &mut cfg.dataset.path,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(n) = o.max_iterations {
            self.optimizer.max_iterations = n;
        }
        if let Some(v) = o.alpha {
            self.model.alpha = v;
        }
        if let Some(v) = o.beta {
            self.model.beta = v;
        }
        if let Some(v) = o.lambda {
            self.model.lambda = v;
        }
        if let Some(v) = o.rho {
            self.model.sparsity_target = v;
        }
        if let Some(v) = o.variant {
            self.model.variants = vec![v];
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model.variants.is_empty() && self.nmf.is_none() {
            return bad("model.variants is empty and no [nmf] section is given".into());
        }
        if self.model.layers.is_empty() || self.model.layers.contains(&0) {
            return bad(format!(
                "model.layers must be nonempty positive widths, got {:?}",
                self.model.layers
            ));
        }
        if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
            return bad(format!(
                "dataset.test_fraction {} must lie in (0,1)",
                self.dataset.test_fraction
            ));
        }
        let need = |field: &Option<PathBuf>, name: &str| match field {
            Some(_) => Ok(()),
            None => Err(Error::Config(format!(
                "dataset kind {:?} needs `{name}`",
                self.dataset.kind
            ))),
        };
        match self.dataset.kind {
            DatasetKind::Idx => need(&self.dataset.images, "images")?,
            DatasetKind::Csv | DatasetKind::Corpus => need(&self.dataset.path, "path")?,
        }
        for (i, &h) in self.model.layers.iter().enumerate() {
            for v in &self.model.variants {
                self.model
                    .train_config(*v, h, self.seed)
                    .validate()
                    .map_err(|e| Error::Config(format!("layer {} {v}: {e}", i + 1)))?;
            }
        }
        if let Some(a) = self.model.fine_tune_alpha {
            if !(a >= 0.0) {
                return bad(format!("fine_tune_alpha {a} must be nonnegative"));
            }
        }
        self.optimizer.pretrain(Exec::Sequential).validate()?;
        if self.output.histogram_bins == 0 {
            return bad("output.histogram_bins must be positive".into());
        }
        Ok(())
    }

    /// Canonical TOML of the effective configuration. The output directory
    /// is left out so that the same experiment hashes the same wherever it lands.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        toml::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Dataset,
    Train,
    Evaluate,
    FineTune,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::FineTune => "fine-tune",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self.stage {
            Stage::Config => 1,
            _ => self.source.exit_code(),
        }
    }
}

pub trait InStage<T> {
    fn in_stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> InStage<T> for Result<T> {
    fn in_stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    /// Column names for corpus data.
    pub vocab: Option<Vec<String>>,
}

fn existing(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| Error::Config(format!("no {what} path given")))?;
    if !p.exists() {
        return Err(Error::Data(format!("{what} file {} does not exist", p.display())));
    }
    Ok(p)
}

/// Loads the full dataset described by `spec` without splitting it.
pub fn load_dataset(spec: &DatasetSpec) -> Result<(Dataset, Option<Vec<String>>)> {
    match spec.kind {
        DatasetKind::Idx => {
            let images = existing(&spec.images, "images")?;
            let data = match &spec.labels {
                Some(_) => load_idx_dataset(images, existing(&spec.labels, "labels")?)?,
                None => Dataset::unlabeled(load_idx_images(images)?)?,
            };
            Ok((data, None))
        }
        DatasetKind::Csv => Ok((load_csv_matrix(existing(&spec.path, "csv")?, spec.has_labels)?, None)),
        DatasetKind::Corpus => {
            let corpus = Corpus::load(existing(&spec.path, "corpus")?)?;
            let (x, vocab, labels, k) = prepare_corpus(
                &corpus,
                spec.min_frequency,
                spec.max_frequency,
                spec.frequency,
                spec.target_dim,
            )?;
            Ok((Dataset::labeled(x, labels, Some(k))?, Some(vocab)))
        }
    }
}

/// Frequency band, optional information-gain selection, then TF-IDF.
pub fn prepare_corpus(
    corpus: &Corpus,
    low: u64,
    high: u64,
    kind: FrequencyKind,
    target_dim: Option<usize>,
) -> Result<(Matrix, Vec<String>, Vec<usize>, usize)> {
    let mut c = frequency_filter(corpus, low, high, kind)?;
    if let Some(d) = target_dim {
        let sel = information_gain_select(&c, d)?;
        c = c.restrict_vocab(&sel.kept_term_ids);
    }
    if c.vocab.is_empty() {
        return Err(Error::Data("no terms survive the frequency filter".into()));
    }
    let x = tfidf(&c)?;
    Ok((x, c.vocab.clone(), c.labels.clone(), c.class_count().max(1)))
}

pub fn load_split(spec: &DatasetSpec, seed: u64) -> Result<LoadedData> {
    let (mut data, vocab) = load_dataset(spec)?;
    if let Some(limit) = spec.limit {
        data = subset(&data, limit, seed);
    }
    let (train, test) = split(&data, 1.0 - spec.test_fraction, seed)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "split of {} samples leaves an empty side ({} / {})",
            data.len(),
            train.len(),
            test.len()
        )));
    }
    Ok(LoadedData { train, test, vocab })
}

/// Metric values for one variant; `None` renders as an empty CSV cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub variant: String,
    pub layers: String,
    pub train_samples: usize,
    pub test_samples: usize,
    pub iterations: usize,
    pub layer1_cost: Option<f64>,
    pub reconstruction_error: f64,
    pub kl_divergence: Option<f64>,
    pub mean_sparseness: Option<f64>,
    pub dead_units: usize,
    pub negative_fraction: f64,
    pub accuracy_before: Option<f64>,
    pub accuracy_after: Option<f64>,
    pub termination: String,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(METRICS_COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record([
            METRICS_SCHEMA_VERSION.to_string(),
            r.variant.clone(),
            r.layers.clone(),
            r.train_samples.to_string(),
            r.test_samples.to_string(),
            r.iterations.to_string(),
            cell(r.layer1_cost),
            r.reconstruction_error.to_string(),
            cell(r.kl_divergence),
            cell(r.mean_sparseness),
            r.dead_units.to_string(),
            r.negative_fraction.to_string(),
            cell(r.accuracy_before),
            cell(r.accuracy_after),
            r.termination.clone(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Tile shape for fields of length `len`: the hint if it fits, a square if
/// `len` is a perfect square, otherwise a single row.
pub fn tile_shape(len: usize, hint: Option<[usize; 2]>) -> (usize, usize) {
    if let Some([h, w]) = hint {
        if h * w == len {
            return (h, w);
        }
    }
    let side = (len as f64).sqrt().round() as usize;
    if side * side == len {
        (side, side)
    } else {
        (1, len)
    }
}

pub fn render_fields_pgm(fields: &Matrix, hint: Option<[usize; 2]>, gap: usize, path: &Path) -> Result<()> {
    let (h, w) = tile_shape(fields.ncols(), hint);
    let grid = TileGrid::for_count(fields.nrows(), h, w, gap, Scaling::SymmetricUnit);
    write_pgm(&render_receptive_fields(fields, &grid)?, path)
}

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub row: MetricsRow,
    pub model: Model,
    /// First-layer autoencoder, for sparsity reports.
    pub first_layer: Option<AutoencoderParams>,
    /// Encoder weights of every layer, bottom first.
    pub layer_weights: Vec<Matrix>,
}

fn first_layer_metrics(ae: &AutoencoderParams, test: &Dataset, p: f64) -> Result<(f64, f64, Option<f64>, usize, f64)> {
    let rec = reconstruction_cost(&test.x, &reconstruct(ae, &test.x)?)?;
    let kl = representation_kl(ae, &test.x, p)?;
    let sp = receptive_field_sparseness(&ae.w1);
    let dead = sp.iter().filter(|s| s.is_none()).count();
    Ok((rec, kl, mean_live(&sp), dead, negative_weight_fraction(&ae.w1)))
}

fn termination_name(t: crate::optimizer::Termination) -> &'static str {
    use crate::optimizer::Termination::*;
    match t {
        Converged => "converged",
        MaxIterations => "max-iterations",
        MaxEvaluations => "max-evaluations",
        LineSearchFailure => "line-search-failure",
    }
}

/// Trains, evaluates and optionally fine-tunes one autoencoder variant.
pub fn run_variant(
    cfg: &ExperimentConfig,
    variant: Variant,
    data: &LoadedData,
    exec: Exec,
) -> std::result::Result<VariantOutcome, StageError> {
    let m = &cfg.model;
    let layers: Vec<TrainConfig> = m
        .layers
        .iter()
        .enumerate()
        .map(|(l, &h)| m.train_config(variant, h, cfg.seed.wrapping_add(l as u64)))
        .collect();
    let opt = cfg.optimizer.pretrain(exec);
    info!("{variant}: training {:?} on {} samples", m.layers, data.train.len());

    let pre = greedy_pretrain_layers(&data.train, &layers, &opt).in_stage(Stage::Train)?;
    let mut iterations: usize = pre.reports.iter().map(|r| r.iterations_used).sum();
    let last_term = pre.reports.last().map(|r| r.termination).expect("at least one layer");
    let ae1 = pre.autoencoders[0].clone();
    let (rec, kl, sparse, dead, neg) =
        first_layer_metrics(&ae1, &data.test, m.sparsity_target).in_stage(Stage::Evaluate)?;
    let layer_weights: Vec<Matrix> = pre.network.encoders.iter().map(|e| e.w.clone()).collect();

    let classify = m.classify.unwrap_or(data.train.labels.is_some());
    let mut row = MetricsRow {
        variant: variant.name().into(),
        layers: m.layers.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("-"),
        train_samples: data.train.len(),
        test_samples: data.test.len(),
        iterations,
        layer1_cost: Some(pre.reports[0].final_cost),
        reconstruction_error: rec,
        kl_divergence: Some(kl),
        mean_sparseness: sparse,
        dead_units: dead,
        negative_fraction: neg,
        accuracy_before: None,
        accuracy_after: None,
        termination: termination_name(last_term).into(),
    };

    let model = if classify {
        let test_labels = data.test.labels_required().in_stage(Stage::Evaluate)?;
        let ft_opt = cfg.optimizer.fine_tune(exec);
        let alpha = m.softmax_alpha(variant);
        let (net, head) = train_softmax_head(&pre.network, &data.train, alpha, &ft_opt).in_stage(Stage::Train)?;
        iterations += head.iterations_used;
        let before =
            accuracy(&predict(&net, &data.test.x).in_stage(Stage::Evaluate)?, test_labels).in_stage(Stage::Evaluate)?;
        row.accuracy_before = Some(before);
        let net = if m.fine_tune {
            let ft = FineTuneConfig {
                alpha,
                optimizer: ft_opt,
            };
            let (tuned, report) = fine_tune(&net, &data.train, &ft).in_stage(Stage::FineTune)?;
            iterations += report.iterations_used;
            row.accuracy_after = Some(
                accuracy(&predict(&tuned, &data.test.x).in_stage(Stage::Evaluate)?, test_labels)
                    .in_stage(Stage::Evaluate)?,
            );
            tuned
        } else {
            net
        };
        Model::Deep(net)
    } else if pre.autoencoders.len() == 1 {
        Model::Autoencoder(ae1.clone())
    } else {
        Model::Deep(pre.network.clone())
    };
    row.iterations = iterations;
    Ok(VariantOutcome {
        row,
        model,
        first_layer: Some(ae1),
        layer_weights,
    })
}

pub fn run_nmf(
    cfg: &ExperimentConfig,
    spec: &NmfSpec,
    data: &LoadedData,
) -> std::result::Result<VariantOutcome, StageError> {
    let v = samples_as_columns(&data.train.x);
    let fit = nmf_factorize(&v, spec.rank, spec.iterations, cfg.seed).in_stage(Stage::Train)?;
    let w = fit.model.w.clone();
    let vt = samples_as_columns(&data.test.x);
    let h = nmf_encode(&w, &vt, spec.iterations, cfg.optimizer.tolerance, cfg.seed).in_stage(Stage::Evaluate)?;
    let test_model = NmfModel { w: w.clone(), h };
    let rec =
        reconstruction_cost(&data.test.x, &test_model.reconstruction().t().to_owned()).in_stage(Stage::Evaluate)?;
    let sp = decoding_filter_sparseness(&w);
    let row = MetricsRow {
        variant: "nmf".into(),
        layers: spec.rank.to_string(),
        train_samples: data.train.len(),
        test_samples: data.test.len(),
        iterations: spec.iterations,
        layer1_cost: fit.objective_trace.last().copied(),
        reconstruction_error: rec,
        kl_divergence: None,
        mean_sparseness: mean_live(&sp),
        dead_units: sp.iter().filter(|s| s.is_none()).count(),
        negative_fraction: 0.0,
        accuracy_before: None,
        accuracy_after: None,
        termination: "max-iterations".into(),
    };
    Ok(VariantOutcome {
        row,
        layer_weights: vec![w.t().to_owned()],
        model: Model::Nmf(fit.model),
        first_layer: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub model_format_version: u32,
    pub metrics_schema_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub config: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub manifest: Manifest,
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn path(&mut self, name: String) -> PathBuf {
        let p = self.dir.join(&name);
        self.files.push(name);
        p
    }
}

/// Executes the configured pipeline and writes every artifact into `out`
/// (or the config's `out`). Nothing written depends on wall-clock time.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> std::result::Result<RunSummary, StageError> {
    cfg.validate().in_stage(Stage::Config)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("no output directory given".into()))
        .in_stage(Stage::Config)?;
    let data = load_split(&cfg.dataset, cfg.seed).in_stage(Stage::Dataset)?;
    let exec = Exec::from_env();

    let mut outcomes = Vec::new();
    for &v in &cfg.model.variants {
        outcomes.push(run_variant(cfg, v, &data, exec)?);
    }
    if let Some(spec) = &cfg.nmf {
        outcomes.push(run_nmf(cfg, spec, &data)?);
    }

    fs::create_dir_all(&dir).map_err(Error::from).in_stage(Stage::Output)?;
    let mut w = Writer {
        dir: dir.clone(),
        files: Vec::new(),
    };
    let mut write = || -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        for o in &outcomes {
            let name = &o.row.variant;
            save_model(w.path(format!("{name}.model")), &o.model)?;
            if cfg.output.pgm {
                for (l, weights) in o.layer_weights.iter().enumerate() {
                    let hint = if l == 0 { cfg.output.tile } else { None };
                    render_fields_pgm(
                        weights,
                        hint,
                        cfg.output.gap,
                        &w.path(format!("{name}_layer{}.pgm", l + 1)),
                    )?;
                }
            }
            if let Some(ae) = &o.first_layer {
                let report = sparsity_report(ae, &data.test.x, cfg.model.sparsity_target, cfg.output.histogram_bins)?;
                report.write_csv(fs::File::create(w.path(format!("{name}_units.csv")))?)?;
                let hist = serde_json::to_string_pretty(&report.histogram).map_err(|e| Error::Format(e.to_string()))?;
                fs::write(w.path(format!("{name}_histogram.json")), hist + "\n")?;
                if let Some(vocab) = &data.vocab {
                    let k = cfg.output.top_words.min(vocab.len());
                    let top = top_k_words(&ae.w1, vocab, k)?;
                    fs::write(w.path(format!("{name}_words.json")), top_words_json(&top)? + "\n")?;
                    fs::write(w.path(format!("{name}_words.txt")), top_words_text(&top))?;
                }
            }
            rows.push(o.row.clone());
        }
        write_metrics_csv(w.path("metrics.csv".into()), &rows)?;
        Ok(rows)
    };
    let rows = write().in_stage(Stage::Output)?;

    let mut files = w.files.clone();
    files.sort();
    let artifacts = files
        .into_iter()
        .map(|f| {
            let bytes = fs::read(dir.join(&f))?;
            Ok(Artifact {
                sha256: sha256_hex(&bytes),
                file: f,
            })
        })
        .collect::<Result<Vec<_>>>()
        .in_stage(Stage::Output)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        model_format_version: FORMAT_VERSION,
        metrics_schema_version: METRICS_SCHEMA_VERSION,
        seed: cfg.seed,
        config_sha256: cfg.hash(),
        config: cfg.canonical(),
        artifacts,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(e.to_string()))
        .in_stage(Stage::Output)?;
    fs::write(dir.join("manifest.json"), json + "\n")
        .map_err(Error::from)
        .in_stage(Stage::Output)?;
    Ok(RunSummary {
        out_dir: dir,
        rows,
        manifest,
    })
}

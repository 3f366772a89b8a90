use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use partcoder::autoencoder::{reconstruct, reconstruction_cost, Dataset};
use partcoder::deepnet::{accuracy, fine_tune, predict, train_softmax_head, FineTuneConfig};
use partcoder::experiment::{
    load_dataset, load_split, render_fields_pgm, run_experiment, run_nmf, run_variant, write_metrics_csv, DatasetSpec,
    ExperimentConfig, InStage, NmfSpec, Overrides, Stage, StageError, Variant,
};
use partcoder::imagedata::write_csv_dataset;
use partcoder::metrics::{
    decoding_filter_sparseness, mean_live, negative_weight_fraction, receptive_field_sparseness, representation_kl,
    sparsity_report,
};
use partcoder::modelio::{load_model, save_model, Model};
use partcoder::par::{init_thread_pool_from_env, Exec};
use partcoder::render::{render_receptive_fields, write_pgm, Scaling, TileGrid};
use partcoder::textdata::{top_k_words, top_words_json, top_words_text, Corpus, FrequencyKind};
use partcoder::Error;

#[derive(Parser)]
#[command(name = "partcoder", version, about = "Nonnegativity-constrained sparse autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one autoencoder and write its model, fields and metrics.
    TrainAe(TrainArgs),
    /// Greedy layer-wise pretraining of a stack of autoencoders.
    PretrainDeep {
        #[command(flatten)]
        train: TrainArgs,
        /// Hidden widths bottom to top, e.g. 64,32.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
    },
    /// Fit a softmax head on a pretrained stack, then fine-tune the whole network.
    FineTune {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        model: PathBuf,
        /// Penalty on negative softmax weights (defaults to --alpha for NCAE, 0 otherwise).
        #[arg(long)]
        softmax_alpha: Option<f64>,
    },
    /// Evaluate a saved model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.05)]
        rho: f64,
    },
    /// Nonnegative matrix factorization baseline.
    Nmf {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 200)]
        iters: usize,
    },
    /// Render the receptive fields of a saved model as a PGM image.
    RenderFields {
        #[arg(long)]
        model: PathBuf,
        /// 1-based encoder layer.
        #[arg(long, default_value_t = 1)]
        layer: usize,
        /// Tile size as HxW; inferred for square fields.
        #[arg(long)]
        tile: Option<String>,
        #[arg(long, default_value_t = 1)]
        gap: usize,
        #[arg(long, value_enum, default_value_t = ScalingArg::Symmetric)]
        scaling: ScalingArg,
        /// Output PGM file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a bag-of-words corpus into a TF-IDF CSV.
    TextPrep {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 4)]
        low: u64,
        #[arg(long, default_value_t = 70)]
        high: u64,
        #[arg(long, value_enum, default_value_t = FrequencyArg::Document)]
        frequency: FrequencyArg,
        /// Keep this many terms by information gain.
        #[arg(long)]
        target_dim: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sparsity report (per-unit CSV, histogram, top words) for a saved autoencoder.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.05)]
        rho: f64,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Vocabulary file (one term per line) for a top-words listing.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        top: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a full experiment config.
    Run(TrainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalingArg {
    Symmetric,
    Minmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrequencyArg {
    Document,
    Total,
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// IDX image file (optionally gzipped).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Numeric CSV file.
    #[arg(long, conflicts_with = "images")]
    csv: Option<PathBuf>,
    /// The CSV's last column holds class labels.
    #[arg(long)]
    csv_labels: bool,
    /// Seeded random subset of this many samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

impl DataArgs {
    fn given(&self) -> bool {
        self.images.is_some() || self.csv.is_some()
    }

    fn spec(&self) -> DatasetSpec {
        let mut text = String::from("kind = \"csv\"\n");
        if self.images.is_some() {
            text = String::from("kind = \"idx\"\n");
        }
        let mut spec: DatasetSpec = toml::from_str(&text).expect("static dataset spec");
        spec.images = self.images.clone();
        spec.labels = self.labels.clone();
        spec.path = self.csv.clone();
        spec.has_labels = self.csv_labels;
        spec.limit = self.limit;
        if let Some(f) = self.test_fraction {
            spec.test_fraction = f;
        }
        spec
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Experiment config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Iteration cap (default 400).
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Sparsity target p.
    #[arg(long)]
    rho: Option<f64>,
    /// sae, ncae, dae or dpae.
    #[arg(long)]
    objective: Option<Variant>,
    /// Hidden units of a single autoencoder.
    #[arg(long)]
    hidden: Option<usize>,
}

impl TrainArgs {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None if self.data.given() => {
                let ds = toml::to_string(&self.data.spec()).map_err(|e| Error::Config(e.to_string()))?;
                let text = ds.lines().map(|l| format!("{l}\n")).collect::<String>();
                ExperimentConfig::parse(&format!("[dataset]\n{text}"))?
            }
            None => return Err(Error::Config("give --config or a dataset (--images / --csv)".into())),
        };
        if self.config.is_some() && self.data.given() {
            cfg.dataset = self.data.spec();
        }
        cfg.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            max_iterations: self.max_iter,
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            rho: self.rho,
            variant: self.objective,
        });
        if let Some(h) = self.hidden {
            cfg.model.layers = vec![h];
        }
        Ok(cfg)
    }
}

enum Failure {
    Stage(StageError),
    Plain(Error),
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Plain(e)
    }
}

type CliResult = Result<(), Failure>;

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, StageError> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))
        .in_stage(Stage::Config)?;
    fs::create_dir_all(&dir).map_err(Error::from).in_stage(Stage::Output)?;
    Ok(dir)
}

fn train_ae(args: &TrainArgs) -> CliResult {
    let mut cfg = args.config().in_stage(Stage::Config)?;
    cfg.model.layers.truncate(1);
    cfg.model.classify = Some(false);
    train_stack(&cfg)
}

fn pretrain_deep(args: &TrainArgs, layers: &Option<Vec<usize>>) -> CliResult {
    let mut cfg = args.config().in_stage(Stage::Config)?;
    if let Some(l) = layers {
        cfg.model.layers = l.clone();
    }
    cfg.model.classify = Some(false);
    train_stack(&cfg)
}

fn train_stack(cfg: &ExperimentConfig) -> CliResult {
    cfg.validate().in_stage(Stage::Config)?;
    let dir = out_dir(cfg)?;
    let data = load_split(&cfg.dataset, cfg.seed).in_stage(Stage::Dataset)?;
    let mut rows = Vec::new();
    for &v in &cfg.model.variants {
        let o = run_variant(cfg, v, &data, Exec::from_env())?;
        let name = v.name();
        save_model(dir.join(format!("{name}.model")), &o.model).in_stage(Stage::Output)?;
        for (l, w) in o.layer_weights.iter().enumerate() {
            let hint = if l == 0 { cfg.output.tile } else { None };
            render_fields_pgm(w, hint, cfg.output.gap, &dir.join(format!("{name}_layer{}.pgm", l + 1)))
                .in_stage(Stage::Output)?;
        }
        println!(
            "{name}: reconstruction {:.6}  kl {:.6}  sparseness {}  negative {:.4}",
            o.row.reconstruction_error,
            o.row.kl_divergence.unwrap_or(f64::NAN),
            o.row.mean_sparseness.map_or("-".into(), |s| format!("{s:.4}")),
            o.row.negative_fraction
        );
        rows.push(o.row);
    }
    write_metrics_csv(dir.join("metrics.csv"), &rows).in_stage(Stage::Output)?;
    Ok(())
}

fn fine_tune_cmd(args: &TrainArgs, model: &Path, softmax_alpha: Option<f64>) -> CliResult {
    let cfg = args.config().in_stage(Stage::Config)?;
    cfg.validate().in_stage(Stage::Config)?;
    let dir = out_dir(&cfg)?;
    let net = match load_model(model).in_stage(Stage::Dataset)? {
        Model::Deep(net) => net,
        Model::Autoencoder(p) => {
            partcoder::deepnet::DeepNetwork::from_encoders(vec![partcoder::deepnet::EncoderLayer { w: p.w1, b: p.b1 }])
                .in_stage(Stage::Dataset)?
        }
        Model::Nmf(_) => {
            return Err(Error::Config("NMF models cannot be fine-tuned".into()))
                .in_stage(Stage::Config)
                .map_err(Into::into)
        }
    };
    let data = load_split(&cfg.dataset, cfg.seed).in_stage(Stage::Dataset)?;
    let variant = cfg.model.variants.first().copied().unwrap_or(Variant::Ncae);
    let alpha = softmax_alpha.unwrap_or_else(|| cfg.model.softmax_alpha(variant));
    let opt = cfg.optimizer.fine_tune(Exec::from_env());
    let test_y = data.test.labels_required().in_stage(Stage::Dataset)?;
    let net = if net.class_count == 0 {
        train_softmax_head(&net, &data.train, alpha, &opt)
            .in_stage(Stage::Train)?
            .0
    } else {
        net
    };
    let before = accuracy(&predict(&net, &data.test.x).in_stage(Stage::Evaluate)?, test_y).in_stage(Stage::Evaluate)?;
    let (tuned, report) =
        fine_tune(&net, &data.train, &FineTuneConfig { alpha, optimizer: opt }).in_stage(Stage::FineTune)?;
    let after =
        accuracy(&predict(&tuned, &data.test.x).in_stage(Stage::Evaluate)?, test_y).in_stage(Stage::Evaluate)?;
    save_model(dir.join("finetuned.model"), &Model::Deep(tuned)).in_stage(Stage::Output)?;
    println!(
        "accuracy before {before:.4}  after {after:.4}  ({} iterations, {:?})",
        report.iterations_used, report.termination
    );
    Ok(())
}

fn dataset_from(args: &DataArgs) -> Result<Dataset, StageError> {
    if !args.given() {
        return Err(Error::Config("give --images or --csv".into())).in_stage(Stage::Config);
    }
    let (mut data, _) = load_dataset(&args.spec()).in_stage(Stage::Dataset)?;
    if let Some(n) = args.limit {
        data = partcoder::imagedata::subset(&data, n, 0);
    }
    Ok(data)
}

fn eval_cmd(model: &Path, data: &DataArgs, rho: f64) -> CliResult {
    let model = load_model(model).in_stage(Stage::Dataset)?;
    let data = dataset_from(data)?;
    match &model {
        Model::Autoencoder(p) => {
            let rec = reconstruction_cost(&data.x, &reconstruct(p, &data.x)?)?;
            let kl = representation_kl(p, &data.x, rho).in_stage(Stage::Evaluate)?;
            let sp = mean_live(&receptive_field_sparseness(&p.w1));
            println!("reconstruction_error {rec}");
            println!("kl_divergence {kl}");
            println!("mean_sparseness {}", sp.map_or("-".into(), |s| s.to_string()));
            println!("negative_fraction {}", negative_weight_fraction(&p.w1));
        }
        Model::Deep(net) => {
            if let (Some(y), true) = (&data.labels, net.class_count > 0) {
                let acc = accuracy(&predict(net, &data.x)?, y).in_stage(Stage::Evaluate)?;
                println!("accuracy {acc}");
            }
            println!(
                "kl_divergence {}",
                representation_kl(net, &data.x, rho).in_stage(Stage::Evaluate)?
            );
            println!("negative_fraction {}", negative_weight_fraction(&net.encoders[0].w));
        }
        Model::Nmf(m) => {
            let v = partcoder::nmf::samples_as_columns(&data.x);
            let h = partcoder::nmf::nmf_encode(&m.w, &v, 200, 1e-9, 0).in_stage(Stage::Evaluate)?;
            let fitted = partcoder::nmf::NmfModel { w: m.w.clone(), h };
            let rec = reconstruction_cost(&data.x, &fitted.reconstruction().t().to_owned())?;
            println!("reconstruction_error {rec}");
            println!("mean_sparseness {:?}", mean_live(&decoding_filter_sparseness(&m.w)));
        }
    }
    Ok(())
}

fn nmf_cmd(args: &TrainArgs, rank: usize, iters: usize) -> CliResult {
    let mut cfg = args.config().in_stage(Stage::Config)?;
    cfg.model.variants.clear();
    let spec = NmfSpec {
        rank,
        iterations: iters,
    };
    cfg.nmf = Some(spec.clone());
    cfg.validate().in_stage(Stage::Config)?;
    let dir = out_dir(&cfg)?;
    let data = load_split(&cfg.dataset, cfg.seed).in_stage(Stage::Dataset)?;
    let o = run_nmf(&cfg, &spec, &data)?;
    save_model(dir.join("nmf.model"), &o.model).in_stage(Stage::Output)?;
    render_fields_pgm(
        &o.layer_weights[0],
        cfg.output.tile,
        cfg.output.gap,
        &dir.join("nmf_layer1.pgm"),
    )
    .in_stage(Stage::Output)?;
    write_metrics_csv(dir.join("metrics.csv"), std::slice::from_ref(&o.row)).in_stage(Stage::Output)?;
    println!("nmf: reconstruction {:.6}", o.row.reconstruction_error);
    Ok(())
}

fn parse_tile(s: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::Config(format!("tile `{s}` is not HxW"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?))
}

fn render_cmd(
    model: &Path,
    layer: usize,
    tile: &Option<String>,
    gap: usize,
    scaling: ScalingArg,
    out: &Path,
) -> CliResult {
    let model = load_model(model).in_stage(Stage::Dataset)?;
    let fields = match (&model, layer) {
        (_, 1) => model.first_layer_fields(),
        (Model::Deep(net), l) if l <= net.encoders.len() => net.encoders[l - 1].w.clone(),
        _ => return Err(Error::Config(format!("model has no layer {layer}")).into()),
    };
    let (h, w) = match tile {
        Some(t) => parse_tile(t).in_stage(Stage::Config)?,
        None => partcoder::experiment::tile_shape(fields.ncols(), None),
    };
    let scaling = match scaling {
        ScalingArg::Symmetric => Scaling::SymmetricUnit,
        ScalingArg::Minmax => Scaling::MinMax,
    };
    let grid = TileGrid::for_count(fields.nrows(), h, w, gap, scaling);
    let img = render_receptive_fields(&fields, &grid).in_stage(Stage::Output)?;
    write_pgm(&img, out).in_stage(Stage::Output)?;
    info!("wrote {}x{} image to {}", img.width, img.height, out.display());
    Ok(())
}

fn text_prep(corpus: &Path, low: u64, high: u64, freq: FrequencyArg, target: Option<usize>, out: &Path) -> CliResult {
    let c = Corpus::load(corpus).in_stage(Stage::Dataset)?;
    let kind = match freq {
        FrequencyArg::Document => FrequencyKind::Document,
        FrequencyArg::Total => FrequencyKind::Total,
    };
    let (x, vocab, labels, k) =
        partcoder::experiment::prepare_corpus(&c, low, high, kind, target).in_stage(Stage::Dataset)?;
    fs::create_dir_all(out).map_err(Error::from).in_stage(Stage::Output)?;
    let data = Dataset::labeled(x, labels, Some(k)).in_stage(Stage::Dataset)?;
    write_csv_dataset(out.join("tfidf.csv"), &data).in_stage(Stage::Output)?;
    fs::write(out.join("vocab.txt"), vocab.join("\n") + "\n")
        .map_err(Error::from)
        .in_stage(Stage::Output)?;
    fs::write(out.join("classes.txt"), c.class_names.join("\n") + "\n")
        .map_err(Error::from)
        .in_stage(Stage::Output)?;
    println!("{} documents, {} terms, {} classes", data.len(), vocab.len(), k);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn report_cmd(
    model: &Path,
    data: &DataArgs,
    rho: f64,
    bins: usize,
    vocab: &Option<PathBuf>,
    top: usize,
    out: &Path,
) -> CliResult {
    let params = match load_model(model).in_stage(Stage::Dataset)? {
        Model::Autoencoder(p) => p,
        other => {
            return Err(Error::Config(format!("report needs an autoencoder model, got {}", other.kind_name())).into())
        }
    };
    let data = dataset_from(data)?;
    let report = sparsity_report(&params, &data.x, rho, bins).in_stage(Stage::Evaluate)?;
    fs::create_dir_all(out).map_err(Error::from).in_stage(Stage::Output)?;
    let file = fs::File::create(out.join("units.csv"))
        .map_err(Error::from)
        .in_stage(Stage::Output)?;
    report.write_csv(file).in_stage(Stage::Output)?;
    let json = serde_json::to_string_pretty(&report.histogram).expect("histogram serializes");
    fs::write(out.join("histogram.json"), json + "\n")
        .map_err(Error::from)
        .in_stage(Stage::Output)?;
    if let Some(v) = vocab {
        let words: Vec<String> = fs::read_to_string(v)
            .map_err(Error::from)
            .in_stage(Stage::Dataset)?
            .lines()
            .map(str::to_owned)
            .collect();
        let ranked = top_k_words(&params.w1, &words, top.min(words.len())).in_stage(Stage::Evaluate)?;
        fs::write(out.join("words.json"), top_words_json(&ranked)? + "\n").map_err(Error::from)?;
        fs::write(out.join("words.txt"), top_words_text(&ranked)).map_err(Error::from)?;
    }
    println!(
        "negative_fraction {}  kl {}  dead_units {}",
        report.negative_fraction,
        report.kl_divergence,
        report.dead_units()
    );
    Ok(())
}

fn run_cmd(args: &TrainArgs) -> CliResult {
    if args.config.is_none() {
        return Err(Error::Config("run needs --config".into()))
            .in_stage(Stage::Config)
            .map_err(Into::into);
    }
    let cfg = args.config().in_stage(Stage::Config)?;
    let summary = run_experiment(&cfg, None)?;
    for r in &summary.rows {
        println!(
            "{}: reconstruction {:.6}  accuracy before {}  after {}",
            r.variant,
            r.reconstruction_error,
            r.accuracy_before.map_or("-".into(), |a| format!("{a:.4}")),
            r.accuracy_after.map_or("-".into(), |a| format!("{a:.4}"))
        );
    }
    println!("artifacts in {}", summary.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    init_thread_pool_from_env();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::TrainAe(a) => train_ae(a),
        Command::PretrainDeep { train, layers } => pretrain_deep(train, layers),
        Command::FineTune {
            train,
            model,
            softmax_alpha,
        } => fine_tune_cmd(train, model, *softmax_alpha),
        Command::Eval { model, data, rho } => eval_cmd(model, data, *rho),
        Command::Nmf { train, rank, iters } => nmf_cmd(train, *rank, *iters),
        Command::RenderFields {
            model,
            layer,
            tile,
            gap,
            scaling,
            out,
        } => render_cmd(model, *layer, tile, *gap, *scaling, out),
        Command::TextPrep {
            corpus,
            low,
            high,
            frequency,
            target_dim,
            out,
        } => text_prep(corpus, *low, *high, *frequency, *target_dim, out),
        Command::Report {
            model,
            data,
            rho,
            bins,
            vocab,
            top,
            out,
        } => report_cmd(model, data, *rho, *bins, vocab, *top, out),
        Command::Run(a) => run_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Plain(e)) => {
            if e.exit_code() == 3 {
                warn!("optimization failed");
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

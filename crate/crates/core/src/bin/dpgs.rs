//! `dpgs`: fit private mixtures, generate and filter synthetic embeddings,
//! train and evaluate the utility classifier, and run planted benchmarks.
//!
//! Exit codes: 0 success, 1 benchmark acceptance failed, 2 privacy audit
//! failed, 3 unreadable or unwritable files, 64 bad arguments or
//! configuration.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use dpgs::bench::{self, MeanPlacement, PlantedGmmSpec, RowOutcome, SweepGrid, Thresholds, UtilityEval};
use dpgs::classifier::{evaluate, train_mlp, LrSchedule, MlpConfig, MlpModel};
use dpgs::exec::{with_threads, Backend};
use dpgs::kmeans::K_GRID;
use dpgs::pipeline::{class_partition, dp_filter_embeddings_with, record_reserved, STAGES};
use dpgs::report::{ledger_section, ModelFile};
use dpgs::rng::stream;
use dpgs::textdoc::{join_floats, Document, Section};
use dpgs::{
    fit_private_gmm, load_dataset, sample_gmm, save_dataset, split_by_label, split_budget, BudgetLedger,
    CovarianceModel, EmbeddingDataset, Error, EstimatorConfig, Format, KMeansConfig, KMeansInit, PipelineConfig,
    PrivacyBudget, Streams,
};

const EXIT_ACCEPTANCE: u8 = 1;
const EXIT_AUDIT: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_USAGE: u8 = 64;

/// A failed command: exit code plus message.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Audit { .. } => EXIT_AUDIT,
            Error::Io(_) | Error::Parse { .. } | Error::Shape(_) => EXIT_IO,
            Error::Config(_) | Error::Contract(_) => EXIT_USAGE,
        };
        Failure { code, msg: e.to_string() }
    }
}

type CmdResult = std::result::Result<u8, Failure>;

#[derive(Parser, Debug)]
#[command(name = "dpgs", version, about = "Differentially private Gaussian-mixture synthetic embeddings")]
#[command(args_override_self = true)]
struct Cli {
    /// Run seed; falls back to DPGS_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-class and per-cell parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Flat `key = value` file of default flags; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Privately fit one mixture per class and write a model file.
    Fit(FitArgs),
    /// Sample synthetic embeddings from a model file, optionally filtering them.
    Generate(GenerateArgs),
    /// Filter generated embeddings by noisy nearest-neighbour votes.
    Filter(FilterArgs),
    /// Train the two-layer classifier.
    TrainMlp(TrainArgs),
    /// Report a trained classifier's accuracy on a labelled set.
    Eval(EvalArgs),
    /// Sweep pipeline settings over planted data and check recovery.
    Bench(BenchArgs),
    /// Write a planted labelled mixture dataset.
    Plant(PlantArgs),
}

#[derive(Args, Debug)]
struct BudgetArgs {
    /// Total ε of the run.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Total δ of the run.
    #[arg(long)]
    delta: Option<f64>,
    /// Disable all noise; for oracle comparisons only.
    #[arg(long, conflicts_with_all = ["epsilon", "delta"])]
    non_private: bool,
}

impl BudgetArgs {
    fn budget(&self) -> Result<PrivacyBudget, Failure> {
        if self.non_private {
            return Ok(PrivacyBudget::non_private());
        }
        let (Some(e), Some(d)) = (self.epsilon, self.delta) else {
            return Err(Failure::usage("--epsilon and --delta are required unless --non-private is given"));
        };
        Ok(PrivacyBudget::new(e, d)?)
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum InitArg {
    Splitting,
    RandomBall,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum CovArg {
    Diagonal,
    Full,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Embeddings; `.csv` (label in the last column) or the binary format.
    #[arg(long)]
    input: PathBuf,
    /// The CSV input has no label column; all rows form class 0.
    #[arg(long)]
    no_labels: bool,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Mixture components per class.
    #[arg(long)]
    k: usize,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Ball radius about the origin for clustering.
    #[arg(long, default_value_t = 10.0)]
    kmeans_clip: f64,
    #[arg(long, default_value_t = 5)]
    lloyd_iterations: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Splitting)]
    init: InitArg,
    /// Deviation radius for covariance estimation.
    #[arg(long, default_value_t = 6.0)]
    clip: f64,
    /// Deviation radius for mean estimation; `--clip` when unset.
    #[arg(long)]
    mean_clip: Option<f64>,
    #[arg(long, value_enum, default_value_t = CovArg::Diagonal)]
    covariance: CovArg,
    #[arg(long, default_value_t = 1e-6)]
    variance_floor: f64,
    /// Relative budget shares of the five stages.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1,1,1")]
    shares: Vec<f64>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Target synthetic rows per class.
    #[arg(short = 'm', long)]
    generations: usize,
    /// Rows sampled per class are `multiplier · m`.
    #[arg(long, default_value_t = 6.0)]
    multiplier: f64,
    /// Synthetic dataset to write.
    #[arg(long)]
    out: PathBuf,
    /// Spend the filter share on noisy votes from `--original`.
    #[arg(long, requires = "original")]
    filter: bool,
    /// The data the model was fitted on.
    #[arg(long)]
    original: Option<PathBuf>,
    #[arg(long)]
    no_labels: bool,
    #[arg(long, default_value_t = 6.0)]
    threshold: f64,
    /// Optional run report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Filter budget; the Laplace votes need no δ.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, conflicts_with = "epsilon")]
    non_private: bool,
    #[arg(long, default_value_t = 6.0)]
    threshold: f64,
    /// Inputs carry no labels; filter them as one class.
    #[arg(long)]
    no_labels: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Args, Debug)]
struct MlpArgs {
    #[arg(long, default_value_t = 128)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.2)]
    label_smoothing: f64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Cosine)]
    schedule: ScheduleArg,
}

impl MlpArgs {
    fn config(&self) -> Result<MlpConfig, Failure> {
        let cfg = MlpConfig {
            hidden_dim: self.hidden_dim,
            dropout: self.dropout,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            label_smoothing: self.label_smoothing,
            lr_schedule: match self.schedule {
                ScheduleArg::Constant => LrSchedule::Constant,
                ScheduleArg::Cosine => LrSchedule::Cosine,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Labelled training embeddings.
    #[arg(long)]
    train: PathBuf,
    /// Classifier file to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    mlp: MlpArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Classifier written by `train-mlp`.
    #[arg(long)]
    model: PathBuf,
    /// Labelled test embeddings.
    #[arg(long)]
    test: PathBuf,
    /// Also write the result here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Sweep table (tab-separated) to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the summary here.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = K_GRID)]
    ks: Vec<usize>,
    /// Covariance clip radii.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    clips: Vec<f64>,
    /// Total ε values; `inf` runs without noise.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    epsilons: Vec<f64>,
    /// Seeds per configuration, counting up from the run seed.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 32.0)]
    kmeans_clip: f64,
    #[arg(long, default_value_t = 4)]
    lloyd_iterations: usize,
    #[arg(long, default_value_t = 6.0)]
    mean_clip: f64,
    #[arg(short = 'm', long, default_value_t = 1500)]
    generations: usize,
    /// Planted rows per class.
    #[arg(long, default_value_t = 30_000)]
    n_per_class: usize,
    /// Run the vote filter in every cell.
    #[arg(long)]
    filter: bool,
    /// Train classifiers on synthetic and real rows in every cell.
    #[arg(long)]
    utility: bool,
    #[arg(long, default_value_t = 5000)]
    test_per_class: usize,
    /// Classifier batch size for the utility check.
    #[arg(long, default_value_t = bench::DESK_BATCH_SIZE)]
    mlp_batch_size: usize,
    #[arg(long)]
    max_weight_l1: Option<f64>,
    #[arg(long)]
    max_mean_l2: Option<f64>,
    #[arg(long)]
    max_cov_rel: Option<f64>,
    #[arg(long)]
    min_purity: Option<f64>,
    #[arg(long)]
    max_accuracy_gap: Option<f64>,
    #[arg(long)]
    min_accuracy: Option<f64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PlacementArg {
    Simplex,
    Ball,
}

#[derive(Args, Debug)]
struct PlantArgs {
    /// Labelled dataset to write.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth mixtures, in the model-file format.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 30_000)]
    n_per_class: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Minimum distance between means; 30σ√d when unset.
    #[arg(long)]
    separation: Option<f64>,
    /// Component weights; (0.5, 0.3, 0.2) for k = 3, uniform otherwise.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = PlacementArg::Simplex)]
    placement: PlacementArg,
    /// Ball radius for random placement.
    #[arg(long, default_value_t = 100.0)]
    radius: f64,
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match with_config_defaults(argv) {
        Ok(a) => a,
        Err(f) => return report_failure(f),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if cli.jobs == Some(0) {
        return report_failure(Failure::usage("--jobs must be at least 1"));
    }
    let seed = match resolve_seed(cli.seed) {
        Ok(s) => s,
        Err(f) => return report_failure(f),
    };
    match with_threads(cli.jobs, || run(cli.command, seed)) {
        Ok(code) => ExitCode::from(code),
        Err(f) => report_failure(f),
    }
}

fn report_failure(f: Failure) -> ExitCode {
    eprintln!("error: {}", f.msg);
    ExitCode::from(f.code)
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("DPGS_SEED") {
        Ok(raw) => raw
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("DPGS_SEED must be an unsigned integer, got {raw:?}"))),
        Err(_) => Ok(0),
    }
}

/// Splices the flags of a `--config` file in right after the subcommand name,
/// so any flag repeated on the command line overrides it.
fn with_config_defaults(argv: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = strs.get(i + 1).cloned();
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| Failure {
        code: EXIT_IO,
        msg: format!("cannot read config {path}: {e}"),
    })?;
    let doc = Document::parse(&text).map_err(|e| Failure::usage(format!("config {path}: {e}")))?;
    if doc.sections.iter().any(|s| !s.name.is_empty()) {
        return Err(Failure::usage(format!("config {path}: sections are not supported")));
    }

    let cmd = Cli::command();
    let sub_names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let Some(pos) = strs.iter().skip(1).position(|a| sub_names.contains(a)).map(|p| p + 1) else {
        return Ok(argv);
    };
    let sub = cmd.find_subcommand(&strs[pos]).expect("listed subcommand");
    let flag_arg = |key: &str| {
        let long = key.replace('_', "-");
        cmd.get_arguments()
            .chain(sub.get_arguments())
            .find(|a| a.get_long() == Some(long.as_str()))
            .map(|a| (long.clone(), a.get_action().takes_values()))
    };

    let mut spliced = Vec::new();
    for s in &doc.sections {
        for (key, value) in &s.entries {
            if key == "config" {
                return Err(Failure::usage(format!("config {path}: nested config files are not supported")));
            }
            let Some((long, takes_value)) = flag_arg(key) else {
                return Err(Failure::usage(format!("config {path}: unknown key {key:?} for {}", strs[pos])));
            };
            if takes_value {
                spliced.push(OsString::from(format!("--{long}")));
                spliced.push(OsString::from(value));
            } else {
                match value.as_str() {
                    "true" => spliced.push(OsString::from(format!("--{long}"))),
                    "false" => {}
                    other => {
                        return Err(Failure::usage(format!(
                            "config {path}: {key} expects true or false, got {other:?}"
                        )))
                    }
                }
            }
        }
    }
    let mut out = argv;
    out.splice(pos + 1..pos + 1, spliced);
    Ok(out)
}

fn run(command: Command, seed: u64) -> CmdResult {
    match command {
        Command::Fit(a) => cmd_fit(a, seed),
        Command::Generate(a) => cmd_generate(a, seed),
        Command::Filter(a) => cmd_filter(a, seed),
        Command::TrainMlp(a) => cmd_train(a, seed),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a, seed),
        Command::Plant(a) => cmd_plant(a, seed),
    }
}

fn load(path: &Path, labelled: bool) -> Result<EmbeddingDataset, Failure> {
    load_dataset(path, Format::from_path(path), labelled).map_err(|e| with_path(e, path))
}

fn save(ds: &EmbeddingDataset, path: &Path) -> Result<(), Failure> {
    save_dataset(ds, path, Format::from_path(path)).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Failure {
    let mut f = Failure::from(e);
    f.msg = format!("{}: {}", path.display(), f.msg);
    f
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| with_path(e.into(), path))
}

/// Prints the ledger and fails when it exceeds its declared total.
fn print_audit(ledger: &BudgetLedger) -> Result<(), Failure> {
    print!("{}", ledger.render());
    ledger.audit()?;
    Ok(())
}

fn print_no_release() {
    println!("privacy ledger: this command releases nothing about private data beyond its inputs");
}

/// Labelled classes of `ds`, rejecting gaps in the label range.
fn classes_of(ds: &EmbeddingDataset) -> Result<Vec<(u32, EmbeddingDataset)>, Failure> {
    let classes = split_by_label(ds)?;
    let c = ds.num_classes().unwrap_or(0) as u32;
    if let Some(missing) = (0..c).find(|l| classes.iter().all(|(label, _)| label != l)) {
        return Err(Failure::usage(format!("class {missing} has no rows")));
    }
    Ok(classes)
}

fn cmd_fit(a: FitArgs, seed: u64) -> CmdResult {
    let budget = a.budget.budget()?;
    let shares: [f64; 5] = a
        .shares
        .clone()
        .try_into()
        .map_err(|_| Failure::usage("--shares needs five values"))?;
    let mut kmeans = KMeansConfig::new(a.k, a.kmeans_clip);
    kmeans.lloyd_iterations = a.lloyd_iterations;
    kmeans.init = match a.init {
        InitArg::Splitting => KMeansInit::Splitting,
        InitArg::RandomBall => KMeansInit::RandomBall,
    };
    let estimator = EstimatorConfig {
        clip_radius: a.clip,
        mean_clip_radius: a.mean_clip,
        covariance_model: match a.covariance {
            CovArg::Diagonal => CovarianceModel::Diagonal,
            CovArg::Full => CovarianceModel::Full,
        },
        variance_floor: a.variance_floor,
        ..EstimatorConfig::default()
    };
    let mut cfg = PipelineConfig::new(budget, kmeans, estimator, 1);
    cfg.shares = shares;
    cfg.validate()?;
    let stage_budgets = cfg.stage_budgets()?;

    let mut ds = load(&a.input, !a.no_labels)?;
    if ds.labels().is_none() {
        let n = ds.len();
        ds = ds.with_labels(Some(vec![0; n]))?;
    }
    let classes = classes_of(&ds)?;
    let streams = Streams::new(seed);
    let fits = cfg.backend.map_range(classes.len(), |i| {
        let (label, part) = &classes[i];
        fit_private_gmm(part, &cfg, &streams.scope(&format!("class-{label}")))
            .map_err(|e| e.context(&format!("class {label}")))
    });

    let mut ledger = BudgetLedger::new(budget);
    let mut models = Vec::with_capacity(fits.len());
    for ((label, _), fit) in classes.iter().zip(fits) {
        let fit = fit?;
        for e in fit.ledger.entries() {
            ledger.record(format!("class {label}/{}", e.name), e.budget, class_partition(&e.name));
        }
        let degenerate = fit.degenerate.iter().filter(|d| **d).count();
        println!(
            "class {label}: k = {}, noisy counts [{}], degenerate {degenerate}, reseeded {}",
            fit.model.k(),
            join_floats(&fit.clustering.noisy_counts),
            fit.clustering.reseeded.len()
        );
        models.push((*label, fit.model));
    }
    record_reserved(&mut ledger, &stage_budgets, false);
    print_audit(&ledger)?;
    ModelFile { seed, shares, models, ledger }
        .save(&a.out)
        .map_err(|e| with_path(e, &a.out))?;
    Ok(0)
}

fn reserved_name(stage: &str) -> String {
    format!("{stage} (reserved, unused)")
}

fn cmd_generate(a: GenerateArgs, seed: u64) -> CmdResult {
    let file = ModelFile::load(&a.model).map_err(|e| with_path(e, &a.model))?;
    file.ledger.audit()?;
    let stage_budgets = split_budget(&file.ledger.total(), &file.shares)?;
    let mut cfg = PipelineConfig::new(
        file.ledger.total(),
        KMeansConfig::new(1, 1.0),
        EstimatorConfig::default(),
        a.generations,
    );
    cfg.generation_multiplier = a.multiplier;
    cfg.vote_threshold = a.threshold;
    cfg.validate()?;
    let count = cfg.samples_per_class();

    let original = match (&a.original, a.filter) {
        (Some(path), true) => {
            let ds = load(path, !a.no_labels)?;
            let ds = match ds.labels() {
                Some(_) => ds,
                None => {
                    let n = ds.len();
                    ds.with_labels(Some(vec![0; n]))?
                }
            };
            Some(classes_of(&ds)?)
        }
        (_, true) => return Err(Failure::usage("--filter requires --original")),
        _ => None,
    };
    let parts_of_original = |label: u32| -> Result<&EmbeddingDataset, Failure> {
        let classes = original.as_ref().expect("filter has originals");
        classes
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, p)| p)
            .ok_or_else(|| Failure::usage(format!("--original has no rows of class {label}")))
    };
    if a.filter {
        for (label, _) in &file.models {
            parts_of_original(*label)?;
        }
    }

    let streams = Streams::new(seed);
    let backend = Backend::default();
    let outcomes = backend.map_range(file.models.len(), |i| {
        let (label, model) = &file.models[i];
        let class_streams = streams.scope(&format!("class-{label}"));
        let sampled = sample_gmm(model, count, &mut class_streams.rng("sample"))?
            .with_labels(Some(vec![*label; count]))?;
        if !a.filter {
            return Ok((Some(sampled), None));
        }
        let part = parts_of_original(*label).map_err(|f| Error::Contract(f.msg))?;
        let out = dp_filter_embeddings_with(
            backend,
            &sampled,
            part,
            a.threshold,
            &stage_budgets[3],
            &mut class_streams.rng(STAGES[3]),
        )
        .map_err(|e| e.context(&format!("class {label}")))?;
        let kept = out.kept.len();
        Ok::<_, Error>((out.survivors, Some(kept)))
    });

    let mut ledger = BudgetLedger::new(file.ledger.total());
    for e in file.ledger.entries() {
        if a.filter && e.name == reserved_name(STAGES[3]) {
            continue;
        }
        ledger.record(e.name.clone(), e.budget, e.composition.clone());
    }
    let mut parts = Vec::new();
    let mut class_sections = Vec::new();
    for ((label, _), outcome) in file.models.iter().zip(outcomes) {
        let (rows, kept) = outcome?;
        let mut s = Section::new(format!("class {label}"));
        s.set("generated", count);
        match kept {
            Some(k) => {
                ledger.record(format!("class {label}/{}", STAGES[3]), stage_budgets[3], class_partition(STAGES[3]));
                s.set("survivors", k);
                println!("class {label}: sampled {count}, kept {k}");
                if k == 0 {
                    eprintln!("warning: class {label}: the filter kept no rows");
                }
            }
            None => {
                s.set("survivors", "unfiltered");
                println!("class {label}: sampled {count}");
            }
        }
        class_sections.push(s);
        parts.extend(rows);
    }
    print_audit(&ledger)?;
    if parts.is_empty() {
        return Err(Failure::usage("the filter kept no rows in any class; nothing to write"));
    }
    let generated = EmbeddingDataset::concat(&parts)?;
    save(&generated, &a.out)?;
    if let Some(path) = &a.report {
        let mut doc = Document::new();
        let mut run = Section::new("run");
        run.set("seed", seed)
            .set("model_seed", file.seed)
            .set("generations", a.generations)
            .set("multiplier", a.multiplier)
            .set("threshold", a.threshold)
            .set("filter", a.filter)
            .set("rows", generated.len());
        doc.push(run);
        for s in class_sections {
            doc.push(s);
        }
        doc.push(ledger_section(&ledger));
        write_text(path, &doc.render())?;
    }
    Ok(0)
}

fn cmd_filter(a: FilterArgs, seed: u64) -> CmdResult {
    let budget = match (a.non_private, a.epsilon) {
        (true, _) => PrivacyBudget::non_private(),
        (false, Some(e)) => PrivacyBudget::new(e, 0.0)?,
        (false, None) => return Err(Failure::usage("--epsilon is required unless --non-private is given")),
    };
    let generated = load(&a.generated, !a.no_labels)?;
    let original = load(&a.original, !a.no_labels)?;
    let backend = Backend::default();
    let streams = Streams::new(seed);
    let mut ledger = BudgetLedger::new(budget);

    let (gen_parts, orig_parts) = if a.no_labels || generated.labels().is_none() || original.labels().is_none() {
        if !a.no_labels {
            return Err(Failure::usage("both inputs need labels; pass --no-labels to filter them as one class"));
        }
        ledger.sequential(STAGES[3], budget);
        (vec![(0, generated)], vec![(0, original)])
    } else {
        (split_by_label(&generated)?, classes_of(&original)?)
    };
    let labelled = !a.no_labels;
    let mut pairs = Vec::with_capacity(gen_parts.len());
    for (label, part) in gen_parts {
        let Some((_, orig)) = orig_parts.iter().find(|(l, _)| *l == label) else {
            return Err(Failure::usage(format!("--original has no rows of class {label}")));
        };
        pairs.push((label, part, orig));
    }
    let outcomes = backend.map_range(pairs.len(), |i| {
        let (label, part, orig) = &pairs[i];
        dp_filter_embeddings_with(
            backend,
            part,
            orig,
            a.threshold,
            &budget,
            &mut streams.scope(&format!("class-{label}")).rng(STAGES[3]),
        )
        .map_err(|e| e.context(&format!("class {label}")))
    });
    let mut kept_parts = Vec::new();
    for ((label, part, _), outcome) in pairs.iter().zip(outcomes) {
        let out = outcome?;
        if labelled {
            ledger.record(format!("class {label}/{}", STAGES[3]), budget, class_partition(STAGES[3]));
        }
        println!("class {label}: {} in, {} kept", part.len(), out.kept.len());
        if out.warning() {
            eprintln!("warning: class {label}: the filter kept no rows");
        }
        kept_parts.extend(out.survivors);
    }
    print_audit(&ledger)?;
    if kept_parts.is_empty() {
        return Err(Failure::usage("the filter kept no rows; nothing to write"));
    }
    save(&EmbeddingDataset::concat(&kept_parts)?, &a.out)?;
    Ok(0)
}

fn cmd_train(a: TrainArgs, seed: u64) -> CmdResult {
    let cfg = a.mlp.config()?;
    let train = load(&a.train, true)?;
    let training = train_mlp(&train, &cfg, &mut stream(seed, "mlp"))?;
    let first = training.epoch_losses.first().copied().unwrap_or(f64::NAN);
    let last = training.epoch_losses.last().copied().unwrap_or(f64::NAN);
    println!("epochs {}: loss {first:.6} -> {last:.6}", training.epoch_losses.len());
    println!("training accuracy {:.6}", evaluate(&training.model, &train)?);
    let mut bytes = Vec::new();
    training.model.write(&mut bytes)?;
    fs::write(&a.out, bytes).map_err(|e| with_path(e.into(), &a.out))?;
    print_no_release();
    Ok(0)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let bytes = fs::read(&a.model).map_err(|e| with_path(e.into(), &a.model))?;
    let model = MlpModel::read(bytes.as_slice()).map_err(|e| with_path(e, &a.model))?;
    let test = load(&a.test, true)?;
    let line = format!("accuracy = {}\nrows = {}\n", evaluate(&model, &test)?, test.len());
    print!("{line}");
    if let Some(path) = &a.out {
        write_text(path, &line)?;
    }
    print_no_release();
    Ok(0)
}

fn cmd_bench(a: BenchArgs, seed: u64) -> CmdResult {
    if a.seeds == 0 {
        return Err(Failure::usage("--seeds must be at least 1"));
    }
    let mut planted = PlantedGmmSpec::reference();
    planted.n_per_class = a.n_per_class;
    let mut kmeans = KMeansConfig::new(planted.k, a.kmeans_clip);
    kmeans.lloyd_iterations = a.lloyd_iterations;
    let estimator = EstimatorConfig {
        mean_clip_radius: Some(a.mean_clip),
        ..EstimatorConfig::default()
    };
    let mut template = PipelineConfig::new(PrivacyBudget::non_private(), kmeans, estimator, a.generations);
    template.filter_enabled = a.filter;
    let grid = SweepGrid {
        ks: a.ks.clone(),
        clips: a.clips.clone(),
        epsilons: a.epsilons.clone(),
        seeds: (0..a.seeds).map(|i| seed.wrapping_add(i)).collect(),
        delta: a.delta,
        planted,
        template,
        utility: a.utility.then(|| {
            let mut eval = UtilityEval {
                test_per_class: a.test_per_class,
                ..UtilityEval::default()
            };
            eval.mlp.batch_size = a.mlp_batch_size;
            eval
        }),
    };
    for &e in &grid.epsilons {
        if !e.is_infinite() {
            PrivacyBudget::new(e, grid.delta)?;
        }
    }
    let defaults = Thresholds::for_sigma(grid.planted.sigma);
    let limits = Thresholds {
        weight_l1: a.max_weight_l1.unwrap_or(defaults.weight_l1),
        mean_l2_max: a.max_mean_l2.unwrap_or(defaults.mean_l2_max),
        cov_rel_max: a.max_cov_rel.unwrap_or(defaults.cov_rel_max),
        purity: a.min_purity.unwrap_or(defaults.purity),
        accuracy_gap: a.max_accuracy_gap.unwrap_or(defaults.accuracy_gap),
        accuracy_min: a.min_accuracy.unwrap_or(defaults.accuracy_min),
    };

    let rows = bench::sweep(&grid, Backend::default())?;
    let mut table = Vec::new();
    bench::write_tsv(&rows, &mut table)?;
    fs::write(&a.out, &table).map_err(|e| with_path(e.into(), &a.out))?;

    let summary = bench::summarize(&rows, grid.planted.k, &limits);
    let text = summary.render();
    print!("{text}");
    if let Some(path) = &a.summary {
        write_text(path, &text)?;
    }

    let audit_failures: Vec<&str> = rows
        .iter()
        .filter_map(|r| match &r.outcome {
            RowOutcome::Failed(msg) if msg.starts_with("privacy audit failed") => Some(msg.as_str()),
            _ => None,
        })
        .collect();
    let failed = rows.iter().filter(|r| matches!(r.outcome, RowOutcome::Failed(_))).count();
    println!(
        "privacy ledger: each of {} cells audited its own run; {} audit failure(s), {} other failure(s)",
        rows.len(),
        audit_failures.len(),
        failed - audit_failures.len()
    );
    if let Some(msg) = audit_failures.first() {
        return Err(Failure { code: EXIT_AUDIT, msg: msg.to_string() });
    }
    std::io::stdout().flush().map_err(|e| Failure::from(Error::from(e)))?;
    Ok(if summary.passed() { 0 } else { EXIT_ACCEPTANCE })
}

fn cmd_plant(a: PlantArgs, seed: u64) -> CmdResult {
    let weights = match a.weights {
        Some(w) => w,
        None if a.k == 3 => vec![0.5, 0.3, 0.2],
        None => vec![1.0 / a.k.max(1) as f64; a.k],
    };
    let spec = PlantedGmmSpec {
        k: a.k,
        d: a.d,
        n_per_class: a.n_per_class,
        classes: a.classes,
        weights,
        placement: match a.placement {
            PlacementArg::Simplex => MeanPlacement::Simplex,
            PlacementArg::Ball => MeanPlacement::RandomBall { radius: a.radius },
        },
        separation: a.separation.unwrap_or(30.0 * a.sigma * (a.d as f64).sqrt()),
        sigma: a.sigma,
        seed,
    };
    spec.validate()?;
    let planted = bench::plant_gmm(&spec, &mut stream(seed, "planted-samples"))?;
    for (c, p) in planted.classes.iter().enumerate() {
        println!("class {c}: component counts {:?}", p.counts);
        if p.flagged {
            eprintln!("warning: class {c}: a component count lies outside its concentration window");
        }
    }
    save(&planted.dataset()?, &a.out)?;
    if let Some(path) = &a.truth {
        let file = ModelFile {
            seed,
            shares: [1.0; 5],
            models: planted.classes.iter().enumerate().map(|(c, p)| (c as u32, p.truth.clone())).collect(),
            ledger: BudgetLedger::new(PrivacyBudget::non_private()),
        };
        file.save(path).map_err(|e| with_path(e, path))?;
    }
    print_no_release();
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use seqrec::decode::DEFAULT_MAX_EXPANSIONS;
use seqrec::domain::{validate_dataset, Dataset, Model, PoiTable, Query, Variant};
use seqrec::eval::{
    evaluate_loqo, summarize, tune_c, write_report_csv, EvalConfig, Method, PoiRankMethod, PopularityMethod,
    RandomMethod, StructuredMethod, DEFAULT_C_GRID,
};
use seqrec::ingest::{load_corpus, IngestConfig};
use seqrec::learn::{model_chain_scores, predict_topk, train_poirank, train_structured, Formulation, PredictConfig, TrainConfig};
use seqrec::pathopt::{top_k_paths, IlpModel, PathCut, DEFAULT_ILP_THRESHOLD};
use seqrec::Error;

mod manifest;

use manifest::{manifest_path, write_atomic, ManifestBuilder};

const EXIT_OTHER: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_TRAIN: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "seqrec", version, about = "Trajectory recommendation with structured SVMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a dataset archive from visit and POI CSV files.
    Ingest(IngestArgs),
    /// Train a model on a dataset archive.
    Train(TrainArgs),
    /// Print the top-k paths of a trained model for one query.
    Predict(PredictArgs),
    /// Leave-one-query-out evaluation of one or more methods.
    Evaluate(EvaluateArgs),
    /// Write the path integer program of a query in LP format, one file per cut round.
    ExportIlp(ExportArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    pois: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Sp,
    Sr,
    Sppath,
    Srpath,
    Poirank,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Sp => Variant::Sp,
            VariantArg::Sr => Variant::Sr,
            VariantArg::Sppath => Variant::SpPath,
            VariantArg::Srpath => Variant::SrPath,
            VariantArg::Poirank => Variant::PoiRank,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Pick C by Monte Carlo cross validation instead of using `--c`.
    #[arg(long)]
    tune: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    tol: f64,
    #[arg(long)]
    one_slack: bool,
    #[arg(long, default_value_t = DEFAULT_ILP_THRESHOLD)]
    threshold_ilp: usize,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Source id of the start POI.
    #[arg(long)]
    start: i64,
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_ILP_THRESHOLD)]
    threshold_ilp: usize,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    query: QueryArgs,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    query: QueryArgs,
    /// Directory receiving `round_<r>.lp`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Random,
    Popularity,
    Poirank,
    Sp,
    Sr,
    Sppath,
    Srpath,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [
        MethodArg::Random, MethodArg::Popularity, MethodArg::Poirank,
        MethodArg::Sp, MethodArg::Sr, MethodArg::Sppath, MethodArg::Srpath,
    ])]
    methods: Vec<MethodArg>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 3, 5, 10])]
    k: Vec<usize>,
    /// Fixed C; disables tuning.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_C_GRID)]
    c_grid: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = DEFAULT_ILP_THRESHOLD)]
    threshold_ilp: usize,
    /// Directory receiving `report.csv` and `summary.json`.
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

type CmdResult = Result<(), Failure>;

fn classify(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::UnknownPoi { .. } | Error::Json(_) => EXIT_PARSE,
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        _ => EXIT_OTHER,
    }
}

fn fail(e: Error) -> Failure {
    Failure { code: classify(&e), message: e.to_string() }
}

fn train_fail(e: Error) -> Failure {
    Failure { code: EXIT_TRAIN, message: format!("training failed: {e}") }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_OTHER, message: format!("{}: {e}", path.display()) }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| io_fail(path, e))
}

fn load_dataset(path: &Path, manifest: &mut ManifestBuilder) -> Result<Dataset, Failure> {
    let bytes = read(path)?;
    manifest.input(path, &bytes);
    let text = String::from_utf8(bytes).map_err(|e| Failure { code: EXIT_PARSE, message: e.to_string() })?;
    let ds = Dataset::from_json(&text).map_err(fail)?;
    let violations = validate_dataset(&ds);
    if let Some(v) = violations.first() {
        return Err(Failure {
            code: EXIT_PARSE,
            message: format!("{}: {} invalid entries, first: {:?} {}", path.display(), violations.len(), v.kind, v.detail),
        });
    }
    Ok(ds)
}

fn load_model(path: &Path, manifest: &mut ManifestBuilder) -> Result<Model, Failure> {
    let bytes = read(path)?;
    manifest.input(path, &bytes);
    let text = String::from_utf8(bytes).map_err(|e| Failure { code: EXIT_PARSE, message: e.to_string() })?;
    Model::from_json(&text).map_err(fail)
}

fn write_output(path: &Path, bytes: &[u8], manifest: &mut ManifestBuilder) -> CmdResult {
    write_atomic(path, bytes).map_err(|e| io_fail(path, e))?;
    manifest.output(path);
    Ok(())
}

fn resolve_query(table: &PoiTable, start: i64, length: usize) -> Result<Query, Failure> {
    let start = table
        .lookup_source(start)
        .ok_or_else(|| Failure { code: EXIT_OTHER, message: format!("unknown start POI {start}") })?;
    if length == 0 {
        return Err(Failure { code: EXIT_OTHER, message: "length must be at least 1".into() });
    }
    Ok(Query::new(start, length))
}

fn format_path(y: &seqrec::Trajectory, table: &PoiTable) -> String {
    y.pois().iter().map(|&p| table.pois[p].source_id.to_string()).collect::<Vec<_>>().join(",")
}

fn cmd_ingest(args: &IngestArgs) -> CmdResult {
    let config = IngestConfig { n_clusters: args.clusters, n_bins: args.bins, rng_seed: args.seed };
    let mut manifest = ManifestBuilder::new("ingest", json!(config), Some(args.seed));
    manifest.input(&args.trajectories, &read(&args.trajectories)?);
    manifest.input(&args.pois, &read(&args.pois)?);
    let corpus = load_corpus(&args.trajectories, &args.pois, &config).map_err(fail)?;
    for w in &corpus.warnings {
        log::warn!("{w}");
    }
    let ds = &corpus.dataset;
    if let Some(v) = validate_dataset(ds).first() {
        return Err(Failure { code: EXIT_PARSE, message: format!("ingested dataset is invalid: {:?} {}", v.kind, v.detail) });
    }
    let text = ds.to_json().map_err(fail)?;
    write_output(&args.out, text.as_bytes(), &mut manifest)?;
    manifest.write(&manifest_path(&args.out)).map_err(|e| io_fail(&args.out, e))?;

    let gt = |pred: &dyn Fn(usize) -> bool| ds.examples.iter().filter(|e| pred(e.n_truths())).count();
    let lengths = ds.examples.iter().flat_map(|e| e.trajectories.iter().map(|t| t.len()));
    let short = lengths.clone().filter(|&l| l < 5).count();
    println!("traj={} pois={} queries={}", corpus.n_trajectories, ds.pois.len(), ds.examples.len());
    println!("users={} duplicates_dropped={}", corpus.n_users, corpus.duplicates_dropped);
    println!("gt1={} gt2_5={} gt6plus={}", gt(&|n| n == 1), gt(&|n| (2..=5).contains(&n)), gt(&|n| n > 5));
    println!("short={} long={}", short, lengths.count() - short);
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> CmdResult {
    let variant = Variant::from(args.variant);
    let mut manifest = ManifestBuilder::new(
        "train",
        json!({
            "variant": variant, "c": args.c, "tune": args.tune, "max_epochs": args.max_epochs,
            "tol": args.tol, "one_slack": args.one_slack, "threshold_ilp": args.threshold_ilp,
        }),
        Some(args.seed),
    );
    let ds = load_dataset(&args.dataset, &mut manifest)?.trainable();
    let mut config = TrainConfig::new(variant, args.c);
    config.max_epochs = args.max_epochs;
    config.tol = args.tol;
    config.ilp_threshold = args.threshold_ilp;
    if args.one_slack {
        config.formulation = Formulation::OneSlack;
    }
    let predict = PredictConfig { ilp_threshold: args.threshold_ilp, max_expansions: DEFAULT_MAX_EXPANSIONS };
    if args.tune {
        let eval = EvalConfig { seed: args.seed, ..EvalConfig::default() };
        let method: Box<dyn Method> = if variant == Variant::PoiRank {
            Box::new(PoiRankMethod { predict })
        } else {
            Box::new(StructuredMethod { config: config.clone(), predict })
        };
        config.reg_c = tune_c(method.as_ref(), &ds, &eval).map_err(train_fail)?;
        log::info!("tuned C = {}", config.reg_c);
    }
    let (model, diagnostics) = if variant == Variant::PoiRank {
        (train_poirank(&ds, config.reg_c).map_err(train_fail)?, Vec::new())
    } else {
        let out = train_structured(&ds, &config).map_err(train_fail)?;
        if !out.converged {
            log::info!("stopped after {} epochs without reaching tol {}", out.epochs.len(), config.tol);
        }
        (out.model, out.epochs)
    };
    let text = model.to_json().map_err(fail)?;
    write_output(&args.out, text.as_bytes(), &mut manifest)?;
    let mut lines = String::new();
    for e in &diagnostics {
        let _ = writeln!(lines, "{}", serde_json::to_string(e).expect("stats serialise"));
    }
    let mut diag_name = args.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    diag_name.push(".diagnostics.jsonl");
    let diag_path = args.out.with_file_name(diag_name);
    write_output(&diag_path, lines.as_bytes(), &mut manifest)?;
    manifest.write(&manifest_path(&args.out)).map_err(|e| io_fail(&args.out, e))?;
    println!("variant={} c={} epochs={}", variant, config.reg_c, diagnostics.len());
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> CmdResult {
    let q = &args.query;
    let mut manifest = ManifestBuilder::new("predict", json!({}), None);
    let ds = load_dataset(&q.dataset, &mut manifest)?;
    let model = load_model(&q.model, &mut manifest)?;
    let query = resolve_query(&ds.pois, q.start, q.length)?;
    let config = PredictConfig { ilp_threshold: q.threshold_ilp, max_expansions: DEFAULT_MAX_EXPANSIONS };
    let out = predict_topk(&model, &query, q.k, &ds.pois, &config).map_err(fail)?;
    for (rank, (y, score)) in out.items.iter().enumerate() {
        println!("{}\t{score:.6}\t{}", rank + 1, format_path(y, &ds.pois));
    }
    if !out.complete {
        log::warn!("only {} paths available", out.items.len());
    }
    Ok(())
}

fn cmd_export_ilp(args: &ExportArgs) -> CmdResult {
    let q = &args.query;
    let mut manifest = ManifestBuilder::new("export-ilp", json!({ "k": q.k }), None);
    let ds = load_dataset(&q.dataset, &mut manifest)?;
    let model = load_model(&q.model, &mut manifest)?;
    let query = resolve_query(&ds.pois, q.start, q.length)?;
    let scores = model_chain_scores(&model, &query, &ds.pois).map_err(fail)?;
    let rounds = q.k.max(1);
    let paths = top_k_paths(&scores, rounds.saturating_sub(1), q.threshold_ilp, DEFAULT_MAX_EXPANSIONS).map_err(fail)?;
    let mut cuts = Vec::new();
    for round in 1..=rounds {
        let ilp = IlpModel::build(&scores, &cuts, None).map_err(fail)?;
        let path = args.out.join(format!("round_{round}.lp"));
        write_output(&path, ilp.to_lp().as_bytes(), &mut manifest)?;
        println!("{}", path.display());
        match paths.items.get(round - 1) {
            Some((y, _)) => cuts.push(PathCut { forbidden: y.clone() }),
            None if round < rounds => {
                log::warn!("no path left after round {round}");
                break;
            }
            None => {}
        }
    }
    manifest
        .write(&args.out.join("manifest.json"))
        .map_err(|e| io_fail(&args.out, e))
}

fn build_method(arg: MethodArg, args: &EvaluateArgs) -> Box<dyn Method> {
    let predict = PredictConfig { ilp_threshold: args.threshold_ilp, max_expansions: DEFAULT_MAX_EXPANSIONS };
    let structured = |variant| {
        let mut config = TrainConfig::new(variant, args.c.unwrap_or(1.0));
        config.max_epochs = args.max_epochs;
        config.ilp_threshold = args.threshold_ilp;
        Box::new(StructuredMethod { config, predict }) as Box<dyn Method>
    };
    match arg {
        MethodArg::Random => Box::new(RandomMethod { seed: args.seed }),
        MethodArg::Popularity => Box::new(PopularityMethod { predict }),
        MethodArg::Poirank => Box::new(PoiRankMethod { predict }),
        MethodArg::Sp => structured(Variant::Sp),
        MethodArg::Sr => structured(Variant::Sr),
        MethodArg::Sppath => structured(Variant::SpPath),
        MethodArg::Srpath => structured(Variant::SrPath),
    }
}

fn cmd_evaluate(args: &EvaluateArgs) -> CmdResult {
    let c_grid = args.c.map_or_else(|| args.c_grid.clone(), |c| vec![c]);
    let config = EvalConfig { k_list: args.k.clone(), c_grid, train_frac: 0.8, repeats: args.repeats, seed: args.seed };
    let mut manifest = ManifestBuilder::new(
        "evaluate",
        json!({
            "methods": args.methods.iter().map(|m| format!("{m:?}").to_lowercase()).collect::<Vec<_>>(),
            "eval": config, "max_epochs": args.max_epochs, "threshold_ilp": args.threshold_ilp,
        }),
        Some(args.seed),
    );
    let ds = load_dataset(&args.dataset, &mut manifest)?;
    let mut reports = Vec::new();
    for &m in &args.methods {
        let method = build_method(m, args);
        log::info!("evaluating {}", method.name());
        reports.extend(evaluate_loqo(&ds, method.as_ref(), &config).map_err(fail)?);
    }
    let mut csv = Vec::new();
    write_report_csv(&reports, &mut csv).map_err(fail)?;
    write_output(&args.out.join("report.csv"), &csv, &mut manifest)?;
    let summary = serde_json::to_string_pretty(&summarize(&reports)).expect("summary serialises");
    write_output(&args.out.join("summary.json"), summary.as_bytes(), &mut manifest)?;
    manifest
        .write(&args.out.join("manifest.json"))
        .map_err(|e| io_fail(&args.out, e))?;
    println!("{:<12} {:>3} {:>16} {:>16} {:>16}", "method", "k", "f1_points", "f1_pairs", "tau_b");
    for r in &reports {
        let cell = |m: f64, s: f64| format!("{m:.3} ± {s:.3}");
        println!(
            "{:<12} {:>3} {:>16} {:>16} {:>16}",
            r.method,
            r.k,
            cell(r.mean.f1_points, r.stderr.f1_points),
            cell(r.mean.f1_pairs, r.stderr.f1_pairs),
            cell(r.mean.tau_b, r.stderr.tau_b)
        );
    }
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("SEQREC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::ExportIlp(a) => cmd_export_ilp(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

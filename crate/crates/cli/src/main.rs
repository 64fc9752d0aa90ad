//! Command-line pipelines wiring the estimation library end to end:
//! synthetic data generation, matrix/tensor estimation, value-of-data
//! reports, evaluation sweeps, the payment-protocol simulator, and the ad
//! filter.
//!
//! Every run is deterministic under `--seed` and echoes its resolved
//! configuration to `run.json` in the output directory. Exit codes:
//! 0 success, 2 usage error, 3 I/O error, 4 data validation error,
//! 5 numerical failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Serialize;

use clickworth::adfilter;
use clickworth::evalx;
use clickworth::ingest::{self, ClickRecord, ColumnSchema, IngestError, ObservationMatrix};
use clickworth::market::{self, Contract, SessionState};
use clickworth::matest::{self, Algorithm, AlsConfig, EstimateMatrix};
use clickworth::synth::{self, SamplingConfig};
use clickworth::tensor;
use clickworth::vod::{self, VodReport};

// ----------------------------------------------------------------- errors

#[derive(Debug)]
enum CliError {
    Usage(String),
    Io(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
            CliError::Numeric(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(_) | IngestError::Csv(_) => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<clickworth::synth::SynthError> for CliError {
    fn from(e: clickworth::synth::SynthError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<clickworth::matest::MatestError> for CliError {
    fn from(e: clickworth::matest::MatestError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<clickworth::evalx::EvalError> for CliError {
    fn from(e: clickworth::evalx::EvalError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<clickworth::vod::VodError> for CliError {
    fn from(e: clickworth::vod::VodError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<clickworth::tensor::TensorError> for CliError {
    fn from(e: clickworth::tensor::TensorError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<market::MarketError> for CliError {
    fn from(e: market::MarketError) -> Self {
        match e {
            market::MarketError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<adfilter::AdfilterError> for CliError {
    fn from(e: adfilter::AdfilterError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

// ------------------------------------------------------------------ flags

#[derive(Parser)]
#[command(name = "clickworth", version, about = "Click-rate estimation and data-valuation pipelines")]
struct Cli {
    /// Global seed; all randomness derives from it by named streams.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory for all artifacts.
    #[arg(long, short = 'o', global = true, env = "CLICKWORTH_OUT", default_value = ".")]
    out_dir: PathBuf,

    /// Worker cap; pipelines are sequential today, so this only bounds
    /// future parallel stages and is echoed to run.json.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Increase log verbosity on stderr (-v, -vv).
    #[arg(short = 'v', long = "verbose", global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum AlgoFlag {
    Svt,
    Als,
    SvtAls,
}

impl From<AlgoFlag> for Algorithm {
    fn from(a: AlgoFlag) -> Algorithm {
        match a {
            AlgoFlag::Svt => Algorithm::Svt,
            AlgoFlag::Als => Algorithm::Als,
            AlgoFlag::SvtAls => Algorithm::SvtAls,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum VaryFlag {
    Fill,
    DataPoints,
    Holdout,
}

impl From<VaryFlag> for evalx::SweepVariable {
    fn from(v: VaryFlag) -> evalx::SweepVariable {
        match v {
            VaryFlag::Fill => evalx::SweepVariable::FillFraction,
            VaryFlag::DataPoints => evalx::SweepVariable::DataPoints,
            VaryFlag::Holdout => evalx::SweepVariable::HoldoutFraction,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic click log with a ground-truth sidecar.
    Synth(SynthArgs),
    /// Estimate the rate matrix from a click log and score it.
    Estimate(EstimateArgs),
    /// Per-category value-of-data report from a click log.
    Vod(VodArgs),
    /// Sweep fill / data volume / holdout and score each algorithm.
    Sweep(SweepArgs),
    /// Intent-aware tensor estimation: flattened vs per-slice.
    Tensor(TensorArgs),
    /// Simulate page loads against advertiser contracts.
    Market(MarketArgs),
    /// Classify one link URL with the two-level ad filter.
    Filter(FilterArgs),
}

#[derive(Parser, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 31)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    /// Probability each (user, category) cell is observed at all.
    #[arg(long, default_value_t = 0.4)]
    rho: f64,
    /// Exposures drawn for each observed cell.
    #[arg(long, default_value_t = 200)]
    exposures: u64,
    /// Fraction of user rows replaced by high-rate bots.
    #[arg(long, default_value_t = 0.0)]
    bot_fraction: f64,
    /// Number of intent slices; omit for a plain matrix log.
    #[arg(long)]
    intents: Option<usize>,
}

#[derive(Parser, Serialize)]
struct EstimateArgs {
    /// Click-log CSV (user_group, ad_category, intent, clicked).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "als")]
    algo: AlgoFlag,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    /// Optional bot-filter click-rate threshold applied before estimation.
    #[arg(long)]
    tau: Option<f64>,
    /// Held-out share of observed cells for out-of-sample scoring.
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
}

#[derive(Parser, Serialize)]
struct VodArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "als")]
    algo: AlgoFlag,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Parser, Serialize)]
struct SweepArgs {
    #[arg(long)]
    input: PathBuf,
    /// Which variable the grid ranges over.
    #[arg(long, value_enum)]
    vary: VaryFlag,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["svt", "als"])]
    algos: Vec<AlgoFlag>,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
}

#[derive(Parser, Serialize)]
struct TensorArgs {
    /// Click-log CSV with a populated intent column.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
}

#[derive(Parser, Serialize)]
struct MarketArgs {
    /// Contract JSON: one object or an array of objects.
    #[arg(long)]
    contracts: PathBuf,
    /// Per-pair value-of-data CSV from the `vod` subcommand.
    #[arg(long)]
    vod_pairs: PathBuf,
    #[arg(long, default_value_t = 50)]
    pages: u64,
    /// Which user row the simulated session belongs to.
    #[arg(long, default_value_t = 0)]
    user_row: usize,
}

#[derive(Parser, Serialize)]
struct FilterArgs {
    /// Filter-rule list (EasyList-style subset).
    #[arg(long)]
    rules: PathBuf,
    /// Comma-separated manual keywords.
    #[arg(long, value_delimiter = ',', default_values_t = Vec::<String>::new())]
    keywords: Vec<String>,
    #[arg(long)]
    url: String,
    #[arg(long)]
    page_host: String,
}

// ------------------------------------------------------------------- main

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn log(cli: &Cli, level: u8, msg: &str) {
    if cli.verbose >= level {
        eprintln!("{msg}");
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(cli, args),
        Command::Estimate(args) => cmd_estimate(cli, args),
        Command::Vod(args) => cmd_vod(cli, args),
        Command::Sweep(args) => cmd_sweep(cli, args),
        Command::Tensor(args) => cmd_tensor(cli, args),
        Command::Market(args) => cmd_market(cli, args),
        Command::Filter(args) => cmd_filter(cli, args),
    }
}

// ------------------------------------------------------------- plumbing

#[derive(Serialize)]
struct RunJson<'a> {
    subcommand: &'a str,
    seed: u64,
    threads: usize,
    args: serde_json::Value,
}

/// Echoes the fully resolved configuration; deliberately excludes the
/// output directory so reruns into different directories stay
/// byte-identical.
fn write_run_json(cli: &Cli, subcommand: &str, args: impl Serialize) -> Result<(), CliError> {
    fs::create_dir_all(&cli.out_dir)?;
    let run = RunJson {
        subcommand,
        seed: cli.seed,
        threads: cli.threads,
        args: serde_json::to_value(args)?,
    };
    let mut text = serde_json::to_string_pretty(&run)?;
    text.push('\n');
    fs::write(cli.out_dir.join("run.json"), text)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn load_matrix(input: &Path, tau: Option<f64>) -> Result<(ObservationMatrix, f64), CliError> {
    let log = ingest::read_click_log(input, &ColumnSchema::default())?;
    let x = ingest::aggregate(&log.records)?;
    match tau {
        Some(t) => Ok(ingest::threshold_filter(&x, t)?),
        None => Ok((x, 1.0)),
    }
}

fn run_algo(
    x: &ObservationMatrix,
    algo: AlgoFlag,
    rank: usize,
    lambda: f64,
    seed: u64,
) -> Result<EstimateMatrix, CliError> {
    let cfg = AlsConfig { rank, lambda, seed, ..Default::default() };
    Ok(match algo {
        AlgoFlag::Svt => matest::svt(x, rank)?,
        AlgoFlag::Als => matest::als(x, &cfg)?,
        AlgoFlag::SvtAls => matest::svt_then_als(x, &cfg)?,
    })
}

fn write_keyed_matrix(
    path: &Path,
    row_keys: &[String],
    col_keys: &[String],
    get: impl Fn(usize, usize) -> f64,
) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["user_group".to_string()];
    header.extend(col_keys.iter().cloned());
    wtr.write_record(&header)?;
    for (i, key) in row_keys.iter().enumerate() {
        let mut row = vec![key.clone()];
        row.extend((0..col_keys.len()).map(|j| format!("{}", get(i, j))));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

// ----------------------------------------------------------------- synth

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<(), CliError> {
    let model = synth::generate_model(args.m, args.n, args.rank, args.intents, cli.seed)?;
    let mut scfg = SamplingConfig::new(args.rho, args.exposures, cli.seed);
    scfg.bot_fraction = args.bot_fraction;

    fs::create_dir_all(&cli.out_dir)?;
    let clicks_path = cli.out_dir.join("clicks.csv");
    let (bot_rows, bot_rates) = if let Some(_k) = args.intents {
        let sample = synth::sample_intent_tensor(&model, &scfg)?;
        let records = expand_tensor_records(&sample.tensor);
        let file = fs::File::create(&clicks_path)?;
        ingest::write_click_log(file, &records)?;
        write_tensor_truth(&cli.out_dir.join("truth_means.csv"), &model)?;
        (sample.bot_rows, sample.bot_rates)
    } else {
        let sample = synth::sample_observations(&model, &scfg)?;
        let records = sample.matrix.to_records();
        let file = fs::File::create(&clicks_path)?;
        ingest::write_click_log(file, &records)?;
        let means = model.mean_matrix();
        write_keyed_matrix(
            &cli.out_dir.join("truth_means.csv"),
            &(0..args.m).map(synth::user_key).collect::<Vec<_>>(),
            &(0..args.n).map(synth::category_key).collect::<Vec<_>>(),
            |i, j| means[[i, j]],
        )?;
        (sample.bot_rows, sample.bot_rates)
    };

    let mut wtr = csv::Writer::from_path(cli.out_dir.join("truth_bots.csv"))?;
    wtr.write_record(["user_group", "is_bot", "bot_rate"])?;
    for i in 0..args.m {
        wtr.write_record([
            synth::user_key(i),
            if bot_rows[i] { "1".into() } else { "0".into() },
            bot_rates[i].map(|r| format!("{r}")).unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(|e| CliError::Io(e.to_string()))?;

    log(cli, 1, &format!("wrote {}", clicks_path.display()));
    write_run_json(cli, "synth", args)
}

/// Expands an aggregated tensor back into one record per exposure so the
/// output is a plain click log.
fn expand_tensor_records(w: &clickworth::ingest::IntentTensor) -> Vec<ClickRecord> {
    let (m, n, k) = w.dims();
    let mut records = Vec::new();
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                let total = w.count(i, j, l);
                let clicks = w.clicks(i, j, l);
                for e in 0..total {
                    records.push(ClickRecord {
                        user_group: w.row_keys[i].clone(),
                        ad_category: w.col_keys[j].clone(),
                        intent: Some(w.intent_keys[l].clone()),
                        clicked: e < clicks,
                    });
                }
            }
        }
    }
    records
}

fn write_tensor_truth(path: &Path, model: &clickworth::synth::LatentModel) -> Result<(), CliError> {
    let means = model.mean_tensor()?;
    let (m, n, k) = means.dim();
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["user_group", "ad_category", "intent", "mean"])?;
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                wtr.write_record([
                    synth::user_key(i),
                    synth::category_key(j),
                    synth::intent_key(l),
                    format!("{}", means[[i, j, l]]),
                ])?;
            }
        }
    }
    wtr.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

// -------------------------------------------------------------- estimate

#[derive(Serialize)]
struct EstimateMetrics {
    algorithm: String,
    rank: usize,
    lambda: f64,
    tau: Option<f64>,
    retention: f64,
    holdout: f64,
    r2_in: f64,
    r2_out: f64,
}

fn cmd_estimate(cli: &Cli, args: &EstimateArgs) -> Result<(), CliError> {
    let (x, retention) = load_matrix(&args.input, args.tau)?;
    let parts = evalx::split(&x, args.holdout, cli.seed)?;
    let est = run_algo(&parts.train, args.algo, args.rank, args.lambda, cli.seed)?;

    let in_pairs: Vec<(f64, f64)> = parts
        .train
        .observed_cells()
        .iter()
        .map(|&(i, j)| (parts.train.value(i, j).unwrap(), est.get(i, j)))
        .collect();
    let out_pairs: Vec<(f64, f64)> = parts
        .test_cells
        .iter()
        .map(|&(i, j, actual)| (actual, evalx::predict(&est, &parts.train, i, j)))
        .collect();
    let metrics = EstimateMetrics {
        algorithm: Algorithm::from(args.algo).to_string(),
        rank: args.rank,
        lambda: args.lambda,
        tau: args.tau,
        retention,
        holdout: args.holdout,
        r2_in: evalx::r_squared(&in_pairs)?,
        r2_out: evalx::r_squared(&out_pairs)?,
    };

    fs::create_dir_all(&cli.out_dir)?;
    est.write_csv(fs::File::create(cli.out_dir.join("estimate.csv"))?)?;
    let lambda = match args.algo {
        AlgoFlag::Svt => None,
        _ => Some(args.lambda),
    };
    est.write_sidecar(fs::File::create(cli.out_dir.join("estimate_meta.json"))?, lambda)?;
    write_json(&cli.out_dir.join("metrics.json"), &metrics)?;
    log(cli, 1, &format!("r2_out = {}", metrics.r2_out));
    write_run_json(cli, "estimate", args)
}

// ------------------------------------------------------------------- vod

fn cmd_vod(cli: &Cli, args: &VodArgs) -> Result<(), CliError> {
    let (x, _) = load_matrix(&args.input, args.tau)?;
    let est = run_algo(&x, args.algo, args.rank, args.lambda, cli.seed)?;
    let report = vod::vod(&est, &x)?;
    let quantiles = vod::column_quantiles(&est);

    fs::create_dir_all(&cli.out_dir)?;
    vod::write_report_csv(
        fs::File::create(cli.out_dir.join("vod.csv"))?,
        x.col_keys(),
        &report,
        &quantiles,
    )?;
    write_keyed_matrix(
        &cli.out_dir.join("vod_pairs.csv"),
        x.row_keys(),
        x.col_keys(),
        |i, j| report.per_pair[[i, j]],
    )?;
    write_run_json(cli, "vod", args)
}

// ----------------------------------------------------------------- sweep

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<(), CliError> {
    let (x, _) = load_matrix(&args.input, None)?;
    let algorithms: Vec<Algorithm> = args.algos.iter().map(|&a| a.into()).collect();
    let cfg = AlsConfig { rank: args.rank, lambda: args.lambda, ..Default::default() };
    let result = evalx::run_sweep(&x, &algorithms, args.vary.into(), &args.grid, &cfg, cli.seed)?;

    fs::create_dir_all(&cli.out_dir)?;
    // primary output: scores only, so reruns are byte-identical
    let mut wtr = csv::Writer::from_path(cli.out_dir.join("sweep.csv"))?;
    wtr.write_record(["algorithm", "sweep_variable", "sweep_value", "r2_in", "r2_out"])?;
    for row in &result.rows {
        wtr.write_record([
            row.algorithm.to_string(),
            row.sweep.to_string(),
            format!("{}", row.sweep_value),
            format!("{}", row.r2_in),
            format!("{}", row.r2_out),
        ])?;
    }
    wtr.flush().map_err(|e| CliError::Io(e.to_string()))?;
    // informational timings, not covered by the determinism guarantee
    result.write_csv(fs::File::create(cli.out_dir.join("sweep_timings.csv"))?)?;
    write_run_json(cli, "sweep", args)
}

// ---------------------------------------------------------------- tensor

#[derive(Serialize)]
struct TensorMetrics {
    rank: usize,
    lambda: f64,
    holdout: f64,
    r2_out_flattened: f64,
    r2_out_per_slice: f64,
    gain: f64,
    cold_slices: Vec<usize>,
    records_without_intent: u64,
}

fn cmd_tensor(cli: &Cli, args: &TensorArgs) -> Result<(), CliError> {
    let click_log = ingest::read_click_log(&args.input, &ColumnSchema::default())?;
    let (w, skipped) = ingest::aggregate_tensor(&click_log.records)?;
    let (train, test) = tensor::split_tensor(&w, args.holdout, cli.seed)?;
    let cfg = AlsConfig { rank: args.rank, lambda: args.lambda, seed: cli.seed, ..Default::default() };
    let flat = tensor::estimate_flattened(&train, &cfg)?;
    let per_slice = tensor::estimate_per_slice(&train, &cfg)?;

    let score = |est: &tensor::TensorEstimate| -> Result<f64, CliError> {
        let pairs: Vec<(f64, f64)> = test
            .iter()
            .map(|&(i, j, l, actual)| (actual, est.get(i, j, l)))
            .collect();
        Ok(evalx::r_squared(&pairs)?)
    };
    let r2_flat = score(&flat)?;
    let r2_slice = score(&per_slice)?;
    let metrics = TensorMetrics {
        rank: args.rank,
        lambda: args.lambda,
        holdout: args.holdout,
        r2_out_flattened: r2_flat,
        r2_out_per_slice: r2_slice,
        gain: r2_flat - r2_slice,
        cold_slices: per_slice.cold_slices.clone(),
        records_without_intent: skipped,
    };

    fs::create_dir_all(&cli.out_dir)?;
    let mut wtr = csv::Writer::from_path(cli.out_dir.join("tensor_estimate.csv"))?;
    wtr.write_record(["user_group", "ad_category", "intent", "estimate"])?;
    let (m, n, k) = w.dims();
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                wtr.write_record([
                    w.row_keys[i].as_str(),
                    w.col_keys[j].as_str(),
                    w.intent_keys[l].as_str(),
                    &format!("{}", flat.get(i, j, l)),
                ])?;
            }
        }
    }
    wtr.flush().map_err(|e| CliError::Io(e.to_string()))?;
    write_json(&cli.out_dir.join("tensor_metrics.json"), &metrics)?;
    log(cli, 1, &format!("flattened gain = {}", metrics.gain));
    write_run_json(cli, "tensor", args)
}

// ---------------------------------------------------------------- market

fn read_contracts(path: &Path) -> Result<Vec<Contract>, CliError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let objects = match value {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    objects
        .into_iter()
        .map(|o| Ok(Contract::from_json(&serde_json::to_string(&o)?)?))
        .collect()
}

fn read_vod_pairs(path: &Path) -> Result<(Array2<f64>, Vec<String>), CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let categories: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Io(e.to_string()))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::Io(e.to_string()))?;
        let values: Result<Vec<f64>, _> =
            record.iter().skip(1).map(str::parse::<f64>).collect();
        rows.push(values.map_err(|e| CliError::Data(format!("bad vod value: {e}")))?);
    }
    if rows.is_empty() {
        return Err(CliError::Data("vod pairs file has no rows".into()));
    }
    let n = categories.len();
    let mut per_pair = Array2::<f64>::zeros((rows.len(), n));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(CliError::Data(format!("row {i} has {} values, expected {n}", row.len())));
        }
        for (j, &v) in row.iter().enumerate() {
            per_pair[[i, j]] = v;
        }
    }
    Ok((per_pair, categories))
}

fn cmd_market(cli: &Cli, args: &MarketArgs) -> Result<(), CliError> {
    let contracts = read_contracts(&args.contracts)?;
    let (per_pair, categories) = read_vod_pairs(&args.vod_pairs)?;
    let report = VodReport {
        per_category_norm: vec![None; categories.len()],
        column_means: vec![0.0; categories.len()],
        per_pair,
    };

    let mut state = SessionState::new(format!("user-row-{}", args.user_row), cli.seed);
    let mut ledger = Vec::new();
    for page in 0..args.pages {
        let (payments, event) =
            market::simulate_page_load(&mut state, &contracts, &report, &categories, args.user_row)?;
        for p in payments {
            ledger.push((page, event.token, p));
        }
    }

    fs::create_dir_all(&cli.out_dir)?;
    let mut wtr = csv::Writer::from_path(cli.out_dir.join("payments.csv"))?;
    wtr.write_record(["page", "advertiser_id", "token", "chosen_category", "paid"])?;
    for (page, token, p) in &ledger {
        wtr.write_record([
            format!("{page}"),
            p.advertiser_id.clone(),
            token.hex(),
            p.chosen_category.clone(),
            format!("{}", p.paid),
        ])?;
    }
    wtr.flush().map_err(|e| CliError::Io(e.to_string()))?;

    let mut wtr = csv::Writer::from_path(cli.out_dir.join("id_history.csv"))?;
    wtr.write_record(["page_load_seq", "token"])?;
    for &(seq, token) in state.id_history() {
        wtr.write_record([format!("{seq}"), token.hex()])?;
    }
    wtr.flush().map_err(|e| CliError::Io(e.to_string()))?;
    write_run_json(cli, "market", args)
}

// ---------------------------------------------------------------- filter

#[derive(Serialize)]
struct FilterOutput {
    is_ad: bool,
    level1: bool,
    level2_kind: Option<String>,
    level2_value: Option<String>,
    rules_parsed: usize,
    rules_skipped: BTreeMap<String, usize>,
}

fn cmd_filter(cli: &Cli, args: &FilterArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.rules)?;
    let (rules, diag) = adfilter::parse_rules(&text);
    let verdict = adfilter::classify_url(&args.page_host, &args.url, &rules, &args.keywords)?;

    let (kind, value) = match &verdict.level2 {
        Some(adfilter::Level2Match::Rule(r)) => (Some("rule".to_string()), Some(r.clone())),
        Some(adfilter::Level2Match::Keyword(k)) => (Some("keyword".to_string()), Some(k.clone())),
        None => (None, None),
    };
    let output = FilterOutput {
        is_ad: verdict.is_ad,
        level1: verdict.level1,
        level2_kind: kind,
        level2_value: value,
        rules_parsed: diag.parsed,
        rules_skipped: BTreeMap::from([
            ("comments".to_string(), diag.comments),
            ("element_hiding".to_string(), diag.element_hiding),
            ("option_suffixed".to_string(), diag.option_suffixed),
            ("regex".to_string(), diag.regex),
            ("empty".to_string(), diag.empty),
        ]),
    };

    fs::create_dir_all(&cli.out_dir)?;
    write_json(&cli.out_dir.join("verdict.json"), &output)?;
    println!("{}", serde_json::to_string(&output).map_err(|e| CliError::Io(e.to_string()))?);
    write_run_json(cli, "filter", args)
}

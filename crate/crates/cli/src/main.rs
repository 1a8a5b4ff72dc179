use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use locfair::data::{load_csv, split, synthesize, write_csv, Dataset, Standardizer, SubgroupSpec, SynthConfig};
use locfair::harness::{
    drift_eval, emit_plotdata, evaluate, fit_model, pareto_report, read_records, run_sweep, subgroup_sensitivity,
    table1_variants, CellStatus, CrossVariant, ExperimentRecord, NamedSet, PlotKind, RunReport, SweepOptions,
    SweepSpec,
};
use locfair::trainers::{parse_normalization, Algorithm, FairnessMode, TrainConfig, TrainedModel};
use locfair::RngState;

#[derive(Parser)]
#[command(name = "locfair", version, about = "Locally fair adversarial training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model, save it, and report test metrics.
    Train(TrainArgs),
    /// Train every cell of a hyperparameter grid into a JSONL file.
    Sweep(SweepArgs),
    /// Evaluate a saved model on a dataset.
    Eval(EvalArgs),
    /// Evaluate a saved model on several datasets.
    Drift(DriftArgs),
    /// Worst-1-DI of a saved model under several subgroup definitions.
    Subgroups(SubgroupsArgs),
    /// Write plot data CSV from sweep or eval records.
    Plotdata(PlotArgs),
    /// Write a synthetic dataset with planted bias.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    label: String,
    #[arg(long, default_value = "s")]
    sensitive: String,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        load_csv(&self.data, &self.label, &self.sensitive).with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Args)]
struct SubgroupArgs {
    #[arg(long, default_value = "age")]
    bin_col: String,
    #[arg(long, default_value_t = 10.0)]
    bin_width: f64,
    /// Cross every bin with this column (repeatable).
    #[arg(long)]
    cross_col: Vec<String>,
    #[arg(long, default_value_t = 30)]
    min_size: usize,
}

impl SubgroupArgs {
    fn spec(&self) -> SubgroupSpec {
        let mut spec = SubgroupSpec::new(&self.bin_col, self.bin_width, self.min_size);
        for c in &self.cross_col {
            spec = spec.cross(c);
        }
        spec
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<T>().map_err(|e| anyhow::anyhow!("'{t}': {e}")))
        .collect()
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "road")]
    algo: String,
    #[arg(long, default_value = "dp")]
    mode: String,
    #[arg(long = "lambda", default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value = "conditional")]
    norm: String,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    lr_f: f64,
    #[arg(long, default_value_t = 0.01)]
    lr_g: f64,
    #[arg(long, default_value_t = 0.01)]
    lr_r: f64,
    #[arg(long, default_value_t = 5)]
    n_g: usize,
    #[arg(long, default_value_t = 5)]
    n_r: usize,
    /// Hidden widths of the predictor, comma separated.
    #[arg(long, default_value = "64,32")]
    hidden_f: String,
    #[arg(long, default_value = "64,32,16")]
    hidden_g: String,
    #[arg(long, default_value = "64,32")]
    hidden_r: String,
}

impl ModelArgs {
    fn config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            algorithm: Algorithm::parse(&self.algo)?,
            fairness_mode: FairnessMode::parse(&self.mode)?,
            normalization_mode: parse_normalization(&self.norm)?,
            lambda_g: self.lambda,
            tau: self.tau,
            lr_f: self.lr_f,
            lr_g: self.lr_g,
            lr_r: self.lr_r,
            n_g: self.n_g,
            n_r: self.n_r,
            batch_size: self.batch,
            epochs: self.epochs,
            seed: self.seed,
            predictor_hidden: parse_list(&self.hidden_f)?,
            adversary_hidden: parse_list(&self.hidden_g)?,
            ratio_hidden: parse_list(&self.hidden_r)?,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    subgroups: SubgroupArgs,
    /// Held-out fraction for the report; 0 trains on every row.
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Append the evaluation record to this JSONL file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    subgroups: SubgroupArgs,
    /// Comma-separated λ values; default 20 values on [0, 5].
    #[arg(long)]
    lambdas: Option<String>,
    /// Comma-separated τ values; default 10 values on [0.001, 1].
    #[arg(long)]
    taus: Option<String>,
    #[arg(long, default_value = "biased,globalfair,road,broad")]
    algos: String,
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Print the Pareto table of records within this global DI budget.
    #[arg(long)]
    di_budget: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    subgroups: SubgroupArgs,
    /// Append the record to this JSONL file instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DriftArgs {
    #[arg(long)]
    model: PathBuf,
    /// Datasets to evaluate (repeatable); named by file stem.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long, default_value = "y")]
    label: String,
    #[arg(long, default_value = "s")]
    sensitive: String,
    #[command(flatten)]
    subgroups: SubgroupArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SubgroupsArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "age")]
    bin_col: String,
    #[arg(long, default_value = "5,10,15,20")]
    widths: String,
    /// Binary column whose values give the restricted variants.
    #[arg(long)]
    cross_col: Option<String>,
    #[arg(long, default_value_t = 30)]
    min_size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// JSONL records from `sweep`, `train --report` or `eval --out`.
    #[arg(long)]
    records: PathBuf,
    /// local_di_bars, r_histogram, pareto_xy or tau_curve.
    #[arg(long)]
    kind: String,
    /// Use only the record with this cell id.
    #[arg(long)]
    cell: Option<String>,
    #[arg(long)]
    di_budget: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    regions: usize,
    #[arg(long, default_value_t = 0.0)]
    base_bias: f64,
    /// Comma-separated extra bias per region.
    #[arg(long)]
    region_bias: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Writes one line to stdout; a closed pipe ends the program quietly.
fn print_line(line: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}").and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        other => Ok(other?),
    }
}

fn append_jsonl<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    writeln!(f, "{}", serde_json::to_string(value)?)?;
    Ok(())
}

fn record(cell_id: &str, model: &TrainedModel, report: RunReport, spec: &SubgroupSpec, seconds: f64) -> ExperimentRecord {
    ExperimentRecord {
        cell_id: cell_id.to_string(),
        base_seed: model.config.seed,
        status: CellStatus::Ok,
        error: None,
        wall_time_s: seconds,
        preprocessing: model
            .standardizer
            .clone()
            .unwrap_or_else(|| Standardizer::identity(&model.feature_names)),
        subgroup_spec: spec.clone(),
        report: Some(report),
    }
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let data = args.data.load()?;
    let cfg = args.model.config()?;
    let (train, test) = if args.test_fraction > 0.0 {
        let parts = split(&data, args.test_fraction, &mut RngState::new(cfg.seed))?;
        for w in &parts.warnings {
            log::warn!("{w}");
        }
        (parts.train, Some(parts.test))
    } else {
        (data, None)
    };
    let start = Instant::now();
    let model = fit_model(&train, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    model.save(&args.out)?;
    log::info!("model written to {}", args.out.display());
    if let Some(test) = test {
        let spec = args.subgroups.spec();
        let report = evaluate(&model, &test, &spec)?;
        let rec = record(cfg.algorithm.name(), &model, report, &spec, seconds);
        match &args.report {
            Some(p) => append_jsonl(p, &rec)?,
            None => print_line(&serde_json::to_string(&rec)?)?,
        }
    }
    Ok(())
}

fn sweep_cmd(args: &SweepArgs) -> Result<bool> {
    let data = args.data.load()?;
    let base = args.model.config()?;
    let algorithms = args
        .algos
        .split(',')
        .map(|a| Algorithm::parse(a.trim()))
        .collect::<locfair::Result<Vec<_>>>()?;
    let mut spec = SweepSpec::with_default_grids(algorithms, parse_list(&args.seeds)?, base.clone());
    if let Some(l) = &args.lambdas {
        spec.lambdas = parse_list(l)?;
    }
    if let Some(t) = &args.taus {
        spec.taus = parse_list(t)?;
    }
    let parts = split(&data, args.test_fraction, &mut RngState::new(base.seed))?;
    let cells = spec.cells()?.len();
    eprintln!("sweep: {cells} cells");
    let outcome = run_sweep(
        &spec,
        &parts.train,
        &parts.test,
        &args.subgroups.spec(),
        &SweepOptions {
            threads: args.threads,
            out: Some(args.out.clone()),
        },
    )?;
    eprintln!(
        "sweep: {} run, {} skipped as complete, {} failed",
        outcome.records.len(),
        outcome.skipped,
        outcome.failed
    );
    if let Some(budget) = args.di_budget {
        let records = read_records(&args.out)?;
        let table = pareto_report(&records, budget, "worst_1_di", "accuracy")?;
        print_line(&serde_json::to_string_pretty(&table)?)?;
    }
    Ok(outcome.failed == 0)
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)?;
    let data = args.data.load()?;
    let spec = args.subgroups.spec();
    let start = Instant::now();
    let report = evaluate(&model, &data, &spec)?;
    let rec = record("eval", &model, report, &spec, start.elapsed().as_secs_f64());
    match &args.out {
        Some(p) => append_jsonl(p, &rec),
        None => print_line(&serde_json::to_string(&rec)?),
    }
}

fn drift_cmd(args: &DriftArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)?;
    let spec = args.subgroups.spec();
    let sets = args
        .data
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let data = load_csv(p, &args.label, &args.sensitive).with_context(|| format!("loading {}", p.display()))?;
            Ok(NamedSet {
                name,
                data,
                subgroups: spec.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for (name, report) in drift_eval(&model, &sets)? {
        let rec = record(&name, &model, report, &spec, 0.0);
        match &args.out {
            Some(p) => append_jsonl(p, &rec)?,
            None => print_line(&serde_json::to_string(&rec)?)?,
        }
    }
    Ok(())
}

fn subgroups_cmd(args: &SubgroupsArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)?;
    let data = args.data.load()?;
    let widths: Vec<f64> = parse_list(&args.widths)?;
    let variants = match &args.cross_col {
        Some(c) => table1_variants(c),
        None => vec![CrossVariant::All],
    };
    let rows = subgroup_sensitivity(&model, &data, &args.bin_col, &widths, &variants, args.min_size)?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(["definition", "bin_width", "variant", "n_subgroups", "worst_1_di", "note"])?;
    for r in rows {
        w.write_record([
            r.definition.to_string(),
            r.bin_width.to_string(),
            r.variant,
            r.n_subgroups.to_string(),
            r.worst_1_di.map(|v| v.to_string()).unwrap_or_default(),
            r.note.unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn plot_cmd(args: &PlotArgs) -> Result<()> {
    let kind = PlotKind::parse(&args.kind)?;
    let mut records = read_records(&args.records)?;
    if let Some(cell) = &args.cell {
        records.retain(|r| &r.cell_id == cell);
        if records.is_empty() {
            bail!("no record with cell id '{cell}'");
        }
    }
    let rows = emit_plotdata(kind, &records, args.di_budget, &args.out)?;
    eprintln!("{rows} rows written to {}", args.out.display());
    Ok(())
}

fn synth_cmd(args: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::new(args.n, args.seed);
    cfg.n_subregions = args.regions;
    cfg.base_bias = args.base_bias;
    cfg.drift_shift = args.drift;
    if let Some(b) = &args.region_bias {
        cfg.per_region_bias = parse_list(b)?;
    }
    let data = synthesize(&cfg)?;
    write_csv(&data, &args.out)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Eval(a) => eval_cmd(a).map(|_| true),
        Command::Drift(a) => drift_cmd(a).map(|_| true),
        Command::Subgroups(a) => subgroups_cmd(a).map(|_| true),
        Command::Plotdata(a) => plot_cmd(a).map(|_| true),
        Command::Synth(a) => synth_cmd(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some sweep cells failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

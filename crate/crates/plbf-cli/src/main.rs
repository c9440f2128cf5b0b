//! Benchmark CLI for the partitioned learned Bloom filter.
//!
//! Subcommands: `synth` generates a Zipfian score file, `build` solves and
//! serializes a filter, `query` probes one, `sweep` produces space/FPR
//! comparison rows, `regions-sweep` tracks space saved against the region
//! count.
//!
//! Exit codes: 0 success, 1 negative query answer, 2 usage or validation
//! error, 3 I/O error.

use clap::{Args, Parser, Subcommand};
use plbf::bench::{
    build_filter, run_regions_sweep, run_sweep, write_regions_csv, write_regions_json,
    BaselineKind, SweepConfig,
};
use plbf::bloom::VariantConstant;
use plbf::error::Error;
use plbf::filter::PlbfFilter;
use plbf::optimizer::kl_divergence;
use plbf::score::{
    read_score_column, read_score_csv, write_score_csv, Dataset, Label, ScoreHistogram,
    ZipfConfig,
};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "plbf",
    about = "Partitioned learned Bloom filter benchmark harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Zipfian score CSV.
    Synth(SynthArgs),
    /// Solve a partition plan, build the filter and serialize it.
    Build(BuildArgs),
    /// Query a serialized filter with one scored element.
    Query(QueryArgs),
    /// Space/FPR sweep over methods and target rates.
    Sweep(SweepArgs),
    /// Space saved as the region count grows.
    RegionsSweep(RegionsSweepArgs),
}

/// Flags shared by every data-processing subcommand.
#[derive(Args)]
struct CommonArgs {
    /// Master seed; all randomness derives from it.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Score-space discretization N.
    #[arg(long, default_value_t = 1000)]
    segments: usize,
    /// Region count k.
    #[arg(long, default_value_t = 5)]
    regions: usize,
    /// Space-accounting constant of the backup-filter family
    /// (1.0 = idealized optimal, 1.442695 = standard).
    #[arg(long, default_value_t = 1.0)]
    variant_c: f64,
    /// Learned-model size carried into the space-saved figures.
    #[arg(long, default_value_t = 0.0)]
    model_size_bits: f64,
}

#[derive(Args)]
struct ScoreInput {
    /// Combined score file (CSV: id,score,label).
    #[arg(long, conflicts_with_all = ["key_scores", "nonkey_scores"])]
    scores: Option<PathBuf>,
    /// Single-column key score file (pairs with --nonkey-scores).
    #[arg(long, requires = "nonkey_scores")]
    key_scores: Option<PathBuf>,
    /// Single-column non-key score file (pairs with --key-scores).
    #[arg(long, requires = "key_scores")]
    nonkey_scores: Option<PathBuf>,
}

impl ScoreInput {
    fn load(&self) -> Result<Dataset, Error> {
        match (&self.scores, &self.key_scores, &self.nonkey_scores) {
            (Some(path), _, _) => read_score_csv(path),
            (None, Some(keys), Some(nonkeys)) => Ok(Dataset {
                keys: read_score_column(keys, Label::Key)?,
                nonkeys: read_score_column(nonkeys, Label::NonKey)?,
            }),
            _ => Err(Error::InvalidParameter(
                "provide --scores or both --key-scores and --nonkey-scores".into(),
            )),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Zipfian skew; larger values simulate a sharper model.
    #[arg(long, default_value_t = 1.5)]
    skew: f64,
    #[arg(long, default_value_t = 100_000)]
    keys: usize,
    #[arg(long, default_value_t = 100_000)]
    nonkeys: usize,
    /// Output score CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    input: ScoreInput,
    /// Overall false positive budget F.
    #[arg(long)]
    target_fpr: f64,
    /// Fraction of non-keys used to estimate the histogram.
    #[arg(long, default_value_t = 0.4)]
    estimation_fraction: f64,
    /// Output path of the serialized filter.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    /// Serialized filter path.
    #[arg(long)]
    filter: PathBuf,
    /// Element to probe (raw bytes of the string).
    #[arg(long)]
    element: String,
    /// The element's model score.
    #[arg(long)]
    score: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    input: ScoreInput,
    /// Target rates to sweep.
    #[arg(long, value_delimiter = ',',
          default_value = "0.05,0.02,0.01,0.005,0.002,0.001,0.0005")]
    target_fprs: Vec<f64>,
    /// Methods: plbf, sandwich_2region, standard_bf, optimal_bf_accounting.
    #[arg(long, value_delimiter = ',',
          default_value = "plbf,sandwich_2region,standard_bf,optimal_bf_accounting")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 0.4)]
    estimation_fraction: f64,
    /// Resample the held-out stream with replacement to this many queries.
    #[arg(long)]
    queries: Option<usize>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["csv", "json"], default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct RegionsSweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    input: ScoreInput,
    #[arg(long)]
    target_fpr: f64,
    /// Ascending region counts to evaluate (a 25-region reference row is
    /// always included).
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,8,10,15,20,25")]
    k_list: Vec<usize>,
    #[arg(long, default_value_t = 0.4)]
    estimation_fraction: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["csv", "json"], default_value = "csv")]
    format: String,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Build(args) => build(args),
        Command::Query(args) => query(args),
        Command::Sweep(args) => sweep(args),
        Command::RegionsSweep(args) => regions_sweep(args),
    }
}

fn sweep_config(common: &CommonArgs, estimation_fraction: f64) -> Result<SweepConfig, Error> {
    Ok(SweepConfig {
        regions: common.regions,
        n_segments: common.segments,
        seed: common.seed,
        c: VariantConstant::new(common.variant_c)?,
        model_size_bits: common.model_size_bits,
        estimation_fraction,
        ..SweepConfig::default()
    })
}

fn synth(args: SynthArgs) -> Result<ExitCode, Error> {
    let config = ZipfConfig {
        skew: args.skew,
        n_keys: args.keys,
        n_nonkeys: args.nonkeys,
        seed: args.common.seed,
    };
    let (keys, nonkeys) = plbf::score::zipf_scores(&config, args.common.segments)?;
    let file = std::fs::File::create(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let rows = write_score_csv(file, &keys, &nonkeys)?;

    let hist = ScoreHistogram::from_samples(&keys, &nonkeys, args.common.segments)?;
    let finest: Vec<u32> = (0..=args.common.segments as u32).collect();
    let divergence = kl_divergence(&hist, &finest)?;
    println!(
        "wrote {} rows ({} keys, {} non-keys) to {}",
        rows,
        keys.len(),
        nonkeys.len(),
        args.out.display()
    );
    println!("empirical divergence at k=N: {divergence:.4} bits");
    Ok(ExitCode::SUCCESS)
}

fn build(args: BuildArgs) -> Result<ExitCode, Error> {
    let dataset = args.input.load()?;
    let cfg = sweep_config(&args.common, args.estimation_fraction)?;
    let (filter, summary) = build_filter(&dataset.keys, &dataset.nonkeys, &cfg, args.target_fpr)?;
    filter.write_to(&args.out)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, &summary)
        .map_err(|e| Error::InvalidParameter(format!("json encode: {e}")))?;
    out.write_all(b"\n").map_err(|e| Error::io("<stdout>", e))?;
    Ok(ExitCode::SUCCESS)
}

fn query(args: QueryArgs) -> Result<ExitCode, Error> {
    let filter = PlbfFilter::read_from(&args.filter)?;
    if filter.query(args.element.as_bytes(), args.score)? {
        println!("positive");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("negative");
        Ok(ExitCode::from(1))
    }
}

fn sweep(args: SweepArgs) -> Result<ExitCode, Error> {
    let dataset = args.input.load()?;
    let mut cfg = sweep_config(&args.common, args.estimation_fraction)?;
    cfg.target_fprs = args.target_fprs;
    cfg.queries = args.queries;
    cfg.methods = args
        .methods
        .iter()
        .map(|m| m.parse::<BaselineKind>())
        .collect::<Result<_, _>>()?;
    let report = run_sweep(&dataset.keys, &dataset.nonkeys, &cfg)?;
    with_output(args.out.as_deref(), |w| match args.format.as_str() {
        "json" => report.write_json(w),
        _ => report.write_csv(w),
    })?;
    Ok(ExitCode::SUCCESS)
}

fn regions_sweep(args: RegionsSweepArgs) -> Result<ExitCode, Error> {
    let dataset = args.input.load()?;
    let mut cfg = sweep_config(&args.common, args.estimation_fraction)?;
    cfg.target_fprs = vec![args.target_fpr];
    let rows = run_regions_sweep(&dataset.keys, &dataset.nonkeys, &args.k_list, &cfg)?;
    with_output(args.out.as_deref(), |w| match args.format.as_str() {
        "json" => write_regions_json(&rows, w),
        _ => write_regions_csv(&rows, w),
    })?;
    Ok(ExitCode::SUCCESS)
}

fn with_output<F>(path: Option<&std::path::Path>, write: F) -> Result<(), Error>
where
    F: FnOnce(Box<dyn Write>) -> Result<(), Error>,
{
    match path {
        Some(p) => {
            let file =
                std::fs::File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            write(Box::new(file))
        }
        None => write(Box::new(std::io::stdout().lock())),
    }
}

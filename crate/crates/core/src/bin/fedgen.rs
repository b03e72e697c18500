use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedgen::datagen::EmpiricalPool;
use fedgen::error::Error;
use fedgen::experiment::{
    emit_csv, emit_json, emit_svg_plot, parse_config, read_samples_csv, run_sweep_in, run_verify, CsvLayout, ExperimentSpec,
};

const EXIT_VERIFY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "fedgen", version, about = "Generalization error and bounds of federated local SGD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measured generalization error and the bound for every R.
    Sweep(RunArgs),
    /// Bound columns only.
    Bound(RunArgs),
    /// Measured generalization columns only.
    Gen(RunArgs),
    /// Exact-enumeration identity and inequality checks.
    Verify {
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_aggregation: f64,
    },
    /// Validate a CSV dataset and summarise it.
    IngestCsv { file: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    svg: Option<String>,
    #[arg(long)]
    json: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo replicates.
    #[arg(long)]
    m: Option<usize>,
    /// Sum every sample of the second bound term.
    #[arg(long)]
    full_term2: bool,
    /// Record wall-clock seconds and a timestamp.
    #[arg(long)]
    timing: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Validation { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_spec(args: &RunArgs, gen: bool, bound: bool) -> Result<ExperimentSpec, Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    let mut spec = parse_config(&text).map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    spec.gen &= gen;
    spec.bound &= bound;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(m) = args.m {
        spec.m = m;
    }
    spec.full_term2 |= args.full_term2;
    spec.timing |= args.timing;
    for (slot, flag) in [(&mut spec.out, &args.out), (&mut spec.svg, &args.svg), (&mut spec.json, &args.json)] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(spec)
}

fn write(path: &str, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{path}: {e}")))
}

fn run(args: &RunArgs, gen: bool, bound: bool) -> Result<(), Failure> {
    let spec = load_spec(args, gen, bound)?;
    let base = args.config.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let table = run_sweep_in(&spec, Some(base))?;
    let csv = emit_csv(&table);
    match &spec.out {
        Some(path) => write(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &spec.json {
        write(path, &emit_json(&table))?;
    }
    if let Some(path) = &spec.svg {
        write(path, &emit_svg_plot(&table)?)?;
    }
    Ok(())
}

fn ingest(file: &Path) -> Result<(), Failure> {
    let (rows, layout) = read_samples_csv(file).map_err(|e| Failure::Config(format!("{}: {e}", file.display())))?;
    let count = rows.len();
    let pool = EmpiricalPool::new(rows)?;
    let kind = match layout {
        CsvLayout::Regression { .. } => "regression",
        CsvLayout::Location { .. } => "location",
    };
    println!("layout = {kind}");
    println!("d = {}", layout.dim());
    println!("loss = {}", layout.family().id());
    println!("rows = {count}");
    println!("train = {}", pool.train().len());
    println!("holdout = {}", pool.holdout().len());
    Ok(())
}

fn threads_from_env() -> Result<(), Failure> {
    let Ok(value) = std::env::var("FEDGEN_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::Config(format!("FEDGEN_THREADS: expected a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = threads_from_env().and_then(|()| match &cli.command {
        Command::Sweep(a) => run(a, true, true).map(|()| 0),
        Command::Bound(a) => run(a, false, true).map(|()| 0),
        Command::Gen(a) => run(a, true, false).map(|()| 0),
        Command::IngestCsv { file } => ingest(file).map(|()| 0),
        Command::Verify { perturb_aggregation } => {
            let report = run_verify(*perturb_aggregation)?;
            print!("{}", report.text);
            Ok(if report.passed() { 0 } else { EXIT_VERIFY })
        }
    });
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(msg)) => {
            eprintln!("fedgen: configuration error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("fedgen: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

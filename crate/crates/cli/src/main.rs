use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ldadam::accounting::{
    builtin_model, memory_bytes, memory_report, optimizer_state_tokens, ModelSpec, OptimizerKind,
};
use ldadam::experiment::{compare, run_experiment, ExperimentConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_MONITOR: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ldadam",
    version,
    about = "Low-dimensional Adam experiments and tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run several configs on the same problem under several seeds.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        config: Vec<PathBuf>,
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Also write per-seed final losses as CSV.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Optimizer-state memory of a model.
    Memory {
        /// Built-in model name (roberta-base, llama-130m, llama-350m, llama2-7b).
        #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
        model: Option<String>,
        /// Model spec file (TOML) instead of a built-in model.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        optimizer: Option<MemoryOptimizer>,
        #[arg(long, default_value_t = 8)]
        rank: u64,
        /// Bytes per stored number.
        #[arg(long, default_value_t = 2)]
        bytes: u64,
    },
    /// Run the built-in self-test suite.
    Check,
    /// Write a config's synthetic problem data as CSV.
    DumpData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MemoryOptimizer {
    Adam,
    Ldadam,
    Galore,
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn run(config: PathBuf, seed: Option<u64>) -> ExitCode {
    let config = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let config = match seed {
        Some(s) => config.with_seed(s),
        None => config,
    };
    let (outcome, summary) = match run_experiment(&config) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    print!("{summary}");
    if outcome.divergence.is_some() {
        ExitCode::from(EXIT_DIVERGED)
    } else if !outcome.monitors_passed() {
        ExitCode::from(EXIT_MONITOR)
    } else {
        ExitCode::SUCCESS
    }
}

fn run_compare(paths: Vec<PathBuf>, seeds: Vec<u64>, output: Option<PathBuf>) -> ExitCode {
    let mut configs = Vec::with_capacity(paths.len());
    for p in &paths {
        match ExperimentConfig::load(p) {
            Ok(c) => configs.push(c),
            Err(e) => return fail(EXIT_USAGE, e),
        }
    }
    let comparison = match compare(&configs, &seeds) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    print!("{}", comparison.table());
    if let Some(path) = output {
        let written = fs::File::create(&path)
            .map_err(|e| e.to_string())
            .and_then(|f| comparison.write_csv(f).map_err(|e| e.to_string()));
        if let Err(e) = written {
            return fail(EXIT_USAGE, format!("{}: {e}", path.display()));
        }
    }
    if comparison.rows.iter().any(|r| r.diverged > 0) {
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    }
}

fn memory(
    model: Option<String>,
    spec: Option<PathBuf>,
    optimizer: Option<MemoryOptimizer>,
    rank: u64,
    bytes: u64,
) -> ExitCode {
    let loaded: Result<ModelSpec, String> = match (model, spec) {
        (_, Some(path)) => ModelSpec::load(&path).map_err(|e| e.to_string()),
        (Some(name), None) => builtin_model(&name).map_err(|e| e.to_string()),
        (None, None) => Err("either --model or --spec is required".into()),
    };
    let model = match loaded {
        Ok(m) => m,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let kind = match optimizer {
        None => {
            return match memory_report(&model, rank, bytes) {
                Ok(report) => {
                    print!("{report}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_USAGE, e),
            };
        }
        Some(MemoryOptimizer::Adam) => OptimizerKind::Adam,
        Some(MemoryOptimizer::Ldadam) => OptimizerKind::LdAdam { rank },
        Some(MemoryOptimizer::Galore) => OptimizerKind::GaLore { rank },
    };
    match optimizer_state_tokens(&model, kind) {
        Ok(tokens) => {
            println!("{:.2} GB", memory_bytes(tokens, bytes).gb);
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_USAGE, e),
    }
}

fn check() -> ExitCode {
    let results = ldadam::checks::run_all();
    let mut failed = 0;
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "ok  " } else { "FAIL" },
            r.name,
            r.detail
        );
        failed += usize::from(!r.passed);
    }
    println!(
        "{} of {} checks passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn dump_data(config: PathBuf, output: PathBuf) -> ExitCode {
    let config = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let problem = match config.problem.build(config.experiment.seed) {
        Ok(p) => p,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let written = fs::File::create(&output).and_then(|mut f| {
        problem.dump_data(&mut f)?;
        f.flush()
    });
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(EXIT_USAGE, format!("{}: {e}", output.display())),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run { config, seed } => run(config, seed),
        Command::Compare {
            config,
            seeds,
            output,
        } => run_compare(config, seeds, output),
        Command::Memory {
            model,
            spec,
            optimizer,
            rank,
            bytes,
        } => memory(model, spec, optimizer, rank, bytes),
        Command::Check => check(),
        Command::DumpData { config, output } => dump_data(config, output),
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use signbench::catalog::DesignGroup;
use signbench::config::ExperimentConfig;
use signbench::pipeline::{Pipeline, PipelineError, TrainScope};

/// Number of worker threads; never changes results.
const WORKERS_ENV: &str = "SIGNBENCH_WORKERS";

#[derive(Parser)]
#[command(name = "signbench", version, about = "Corrupted traffic-sign benchmark and cross-design evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML). Without it the full-scale defaults apply.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Restrict to one run.
    #[arg(long, global = true)]
    run: Option<u32>,
    /// Restrict to one design or design group (ATc, ATn, DE, CUR, ALL).
    #[arg(long, global = true)]
    design: Option<DesignGroup>,
    /// Which level scope to train.
    #[arg(long, global = true, value_enum)]
    scope: Option<ScopeArg>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    PerLevel,
    All,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Render the corrupted datasets.
    Generate,
    /// Train checkpoints.
    Train,
    /// Score every evaluation pair per run.
    Evaluate,
    /// Average relevance heatmaps per class.
    Explain,
    /// Aggregate runs into tables and a summary.
    Report,
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let design_ok = matches!(cli.command, Command::Generate | Command::Train);
    if cli.design.is_some() && !design_ok {
        return Err(PipelineError::Usage("--design applies to generate and train".into()));
    }
    if cli.scope.is_some() && !matches!(cli.command, Command::Train) {
        return Err(PipelineError::Usage("--scope applies to train".into()));
    }
    let pipeline = Pipeline::open(config)?;
    println!("output directory: {}", pipeline.dir.display());
    match cli.command {
        Command::Generate => {
            for m in pipeline.generate(cli.run, cli.design, cli.force)? {
                println!("run {} {}: {}", m.run, m.design, m.balance());
            }
        }
        Command::Train => {
            let scope = cli.scope.map(|s| match s {
                ScopeArg::PerLevel => TrainScope::PerLevel,
                ScopeArg::All => TrainScope::All,
            });
            for (path, digest) in pipeline.train(cli.run, cli.design, scope, cli.force)? {
                println!("{digest}  {}", path.display());
            }
        }
        Command::Evaluate => {
            for (r, table) in pipeline.evaluate(cli.run)?.iter().enumerate() {
                println!("run {r}: {} cells", table.cells.len());
            }
        }
        Command::Explain => {
            let written = pipeline.explain(cli.run)?;
            println!("{} heatmaps written", written.len());
        }
        Command::Report => {
            let report = pipeline.report()?;
            print!("{}", report.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("thread pool configured once");
            }
            _ => {
                eprintln!("error: {WORKERS_ENV} must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

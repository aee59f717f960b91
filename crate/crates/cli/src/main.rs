use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::Overrides;

#[derive(Parser, Debug)]
#[command(name = "megan", version, about = "Train self-explaining graph models and mine global concepts")]
struct Cli {
    /// Cap on worker threads for every parallel stage.
    #[arg(long, global = true, value_parser = positive)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn positive(text: &str) -> Result<usize, String> {
    match text.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Task {
    Ba2motifs,
    Rbmotifs,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML run configuration; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark dataset.
    GenData {
        task: Task,
        #[arg(long, value_parser = positive)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Cluster channel projections into a concept catalog.
    Mine {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evolve a prototype graph for every catalog concept.
    Prototype {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Render the concept report (JSON, HTML and drawings).
    Report {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// metrics.json from a train run, embedded in the report.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Explain one graph against a catalog and print the result as JSON.
    Query {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        graph: PathBuf,
    },
}

impl ConfigArgs {
    fn overrides(&self, epochs: Option<usize>) -> Overrides {
        Overrides { seed: self.seed, epochs }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let workers = cli.workers;
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::GenData { task, count, seed, out } => commands::gen_data(matches!(task, Task::Rbmotifs), count, seed, &out),
        Command::Train {
            dataset,
            out_dir,
            epochs,
            config,
        } => commands::train(&dataset, config.config.as_deref(), &config.overrides(epochs), &out_dir),
        Command::Mine {
            checkpoint,
            dataset,
            out_dir,
            config,
        } => commands::mine(&checkpoint, &dataset, config.config.as_deref(), &config.overrides(None), &out_dir),
        Command::Prototype {
            catalog,
            checkpoint,
            dataset,
            out_dir,
            config,
        } => commands::prototype(&catalog, &checkpoint, &dataset, config.config.as_deref(), &config.overrides(None), &out_dir),
        Command::Report {
            catalog,
            dataset,
            out_dir,
            metrics,
            config,
        } => commands::report(
            &catalog,
            &dataset,
            metrics.as_deref(),
            config.config.as_deref(),
            &config.overrides(None),
            workers,
            &out_dir,
        ),
        Command::Query { checkpoint, catalog, graph } => commands::query(&checkpoint, &catalog, &graph),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", commands::category(&e), commands::one_line(&e));
            ExitCode::FAILURE
        }
    }
}

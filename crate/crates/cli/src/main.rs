use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dip_cli::alloc::TrackingAlloc;
use dip_cli::commands::{self, Overrides, Run};
use dip_cli::config::BenchConfig;
use dip_cli::CliError;

#[global_allocator]
static ALLOC: TrackingAlloc = TrackingAlloc;

#[derive(Parser)]
#[command(name = "dip", version, about = "Dual-pathway multimodal graph experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic graph and its split as a bundle.
    Gen(Common),
    /// Train and checkpoint the best validation epoch.
    Train(Common),
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate the six ablation variants, one report each.
        #[arg(long)]
        ablate: bool,
    },
    /// Export Dirichlet energy by depth and pseudo-node heatmaps.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time forward passes against dense attention over growing graphs.
    Bench {
        /// Optional; only its `[bench]` section and `out_dir` are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Bundle directory replacing the configured data source.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel kernels.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn run(&self) -> Result<Run, CliError> {
        set_threads(self.threads)?;
        let overrides = Overrides {
            data: self.data.clone(),
            out: self.out.clone(),
            seed: self.seed,
            threads: self.threads,
        };
        Run::from_file(&self.config, &overrides)
    }
}

fn set_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(k) = threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(common) => {
            let dir = commands::gen(&common.run()?)?;
            println!("bundle written to {}", dir.display());
        }
        Command::Train(common) => {
            let run = common.run()?;
            let out = commands::train(&run)?;
            println!(
                "best epoch {} (valid {:.4}), {} epochs logged in {}",
                out.best_epoch,
                out.best_metric,
                out.log.len(),
                run.out_dir().display()
            );
        }
        Command::Eval {
            common,
            checkpoint,
            ablate,
        } => {
            let run = common.run()?;
            for report in commands::eval(&run, checkpoint.as_deref(), ablate)? {
                println!("{}", serde_json::to_string(&report).expect("report serializes"));
            }
        }
        Command::Diagnose { common, checkpoint } => {
            let run = common.run()?;
            let diag = commands::diagnose(&run, checkpoint.as_deref())?;
            for ((depth, full), (_, local)) in diag.full.iter().zip(&diag.local_only) {
                println!("depth {depth}: energy full {full:.6e} local-only {local:.6e}");
            }
        }
        Command::Bench {
            config,
            out,
            seed,
            threads,
        } => {
            let (mut bench, out_dir) = match config {
                Some(path) => {
                    let run = Run::from_file(&path, &Overrides::default())?;
                    (run.cfg.bench, run.cfg.out_dir)
                }
                None => (BenchConfig::default(), PathBuf::from("runs/bench")),
            };
            let out_dir = out.unwrap_or(out_dir);
            if let Some(seed) = seed {
                bench.seed = seed;
            }
            if let Some(k) = threads {
                bench.threads = k;
            }
            let (rows, summary) = commands::bench(&bench, &out_dir)?;
            print!("{}", dip_cli::bench::render_rows(&rows));
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = err.exit_code();
            eprintln!("error: {:#}", anyhow::Error::new(err).context("dip failed"));
            ExitCode::from(code as u8)
        }
    }
}

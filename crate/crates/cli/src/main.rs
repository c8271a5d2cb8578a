use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prunetrain::experiment::{self, CostOptions, MetricsRow, RunConfig};
use prunetrain::Error;

#[derive(Parser)]
#[command(name = "prunetrain", version, about = "Prune convolutional filters while training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configured run and write metrics.csv and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's output_dir, then runs/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Record wall-clock columns (makes metrics.csv non-reproducible).
        #[arg(long)]
        timing: bool,
        /// Do not print per-epoch progress.
        #[arg(long)]
        quiet: bool,
    },
    /// Summarize and plot finished runs.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analytic per-layer operation counts plus savings and latency projections.
    Cost {
        #[arg(long)]
        config: PathBuf,
        /// Directory for layers.csv and projections.csv; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Images per counted pass.
        #[arg(long, default_value_t = 1)]
        batch: usize,
        /// Nominal training epochs.
        #[arg(long)]
        n: Option<usize>,
        /// Retraining epochs.
        #[arg(long)]
        m: Option<usize>,
        /// Final pruned fraction; defaults to the schedule target.
        #[arg(long)]
        target_rate: Option<f64>,
        /// Mini-batches per epoch.
        #[arg(long)]
        batches: Option<f64>,
        /// Seconds per mini-batch.
        #[arg(long)]
        t_batch: Option<f64>,
        /// Seconds per L1-norm scan.
        #[arg(long)]
        t_l1norm: Option<f64>,
        /// Time the L1 scan and a batch-64 forward pass of the configured network.
        #[arg(long)]
        measure: bool,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::from_path(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn print_row(r: &MetricsRow) {
    eprintln!(
        "epoch {:>3}  loss {:.4}  train {:6.2}%  test {:6.2}%  pruned {:6.2}%  params {:>8}  macs {}",
        r.epoch, r.train_loss, r.train_acc, r.test_acc, r.pruned_pct, r.unmasked_params, r.executed_macs
    );
}

fn train(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: usize,
    timing: bool,
    quiet: bool,
) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.record_timing |= timing;
    if threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut progress = |r: &MetricsRow| {
        if !quiet {
            print_row(r);
        }
    };
    let summary = pool.install(|| experiment::run(&cfg, &out, &mut progress))?;
    let last = summary.rows.last().expect("at least one epoch");
    println!(
        "{}: {} epochs, test accuracy {:.2}%, pruned {:.2}%, outputs in {}",
        cfg.name,
        summary.rows.len(),
        last.test_acc,
        last.pruned_pct,
        summary.out_dir.display()
    );
    Ok(())
}

fn compare(runs: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let cmp = experiment::compare(runs, out)?;
    println!("run,epochs,final_test_acc,final_pruned_pct,final_unmasked_params,total_executed_macs");
    for s in &cmp.summary {
        println!(
            "{},{},{},{},{},{}",
            s.run, s.epochs, s.final_test_acc, s.final_pruned_pct, s.final_unmasked_params, s.total_executed_macs
        );
    }
    for f in &cmp.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn cost(config: &Path, out: Option<PathBuf>, opts: CostOptions) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let tables = experiment::cost_tables(&cfg, &opts).map_err(|e| match e {
        Error::InvalidArgument(msg) => Failure::Usage(msg),
        other => Failure::from(other),
    })?;
    let layers = tables.layers_csv()?;
    let projections = tables.projections_csv()?;
    match out {
        Some(dir) => {
            let write = |name: &str, text: &str| -> Result<(), Failure> {
                std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(e.to_string()))?;
                let path = dir.join(name);
                std::fs::write(&path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
                eprintln!("wrote {}", path.display());
                Ok(())
            };
            write("layers.csv", &layers)?;
            write("projections.csv", &projections)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{layers}\n{projections}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train {
            config,
            out,
            seed,
            threads,
            timing,
            quiet,
        } => train(&config, out, seed, threads, timing, quiet),
        Command::Compare { runs, out } => compare(&runs, &out),
        Command::Cost {
            config,
            out,
            batch,
            n,
            m,
            target_rate,
            batches,
            t_batch,
            t_l1norm,
            measure,
        } => cost(
            &config,
            out,
            CostOptions {
                batch,
                n,
                m,
                target_rate,
                batches_per_epoch: batches,
                t_batch,
                t_l1norm,
                measure,
            },
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

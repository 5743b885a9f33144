use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adjnorm::error::{Error, Result};
use adjnorm::experiment::{
    run_eval, run_prepare, run_report, run_sweep, run_train_eval, ExperimentConfig, SweepAxis,
    SweepOptions, SweepSpec,
};
use adjnorm::theory::{verify, TheoryParams};

#[derive(Parser, Debug)]
#[command(name = "adjnorm", version, about = "Adjacency-normalization experiments for graph recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Filter and split the dataset, write split files and print statistics.
    Prepare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train every configured seed and evaluate on the test split.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a saved checkpoint on the test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train/evaluate once per value of `r` or of the layer count.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `r` or `depth`.
        #[arg(long)]
        axis: String,
        /// Comma-separated, strictly increasing.
        #[arg(long)]
        values: String,
        /// Run cells as separate processes.
        #[arg(long)]
        parallel: bool,
    },
    /// Check convergence and ordering of the propagation limit on random graphs.
    VerifyTheory {
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        rs: Option<Vec<f64>>,
        #[arg(long)]
        tol: Option<f64>,
        /// Graphs per (size, r) cell.
        #[arg(long)]
        graphs: Option<usize>,
        #[arg(long)]
        lmax: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Regenerate `sweep.svg` from `sweep.csv`.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Prepare { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (_, stats) = run_prepare(&cfg)?;
            println!("{stats}");
        }
        Cmd::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let res = run_train_eval(&cfg)?;
            print!("{}", res.summary_csv);
            let failed = res.rows.iter().filter(|r| r.status == "failed").count();
            if failed > 0 {
                return Err(Error::Numerical(format!("{failed} metric rows belong to failed seeds")));
            }
        }
        Cmd::Eval { config, checkpoint } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = run_eval(&cfg, &checkpoint)?;
            for r in rows {
                println!("{}", r.to_csv());
            }
        }
        Cmd::Sweep { config, axis, values, parallel } => {
            let cfg = ExperimentConfig::load(&config)?;
            let spec = SweepSpec::new(axis.parse::<SweepAxis>()?, SweepSpec::parse_values(&values)?)?;
            let opts = SweepOptions {
                parallel_exe: if parallel {
                    Some(std::env::current_exe().map_err(|e| Error::Argument(e.to_string()))?)
                } else {
                    None
                },
            };
            let rows = run_sweep(&cfg, &spec, &opts)?;
            let failed = rows.iter().filter(|r| r.row.status == "failed").count();
            println!("wrote {}", cfg.output.dir.join("sweep.csv").display());
            if failed > 0 {
                return Err(Error::Numerical(format!("{failed} sweep rows failed")));
            }
        }
        Cmd::VerifyTheory { sizes, rs, tol, graphs, lmax, seed } => {
            let d = TheoryParams::default();
            let params = TheoryParams {
                sizes: sizes.unwrap_or(d.sizes),
                rs: rs.unwrap_or(d.rs),
                graphs_per_cell: graphs.unwrap_or(d.graphs_per_cell),
                tol: tol.unwrap_or(d.tol),
                l_max: lmax.unwrap_or(d.l_max),
                seed: seed.unwrap_or(d.seed),
            };
            let report = verify(&params)?;
            println!("{report}");
            if !report.passed() {
                return Err(Error::Numerical("theory checks failed".into()));
            }
        }
        Cmd::Report { dir } => {
            let out = run_report(&dir)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match adjnorm::with_thread_limit(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

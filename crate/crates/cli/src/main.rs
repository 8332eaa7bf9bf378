//! `eas`: generate workloads, train scheduling policies and evaluate them
//! against heuristics. Every command writes its results as files.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Subject;
use config::{CommonArgs, RunConfig};
use failure::{usage, Failure};

#[derive(Debug, Parser)]
#[command(name = "eas", version, about = "Energy-aware cluster scheduling lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a workload file of job arrival sequences.
    Gen {
        /// Number of sequences.
        #[arg(long, default_value_t = 150)]
        count: usize,
        /// File name inside the output directory.
        #[arg(long, default_value = "workload.jsonl")]
        file: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a policy; writes policy.deas and learning_curve.csv.
    Train {
        /// Also save a checkpoint every N iterations.
        #[arg(long, value_name = "N")]
        checkpoint_every: Option<usize>,
        /// Suppress per-iteration progress lines.
        #[arg(long)]
        quiet: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a policy or heuristic; writes metrics.csv and report.json.
    Eval {
        #[command(flatten)]
        subject: SubjectArgs,
        #[arg(long, value_name = "PATH")]
        workload: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare a subject with baselines on one or more workloads; writes
    /// comparison.csv.
    Compare {
        #[command(flatten)]
        subject: SubjectArgs,
        /// Comma-separated heuristics or `checkpoint:PATH` entries.
        #[arg(long, value_delimiter = ',', default_value = "esjf")]
        baselines: Vec<String>,
        #[arg(long = "workload", value_name = "PATH", required = true, num_args = 1..)]
        workloads: Vec<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Conserving-behaviour analysis; writes conserving.json and CDF files.
    Analyze {
        #[command(flatten)]
        subject: SubjectArgs,
        #[arg(long, value_name = "PATH")]
        workload: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct SubjectArgs {
    /// Trained policy checkpoint.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Heuristic to run instead of a policy.
    #[arg(long, value_name = "NAME")]
    subject: Option<String>,
}

impl SubjectArgs {
    fn load(&self, cfg: &RunConfig) -> Result<Subject, Failure> {
        match (&self.checkpoint, &self.subject) {
            (Some(path), _) => Subject::policy(path, &cfg.cluster),
            (None, Some(name)) => Subject::parse(name, &cfg.cluster),
            (None, None) => Err(usage("either --checkpoint or --subject is required")),
        }
    }
}

/// Loads the configuration and prints the seed the command will use.
fn resolve(common: &CommonArgs, seed: impl Fn(&RunConfig) -> u64) -> Result<RunConfig, Failure> {
    let cfg = RunConfig::resolve(common)?;
    eprintln!("seed: {}", seed(&cfg));
    Ok(cfg)
}

fn eval_seed(cfg: &RunConfig) -> u64 {
    cfg.train.seed
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Gen { count, file, common } => {
            let cfg = resolve(&common, |c| c.workload.seed)?;
            let s = commands::gen(&cfg, count, &file)?;
            println!(
                "{} sequences, {} jobs ({:.2} per sequence), {} short, {} long",
                s.sequences, s.jobs, s.mean_jobs_per_sequence, s.short_jobs, s.long_jobs
            );
        }
        Command::Train { checkpoint_every, quiet, common } => {
            let mut cfg = resolve(&common, |c| c.train.seed)?;
            eprintln!("workload seed: {}", cfg.workload.seed);
            if let Some(n) = checkpoint_every {
                cfg.train.checkpoint_every = n;
            }
            let path = commands::train(&cfg, quiet)?;
            println!("wrote {}", path.display());
        }
        Command::Eval { subject, workload, common } => {
            let cfg = resolve(&common, eval_seed)?;
            let s = commands::eval(&cfg, &subject.load(&cfg)?, &workload)?;
            match s.mean_edp {
                Some(m) => println!("{}: mean normalized EDP {m:.4} over {} sequences", s.subject, s.sequences),
                None => eprintln!("warning: {} contains no jobs; wrote empty metrics", workload.display()),
            }
        }
        Command::Compare { subject, baselines, workloads, common } => {
            let cfg = resolve(&common, eval_seed)?;
            let own = subject.load(&cfg)?;
            let baselines = baselines.iter().map(|b| Subject::parse(b, &cfg.cluster)).collect::<Result<Vec<_>, _>>()?;
            let path = commands::compare(&cfg, &own, &baselines, &workloads)?;
            println!("wrote {}", path.display());
        }
        Command::Analyze { subject, workload, common } => {
            let cfg = resolve(&common, eval_seed)?;
            let s = commands::analyze(&cfg, &subject.load(&cfg)?, &workload)?;
            println!(
                "{}: not energy-delay conserving {:.4}, not work conserving {:.4}",
                s.subject, s.conserving.frac_not_ed_conserving, s.conserving.frac_not_work_conserving
            );
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

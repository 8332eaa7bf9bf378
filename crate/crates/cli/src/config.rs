//! Run configuration: a TOML file with one section per sub-config, then
//! command-line overrides on top.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use eas_core::workload::parse_accuracy;
use eas_core::{ClusterConfig, EvalMode, TrainConfig, WorkloadConfig};
use serde::{Deserialize, Serialize};

use crate::failure::{config, Failure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from(".") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cluster: ClusterConfig,
    pub workload: WorkloadConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with [cluster], [workload], [train] and [output] sections.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed for workload generation, training and evaluation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Job arrival probability per timestep.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Probability that an arriving job is short.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Duration estimator accuracy; `inf` gives exact durations.
    #[arg(long, value_parser = parse_accuracy)]
    pub c: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seqs: Option<usize>,
    #[arg(long)]
    pub trajs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Action selection during evaluation: greedy or sampled.
    #[arg(long)]
    pub mode: Option<EvalMode>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::from(e).context(path.display()))?;
        toml::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))
    }

    /// Loads the optional config file and applies flag overrides.
    pub fn resolve(args: &CommonArgs) -> Result<Self, Failure> {
        let mut cfg = match &args.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(args);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, a: &CommonArgs) {
        if let Some(seed) = a.seed {
            self.workload.seed = seed;
            self.train.seed = seed;
        }
        set(&mut self.workload.lambda, a.lambda);
        set(&mut self.workload.beta, a.beta);
        set(&mut self.workload.c, a.c);
        set(&mut self.train.iterations, a.iters);
        set(&mut self.train.sequences, a.seqs);
        set(&mut self.train.trajectories, a.trajs);
        set(&mut self.train.lr, a.lr);
        set(&mut self.train.eval_mode, a.mode);
        set(&mut self.train.threads, a.threads);
        set(&mut self.output.dir, a.out.clone());
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.cluster.validate()?;
        self.workload.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Creates the output directory and returns the path of `name` in it.
    pub fn output_file(&self, name: &str) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.output.dir).map_err(|e| Failure::from(e).context(self.output.dir.display()))?;
        Ok(self.output.dir.join(name))
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

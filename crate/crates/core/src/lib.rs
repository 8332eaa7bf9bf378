pub mod env;
pub mod error;
pub mod heuristics;
pub mod metrics;
pub mod policy;
pub mod seed;
pub mod trainer;
pub mod workload;

pub use error::{Error, Result};

pub use env::{Action, ClusterConfig, SimState, StateImage};
pub use heuristics::{run_heuristic, HeuristicKind};
pub use metrics::{ConservingReport, JobOutcome, Report};
pub use policy::{load_checkpoint, load_checkpoint_for, save_checkpoint, Network, PolicyLayout, PolicyParams};
pub use trainer::{evaluate, train, EvalMode, LearningCurvePoint, TrainConfig, Trajectory};
pub use workload::{generate_batch, read_workload, write_workload, JobArrivalSequence, JobSpec, WorkloadConfig};

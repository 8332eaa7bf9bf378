//! REINFORCE with a per-step baseline.
//!
//! Each iteration rolls out `trajectories` episodes on each of the
//! `sequences` training sequences, subtracts from every return the mean
//! return of the same decision step across that sequence's episodes, and
//! takes one Adam ascent step on
//! `1/(S*M) * sum_s sum_m sum_t grad log pi(a_t | s_t) * (v_t - b_t)`.
//!
//! Steps at which no job can be placed offer no real choice (every action
//! acts as Hold), so the network is not consulted there and they contribute
//! no gradient terms; their rewards still count towards the returns.
//!
//! An entropy bonus, gradient-norm clipping and per-iteration sampling from
//! a larger sequence pool are available and all off by default.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Action, ClusterConfig, DecisionContext, SimState};
use crate::error::{config_err, usage_err, Error, Result};
use crate::heuristics::{run_heuristic, HeuristicKind};
use crate::metrics::{average_normalized_edp, job_outcomes, ConservingReport, JobOutcome};
use crate::policy::{
    adam_update, entropy_logit_grad, init_params, save_checkpoint, ActionDistribution, Activations, AdamConfig,
    AdamState, GradAccumulator, Network, ParamBlocks, PatternCache, PolicyLayout, PolicyParams,
};
use crate::seed::{derive_seed, rng_from};
use crate::workload::{generate_batch, JobArrivalSequence, WorkloadConfig};

const TAG_INIT: u64 = 0x1417;
const TAG_ENV: u64 = 0xE7;
const TAG_ACTIONS: u64 = 0xAC;
const TAG_POOL: u64 = 0x9001;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    Greedy,
    Sampled,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "sampled" => Ok(Self::Sampled),
            other => Err(usage_err(format!("unknown mode {other:?}, expected greedy or sampled"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Training sequences, all used every iteration.
    pub sequences: usize,
    /// Episodes per sequence per iteration.
    pub trajectories: usize,
    pub iterations: usize,
    pub gamma: f64,
    pub lr: f64,
    /// Action selection for evaluation runs.
    pub eval_mode: EvalMode,
    pub seed: u64,
    /// Worker threads for rollouts; results do not depend on it.
    pub threads: usize,
    /// Save a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Weight of the policy entropy added to the objective.
    pub entropy_bonus: f64,
    /// Rescale the gradient to at most this Euclidean norm.
    pub max_grad_norm: Option<f64>,
    /// Generate this many sequences once and draw `sequences` of them per
    /// iteration. `None` trains on the same `sequences` every iteration.
    pub pool_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sequences: 20,
            trajectories: 10,
            iterations: 300,
            gamma: 1.0,
            lr: 0.001,
            eval_mode: EvalMode::Greedy,
            seed: 0,
            threads: 1,
            checkpoint_every: 0,
            checkpoint_dir: None,
            entropy_bonus: 0.0,
            max_grad_norm: None,
            pool_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequences == 0 || self.trajectories == 0 {
            return Err(config_err("sequences and trajectories must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(config_err(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.threads == 0 {
            return Err(config_err("threads must be at least 1"));
        }
        if !(self.entropy_bonus >= 0.0 && self.entropy_bonus.is_finite()) {
            return Err(config_err(format!(
                "entropy bonus must be finite and non-negative, got {}",
                self.entropy_bonus
            )));
        }
        if self.max_grad_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(config_err("max_grad_norm must be positive"));
        }
        if self.pool_size.is_some_and(|p| p < self.sequences) {
            return Err(config_err("pool_size must be at least the number of sequences per iteration"));
        }
        Ok(())
    }
}

/// One decision step.
#[derive(Debug, Clone)]
pub struct Step {
    /// Network activations, present only where the policy had a real choice.
    pub observation: Option<Activations>,
    pub action: Action,
    pub reward: f64,
    pub valid: bool,
    pub time_advanced: bool,
    pub context: DecisionContext,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub job_outcomes: Vec<JobOutcome>,
    pub truncated: bool,
    pub total_return: f64,
    pub final_clock: u32,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Mean normalized EDP over the sequence's jobs; `None` for an empty
    /// sequence.
    pub fn mean_edp(&self) -> Option<f64> {
        average_normalized_edp(&self.job_outcomes).ok()
    }

    pub fn total_edp(&self) -> f64 {
        self.job_outcomes.iter().map(|o| o.edp).sum()
    }

    pub fn conserving(&self) -> ConservingReport {
        let mut r = ConservingReport::default();
        r.add(self.steps.iter().map(|s| (&s.context, s.time_advanced)));
        r
    }
}

/// Runs an episode to termination, asking `choose` for every action.
pub fn drive(
    seq: &JobArrivalSequence,
    cluster: &ClusterConfig,
    seed: u64,
    mut choose: impl FnMut(&SimState) -> Result<(Action, Option<Activations>)>,
) -> Result<Trajectory> {
    let mut state = SimState::reset(seq, cluster, seed)?;
    let mut steps = Vec::new();
    while !state.is_terminal() {
        let (action, observation) = choose(&state)?;
        let out = state.step(action)?;
        steps.push(Step {
            observation,
            action,
            reward: out.reward,
            valid: out.valid,
            time_advanced: out.time_advanced,
            context: out.context,
        });
    }
    let job_outcomes = job_outcomes(&state);
    Ok(Trajectory {
        total_return: steps.iter().map(|s| s.reward).sum(),
        truncated: job_outcomes.iter().any(|o| o.censored),
        final_clock: state.clock(),
        job_outcomes,
        steps,
    })
}

/// Plays the policy on one sequence. `seed` fixes both the sampled job
/// durations and, in sampled mode, the action draws.
pub fn run_episode(
    net: &Network,
    seq: &JobArrivalSequence,
    cluster: &ClusterConfig,
    seed: u64,
    mode: EvalMode,
) -> Result<Trajectory> {
    let mut cache = PatternCache::new(&net.params().layout);
    play(net, &mut cache, seq, cluster, seed, derive_seed(seed, &[TAG_ACTIONS]), mode)
}

fn play(
    net: &Network,
    cache: &mut PatternCache,
    seq: &JobArrivalSequence,
    cluster: &ClusterConfig,
    env_seed: u64,
    action_seed: u64,
    mode: EvalMode,
) -> Result<Trajectory> {
    let mut rng = rng_from(action_seed);
    let hold = cluster.hold_action();
    drive(seq, cluster, env_seed, |state| {
        if state.candidates().is_empty() {
            return Ok((hold, None));
        }
        let act = net.activations_cached(&state.render(), cache)?;
        let dist = ActionDistribution { probs: act.probs.clone() };
        let action = match mode {
            EvalMode::Greedy => dist.greedy(),
            EvalMode::Sampled => dist.sample(&mut rng),
        };
        Ok((action, Some(act)))
    })
}

/// Discounted reward-to-go for every decision step.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Mean return at each decision step over the trajectories reaching it.
pub fn compute_baselines(returns: &[Vec<f64>]) -> Vec<f64> {
    let len = returns.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let present: Vec<f64> = returns.iter().filter_map(|v| v.get(t).copied()).collect();
            present.iter().sum::<f64>() / present.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub iteration: usize,
    pub mean_return: f64,
    pub mean_norm_edp: f64,
    pub esjf_reference_edp: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub mean_return: f64,
    pub mean_norm_edp: f64,
    pub esjf_reference_edp: f64,
    pub truncated: usize,
}

/// Per-sequence rollout result.
struct SequenceBatch {
    gradient: ParamBlocks,
    returns: Vec<f64>,
    edps: Vec<f64>,
    esjf_edp: Option<f64>,
    truncated: usize,
}

fn env_seed(master: u64, iteration: usize, s: usize) -> u64 {
    derive_seed(master, &[TAG_ENV, iteration as u64, s as u64])
}

fn roll_sequence(
    net: &Network,
    seq: &JobArrivalSequence,
    cluster: &ClusterConfig,
    cfg: &TrainConfig,
    iteration: usize,
    s: usize,
) -> Result<SequenceBatch> {
    // All episodes of one sequence share sampled durations, so the baseline
    // compares decisions rather than luck.
    let env = env_seed(cfg.seed, iteration, s);
    let mut cache = PatternCache::new(&net.params().layout);
    let trajs = (0..cfg.trajectories)
        .map(|m| {
            let seed = derive_seed(env, &[TAG_ACTIONS, m as u64]);
            play(net, &mut cache, seq, cluster, env, seed, EvalMode::Sampled)
        })
        .collect::<Result<Vec<_>>>()?;
    let returns: Vec<Vec<f64>> = trajs.iter().map(|t| compute_returns(&t.rewards(), cfg.gamma)).collect();
    let baseline = compute_baselines(&returns);
    let mut acc = GradAccumulator::new(net.params().layout);
    for (traj, v) in trajs.iter().zip(&returns) {
        for ((step, &vt), &bt) in traj.steps.iter().zip(v).zip(&baseline) {
            if let Some(obs) = &step.observation {
                net.accumulate(obs, step.action, vt - bt, &mut acc);
                if cfg.entropy_bonus > 0.0 {
                    let g: Vec<f64> = entropy_logit_grad(&obs.probs).iter().map(|v| cfg.entropy_bonus * v).collect();
                    net.accumulate_logit_grad(obs, &g, &mut acc);
                }
            }
        }
    }
    let esjf = run_heuristic(HeuristicKind::Esjf, seq, cluster, env)?;
    Ok(SequenceBatch {
        gradient: net.finish(acc),
        returns: trajs.iter().map(|t| t.total_return).collect(),
        edps: trajs.iter().filter_map(Trajectory::mean_edp).collect(),
        esjf_edp: esjf.mean_edp(),
        truncated: trajs.iter().filter(|t| t.truncated).count(),
    })
}

/// Policy-gradient estimate for one iteration, before the optimizer step.
pub fn policy_gradient(
    params: &PolicyParams,
    sequences: &[JobArrivalSequence],
    cluster: &ClusterConfig,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<(ParamBlocks, IterationStats)> {
    let net = Network::new(params);
    let batches: Vec<SequenceBatch> = sequences
        .par_iter()
        .enumerate()
        .map(|(s, seq)| roll_sequence(&net, seq, cluster, cfg, iteration, s))
        .collect::<Result<_>>()?;

    let mut grad = ParamBlocks::zeros(&params.layout);
    for b in &batches {
        grad.add_scaled(1.0, &b.gradient);
    }
    grad.scale(1.0 / (sequences.len() * cfg.trajectories) as f64);

    let mean = |v: Vec<f64>| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let stats = IterationStats {
        mean_return: mean(batches.iter().flat_map(|b| b.returns.iter().copied()).collect()),
        mean_norm_edp: mean(batches.iter().flat_map(|b| b.edps.iter().copied()).collect()),
        esjf_reference_edp: mean(batches.iter().filter_map(|b| b.esjf_edp).collect()),
        truncated: batches.iter().map(|b| b.truncated).sum(),
    };
    Ok((grad, stats))
}

pub fn train_iteration(
    params: &mut PolicyParams,
    adam: &mut AdamState,
    sequences: &[JobArrivalSequence],
    cluster: &ClusterConfig,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<IterationStats> {
    let (mut grad, stats) = policy_gradient(params, sequences, cluster, cfg, iteration)?;
    if !grad.is_finite() {
        return Err(Error::Numeric(format!("non-finite gradient at iteration {iteration}")));
    }
    if let Some(max) = cfg.max_grad_norm {
        let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > max {
            grad.scale(max / norm);
        }
    }
    adam_update(params, adam, &grad, cfg.lr, &AdamConfig::default())?;
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub adam: AdamState,
    pub curve: Vec<LearningCurvePoint>,
}

pub fn initial_params(cluster: &ClusterConfig, seed: u64) -> Result<PolicyParams> {
    init_params(PolicyLayout::for_cluster(cluster), derive_seed(seed, &[TAG_INIT]))
}

pub fn train(cfg: &TrainConfig, cluster: &ClusterConfig, workload: &WorkloadConfig) -> Result<TrainOutput> {
    train_with(cfg, cluster, workload, |_, _| Ok(()))
}

/// Like [`train`], calling `progress` after every iteration.
pub fn train_with(
    cfg: &TrainConfig,
    cluster: &ClusterConfig,
    workload: &WorkloadConfig,
    mut progress: impl FnMut(&LearningCurvePoint, &PolicyParams) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    cluster.validate()?;
    workload.validate()?;
    let pool = generate_batch(workload, cfg.pool_size.unwrap_or(cfg.sequences))?;
    let mut params = initial_params(cluster, cfg.seed)?;
    let mut adam = AdamState::new(&params);
    let threads = thread_pool(cfg.threads)?;
    let started = Instant::now();
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let sequences = iteration_sequences(&pool, cfg, it);
        let stats = threads.install(|| train_iteration(&mut params, &mut adam, &sequences, cluster, cfg, it))?;
        let point = LearningCurvePoint {
            iteration: it,
            mean_return: stats.mean_return,
            mean_norm_edp: stats.mean_norm_edp,
            esjf_reference_edp: stats.esjf_reference_edp,
            wall_time: started.elapsed().as_secs_f64(),
        };
        curve.push(point);
        progress(&point, &params)?;
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(&params, Some(&adam), &dir.join(format!("checkpoint_{:05}.deas", it + 1)))?;
            }
        }
    }
    Ok(TrainOutput { params, adam, curve })
}

/// The training sequences of one iteration: the whole pool, or a seeded
/// subset of it in pool order.
fn iteration_sequences(pool: &[JobArrivalSequence], cfg: &TrainConfig, iteration: usize) -> Vec<JobArrivalSequence> {
    if pool.len() == cfg.sequences {
        return pool.to_vec();
    }
    let mut rng = rng_from(derive_seed(cfg.seed, &[TAG_POOL, iteration as u64]));
    let mut picked = rand::seq::index::sample(&mut rng, pool.len(), cfg.sequences).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i].clone()).collect()
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(config_err("threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| config_err(format!("thread pool: {e}")))
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(thread_pool(threads)?.install(f))
}

/// Mean over episodes of each episode's average normalized EDP, skipping
/// episodes without jobs.
pub fn mean_episode_edp(trajectories: &[Trajectory]) -> Option<f64> {
    let edps: Vec<f64> = trajectories.iter().filter_map(Trajectory::mean_edp).collect();
    (!edps.is_empty()).then(|| edps.iter().sum::<f64>() / edps.len() as f64)
}

/// Evaluates a policy on each sequence, with episode seeds derived from
/// `seed` and the sequence index.
pub fn evaluate(
    params: &PolicyParams,
    sequences: &[JobArrivalSequence],
    cluster: &ClusterConfig,
    seed: u64,
    mode: EvalMode,
) -> Result<Vec<Trajectory>> {
    let net = Network::new(params);
    sequences.par_iter().enumerate().map(|(i, seq)| run_episode(&net, seq, cluster, eval_seed(seed, i), mode)).collect()
}

/// Episode seed for the `i`-th evaluation sequence; shared by every
/// scheduler so comparisons see identical durations.
pub fn eval_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, &[TAG_ENV, u64::MAX, i as u64])
}

#[cfg(test)]
mod tests;

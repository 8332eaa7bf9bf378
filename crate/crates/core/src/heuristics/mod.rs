//! Baseline schedulers and an exhaustive oracle for tiny instances.

mod oracle;

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{job_energy, Action, Candidate, ClusterConfig, SimState};
use crate::error::{usage_err, Error, Result};
use crate::seed::{derive_seed, rng_from};
use crate::trainer::{drive, Trajectory};
use crate::workload::{expected_duration, JobArrivalSequence};

pub use oracle::{brute_force_optimal, evaluate_schedule, OracleBounds, OracleSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicKind {
    /// Lowest estimated normalized EDP first.
    Esjf,
    /// Uniform over valid actions, Hold included.
    Random,
    /// Lowest estimated energy first, ignoring delay.
    GreedyEnergy,
    /// Never schedules anything.
    AlwaysHold,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 4] = [Self::Esjf, Self::Random, Self::GreedyEnergy, Self::AlwaysHold];

    pub fn name(self) -> &'static str {
        match self {
            Self::Esjf => "esjf",
            Self::Random => "random",
            Self::GreedyEnergy => "greedy_energy",
            Self::AlwaysHold => "always_hold",
        }
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeuristicKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            usage_err(format!("unknown heuristic {s:?}, expected one of {}", names.join(", ")))
        })
    }
}

/// First candidate minimizing `key`; candidates arrive slot-major, so ties
/// go to the lower slot and then the lower machine.
fn argmin_by(candidates: &[Candidate], key: impl Fn(&Candidate) -> f64) -> Option<&Candidate> {
    candidates.iter().fold(None, |best: Option<&Candidate>, c| match best {
        Some(b) if key(b) <= key(c) => Some(b),
        _ => Some(c),
    })
}

/// The pair ESJF would schedule next, if any fits.
pub fn esjf_choice(state: &SimState) -> Option<Candidate> {
    argmin_by(&state.candidates(), |c| c.estimate).copied()
}

/// ESJF's full action list for the current timestep, ending in Hold.
pub fn esjf_step(state: &SimState) -> Result<Vec<Action>> {
    let mut sim = state.clone();
    let mut actions = Vec::new();
    while let Some(c) = esjf_choice(&sim) {
        let a = sim.cluster().encode(c.machine, c.slot);
        sim.step(a)?;
        actions.push(a);
    }
    actions.push(state.cluster().hold_action());
    Ok(actions)
}

fn greedy_energy_choice(state: &SimState) -> Option<Candidate> {
    let cluster = state.cluster();
    argmin_by(&state.candidates(), |c| {
        let rec = &state.records()[c.job];
        let m = &cluster.machines[c.machine];
        job_energy(&rec.spec, m, expected_duration(&rec.spec, m), rec.mu_star)
    })
    .copied()
}

/// Next action of a heuristic in the given state.
pub fn heuristic_action<R: Rng + ?Sized>(kind: HeuristicKind, state: &SimState, rng: &mut R) -> Action {
    let cluster = state.cluster();
    let pick = match kind {
        HeuristicKind::Esjf => esjf_choice(state),
        HeuristicKind::GreedyEnergy => greedy_energy_choice(state),
        HeuristicKind::Random => {
            return *state.valid_actions().choose(rng).expect("Hold is always valid");
        }
        HeuristicKind::AlwaysHold => None,
    };
    pick.map_or(cluster.hold_action(), |c| cluster.encode(c.machine, c.slot))
}

/// Drives one episode with a heuristic; `seed` fixes sampled durations
/// exactly as for policy episodes.
pub fn run_heuristic(
    kind: HeuristicKind,
    seq: &JobArrivalSequence,
    cluster: &ClusterConfig,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = rng_from(derive_seed(seed, &[0x4A4D]));
    drive(seq, cluster, seed, |state| Ok((heuristic_action(kind, state, &mut rng), None)))
}

//! Discrete-time heterogeneous cluster environment.
//!
//! The agent issues decision steps. A valid schedule action places the job
//! in queue slot `q` on machine `k` at the earliest offset where it fits
//! under *expected* durations; no time passes. Hold (or any invalid action)
//! advances the clock by one timestep: jobs whose *sampled* duration ends
//! depart, assigned-but-waiting jobs start in assignment order when their
//! processors are free, arrivals enter the queue, and the step reward is
//! granted.
//!
//! The per-timestep reward charges every job in the system `E/mu*` once it
//! is placed and `E*/mu*` before that, plus a one-off correction
//! `(E - E*) * dt / mu*` in the timestep it is placed. Summed over a
//! complete episode this is exactly minus the total normalized
//! energy-delay product.

mod fit;
mod image;
mod trace;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use fit::earliest_fit;
pub use image::StateImage;
pub use trace::{write_trace, PlacementView, TraceRecord};

use crate::error::{config_err, usage_err, Result};
use crate::seed::{duration_seed, rng_from};
use crate::workload::{
    default_profiles, expected_duration, min_expected_duration, sample_actual_duration, JobArrivalSequence, JobSpec,
    MachineProfile,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub machines: Vec<MachineProfile>,
    /// Processors per machine.
    pub processors: u32,
    /// Lookahead horizon in timesteps; the image height.
    pub horizon: u32,
    pub queue_slots: u32,
    pub backlog_len: u32,
    pub last_arrival_len: u32,
    pub max_episode_timesteps: u32,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            machines: default_profiles(),
            processors: 10,
            horizon: 30,
            queue_slots: 10,
            backlog_len: 90,
            last_arrival_len: 30,
            max_episode_timesteps: 500,
        }
    }
}

impl ClusterConfig {
    pub fn num_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_machines() * self.queue_slots as usize + 1
    }

    pub fn hold_action(&self) -> Action {
        Action(self.num_machines() * self.queue_slots as usize)
    }

    pub fn encode(&self, machine: usize, slot: usize) -> Action {
        Action(machine * self.queue_slots as usize + slot)
    }

    pub fn decode(&self, a: Action) -> Decoded {
        let q = self.queue_slots as usize;
        if a.0 < q * self.num_machines() {
            Decoded::Schedule { machine: a.0 / q, slot: a.0 % q }
        } else {
            Decoded::Hold
        }
    }

    /// `N * (1 + Q) * K + B / H + L / H`.
    pub fn image_width(&self) -> usize {
        let n = self.processors as usize;
        let h = self.horizon as usize;
        n * (1 + self.queue_slots as usize) * self.num_machines()
            + self.backlog_len as usize / h
            + self.last_arrival_len as usize / h
    }

    pub fn image_height(&self) -> usize {
        self.horizon as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.machines.is_empty() {
            return Err(config_err("cluster needs at least one machine"));
        }
        for (i, m) in self.machines.iter().enumerate() {
            if m.machine_id != i {
                return Err(config_err(format!("machine {i} carries id {}", m.machine_id)));
            }
            if m.duration_scale < 1 || m.energy_rate <= 0.0 || !m.energy_rate.is_finite() {
                return Err(config_err(format!("machine {i} has an invalid profile")));
            }
        }
        if self.machines.iter().filter(|m| m.duration_scale == 1).count() != 1 {
            return Err(config_err("exactly one machine must have duration_scale = 1"));
        }
        if self.processors == 0 || self.horizon == 0 || self.queue_slots == 0 {
            return Err(config_err("N, H and Q must be at least 1"));
        }
        if self.backlog_len % self.horizon != 0 || self.last_arrival_len % self.horizon != 0 {
            return Err(config_err(format!(
                "B = {} and L = {} must be multiples of H = {}",
                self.backlog_len, self.last_arrival_len, self.horizon
            )));
        }
        Ok(())
    }
}

/// Action index in `[0, Q*K]`; `k*Q + q` schedules slot `q` on machine
/// `k`, `Q*K` holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoded {
    Schedule { machine: usize, slot: usize },
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobStatus {
    Pending,
    Queued,
    Backlogged,
    Placed,
    Completed,
}

/// Per-job accounting.
#[derive(Debug, Clone)]
pub struct JobRecord {
    pub spec: JobSpec,
    pub status: JobStatus,
    pub mu_star: u32,
    /// Energy if placed on the least-energy machine (`E*`).
    pub min_energy: f64,
    pub machine: Option<usize>,
    pub assigned_at: Option<u32>,
    pub actual_duration: Option<u32>,
    /// Energy on the assigned machine with the sampled duration (`E`).
    pub energy: Option<f64>,
    pub start: Option<u32>,
    pub completion: Option<u32>,
}

impl JobRecord {
    fn new(spec: JobSpec, machines: &[MachineProfile]) -> Self {
        let mu_star = min_expected_duration(&spec, machines);
        let min_energy = machines
            .iter()
            .map(|m| job_energy(&spec, m, expected_duration(&spec, m), mu_star))
            .fold(f64::INFINITY, f64::min);
        Self {
            spec,
            status: JobStatus::Pending,
            mu_star,
            min_energy,
            machine: None,
            assigned_at: None,
            actual_duration: None,
            energy: None,
            start: None,
            completion: None,
        }
    }

    /// Timesteps from arrival to departure, if departed.
    pub fn delay(&self) -> Option<u32> {
        self.completion.map(|c| c - self.spec.arrival_t)
    }

    fn in_system_during(&self, t: u32) -> bool {
        self.spec.arrival_t <= t && self.completion.is_none_or(|c| c > t)
    }
}

/// Normalized energy `n * e * d / mu*`.
pub fn job_energy(spec: &JobSpec, m: &MachineProfile, duration: u32, mu_star: u32) -> f64 {
    spec.n as f64 * m.energy_rate * duration as f64 / mu_star as f64
}

/// Estimated normalized energy-delay product of starting `job` on `m` at
/// `offset` timesteps from now, from expected durations only.
pub fn estimated_edp(spec: &JobSpec, m: &MachineProfile, offset: usize, mu_star: u32) -> f64 {
    let mu_k = expected_duration(spec, m);
    let energy = job_energy(spec, m, mu_k, mu_star);
    energy * ((offset as f64 + mu_k as f64) / mu_star as f64)
}

#[derive(Debug, Clone)]
pub struct Placement {
    /// Index into the sequence's job list.
    pub job: usize,
    pub job_id: u32,
    pub machine: usize,
    pub n: u32,
    pub assigned_at: u32,
    pub planned_start: u32,
    pub start: Option<u32>,
    pub actual_duration: u32,
    pub expected_duration: u32,
}

impl Placement {
    pub fn actual_end(&self) -> Option<u32> {
        self.start.map(|s| s + self.actual_duration)
    }

    /// Rows `[from, to)` this placement occupies in the expected view at
    /// `clock`. A running job past its expected end keeps one row.
    fn expected_rows(&self, clock: u32) -> (u32, u32) {
        match self.start {
            Some(s) => {
                let remaining = (s + self.expected_duration).saturating_sub(clock).max(1);
                (0, remaining)
            }
            None => {
                let from = self.planned_start.saturating_sub(clock);
                (from, from + self.expected_duration)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MachineState {
    pub running: Vec<Placement>,
    /// Assigned but not started, in assignment order.
    pub waiting: Vec<Placement>,
}

impl MachineState {
    pub fn busy(&self) -> u32 {
        self.running.iter().map(|p| p.n).sum()
    }

    fn is_empty(&self) -> bool {
        self.running.is_empty() && self.waiting.is_empty()
    }
}

/// A feasible `(slot, machine)` pair at the current instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub slot: usize,
    pub machine: usize,
    pub job: usize,
    pub offset: usize,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledDecision {
    pub job_id: u32,
    pub mu0: u32,
    pub machine: usize,
    /// Machine with the lowest estimate among those the job fit on.
    pub best_machine: usize,
    pub estimate: f64,
    pub best_estimate: f64,
}

impl ScheduledDecision {
    pub fn ed_conserving(&self) -> bool {
        self.estimate <= self.best_estimate
    }
}

/// What the agent could have done at the instant of a decision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecisionContext {
    pub queue_len: usize,
    pub any_valid_fit: bool,
    /// For time advances: `mu0` of queued jobs that had a valid fit.
    pub withheld_mu0: Vec<u32>,
    pub scheduled: Option<ScheduledDecision>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub valid: bool,
    pub time_advanced: bool,
    pub scheduled_job: Option<u32>,
    pub completions: Vec<u32>,
    pub terminal: bool,
    pub context: DecisionContext,
}

#[derive(Debug, Clone)]
pub struct SimState {
    cluster: ClusterConfig,
    c: f64,
    arrival_window: u32,
    seed: u64,
    clock: u32,
    machines: Vec<MachineState>,
    queue: Vec<usize>,
    backlog: VecDeque<usize>,
    since_last_arrival: u32,
    next_arrival: usize,
    records: Vec<JobRecord>,
}

impl SimState {
    /// Starts an episode. `seed` determines every sampled duration through
    /// a per-(job, machine) derivation.
    pub fn reset(sequence: &JobArrivalSequence, cluster: &ClusterConfig, seed: u64) -> Result<Self> {
        cluster.validate()?;
        let mut jobs = sequence.jobs.clone();
        jobs.sort_by_key(|j| j.arrival_t);
        let h = cluster.horizon;
        for j in &jobs {
            if j.n == 0 || j.n > cluster.processors {
                return Err(config_err(format!(
                    "job {} demands {} processors, machines have {}",
                    j.job_id, j.n, cluster.processors
                )));
            }
            if j.mu0 == 0 || min_expected_duration(j, &cluster.machines) > h {
                return Err(config_err(format!("job {} cannot fit within the horizon {h}", j.job_id)));
            }
        }
        let records = jobs.iter().map(|j| JobRecord::new(*j, &cluster.machines)).collect();
        let mut state = Self {
            cluster: cluster.clone(),
            c: sequence.config.c,
            arrival_window: sequence.config.arrival_window,
            seed,
            clock: 0,
            machines: vec![MachineState::default(); cluster.num_machines()],
            queue: Vec::with_capacity(cluster.queue_slots as usize),
            backlog: VecDeque::new(),
            since_last_arrival: 1.min(cluster.last_arrival_len),
            next_arrival: 0,
            records,
        };
        state.admit_arrivals();
        Ok(state)
    }

    pub fn cluster(&self) -> &ClusterConfig {
        &self.cluster
    }

    pub fn clock(&self) -> u32 {
        self.clock
    }

    pub fn records(&self) -> &[JobRecord] {
        &self.records
    }

    pub fn machines(&self) -> &[MachineState] {
        &self.machines
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn backlog_len(&self) -> usize {
        self.backlog.len()
    }

    pub fn since_last_arrival(&self) -> u32 {
        self.since_last_arrival
    }

    /// Job ids in queue-slot order.
    pub fn queue_ids(&self) -> Vec<u32> {
        self.queue.iter().map(|&j| self.records[j].spec.job_id).collect()
    }

    pub fn queued_job(&self, slot: usize) -> Option<&JobRecord> {
        self.queue.get(slot).map(|&j| &self.records[j])
    }

    pub fn pending_arrivals(&self) -> usize {
        self.records.len() - self.next_arrival
    }

    fn system_empty(&self) -> bool {
        self.queue.is_empty() && self.backlog.is_empty() && self.machines.iter().all(MachineState::is_empty)
    }

    pub fn is_terminal(&self) -> bool {
        let drained = self.clock >= self.arrival_window && self.pending_arrivals() == 0 && self.system_empty();
        drained || self.clock >= self.cluster.max_episode_timesteps
    }

    /// Busy processors per row over the horizon under expected durations,
    /// saturating at N.
    pub fn expected_occupancy(&self, machine: usize) -> Vec<u32> {
        let h = self.cluster.horizon;
        let mut occ = vec![0u32; h as usize];
        let m = &self.machines[machine];
        for p in m.running.iter().chain(&m.waiting) {
            let (from, to) = p.expected_rows(self.clock);
            for r in from.min(h)..to.min(h) {
                occ[r as usize] += p.n;
            }
        }
        let cap = self.cluster.processors;
        occ.iter_mut().for_each(|v| *v = (*v).min(cap));
        occ
    }

    /// All feasible `(slot, machine)` pairs with their fit offset and
    /// energy-delay estimate, slot-major.
    pub fn candidates(&self) -> Vec<Candidate> {
        let occupancy: Vec<Vec<u32>> = (0..self.machines.len()).map(|k| self.expected_occupancy(k)).collect();
        self.candidates_with(&occupancy)
    }

    fn candidates_with(&self, occupancy: &[Vec<u32>]) -> Vec<Candidate> {
        let mut out = Vec::new();
        for (slot, &job) in self.queue.iter().enumerate() {
            let rec = &self.records[job];
            for (k, m) in self.cluster.machines.iter().enumerate() {
                let dur = expected_duration(&rec.spec, m);
                if let Some(offset) = earliest_fit(&occupancy[k], self.cluster.processors, rec.spec.n, dur) {
                    out.push(Candidate {
                        slot,
                        machine: k,
                        job,
                        offset,
                        estimate: estimated_edp(&rec.spec, m, offset, rec.mu_star),
                    });
                }
            }
        }
        out
    }

    /// Hold plus every schedule action that names an occupied slot whose
    /// job fits on the machine within the horizon.
    pub fn valid_actions(&self) -> Vec<Action> {
        let mut actions: Vec<Action> =
            self.candidates().iter().map(|c| self.cluster.encode(c.machine, c.slot)).collect();
        actions.sort();
        actions.push(self.cluster.hold_action());
        actions
    }

    pub fn is_valid(&self, a: Action) -> bool {
        match self.cluster.decode(a) {
            Decoded::Hold => a.0 == self.cluster.hold_action().0,
            Decoded::Schedule { machine, slot } => self.fit_for(machine, slot).is_some(),
        }
    }

    fn fit_for(&self, machine: usize, slot: usize) -> Option<usize> {
        let &job = self.queue.get(slot)?;
        let spec = &self.records[job].spec;
        let dur = expected_duration(spec, &self.cluster.machines[machine]);
        earliest_fit(&self.expected_occupancy(machine), self.cluster.processors, spec.n, dur)
    }

    pub fn render(&self) -> StateImage {
        let c = &self.cluster;
        let (h, n) = (c.horizon as usize, c.processors as usize);
        let k_count = c.num_machines();
        let q_count = c.queue_slots as usize;
        let mut img = StateImage::zeros(h, c.image_width());

        for k in 0..k_count {
            let occ = self.expected_occupancy(k);
            let col0 = k * n;
            for (r, &busy) in occ.iter().enumerate() {
                img.set_run(r, col0, busy as usize);
            }
        }

        let queue_base = k_count * n;
        for (k, m) in c.machines.iter().enumerate() {
            for (slot, &job) in self.queue.iter().enumerate() {
                let spec = &self.records[job].spec;
                let rows = (expected_duration(spec, m) as usize).min(h);
                let col0 = queue_base + (k * q_count + slot) * n;
                for r in 0..rows {
                    img.set_run(r, col0, spec.n as usize);
                }
            }
        }

        let backlog_base = queue_base + k_count * q_count * n;
        fill_tiles(&mut img, backlog_base, self.backlog.len().min(c.backlog_len as usize));
        let last_base = backlog_base + c.backlog_len as usize / h;
        fill_tiles(&mut img, last_base, (self.since_last_arrival as usize).min(c.last_arrival_len as usize));
        img
    }

    /// Applies one decision step.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.is_terminal() {
            return Err(usage_err("step called on a terminal state"));
        }
        if action.0 >= self.cluster.num_actions() {
            return Err(usage_err(format!("action {} outside [0, {}]", action.0, self.cluster.num_actions() - 1)));
        }
        let occupancy: Vec<Vec<u32>> = (0..self.machines.len()).map(|k| self.expected_occupancy(k)).collect();
        let candidates = self.candidates_with(&occupancy);
        let mut context = DecisionContext {
            queue_len: self.queue.len(),
            any_valid_fit: !candidates.is_empty(),
            ..Default::default()
        };

        if let Decoded::Schedule { machine, slot } = self.cluster.decode(action) {
            if let Some(chosen) = candidates.iter().find(|c| c.slot == slot && c.machine == machine) {
                let best = candidates.iter().filter(|c| c.slot == slot).fold(chosen, |b, c| {
                    if c.estimate < b.estimate {
                        c
                    } else {
                        b
                    }
                });
                let spec = self.records[chosen.job].spec;
                context.scheduled = Some(ScheduledDecision {
                    job_id: spec.job_id,
                    mu0: spec.mu0,
                    machine,
                    best_machine: best.machine,
                    estimate: chosen.estimate,
                    best_estimate: best.estimate,
                });
                self.assign(slot, machine, chosen.offset);
                return Ok(StepOutcome {
                    reward: 0.0,
                    valid: true,
                    time_advanced: false,
                    scheduled_job: Some(spec.job_id),
                    completions: Vec::new(),
                    terminal: false,
                    context,
                });
            }
        }

        let valid = action == self.cluster.hold_action();
        let mut withheld: Vec<usize> = candidates.iter().map(|c| c.slot).collect();
        withheld.dedup();
        context.withheld_mu0 = withheld.iter().map(|&s| self.records[self.queue[s]].spec.mu0).collect();
        let (reward, completions) = self.advance();
        Ok(StepOutcome {
            reward,
            valid,
            time_advanced: true,
            scheduled_job: None,
            completions,
            terminal: self.is_terminal(),
            context,
        })
    }

    fn assign(&mut self, slot: usize, machine: usize, offset: usize) {
        let job = self.queue.remove(slot);
        if let Some(next) = self.backlog.pop_front() {
            self.records[next].status = JobStatus::Queued;
            self.queue.push(next);
        }
        let profile = self.cluster.machines[machine];
        let rec = &mut self.records[job];
        let spec = rec.spec;
        let mut rng = rng_from(duration_seed(self.seed, spec.job_id as u64, machine as u64));
        let actual = sample_actual_duration(&spec, &profile, self.c, &mut rng);
        rec.status = JobStatus::Placed;
        rec.machine = Some(machine);
        rec.assigned_at = Some(self.clock);
        rec.actual_duration = Some(actual);
        rec.energy = Some(job_energy(&spec, &profile, actual, rec.mu_star));

        let mut placement = Placement {
            job,
            job_id: spec.job_id,
            machine,
            n: spec.n,
            assigned_at: self.clock,
            planned_start: self.clock + offset as u32,
            start: None,
            actual_duration: actual,
            expected_duration: expected_duration(&spec, &profile),
        };
        let m = &mut self.machines[machine];
        // Offset 0 guarantees n free processors now: every running job
        // occupies row 0 of the expected view.
        if offset == 0 && m.busy() + spec.n <= self.cluster.processors {
            placement.start = Some(self.clock);
            rec.start = Some(self.clock);
            m.running.push(placement);
        } else {
            m.waiting.push(placement);
        }
    }

    fn advance(&mut self) -> (f64, Vec<u32>) {
        let elapsed = self.clock;
        self.clock += 1;
        let now = self.clock;
        let cap = self.cluster.processors;
        let mut completions = Vec::new();

        for m in &mut self.machines {
            let records = &mut self.records;
            m.running.retain(|p| {
                if p.actual_end() == Some(now) {
                    let rec = &mut records[p.job];
                    rec.completion = Some(now);
                    rec.status = JobStatus::Completed;
                    completions.push(p.job_id);
                    false
                } else {
                    true
                }
            });
            let mut free = cap - m.busy();
            let mut still_waiting = Vec::with_capacity(m.waiting.len());
            for mut p in m.waiting.drain(..) {
                if p.n <= free {
                    free -= p.n;
                    p.start = Some(now);
                    records[p.job].start = Some(now);
                    m.running.push(p);
                } else {
                    still_waiting.push(p);
                }
            }
            m.waiting = still_waiting;
        }

        let arrived = self.admit_arrivals();
        if !arrived {
            self.since_last_arrival = (self.since_last_arrival + 1).min(self.cluster.last_arrival_len);
        }
        (self.compute_step_reward(elapsed), completions)
    }

    /// Enqueues every job arriving at the current clock.
    fn admit_arrivals(&mut self) -> bool {
        let mut arrived = false;
        while let Some(rec) = self.records.get_mut(self.next_arrival) {
            if rec.spec.arrival_t != self.clock {
                break;
            }
            if self.queue.len() < self.cluster.queue_slots as usize {
                rec.status = JobStatus::Queued;
                self.queue.push(self.next_arrival);
            } else {
                rec.status = JobStatus::Backlogged;
                self.backlog.push_back(self.next_arrival);
            }
            self.next_arrival += 1;
            arrived = true;
        }
        if arrived {
            self.since_last_arrival = 0;
        }
        arrived
    }

    /// Reward for the elapsed timestep `t`, once departures, starts and
    /// arrivals at `t + 1` have resolved.
    pub fn compute_step_reward(&self, t: u32) -> f64 {
        let mut cost = 0.0;
        for rec in self.records.iter().filter(|r| r.in_system_during(t)) {
            let mu_star = rec.mu_star as f64;
            match (rec.assigned_at, rec.energy) {
                (Some(at), Some(energy)) if at <= t => {
                    cost += energy / mu_star;
                    if at == t {
                        let dt = (at - rec.spec.arrival_t) as f64;
                        cost += (energy - rec.min_energy) * dt / mu_star;
                    }
                }
                _ => cost += rec.min_energy / mu_star,
            }
        }
        -cost
    }

    /// Total normalized energy-delay product of the departed jobs.
    pub fn completed_edp(&self) -> f64 {
        self.records.iter().filter_map(|r| Some(r.energy? * (r.delay()? as f64 / r.mu_star as f64))).sum()
    }

    pub fn trace_record(&self, step: usize, action: Action, valid: bool, reward: f64) -> TraceRecord {
        let placements = self
            .machines
            .iter()
            .flat_map(|m| m.running.iter().chain(&m.waiting))
            .map(|p| PlacementView {
                job_id: p.job_id,
                machine: p.machine,
                n: p.n,
                planned_start: p.planned_start,
                start: p.start,
                actual_end: p.actual_end(),
            })
            .collect();
        TraceRecord {
            step,
            clock: self.clock,
            action: action.0,
            valid,
            reward,
            queue_ids: self.queue_ids(),
            placements,
        }
    }

    /// Processors in use right now per machine, from the ground-truth
    /// placements.
    pub fn actual_busy(&self) -> Vec<u32> {
        self.machines.iter().map(MachineState::busy).collect()
    }
}

/// Fills `count` ones column-major into `H`-tall tiles starting at `col0`.
fn fill_tiles(img: &mut StateImage, col0: usize, count: usize) {
    let h = img.height;
    for i in 0..count {
        img.set(i % h, col0 + i / h);
    }
}

#[cfg(test)]
mod tests;

//! Exhaustive search for the minimum total normalized EDP of a tiny
//! instance with deterministic durations.
//!
//! Every job picks a machine and an integer start time no earlier than its
//! arrival; machines hold at most `processors` busy processors at any time.
//! The search is depth-first over jobs with start times in increasing
//! order. A job's cost only grows with its start time, so a branch is cut as
//! soon as its cost plus the zero-wait costs of the remaining jobs reaches
//! the incumbent.

use crate::env::ClusterConfig;
use crate::error::{usage_err, Result};
use crate::workload::{JobArrivalSequence, JobSpec, MachineProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleBounds {
    pub max_jobs: usize,
    /// Latest time slot the search may use.
    pub max_time: u32,
}

impl Default for OracleBounds {
    fn default() -> Self {
        Self { max_jobs: 4, max_time: 256 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSchedule {
    pub total_edp: f64,
    /// `(machine, start)` per job, in sequence order.
    pub assignments: Vec<(usize, u32)>,
    pub job_edp: Vec<f64>,
}

struct Job {
    arrival: u32,
    n: u32,
    mu_star: u32,
    durations: Vec<u32>,
    rates: Vec<f64>,
}

impl Job {
    fn new(spec: &JobSpec, machines: &[MachineProfile]) -> Self {
        let durations: Vec<u32> = machines.iter().map(|m| spec.mu0 * m.duration_scale).collect();
        Self {
            arrival: spec.arrival_t,
            n: spec.n,
            mu_star: *durations.iter().min().expect("at least one machine"),
            rates: machines.iter().map(|m| m.energy_rate).collect(),
            durations,
        }
    }

    fn edp(&self, machine: usize, start: u32) -> f64 {
        let d = self.durations[machine];
        let mu_star = self.mu_star as f64;
        let energy = self.n as f64 * self.rates[machine] * d as f64 / mu_star;
        let delay = start + d - self.arrival;
        energy * (delay as f64 / mu_star)
    }
}

fn jobs_of(seq: &JobArrivalSequence, cluster: &ClusterConfig) -> Result<Vec<Job>> {
    if !seq.config.c.is_infinite() {
        return Err(usage_err("the oracle needs exact durations (c = inf)"));
    }
    let jobs: Vec<Job> = seq.jobs.iter().map(|j| Job::new(j, &cluster.machines)).collect();
    if let Some(j) = jobs.iter().find(|j| j.n > cluster.processors) {
        return Err(usage_err(format!("job demand {} exceeds {} processors", j.n, cluster.processors)));
    }
    Ok(jobs)
}

/// Per-job EDP of a given schedule, rejecting infeasible ones.
pub fn evaluate_schedule(
    seq: &JobArrivalSequence,
    cluster: &ClusterConfig,
    assignments: &[(usize, u32)],
) -> Result<Vec<f64>> {
    let jobs = jobs_of(seq, cluster)?;
    if assignments.len() != jobs.len() {
        return Err(usage_err("one assignment per job required"));
    }
    let end = jobs.iter().zip(assignments).map(|(j, &(k, s))| s + j.durations.get(k).copied().unwrap_or(0)).max();
    let mut usage = vec![vec![0u32; end.unwrap_or(0) as usize]; cluster.machines.len()];
    for (j, &(k, s)) in jobs.iter().zip(assignments) {
        if k >= cluster.machines.len() || s < j.arrival {
            return Err(usage_err(format!("infeasible assignment ({k}, {s})")));
        }
        for t in s..s + j.durations[k] {
            usage[k][t as usize] += j.n;
            if usage[k][t as usize] > cluster.processors {
                return Err(usage_err(format!("machine {k} over capacity at t={t}")));
            }
        }
    }
    Ok(jobs.iter().zip(assignments).map(|(j, &(k, s))| j.edp(k, s)).collect())
}

struct Search<'a> {
    jobs: &'a [Job],
    capacity: u32,
    latest_start: u32,
    /// Sum of zero-wait lower bounds of jobs `i..`.
    rest_lb: Vec<f64>,
    usage: Vec<Vec<u32>>,
    current: Vec<(usize, u32)>,
    best: f64,
    best_assignments: Vec<(usize, u32)>,
}

impl Search<'_> {
    fn fits(&self, k: usize, start: u32, d: u32, n: u32) -> bool {
        (start..start + d).all(|t| self.usage[k][t as usize] + n <= self.capacity)
    }

    fn occupy(&mut self, k: usize, start: u32, d: u32, n: i64) {
        for t in start..start + d {
            let u = &mut self.usage[k][t as usize];
            *u = (*u as i64 + n) as u32;
        }
    }

    fn dfs(&mut self, i: usize, partial: f64) {
        if i == self.jobs.len() {
            if partial < self.best {
                self.best = partial;
                self.best_assignments = self.current.clone();
            }
            return;
        }
        let job = &self.jobs[i];
        for k in 0..job.durations.len() {
            let d = job.durations[k];
            for s in job.arrival..=self.latest_start {
                let cost = job.edp(k, s);
                if partial + cost + self.rest_lb[i + 1] >= self.best {
                    break;
                }
                if !self.fits(k, s, d, job.n) {
                    continue;
                }
                self.occupy(k, s, d, job.n as i64);
                self.current.push((k, s));
                self.dfs(i + 1, partial + cost);
                self.current.pop();
                self.occupy(k, s, d, -(job.n as i64));
            }
        }
    }
}

pub fn brute_force_optimal(
    seq: &JobArrivalSequence,
    cluster: &ClusterConfig,
    bounds: OracleBounds,
) -> Result<OracleSchedule> {
    let jobs = jobs_of(seq, cluster)?;
    if jobs.len() > bounds.max_jobs {
        return Err(usage_err(format!("{} jobs exceed the oracle bound of {}", jobs.len(), bounds.max_jobs)));
    }
    // Waiting longer than every other job's longest run never helps.
    let total: u32 = jobs.iter().map(|j| j.durations.iter().max().unwrap()).sum();
    let latest_start = jobs.iter().map(|j| j.arrival).max().unwrap_or(0) + total;
    let longest = jobs.iter().flat_map(|j| j.durations.iter()).max().copied().unwrap_or(0);
    if latest_start + longest > bounds.max_time {
        return Err(usage_err(format!(
            "instance needs {} time slots, bound is {}",
            latest_start + longest,
            bounds.max_time
        )));
    }
    let mut rest_lb = vec![0.0; jobs.len() + 1];
    for i in (0..jobs.len()).rev() {
        let j = &jobs[i];
        let lb = (0..j.durations.len()).map(|k| j.edp(k, j.arrival)).fold(f64::INFINITY, f64::min);
        rest_lb[i] = rest_lb[i + 1] + lb;
    }
    let mut search = Search {
        jobs: &jobs,
        capacity: cluster.processors,
        latest_start,
        rest_lb,
        usage: vec![vec![0; (latest_start + longest) as usize]; cluster.machines.len()],
        current: Vec::with_capacity(jobs.len()),
        best: f64::INFINITY,
        best_assignments: Vec::new(),
    };
    search.dfs(0, 0.0);
    let job_edp = jobs.iter().zip(&search.best_assignments).map(|(j, &(k, s))| j.edp(k, s)).collect();
    Ok(OracleSchedule { total_edp: search.best, assignments: search.best_assignments, job_edp })
}

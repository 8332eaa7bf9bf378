//! Evaluation quantities: per-job outcomes, average normalized EDP,
//! conserving-behaviour fractions and empirical CDFs.

use serde::{Deserialize, Serialize};

use crate::env::{DecisionContext, JobRecord, SimState};
use crate::error::{usage_err, Result};

/// Final accounting for one job.
///
/// Jobs still in the system when an episode is cut off are `censored`: their
/// delay runs to the final clock and unplaced jobs are charged their
/// minimum energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub job_id: u32,
    pub arrival_t: u32,
    pub n: u32,
    pub mu0: u32,
    pub machine: Option<usize>,
    pub energy: f64,
    pub delay: u32,
    pub delay_norm: f64,
    pub edp: f64,
    pub censored: bool,
}

impl JobOutcome {
    pub fn from_record(rec: &JobRecord, clock: u32) -> Self {
        let (delay, censored) = match rec.delay() {
            Some(d) => (d, false),
            None => (clock.saturating_sub(rec.spec.arrival_t), true),
        };
        let energy = rec.energy.unwrap_or(rec.min_energy);
        let delay_norm = delay as f64 / rec.mu_star as f64;
        Self {
            job_id: rec.spec.job_id,
            arrival_t: rec.spec.arrival_t,
            n: rec.spec.n,
            mu0: rec.spec.mu0,
            machine: rec.machine,
            energy,
            delay,
            delay_norm,
            edp: energy * delay_norm,
            censored,
        }
    }
}

pub fn job_outcomes(state: &SimState) -> Vec<JobOutcome> {
    state.records().iter().map(|r| JobOutcome::from_record(r, state.clock())).collect()
}

pub fn average_normalized_edp(outcomes: &[JobOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(usage_err("average EDP of an empty outcome set"));
    }
    Ok(outcomes.iter().map(|o| o.edp).sum::<f64>() / outcomes.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservingReport {
    pub scheduled_jobs: usize,
    pub not_ed_conserving: usize,
    /// Time advances taken while at least one job was queued.
    pub occupied_timesteps: usize,
    pub not_work_conserving: usize,
    pub frac_not_ed_conserving: f64,
    pub frac_not_work_conserving: f64,
    pub hold_e_mu0: Vec<u32>,
    pub hold_w_mu0: Vec<u32>,
}

impl ConservingReport {
    /// Folds in the decision contexts of one episode.
    pub fn add<'a>(&mut self, contexts: impl IntoIterator<Item = (&'a DecisionContext, bool)>) {
        for (ctx, time_advanced) in contexts {
            if let Some(s) = &ctx.scheduled {
                self.scheduled_jobs += 1;
                if !s.ed_conserving() {
                    self.not_ed_conserving += 1;
                    self.hold_e_mu0.push(s.mu0);
                }
            }
            if time_advanced && ctx.queue_len > 0 {
                self.occupied_timesteps += 1;
                if ctx.any_valid_fit {
                    self.not_work_conserving += 1;
                    self.hold_w_mu0.extend(&ctx.withheld_mu0);
                }
            }
        }
        self.frac_not_ed_conserving = ratio(self.not_ed_conserving, self.scheduled_jobs);
        self.frac_not_work_conserving = ratio(self.not_work_conserving, self.occupied_timesteps);
    }

    pub fn merge(&mut self, other: &ConservingReport) {
        self.scheduled_jobs += other.scheduled_jobs;
        self.not_ed_conserving += other.not_ed_conserving;
        self.occupied_timesteps += other.occupied_timesteps;
        self.not_work_conserving += other.not_work_conserving;
        self.hold_e_mu0.extend(&other.hold_e_mu0);
        self.hold_w_mu0.extend(&other.hold_w_mu0);
        self.frac_not_ed_conserving = ratio(self.not_ed_conserving, self.scheduled_jobs);
        self.frac_not_work_conserving = ratio(self.not_work_conserving, self.occupied_timesteps);
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Empirical CDF as `(value, fraction <= value)` at each distinct value.
pub fn cdf_points(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(usage_err("CDF of an empty sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 })
}

/// Relative improvement `(baseline - policy) / baseline` of mean EDP.
/// Both sides must describe the same jobs in the same order.
pub fn compare_report(policy: &[JobOutcome], baseline: &[JobOutcome]) -> Result<f64> {
    let key = |o: &JobOutcome| (o.job_id, o.arrival_t, o.n, o.mu0);
    if policy.len() != baseline.len() || policy.iter().zip(baseline).any(|(a, b)| key(a) != key(b)) {
        return Err(usage_err("policy and baseline outcomes cover different jobs"));
    }
    let p = average_normalized_edp(policy)?;
    let b = average_normalized_edp(baseline)?;
    Ok((b - p) / b)
}

/// Summary written by evaluation and analysis commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mean_edp: f64,
    pub frac_not_ed: f64,
    pub frac_not_wc: f64,
    pub cdf_hold_e: Vec<(f64, f64)>,
    pub cdf_hold_w: Vec<(f64, f64)>,
}

impl Report {
    pub fn new(mean_edp: f64, conserving: &ConservingReport) -> Self {
        let cdf = |v: &[u32]| cdf_points(&v.iter().map(|&x| x as f64).collect::<Vec<_>>()).unwrap_or_default();
        Self {
            mean_edp,
            frac_not_ed: conserving.frac_not_ed_conserving,
            frac_not_wc: conserving.frac_not_work_conserving,
            cdf_hold_e: cdf(&conserving.hold_e_mu0),
            cdf_hold_w: cdf(&conserving.hold_w_mu0),
        }
    }
}

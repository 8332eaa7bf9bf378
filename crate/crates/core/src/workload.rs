//! Job arrival sequences, per-machine duration and energy models.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::seed::rng_from;

pub const WORKLOAD_SCHEMA_VERSION: u32 = 1;

/// Inclusive integer range, serialized as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct IntRange {
    pub lo: u32,
    pub hi: u32,
}

impl IntRange {
    pub const fn new(lo: u32, hi: u32) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: u32) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        rng.random_range(self.lo..=self.hi)
    }
}

impl From<[u32; 2]> for IntRange {
    fn from(v: [u32; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<IntRange> for [u32; 2] {
    fn from(r: IntRange) -> Self {
        [r.lo, r.hi]
    }
}

/// Parameters of the Bernoulli arrival process and the job mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Arrival probability per timestep.
    pub lambda: f64,
    /// Probability that an arriving job is short.
    pub beta: f64,
    /// Estimator accuracy: variance of an actual duration is `mu / c`.
    /// `f64::INFINITY` means durations equal their expectation.
    #[serde(with = "accuracy_serde")]
    pub c: f64,
    pub arrival_window: u32,
    pub short_mu_range: IntRange,
    pub long_mu_range: IntRange,
    pub demand_range: IntRange,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            beta: 0.5,
            c: 4.0,
            arrival_window: 60,
            short_mu_range: IntRange::new(1, 3),
            long_mu_range: IntRange::new(10, 15),
            demand_range: IntRange::new(1, 10),
            seed: 0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(config_err(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(config_err(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if self.c.is_nan() || self.c <= 0.0 {
            return Err(config_err(format!("c must be positive or inf, got {}", self.c)));
        }
        for (name, r) in [
            ("short_mu_range", self.short_mu_range),
            ("long_mu_range", self.long_mu_range),
            ("demand_range", self.demand_range),
        ] {
            if r.lo == 0 || r.lo > r.hi {
                return Err(config_err(format!("{name} must be a nonempty positive range, got [{}, {}]", r.lo, r.hi)));
            }
        }
        Ok(())
    }

    pub fn perfect_estimator(&self) -> bool {
        self.c.is_infinite()
    }
}

mod accuracy_serde {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(c: &f64, s: S) -> Result<S::Ok, S::Error> {
        if c.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*c)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = f64;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                super::parse_accuracy(v).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Parses an estimator accuracy, accepting `inf`/`infinity` for the perfect
/// estimator.
pub fn parse_accuracy(v: &str) -> std::result::Result<f64, String> {
    match v.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
        other => other.parse::<f64>().map_err(|e| format!("invalid accuracy {v:?}: {e}")),
    }
}

/// Speed and energy characteristics of one machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineProfile {
    pub machine_id: usize,
    /// Multiplier from the fastest-machine expectation to this machine's.
    pub duration_scale: u32,
    /// Normalized energy per processor per timestep.
    pub energy_rate: f64,
}

/// Machine 0 runs at twice the frequency of machine 1; with a dynamic power
/// exponent of 3.2941 the per-timestep energy ratio is 2^3.2941 = 9.809.
pub const FAST_MACHINE_ENERGY_RATE: f64 = 9.809;

pub fn default_profiles() -> Vec<MachineProfile> {
    vec![
        MachineProfile { machine_id: 0, duration_scale: 1, energy_rate: FAST_MACHINE_ENERGY_RATE },
        MachineProfile { machine_id: 1, duration_scale: 2, energy_rate: 1.0 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    pub job_id: u32,
    pub arrival_t: u32,
    /// Processors required.
    pub n: u32,
    /// Expected duration on the fastest machine.
    pub mu0: u32,
    pub is_short: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobArrivalSequence {
    pub schema_version: u32,
    pub config: WorkloadConfig,
    pub jobs: Vec<JobSpec>,
}

impl JobArrivalSequence {
    pub fn empty(config: WorkloadConfig) -> Self {
        Self { schema_version: WORKLOAD_SCHEMA_VERSION, config, jobs: Vec::new() }
    }

    /// Builds a sequence from `(arrival_t, n, mu0)` triples, numbering jobs
    /// in order.
    pub fn from_triples(config: WorkloadConfig, jobs: &[(u32, u32, u32)]) -> Self {
        let jobs = jobs
            .iter()
            .enumerate()
            .map(|(i, &(arrival_t, n, mu0))| JobSpec {
                job_id: i as u32,
                arrival_t,
                n,
                mu0,
                is_short: config.short_mu_range.contains(mu0),
            })
            .collect();
        Self { schema_version: WORKLOAD_SCHEMA_VERSION, config, jobs }
    }

    pub fn short_fraction(&self) -> f64 {
        if self.jobs.is_empty() {
            return 0.0;
        }
        self.jobs.iter().filter(|j| j.is_short).count() as f64 / self.jobs.len() as f64
    }
}

/// Runs one Bernoulli(lambda) trial per timestep of the arrival window.
pub fn generate_sequence(config: &WorkloadConfig) -> Result<JobArrivalSequence> {
    config.validate()?;
    let mut rng = rng_from(config.seed);
    let mut jobs = Vec::new();
    for t in 0..config.arrival_window {
        if !rng.random_bool(config.lambda) {
            continue;
        }
        let is_short = rng.random_bool(config.beta);
        let n = config.demand_range.sample(&mut rng);
        let mu0 = if is_short { config.short_mu_range.sample(&mut rng) } else { config.long_mu_range.sample(&mut rng) };
        jobs.push(JobSpec { job_id: jobs.len() as u32, arrival_t: t, n, mu0, is_short });
    }
    Ok(JobArrivalSequence { schema_version: WORKLOAD_SCHEMA_VERSION, config: config.clone(), jobs })
}

/// Generates `count` sequences whose seeds are derived from `config.seed`.
pub fn generate_batch(config: &WorkloadConfig, count: usize) -> Result<Vec<JobArrivalSequence>> {
    (0..count)
        .map(|i| {
            let cfg =
                WorkloadConfig { seed: crate::seed::derive_seed(config.seed, &[0x5E0, i as u64]), ..config.clone() };
            generate_sequence(&cfg)
        })
        .collect()
}

pub fn expected_duration(job: &JobSpec, m: &MachineProfile) -> u32 {
    job.mu0 * m.duration_scale
}

/// Minimum expected duration over all machines.
pub fn min_expected_duration(job: &JobSpec, machines: &[MachineProfile]) -> u32 {
    machines.iter().map(|m| expected_duration(job, m)).min().expect("at least one machine")
}

/// Normal distribution of the actual duration before rounding, or `None`
/// for a perfect estimator.
pub fn duration_distribution(mu: u32, c: f64) -> Option<Normal<f64>> {
    if c.is_infinite() {
        return None;
    }
    let sd = (mu as f64 / c).sqrt();
    Some(Normal::new(mu as f64, sd).expect("finite standard deviation"))
}

/// Draws an actual duration from Normal(mu, mu/c), rounded to the nearest
/// timestep and clamped to at least one.
pub fn sample_actual_duration<R: Rng + ?Sized>(job: &JobSpec, m: &MachineProfile, c: f64, rng: &mut R) -> u32 {
    let mu = expected_duration(job, m);
    match duration_distribution(mu, c) {
        None => mu,
        Some(dist) => {
            let x = dist.sample(rng).round();
            if x < 1.0 {
                1
            } else {
                x as u32
            }
        }
    }
}

/// Energy per processor per timestep; job-independent after normalization.
pub fn energy_profile(_job: &JobSpec, m: &MachineProfile) -> f64 {
    m.energy_rate
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WorkloadHeader {
    schema_version: u32,
    format: String,
    count: usize,
}

const WORKLOAD_FORMAT: &str = "eas-workload";

/// Writes a workload file: a header line followed by one JSON object per
/// sequence.
pub fn write_workload<W: Write>(mut out: W, sequences: &[JobArrivalSequence]) -> Result<()> {
    let header = WorkloadHeader {
        schema_version: WORKLOAD_SCHEMA_VERSION,
        format: WORKLOAD_FORMAT.to_string(),
        count: sequences.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for seq in sequences {
        serde_json::to_writer(&mut out, seq)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_workload<R: BufRead>(input: R) -> Result<Vec<JobArrivalSequence>> {
    let mut lines = input.lines();
    let header: WorkloadHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?).map_err(|e| Error::Format(format!("bad workload header: {e}")))?,
        None => return Err(Error::Format("workload file is empty (missing header)".into())),
    };
    if header.format != WORKLOAD_FORMAT || header.schema_version != WORKLOAD_SCHEMA_VERSION {
        return Err(Error::Format(format!("unsupported workload file {:?} v{}", header.format, header.schema_version)));
    }
    let mut sequences = Vec::with_capacity(header.count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: JobArrivalSequence =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("bad sequence record: {e}")))?;
        sequences.push(seq);
    }
    if sequences.len() != header.count {
        return Err(Error::Format(format!("header announces {} sequences, found {}", header.count, sequences.len())));
    }
    Ok(sequences)
}

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use eas_core::heuristics::run_heuristic;
use eas_core::metrics::{cdf_points, median, ConservingReport, JobOutcome, Report};
use eas_core::trainer::{eval_seed, mean_episode_edp, train_with, with_threads};
use eas_core::{
    evaluate, load_checkpoint_for, read_workload, save_checkpoint, write_workload, ClusterConfig, EvalMode,
    HeuristicKind, JobArrivalSequence, PolicyLayout, PolicyParams, Trajectory,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::failure::{usage, Failure};

type CmdResult<T = ()> = Result<T, Failure>;

fn create(path: &Path) -> CmdResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::from(e).context(path.display()))
}

fn read_sequences(path: &Path) -> CmdResult<Vec<JobArrivalSequence>> {
    let file = File::open(path).map_err(|e| Failure::from(e).context(path.display()))?;
    read_workload(BufReader::new(file)).map_err(|e| Failure::from(e).context(path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn load_policy(path: &Path, cluster: &ClusterConfig) -> CmdResult<PolicyParams> {
    let (params, _) = load_checkpoint_for(path, &PolicyLayout::for_cluster(cluster))
        .map_err(|e| Failure::from(e).context(path.display()))?;
    Ok(params)
}

/// Something that schedules: a trained policy or a heuristic.
pub enum Subject {
    Policy { label: String, params: Box<PolicyParams> },
    Heuristic(HeuristicKind),
}

impl Subject {
    pub fn policy(path: &Path, cluster: &ClusterConfig) -> CmdResult<Self> {
        let label = path.file_stem().map_or_else(|| "policy".into(), |s| s.to_string_lossy().into_owned());
        Ok(Subject::Policy { label, params: Box::new(load_policy(path, cluster)?) })
    }

    /// Parses `esjf`, `random`, `greedy_energy`, `always_hold` or
    /// `checkpoint:PATH`.
    pub fn parse(spec: &str, cluster: &ClusterConfig) -> CmdResult<Self> {
        match spec.strip_prefix("checkpoint:") {
            Some(path) => match Self::policy(Path::new(path), cluster)? {
                Subject::Policy { label, params } => Ok(Subject::Policy { label: format!("ckpt_{label}"), params }),
                other => Ok(other),
            },
            None => Ok(Subject::Heuristic(HeuristicKind::from_str(spec)?)),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Subject::Policy { label, .. } => label,
            Subject::Heuristic(kind) => kind.name(),
        }
    }

    /// Runs every sequence with the evaluation seed of its index, so all
    /// subjects see the same sampled durations.
    pub fn run(&self, seqs: &[JobArrivalSequence], cfg: &RunConfig) -> CmdResult<Vec<Trajectory>> {
        let (cluster, seed) = (&cfg.cluster, cfg.train.seed);
        let trajs = match self {
            Subject::Policy { params, .. } => {
                with_threads(cfg.train.threads, || evaluate(params, seqs, cluster, seed, cfg.train.eval_mode))??
            }
            Subject::Heuristic(kind) => seqs
                .iter()
                .enumerate()
                .map(|(i, s)| run_heuristic(*kind, s, cluster, eval_seed(seed, i)))
                .collect::<Result<_, _>>()?,
        };
        Ok(trajs)
    }
}

#[derive(Debug, Serialize)]
pub struct GenSummary {
    pub sequences: usize,
    pub jobs: usize,
    pub mean_jobs_per_sequence: f64,
    pub short_jobs: usize,
    pub long_jobs: usize,
}

pub fn gen(cfg: &RunConfig, count: usize, file: &str) -> CmdResult<GenSummary> {
    let seqs = eas_core::generate_batch(&cfg.workload, count)?;
    let path = cfg.output_file(file)?;
    write_workload(create(&path)?, &seqs).map_err(|e| Failure::from(e).context(path.display()))?;
    let jobs: usize = seqs.iter().map(|s| s.jobs.len()).sum();
    let short_jobs = seqs.iter().flat_map(|s| &s.jobs).filter(|j| j.is_short).count();
    Ok(GenSummary {
        sequences: count,
        jobs,
        mean_jobs_per_sequence: if count == 0 { 0.0 } else { jobs as f64 / count as f64 },
        short_jobs,
        long_jobs: jobs - short_jobs,
    })
}

pub fn train(cfg: &RunConfig, quiet: bool) -> CmdResult<PathBuf> {
    let mut train_cfg = cfg.train.clone();
    if train_cfg.checkpoint_every > 0 && train_cfg.checkpoint_dir.is_none() {
        let dir = cfg.output_file("checkpoints")?;
        std::fs::create_dir_all(&dir)?;
        train_cfg.checkpoint_dir = Some(dir);
    }
    let curve_path = cfg.output_file("learning_curve.csv")?;
    let mut curve = csv::Writer::from_writer(create(&curve_path)?);
    let out = train_with(&train_cfg, &cfg.cluster, &cfg.workload, |point, _| {
        if !quiet {
            eprintln!(
                "iter {:>5}  return {:>11.2}  edp {:>9.3}  esjf {:>9.3}  {:>7.1}s",
                point.iteration, point.mean_return, point.mean_norm_edp, point.esjf_reference_edp, point.wall_time
            );
        }
        curve.serialize(point).map_err(|e| eas_core::Error::Io(e.into()))
    })?;
    curve.flush()?;
    let policy = cfg.output_file("policy.deas")?;
    save_checkpoint(&out.params, Some(&out.adam), &policy)?;
    let effective = toml::to_string(cfg).map_err(|e| usage(format!("cannot serialize config: {e}")))?;
    std::fs::write(cfg.output_file("run_config.toml")?, effective)?;
    Ok(policy)
}

#[derive(Debug, Serialize)]
struct MetricsRow {
    sequence: usize,
    job_id: u32,
    arrival_t: u32,
    n: u32,
    mu0: u32,
    machine: Option<usize>,
    energy: f64,
    delay: u32,
    delay_norm: f64,
    edp: f64,
    censored: bool,
}

impl MetricsRow {
    fn new(sequence: usize, o: &JobOutcome) -> Self {
        Self {
            sequence,
            job_id: o.job_id,
            arrival_t: o.arrival_t,
            n: o.n,
            mu0: o.mu0,
            machine: o.machine,
            energy: o.energy,
            delay: o.delay,
            delay_norm: o.delay_norm,
            edp: o.edp,
            censored: o.censored,
        }
    }
}

const METRICS_HEADER: [&str; 11] =
    ["sequence", "job_id", "arrival_t", "n", "mu0", "machine", "energy", "delay", "delay_norm", "edp", "censored"];

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub subject: String,
    pub seed: u64,
    pub mode: EvalMode,
    pub sequences: usize,
    pub jobs: usize,
    pub censored_jobs: usize,
    /// Mean over sequences of each sequence's average normalized EDP.
    pub mean_edp: Option<f64>,
    pub report: Option<Report>,
}

fn conserving_of(trajs: &[Trajectory]) -> ConservingReport {
    let mut total = ConservingReport::default();
    for t in trajs {
        total.merge(&t.conserving());
    }
    total
}

pub fn eval(cfg: &RunConfig, subject: &Subject, workload: &Path) -> CmdResult<EvalSummary> {
    let seqs = read_sequences(workload)?;
    let trajs = subject.run(&seqs, cfg)?;
    let mut metrics =
        csv::WriterBuilder::new().has_headers(false).from_writer(create(&cfg.output_file("metrics.csv")?)?);
    metrics.write_record(METRICS_HEADER)?;
    for (i, t) in trajs.iter().enumerate() {
        for o in &t.job_outcomes {
            metrics.serialize(MetricsRow::new(i, o))?;
        }
    }
    metrics.flush()?;
    let mean_edp = mean_episode_edp(&trajs);
    let summary = EvalSummary {
        subject: subject.label().to_string(),
        seed: cfg.train.seed,
        mode: cfg.train.eval_mode,
        sequences: seqs.len(),
        jobs: trajs.iter().map(|t| t.job_outcomes.len()).sum(),
        censored_jobs: trajs.iter().flat_map(|t| &t.job_outcomes).filter(|o| o.censored).count(),
        mean_edp,
        report: mean_edp.map(|m| Report::new(m, &conserving_of(&trajs))),
    };
    write_json(&cfg.output_file("report.json")?, &summary)?;
    Ok(summary)
}

/// One comparison row per workload file.
pub fn compare(cfg: &RunConfig, subject: &Subject, baselines: &[Subject], workloads: &[PathBuf]) -> CmdResult<PathBuf> {
    let path = cfg.output_file("comparison.csv")?;
    let mut out = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["workload".to_string(), "lambda".into(), "beta".into(), "c".into(), "sequences".into()];
    header.push(format!("{}_edp", subject.label()));
    for b in baselines {
        header.push(format!("{}_edp", b.label()));
        header.push(format!("improvement_vs_{}_pct", b.label()));
    }
    out.write_record(&header)?;
    for workload in workloads {
        let seqs = read_sequences(workload)?;
        let first = seqs.first().ok_or_else(|| usage(format!("{}: workload has no sequences", workload.display())))?;
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let own = mean_episode_edp(&subject.run(&seqs, cfg)?);
        let mut row = vec![
            workload.display().to_string(),
            first.config.lambda.to_string(),
            first.config.beta.to_string(),
            first.config.c.to_string(),
            seqs.len().to_string(),
            fmt(own),
        ];
        for b in baselines {
            let theirs = mean_episode_edp(&b.run(&seqs, cfg)?);
            row.push(fmt(theirs));
            let improvement = own.zip(theirs).map(|(p, q)| 100.0 * (q - p) / q);
            row.push(fmt(improvement));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(path)
}

#[derive(Debug, Serialize)]
pub struct AnalyzeSummary {
    pub subject: String,
    pub seed: u64,
    pub sequences: usize,
    pub conserving: ConservingReport,
    pub median_mu0_all: Option<f64>,
    pub median_mu0_hold_e: Option<f64>,
    pub median_mu0_hold_w: Option<f64>,
}

fn write_cdf(path: &Path, values: &[f64]) -> CmdResult {
    let mut out = csv::Writer::from_writer(create(path)?);
    out.write_record(["mu0", "cdf"])?;
    if !values.is_empty() {
        for (v, f) in cdf_points(values)? {
            out.write_record([v.to_string(), f.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn analyze(cfg: &RunConfig, subject: &Subject, workload: &Path) -> CmdResult<AnalyzeSummary> {
    let seqs = read_sequences(workload)?;
    let trajs = subject.run(&seqs, cfg)?;
    let conserving = conserving_of(&trajs);
    let floats = |v: &[u32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let all: Vec<f64> = seqs.iter().flat_map(|s| &s.jobs).map(|j| j.mu0 as f64).collect();
    let (hold_e, hold_w) = (floats(&conserving.hold_e_mu0), floats(&conserving.hold_w_mu0));
    write_cdf(&cfg.output_file("cdf_hold_e.csv")?, &hold_e)?;
    write_cdf(&cfg.output_file("cdf_hold_w.csv")?, &hold_w)?;
    write_cdf(&cfg.output_file("cdf_all_jobs.csv")?, &all)?;
    let summary = AnalyzeSummary {
        subject: subject.label().to_string(),
        seed: cfg.train.seed,
        sequences: seqs.len(),
        median_mu0_all: median(&all),
        median_mu0_hold_e: median(&hold_e),
        median_mu0_hold_w: median(&hold_w),
        conserving,
    };
    write_json(&cfg.output_file("conserving.json")?, &summary)?;
    Ok(summary)
}

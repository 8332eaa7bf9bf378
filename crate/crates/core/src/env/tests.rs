use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::workload::{generate_sequence, WorkloadConfig};

fn seq_of(jobs: &[(u32, u32, u32)], c: f64) -> JobArrivalSequence {
    let config = WorkloadConfig { c, ..Default::default() };
    let jobs = jobs
        .iter()
        .enumerate()
        .map(|(i, &(arrival_t, n, mu0))| JobSpec { job_id: i as u32, arrival_t, n, mu0, is_short: mu0 <= 3 })
        .collect();
    JobArrivalSequence { schema_version: 1, config, jobs }
}

fn hold(s: &SimState) -> Action {
    s.cluster().hold_action()
}

#[test]
fn paper_layout_image_is_30_by_224() {
    let cluster = ClusterConfig::default();
    assert_eq!(cluster.image_width(), 224);
    let s = SimState::reset(&seq_of(&[], 4.0), &cluster, 0).unwrap();
    let img = s.render();
    assert_eq!((img.height, img.width), (30, 224));
    assert_eq!(cluster.num_actions(), 21);
}

#[test]
fn empty_system_renders_blank_blocks() {
    let cluster = ClusterConfig::default();
    let s = SimState::reset(&seq_of(&[], 4.0), &cluster, 0).unwrap();
    let img = s.render();
    let blocks = 10 * 11 * 2;
    for r in 0..30 {
        assert_eq!(img.row_count(r, 0, blocks), 0);
    }
    // Only the last-arrival counter is nonzero (one elapsed step, no arrival).
    assert_eq!(img.ones(), 1);
}

#[test]
fn action_codec_roundtrip() {
    let c = ClusterConfig::default();
    for k in 0..2 {
        for q in 0..10 {
            assert_eq!(c.decode(c.encode(k, q)), Decoded::Schedule { machine: k, slot: q });
        }
    }
    assert_eq!(c.decode(Action(20)), Decoded::Hold);
    assert_eq!(c.encode(1, 3), Action(13));
}

/// Two machines, five queue slots; two jobs on machine 1 using two
/// processors each, one with expected duration 4 and one with 2.
#[test]
fn two_jobs_on_slow_machine_render_like_the_reference_figure() {
    let cluster =
        ClusterConfig { queue_slots: 5, horizon: 10, backlog_len: 10, last_arrival_len: 10, ..Default::default() };
    let seq = seq_of(&[(0, 2, 2), (0, 2, 1), (0, 3, 2)], f64::INFINITY);
    let mut s = SimState::reset(&seq, &cluster, 1).unwrap();
    s.step(cluster.encode(1, 0)).unwrap();
    s.step(cluster.encode(1, 0)).unwrap();
    let img = s.render();
    assert_eq!(img.width, 10 * 6 * 2 + 1 + 1);
    let m1 = 10;
    let expected_rows = [4, 4, 2, 2, 0, 0, 0, 0, 0, 0];
    for (r, &busy) in expected_rows.iter().enumerate() {
        for col in 0..10 {
            assert_eq!(img.get(r, m1 + col), u8::from(col < busy), "row {r} col {col}");
            assert_eq!(img.get(r, col), 0);
        }
    }
    // Remaining queued job (n=3, mu0=2): 2 rows on machine 0, 4 on machine 1.
    let q_base = 20;
    for r in 0..10 {
        assert_eq!(img.row_count(r, q_base, 10), if r < 2 { 3 } else { 0 });
        assert_eq!(img.row_count(r, q_base + 5 * 10, 10), if r < 4 { 3 } else { 0 });
    }
}

#[test]
fn backlog_and_last_arrival_tiles() {
    let cluster =
        ClusterConfig { queue_slots: 1, horizon: 4, backlog_len: 8, last_arrival_len: 4, ..Default::default() };
    let jobs: Vec<_> = (0..7).map(|t| (t, 1, 1)).collect();
    let mut s = SimState::reset(&seq_of(&jobs, f64::INFINITY), &cluster, 0).unwrap();
    for _ in 0..6 {
        s.step(hold(&s)).unwrap();
    }
    assert_eq!(s.backlog_len(), 6);
    let img = s.render();
    let base = 10 * 2 * 2;
    // Six backlog ones fill the first 4-tall column and two rows of the next.
    assert_eq!(img.get(3, base), 1);
    assert_eq!(img.get(1, base + 1), 1);
    assert_eq!(img.get(2, base + 1), 0);
    assert_eq!(img.row_count(0, base + 2, 1), 0);
    assert_eq!(s.since_last_arrival(), 0);
    s.step(hold(&s)).unwrap();
    assert_eq!(s.since_last_arrival(), 1);
    let img = s.render();
    assert_eq!(img.get(0, base + 2), 1);
    assert_eq!(img.get(1, base + 2), 0);
}

#[test]
fn image_text_roundtrip() {
    let cluster = ClusterConfig::default();
    let seq = generate_sequence(&WorkloadConfig { seed: 4, ..Default::default() }).unwrap();
    let s = SimState::reset(&seq, &cluster, 0).unwrap();
    let img = s.render();
    assert_eq!(StateImage::from_text(&img.to_text()).unwrap(), img);
}

#[test]
fn valid_actions_examples() {
    let cluster = ClusterConfig::default();
    let s = SimState::reset(&seq_of(&[], 4.0), &cluster, 0).unwrap();
    assert_eq!(s.valid_actions(), vec![Action(20)]);

    let s = SimState::reset(&seq_of(&[(0, 3, 2)], 4.0), &cluster, 0).unwrap();
    assert_eq!(s.valid_actions(), vec![Action(0), Action(10), Action(20)]);

    // A full-width job spanning the horizon saturates machine 0.
    let small = ClusterConfig { horizon: 5, backlog_len: 5, last_arrival_len: 5, ..Default::default() };
    let mut s = SimState::reset(&seq_of(&[(0, 10, 5), (0, 1, 1), (0, 2, 2)], f64::INFINITY), &small, 0).unwrap();
    s.step(small.encode(0, 0)).unwrap();
    let valid = s.valid_actions();
    assert!(valid.iter().all(|a| !matches!(small.decode(*a), Decoded::Schedule { machine: 0, .. })));
    assert!(valid.contains(&small.encode(1, 0)));
}

#[test]
fn hold_on_empty_system_advances_with_zero_reward() {
    let cluster = ClusterConfig::default();
    let mut s = SimState::reset(&seq_of(&[(40, 1, 1)], 4.0), &cluster, 0).unwrap();
    let out = s.step(hold(&s)).unwrap();
    assert!(out.time_advanced && out.valid);
    assert_eq!(out.reward, 0.0);
    assert_eq!(s.clock(), 1);
}

#[test]
fn valid_schedule_refills_from_backlog() {
    let cluster = ClusterConfig { queue_slots: 2, ..Default::default() };
    let jobs = [(0, 1, 1), (1, 1, 1), (2, 1, 1), (3, 1, 1)];
    let mut s = SimState::reset(&seq_of(&jobs, 4.0), &cluster, 0).unwrap();
    for _ in 0..3 {
        s.step(hold(&s)).unwrap();
    }
    assert_eq!(s.queue_ids(), vec![0, 1]);
    assert_eq!(s.backlog_len(), 2);
    let out = s.step(cluster.encode(1, 0)).unwrap();
    assert!(!out.time_advanced);
    assert_eq!(out.scheduled_job, Some(0));
    assert_eq!(out.reward, 0.0);
    assert_eq!(s.queue_ids(), vec![1, 2]);
    assert_eq!(s.backlog_len(), 1);
    assert_eq!(s.clock(), 3);
}

#[test]
fn invalid_action_behaves_as_hold() {
    let cluster = ClusterConfig::default();
    let seq = generate_sequence(&WorkloadConfig { seed: 12, ..Default::default() }).unwrap();
    let mut a = SimState::reset(&seq, &cluster, 3).unwrap();
    let mut b = a.clone();
    // Slot 9 is empty at t = 0 (at most one arrival per timestep).
    let oa = a.step(cluster.encode(0, 9)).unwrap();
    let ob = b.step(hold(&b)).unwrap();
    assert!(!oa.valid && ob.valid);
    assert!(oa.time_advanced);
    assert_eq!(oa.reward, ob.reward);
    assert_eq!(a.clock(), b.clock());
    assert_eq!(a.queue_ids(), b.queue_ids());
    assert_eq!(a.render(), b.render());
}

#[test]
fn running_job_reward() {
    let cluster = ClusterConfig::default();
    let mut s = SimState::reset(&seq_of(&[(0, 2, 3)], f64::INFINITY), &cluster, 0).unwrap();
    s.step(cluster.encode(1, 0)).unwrap();
    let out = s.step(hold(&s)).unwrap();
    assert!((out.reward + 4.0 / 3.0).abs() < 1e-12, "{}", out.reward);
    // Still running next step: same per-step charge.
    let out = s.step(hold(&s)).unwrap();
    assert!((out.reward + 4.0 / 3.0).abs() < 1e-12);
}

#[test]
fn waiting_job_reward_uses_min_energy() {
    let cluster = ClusterConfig::default();
    let mut s = SimState::reset(&seq_of(&[(0, 2, 3)], 4.0), &cluster, 0).unwrap();
    assert!((s.records()[0].min_energy - 4.0).abs() < 1e-12);
    let out = s.step(hold(&s)).unwrap();
    assert!((out.reward + 4.0 / 3.0).abs() < 1e-12);
}

#[test]
fn delta_correction_for_late_fast_placement() {
    // Job waits 2 steps, then goes to machine 0: E = 2*9.809*3/3, E* = 4.
    let cluster = ClusterConfig::default();
    let mut s = SimState::reset(&seq_of(&[(0, 2, 3)], f64::INFINITY), &cluster, 0).unwrap();
    s.step(hold(&s)).unwrap();
    s.step(hold(&s)).unwrap();
    s.step(cluster.encode(0, 0)).unwrap();
    let out = s.step(hold(&s)).unwrap();
    let e = 2.0 * 9.809;
    let expected = -(e / 3.0 + (e - 4.0) * 2.0 / 3.0);
    assert!((out.reward - expected).abs() < 1e-12);
}

#[test]
fn empty_sequence_terminates_after_window() {
    let cluster = ClusterConfig::default();
    let mut s = SimState::reset(&seq_of(&[], 4.0), &cluster, 0).unwrap();
    assert_eq!(s.queue_len(), 0);
    let mut total = 0.0;
    let mut steps = 0;
    while !s.is_terminal() {
        total += s.step(hold(&s)).unwrap().reward;
        steps += 1;
    }
    assert_eq!(steps, 60);
    assert_eq!(total, 0.0);
    assert!(matches!(s.step(hold(&s)), Err(crate::Error::Usage(_))));
}

#[test]
fn single_arrival_at_zero_is_in_slot_zero() {
    let cluster = ClusterConfig::default();
    let s = SimState::reset(&seq_of(&[(0, 4, 2)], 4.0), &cluster, 0).unwrap();
    assert_eq!(s.queue_ids(), vec![0]);
    assert_eq!(s.since_last_arrival(), 0);
    assert!(!s.is_terminal());
}

#[test]
fn oversized_demand_is_config_error() {
    let cluster = ClusterConfig::default();
    assert!(matches!(SimState::reset(&seq_of(&[(0, 11, 2)], 4.0), &cluster, 0), Err(crate::Error::Config(_))));
    let bad = ClusterConfig { backlog_len: 31, ..Default::default() };
    assert!(matches!(SimState::reset(&seq_of(&[], 4.0), &bad, 0), Err(crate::Error::Config(_))));
}

#[test]
fn truncation_at_cap() {
    let cluster = ClusterConfig { max_episode_timesteps: 70, ..Default::default() };
    let mut s = SimState::reset(&seq_of(&[(0, 2, 3)], 4.0), &cluster, 0).unwrap();
    while !s.is_terminal() {
        s.step(hold(&s)).unwrap();
    }
    assert_eq!(s.clock(), 70);
    assert_eq!(s.queue_len(), 1);
}

#[test]
fn all_completed_is_terminal() {
    let cluster = ClusterConfig::default();
    let mut s = SimState::reset(&seq_of(&[(0, 2, 3)], 4.0), &cluster, 0).unwrap();
    s.step(cluster.encode(0, 0)).unwrap();
    while !s.is_terminal() {
        s.step(hold(&s)).unwrap();
    }
    assert_eq!(s.clock(), 60);
    assert!(s.records()[0].completion.is_some());
}

#[test]
fn same_seed_same_trajectory() {
    let cluster = ClusterConfig::default();
    let seq = generate_sequence(&WorkloadConfig { seed: 3, lambda: 0.9, ..Default::default() }).unwrap();
    let run = |seed| {
        let mut s = SimState::reset(&seq, &cluster, seed).unwrap();
        let mut rng = rng_from(1);
        let mut rewards = Vec::new();
        while !s.is_terminal() {
            let a = Action(rng.random_range(0..cluster.num_actions()));
            rewards.push(s.step(a).unwrap().reward);
        }
        (rewards, s.render())
    };
    assert_eq!(run(5), run(5));
}

/// Runs a uniformly random policy and checks per-step invariants.
fn checked_random_episode(seq: &JobArrivalSequence, cluster: &ClusterConfig, seed: u64) -> (SimState, f64) {
    let mut s = SimState::reset(seq, cluster, seed).unwrap();
    let mut rng = rng_from(seed ^ 0xABCD);
    let mut total = 0.0;
    let arrived = |s: &SimState| s.records().iter().filter(|r| r.status != JobStatus::Pending).count();
    while !s.is_terminal() {
        let valid = s.valid_actions();
        // Bias toward valid schedules so episodes drain.
        let a = if rng.random_bool(0.7) {
            valid[rng.random_range(0..valid.len())]
        } else {
            Action(rng.random_range(0..cluster.num_actions()))
        };
        let before = s.clock();
        let out = s.step(a).unwrap();
        total += out.reward;
        if out.valid && !out.time_advanced {
            assert_eq!(s.clock(), before);
            assert_eq!(out.reward, 0.0);
        } else {
            assert_eq!(s.clock(), before + 1);
        }
        for busy in s.actual_busy() {
            assert!(busy <= cluster.processors);
        }
        let counts = s.records().iter().fold([0usize; 5], |mut acc, r| {
            acc[r.status as usize] += 1;
            acc
        });
        assert_eq!(counts[1], s.queue_len());
        assert_eq!(counts[2], s.backlog_len());
        assert_eq!(arrived(&s), counts[1] + counts[2] + counts[3] + counts[4]);
    }
    for r in s.records() {
        if let (Some(start), Some(end)) = (r.start, r.completion) {
            assert_eq!(end - start, r.actual_duration.unwrap());
        }
    }
    (s, total)
}

#[test]
fn reward_identity_on_random_episodes() {
    let cluster = ClusterConfig::default();
    for seed in 0..30 {
        let cfg = WorkloadConfig {
            lambda: 0.2 + 0.025 * seed as f64,
            c: if seed % 3 == 0 { f64::INFINITY } else { 1.0 + seed as f64 },
            seed,
            ..Default::default()
        };
        let seq = generate_sequence(&cfg).unwrap();
        let (s, total) = checked_random_episode(&seq, &cluster, seed);
        assert!(s.records().iter().all(|r| r.status == JobStatus::Completed));
        let edp = s.completed_edp();
        assert!((total + edp).abs() <= 1e-9 * edp.max(1.0), "return {total} vs edp {edp}");
    }
}

#[test]
fn no_correction_for_min_energy_placement_with_exact_durations() {
    // c = inf, job placed on machine 1 (its least-energy machine) after waiting.
    let cluster = ClusterConfig::default();
    let mut s = SimState::reset(&seq_of(&[(0, 2, 3)], f64::INFINITY), &cluster, 0).unwrap();
    s.step(hold(&s)).unwrap();
    s.step(hold(&s)).unwrap();
    s.step(cluster.encode(1, 0)).unwrap();
    let out = s.step(hold(&s)).unwrap();
    assert!((out.reward + 4.0 / 3.0).abs() < 1e-12);
    let r = &s.records()[0];
    assert_eq!(r.energy.unwrap(), r.min_energy);
}

#[test]
fn late_completion_postpones_waiting_job() {
    // Full-width jobs back to back on machine 0; second waits for the first
    // to depart whatever its sampled duration.
    let cluster = ClusterConfig::default();
    let seq = seq_of(&[(0, 10, 10), (0, 10, 3)], 0.5);
    for seed in 0..20 {
        let mut s = SimState::reset(&seq, &cluster, seed).unwrap();
        s.step(cluster.encode(0, 0)).unwrap();
        s.step(cluster.encode(0, 0)).unwrap();
        assert_eq!(s.machines()[0].waiting[0].planned_start, 10);
        while !s.is_terminal() {
            s.step(hold(&s)).unwrap();
        }
        let r = s.records();
        assert_eq!(r[1].start, r[0].completion);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn image_width_formula(k in 1usize..4, n in 1u32..8, h in 1u32..12, q in 1u32..6, bt in 0u32..4, lt in 0u32..4) {
        let machines = (0..k)
            .map(|i| MachineProfile { machine_id: i, duration_scale: 1 + i as u32, energy_rate: 1.0 + i as f64 })
            .collect();
        let cluster = ClusterConfig {
            machines, processors: n, horizon: h, queue_slots: q,
            backlog_len: bt * h, last_arrival_len: lt * h, max_episode_timesteps: 200,
        };
        let s = SimState::reset(&seq_of(&[], 4.0), &cluster, 0).unwrap();
        let img = s.render();
        prop_assert_eq!(img.width, n as usize * (1 + q as usize) * k + bt as usize + lt as usize);
        prop_assert_eq!(img.height, h as usize);
    }

    #[test]
    fn occupancy_block_matches_expected_counts(seed in 0u64..500, decisions in 1usize..40) {
        let cluster = ClusterConfig::default();
        let seq = generate_sequence(&WorkloadConfig { seed, lambda: 0.8, ..Default::default() }).unwrap();
        let mut s = SimState::reset(&seq, &cluster, seed).unwrap();
        let mut rng = rng_from(seed);
        for _ in 0..decisions {
            if s.is_terminal() { break; }
            let valid = s.valid_actions();
            s.step(valid[rng.random_range(0..valid.len())]).unwrap();
        }
        let img = s.render();
        for k in 0..2 {
            let occ = s.expected_occupancy(k);
            for (r, &busy) in occ.iter().enumerate() {
                prop_assert_eq!(img.row_count(r, k * 10, 10), busy as usize);
            }
        }
        prop_assert!(img.ones() <= img.height * img.width);
    }
}

proptest! {
    #[test]
    fn set_run_matches_pixelwise(row in 0usize..3, col in 0usize..200, len in 0usize..150) {
        let len = len.min(224 - col);
        let mut a = StateImage::zeros(3, 224);
        let mut b = StateImage::zeros(3, 224);
        a.set_run(row, col, len);
        for c in col..col + len {
            b.set(row, c);
        }
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.ones(), len);
    }
}

use super::*;
use crate::policy::{adam_update, grad_log_prob, AdamConfig, ParamBlocks, PolicyParams};
use crate::workload::generate_sequence;

fn small_workload(seed: u64) -> WorkloadConfig {
    WorkloadConfig { arrival_window: 12, seed, ..Default::default() }
}

fn small_train(seed: u64) -> TrainConfig {
    TrainConfig { sequences: 2, trajectories: 3, iterations: 2, seed, ..Default::default() }
}

#[test]
fn returns() {
    assert_eq!(compute_returns(&[-1.0, -2.0, -3.0], 1.0), vec![-6.0, -5.0, -3.0]);
    assert_eq!(compute_returns(&[-1.0, -2.0], 0.5), vec![-2.0, -2.0]);
    assert_eq!(compute_returns(&[0.0; 4], 0.9), vec![0.0; 4]);
    assert!(compute_returns(&[], 1.0).is_empty());
}

#[test]
fn baselines() {
    assert_eq!(compute_baselines(&[vec![4.0], vec![6.0]]), vec![5.0]);
    assert_eq!(compute_baselines(&[vec![1.0, 2.0, 3.0]]), vec![1.0, 2.0, 3.0]);
    assert_eq!(compute_baselines(&[vec![2.0, 7.0], vec![4.0]]), vec![3.0, 7.0]);
}

#[test]
fn baseline_advantages_average_to_zero() {
    let cluster = ClusterConfig::default();
    let params = initial_params(&cluster, 1).unwrap();
    let net = Network::new(&params);
    let seq = generate_sequence(&small_workload(3)).unwrap();
    let returns: Vec<Vec<f64>> = (0..5)
        .map(|m| {
            let mut cache = PatternCache::new(&params.layout);
            let t = play(&net, &mut cache, &seq, &cluster, 9, m, EvalMode::Sampled).unwrap();
            compute_returns(&t.rewards(), 1.0)
        })
        .collect();
    let b = compute_baselines(&returns);
    for (t, &bt) in b.iter().enumerate() {
        let present: Vec<f64> = returns.iter().filter_map(|v| v.get(t)).map(|v| v - bt).collect();
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        assert!(mean.abs() <= 1e-9 * bt.abs().max(1.0));
    }
}

#[test]
fn empty_sequence_holds_until_window_end() {
    let cluster = ClusterConfig::default();
    let params = PolicyParams::zeros(PolicyLayout::for_cluster(&cluster));
    let seq = JobArrivalSequence::empty(WorkloadConfig::default());
    let t = run_episode(&Network::new(&params), &seq, &cluster, 0, EvalMode::Sampled).unwrap();
    assert_eq!(t.steps.len(), 60);
    assert!(t.steps.iter().all(|s| s.action == cluster.hold_action() && s.observation.is_none()));
    assert_eq!(t.total_return, 0.0);
    assert!(!t.truncated);
}

#[test]
fn episodes_are_reproducible_and_account_for_time() {
    let cluster = ClusterConfig::default();
    let params = PolicyParams::zeros(PolicyLayout::for_cluster(&cluster));
    let net = Network::new(&params);
    for seed in 0..4 {
        let seq = generate_sequence(&WorkloadConfig { seed, ..Default::default() }).unwrap();
        let a = run_episode(&net, &seq, &cluster, seed, EvalMode::Sampled).unwrap();
        let b = run_episode(&net, &seq, &cluster, seed, EvalMode::Sampled).unwrap();
        assert_eq!(a.rewards(), b.rewards());
        assert_eq!(a.job_outcomes, b.job_outcomes);
        let advances = a.steps.iter().filter(|s| s.time_advanced).count();
        assert_eq!(advances as u32, a.final_clock);
        if !a.truncated {
            let v0 = compute_returns(&a.rewards(), 1.0)[0];
            assert!((v0 + a.total_edp()).abs() <= 1e-9 * a.total_edp());
        }
    }
}

#[test]
fn single_trajectory_gives_zero_gradient() {
    let cluster = ClusterConfig::default();
    let cfg = TrainConfig { sequences: 2, trajectories: 1, ..Default::default() };
    let seqs = generate_batch(&small_workload(1), 2).unwrap();
    let mut params = initial_params(&cluster, 1).unwrap();
    let before = params.clone();
    let mut adam = AdamState::new(&params);
    train_iteration(&mut params, &mut adam, &seqs, &cluster, &cfg, 0).unwrap();
    assert_eq!(params, before);
}

/// Replays a trajectory's actions to recover every observation image.
fn replay_images(seq: &JobArrivalSequence, cluster: &ClusterConfig, env: u64, t: &Trajectory) -> Vec<StateImage> {
    let mut s = SimState::reset(seq, cluster, env).unwrap();
    t.steps
        .iter()
        .map(|step| {
            let img = s.render();
            s.step(step.action).unwrap();
            img
        })
        .collect()
}

use crate::env::StateImage;

#[test]
fn gradient_matches_hand_summation() {
    let cluster = ClusterConfig::default();
    let cfg = TrainConfig { sequences: 1, trajectories: 2, seed: 17, ..Default::default() };
    let seqs = generate_batch(&small_workload(5), 1).unwrap();
    let params = initial_params(&cluster, 2).unwrap();
    let (grad, _) = policy_gradient(&params, &seqs, &cluster, &cfg, 3).unwrap();

    let env = env_seed(cfg.seed, 3, 0);
    let net = Network::new(&params);
    let trajs: Vec<Trajectory> = (0..2)
        .map(|m| {
            play(
                &net,
                &mut PatternCache::new(&params.layout),
                &seqs[0],
                &cluster,
                env,
                derive_seed(env, &[TAG_ACTIONS, m]),
                EvalMode::Sampled,
            )
            .unwrap()
        })
        .collect();
    let v: Vec<Vec<f64>> = trajs.iter().map(|t| compute_returns(&t.rewards(), 1.0)).collect();
    let b = compute_baselines(&v);
    let mut expected = ParamBlocks::zeros(&params.layout);
    let mut terms = 0;
    for (m, t) in trajs.iter().enumerate() {
        let imgs = replay_images(&seqs[0], &cluster, env, t);
        for (i, step) in t.steps.iter().enumerate() {
            if step.observation.is_some() {
                let g = grad_log_prob(&params, &imgs[i], step.action).unwrap();
                expected.add_scaled((v[m][i] - b[i]) / 2.0, &g);
                terms += 1;
            }
        }
    }
    assert!(terms > 0);
    let scale = expected.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for (a, e) in grad.iter().zip(expected.iter()) {
        assert!((a - e).abs() <= 1e-10 * scale, "{a} vs {e}");
    }
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let cluster = ClusterConfig::default();
    let wl = small_workload(7);
    let one = train(&small_train(4), &cluster, &wl).unwrap();
    let again = train(&small_train(4), &cluster, &wl).unwrap();
    let two = train(&TrainConfig { threads: 2, ..small_train(4) }, &cluster, &wl).unwrap();
    assert_eq!(one.params, again.params);
    assert_eq!(one.params, two.params);
    assert_eq!(one.curve.len(), 2);
    assert_ne!(one.params, initial_params(&cluster, 4).unwrap());
    for (a, b) in one.curve.iter().zip(&two.curve) {
        assert_eq!(
            (a.mean_return, a.mean_norm_edp, a.esjf_reference_edp),
            (b.mean_return, b.mean_norm_edp, b.esjf_reference_edp)
        );
    }
}

#[test]
fn zero_iterations_return_initial_params() {
    let cluster = ClusterConfig::default();
    let out = train(&TrainConfig { iterations: 0, ..small_train(6) }, &cluster, &small_workload(1)).unwrap();
    assert!(out.curve.is_empty());
    assert_eq!(out.params, initial_params(&cluster, 6).unwrap());
}

#[test]
fn checkpoints_are_written_periodically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        iterations: 3,
        checkpoint_every: 2,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..small_train(1)
    };
    let out = train(&cfg, &ClusterConfig::default(), &small_workload(2)).unwrap();
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("checkpoint_00002.deas")]);
    assert_ne!(crate::policy::load_checkpoint(&dir.path().join("checkpoint_00002.deas")).unwrap().0, out.params);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { sequences: 0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
    assert_eq!("sampled".parse::<EvalMode>().unwrap(), EvalMode::Sampled);
    assert!("best".parse::<EvalMode>().is_err());
}

#[test]
fn entropy_bonus_moves_parameters_without_advantages() {
    let cluster = ClusterConfig::default();
    let seqs = generate_batch(&small_workload(1), 2).unwrap();
    let cfg = TrainConfig { sequences: 2, trajectories: 1, entropy_bonus: 0.01, ..Default::default() };
    let mut params = initial_params(&cluster, 1).unwrap();
    let before = params.clone();
    let (grad, _) = policy_gradient(&params, &seqs, &cluster, &cfg, 0).unwrap();
    assert!(grad.iter().any(|&v| v != 0.0));
    let mut adam = AdamState::new(&params);
    train_iteration(&mut params, &mut adam, &seqs, &cluster, &cfg, 0).unwrap();
    assert_ne!(params, before);
}

#[test]
fn gradient_clipping_rescales_before_adam() {
    let cluster = ClusterConfig::default();
    let seqs = generate_batch(&small_workload(2), 2).unwrap();
    let plain = TrainConfig { sequences: 2, trajectories: 3, seed: 3, ..Default::default() };
    let clipped = TrainConfig { max_grad_norm: Some(1e-3), ..plain.clone() };
    let params = initial_params(&cluster, 1).unwrap();
    let (mut grad, _) = policy_gradient(&params, &seqs, &cluster, &plain, 0).unwrap();
    let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 1e-3);
    grad.scale(1e-3 / norm);

    let mut expected = params.clone();
    adam_update(&mut expected, &mut AdamState::new(&params), &grad, plain.lr, &AdamConfig::default()).unwrap();
    let mut actual = params.clone();
    train_iteration(&mut actual, &mut AdamState::new(&params), &seqs, &cluster, &clipped, 0).unwrap();
    assert_eq!(actual, expected);
}

#[test]
fn pool_sampling_draws_distinct_subsets() {
    let pool = generate_batch(&small_workload(3), 6).unwrap();
    let cfg = TrainConfig { sequences: 2, pool_size: Some(6), seed: 1, ..Default::default() };
    let picks: Vec<Vec<u64>> =
        (0..8).map(|it| iteration_sequences(&pool, &cfg, it).iter().map(|s| s.config.seed).collect()).collect();
    for p in &picks {
        assert_eq!(p.len(), 2);
        assert_ne!(p[0], p[1]);
        assert!(p.iter().all(|seed| pool.iter().any(|s| s.config.seed == *seed)));
    }
    assert!(picks.windows(2).any(|w| w[0] != w[1]));
    assert_eq!(iteration_sequences(&pool, &cfg, 5)[0].jobs, iteration_sequences(&pool, &cfg, 5)[0].jobs);
    let all = TrainConfig { sequences: 6, ..cfg.clone() };
    assert_eq!(iteration_sequences(&pool, &all, 0).len(), 6);
    assert!(TrainConfig { pool_size: Some(1), ..cfg.clone() }.validate().is_err());
    assert!(TrainConfig { max_grad_norm: Some(0.0), ..cfg.clone() }.validate().is_err());
    assert!(TrainConfig { entropy_bonus: -1.0, ..cfg }.validate().is_err());
}

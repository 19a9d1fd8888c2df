use prl_core::agent::{Agent, SacConfig, Transitions};
use prl_core::env::{EnvKind, EnvSpec, Observation};
use prl_core::numerics::{Matrix, ParamStore, Tape};
use prl_core::psr::{extract_core_tests, psr_loss, CoreTestSpec, Extraction};
use prl_core::rollout::{tokens_for, Trajectory};
use prl_core::seqmodel::{Backbone, ModelConfig, ReprModel};
use prl_core::trainer::{Behavior, Mode, RunConfig, Trainer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(env: EnvKind, mode: Mode) -> RunConfig {
    RunConfig {
        env,
        mode,
        k: (env == EnvKind::RepeatPrevious).then_some(2),
        horizon: (env == EnvKind::RepeatPrevious).then_some(8),
        embed_dim: 8,
        layers: 1,
        heads: 2,
        predictor_hidden: 4,
        hidden: 16,
        batch_size: 4,
        burn_in_episodes: 16,
        burn_in_updates: 3,
        burn_in_eval_every: 2,
        holdout_episodes: 8,
        t_gen: 2,
        t_psr: 3,
        t_rl: 4,
        total_steps: 40,
        eval_every: 20,
        eval_episodes: 4,
        ..RunConfig::default()
    }
}

#[test]
fn marked_steps_are_uniform_over_the_horizon() {
    let cfg = small_config(EnvKind::RepeatPrevious, Mode::Drl2);
    let mut trainer = Trainer::new(cfg).unwrap();
    let eps = trainer.generate(10_000, Behavior::Uniform, true).unwrap();
    let h = trainer.spec.horizon;
    let mut counts = vec![0usize; h];
    for e in &eps {
        counts[e.test_step.expect("every episode is marked")] += 1;
    }
    let expected = eps.len() as f64 / h as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 7 degrees of freedom, significance 0.01.
    assert!(chi2 < 18.475, "chi2 {chi2} counts {counts:?}");
}

#[test]
fn test_action_is_taken_at_the_mark() {
    // Battleship's test action never repeats a fired cell, so at the mark the
    // action must be a fresh cell even under a policy that might repeat.
    let cfg = small_config(EnvKind::Battleship, Mode::Drl2);
    let mut trainer = Trainer::new(cfg).unwrap();
    let eps = trainer.generate(200, Behavior::Sample, true).unwrap();
    for e in eps.iter().filter(|e| e.test_step.is_some_and(|t| t < e.len())) {
        let t = e.test_step.unwrap();
        assert!(!e.actions[..t].contains(&e.actions[t]));
    }
}

#[test]
fn epoch_performs_the_scheduled_updates() {
    for mode in [Mode::Drl2, Mode::E2e, Mode::Stateless] {
        let mut trainer = Trainer::new(small_config(EnvKind::RepeatPrevious, mode)).unwrap();
        trainer.burn_in().unwrap();
        let before = trainer.counters;
        let stats = trainer.train_epoch().unwrap();
        let expect_psr = if mode == Mode::Drl2 { 3 } else { 0 };
        assert_eq!(stats.psr_updates, expect_psr);
        assert_eq!(stats.rl_updates, 4);
        assert_eq!(trainer.counters.psr_updates - before.psr_updates, expect_psr);
        assert_eq!(trainer.counters.episodes - before.episodes, 2);
    }
}

#[test]
fn fractional_ratio_keeps_exact_totals() {
    let mut cfg = small_config(EnvKind::DelayedCatch, Mode::Drl2);
    cfg.psr_rl_ratio = Some(0.3);
    cfg.burn_in_episodes = 0;
    cfg.t_rl = 7;
    let mut trainer = Trainer::new(cfg).unwrap();
    for _ in 0..5 {
        trainer.train_epoch().unwrap();
        let rl = trainer.counters.rl_updates;
        assert_eq!(trainer.counters.psr_updates, (0.3 * rl as f64 + 1e-9).floor() as u64);
    }
    assert_eq!(trainer.counters.rl_updates, 35);
    assert_eq!(trainer.counters.psr_updates, 10);
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let run = |seed| {
        let mut cfg = small_config(EnvKind::RepeatPrevious, Mode::Drl2);
        cfg.seed = seed;
        Trainer::new(cfg).unwrap().run(None).unwrap()
    };
    let (a, b, c) = (run(4), run(4), run(5));
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.burn_in, b.burn_in);
    assert_ne!(a.metrics, c.metrics);
}

#[test]
fn drl2_and_e2e_share_the_data_schedule() {
    let gen = |mode| {
        let mut t = Trainer::new(small_config(EnvKind::RepeatPrevious, mode)).unwrap();
        t.generate(20, Behavior::Uniform, true).unwrap()
    };
    assert_eq!(gen(Mode::Drl2), gen(Mode::E2e));
}

#[test]
fn run_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(EnvKind::GridWorld, Mode::Drl2);
    let report = Trainer::new(cfg.clone()).unwrap().run(Some(dir.path())).unwrap();
    let out = report.out_dir.unwrap();
    assert!(out.ends_with(cfg.run_name()));
    for f in ["config.toml", "metrics.csv", "burnin.csv", "checkpoint.bin", "trajectories.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let rows: Vec<prl_core::trainer::MetricsRow> = prl_core::trainer::read_rows(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows, report.metrics);
    assert!(rows.windows(2).all(|w| w[0].step < w[1].step));
    let ck = prl_core::numerics::Checkpoint::load(out.join("checkpoint.bin")).unwrap();
    assert_eq!(ck.config_hash, cfg.hash());
    let dump = std::fs::read_to_string(out.join("trajectories.csv")).unwrap();
    let header = dump.lines().next().unwrap();
    assert!(header.starts_with("episode_id,t,obs0,obs1,obs2,cont0,action,reward"));
    assert!(header.ends_with("done,is_test_action,is_padding"));
    assert_eq!(dump.lines().count(), 1 + cfg.dump_episodes * 9);
}

#[test]
fn checkpoint_restores_every_network() {
    let cfg = small_config(EnvKind::RepeatPrevious, Mode::Drl2);
    let mut a = Trainer::new(cfg.clone()).unwrap();
    a.burn_in().unwrap();
    a.train_epoch().unwrap();
    let ck = a.checkpoint();
    let mut b = Trainer::new(RunConfig { seed: 99, ..cfg }).unwrap();
    b.restore(&ck).unwrap();
    let eps = a.generate(4, Behavior::Uniform, true).unwrap();
    let refs: Vec<&Trajectory> = eps.iter().collect();
    let (la, lb) = (a.batch_losses(&refs, None).unwrap(), b.batch_losses(&refs, None).unwrap());
    // Checkpoints store f32, so agreement is to single precision.
    assert!((la.critic - lb.critic).abs() < 1e-4 * la.critic.abs().max(1.0));
    assert!((la.psr.unwrap() - lb.psr.unwrap()).abs() < 1e-4);
}

#[test]
fn probe_reports_each_target() {
    let mut cfg = small_config(EnvKind::RepeatPrevious, Mode::Probe);
    // The first target is met at initialization, the last is out of reach.
    cfg.probe_targets = vec![5.0, 1e-6];
    cfg.probe_max_updates = 10;
    cfg.probe_check_every = 5;
    let report = Trainer::new(cfg).unwrap().run(None).unwrap();
    assert_eq!(report.probe.len(), 2);
    assert!(report.probe[0].reached && report.probe[0].final_return.is_some());
    assert!(!report.probe[1].reached && report.probe[1].final_return.is_none());
}

fn toy_spec(card: usize) -> EnvSpec {
    EnvSpec {
        name: "toy".into(),
        action_cardinality: 3,
        horizon: 6,
        channel_cardinalities: vec![card, 3],
        continuous_bounds: vec![(0.0, 1.0)],
        reward_channel: None,
    }
}

fn toy_episode(spec: &EnvSpec, id: u64, rng: &mut impl Rng) -> Trajectory {
    let len = rng.random_range(2..=spec.horizon);
    Trajectory {
        id,
        observations: (0..=len)
            .map(|_| Observation {
                discrete: spec.channel_cardinalities.iter().map(|&c| rng.random_range(0..c)).collect(),
                continuous: vec![rng.random()],
            })
            .collect(),
        actions: (0..len).map(|_| rng.random_range(0..3)).collect(),
        rewards: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        test_step: Some(rng.random_range(0..len - 1)),
    }
}

fn toy_model(spec: &EnvSpec, seed: u64) -> (ReprModel, ParamStore) {
    let mut store = ParamStore::new();
    let cfg = ModelConfig {
        backbone: Backbone::Transformer,
        embed_dim: 8,
        layers: 1,
        heads: 2,
        predictor_hidden: 4,
        max_len: spec.horizon,
    };
    let m = ReprModel::new(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), spec, cfg);
    (m, store)
}

fn batch_psr(spec: &EnvSpec, m: &ReprModel, store: &ParamStore, eps: &[&Trajectory]) -> f64 {
    let tests = extract_core_tests(spec, eps, CoreTestSpec::default(), Extraction::Marked).unwrap();
    let tokens = tokens_for(spec, eps, None);
    let tape = Tape::new();
    let z = m.summarize(&tape, store, &tokens);
    psr_loss(&tape, store, m, z, &tests).loss.scalar()
}

#[test]
fn zeroed_heads_give_uniform_cross_entropy() {
    let spec = EnvSpec {
        continuous_bounds: vec![],
        channel_cardinalities: vec![4],
        ..toy_spec(4)
    };
    let (m, mut store) = toy_model(&spec, 1);
    for id in store.ids().collect::<Vec<_>>() {
        if store.get(id).name.starts_with("psi.head") {
            store.value_mut(id).fill(0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps: Vec<Trajectory> = (0..5).map(|i| toy_episode(&spec, i, &mut rng)).collect();
    let refs: Vec<&Trajectory> = eps.iter().collect();
    let loss = batch_psr(&spec, &m, &store, &refs);
    assert!((loss - 4f64.ln()).abs() < 1e-6, "{loss}");
    assert!((4f64.ln() - 1.3863).abs() < 1e-4);
}

#[test]
fn batch_loss_is_the_mean_of_sample_losses() {
    let spec = toy_spec(5);
    let (m, store) = toy_model(&spec, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps: Vec<Trajectory> = (0..8).map(|i| toy_episode(&spec, i, &mut rng)).collect();
    let refs: Vec<&Trajectory> = eps.iter().collect();
    let whole = batch_psr(&spec, &m, &store, &refs);
    let singles: f64 = refs.iter().map(|e| batch_psr(&spec, &m, &store, &[*e])).sum::<f64>() / 8.0;
    assert!((whole - singles).abs() < 1e-6, "{whole} vs {singles}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loss_is_order_invariant_and_ignores_padding(seed in 0u64..1000, n in 1usize..6) {
        let spec = toy_spec(4);
        let (m, store) = toy_model(&spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<Trajectory> = (0..n).map(|i| toy_episode(&spec, i as u64, &mut rng)).collect();
        let refs: Vec<&Trajectory> = eps.iter().collect();
        let base = batch_psr(&spec, &m, &store, &refs);
        prop_assert!(base >= 0.0);
        let rev: Vec<&Trajectory> = refs.iter().rev().copied().collect();
        prop_assert!((batch_psr(&spec, &m, &store, &rev) - base).abs() < 1e-6);

        let tests = extract_core_tests(&spec, &refs, CoreTestSpec::default(), Extraction::Marked).unwrap();
        let noisy = tokens_for(&spec, &refs, Some(&mut rng));
        let tape = Tape::new();
        let z = m.summarize(&tape, &store, &noisy);
        prop_assert_eq!(psr_loss(&tape, &store, &m, z, &tests).loss.scalar(), base);
    }

    #[test]
    fn targets_track_online_critics(steps in 1usize..30, tau in 0.001f64..0.5) {
        // After n soft updates the target equals the exponentially weighted
        // average of online snapshots.
        let mut rng = ChaCha8Rng::seed_from_u64(steps as u64);
        let mut agent = Agent::new(&mut rng, 3, 2, SacConfig { hidden: 4, tau, actor_lr: 1e-2, critic_lr: 1e-2, ..SacConfig::default() });
        let first = agent.critic_store.ids().next().unwrap();
        let mut expected = agent.target_store.value(first).clone();
        prop_assert_eq!(&expected, agent.critic_store.value(first));
        let latents = prl_core::numerics::normal(&mut rng, 4, 3, 1.0);
        let mut batch = Transitions::default();
        batch.push(0, Some(1), 1, 1.0);
        batch.push(2, None, 0, -1.0);
        for _ in 0..steps {
            let tape = Tape::new();
            let losses = agent.losses(&tape, tape.constant(latents.clone()), &batch);
            let grads = tape.backward(losses.total()).unwrap();
            agent.apply(&grads).unwrap();
            let online: &Matrix = agent.critic_store.value(first);
            expected = &expected * (1.0 - tau) + &(online * tau);
        }
        let diff = (agent.target_store.value(first) - &expected).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(diff < 1e-6);
    }
}

#[test]
fn bandit_policy_finds_the_best_arm() {
    // One-step contextual bandit: context c in 0..4 (one-hot latent), best arm
    // is (c + 1) % 3 with reward 1, other arms 0.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = SacConfig {
        hidden: 32,
        actor_lr: 3e-3,
        critic_lr: 3e-3,
        ..SacConfig::default()
    };
    let mut agent = Agent::new(&mut rng, 4, 3, cfg);
    let oracle = |c: usize| (c + 1) % 3;
    for _ in 0..1500 {
        let mut latents = Matrix::zeros((32, 4));
        let mut batch = Transitions::default();
        for i in 0..32 {
            let c = rng.random_range(0..4);
            latents[[i, c]] = 1.0;
            let a = rng.random_range(0..3);
            batch.push(i, None, a, f64::from(u8::from(a == oracle(c))));
        }
        let tape = Tape::new();
        let losses = agent.losses(&tape, tape.constant(latents), &batch);
        let grads = tape.backward(losses.total()).unwrap();
        agent.apply(&grads).unwrap();
    }
    let contexts = Matrix::from_shape_fn((400, 4), |(i, j)| f64::from(u8::from(i % 4 == j)));
    let greedy = agent.act(&contexts, &mut rng, true);
    let right = greedy.iter().enumerate().filter(|&(i, &a)| a == oracle(i % 4)).count();
    assert!(right as f64 / 400.0 >= 0.99, "{right}/400");
}

use prl_core::env::{EnvConfig, EnvKind, EnvSpec, Observation};
use prl_core::numerics::{AdamConfig, AdamW, ParamStore, Tape};
use prl_core::psr::{extract_core_tests, psr_loss, CoreTestSpec, Extraction};
use prl_core::rollout::{tokens_for, Trajectory};
use prl_core::seqmodel::{is_predictor_param, Backbone, ModelConfig, ReprModel, TokenBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn repeat_spec() -> EnvSpec {
    EnvConfig::repeat_previous(2, 8).build().unwrap().spec().clone()
}

fn model(spec: &EnvSpec, backbone: Backbone, seed: u64) -> (ReprModel, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        backbone,
        embed_dim: 16,
        layers: 2,
        heads: 4,
        predictor_hidden: 8,
        max_len: spec.horizon,
    };
    (ReprModel::new(&mut store, &mut rng, spec, cfg), store)
}

fn random_tokens(spec: &EnvSpec, seq: usize, batch: usize, rng: &mut ChaCha8Rng) -> TokenBatch {
    let mut tokens = TokenBatch::new(spec, seq, batch);
    for t in 0..seq {
        for b in 0..batch {
            let obs = Observation::discrete(spec.channel_cardinalities.iter().map(|&c| rng.random_range(0..c)).collect());
            let a = if t == 0 { spec.action_cardinality } else { rng.random_range(0..spec.action_cardinality) };
            tokens.set(t, b, &obs, a, rng.random_range(0..3));
        }
    }
    tokens
}

fn random_episode(spec: &EnvSpec, id: u64, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut env = EnvConfig::repeat_previous(2, spec.horizon).build().unwrap();
    let mut obs = vec![env.reset(rng.random())];
    let (mut actions, mut rewards) = (Vec::new(), Vec::new());
    while !env.is_done() {
        let a = rng.random_range(0..spec.action_cardinality);
        let s = env.step(a);
        actions.push(a);
        rewards.push(s.reward);
        obs.push(s.observation);
    }
    Trajectory {
        id,
        observations: obs,
        actions,
        rewards,
        test_step: Some(rng.random_range(0..spec.horizon)),
    }
}

#[test]
fn latents_ignore_the_future() {
    let spec = repeat_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for backbone in [Backbone::Transformer, Backbone::Gru] {
        let (m, store) = model(&spec, backbone, 1);
        let tokens = random_tokens(&spec, 8, 3, &mut rng);
        let tape = Tape::new();
        let base = m.summarize(&tape, &store, &tokens).value();
        for cut in 0..7 {
            let mut changed = tokens.clone();
            for t in cut + 1..8 {
                for b in 0..3 {
                    let r = changed.row(t, b);
                    changed.discrete[0][r] = (changed.discrete[0][r] + 1) % 4;
                    changed.prev_action[r] = (changed.prev_action[r] + 1) % 4;
                }
            }
            let tape = Tape::new();
            let z = m.summarize(&tape, &store, &changed).value();
            for t in 0..=cut {
                for b in 0..3 {
                    let r = tokens.row(t, b);
                    assert_eq!(z.row(r), base.row(r), "{backbone:?}: position {t} saw the future");
                }
            }
        }
    }
}

#[test]
fn single_step_sequence_is_finite() {
    let spec = repeat_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for backbone in [Backbone::Transformer, Backbone::Gru, Backbone::Stateless] {
        let (m, store) = model(&spec, backbone, 3);
        let tokens = random_tokens(&spec, 1, 2, &mut rng);
        let tape = Tape::new();
        assert!(m.summarize(&tape, &store, &tokens).value().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn predictions_are_distributions() {
    let spec = repeat_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, store) = model(&spec, Backbone::Transformer, 4);
    let tape = Tape::new();
    let latents = tape.constant(prl_core::numerics::normal(&mut rng, 6, 16, 3.0));
    let actions = vec![vec![0, 1, 2, 3, 0, 1], vec![3, 3, 2, 2, 1, 0]];
    let pred = m.predict(&tape, &store, latents, &actions);
    assert_eq!(pred.steps, 2);
    for p in pred.probabilities() {
        let p = p.value();
        assert_eq!(p.nrows(), 12);
        for row in p.rows() {
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn prediction_loss_reaches_every_component() {
    let spec = repeat_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (m, mut store) = model(&spec, Backbone::Transformer, 9);
    let eps: Vec<Trajectory> = (0..6).map(|i| random_episode(&spec, i, &mut rng)).collect();
    let refs: Vec<&Trajectory> = eps.iter().collect();
    let tests = extract_core_tests(&spec, &refs, CoreTestSpec::default(), Extraction::Dense).unwrap();
    let tokens = tokens_for(&spec, &refs, None);
    let tape = Tape::new();
    let z = m.summarize(&tape, &store, &tokens);
    let out = psr_loss(&tape, &store, &m, z, &tests);
    tape.backward(out.loss).unwrap().accumulate_into(&mut store);
    for prefix in ["embed.", "phi.", "psi."] {
        let nonzero = store
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .any(|p| p.grad.iter().any(|&g| g != 0.0));
        assert!(nonzero, "no gradient reached {prefix}*");
    }
}

#[test]
fn shared_embedding_feeds_both_paths() {
    let spec = repeat_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (m, mut store) = model(&spec, Backbone::Gru, 22);
    let eps: Vec<Trajectory> = (0..4).map(|i| random_episode(&spec, i, &mut rng)).collect();
    let refs: Vec<&Trajectory> = eps.iter().collect();
    let tests = extract_core_tests(&spec, &refs, CoreTestSpec::default(), Extraction::Dense).unwrap();
    let tokens = tokens_for(&spec, &refs, None);
    let eval = |store: &ParamStore| {
        let tape = Tape::new();
        let z = m.summarize(&tape, store, &tokens);
        let loss = psr_loss(&tape, store, &m, z, &tests).loss.scalar();
        (z.value().as_ref().clone(), loss)
    };
    let (z0, l0) = eval(&store);
    let action_table = store.find("embed.action").unwrap();
    store.value_mut(action_table).mapv_inplace(|v| v + 0.05);
    let (z1, l1) = eval(&store);
    assert_ne!(l0, l1);
    assert_ne!(z0, z1);
}

#[test]
fn constant_sequence_is_learned() {
    // An environment whose next observation never varies.
    let spec = EnvSpec {
        name: "constant".into(),
        action_cardinality: 2,
        horizon: 5,
        channel_cardinalities: vec![3],
        continuous_bounds: vec![],
        reward_channel: None,
    };
    let ep = Trajectory {
        id: 0,
        observations: vec![Observation::discrete(vec![2]); 6],
        actions: vec![0, 1, 0, 1, 0],
        rewards: vec![0.0; 5],
        test_step: None,
    };
    let (m, mut store) = model(&spec, Backbone::Transformer, 31);
    let mut opt = AdamW::new(&store, AdamConfig::with_lr(1e-2));
    let refs = vec![&ep, &ep];
    let tests = extract_core_tests(&spec, &refs, CoreTestSpec::default(), Extraction::Dense).unwrap();
    let tokens = tokens_for(&spec, &refs, None);
    let mut p_true = 0.0;
    for _ in 0..200 {
        let tape = Tape::new();
        let z = m.summarize(&tape, &store, &tokens);
        let out = psr_loss(&tape, &store, &m, z, &tests);
        p_true = out.logits[0]
            .rows()
            .into_iter()
            .map(|r| {
                let e: Vec<f64> = r.iter().map(|v| v.exp()).collect();
                e[2] / e.iter().sum::<f64>()
            })
            .fold(1.0, f64::min);
        tape.backward(out.loss).unwrap().accumulate_into(&mut store);
        opt.step(&mut store).unwrap();
    }
    assert!(p_true > 0.99, "probability of the only outcome {p_true}");
}

#[test]
fn predictor_parameters_are_named_apart() {
    let spec = EnvConfig::new(EnvKind::GridWorld).build().unwrap().spec().clone();
    let (_, store) = model(&spec, Backbone::Transformer, 0);
    let psi = store.iter().filter(|p| is_predictor_param(&p.name)).count();
    // bridge, GRU input and recurrent maps, three discrete heads, one continuous head.
    assert_eq!(psi, 2 * (1 + 2 + 3 + 1));
}

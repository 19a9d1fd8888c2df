use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sign_code, uniform_action, Clock, EnvSpec, Environment, Observation, StepResult};

pub const SUITS: usize = 4;

/// Recall the suit dealt `k` steps ago.
///
/// Cards are dealt from enough shuffled 52-card decks to cover the horizon.
/// Observation: `[suit, reward_code]`, where the reward code reports the
/// previous action's outcome (0 none, 1 correct, 2 wrong). Actions at steps
/// `t >= k` earn `+1/(H-k)` when they name the suit dealt at `t - k` and
/// `-1/(H-k)` otherwise; earlier actions earn 0.
#[derive(Debug, Clone)]
pub struct RepeatPrevious {
    spec: EnvSpec,
    k: usize,
    clock: Clock,
    suits: Vec<usize>,
}

impl RepeatPrevious {
    pub fn new(k: usize, horizon: usize) -> Self {
        assert!(k >= 1 && k < horizon, "need 0 < k < horizon");
        Self {
            spec: EnvSpec {
                name: format!("repeat_previous_k{k}_h{horizon}"),
                action_cardinality: SUITS,
                horizon,
                channel_cardinalities: vec![SUITS, 3],
                continuous_bounds: vec![],
                reward_channel: Some(1),
            },
            k,
            clock: Clock::default(),
            suits: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Magnitude of a single step's reward.
    pub fn unit_reward(&self) -> f64 {
        1.0 / (self.spec.horizon - self.k) as f64
    }

    pub fn dealt(&self) -> &[usize] {
        &self.suits
    }
}

impl Environment for RepeatPrevious {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let decks = self.spec.horizon.div_ceil(52);
        let mut deck: Vec<usize> = (0..52 * decks).map(|c| c % SUITS).collect();
        deck.shuffle(&mut rng);
        deck.truncate(self.spec.horizon);
        self.suits = deck;
        self.clock.reset();
        Observation::discrete(vec![self.suits[0], 0])
    }

    fn step(&mut self, action: usize) -> StepResult {
        let t = self.clock.begin_step(&self.spec, action);
        let reward = if t >= self.k {
            if action == self.suits[t - self.k] {
                self.unit_reward()
            } else {
                -self.unit_reward()
            }
        } else {
            0.0
        };
        let done = self.clock.finish(&self.spec, false);
        let next_suit = if done { 0 } else { self.suits[t + 1] };
        StepResult {
            observation: Observation::discrete(vec![next_suit, sign_code(reward)]),
            reward,
            done,
        }
    }

    fn sample_test_action(&self, rng: &mut dyn RngCore) -> usize {
        uniform_action(SUITS, rng)
    }

    fn is_done(&self) -> bool {
        self.clock.done
    }
}

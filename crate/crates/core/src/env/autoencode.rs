use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sign_code, uniform_action, Clock, EnvSpec, Environment, Observation, StepResult};

pub const SUITS: usize = 4;
/// Card symbol shown during the PLAY phase.
pub const BLANK: usize = SUITS;

/// Watch `N` cards, then name their suits in reverse order.
///
/// Observation: `[card, reward_code]` with `card = 4` (blank) during PLAY.
/// WATCH steps pay 0 whatever the action; PLAY step `j` pays `+1/N` for
/// naming the suit of card `N - 1 - j` and `-1/N` otherwise.
#[derive(Debug, Clone)]
pub struct AutoEncode {
    spec: EnvSpec,
    cards: usize,
    clock: Clock,
    suits: Vec<usize>,
}

impl AutoEncode {
    pub fn new(cards: usize) -> Self {
        assert!(cards >= 1);
        Self {
            spec: EnvSpec {
                name: format!("autoencode_n{cards}"),
                action_cardinality: SUITS,
                horizon: 2 * cards,
                channel_cardinalities: vec![SUITS + 1, 3],
                continuous_bounds: vec![],
                reward_channel: Some(1),
            },
            cards,
            clock: Clock::default(),
            suits: Vec::new(),
        }
    }

    pub fn shown(&self) -> &[usize] {
        &self.suits
    }

    fn card_at(&self, t: usize) -> usize {
        if t < self.cards {
            self.suits[t]
        } else {
            BLANK
        }
    }
}

impl Environment for AutoEncode {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let decks = self.cards.div_ceil(52);
        let mut deck: Vec<usize> = (0..52 * decks).map(|c| c % SUITS).collect();
        deck.shuffle(&mut rng);
        deck.truncate(self.cards);
        self.suits = deck;
        self.clock.reset();
        Observation::discrete(vec![self.card_at(0), 0])
    }

    fn step(&mut self, action: usize) -> StepResult {
        let t = self.clock.begin_step(&self.spec, action);
        let n = self.cards;
        let reward = if t < n {
            0.0
        } else {
            let want = self.suits[n - 1 - (t - n)];
            if action == want {
                1.0 / n as f64
            } else {
                -1.0 / n as f64
            }
        };
        let done = self.clock.finish(&self.spec, false);
        StepResult {
            observation: Observation::discrete(vec![self.card_at(t + 1), sign_code(reward)]),
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

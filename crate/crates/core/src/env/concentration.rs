use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{uniform_action, Clock, EnvSpec, Environment, Observation, StepResult};

/// When two face-up cards count as a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    Rank,
    Color,
    RankOrColor,
    #[default]
    RankAndColor,
}

impl MatchRule {
    /// Cards are ids in `0..52`: rank `id % 13`, suit `id / 13`, red suits 0 and 1.
    pub fn matches(self, a: usize, b: usize) -> bool {
        let rank = a % 13 == b % 13;
        let color = (a / 13) / 2 == (b / 13) / 2;
        match self {
            MatchRule::Rank => rank,
            MatchRule::Color => color,
            MatchRule::RankOrColor => rank || color,
            MatchRule::RankAndColor => rank && color,
        }
    }
}

impl std::str::FromStr for MatchRule {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "rank" => Ok(Self::Rank),
            "color" => Ok(Self::Color),
            "rank_or_color" => Ok(Self::RankOrColor),
            "rank_and_color" => Ok(Self::RankAndColor),
            other => Err(crate::Error::Config(format!("unknown match rule `{other}`"))),
        }
    }
}

/// Concentration over `52 * decks` face-down cards.
///
/// Two consecutive actions flip two cards. Observation: one channel per
/// position, 0 when face down and `1 + card_id` when face up (matched cards
/// stay up; the pair being flipped is shown for that step). A fresh match
/// pays `+1/P` (P = positions / 2); a mismatch, or flipping a matched card
/// or the same card twice, costs `-1/P`. Matching every card ends the episode.
#[derive(Debug, Clone)]
pub struct Concentration {
    spec: EnvSpec,
    rule: MatchRule,
    clock: Clock,
    cards: Vec<usize>,
    matched: Vec<bool>,
    played: Vec<bool>,
    pending: Option<usize>,
}

impl Concentration {
    pub fn new(decks: usize, horizon: usize, rule: MatchRule) -> Self {
        let n = 52 * decks;
        Self {
            spec: EnvSpec {
                name: format!("concentration_d{decks}"),
                action_cardinality: n,
                horizon,
                channel_cardinalities: vec![53; n],
                continuous_bounds: vec![],
                reward_channel: None,
            },
            rule,
            clock: Clock::default(),
            cards: Vec::new(),
            matched: vec![false; n],
            played: vec![false; n],
            pending: None,
        }
    }

    pub fn positions(&self) -> usize {
        self.spec.action_cardinality
    }

    pub fn card(&self, pos: usize) -> usize {
        self.cards[pos]
    }

    pub fn played(&self) -> &[bool] {
        &self.played
    }

    fn unit(&self) -> f64 {
        2.0 / self.positions() as f64
    }

    fn observe(&self, shown: &[usize]) -> Observation {
        let sym = (0..self.positions())
            .map(|p| {
                if self.matched[p] || shown.contains(&p) {
                    1 + self.cards[p]
                } else {
                    0
                }
            })
            .collect();
        Observation::discrete(sym)
    }
}

impl Environment for Concentration {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.positions();
        self.cards = (0..n).map(|i| i % 52).collect();
        self.cards.shuffle(&mut rng);
        self.matched = vec![false; n];
        self.played = vec![false; n];
        self.pending = None;
        self.clock.reset();
        self.observe(&[])
    }

    fn step(&mut self, action: usize) -> StepResult {
        self.clock.begin_step(&self.spec, action);
        self.played[action] = true;
        let unit = self.unit();
        let (reward, shown) = match self.pending.take() {
            None if self.matched[action] => (-unit, vec![]),
            None => {
                self.pending = Some(action);
                (0.0, vec![action])
            }
            Some(first) => {
                if first == action || self.matched[action] {
                    (-unit, vec![first])
                } else if self.rule.matches(self.cards[first], self.cards[action]) {
                    self.matched[first] = true;
                    self.matched[action] = true;
                    (unit, vec![])
                } else {
                    (-unit, vec![first, action])
                }
            }
        };
        let all = self.matched.iter().all(|&m| m);
        let done = self.clock.finish(&self.spec, all);
        StepResult {
            observation: self.observe(&shown),
            reward,
            done,
        }
    }

    /// A uniformly drawn position that has been flipped before; uniform over
    /// all positions when nothing has been flipped yet.
    fn sample_test_action(&self, rng: &mut dyn RngCore) -> usize {
        let seen: Vec<usize> = (0..self.played.len()).filter(|&i| self.played[i]).collect();
        if seen.is_empty() {
            return uniform_action(self.positions(), rng);
        }
        seen[rng.random_range(0..seen.len())]
    }

    fn is_done(&self) -> bool {
        self.clock.done
    }
}

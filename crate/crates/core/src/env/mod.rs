//! Partially observable episodic environments behind one interface.
//!
//! Every environment exposes its observation as a vector of discrete symbols
//! (plus, for GridWorld, one bounded continuous channel), a finite horizon,
//! and a rule for drawing the off-policy test action.

mod autoencode;
mod battleship;
mod concentration;
mod delayed_catch;
mod gridworld;
mod key_to_door;
mod minesweeper;
mod repeat_previous;

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use autoencode::AutoEncode;
pub use battleship::Battleship;
pub use concentration::{Concentration, MatchRule};
pub use delayed_catch::DelayedCatch;
pub use gridworld::GridWorld;
pub use key_to_door::DarkKeyToDoor;
pub use minesweeper::Minesweeper;
pub use repeat_previous::RepeatPrevious;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation {
    pub discrete: Vec<usize>,
    pub continuous: Vec<f64>,
}

impl Observation {
    pub fn discrete(symbols: Vec<usize>) -> Self {
        Self {
            discrete: symbols,
            continuous: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub action_cardinality: usize,
    pub horizon: usize,
    pub channel_cardinalities: Vec<usize>,
    /// Inclusive bounds of each continuous channel.
    pub continuous_bounds: Vec<(f64, f64)>,
    /// Discrete channel carrying the encoded reward, if the env has one.
    pub reward_channel: Option<usize>,
}

impl EnvSpec {
    pub fn num_discrete(&self) -> usize {
        self.channel_cardinalities.len()
    }

    pub fn num_continuous(&self) -> usize {
        self.continuous_bounds.len()
    }

    pub fn num_channels(&self) -> usize {
        self.num_discrete() + self.num_continuous()
    }

    /// True when every channel of `obs` lies inside its declared range.
    pub fn contains(&self, obs: &Observation) -> bool {
        obs.discrete.len() == self.num_discrete()
            && obs.continuous.len() == self.num_continuous()
            && obs
                .discrete
                .iter()
                .zip(&self.channel_cardinalities)
                .all(|(&s, &c)| s < c)
            && obs
                .continuous
                .iter()
                .zip(&self.continuous_bounds)
                .all(|(&x, &(lo, hi))| (lo..=hi).contains(&x))
    }

    /// Placeholder observation stored at padded timesteps.
    pub fn padding_observation(&self) -> Observation {
        Observation {
            discrete: vec![0; self.num_discrete()],
            continuous: vec![0.0; self.num_continuous()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Draw a fresh hidden configuration from `seed` and return the first observation.
    fn reset(&mut self, seed: u64) -> Observation;

    /// Advance one step.
    ///
    /// # Panics
    /// If the episode is already done or `action` is out of range.
    fn step(&mut self, action: usize) -> StepResult;

    /// Test action for the current timestep, following the env's design rule.
    fn sample_test_action(&self, rng: &mut dyn RngCore) -> usize;

    fn is_done(&self) -> bool;
}

/// Shared bookkeeping for the step contract.
#[derive(Debug, Clone, Default)]
pub(crate) struct Clock {
    pub t: usize,
    pub done: bool,
}

impl Clock {
    pub fn reset(&mut self) {
        self.t = 0;
        self.done = false;
    }

    /// Validate a step request and advance the clock; returns the step index.
    pub fn begin_step(&mut self, spec: &EnvSpec, action: usize) -> usize {
        assert!(!self.done, "{}: step called on a finished episode", spec.name);
        assert!(
            action < spec.action_cardinality,
            "{}: action {action} out of range 0..{}",
            spec.name,
            spec.action_cardinality
        );
        let t = self.t;
        self.t += 1;
        t
    }

    pub fn finish(&mut self, spec: &EnvSpec, terminal: bool) -> bool {
        self.done = terminal || self.t >= spec.horizon;
        self.done
    }
}

pub(crate) fn uniform_action(n: usize, rng: &mut dyn RngCore) -> usize {
    use rand::Rng;
    rng.random_range(0..n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl FromStr for Difficulty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Self::Easy),
            "medium" => Ok(Self::Medium),
            "hard" => Ok(Self::Hard),
            other => Err(Error::Config(format!("unknown difficulty `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    #[serde(rename = "gridworld", alias = "grid_world")]
    GridWorld,
    RepeatPrevious,
    #[serde(rename = "autoencode", alias = "auto_encode")]
    AutoEncode,
    Minesweeper,
    Battleship,
    Concentration,
    DelayedCatch,
    DarkKeyToDoor,
}

impl EnvKind {
    pub const ALL: [EnvKind; 8] = [
        EnvKind::GridWorld,
        EnvKind::RepeatPrevious,
        EnvKind::AutoEncode,
        EnvKind::Minesweeper,
        EnvKind::Battleship,
        EnvKind::Concentration,
        EnvKind::DelayedCatch,
        EnvKind::DarkKeyToDoor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::GridWorld => "gridworld",
            EnvKind::RepeatPrevious => "repeat_previous",
            EnvKind::AutoEncode => "autoencode",
            EnvKind::Minesweeper => "minesweeper",
            EnvKind::Battleship => "battleship",
            EnvKind::Concentration => "concentration",
            EnvKind::DelayedCatch => "delayed_catch",
            EnvKind::DarkKeyToDoor => "dark_key_to_door",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        EnvKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .or(match norm.as_str() {
                "repeatprevious" => Some(EnvKind::RepeatPrevious),
                "key_to_door" | "keytodoor" => Some(EnvKind::DarkKeyToDoor),
                "catch" => Some(EnvKind::DelayedCatch),
                _ => None,
            })
            .ok_or_else(|| Error::UnknownEnv(s.to_string()))
    }
}

/// Environment selection plus the knobs each family exposes.
///
/// Unset options fall back to the family's difficulty tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub difficulty: Difficulty,
    /// Recall distance for RepeatPrevious.
    pub k: Option<usize>,
    /// Horizon override (RepeatPrevious, Concentration, DelayedCatch via `balls`).
    pub horizon: Option<usize>,
    /// Number of cards shown in AutoEncode's WATCH phase.
    pub cards: Option<usize>,
    /// Balls per Delayed Catch episode.
    pub balls: Option<usize>,
    pub match_rule: MatchRule,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::GridWorld,
            difficulty: Difficulty::Easy,
            k: None,
            horizon: None,
            cards: None,
            balls: None,
            match_rule: MatchRule::default(),
        }
    }
}

impl EnvConfig {
    pub fn new(kind: EnvKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn repeat_previous(k: usize, horizon: usize) -> Self {
        Self {
            kind: EnvKind::RepeatPrevious,
            k: Some(k),
            horizon: Some(horizon),
            ..Self::default()
        }
    }

    pub fn difficulty(mut self, d: Difficulty) -> Self {
        self.difficulty = d;
        self
    }

    /// Effective recall distance for RepeatPrevious, `None` for other families.
    pub fn recall_distance(&self) -> Option<usize> {
        (self.kind == EnvKind::RepeatPrevious).then(|| {
            self.k.unwrap_or(match self.difficulty {
                Difficulty::Easy => 4,
                Difficulty::Medium => 32,
                Difficulty::Hard => 64,
            })
        })
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        let d = self.difficulty;
        Ok(match self.kind {
            EnvKind::GridWorld => Box::new(GridWorld::new()),
            EnvKind::RepeatPrevious => {
                let decks = match d {
                    Difficulty::Easy => 1,
                    Difficulty::Medium => 2,
                    Difficulty::Hard => 3,
                };
                let horizon = self.horizon.unwrap_or(52 * decks);
                let k = self.recall_distance().expect("repeat_previous");
                if k == 0 || k >= horizon {
                    return Err(Error::Config(format!("repeat_previous needs 0 < k < horizon, got k={k}, H={horizon}")));
                }
                Box::new(RepeatPrevious::new(k, horizon))
            }
            EnvKind::AutoEncode => {
                let cards = self.cards.unwrap_or(match d {
                    Difficulty::Easy => 52,
                    Difficulty::Medium => 104,
                    Difficulty::Hard => 156,
                });
                if cards == 0 {
                    return Err(Error::Config("autoencode needs at least one card".into()));
                }
                Box::new(AutoEncode::new(cards))
            }
            EnvKind::Minesweeper => match d {
                Difficulty::Easy => Box::new(Minesweeper::new(4, 4, 2)),
                Difficulty::Medium => Box::new(Minesweeper::new(6, 6, 6)),
                Difficulty::Hard => Box::new(Minesweeper::new(8, 8, 10)),
            },
            EnvKind::Battleship => match d {
                Difficulty::Easy => Box::new(Battleship::new(6, &[2, 3])),
                Difficulty::Medium => Box::new(Battleship::new(8, &[2, 3, 4])),
                Difficulty::Hard => Box::new(Battleship::new(10, &[2, 3, 4, 5])),
            },
            EnvKind::Concentration => {
                let (decks, turns_factor) = match d {
                    Difficulty::Easy => (1, 3),
                    Difficulty::Medium => (2, 3),
                    Difficulty::Hard => (1, 2),
                };
                let n = 52 * decks;
                let horizon = self.horizon.unwrap_or(turns_factor * n);
                Box::new(Concentration::new(decks, horizon, self.match_rule))
            }
            EnvKind::DelayedCatch => {
                let balls = self.balls.unwrap_or(match d {
                    Difficulty::Easy => 3,
                    Difficulty::Medium => 5,
                    Difficulty::Hard => 10,
                });
                if balls == 0 {
                    return Err(Error::Config("delayed_catch needs at least one ball".into()));
                }
                Box::new(DelayedCatch::new(balls))
            }
            EnvKind::DarkKeyToDoor => Box::new(DarkKeyToDoor::new()),
        })
    }
}

/// Discrete reward category stored in an observation channel.
///
/// RepeatPrevious / AutoEncode: 0 zero, 1 positive, 2 negative.
/// Minesweeper: 0 positive, 1 mine hit, 2 repeated tile.
/// Battleship and the remaining envs have no reward channel.
pub fn encode_reward_channel(kind: EnvKind, reward: f64) -> Option<usize> {
    match kind {
        EnvKind::RepeatPrevious | EnvKind::AutoEncode => Some(sign_code(reward)),
        EnvKind::Minesweeper => Some(if reward > 0.0 {
            0
        } else if reward <= minesweeper::MINE_REWARD {
            1
        } else {
            2
        }),
        _ => None,
    }
}

/// 0 for zero, 1 for positive, 2 for negative.
pub fn sign_code(reward: f64) -> usize {
    if reward > 0.0 {
        1
    } else if reward < 0.0 {
        2
    } else {
        0
    }
}

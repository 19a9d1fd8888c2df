use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{uniform_action, Clock, EnvSpec, Environment, Observation, StepResult};

pub const SIZE: usize = 7;
pub const HORIZON: usize = 9;
pub const INDICATOR_ACCURACY: f64 = 0.9;

/// 7x7 grid with a hidden target.
///
/// Observation: `[x, y, closer]` plus one noise value in `[0, 1]`, where
/// `closer` reports (correctly with probability 0.9) whether the last move
/// reduced the Manhattan distance to the target. Actions: up, down, left,
/// right; moves into a wall leave the agent in place. Reward 1 on reaching
/// the target, which ends the episode.
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    clock: Clock,
    pos: (usize, usize),
    target: (usize, usize),
    last_truth: bool,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self::new()
    }
}

impl GridWorld {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "gridworld".into(),
                action_cardinality: 4,
                horizon: HORIZON,
                channel_cardinalities: vec![SIZE, SIZE, 2],
                continuous_bounds: vec![(0.0, 1.0)],
                reward_channel: None,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            clock: Clock::default(),
            pos: (0, 0),
            target: (0, 0),
            last_truth: false,
        }
    }

    pub fn target(&self) -> (usize, usize) {
        self.target
    }

    pub fn position(&self) -> (usize, usize) {
        self.pos
    }

    /// Ground truth of the last move (before noise).
    pub fn last_move_was_closer(&self) -> bool {
        self.last_truth
    }

    fn observe(&mut self, indicator: bool) -> Observation {
        Observation {
            discrete: vec![self.pos.0, self.pos.1, indicator as usize],
            continuous: vec![self.rng.random::<f64>()],
        }
    }

    fn distance(a: (usize, usize), b: (usize, usize)) -> usize {
        a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
    }
}

impl Environment for GridWorld {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.clock.reset();
        self.pos = (SIZE / 2, SIZE / 2);
        loop {
            let t = (self.rng.random_range(0..SIZE), self.rng.random_range(0..SIZE));
            if t != self.pos {
                self.target = t;
                break;
            }
        }
        self.last_truth = false;
        self.observe(false)
    }

    fn step(&mut self, action: usize) -> StepResult {
        self.clock.begin_step(&self.spec, action);
        let before = Self::distance(self.pos, self.target);
        let (x, y) = self.pos;
        self.pos = match action {
            0 => (x, y.saturating_sub(1)),
            1 => (x, (y + 1).min(SIZE - 1)),
            2 => (x.saturating_sub(1), y),
            _ => ((x + 1).min(SIZE - 1), y),
        };
        let after = Self::distance(self.pos, self.target);
        self.last_truth = after < before;
        let indicator = if self.rng.random::<f64>() < INDICATOR_ACCURACY {
            self.last_truth
        } else {
            !self.last_truth
        };
        let reached = self.pos == self.target;
        let done = self.clock.finish(&self.spec, reached);
        StepResult {
            observation: self.observe(indicator),
            reward: if reached { 1.0 } else { 0.0 },
            done,
        }
    }

    fn sample_test_action(&self, rng: &mut dyn RngCore) -> usize {
        uniform_action(self.spec.action_cardinality, rng)
    }

    fn is_done(&self) -> bool {
        self.clock.done
    }
}

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{uniform_action, Clock, EnvSpec, Environment, Observation, StepResult};

pub const SIZE: usize = 9;
pub const HORIZON: usize = 50;

/// Dark 9x9 room with an invisible key and an invisible door.
///
/// Observation: `[x, y]`. Stepping on the key pays 1 once; stepping on the
/// door while holding the key pays 1 and ends the episode.
#[derive(Debug, Clone)]
pub struct DarkKeyToDoor {
    spec: EnvSpec,
    clock: Clock,
    pos: (usize, usize),
    key: (usize, usize),
    door: (usize, usize),
    has_key: bool,
}

impl Default for DarkKeyToDoor {
    fn default() -> Self {
        Self::new()
    }
}

impl DarkKeyToDoor {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "dark_key_to_door".into(),
                action_cardinality: 4,
                horizon: HORIZON,
                channel_cardinalities: vec![SIZE, SIZE],
                continuous_bounds: vec![],
                reward_channel: None,
            },
            clock: Clock::default(),
            pos: (0, 0),
            key: (0, 0),
            door: (0, 0),
            has_key: false,
        }
    }

    pub fn position(&self) -> (usize, usize) {
        self.pos
    }

    pub fn key(&self) -> (usize, usize) {
        self.key
    }

    pub fn door(&self) -> (usize, usize) {
        self.door
    }

    pub fn has_key(&self) -> bool {
        self.has_key
    }
}

impl Environment for DarkKeyToDoor {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cell = || (rng.random_range(0..SIZE), rng.random_range(0..SIZE));
        self.pos = cell();
        self.key = loop {
            let c = cell();
            if c != self.pos {
                break c;
            }
        };
        self.door = loop {
            let c = cell();
            if c != self.pos && c != self.key {
                break c;
            }
        };
        self.has_key = false;
        self.clock.reset();
        Observation::discrete(vec![self.pos.0, self.pos.1])
    }

    fn step(&mut self, action: usize) -> StepResult {
        self.clock.begin_step(&self.spec, action);
        let (x, y) = self.pos;
        self.pos = match action {
            0 => (x, y.saturating_sub(1)),
            1 => (x, (y + 1).min(SIZE - 1)),
            2 => (x.saturating_sub(1), y),
            _ => ((x + 1).min(SIZE - 1), y),
        };
        let mut reward = 0.0;
        let mut opened = false;
        if !self.has_key && self.pos == self.key {
            self.has_key = true;
            reward = 1.0;
        } else if self.has_key && self.pos == self.door {
            reward = 1.0;
            opened = true;
        }
        let done = self.clock.finish(&self.spec, opened);
        StepResult {
            observation: Observation::discrete(vec![self.pos.0, self.pos.1]),
            reward,
            done,
        }
    }

    fn sample_test_action(&self, rng: &mut dyn RngCore) -> usize {
        uniform_action(4, rng)
    }

    fn is_done(&self) -> bool {
        self.clock.done
    }
}

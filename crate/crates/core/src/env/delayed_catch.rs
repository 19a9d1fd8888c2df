use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{uniform_action, Clock, EnvSpec, Environment, Observation, StepResult};

pub const SIZE: usize = 7;
/// Steps for a ball to fall from the top row to the paddle row.
pub const FALL: usize = SIZE - 1;

/// Catch with every reward withheld until the last step.
///
/// A paddle on the bottom row moves left, stays, or moves right. Balls fall
/// one row per step from a uniformly random top column, one after another.
/// Each landing scores +1 (caught) or -1 (missed) silently; the sum is paid
/// as a single terminal reward. Observation: `[paddle_x, ball_x, ball_y]`.
#[derive(Debug, Clone)]
pub struct DelayedCatch {
    spec: EnvSpec,
    balls: usize,
    rng: ChaCha8Rng,
    clock: Clock,
    paddle: usize,
    ball: (usize, usize),
    pending: f64,
    caught: usize,
}

impl DelayedCatch {
    pub fn new(balls: usize) -> Self {
        assert!(balls >= 1);
        Self {
            spec: EnvSpec {
                name: format!("delayed_catch_b{balls}"),
                action_cardinality: 3,
                horizon: balls * FALL,
                channel_cardinalities: vec![SIZE, SIZE, SIZE],
                continuous_bounds: vec![],
                reward_channel: None,
            },
            balls,
            rng: ChaCha8Rng::seed_from_u64(0),
            clock: Clock::default(),
            paddle: SIZE / 2,
            ball: (0, 0),
            pending: 0.0,
            caught: 0,
        }
    }

    pub fn balls(&self) -> usize {
        self.balls
    }

    pub fn caught(&self) -> usize {
        self.caught
    }

    pub fn ball(&self) -> (usize, usize) {
        self.ball
    }

    pub fn paddle(&self) -> usize {
        self.paddle
    }

    fn observe(&self) -> Observation {
        Observation::discrete(vec![self.paddle, self.ball.0, self.ball.1])
    }
}

impl Environment for DelayedCatch {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.clock.reset();
        self.paddle = SIZE / 2;
        self.ball = (self.rng.random_range(0..SIZE), 0);
        self.pending = 0.0;
        self.caught = 0;
        self.observe()
    }

    fn step(&mut self, action: usize) -> StepResult {
        self.clock.begin_step(&self.spec, action);
        self.paddle = match action {
            0 => self.paddle.saturating_sub(1),
            1 => self.paddle,
            _ => (self.paddle + 1).min(SIZE - 1),
        };
        self.ball.1 += 1;
        if self.ball.1 == FALL {
            if self.ball.0 == self.paddle {
                self.pending += 1.0;
                self.caught += 1;
            } else {
                self.pending -= 1.0;
            }
            self.ball = (self.rng.random_range(0..SIZE), 0);
        }
        let done = self.clock.finish(&self.spec, false);
        let reward = if done { std::mem::take(&mut self.pending) } else { 0.0 };
        StepResult {
            observation: self.observe(),
            reward,
            done,
        }
    }

    fn sample_test_action(&self, rng: &mut dyn RngCore) -> usize {
        uniform_action(3, rng)
    }

    fn is_done(&self) -> bool {
        self.clock.done
    }
}

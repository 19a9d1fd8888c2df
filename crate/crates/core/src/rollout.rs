//! Stored episodes, the replay buffer and conversion of episode batches into
//! model tokens.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::env::{sign_code, EnvSpec, Observation};
use crate::seqmodel::TokenBatch;

/// One finished episode.
///
/// `observations` has one more entry than `actions`: the observation after the
/// final step is kept as a prediction target. Positions `t >= len()` are
/// padding when the episode is laid out on a horizon-length grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Timestep drawn for the test action, uniform over the horizon. A draw
    /// past the end of the episode never executes.
    pub test_step: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Whether the episode ended at step `t` (its last action).
    pub fn done_at(&self, t: usize) -> bool {
        t + 1 == self.len()
    }

    pub fn is_test_action(&self, t: usize) -> bool {
        self.test_step == Some(t) && t < self.len()
    }

    /// Inputs of token `t`: observation, previous action (`none` at t = 0) and
    /// previous reward code.
    pub fn token(&self, t: usize, none_action: usize) -> (&Observation, usize, usize) {
        if t == 0 {
            (&self.observations[0], none_action, 0)
        } else {
            (&self.observations[t], self.actions[t - 1], sign_code(self.rewards[t - 1]))
        }
    }
}

/// Bounded FIFO of episodes; the oldest episode is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Arc<Trajectory>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer needs a positive capacity");
        Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    /// Capacity in episodes for a budget given in timesteps.
    pub fn capacity_for(timesteps: usize, horizon: usize) -> usize {
        (timesteps / horizon.max(1)).max(1)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: Trajectory) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(Arc::new(episode));
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Trajectory>> {
        self.episodes.iter()
    }

    pub fn get(&self, i: usize) -> &Arc<Trajectory> {
        &self.episodes[i]
    }

    /// `n` episodes drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Arc<Trajectory>> {
        assert!(!self.episodes.is_empty(), "sampling from an empty buffer");
        (0..n)
            .map(|_| Arc::clone(&self.episodes[rng.random_range(0..self.episodes.len())]))
            .collect()
    }
}

/// Lay out a batch of episodes as time-major tokens of length `max len`.
///
/// With `noise` set, padded positions get random in-range symbols instead of
/// the fixed padding token; losses must not notice the difference.
pub fn tokens_for(spec: &EnvSpec, episodes: &[&Trajectory], noise: Option<&mut dyn RngCore>) -> TokenBatch {
    let seq_len = episodes.iter().map(|e| e.len()).max().unwrap_or(0).max(1);
    tokens_with_len(spec, episodes, seq_len, noise)
}

pub fn tokens_with_len(
    spec: &EnvSpec,
    episodes: &[&Trajectory],
    seq_len: usize,
    mut noise: Option<&mut dyn RngCore>,
) -> TokenBatch {
    let batch = episodes.len();
    let none = spec.action_cardinality;
    let mut tokens = TokenBatch::new(spec, seq_len, batch);
    let pad = spec.padding_observation();
    for (b, ep) in episodes.iter().enumerate() {
        for t in 0..seq_len {
            if t < ep.len() {
                let (obs, a, r) = ep.token(t, none);
                tokens.set(t, b, obs, a, r);
            } else if let Some(rng) = noise.as_deref_mut() {
                let obs = random_observation(spec, rng);
                let a = rng.random_range(0..=none);
                let r = rng.random_range(0..3);
                tokens.set(t, b, &obs, a, r);
            } else {
                tokens.set(t, b, &pad, none, 0);
            }
        }
    }
    tokens
}

fn random_observation(spec: &EnvSpec, rng: &mut dyn RngCore) -> Observation {
    Observation {
        discrete: spec.channel_cardinalities.iter().map(|&c| rng.random_range(0..c)).collect(),
        continuous: spec
            .continuous_bounds
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect(),
    }
}

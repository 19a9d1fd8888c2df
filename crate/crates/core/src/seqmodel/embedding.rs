//! Shared projection of (observation, previous action, previous reward) into
//! the embedding space used by both the summarizer and the predictor.

use rand::Rng;

use crate::env::{EnvSpec, Observation};
use crate::numerics::{normal, uniform_fan_in, Matrix, ParamId, ParamStore, Tape, Var};

/// Time-major batch of model inputs: entry `t * batch + b` is step `t` of sequence `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub seq_len: usize,
    pub batch: usize,
    /// One column per discrete channel.
    pub discrete: Vec<Vec<usize>>,
    /// One column per continuous channel.
    pub continuous: Vec<Vec<f64>>,
    /// Previous action; `action_cardinality` marks "none" at `t = 0`.
    pub prev_action: Vec<usize>,
    /// Reward code (0 zero, 1 positive, 2 negative) of the previous step.
    pub prev_reward: Vec<usize>,
}

impl TokenBatch {
    pub fn new(spec: &EnvSpec, seq_len: usize, batch: usize) -> Self {
        let n = seq_len * batch;
        Self {
            seq_len,
            batch,
            discrete: vec![vec![0; n]; spec.num_discrete()],
            continuous: vec![vec![0.0; n]; spec.num_continuous()],
            prev_action: vec![spec.action_cardinality; n],
            prev_reward: vec![0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.seq_len * self.batch
    }

    pub fn row(&self, t: usize, b: usize) -> usize {
        t * self.batch + b
    }

    pub fn set(&mut self, t: usize, b: usize, obs: &Observation, prev_action: usize, prev_reward: usize) {
        let r = self.row(t, b);
        for (col, &s) in self.discrete.iter_mut().zip(&obs.discrete) {
            col[r] = s;
        }
        for (col, &x) in self.continuous.iter_mut().zip(&obs.continuous) {
            col[r] = x;
        }
        self.prev_action[r] = prev_action;
        self.prev_reward[r] = prev_reward;
    }
}

/// Per-channel lookup tables whose outputs tile the embedding vector, plus
/// added action and reward-code embeddings.
#[derive(Debug, Clone)]
pub struct InputEmbedding {
    pub embed_dim: usize,
    pub widths: Vec<usize>,
    pub tables: Vec<ParamId>,
    pub cardinalities: Vec<usize>,
    pub continuous: Vec<(ParamId, ParamId)>,
    pub action: ParamId,
    pub reward: ParamId,
    pub action_cardinality: usize,
}

/// Split `dim` across `channels` as evenly as possible (earlier channels get
/// the remainder).
pub fn channel_widths(dim: usize, channels: usize) -> Vec<usize> {
    let base = dim / channels;
    let extra = dim % channels;
    (0..channels).map(|i| base + usize::from(i < extra)).collect()
}

impl InputEmbedding {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, spec: &EnvSpec, embed_dim: usize) -> Self {
        let channels = spec.num_channels();
        assert!(embed_dim >= channels, "embed_dim {embed_dim} smaller than {channels} channels");
        let widths = channel_widths(embed_dim, channels);
        let tables = spec
            .channel_cardinalities
            .iter()
            .enumerate()
            .map(|(i, &c)| store.add(format!("embed.obs{i}"), normal(rng, c, widths[i], 0.02)))
            .collect();
        let nd = spec.num_discrete();
        let continuous = (0..spec.num_continuous())
            .map(|j| {
                let w = widths[nd + j];
                (
                    store.add(format!("embed.cont{j}.w"), uniform_fan_in(rng, 1, w, 1)),
                    store.add(format!("embed.cont{j}.b"), uniform_fan_in(rng, 1, w, 1)),
                )
            })
            .collect();
        let action = store.add("embed.action", normal(rng, spec.action_cardinality + 1, embed_dim, 0.02));
        let reward = store.add("embed.reward", normal(rng, 3, embed_dim, 0.02));
        Self {
            embed_dim,
            widths,
            tables,
            cardinalities: spec.channel_cardinalities.clone(),
            continuous,
            action,
            reward,
            action_cardinality: spec.action_cardinality,
        }
    }

    /// Observation part only: the concatenated channel slices.
    pub fn embed_observation<'t>(&self, tape: &'t Tape, store: &ParamStore, tokens: &TokenBatch) -> Var<'t> {
        let mut parts = Vec::with_capacity(self.widths.len());
        for ((&table, col), &card) in self.tables.iter().zip(&tokens.discrete).zip(&self.cardinalities) {
            assert!(col.iter().all(|&s| s < card), "observation symbol out of range (cardinality {card})");
            parts.push(tape.param(store, table).gather_rows(col));
        }
        for (&(w, b), col) in self.continuous.iter().zip(&tokens.continuous) {
            let x = tape.constant(Matrix::from_shape_vec((col.len(), 1), col.clone()).expect("column"));
            parts.push(x.matmul(tape.param(store, w)).add_row(tape.param(store, b)));
        }
        tape.concat_cols(&parts)
    }

    /// Full token embedding: observation slices plus action and reward-code embeddings.
    pub fn embed<'t>(&self, tape: &'t Tape, store: &ParamStore, tokens: &TokenBatch) -> Var<'t> {
        assert!(
            tokens.prev_action.iter().all(|&a| a <= self.action_cardinality),
            "previous action out of range"
        );
        assert!(tokens.prev_reward.iter().all(|&r| r < 3), "reward code out of range");
        let obs = self.embed_observation(tape, store, tokens);
        let act = tape.param(store, self.action).gather_rows(&tokens.prev_action);
        let rew = tape.param(store, self.reward).gather_rows(&tokens.prev_reward);
        obs.add(act).add(rew)
    }

    /// Embeddings of test actions through the shared action table.
    pub fn embed_actions<'t>(&self, tape: &'t Tape, store: &ParamStore, actions: &[usize]) -> Var<'t> {
        assert!(actions.iter().all(|&a| a < self.action_cardinality), "test action out of range");
        tape.param(store, self.action).gather_rows(actions)
    }
}

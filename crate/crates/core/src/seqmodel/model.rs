use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embedding::{InputEmbedding, TokenBatch};
use super::gru::GruStack;
use super::predictor::{FuturePredictor, Prediction};
use super::transformer::CausalTransformer;
use crate::env::EnvSpec;
use crate::numerics::{ParamStore, Tape, Var};
use crate::Error;

/// Which history summarizer sits between the embedding and the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Transformer,
    Gru,
    /// No memory: the latent is the embedding of the current observation.
    Stateless,
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "transformer" | "gpt" => Ok(Backbone::Transformer),
            "gru" | "rnn" => Ok(Backbone::Gru),
            "stateless" | "none" => Ok(Backbone::Stateless),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub predictor_hidden: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Transformer,
            embed_dim: 128,
            layers: 3,
            heads: 4,
            predictor_hidden: 16,
            max_len: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub enum History {
    Transformer(CausalTransformer),
    Gru(GruStack),
    Stateless,
}

/// Embedding, history summarizer and future predictor living in one store.
///
/// Parameter names are prefixed `embed.`, `phi.` and `psi.` respectively.
#[derive(Debug, Clone)]
pub struct ReprModel {
    pub config: ModelConfig,
    pub embedding: InputEmbedding,
    pub history: History,
    pub predictor: FuturePredictor,
}

impl ReprModel {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, spec: &EnvSpec, config: ModelConfig) -> Self {
        let d = config.embed_dim;
        let embedding = InputEmbedding::new(store, rng, spec, d);
        let history = match config.backbone {
            Backbone::Transformer => History::Transformer(CausalTransformer::new(
                store,
                rng,
                "phi",
                d,
                config.layers,
                config.heads,
                config.max_len,
            )),
            Backbone::Gru => History::Gru(GruStack::new(store, rng, "phi", d, config.layers)),
            Backbone::Stateless => History::Stateless,
        };
        let predictor = FuturePredictor::new(store, rng, spec, d, config.predictor_hidden);
        Self {
            config,
            embedding,
            history,
            predictor,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// History latents for every position, `[seq * batch, embed_dim]` time-major.
    pub fn summarize<'t>(&self, tape: &'t Tape, store: &ParamStore, tokens: &TokenBatch) -> Var<'t> {
        match &self.history {
            History::Transformer(tf) => {
                let x = self.embedding.embed(tape, store, tokens);
                tf.forward(tape, store, x, tokens.seq_len, tokens.batch)
            }
            History::Gru(gru) => {
                let x = self.embedding.embed(tape, store, tokens);
                gru.forward(tape, store, x, tokens.seq_len, tokens.batch)
            }
            History::Stateless => self.embedding.embed_observation(tape, store, tokens),
        }
    }

    pub fn predict<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        latents: Var<'t>,
        actions: &[Vec<usize>],
    ) -> Prediction<'t> {
        self.predictor.forward(tape, store, &self.embedding, latents, actions)
    }
}

pub fn is_summarizer_param(name: &str) -> bool {
    name.starts_with("phi.") || name.starts_with("embed.")
}

pub fn is_predictor_param(name: &str) -> bool {
    name.starts_with("psi.")
}

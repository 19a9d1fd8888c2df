//! Differentiable sequence models: token embedding, causal transformer, GRU,
//! the future-observation predictor and the tanh MLP heads used by the agent.

mod embedding;
mod gru;
mod layers;
mod model;
mod predictor;
mod transformer;

pub use embedding::{channel_widths, InputEmbedding, TokenBatch};
pub use gru::{Gru, GruStack};
pub use layers::{BoundLinear, LayerNorm, Linear, TanhMlp};
pub use model::{is_predictor_param, is_summarizer_param, Backbone, History, ModelConfig, ReprModel};
pub use predictor::{FuturePredictor, Prediction};
pub use transformer::CausalTransformer;

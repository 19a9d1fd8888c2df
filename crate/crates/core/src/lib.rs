//! Decoupled predictive-state representation learning for partially
//! observable reinforcement learning.
//!
//! A history summarizer (causal transformer or GRU) is trained only to
//! predict the observations that follow a test action; a discrete soft
//! actor-critic then learns on top of its gradient-blocked latents. The
//! end-to-end baseline trains the same summarizer through the RL loss instead.

pub mod agent;
pub mod env;
pub mod error;
pub mod numerics;
pub mod psr;
pub mod report;
pub mod rollout;
pub mod seqmodel;
pub mod trainer;

pub use error::{Error, Result};

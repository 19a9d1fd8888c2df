use rand::Rng;

use super::embedding::InputEmbedding;
use super::gru::Gru;
use super::layers::Linear;
use crate::env::EnvSpec;
use crate::numerics::{ParamStore, Tape, Var};

/// Output of the future predictor for `k` steps of `n` anchors.
///
/// Row `j * n + i` of every head belongs to predicted step `j` of anchor `i`.
#[derive(Debug)]
pub struct Prediction<'t> {
    pub steps: usize,
    pub anchors: usize,
    /// Unnormalized scores, one `[k * n, cardinality]` matrix per discrete channel.
    pub logits: Vec<Var<'t>>,
    /// One `[k * n, 1]` column per continuous channel.
    pub continuous: Vec<Var<'t>>,
}

impl<'t> Prediction<'t> {
    pub fn row(&self, step: usize, anchor: usize) -> usize {
        step * self.anchors + anchor
    }

    /// Probability vectors per discrete channel.
    pub fn probabilities(&self) -> Vec<Var<'t>> {
        self.logits.iter().map(|l| l.softmax()).collect()
    }
}

/// One-layer GRU decoder started from an affine image of the history latent
/// and driven by embedded test actions.
#[derive(Debug, Clone)]
pub struct FuturePredictor {
    pub bridge: Linear,
    pub gru: Gru,
    pub heads: Vec<Linear>,
    pub continuous_heads: Vec<Linear>,
}

impl FuturePredictor {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, spec: &EnvSpec, embed_dim: usize, hidden: usize) -> Self {
        Self {
            bridge: Linear::new(store, rng, "psi.bridge", embed_dim, hidden),
            gru: Gru::new(store, rng, "psi.gru", embed_dim, hidden),
            heads: spec
                .channel_cardinalities
                .iter()
                .enumerate()
                .map(|(i, &c)| Linear::new(store, rng, &format!("psi.head{i}"), hidden, c))
                .collect(),
            continuous_heads: (0..spec.num_continuous())
                .map(|j| Linear::new(store, rng, &format!("psi.cont{j}"), hidden, 1))
                .collect(),
        }
    }

    /// `latents` is `[n, embed_dim]`; `actions[j]` holds the `n` test actions of step `j`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        embedding: &InputEmbedding,
        latents: Var<'t>,
        actions: &[Vec<usize>],
    ) -> Prediction<'t> {
        assert!(!actions.is_empty(), "need at least one predicted step");
        let n = latents.shape().0;
        let mut h = self.bridge.forward(tape, store, latents);
        let ih = self.gru.input.bind(tape, store);
        let hh = self.gru.recurrent.bind(tape, store);
        let mut states = Vec::with_capacity(actions.len());
        for step in actions {
            assert_eq!(step.len(), n, "one test action per anchor");
            let x = embedding.embed_actions(tape, store, step);
            h = self.gru.cell(&hh, ih.forward(x), h);
            states.push(h);
        }
        let hs = tape.concat_rows(&states);
        Prediction {
            steps: actions.len(),
            anchors: n,
            logits: self.heads.iter().map(|l| l.forward(tape, store, hs)).collect(),
            continuous: self.continuous_heads.iter().map(|l| l.forward(tape, store, hs)).collect(),
        }
    }
}

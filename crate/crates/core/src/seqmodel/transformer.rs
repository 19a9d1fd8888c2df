use rand::Rng;

use super::layers::{LayerNorm, Linear};
use crate::numerics::{normal, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc: Linear,
    out: Linear,
}

/// Pre-norm GPT-style decoder stack with learned absolute positions.
#[derive(Debug, Clone)]
pub struct CausalTransformer {
    pub dim: usize,
    pub heads: usize,
    pub max_len: usize,
    pos: ParamId,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
}

impl CausalTransformer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        layers: usize,
        heads: usize,
        max_len: usize,
    ) -> Self {
        assert!(heads >= 1 && dim.is_multiple_of(heads), "embed_dim {dim} must be divisible by heads {heads}");
        let pos = store.add(format!("{name}.pos"), normal(rng, max_len, dim, 0.02));
        let blocks = (0..layers)
            .map(|l| {
                let p = format!("{name}.h{l}");
                Block {
                    ln1: LayerNorm::new(store, &format!("{p}.ln1"), dim),
                    qkv: Linear::new(store, rng, &format!("{p}.attn.qkv"), dim, 3 * dim),
                    proj: Linear::new(store, rng, &format!("{p}.attn.proj"), dim, dim),
                    ln2: LayerNorm::new(store, &format!("{p}.ln2"), dim),
                    fc: Linear::new(store, rng, &format!("{p}.mlp.fc"), dim, 4 * dim),
                    out: Linear::new(store, rng, &format!("{p}.mlp.proj"), 4 * dim, dim),
                }
            })
            .collect();
        let ln_f = LayerNorm::new(store, &format!("{name}.ln_f"), dim);
        Self {
            dim,
            heads,
            max_len,
            pos,
            blocks,
            ln_f,
        }
    }

    /// `x` is `[seq * batch, dim]`, time-major.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, seq: usize, batch: usize) -> Var<'t> {
        assert!(seq <= self.max_len, "sequence length {seq} exceeds {}", self.max_len);
        let d = self.dim;
        let positions: Vec<usize> = (0..seq * batch).map(|r| r / batch).collect();
        let mut h = x.add(tape.param(store, self.pos).gather_rows(&positions));
        for blk in &self.blocks {
            let a = blk.ln1.forward(tape, store, h);
            let qkv = blk.qkv.forward(tape, store, a);
            let att = tape.causal_attention(
                qkv.slice_cols(0, d),
                qkv.slice_cols(d, d),
                qkv.slice_cols(2 * d, d),
                batch,
                self.heads,
            );
            h = h.add(blk.proj.forward(tape, store, att));
            let m = blk.ln2.forward(tape, store, h);
            let m = blk.out.forward(tape, store, blk.fc.forward(tape, store, m).gelu());
            h = h.add(m);
        }
        self.ln_f.forward(tape, store, h)
    }
}

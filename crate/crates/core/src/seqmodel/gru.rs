use rand::Rng;

use super::layers::{BoundLinear, Linear};
use crate::numerics::{Matrix, ParamStore, Tape, Var};

/// Single GRU layer (reset, update, candidate gates in that column order).
#[derive(Debug, Clone)]
pub struct Gru {
    pub input: Linear,
    pub recurrent: Linear,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: usize, hidden: usize) -> Self {
        Self {
            input: Linear::new(store, rng, &format!("{name}.ih"), in_dim, 3 * hidden),
            recurrent: Linear::new(store, rng, &format!("{name}.hh"), hidden, 3 * hidden),
            hidden,
        }
    }

    /// One step from a pre-projected input `xi = x W_ih + b_ih` (`[batch, 3h]`).
    pub fn cell<'t>(&self, rec: &BoundLinear<'t>, xi: Var<'t>, h: Var<'t>) -> Var<'t> {
        let n = self.hidden;
        let gh = rec.forward(h);
        let r = xi.slice_cols(0, n).add(gh.slice_cols(0, n)).sigmoid();
        let z = xi.slice_cols(n, n).add(gh.slice_cols(n, n)).sigmoid();
        let cand = xi.slice_cols(2 * n, n).add(r.mul(gh.slice_cols(2 * n, n))).tanh();
        // (1 - z) * cand + z * h
        cand.add(z.mul(h.sub(cand)))
    }

    /// Run over a time-major `[seq * batch, in]` input; returns every hidden state.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        seq: usize,
        batch: usize,
        h0: Option<Var<'t>>,
    ) -> Var<'t> {
        let xi = self.input.forward(tape, store, x);
        let rec = self.recurrent.bind(tape, store);
        let mut h = h0.unwrap_or_else(|| tape.constant(Matrix::zeros((batch, self.hidden))));
        let mut outs = Vec::with_capacity(seq);
        for t in 0..seq {
            h = self.cell(&rec, xi.slice_rows(t * batch, batch), h);
            outs.push(h);
        }
        tape.concat_rows(&outs)
    }
}

/// Stack of GRU layers of equal width.
#[derive(Debug, Clone)]
pub struct GruStack {
    pub layers: Vec<Gru>,
}

impl GruStack {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, dim: usize, layers: usize) -> Self {
        Self {
            layers: (0..layers.max(1))
                .map(|l| Gru::new(store, rng, &format!("{name}.l{l}"), dim, dim))
                .collect(),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, seq: usize, batch: usize) -> Var<'t> {
        self.layers
            .iter()
            .fold(x, |h, layer| layer.forward(tape, store, h, seq, batch, None))
    }
}

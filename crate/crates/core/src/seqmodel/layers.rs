use rand::Rng;

use crate::numerics::{uniform_fan_in, Matrix, ParamId, ParamStore, Tape, Var};

/// Affine map `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.add(format!("{name}.w"), uniform_fan_in(rng, in_dim, out_dim, in_dim));
        let b = store.add(format!("{name}.b"), uniform_fan_in(rng, 1, out_dim, in_dim));
        Self { w, b, in_dim, out_dim }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> BoundLinear<'t> {
        BoundLinear {
            w: tape.param(store, self.w),
            b: tape.param(store, self.b),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        self.bind(tape, store).forward(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

impl<'t> BoundLinear<'t> {
    pub fn forward(&self, x: Var<'t>) -> Var<'t> {
        x.matmul(self.w).add_row(self.b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Matrix::ones((1, dim))),
            beta: store.add(format!("{name}.beta"), Matrix::zeros((1, dim))),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        x.layer_norm(tape.param(store, self.gamma), tape.param(store, self.beta))
    }
}

/// Two hidden tanh layers followed by a linear output.
#[derive(Debug, Clone)]
pub struct TanhMlp {
    pub layers: [Linear; 3],
}

impl TanhMlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        Self {
            layers: [
                Linear::new(store, rng, &format!("{name}.fc1"), in_dim, hidden),
                Linear::new(store, rng, &format!("{name}.fc2"), hidden, hidden),
                Linear::new(store, rng, &format!("{name}.out"), hidden, out_dim),
            ],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers[2].out_dim
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let h = self.layers[0].forward(tape, store, x).tanh();
        let h = self.layers[1].forward(tape, store, h).tanh();
        self.layers[2].forward(tape, store, h)
    }
}

//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use prl_core::numerics::gradcheck::{max_relative_error, numeric_gradients};
use prl_core::numerics::{normal, Matrix, ParamStore, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for relative errors; gradients smaller than this are
/// compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fixed random readout so that no output direction is privileged.
pub fn readout<'t>(tape: &'t Tape, out: Var<'t>, seed: u64) -> Var<'t> {
    let (r, c) = out.shape();
    let w: Matrix = normal(&mut rng(seed), r, c, 1.0);
    out.mul(tape.constant(w)).sum()
}

/// Largest relative error between tape gradients and central differences of
/// the scalar built by `f`.
pub fn gradient_error<F>(store: &mut ParamStore, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Var<'t>,
{
    store.zero_grad();
    let tape = Tape::new();
    let loss = f(&tape, store);
    tape.backward(loss).unwrap().accumulate_into(store);
    let numeric = numeric_gradients(store, FD_STEP, |s| {
        let tape = Tape::new();
        f(&tape, s).scalar()
    });
    max_relative_error(store, &numeric, FD_FLOOR)
}

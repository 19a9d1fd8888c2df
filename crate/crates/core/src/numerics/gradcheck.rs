//! Central finite-difference oracle for checking analytic gradients.
//!
//! Only forward evaluations are used here, never the tape's reverse pass.

use super::params::ParamStore;

/// Per-entry relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of `f` with respect to every entry of every
/// parameter in `store`. Returns one matrix per parameter, in store order.
pub fn numeric_gradients<F>(store: &mut ParamStore, step: f64, mut f: F) -> Vec<super::Matrix>
where
    F: FnMut(&ParamStore) -> f64,
{
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let shape = store.value(id).raw_dim();
        let mut g = super::Matrix::zeros(shape);
        for idx in 0..g.len() {
            let (r, c) = (idx / g.ncols(), idx % g.ncols());
            let orig = store.value(id)[[r, c]];
            store.value_mut(id)[[r, c]] = orig + step;
            let plus = f(store);
            store.value_mut(id)[[r, c]] = orig - step;
            let minus = f(store);
            store.value_mut(id)[[r, c]] = orig;
            g[[r, c]] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Largest relative error between the store's current gradients and
/// `numeric`, with the denominator floored at `floor`.
pub fn max_relative_error(store: &ParamStore, numeric: &[super::Matrix], floor: f64) -> f64 {
    store
        .iter()
        .zip(numeric)
        .flat_map(|(p, n)| p.grad.iter().zip(n.iter()).map(|(&a, &b)| relative_error(a, b, floor)))
        .fold(0.0, f64::max)
}

//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`]s. Parameters enter
//! the tape through [`Tape::param`], which remembers the owning store so that
//! [`Gradients::accumulate_into`] can route gradients back to it.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{s, Axis, Zip};

use super::params::{ParamId, ParamStore};
use super::Matrix;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug)]
enum Op {
    Leaf,
    Param { store: u64, id: ParamId },
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Sigmoid(usize),
    /// Keeps `tanh` of the inner polynomial for the backward pass.
    Gelu(usize, Matrix),
    Exp(usize),
    Square(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    GatherRows { src: usize, rows: Vec<usize> },
    SliceRows { src: usize, start: usize },
    SliceCols { src: usize, start: usize },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    LogSoftmax(usize),
    PickCols { src: usize, cols: Vec<usize> },
    Sum(usize),
    SumCols(usize),
    CausalAttention {
        q: usize,
        k: usize,
        v: usize,
        batch: usize,
        heads: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Rc<Matrix>,
    op: Op,
    needs_grad: bool,
}

/// Recording context for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = self.value();
        write!(f, "Var#{}{:?}", self.id, v.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn val(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that does receive a gradient (used by tests and probes).
    pub fn variable(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.push(
            store.value(id).clone(),
            Op::Param {
                store: store.uid(),
                id,
            },
            true,
        )
    }

    /// Same value, cut from the graph: contributes nothing upstream.
    pub fn stop_gradient<'t>(&'t self, x: Var<'t>) -> Var<'t> {
        let v = (*x.value()).clone();
        self.constant(v)
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let vals: Vec<Rc<Matrix>> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let needs = parts.iter().any(|p| self.needs(p.id));
        self.push(out, Op::ConcatRows(parts.iter().map(|p| p.id).collect()), needs)
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let vals: Vec<Rc<Matrix>> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let needs = parts.iter().any(|p| self.needs(p.id));
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), needs)
    }

    /// Multi-head causal self-attention over time-major rows (`row = t * batch + b`).
    ///
    /// Position `t` attends to positions `0..=t` of the same sequence only.
    pub fn causal_attention<'t>(
        &'t self,
        q: Var<'t>,
        k: Var<'t>,
        v: Var<'t>,
        batch: usize,
        heads: usize,
    ) -> Var<'t> {
        let (qv, kv, vv) = (q.value(), k.value(), v.value());
        let (rows, dim) = qv.dim();
        assert_eq!(kv.dim(), (rows, dim));
        assert_eq!(vv.dim(), (rows, dim));
        assert!(batch > 0 && rows % batch == 0, "rows must be seq * batch");
        assert!(heads > 0 && dim % heads == 0, "dim must split across heads");
        let seq = rows / batch;
        let hd = dim / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let qs = qv.as_slice().expect("standard layout");
        let ks = kv.as_slice().expect("standard layout");
        let vs = vv.as_slice().expect("standard layout");
        let mut out = vec![0.0; rows * dim];
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut scores = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * hd;
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let qi = &qs[(i * batch + b) * dim + off..][..hd];
                    let mut max = f64::NEG_INFINITY;
                    for (j, sc) in scores.iter_mut().enumerate().take(i + 1) {
                        let kj = &ks[(j * batch + b) * dim + off..][..hd];
                        let d: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        *sc = d;
                        max = max.max(d);
                    }
                    let mut z = 0.0;
                    for sc in scores.iter_mut().take(i + 1) {
                        *sc = (*sc - max).exp();
                        z += *sc;
                    }
                    let prow = &mut probs[pbase + i * seq..][..seq];
                    let orow = &mut out[(i * batch + b) * dim + off..][..hd];
                    for j in 0..=i {
                        let p = scores[j] / z;
                        prow[j] = p;
                        let vj = &vs[(j * batch + b) * dim + off..][..hd];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let out = Matrix::from_shape_vec((rows, dim), out).expect("shape");
        let needs = self.needs(q.id) || self.needs(k.id) || self.needs(v.id);
        self.push(
            out,
            Op::CausalAttention {
                q: q.id,
                k: k.id,
                v: v.id,
                batch,
                heads,
                probs,
            },
            needs,
        )
    }

    /// Reverse pass from a scalar `[1, 1]` loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let lv = loss.value();
        assert_eq!(lv.dim(), (1, 1), "backward needs a scalar loss");
        let l = lv[[0, 0]];
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss {
                context: "backward".into(),
                value: l,
            });
        }
        let nodes = self.nodes.borrow();
        let n = loss.id + 1;
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(Matrix::ones((1, 1)));

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let need = |i: usize| nodes[i].needs_grad;
            let val = |i: usize| &*nodes[i].value;
            match &node.op {
                Op::Leaf | Op::Param { .. } => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if need(*a) {
                        acc(&mut grads, *a, g.dot(&val(*b).t()));
                    }
                    if need(*b) {
                        acc(&mut grads, *b, val(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if need(*b) {
                        acc(&mut grads, *b, g.clone());
                    }
                    if need(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::AddRow(a, b) => {
                    if need(*b) {
                        acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if need(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if need(*b) {
                        acc(&mut grads, *b, g.mapv(|x| -x));
                    }
                    if need(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if need(*a) {
                        acc(&mut grads, *a, &g * val(*b));
                    }
                    if need(*b) {
                        acc(&mut grads, *b, &g * val(*a));
                    }
                }
                Op::MulCol(a, c) => {
                    if need(*a) {
                        acc(&mut grads, *a, &g * val(*c));
                    }
                    if need(*c) {
                        let gc = (&g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        acc(&mut grads, *c, gc);
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut grads, *a, g.mapv(|x| x * c));
                }
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&*node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&*node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, d);
                }
                Op::Gelu(a, th) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(val(*a))
                        .and(th)
                        .for_each(|d, &x, &t| *d *= gelu_grad(x, t));
                    acc(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    acc(&mut grads, *a, &g * &*node.value);
                }
                Op::Square(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(*a)).for_each(|d, &x| *d *= 2.0 * x);
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if need(*beta) {
                        acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if need(*gamma) {
                        acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if need(*x) {
                        let gam = val(*gamma).row(0).to_owned();
                        let cols = xhat.ncols() as f64;
                        let mut dx = Matrix::zeros(xhat.raw_dim());
                        for (r, (mut dxr, (gr, xr))) in dx
                            .axis_iter_mut(Axis(0))
                            .zip(g.axis_iter(Axis(0)).zip(xhat.axis_iter(Axis(0))))
                            .enumerate()
                        {
                            let dxh: Vec<f64> = gr.iter().zip(gam.iter()).map(|(a, b)| a * b).collect();
                            let sum_d: f64 = dxh.iter().sum();
                            let sum_dx: f64 = dxh.iter().zip(xr.iter()).map(|(a, b)| a * b).sum();
                            let is = inv_std[r];
                            for ((o, d), xh) in dxr.iter_mut().zip(&dxh).zip(xr.iter()) {
                                *o = is / cols * (cols * d - sum_d - xh * sum_dx);
                            }
                        }
                        acc(&mut grads, *x, dx);
                    }
                }
                Op::GatherRows { src, rows } => {
                    let mut d = Matrix::zeros(val(*src).raw_dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dr = d.row_mut(r);
                        dr += &g.row(i);
                    }
                    acc(&mut grads, *src, d);
                }
                Op::SliceRows { src, start } => {
                    let mut d = Matrix::zeros(val(*src).raw_dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *src, d);
                }
                Op::SliceCols { src, start } => {
                    let mut d = Matrix::zeros(val(*src).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *src, d);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let r = val(p).nrows();
                        if need(p) {
                            acc(&mut grads, p, g.slice(s![off..off + r, ..]).to_owned());
                        }
                        off += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = val(p).ncols();
                        if need(p) {
                            acc(&mut grads, p, g.slice(s![.., off..off + c]).to_owned());
                        }
                        off += c;
                    }
                }
                Op::LogSoftmax(a) => {
                    let mut d = g;
                    for (mut dr, yr) in d.axis_iter_mut(Axis(0)).zip(node.value.axis_iter(Axis(0))) {
                        let total: f64 = dr.sum();
                        Zip::from(&mut dr).and(&yr).for_each(|d, &y| *d -= y.exp() * total);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::PickCols { src, cols } => {
                    let mut d = Matrix::zeros(val(*src).raw_dim());
                    for (i, &c) in cols.iter().enumerate() {
                        d[[i, c]] += g[[i, 0]];
                    }
                    acc(&mut grads, *src, d);
                }
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    acc(&mut grads, *a, Matrix::from_elem(val(*a).raw_dim(), s));
                }
                Op::SumCols(a) => {
                    let src = val(*a);
                    let d = Matrix::from_shape_fn(src.raw_dim(), |(i, _)| g[[i, 0]]);
                    acc(&mut grads, *a, d);
                }
                Op::CausalAttention {
                    q,
                    k,
                    v,
                    batch,
                    heads,
                    probs,
                } => {
                    let (dq, dk, dv) = attention_backward(val(*q), val(*k), val(*v), &g, *batch, *heads, probs);
                    if need(*q) {
                        acc(&mut grads, *q, dq);
                    }
                    if need(*k) {
                        acc(&mut grads, *k, dk);
                    }
                    if need(*v) {
                        acc(&mut grads, *v, dv);
                    }
                }
            }
        }

        let params = nodes
            .iter()
            .enumerate()
            .take(n)
            .filter_map(|(i, node)| match node.op {
                Op::Param { store, id } => Some((i, store, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn acc(grads: &mut [Option<Matrix>], id: usize, d: Matrix) {
    match &mut grads[id] {
        Some(g) => *g += &d,
        slot => *slot = Some(d),
    }
}

/// `tanh` through a single `exp`; libm's version goes through `expm1` and
/// dominated profiles. Small arguments use the odd Taylor series to avoid
/// cancellation in `1 - e`.
pub(crate) fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.02 {
        let x2 = x * x;
        return x * (1.0 - x2 * (1.0 / 3.0 - x2 * (2.0 / 15.0 - x2 * (17.0 / 315.0))));
    }
    let e = (-2.0 * a).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

fn gelu_tanh(x: f64) -> f64 {
    tanh(GELU_C * (x + 0.044715 * x * x * x))
}

/// Derivative of the GELU approximation given `t = gelu_tanh(x)`.
fn gelu_grad(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    dout: &Matrix,
    batch: usize,
    heads: usize,
    probs: &[f64],
) -> (Matrix, Matrix, Matrix) {
    let (rows, dim) = q.dim();
    let seq = rows / batch;
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let qs = q.as_slice().expect("standard layout");
    let ks = k.as_slice().expect("standard layout");
    let vs = v.as_slice().expect("standard layout");
    let dout = dout.as_standard_layout();
    let gs = dout.as_slice().expect("standard layout");
    let mut dq = vec![0.0; rows * dim];
    let mut dk = vec![0.0; rows * dim];
    let mut dv = vec![0.0; rows * dim];
    let mut dp = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * hd;
            let pbase = (b * heads + h) * seq * seq;
            for i in 0..seq {
                let ri = (i * batch + b) * dim + off;
                let gi = &gs[ri..][..hd];
                let prow = &probs[pbase + i * seq..][..seq];
                let mut dot_pdp = 0.0;
                for j in 0..=i {
                    let rj = (j * batch + b) * dim + off;
                    let vj = &vs[rj..][..hd];
                    let d: f64 = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dp[j] = d;
                    dot_pdp += prow[j] * d;
                    let p = prow[j];
                    for (o, x) in dv[rj..][..hd].iter_mut().zip(gi) {
                        *o += p * x;
                    }
                }
                for j in 0..=i {
                    let ds = prow[j] * (dp[j] - dot_pdp) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let rj = (j * batch + b) * dim + off;
                    for c in 0..hd {
                        dq[ri + c] += ds * ks[rj + c];
                        dk[rj + c] += ds * qs[ri + c];
                    }
                }
            }
        }
    }
    let mk = |v| Matrix::from_shape_vec((rows, dim), v).expect("shape");
    (mk(dq), mk(dk), mk(dv))
}

// Plain methods rather than operator traits: every op records onto the tape.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.val(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().dim()
    }

    /// The single entry of a `[1, 1]` value.
    pub fn scalar(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "not a scalar");
        v[[0, 0]]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs(self.id)
    }

    fn unary(self, value: Matrix, op: Op) -> Var<'t> {
        let needs = self.tape.needs(self.id);
        self.tape.push(value, op, needs)
    }

    fn binary(self, other: Var<'t>, value: Matrix, op: Op) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let needs = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(value, op, needs)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().dot(&*other.value());
        self.binary(other, v, Op::MatMul(self.id, other.id))
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.dim(), b.dim(), "add: shape mismatch");
        let v = &*a + &*b;
        self.binary(other, v, Op::Add(self.id, other.id))
    }

    /// `self[m, n] + row[1, n]` broadcast over rows.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), row.value());
        assert_eq!(b.nrows(), 1, "add_row expects a single row");
        assert_eq!(a.ncols(), b.ncols(), "add_row: width mismatch");
        let v = &*a + &*b;
        self.binary(row, v, Op::AddRow(self.id, row.id))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.dim(), b.dim(), "sub: shape mismatch");
        let v = &*a - &*b;
        self.binary(other, v, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.dim(), b.dim(), "mul: shape mismatch");
        let v = &*a * &*b;
        self.binary(other, v, Op::Mul(self.id, other.id))
    }

    /// `self[m, n] * col[m, 1]` broadcast over columns.
    pub fn mul_col(self, col: Var<'t>) -> Var<'t> {
        let (a, c) = (self.value(), col.value());
        assert_eq!(c.dim(), (a.nrows(), 1), "mul_col expects an [m, 1] column");
        let v = &*a * &*c;
        self.binary(col, v, Op::MulCol(self.id, col.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().mapv(|x| x * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().mapv(|x| x + c);
        self.unary(v, Op::AddScalar(self.id))
    }

    /// `c - self`.
    pub fn rsub_scalar(self, c: f64) -> Var<'t> {
        self.scale(-1.0).add_scalar(c)
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().mapv(tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.unary(v, Op::Sigmoid(self.id))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'t> {
        let x = self.value();
        let th = x.mapv(gelu_tanh);
        let mut v = th.clone();
        Zip::from(&mut v).and(&*x).for_each(|t, &x| *t = 0.5 * x * (1.0 + *t));
        self.unary(v, Op::Gelu(self.id, th))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().mapv(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value().mapv(|x| x * x);
        self.unary(v, Op::Square(self.id))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both `[1, n]`).
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>) -> Var<'t> {
        let x = self.value();
        let (g, b) = (gamma.value(), beta.value());
        let n = x.ncols();
        assert_eq!(g.dim(), (1, n));
        assert_eq!(b.dim(), (1, n));
        let mut xhat = Matrix::zeros(x.raw_dim());
        let mut inv_std = Vec::with_capacity(x.nrows());
        for (mut hr, xr) in xhat.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
            let mean = xr.sum() / n as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            Zip::from(&mut hr).and(&xr).for_each(|h, &v| *h = (v - mean) * is);
        }
        let out = &(&xhat * &*g) + &*b;
        let needs = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
            needs,
        )
    }

    /// Rows `rows[i]` of `self`, in order; repeated indices are allowed.
    pub fn gather_rows(self, rows: &[usize]) -> Var<'t> {
        let src = self.value();
        let v = src.select(Axis(0), rows);
        self.unary(
            v,
            Op::GatherRows {
                src: self.id,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Var<'t> {
        let v = self.value().slice(s![start..start + len, ..]).to_owned();
        self.unary(v, Op::SliceRows { src: self.id, start })
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        let v = self.value().slice(s![.., start..start + len]).to_owned();
        self.unary(v, Op::SliceCols { src: self.id, start })
    }

    pub fn log_softmax(self) -> Var<'t> {
        let mut v = (*self.value()).clone();
        for mut r in v.axis_iter_mut(Axis(0)) {
            let max = r.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + r.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            r.mapv_inplace(|x| x - lse);
        }
        self.unary(v, Op::LogSoftmax(self.id))
    }

    pub fn softmax(self) -> Var<'t> {
        self.log_softmax().exp()
    }

    /// `out[i, 0] = self[i, cols[i]]`.
    pub fn pick_cols(self, cols: &[usize]) -> Var<'t> {
        let src = self.value();
        assert_eq!(cols.len(), src.nrows(), "pick_cols: one column per row");
        let v = Matrix::from_shape_fn((cols.len(), 1), |(i, _)| src[[i, cols[i]]]);
        self.unary(
            v,
            Op::PickCols {
                src: self.id,
                cols: cols.to_vec(),
            },
        )
    }

    pub fn sum(self) -> Var<'t> {
        let v = Matrix::from_elem((1, 1), self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Row sums as an `[m, 1]` column.
    pub fn sum_cols(self) -> Var<'t> {
        let v = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(v, Op::SumCols(self.id))
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(usize, u64, ParamId)>,
}

impl Gradients {
    /// Gradient with respect to a recorded value, if it participated.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Matrix> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Add the gradients of every parameter bound from `store` into its grad buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        let uid = store.uid();
        for &(node, s, id) in &self.params {
            if s != uid {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                *store.grad_mut(id) += g;
            }
        }
    }
}

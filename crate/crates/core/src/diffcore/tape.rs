//! Vector-valued Wengert tape.
//!
//! Every node holds a dense `f64` vector in one shared arena. The op set is
//! small and coarse (an affine layer is a single node) so that recording a
//! few thousand RK4 stages per trajectory stays cheap. Shape errors inside a
//! recording are programmer errors and panic; the model-level API validates
//! user input before anything is recorded.

use super::params::{GradTree, ParamId, ParamTree};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LinComb {
        first: u32,
        count: u32,
    },
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Concat(Var, Var),
    Slice {
        x: Var,
        start: u32,
    },
    Gather {
        x: Var,
        first: u32,
    },
    Sum(Var),
    SumSquares(Var),
    WeightedNorm {
        x: Var,
        first: u32,
    },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    off: u32,
    len: u32,
}

pub struct Tape<'p> {
    params: &'p ParamTree,
    nodes: Vec<Node>,
    vals: Vec<f64>,
    terms: Vec<(Var, f64)>,
    indices: Vec<u32>,
    consts: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamTree) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            vals: Vec::with_capacity(8192),
            terms: Vec::new(),
            indices: Vec::new(),
            consts: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamTree {
        self.params
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    fn range(&self, v: Var) -> std::ops::Range<usize> {
        let n = &self.nodes[v.0 as usize];
        n.off as usize..(n.off + n.len) as usize
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.vals[self.range(v)]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let r = self.range(v);
        assert_eq!(r.len(), 1, "scalar() on a vector node");
        self.vals[r.start]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0 as usize].len as usize
    }

    /// Appends a node of `len` zeros and returns its handle and offset.
    #[inline]
    fn push(&mut self, op: Op, len: usize) -> (Var, usize) {
        let off = self.vals.len();
        self.vals.resize(off + len, 0.0);
        self.nodes.push(Node {
            op,
            off: off as u32,
            len: len as u32,
        });
        (Var(self.nodes.len() as u32 - 1), off)
    }

    /// Splits the arena into (inputs, freshly pushed output).
    #[inline]
    fn split(&mut self, off: usize) -> (&[f64], &mut [f64]) {
        let (a, b) = self.vals.split_at_mut(off);
        (&*a, b)
    }

    pub fn constant(&mut self, values: &[f64]) -> Var {
        let (v, off) = self.push(Op::Leaf, values.len());
        self.vals[off..].copy_from_slice(values);
        v
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let src = self.params.get(id);
        let (v, off) = self.push(Op::Param(id), src.len());
        self.vals[off..].copy_from_slice(src);
        v
    }

    /// `W x + b` with `W` stored row-major as (out, in).
    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let params = self.params;
        let spec = params.layout().spec(w);
        let (rows, cols) = (spec.rows, spec.cols);
        assert_eq!(self.len_of(x), cols, "linear {}: input length", spec.name);
        let xr = self.range(x);
        let (v, off) = self.push(Op::Linear { w, b, x }, rows);
        let wv = params.get(w);
        let (inp, out) = self.split(off);
        let xv = &inp[xr];
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&wv[i * cols..(i + 1) * cols], xv);
        }
        if let Some(b) = b {
            for (o, bi) in out.iter_mut().zip(params.get(b)) {
                *o += bi;
            }
        }
        v
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ra, rb) = (self.range(a), self.range(b));
        assert_eq!(ra.len(), rb.len(), "elementwise op on different lengths");
        let (v, off) = self.push(op, ra.len());
        let (inp, out) = self.split(off);
        for ((o, x), y) in out.iter_mut().zip(&inp[ra]).zip(&inp[rb]) {
            *o = f(*x, *y);
        }
        v
    }

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let ra = self.range(a);
        let (v, off) = self.push(op, ra.len());
        let (inp, out) = self.split(off);
        for (o, x) in out.iter_mut().zip(&inp[ra]) {
            *o = f(*x);
        }
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(Op::Scale(a, c), a, |x| c * x)
    }

    /// `Σ c_k v_k` over equal-length vectors.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "empty linear combination");
        let len = self.len_of(terms[0].0);
        for (t, _) in terms {
            assert_eq!(self.len_of(*t), len, "lincomb on different lengths");
        }
        let first = self.terms.len() as u32;
        self.terms.extend_from_slice(terms);
        let (v, off) = self.push(
            Op::LinComb {
                first,
                count: terms.len() as u32,
            },
            len,
        );
        let (inp, out) = self.vals.split_at_mut(off);
        for &(t, c) in terms {
            let n = self.nodes[t.0 as usize];
            let s = n.off as usize;
            axpy(c, &inp[s..s + len], out);
        }
        v
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh(a), a, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::Sigmoid(a), a, |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp(a), a, f64::exp)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ra, rb) = (self.range(a), self.range(b));
        let la = ra.len();
        let (v, off) = self.push(Op::Concat(a, b), la + rb.len());
        let (inp, out) = self.split(off);
        out[..la].copy_from_slice(&inp[ra]);
        out[la..].copy_from_slice(&inp[rb]);
        v
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let rx = self.range(x);
        assert!(start + len <= rx.len(), "slice out of range");
        let (v, off) = self.push(
            Op::Slice {
                x,
                start: start as u32,
            },
            len,
        );
        let (inp, out) = self.split(off);
        out.copy_from_slice(&inp[rx.start + start..rx.start + start + len]);
        v
    }

    /// `out[i] = x[idx[i]]`
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Var {
        let rx = self.range(x);
        assert!(idx.iter().all(|&i| i < rx.len()), "gather index out of range");
        let first = self.indices.len() as u32;
        self.indices.extend(idx.iter().map(|&i| i as u32));
        let (v, off) = self.push(Op::Gather { x, first }, idx.len());
        let (inp, out) = self.split(off);
        for (o, &i) in out.iter_mut().zip(idx) {
            *o = inp[rx.start + i];
        }
        v
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ra = self.range(a);
        let (v, off) = self.push(Op::Sum(a), 1);
        let (inp, out) = self.split(off);
        out[0] = inp[ra].iter().sum();
        v
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let ra = self.range(a);
        let (v, off) = self.push(Op::SumSquares(a), 1);
        let (inp, out) = self.split(off);
        out[0] = dot(&inp[ra.clone()], &inp[ra]);
        v
    }

    /// `sqrt(Σ w_i x_i²)` with constant non-negative weights. The gradient
    /// at `x = 0` is taken to be zero.
    pub fn weighted_norm(&mut self, x: Var, weights: &[f64]) -> Var {
        let rx = self.range(x);
        assert_eq!(rx.len(), weights.len(), "weighted_norm weight length");
        let first = self.consts.len() as u32;
        self.consts.extend_from_slice(weights);
        let (v, off) = self.push(Op::WeightedNorm { x, first }, 1);
        let (inp, out) = self.split(off);
        out[0] = inp[rx]
            .iter()
            .zip(weights)
            .map(|(xi, wi)| wi * xi * xi)
            .sum::<f64>()
            .sqrt();
        v
    }

    /// Reverse sweep from the scalar `root`; returns parameter gradients.
    pub fn backward(&self, root: Var) -> GradTree {
        let root_node = self.nodes[root.0 as usize];
        assert_eq!(root_node.len, 1, "backward() needs a scalar root");
        let mut adj = vec![0.0; root_node.off as usize + 1];
        adj[root_node.off as usize] = 1.0;
        let mut grads = vec![0.0; self.params.len()];
        let layout = self.params.layout();

        for idx in (0..=root.0 as usize).rev() {
            let node = self.nodes[idx];
            let off = node.off as usize;
            let len = node.len as usize;
            let (before, rest) = adj.split_at_mut(off);
            let dy = &rest[..len];
            if dy.iter().all(|&g| g == 0.0) {
                continue;
            }
            let y = &self.vals[off..off + len];
            match node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    for (g, d) in grads[layout.range(id)].iter_mut().zip(dy) {
                        *g += d;
                    }
                }
                Op::Linear { w, b, x } => {
                    let cols = layout.spec(w).cols;
                    let rx = self.range(x);
                    let xv = &self.vals[rx.clone()];
                    let wv = self.params.get(w);
                    let wr = layout.range(w);
                    for (i, &d) in dy.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        axpy(d, &wv[i * cols..(i + 1) * cols], &mut before[rx.clone()]);
                        let gs = wr.start + i * cols;
                        axpy(d, xv, &mut grads[gs..gs + cols]);
                    }
                    if let Some(b) = b {
                        for (g, d) in grads[layout.range(b)].iter_mut().zip(dy) {
                            *g += d;
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (ra, rb) = (self.range(a), self.range(b));
                    axpy(1.0, dy, &mut before[ra]);
                    axpy(1.0, dy, &mut before[rb]);
                }
                Op::Sub(a, b) => {
                    let (ra, rb) = (self.range(a), self.range(b));
                    axpy(1.0, dy, &mut before[ra]);
                    axpy(-1.0, dy, &mut before[rb]);
                }
                Op::Mul(a, b) => {
                    let (ra, rb) = (self.range(a), self.range(b));
                    for i in 0..len {
                        before[ra.start + i] += dy[i] * self.vals[rb.start + i];
                        before[rb.start + i] += dy[i] * self.vals[ra.start + i];
                    }
                }
                Op::Scale(a, c) => {
                    let ra = self.range(a);
                    axpy(c, dy, &mut before[ra]);
                }
                Op::LinComb { first, count } => {
                    let terms = &self.terms[first as usize..(first + count) as usize];
                    for &(v, c) in terms {
                        let r = self.range(v);
                        axpy(c, dy, &mut before[r]);
                    }
                }
                Op::Tanh(a) => {
                    let ra = self.range(a);
                    for ((g, d), yi) in before[ra].iter_mut().zip(dy).zip(y) {
                        *g += d * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(a) => {
                    let ra = self.range(a);
                    for ((g, d), yi) in before[ra].iter_mut().zip(dy).zip(y) {
                        *g += d * yi * (1.0 - yi);
                    }
                }
                Op::Exp(a) => {
                    let ra = self.range(a);
                    for ((g, d), yi) in before[ra].iter_mut().zip(dy).zip(y) {
                        *g += d * yi;
                    }
                }
                Op::Concat(a, b) => {
                    let (ra, rb) = (self.range(a), self.range(b));
                    let la = ra.len();
                    axpy(1.0, &dy[..la], &mut before[ra]);
                    axpy(1.0, &dy[la..], &mut before[rb]);
                }
                Op::Slice { x, start } => {
                    let rx = self.range(x);
                    let s = rx.start + start as usize;
                    axpy(1.0, dy, &mut before[s..s + len]);
                }
                Op::Gather { x, first } => {
                    let rx = self.range(x);
                    let idx = &self.indices[first as usize..first as usize + len];
                    for (d, &i) in dy.iter().zip(idx) {
                        before[rx.start + i as usize] += d;
                    }
                }
                Op::Sum(a) => {
                    let ra = self.range(a);
                    let d = dy[0];
                    before[ra].iter_mut().for_each(|g| *g += d);
                }
                Op::SumSquares(a) => {
                    let ra = self.range(a);
                    let d = 2.0 * dy[0];
                    for i in ra {
                        before[i] += d * self.vals[i];
                    }
                }
                Op::WeightedNorm { x, first } => {
                    let norm = y[0];
                    if norm > 0.0 {
                        let rx = self.range(x);
                        let w = &self.consts[first as usize..first as usize + rx.len()];
                        let d = dy[0] / norm;
                        for (k, i) in rx.enumerate() {
                            before[i] += d * w[k] * self.vals[i];
                        }
                    }
                }
            }
        }

        GradTree::from_parts(layout.clone(), grads)
    }
}

/// Value and exact reverse-mode gradient of the scalar recorded by `build`.
pub fn grad<F>(params: &ParamTree, build: F) -> Result<(f64, GradTree)>
where
    F: FnOnce(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let root = build(&mut tape)?;
    if tape.len_of(root) != 1 {
        return Err(Error::ShapeMismatch(format!(
            "loss must be a scalar, got length {}",
            tape.len_of(root)
        )));
    }
    let loss = tape.scalar(root);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss = {loss}")));
    }
    let grads = tape.backward(root);
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((loss, grads))
}

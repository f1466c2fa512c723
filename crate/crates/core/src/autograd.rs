//! A small reverse-mode tape over 2-D tensors, with just the ops the
//! transformer needs.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::attention::{self, EntropyStats};
use crate::error::{shape_err, Error, Result};
use crate::float;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    /// `x ⊙ (1 + scale) + shift`; scale and shift are `1×c` or `n×c`.
    Modulate { x: Var, scale: Var, shift: Var },
    Silu(Var),
    Gelu(Var),
    Sin(Var),
    LayerNorm { x: Var, rstd: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, lambda: f64, maps: Vec<Tensor> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    Gather(Var, Vec<u32>),
    Mse(Var, Tensor),
    Dot(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Attention entropy recorded during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub layer: usize,
    pub head: usize,
    pub tokens: usize,
    pub stats: EntropyStats,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<usize, Var>,
    probe_layers: Option<Vec<usize>>,
    probes: Vec<ProbeRecord>,
    no_grad: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + float::tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = float::tanh(u);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + float::exp(-x))
}

const LN_EPS: f64 = 1e-6;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that treats every parameter as a constant, so nothing is
    /// kept for a backward pass.
    pub fn inference() -> Self {
        Self { no_grad: true, ..Self::default() }
    }

    /// Record attention entropy for the listed layers on every attention op
    /// tagged with one of them.
    pub fn probe_layers(&mut self, layers: Vec<usize>) {
        self.probe_layers = Some(layers);
    }

    pub fn probes(&self) -> &[ProbeRecord] {
        &self.probes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is retained.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The store's parameter `idx` as a node, shared across uses.
    pub fn param(&mut self, store: &ParamStore, idx: usize) -> Var {
        if let Some(&v) = self.params.get(&idx) {
            return v;
        }
        let v = self.push(store.tensor(idx).clone(), Op::Param, store.trainable(idx) && !self.no_grad);
        self.params.insert(idx, v);
        v
    }

    pub fn param_named(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let idx = store.index_of(name).ok_or_else(|| Error::UnknownParameter(name.into()))?;
        Ok(self.param(store, idx))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err(format!("{} rows", x.cols()), y.rows()));
        }
        let out = x.matmul(y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a).shape(), self.value(b).shape());
        if x != y {
            return Err(shape_err(format!("{x:?}"), format!("{y:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    fn check_row(&self, a: Var, r: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(r));
        if y.rows() != 1 || y.cols() != x.cols() {
            return Err(shape_err(format!("1x{}", x.cols()), format!("{}x{}", y.rows(), y.cols())));
        }
        Ok(())
    }

    /// `a + r` with the `1×c` row `r` broadcast over rows.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.check_row(a, r)?;
        let mut out = self.value(a).clone();
        let row = self.value(r).data().to_vec();
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&row).for_each(|(x, y)| *x += y);
        }
        let ng = self.ng(&[a, r]);
        Ok(self.push(out, Op::AddRow(a, r), ng))
    }

    /// `a ⊙ r` with the `1×c` row `r` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.check_row(a, r)?;
        let mut out = self.value(a).clone();
        let row = self.value(r).data().to_vec();
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&row).for_each(|(x, y)| *x *= y);
        }
        let ng = self.ng(&[a, r]);
        Ok(self.push(out, Op::MulRow(a, r), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a, s), ng)
    }

    fn check_mod(&self, x: Var, m: Var) -> Result<()> {
        let (xs, ms) = (self.value(x).shape(), self.value(m).shape());
        if ms.1 != xs.1 || (ms.0 != 1 && ms.0 != xs.0) {
            return Err(shape_err(format!("1x{} or {}x{}", xs.1, xs.0, xs.1), format!("{}x{}", ms.0, ms.1)));
        }
        Ok(())
    }

    pub fn modulate(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        self.check_mod(x, scale)?;
        self.check_mod(x, shift)?;
        let (xv, sv, hv) = (self.value(x), self.value(scale), self.value(shift));
        let mut out = xv.clone();
        for i in 0..out.rows() {
            let srow = sv.row(if sv.rows() == 1 { 0 } else { i });
            let hrow = hv.row(if hv.rows() == 1 { 0 } else { i });
            for ((o, s), h) in out.row_mut(i).iter_mut().zip(srow).zip(hrow) {
                *o = *o * (1.0 + s) + h;
            }
        }
        let ng = self.ng(&[x, scale, shift]);
        Ok(self.push(out, Op::Modulate { x, scale, shift }, ng))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.ng(&[a]);
        self.push(out, Op::Silu(a), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let ng = self.ng(&[a]);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let out = self.value(a).map(float::sin);
        let ng = self.ng(&[a]);
        self.push(out, Op::Sin(a), ng)
    }

    /// Per-row layer norm without an affine part.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols() as f64;
        let mut out = x.clone();
        let mut rstd = Vec::with_capacity(x.rows());
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let r = 1.0 / float::sqrt(var + LN_EPS);
            row.iter_mut().for_each(|v| *v = (*v - mean) * r);
            rstd.push(r);
        }
        let ng = self.ng(&[a]);
        self.push(out, Op::LayerNorm { x: a, rstd }, ng)
    }

    /// Multi-head attention. `layer` tags the op for the entropy probe.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, lambda: f64, layer: Option<usize>) -> Result<Var> {
        let (out, maps) = attention::multi_head_attention(self.value(q), self.value(k), self.value(v), heads, lambda)?;
        if let (Some(layer), Some(wanted)) = (layer, &self.probe_layers) {
            if wanted.contains(&layer) {
                for (head, a) in maps.iter().enumerate() {
                    self.probes.push(ProbeRecord {
                        layer,
                        head,
                        tokens: a.cols(),
                        stats: attention::attention_entropy(a)?,
                    });
                }
            }
        }
        let ng = self.ng(&[q, k, v]);
        let maps = if ng { maps } else { Vec::new() };
        Ok(self.push(out, Op::Attention { q, k, v, lambda, maps }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&vals)?;
        let ng = self.ng(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err(rows, t.rows()));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[off..off + t.cols()].copy_from_slice(t.row(i));
            }
            off += t.cols();
        }
        let ng = self.ng(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, n: usize) -> Result<Var> {
        let x = self.value(a);
        if start + n > x.rows() {
            return Err(shape_err(format!("at most {} rows", x.rows()), start + n));
        }
        let out = x.slice_rows(start, n);
        let ng = self.ng(&[a]);
        Ok(self.push(out, Op::SliceRows(a, start), ng))
    }

    /// `out.data[i] = a.data[index[i]]`, reshaped to `rows × cols`.
    pub fn gather(&mut self, a: Var, index: Vec<u32>, rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        if index.len() != rows * cols {
            return Err(shape_err(rows * cols, index.len()));
        }
        if index.iter().any(|&i| i as usize >= x.len()) {
            return Err(Error::InvalidArgument("gather index out of range".into()));
        }
        let data = index.iter().map(|&i| x.data()[i as usize]).collect();
        let out = Tensor::from_vec(rows, cols, data)?;
        let ng = self.ng(&[a]);
        Ok(self.push(out, Op::Gather(a, index), ng))
    }

    /// Mean squared error against a constant target, as a `1×1` node.
    pub fn mse(&mut self, a: Var, target: Tensor) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != target.shape() {
            return Err(shape_err(format!("{:?}", x.shape()), format!("{:?}", target.shape())));
        }
        let n = x.len().max(1) as f64;
        let s = x.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
        let ng = self.ng(&[a]);
        Ok(self.push(Tensor::filled(1, 1, s), Op::Mse(a, target), ng))
    }

    /// `Σ a ⊙ w` for a constant `w`, as a `1×1` node.
    pub fn dot(&mut self, a: Var, w: Tensor) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != w.shape() {
            return Err(shape_err(format!("{:?}", x.shape()), format!("{:?}", w.shape())));
        }
        let s = x.data().iter().zip(w.data()).map(|(p, q)| p * q).sum();
        let ng = self.ng(&[a]);
        Ok(self.push(Tensor::filled(1, 1, s), Op::Dot(a, w), ng))
    }

    /// Reverse pass from a `1×1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(shape_err("1x1", format!("{:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .params
            .iter()
            .filter_map(|(&idx, &v)| grads[v.0].as_ref().map(|g| (idx, g.clone())))
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul(a, b) => {
                if self.needs_grad(a) {
                    self.accumulate(grads, a, g.matmul_nt(self.value(b)));
                }
                if self.needs_grad(b) {
                    self.accumulate(grads, b, self.value(a).matmul_tn(g));
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|x| -x));
            }
            &Op::Mul(a, b) => {
                self.accumulate(grads, a, g.zip_map(self.value(b), |x, y| x * y));
                self.accumulate(grads, b, g.zip_map(self.value(a), |x, y| x * y));
            }
            &Op::AddRow(a, r) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, r, g.sum_rows());
            }
            &Op::MulRow(a, r) => {
                let row = self.value(r);
                let mut ga = g.clone();
                for k in 0..ga.rows() {
                    ga.row_mut(k).iter_mut().zip(row.data()).for_each(|(x, y)| *x *= y);
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, r, g.zip_map(self.value(a), |x, y| x * y).sum_rows());
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.map(|x| x * s)),
            &Op::Modulate { x, scale, shift } => {
                let (xv, sv) = (self.value(x), self.value(scale));
                let mut gx = g.clone();
                for k in 0..gx.rows() {
                    let srow = sv.row(if sv.rows() == 1 { 0 } else { k });
                    gx.row_mut(k).iter_mut().zip(srow).for_each(|(a, s)| *a *= 1.0 + s);
                }
                self.accumulate(grads, x, gx);
                let gs = g.zip_map(xv, |a, b| a * b);
                let reduce = |t: Tensor, rows: usize| if rows == 1 { t.sum_rows() } else { t };
                self.accumulate(grads, scale, reduce(gs, sv.rows()));
                self.accumulate(grads, shift, reduce(g.clone(), self.value(shift).rows()));
            }
            &Op::Silu(a) => {
                let gx = g.zip_map(self.value(a), |g, x| {
                    let s = sigmoid(x);
                    g * s * (1.0 + x * (1.0 - s))
                });
                self.accumulate(grads, a, gx);
            }
            &Op::Gelu(a) => self.accumulate(grads, a, g.zip_map(self.value(a), |g, x| g * gelu_grad(x))),
            &Op::Sin(a) => self.accumulate(grads, a, g.zip_map(self.value(a), |g, x| g * float::cos(x))),
            Op::LayerNorm { x, rstd } => {
                let y = &node.value;
                let c = y.cols() as f64;
                let mut gx = g.clone();
                for k in 0..gx.rows() {
                    let (yr, gr) = (y.row(k), g.row(k));
                    let mean_g = gr.iter().sum::<f64>() / c;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c;
                    for ((o, &gi), &yi) in gx.row_mut(k).iter_mut().zip(gr).zip(yr) {
                        *o = rstd[k] * (gi - mean_g - yi * mean_gy);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Attention { q, k, v, lambda, maps } => {
                let (gq, gk, gv) = attention::multi_head_attention_backward(
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    maps,
                    *lambda,
                    g,
                );
                self.accumulate(grads, *q, gq);
                self.accumulate(grads, *k, gk);
                self.accumulate(grads, *v, gv);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).rows();
                    if self.needs_grad(p) {
                        self.accumulate(grads, p, g.slice_rows(off, n));
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).cols();
                    if self.needs_grad(p) {
                        self.accumulate(grads, p, g.slice_cols(off, n));
                    }
                    off += n;
                }
            }
            &Op::SliceRows(a, start) => {
                let src = self.value(a);
                let mut ga = Tensor::zeros(src.rows(), src.cols());
                for k in 0..g.rows() {
                    ga.row_mut(start + k).copy_from_slice(g.row(k));
                }
                self.accumulate(grads, a, ga);
            }
            Op::Gather(a, index) => {
                let src = self.value(*a);
                let mut ga = Tensor::zeros(src.rows(), src.cols());
                let d = ga.data_mut();
                for (&ix, &gi) in index.iter().zip(g.data()) {
                    d[ix as usize] += gi;
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Mse(a, target) => {
                let s = 2.0 * g.get(0, 0) / target.len().max(1) as f64;
                self.accumulate(grads, *a, self.value(*a).zip_map(target, |p, t| s * (p - t)));
            }
            Op::Dot(a, w) => {
                let s = g.get(0, 0);
                self.accumulate(grads, *a, w.map(|x| x * s));
            }
        }
    }
}

pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(usize, Tensor)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// `(parameter index, gradient)` for every trainable parameter reached.
    pub fn params(&self) -> &[(usize, Tensor)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(usize, Tensor)> {
        self.params
    }

    pub fn param(&self, idx: usize) -> Option<&Tensor> {
        self.params.iter().find(|(i, _)| *i == idx).map(|(_, g)| g)
    }
}

/// Names the op kinds in a graph, for debugging.
pub fn describe(g: &Graph) -> Vec<String> {
    g.nodes
        .iter()
        .map(|n| {
            let kind = match n.op {
                Op::Leaf => "leaf",
                Op::Param => "param",
                Op::MatMul(..) => "matmul",
                Op::Add(..) => "add",
                Op::Sub(..) => "sub",
                Op::Mul(..) => "mul",
                Op::AddRow(..) => "add_row",
                Op::MulRow(..) => "mul_row",
                Op::Scale(..) => "scale",
                Op::Modulate { .. } => "modulate",
                Op::Silu(_) => "silu",
                Op::Gelu(_) => "gelu",
                Op::Sin(_) => "sin",
                Op::LayerNorm { .. } => "layer_norm",
                Op::Attention { .. } => "attention",
                Op::ConcatRows(_) => "concat_rows",
                Op::ConcatCols(_) => "concat_cols",
                Op::SliceRows(..) => "slice_rows",
                Op::Gather(..) => "gather",
                Op::Mse(..) => "mse",
                Op::Dot(..) => "dot",
            };
            format!("{kind} {}x{}", n.value.rows(), n.value.cols())
        })
        .collect()
}

/// Central-difference gradient of `f` with respect to every entry of `x`.
pub fn finite_difference(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut g = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let dn = f(&probe);
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - dn) / (2.0 * h);
    }
    g
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    let na: f64 = a.data().iter().map(|x| x * x).sum();
    let nb: f64 = b.data().iter().map(|x| x * x).sum();
    let denom = float::sqrt(na).max(float::sqrt(nb));
    if denom == 0.0 {
        return 0.0;
    }
    float::sqrt(diff) / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;

    fn rand(rng: &mut rng::Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, rng::normal_vec(rng, r * c)).unwrap()
    }

    /// Checks d(Σ w ⊙ f(x))/dx against central differences.
    fn check_unary(build: impl Fn(&mut Graph, Var) -> Var, rows: usize, cols: usize, seed: u64) {
        let mut rng = rng::seeded(seed);
        let x0 = rand(&mut rng, rows, cols);
        let mut probe = Graph::new();
        let pv = probe.constant(x0.clone());
        let out_shape = {
            let o = build(&mut probe, pv);
            probe.value(o).shape()
        };
        let w = rand(&mut rng, out_shape.0, out_shape.1);
        let eval = |x: &Tensor| {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let o = build(&mut g, v);
            g.value(o).data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut g = Graph::new();
        let x = g.input(x0.clone());
        let o = build(&mut g, x);
        let l = g.dot(o, w.clone()).unwrap();
        let grads = g.backward(l).unwrap();
        let fd = finite_difference(&x0, 1e-6, eval);
        let err = relative_error(grads.get(x).unwrap(), &fd);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn elementwise_ops() {
        check_unary(|g, x| g.silu(x), 3, 4, 1);
        check_unary(|g, x| g.gelu(x), 3, 4, 2);
        check_unary(|g, x| g.sin(x), 3, 4, 3);
        check_unary(|g, x| g.scale(x, -2.5), 3, 4, 4);
        check_unary(|g, x| g.layer_norm(x), 3, 6, 5);
    }

    #[test]
    fn binary_and_broadcast_ops() {
        let mut rng = rng::seeded(11);
        let b = rand(&mut rng, 4, 5);
        let r = rand(&mut rng, 1, 4);
        let s = rand(&mut rng, 3, 4);
        let (b2, r2, s2) = (b.clone(), r.clone(), s.clone());
        check_unary(move |g, x| { let c = g.constant(b.clone()); g.matmul(x, c).unwrap() }, 3, 4, 6);
        check_unary(move |g, x| { let c = g.constant(b2.clone()); g.matmul(c, x).unwrap() }, 5, 2, 7);
        check_unary(move |g, x| { let c = g.constant(r.clone()); g.mul_row(x, c).unwrap() }, 3, 4, 8);
        check_unary(move |g, x| { let c = g.constant(s.clone()); let m = g.mul(x, c).unwrap(); g.sub(m, x).unwrap() }, 3, 4, 9);
        check_unary(move |g, x| { let c = g.constant(r2.clone()); g.modulate(x, c, c).unwrap() }, 3, 4, 10);
        check_unary(move |g, x| { let c = g.constant(s2.clone()); g.modulate(c, x, x).unwrap() }, 3, 4, 12);
        // Broadcast row operands receive summed gradients.
        let base = rand(&mut rng, 3, 4);
        check_unary(move |g, x| { let c = g.constant(base.clone()); let m = g.modulate(c, x, x).unwrap(); g.add_row(m, x).unwrap() }, 1, 4, 13);
    }

    #[test]
    fn structural_ops() {
        check_unary(|g, x| { let a = g.slice_rows(x, 1, 2).unwrap(); let b = g.slice_rows(x, 0, 1).unwrap(); g.concat_rows(&[a, b, a]).unwrap() }, 3, 2, 14);
        check_unary(|g, x| { let s = g.silu(x); g.concat_cols(&[x, s]).unwrap() }, 3, 2, 15);
        check_unary(|g, x| g.gather(x, vec![5, 0, 0, 3, 2, 1], 2, 3).unwrap(), 3, 2, 16);
    }

    #[test]
    fn attention_op() {
        let mut rng = rng::seeded(17);
        let kv = rand(&mut rng, 6, 4);
        check_unary(move |g, x| {
            let c = g.constant(kv.clone());
            let kx = g.concat_rows(&[x, c]).unwrap();
            let k = g.slice_rows(kx, 1, 6).unwrap();
            let v = g.slice_rows(kx, 3, 6).unwrap();
            g.attention(x, k, v, 2, 0.7, None).unwrap()
        }, 7, 4, 18);
    }

    #[test]
    fn mse_gradient() {
        let mut rng = rng::seeded(19);
        let (x0, t) = (rand(&mut rng, 2, 3), rand(&mut rng, 2, 3));
        let mut g = Graph::new();
        let x = g.input(x0.clone());
        let l = g.mse(x, t.clone()).unwrap();
        let grads = g.backward(l).unwrap();
        let fd = finite_difference(&x0, 1e-6, |x| x.zip_map(&t, |a, b| (a - b) * (a - b)).sum() / 6.0);
        assert!(relative_error(grads.get(x).unwrap(), &fd) < 1e-8);
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 2));
        assert!(g.matmul(a, a).is_err());
        assert!(g.add(a, b).is_err());
        assert!(g.add_row(a, b).is_err());
        assert!(g.slice_rows(a, 1, 2).is_err());
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn probe_records_only_requested_layers() {
        let mut g = Graph::new();
        g.probe_layers(vec![1]);
        let x = g.constant(Tensor::zeros(4, 4));
        g.attention(x, x, x, 2, 0.5, Some(0)).unwrap();
        g.attention(x, x, x, 2, 0.5, Some(1)).unwrap();
        assert_eq!(g.probes().len(), 2);
        assert!(g.probes().iter().all(|p| p.layer == 1));
        assert!((g.probes()[0].stats.mean - 4f64.ln()).abs() < 1e-12);
    }
}

use std::collections::HashMap;

use super::{Module, Param, Tensor};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044715;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    /// Right operand is a vector matching the trailing dimension of the left.
    Trailing,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Div(Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Gelu(Var),
    Relu(Var),
    Softplus(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    SumAll(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Softmax(Var),
    CausalSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SelectRows {
        src: Var,
        rows: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of one forward pass.
///
/// Nodes are stored in creation order, which is also a valid topological
/// order. Parameters registered through [`Graph::param`] are deduplicated by
/// name so a parameter used many times is a single leaf with fan-out.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

/// Result of a backward sweep. Holds one optional gradient per node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Gradients of every registered parameter that received one, in registration order.
    pub fn param_grads(&self) -> Vec<(String, Vec<f64>)> {
        self.params
            .iter()
            .filter_map(|(n, v)| self.wrt(*v).map(|g| (n.clone(), g.to_vec())))
            .collect()
    }

    /// Adds parameter gradients into the matching `Param::value.grad` slots.
    pub fn accumulate_into(&self, module: &mut dyn Module) -> Result<()> {
        let lookup: HashMap<&str, Var> = self.params.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        let mut res = Ok(());
        module.visit_mut(&mut |p| {
            if !p.value.requires_grad || res.is_err() {
                return;
            }
            if let Some(g) = lookup.get(p.name.as_str()).and_then(|v| self.wrt(*v)) {
                res = p.value.accumulate_grad(g);
            }
        });
        res
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite(vals: &[f64], what: &str) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite input to {what}")))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn transpose_2d(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn add_into(acc: &mut Option<Vec<f64>>, g: &[f64]) {
    match acc {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *acc = Some(g.to_vec()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph node is well-formed")
    }

    /// Records a leaf; differentiable iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// Records a non-differentiable leaf regardless of the tensor's flag.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Registers a named parameter, reusing the existing leaf if the name was seen.
    pub fn param(&mut self, p: &Param) -> Var {
        if let Some(&v) = self.param_index.get(&p.name) {
            return v;
        }
        let v = self.leaf(&p.value);
        self.params.push((p.name.clone(), v));
        self.param_index.insert(p.name.clone(), v);
        v
    }

    fn needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.node(*v).needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim(format!("transpose of rank-{} tensor {s:?}", s.len())));
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose_2d(self.value(x), r, c);
        let ng = self.needs(&[x]);
        Ok(self.push(vec![c, r], out, Op::Transpose(x), ng))
    }

    fn bcast(&self, a: Var, b: Var, what: &str) -> Result<Bcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Bcast::Same)
        } else if sb.len() == 1 && sa.last() == Some(&sb[0]) {
            Ok(Bcast::Trailing)
        } else {
            Err(Error::dim(format!("{what} of {sa:?} and {sb:?}")))
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(Var, Var, Bcast) -> Op,
    ) -> Result<Var> {
        let bc = self.bcast(a, b, what)?;
        let (va, vb) = (self.value(a), self.value(b));
        let w = vb.len();
        let out: Vec<f64> = va
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, vb[if bc == Bcast::Same { i } else { i % w }]))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, out, op(a, b, bc), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x]);
        self.push(shape, out, op, ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    /// Mean over one axis; the axis is removed (a rank-1 input yields shape `[1]`).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::dim(format!("mean over axis {axis} of {s:?}")));
        }
        let (outer, ext, inner) = split_axis(&s, axis);
        let v = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                let base = (o * ext + e) * inner;
                for i in 0..inner {
                    out[o * inner + i] += v[base + i];
                }
            }
        }
        out.iter_mut().for_each(|y| *y /= ext as f64);
        let mut shape: Vec<usize> = s[..axis].iter().chain(&s[axis + 1..]).copied().collect();
        if shape.is_empty() {
            shape.push(1);
        }
        let ng = self.needs(&[x]);
        Ok(self.push(shape, out, Op::MeanAxis { x, axis }, ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.needs(&[x]);
        self.push(vec![1], vec![s], Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(Error::dim(format!("concat along axis {axis} of {s0:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible =
                s.len() == s0.len() && s.iter().zip(&s0).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!("concat of {s0:?} and {s:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&s0, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let ext = self.shape(*p)[axis];
                let v = self.value(*p);
                out.extend_from_slice(&v[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let ng = self.needs(parts);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Half-open slice `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(Error::dim(format!("slice [{start}, {end}) on axis {axis} of {s:?}")));
        }
        let (outer, ext, inner) = split_axis(&s, axis);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&v[(o * ext + start) * inner..(o * ext + end) * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let ng = self.needs(&[x]);
        Ok(self.push(shape, out, Op::Slice { x, axis, start }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() || shape.contains(&0) {
            return Err(Error::dim(format!("reshape {:?} into {shape:?}", self.shape(x))));
        }
        let v = self.value(x).to_vec();
        let ng = self.needs(&[x]);
        Ok(self.push(shape.to_vec(), v, Op::Reshape(x), ng))
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        check_finite(self.value(x), "softmax")?;
        let n = *self.shape(x).last().expect("rank >= 1");
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x]);
        Ok(self.push(shape, out, Op::Softmax(x), ng))
    }

    /// Row-wise softmax of a square `[L, L]` score matrix where row `i` only
    /// sees columns `j <= i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::dim(format!("causal softmax needs a square matrix, got {s:?}")));
        }
        check_finite(self.value(x), "causal softmax")?;
        let l = s[0];
        let mut out = self.value(x).to_vec();
        for (i, row) in out.chunks_mut(l).enumerate() {
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].iter_mut().for_each(|v| *v = 0.0);
        }
        let ng = self.needs(&[x]);
        Ok(self.push(s, out, Op::CausalSoftmax(x), ng))
    }

    /// Standardizes each last-dimension slice (biased variance) then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().expect("rank >= 1");
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim(format!(
                "layer_norm of {s:?} with gain {:?} and bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Numeric(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        let ng = self.needs(&[x, gain, bias]);
        Ok(self.push(
            s,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Mean negative log-softmax of the target class for each row of `logits[b, c]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::dim(format!(
                "cross_entropy of logits {s:?} with {} targets",
                targets.len()
            )));
        }
        let (b, c) = (s[0], s[1]);
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Index(format!("target class {t} out of range for {c} classes")));
        }
        check_finite(self.value(logits), "cross_entropy")?;
        let mut probs = self.value(logits).to_vec();
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_mut(c).zip(targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let ng = self.needs(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss / b as f64],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Gathers rows of a 2-D tensor; repeated indices are allowed.
    pub fn select_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if s.len() != 2 || rows.is_empty() {
            return Err(Error::dim(format!("select_rows from {s:?} with {} rows", rows.len())));
        }
        let (n, d) = (s[0], s[1]);
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Index(format!("row {r} out of range for {n} rows")));
        }
        let v = self.value(src);
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(&v[r * d..(r + 1) * d]);
        }
        let ng = self.needs(&[src]);
        Ok(self.push(
            vec![rows.len(), d],
            out,
            Op::SelectRows {
                src,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar loss. Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        // Only differentiable nodes report gradients.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            params: self.params,
        })
    }

    fn send(&self, grads: &mut [Option<Vec<f64>>], to: Var, g: &[f64]) {
        if self.node(to).needs_grad {
            add_into(&mut grads[to.0], g);
        }
    }

    fn send_bcast(&self, grads: &mut [Option<Vec<f64>>], to: Var, g: Vec<f64>, bc: Bcast) {
        if !self.node(to).needs_grad {
            return;
        }
        match bc {
            Bcast::Same => add_into(&mut grads[to.0], &g),
            Bcast::Trailing => {
                let w = self.node(to).value.len();
                let mut red = vec![0.0; w];
                for row in g.chunks(w) {
                    red.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                add_into(&mut grads[to.0], &red);
            }
        }
    }

    fn rhs_at(&self, b: Var, bc: Bcast, i: usize) -> f64 {
        let vb = &self.node(b).value;
        match bc {
            Bcast::Same => vb[i],
            Bcast::Trailing => vb[i % vb.len()],
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.node(*a).needs_grad {
                    let bt = transpose_2d(self.value(*b), k, n);
                    let mut da = vec![0.0; m * k];
                    matmul_into(g, &bt, &mut da, m, n, k);
                    add_into(&mut grads[a.0], &da);
                }
                if self.node(*b).needs_grad {
                    let at = transpose_2d(self.value(*a), m, k);
                    let mut db = vec![0.0; k * n];
                    matmul_into(&at, g, &mut db, k, m, n);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Transpose(x) => {
                let s = &node.shape;
                let back = transpose_2d(g, s[0], s[1]);
                self.send(grads, *x, &back);
            }
            Op::Add(a, b, bc) => {
                self.send(grads, *a, g);
                self.send_bcast(grads, *b, g.to_vec(), *bc);
            }
            Op::Sub(a, b, bc) => {
                self.send(grads, *a, g);
                self.send_bcast(grads, *b, g.iter().map(|v| -v).collect(), *bc);
            }
            Op::Mul(a, b, bc) => {
                let va = self.value(*a);
                let da: Vec<f64> = (0..g.len()).map(|i| g[i] * self.rhs_at(*b, *bc, i)).collect();
                let db: Vec<f64> = (0..g.len()).map(|i| g[i] * va[i]).collect();
                self.send(grads, *a, &da);
                self.send_bcast(grads, *b, db, *bc);
            }
            Op::Div(a, b, bc) => {
                let da: Vec<f64> = (0..g.len()).map(|i| g[i] / self.rhs_at(*b, *bc, i)).collect();
                let db: Vec<f64> = (0..g.len()).map(|i| -g[i] * out[i] / self.rhs_at(*b, *bc, i)).collect();
                self.send(grads, *a, &da);
                self.send_bcast(grads, *b, db, *bc);
            }
            Op::Scale(x, c) => {
                let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.send(grads, *x, &d);
            }
            Op::AddScalar(x) | Op::Reshape(x) => self.send(grads, *x, g),
            Op::Sigmoid(x) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.send(grads, *x, &d);
            }
            Op::Gelu(x) => {
                let d: Vec<f64> = g.iter().zip(self.value(*x)).map(|(g, &v)| g * gelu_grad(v)).collect();
                self.send(grads, *x, &d);
            }
            Op::Relu(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.send(grads, *x, &d);
            }
            Op::Softplus(x) => {
                let d: Vec<f64> = g.iter().zip(self.value(*x)).map(|(g, &v)| g * sigmoid(v)).collect();
                self.send(grads, *x, &d);
            }
            Op::MeanAxis { x, axis } => {
                let (outer, ext, inner) = split_axis(self.shape(*x), *axis);
                let mut d = vec![0.0; outer * ext * inner];
                let inv = 1.0 / ext as f64;
                for o in 0..outer {
                    for e in 0..ext {
                        for i in 0..inner {
                            d[(o * ext + e) * inner + i] = g[o * inner + i] * inv;
                        }
                    }
                }
                self.send(grads, *x, &d);
            }
            Op::SumAll(x) => {
                let d = vec![g[0]; self.value(*x).len()];
                self.send(grads, *x, &d);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for p in parts {
                    let ext = self.shape(*p)[*axis];
                    if self.node(*p).needs_grad {
                        let mut d = Vec::with_capacity(outer * ext * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g[base..base + ext * inner]);
                        }
                        add_into(&mut grads[p.0], &d);
                    }
                    offset += ext;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, ext, inner) = split_axis(self.shape(*x), *axis);
                let len = node.shape[*axis];
                let mut d = vec![0.0; outer * ext * inner];
                for o in 0..outer {
                    let dst = (o * ext + start) * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                self.send(grads, *x, &d);
            }
            Op::Softmax(x) | Op::CausalSoftmax(x) => {
                let n = *node.shape.last().expect("rank >= 1");
                let mut d = vec![0.0; g.len()];
                for ((drow, grow), yrow) in d.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        drow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.send(grads, *x, &d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.shape(*gain)[0];
                let gv = self.value(*gain);
                if self.node(*x).needs_grad {
                    let mut dx = vec![0.0; g.len()];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let rg = &g[r * d..(r + 1) * d];
                        let rh = &xhat[r * d..(r + 1) * d];
                        let dh: Vec<f64> = rg.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dhh = dh.iter().zip(rh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[r * d + j] = is * (dh[j] - mean_dh - rh[j] * mean_dhh);
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                if self.node(*gain).needs_grad {
                    let mut dg = vec![0.0; d];
                    for (i, (gi, hi)) in g.iter().zip(xhat).enumerate() {
                        dg[i % d] += gi * hi;
                    }
                    add_into(&mut grads[gain.0], &dg);
                }
                if self.node(*bias).needs_grad {
                    let mut db = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        db[i % d] += gi;
                    }
                    add_into(&mut grads[bias.0], &db);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let b = targets.len();
                let c = probs.len() / b;
                let scale = g[0] / b as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * c + t] -= scale;
                }
                self.send(grads, *logits, &d);
            }
            Op::SelectRows { src, rows } => {
                let s = self.shape(*src);
                let d = s[1];
                let mut acc = vec![0.0; s[0] * d];
                for (k, &r) in rows.iter().enumerate() {
                    acc[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(&g[k * d..(k + 1) * d])
                        .for_each(|(a, b)| *a += b);
                }
                self.send(grads, *src, &acc);
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

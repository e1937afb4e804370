use super::{ParamTree, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    SqrtEps(Var),
    LogClamp(Var, f64),
    Softmax(Var),
    RmsNorm { x: Var, gain: Var, inv: Vec<f64> },
    Embedding { table: Var, ids: Vec<Option<usize>> },
    Gather { x: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Reshape(Var),
    Transpose(Var),
    Rope { x: Var, heads: usize, positions: Vec<f64>, base: f64 },
    Attention { q: Var, k: Var, v: Var, heads: usize, blocks: Vec<usize>, probs: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, weights: Vec<f64>, probs: Vec<f64>, nll: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SpectralNorm { w: Var, u_in: Vec<f64>, u: Vec<f64>, v: Vec<f64>, a_norm: f64, sigma: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::AddScalar(..) => "add_scalar",
            Op::Scale(..) => "scale",
            Op::Gelu(..) => "gelu",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Abs(..) => "abs",
            Op::SqrtEps(..) => "sqrt_eps",
            Op::LogClamp(..) => "log_clamp",
            Op::Softmax(..) => "softmax",
            Op::RmsNorm { .. } => "rms_norm",
            Op::Embedding { .. } => "embedding",
            Op::Gather { .. } => "gather",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::Rope { .. } => "rope",
            Op::Attention { .. } => "attention",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SpectralNorm { .. } => "spectral_norm",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A tape of operations over a borrowed parameter tree.
///
/// Not thread-safe by design: build and differentiate one graph per thread.
pub struct Graph<'p> {
    params: &'p ParamTree,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    non_finite: Option<(usize, &'static str)>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Grads {
    params: Vec<Option<Vec<f64>>>,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient of the parameter at `index` in the tree, `None` if unused.
    pub fn param(&self, index: usize) -> Option<&[f64]> {
        self.params.get(index).and_then(|g| g.as_deref())
    }

    pub fn by_name(&self, params: &ParamTree, name: &str) -> Option<&[f64]> {
        params.index_of(name).and_then(|i| self.param(i))
    }

    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn global_norm(&self) -> f64 {
        self.params.iter().flatten().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Multiplies all parameter gradients by `s`.
    pub fn scale(&mut self, s: f64) {
        for g in self.params.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

/// `c = alpha * a * b + beta * c` with arbitrary row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, c: usize, rs: usize, cs: usize| (r.saturating_sub(1)) * rs + (c.saturating_sub(1)) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: every index touched by the kernel lies within the slices, checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, n: usize) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn rope_angle(pos: f64, j: usize, dh: usize, base: f64) -> (f64, f64) {
    let theta = pos * base.powf(-2.0 * j as f64 / dh as f64);
    theta.sin_cos()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamTree) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()], non_finite: None }
    }

    pub fn params(&self) -> &'p ParamTree {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Node for a named parameter; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self.params.index_of(name).ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if let Some(v) = self.param_vars[idx] {
            return Ok(v);
        }
        let v = self.push(self.params.by_index(idx).1.clone(), Op::Param);
        self.param_vars[idx] = Some(v);
        Ok(v)
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.params.index_of(name).is_some()
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        match s.len() {
            1 => Ok((1, s[0])),
            2 => Ok((s[0], s[1])),
            _ => Err(shape_err(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, op)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(out, op)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if self.shape(b).len() != 2 || k != k2 {
            return Err(shape_err("matmul", format!("{:?} x {:?}", self.shape(a), self.shape(b))));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, self.value(a).data(), k, 1, self.value(b).data(), n, 1, 0.0, &mut out, n, 1);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "add_row")?;
        if self.value(row).numel() != n {
            return Err(shape_err("add_row", format!("{:?} + row {:?}", self.shape(x), self.shape(row))));
        }
        let r = self.value(row).data().to_vec();
        let t = self.value(x);
        let data = t.data().iter().enumerate().map(|(i, &v)| v + r[i % n]).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, f64::abs, Op::Abs(x))
    }

    /// `sqrt(x + eps)`.
    pub fn sqrt_eps(&mut self, x: Var, eps: f64) -> Var {
        self.map(x, |v| (v + eps).sqrt(), Op::SqrtEps(x))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamp(&mut self, x: Var, floor: f64) -> Var {
        self.map(x, |v| v.max(floor).ln(), Op::LogClamp(x, floor))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "softmax")?;
        let t = self.value(x);
        let mut out = t.data().to_vec();
        for r in 0..m {
            softmax_in_place(&mut out[r * n..(r + 1) * n]);
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Row-wise RMS normalization with a learned gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2(x, "rms_norm")?;
        if self.value(gain).numel() != n {
            return Err(shape_err("rms_norm", format!("gain {:?} for rows of {n}", self.shape(gain))));
        }
        let t = self.value(x);
        let g = self.value(gain).data();
        let mut out = vec![0.0; m * n];
        let mut inv = vec![0.0; m];
        for r in 0..m {
            let row = &t.data()[r * n..(r + 1) * n];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / n as f64;
            inv[r] = 1.0 / (ms + eps).sqrt();
            for j in 0..n {
                out[r * n + j] = row[j] * inv[r] * g[j];
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(out, Op::RmsNorm { x, gain, inv }))
    }

    /// Rows of `table` selected by `ids`; `None` yields a zero row.
    pub fn embedding(&mut self, table: Var, ids: &[Option<usize>]) -> Result<Var> {
        let (v, d) = self.dims2(table, "embedding")?;
        let mut out = vec![0.0; ids.len() * d];
        let t = self.value(table).data();
        for (i, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                if id >= v {
                    return Err(shape_err("embedding", format!("id {id} outside table of {v} rows")));
                }
                out[i * d..(i + 1) * d].copy_from_slice(&t[id * d..(id + 1) * d]);
            }
        }
        Ok(self.push(Tensor::new(vec![ids.len(), d], out)?, Op::Embedding { table, ids: ids.to_vec() }))
    }

    /// `out.flat[i] = x.flat[idx[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).data();
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.len()) {
            return Err(shape_err("gather", format!("index {bad} outside {} values", t.len())));
        }
        let data = idx.iter().map(|&i| t[i]).collect();
        let out = Tensor::new(shape, data).map_err(|_| shape_err("gather", "shape does not match index count".into()))?;
        Ok(self.push(out, Op::Gather { x, idx }))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| shape_err("concat_rows", "no inputs".into()))?;
        let (_, n) = self.dims2(first, "concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let (m, c) = self.dims2(x, "concat_rows")?;
            if c != n {
                return Err(shape_err("concat_rows", format!("column count {c} vs {n}")));
            }
            rows += m;
            data.extend_from_slice(self.value(x).data());
        }
        Ok(self.push(Tensor::new(vec![rows, n], data)?, Op::ConcatRows(xs.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_rows")?;
        if start + len > m {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::new(vec![len, n], data)?, Op::SliceRows { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(shape.to_vec(), t.data().to_vec())
            .map_err(|_| shape_err("reshape", format!("{:?} -> {shape:?}", t.shape())))?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "transpose")?;
        let t = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t[i * n + j];
            }
        }
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(x)))
    }

    /// Rotary embedding on `[T, heads * dh]`, rotating pairs `(j, j + dh/2)` within each head.
    pub fn rope(&mut self, x: Var, heads: usize, positions: &[f64], base: f64) -> Result<Var> {
        let (t, d) = self.dims2(x, "rope")?;
        if heads == 0 || d % heads != 0 || (d / heads) % 2 != 0 || positions.len() != t {
            return Err(shape_err("rope", format!("{t}x{d} with {heads} heads and {} positions", positions.len())));
        }
        let dh = d / heads;
        let half = dh / 2;
        let src = self.value(x).data();
        let mut out = src.to_vec();
        for (r, &p) in positions.iter().enumerate() {
            for h in 0..heads {
                let o = r * d + h * dh;
                for j in 0..half {
                    let (s, c) = rope_angle(p, j, dh, base);
                    let (a, b) = (src[o + j], src[o + j + half]);
                    out[o + j] = a * c - b * s;
                    out[o + j + half] = a * s + b * c;
                }
            }
        }
        let op = Op::Rope { x, heads, positions: positions.to_vec(), base };
        Ok(self.push(Tensor::new(vec![t, d], out)?, op))
    }

    /// Multi-head scaled dot-product attention over `[T, d]` projections.
    ///
    /// Rows are split into consecutive `blocks` that attend only within themselves,
    /// so several independent sequences can share one call.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool, blocks: &[usize]) -> Result<Var> {
        let (t, d) = self.dims2(q, "attention")?;
        if self.shape(k) != self.shape(q) || self.shape(v) != self.shape(q) {
            return Err(shape_err("attention", format!("q {:?} k {:?} v {:?}", self.shape(q), self.shape(k), self.shape(v))));
        }
        if heads == 0 || d % heads != 0 || blocks.iter().sum::<usize>() != t {
            return Err(shape_err("attention", format!("{t} rows, dim {d}, {heads} heads, blocks {blocks:?}")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; t * d];
        let mut probs = Vec::with_capacity(blocks.iter().map(|n| heads * n * n).sum());
        let mut r0 = 0;
        for &n in blocks {
            for h in 0..heads {
                let off = r0 * d + h * dh;
                let mut s = vec![0.0; n * n];
                gemm(n, dh, n, scale, &qd[off..], d, 1, &kd[off..], 1, d, 0.0, &mut s, n, 1);
                for i in 0..n {
                    let row = &mut s[i * n..(i + 1) * n];
                    if causal {
                        row[i + 1..].iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
                    }
                    softmax_in_place(row);
                }
                gemm(n, n, dh, 1.0, &s, n, 1, &vd[off..], d, 1, 0.0, &mut out[off..], d, 1);
                probs.extend_from_slice(&s);
            }
            r0 += n;
        }
        let op = Op::Attention { q, k, v, heads, blocks: blocks.to_vec(), probs };
        Ok(self.push(Tensor::new(vec![t, d], out)?, op))
    }

    /// `sum_i w_i * -ln softmax(logits_i)[target_i]` as a scalar.
    ///
    /// Rows with zero weight or no target contribute nothing, to value or gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], weights: &[f64]) -> Result<Var> {
        let (m, n) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != m || weights.len() != m {
            return Err(shape_err("cross_entropy", format!("{m} rows, {} targets, {} weights", targets.len(), weights.len())));
        }
        let l = self.value(logits).data();
        let mut probs = vec![0.0; m * n];
        let mut nll = vec![0.0; m];
        let mut total = 0.0;
        for r in 0..m {
            let Some(t) = targets[r] else { continue };
            if t >= n {
                return Err(shape_err("cross_entropy", format!("target {t} outside {n} classes")));
            }
            let row = &mut probs[r * n..(r + 1) * n];
            row.copy_from_slice(&l[r * n..(r + 1) * n]);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            nll[r] = lse - row[t];
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
            if weights[r] != 0.0 {
                total += weights[r] * nll[r];
            }
        }
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs, nll };
        Ok(self.push(Tensor::scalar(total), op))
    }

    /// Per-row negative log-likelihoods recorded by a [`Graph::cross_entropy`] node.
    pub fn row_nll(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::CrossEntropy { nll, .. } => Some(nll),
            _ => None,
        }
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// `W / sigma` with `sigma` estimated by one power iteration from `u`.
    ///
    /// The refreshed `u` is available through [`Graph::spectral_u`]. A zero
    /// matrix passes through unscaled.
    pub fn spectral_norm(&mut self, w: Var, u: &[f64]) -> Result<Var> {
        let (o, i) = self.dims2(w, "spectral_norm")?;
        if u.len() != o {
            return Err(shape_err("spectral_norm", format!("u of length {} for {o} rows", u.len())));
        }
        let wd = self.value(w).data();
        let mut v = vec![0.0; i];
        for r in 0..o {
            for c in 0..i {
                v[c] += wd[r * i + c] * u[r];
            }
        }
        let a_norm = normalize(&mut v);
        let mut u2 = vec![0.0; o];
        for r in 0..o {
            u2[r] = (0..i).map(|c| wd[r * i + c] * v[c]).sum();
        }
        let sigma = normalize(&mut u2);
        let s = if sigma > 1e-12 { sigma } else { 1.0 };
        let out = Tensor::new(vec![o, i], wd.iter().map(|x| x / s).collect())?;
        let sigma = if sigma > 1e-12 && a_norm > 1e-12 { sigma } else { 0.0 };
        Ok(self.push(out, Op::SpectralNorm { w, u_in: u.to_vec(), u: u2, v, a_norm, sigma }))
    }

    pub fn spectral_u(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::SpectralNorm { u, .. } => Some(u),
            _ => None,
        }
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if let Some((node, op)) = self.non_finite {
            if node <= loss.0 {
                return Err(Error::Shape { op, detail: format!("non-finite value produced at node {node}") });
            }
        }
        if self.value(loss).numel() != 1 {
            return Err(shape_err("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = vec![None; self.params.len()];
        for (p, v) in self.param_vars.iter().enumerate() {
            if let Some(v) = v {
                params[p] = grads[v.0].clone();
            }
        }
        Ok(Grads { params, nodes: grads })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let numel = |v: Var| self.nodes[v.0].value.numel();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a, "matmul").expect("checked");
                let n = self.shape(*b)[1];
                let (ad, bd) = (val(*a).to_vec(), val(*b).to_vec());
                let da = acc(grads, *a, m * k);
                gemm(m, n, k, 1.0, g, n, 1, &bd, 1, n, 1.0, da, k, 1);
                let db = acc(grads, *b, k * n);
                gemm(k, m, n, 1.0, &ad, 1, k, g, n, 1, 1.0, db, n, 1);
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, g.len()), g, 1.0);
                add_into(acc(grads, *b, g.len()), g, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, g.len()), g, 1.0);
                add_into(acc(grads, *b, g.len()), g, -1.0);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).to_vec(), val(*b).to_vec());
                let da = acc(grads, *a, g.len());
                for j in 0..g.len() {
                    da[j] += g[j] * bd[j];
                }
                let db = acc(grads, *b, g.len());
                for j in 0..g.len() {
                    db[j] += g[j] * ad[j];
                }
            }
            Op::AddRow(x, row) => {
                add_into(acc(grads, *x, g.len()), g, 1.0);
                let n = numel(*row);
                let dr = acc(grads, *row, n);
                for (j, gv) in g.iter().enumerate() {
                    dr[j % n] += gv;
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => add_into(acc(grads, *x, g.len()), g, 1.0),
            Op::Scale(x, c) => add_into(acc(grads, *x, g.len()), g, *c),
            Op::Gelu(x) => self.unary_back(*x, y, g, grads, |xv, _| gelu_grad(xv)),
            Op::Relu(x) => self.unary_back(*x, y, g, grads, |xv, _| if xv > 0.0 { 1.0 } else { 0.0 }),
            Op::LeakyRelu(x, s) => self.unary_back(*x, y, g, grads, |xv, _| if xv > 0.0 { 1.0 } else { *s }),
            Op::Abs(x) => self.unary_back(*x, y, g, grads, |xv, _| {
                if xv > 0.0 {
                    1.0
                } else if xv < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::SqrtEps(x) => self.unary_back(*x, y, g, grads, |_, yv| 0.5 / yv),
            Op::LogClamp(x, floor) => self.unary_back(*x, y, g, grads, |xv, _| if xv > *floor { 1.0 / xv } else { 0.0 }),
            Op::Softmax(x) => {
                let n = node.value.cols();
                let dx = acc(grads, *x, g.len());
                for r in 0..g.len() / n {
                    let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::RmsNorm { x, gain, inv } => {
                let n = node.value.cols();
                let xd = val(*x).to_vec();
                let gd = val(*gain).to_vec();
                let mut dgain = vec![0.0; n];
                let dx = acc(grads, *x, g.len());
                for (r, &iv) in inv.iter().enumerate() {
                    let o = r * n;
                    let mut c = 0.0;
                    for j in 0..n {
                        c += g[o + j] * gd[j] * xd[o + j] * iv;
                        dgain[j] += g[o + j] * xd[o + j] * iv;
                    }
                    c /= n as f64;
                    for j in 0..n {
                        dx[o + j] += iv * (g[o + j] * gd[j] - xd[o + j] * iv * c);
                    }
                }
                add_into(acc(grads, *gain, n), &dgain, 1.0);
            }
            Op::Embedding { table, ids } => {
                let d = node.value.cols();
                let dt = acc(grads, *table, numel(*table));
                for (r, id) in ids.iter().enumerate() {
                    if let Some(id) = id {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d], 1.0);
                    }
                }
            }
            Op::Gather { x, idx } => {
                let dx = acc(grads, *x, numel(*x));
                for (j, &s) in idx.iter().enumerate() {
                    dx[s] += g[j];
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for x in xs {
                    let n = numel(*x);
                    add_into(acc(grads, *x, n), &g[off..off + n], 1.0);
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let n = node.value.cols();
                let dx = acc(grads, *x, numel(*x));
                add_into(&mut dx[start * n..start * n + g.len()], g, 1.0);
            }
            Op::Transpose(x) => {
                let (m, n) = self.dims2(*x, "transpose").expect("checked");
                let dx = acc(grads, *x, m * n);
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] += g[j * m + i];
                    }
                }
            }
            Op::Rope { x, heads, positions, base } => {
                let d = node.value.cols();
                let dh = d / heads;
                let half = dh / 2;
                let dx = acc(grads, *x, g.len());
                for (r, &p) in positions.iter().enumerate() {
                    for h in 0..*heads {
                        let o = r * d + h * dh;
                        for j in 0..half {
                            let (s, c) = rope_angle(p, j, dh, *base);
                            let (ga, gb) = (g[o + j], g[o + j + half]);
                            dx[o + j] += ga * c + gb * s;
                            dx[o + j + half] += -ga * s + gb * c;
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, blocks, probs } => {
                let d = node.value.cols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (val(*q), val(*k), val(*v));
                let mut dq = vec![0.0; g.len()];
                let mut dk = vec![0.0; g.len()];
                let mut dv = vec![0.0; g.len()];
                let mut r0 = 0;
                let mut poff = 0;
                for &n in blocks {
                    for h in 0..*heads {
                        let off = r0 * d + h * dh;
                        let p = &probs[poff..poff + n * n];
                        poff += n * n;
                        let mut ds = vec![0.0; n * n];
                        gemm(n, dh, n, 1.0, &g[off..], d, 1, &vd[off..], 1, d, 0.0, &mut ds, n, 1);
                        for i in 0..n {
                            let (pr, dr) = (&p[i * n..(i + 1) * n], &mut ds[i * n..(i + 1) * n]);
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                dr[j] = pr[j] * (dr[j] - dot) * scale;
                            }
                        }
                        gemm(n, n, dh, 1.0, &ds, n, 1, &kd[off..], d, 1, 1.0, &mut dq[off..], d, 1);
                        gemm(n, n, dh, 1.0, &ds, 1, n, &qd[off..], d, 1, 1.0, &mut dk[off..], d, 1);
                        gemm(n, n, dh, 1.0, p, 1, n, &g[off..], d, 1, 1.0, &mut dv[off..], d, 1);
                    }
                    r0 += n;
                }
                add_into(acc(grads, *q, dq.len()), &dq, 1.0);
                add_into(acc(grads, *k, dk.len()), &dk, 1.0);
                add_into(acc(grads, *v, dv.len()), &dv, 1.0);
            }
            Op::CrossEntropy { logits, targets, weights, probs, .. } => {
                let n = self.value(*logits).cols();
                let dl = acc(grads, *logits, probs.len());
                for (r, t) in targets.iter().enumerate() {
                    let (Some(t), w) = (t, weights[r]) else { continue };
                    if w == 0.0 {
                        continue;
                    }
                    let s = w * g[0];
                    for j in 0..n {
                        dl[r * n + j] += s * probs[r * n + j];
                    }
                    dl[r * n + t] -= s;
                }
            }
            Op::Sum(x) => acc(grads, *x, numel(*x)).iter_mut().for_each(|d| *d += g[0]),
            Op::Mean(x) => {
                let n = numel(*x);
                acc(grads, *x, n).iter_mut().for_each(|d| *d += g[0] / n as f64);
            }
            Op::SpectralNorm { w, u_in, u, v, a_norm, sigma } => {
                let wd = val(*w).to_vec();
                let dw = acc(grads, *w, wd.len());
                if *sigma == 0.0 {
                    add_into(dw, g, 1.0);
                } else {
                    // sigma = |W v| with v = W^T u_in / |W^T u_in|, differentiated through v.
                    let cols = v.len();
                    let mut cperp = vec![0.0; cols];
                    for r in 0..u.len() {
                        for j in 0..cols {
                            cperp[j] += wd[r * cols + j] * u[r];
                        }
                    }
                    for j in 0..cols {
                        cperp[j] = (cperp[j] - sigma * v[j]) / a_norm;
                    }
                    let inner: f64 = g.iter().zip(&wd).map(|(a, b)| a * b).sum();
                    let c = inner / (sigma * sigma);
                    for r in 0..u.len() {
                        for j in 0..cols {
                            let ds = u[r] * v[j] + u_in[r] * cperp[j];
                            dw[r * cols + j] += g[r * cols + j] / sigma - c * ds;
                        }
                    }
                }
            }
        }
    }

    fn unary_back(&self, x: Var, y: &[f64], g: &[f64], grads: &mut [Option<Vec<f64>>], d: impl Fn(f64, f64) -> f64) {
        let xd = self.nodes[x.0].value.data();
        let dx = acc(grads, x, g.len());
        for j in 0..g.len() {
            dx[j] += g[j] * d(xd[j], y[j]);
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}

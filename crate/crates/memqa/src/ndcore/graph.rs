//! Reverse-mode automatic differentiation over a flat tape.
//!
//! A [`Graph`] records every forward operation as a node holding its output
//! tensor; [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients for every parameter leaf reachable from a scalar loss. Values
//! are computed eagerly, so a node's output can be inspected as soon as it
//! is created (the REINFORCE losses sample actions from live probabilities
//! mid-construction).

use crate::ndcore::rng::RngStream;
use crate::ndcore::tensor::{self, Tensor};
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

pub struct Graph {
    nodes: Vec<Node>,
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

enum Op {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    MaxOverTime {
        x: Var,
        argmax: Vec<Option<usize>>,
    },
    MeanOverTime {
        x: Var,
        mask: Vec<bool>,
        count: usize,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    StackRows {
        xs: Vec<Var>,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    Hadamard {
        a: Var,
        b: Var,
    },
    AbsDiff {
        a: Var,
        b: Var,
    },
    Cosine {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Div {
        a: Var,
        b: Var,
    },
    AddN {
        xs: Vec<Var>,
    },
    Scale {
        x: Var,
        c: f64,
    },
    AddConst {
        x: Var,
        c: f64,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Log {
        x: Var,
    },
    Select {
        x: Var,
        index: usize,
    },
}

/// Values below this are clamped before `ln`; the gradient is cut there too.
pub const LOG_CLAMP: f64 = 1e-12;

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Graph {
            nodes: Vec::with_capacity(n),
        }
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

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf: model inputs, no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn scalar_input(&mut self, x: f64) -> Var {
        self.input(Tensor::scalar(x))
    }

    /// Parameter leaf: gradients accumulate here.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// `x·w + b`; `x` is `[k]` or `[m×k]`, `w` is `[k×n]`, `b` is `[n]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if ws.len() != 2 || bs.len() != 1 || bs[0] != ws[1] {
            return Err(Error::Shape(format!(
                "affine weights {ws:?} with bias {bs:?}"
            )));
        }
        let k = ws[0];
        let n = ws[1];
        let ok = match xs.as_slice() {
            [kk] => *kk == k,
            [_, kk] => *kk == k,
            _ => false,
        };
        if !ok {
            return Err(Error::Shape(format!("affine input {xs:?} with weights {ws:?}")));
        }
        let xm = as_matrix(self.value(x), k);
        let out = tensor::matmul(&xm, self.value(w))?;
        let mut out = out;
        for r in 0..out.rows() {
            let brow = self.value(b).data().to_vec();
            for (o, bv) in out.row_mut(r).iter_mut().zip(&brow) {
                *o += bv;
            }
        }
        let value = if xs.len() == 1 {
            Tensor::vector(out.data().to_vec())
        } else {
            out
        };
        let _ = n;
        let grad = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Affine { x, w, b }, value, grad))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = Tensor::new(
            self.value(x).shape().to_vec(),
            self.value(x).data().iter().map(|&v| v.max(0.0)).collect(),
        )
        .expect("same shape");
        let grad = self.needs(x);
        self.push(Op::Relu { x }, value, grad)
    }

    /// Softmax along `axis` of a 1-D or 2-D tensor.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let value = match (t.ndim(), axis) {
            (1, 0) => Tensor::vector(softmax_slice(t.data())),
            (2, 1) => {
                let mut out = Tensor::zeros(t.shape());
                for r in 0..t.rows() {
                    out.row_mut(r).copy_from_slice(&softmax_slice(t.row(r)));
                }
                out
            }
            (2, 0) => {
                let (rows, cols) = (t.rows(), t.cols());
                let mut out = Tensor::zeros(t.shape());
                for c in 0..cols {
                    let col: Vec<f64> = (0..rows).map(|r| t.data()[r * cols + c]).collect();
                    let sm = softmax_slice(&col);
                    for r in 0..rows {
                        out.data_mut()[r * cols + c] = sm[r];
                    }
                }
                out
            }
            (nd, ax) => {
                return Err(Error::Shape(format!(
                    "softmax axis {ax} on a {nd}-d tensor"
                )))
            }
        };
        let grad = self.needs(x);
        Ok(self.push(Op::Softmax { x, axis }, value, grad))
    }

    /// Inverted dropout: in train mode zeroes entries with probability
    /// `rate` and scales survivors by `1/(1-rate)`; in eval mode (or at
    /// rate 0) it is the identity and draws nothing from `rng`.
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0,1)")));
        }
        if !train || rate == 0.0 {
            let value = self.value(x).clone();
            let grad = self.needs(x);
            let mask = vec![1.0; value.len()];
            return Ok(self.push(Op::Dropout { x, mask }, value, grad));
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let grad = self.needs(x);
        Ok(self.push(Op::Dropout { x, mask }, value, grad))
    }

    /// Column-wise max of `x` (`[L×D]`) over rows where `mask` is true.
    /// With no unmasked rows the result is the zero vector and nothing
    /// receives gradient, so values stored in masked rows can never win.
    pub fn max_over_time(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(x);
        if t.ndim() != 2 || mask.len() != t.rows() {
            return Err(Error::Shape(format!(
                "max_over_time on {:?} with mask of {}",
                t.shape(),
                mask.len()
            )));
        }
        let cols = t.cols();
        let mut out = vec![0.0; cols];
        let mut argmax: Vec<Option<usize>> = vec![None; cols];
        for c in 0..cols {
            let mut best: Option<(usize, f64)> = None;
            for (r, &keep) in mask.iter().enumerate() {
                if !keep {
                    continue;
                }
                let v = t.data()[r * cols + c];
                if best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((r, v));
                }
            }
            if let Some((r, v)) = best {
                out[c] = v;
                argmax[c] = Some(r);
            }
        }
        let grad = self.needs(x);
        Ok(self.push(Op::MaxOverTime { x, argmax }, Tensor::vector(out), grad))
    }

    /// Column-wise mean of `x` (`[L×D]`) over rows where `mask` is true;
    /// zero vector when every row is masked.
    pub fn mean_over_time(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(x);
        if t.ndim() != 2 || mask.len() != t.rows() {
            return Err(Error::Shape(format!(
                "mean_over_time on {:?} with mask of {}",
                t.shape(),
                mask.len()
            )));
        }
        let cols = t.cols();
        let count = mask.iter().filter(|&&m| m).count();
        let mut out = vec![0.0; cols];
        if count > 0 {
            for (r, &keep) in mask.iter().enumerate() {
                if !keep {
                    continue;
                }
                for (o, &v) in out.iter_mut().zip(t.row(r)) {
                    *o += v;
                }
            }
            for o in &mut out {
                *o /= count as f64;
            }
        }
        let grad = self.needs(x);
        Ok(self.push(
            Op::MeanOverTime {
                x,
                mask: mask.to_vec(),
                count,
            },
            Tensor::vector(out),
            grad,
        ))
    }

    /// Valid 1-D convolution over time: `x` is `[T×C]`, `kernel` is
    /// `[k×C×n]`, `bias` is `[n]`; output is `[(T-k+1)×n]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xs, ks, bs) = (
            self.value(x).shape().to_vec(),
            self.value(kernel).shape().to_vec(),
            self.value(bias).shape().to_vec(),
        );
        if xs.len() != 2 || ks.len() != 3 || bs.len() != 1 {
            return Err(Error::Shape(format!(
                "conv1d input {xs:?}, kernel {ks:?}, bias {bs:?}"
            )));
        }
        let (t_len, c) = (xs[0], xs[1]);
        let (kw, kc, n) = (ks[0], ks[1], ks[2]);
        if kc != c || bs[0] != n || kw == 0 || kw > t_len {
            return Err(Error::Shape(format!(
                "conv1d input {xs:?} incompatible with kernel {ks:?} / bias {bs:?}"
            )));
        }
        let out_t = t_len - kw + 1;
        let mut out = vec![0.0; out_t * n];
        let xd = self.value(x).data().to_vec();
        let kd = self.value(kernel).data().to_vec();
        let bd = self.value(bias).data().to_vec();
        for t in 0..out_t {
            let orow = &mut out[t * n..(t + 1) * n];
            orow.copy_from_slice(&bd);
            for dt in 0..kw {
                let xrow = &xd[(t + dt) * c..(t + dt + 1) * c];
                for (ci, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let krow = &kd[(dt * c + ci) * n..(dt * c + ci + 1) * n];
                    for (o, &kv) in orow.iter_mut().zip(krow) {
                        *o += xv * kv;
                    }
                }
            }
        }
        let grad = self.needs(x) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            Op::Conv1d { x, kernel, bias },
            Tensor::matrix(out_t, n, out)?,
            grad,
        ))
    }

    /// Concatenate 1-D tensors (axis 0) or 2-D tensors (axis 0 stacks rows,
    /// axis 1 widens rows).
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let first = self.value(xs[0]).shape().to_vec();
        let value = match (first.len(), axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for &v in xs {
                    let t = self.value(v);
                    if t.ndim() != 1 {
                        return Err(Error::Shape("concat mixes ranks".into()));
                    }
                    data.extend_from_slice(t.data());
                }
                Tensor::vector(data)
            }
            (2, 0) => {
                let cols = first[1];
                let mut data = Vec::new();
                let mut rows = 0;
                for &v in xs {
                    let t = self.value(v);
                    if t.ndim() != 2 || t.cols() != cols {
                        return Err(Error::Shape(format!(
                            "concat axis 0 of {:?} with cols {}",
                            t.shape(),
                            cols
                        )));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::matrix(rows, cols, data)?
            }
            (2, 1) => {
                let rows = first[0];
                let total: usize = xs
                    .iter()
                    .map(|&v| self.value(v).cols())
                    .sum();
                let mut out = Tensor::zeros(&[rows, total]);
                for r in 0..rows {
                    let mut off = 0;
                    for &v in xs {
                        let t = self.value(v);
                        if t.ndim() != 2 || t.rows() != rows {
                            return Err(Error::Shape(format!(
                                "concat axis 1 of {:?} with rows {}",
                                t.shape(),
                                rows
                            )));
                        }
                        let w = t.cols();
                        out.row_mut(r)[off..off + w].copy_from_slice(t.row(r));
                        off += w;
                    }
                }
                out
            }
            (nd, ax) => {
                return Err(Error::Shape(format!(
                    "concat axis {ax} on a {nd}-d tensor"
                )))
            }
        };
        let grad = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            value,
            grad,
        ))
    }

    /// Stack 1-D tensors of equal length into a `[L×D]` matrix.
    pub fn stack_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("stack_rows of zero tensors".into()));
        }
        let d = self.value(xs[0]).len();
        let mut data = Vec::with_capacity(xs.len() * d);
        for &v in xs {
            let t = self.value(v);
            if t.ndim() != 1 || t.len() != d {
                return Err(Error::Shape(format!(
                    "stack_rows expects [{}] vectors, got {:?}",
                    d,
                    t.shape()
                )));
            }
            data.extend_from_slice(t.data());
        }
        let grad = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Op::StackRows { xs: xs.to_vec() },
            Tensor::matrix(xs.len(), d, data)?,
            grad,
        ))
    }

    /// Select rows of `table` (`[V×D]`) by index; backward scatter-adds.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.ndim() != 2 {
            return Err(Error::Shape(format!("gather from {:?}", t.shape())));
        }
        let (v, d) = (t.rows(), t.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::Shape(format!(
                "gather index {bad} out of range for table with {v} rows"
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let grad = self.needs(table);
        Ok(self.push(
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            Tensor::matrix(indices.len(), d, data)?,
            grad,
        ))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, |x, y| x * y)?;
        let grad = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Hadamard { a, b }, value, grad))
    }

    /// Elementwise `|a−b|`.
    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, |x, y| (x - y).abs())?;
        let grad = self.needs(a) || self.needs(b);
        Ok(self.push(Op::AbsDiff { a, b }, value, grad))
    }

    /// Cosine similarity of two vectors; 0 when either norm vanishes.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 1 || tb.ndim() != 1 || ta.len() != tb.len() {
            return Err(Error::Shape(format!(
                "cosine of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let denom = tensor::norm(ta.data()) * tensor::norm(tb.data());
        let value = if denom < f64::MIN_POSITIVE {
            0.0
        } else {
            tensor::dot(ta.data(), tb.data()) / denom
        };
        let grad = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Cosine { a, b }, Tensor::scalar(value), grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, |x, y| x + y)?;
        let grad = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, value, grad))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, |x, y| x - y)?;
        let grad = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub { a, b }, value, grad))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, |x, y| x * y)?;
        let grad = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul { a, b }, value, grad))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, |x, y| x / y)?;
        let grad = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Div { a, b }, value, grad))
    }

    /// n-ary elementwise sum of same-shaped tensors.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("add_n of zero tensors".into()));
        }
        let shape = self.value(xs[0]).shape().to_vec();
        let mut data = vec![0.0; self.value(xs[0]).len()];
        for &v in xs {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "add_n of {:?} and {:?}",
                    shape,
                    t.shape()
                )));
            }
            for (o, &x) in data.iter_mut().zip(t.data()) {
                *o += x;
            }
        }
        let grad = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Op::AddN { xs: xs.to_vec() },
            Tensor::new(shape, data)?,
            grad,
        ))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&v| v * c).collect(),
        )
        .expect("same shape");
        let grad = self.needs(x);
        self.push(Op::Scale { x, c }, value, grad)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&v| v + c).collect(),
        )
        .expect("same shape");
        let grad = self.needs(x);
        self.push(Op::AddConst { x, c }, value, grad)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let grad = self.needs(x);
        self.push(Op::Sum { x }, value, grad)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        let grad = self.needs(x);
        self.push(Op::Mean { x }, value, grad)
    }

    /// Elementwise natural log, clamped below at [`LOG_CLAMP`].
    pub fn log(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&v| v.max(LOG_CLAMP).ln()).collect(),
        )
        .expect("same shape");
        let grad = self.needs(x);
        self.push(Op::Log { x }, value, grad)
    }

    /// Extract one element as a `[1]` tensor.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        if index >= t.len() {
            return Err(Error::Shape(format!(
                "select index {index} out of range for {:?}",
                t.shape()
            )));
        }
        let value = Tensor::scalar(t.data()[index]);
        let grad = self.needs(x);
        Ok(self.push(Op::Select { x, index }, value, grad))
    }

    fn elementwise(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    /// Accumulate gradients of a scalar `loss` for every reachable node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward from non-scalar loss of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let gy = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &gy, &mut grads)?;
            grads[id] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) -> Result<()> {
        if !self.needs(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(g) => g.axpy(1.0, &delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&self, id: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let k = self.value(*w).rows();
                let xm = as_matrix(self.value(*x), k);
                let gym = as_matrix(gy, self.value(*w).cols());
                if self.needs(*x) {
                    let gx = tensor::matmul_nt(&gym, self.value(*w))?;
                    let gx = if self.value(*x).ndim() == 1 {
                        Tensor::vector(gx.data().to_vec())
                    } else {
                        gx
                    };
                    self.accum(grads, *x, gx)?;
                }
                if self.needs(*w) {
                    let gw = tensor::matmul_tn(&xm, &gym)?;
                    self.accum(grads, *w, gw)?;
                }
                if self.needs(*b) {
                    let n = self.value(*b).len();
                    let mut gb = vec![0.0; n];
                    for r in 0..gym.rows() {
                        for (o, &g) in gb.iter_mut().zip(gym.row(r)) {
                            *o += g;
                        }
                    }
                    self.accum(grads, *b, Tensor::vector(gb))?;
                }
            }
            Op::Relu { x } => {
                let xt = self.value(*x);
                let data: Vec<f64> = xt
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                    .collect();
                self.accum(grads, *x, Tensor::new(xt.shape().to_vec(), data)?)?;
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.shape());
                match (y.ndim(), axis) {
                    (1, 0) => {
                        softmax_backward(y.data(), gy.data(), gx.data_mut());
                    }
                    (2, 1) => {
                        for r in 0..y.rows() {
                            let cols = y.cols();
                            let (yr, gr) = (y.row(r), gy.row(r));
                            let mut out = vec![0.0; cols];
                            softmax_backward(yr, gr, &mut out);
                            gx.row_mut(r).copy_from_slice(&out);
                        }
                    }
                    (2, 0) => {
                        let (rows, cols) = (y.rows(), y.cols());
                        for c in 0..cols {
                            let yc: Vec<f64> = (0..rows).map(|r| y.data()[r * cols + c]).collect();
                            let gc: Vec<f64> = (0..rows).map(|r| gy.data()[r * cols + c]).collect();
                            let mut out = vec![0.0; rows];
                            softmax_backward(&yc, &gc, &mut out);
                            for r in 0..rows {
                                gx.data_mut()[r * cols + c] = out[r];
                            }
                        }
                    }
                    _ => unreachable!("validated at construction"),
                }
                self.accum(grads, *x, gx)?;
            }
            Op::Dropout { x, mask } => {
                let data: Vec<f64> = gy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                self.accum(grads, *x, Tensor::new(gy.shape().to_vec(), data)?)?;
            }
            Op::MaxOverTime { x, argmax } => {
                let xt = self.value(*x);
                let cols = xt.cols();
                let mut gx = Tensor::zeros(xt.shape());
                for (c, am) in argmax.iter().enumerate() {
                    if let Some(r) = am {
                        gx.data_mut()[r * cols + c] += gy.data()[c];
                    }
                }
                self.accum(grads, *x, gx)?;
            }
            Op::MeanOverTime { x, mask, count } => {
                if *count > 0 {
                    let xt = self.value(*x);
                    let mut gx = Tensor::zeros(xt.shape());
                    let scale = 1.0 / *count as f64;
                    for (r, &keep) in mask.iter().enumerate() {
                        if !keep {
                            continue;
                        }
                        for (o, &g) in gx.row_mut(r).iter_mut().zip(gy.data()) {
                            *o += g * scale;
                        }
                    }
                    self.accum(grads, *x, gx)?;
                }
            }
            Op::Conv1d { x, kernel, bias } => {
                let xt = self.value(*x);
                let kt = self.value(*kernel);
                let (t_len, c) = (xt.rows(), xt.cols());
                let (kw, n) = (kt.shape()[0], kt.shape()[2]);
                let out_t = t_len - kw + 1;
                if self.needs(*x) {
                    let mut gx = Tensor::zeros(xt.shape());
                    for t in 0..out_t {
                        let grow = gy.row(t);
                        for dt in 0..kw {
                            let xrow = gx.row_mut(t + dt);
                            for (ci, o) in xrow.iter_mut().enumerate() {
                                let krow = &kt.data()[(dt * c + ci) * n..(dt * c + ci + 1) * n];
                                *o += tensor::dot(grow, krow);
                            }
                        }
                    }
                    self.accum(grads, *x, gx)?;
                }
                if self.needs(*kernel) {
                    let mut gk = Tensor::zeros(kt.shape());
                    for t in 0..out_t {
                        let grow = gy.row(t);
                        for dt in 0..kw {
                            let xrow = xt.row(t + dt);
                            for (ci, &xv) in xrow.iter().enumerate() {
                                if xv == 0.0 {
                                    continue;
                                }
                                let krow =
                                    &mut gk.data_mut()[(dt * c + ci) * n..(dt * c + ci + 1) * n];
                                for (o, &g) in krow.iter_mut().zip(grow) {
                                    *o += xv * g;
                                }
                            }
                        }
                    }
                    self.accum(grads, *kernel, gk)?;
                }
                if self.needs(*bias) {
                    let mut gb = vec![0.0; n];
                    for t in 0..out_t {
                        for (o, &g) in gb.iter_mut().zip(gy.row(t)) {
                            *o += g;
                        }
                    }
                    self.accum(grads, *bias, Tensor::vector(gb))?;
                }
            }
            Op::Concat { xs, axis } => match axis {
                0 => {
                    let mut off = 0;
                    for &v in xs {
                        let t = self.value(v);
                        let len = t.len();
                        if self.needs(v) {
                            let slice = gy.data()[off..off + len].to_vec();
                            self.accum(grads, v, Tensor::new(t.shape().to_vec(), slice)?)?;
                        }
                        off += len;
                    }
                }
                1 => {
                    let rows = gy.rows();
                    let mut off = 0;
                    for &v in xs {
                        let t = self.value(v);
                        let w = t.cols();
                        if self.needs(v) {
                            let mut gv = Tensor::zeros(t.shape());
                            for r in 0..rows {
                                gv.row_mut(r).copy_from_slice(&gy.row(r)[off..off + w]);
                            }
                            self.accum(grads, v, gv)?;
                        }
                        off += w;
                    }
                }
                _ => unreachable!("validated at construction"),
            },
            Op::StackRows { xs } => {
                for (r, &v) in xs.iter().enumerate() {
                    if self.needs(v) {
                        self.accum(grads, v, Tensor::vector(gy.row(r).to_vec()))?;
                    }
                }
            }
            Op::Gather { table, indices } => {
                let tt = self.value(*table);
                let mut gt = Tensor::zeros(tt.shape());
                for (r, &i) in indices.iter().enumerate() {
                    for (o, &g) in gt.row_mut(i).iter_mut().zip(gy.row(r)) {
                        *o += g;
                    }
                }
                self.accum(grads, *table, gt)?;
            }
            Op::Hadamard { a, b } => {
                if self.needs(*a) {
                    let tb = self.value(*b);
                    let data: Vec<f64> =
                        gy.data().iter().zip(tb.data()).map(|(&g, &y)| g * y).collect();
                    self.accum(grads, *a, Tensor::new(gy.shape().to_vec(), data)?)?;
                }
                if self.needs(*b) {
                    let ta = self.value(*a);
                    let data: Vec<f64> =
                        gy.data().iter().zip(ta.data()).map(|(&g, &x)| g * x).collect();
                    self.accum(grads, *b, Tensor::new(gy.shape().to_vec(), data)?)?;
                }
            }
            Op::AbsDiff { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let signs: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(&x, &y)| {
                        if x > y {
                            1.0
                        } else if x < y {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if self.needs(*a) {
                    let data: Vec<f64> = gy.data().iter().zip(&signs).map(|(&g, &s)| g * s).collect();
                    self.accum(grads, *a, Tensor::new(gy.shape().to_vec(), data)?)?;
                }
                if self.needs(*b) {
                    let data: Vec<f64> =
                        gy.data().iter().zip(&signs).map(|(&g, &s)| -g * s).collect();
                    self.accum(grads, *b, Tensor::new(gy.shape().to_vec(), data)?)?;
                }
            }
            Op::Cosine { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (na, nb) = (tensor::norm(ta.data()), tensor::norm(tb.data()));
                let g = gy.item();
                if na * nb >= f64::MIN_POSITIVE {
                    let y = node.value.item();
                    if self.needs(*a) {
                        let data: Vec<f64> = ta
                            .data()
                            .iter()
                            .zip(tb.data())
                            .map(|(&av, &bv)| g * (bv / (na * nb) - y * av / (na * na)))
                            .collect();
                        self.accum(grads, *a, Tensor::vector(data))?;
                    }
                    if self.needs(*b) {
                        let data: Vec<f64> = ta
                            .data()
                            .iter()
                            .zip(tb.data())
                            .map(|(&av, &bv)| g * (av / (na * nb) - y * bv / (nb * nb)))
                            .collect();
                        self.accum(grads, *b, Tensor::vector(data))?;
                    }
                }
            }
            Op::Add { a, b } => {
                self.accum(grads, *a, gy.clone())?;
                self.accum(grads, *b, gy.clone())?;
            }
            Op::Sub { a, b } => {
                self.accum(grads, *a, gy.clone())?;
                let mut neg = gy.clone();
                neg.scale(-1.0);
                self.accum(grads, *b, neg)?;
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let tb = self.value(*b);
                    let data: Vec<f64> =
                        gy.data().iter().zip(tb.data()).map(|(&g, &y)| g * y).collect();
                    self.accum(grads, *a, Tensor::new(gy.shape().to_vec(), data)?)?;
                }
                if self.needs(*b) {
                    let ta = self.value(*a);
                    let data: Vec<f64> =
                        gy.data().iter().zip(ta.data()).map(|(&g, &x)| g * x).collect();
                    self.accum(grads, *b, Tensor::new(gy.shape().to_vec(), data)?)?;
                }
            }
            Op::Div { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let data: Vec<f64> =
                        gy.data().iter().zip(tb.data()).map(|(&g, &y)| g / y).collect();
                    self.accum(grads, *a, Tensor::new(gy.shape().to_vec(), data)?)?;
                }
                if self.needs(*b) {
                    let data: Vec<f64> = gy
                        .data()
                        .iter()
                        .zip(ta.data().iter().zip(tb.data()))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect();
                    self.accum(grads, *b, Tensor::new(gy.shape().to_vec(), data)?)?;
                }
            }
            Op::AddN { xs } => {
                for &v in xs {
                    self.accum(grads, v, gy.clone())?;
                }
            }
            Op::Scale { x, c } => {
                let mut g = gy.clone();
                g.scale(*c);
                self.accum(grads, *x, g)?;
            }
            Op::AddConst { x, .. } => {
                self.accum(grads, *x, gy.clone())?;
            }
            Op::Sum { x } => {
                let xt = self.value(*x);
                let g = gy.item();
                self.accum(
                    grads,
                    *x,
                    Tensor::new(xt.shape().to_vec(), vec![g; xt.len()])?,
                )?;
            }
            Op::Mean { x } => {
                let xt = self.value(*x);
                let g = gy.item() / xt.len() as f64;
                self.accum(
                    grads,
                    *x,
                    Tensor::new(xt.shape().to_vec(), vec![g; xt.len()])?,
                )?;
            }
            Op::Log { x } => {
                let xt = self.value(*x);
                let data: Vec<f64> = xt
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&xv, &g)| if xv >= LOG_CLAMP { g / xv } else { 0.0 })
                    .collect();
                self.accum(grads, *x, Tensor::new(xt.shape().to_vec(), data)?)?;
            }
            Op::Select { x, index } => {
                let xt = self.value(*x);
                let mut gx = Tensor::zeros(xt.shape());
                gx.data_mut()[*index] = gy.item();
                self.accum(grads, *x, gx)?;
            }
        }
        Ok(())
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of `shape` when the loss never reached it.
    pub fn get_or_zero(&self, v: Var, shape: &[usize]) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

fn as_matrix(t: &Tensor, cols: usize) -> Tensor {
    if t.ndim() == 1 {
        Tensor::matrix(1, cols, t.data().to_vec()).expect("vector reinterpreted as row")
    } else {
        t.clone()
    }
}

fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn softmax_backward(y: &[f64], gy: &[f64], out: &mut [f64]) {
    let inner: f64 = y.iter().zip(gy).map(|(&yi, &gi)| yi * gi).sum();
    for ((o, &yi), &gi) in out.iter_mut().zip(y).zip(gy) {
        *o = yi * (gi - inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![-1.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![0.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 10.0, 10.0, -3.0]).unwrap());
        let y = g.softmax(x, 1).unwrap();
        for r in 0..2 {
            let s: f64 = g.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(g.value(y).row(r).iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn cosine_hand_value() {
        let mut g = Graph::new();
        let a = g.input(Tensor::vector(vec![1.0, 1.0]));
        let b = g.input(Tensor::vector(vec![1.0, 0.0]));
        let y = g.cosine(a, b).unwrap();
        assert!((g.value(y).item() - 0.707_106_78).abs() < 1e-8);
    }

    #[test]
    fn quadratic_gradient() {
        // loss = sum(w ⊙ w) at w = [2] → grad 4
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![2.0]));
        let sq = g.hadamard(w, w).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[4.0]);
    }

    #[test]
    fn disconnected_parameter_gets_zero() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![1.0, 2.0]));
        let p = g.param(Tensor::vector(vec![3.0]));
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(p).is_none());
        assert_eq!(grads.get_or_zero(p, &[1]).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::Shape(_))));
    }

    #[test]
    fn max_over_time_ignores_masked_rows() {
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 0.0]).unwrap());
        let y = g.max_over_time(x, &[true, true]).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 2.0]);

        // huge values in a masked row cannot win
        let x2 = g.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 1e9, 1e9]).unwrap());
        let y2 = g.max_over_time(x2, &[true, false]).unwrap();
        assert_eq!(g.value(y2).data(), &[1.0, 2.0]);
    }

    #[test]
    fn mean_over_time_fully_masked_is_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(2, 3, vec![5.0; 6]).unwrap());
        let y = g.mean_over_time(x, &[false, false]).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        let mut rng = RngStream::new(3);
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0; 1000]));
        let e = g.dropout(x, 0.4, false, &mut rng).unwrap();
        assert_eq!(g.value(e).data(), &[1.0; 1000][..]);

        let t = g.dropout(x, 0.4, true, &mut rng).unwrap();
        let survivors: Vec<f64> = g
            .value(t)
            .data()
            .iter()
            .cloned()
            .filter(|&v| v != 0.0)
            .collect();
        let scale = 1.0 / 0.6;
        assert!(survivors.iter().all(|&v| (v - scale).abs() < 1e-12));
        // survivor fraction near 0.6
        let frac = survivors.len() as f64 / 1000.0;
        assert!((frac - 0.6).abs() < 0.08, "fraction {frac}");
    }

    #[test]
    fn dropout_masks_are_seed_deterministic() {
        let run = |seed| {
            let mut rng = RngStream::new(seed);
            let mut g = Graph::new();
            let x = g.input(Tensor::vector(vec![1.0; 64]));
            let d = g.dropout(x, 0.5, true, &mut rng).unwrap();
            g.value(d).data().to_vec()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn conv1d_shapes_and_values() {
        let mut g = Graph::new();
        // T=3, C=1; kernel k=2, n=1, weights [1, 1] → moving sums
        let x = g.input(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let k = g.input(Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap());
        let b = g.input(Tensor::vector(vec![0.0]));
        let y = g.conv1d(x, k, b).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 1]);
        assert_eq!(g.value(y).data(), &[3.0, 5.0]);
    }
}

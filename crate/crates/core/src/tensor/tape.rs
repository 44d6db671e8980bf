//! Wengert tape: every op appends a node holding its output value and enough
//! information to push gradients back to its inputs. `backward` walks the
//! nodes once in reverse creation order, which is a valid topological order
//! because inputs always precede their consumers.

use rand::Rng;

use super::kernels::{self, gemm, gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, sigmoid};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Sum(Var),
    Row { src: Var, index: usize },
    StackRows(Vec<Var>),
    Concat(Vec<Var>),
    ConcatCols(Vec<Var>),
    Slice { src: Var, start: usize },
    Transpose(Var),
    Reshape(Var),
    PadRows { src: Var },
    Embedding { table: Var, ids: Vec<usize> },
    Conv1d { x: Var, kernel: Var, bias: Var, width: usize },
    LstmCell { xw: Var, h: Var, c: Var, w_h: Var, bias: Var, gates: Vec<f64>, tanh_c: Vec<f64> },
    Dropout { src: Var, mask: Vec<f64> },
    Nll { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    Mse { pred: Var, target: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records executed ops for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call with respect to `v`. Tensors that
    /// were not reachable from the loss get a zero gradient.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        if self.grads.is_empty() || !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape().to_vec();
        Some(match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        })
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // ---- leaves -------------------------------------------------------

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copy of `v` that gradients do not flow through.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    // ---- linear algebra -----------------------------------------------

    /// Matrix product. A rank-1 left operand is treated as a row vector and a
    /// rank-1 right operand as a column vector; the result drops that axis.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k, a_vec) = match sa.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(Error::dim(format!("matmul lhs must be rank 1 or 2, got {sa:?}"))),
        };
        let (k2, n, b_vec) = match sb.as_slice() {
            [k] => (*k, 1, true),
            [k, n] => (*k, *n, false),
            _ => return Err(Error::dim(format!("matmul rhs must be rank 1 or 2, got {sb:?}"))),
        };
        if k != k2 {
            return Err(Error::dim(format!("matmul inner dims differ: {sa:?} x {sb:?}")));
        }
        let out = gemm(self.data(a), self.data(b), m, k, n);
        let shape = match (a_vec, b_vec) {
            (true, true) => vec![],
            (true, false) => vec![n],
            (false, true) => vec![m],
            (false, false) => vec![m, n],
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a, b, m, k, n }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let [r, c] = s.as_slice() else {
            return Err(Error::dim(format!("transpose needs a matrix, got {s:?}")));
        };
        let (r, c) = (*r, *c);
        let src = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.numel() || shape.contains(&0) {
            return Err(Error::dim(format!("cannot reshape {:?} to {shape:?}", t.shape())));
        }
        let out = Tensor::from_parts(shape.to_vec(), t.data().to_vec());
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    // ---- elementwise --------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `a[m×n] + row[n]`, broadcasting the row over every row of `a`. A rank-1
    /// `a` of length `n` is also accepted.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let n = self.value(a).cols();
        if self.shape(row) != [n] {
            return Err(Error::dim(format!(
                "add_row: row {:?} does not match {:?}",
                self.shape(row),
                self.shape(a)
            )));
        }
        let r = self.data(row);
        let data = self
            .data(a)
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data = self.data(a).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::from_parts(shape, data), Op::Scale(a, s), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.data(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::from_parts(shape, data), op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Softmax over the last axis (each row of a matrix, or the whole vector).
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            kernels::softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::from_parts(shape, data), Op::SoftmaxRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    // ---- structural ---------------------------------------------------

    /// Row `index` of a matrix, as a vector.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || index >= t.rows() {
            return Err(Error::Index(format!("row {index} of {:?}", t.shape())));
        }
        let out = Tensor::from_parts(vec![t.cols()], t.row(index).to_vec());
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Row { src: a, index }, rg))
    }

    /// Stacks equal-length vectors into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::EmptyInput("stack_rows of nothing".into()));
        };
        let n = self.value(first).numel();
        let mut data = Vec::with_capacity(n * rows.len());
        for &r in rows {
            if self.shape(r) != [n] {
                return Err(Error::dim(format!("stack_rows: row shape {:?}, want [{n}]", self.shape(r))));
            }
            data.extend_from_slice(self.data(r));
        }
        let rg = self.any_grad(rows);
        Ok(self.push(Tensor::from_parts(vec![rows.len(), n], data), Op::StackRows(rows.to_vec()), rg))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat of nothing".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            if self.value(p).rank() != 1 {
                return Err(Error::dim("concat takes vectors"));
            }
            data.extend_from_slice(self.data(p));
        }
        let rg = self.any_grad(parts);
        let n = data.len();
        Ok(self.push(Tensor::from_parts(vec![n], data), Op::Concat(parts.to_vec()), rg))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::EmptyInput("concat_cols of nothing".into()));
        };
        let rows = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(Error::dim(format!("concat_cols: {:?} vs {rows} rows", t.shape())));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::from_parts(vec![rows, total], data), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// `a[start..start+len]` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 || start + len > t.numel() || len == 0 {
            return Err(Error::Index(format!("slice {start}..{} of {:?}", start + len, t.shape())));
        }
        let out = Tensor::from_parts(vec![len], t.data()[start..start + len].to_vec());
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Slice { src: a, start }, rg))
    }

    /// Appends zero rows to a matrix until it has at least `min_rows` rows.
    /// Returns `a` unchanged when it is already long enough.
    pub fn pad_rows(&mut self, a: Var, min_rows: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(Error::dim("pad_rows needs a matrix"));
        }
        if t.rows() >= min_rows {
            return Ok(a);
        }
        let cols = t.cols();
        let mut data = t.data().to_vec();
        data.resize(min_rows * cols, 0.0);
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::from_parts(vec![min_rows, cols], data), Op::PadRows { src: a }, rg))
    }

    /// Gathers rows of `table[V×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::dim("embedding table must be a matrix"));
        }
        if ids.is_empty() {
            return Err(Error::EmptyInput("embedding lookup of no ids".into()));
        }
        let (v, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("token id {id} outside vocabulary of {v}")));
            }
            data.extend_from_slice(t.row(id));
        }
        let rg = self.any_grad(&[table]);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], data),
            Op::Embedding { table, ids: ids.to_vec() },
            rg,
        ))
    }

    // ---- model ops ----------------------------------------------------

    /// Valid 1-D convolution: `x[L×d]`, `kernel[w×d×f]`, `bias[f]` gives
    /// `[(L−w+1)×f]`, pre-activation.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        let [len, d] = xs.as_slice() else {
            return Err(Error::dim(format!("conv1d input must be L×d, got {xs:?}")));
        };
        let [width, kd, f] = ks.as_slice() else {
            return Err(Error::dim(format!("conv1d kernel must be w×d×f, got {ks:?}")));
        };
        let (len, d, width, f) = (*len, *d, *width, *f);
        if *kd != d {
            return Err(Error::dim(format!("conv1d kernel depth {kd} != input width {d}")));
        }
        if self.shape(bias) != [f] {
            return Err(Error::dim("conv1d bias length must equal filter count"));
        }
        if len < width {
            return Err(Error::InputTooShort { len, width });
        }
        let out_len = len - width + 1;
        let xd = self.data(x);
        let kdata = self.data(kernel);
        let bdata = self.data(bias);
        let mut out = Vec::with_capacity(out_len * f);
        for _ in 0..out_len {
            out.extend_from_slice(bdata);
        }
        for p in 0..out_len {
            let window = &xd[p * d..(p + width) * d];
            gemm_acc(window, kdata, &mut out[p * f..(p + 1) * f], 1, width * d, f);
        }
        let rg = self.any_grad(&[x, kernel, bias]);
        Ok(self.push(
            Tensor::from_parts(vec![out_len, f], out),
            Op::Conv1d { x, kernel, bias, width },
            rg,
        ))
    }

    /// Fused LSTM cell. `xw` is the input already multiplied by the input
    /// weights (`[4u]`, gate order i, f, g, o). Returns `[2u]` holding the new
    /// hidden state followed by the new cell state.
    pub fn lstm_cell(&mut self, xw: Var, h: Var, c: Var, w_h: Var, bias: Var) -> Result<Var> {
        let u = self.value(h).numel();
        if self.shape(h) != [u]
            || self.shape(c) != [u]
            || self.shape(xw) != [4 * u]
            || self.shape(bias) != [4 * u]
            || self.shape(w_h) != [u, 4 * u]
        {
            return Err(Error::dim(format!(
                "lstm_cell shapes: xw {:?} h {:?} c {:?} w_h {:?} bias {:?}",
                self.shape(xw),
                self.shape(h),
                self.shape(c),
                self.shape(w_h),
                self.shape(bias)
            )));
        }
        let mut z: Vec<f64> = self.data(xw).iter().zip(self.data(bias)).map(|(a, b)| a + b).collect();
        gemm_acc(self.data(h), self.data(w_h), &mut z, 1, u, 4 * u);
        let mut gates = z;
        for (idx, g) in gates.iter_mut().enumerate() {
            *g = if (2 * u..3 * u).contains(&idx) { g.tanh() } else { sigmoid(*g) };
        }
        let c_prev = self.data(c);
        let mut out = vec![0.0; 2 * u];
        let mut tanh_c = vec![0.0; u];
        for j in 0..u {
            let (i_g, f_g, g_g, o_g) = (gates[j], gates[u + j], gates[2 * u + j], gates[3 * u + j]);
            let c_new = f_g * c_prev[j] + i_g * g_g;
            tanh_c[j] = c_new.tanh();
            out[j] = o_g * tanh_c[j];
            out[u + j] = c_new;
        }
        let rg = self.any_grad(&[xw, h, c, w_h, bias]);
        Ok(self.push(
            Tensor::from_parts(vec![2 * u], out),
            Op::LstmCell { xw, h, c, w_h, bias, gates, tanh_c },
            rg,
        ))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = self.data(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Dropout { src: a, mask }, rg))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits[T×V]`. `None` targets are padding and excluded from the mean.
    pub fn nll_loss(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 || t.rows() != targets.len() {
            return Err(Error::dim(format!(
                "nll_loss: logits {:?} for {} targets",
                t.shape(),
                targets.len()
            )));
        }
        let v = t.cols();
        let mut probs = t.data().to_vec();
        let mut total = 0.0;
        let mut count = 0;
        for (row, target) in probs.chunks_mut(v).zip(targets) {
            if let Some(tgt) = *target {
                if tgt >= v {
                    return Err(Error::Index(format!("target {tgt} outside vocabulary of {v}")));
                }
                total += kernels::log_sum_exp(row) - row[tgt];
                count += 1;
            }
            kernels::softmax_in_place(row);
        }
        if count == 0 {
            return Err(Error::EmptyInput("nll_loss with only padding targets".into()));
        }
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::Nll { logits, targets: targets.to_vec(), probs, count },
            rg,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.data(pred);
        if p.len() != target.len() {
            return Err(Error::dim(format!("mse_loss: {} predictions, {} targets", p.len(), target.len())));
        }
        let loss = p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let rg = self.any_grad(&[pred]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target: target.to_vec() }, rg))
    }

    // ---- reverse pass -------------------------------------------------

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64], &Tape)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let mut buf = self.grads[v.0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(&mut buf, self);
        self.grads[v.0] = Some(buf);
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        // Temporarily take the op so its inputs can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (a, b) = (*a, *b);
                self.acc(a, |buf, t| gemm_a_bt_acc(g, t.data(b), buf, m, k, n));
                self.acc(b, |buf, t| gemm_at_b_acc(t.data(a), g, buf, m, k, n));
            }
            Op::Add(a, b) => {
                self.acc(*a, |buf, _| add_into(buf, g));
                self.acc(*b, |buf, _| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                self.acc(*a, |buf, _| add_into(buf, g));
                self.acc(*b, |buf, _| {
                    for (x, y) in buf.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |buf, t| {
                    for ((x, y), gv) in buf.iter_mut().zip(t.data(b)).zip(g) {
                        *x += y * gv;
                    }
                });
                self.acc(b, |buf, t| {
                    for ((x, y), gv) in buf.iter_mut().zip(t.data(a)).zip(g) {
                        *x += y * gv;
                    }
                });
            }
            Op::AddRow(a, row) => {
                self.acc(*a, |buf, _| add_into(buf, g));
                self.acc(*row, |buf, _| {
                    let n = buf.len();
                    for chunk in g.chunks(n) {
                        add_into(buf, chunk);
                    }
                });
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(*a, |buf, _| {
                    for (x, gv) in buf.iter_mut().zip(g) {
                        *x += s * gv;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = self.nodes[idx].value.data().to_vec();
                self.acc(*a, |buf, _| {
                    for ((x, y), gv) in buf.iter_mut().zip(&out).zip(g) {
                        *x += gv * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                let out = self.nodes[idx].value.data().to_vec();
                self.acc(*a, |buf, _| {
                    for ((x, y), gv) in buf.iter_mut().zip(&out).zip(g) {
                        *x += gv * (1.0 - y * y);
                    }
                });
            }
            Op::Relu(a) => {
                let a = *a;
                self.acc(a, |buf, t| {
                    for ((x, inp), gv) in buf.iter_mut().zip(t.data(a)).zip(g) {
                        if *inp > 0.0 {
                            *x += gv;
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let out = self.nodes[idx].value.data().to_vec();
                let n = self.nodes[idx].value.cols();
                self.acc(*a, |buf, _| {
                    for ((bx, sx), gx) in buf.chunks_mut(n).zip(out.chunks(n)).zip(g.chunks(n)) {
                        let inner = kernels::dot(sx, gx);
                        for j in 0..n {
                            bx[j] += sx[j] * (gx[j] - inner);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g[0];
                self.acc(*a, |buf, _| buf.iter_mut().for_each(|x| *x += gv));
            }
            Op::Row { src, index } => {
                let n = g.len();
                let start = index * n;
                self.acc(*src, |buf, _| add_into(&mut buf[start..start + n], g));
            }
            Op::StackRows(rows) => {
                for (i, r) in rows.iter().enumerate() {
                    let n = self.nodes[r.0].value.numel();
                    self.acc(*r, |buf, _| add_into(buf, &g[i * n..(i + 1) * n]));
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.numel();
                    self.acc(*p, |buf, _| add_into(buf, &g[off..off + n]));
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[idx].value.cols();
                let mut col = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.cols();
                    self.acc(*p, |buf, _| {
                        for (i, brow) in buf.chunks_mut(w).enumerate() {
                            add_into(brow, &g[i * total + col..i * total + col + w]);
                        }
                    });
                    col += w;
                }
            }
            Op::Slice { src, start } => {
                let s = *start;
                self.acc(*src, |buf, _| add_into(&mut buf[s..s + g.len()], g));
            }
            Op::Transpose(a) => {
                let (r, c) = (self.nodes[idx].value.rows(), self.nodes[idx].value.cols());
                // output is r×c, input is c×r
                self.acc(*a, |buf, _| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Reshape(a) => self.acc(*a, |buf, _| add_into(buf, g)),
            Op::PadRows { src } => {
                let n = self.nodes[src.0].value.numel();
                self.acc(*src, |buf, _| add_into(buf, &g[..n]));
            }
            Op::Embedding { table, ids } => {
                let d = self.nodes[idx].value.cols();
                self.acc(*table, |buf, _| {
                    for (pos, &id) in ids.iter().enumerate() {
                        add_into(&mut buf[id * d..(id + 1) * d], &g[pos * d..(pos + 1) * d]);
                    }
                });
            }
            Op::Conv1d { x, kernel, bias, width } => {
                let (x, kernel, bias, width) = (*x, *kernel, *bias, *width);
                let f = self.nodes[bias.0].value.numel();
                let d = self.nodes[x.0].value.cols();
                let out_len = g.len() / f;
                self.acc(bias, |buf, _| {
                    for chunk in g.chunks(f) {
                        add_into(buf, chunk);
                    }
                });
                self.acc(kernel, |buf, t| {
                    let xd = t.data(x);
                    for p in 0..out_len {
                        let window = &xd[p * d..(p + width) * d];
                        gemm_at_b_acc(window, &g[p * f..(p + 1) * f], buf, 1, width * d, f);
                    }
                });
                self.acc(x, |buf, t| {
                    let kd = t.data(kernel);
                    for p in 0..out_len {
                        let window = &mut buf[p * d..(p + width) * d];
                        gemm_a_bt_acc(&g[p * f..(p + 1) * f], kd, window, 1, width * d, f);
                    }
                });
            }
            Op::LstmCell { xw, h, c, w_h, bias, gates, tanh_c } => {
                let u = tanh_c.len();
                let c_prev = self.data(*c).to_vec();
                let (dh, dc_out) = g.split_at(u);
                let mut dz = vec![0.0; 4 * u];
                let mut dc_prev = vec![0.0; u];
                for j in 0..u {
                    let (i_g, f_g, g_g, o_g) = (gates[j], gates[u + j], gates[2 * u + j], gates[3 * u + j]);
                    let tc = tanh_c[j];
                    let d_o = dh[j] * tc;
                    let dc = dc_out[j] + dh[j] * o_g * (1.0 - tc * tc);
                    let d_i = dc * g_g;
                    let d_g = dc * i_g;
                    let d_f = dc * c_prev[j];
                    dc_prev[j] = dc * f_g;
                    dz[j] = d_i * i_g * (1.0 - i_g);
                    dz[u + j] = d_f * f_g * (1.0 - f_g);
                    dz[2 * u + j] = d_g * (1.0 - g_g * g_g);
                    dz[3 * u + j] = d_o * o_g * (1.0 - o_g);
                }
                let (xw, h, c, w_h, bias) = (*xw, *h, *c, *w_h, *bias);
                self.acc(xw, |buf, _| add_into(buf, &dz));
                self.acc(bias, |buf, _| add_into(buf, &dz));
                self.acc(c, |buf, _| add_into(buf, &dc_prev));
                self.acc(h, |buf, t| gemm_a_bt_acc(&dz, t.data(w_h), buf, 1, u, 4 * u));
                self.acc(w_h, |buf, t| gemm_at_b_acc(t.data(h), &dz, buf, 1, u, 4 * u));
            }
            Op::Dropout { src, mask } => {
                self.acc(*src, |buf, _| {
                    for ((x, m), gv) in buf.iter_mut().zip(mask).zip(g) {
                        *x += m * gv;
                    }
                });
            }
            Op::Nll { logits, targets, probs, count } => {
                let v = self.nodes[logits.0].value.cols();
                let scale = g[0] / *count as f64;
                self.acc(*logits, |buf, _| {
                    for (r, target) in targets.iter().enumerate() {
                        let Some(tgt) = *target else { continue };
                        let row = &mut buf[r * v..(r + 1) * v];
                        for (x, p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *x += scale * p;
                        }
                        row[tgt] -= scale;
                    }
                });
            }
            Op::Mse { pred, target } => {
                let pred = *pred;
                let scale = 2.0 * g[0] / target.len() as f64;
                self.acc(pred, |buf, t| {
                    for ((x, p), y) in buf.iter_mut().zip(t.data(pred)).zip(target) {
                        *x += scale * (p - y);
                    }
                });
            }
        }
        self.nodes[idx].op = op;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

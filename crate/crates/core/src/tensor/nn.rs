//! Layers built from tape ops. Each layer registers its parameters in a
//! [`ParamStore`] under a name prefix and can be re-attached to a loaded
//! store by the same prefix.

use rand::Rng;

use super::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub(crate) fn xavier<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}

fn lookup(store: &ParamStore, prefix: &str, name: &str) -> Result<ParamId> {
    store.id(&format!("{prefix}.{name}"))
}

/// `y = x·W + b`, for a vector or for every row of a matrix.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.insert(format!("{prefix}.weight"), xavier(&[input, output], input, output, rng));
        let bias = bias.then(|| store.insert(format!("{prefix}.bias"), Tensor::zeros(&[output])));
        Linear { weight, bias }
    }

    pub fn load(store: &ParamStore, prefix: &str) -> Result<Self> {
        let weight = lookup(store, prefix, "weight")?;
        let bias_name = format!("{prefix}.bias");
        let bias = store.contains(&bias_name).then(|| store.id(&bias_name)).transpose()?;
        Ok(Linear { weight, bias })
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        store.get(self.weight).cols()
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, b.var(self.weight))?;
        match self.bias {
            Some(bias) => tape.add_row(y, b.var(bias)),
            None => Ok(y),
        }
    }
}

/// Parameters of a single LSTM layer (gate order i, f, g, o).
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    pub units: usize,
}

/// Output of running an [`Lstm`] over a sequence.
#[derive(Clone, Debug)]
pub struct LstmRun {
    /// Hidden states, one row per step.
    pub states: Var,
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, units: usize, rng: &mut R) -> Self {
        let w_x = store.insert(format!("{prefix}.w_x"), xavier(&[input, 4 * units], input, units, rng));
        let w_h = store.insert(format!("{prefix}.w_h"), xavier(&[units, 4 * units], units, units, rng));
        let mut bias = Tensor::zeros(&[4 * units]);
        // forget gate starts open
        bias.data_mut()[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.insert(format!("{prefix}.bias"), bias);
        Lstm { w_x, w_h, bias, units }
    }

    pub fn load(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w_x = lookup(store, prefix, "w_x")?;
        let w_h = lookup(store, prefix, "w_h")?;
        let bias = lookup(store, prefix, "bias")?;
        let units = store.get(w_h).rows();
        if store.get(w_h).shape() != [units, 4 * units] || store.get(bias).shape() != [4 * units] {
            return Err(Error::Checkpoint(format!("inconsistent LSTM shapes under `{prefix}`")));
        }
        Ok(Lstm { w_x, w_h, bias, units })
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w_x).rows()
    }

    /// One recurrence step on a single input vector.
    pub fn step(&self, tape: &mut Tape, b: &Binding, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let xw = tape.matmul(x, b.var(self.w_x))?;
        self.step_projected(tape, b, xw, h, c)
    }

    fn step_projected(&self, tape: &mut Tape, b: &Binding, xw: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hc = tape.lstm_cell(xw, h, c, b.var(self.w_h), b.var(self.bias))?;
        let h = tape.slice(hc, 0, self.units)?;
        let c = tape.slice(hc, self.units, self.units)?;
        Ok((h, c))
    }

    pub fn zero_state(&self, tape: &mut Tape) -> (Var, Var) {
        let h = tape.constant(Tensor::zeros(&[self.units]));
        let c = tape.constant(Tensor::zeros(&[self.units]));
        (h, c)
    }

    /// Runs over every row of `xs[L×in]`, starting from `init` or zeros.
    pub fn run(&self, tape: &mut Tape, b: &Binding, xs: Var, init: Option<(Var, Var)>) -> Result<LstmRun> {
        let steps = tape.value(xs).rows();
        if tape.value(xs).rank() != 2 {
            return Err(Error::dim("lstm input must be a matrix"));
        }
        let projected = tape.matmul(xs, b.var(self.w_x))?;
        let (mut h, mut c) = match init {
            Some(s) => s,
            None => self.zero_state(tape),
        };
        let mut rows = Vec::with_capacity(steps);
        for t in 0..steps {
            let xw = tape.row(projected, t)?;
            (h, c) = self.step_projected(tape, b, xw, h, c)?;
            rows.push(h);
        }
        let states = tape.stack_rows(&rows)?;
        Ok(LstmRun { states, h, c })
    }
}

/// Attention pooling: `alpha = softmax(tanh(C·W + b)·v)`, `pooled = Σ alpha_i C_i`.
#[derive(Clone, Debug)]
pub struct AttentionPool {
    pub proj: ParamId,
    pub bias: ParamId,
    pub score: ParamId,
}

impl AttentionPool {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) -> Self {
        let proj = store.insert(format!("{prefix}.proj"), xavier(&[dim, dim], dim, dim, rng));
        let bias = store.insert(format!("{prefix}.bias"), Tensor::zeros(&[dim]));
        let score = store.insert(format!("{prefix}.score"), xavier(&[dim], dim, 1, rng));
        AttentionPool { proj, bias, score }
    }

    pub fn load(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(AttentionPool {
            proj: lookup(store, prefix, "proj")?,
            bias: lookup(store, prefix, "bias")?,
            score: lookup(store, prefix, "score")?,
        })
    }

    /// Returns `(pooled[d], alpha[n])` for `c[n×d]`.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, c: Var) -> Result<(Var, Var)> {
        if tape.value(c).rank() != 2 {
            return Err(Error::EmptyInput("attention_pool needs at least one row".into()));
        }
        let projected = tape.matmul(c, b.var(self.proj))?;
        let projected = tape.add_row(projected, b.var(self.bias))?;
        let activated = tape.tanh(projected);
        let scores = tape.matmul(activated, b.var(self.score))?;
        let alpha = tape.softmax(scores);
        let pooled = weighted_rows(tape, c, alpha)?;
        Ok((pooled, alpha))
    }
}

/// `Σ_i alpha_i · c_i` for `c[n×d]` and `alpha[n]`.
pub fn weighted_rows(tape: &mut Tape, c: Var, alpha: Var) -> Result<Var> {
    tape.matmul(alpha, c)
}

/// `softmax(q·kᵀ / √d_k)·v`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let qs = tape.shape(q).to_vec();
    let ks = tape.shape(k).to_vec();
    let vs = tape.shape(v).to_vec();
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(Error::dim("attention operands must be matrices"));
    }
    let d_k = qs[1];
    if d_k == 0 || ks[1] != d_k {
        return Err(Error::dim(format!("attention key width mismatch: q {qs:?} k {ks:?}")));
    }
    if ks[0] != vs[0] {
        return Err(Error::dim(format!("attention keys {ks:?} and values {vs:?} differ in rows")));
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = tape.softmax(scores);
    tape.matmul(weights, v)
}

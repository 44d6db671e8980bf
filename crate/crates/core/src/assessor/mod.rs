//! Hierarchical eight-aspect severity scorer.
//!
//! Each turn is embedded token by token with the dialogue model's encoder
//! (frozen), convolved and attention-pooled into a turn vector. The turn
//! matrix then feeds eight independent branches, one per PHQ-8 item: multi-head
//! self-attention, an LSTM over turns, attention pooling and a sigmoid head.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::detect_depression;
use crate::seq2seq::Embedder;
use crate::tensor::nn::{xavier, AttentionPool, Linear, Lstm};
use crate::tensor::{Binding, Checkpoint, ParamId, ParamStore, Tape, Tensor, Var};
use crate::text::{Aspect, AspectScores, Dialogue, Turn};
use crate::training::{fit, TrainConfig};

pub const ASSESSOR_PREFIX: &str = "assessor";
const SHARED: &str = "shared";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssessorConfig {
    pub filters: usize,
    pub kernel: usize,
    pub lstm_units: usize,
    pub heads: usize,
    pub dropout: f64,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for AssessorConfig {
    fn default() -> Self {
        AssessorConfig {
            filters: 100,
            kernel: 5,
            lstm_units: 100,
            heads: 2,
            dropout: 0.3,
            init_seed: 0,
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
        }
    }
}

impl AssessorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.kernel == 0 || self.lstm_units == 0 || self.heads == 0 {
            return Err(Error::Config("assessor sizes must be positive".into()));
        }
        if !self.filters.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "filters ({}) must be divisible by heads ({})",
                self.filters, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.train.validate()
    }
}

/// One item-specific branch.
#[derive(Clone, Debug)]
struct Branch {
    query: Vec<ParamId>,
    key: Vec<ParamId>,
    value: Vec<ParamId>,
    out: ParamId,
    lstm: Lstm,
    pool: AttentionPool,
    head: Linear,
}

impl Branch {
    fn prefix(aspect: Aspect) -> String {
        format!("{ASSESSOR_PREFIX}.{}", aspect.key())
    }

    fn new<R: Rng>(store: &mut ParamStore, aspect: Aspect, cfg: &AssessorConfig, rng: &mut R) -> Self {
        let p = Self::prefix(aspect);
        let (f, d) = (cfg.filters, cfg.filters / cfg.heads);
        let mut proj = |store: &mut ParamStore, name: String| store.insert(name, xavier(&[f, d], f, d, rng));
        let mut query = Vec::new();
        let mut key = Vec::new();
        let mut value = Vec::new();
        for h in 0..cfg.heads {
            query.push(proj(store, format!("{p}.attn.q{h}")));
            key.push(proj(store, format!("{p}.attn.k{h}")));
            value.push(proj(store, format!("{p}.attn.v{h}")));
        }
        let out = store.insert(format!("{p}.attn.out"), xavier(&[f, f], f, f, rng));
        Branch {
            query,
            key,
            value,
            out,
            lstm: Lstm::new(store, &format!("{p}.lstm"), f, cfg.lstm_units, rng),
            pool: AttentionPool::new(store, &format!("{p}.pool"), cfg.lstm_units, rng),
            head: Linear::new(store, &format!("{p}.head"), cfg.lstm_units, 1, true, rng),
        }
    }

    fn load(store: &ParamStore, aspect: Aspect) -> Result<Self> {
        let p = Self::prefix(aspect);
        let heads = (0..).take_while(|h| store.contains(&format!("{p}.attn.q{h}"))).count();
        if heads == 0 {
            return Err(Error::Checkpoint(format!("no attention heads under `{p}`")));
        }
        let ids = |kind: &str| -> Result<Vec<ParamId>> {
            (0..heads).map(|h| store.id(&format!("{p}.attn.{kind}{h}"))).collect()
        };
        Ok(Branch {
            query: ids("q")?,
            key: ids("k")?,
            value: ids("v")?,
            out: store.id(&format!("{p}.attn.out"))?,
            lstm: Lstm::load(store, &format!("{p}.lstm"))?,
            pool: AttentionPool::load(store, &format!("{p}.pool"))?,
            head: Linear::load(store, &format!("{p}.head"))?,
        })
    }

    /// Multi-head self-attention over the turn rows, projected back to the
    /// filter width, then the LSTM's hidden sequence.
    fn hidden(&self, tape: &mut Tape, b: &Binding, turns: Var) -> Result<Var> {
        let mut heads = Vec::with_capacity(self.query.len());
        for ((q, k), v) in self.query.iter().zip(&self.key).zip(&self.value) {
            let q = tape.matmul(turns, b.var(*q))?;
            let k = tape.matmul(turns, b.var(*k))?;
            let v = tape.matmul(turns, b.var(*v))?;
            heads.push(crate::tensor::nn::scaled_dot_attention(tape, q, k, v)?);
        }
        let joined = tape.concat_cols(&heads)?;
        let m = tape.matmul(joined, b.var(self.out))?;
        Ok(self.lstm.run(tape, b, m, None)?.states)
    }
}

/// Network parameters and layer handles.
#[derive(Clone, Debug)]
pub struct AssessorNet {
    conv_kernel: ParamId,
    conv_bias: ParamId,
    turn_pool: AttentionPool,
    branches: Vec<Branch>,
    kernel: usize,
    input_dim: usize,
}

impl AssessorNet {
    fn new<R: Rng>(store: &mut ParamStore, input_dim: usize, cfg: &AssessorConfig, rng: &mut R) -> Self {
        let (w, f) = (cfg.kernel, cfg.filters);
        let conv_kernel = store.insert(
            format!("{ASSESSOR_PREFIX}.{SHARED}.conv.kernel"),
            xavier(&[w, input_dim, f], w * input_dim, f, rng),
        );
        let conv_bias = store.insert(format!("{ASSESSOR_PREFIX}.{SHARED}.conv.bias"), Tensor::zeros(&[f]));
        let turn_pool = AttentionPool::new(store, &format!("{ASSESSOR_PREFIX}.{SHARED}.turn_pool"), f, rng);
        let branches = Aspect::ALL.iter().map(|a| Branch::new(store, *a, cfg, rng)).collect();
        AssessorNet { conv_kernel, conv_bias, turn_pool, branches, kernel: w, input_dim }
    }

    fn load(store: &ParamStore) -> Result<Self> {
        let conv_kernel = store.id(&format!("{ASSESSOR_PREFIX}.{SHARED}.conv.kernel"))?;
        let conv_bias = store.id(&format!("{ASSESSOR_PREFIX}.{SHARED}.conv.bias"))?;
        let shape = store.get(conv_kernel).shape().to_vec();
        let [kernel, input_dim, filters] = shape[..] else {
            return Err(Error::Checkpoint(format!("conv kernel must be rank 3, got {shape:?}")));
        };
        if store.get(conv_bias).shape() != [filters] {
            return Err(Error::Checkpoint("conv bias does not match the filter count".into()));
        }
        let turn_pool = AttentionPool::load(store, &format!("{ASSESSOR_PREFIX}.{SHARED}.turn_pool"))?;
        let branches = Aspect::ALL.iter().map(|a| Branch::load(store, *a)).collect::<Result<_>>()?;
        Ok(AssessorNet { conv_kernel, conv_bias, turn_pool, branches, kernel, input_dim })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Turn vector from token states `[len × input_dim]`. Turns shorter than
    /// the kernel are zero-padded to its width.
    pub fn encode_turn(&self, tape: &mut Tape, b: &Binding, tokens: Var) -> Result<Var> {
        let padded = tape.pad_rows(tokens, self.kernel)?;
        let conv = tape.conv1d(padded, b.var(self.conv_kernel), b.var(self.conv_bias))?;
        let conv = tape.relu(conv);
        Ok(self.turn_pool.forward(tape, b, conv)?.0)
    }

    /// Hidden sequence `[turns × units]` of one item's branch.
    pub fn item_hidden(&self, tape: &mut Tape, b: &Binding, turns: Var, aspect: Aspect) -> Result<Var> {
        self.branches[aspect.index()].hidden(tape, b, turns)
    }

    /// Raw sigmoid outputs `[8]` for a dialogue given per-turn token states.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        b: &Binding,
        turns: &[Var],
        dropout: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if turns.is_empty() {
            return Err(Error::EmptyInput("cannot assess a dialogue without turns".into()));
        }
        let vectors = turns
            .iter()
            .map(|&t| self.encode_turn(tape, b, t))
            .collect::<Result<Vec<_>>>()?;
        let matrix = tape.stack_rows(&vectors)?;
        let matrix = tape.dropout(matrix, dropout, training, rng)?;
        let mut raw = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let hidden = branch.hidden(tape, b, matrix)?;
            let (pooled, _) = branch.pool.forward(tape, b, hidden)?;
            let pooled = tape.dropout(pooled, dropout, training, rng)?;
            let logit = branch.head.forward(tape, b, pooled)?;
            raw.push(tape.sigmoid(logit));
        }
        tape.concat(&raw)
    }
}

/// Half-up rounding of a scaled score, clamped to the PHQ range.
pub fn round_score(scaled: f64) -> u8 {
    (scaled + 0.5).floor().clamp(0.0, 3.0) as u8
}

/// Sigmoid outputs and their reconversion to the 0 to 3 scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub raw: [f64; 8],
    pub scaled: [f64; 8],
    pub rounded: [u8; 8],
}

impl ScoreVector {
    pub fn from_raw(raw: [f64; 8]) -> Self {
        let scaled = raw.map(|r| 3.0 * r);
        ScoreVector { raw, scaled, rounded: scaled.map(round_score) }
    }

    pub fn scores(&self) -> AspectScores {
        AspectScores(self.rounded)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub raw: [f64; 8],
    pub scaled: [f64; 8],
    pub scores: [u8; 8],
    pub total: u32,
    pub depressed: bool,
}

impl AssessmentReport {
    pub fn from_scores(v: &ScoreVector) -> Self {
        AssessmentReport {
            raw: v.raw,
            scaled: v.scaled,
            scores: v.rounded,
            total: v.rounded.iter().map(|&s| s as u32).sum(),
            depressed: detect_depression(&v.rounded).expect("rounded scores are in range"),
        }
    }
}

/// Per-turn encoder states for every turn of a dialogue. The encoder is only
/// read, never placed on a training tape.
pub fn embed_dialogue(embedder: Embedder<'_>, turns: &[Turn]) -> Result<Vec<Tensor>> {
    if turns.is_empty() {
        return Err(Error::EmptyInput("cannot embed an empty dialogue".into()));
    }
    turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            embedder.text_states(&t.text).map_err(|e| match e {
                Error::EmptyInput(_) => Error::EmptyInput(format!("turn {i} has no tokens")),
                other => other,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct AssessorModel {
    store: ParamStore,
    net: AssessorNet,
    dropout: f64,
}

impl AssessorModel {
    pub fn new(input_dim: usize, config: &AssessorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let net = AssessorNet::new(&mut store, input_dim, config, &mut rng);
        store.snap_to_f32();
        Ok(AssessorModel { store, net, dropout: config.dropout })
    }

    pub fn from_store(store: ParamStore, dropout: f64) -> Result<Self> {
        let net = AssessorNet::load(&store)?;
        Ok(AssessorModel { store, net, dropout })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn net(&self) -> &AssessorNet {
        &self.net
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    /// Training objective on one dialogue: MSE between the raw outputs and
    /// `labels / 3`.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        b: &Binding,
        turns: &[Tensor],
        labels: &AspectScores,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        objective(&self.net, self.dropout, tape, b, turns, labels, training, rng)
    }

    /// Eval-mode scores for a dialogue's per-turn token states.
    pub fn predict(&self, turns: &[Tensor]) -> Result<ScoreVector> {
        if let Some(t) = turns.iter().find(|t| t.rank() != 2 || t.cols() != self.net.input_dim) {
            return Err(Error::dim(format!(
                "turn states must be [len × {}], got {:?}",
                self.net.input_dim,
                t.shape()
            )));
        }
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape, false);
        let vars: Vec<Var> = turns.iter().map(|t| tape.constant(t.clone())).collect();
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let raw = self.net.forward(&mut tape, &b, &vars, 0.0, false, &mut unused)?;
        let data = tape.value(raw).data();
        let mut out = [0.0; 8];
        out.copy_from_slice(data);
        if let Some(v) = out.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("assessor produced {v}")));
        }
        Ok(ScoreVector::from_raw(out))
    }

    pub fn assess_dialogue(&self, embedder: Embedder<'_>, turns: &[Turn]) -> Result<AssessmentReport> {
        Ok(AssessmentReport::from_scores(&self.predict(&embed_dialogue(embedder, turns)?)?))
    }

    /// Assessment of a live conversation. Empty turns are skipped, and a
    /// conversation with nothing to read is scored from one all-zero token
    /// row so there is always a report.
    pub fn assess_session(&self, embedder: Embedder<'_>, turns: &[Turn]) -> Result<AssessmentReport> {
        let readable: Vec<Turn> = turns
            .iter()
            .filter(|t| !embedder.text_ids(&t.text).is_empty())
            .cloned()
            .collect();
        let states = if readable.is_empty() {
            vec![Tensor::zeros(&[1, self.net.input_dim])]
        } else {
            embed_dialogue(embedder, &readable)?
        };
        Ok(AssessmentReport::from_scores(&self.predict(&states)?))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.store.to_checkpoint()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>, dropout: f64) -> Result<Self> {
        Self::from_store(ParamStore::from_checkpoint(&Checkpoint::load(path)?), dropout)
    }
}

/// Trains a fresh assessor on `corpus` over the frozen encoder behind
/// `embedder`. Returns the model and the mean loss of every epoch.
pub fn train_assessor(
    corpus: &[Dialogue],
    embedder: Embedder<'_>,
    config: &AssessorConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(AssessorModel, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("no dialogues to train the assessor on".into()));
    }
    let inputs = corpus
        .iter()
        .map(|d| embed_dialogue(embedder, &d.turns).map_err(|e| Error::in_dialogue(&d.id, e)))
        .collect::<Result<Vec<_>>>()?;
    let mut model = AssessorModel::new(embedder.dim(), config)?;
    let net = model.net.clone();
    let history = fit(
        &mut model.store,
        corpus.len(),
        &config.train,
        |tape, b, i, rng| objective(&net, config.dropout, tape, b, &inputs[i], &corpus[i].aspect_scores, true, rng),
        on_epoch,
    )?;
    Ok((model, history))
}

#[allow(clippy::too_many_arguments)]
fn objective<R: Rng + ?Sized>(
    net: &AssessorNet,
    dropout: f64,
    tape: &mut Tape,
    b: &Binding,
    turns: &[Tensor],
    labels: &AspectScores,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let vars: Vec<Var> = turns.iter().map(|t| tape.constant(t.clone())).collect();
    let raw = net.forward(tape, b, &vars, dropout, training, rng)?;
    let target = labels.0.map(|s| s as f64 / 3.0);
    tape.mse_loss(raw, &target)
}

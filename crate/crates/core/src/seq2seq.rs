//! Recurrent encoder and attentional decoder shared by the user-response
//! generator and the dialogue model.
//!
//! Parameter names under a prefix `p`:
//! `p.encoder.embedding`, `p.encoder.lstm.*`, `p.decoder.lstm.*`,
//! `p.decoder.combine.*`, `p.decoder.output.*`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::nn::{Linear, Lstm, LstmRun};
use crate::tensor::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::text::{Turn, Vocabulary, BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

/// Token embedding followed by a single LSTM layer.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub embedding: ParamId,
    pub lstm: Lstm,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dims: Seq2SeqDims, rng: &mut R) -> Self {
        let bound = (3.0 / dims.embed as f64).sqrt();
        let embedding = store.insert(
            format!("{prefix}.embedding"),
            Tensor::uniform(&[dims.vocab, dims.embed], bound, rng),
        );
        let lstm = Lstm::new(store, &format!("{prefix}.lstm"), dims.embed, dims.hidden, rng);
        Encoder { embedding, lstm }
    }

    pub fn load(store: &ParamStore, prefix: &str) -> Result<Self> {
        let embedding = store.id(&format!("{prefix}.embedding"))?;
        let lstm = Lstm::load(store, &format!("{prefix}.lstm"))?;
        if store.get(embedding).cols() != lstm.input_dim(store) {
            return Err(Error::Checkpoint(format!("embedding width does not match `{prefix}.lstm`")));
        }
        Ok(Encoder { embedding, lstm })
    }

    pub fn hidden(&self) -> usize {
        self.lstm.units
    }

    pub fn vocab_size(&self, store: &ParamStore) -> usize {
        store.get(self.embedding).rows()
    }

    /// Hidden states for every token of `ids`.
    pub fn run(&self, tape: &mut Tape, b: &Binding, ids: &[usize]) -> Result<LstmRun> {
        let x = tape.embedding(b.var(self.embedding), ids)?;
        self.lstm.run(tape, b, x, None)
    }

    /// Mean of the hidden states over `ids`, computed outside any training
    /// tape.
    pub fn mean_state(&self, store: &ParamStore, ids: &[usize]) -> Result<Vec<f64>> {
        Ok(mean_rows(&self.states(store, ids)?))
    }

    /// Hidden-state matrix `[len(ids) × hidden]` as a plain tensor.
    pub fn states(&self, store: &ParamStore, ids: &[usize]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("cannot encode an empty token sequence".into()));
        }
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, false);
        let run = self.run(&mut tape, &b, ids)?;
        Ok(tape.value(run.states).clone())
    }
}

/// Mean-pooled encoder states for history contexts and candidate texts.
/// Only content tokens are encoded (no `<bos>`/`<eos>`), so a one-turn
/// history and that turn's text embed identically.
#[derive(Clone, Copy)]
pub struct Embedder<'a> {
    pub vocab: &'a Vocabulary,
    pub store: &'a ParamStore,
    pub encoder: &'a Encoder,
    pub max_len: usize,
}

impl Embedder<'_> {
    /// Context vector of the last seven turns of `history`.
    pub fn embed_context(&self, history: &[Turn]) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(Error::EmptyInput("cannot embed an empty history".into()));
        }
        self.encoder.mean_state(self.store, &self.vocab.history_ids(history, self.max_len))
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(mean_rows(&self.text_states(text)?))
    }

    /// Per-token encoder states `[tokens × hidden]` of `text`, keeping the
    /// last `max_len − 2` tokens.
    pub fn text_states(&self, text: &str) -> Result<Tensor> {
        let ids = self.text_ids(text);
        if ids.is_empty() {
            return Err(Error::EmptyInput("cannot embed empty text".into()));
        }
        self.encoder.states(self.store, &ids)
    }

    pub fn text_ids(&self, text: &str) -> Vec<usize> {
        let mut ids = self.vocab.ids_of(text);
        let budget = self.max_len.saturating_sub(2);
        if ids.len() > budget {
            ids.drain(..ids.len() - budget);
        }
        ids
    }

    pub fn dim(&self) -> usize {
        self.encoder.hidden()
    }
}

/// Column means of a matrix.
pub fn mean_rows(m: &Tensor) -> Vec<f64> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= rows as f64);
    out
}

/// Greedy decoding output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub ids: Vec<usize>,
    /// The length limit was reached before `<eos>`.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub encoder: Encoder,
    decoder: Lstm,
    combine: Linear,
    output: Linear,
}

impl Seq2Seq {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dims: Seq2SeqDims, rng: &mut R) -> Self {
        let encoder = Encoder::new(store, &format!("{prefix}.encoder"), dims, rng);
        let decoder = Lstm::new(store, &format!("{prefix}.decoder.lstm"), dims.embed, dims.hidden, rng);
        let combine = Linear::new(store, &format!("{prefix}.decoder.combine"), 2 * dims.hidden, dims.hidden, true, rng);
        let output = Linear::new(store, &format!("{prefix}.decoder.output"), dims.hidden, dims.vocab, true, rng);
        Seq2Seq { encoder, decoder, combine, output }
    }

    pub fn load(store: &ParamStore, prefix: &str) -> Result<Self> {
        let encoder = Encoder::load(store, &format!("{prefix}.encoder"))?;
        let decoder = Lstm::load(store, &format!("{prefix}.decoder.lstm"))?;
        let combine = Linear::load(store, &format!("{prefix}.decoder.combine"))?;
        let output = Linear::load(store, &format!("{prefix}.decoder.output"))?;
        if decoder.units != encoder.hidden() || output.output_dim(store) != encoder.vocab_size(store) {
            return Err(Error::Checkpoint(format!("inconsistent decoder shapes under `{prefix}`")));
        }
        Ok(Seq2Seq { encoder, decoder, combine, output })
    }

    pub fn dims(&self, store: &ParamStore) -> Seq2SeqDims {
        Seq2SeqDims {
            vocab: self.encoder.vocab_size(store),
            embed: store.get(self.encoder.embedding).cols(),
            hidden: self.encoder.hidden(),
        }
    }

    /// Output logits `[T×V]` for decoder states `dec[T×u]` attending over
    /// encoder states `enc[L×u]`.
    fn readout(&self, tape: &mut Tape, b: &Binding, dec: Var, enc: Var) -> Result<Var> {
        let enc_t = tape.transpose(enc)?;
        let scores = tape.matmul(dec, enc_t)?;
        let weights = tape.softmax(scores);
        let context = tape.matmul(weights, enc)?;
        let joined = tape.concat_cols(&[dec, context])?;
        let hidden = self.combine.forward(tape, b, joined)?;
        let hidden = tape.tanh(hidden);
        self.output.forward(tape, b, hidden)
    }

    /// Teacher-forced logits `[len(target)×V]`. The decoder reads `<bos>`
    /// followed by all but the last target token.
    pub fn logits(&self, tape: &mut Tape, b: &Binding, src: &[usize], target: &[usize]) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::EmptyInput("empty decoder target".into()));
        }
        let enc = self.encoder.run(tape, b, src)?;
        let mut inputs = Vec::with_capacity(target.len());
        inputs.push(BOS);
        inputs.extend_from_slice(&target[..target.len() - 1]);
        let x = tape.embedding(b.var(self.encoder.embedding), &inputs)?;
        let dec = self.decoder.run(tape, b, x, Some((enc.h, enc.c)))?;
        self.readout(tape, b, dec.states, enc.states)
    }

    /// Mean per-token negative log-likelihood of `target` given `src`.
    pub fn loss(&self, tape: &mut Tape, b: &Binding, src: &[usize], target: &[usize]) -> Result<Var> {
        let logits = self.logits(tape, b, src, target)?;
        let targets: Vec<Option<usize>> = target.iter().map(|&t| Some(t)).collect();
        tape.nll_loss(logits, &targets)
    }

    pub fn start<'a>(&'a self, store: &ParamStore, src: &[usize]) -> Result<DecodeState<'a>> {
        DecodeState::new(self, store, src)
    }

    /// Greedy decode of up to `max_len` tokens.
    pub fn greedy(&self, store: &ParamStore, src: &[usize], max_len: usize) -> Result<Decoded> {
        self.start(store, src)?.greedy(max_len)
    }
}

/// Incremental decoder over one encoded source.
pub struct DecodeState<'a> {
    model: &'a Seq2Seq,
    tape: Tape,
    binding: Binding,
    enc: Var,
    h: Var,
    c: Var,
}

impl<'a> DecodeState<'a> {
    fn new(model: &'a Seq2Seq, store: &ParamStore, src: &[usize]) -> Result<Self> {
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape, false);
        let enc = model.encoder.run(&mut tape, &binding, src)?;
        let mut state = DecodeState {
            model,
            tape,
            binding,
            enc: enc.states,
            h: enc.h,
            c: enc.c,
        };
        state.feed(BOS)?;
        Ok(state)
    }

    /// Advances the decoder by one input token.
    pub fn feed(&mut self, token: usize) -> Result<()> {
        let tape = &mut self.tape;
        let b = &self.binding;
        let e = tape.embedding(b.var(self.model.encoder.embedding), &[token])?;
        let x = tape.row(e, 0)?;
        (self.h, self.c) = self.model.decoder.step(tape, b, x, self.h, self.c)?;
        Ok(())
    }

    /// Logits for the next token.
    pub fn logits(&mut self) -> Result<Vec<f64>> {
        let dec = self.tape.stack_rows(&[self.h])?;
        let out = self.model.readout(&mut self.tape, &self.binding, dec, self.enc)?;
        Ok(self.tape.value(out).data().to_vec())
    }

    pub fn greedy(mut self, max_len: usize) -> Result<Decoded> {
        let mut ids = Vec::new();
        loop {
            let next = argmax(&self.logits()?);
            if next == EOS {
                return Ok(Decoded { ids, truncated: false });
            }
            if ids.len() == max_len {
                return Ok(Decoded { ids, truncated: true });
            }
            ids.push(next);
            self.feed(next)?;
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

//! Encoder-decoder that answers a dialogue history with an emotion token
//! followed by a system response, plus the emotion gate that may replace the
//! response with a PHQ-8 question.

mod gate;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gate::{induce_response, GateCandidate, GateDecision, GateOverrides, PhqState};

use crate::error::{Error, Result};
use crate::synthesis::PhqBank;
use crate::seq2seq::{DecodeState, Embedder, Encoder, Seq2Seq, Seq2SeqDims};
use crate::tensor::{kernels, Checkpoint, ParamStore, Tape};
use crate::text::{frame, vocab_sidecar, Dialogue, Emotion, Speaker, Turn, Vocabulary, EMO_NEG, EMO_POS, EOS};
use crate::training::{fit, TrainConfig};

pub const DIALOGUE_PREFIX: &str = "dialogue";
/// Prefix of the encoder tensors inside a dialogue checkpoint.
pub const ENCODER_PREFIX: &str = "dialogue.encoder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueConfig {
    pub embed: usize,
    pub hidden: usize,
    pub max_len: usize,
    /// Longest response produced by greedy decoding.
    pub max_response: usize,
    pub train: TrainConfig,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        DialogueConfig {
            embed: 32,
            hidden: 64,
            max_len: 512,
            max_response: 64,
            train: TrainConfig::default(),
        }
    }
}

/// Emotion read from the first decoded position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionPrediction {
    pub emotion: Emotion,
    /// Probability of `emotion` after renormalizing over the two emotion tokens.
    pub probability: f64,
}

/// Picks the emotion from the two emotion-token logits. Equal logits give
/// positive.
pub fn emotion_from_logits(positive: f64, negative: f64) -> EmotionPrediction {
    let mut pair = [positive, negative];
    kernels::softmax_in_place(&mut pair);
    if negative > positive {
        EmotionPrediction { emotion: Emotion::Negative, probability: pair[1] }
    } else {
        EmotionPrediction { emotion: Emotion::Positive, probability: pair[0] }
    }
}

pub fn emotion_token(emotion: Emotion) -> usize {
    match emotion {
        Emotion::Positive => EMO_POS,
        Emotion::Negative => EMO_NEG,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedResponse {
    pub text: String,
    pub emotion: EmotionPrediction,
    pub truncated: bool,
}

/// One supervised example: a framed history and `[emotion, response…, eos]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub dialogue: usize,
    pub turn: usize,
    pub src: Vec<usize>,
    pub target: Vec<usize>,
}

/// Every system turn that follows at least one user turn, conditioned on the
/// seven turns before it. The emotion is that of the latest user turn.
pub fn training_samples(corpus: &[Dialogue], vocab: &Vocabulary, max_len: usize) -> Vec<Sample> {
    let mut out = Vec::new();
    for (di, d) in corpus.iter().enumerate() {
        for (ti, turn) in d.turns.iter().enumerate() {
            if turn.speaker != Speaker::System {
                continue;
            }
            let history = &d.turns[..ti];
            let Some(emotion) = last_user_emotion(history) else {
                continue;
            };
            let mut target = vec![emotion_token(emotion)];
            target.extend(vocab.ids_of(&turn.text));
            target.push(EOS);
            out.push(Sample {
                dialogue: di,
                turn: ti,
                src: frame(vocab.history_ids(history, max_len), max_len),
                target,
            });
        }
    }
    out
}

fn last_user_emotion(history: &[Turn]) -> Option<Emotion> {
    history.iter().rev().find(|t| t.speaker == Speaker::User).and_then(|t| t.emotion)
}

#[derive(Clone, Debug)]
pub struct DialogueModel {
    vocab: Vocabulary,
    store: ParamStore,
    net: Seq2Seq,
    max_len: usize,
    max_response: usize,
}

impl DialogueModel {
    pub fn new(vocab: Vocabulary, config: &DialogueConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let mut store = ParamStore::new();
        let dims = Seq2SeqDims {
            vocab: vocab.len(),
            embed: config.embed,
            hidden: config.hidden,
        };
        let net = Seq2Seq::new(&mut store, DIALOGUE_PREFIX, dims, &mut rng);
        store.snap_to_f32();
        DialogueModel {
            vocab,
            store,
            net,
            max_len: config.max_len,
            max_response: config.max_response,
        }
    }

    pub fn from_parts(vocab: Vocabulary, store: ParamStore, config: &DialogueConfig) -> Result<Self> {
        let net = Seq2Seq::load(&store, DIALOGUE_PREFIX)?;
        if net.dims(&store).vocab != vocab.len() {
            return Err(Error::Checkpoint("dialogue vocabulary does not match its checkpoint".into()));
        }
        Ok(DialogueModel {
            vocab,
            store,
            net,
            max_len: config.max_len,
            max_response: config.max_response,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.net.encoder
    }

    pub fn max_response(&self) -> usize {
        self.max_response
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Embeds contexts and candidates with this model's encoder.
    pub fn embedder(&self) -> Embedder<'_> {
        Embedder {
            vocab: &self.vocab,
            store: &self.store,
            encoder: &self.net.encoder,
            max_len: self.max_len,
        }
    }

    fn start(&self, history: &[Turn]) -> Result<DecodeState<'_>> {
        if history.is_empty() {
            return Err(Error::EmptyInput("cannot respond to an empty history".into()));
        }
        let src = frame(self.vocab.history_ids(history, self.max_len), self.max_len);
        self.net.start(&self.store, &src)
    }

    pub fn classify_emotion(&self, history: &[Turn]) -> Result<EmotionPrediction> {
        let logits = self.start(history)?.logits()?;
        Ok(emotion_from_logits(logits[EMO_POS], logits[EMO_NEG]))
    }

    /// Greedy response after the emotion token, at most `max_len` tokens.
    pub fn generate_response(&self, history: &[Turn], max_len: usize) -> Result<GeneratedResponse> {
        let mut state = self.start(history)?;
        let logits = state.logits()?;
        let emotion = emotion_from_logits(logits[EMO_POS], logits[EMO_NEG]);
        state.feed(emotion_token(emotion.emotion))?;
        let decoded = state.greedy(max_len)?;
        Ok(GeneratedResponse {
            text: self.vocab.decode(&decoded.ids),
            emotion,
            truncated: decoded.truncated,
        })
    }

    /// [`generate_response`](Self::generate_response) with the configured length limit.
    pub fn respond(&self, history: &[Turn]) -> Result<GeneratedResponse> {
        self.generate_response(history, self.max_response)
    }

    /// Per-token negative log-likelihood over every training sample of `corpus`.
    pub fn nll(&self, corpus: &[Dialogue]) -> Result<f64> {
        let samples = training_samples(corpus, &self.vocab, self.max_len);
        if samples.is_empty() {
            return Err(Error::EmptyInput("corpus has no system turns to score".into()));
        }
        let mut tape = Tape::new();
        let (mut total, mut tokens) = (0.0, 0usize);
        for s in &samples {
            tape.clear();
            let b = self.store.bind(&mut tape, false);
            let loss = self.net.loss(&mut tape, &b, &s.src, &s.target)?;
            total += tape.value(loss).item() * s.target.len() as f64;
            tokens += s.target.len();
        }
        Ok(total / tokens as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.store.to_checkpoint()
    }

    /// Writes the checkpoint and its vocabulary sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.checkpoint().save(path)?;
        self.vocab.save(vocab_sidecar(path))
    }

    pub fn load(path: impl AsRef<Path>, config: &DialogueConfig) -> Result<Self> {
        let path = path.as_ref();
        let store = ParamStore::from_checkpoint(&Checkpoint::load(path)?);
        let vocab = Vocabulary::load(vocab_sidecar(path))?;
        Self::from_parts(vocab, store, config)
    }
}

/// Vocabulary over the corpus plus every PHQ question, so questions the gate
/// may offer never encode as unknown words.
pub fn dialogue_vocabulary(corpus: &[Dialogue], bank: &PhqBank) -> Result<Vocabulary> {
    let texts = corpus
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| t.text.as_str()))
        .chain(bank.items().iter().map(|i| i.question.as_str()));
    Vocabulary::from_texts(texts, 1)
}

/// Trains a dialogue model on every system turn of `corpus` with teacher
/// forcing. Returns the model and its per-epoch mean training loss.
pub fn train_dialogue_model(
    corpus: &[Dialogue],
    vocab: Vocabulary,
    config: &DialogueConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(DialogueModel, Vec<f64>)> {
    for d in corpus {
        d.validate()
            .map_err(|(field, message)| Error::in_dialogue(&d.id, Error::Invalid(format!("{field}: {message}"))))?;
    }
    let samples = training_samples(corpus, &vocab, config.max_len);
    let mut model = DialogueModel::new(vocab, config);
    let net = model.net.clone();
    let history = fit(
        &mut model.store,
        samples.len(),
        &config.train,
        |tape, b, i, _| net.loss(tape, b, &samples[i].src, &samples[i].target),
        on_epoch,
    )?;
    Ok((model, history))
}

//! User-response generator: a small encoder-decoder mapping
//! `question <sep> score` to an anticipated patient answer.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PhqBank, PhqItem};
use crate::error::{Error, Result};
use crate::seq2seq::{Seq2Seq, Seq2SeqDims};
use crate::tensor::{Checkpoint, ParamStore, Tape};
use crate::text::{frame, vocab_sidecar, Aspect, Vocabulary, EOS, SEP};
use crate::training::{fit, TrainConfig};

pub const URG_PREFIX: &str = "urg";
/// Tokens standing for the four score levels on the source side.
pub const SCORE_TOKENS: [&str; 4] = ["0", "1", "2", "3"];
/// Decoding limit for generated answers.
pub const MAX_ANSWER_TOKENS: usize = 64;
const MAX_SOURCE: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UrgConfig {
    pub embed: usize,
    pub hidden: usize,
    pub train: TrainConfig,
}

impl Default for UrgConfig {
    fn default() -> Self {
        UrgConfig {
            embed: 32,
            hidden: 64,
            train: TrainConfig {
                epochs: 120,
                batch_size: 4,
                lr: 1e-2,
                weight_decay: 0.0,
                seed: 0,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub text: String,
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct Urg {
    vocab: Vocabulary,
    store: ParamStore,
    model: Seq2Seq,
}

/// Source and target ids for one training pair.
struct Pair {
    src: Vec<usize>,
    target: Vec<usize>,
}

impl Urg {
    /// Fresh, untrained generator with a vocabulary covering `bank`.
    pub fn untrained(bank: &PhqBank, config: &UrgConfig) -> Result<Self> {
        let vocab = Vocabulary::from_texts(bank.texts().chain(SCORE_TOKENS), 1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let mut store = ParamStore::new();
        let dims = Seq2SeqDims {
            vocab: vocab.len(),
            embed: config.embed,
            hidden: config.hidden,
        };
        let model = Seq2Seq::new(&mut store, URG_PREFIX, dims, &mut rng);
        store.snap_to_f32();
        Ok(Urg { vocab, store, model })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    fn source(&self, item: &PhqItem, score: u8) -> Result<Vec<usize>> {
        let token = SCORE_TOKENS
            .get(score as usize)
            .ok_or_else(|| Error::Contract(format!("score {score} outside 0-3")))?;
        let mut ids = self.vocab.ids_of(&item.question);
        ids.push(SEP);
        ids.extend(self.vocab.ids_of(token));
        Ok(frame(ids, MAX_SOURCE))
    }

    fn pairs(&self, bank: &PhqBank) -> Result<Vec<Pair>> {
        let mut out = Vec::new();
        for item in bank.items() {
            for score in 0..=3u8 {
                let src = self.source(item, score)?;
                for answer in item.answers_for(score) {
                    let mut target = self.vocab.ids_of(answer);
                    target.push(EOS);
                    out.push(Pair { src: src.clone(), target });
                }
            }
        }
        Ok(out)
    }

    /// Per-token negative log-likelihood of every anticipated answer in `bank`.
    pub fn nll(&self, bank: &PhqBank) -> Result<f64> {
        let mut total = 0.0;
        let mut tokens = 0usize;
        let mut tape = Tape::new();
        for pair in self.pairs(bank)? {
            tape.clear();
            let b = self.store.bind(&mut tape, false);
            let loss = self.model.loss(&mut tape, &b, &pair.src, &pair.target)?;
            total += tape.value(loss).item() * pair.target.len() as f64;
            tokens += pair.target.len();
        }
        Ok(total / tokens as f64)
    }

    /// Greedy answer for `item` at `score`.
    pub fn generate(&self, item: &PhqItem, score: u8) -> Result<GeneratedAnswer> {
        let src = self.source(item, score)?;
        let out = self.model.greedy(&self.store, &src, MAX_ANSWER_TOKENS)?;
        Ok(GeneratedAnswer {
            text: self.vocab.decode(&out.ids),
            truncated: out.truncated,
        })
    }

    pub fn generate_for(&self, bank: &PhqBank, aspect: Aspect, score: u8) -> Result<GeneratedAnswer> {
        self.generate(bank.item(aspect), score)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.store.to_checkpoint()
    }

    /// Writes the checkpoint to `path` and the vocabulary next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.checkpoint().save(path)?;
        self.vocab.save(vocab_sidecar(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let store = ParamStore::from_checkpoint(&Checkpoint::load(path)?);
        let vocab = Vocabulary::load(vocab_sidecar(path))?;
        Self::from_parts(vocab, store)
    }

    pub fn from_parts(vocab: Vocabulary, store: ParamStore) -> Result<Self> {
        let model = Seq2Seq::load(&store, URG_PREFIX)?;
        if model.dims(&store).vocab != vocab.len() {
            return Err(Error::Checkpoint("URG vocabulary does not match its checkpoint".into()));
        }
        Ok(Urg { vocab, store, model })
    }
}

/// Trains a generator on every (question, score, answer) triple of `bank`.
/// Returns the model and its per-epoch training losses.
pub fn train_urg(bank: &PhqBank, config: &UrgConfig, on_epoch: impl FnMut(usize, f64)) -> Result<(Urg, Vec<f64>)> {
    let mut urg = Urg::untrained(bank, config)?;
    let pairs = urg.pairs(bank)?;
    let model = urg.model.clone();
    let history = fit(
        &mut urg.store,
        pairs.len(),
        &config.train,
        |tape, b, i, _| model.loss(tape, b, &pairs[i].src, &pairs[i].target),
        on_epoch,
    )?;
    Ok((urg, history))
}

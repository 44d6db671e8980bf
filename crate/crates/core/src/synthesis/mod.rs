//! Synthetic PHQ-8 annotated dialogues: a seed corpus, a user-response
//! generator, and similarity-based injection of questionnaire exchanges.

mod phq;
mod seed;
mod select;
mod stats;
mod urg;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use phq::{PhqBank, PhqItem, MIN_TEMPLATES};
pub use seed::generate_seed_corpus;
pub use select::{select_response, Candidate, CandidateKind, Selection};
pub use stats::{corpus_stats, SynthesisStats};
pub use urg::{train_urg, GeneratedAnswer, Urg, UrgConfig, MAX_ANSWER_TOKENS, SCORE_TOKENS, URG_PREFIX};

use crate::error::{Error, Result};
use crate::seq2seq::{Embedder, Encoder, Seq2SeqDims};
use crate::tensor::ParamStore;
use crate::text::{Aspect, Dialogue, Emotion, Speaker, Turn, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub seed: u64,
    pub n_dialogues: usize,
    /// Probability that a seed user turn is labelled negative.
    pub negative_fraction: f64,
    /// Relative weights of scores 0..=3 when drawing aspect labels.
    pub score_weights: [f64; 4],
    /// When false, no questionnaire exchange is ever injected.
    pub gate_enabled: bool,
    /// Keep the original system turn in the candidate pool. Turning this off
    /// forces a PHQ question at every negative turn while items remain.
    pub include_original: bool,
    pub max_len: usize,
    /// Width of the context encoder used for selection.
    pub encoder_embed: usize,
    pub encoder_hidden: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            seed: 0,
            n_dialogues: 100,
            negative_fraction: 0.4,
            score_weights: [1.0; 4],
            gate_enabled: true,
            include_original: true,
            max_len: 512,
            encoder_embed: 32,
            encoder_hidden: 64,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_dialogues == 0 {
            return Err(Error::Config("n_dialogues must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return Err(Error::Config(format!(
                "negative_fraction {} outside [0, 1]",
                self.negative_fraction
            )));
        }
        if self.max_len < 3 || self.encoder_embed == 0 || self.encoder_hidden == 0 {
            return Err(Error::Config("max_len and encoder sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Independent random stream for dialogue `index` under `seed`.
pub(crate) fn dialogue_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Seeded, untrained recurrent encoder used to embed contexts and
/// candidates during synthesis.
#[derive(Clone, Debug)]
pub struct ContextEncoder {
    vocab: Vocabulary,
    store: ParamStore,
    encoder: Encoder,
    max_len: usize,
}

impl ContextEncoder {
    /// Vocabulary over the seed corpus and the PHQ bank, weights drawn from
    /// `config.seed`.
    pub fn build(seed_corpus: &[Dialogue], bank: &PhqBank, config: &SynthesisConfig) -> Result<Self> {
        let texts = seed_corpus
            .iter()
            .flat_map(|d| d.turns.iter().map(|t| t.text.as_str()))
            .chain(bank.texts());
        let vocab = Vocabulary::from_texts(texts, 1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_c0de);
        let mut store = ParamStore::new();
        let dims = Seq2SeqDims {
            vocab: vocab.len(),
            embed: config.encoder_embed,
            hidden: config.encoder_hidden,
        };
        let encoder = Encoder::new(&mut store, "context", dims, &mut rng);
        store.snap_to_f32();
        Ok(ContextEncoder {
            vocab,
            store,
            encoder,
            max_len: config.max_len,
        })
    }

    pub fn embedder(&self) -> Embedder<'_> {
        Embedder {
            vocab: &self.vocab,
            store: &self.store,
            encoder: &self.encoder,
            max_len: self.max_len,
        }
    }
}

/// Emotion attached to a generated answer at `score`.
pub fn answer_emotion(score: u8) -> Emotion {
    if score == 0 {
        Emotion::Positive
    } else {
        Emotion::Negative
    }
}

/// Injects questionnaire exchanges into `seed_corpus`.
///
/// At every negative user turn followed by a system turn, the candidates are
/// the original system turn (when enabled) and every PHQ question not yet
/// asked in that dialogue. If a question wins the cosine selection against
/// the seven-turn context, it replaces the system turn, and a generated
/// answer at the dialogue's score for that aspect replaces the next user
/// turn (or ends the dialogue). Both turns are tagged with the aspect and
/// score, and speakers keep alternating.
pub fn synthesize_corpus(
    seed_corpus: &[Dialogue],
    urg: &Urg,
    bank: &PhqBank,
    embedder: Embedder<'_>,
    config: &SynthesisConfig,
) -> Result<(Vec<Dialogue>, SynthesisStats)> {
    config.validate()?;
    let questions: Vec<Vec<f64>> = bank
        .items()
        .iter()
        .map(|item| embedder.embed_text(&item.question))
        .collect::<Result<_>>()?;
    let mut answers: HashMap<(Aspect, u8), String> = HashMap::new();
    let mut out = Vec::with_capacity(seed_corpus.len());
    for dialogue in seed_corpus {
        let injected = inject(dialogue, urg, bank, embedder, &questions, &mut answers, config)
            .map_err(|e| Error::in_dialogue(&dialogue.id, e))?;
        out.push(injected);
    }
    let stats = corpus_stats(&out);
    Ok((out, stats))
}

fn inject(
    dialogue: &Dialogue,
    urg: &Urg,
    bank: &PhqBank,
    embedder: Embedder<'_>,
    questions: &[Vec<f64>],
    answers: &mut HashMap<(Aspect, u8), String>,
    config: &SynthesisConfig,
) -> Result<Dialogue> {
    let mut asked = [false; 8];
    let mut turns: Vec<Turn> = Vec::with_capacity(dialogue.turns.len() + 2);
    // A generated answer stands in for the next original user turn.
    let mut pending: Option<Turn> = None;
    let mut i = 0;
    while i < dialogue.turns.len() {
        let mut turn = dialogue.turns[i].clone();
        if turn.speaker == Speaker::User {
            if let Some(answer) = pending.take() {
                turn = answer;
            }
        }
        i += 1;
        let open = config.gate_enabled
            && turn.speaker == Speaker::User
            && turn.emotion == Some(Emotion::Negative)
            && dialogue.turns.get(i).is_some_and(|t| t.speaker == Speaker::System);
        turns.push(turn);
        if !open {
            continue;
        }
        let original = &dialogue.turns[i];
        let mut candidates = Vec::with_capacity(9);
        if config.include_original {
            candidates.push(Candidate {
                text: original.text.clone(),
                vector: embedder.embed_text(&original.text)?,
                kind: CandidateKind::Original,
                aspect: None,
            });
        }
        for aspect in Aspect::ALL.into_iter().filter(|a| !asked[a.index()]) {
            candidates.push(Candidate {
                text: bank.item(aspect).question.clone(),
                vector: questions[aspect.index()].clone(),
                kind: CandidateKind::Phq,
                aspect: Some(aspect),
            });
        }
        if candidates.is_empty() {
            continue;
        }
        let context = embedder.embed_context(&turns)?;
        let chosen = &candidates[select_response(&context, &candidates)?.index];
        let Some(aspect) = chosen.aspect else {
            continue;
        };
        let score = dialogue.aspect_scores.get(aspect);
        let answer = match answers.get(&(aspect, score)) {
            Some(a) => a.clone(),
            None => {
                let generated = urg.generate(bank.item(aspect), score)?;
                if generated.text.trim().is_empty() {
                    return Err(Error::Invalid(format!(
                        "user-response generator produced an empty answer for {aspect} at score {score}"
                    )));
                }
                answers.insert((aspect, score), generated.text.clone());
                generated.text
            }
        };
        asked[aspect.index()] = true;
        turns.push(Turn::system(chosen.text.clone()).with_phq(aspect, score));
        pending = Some(Turn::user(answer, answer_emotion(score)).with_phq(aspect, score));
        // the question replaces the original system turn
        i += 1;
    }
    turns.extend(pending);
    Ok(Dialogue {
        id: dialogue.id.clone(),
        turns,
        aspect_scores: dialogue.aspect_scores,
    })
}

/// Seed corpus, context encoder and injection in one call.
pub fn run_synthesis(bank: &PhqBank, urg: &Urg, config: &SynthesisConfig) -> Result<(Vec<Dialogue>, SynthesisStats)> {
    let seed_corpus = generate_seed_corpus(config)?;
    let encoder = ContextEncoder::build(&seed_corpus, bank, config)?;
    synthesize_corpus(&seed_corpus, urg, bank, encoder.embedder(), config)
}

/// Seeded split by dialogue: `dev_fraction` of the dialogues (at least one
/// when there are two or more) go to the dev set. Both halves keep corpus
/// order.
pub fn split_train_dev(corpus: &[Dialogue], seed: u64, dev_fraction: f64) -> (Vec<Dialogue>, Vec<Dialogue>) {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_dev = (corpus.len() as f64 * dev_fraction).round() as usize;
    if corpus.len() >= 2 {
        n_dev = n_dev.clamp(1, corpus.len() - 1);
    }
    let mut is_dev = vec![false; corpus.len()];
    order[..n_dev].iter().for_each(|&i| is_dev[i] = true);
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (d, dev_flag) in corpus.iter().zip(is_dev) {
        if dev_flag {
            dev.push(d.clone());
        } else {
            train.push(d.clone());
        }
    }
    (train, dev)
}

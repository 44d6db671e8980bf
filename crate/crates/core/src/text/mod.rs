//! Tokenization, vocabularies, and the JSONL dialogue corpus format.

mod corpus;
mod tokenize;
mod vocab;

pub use corpus::{
    load_jsonl, read_jsonl, save_jsonl, write_jsonl, Aspect, AspectScores, Dialogue, Emotion, Speaker, Turn,
    HISTORY_WINDOW,
};
pub use tokenize::{detokenize, tokenize, PUNCTUATION};
pub use vocab::{build_vocab, frame, vocab_sidecar, Vocabulary, BOS, EMO_NEG, EMO_POS, EOS, PAD, RESERVED, SEP, UNK};

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{detokenize, tokenize, Dialogue, Turn, HISTORY_WINDOW};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SEP: usize = 4;
pub const EMO_POS: usize = 5;
pub const EMO_NEG: usize = 6;

pub const RESERVED: [&str; 7] = ["<pad>", "<unk>", "<bos>", "<eos>", "<sep>", "<emo_pos>", "<emo_neg>"];

/// Word-level vocabulary. Ids `0..7` are reserved; ordinary tokens follow in
/// order of decreasing frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        if f.tokens.len() < RESERVED.len() || f.tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Invalid("vocabulary must start with the reserved tokens".into()));
        }
        Vocabulary::from_ordered(f.tokens[RESERVED.len()..].to_vec())
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile { tokens: v.tokens }
    }
}

impl Vocabulary {
    fn from_ordered(words: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut ids = HashMap::new();
        for w in words {
            if ids.insert(w.clone(), tokens.len()).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary entry `{w}`")));
            }
            tokens.push(w);
        }
        Ok(Vocabulary { tokens, ids })
    }

    /// Builds a vocabulary from raw text.
    pub fn from_texts<'a, I>(texts: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_any = false;
        for text in texts {
            seen_any = true;
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut entries: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        entries.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then_with(|| a.cmp(b)));
        Vocabulary::from_ordered(entries.into_iter().map(|(w, _)| w).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of an ordinary token; reserved names are never matched from text.
    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn ids_of(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    /// `bos + ids + eos`, keeping the most recent content tokens when the
    /// result would exceed `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        frame(self.ids_of(text), max_len)
    }

    /// Readable text for ids, skipping reserved ids other than `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id == UNK || id >= RESERVED.len())
            .filter_map(|&id| self.token(id))
            .collect();
        detokenize(&words)
    }

    /// Content ids of the last [`HISTORY_WINDOW`] turns joined by `<sep>`,
    /// keeping only the most recent `max_len - 2` ids so that
    /// [`frame`]-ing the result fits in `max_len`.
    pub fn history_ids(&self, turns: &[Turn], max_len: usize) -> Vec<usize> {
        let window = &turns[turns.len().saturating_sub(HISTORY_WINDOW)..];
        let mut ids = Vec::new();
        for (i, turn) in window.iter().enumerate() {
            if i > 0 {
                ids.push(SEP);
            }
            ids.extend(self.ids_of(&turn.text));
        }
        let budget = max_len.saturating_sub(2);
        if ids.len() > budget {
            ids.drain(..ids.len() - budget);
        }
        ids
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Wraps content ids with `bos`/`eos` and right-aligned truncation.
pub fn frame(mut content: Vec<usize>, max_len: usize) -> Vec<usize> {
    let budget = max_len.saturating_sub(2);
    if content.len() > budget {
        content.drain(..content.len() - budget);
    }
    let mut out = Vec::with_capacity(content.len() + 2);
    out.push(BOS);
    out.extend(content);
    out.push(EOS);
    out
}

/// Where the vocabulary belonging to a checkpoint file is stored.
pub fn vocab_sidecar(checkpoint: impl AsRef<Path>) -> PathBuf {
    checkpoint.as_ref().with_extension("vocab.json")
}

/// Vocabulary over every turn of a corpus.
pub fn build_vocab(corpus: &[Dialogue], min_count: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    Vocabulary::from_texts(corpus.iter().flat_map(|d| d.turns.iter().map(|t| t.text.as_str())), min_count)
}

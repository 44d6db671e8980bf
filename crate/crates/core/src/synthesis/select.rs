use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::cosine;
use crate::text::Aspect;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    /// A PHQ-8 question.
    Phq,
    /// A response produced by the dialogue model.
    Generated,
    /// The system turn found in the seed corpus.
    Original,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub text: String,
    pub vector: Vec<f64>,
    pub kind: CandidateKind,
    /// Set for [`CandidateKind::Phq`] candidates.
    pub aspect: Option<Aspect>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// Cosine similarity of every candidate to the context, in input order.
    pub similarities: Vec<f64>,
}

/// Picks the candidate most similar to `context` by cosine similarity. Ties
/// go to the lowest index; a zero vector scores −1.
pub fn select_response(context: &[f64], candidates: &[Candidate]) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("no response candidates".into()));
    }
    let mut similarities = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c.vector.len() != context.len() {
            return Err(Error::dim(format!(
                "candidate vector has {} dims, context has {}",
                c.vector.len(),
                context.len()
            )));
        }
        similarities.push(cosine(context, &c.vector));
    }
    let mut index = 0;
    for (i, &s) in similarities.iter().enumerate() {
        if s > similarities[index] {
            index = i;
        }
    }
    Ok(Selection { index, similarities })
}

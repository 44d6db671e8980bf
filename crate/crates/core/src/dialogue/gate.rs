use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{emotion_from_logits, DialogueModel, EmotionPrediction};
use crate::error::Result;
use crate::synthesis::{select_response, Candidate, CandidateKind, PhqBank};
use crate::text::{Aspect, Emotion, Turn};

/// Which PHQ items a conversation has already asked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhqState {
    asked: [bool; 8],
}

impl PhqState {
    pub fn is_asked(&self, aspect: Aspect) -> bool {
        self.asked[aspect.index()]
    }

    pub fn mark_asked(&mut self, aspect: Aspect) {
        self.asked[aspect.index()] = true;
    }

    pub fn unasked(&self) -> impl Iterator<Item = Aspect> + '_ {
        Aspect::ALL.into_iter().filter(|a| !self.is_asked(*a))
    }

    pub fn asked(&self) -> Vec<Aspect> {
        Aspect::ALL.into_iter().filter(|a| self.is_asked(*a)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateCandidate {
    pub text: String,
    pub kind: CandidateKind,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect: Option<Aspect>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub predicted_emotion: Emotion,
    pub emotion_probability: f64,
    pub candidates: Vec<GateCandidate>,
    pub selected: usize,
    pub induced: bool,
}

impl GateDecision {
    pub fn selected_candidate(&self) -> &GateCandidate {
        &self.candidates[self.selected]
    }

    /// The PHQ item asked by this turn, if the gate induced one.
    pub fn induced_aspect(&self) -> Option<Aspect> {
        self.induced.then(|| self.selected_candidate().aspect).flatten()
    }
}

/// Test hooks for rigging the gate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateOverrides {
    pub emotion: Option<Emotion>,
    pub context: Option<Vec<f64>>,
    /// Replacement vectors keyed by candidate text.
    pub vectors: HashMap<String, Vec<f64>>,
}

/// Responds to `history`. A positive emotion returns the greedy response.
/// A negative emotion with items left to ask adds every unasked PHQ question
/// to the candidates and returns whichever is most similar to the context;
/// an asked item is recorded in `phq`.
pub fn induce_response(
    model: &DialogueModel,
    bank: &PhqBank,
    history: &[Turn],
    phq: &mut PhqState,
    overrides: &GateOverrides,
) -> Result<(String, GateDecision)> {
    let generated = model.respond(history)?;
    let prediction = match overrides.emotion {
        Some(e) => emotion_override(e),
        None => generated.emotion,
    };
    let embedder = model.embedder();
    let vector_of = |text: &str| -> Result<Option<Vec<f64>>> {
        if let Some(v) = overrides.vectors.get(text) {
            return Ok(Some(v.clone()));
        }
        if text.trim().is_empty() {
            return Ok(None);
        }
        embedder.embed_text(text).map(Some)
    };
    let context = match &overrides.context {
        Some(c) => c.clone(),
        None => embedder.embed_context(history)?,
    };
    let zero = vec![0.0; context.len()];

    let mut candidates = vec![Candidate {
        text: generated.text.clone(),
        vector: vector_of(&generated.text)?.unwrap_or_else(|| zero.clone()),
        kind: CandidateKind::Generated,
        aspect: None,
    }];
    if prediction.emotion == Emotion::Negative {
        for aspect in phq.unasked() {
            let question = &bank.item(aspect).question;
            candidates.push(Candidate {
                text: question.clone(),
                vector: vector_of(question)?.unwrap_or_else(|| zero.clone()),
                kind: CandidateKind::Phq,
                aspect: Some(aspect),
            });
        }
    }
    let selection = select_response(&context, &candidates)?;
    let chosen = &candidates[selection.index];
    let induced = chosen.kind == CandidateKind::Phq;
    if let (true, Some(aspect)) = (induced, chosen.aspect) {
        phq.mark_asked(aspect);
    }
    let response = chosen.text.clone();
    let decision = GateDecision {
        predicted_emotion: prediction.emotion,
        emotion_probability: prediction.probability,
        candidates: candidates
            .into_iter()
            .zip(&selection.similarities)
            .map(|(c, &similarity)| GateCandidate {
                text: c.text,
                kind: c.kind,
                similarity,
                aspect: c.aspect,
            })
            .collect(),
        selected: selection.index,
        induced,
    };
    Ok((response, decision))
}

fn emotion_override(emotion: Emotion) -> EmotionPrediction {
    match emotion {
        Emotion::Positive => emotion_from_logits(1.0, 0.0),
        Emotion::Negative => emotion_from_logits(0.0, 1.0),
    }
}

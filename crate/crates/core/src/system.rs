//! The deployed loop: an inductive dialogue model, its frozen-encoder
//! assessor and the PHQ bank, driven one user message at a time.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assessor::{AssessmentReport, AssessorModel};
use crate::dialogue::{induce_response, DialogueModel, GateDecision, GateOverrides, PhqState};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_assessment, evaluate_detection, evaluate_generation, EvalReport};
use crate::synthesis::PhqBank;
use crate::text::{Aspect, AspectScores, Dialogue, Emotion, Speaker, Turn};

pub struct InductiveSystem {
    pub dialogue: DialogueModel,
    pub assessor: AssessorModel,
    pub bank: PhqBank,
}

/// One conversation. User turns carry the emotion the model predicted for
/// them; `decisions[k]` belongs to the system turn at index `2k + 1`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Session {
    turns: Vec<Turn>,
    decisions: Vec<GateDecision>,
    phq: PhqState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub response: String,
    pub gate: GateDecision,
    pub turn_index: usize,
}

/// One line of a saved transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub turn_index: usize,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<Emotion>,
    #[serde(default)]
    pub induced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect: Option<Aspect>,
}

impl Session {
    pub fn new() -> Self {
        Session::default()
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn decisions(&self) -> &[GateDecision] {
        &self.decisions
    }

    pub fn phq(&self) -> &PhqState {
        &self.phq
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.turns
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let decision = (t.speaker == Speaker::System).then(|| &self.decisions[i / 2]);
                TranscriptEntry {
                    turn_index: i,
                    speaker: t.speaker,
                    text: t.text.clone(),
                    emotion: t.emotion,
                    induced: decision.is_some_and(|d| d.induced),
                    aspect: decision.and_then(GateDecision::induced_aspect),
                }
            })
            .collect()
    }

    /// Writes the transcript as JSON lines, creating parent directories.
    pub fn save_transcript(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut out = Vec::new();
        for entry in self.transcript() {
            serde_json::to_writer(&mut out, &entry)?;
            out.push(b'\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

impl InductiveSystem {
    pub fn new(dialogue: DialogueModel, assessor: AssessorModel, bank: PhqBank) -> Result<Self> {
        let dim = dialogue.embedder().dim();
        if assessor.net().input_dim() != dim {
            return Err(Error::Checkpoint(format!(
                "assessor expects {}-dim encoder states but the dialogue encoder has {dim}",
                assessor.net().input_dim()
            )));
        }
        Ok(InductiveSystem { dialogue, assessor, bank })
    }

    pub fn message(&self, session: &mut Session, text: &str) -> Result<TurnOutcome> {
        self.message_with(session, text, &GateOverrides::default())
    }

    /// Appends the user's message and the system's reply. On error the
    /// session is left unchanged.
    pub fn message_with(&self, session: &mut Session, text: &str, overrides: &GateOverrides) -> Result<TurnOutcome> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Invalid("message text is empty".into()));
        }
        let mut history = session.turns.clone();
        // Encoding reads only the text, so the emotion is filled in afterwards.
        history.push(Turn::user(text, Emotion::Positive));
        let mut phq = session.phq;
        let (response, gate) = induce_response(&self.dialogue, &self.bank, &history, &mut phq, overrides)?;
        history.last_mut().expect("user turn just pushed").emotion = Some(gate.predicted_emotion);
        history.push(Turn::system(response.clone()));

        session.turns = history;
        session.phq = phq;
        session.decisions.push(gate.clone());
        Ok(TurnOutcome { response, gate, turn_index: session.turns.len() - 1 })
    }

    /// Severity report for the conversation so far. Never changes the session.
    pub fn assess(&self, session: &Session) -> Result<AssessmentReport> {
        self.assessor.assess_session(self.dialogue.embedder(), &session.turns)
    }

    /// Severity QWK, generation BLEU and screening accuracy over a labelled
    /// corpus.
    pub fn evaluate(&self, corpus: &[Dialogue]) -> Result<EvalReport> {
        let mut scores = HashMap::new();
        let mut flags = HashMap::new();
        for d in corpus {
            let report = self
                .assessor
                .assess_dialogue(self.dialogue.embedder(), &d.turns)
                .map_err(|e| Error::in_dialogue(&d.id, e))?;
            scores.insert(d.id.clone(), AspectScores(report.scores));
            flags.insert(d.id.clone(), report.depressed);
        }
        let qwk = evaluate_assessment(&scores, corpus)?;
        let detection = evaluate_detection(&flags, corpus)?;
        let generation = evaluate_generation(&self.dialogue, corpus)?;
        Ok(EvalReport { qwk, bleu1: generation.bleu1, bleu2: generation.bleu2, detection })
    }
}

/// A tiny untrained system (hidden size 8) for unit tests.
#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::assessor::AssessorConfig;
    use crate::dialogue::DialogueConfig;
    use crate::text::{build_vocab, AspectScores};

    pub(crate) fn tiny_system() -> InductiveSystem {
        let corpus = vec![Dialogue {
            id: "x".into(),
            turns: vec![Turn::user("i feel tired and low", Emotion::Negative), Turn::system("i am sorry to hear that .")],
            aspect_scores: AspectScores::default(),
        }];
        let vocab = build_vocab(&corpus, 1).unwrap();
        let dialogue = DialogueModel::new(vocab, &DialogueConfig { embed: 6, hidden: 8, max_response: 5, ..DialogueConfig::default() });
        let assessor = AssessorModel::new(
            8,
            &AssessorConfig { filters: 4, kernel: 3, lstm_units: 4, ..AssessorConfig::default() },
        )
        .unwrap();
        InductiveSystem::new(dialogue, assessor, PhqBank::standard()).unwrap()
    }
}

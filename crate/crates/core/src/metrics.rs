//! Agreement, generation and detection metrics.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dialogue::{training_samples, DialogueModel};
use crate::error::{Error, Result};
use crate::text::{tokenize, Aspect, AspectScores, Dialogue};

/// Number of answer levels on a PHQ-8 item (0 to 3).
pub const PHQ_LEVELS: usize = 4;
/// Total PHQ-8 score at which a screen counts as positive.
pub const DEPRESSION_THRESHOLD: u32 = 10;

/// Quadratic weighted kappa between targets `y` and predictions `y_hat`
/// over `r` ordinal levels.
///
/// The expected matrix is the outer product of the two histograms scaled to
/// the same total as the observed matrix. When both sequences are the same
/// constant the expected weighted sum is zero and the result is 1.
pub fn qwk(y: &[usize], y_hat: &[usize], r: usize) -> Result<f64> {
    if r < 2 {
        return Err(Error::Invalid(format!("qwk needs at least 2 levels, got {r}")));
    }
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(Error::Invalid(format!(
            "qwk needs two equal non-empty sequences, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    if let Some(v) = y.iter().chain(y_hat).find(|&&v| v >= r) {
        return Err(Error::Invalid(format!("score {v} outside 0..{}", r - 1)));
    }

    let n = y.len() as f64;
    let mut observed = vec![0.0; r * r];
    let mut hist_y = vec![0.0; r];
    let mut hist_hat = vec![0.0; r];
    for (&a, &b) in y.iter().zip(y_hat) {
        observed[a * r + b] += 1.0;
        hist_y[a] += 1.0;
        hist_hat[b] += 1.0;
    }
    let denom = ((r - 1) * (r - 1)) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..r {
        for j in 0..r {
            let w = ((i as f64) - (j as f64)).powi(2) / denom;
            num += w * observed[i * r + j];
            den += w * hist_y[i] * hist_hat[j] / n;
        }
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - num / den)
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with uniform weights over 1..=`n`-grams, one reference
/// per candidate and the standard brevity penalty.
///
/// An order with no matching n-gram gets precision `1 / (2·c)` where `c` is
/// the total candidate length, so a single missing bigram does not zero the
/// score. An all-empty candidate side scores 0.
pub fn bleu_n<S: AsRef<str>, T: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<T>], n: usize) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("bleu needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    if n == 0 {
        return Err(Error::Invalid("bleu order must be at least 1".into()));
    }
    let cand_len: usize = candidates.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    if cand_len == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    for order in 1..=n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (cand, reference) in candidates.iter().zip(references) {
            let ref_counts = ngram_counts(reference, order);
            for (gram, count) in ngram_counts(cand, order) {
                matched += count.min(ref_counts.get(&gram).copied().unwrap_or(0));
                total += count;
            }
        }
        let precision = if matched == 0 {
            1.0 / (2.0 * cand_len as f64)
        } else {
            matched as f64 / total as f64
        };
        log_sum += precision.ln();
    }
    let (c, r) = (cand_len as f64, ref_len as f64);
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(brevity * (log_sum / n as f64).exp())
}

/// PHQ-8 screening rule over eight item scores.
pub fn detect_depression(scores: &[u8]) -> Result<bool> {
    if scores.len() != Aspect::ALL.len() {
        return Err(Error::Invalid(format!("expected 8 item scores, got {}", scores.len())));
    }
    if let Some(s) = scores.iter().find(|&&s| s as usize >= PHQ_LEVELS) {
        return Err(Error::Invalid(format!("item score {s} outside 0..3")));
    }
    Ok(scores.iter().map(|&s| s as u32).sum::<u32>() >= DEPRESSION_THRESHOLD)
}

/// Per-aspect QWK and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub aspects: [f64; 8],
    pub average: f64,
}

impl EvalTable {
    pub fn new(aspects: [f64; 8]) -> Self {
        let average = aspects.iter().sum::<f64>() / aspects.len() as f64;
        EvalTable { aspects, average }
    }

    pub fn get(&self, aspect: Aspect) -> f64 {
        self.aspects[aspect.index()]
    }

    /// `{"aspects": {"interest": ..., ...}, "average": ...}`
    pub fn to_json(&self) -> serde_json::Value {
        let aspects: serde_json::Map<String, serde_json::Value> = Aspect::ALL
            .iter()
            .map(|a| (a.key().to_string(), self.get(*a).into()))
            .collect();
        serde_json::json!({ "aspects": aspects, "average": self.average })
    }
}

impl fmt::Display for EvalTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>7}", "Aspect", "QWK")?;
        for a in Aspect::ALL {
            writeln!(f, "{:<14} {:>7.4}", a.label(), self.get(a))?;
        }
        write!(f, "{:<14} {:>7.4}", "Average", self.average)
    }
}

/// Scores predicted dialogues against the gold corpus, matching by id.
/// Every gold id needs a prediction and every prediction a gold dialogue.
pub fn evaluate_assessment(predictions: &HashMap<String, AspectScores>, gold: &[Dialogue]) -> Result<EvalTable> {
    if gold.is_empty() {
        return Err(Error::EmptyInput("no gold dialogues to evaluate".into()));
    }
    let gold_ids: BTreeSet<&str> = gold.iter().map(|d| d.id.as_str()).collect();
    let mut missing: Vec<String> = gold_ids
        .iter()
        .filter(|id| !predictions.contains_key(**id))
        .map(|id| id.to_string())
        .collect();
    let mut extra: Vec<String> = predictions
        .keys()
        .filter(|id| !gold_ids.contains(id.as_str()))
        .cloned()
        .collect();
    extra.sort();
    missing.extend(extra);
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }

    let mut aspects = [0.0; 8];
    for a in Aspect::ALL {
        let y: Vec<usize> = gold.iter().map(|d| d.aspect_scores.get(a) as usize).collect();
        let y_hat: Vec<usize> = gold.iter().map(|d| predictions[&d.id].get(a) as usize).collect();
        aspects[a.index()] = qwk(&y, &y_hat, PHQ_LEVELS)?;
    }
    Ok(EvalTable::new(aspects))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationEval {
    pub bleu1: f64,
    pub bleu2: f64,
    pub hypotheses: Vec<String>,
    pub references: Vec<String>,
}

/// BLEU-1/2 of the hypotheses against the references, both tokenized.
pub fn score_generation(hypotheses: Vec<String>, references: Vec<String>) -> Result<GenerationEval> {
    let cand: Vec<Vec<String>> = hypotheses.iter().map(|h| tokenize(h)).collect();
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    Ok(GenerationEval {
        bleu1: bleu_n(&cand, &refs, 1)?,
        bleu2: bleu_n(&cand, &refs, 2)?,
        hypotheses,
        references,
    })
}

/// Greedy responses for every system turn of `corpus` against the gold text.
pub fn evaluate_generation(model: &DialogueModel, corpus: &[Dialogue]) -> Result<GenerationEval> {
    let samples = training_samples(corpus, model.vocab(), model.max_len());
    if samples.is_empty() {
        return Err(Error::EmptyInput("corpus has no system turns to evaluate".into()));
    }
    let mut hypotheses = Vec::with_capacity(samples.len());
    let mut references = Vec::with_capacity(samples.len());
    for s in &samples {
        let dialogue = &corpus[s.dialogue];
        let response = model
            .respond(&dialogue.turns[..s.turn])
            .map_err(|e| Error::in_dialogue(&dialogue.id, e))?;
        hypotheses.push(response.text);
        references.push(dialogue.turns[s.turn].text.clone());
    }
    score_generation(hypotheses, references)
}

/// Screening accuracy: the predicted depressed flag against the rule
/// applied to gold scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

pub fn evaluate_detection(predicted: &HashMap<String, bool>, gold: &[Dialogue]) -> Result<DetectionReport> {
    if gold.is_empty() {
        return Err(Error::EmptyInput("no gold dialogues to evaluate".into()));
    }
    let missing: Vec<String> = gold.iter().filter(|d| !predicted.contains_key(&d.id)).map(|d| d.id.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    let mut correct = 0;
    for d in gold {
        if detect_depression(&d.aspect_scores.0)? == predicted[&d.id] {
            correct += 1;
        }
    }
    Ok(DetectionReport { correct, total: gold.len(), accuracy: correct as f64 / gold.len() as f64 })
}

/// Everything `madsa eval` reports.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub qwk: EvalTable,
    pub bleu1: f64,
    pub bleu2: f64,
    pub detection: DetectionReport,
}

impl EvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "qwk": self.qwk.to_json(),
            "bleu": { "bleu1": self.bleu1, "bleu2": self.bleu2 },
            "detection": self.detection,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.qwk)?;
        writeln!(f)?;
        writeln!(f, "{:<14} {:>7.4}", "BLEU-1", self.bleu1)?;
        writeln!(f, "{:<14} {:>7.4}", "BLEU-2", self.bleu2)?;
        write!(
            f,
            "{:<14} {:>6.2}% ({}/{})",
            "Detection",
            100.0 * self.detection.accuracy,
            self.detection.correct,
            self.detection.total
        )
    }
}

//! Dialogue records and their JSONL encoding.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Number of most recent turns a dialogue context is built from.
pub const HISTORY_WINDOW: usize = 7;

/// The eight PHQ-8 aspects, in questionnaire order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Interest,
    Mood,
    Sleep,
    Appetite,
    Fatigue,
    SelfEsteem,
    Concentration,
    Moving,
}

impl Aspect {
    pub const ALL: [Aspect; 8] = [
        Aspect::Interest,
        Aspect::Mood,
        Aspect::Sleep,
        Aspect::Appetite,
        Aspect::Fatigue,
        Aspect::SelfEsteem,
        Aspect::Concentration,
        Aspect::Moving,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Key used in JSON (`self_esteem`, ...).
    pub fn key(self) -> &'static str {
        match self {
            Aspect::Interest => "interest",
            Aspect::Mood => "mood",
            Aspect::Sleep => "sleep",
            Aspect::Appetite => "appetite",
            Aspect::Fatigue => "fatigue",
            Aspect::SelfEsteem => "self_esteem",
            Aspect::Concentration => "concentration",
            Aspect::Moving => "moving",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Aspect::Interest => "Interest",
            Aspect::Mood => "Mood",
            Aspect::Sleep => "Sleep",
            Aspect::Appetite => "Appetite",
            Aspect::Fatigue => "Fatigue",
            Aspect::SelfEsteem => "Self-esteem",
            Aspect::Concentration => "Concentration",
            Aspect::Moving => "Moving",
        }
    }

    pub fn from_key(key: &str) -> Option<Aspect> {
        Aspect::ALL.into_iter().find(|a| a.key() == key)
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Positive,
    Negative,
}

/// Scores 0–3 for all eight aspects, indexed by [`Aspect::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct AspectScores(pub [u8; 8]);

impl AspectScores {
    pub fn get(&self, aspect: Aspect) -> u8 {
        self.0[aspect.index()]
    }

    pub fn set(&mut self, aspect: Aspect, score: u8) {
        self.0[aspect.index()] = score;
    }

    pub fn total(&self) -> u32 {
        self.0.iter().map(|&s| s as u32).sum()
    }
}

impl Serialize for AspectScores {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(8))?;
        for a in Aspect::ALL {
            map.serialize_entry(a.key(), &self.get(a))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for AspectScores {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = Map::<String, Value>::deserialize(d)?;
        scores_from_map(&map).map_err(|(field, msg)| serde::de::Error::custom(format!("{field}: {msg}")))
    }
}

fn scores_from_map(map: &Map<String, Value>) -> std::result::Result<AspectScores, (String, String)> {
    let mut scores = AspectScores::default();
    for key in map.keys() {
        if Aspect::from_key(key).is_none() {
            return Err((format!("aspect_scores.{key}"), "unknown aspect".into()));
        }
    }
    for a in Aspect::ALL {
        let field = format!("aspect_scores.{}", a.key());
        let v = map.get(a.key()).ok_or_else(|| (field.clone(), "missing aspect key".to_string()))?;
        let n = v.as_i64().ok_or_else(|| (field.clone(), "score must be an integer".to_string()))?;
        if !(0..=3).contains(&n) {
            return Err((field, "score out of range".into()));
        }
        scores.set(a, n as u8);
    }
    Ok(scores)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<Emotion>,
    #[serde(default)]
    pub phq_item: Option<Aspect>,
    #[serde(default)]
    pub phq_score: Option<u8>,
}

impl Turn {
    pub fn user(text: impl Into<String>, emotion: Emotion) -> Self {
        Turn {
            speaker: Speaker::User,
            text: text.into(),
            emotion: Some(emotion),
            phq_item: None,
            phq_score: None,
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::System,
            text: text.into(),
            emotion: None,
            phq_item: None,
            phq_score: None,
        }
    }

    pub fn with_phq(mut self, aspect: Aspect, score: u8) -> Self {
        self.phq_item = Some(aspect);
        self.phq_score = Some(score);
        self
    }

    pub fn is_user(&self) -> bool {
        self.speaker == Speaker::User
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    pub aspect_scores: AspectScores,
}

impl Dialogue {
    /// Checks the record invariants; the error names the offending field.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        for (i, t) in self.turns.iter().enumerate() {
            match (t.speaker, t.emotion) {
                (Speaker::User, None) => {
                    return Err((format!("turns[{i}].emotion"), "user turn without emotion".into()))
                }
                (Speaker::System, Some(_)) => {
                    return Err((format!("turns[{i}].emotion"), "emotion is only allowed on user turns".into()))
                }
                _ => {}
            }
            match (t.phq_item, t.phq_score) {
                (Some(_), None) | (None, Some(_)) => {
                    return Err((
                        format!("turns[{i}].phq_score"),
                        "phq_score must be present exactly when phq_item is".into(),
                    ))
                }
                (_, Some(s)) if s > 3 => {
                    return Err((format!("turns[{i}].phq_score"), "score out of range".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and validates one JSONL record. `line` is 1-based and only used
    /// in error messages.
    pub fn from_json_line(raw: &str, line: usize) -> Result<Self> {
        let invalid = |field: &str, message: String| Error::Validation {
            line,
            field: field.to_string(),
            message,
        };
        let value: Value = serde_json::from_str(raw).map_err(|e| invalid("<json>", format!("malformed JSON: {e}")))?;
        let obj = value.as_object().ok_or_else(|| invalid("<json>", "record must be an object".into()))?;

        let id = obj
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| invalid("id", "missing or not a string".into()))?
            .to_string();
        let scores = obj
            .get("aspect_scores")
            .and_then(Value::as_object)
            .ok_or_else(|| invalid("aspect_scores", "missing or not an object".into()))?;
        let aspect_scores = scores_from_map(scores).map_err(|(f, m)| invalid(&f, m))?;

        let raw_turns = obj
            .get("turns")
            .and_then(Value::as_array)
            .ok_or_else(|| invalid("turns", "missing or not an array".into()))?;
        let mut turns = Vec::with_capacity(raw_turns.len());
        for (i, t) in raw_turns.iter().enumerate() {
            if let Some(s) = t.get("phq_score").and_then(Value::as_i64) {
                if !(0..=3).contains(&s) {
                    return Err(invalid(&format!("turns[{i}].phq_score"), "score out of range".into()));
                }
            }
            let turn: Turn = serde_json::from_value(t.clone())
                .map_err(|e| invalid(&format!("turns[{i}]"), e.to_string()))?;
            turns.push(turn);
        }
        let d = Dialogue { id, turns, aspect_scores };
        d.validate().map_err(|(f, m)| invalid(&f, m))?;
        Ok(d)
    }

    /// The most recent [`HISTORY_WINDOW`] turns.
    pub fn window(turns: &[Turn]) -> &[Turn] {
        &turns[turns.len().saturating_sub(HISTORY_WINDOW)..]
    }
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Validation {
            line: i + 1,
            field: "<io>".into(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(Dialogue::from_json_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(dialogues: &[Dialogue], mut w: W) -> Result<()> {
    for d in dialogues {
        let line = d.to_json_line()?;
        writeln!(w, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(std::io::BufReader::new(file))
}

pub fn save_jsonl(dialogues: &[Dialogue], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut buf = Vec::new();
    write_jsonl(dialogues, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GOOD: &str = r#"{"id":"d1","turns":[{"speaker":"user","text":"hi","emotion":"negative","phq_item":null,"phq_score":null},{"speaker":"system","text":"Over the last two weeks?","phq_item":"sleep","phq_score":2}],"aspect_scores":{"interest":0,"mood":1,"sleep":2,"appetite":3,"fatigue":0,"self_esteem":1,"concentration":2,"moving":3}}"#;

    #[test]
    fn parses_schema_line() {
        let d = Dialogue::from_json_line(GOOD, 1).unwrap();
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.aspect_scores.get(Aspect::SelfEsteem), 1);
        assert_eq!(d.turns[1].phq_item, Some(Aspect::Sleep));
        assert_eq!(Dialogue::from_json_line(&d.to_json_line().unwrap(), 1).unwrap(), d);
    }

    fn err_field(raw: &str) -> (String, String) {
        match Dialogue::from_json_line(raw, 4) {
            Err(Error::Validation { line, field, message }) => {
                assert_eq!(line, 4);
                (field, message)
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn score_out_of_range() {
        let (field, msg) = err_field(&GOOD.replace("\"appetite\":3", "\"appetite\":4"));
        assert_eq!(field, "aspect_scores.appetite");
        assert_eq!(msg, "score out of range");
        let (field, msg) = err_field(&GOOD.replace("\"phq_score\":2", "\"phq_score\":7"));
        assert_eq!(field, "turns[1].phq_score");
        assert_eq!(msg, "score out of range");
    }

    #[test]
    fn missing_emotion_and_aspect() {
        let (field, _) = err_field(&GOOD.replace(",\"emotion\":\"negative\"", ""));
        assert_eq!(field, "turns[0].emotion");
        let (field, msg) = err_field(&GOOD.replace("\"moving\":3", "\"extra\":3"));
        assert!(field.starts_with("aspect_scores."), "{field}");
        assert!(msg.contains("aspect"), "{msg}");
        let (field, _) = err_field("{not json");
        assert_eq!(field, "<json>");
        let (field, _) = err_field(&GOOD.replace("\"phq_score\":2", "\"phq_score\":null"));
        assert_eq!(field, "turns[1].phq_score");
    }

    #[test]
    fn reader_reports_line_numbers() {
        let text = format!("{GOOD}\n\n{}\n", GOOD.replace("\"mood\":1", "\"mood\":9"));
        match read_jsonl(text.as_bytes()) {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    fn arb_turn() -> impl Strategy<Value = Turn> {
        let aspect = prop::sample::select(Aspect::ALL.to_vec());
        (
            any::<bool>(),
            "[a-zA-Z ,.!?']{0,40}",
            any::<bool>(),
            prop::option::of((aspect, 0u8..4)),
        )
            .prop_map(|(is_user, text, neg, phq)| {
                let emotion = if neg { Emotion::Negative } else { Emotion::Positive };
                let t = if is_user { Turn::user(text, emotion) } else { Turn::system(text) };
                match phq {
                    Some((a, s)) => t.with_phq(a, s),
                    None => t,
                }
            })
    }

    fn arb_dialogue() -> impl Strategy<Value = Dialogue> {
        (
            "[a-z0-9-]{1,12}",
            prop::collection::vec(arb_turn(), 0..8),
            prop::array::uniform8(0u8..4),
        )
            .prop_map(|(id, turns, scores)| Dialogue {
                id,
                turns,
                aspect_scores: AspectScores(scores),
            })
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(corpus in prop::collection::vec(arb_dialogue(), 0..6)) {
            let mut buf = Vec::new();
            write_jsonl(&corpus, &mut buf).unwrap();
            let back = read_jsonl(buf.as_slice()).unwrap();
            prop_assert_eq!(back, corpus);
        }
    }
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Aspect;

const DEFAULT_BANK: &str = include_str!("../../data/phq8.json");

/// Minimum number of anticipated answers per score level.
pub const MIN_TEMPLATES: usize = 3;

/// One questionnaire item with its anticipated answers per score.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhqItem {
    pub aspect: Aspect,
    pub question: String,
    pub answers: BTreeMap<String, Vec<String>>,
}

impl PhqItem {
    pub fn answers_for(&self, score: u8) -> &[String] {
        self.answers.get(&score.to_string()).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// The eight PHQ-8 items, stored in aspect order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhqBank {
    items: Vec<PhqItem>,
}

impl PhqBank {
    /// The bundled bank.
    pub fn standard() -> Self {
        Self::from_json(DEFAULT_BANK).expect("bundled PHQ bank is valid")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let items: Vec<PhqItem> =
            serde_json::from_str(raw).map_err(|e| Error::Invalid(format!("phq bank: {e}")))?;
        Self::new(items)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Invalid(format!("phq bank not found: {}", path.display())));
        }
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }

    pub fn new(mut items: Vec<PhqItem>) -> Result<Self> {
        items.sort_by_key(|i| i.aspect);
        let aspects: Vec<Aspect> = items.iter().map(|i| i.aspect).collect();
        if aspects != Aspect::ALL {
            return Err(Error::Invalid(format!(
                "phq bank must hold exactly one item per aspect, got {aspects:?}"
            )));
        }
        for item in &items {
            if item.question.trim().is_empty() {
                return Err(Error::Invalid(format!("{}: empty question", item.aspect)));
            }
            for key in item.answers.keys() {
                if !matches!(key.as_str(), "0" | "1" | "2" | "3") {
                    return Err(Error::Invalid(format!("{}: unknown score key `{key}`", item.aspect)));
                }
            }
            for score in 0..=3u8 {
                let answers = item.answers_for(score);
                if answers.len() < MIN_TEMPLATES || answers.iter().any(|a| a.trim().is_empty()) {
                    return Err(Error::Invalid(format!(
                        "{}: score {score} needs at least {MIN_TEMPLATES} non-empty answers",
                        item.aspect
                    )));
                }
            }
        }
        Ok(PhqBank { items })
    }

    pub fn items(&self) -> &[PhqItem] {
        &self.items
    }

    pub fn item(&self, aspect: Aspect) -> &PhqItem {
        &self.items[aspect.index()]
    }

    /// The aspect whose question is exactly `text`, if any.
    pub fn aspect_of_question(&self, text: &str) -> Option<Aspect> {
        self.items.iter().find(|i| i.question == text).map(|i| i.aspect)
    }

    /// Every question and answer string.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.items.iter().flat_map(|i| {
            std::iter::once(i.question.as_str()).chain(i.answers.values().flatten().map(String::as_str))
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.items)?)
    }
}

use serde::{Deserialize, Serialize};

use crate::text::{Aspect, Dialogue, Speaker};

/// Counts over a corpus. Arrays are indexed by [`Aspect::index`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub dialogues: usize,
    pub turns: usize,
    /// System turns carrying a PHQ item tag.
    pub injections: [usize; 8],
    /// `score_histogram[aspect][score]` over dialogue labels.
    pub score_histogram: [[usize; 4]; 8],
}

impl SynthesisStats {
    pub fn total_injections(&self) -> usize {
        self.injections.iter().sum()
    }

    /// Adds another set of counts; order of merging does not matter.
    pub fn merge(&mut self, other: &SynthesisStats) {
        self.dialogues += other.dialogues;
        self.turns += other.turns;
        for a in 0..8 {
            self.injections[a] += other.injections[a];
            for s in 0..4 {
                self.score_histogram[a][s] += other.score_histogram[a][s];
            }
        }
    }

    pub fn observe(&mut self, d: &Dialogue) {
        self.dialogues += 1;
        self.turns += d.turns.len();
        for t in &d.turns {
            if let (Speaker::System, Some(aspect)) = (t.speaker, t.phq_item) {
                self.injections[aspect.index()] += 1;
            }
        }
        for a in Aspect::ALL {
            self.score_histogram[a.index()][d.aspect_scores.get(a) as usize] += 1;
        }
    }
}

pub fn corpus_stats(dialogues: &[Dialogue]) -> SynthesisStats {
    let mut stats = SynthesisStats::default();
    dialogues.iter().for_each(|d| stats.observe(d));
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{AspectScores, Emotion, Turn};

    #[test]
    fn empty_corpus_is_all_zero() {
        assert_eq!(corpus_stats(&[]), SynthesisStats::default());
    }

    #[test]
    fn hand_counted_corpus() {
        let a = Dialogue {
            id: "a".into(),
            turns: vec![
                Turn::user("bad day", Emotion::Negative),
                Turn::system("q sleep").with_phq(Aspect::Sleep, 2),
                Turn::user("answer", Emotion::Negative).with_phq(Aspect::Sleep, 2),
                Turn::user("still bad", Emotion::Negative),
                Turn::system("q mood").with_phq(Aspect::Mood, 2),
                Turn::user("answer", Emotion::Negative).with_phq(Aspect::Mood, 2),
            ],
            aspect_scores: AspectScores([0, 2, 2, 0, 0, 0, 0, 3]),
        };
        let b = Dialogue {
            id: "b".into(),
            turns: vec![Turn::user("fine", Emotion::Positive), Turn::system("great")],
            aspect_scores: AspectScores([1; 8]),
        };
        let stats = corpus_stats(&[a, b]);
        assert_eq!(stats.dialogues, 2);
        assert_eq!(stats.turns, 8);
        assert_eq!(stats.injections, [0, 1, 1, 0, 0, 0, 0, 0]);
        assert_eq!(stats.total_injections(), 2);
        assert_eq!(stats.score_histogram[Aspect::Moving.index()], [0, 1, 0, 1]);
        assert_eq!(stats.score_histogram[Aspect::Interest.index()], [1, 1, 0, 0]);
        for row in stats.score_histogram {
            assert_eq!(row.iter().sum::<usize>(), 2);
        }
    }

    #[test]
    fn merge_matches_whole() {
        let mut d = Dialogue {
            id: "x".into(),
            turns: vec![Turn::user("x", Emotion::Positive)],
            aspect_scores: AspectScores([3, 2, 1, 0, 3, 2, 1, 0]),
        };
        let first = corpus_stats(std::slice::from_ref(&d));
        d.aspect_scores = AspectScores([0; 8]);
        let second = corpus_stats(std::slice::from_ref(&d));
        let mut merged = second.clone();
        merged.merge(&first);
        let mut other = first.clone();
        other.merge(&second);
        assert_eq!(merged, other);
        assert_eq!(merged.dialogues, 2);
    }
}

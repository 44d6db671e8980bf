//! Template-driven open-domain dialogues with per-turn emotion labels.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{dialogue_rng, SynthesisConfig};
use crate::error::{Error, Result};
use crate::text::{Aspect, AspectScores, Dialogue, Emotion, Turn};

const ACTIVITIES: &[&str] = &[
    "hiking", "painting", "swimming", "running", "baking", "cycling", "gardening", "dancing", "fishing",
    "knitting", "climbing", "skating", "camping", "singing", "drawing", "jogging", "sailing", "surfing",
    "bowling", "rowing", "skiing", "cooking", "writing", "walking", "reading",
];
const PEOPLE: &[&str] = &[
    "sister", "brother", "mother", "father", "friend", "cousin", "neighbor", "roommate", "partner",
    "grandmother", "grandfather", "aunt", "uncle", "coworker", "daughter", "son",
];
const PLACES: &[&str] = &[
    "park", "beach", "museum", "library", "lake", "cafe", "market", "zoo", "gym", "garden", "cinema",
    "river", "mall", "stadium", "bakery",
];
const TIMES: &[&str] = &[
    "yesterday", "today", "last night", "this morning", "last weekend", "this week", "tonight",
    "last month", "on sunday", "on saturday",
];

const USER_POSITIVE: &[&str] = &[
    "{activity} with my {person} {time} was so much fun.",
    "I finally went to the {place} {time} and had a great time!",
    "I am really happy, my {person} surprised me at the {place} {time}.",
    "Feeling great {time}, {activity} always puts me in a good mood.",
    "I cooked dinner for my {person} {time} and everyone loved it.",
    "The weather was lovely {time} so I spent the afternoon at the {place}.",
    "I got some good news at work {time} and I want to celebrate with my {person}.",
    "I have been {activity} a lot this month and I feel stronger than ever.",
];
const USER_NEGATIVE: &[&str] = &[
    "I have been so tired lately, even {activity} feels exhausting.",
    "I could not sleep again {time}, my mind kept racing.",
    "I feel so down since my {person} moved away.",
    "Nothing seems fun anymore, I skipped {activity} {time}.",
    "I have barely eaten anything {time}, I am just not hungry.",
    "I keep making mistakes and I feel like a failure in front of my {person}.",
    "I cannot focus on anything, I read the same page over and over {time}.",
    "I feel restless and I could not sit still at the {place} {time}.",
    "I argued with my {person} {time} and I feel terrible about myself.",
    "Everything feels heavy {time}, I just want to stay in bed all day.",
];
const SYSTEM_AFTER_POSITIVE: &[&str] = &[
    "That sounds wonderful! What was the best part?",
    "I am glad to hear it. Do you go to the {place} often?",
    "How nice! Does your {person} enjoy {activity} too?",
    "Great to hear. What are you planning to do next?",
    "That is lovely. How did your {person} react?",
    "Good for you! Tell me more about it.",
];
const SYSTEM_AFTER_NEGATIVE: &[&str] = &[
    "I am sorry to hear that. How long have you been feeling this way?",
    "That sounds hard. Is your {person} around to support you?",
    "I hear you. Would {activity} help you relax a little?",
    "Thank you for telling me. What has been the hardest part?",
    "That must be difficult. Have you talked to anyone about it?",
    "I understand. Maybe a quiet walk to the {place} could help?",
];

/// Slots shared by every turn of one dialogue.
struct Topic {
    activity: &'static str,
    person: &'static str,
    place: &'static str,
    time: &'static str,
}

impl Topic {
    fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Topic {
            activity: ACTIVITIES.choose(rng).expect("non-empty"),
            person: PEOPLE.choose(rng).expect("non-empty"),
            place: PLACES.choose(rng).expect("non-empty"),
            time: TIMES.choose(rng).expect("non-empty"),
        }
    }

    fn fill(&self, template: &str) -> String {
        let s = template
            .replace("{activity}", self.activity)
            .replace("{person}", self.person)
            .replace("{place}", self.place)
            .replace("{time}", self.time);
        let mut chars = s.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => s,
        }
    }
}

pub(crate) fn sample_scores<R: Rng + ?Sized>(weights: &[f64; 4], rng: &mut R) -> Result<AspectScores> {
    let dist = WeightedIndex::new(weights)
        .map_err(|e| Error::Config(format!("invalid score weights {weights:?}: {e}")))?;
    let mut scores = AspectScores::default();
    for a in Aspect::ALL {
        scores.set(a, dist.sample(rng) as u8);
    }
    Ok(scores)
}

/// Generates `config.n_dialogues` dialogues of 4, 6, 8 or 10 alternating
/// turns, starting with the user. Each user turn is negative with
/// probability `config.negative_fraction`; the eight aspect scores are drawn
/// from `config.score_weights`.
pub fn generate_seed_corpus(config: &SynthesisConfig) -> Result<Vec<Dialogue>> {
    config.validate()?;
    (0..config.n_dialogues)
        .map(|index| {
            let mut rng = dialogue_rng(config.seed, index);
            let aspect_scores = sample_scores(&config.score_weights, &mut rng)?;
            let topic = Topic::draw(&mut rng);
            let n_turns = *[4usize, 6, 8, 10].choose(&mut rng).expect("non-empty");
            let mut turns = Vec::with_capacity(n_turns);
            let mut user_pool: Vec<&str> = Vec::new();
            for t in 0..n_turns / 2 {
                let negative = rng.gen_bool(config.negative_fraction);
                let (emotion, templates, replies) = if negative {
                    (Emotion::Negative, USER_NEGATIVE, SYSTEM_AFTER_NEGATIVE)
                } else {
                    (Emotion::Positive, USER_POSITIVE, SYSTEM_AFTER_POSITIVE)
                };
                // Avoid repeating a user template inside one dialogue.
                let fresh: Vec<&str> = templates.iter().copied().filter(|x| !user_pool.contains(x)).collect();
                let template = fresh.choose(&mut rng).copied().unwrap_or(templates[t % templates.len()]);
                user_pool.push(template);
                turns.push(Turn::user(topic.fill(template), emotion));
                let reply = replies.choose(&mut rng).expect("non-empty");
                turns.push(Turn::system(topic.fill(reply)));
            }
            Ok(Dialogue {
                id: format!("dlg-{index:05}"),
                turns,
                aspect_scores,
            })
        })
        .collect()
}

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::world::LANDMARK_NAMES;

/// Landmark-word blacklist: words that look like nouns but have no visual
/// counterpart in a scene.
pub const LANDMARK_BLACKLIST: &[&str] = &[
    "end", "18 inch", "head", "inside", "forward", "position", "ground", "home", "face", "walk",
    "feet", "way", "walking", "bit", "veer", "'ve", "next", "stop", "towards", "right",
    "direction", "thing", "facing", "side", "turn", "middle", "one", "out", "piece", "left",
    "destination", "straight", "enter", "wait", "don't", "stand", "back", "round",
];

/// Verbs that require no navigational action.
pub const VERB_BLACKLIST: &[&str] = &["make", "turn", "face", "facing", "veer"];

/// Sentences opening with one of these only describe a stop condition.
pub const STOP_SENTENCE_PREFIXES: &[&str] = &["wait", "stop", "there", "remain", "you will see"];

/// Sentences opening with one of these belong to the following sentence.
pub const NEXT_MERGE_PREFIXES: &[&str] = &["with", "facing"];

const DISTRACTOR_NOUNS: &[&str] = &[
    "room", "door", "doorway", "hall", "corridor", "wall", "floor", "stair", "corner", "entrance",
    "exit", "area", "landing", "end", "head", "inside", "forward", "position", "ground", "home",
    "face", "feet", "way", "bit", "next", "towards", "right", "direction", "thing", "side",
    "middle", "one", "out", "piece", "left", "destination", "straight", "back", "round", "inch",
];

const VERBS: &[&str] = &[
    "walk", "walking", "go", "head", "exit", "enter", "continue", "proceed", "pass", "climb",
    "descend", "take", "follow", "stop", "wait", "turn", "make", "face", "facing", "veer", "move",
    "keep", "stand", "reach", "cross", "leave", "approach", "remain", "stay", "circle",
];

const STOP_WORDS: &[&str] = &[
    "the", "a", "an", "and", "to", "of", "for", "from", "at", "in", "on", "into", "onto", "with",
    "by", "you", "your", "is", "are", "will", "be", "then", "until", "past", "through", "toward",
    "there", "that", "this", "it", "its", "up", "down", "near", "just", "once", "when", "see",
    "so", "as", "but", "or", "all", "over", "under", "between", "again",
];

fn set(words: &[&str]) -> BTreeSet<String> {
    words.iter().map(|w| w.to_string()).collect()
}

/// Closed word lists driving the lexicon tagger and the segmentation rules.
/// Serialized as one JSON object with one array per set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lexicon {
    pub noun_words: BTreeSet<String>,
    pub verb_words: BTreeSet<String>,
    pub stop_words: BTreeSet<String>,
    pub landmark_blacklist: BTreeSet<String>,
    pub verb_blacklist: BTreeSet<String>,
    pub stop_sentence_prefixes: BTreeSet<String>,
    pub next_merge_prefixes: BTreeSet<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        let mut noun_words = set(LANDMARK_NAMES);
        noun_words.extend(set(DISTRACTOR_NOUNS));
        Lexicon {
            noun_words,
            verb_words: set(VERBS),
            stop_words: set(STOP_WORDS),
            landmark_blacklist: set(LANDMARK_BLACKLIST),
            verb_blacklist: set(VERB_BLACKLIST),
            stop_sentence_prefixes: set(STOP_SENTENCE_PREFIXES),
            next_merge_prefixes: set(NEXT_MERGE_PREFIXES),
        }
    }
}

impl Lexicon {
    /// Adds world landmark names to the noun list.
    pub fn with_landmarks<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.noun_words
            .extend(names.iter().map(|n| n.as_ref().to_lowercase()));
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every word the tagger knows, sorted. Used as the token vocabulary of
    /// the instruction encoder.
    pub fn words(&self) -> Vec<String> {
        let mut all: BTreeSet<String> = BTreeSet::new();
        for s in [&self.noun_words, &self.verb_words, &self.stop_words] {
            all.extend(s.iter().cloned());
        }
        all.into_iter().filter(|w| !w.contains(' ')).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blacklists_are_disjoint_from_world_landmarks() {
        let lex = Lexicon::default();
        for name in LANDMARK_NAMES {
            assert!(!lex.landmark_blacklist.contains(*name), "{name}");
            assert!(!lex.verb_blacklist.contains(*name), "{name}");
        }
    }

    #[test]
    fn default_blacklists_are_shipped_verbatim() {
        let lex = Lexicon::default();
        assert_eq!(lex.landmark_blacklist.len(), 38);
        assert!(lex.landmark_blacklist.contains("18 inch"));
        assert!(lex.landmark_blacklist.contains("don't"));
        assert_eq!(lex.verb_blacklist, set(&["make", "turn", "face", "facing", "veer"]));
        assert_eq!(
            lex.stop_sentence_prefixes,
            set(&["wait", "stop", "there", "remain", "you will see"])
        );
        assert_eq!(lex.next_merge_prefixes, set(&["with", "facing"]));
    }

    #[test]
    fn json_round_trip_rejects_unknown_keys() {
        let lex = Lexicon::default();
        let text = serde_json::to_string(&lex).unwrap();
        assert_eq!(serde_json::from_str::<Lexicon>(&text).unwrap(), lex);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["extra"] = serde_json::json!([]);
        assert!(serde_json::from_value::<Lexicon>(v).is_err());
    }
}

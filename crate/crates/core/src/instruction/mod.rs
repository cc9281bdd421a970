//! Instruction text: lexicon tagging, BabyStep segmentation and landmark
//! phrase extraction, plus the template generator for synthetic episodes.
//!
//! Segmentation runs the six heuristic rules in order: split on periods and
//! tag; curate noun phrases (drop stop words, lemmatize); drop blacklisted
//! landmark words; drop blacklisted verbs; merge sentences with neither
//! landmark nor verb into the next one; merge stop-condition sentences into
//! the previous one and `with`/`facing` sentences into the next one.

mod lexicon;
mod synth;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use lexicon::{
    Lexicon, LANDMARK_BLACKLIST, NEXT_MERGE_PREFIXES, STOP_SENTENCE_PREFIXES, VERB_BLACKLIST,
};
pub use synth::{synthesize_instruction, GoldSegment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tag {
    Noun,
    Verb,
    Stopword,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub word: String,
    pub lemma: String,
    pub tag: Tag,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    /// Byte range in the raw text, including the closing period if present.
    pub chars: Range<usize>,
    /// Range into [`TaggedInstruction::tokens`].
    pub tokens: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedInstruction {
    pub raw: String,
    pub sentences: Vec<Sentence>,
    pub tokens: Vec<Token>,
}

impl TaggedInstruction {
    pub fn sentence_tokens(&self, i: usize) -> &[Token] {
        &self.tokens[self.sentences[i].tokens.clone()]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BabyStep {
    #[serde(with = "range_pair")]
    pub sentence_span: Range<usize>,
    pub text: String,
    pub landmarks: Vec<String>,
    pub verbs: Vec<String>,
}

pub(crate) mod range_pair {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::ops::Range;

    pub fn serialize<S: Serializer>(r: &Range<usize>, s: S) -> Result<S::Ok, S::Error> {
        [r.start, r.end].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Range<usize>, D::Error> {
        let [a, b] = <[usize; 2]>::deserialize(d)?;
        Ok(a..b)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmenterMode {
    /// The six-rule BabyStep segmenter.
    #[default]
    Babystep,
    /// Every sentence is its own step (ablation baseline).
    Sentence,
}

/// Strips plural `-es` / `-s`.
pub fn lemmatize(word: &str) -> String {
    if word.len() > 4 && word.ends_with("es") {
        let stem = &word[..word.len() - 2];
        if ["s", "x", "z", "ch", "sh"].iter().any(|s| stem.ends_with(s)) {
            return stem.to_string();
        }
    }
    if word.len() > 3 && word.ends_with('s') && !word.ends_with("ss") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// Lowercased word tokens of `sentence`; apostrophes and inner hyphens are kept.
pub fn words(sentence: &str) -> Vec<String> {
    sentence
        .split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '\'' && c != '-'))
        .map(|w| w.trim_matches('-'))
        .filter(|w| !w.is_empty() && *w != "'")
        .map(|w| w.to_lowercase())
        .collect()
}

fn tag_word(word: &str, lexicon: &Lexicon) -> (String, Tag) {
    let lemma = lemmatize(word);
    let lookup = |set: &std::collections::BTreeSet<String>| -> Option<String> {
        if set.contains(word) {
            Some(word.to_string())
        } else if set.contains(&lemma) {
            Some(lemma.clone())
        } else {
            None
        }
    };
    if let Some(l) = lookup(&lexicon.stop_words) {
        return (l, Tag::Stopword);
    }
    if let Some(l) = lookup(&lexicon.verb_words) {
        return (l, Tag::Verb);
    }
    if let Some(l) = lookup(&lexicon.noun_words) {
        return (l, Tag::Noun);
    }
    (word.to_string(), Tag::Other)
}

/// Splits on periods and tags every token by lexicon lookup.
pub fn tag(raw: &str, lexicon: &Lexicon) -> TaggedInstruction {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut start = 0;
    let bytes = raw.as_bytes();
    while start < raw.len() {
        let end = raw[start..].find('.').map(|i| start + i + 1).unwrap_or(raw.len());
        let body = &raw[start..end];
        let words = words(body);
        if !words.is_empty() {
            let lead = body.len() - body.trim_start().len();
            let first = tokens.len();
            for word in words {
                let (lemma, t) = tag_word(&word, lexicon);
                tokens.push(Token { word, lemma, tag: t });
            }
            sentences.push(Sentence {
                chars: start + lead..end,
                tokens: first..tokens.len(),
            });
        }
        start = end;
        while start < raw.len() && bytes[start].is_ascii_whitespace() {
            start += 1;
        }
    }
    TaggedInstruction {
        raw: raw.to_string(),
        sentences,
        tokens,
    }
}

/// Landmark phrases of a token run: maximal runs of nouns with blacklisted
/// words removed, deduplicated in order of first appearance.
fn landmark_phrases(tokens: &[Token], lexicon: &Lexicon, out: &mut Vec<String>) {
    let mut run: Vec<&str> = Vec::new();
    let flush = |run: &mut Vec<&str>, out: &mut Vec<String>| {
        if run.is_empty() {
            return;
        }
        let joined = run.join(" ");
        run.clear();
        if lexicon.landmark_blacklist.contains(&joined) {
            return;
        }
        let kept: Vec<&str> = joined
            .split(' ')
            .filter(|w| !lexicon.landmark_blacklist.contains(*w))
            .collect();
        if kept.is_empty() {
            return;
        }
        let phrase = kept.join(" ");
        if !out.contains(&phrase) {
            out.push(phrase);
        }
    };
    for t in tokens {
        if t.tag == Tag::Noun {
            run.push(&t.lemma);
        } else {
            flush(&mut run, out);
        }
    }
    flush(&mut run, out);
}

fn action_verbs(tokens: &[Token], lexicon: &Lexicon, out: &mut Vec<String>) {
    for t in tokens {
        if t.tag == Tag::Verb && !lexicon.verb_blacklist.contains(&t.lemma) && !out.contains(&t.lemma) {
            out.push(t.lemma.clone());
        }
    }
}

/// Landmark words of a piece of text, in order of first appearance.
pub fn extract_landmark_phrases(text: &str, lexicon: &Lexicon) -> Vec<String> {
    let tagged = tag(text, lexicon);
    let mut out = Vec::new();
    landmark_phrases(&tagged.tokens, lexicon, &mut out);
    out
}

/// How a unit opens, for the prefix-driven merge rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lead {
    Plain,
    /// Describes a stop condition; belongs to the previous unit.
    StopCondition,
    /// Opens with `with` / `facing`; belongs to the next unit.
    MergeNext,
}

/// A run of sentences considered for merging.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unit {
    pub span: Range<usize>,
    pub actionable: bool,
    pub lead: Lead,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Pull {
    Stay,
    Forward,
    Backward,
}

/// One merge pass over units. Non-actionable units join the next unit (the
/// previous one when no actionable unit follows); stop-condition units join the previous unit (the
/// next one when first); `with`/`facing` units join the next unit (the
/// previous one when last). The non-actionable rule takes precedence. Merged
/// units are plain and actionable if any part was, so a second pass is a
/// no-op.
pub fn merge_units(units: &[Unit]) -> Vec<Unit> {
    let n = units.len();
    let pulls: Vec<Pull> = units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let (has_prev, has_next) = (i > 0, i + 1 < n);
            let prefer = |first: Pull, second: Pull| {
                let ok = |p: Pull| match p {
                    Pull::Forward => has_next,
                    Pull::Backward => has_prev,
                    Pull::Stay => true,
                };
                if ok(first) {
                    first
                } else if ok(second) {
                    second
                } else {
                    Pull::Stay
                }
            };
            if !u.actionable {
                if units[i + 1..].iter().any(|v| v.actionable) {
                    Pull::Forward
                } else {
                    prefer(Pull::Backward, Pull::Forward)
                }
            } else {
                match u.lead {
                    Lead::StopCondition => prefer(Pull::Backward, Pull::Forward),
                    Lead::MergeNext => prefer(Pull::Forward, Pull::Backward),
                    Lead::Plain => Pull::Stay,
                }
            }
        })
        .collect();

    let mut out: Vec<Unit> = Vec::new();
    for (i, u) in units.iter().enumerate() {
        let joins_previous =
            i > 0 && (pulls[i - 1] == Pull::Forward || pulls[i] == Pull::Backward);
        if joins_previous {
            let last = out.last_mut().unwrap();
            last.span.end = u.span.end;
            last.actionable |= u.actionable;
            last.lead = Lead::Plain;
        } else {
            out.push(u.clone());
        }
    }
    out
}

fn sentence_lead(tokens: &[Token], lexicon: &Lexicon) -> Lead {
    let words: Vec<&str> = tokens.iter().map(|t| t.word.as_str()).collect();
    let starts_with = |prefix: &str| {
        let parts: Vec<&str> = prefix.split(' ').collect();
        words.len() >= parts.len() && words[..parts.len()] == parts[..]
    };
    if lexicon.stop_sentence_prefixes.iter().any(|p| starts_with(p)) {
        Lead::StopCondition
    } else if lexicon.next_merge_prefixes.iter().any(|p| starts_with(p)) {
        Lead::MergeNext
    } else {
        Lead::Plain
    }
}

fn build_step(tagged: &TaggedInstruction, span: Range<usize>, lexicon: &Lexicon) -> BabyStep {
    let first = &tagged.sentences[span.start];
    let last = &tagged.sentences[span.end - 1];
    let tokens = &tagged.tokens[first.tokens.start..last.tokens.end];
    let mut landmarks = Vec::new();
    for i in span.clone() {
        landmark_phrases(tagged.sentence_tokens(i), lexicon, &mut landmarks);
    }
    let mut verbs = Vec::new();
    action_verbs(tokens, lexicon, &mut verbs);
    BabyStep {
        text: tagged.raw[first.chars.start..last.chars.end].to_string(),
        sentence_span: span,
        landmarks,
        verbs,
    }
}

/// Groups the tagged sentences into BabySteps. The result partitions the
/// sentences in order.
pub fn identify_babysteps(
    tagged: &TaggedInstruction,
    lexicon: &Lexicon,
    mode: SegmenterMode,
) -> Vec<BabyStep> {
    let units: Vec<Unit> = (0..tagged.sentences.len())
        .map(|i| {
            let tokens = tagged.sentence_tokens(i);
            let mut landmarks = Vec::new();
            landmark_phrases(tokens, lexicon, &mut landmarks);
            let mut verbs = Vec::new();
            action_verbs(tokens, lexicon, &mut verbs);
            Unit {
                span: i..i + 1,
                actionable: !landmarks.is_empty() || !verbs.is_empty(),
                lead: sentence_lead(tokens, lexicon),
            }
        })
        .collect();
    let grouped = match mode {
        SegmenterMode::Babystep => merge_units(&units),
        SegmenterMode::Sentence => units,
    };
    grouped
        .into_iter()
        .map(|u| build_step(tagged, u.span, lexicon))
        .collect()
}

/// `tag` followed by `identify_babysteps`.
pub fn segment(raw: &str, lexicon: &Lexicon, mode: SegmenterMode) -> Vec<BabyStep> {
    identify_babysteps(&tag(raw, lexicon), lexicon, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex() -> Lexicon {
        Lexicon::default()
    }

    fn spans(text: &str) -> Vec<Range<usize>> {
        segment(text, &lex(), SegmenterMode::Babystep)
            .into_iter()
            .map(|s| s.sentence_span)
            .collect()
    }

    #[test]
    fn tagging() {
        let t = tag("Walk past the sofa.", &lex());
        assert_eq!(t.sentences.len(), 1);
        let tags: Vec<(&str, Tag)> = t.tokens.iter().map(|t| (t.word.as_str(), t.tag)).collect();
        assert!(tags.contains(&("walk", Tag::Verb)));
        assert!(tags.contains(&("sofa", Tag::Noun)));
        assert!(tags.contains(&("the", Tag::Stopword)));
        assert_eq!(t.sentences[0].chars, 0..19);

        assert_eq!(tag("", &lex()).sentences.len(), 0);
        assert_eq!(tag("A. B. C.", &lex()).sentences.len(), 3);
        assert_eq!(tag("   ", &lex()).sentences.len(), 0);
        let t = tag("Go on. Then stop", &lex());
        assert_eq!(t.sentences.len(), 2);
        assert_eq!(&t.raw[t.sentences[1].chars.clone()], "Then stop");
        assert_eq!(tag("xyzzy", &lex()).tokens[0].tag, Tag::Other);
    }

    #[test]
    fn lemmatization() {
        assert_eq!(lemmatize("sofas"), "sofa");
        assert_eq!(lemmatize("couches"), "couch");
        assert_eq!(lemmatize("boxes"), "box");
        assert_eq!(lemmatize("glass"), "glass");
        assert_eq!(lemmatize("stairs"), "stair");
        assert_eq!(lemmatize("is"), "is");
        let t = tag("Pass the couches.", &lex());
        assert_eq!(t.tokens[2].lemma, "couch");
        assert_eq!(t.tokens[2].tag, Tag::Noun);
    }

    #[test]
    fn stop_sentence_merges_into_previous() {
        let steps = segment(
            "Turn left and walk past the sofa. Stop at the kitchen.",
            &lex(),
            SegmenterMode::Babystep,
        );
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].sentence_span, 0..2);
        assert_eq!(steps[0].text, "Turn left and walk past the sofa. Stop at the kitchen.");
        assert_eq!(steps[0].landmarks, vec!["sofa", "kitchen"]);
        assert_eq!(steps[0].verbs, vec!["walk", "stop"]);
    }

    #[test]
    fn actionable_sentences_stay_apart() {
        assert_eq!(spans("Walk past the sofa. Walk to the table."), vec![0..1, 1..2]);
    }

    #[test]
    fn non_actionable_sentence_merges_forward() {
        assert_eq!(spans("Ok. Walk to the table."), vec![0..2]);
    }

    #[test]
    fn landmark_phrases_filter_and_dedup() {
        assert_eq!(extract_landmark_phrases("walk past the sofa toward the sofa", &lex()), vec!["sofa"]);
        assert_eq!(extract_landmark_phrases("Turn left at the door.", &lex()), vec!["door"]);
        assert!(extract_landmark_phrases("Go quickly.", &lex()).is_empty());
        // a noun run keeps its non-blacklisted words
        assert_eq!(extract_landmark_phrases("the kitchen door", &lex()), vec!["kitchen door"]);
        assert_eq!(extract_landmark_phrases("the left side", &lex()), Vec::<String>::new());
    }

    #[test]
    fn blacklisted_verbs_do_not_count() {
        let steps = segment("Turn left. Face the sofa.", &lex(), SegmenterMode::Babystep);
        assert_eq!(steps.len(), 1);
        assert!(steps[0].verbs.is_empty());
        assert_eq!(steps[0].landmarks, vec!["sofa"]);
    }

    #[test]
    fn sentence_mode_keeps_every_sentence() {
        let steps = segment(
            "Turn left and walk past the sofa. Stop at the kitchen. Ok.",
            &lex(),
            SegmenterMode::Sentence,
        );
        assert_eq!(steps.len(), 3);
    }

    #[test]
    fn whole_instruction_non_actionable_is_one_residual_step() {
        let steps = segment("Ok. Fine.", &lex(), SegmenterMode::Babystep);
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].sentence_span, 0..2);
        assert!(segment("", &lex(), SegmenterMode::Babystep).is_empty());
    }

    #[test]
    fn merge_pass_is_idempotent_on_fixture() {
        let units = vec![
            Unit { span: 0..1, actionable: true, lead: Lead::StopCondition },
            Unit { span: 1..2, actionable: true, lead: Lead::MergeNext },
            Unit { span: 2..3, actionable: true, lead: Lead::Plain },
            Unit { span: 3..4, actionable: false, lead: Lead::Plain },
        ];
        let once = merge_units(&units);
        assert_eq!(once.iter().map(|u| u.span.clone()).collect::<Vec<_>>(), vec![0..4]);
        assert_eq!(merge_units(&once), once);
    }

    fn arb_unit() -> impl Strategy<Value = (bool, u8)> {
        (any::<bool>(), 0u8..3)
    }

    proptest! {
        #[test]
        fn merge_pass_partitions_and_is_idempotent(raw in proptest::collection::vec(arb_unit(), 0..12)) {
            let units: Vec<Unit> = raw.iter().enumerate().map(|(i, &(a, l))| Unit {
                span: i..i + 1,
                actionable: a,
                lead: [Lead::Plain, Lead::StopCondition, Lead::MergeNext][l as usize],
            }).collect();
            let once = merge_units(&units);
            let mut next = 0;
            for u in &once {
                prop_assert_eq!(u.span.start, next);
                prop_assert!(u.span.end > u.span.start);
                next = u.span.end;
            }
            prop_assert_eq!(next, units.len());
            if once.len() > 1 {
                prop_assert!(once.iter().all(|u| u.actionable));
            }
            prop_assert_eq!(merge_units(&once), once);
        }

        #[test]
        fn segmentation_is_pure(words in proptest::collection::vec("[a-z]{1,8}", 0..30), cuts in proptest::collection::vec(any::<bool>(), 30)) {
            let mut text = String::new();
            for (w, cut) in words.iter().zip(&cuts) {
                text.push_str(w);
                text.push_str(if *cut { ". " } else { " " });
            }
            let a = segment(&text, &lex(), SegmenterMode::Babystep);
            let b = segment(&text, &lex(), SegmenterMode::Babystep);
            prop_assert_eq!(&a, &b);
            let total = tag(&text, &lex()).sentences.len();
            let covered: usize = a.iter().map(|s| s.sentence_span.len()).sum();
            prop_assert_eq!(covered, total);
        }
    }
}

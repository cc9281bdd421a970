use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Lexicon;
use crate::error::{Error, Result};
use crate::rng;
use crate::world::{NodeId, WorldGraph, HEADINGS};

/// Alignment of a run of instruction sentences to a run of path nodes.
/// Serialized as `[s0, s1, p0, p1]` (half-open ranges).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldSegment {
    pub sentences: Range<usize>,
    pub path: Range<usize>,
}

impl GoldSegment {
    pub fn new(sentences: Range<usize>, path: Range<usize>) -> Self {
        GoldSegment { sentences, path }
    }
}

impl Serialize for GoldSegment {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.sentences.start, self.sentences.end, self.path.start, self.path.end].serialize(s)
    }
}

impl<'de> Deserialize<'de> for GoldSegment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [s0, s1, p0, p1] = <[usize; 4]>::deserialize(d)?;
        Ok(GoldSegment::new(s0..s1, p0..p1))
    }
}

const MAX_CHUNK: usize = 3;

fn turn_word(delta: u8) -> &'static str {
    match delta {
        0 | 1 | 11 => "straight",
        2..=5 => "right",
        6 => "around",
        _ => "left",
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn pick<'a, R: rand::Rng>(rng: &mut R, options: &[&'a str]) -> &'a str {
    options[rng.gen_range(0..options.len())]
}

struct Chunk {
    end: usize,
    landmark: String,
    /// A landmark carried by an interior node, when one exists.
    middle: Option<String>,
}

/// Landmark names of `node` that `lexicon` tags as nouns.
fn named(world: &WorldGraph, node: NodeId, lexicon: &Lexicon) -> Vec<String> {
    world.node_landmarks(node)
        .iter()
        .map(|&k| world.landmark_vocab()[k].clone())
        .filter(|name| lexicon.noun_words.contains(name) && !lexicon.landmark_blacklist.contains(name))
        .collect()
}

fn choose_chunk<R: rand::Rng>(
    world: &WorldGraph,
    path: &[NodeId],
    pos: usize,
    lexicon: &Lexicon,
    rng: &mut R,
) -> Result<Chunk> {
    let last = path.len() - 1;
    let max_end = (pos + MAX_CHUNK).min(last);
    let wanted = (pos + rng.gen_range(1..=MAX_CHUNK)).min(max_end);
    // ends ordered by distance from the wanted length, shorter first on ties
    let mut ends: Vec<usize> = (pos + 1..=max_end).collect();
    ends.sort_by_key(|&e| (e.abs_diff(wanted), e));
    let interior = |end: usize| -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for idx in pos + 1..end {
            for name in named(world, path[idx], lexicon) {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    };
    for &end in &ends {
        let at_end = named(world, path[end], lexicon);
        if at_end.is_empty() {
            continue;
        }
        let middle_names = interior(end);
        let distinct: Vec<&String> = at_end.iter().filter(|n| !middle_names.contains(n)).collect();
        let landmark = if distinct.is_empty() {
            at_end.choose(rng).unwrap().clone()
        } else {
            (*distinct.choose(rng).unwrap()).clone()
        };
        let middle = middle_names
            .iter()
            .filter(|n| **n != landmark)
            .cloned()
            .collect::<Vec<_>>()
            .choose(rng)
            .cloned();
        return Ok(Chunk { end, landmark, middle });
    }
    // no chunk end carries a landmark: fall back to an interior one, then to
    // anything visible from the end node
    let end = wanted;
    if let Some(name) = interior(end).choose(rng) {
        return Ok(Chunk { end, landmark: name.clone(), middle: None });
    }
    let obs = world.observation_at(path[end]);
    let visible: Vec<String> = obs
        .visible()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(k, _)| world.landmark_vocab()[k].clone())
        .filter(|name| lexicon.noun_words.contains(name) && !lexicon.landmark_blacklist.contains(name))
        .collect();
    if let Some(name) = visible.choose(rng) {
        return Ok(Chunk { end, landmark: name.clone(), middle: None });
    }
    let start_names = named(world, path[pos], lexicon);
    if let Some(name) = start_names.choose(rng) {
        return Ok(Chunk { end, landmark: name.clone(), middle: None });
    }
    Err(Error::NoLandmark { start: pos, end: max_end })
}

/// Renders a template instruction for `path`, one chunk of 1-3 hops at a
/// time, and returns it with the sentence/path alignment of each chunk.
/// Every chunk mentions a landmark on or visible from its nodes, preferring
/// one carried by its last node.
pub fn synthesize_instruction(
    world: &WorldGraph,
    path: &[NodeId],
    lexicon: &Lexicon,
    seed: u64,
) -> Result<(String, Vec<GoldSegment>)> {
    if path.len() < 2 {
        return Err(Error::InvalidParameter("path needs at least 2 nodes".into()));
    }
    for w in path.windows(2) {
        if !world.is_adjacent(w[0], w[1]) {
            return Err(Error::InvalidAction { node: w[0], target: w[1] });
        }
    }
    let mut rng = rng::stream(seed, &[rng::tag::INSTRUCTION]);
    let mut sentences: Vec<String> = Vec::new();
    let mut gold = Vec::new();
    let mut heading = 0u8;
    let mut pos = 0;
    let last = path.len() - 1;
    while pos < last {
        let chunk = choose_chunk(world, path, pos, lexicon, &mut rng)?;
        let (move_heading, _) = world.move_bin(path[pos], path[pos + 1]);
        let delta = (move_heading + HEADINGS as u8 - heading) % HEADINGS as u8;
        let dir = turn_word(delta);
        let first_sentence = sentences.len();
        let lm = &chunk.landmark;
        let walk = pick(&mut rng, &["walk past", "walk to", "go to", "continue to"]);
        match (chunk.middle.as_ref(), rng.gen_range(0..3)) {
            (Some(mid), 0) => {
                let lead = if dir == "straight" {
                    "go straight".to_string()
                } else {
                    format!("{} {dir}", pick(&mut rng, &["turn", "head"]))
                };
                sentences.push(format!("{} and walk past the {mid}.", capitalize(&lead)));
                sentences.push(format!("Stop at the {lm}."));
            }
            (_, 1) if dir != "straight" => {
                sentences.push(format!("Turn {dir}."));
                sentences.push(format!("{} the {lm}.", capitalize(walk)));
            }
            _ => {
                let lead = match dir {
                    "straight" => pick(&mut rng, &["go straight", "walk straight", "head forward"]).to_string(),
                    "around" => "turn around".to_string(),
                    _ => format!("{} {dir}", pick(&mut rng, &["turn", "go", "veer"])),
                };
                sentences.push(format!("{} and {walk} the {lm}.", capitalize(&lead)));
            }
        }
        if chunk.end == last && rng.gen_bool(0.25) {
            sentences.push("Wait there.".to_string());
        }
        let path_start = if pos == 0 { 0 } else { pos + 1 };
        gold.push(GoldSegment::new(first_sentence..sentences.len(), path_start..chunk.end + 1));
        for w in path[pos..=chunk.end].windows(2) {
            heading = world.move_bin(w[0], w[1]).0;
        }
        pos = chunk.end;
    }
    Ok((sentences.join(" "), gold))
}

//! Episodes, splits, expert sampling, trajectory concatenation and file I/O.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::{Range, RangeInclusive};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruction::{self, segment, synthesize_instruction, BabyStep, GoldSegment, Lexicon, SegmenterMode};
use crate::rng;
use crate::world::{NodeId, WorldGraph};

/// Default endpoint tolerance when chaining trajectories.
pub const DEFAULT_JOIN_RADIUS: f64 = 0.5;

const MAX_SAMPLING_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Concatenated,
    Imported,
}

/// Worlds keyed by `world_id`.
pub type Worlds = BTreeMap<String, WorldGraph>;

/// Worlds as a JSON array.
pub fn write_worlds<W: Write>(worlds: &Worlds, writer: W) -> Result<()> {
    let list: Vec<&WorldGraph> = worlds.values().collect();
    serde_json::to_writer(writer, &list)?;
    Ok(())
}

pub fn read_worlds<R: Read>(reader: R) -> Result<Worlds> {
    let list: Vec<WorldGraph> = serde_json::from_reader(reader)?;
    Ok(world_map(list))
}

pub fn load_worlds(path: impl AsRef<Path>) -> Result<Worlds> {
    read_worlds(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn world_map(worlds: impl IntoIterator<Item = WorldGraph>) -> Worlds {
    worlds.into_iter().map(|w| (w.world_id().to_string(), w)).collect()
}

pub(crate) fn world_of<'a>(worlds: &'a Worlds, world_id: &str) -> Result<&'a WorldGraph> {
    worlds
        .get(world_id)
        .ok_or_else(|| Error::InvalidWorld(format!("unknown world `{world_id}`")))
}

/// An instruction paired with the expert path through one world. The
/// optional annotation fields are filled in by the `segment` and `align`
/// pipeline stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub episode_id: String,
    pub world_id: String,
    pub instruction: String,
    pub path: Vec<NodeId>,
    pub gold_segments: Option<Vec<GoldSegment>>,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub babysteps: Option<Vec<BabyStep>>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "opt_spans"
    )]
    pub aligned_segments: Option<Vec<Range<usize>>>,
}

mod opt_spans {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::ops::Range;

    pub fn serialize<S: Serializer>(v: &Option<Vec<Range<usize>>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|spans| spans.iter().map(|r| [r.start, r.end]).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Range<usize>>>, D::Error> {
        let raw = Option::<Vec<[usize; 2]>>::deserialize(d)?;
        Ok(raw.map(|spans| spans.into_iter().map(|[a, b]| a..b).collect()))
    }
}

/// Number of period-delimited sentences the segmenter will see in `text`.
pub fn sentence_count(text: &str) -> usize {
    instruction::tag(text, &Lexicon::default()).sentences.len()
}

fn check_partition(spans: impl Iterator<Item = Range<usize>>, total: usize) -> bool {
    let mut next = 0;
    for r in spans {
        if r.start != next || r.end <= r.start {
            return false;
        }
        next = r.end;
    }
    next == total
}

impl Episode {
    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }

    pub fn word_count(&self) -> usize {
        self.instruction.split_whitespace().count()
    }

    /// Checks the world-independent invariants.
    pub fn validate(&self) -> Result<()> {
        if self.path.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "episode {}: path needs at least 2 nodes",
                self.episode_id
            )));
        }
        if let Some(gold) = &self.gold_segments {
            let sentences = sentence_count(&self.instruction);
            if !check_partition(gold.iter().map(|g| g.sentences.clone()), sentences)
                || !check_partition(gold.iter().map(|g| g.path.clone()), self.path.len())
            {
                return Err(Error::InvalidParameter(format!(
                    "episode {}: gold segments do not partition the sentences and the path",
                    self.episode_id
                )));
            }
        }
        if let Some(spans) = &self.aligned_segments {
            if !check_partition(spans.iter().cloned(), self.path.len()) {
                return Err(Error::InvalidParameter(format!(
                    "episode {}: aligned segments do not partition the path",
                    self.episode_id
                )));
            }
        }
        Ok(())
    }

    /// Checks that consecutive path nodes are adjacent in `world`.
    pub fn validate_in(&self, world: &WorldGraph) -> Result<()> {
        self.validate()?;
        if world.world_id() != self.world_id {
            return Err(Error::InvalidWorld(format!(
                "episode {} belongs to world {}, not {}",
                self.episode_id,
                self.world_id,
                world.world_id()
            )));
        }
        for w in self.path.windows(2) {
            if !world.contains(w[0]) || !world.is_adjacent(w[0], w[1]) {
                return Err(Error::InvalidAction { node: w[0], target: w[1] });
            }
        }
        Ok(())
    }

    pub fn segment(&self, lexicon: &Lexicon, mode: SegmenterMode) -> Vec<BabyStep> {
        segment(&self.instruction, lexicon, mode)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub count: usize,
    pub mean_instruction_words: f64,
    pub mean_babysteps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub episodes: Vec<Episode>,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, episodes: Vec<Episode>) -> Self {
        DatasetSplit { name: name.into(), episodes }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Summary statistics, always computed from the current episodes.
    pub fn stats(&self, lexicon: &Lexicon) -> SplitStats {
        let n = self.episodes.len();
        if n == 0 {
            return SplitStats { count: 0, mean_instruction_words: 0.0, mean_babysteps: 0.0 };
        }
        let words: usize = self.episodes.iter().map(Episode::word_count).sum();
        let steps: usize = self
            .episodes
            .iter()
            .map(|e| e.segment(lexicon, SegmenterMode::Babystep).len())
            .sum();
        SplitStats {
            count: n,
            mean_instruction_words: words as f64 / n as f64,
            mean_babysteps: steps as f64 / n as f64,
        }
    }

    pub fn mean_hops(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(Episode::hops).sum::<usize>() as f64 / self.episodes.len() as f64
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for e in &self.episodes {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads one episode per line; blank lines are skipped. Errors cite the
    /// 1-based line number.
    pub fn read_jsonl<R: Read>(name: impl Into<String>, reader: R) -> Result<Self> {
        let mut episodes = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let schema = |message: String| Error::Schema { line: i + 1, message };
            let e: Episode = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
            e.validate().map_err(|e| schema(e.to_string()))?;
            episodes.push(e);
        }
        Ok(DatasetSplit::new(name, episodes))
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(File::create(path)?)
    }

    /// Loads a split named after the file stem.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::read_jsonl(name, File::open(path)?)
    }
}

/// Samples two nodes whose shortest path has a hop count in `hops` and
/// describes the path with a synthetic instruction.
pub fn sample_expert_episode(
    world: &WorldGraph,
    seed: u64,
    hops: RangeInclusive<usize>,
    lexicon: &Lexicon,
) -> Result<Episode> {
    if *hops.start() < 1 || hops.is_empty() {
        return Err(Error::InvalidParameter(format!("hop range {hops:?} must be non-empty and start at >= 1")));
    }
    let n = world.node_count();
    let mut rng = rng::stream(seed, &[rng::tag::EPISODE]);
    let mut last_reason = String::from("no path with the requested hop count");
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let text_seed = rng.next_u64();
        if a == b {
            continue;
        }
        let Ok(path) = world.shortest_path(a, b) else {
            continue;
        };
        if !hops.contains(&(path.len() - 1)) {
            continue;
        }
        match synthesize_instruction(world, &path, lexicon, text_seed) {
            Ok((instruction, gold)) => {
                return Ok(Episode {
                    episode_id: format!("{}-{seed}", world.world_id()),
                    world_id: world.world_id().to_string(),
                    instruction,
                    path,
                    gold_segments: Some(gold),
                    source: Source::Synthetic,
                    babysteps: None,
                    aligned_segments: None,
                });
            }
            Err(e @ Error::NoLandmark { .. }) => last_reason = e.to_string(),
            Err(e) => return Err(e),
        }
    }
    Err(Error::SamplingExhausted { attempts: MAX_SAMPLING_ATTEMPTS, reason: last_reason })
}

/// `count` episodes in `world`, with ids `{name}-{index}`.
pub fn sample_split(
    name: &str,
    world: &WorldGraph,
    count: usize,
    seed: u64,
    hops: RangeInclusive<usize>,
    lexicon: &Lexicon,
) -> Result<DatasetSplit> {
    let mut episodes = Vec::with_capacity(count);
    for i in 0..count {
        let mut e = sample_expert_episode(world, rng::stream_id(&[seed, i as u64]), hops.clone(), lexicon)?;
        e.episode_id = format!("{name}-{i:05}");
        episodes.push(e);
    }
    Ok(DatasetSplit::new(name, episodes))
}

fn with_period(text: &str) -> String {
    let t = text.trim();
    if t.is_empty() || t.ends_with('.') {
        t.to_string()
    } else {
        format!("{t}.")
    }
}

/// Chains episodes end to start. A junction node shared by both paths is
/// kept once; otherwise the endpoints must lie within `join_radius` meters
/// and be adjacent.
pub fn concatenate_episodes(eps: &[Episode], world: &WorldGraph, join_radius: f64) -> Result<Episode> {
    if eps.len() < 2 {
        return Err(Error::InvalidParameter("concatenation needs at least 2 episodes".into()));
    }
    for e in eps {
        if e.world_id != world.world_id() {
            return Err(Error::InvalidWorld(format!(
                "episode {} belongs to world {}, not {}",
                e.episode_id,
                e.world_id,
                world.world_id()
            )));
        }
    }
    let mut path = eps[0].path.clone();
    let mut text = with_period(&eps[0].instruction);
    let mut sentences = sentence_count(&text);
    let mut gold = eps[0].gold_segments.clone();
    for pair in eps.windows(2) {
        let (former, latter) = (&pair[0], &pair[1]);
        let end = *former.path.last().unwrap();
        let start = latter.path[0];
        let distance = world.euclidean(end, start);
        let dedup = end == start;
        if distance > join_radius || (!dedup && !world.is_adjacent(end, start)) {
            return Err(Error::JoinViolation {
                former: former.episode_id.clone(),
                latter: latter.episode_id.clone(),
                distance,
                radius: join_radius,
            });
        }
        let offset = path.len();
        let skip = usize::from(dedup);
        path.extend_from_slice(&latter.path[skip..]);
        let part = with_period(&latter.instruction);
        let part_sentences = sentence_count(&part);
        gold = match (gold, &latter.gold_segments) {
            (Some(mut acc), Some(next)) => {
                for g in next {
                    let p0 = (offset + g.path.start).saturating_sub(skip).max(offset);
                    let p1 = offset + g.path.end - skip;
                    let s = sentences + g.sentences.start..sentences + g.sentences.end;
                    if p1 <= p0 {
                        // only the shared junction: fold the sentences into the previous segment
                        acc.last_mut().unwrap().sentences.end = s.end;
                    } else {
                        acc.push(GoldSegment::new(s, p0..p1));
                    }
                }
                Some(acc)
            }
            _ => None,
        };
        if !part.is_empty() {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(&part);
        }
        sentences += part_sentences;
    }
    Ok(Episode {
        episode_id: eps.iter().map(|e| e.episode_id.as_str()).collect::<Vec<_>>().join("+"),
        world_id: world.world_id().to_string(),
        instruction: text,
        path,
        gold_segments: gold,
        source: Source::Concatenated,
        babysteps: None,
        aligned_segments: None,
    })
}

/// For every factor `k`, chains `k` join-compatible base episodes starting
/// from each base episode in turn. Heads that cannot be extended to `k`
/// episodes are skipped; a factor with no chain at all is an error.
pub fn build_length_suite(
    base: &DatasetSplit,
    factors: &[usize],
    worlds: &Worlds,
    join_radius: f64,
    seed: u64,
) -> Result<BTreeMap<usize, DatasetSplit>> {
    let mut out = BTreeMap::new();
    for &k in factors {
        if k == 0 {
            return Err(Error::InvalidParameter("length factors must be >= 1".into()));
        }
        if k == 1 {
            out.insert(k, base.clone());
            continue;
        }
        let mut rng = rng::stream(seed, &[rng::tag::SUITE, k as u64]);
        let mut episodes = Vec::new();
        let mut worst: Option<Error> = None;
        for (head_index, head) in base.episodes.iter().enumerate() {
            let world = world_of(worlds, &head.world_id)?;
            let mut chain = vec![head_index];
            while chain.len() < k {
                let current = &base.episodes[*chain.last().unwrap()];
                let end = *current.path.last().unwrap();
                let came_from = current.path[current.path.len() - 2];
                let joinable: Vec<usize> = base
                    .episodes
                    .iter()
                    .enumerate()
                    .filter(|(i, e)| {
                        !chain.contains(i)
                            && e.world_id == head.world_id
                            && (e.path[0] == end
                                || (world.euclidean(end, e.path[0]) <= join_radius
                                    && world.is_adjacent(end, e.path[0])))
                    })
                    .map(|(i, _)| i)
                    .collect();
                // avoid walking straight back the way we came when possible
                let forward: Vec<usize> = joinable
                    .iter()
                    .copied()
                    .filter(|&i| base.episodes[i].path[1] != came_from)
                    .collect();
                let pool = if forward.is_empty() { &joinable } else { &forward };
                match pool.choose(&mut rng) {
                    Some(&next) => chain.push(next),
                    None => break,
                }
            }
            if chain.len() < k {
                continue;
            }
            let parts: Vec<Episode> = chain.iter().map(|&i| base.episodes[i].clone()).collect();
            match concatenate_episodes(&parts, world, join_radius) {
                Ok(mut e) => {
                    e.episode_id = format!("{}-x{k}-{head_index:05}", base.name);
                    episodes.push(e);
                }
                Err(e) => worst = Some(e),
            }
        }
        if episodes.is_empty() {
            return Err(worst.unwrap_or_else(|| Error::JoinViolation {
                former: base.name.clone(),
                latter: base.name.clone(),
                distance: f64::INFINITY,
                radius: join_radius,
            }));
        }
        out.insert(k, DatasetSplit::new(format!("{}-x{k}", base.name), episodes));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct R2rEntry {
    #[serde(default)]
    path_id: Option<serde_json::Value>,
    scan: String,
    path: Vec<String>,
    #[allow(dead_code)]
    heading: f64,
    instructions: Vec<String>,
}

/// An imported R2R-format split with its viewpoint-to-node-id mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct R2rImport {
    pub split: DatasetSplit,
    pub node_ids: BTreeMap<String, NodeId>,
}

impl R2rImport {
    pub fn write_mapping<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.node_ids)?;
        Ok(())
    }
}

/// Reads the public R2R/R4R JSON schema. Each instruction variant becomes
/// one episode; viewpoints are numbered in order of first appearance.
pub fn read_r2r_json<R: Read>(name: impl Into<String>, reader: R) -> Result<R2rImport> {
    let entries: Vec<R2rEntry> = serde_json::from_reader(reader).map_err(|e| Error::Schema {
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut node_ids: BTreeMap<String, NodeId> = BTreeMap::new();
    let mut episodes = Vec::new();
    for (index, entry) in entries.into_iter().enumerate() {
        if entry.path.len() < 2 {
            return Err(Error::Schema {
                line: 0,
                message: format!("entry {index}: path needs at least 2 viewpoints"),
            });
        }
        let path: Vec<NodeId> = entry
            .path
            .iter()
            .map(|v| {
                let next = node_ids.len();
                *node_ids.entry(v.clone()).or_insert(next)
            })
            .collect();
        let path_id = match entry.path_id {
            Some(serde_json::Value::String(s)) => s,
            Some(v) => v.to_string(),
            None => index.to_string(),
        };
        for (i, instruction) in entry.instructions.into_iter().enumerate() {
            episodes.push(Episode {
                episode_id: format!("{path_id}_{i}"),
                world_id: entry.scan.clone(),
                instruction,
                path: path.clone(),
                gold_segments: None,
                source: Source::Imported,
                babysteps: None,
                aligned_segments: None,
            });
        }
    }
    Ok(R2rImport { split: DatasetSplit::new(name, episodes), node_ids })
}

pub fn load_r2r_json(path: impl AsRef<Path>) -> Result<R2rImport> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_r2r_json(name, File::open(path)?)
}

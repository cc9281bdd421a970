//! Browser demo: segment an instruction, walk a generated episode and score
//! the walk, and plot forgetting weights. The `*_json` functions do the work
//! and are plain Rust so they can be tested natively; the exported wrappers
//! only convert errors for JavaScript.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use babywalk_lab::agent::{forgetting_weights, Omega};
use babywalk_lab::dataset::sample_expert_episode;
use babywalk_lab::instruction::{segment, Lexicon, SegmenterMode};
use babywalk_lab::metrics::{EpisodeMetrics, MetricConfig, PathPair};
use babywalk_lab::training::fidelity_reward;
use babywalk_lab::world::{generate_world, WorldGraph};
use babywalk_lab::{Error, Result};

const LANDMARKS: usize = 8;
const CONNECTIVITY: f64 = 3.0;
const MAX_NODES: usize = 60;

#[derive(Serialize)]
struct StepView {
    sentences: [usize; 2],
    text: String,
    landmarks: Vec<String>,
    verbs: Vec<String>,
}

fn step_views(text: &str, lexicon: &Lexicon, mode: SegmenterMode) -> Vec<StepView> {
    segment(text, lexicon, mode)
        .into_iter()
        .map(|s| StepView {
            sentences: [s.sentence_span.start, s.sentence_span.end],
            text: s.text,
            landmarks: s.landmarks,
            verbs: s.verbs,
        })
        .collect()
}

pub fn segment_json(text: &str, sentence_mode: bool) -> String {
    let mode = if sentence_mode { SegmenterMode::Sentence } else { SegmenterMode::Babystep };
    serde_json::to_string(&step_views(text, &Lexicon::default(), mode)).expect("plain data serializes")
}

#[derive(Serialize)]
struct NodeView {
    id: usize,
    x: f64,
    y: f64,
    landmarks: Vec<String>,
}

#[derive(Serialize)]
struct EpisodeView {
    nodes: Vec<NodeView>,
    edges: Vec<[usize; 2]>,
    instruction: String,
    path: Vec<usize>,
    steps: Vec<StepView>,
}

struct Demo {
    world: WorldGraph,
    lexicon: Lexicon,
    instruction: String,
    path: Vec<usize>,
}

fn demo(seed: u64, nodes: usize) -> Result<Demo> {
    if nodes > MAX_NODES {
        return Err(Error::InvalidParameter(format!("at most {MAX_NODES} nodes")));
    }
    let world = generate_world(seed, nodes, LANDMARKS, CONNECTIVITY)?;
    let lexicon = Lexicon::default().with_landmarks(world.landmark_vocab());
    let e = sample_expert_episode(&world, seed, 2..=5, &lexicon)?;
    Ok(Demo { world, lexicon, instruction: e.instruction, path: e.path })
}

/// A generated world and one expert episode in it.
pub fn episode_json(seed: u64, nodes: usize) -> Result<String> {
    let d = demo(seed, nodes)?;
    let view = EpisodeView {
        nodes: d
            .world
            .nodes()
            .iter()
            .map(|n| NodeView { id: n.id, x: n.position[0], y: n.position[1], landmarks: n.landmarks.iter().cloned().collect() })
            .collect(),
        edges: d.world.edges().iter().map(|&(a, b)| [a, b]).collect(),
        steps: step_views(&d.instruction, &d.lexicon, SegmenterMode::Babystep),
        instruction: d.instruction,
        path: d.path,
    };
    Ok(serde_json::to_string(&view)?)
}

#[derive(Serialize)]
struct ScoreView {
    #[serde(flatten)]
    metrics: EpisodeMetrics,
    reward: f64,
}

/// Scores a walk against the reference path of the episode `episode_json`
/// returns for the same arguments.
pub fn score_json(seed: u64, nodes: usize, walk: &[usize]) -> Result<String> {
    let d = demo(seed, nodes)?;
    if walk.first() != d.path.first() {
        return Err(Error::InvalidParameter("the walk must start where the episode starts".into()));
    }
    for w in walk.windows(2) {
        if !d.world.is_adjacent(w[0], w[1]) {
            return Err(Error::InvalidAction { node: w[0], target: w[1] });
        }
    }
    let config = MetricConfig::default();
    let pair = PathPair::new(walk, &d.path, &d.world);
    let last = walk.len() - 1;
    let view = ScoreView {
        metrics: EpisodeMetrics::compute("demo", &pair, &config),
        reward: fidelity_reward(&d.world, &d.path, walk, last, last, &config),
    };
    Ok(serde_json::to_string(&view)?)
}

pub fn weights(count: usize, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter("gamma must be a finite number >= 0".into()));
    }
    Ok(forgetting_weights(count, gamma, Omega::Identity))
}

fn js(e: Error) -> JsValue {
    JsValue::from_str(&format!("{}: {e}", e.code()))
}

#[wasm_bindgen(js_name = segmentInstruction)]
pub fn segment_instruction(text: &str, sentence_mode: bool) -> String {
    segment_json(text, sentence_mode)
}

#[wasm_bindgen(js_name = generateEpisode)]
pub fn generate_episode(seed: u32, nodes: u32) -> std::result::Result<String, JsValue> {
    episode_json(seed.into(), nodes as usize).map_err(js)
}

#[wasm_bindgen(js_name = scoreWalk)]
pub fn score_walk(seed: u32, nodes: u32, walk: Vec<u32>) -> std::result::Result<String, JsValue> {
    let walk: Vec<usize> = walk.into_iter().map(|n| n as usize).collect();
    score_json(seed.into(), nodes as usize, &walk).map_err(js)
}

#[wasm_bindgen(js_name = forgettingWeights)]
pub fn forgetting_weights_js(count: u32, gamma: f64) -> std::result::Result<Vec<f64>, JsValue> {
    weights(count as usize, gamma).map_err(js)
}

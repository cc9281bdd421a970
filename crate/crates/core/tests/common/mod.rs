#![allow(dead_code)]

use std::collections::BTreeSet;

use babywalk_lab::agent::{Agent, AgentConfig, SummaryMode};
use babywalk_lab::dataset::{Episode, Source};
use babywalk_lab::instruction::{segment, Lexicon, SegmenterMode};
use babywalk_lab::training::AlignedEpisode;
use babywalk_lab::world::{Node, WorldGraph};

pub fn node(id: usize, x: f64, y: f64, landmarks: &[&str]) -> Node {
    Node { id, position: [x, y, 0.0], landmarks: landmarks.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>() }
}

pub fn vocab() -> Vec<String> {
    vec!["sofa".to_string(), "lamp".to_string()]
}

/// Triangle: 0 bare, 1 sofa, 2 lamp.
pub fn tri() -> WorldGraph {
    let nodes = vec![node(0, 0.0, 0.0, &[]), node(1, 0.0, 2.0, &["sofa"]), node(2, 2.0, 2.0, &["lamp"])];
    WorldGraph::new("tri", nodes, vec![(0, 1), (1, 2), (0, 2)], vocab()).unwrap()
}

/// Two nodes far enough apart that stopping at the start fails.
pub fn bandit() -> WorldGraph {
    let nodes = vec![node(0, 0.0, 0.0, &[]), node(1, 0.0, 4.0, &["sofa"])];
    WorldGraph::new("bandit", nodes, vec![(0, 1)], vocab()).unwrap()
}

pub fn episode(id: &str, world: &str, instruction: &str, path: Vec<usize>) -> Episode {
    Episode {
        episode_id: id.into(),
        world_id: world.into(),
        instruction: instruction.into(),
        path,
        gold_segments: None,
        source: Source::Synthetic,
        babysteps: None,
        aligned_segments: None,
    }
}

pub fn aligned(e: Episode, spans: Vec<std::ops::Range<usize>>, cap: usize) -> AlignedEpisode {
    let steps = segment(&e.instruction, &Lexicon::default(), SegmenterMode::Babystep);
    AlignedEpisode::new(e, steps, spans, cap).unwrap()
}

/// Two BabySteps along 0 -> 1 -> 2 in the triangle.
pub fn two_step() -> AlignedEpisode {
    aligned(episode("e", "tri", "Walk to the sofa. Turn left and go to the lamp.", vec![0, 1, 2]), vec![0..2, 2..3], 4)
}

pub fn agent(mode: SummaryMode, embed: usize, seed: u64) -> Agent {
    let config = AgentConfig { embed_dim: embed, summary_mode: mode, ..AgentConfig::default() };
    Agent::new(config, &Lexicon::default(), &vocab(), seed).unwrap()
}

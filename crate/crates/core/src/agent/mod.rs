//! The BabyWalk navigation agent: bag-of-tokens instruction encoder,
//! trajectory encoder, memory buffer with a recency-weighted summary, the
//! context network and a bilinear action policy, plus rollouts at BabyStep
//! and whole-instruction granularity.

pub mod net;
pub mod params;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruction::{self, lemmatize, BabyStep, Lexicon};
use crate::rng::{self, Rng};
use crate::world::{NavAction, State, WorldGraph};

pub use net::{ContextGraph, Cue, Decision, MemoryInput};
pub use params::{Dims, Layout, PolicyParams};

pub const UNKNOWN_TOKEN: &str = "<unk>";
const CHECKPOINT_FORMAT: &str = "babywalk-agent";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryMode {
    Forgetting,
    Average,
    Recurrent,
    Null,
}

/// Monotone map applied to the age of a memory entry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Omega {
    #[default]
    Identity,
}

impl Omega {
    pub fn apply(self, age: f64) -> f64 {
        match self {
            Omega::Identity => age,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub embed_dim: usize,
    pub forget_gamma: f64,
    pub forget_omega: Omega,
    pub max_steps_per_babystep: usize,
    pub instr_token_cap: usize,
    pub summary_mode: SummaryMode,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            embed_dim: 16,
            forget_gamma: 0.5,
            forget_omega: Omega::Identity,
            max_steps_per_babystep: 10,
            instr_token_cap: 100,
            summary_mode: SummaryMode::Forgetting,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.forget_gamma >= 0.0) || !self.forget_gamma.is_finite() {
            return Err(Error::Config(format!("forget_gamma must be >= 0 (got {})", self.forget_gamma)));
        }
        if self.embed_dim == 0 || self.max_steps_per_babystep == 0 || self.instr_token_cap == 0 {
            return Err(Error::Config("embed_dim and the caps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Recency weights over `count` memory entries, oldest first:
/// `alpha_i` proportional to `exp(-gamma * omega(count - 1 - i))`.
pub fn forgetting_weights(count: usize, gamma: f64, omega: Omega) -> Vec<f64> {
    if count == 0 {
        return Vec::new();
    }
    let raw: Vec<f64> = (0..count)
        .map(|i| (-gamma * omega.apply((count - 1 - i) as f64)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// The previous action as seen by the policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrevAction {
    None = 0,
    Stop = 1,
    Move = 2,
}

impl From<NavAction> for PrevAction {
    fn from(a: NavAction) -> Self {
        match a {
            NavAction::Stop => PrevAction::Stop,
            NavAction::MoveTo(_) => PrevAction::Move,
        }
    }
}

/// One remembered BabyStep: its encoded instruction and trajectory along
/// with the raw inputs they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub input: MemoryInput,
    pub instr_vec: Vec<f64>,
    pub traj_vec: Vec<f64>,
}

/// Experiences of the BabySteps completed so far in one episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryBuffer {
    entries: Vec<MemoryEntry>,
}

impl MemoryBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn inputs(&self) -> Vec<MemoryInput> {
        self.entries.iter().map(|e| e.input.clone()).collect()
    }

    pub fn push(&mut self, params: &PolicyParams, input: MemoryInput) {
        self.entries.push(MemoryEntry {
            instr_vec: net::encode_tokens(params, &input.tokens),
            traj_vec: net::encode_traj(params, &input.phi),
            input,
        });
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// States visited and actions taken. `states[i]` is where `actions[i]` was
/// chosen; the last state is where the agent ended up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub actions: Vec<NavAction>,
}

impl Trajectory {
    pub fn start(s: State) -> Self {
        Trajectory { states: vec![s], actions: Vec::new() }
    }

    pub fn final_state(&self) -> State {
        *self.states.last().unwrap()
    }

    /// Nodes visited, starting node included.
    pub fn nodes(&self) -> Vec<usize> {
        let mut out = vec![self.states[0].node];
        for s in &self.states[1..] {
            if s.node != *out.last().unwrap() {
                out.push(s.node);
            }
        }
        out
    }

    /// Mean step features; zeros for an empty trajectory.
    pub fn features(&self, world: &WorldGraph) -> Vec<f64> {
        let dim = 2 * world.landmark_vocab().len() + 3;
        let mut phi = vec![0.0; dim];
        if self.actions.is_empty() {
            return phi;
        }
        for (s, &a) in self.states.iter().zip(&self.actions) {
            for (o, f) in phi.iter_mut().zip(net::step_features(world.observation_at(s.node), a)) {
                *o += f;
            }
        }
        let n = self.actions.len() as f64;
        phi.iter_mut().for_each(|v| *v /= n);
        phi
    }

    /// Appends `other`, which must start where `self` ends.
    pub fn extend(&mut self, other: &Trajectory) {
        debug_assert_eq!(self.final_state(), other.states[0]);
        self.actions.extend_from_slice(&other.actions);
        self.states.extend_from_slice(&other.states[1..]);
    }
}

pub enum RolloutMode<'a> {
    Greedy,
    Sample(&'a mut Rng),
}

impl RolloutMode<'_> {
    fn choose(&mut self, probs: &[f64]) -> usize {
        match self {
            RolloutMode::Greedy => {
                let mut best = 0;
                for (i, &p) in probs.iter().enumerate() {
                    if p > probs[best] {
                        best = i;
                    }
                }
                best
            }
            RolloutMode::Sample(rng) => sample_index(rng, probs),
        }
    }
}

pub(crate) fn sample_index(rng: &mut Rng, probs: &[f64]) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// A policy plus the vocabularies it was built for.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub config: AgentConfig,
    pub token_vocab: Vec<String>,
    token_index: BTreeMap<String, usize>,
    /// Landmark named by each token, if any.
    token_landmark: Vec<Option<usize>>,
    pub landmark_vocab: Vec<String>,
    pub params: PolicyParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: AgentConfig,
    token_vocab: Vec<String>,
    landmark_vocab: Vec<String>,
    params: Vec<f64>,
}

impl Agent {
    /// Token vocabulary: every lexicon word plus the landmark names, after
    /// the unknown-token marker.
    pub fn vocabulary(lexicon: &Lexicon, landmark_vocab: &[String]) -> Vec<String> {
        let mut words = vec![UNKNOWN_TOKEN.to_string()];
        words.extend(lexicon.clone().with_landmarks(landmark_vocab).words());
        words
    }

    pub fn with_params(
        config: AgentConfig,
        token_vocab: Vec<String>,
        landmark_vocab: Vec<String>,
        params: PolicyParams,
    ) -> Result<Self> {
        config.validate()?;
        let dims = Dims { tokens: token_vocab.len(), landmarks: landmark_vocab.len(), embed: config.embed_dim };
        if params.layout.dims != dims {
            return Err(Error::VocabMismatch(format!(
                "parameters built for {:?}, agent needs {dims:?}",
                params.layout.dims
            )));
        }
        let token_index = token_vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let token_landmark = token_vocab
            .iter()
            .map(|w| landmark_vocab.iter().position(|l| l.eq_ignore_ascii_case(w)))
            .collect();
        Ok(Agent { config, token_vocab, token_index, token_landmark, landmark_vocab, params })
    }

    /// Fresh agent with parameters drawn from `seed`.
    pub fn new(config: AgentConfig, lexicon: &Lexicon, landmark_vocab: &[String], seed: u64) -> Result<Self> {
        let tokens = Self::vocabulary(lexicon, landmark_vocab);
        let dims = Dims { tokens: tokens.len(), landmarks: landmark_vocab.len(), embed: config.embed_dim };
        Self::with_params(config, tokens, landmark_vocab.to_vec(), PolicyParams::init(dims, seed))
    }

    pub fn dims(&self) -> Dims {
        self.params.layout.dims
    }

    pub fn check_world(&self, world: &WorldGraph) -> Result<()> {
        if world.landmark_vocab() != self.landmark_vocab.as_slice() {
            return Err(Error::VocabMismatch(format!(
                "world {} uses a different landmark vocabulary",
                world.world_id()
            )));
        }
        Ok(())
    }

    /// Token ids of `text`, capped at `instr_token_cap`.
    pub fn tokens(&self, text: &str) -> Vec<usize> {
        instruction::words(text)
            .into_iter()
            .take(self.config.instr_token_cap)
            .map(|w| {
                self.token_index
                    .get(&w)
                    .or_else(|| self.token_index.get(&lemmatize(&w)))
                    .copied()
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Landmarks named by `tokens`; the last one is the target.
    pub fn cue(&self, tokens: &[usize]) -> Cue {
        let mut cue = Cue::default();
        for &t in tokens {
            if let Some(k) = self.token_landmark[t] {
                cue.target = Some(k);
                if !cue.mentioned.contains(&k) {
                    cue.mentioned.push(k);
                }
            }
        }
        cue
    }

    /// Forward pass of the context network for one BabyStep.
    pub fn step_graph(&self, tokens: &[usize], memory: &[MemoryInput]) -> ContextGraph {
        ContextGraph::forward(&self.params, &self.config, tokens, self.cue(tokens), memory)
    }

    /// `u(x)`.
    pub fn encode_instruction(&self, text: &str) -> Vec<f64> {
        net::encode_tokens(&self.params, &self.tokens(text))
    }

    /// `v(y)`.
    pub fn encode_trajectory(&self, world: &WorldGraph, traj: &Trajectory) -> Vec<f64> {
        net::encode_traj(&self.params, &traj.features(world))
    }

    pub fn memory_input(&self, world: &WorldGraph, text: &str, traj: &Trajectory) -> MemoryInput {
        MemoryInput { tokens: self.tokens(text), phi: traj.features(world) }
    }

    /// Instruction and trajectory summaries of `memory`.
    pub fn summarize(&self, memory: &MemoryBuffer) -> (Vec<f64>, Vec<f64>) {
        let u: Vec<Vec<f64>> = memory.entries.iter().map(|e| e.instr_vec.clone()).collect();
        let v: Vec<Vec<f64>> = memory.entries.iter().map(|e| e.traj_vec.clone()).collect();
        let (s, _, _) = net::summary_forward(&self.params, &self.config, &u, &v);
        let d = self.config.embed_dim;
        (s[..d].to_vec(), s[d..].to_vec())
    }

    /// `z = g([instr_summary; traj_summary])`.
    pub fn context(&self, instr_summary: &[f64], traj_summary: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = instr_summary.iter().chain(traj_summary).copied().collect();
        net::context_forward(&self.params, &x).1
    }

    /// Softmax over `candidates` at `state`.
    pub fn action_distribution(
        &self,
        world: &WorldGraph,
        state: State,
        prev: PrevAction,
        instr_vec: &[f64],
        ctx: &[f64],
        cue: &Cue,
        candidates: &[NavAction],
    ) -> Result<Vec<f64>> {
        let obs = world.observe(state)?;
        for c in candidates {
            if let NavAction::MoveTo(j) = c {
                if !world.is_adjacent(state.node, *j) {
                    return Err(Error::InvalidAction { node: state.node, target: *j });
                }
            }
        }
        Ok(Decision::forward(&self.params, obs, state, prev, instr_vec, ctx, cue, candidates.to_vec()).probs)
    }

    /// Runs the policy from `start` under a prepared context until it stops
    /// or hits `cap` actions. Returns the trajectory and the cached decisions.
    pub(crate) fn run(
        &self,
        world: &WorldGraph,
        start: State,
        graph: &ContextGraph,
        cap: usize,
        chooser: &mut dyn FnMut(&Decision) -> usize,
    ) -> Result<(Trajectory, Vec<Decision>)> {
        let mut traj = Trajectory::start(start);
        let mut decisions = Vec::new();
        let mut state = start;
        let mut prev = PrevAction::None;
        for _ in 0..cap {
            let obs = world.observe(state)?;
            let candidates = world.navigable_actions(state)?;
            let d = Decision::forward(&self.params, obs, state, prev, &graph.u, &graph.z, &graph.cue, candidates);
            let choice = chooser(&d);
            let action = d.candidates[choice];
            decisions.push(d);
            traj.actions.push(action);
            state = world.step(state, action)?;
            traj.states.push(state);
            prev = action.into();
            if action == NavAction::Stop {
                break;
            }
        }
        Ok((traj, decisions))
    }

    /// Follows one BabyStep from `start` with the given memory.
    pub fn rollout_babystep(
        &self,
        world: &WorldGraph,
        start: State,
        step: &BabyStep,
        memory: &MemoryBuffer,
        mut mode: RolloutMode<'_>,
    ) -> Result<Trajectory> {
        let graph = self.step_graph(&self.tokens(&step.text), &memory.inputs());
        let cap = self.config.max_steps_per_babystep;
        Ok(self.run(world, start, &graph, cap, &mut |d| mode.choose(&d.probs))?.0)
    }

    /// Completes the BabySteps in order, remembering each one. Returns the
    /// concatenated trajectory and the final memory.
    pub fn rollout_instruction(
        &self,
        world: &WorldGraph,
        start: State,
        steps: &[BabyStep],
        mut mode: RolloutMode<'_>,
    ) -> Result<(Trajectory, MemoryBuffer)> {
        let mut memory = MemoryBuffer::new();
        let mut full = Trajectory::start(start);
        for step in steps {
            let part = self.rollout_babystep(world, full.final_state(), step, &memory, mode.reborrow())?;
            memory.push(&self.params, self.memory_input(world, &step.text, &part));
            full.extend(&part);
        }
        Ok((full, memory))
    }

    pub fn write_checkpoint<W: Write>(&self, writer: W) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            token_vocab: self.token_vocab.clone(),
            landmark_vocab: self.landmark_vocab.clone(),
            params: self.params.values.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(reader: R) -> Result<Self> {
        let f: CheckpointFile = serde_json::from_reader(reader)?;
        if f.format != CHECKPOINT_FORMAT || f.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                f.format, f.version
            )));
        }
        let dims = Dims { tokens: f.token_vocab.len(), landmarks: f.landmark_vocab.len(), embed: f.config.embed_dim };
        let params = PolicyParams::unflatten(dims, f.params)
            .ok_or_else(|| Error::Checkpoint("parameter count does not match the configuration".into()))?;
        Self::with_params(f.config, f.token_vocab, f.landmark_vocab, params)
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_checkpoint(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl RolloutMode<'_> {
    fn reborrow(&mut self) -> RolloutMode<'_> {
        match self {
            RolloutMode::Greedy => RolloutMode::Greedy,
            RolloutMode::Sample(rng) => RolloutMode::Sample(rng),
        }
    }
}

/// A sampling generator for rollouts under `seed`.
pub fn rollout_rng(seed: u64) -> Rng {
    rng::stream(seed, &[rng::tag::ROLLOUT])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, Node};
    use std::collections::BTreeSet;

    fn step(text: &str) -> BabyStep {
        BabyStep { sentence_span: 0..1, text: text.into(), landmarks: vec![], verbs: vec![] }
    }

    fn small_world() -> WorldGraph {
        let nodes = vec![
            Node { id: 0, position: [0.0, 0.0, 0.0], landmarks: BTreeSet::new() },
            Node { id: 1, position: [0.0, 2.0, 0.0], landmarks: ["sofa".to_string()].into() },
            Node { id: 2, position: [2.0, 2.0, 0.0], landmarks: ["lamp".to_string()].into() },
        ];
        let vocab = vec!["sofa".to_string(), "lamp".to_string()];
        WorldGraph::new("tri", nodes, vec![(0, 1), (1, 2), (0, 2)], vocab).unwrap()
    }

    fn agent(mode: SummaryMode, seed: u64) -> Agent {
        let config = AgentConfig { embed_dim: 4, summary_mode: mode, ..AgentConfig::default() };
        Agent::new(config, &Lexicon::default(), &["sofa".to_string(), "lamp".to_string()], seed).unwrap()
    }

    #[test]
    fn forgetting_weight_examples() {
        let w = forgetting_weights(3, 0.5, Omega::Identity);
        for (a, b) in w.iter().zip([0.1863, 0.3072, 0.5065]) {
            assert!((a - b).abs() < 1e-4, "{w:?}");
        }
        assert_eq!(forgetting_weights(4, 0.0, Omega::Identity), vec![0.25; 4]);
        assert_eq!(forgetting_weights(1, 5.0, Omega::Identity), vec![1.0]);
        assert!(forgetting_weights(0, 0.5, Omega::Identity).is_empty());
    }

    #[test]
    fn summaries() {
        let a = agent(SummaryMode::Forgetting, 1);
        let w = small_world();
        let mut memory = MemoryBuffer::new();
        let d = a.config.embed_dim;
        assert_eq!(a.summarize(&memory), (vec![0.0; d], vec![0.0; d]));
        let t = Trajectory { states: vec![State::at(0), State::at(0)], actions: vec![NavAction::Stop] };
        memory.push(&a.params, a.memory_input(&w, "walk to the sofa", &t));
        let (su, sv) = a.summarize(&memory);
        assert_eq!(su, memory.entries()[0].instr_vec);
        assert_eq!(sv, memory.entries()[0].traj_vec);
        memory.push(&a.params, a.memory_input(&w, "go to the lamp", &t));
        let avg = agent(SummaryMode::Average, 1);
        let (su, _) = avg.summarize(&memory);
        for k in 0..d {
            let mean = (memory.entries()[0].instr_vec[k] + memory.entries()[1].instr_vec[k]) / 2.0;
            assert!((su[k] - mean).abs() < 1e-15);
        }
        let null = agent(SummaryMode::Null, 1);
        assert_eq!(null.summarize(&memory), (vec![0.0; d], vec![0.0; d]));
    }

    #[test]
    fn zero_params() {
        let mut a = agent(SummaryMode::Forgetting, 1);
        a.params.values.iter_mut().for_each(|v| *v = 0.0);
        let d = a.config.embed_dim;
        assert_eq!(a.context(&vec![1.0; d], &vec![-1.0; d]), vec![0.0; d]);
        let w = small_world();
        let s = State::at(0);
        let cands = w.navigable_actions(s).unwrap();
        let p = a.action_distribution(&w, s, PrevAction::None, &vec![0.0; d], &vec![0.0; d], &Cue::default(), &cands).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let only_stop = a
            .action_distribution(&w, s, PrevAction::None, &vec![0.0; d], &vec![0.0; d], &Cue::default(), &[NavAction::Stop])
            .unwrap();
        assert_eq!(only_stop, vec![1.0]);
    }

    #[test]
    fn candidate_permutation_permutes_probabilities() {
        let a = agent(SummaryMode::Forgetting, 3);
        let w = small_world();
        let s = State::at(0);
        let u = a.encode_instruction("walk to the sofa");
        let z = a.context(&u, &u);
        let c = w.navigable_actions(s).unwrap();
        let p = a.action_distribution(&w, s, PrevAction::Move, &u, &z, &Cue::default(), &c).unwrap();
        let rev: Vec<NavAction> = c.iter().rev().copied().collect();
        let q = a.action_distribution(&w, s, PrevAction::Move, &u, &z, &Cue::default(), &rev).unwrap();
        let q_rev: Vec<f64> = q.into_iter().rev().collect();
        assert_eq!(p, q_rev);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rollout_caps_and_stop() {
        let w = small_world();
        let mut a = agent(SummaryMode::Forgetting, 2);
        // huge stop bias: stop-flag row of the action matrix times the bias input
        let hd = a.dims().policy_input();
        let range = a.params.layout.action.clone();
        a.params.values[range.start + hd - 1] = 100.0;
        let t = a.rollout_babystep(&w, State::at(0), &step("go"), &MemoryBuffer::new(), RolloutMode::Greedy).unwrap();
        assert_eq!(t.actions, vec![NavAction::Stop]);

        a.params.values[range.start + hd - 1] = -100.0;
        let t = a.rollout_babystep(&w, State::at(0), &step("go"), &MemoryBuffer::new(), RolloutMode::Greedy).unwrap();
        assert_eq!(t.actions.len(), 10);
        assert!(t.actions.iter().all(|a| *a != NavAction::Stop));
    }

    #[test]
    fn instruction_rollout_composes_steps() {
        let w = generate_world(5, 40, 12, 3.0).unwrap();
        let a = Agent::new(AgentConfig::default(), &Lexicon::default(), w.landmark_vocab(), 9).unwrap();
        let steps = vec![step("walk to the sofa."), step("turn left."), step("stop at the lamp.")];
        let (full, memory) = a.rollout_instruction(&w, State::at(3), &steps, RolloutMode::Greedy).unwrap();
        assert_eq!(memory.len(), 3);
        let again = a.rollout_instruction(&w, State::at(3), &steps, RolloutMode::Greedy).unwrap();
        assert_eq!(full, again.0);

        let one = a.rollout_instruction(&w, State::at(3), &steps[..1], RolloutMode::Greedy).unwrap().0;
        let direct = a.rollout_babystep(&w, State::at(3), &steps[0], &MemoryBuffer::new(), RolloutMode::Greedy).unwrap();
        assert_eq!(one, direct);

        let mut r1 = rollout_rng(4);
        let mut r2 = rollout_rng(4);
        let s1 = a.rollout_instruction(&w, State::at(3), &steps, RolloutMode::Sample(&mut r1)).unwrap().0;
        let s2 = a.rollout_instruction(&w, State::at(3), &steps, RolloutMode::Sample(&mut r2)).unwrap().0;
        assert_eq!(s1, s2);
    }

    #[test]
    fn null_mode_ignores_memory() {
        let a = agent(SummaryMode::Null, 5);
        let w = small_world();
        let t = Trajectory { states: vec![State::at(0), State::at(1)], actions: vec![NavAction::MoveTo(1)] };
        let mut m1 = MemoryBuffer::new();
        let m0 = MemoryBuffer::new();
        m1.push(&a.params, a.memory_input(&w, "walk to the sofa", &t));
        let u = a.encode_instruction("stop at the lamp");
        let c = w.navigable_actions(State::at(1)).unwrap();
        let z0 = { let (x, y) = a.summarize(&m0); a.context(&x, &y) };
        let z1 = { let (x, y) = a.summarize(&m1); a.context(&x, &y) };
        let p0 = a.action_distribution(&w, State::at(1), PrevAction::None, &u, &z0, &Cue::default(), &c).unwrap();
        let p1 = a.action_distribution(&w, State::at(1), PrevAction::None, &u, &z1, &Cue::default(), &c).unwrap();
        assert_eq!(p0, p1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = agent(SummaryMode::Recurrent, 8);
        let mut buf = Vec::new();
        a.write_checkpoint(&mut buf).unwrap();
        assert_eq!(Agent::read_checkpoint(buf.as_slice()).unwrap(), a);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("agent.json");
        a.save(&p).unwrap();
        assert_eq!(Agent::load(&p).unwrap(), a);
    }

    #[test]
    fn empty_trajectory_encodes_to_zero() {
        let a = agent(SummaryMode::Forgetting, 1);
        let w = small_world();
        assert_eq!(a.encode_trajectory(&w, &Trajectory::start(State::at(0))), vec![0.0; 4]);
        assert_eq!(a.encode_instruction("walk to the sofa  \n"), a.encode_instruction("walk to the sofa"));
    }
}

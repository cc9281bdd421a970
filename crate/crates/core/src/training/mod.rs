//! Two-phase learning: student-forced imitation on BabySteps, then
//! curriculum REINFORCE over lectures that hand the agent more and more of
//! the instruction, with a terminal reward of success plus CLS. Also the
//! evaluation harness and the transfer experiment.

pub mod benchmark;
mod config;

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, ContextGraph, Decision, MemoryInput, Trajectory};
use crate::aligner::{align, train_landmark_model, LandmarkModel, LandmarkTrainConfig};
use crate::dataset::{world_of, DatasetSplit, Episode, Worlds};
use crate::error::{Error, Result};
use crate::instruction::{extract_landmark_phrases, segment, BabyStep, Lexicon};
use crate::metrics::{cls, success, EpisodeMetrics, MetricConfig, MetricReport, PathPair};
use crate::rng::{self, Rng};
use crate::world::{NavAction, NodeId, State, WorldGraph, LEVEL};

pub use config::{AlignmentSource, Granularity, OptimizerKind, TrainConfig};

/// Maps `f` over `items` (in parallel when enabled), keeping input order.
pub(crate) fn ordered_map<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

/// An episode with its BabySteps and the path span each one covers.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedEpisode {
    pub episode: Episode,
    pub steps: Vec<BabyStep>,
    pub spans: Vec<Range<usize>>,
    /// Action cap for each step.
    pub step_cap: usize,
}

/// Pose on `path[idx]` after walking the path from its start.
pub fn state_along(world: &WorldGraph, path: &[NodeId], idx: usize) -> State {
    if idx == 0 {
        return State::at(path[0]);
    }
    let (heading, elevation) = world.move_bin(path[idx - 1], path[idx]);
    State { node: path[idx], heading, elevation }
}

impl AlignedEpisode {
    pub fn new(episode: Episode, steps: Vec<BabyStep>, spans: Vec<Range<usize>>, step_cap: usize) -> Result<Self> {
        let mut next = 0;
        for r in &spans {
            if r.start != next || r.end <= r.start {
                return Err(Error::InvalidParameter(format!(
                    "episode {}: aligned spans do not partition the path",
                    episode.episode_id
                )));
            }
            next = r.end;
        }
        if next != episode.path.len() || spans.len() != steps.len() || steps.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "episode {}: need one span per step covering the path",
                episode.episode_id
            )));
        }
        Ok(AlignedEpisode { episode, steps, spans, step_cap })
    }

    /// Path index where step `m` starts: the last node of the previous span.
    pub fn entry_index(&self, m: usize) -> usize {
        if m == 0 {
            0
        } else {
            self.spans[m].start - 1
        }
    }

    pub fn goal_node(&self, m: usize) -> NodeId {
        self.episode.path[self.spans[m].end - 1]
    }

    pub fn entry_state(&self, world: &WorldGraph, m: usize) -> State {
        state_along(world, &self.episode.path, self.entry_index(m))
    }

    /// The expert's sub-trajectory for step `m`, ending with `Stop`.
    pub fn expert_trajectory(&self, world: &WorldGraph, m: usize) -> Trajectory {
        let path = &self.episode.path;
        let goal = self.spans[m].end - 1;
        let mut t = Trajectory::start(self.entry_state(world, m));
        for i in self.entry_index(m) + 1..=goal {
            t.actions.push(NavAction::MoveTo(path[i]));
            t.states.push(state_along(world, path, i));
        }
        t.actions.push(NavAction::Stop);
        t.states.push(t.final_state());
        t
    }

    fn expert_memory(&self, agent: &Agent, world: &WorldGraph, upto: usize) -> Vec<MemoryInput> {
        (0..upto)
            .map(|i| agent.memory_input(world, &self.steps[i].text, &self.expert_trajectory(world, i)))
            .collect()
    }
}

/// One step spanning the whole instruction.
pub fn whole_step(text: &str, lexicon: &Lexicon) -> BabyStep {
    BabyStep {
        sentence_span: 0..crate::dataset::sentence_count(text),
        text: text.to_string(),
        landmarks: extract_landmark_phrases(text, lexicon),
        verbs: Vec::new(),
    }
}

/// Steps the agent is given for `text` under `config`, and the action cap
/// per step. A whole-instruction step gets the budget of all its BabySteps.
pub fn instruction_steps(text: &str, lexicon: &Lexicon, config: &TrainConfig) -> (Vec<BabyStep>, usize) {
    let steps = segment(text, lexicon, config.segmenter);
    match config.granularity {
        Granularity::Babystep if !steps.is_empty() => (steps, config.max_steps_per_babystep),
        _ => (
            vec![whole_step(text, lexicon)],
            config.max_steps_per_babystep * steps.len().max(1),
        ),
    }
}

/// Trains the landmark scorer on the split's own instructions.
pub fn fit_aligner(split: &DatasetSplit, worlds: &Worlds, lexicon: &Lexicon, config: &TrainConfig) -> Result<LandmarkModel> {
    let lc = LandmarkTrainConfig { epochs: config.landmark_epochs, lr: config.landmark_lr, seed: config.seed };
    let (model, losses) = train_landmark_model(&split.episodes, worlds, lexicon, &lc)?;
    log::info!(
        "landmark model: loss {:.4} -> {:.4}",
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(model)
}

/// Segments every episode and assigns path spans. Episodes that already
/// carry BabySteps and aligned spans keep them. Episodes whose path is too
/// short for their steps are skipped.
pub fn prepare_episodes(
    split: &DatasetSplit,
    worlds: &Worlds,
    lexicon: &Lexicon,
    config: &TrainConfig,
    model: Option<&LandmarkModel>,
) -> Result<Vec<AlignedEpisode>> {
    let mut out = Vec::with_capacity(split.len());
    for e in &split.episodes {
        let world = world_of(worlds, &e.world_id)?;
        e.validate_in(world)?;
        let (steps, cap) = match (&e.babysteps, config.granularity) {
            (Some(steps), Granularity::Babystep) if !steps.is_empty() => (steps.clone(), config.max_steps_per_babystep),
            _ => instruction_steps(&e.instruction, lexicon, config),
        };
        let spans = if steps.len() == 1 {
            vec![0..e.path.len()]
        } else if let (Some(spans), Some(_)) = (&e.aligned_segments, &e.babysteps) {
            spans.clone()
        } else {
            match config.alignment {
                AlignmentSource::Gold => {
                    let gold = e.gold_segments.as_ref().ok_or_else(|| {
                        Error::InvalidParameter(format!("episode {} has no gold segments", e.episode_id))
                    })?;
                    let matches = gold.len() == steps.len()
                        && gold.iter().zip(&steps).all(|(g, s)| g.sentences == s.sentence_span);
                    if !matches {
                        log::warn!("episode {}: segmentation disagrees with gold; skipped", e.episode_id);
                        continue;
                    }
                    gold.iter().map(|g| g.path.clone()).collect()
                }
                AlignmentSource::Aligner => {
                    let model = model.ok_or_else(|| Error::InvalidParameter("aligner alignment needs a landmark model".into()))?;
                    match align(model, world, &e.path, &steps) {
                        Ok(r) => r.spans(),
                        Err(Error::Infeasible { .. }) => {
                            log::warn!("episode {}: more steps than states; skipped", e.episode_id);
                            continue;
                        }
                        Err(err) => return Err(err),
                    }
                }
            }
        };
        out.push(AlignedEpisode::new(e.clone(), steps, spans, cap)?);
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("no usable episodes in split {}", split.name)));
    }
    Ok(out)
}

/// Gradient-descent update with L2 weight decay, plain or Adam.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, len: usize) -> Self {
        Optimizer { kind, lr, weight_decay, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn from_config(config: &TrainConfig, len: usize) -> Self {
        Self::new(config.optimizer, config.lr, config.weight_decay, len)
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * (g + self.weight_decay * *p);
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i] + self.weight_decay * params[i];
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub phase: String,
    pub lecture: usize,
    pub iter: usize,
    pub loss: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LectureRecord {
    pub lecture: usize,
    /// `(iteration, validation SDTW)` of every candidate checkpoint.
    pub evaluations: Vec<(usize, f64)>,
    pub best_iter: usize,
    pub best_sdtw: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<IterRecord>,
    pub lectures: Vec<LectureRecord>,
}

impl TrainLog {
    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
        self.lectures.extend(other.lectures);
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["phase", "lecture", "iter", "loss", "reward"])?;
        for r in &self.records {
            w.write_record([
                r.phase.clone(),
                r.lecture.to_string(),
                r.iter.to_string(),
                r.loss.to_string(),
                r.reward.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_lectures_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lecture", "iter", "val_sdtw", "selected"])?;
        for l in &self.lectures {
            for &(iter, sdtw) in &l.evaluations {
                w.write_record([
                    l.lecture.to_string(),
                    iter.to_string(),
                    sdtw.to_string(),
                    u8::from(iter == l.best_iter).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Imitation loss and gradient of one BabyStep.
#[derive(Clone, Debug)]
pub struct StepLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Candidate index chosen at each decision, for replay.
    pub choices: Vec<usize>,
}

/// Student-forced imitation on step `m` of `ep`. The memory holds the
/// expert's earlier sub-trajectories and the agent starts at the expert's
/// entry pose. Actions are sampled from the policy (or replayed from
/// `replay`); each decision is supervised with the next hop towards the
/// end of the step's span. Returns the summed negative log-likelihood.
pub fn imitation_loss(
    agent: &Agent,
    world: &WorldGraph,
    ep: &AlignedEpisode,
    m: usize,
    replay: Option<&[usize]>,
    rng: &mut Rng,
) -> Result<StepLoss> {
    let memory = ep.expert_memory(agent, world, m);
    let tokens = agent.tokens(&ep.steps[m].text);
    let graph = agent.step_graph(&tokens, &memory);
    let mut choices = Vec::new();
    let mut chooser = |d: &Decision| {
        let c = match replay {
            Some(r) => r[choices.len()],
            None => crate::agent::sample_index(rng, &d.probs),
        };
        choices.push(c);
        c
    };
    let cap = replay.map_or(ep.step_cap, |r| r.len());
    let (_, decisions) = agent.run(world, ep.entry_state(world, m), &graph, cap, &mut chooser)?;
    let goal = ep.goal_node(m);
    let mut grad = vec![0.0; agent.params.len()];
    let d = agent.config.embed_dim;
    let (mut du, mut dz) = (vec![0.0; d], vec![0.0; d]);
    let mut loss = 0.0;
    for dec in &decisions {
        let expert = world.next_hop(dec.state.node, goal)?;
        let target = dec
            .candidates
            .iter()
            .position(|&c| c == expert)
            .expect("the expert action is always navigable");
        loss -= dec.probs[target].ln();
        dec.backward(&agent.params, &dec.nll_dscores(target, 1.0), &mut grad, &mut du, &mut dz);
    }
    graph.backward(&agent.params, &agent.config, &du, &dz, &mut grad);
    Ok(StepLoss { loss, grad, choices })
}

/// Fraction of expert decisions the greedy policy reproduces when it is
/// walked along the expert's own sub-trajectories.
pub fn teacher_forced_accuracy(agent: &Agent, data: &[AlignedEpisode], worlds: &Worlds) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for ep in data {
        let world = world_of(worlds, &ep.episode.world_id)?;
        let memory = ep.expert_memory(agent, world, ep.steps.len());
        for m in 0..ep.steps.len() {
            let tokens = agent.tokens(&ep.steps[m].text);
            let graph = agent.step_graph(&tokens, &memory[..m]);
            let goal = ep.goal_node(m);
            let mut err = None;
            agent.run(world, ep.entry_state(world, m), &graph, usize::MAX, &mut |d: &Decision| {
                let expert = match world.next_hop(d.state.node, goal) {
                    Ok(a) => a,
                    Err(e) => {
                        err = Some(e);
                        NavAction::Stop
                    }
                };
                let target = d.candidates.iter().position(|&c| c == expert).unwrap_or(0);
                total += 1;
                hit += usize::from(greedy(&d.probs) == target);
                target
            })?;
            if let Some(e) = err {
                return Err(e);
            }
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

fn check_data(agent: &Agent, data: &[AlignedEpisode], worlds: &Worlds) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("no training episodes".into()));
    }
    for ep in data {
        agent.check_world(world_of(worlds, &ep.episode.world_id)?)?;
    }
    Ok(())
}

/// Student-forcing imitation learning over uniformly sampled BabySteps.
pub fn imitation_learn(agent: &Agent, data: &[AlignedEpisode], worlds: &Worlds, config: &TrainConfig) -> Result<(Agent, TrainLog)> {
    let mut agent = agent.clone();
    let mut log = TrainLog::default();
    if config.il_iters == 0 {
        return Ok((agent, log));
    }
    check_data(&agent, data, worlds)?;
    let pairs: Vec<(usize, usize)> = data
        .iter()
        .enumerate()
        .flat_map(|(i, ep)| (0..ep.steps.len()).map(move |m| (i, m)))
        .collect();
    let mut sampler = rng::stream(config.seed, &[rng::tag::IMITATION]);
    let mut opt = Optimizer::from_config(config, agent.params.len());
    let b = config.il_batch_size;
    for iter in 0..config.il_iters {
        let batch: Vec<(usize, usize)> = (0..b)
            .map(|_| pairs[rand::Rng::gen_range(&mut sampler, 0..pairs.len())])
            .collect();
        let results = ordered_map(&batch, |j, &(i, m)| {
            let ep = &data[i];
            let world = world_of(worlds, &ep.episode.world_id)?;
            let mut r = rng::stream(config.seed, &[rng::tag::IMITATION, iter as u64, j as u64]);
            imitation_loss(&agent, world, ep, m, None, &mut r)
        });
        let mut grad = vec![0.0; agent.params.len()];
        let mut loss = 0.0;
        for r in results {
            let r = r?;
            loss += r.loss;
            for (g, x) in grad.iter_mut().zip(&r.grad) {
                *g += x;
            }
        }
        let scale = 1.0 / b as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        opt.step(&mut agent.params.values, &grad);
        log.records.push(IterRecord { phase: "il".into(), lecture: 0, iter, loss: loss * scale, reward: 0.0 });
        if iter % 100 == 0 {
            log::info!("il iter {iter}: loss {:.4}", loss * scale);
        }
    }
    if !agent.params.is_finite() {
        return Err(Error::DegenerateData("imitation learning diverged".into()));
    }
    Ok((agent, log))
}

/// Terminal-only reward: zero before the last step, success plus CLS of the
/// whole rollout against the reference at it.
pub fn fidelity_reward(
    world: &WorldGraph,
    reference: &[NodeId],
    rollout: &[NodeId],
    t: usize,
    last: usize,
    metric: &MetricConfig,
) -> f64 {
    if t < last {
        return 0.0;
    }
    let pair = PathPair::new(rollout, reference, world);
    success(&pair, metric.success_threshold) + cls(&pair, metric.dtw_threshold)
}

struct Rollout {
    graphs: Vec<ContextGraph>,
    /// Decisions of each step, with the chosen candidate.
    decisions: Vec<Vec<(Decision, usize)>>,
    nodes: Vec<NodeId>,
}

/// Samples the last `k` steps of `ep` after the expert's earlier steps.
fn sample_tail(agent: &Agent, world: &WorldGraph, ep: &AlignedEpisode, first: usize, rng: &mut Rng) -> Result<Rollout> {
    let mut memory = ep.expert_memory(agent, world, first);
    let mut full = Trajectory::start(ep.entry_state(world, first));
    let mut graphs = Vec::new();
    let mut decisions = Vec::new();
    for step in &ep.steps[first..] {
        let tokens = agent.tokens(&step.text);
        let graph = agent.step_graph(&tokens, &memory);
        let mut choices = Vec::new();
        let (part, decs) = agent.run(world, full.final_state(), &graph, ep.step_cap, &mut |d: &Decision| {
            let c = crate::agent::sample_index(rng, &d.probs);
            choices.push(c);
            c
        })?;
        memory.push(MemoryInput { tokens, phi: part.features(world) });
        full.extend(&part);
        graphs.push(graph);
        decisions.push(decs.into_iter().zip(choices).collect());
    }
    Ok(Rollout { graphs, decisions, nodes: full.nodes() })
}

/// `(preloaded, executed)` BabySteps of an `m`-step episode in lecture `k`:
/// the agent executes the last `min(k, m)` steps after the expert's first.
pub fn lecture_split(m: usize, k: usize) -> (usize, usize) {
    let executed = k.clamp(1, m.max(1)).min(m);
    (m - executed, executed)
}

/// REINFORCE estimate for one episode in lecture `k` from `n` sampled
/// rollouts: the gradient of `-(1/n) sum_r sum_t A_t log pi(a_t)` with
/// `A_t = discount^(T - t) (R - b)`, where `b` is the mean reward of the
/// other rollouts. Returns the gradient and the rewards.
pub fn reinforce_episode(
    agent: &Agent,
    world: &WorldGraph,
    ep: &AlignedEpisode,
    k: usize,
    n: usize,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (first, _) = lecture_split(ep.steps.len(), k);
    let reference = &ep.episode.path[ep.entry_index(first)..];
    let metric = config.metric_config();
    let mut rollouts = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let r = sample_tail(agent, world, ep, first, rng)?;
        let total: usize = r.decisions.iter().map(Vec::len).sum();
        let last = total.saturating_sub(1);
        rewards.push(fidelity_reward(world, reference, &r.nodes, last, last, &metric));
        rollouts.push(r);
    }
    let sum: f64 = rewards.iter().sum();
    let mut grad = vec![0.0; agent.params.len()];
    let d = agent.config.embed_dim;
    for (r, &reward) in rollouts.iter().zip(&rewards) {
        let baseline = if n > 1 { (sum - reward) / (n - 1) as f64 } else { 0.0 };
        let advantage = reward - baseline;
        if advantage == 0.0 {
            continue;
        }
        let total: usize = r.decisions.iter().map(Vec::len).sum();
        let mut t = 0;
        for (graph, decs) in r.graphs.iter().zip(&r.decisions) {
            let (mut du, mut dz) = (vec![0.0; d], vec![0.0; d]);
            for (dec, choice) in decs {
                let a_t = config.discount.powi((total - 1 - t) as i32) * advantage / n as f64;
                dec.backward(&agent.params, &dec.nll_dscores(*choice, a_t), &mut grad, &mut du, &mut dz);
                t += 1;
            }
            graph.backward(&agent.params, &agent.config, &du, &dz, &mut grad);
        }
    }
    Ok((grad, rewards))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlStats {
    pub mean_reward: f64,
}

/// One policy-gradient update on `batch` in lecture `k`.
pub fn rl_update(
    agent: &mut Agent,
    opt: &mut Optimizer,
    batch: &[&AlignedEpisode],
    k: usize,
    worlds: &Worlds,
    config: &TrainConfig,
    stream: &[u64],
) -> Result<RlStats> {
    if batch.is_empty() {
        return Err(Error::Empty("empty RL batch".into()));
    }
    let n = config.episodes_per_update;
    let results = ordered_map(batch, |j, ep| {
        let world = world_of(worlds, &ep.episode.world_id)?;
        let mut parts = stream.to_vec();
        parts.push(j as u64);
        let mut r = rng::stream(config.seed, &parts);
        reinforce_episode(agent, world, ep, k, n, config, &mut r)
    });
    let mut grad = vec![0.0; agent.params.len()];
    let mut reward = 0.0;
    for r in results {
        let (g, rewards) = r?;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        reward += rewards.iter().sum::<f64>() / n as f64;
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    opt.step(&mut agent.params.values, &grad);
    Ok(RlStats { mean_reward: reward * scale })
}

/// Lectures `k = 1..=lectures`. Each lecture starts from the best checkpoint
/// of the previous one; candidates (the start point, every `eval_every`
/// iterations and the end) are scored by mean validation SDTW.
pub fn curriculum_train(
    agent: &Agent,
    data: &[AlignedEpisode],
    val: &DatasetSplit,
    worlds: &Worlds,
    lexicon: &Lexicon,
    config: &TrainConfig,
) -> Result<(Agent, TrainLog)> {
    curriculum_from(agent, data, val, worlds, lexicon, config, 1, &mut |_, _| Ok(()))
}

/// [`curriculum_train`] starting at lecture `first` (the agent being the
/// selected checkpoint of lecture `first - 1`), calling `on_lecture` with
/// each lecture's selected agent. Every lecture draws from its own random
/// stream, so a resumed run matches an uninterrupted one.
#[allow(clippy::too_many_arguments)]
pub fn curriculum_from(
    agent: &Agent,
    data: &[AlignedEpisode],
    val: &DatasetSplit,
    worlds: &Worlds,
    lexicon: &Lexicon,
    config: &TrainConfig,
    first: usize,
    on_lecture: &mut dyn FnMut(&Agent, &LectureRecord) -> Result<()>,
) -> Result<(Agent, TrainLog)> {
    let mut best = agent.clone();
    let mut log = TrainLog::default();
    if first.max(1) > config.lectures {
        return Ok((best, log));
    }
    check_data(agent, data, worlds)?;
    let mut best_sdtw = evaluate_agent(&best, val, worlds, lexicon, config)?.aggregate.sdtw;
    for k in first.max(1)..=config.lectures {
        let mut current = best.clone();
        let mut opt = Optimizer::from_config(config, current.params.len());
        let mut sampler = rng::stream(config.seed, &[rng::tag::REINFORCE, k as u64]);
        let batch_size = config.lecture_batch_size(k).min(data.len());
        let mut record = LectureRecord { lecture: k, evaluations: vec![(0, best_sdtw)], best_iter: 0, best_sdtw };
        for iter in 1..=config.rl_iters_per_lecture {
            let chosen = rand::seq::index::sample(&mut sampler, data.len(), batch_size).into_vec();
            let batch: Vec<&AlignedEpisode> = chosen.iter().map(|&i| &data[i]).collect();
            let stats = rl_update(
                &mut current,
                &mut opt,
                &batch,
                k,
                worlds,
                config,
                &[rng::tag::REINFORCE, k as u64, iter as u64],
            )?;
            log.records.push(IterRecord { phase: "rl".into(), lecture: k, iter, loss: 0.0, reward: stats.mean_reward });
            if iter % config.eval_every == 0 || iter == config.rl_iters_per_lecture {
                let sdtw = evaluate_agent(&current, val, worlds, lexicon, config)?.aggregate.sdtw;
                record.evaluations.push((iter, sdtw));
                log::info!("lecture {k} iter {iter}: reward {:.4} val sdtw {sdtw:.4}", stats.mean_reward);
                if sdtw > record.best_sdtw {
                    record.best_sdtw = sdtw;
                    record.best_iter = iter;
                    best = current.clone();
                }
            }
        }
        if !current.params.is_finite() {
            return Err(Error::DegenerateData(format!("lecture {k} diverged")));
        }
        best_sdtw = record.best_sdtw;
        on_lecture(&best, &record)?;
        log.lectures.push(record);
    }
    Ok((best, log))
}

/// Greedy rollout of `ep` from its first node facing heading 0, using only
/// the instruction text to find the steps.
pub fn predict_path(agent: &Agent, world: &WorldGraph, ep: &Episode, lexicon: &Lexicon, config: &TrainConfig) -> Result<Vec<NodeId>> {
    let (steps, cap) = instruction_steps(&ep.instruction, lexicon, config);
    let mut memory: Vec<MemoryInput> = Vec::new();
    let mut full = Trajectory::start(State { node: ep.path[0], heading: 0, elevation: LEVEL });
    for step in &steps {
        let tokens = agent.tokens(&step.text);
        let graph = agent.step_graph(&tokens, &memory);
        let (part, _) = agent.run(world, full.final_state(), &graph, cap, &mut |d: &Decision| greedy(&d.probs))?;
        memory.push(MemoryInput { tokens, phi: part.features(world) });
        full.extend(&part);
    }
    Ok(full.nodes())
}

fn greedy(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Greedy evaluation of every episode of `split`.
pub fn evaluate_agent(agent: &Agent, split: &DatasetSplit, worlds: &Worlds, lexicon: &Lexicon, config: &TrainConfig) -> Result<MetricReport> {
    let metric = config.metric_config();
    let rows = ordered_map(&split.episodes, |_, ep| -> Result<EpisodeMetrics> {
        let world = world_of(worlds, &ep.world_id)?;
        let predicted = predict_path(agent, world, ep, lexicon, config)?;
        Ok(EpisodeMetrics::compute(
            ep.episode_id.clone(),
            &PathPair::new(&predicted, &ep.path, world),
            &metric,
        ))
    });
    MetricReport::from_rows(rows.into_iter().collect::<Result<Vec<_>>>()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub bucket: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub count: usize,
    pub sr: f64,
    pub cls: f64,
    pub ndtw: f64,
    pub sdtw: f64,
}

/// Splits `report` into `n` equal-width buckets of instruction word count.
/// Empty buckets are kept with zero counts.
pub fn length_buckets(split: &DatasetSplit, report: &MetricReport, n: usize) -> Result<Vec<LengthBucket>> {
    if n == 0 {
        return Err(Error::InvalidParameter("bucket count must be >= 1".into()));
    }
    if split.len() != report.episodes.len() {
        return Err(Error::InvalidParameter("report does not match the split".into()));
    }
    let words: Vec<usize> = split.episodes.iter().map(Episode::word_count).collect();
    let lo = words.iter().copied().min().unwrap_or(0);
    let hi = words.iter().copied().max().unwrap_or(0);
    let width = ((hi - lo) as f64 / n as f64).max(f64::MIN_POSITIVE);
    let mut out: Vec<LengthBucket> = (0..n)
        .map(|b| LengthBucket {
            bucket: b,
            min_words: lo + (b as f64 * width).ceil() as usize,
            max_words: if b + 1 == n { hi } else { lo + ((b + 1) as f64 * width).ceil() as usize - 1 },
            count: 0,
            sr: 0.0,
            cls: 0.0,
            ndtw: 0.0,
            sdtw: 0.0,
        })
        .collect();
    for (w, row) in words.iter().zip(&report.episodes) {
        let b = (((w - lo) as f64 / width) as usize).min(n - 1);
        let o = &mut out[b];
        o.count += 1;
        o.sr += row.sr;
        o.cls += row.cls;
        o.ndtw += row.ndtw;
        o.sdtw += row.sdtw;
    }
    for o in &mut out {
        if o.count > 0 {
            let c = o.count as f64;
            o.sr /= c;
            o.cls /= c;
            o.ndtw /= c;
            o.sdtw /= c;
        }
    }
    Ok(out)
}

/// Agents after each phase of [`train_agent`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub imitation: Agent,
    pub agent: Agent,
    pub log: TrainLog,
}

/// Full pipeline on a training split: landmark model and alignment,
/// imitation, then the curriculum selected on `val`.
pub fn train_phases(
    train: &DatasetSplit,
    val: &DatasetSplit,
    worlds: &Worlds,
    lexicon: &Lexicon,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let vocab = crate::aligner::shared_vocab(&train.episodes, worlds)?;
    let lexicon = lexicon.clone().with_landmarks(&vocab);
    let model = match (config.granularity, config.alignment) {
        (Granularity::Babystep, AlignmentSource::Aligner) => Some(fit_aligner(train, worlds, &lexicon, config)?),
        _ => None,
    };
    let data = prepare_episodes(train, worlds, &lexicon, config, model.as_ref())?;
    let agent = Agent::new(config.agent_config(), &lexicon, &vocab, config.seed)?;
    let (imitation, mut log) = imitation_learn(&agent, &data, worlds, config)?;
    let (agent, rl_log) = curriculum_train(&imitation, &data, val, worlds, &lexicon, config)?;
    log.extend(rl_log);
    Ok(TrainOutcome { imitation, agent, log })
}

pub fn train_agent(
    train: &DatasetSplit,
    val: &DatasetSplit,
    worlds: &Worlds,
    lexicon: &Lexicon,
    config: &TrainConfig,
) -> Result<(Agent, TrainLog)> {
    let o = train_phases(train, val, worlds, lexicon, config)?;
    Ok((o.agent, o.log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, SummaryMode};
    use crate::dataset::Source;
    use crate::world::Node;
    use std::collections::BTreeSet;

    fn tri() -> WorldGraph {
        let nodes = vec![
            Node { id: 0, position: [0.0, 0.0, 0.0], landmarks: BTreeSet::new() },
            Node { id: 1, position: [0.0, 2.0, 0.0], landmarks: ["sofa".to_string()].into() },
            Node { id: 2, position: [2.0, 2.0, 0.0], landmarks: ["lamp".to_string()].into() },
        ];
        let vocab = vec!["sofa".to_string(), "lamp".to_string()];
        WorldGraph::new("tri", nodes, vec![(0, 1), (1, 2), (0, 2)], vocab).unwrap()
    }

    fn episode() -> AlignedEpisode {
        let lex = Lexicon::default();
        let e = Episode {
            episode_id: "e".into(),
            world_id: "tri".into(),
            instruction: "Walk to the sofa. Turn left and go to the lamp.".into(),
            path: vec![0, 1, 2],
            gold_segments: None,
            source: Source::Synthetic,
            babysteps: None,
            aligned_segments: None,
        };
        let steps = segment(&e.instruction, &lex, Default::default());
        assert_eq!(steps.len(), 2);
        AlignedEpisode::new(e, steps, vec![0..2, 2..3], 4).unwrap()
    }

    fn agent(mode: SummaryMode, seed: u64) -> Agent {
        let config = AgentConfig { embed_dim: 4, summary_mode: mode, ..AgentConfig::default() };
        Agent::new(config, &Lexicon::default(), &["sofa".to_string(), "lamp".to_string()], seed).unwrap()
    }

    #[test]
    fn imitation_gradient_matches_finite_differences() {
        let w = tri();
        let ep = episode();
        for mode in [SummaryMode::Forgetting, SummaryMode::Recurrent, SummaryMode::Average] {
            let mut a = agent(mode, 3);
            for v in &mut a.params.values {
                *v *= 10.0;
            }
            let mut r = rng::stream(1, &[0]);
            let base = imitation_loss(&a, &w, &ep, 1, None, &mut r).unwrap();
            let mut worst: f64 = 0.0;
            for i in (0..a.params.len()).step_by(7) {
                let h = 1e-6;
                let mut p = a.clone();
                p.params.values[i] += h;
                let up = imitation_loss(&p, &w, &ep, 1, Some(&base.choices), &mut r).unwrap().loss;
                p.params.values[i] -= 2.0 * h;
                let down = imitation_loss(&p, &w, &ep, 1, Some(&base.choices), &mut r).unwrap().loss;
                let fd = (up - down) / (2.0 * h);
                let err = (fd - base.grad[i]).abs() / fd.abs().max(base.grad[i].abs()).max(1e-6);
                worst = worst.max(err);
            }
            assert!(worst < 1e-4, "{mode:?}: {worst}");
        }
    }

    #[test]
    fn expert_protocol() {
        let w = tri();
        let ep = episode();
        assert_eq!(ep.entry_index(1), 1);
        assert_eq!(ep.goal_node(1), 2);
        let t = ep.expert_trajectory(&w, 1);
        assert_eq!(t.nodes(), vec![1, 2]);
        assert_eq!(t.actions, vec![NavAction::MoveTo(2), NavAction::Stop]);
    }

    #[test]
    fn fidelity_reward_is_terminal() {
        let w = tri();
        let m = MetricConfig { success_threshold: 3.0, dtw_threshold: 3.0 };
        assert_eq!(fidelity_reward(&w, &[0, 1, 2], &[0, 1, 2], 0, 2, &m), 0.0);
        assert!((fidelity_reward(&w, &[0, 1, 2], &[0, 1, 2], 2, 2, &m) - 2.0).abs() < 1e-12);
    }
}

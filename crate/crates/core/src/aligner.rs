//! Weakly supervised landmark scoring and the dynamic program that cuts an
//! expert path into one sub-path per BabyStep.
//!
//! The landmark model is a linear scorer over the flattened observation
//! features. It is trained from trajectory-level labels only: the logit of a
//! landmark over a path is the max over its states, and the label says
//! whether the instruction mentions that landmark.

use std::io::{Read, Write};
use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{world_of, Episode, Worlds};
use crate::error::{Error, Result};
use crate::instruction::{extract_landmark_phrases, BabyStep, Lexicon};
use crate::rng;
use crate::world::{NodeId, Observation, WorldGraph};

pub const DEFAULT_LR: f64 = 1e-4;
const INIT_SCALE: f64 = 0.01;
const MODEL_FORMAT: &str = "babywalk-landmark-model";
const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkModel {
    pub vocab: Vec<String>,
    feature_dim: usize,
    /// Row-major `vocab.len() x feature_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    vocab: Vec<String>,
    feature_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LandmarkModel {
    pub fn zeros(vocab: Vec<String>) -> Self {
        let feature_dim = Observation::feature_dim(vocab.len());
        LandmarkModel {
            weights: vec![0.0; vocab.len() * feature_dim],
            bias: vec![0.0; vocab.len()],
            feature_dim,
            vocab,
        }
    }

    /// Small uniform weights drawn from `seed`.
    pub fn init(vocab: Vec<String>, seed: u64) -> Self {
        let mut model = Self::zeros(vocab);
        let mut rng = rng::stream(seed, &[rng::tag::LANDMARK_INIT]);
        for w in &mut model.weights {
            *w = rng.gen_range(-INIT_SCALE..INIT_SCALE);
        }
        model
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn landmark_index(&self, name: &str) -> Option<usize> {
        self.vocab.iter().position(|v| v == name)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn logits_sparse(&self, active: &[usize]) -> Vec<f64> {
        (0..self.vocab.len())
            .map(|k| {
                let row = &self.weights[k * self.feature_dim..(k + 1) * self.feature_dim];
                self.bias[k] + active.iter().map(|&f| row[f]).sum::<f64>()
            })
            .collect()
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            vocab: self.vocab.clone(),
            feature_dim: self.feature_dim,
            weights: self.weights.clone(),
            bias: self.bias.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let f: ModelFile = serde_json::from_reader(reader)?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                f.format, f.version
            )));
        }
        if f.feature_dim != Observation::feature_dim(f.vocab.len())
            || f.weights.len() != f.vocab.len() * f.feature_dim
            || f.bias.len() != f.vocab.len()
        {
            return Err(Error::Checkpoint("landmark model shapes are inconsistent".into()));
        }
        Ok(LandmarkModel {
            vocab: f.vocab,
            feature_dim: f.feature_dim,
            weights: f.weights,
            bias: f.bias,
        })
    }
}

/// One logit per landmark of the model vocabulary.
pub fn landmark_logits(model: &LandmarkModel, obs: &Observation) -> Vec<f64> {
    model.logits_sparse(&obs.active_features())
}

/// Mean logit of the landmarks `step` mentions that the model knows; 0 when
/// it mentions none.
pub fn psi(model: &LandmarkModel, obs: &Observation, step: &BabyStep) -> f64 {
    psi_from_logits(&landmark_logits(model, obs), &step_landmarks(model, step))
}

fn step_landmarks(model: &LandmarkModel, step: &BabyStep) -> Vec<usize> {
    let mut out = Vec::new();
    for name in &step.landmarks {
        if let Some(k) = model.landmark_index(name) {
            if !out.contains(&k) {
                out.push(k);
            }
        }
    }
    out
}

fn psi_from_logits(logits: &[f64], landmarks: &[usize]) -> f64 {
    if landmarks.is_empty() {
        return 0.0;
    }
    landmarks.iter().map(|&k| logits[k]).sum::<f64>() / landmarks.len() as f64
}

/// `psi[t][m]` for every state of `path` and every step.
pub fn psi_table(model: &LandmarkModel, world: &WorldGraph, path: &[NodeId], steps: &[BabyStep]) -> Vec<Vec<f64>> {
    let mentioned: Vec<Vec<usize>> = steps.iter().map(|s| step_landmarks(model, s)).collect();
    path.iter()
        .map(|&n| {
            let logits = landmark_logits(model, world.observation_at(n));
            mentioned.iter().map(|l| psi_from_logits(&logits, l)).collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    /// End index (exclusive, in states) of each segment; the last equals the
    /// path length.
    pub boundaries: Vec<usize>,
    pub potential: f64,
    /// `phi[t - 1][m - 1]`, when requested.
    pub table: Option<Vec<Vec<f64>>>,
    /// Inner-loop evaluations performed.
    pub evaluations: usize,
}

impl AlignmentResult {
    /// Path spans of the segments.
    pub fn spans(&self) -> Vec<Range<usize>> {
        boundaries_to_spans(&self.boundaries)
    }
}

pub fn boundaries_to_spans(boundaries: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    boundaries
        .iter()
        .map(|&end| {
            let r = start..end;
            start = end;
            r
        })
        .collect()
}

/// Maximizes the summed step scores over segmentations of `psi.len()` states
/// into `m` non-empty contiguous segments. Among optimal segmentations the
/// last boundary is taken as early as possible, then the one before it, and
/// so on.
pub fn align_scores(psi: &[Vec<f64>], m: usize, keep_table: bool) -> Result<AlignmentResult> {
    let n = psi.len();
    if m == 0 {
        return Err(Error::InvalidParameter("alignment needs at least one step".into()));
    }
    if n < m {
        return Err(Error::Infeasible { path_len: n, steps: m });
    }
    // phi[t][j]: best score with segment j ending at state t (both 0-based)
    let mut phi = vec![vec![f64::NEG_INFINITY; m]; n];
    let mut evaluations = 0;
    for t in 0..n {
        phi[t][0] = psi[t][0];
    }
    for j in 1..m {
        for t in j..n {
            let mut best = f64::NEG_INFINITY;
            for i in j - 1..t {
                evaluations += 1;
                best = best.max(phi[i][j - 1]);
            }
            phi[t][j] = best + psi[t][j];
        }
    }
    let potential = phi[n - 1][m - 1];
    let mut boundaries = vec![n; m];
    let mut t = n - 1;
    for j in (1..m).rev() {
        let target = phi[t][j];
        let i = (j - 1..t)
            .find(|&i| phi[i][j - 1] + psi[t][j] == target)
            .expect("the optimum is attained by some predecessor");
        boundaries[j - 1] = i + 1;
        t = i;
    }
    Ok(AlignmentResult {
        boundaries,
        potential,
        table: keep_table.then_some(phi),
        evaluations,
    })
}

/// Exhaustive search with the same objective and tie-break as [`align_scores`].
pub fn brute_force_scores(psi: &[Vec<f64>], m: usize) -> Result<AlignmentResult> {
    let n = psi.len();
    if m == 0 {
        return Err(Error::InvalidParameter("alignment needs at least one step".into()));
    }
    if n < m {
        return Err(Error::Infeasible { path_len: n, steps: m });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut evaluations = 0;
    let mut cuts = Vec::with_capacity(m);
    enumerate(n, m, &mut cuts, &mut |b: &[usize]| {
        evaluations += 1;
        let mut total = 0.0;
        for (j, &end) in b.iter().enumerate() {
            total = if j == 0 { psi[end - 1][0] } else { total + psi[end - 1][j] };
        }
        let better = match &best {
            None => true,
            Some((score, prev)) => {
                total > *score || (total == *score && colex_less(b, prev))
            }
        };
        if better {
            best = Some((total, b.to_vec()));
        }
    });
    let (potential, boundaries) = best.unwrap();
    Ok(AlignmentResult { boundaries, potential, table: None, evaluations })
}

fn colex_less(a: &[usize], b: &[usize]) -> bool {
    a.iter().rev().cmp(b.iter().rev()) == std::cmp::Ordering::Less
}

fn enumerate(n: usize, m: usize, cuts: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if cuts.len() == m - 1 {
        cuts.push(n);
        visit(cuts);
        cuts.pop();
        return;
    }
    let from = cuts.last().copied().unwrap_or(0) + 1;
    let remaining = m - 1 - cuts.len();
    for end in from..=n - remaining {
        cuts.push(end);
        enumerate(n, m, cuts, visit);
        cuts.pop();
    }
}

/// Aligns `steps` to the states of `path`.
pub fn align(model: &LandmarkModel, world: &WorldGraph, path: &[NodeId], steps: &[BabyStep]) -> Result<AlignmentResult> {
    if path.len() < steps.len() {
        return Err(Error::Infeasible { path_len: path.len(), steps: steps.len() });
    }
    align_scores(&psi_table(model, world, path, steps), steps.len(), false)
}

pub const BRUTE_FORCE_MAX_PATH: usize = 14;
pub const BRUTE_FORCE_MAX_STEPS: usize = 5;

/// Test oracle for [`align`]; limited to short paths.
pub fn brute_force_align(
    model: &LandmarkModel,
    world: &WorldGraph,
    path: &[NodeId],
    steps: &[BabyStep],
) -> Result<AlignmentResult> {
    if path.len() > BRUTE_FORCE_MAX_PATH || steps.len() > BRUTE_FORCE_MAX_STEPS {
        return Err(Error::InvalidParameter(format!(
            "brute force is limited to {BRUTE_FORCE_MAX_PATH} states and {BRUTE_FORCE_MAX_STEPS} steps"
        )));
    }
    brute_force_scores(&psi_table(model, world, path, steps), steps.len())
}

/// F1 of predicted against gold segment boundaries, ignoring the final one
/// that every segmentation shares. Two single-segment answers score 1.
pub fn boundary_f1(predicted: &[usize], gold: &[usize]) -> f64 {
    let inner = |b: &[usize]| -> Vec<usize> { b[..b.len().saturating_sub(1)].to_vec() };
    let (p, g) = (inner(predicted), inner(gold));
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    let hits = p.iter().filter(|b| g.contains(b)).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let precision = hits / p.len() as f64;
    let recall = hits / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for LandmarkTrainConfig {
    fn default() -> Self {
        LandmarkTrainConfig { epochs: 100, lr: DEFAULT_LR, seed: 0 }
    }
}

struct Sample {
    /// Active features of every state on the path.
    states: Vec<Vec<usize>>,
    labels: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(x)` against `y`, computed stably.
fn bce_with_logit(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// Landmark vocabulary shared by every world the episodes use.
pub fn shared_vocab(episodes: &[Episode], worlds: &Worlds) -> Result<Vec<String>> {
    let mut vocab: Option<&[String]> = None;
    for e in episodes {
        let w = world_of(worlds, &e.world_id)?;
        match vocab {
            None => vocab = Some(w.landmark_vocab()),
            Some(v) if v != w.landmark_vocab() => {
                return Err(Error::VocabMismatch(format!(
                    "world {} has a different landmark vocabulary",
                    w.world_id()
                )))
            }
            _ => {}
        }
    }
    vocab
        .map(<[String]>::to_vec)
        .ok_or_else(|| Error::Empty("no episodes to train on".into()))
}

fn build_samples(model: &LandmarkModel, episodes: &[Episode], worlds: &Worlds, lexicon: &Lexicon) -> Result<Vec<Sample>> {
    let mut samples = Vec::with_capacity(episodes.len());
    let mut any_label = false;
    for e in episodes {
        let world = world_of(worlds, &e.world_id)?;
        let mut labels = vec![0.0; model.vocab.len()];
        for name in extract_landmark_phrases(&e.instruction, lexicon) {
            if let Some(k) = model.landmark_index(&name) {
                labels[k] = 1.0;
                any_label = true;
            }
        }
        let states = e.path.iter().map(|&n| world.observation_at(n).active_features()).collect();
        samples.push(Sample { states, labels });
    }
    if !any_label {
        return Err(Error::DegenerateData("no instruction mentions a known landmark".into()));
    }
    Ok(samples)
}

/// Max-pooled logits and the state attaining each max.
fn pooled(model: &LandmarkModel, sample: &Sample) -> Vec<(f64, usize)> {
    let per_state: Vec<Vec<f64>> = sample.states.iter().map(|a| model.logits_sparse(a)).collect();
    (0..model.vocab.len())
        .map(|k| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (t, logits) in per_state.iter().enumerate() {
                if logits[k] > best.0 {
                    best = (logits[k], t);
                }
            }
            best
        })
        .collect()
}

fn mean_loss(model: &LandmarkModel, samples: &[Sample]) -> f64 {
    let per_label = (samples.len() * model.vocab.len()) as f64;
    samples
        .iter()
        .map(|s| {
            pooled(model, s)
                .iter()
                .zip(&s.labels)
                .map(|(&(x, _), &y)| bce_with_logit(x, y))
                .sum::<f64>()
        })
        .sum::<f64>()
        / per_label
}

/// Full-batch gradient descent on the mean trajectory-level BCE. Returns the
/// model and the loss before each epoch plus the final loss.
pub fn train_landmark_model(
    episodes: &[Episode],
    worlds: &Worlds,
    lexicon: &Lexicon,
    config: &LandmarkTrainConfig,
) -> Result<(LandmarkModel, Vec<f64>)> {
    let vocab = shared_vocab(episodes, worlds)?;
    let mut model = LandmarkModel::init(vocab, config.seed);
    let samples = build_samples(&model, episodes, worlds, lexicon)?;
    let per_label = (samples.len() * model.vocab.len()) as f64;
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        let mut grad_w = vec![0.0; model.weights.len()];
        let mut grad_b = vec![0.0; model.bias.len()];
        let mut loss = 0.0;
        for s in &samples {
            for (k, (&(x, t), &y)) in pooled(&model, s).iter().zip(&s.labels).enumerate() {
                loss += bce_with_logit(x, y);
                let g = (sigmoid(x) - y) / per_label;
                grad_b[k] += g;
                let row = k * model.feature_dim;
                for &f in &s.states[t] {
                    grad_w[row + f] += g;
                }
            }
        }
        losses.push(loss / per_label);
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= config.lr * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&grad_b) {
            *b -= config.lr * g;
        }
        log::debug!("landmark epoch {epoch}: loss {:.6}", losses[epoch]);
    }
    losses.push(mean_loss(&model, &samples));
    if !model.is_finite() {
        return Err(Error::DegenerateData("landmark model diverged".into()));
    }
    Ok((model, losses))
}

/// Fraction of (trajectory, landmark) labels predicted correctly by
/// thresholding the max-pooled probability at 0.5.
pub fn trajectory_accuracy(model: &LandmarkModel, episodes: &[Episode], worlds: &Worlds, lexicon: &Lexicon) -> Result<f64> {
    let samples = build_samples(model, episodes, worlds, lexicon)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in &samples {
        for (&(x, _), &y) in pooled(model, s).iter().zip(&s.labels) {
            correct += usize::from((x > 0.0) == (y > 0.5));
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

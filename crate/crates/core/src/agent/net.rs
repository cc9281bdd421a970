//! Forward and backward passes of the encoders, the memory summary, the
//! context network and the policy. Backward passes accumulate into a flat
//! gradient laid out like [`PolicyParams::values`].

use std::f64::consts::PI;

use super::params::{matvec, matvec_t_add, outer_add, PolicyParams};
use super::{forgetting_weights, AgentConfig, PrevAction, SummaryMode};
use crate::world::{NavAction, Observation, State, HEADINGS};

/// Raw inputs of one remembered BabyStep.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryInput {
    pub tokens: Vec<usize>,
    /// Mean per-step trajectory features.
    pub phi: Vec<f64>,
}

/// Mean of the token embeddings; zero for no tokens.
pub fn encode_tokens(params: &PolicyParams, tokens: &[usize]) -> Vec<f64> {
    let d = params.layout.dims.embed;
    let table = params.block(&params.layout.token_embedding);
    let mut u = vec![0.0; d];
    if tokens.is_empty() {
        return u;
    }
    for &t in tokens {
        for (o, e) in u.iter_mut().zip(&table[t * d..(t + 1) * d]) {
            *o += e;
        }
    }
    let n = tokens.len() as f64;
    u.iter_mut().for_each(|v| *v /= n);
    u
}

fn encode_tokens_backward(params: &PolicyParams, tokens: &[usize], du: &[f64], grad: &mut [f64]) {
    if tokens.is_empty() {
        return;
    }
    let d = params.layout.dims.embed;
    let base = params.layout.token_embedding.start;
    let n = tokens.len() as f64;
    for &t in tokens {
        for (k, g) in du.iter().enumerate() {
            grad[base + t * d + k] += g / n;
        }
    }
}

/// Linear projection of the mean trajectory features.
pub fn encode_traj(params: &PolicyParams, phi: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; params.layout.dims.embed];
    matvec(params.block(&params.layout.traj_projection), phi, &mut v);
    v
}

/// Features of taking `action` at a node with observation `obs`.
pub fn step_features(obs: &Observation, action: NavAction) -> Vec<f64> {
    let v = obs.vocab_size;
    let mut f = vec![0.0; 2 * v + 3];
    for (k, &b) in obs.here.iter().enumerate() {
        f[k] = f64::from(u8::from(b));
    }
    for (k, b) in obs.visible().into_iter().enumerate() {
        f[v + k] = f64::from(u8::from(b));
    }
    match action {
        NavAction::Stop => f[2 * v] = 1.0,
        NavAction::MoveTo(_) => f[2 * v + 1] = 1.0,
    }
    f[2 * v + 2] = 1.0;
    f
}

fn tanh_vec(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

/// Which landmarks the current BabyStep names: the last one mentioned is
/// the target, every one mentioned counts as mentioned.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cue {
    pub target: Option<usize>,
    pub mentioned: Vec<usize>,
}

/// Cached forward pass from a BabyStep's tokens and the memory to `u` and
/// the context `z`.
#[derive(Clone, Debug)]
pub struct ContextGraph {
    tokens: Vec<usize>,
    pub cue: Cue,
    pub u: Vec<f64>,
    memory: Vec<MemoryInput>,
    entry_u: Vec<Vec<f64>>,
    entry_v: Vec<Vec<f64>>,
    alphas: Vec<f64>,
    /// Recurrent states after each entry.
    rec: Vec<Vec<f64>>,
    summary: Vec<f64>,
    h1: Vec<f64>,
    pub z: Vec<f64>,
}

/// The `(instruction, trajectory)` summary of the memory under `config`.
pub(crate) fn summary_forward(
    params: &PolicyParams,
    config: &AgentConfig,
    entry_u: &[Vec<f64>],
    entry_v: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let d = params.layout.dims.embed;
    let mut summary = vec![0.0; 2 * d];
    let mut alphas = Vec::new();
    let mut rec = Vec::new();
    match config.summary_mode {
        SummaryMode::Null => {}
        SummaryMode::Forgetting | SummaryMode::Average => {
            let gamma = if config.summary_mode == SummaryMode::Average { 0.0 } else { config.forget_gamma };
            alphas = forgetting_weights(entry_u.len(), gamma, config.forget_omega);
            for ((a, u), v) in alphas.iter().zip(entry_u).zip(entry_v) {
                for k in 0..d {
                    summary[k] += a * u[k];
                    summary[d + k] += a * v[k];
                }
            }
        }
        SummaryMode::Recurrent => {
            let a = params.block(&params.layout.rec_a);
            let b = params.block(&params.layout.rec_b);
            let bias = params.block(&params.layout.rec_bias);
            let mut c = vec![0.0; 2 * d];
            for (u, v) in entry_u.iter().zip(entry_v) {
                let x: Vec<f64> = u.iter().chain(v).copied().collect();
                let mut pre = vec![0.0; 2 * d];
                let mut bx = vec![0.0; 2 * d];
                matvec(a, &c, &mut pre);
                matvec(b, &x, &mut bx);
                for k in 0..2 * d {
                    pre[k] += bx[k] + bias[k];
                }
                tanh_vec(&mut pre);
                c = pre;
                rec.push(c.clone());
            }
            summary = c;
        }
    }
    (summary, alphas, rec)
}

/// `g`: two-layer perceptron from the concatenated summaries to `z`.
pub(crate) fn context_forward(params: &PolicyParams, summary: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l = &params.layout;
    let d = l.dims.embed;
    let mut h1 = vec![0.0; d];
    matvec(params.block(&l.g_w1), summary, &mut h1);
    for (h, b) in h1.iter_mut().zip(params.block(&l.g_b1)) {
        *h += b;
    }
    tanh_vec(&mut h1);
    let mut z = vec![0.0; d];
    matvec(params.block(&l.g_w2), &h1, &mut z);
    for (o, b) in z.iter_mut().zip(params.block(&l.g_b2)) {
        *o += b;
    }
    (h1, z)
}

impl ContextGraph {
    pub fn forward(
        params: &PolicyParams,
        config: &AgentConfig,
        tokens: &[usize],
        cue: Cue,
        memory: &[MemoryInput],
    ) -> Self {
        let u = encode_tokens(params, tokens);
        let entry_u: Vec<Vec<f64>> = memory.iter().map(|m| encode_tokens(params, &m.tokens)).collect();
        let entry_v: Vec<Vec<f64>> = memory.iter().map(|m| encode_traj(params, &m.phi)).collect();
        let (summary, alphas, rec) = summary_forward(params, config, &entry_u, &entry_v);
        let (h1, z) = context_forward(params, &summary);
        ContextGraph {
            tokens: tokens.to_vec(),
            cue,
            u,
            memory: memory.to_vec(),
            entry_u,
            entry_v,
            alphas,
            rec,
            summary,
            h1,
            z,
        }
    }

    pub fn backward(&self, params: &PolicyParams, config: &AgentConfig, du: &[f64], dz: &[f64], grad: &mut [f64]) {
        let l = &params.layout;
        let d = l.dims.embed;
        encode_tokens_backward(params, &self.tokens, du, grad);

        // g
        outer_add(&mut grad[l.g_w2.clone()], dz, &self.h1);
        for (g, v) in grad[l.g_b2.clone()].iter_mut().zip(dz) {
            *g += v;
        }
        let mut dh1 = vec![0.0; d];
        matvec_t_add(params.block(&l.g_w2), dz, &mut dh1);
        let da1: Vec<f64> = dh1.iter().zip(&self.h1).map(|(g, h)| g * (1.0 - h * h)).collect();
        outer_add(&mut grad[l.g_w1.clone()], &da1, &self.summary);
        for (g, v) in grad[l.g_b1.clone()].iter_mut().zip(&da1) {
            *g += v;
        }
        let mut dsummary = vec![0.0; 2 * d];
        matvec_t_add(params.block(&l.g_w1), &da1, &mut dsummary);

        let k = self.memory.len();
        let mut d_entry_u = vec![vec![0.0; d]; k];
        let mut d_entry_v = vec![vec![0.0; d]; k];
        match config.summary_mode {
            SummaryMode::Null => return,
            SummaryMode::Forgetting | SummaryMode::Average => {
                for (i, a) in self.alphas.iter().enumerate() {
                    for j in 0..d {
                        d_entry_u[i][j] = a * dsummary[j];
                        d_entry_v[i][j] = a * dsummary[d + j];
                    }
                }
            }
            SummaryMode::Recurrent => {
                let a = params.block(&l.rec_a);
                let b = params.block(&l.rec_b);
                let zero = vec![0.0; 2 * d];
                let mut dc = dsummary;
                for i in (0..k).rev() {
                    let c = &self.rec[i];
                    let prev = if i == 0 { &zero } else { &self.rec[i - 1] };
                    let da: Vec<f64> = dc.iter().zip(c).map(|(g, c)| g * (1.0 - c * c)).collect();
                    let x: Vec<f64> = self.entry_u[i].iter().chain(&self.entry_v[i]).copied().collect();
                    outer_add(&mut grad[l.rec_a.clone()], &da, prev);
                    outer_add(&mut grad[l.rec_b.clone()], &da, &x);
                    for (g, v) in grad[l.rec_bias.clone()].iter_mut().zip(&da) {
                        *g += v;
                    }
                    let mut dx = vec![0.0; 2 * d];
                    matvec_t_add(b, &da, &mut dx);
                    d_entry_u[i].copy_from_slice(&dx[..d]);
                    d_entry_v[i].copy_from_slice(&dx[d..]);
                    let mut next = vec![0.0; 2 * d];
                    matvec_t_add(a, &da, &mut next);
                    dc = next;
                }
            }
        }
        for (i, m) in self.memory.iter().enumerate() {
            encode_tokens_backward(params, &m.tokens, &d_entry_u[i], grad);
            outer_add(&mut grad[l.traj_projection.clone()], &d_entry_v[i], &m.phi);
        }
    }
}

/// Policy input vector.
pub fn policy_input(obs: &Observation, prev: PrevAction, u: &[f64], z: &[f64]) -> Vec<f64> {
    let v = obs.vocab_size;
    let mut h = Vec::with_capacity(2 * v + 4 + u.len() + z.len());
    h.extend(obs.here.iter().map(|&b| f64::from(u8::from(b))));
    h.extend(obs.visible().into_iter().map(|b| f64::from(u8::from(b))));
    let mut prev_hot = [0.0; 3];
    prev_hot[prev as usize] = 1.0;
    h.extend(prev_hot);
    h.extend_from_slice(u);
    h.extend_from_slice(z);
    h.push(1.0);
    h
}

/// Features of one candidate action. The last four entries ground the
/// BabyStep in the observation: target or mentioned landmarks here (for
/// stop) or in the move direction (for moves).
pub fn candidate_features(obs: &Observation, heading: u8, cue: &Cue, action: NavAction) -> Vec<f64> {
    let v = obs.vocab_size;
    let mut e = vec![0.0; 2 * v + 8];
    let count = |bits: &[bool]| cue.mentioned.iter().filter(|&&k| bits[k]).count() as f64;
    let has_target = |bits: &[bool]| f64::from(u8::from(cue.target.is_some_and(|k| bits[k])));
    match action {
        NavAction::Stop => {
            e[0] = 1.0;
            for (k, &b) in obs.here.iter().enumerate() {
                e[1 + k] = f64::from(u8::from(b));
            }
            e[4 + 2 * v] = has_target(&obs.here);
            e[5 + 2 * v] = count(&obs.here);
        }
        NavAction::MoveTo(j) => {
            let (h, el) = obs.neighbor_directions[&j];
            let bin = obs.direction(h, el);
            for (k, &b) in bin.iter().enumerate() {
                e[1 + v + k] = f64::from(u8::from(b));
            }
            let turn = (h as usize + HEADINGS - heading as usize) % HEADINGS;
            let angle = turn as f64 * 2.0 * PI / HEADINGS as f64;
            e[1 + 2 * v] = angle.cos();
            e[2 + 2 * v] = angle.sin();
            e[3 + 2 * v] = 1.0;
            e[6 + 2 * v] = has_target(bin);
            e[7 + 2 * v] = count(bin);
        }
    }
    e
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// One policy evaluation, cached for the backward pass.
#[derive(Clone, Debug)]
pub struct Decision {
    pub state: State,
    pub candidates: Vec<NavAction>,
    pub probs: Vec<f64>,
    h: Vec<f64>,
    features: Vec<Vec<f64>>,
}

impl Decision {
    pub fn forward(
        params: &PolicyParams,
        obs: &Observation,
        state: State,
        prev: PrevAction,
        u: &[f64],
        z: &[f64],
        cue: &Cue,
        candidates: Vec<NavAction>,
    ) -> Self {
        let h = policy_input(obs, prev, u, z);
        let mut q = vec![0.0; params.layout.dims.candidate()];
        matvec(params.block(&params.layout.action), &h, &mut q);
        let features: Vec<Vec<f64>> = candidates
            .iter()
            .map(|&a| candidate_features(obs, state.heading, cue, a))
            .collect();
        let scores: Vec<f64> = features
            .iter()
            .map(|e| e.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect();
        Decision { state, probs: softmax(&scores), candidates, h, features }
    }

    /// Backward from `dscores`, the loss gradient with respect to each
    /// candidate's score. Accumulates into `grad`, `du` and `dz`.
    pub fn backward(&self, params: &PolicyParams, dscores: &[f64], grad: &mut [f64], du: &mut [f64], dz: &mut [f64]) {
        let l = &params.layout;
        let mut dq = vec![0.0; l.dims.candidate()];
        for (e, &g) in self.features.iter().zip(dscores) {
            if g != 0.0 {
                for (o, x) in dq.iter_mut().zip(e) {
                    *o += g * x;
                }
            }
        }
        outer_add(&mut grad[l.action.clone()], &dq, &self.h);
        let mut dh = vec![0.0; self.h.len()];
        matvec_t_add(params.block(&l.action), &dq, &mut dh);
        let v = l.dims.landmarks;
        let d = l.dims.embed;
        let u_at = 2 * v + 3;
        for k in 0..d {
            du[k] += dh[u_at + k];
            dz[k] += dh[u_at + d + k];
        }
    }

    /// Gradient of `-log p[choice]` with respect to the scores, scaled.
    pub fn nll_dscores(&self, choice: usize, scale: f64) -> Vec<f64> {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| scale * (p - f64::from(u8::from(i == choice))))
            .collect()
    }
}

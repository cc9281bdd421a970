use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Omega, SummaryMode};
use crate::error::{Error, Result};
use crate::instruction::SegmenterMode;
use crate::metrics::{MetricConfig, DEFAULT_DTW_THRESHOLD, DEFAULT_SUCCESS_THRESHOLD};

/// What the agent treats as one unit of instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One BabyStep per segmenter output.
    Babystep,
    /// The whole instruction is a single step.
    Whole,
}

/// Where the path span of each BabyStep comes from during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentSource {
    /// Landmark model plus dynamic programming.
    Aligner,
    /// Gold segments recorded by the generator.
    Gold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Every knob of a training run, as one flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,

    pub embed_dim: usize,
    pub forget_gamma: f64,
    pub forget_omega: Omega,
    pub max_steps_per_babystep: usize,
    pub instr_token_cap: usize,
    pub summary_mode: SummaryMode,

    pub segmenter: SegmenterMode,
    pub granularity: Granularity,
    pub alignment: AlignmentSource,
    pub landmark_epochs: usize,
    pub landmark_lr: f64,

    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub il_iters: usize,
    pub il_batch_size: usize,
    pub lectures: usize,
    pub rl_iters_per_lecture: usize,
    pub lecture_batch_sizes: Vec<usize>,
    pub episodes_per_update: usize,
    pub discount: f64,
    /// Validation checkpoints are taken every this many RL iterations.
    pub eval_every: usize,

    pub success_threshold: f64,
    pub dtw_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let agent = AgentConfig::default();
        TrainConfig {
            seed: 0,
            embed_dim: agent.embed_dim,
            forget_gamma: agent.forget_gamma,
            forget_omega: agent.forget_omega,
            max_steps_per_babystep: agent.max_steps_per_babystep,
            instr_token_cap: agent.instr_token_cap,
            summary_mode: agent.summary_mode,
            segmenter: SegmenterMode::Babystep,
            granularity: Granularity::Babystep,
            alignment: AlignmentSource::Aligner,
            landmark_epochs: 200,
            landmark_lr: 1e-4,
            optimizer: OptimizerKind::Sgd,
            lr: 1e-4,
            weight_decay: 5e-4,
            il_iters: 2000,
            il_batch_size: 16,
            lectures: 4,
            rl_iters_per_lecture: 200,
            lecture_batch_sizes: vec![10, 6, 4, 4],
            episodes_per_update: 8,
            discount: 0.95,
            eval_every: 50,
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            dtw_threshold: DEFAULT_DTW_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            embed_dim: self.embed_dim,
            forget_gamma: self.forget_gamma,
            forget_omega: self.forget_omega,
            max_steps_per_babystep: self.max_steps_per_babystep,
            instr_token_cap: self.instr_token_cap,
            summary_mode: self.summary_mode,
        }
    }

    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig { success_threshold: self.success_threshold, dtw_threshold: self.dtw_threshold }
    }

    /// Batch size of lecture `k` (1-based); the last entry repeats.
    pub fn lecture_batch_size(&self, k: usize) -> usize {
        let i = (k.max(1) - 1).min(self.lecture_batch_sizes.len().saturating_sub(1));
        self.lecture_batch_sizes.get(i).copied().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.agent_config().validate()?;
        let positive = [
            ("lr", self.lr),
            ("landmark_lr", self.landmark_lr),
            ("discount", self.discount),
            ("success_threshold", self.success_threshold),
            ("dtw_threshold", self.dtw_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive (got {v})")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.discount > 1.0 {
            return Err(Error::Config("discount must be <= 1".into()));
        }
        if self.il_batch_size == 0 || self.episodes_per_update == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch sizes and eval_every must be >= 1".into()));
        }
        if self.lecture_batch_sizes.is_empty() || self.lecture_batch_sizes.contains(&0) {
            return Err(Error::Config("lecture_batch_sizes must be non-empty and positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

//! Seed-pinned synthetic benchmark and the cross-length transfer
//! experiment built on it.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate_agent, train_agent, Granularity, OptimizerKind, TrainConfig, TrainLog};
use crate::agent::{Agent, SummaryMode};
use crate::dataset::{build_length_suite, sample_split, world_map, DatasetSplit, Worlds, DEFAULT_JOIN_RADIUS};
use crate::error::{Error, Result};
use crate::instruction::Lexicon;
use crate::metrics::{Aggregate, MetricReport};
use crate::rng;
use crate::world::{generate_world, WorldGraph};

/// Shape of the frozen benchmark. Train, selection and test episodes live
/// in disjoint sets of worlds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub nodes: usize,
    pub landmarks: usize,
    pub connectivity: f64,
    pub train_worlds: usize,
    pub selection_worlds: usize,
    pub test_worlds: usize,
    pub min_hops: usize,
    pub max_hops: usize,
    /// Base episodes drawn per world before chaining.
    pub base_per_world: usize,
    pub train_size: usize,
    pub selection_size: usize,
    pub test_size: usize,
    pub train_factor: usize,
    pub test_factors: Vec<usize>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            seed: 0,
            nodes: 40,
            landmarks: 16,
            connectivity: 3.0,
            train_worlds: 4,
            selection_worlds: 2,
            test_worlds: 2,
            min_hops: 2,
            max_hops: 4,
            base_per_world: 200,
            train_size: 500,
            selection_size: 100,
            test_size: 100,
            train_factor: 2,
            test_factors: vec![2, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub worlds: Worlds,
    pub train: DatasetSplit,
    /// Checkpoint selection during the curriculum, at the training factor.
    pub selection: DatasetSplit,
    /// Held-out evaluation, one split per factor.
    pub test: BTreeMap<usize, DatasetSplit>,
}

fn make_worlds(config: &BenchmarkConfig, role: u64, count: usize) -> Result<Vec<WorldGraph>> {
    (0..count)
        .map(|i| {
            generate_world(
                rng::stream_id(&[config.seed, rng::tag::BENCHMARK, role, i as u64]),
                config.nodes,
                config.landmarks,
                config.connectivity,
            )
        })
        .collect()
}

/// Chains base episodes of every world to factor `k` and keeps the first
/// `size`, interleaving worlds so each contributes evenly.
fn factor_split(
    name: &str,
    worlds: &[WorldGraph],
    all: &Worlds,
    k: usize,
    size: usize,
    config: &BenchmarkConfig,
    lexicon: &Lexicon,
    role: u64,
) -> Result<DatasetSplit> {
    let mut per_world = Vec::new();
    for (w, world) in worlds.iter().enumerate() {
        let seed = rng::stream_id(&[config.seed, rng::tag::BENCHMARK, role, 1000 + w as u64]);
        let base = sample_split(
            &format!("{name}-w{w}"),
            world,
            config.base_per_world,
            seed,
            config.min_hops..=config.max_hops,
            lexicon,
        )?;
        let mut suite = build_length_suite(&base, &[k], all, DEFAULT_JOIN_RADIUS, seed)?;
        per_world.push(suite.remove(&k).expect("suite has the requested factor").episodes);
    }
    let mut episodes = Vec::with_capacity(size);
    let longest = per_world.iter().map(Vec::len).max().unwrap_or(0);
    'fill: for i in 0..longest {
        for eps in &per_world {
            if let Some(e) = eps.get(i) {
                episodes.push(e.clone());
                if episodes.len() == size {
                    break 'fill;
                }
            }
        }
    }
    if episodes.len() < size {
        return Err(Error::SamplingExhausted {
            attempts: longest * worlds.len(),
            reason: format!("only {} factor-{k} episodes for split {name}", episodes.len()),
        });
    }
    Ok(DatasetSplit::new(format!("{name}-x{k}"), episodes))
}

pub fn build_benchmark(config: &BenchmarkConfig, lexicon: &Lexicon) -> Result<Benchmark> {
    let train_w = make_worlds(config, 1, config.train_worlds)?;
    let select_w = make_worlds(config, 2, config.selection_worlds)?;
    let test_w = make_worlds(config, 3, config.test_worlds)?;
    let worlds = world_map(train_w.iter().chain(&select_w).chain(&test_w).cloned());
    let k = config.train_factor;
    let train = factor_split("train", &train_w, &worlds, k, config.train_size, config, lexicon, 1)?;
    let selection = factor_split("select", &select_w, &worlds, k, config.selection_size, config, lexicon, 2)?;
    let mut test = BTreeMap::new();
    for &f in &config.test_factors {
        test.insert(f, factor_split("test", &test_w, &worlds, f, config.test_size, config, lexicon, 3)?);
    }
    Ok(Benchmark { worlds, train, selection, test })
}

/// Training settings used on the benchmark: the default schedule with
/// Adam and a larger step so the desk-sized run moves.
pub fn benchmark_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        optimizer: OptimizerKind::Adam,
        lr: 1e-2,
        landmark_lr: 2.0,
        landmark_epochs: 1000,
        il_iters: 3000,
        rl_iters_per_lecture: 100,
        eval_every: 20,
        ..TrainConfig::default()
    }
}

/// The ablated agent: no memory, no curriculum, whole instructions, and the
/// same number of RL iterations and episodes spent in one lecture.
pub fn baseline_config(config: &TrainConfig) -> TrainConfig {
    let lectures = config.lectures.max(1);
    let episodes: usize = (1..=lectures).map(|k| config.lecture_batch_size(k)).sum();
    TrainConfig {
        summary_mode: SummaryMode::Null,
        granularity: Granularity::Whole,
        lectures: 1,
        rl_iters_per_lecture: config.rl_iters_per_lecture * lectures,
        lecture_batch_sizes: vec![(episodes as f64 / lectures as f64).round().max(1.0) as usize],
        ..config.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub split: String,
    pub factor: usize,
    pub report: Aggregate,
    pub baseline: Option<Aggregate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferResult {
    pub rows: Vec<TransferRow>,
    pub agent: Agent,
    pub log: TrainLog,
    pub baseline_agent: Option<Agent>,
    pub reports: Vec<MetricReport>,
}

impl TransferResult {
    /// One row per evaluation split: sr, cls, sdtw, then the baseline's.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let with_baseline = self.rows.iter().any(|r| r.baseline.is_some());
        let mut header = vec!["split", "factor", "sr", "cls", "sdtw"];
        if with_baseline {
            header.extend(["baseline_sr", "baseline_cls", "baseline_sdtw"]);
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.split.clone(),
                r.factor.to_string(),
                r.report.sr.to_string(),
                r.report.cls.to_string(),
                r.report.sdtw.to_string(),
            ];
            if let Some(b) = &r.baseline {
                rec.extend([b.sr.to_string(), b.cls.to_string(), b.sdtw.to_string()]);
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains on `train` and evaluates on every split of `evals`; optionally
/// does the same for a baseline configuration.
pub fn transfer_experiment(
    train: &DatasetSplit,
    selection: &DatasetSplit,
    evals: &BTreeMap<usize, DatasetSplit>,
    worlds: &Worlds,
    lexicon: &Lexicon,
    config: &TrainConfig,
    baseline: Option<&TrainConfig>,
) -> Result<TransferResult> {
    if evals.is_empty() {
        return Err(Error::Empty("no evaluation factors".into()));
    }
    let (agent, log) = train_agent(train, selection, worlds, lexicon, config)?;
    let baseline_agent = match baseline {
        Some(c) => Some(train_agent(train, selection, worlds, lexicon, c)?.0),
        None => None,
    };
    let lexicon = lexicon.clone().with_landmarks(&agent.landmark_vocab);
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (&factor, split) in evals {
        let report = evaluate_agent(&agent, split, worlds, &lexicon, config)?;
        let b = match (&baseline_agent, baseline) {
            (Some(a), Some(c)) => Some(evaluate_agent(a, split, worlds, &lexicon, c)?.aggregate),
            _ => None,
        };
        rows.push(TransferRow { split: split.name.clone(), factor, report: report.aggregate.clone(), baseline: b });
        reports.push(report);
    }
    Ok(TransferResult { rows, agent, log, baseline_agent, reports })
}

/// Transfer on the frozen benchmark from its training factor.
pub fn benchmark_transfer(
    bench: &Benchmark,
    lexicon: &Lexicon,
    config: &TrainConfig,
    baseline: Option<&TrainConfig>,
) -> Result<TransferResult> {
    transfer_experiment(&bench.train, &bench.selection, &bench.test, &bench.worlds, lexicon, config, baseline)
}

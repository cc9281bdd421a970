//! The `babywalk-lab` command line: data generation, segmentation,
//! alignment, training, evaluation and the transfer experiment. Every
//! command writes a `manifest.json` next to its outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::agent::Agent;
use crate::aligner::{align, shared_vocab, LandmarkModel};
use crate::dataset::{build_length_suite, load_worlds, sample_split, world_map, world_of, write_worlds, DatasetSplit, Worlds, DEFAULT_JOIN_RADIUS};
use crate::error::{Error, Result};
use crate::instruction::{segment, Lexicon, SegmenterMode};
use crate::rng;
use crate::training::benchmark::{baseline_config, build_benchmark, BenchmarkConfig};
use crate::training::benchmark::transfer_experiment;
use crate::training::{
    curriculum_from, evaluate_agent, fit_aligner, imitation_learn, length_buckets, prepare_episodes, AlignmentSource,
    Granularity, TrainConfig, TrainLog,
};
use crate::world::generate_world;

pub const LOG_ENV: &str = "BABYWALK_LAB_LOG";

#[derive(Parser, Debug)]
#[command(name = "babywalk-lab", version, about = "BabyStep navigation experiments on synthetic worlds")]
pub struct Cli {
    /// Training config (flat JSON); unknown keys are errors.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate worlds and a length suite of episodes.
    Gen(GenArgs),
    /// Attach BabySteps to every episode of a JSONL split.
    Segment(SegmentArgs),
    /// Attach aligned path spans to every episode of a JSONL split.
    Align(AlignArgs),
    /// Imitation learning followed by the curriculum.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Train on one length factor, evaluate on others.
    Transfer(TransferArgs),
}

fn parse_factor(s: &str) -> std::result::Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("length factors must be >= 1".into()),
        Ok(k) => Ok(k),
        Err(e) => Err(format!("bad factor {s:?}: {e}")),
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 40)]
    pub nodes: usize,
    #[arg(long, default_value_t = 16)]
    pub landmarks: usize,
    #[arg(long, default_value_t = 3.0)]
    pub connectivity: f64,
    #[arg(long, default_value_t = 1)]
    pub worlds: usize,
    /// Base episodes per world.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 2)]
    pub min_hops: usize,
    #[arg(long, default_value_t = 4)]
    pub max_hops: usize,
    #[arg(long, default_value = "1", value_delimiter = ',', value_parser = parse_factor)]
    pub factors: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "babystep")]
    pub mode: ModeArg,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Babystep,
    Sentence,
}

impl From<ModeArg> for SegmenterMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Babystep => SegmenterMode::Babystep,
            ModeArg::Sentence => SegmenterMode::Sentence,
        }
    }
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub worlds: PathBuf,
    /// Landmark model to use; trained on the input when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Split used to select curriculum checkpoints.
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub worlds: PathBuf,
    /// Overrides the number of lectures (0 = imitation only).
    #[arg(long)]
    pub lectures: Option<usize>,
    /// Continue from the last checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub worlds: PathBuf,
    /// Also report metrics by instruction-length bucket.
    #[arg(long)]
    pub buckets: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Benchmark shape (JSON); the seed comes from `--seed`.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub train_factor: usize,
    #[arg(long, default_value = "2,4", value_delimiter = ',', value_parser = parse_factor)]
    pub eval_factors: Vec<usize>,
    /// Also train and report the no-memory, no-curriculum baseline.
    #[arg(long)]
    pub with_baseline: bool,
}

/// Record of one command run. Rerunning the recorded arguments reproduces
/// the outputs; only the timestamps differ.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

struct Run {
    out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn new(cli: &Cli, command: &str, config: serde_json::Value, seed: u64) -> Result<Self> {
        fs::create_dir_all(&cli.out)?;
        Ok(Run {
            out: cli.out.clone(),
            manifest: RunManifest {
                command: command.into(),
                args: std::env::args().skip(1).collect(),
                config,
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                version: env!("CARGO_PKG_VERSION").into(),
                started_unix: now(),
                finished_unix: 0.0,
            },
        })
    }

    fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.display().to_string());
    }

    /// Writes `name` in the output directory via a temporary file.
    fn write(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.out.join(name);
        write_atomic(&path, f)?;
        self.manifest.outputs.push(name.to_string());
        Ok(path)
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.finished_unix = now();
        let path = self.out.join("manifest.json");
        write_atomic(&path, |w| {
            serde_json::to_writer_pretty(&mut *w, &self.manifest)?;
            writeln!(w)?;
            Ok(())
        })
    }
}

fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut c = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

/// Lexicon that knows the landmark names of `worlds`.
fn lexicon_for(worlds: &Worlds) -> Lexicon {
    let mut lex = Lexicon::default();
    for w in worlds.values() {
        lex = lex.with_landmarks(w.landmark_vocab());
    }
    lex
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Gen(a) => cmd_gen(&cli, a),
        Command::Segment(a) => cmd_segment(&cli, a),
        Command::Align(a) => cmd_align(&cli, a),
        Command::Train(a) => cmd_train(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Transfer(a) => cmd_transfer(&cli, a),
    }
}

#[derive(Serialize)]
struct GenManifestConfig<'a> {
    nodes: usize,
    landmarks: usize,
    connectivity: f64,
    worlds: usize,
    count: usize,
    min_hops: usize,
    max_hops: usize,
    factors: &'a [usize],
    join_radius: f64,
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let shape = GenManifestConfig {
        nodes: a.nodes,
        landmarks: a.landmarks,
        connectivity: a.connectivity,
        worlds: a.worlds,
        count: a.count,
        min_hops: a.min_hops,
        max_hops: a.max_hops,
        factors: &a.factors,
        join_radius: DEFAULT_JOIN_RADIUS,
    };
    let mut run = Run::new(cli, "gen", to_value(&shape)?, seed)?;
    let worlds: Vec<_> = (0..a.worlds)
        .map(|i| generate_world(rng::stream_id(&[seed, rng::tag::WORLD, i as u64]), a.nodes, a.landmarks, a.connectivity))
        .collect::<Result<_>>()?;
    let lexicon = Lexicon::default().with_landmarks(worlds[0].landmark_vocab());
    let mut base = Vec::new();
    for (i, w) in worlds.iter().enumerate() {
        let split = sample_split(
            &format!("w{i}"),
            w,
            a.count,
            rng::stream_id(&[seed, rng::tag::EPISODE, i as u64]),
            a.min_hops..=a.max_hops,
            &lexicon,
        )?;
        base.extend(split.episodes);
    }
    let base = DatasetSplit::new("split", base);
    let worlds = world_map(worlds);
    run.write("worlds.json", |w| write_worlds(&worlds, w))?;
    let suite = build_length_suite(&base, &a.factors, &worlds, DEFAULT_JOIN_RADIUS, seed)?;
    for (k, split) in &suite {
        run.write(&format!("x{k}.jsonl"), |w| split.write_jsonl(w))?;
        log::info!("factor {k}: {} episodes", split.len());
    }
    run.finish()
}

fn cmd_segment(cli: &Cli, a: &SegmentArgs) -> Result<()> {
    let mode: SegmenterMode = a.mode.into();
    let mut run = Run::new(cli, "segment", to_value(&mode)?, cli.seed.unwrap_or(0))?;
    run.input(&a.input);
    let mut split = DatasetSplit::load_jsonl(&a.input)?;
    let lexicon = Lexicon::default();
    for e in &mut split.episodes {
        e.babysteps = Some(segment(&e.instruction, &lexicon, mode));
        e.aligned_segments = None;
    }
    run.write(&file_name(&a.input), |w| split.write_jsonl(w))?;
    run.finish()
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "split.jsonl".into())
}

fn cmd_align(cli: &Cli, a: &AlignArgs) -> Result<()> {
    let config = load_config(cli)?;
    let mut run = Run::new(cli, "align", to_value(&config)?, config.seed)?;
    run.input(&a.input);
    run.input(&a.worlds);
    let worlds = load_worlds(&a.worlds)?;
    let mut split = DatasetSplit::load_jsonl(&a.input)?;
    let lexicon = lexicon_for(&worlds);
    for e in &mut split.episodes {
        if e.babysteps.is_none() {
            e.babysteps = Some(segment(&e.instruction, &lexicon, config.segmenter));
        }
    }
    let model = match &a.model {
        Some(p) => {
            run.input(p);
            LandmarkModel::read_json(File::open(p)?)?
        }
        None => {
            let m = fit_aligner(&split, &worlds, &lexicon, &config)?;
            run.write("landmark_model.json", |w| m.write_json(w))?;
            m
        }
    };
    for e in &mut split.episodes {
        let world = world_of(&worlds, &e.world_id)?;
        let steps = e.babysteps.as_ref().expect("segmented above");
        e.aligned_segments = match align(&model, world, &e.path, steps) {
            Ok(r) => Some(r.spans()),
            Err(Error::Infeasible { .. }) => {
                log::warn!("episode {}: more steps than states; left unaligned", e.episode_id);
                None
            }
            Err(err) => return Err(err),
        };
    }
    run.write(&file_name(&a.input), |w| split.write_jsonl(w))?;
    run.finish()
}

#[derive(Serialize, serde::Deserialize)]
struct Progress {
    lecture: usize,
    log: TrainLog,
}

/// Writes `{name}.ckpt.json` and `{name}.progress.json`; returns the names.
fn save_progress(dir: &Path, name: &str, agent: &Agent, log: &TrainLog, lecture: usize) -> Result<[String; 2]> {
    let ckpt = format!("{name}.ckpt.json");
    let prog = format!("{name}.progress.json");
    write_atomic(&dir.join(&ckpt), |w| agent.write_checkpoint(w))?;
    write_atomic(&dir.join(&prog), |w| {
        serde_json::to_writer(w, &Progress { lecture, log: log.clone() })?;
        Ok(())
    })?;
    Ok([ckpt, prog])
}

/// Latest checkpoint in `dir`: lecture checkpoints beat the imitation one.
fn latest_checkpoint(dir: &Path, lectures: usize) -> Result<Option<(usize, Agent, TrainLog)>> {
    let names = (1..=lectures).rev().map(|k| format!("lecture-{k}")).chain(["imitation".to_string()]);
    for name in names {
        let ckpt = dir.join(format!("{name}.ckpt.json"));
        let prog = dir.join(format!("{name}.progress.json"));
        if ckpt.exists() && prog.exists() {
            let p: Progress = serde_json::from_reader(File::open(prog)?)?;
            return Ok(Some((p.lecture, Agent::load(ckpt)?, p.log)));
        }
    }
    Ok(None)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut config = load_config(cli)?;
    if let Some(l) = a.lectures {
        config.lectures = l;
    }
    let mut run = Run::new(cli, "train", to_value(&config)?, config.seed)?;
    for p in [&a.train, &a.val, &a.worlds] {
        run.input(p);
    }
    let worlds = load_worlds(&a.worlds)?;
    let train = DatasetSplit::load_jsonl(&a.train)?;
    let val = DatasetSplit::load_jsonl(&a.val)?;
    let vocab = shared_vocab(&train.episodes, &worlds)?;
    let lexicon = Lexicon::default().with_landmarks(&vocab);
    let model = match (config.granularity, config.alignment) {
        (Granularity::Babystep, AlignmentSource::Aligner) => Some(fit_aligner(&train, &worlds, &lexicon, &config)?),
        _ => None,
    };
    let data = prepare_episodes(&train, &worlds, &lexicon, &config, model.as_ref())?;
    let resumed = if a.resume { latest_checkpoint(&run.out, config.lectures)? } else { None };
    let (start, agent, mut log) = match resumed {
        Some((lecture, agent, log)) => {
            log::info!("resuming after lecture {lecture}");
            (lecture + 1, agent, log)
        }
        None => {
            let fresh = Agent::new(config.agent_config(), &lexicon, &vocab, config.seed)?;
            let (agent, log) = imitation_learn(&fresh, &data, &worlds, &config)?;
            let names = save_progress(&run.out, "imitation", &agent, &log, 0)?;
            run.manifest.outputs.extend(names);
            (1, agent, log)
        }
    };
    let dir = run.out.clone();
    let mut so_far = log.clone();
    let mut written = Vec::new();
    let (agent, rl_log) = curriculum_from(&agent, &data, &val, &worlds, &lexicon, &config, start, &mut |best, record| {
        so_far.lectures.push(record.clone());
        written.extend(save_progress(&dir, &format!("lecture-{}", record.lecture), best, &so_far, record.lecture)?);
        Ok(())
    })?;
    run.manifest.outputs.extend(written);
    log.extend(rl_log);
    run.write("agent.json", |w| agent.write_checkpoint(w))?;
    run.write("train_log.csv", |w| log.write_csv(w))?;
    run.write("lectures.csv", |w| log.write_lectures_csv(w))?;
    run.finish()
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let config = load_config(cli)?;
    let mut run = Run::new(cli, "eval", to_value(&config)?, config.seed)?;
    for p in [&a.checkpoint, &a.split, &a.worlds] {
        run.input(p);
    }
    let agent = Agent::load(&a.checkpoint)?;
    let worlds = load_worlds(&a.worlds)?;
    let split = DatasetSplit::load_jsonl(&a.split)?;
    let lexicon = Lexicon::default().with_landmarks(&agent.landmark_vocab);
    let report = evaluate_agent(&agent, &split, &worlds, &lexicon, &config)?;
    run.write("report.csv", |w| report.write_csv(w))?;
    run.write("aggregate.json", |w| {
        w.write_all(report.aggregate_json()?.as_bytes())?;
        Ok(())
    })?;
    if let Some(n) = a.buckets {
        let buckets = length_buckets(&split, &report, n)?;
        run.write("buckets.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            for b in &buckets {
                c.serialize(b)?;
            }
            c.flush()?;
            Ok(())
        })?;
    }
    run.finish()
}

fn cmd_transfer(cli: &Cli, a: &TransferArgs) -> Result<()> {
    let config = load_config(cli)?;
    let mut shape = match &a.benchmark {
        Some(p) => serde_json::from_reader(File::open(p)?).map_err(|e| Error::Config(e.to_string()))?,
        None => BenchmarkConfig::default(),
    };
    shape.seed = config.seed;
    shape.train_factor = a.train_factor;
    shape.test_factors = a.eval_factors.clone();
    #[derive(Serialize)]
    struct TransferManifestConfig<'a> {
        train: &'a TrainConfig,
        benchmark: &'a BenchmarkConfig,
        with_baseline: bool,
    }
    let mc = TransferManifestConfig { train: &config, benchmark: &shape, with_baseline: a.with_baseline };
    let mut run = Run::new(cli, "transfer", to_value(&mc)?, config.seed)?;
    let lexicon = Lexicon::default();
    let bench = build_benchmark(&shape, &lexicon)?;
    let baseline = a.with_baseline.then(|| baseline_config(&config));
    let result = transfer_experiment(
        &bench.train,
        &bench.selection,
        &bench.test,
        &bench.worlds,
        &lexicon,
        &config,
        baseline.as_ref(),
    )?;
    run.write("transfer.csv", |w| result.write_csv(w))?;
    run.write("agent.json", |w| result.agent.write_checkpoint(w))?;
    run.write("train_log.csv", |w| result.log.write_csv(w))?;
    run.finish()
}

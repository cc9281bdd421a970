//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! cargo test --release --test acceptance

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::{Range, RangeInclusive};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use babywalk_lab::agent::{forgetting_weights, Agent, Cue, Decision, Omega, PrevAction, SummaryMode};
use babywalk_lab::aligner::{align, align_scores, brute_force_align, brute_force_scores, LandmarkModel};
use babywalk_lab::dataset::sample_expert_episode;
use babywalk_lab::instruction::{segment, BabyStep, Lexicon, SegmenterMode};
use babywalk_lab::metrics::{cls, dtw, ndtw, sdtw, spl, success, Distance, PathPair, Scaled};
use babywalk_lab::rng;
use babywalk_lab::training::benchmark::{baseline_config, benchmark_train_config, build_benchmark, BenchmarkConfig};
use babywalk_lab::training::{evaluate_agent, fidelity_reward, imitation_loss, train_agent, train_phases};
use babywalk_lab::world::{generate_world, NodeId, State, WorldGraph};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_walk(world: &WorldGraph, rng: &mut ChaCha8Rng, lens: RangeInclusive<usize>) -> Vec<NodeId> {
    let len = rng.gen_range(lens);
    let mut path = vec![rng.gen_range(0..world.node_count())];
    while path.len() < len {
        let nb = world.neighbors(*path.last().unwrap());
        path.push(nb[rng.gen_range(0..nb.len())]);
    }
    path
}

fn worlds(count: usize, nodes: usize) -> Vec<WorldGraph> {
    (0..count).map(|i| generate_world(100 + i as u64, nodes, 12, 3.0).unwrap()).collect()
}

// 1
fn metric_identities() -> Outcome {
    let ws = worlds(5, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (thr, dthr) = (3.0, 3.0);
    let mut worst_scale: f64 = 0.0;
    for i in 0..1000 {
        let w = &ws[i % ws.len()];
        let p = random_walk(w, &mut rng, 1..=11);
        let r = random_walk(w, &mut rng, 1..=11);
        let same = PathPair::new(&p, &p, w);
        check((ndtw(&same, dthr) - 1.0).abs() <= 1e-9, || format!("ndtw(P,P) != 1 for {p:?}"))?;
        let rr = PathPair::new(&r, &r, w);
        check((cls(&rr, dthr) - 1.0).abs() <= 1e-9, || format!("cls(R,R) != 1 for {r:?}"))?;
        let pair = PathPair::new(&p, &r, w);
        let (sr, nd, sd, sp) = (success(&pair, thr), ndtw(&pair, dthr), sdtw(&pair, thr, dthr), spl(&pair, thr));
        check(sd <= nd.min(sr) + 1e-12, || format!("sdtw {sd} > min(ndtw {nd}, sr {sr})"))?;
        check(sp <= sr + 1e-12, || format!("spl {sp} > sr {sr}"))?;
        let c = 0.25 + 4.0 * rng.gen::<f64>();
        let scaled = Scaled { inner: w, factor: c };
        let sp_pair = PathPair::new(&p, &r, &scaled);
        let diffs = [
            success(&sp_pair, thr * c) - sr,
            ndtw(&sp_pair, dthr * c) - nd,
            sdtw(&sp_pair, thr * c, dthr * c) - sd,
            spl(&sp_pair, thr * c) - sp,
            cls(&sp_pair, dthr * c) - cls(&pair, dthr),
        ];
        for d in diffs {
            worst_scale = worst_scale.max(d.abs());
        }
    }
    check(worst_scale <= 1e-9, || format!("scale invariance off by {worst_scale:e}"))?;
    Ok(format!("1000 pairs, worst scale deviation {worst_scale:.1e}"))
}

/// Minimum cost over every monotone alignment, each summed from the start.
fn exhaustive_dtw(p: &[NodeId], r: &[NodeId], d: &dyn Distance) -> f64 {
    fn walk(i: usize, j: usize, acc: f64, p: &[NodeId], r: &[NodeId], d: &dyn Distance, best: &mut f64) {
        let acc = acc + d.distance(p[i], r[j]);
        if i + 1 == p.len() && j + 1 == r.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < p.len() {
            walk(i + 1, j, acc, p, r, d, best);
        }
        if j + 1 < r.len() {
            walk(i, j + 1, acc, p, r, d, best);
        }
        if i + 1 < p.len() && j + 1 < r.len() {
            walk(i + 1, j + 1, acc, p, r, d, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(0, 0, 0.0, p, r, d, &mut best);
    best
}

// 2
fn ndtw_oracle() -> Outcome {
    let ws = worlds(3, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..500 {
        let w = &ws[i % ws.len()];
        let p = random_walk(w, &mut rng, 1..=6);
        let r = random_walk(w, &mut rng, 1..=6);
        let cost = exhaustive_dtw(&p, &r, w);
        check(dtw(&p, &r, w) == cost, || format!("dtw {} vs oracle {cost} on {p:?} {r:?}", dtw(&p, &r, w)))?;
        let oracle = (-cost / (r.len() as f64 * 3.0)).exp();
        check(ndtw(&PathPair::new(&p, &r, w), 3.0) == oracle, || format!("ndtw mismatch on {p:?} {r:?}"))?;
    }
    Ok("500 pairs, exact".into())
}

// 3
fn alignment_oracle() -> Outcome {
    let ws = worlds(3, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..500 {
        let w = &ws[i % ws.len()];
        let vocab = w.landmark_vocab().to_vec();
        let model = LandmarkModel::init(vocab.clone(), i as u64);
        let n = rng.gen_range(1..=14);
        let m = rng.gen_range(1..=5.min(n));
        let path = random_walk(w, &mut rng, n..=n);
        let steps: Vec<BabyStep> = (0..m)
            .map(|j| {
                let k = rng.gen_range(0..3);
                BabyStep {
                    sentence_span: j..j + 1,
                    text: String::new(),
                    landmarks: (0..k).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect(),
                    verbs: Vec::new(),
                }
            })
            .collect();
        let dp = align(&model, w, &path, &steps).map_err(|e| e.to_string())?;
        let bf = brute_force_align(&model, w, &path, &steps).map_err(|e| e.to_string())?;
        check(dp.boundaries == bf.boundaries && dp.potential == bf.potential, || {
            format!("instance {i}: {:?}/{} vs {:?}/{}", dp.boundaries, dp.potential, bf.boundaries, bf.potential)
        })?;
        // small integer scores force ties through the tie-break
        let psi: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.gen_range(0..3) as f64).collect()).collect();
        let dp = align_scores(&psi, m, false).map_err(|e| e.to_string())?;
        let bf = brute_force_scores(&psi, m).map_err(|e| e.to_string())?;
        check(dp.boundaries == bf.boundaries && dp.potential == bf.potential, || {
            format!("tied instance {i}: {:?} vs {:?}", dp.boundaries, bf.boundaries)
        })?;
    }
    Ok("500 model instances plus 500 tied score tables, exact".into())
}

// 4
fn forgetting() -> Outcome {
    let mut worst: f64 = 0.0;
    for gamma in [0.0, 0.05, 0.5, 5.0] {
        for count in 1..=64 {
            let a = forgetting_weights(count, gamma, Omega::Identity);
            check(a.len() == count, || "wrong length".into())?;
            worst = worst.max((a.iter().sum::<f64>() - 1.0).abs());
            if gamma == 0.0 {
                check(a.iter().all(|&x| x == 1.0 / count as f64), || format!("gamma 0 not uniform at {count}"))?;
            }
        }
    }
    check(worst <= 1e-12, || format!("sum off by {worst:e}"))?;
    let a = forgetting_weights(3, 0.5, Omega::Identity);
    let expected = [0.1863, 0.3072, 0.5065];
    for (x, e) in a.iter().zip(expected) {
        check((x - e).abs() <= 1e-4, || format!("3-entry example {a:?}"))?;
    }
    Ok(format!("worst sum error {worst:.1e}; example {:.4?}", a))
}

fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
}

// 5
fn gradient_checks() -> Outcome {
    let w = common::tri();
    let ep = common::two_step();
    let modes = [SummaryMode::Forgetting, SummaryMode::Average, SummaryMode::Recurrent, SummaryMode::Null];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    let (mut worst_action, mut worst_il): (f64, f64) = (0.0, 0.0);
    for point in 0..20 {
        let mut agent = common::agent(modes[point % modes.len()], 4, 50 + point as u64);
        let scale = 1.0 + 9.0 * rng.gen::<f64>();
        for v in &mut agent.params.values {
            *v *= scale;
        }

        // action distribution: -log p[choice] against the action block, u and z
        let d = agent.config.embed_dim;
        let state = State { node: rng.gen_range(0..3), heading: rng.gen_range(0..12), ..State::at(0) };
        let prev = [PrevAction::None, PrevAction::Stop, PrevAction::Move][rng.gen_range(0..3)];
        let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cue = Cue { target: Some(rng.gen_range(0..2)), mentioned: vec![0, 1] };
        let candidates = w.navigable_actions(state).unwrap();
        let choice = rng.gen_range(0..candidates.len());
        let nll = |a: &Agent, u: &[f64], z: &[f64]| -> f64 {
            -a.action_distribution(&w, state, prev, u, z, &cue, &candidates).unwrap()[choice].ln()
        };
        let obs = w.observe(state).unwrap();
        let dec = Decision::forward(&agent.params, obs, state, prev, &u, &z, &cue, candidates.clone());
        let mut grad = vec![0.0; agent.params.len()];
        let (mut du, mut dz) = (vec![0.0; d], vec![0.0; d]);
        dec.backward(&agent.params, &dec.nll_dscores(choice, 1.0), &mut grad, &mut du, &mut dz);
        for i in agent.params.layout.action.clone() {
            let mut a = agent.clone();
            a.params.values[i] += h;
            let up = nll(&a, &u, &z);
            a.params.values[i] -= 2.0 * h;
            let down = nll(&a, &u, &z);
            worst_action = worst_action.max(rel_err((up - down) / (2.0 * h), grad[i]));
        }
        for k in 0..d {
            let (mut up_u, mut dn_u) = (u.clone(), u.clone());
            up_u[k] += h;
            dn_u[k] -= h;
            worst_action = worst_action.max(rel_err((nll(&agent, &up_u, &z) - nll(&agent, &dn_u, &z)) / (2.0 * h), du[k]));
            let (mut up_z, mut dn_z) = (z.clone(), z.clone());
            up_z[k] += h;
            dn_z[k] -= h;
            worst_action = worst_action.max(rel_err((nll(&agent, &u, &up_z) - nll(&agent, &u, &dn_z)) / (2.0 * h), dz[k]));
        }

        // imitation loss over every parameter, replaying the sampled actions
        let m = point % 2;
        let mut r = rng::stream(point as u64, &[0]);
        let base = imitation_loss(&agent, &w, &ep, m, None, &mut r).map_err(|e| e.to_string())?;
        for i in 0..agent.params.len() {
            let mut a = agent.clone();
            a.params.values[i] += h;
            let up = imitation_loss(&a, &w, &ep, m, Some(&base.choices), &mut r).unwrap().loss;
            a.params.values[i] -= 2.0 * h;
            let down = imitation_loss(&a, &w, &ep, m, Some(&base.choices), &mut r).unwrap().loss;
            worst_il = worst_il.max(rel_err((up - down) / (2.0 * h), base.grad[i]));
        }
    }
    check(worst_action < 1e-4 && worst_il < 1e-4, || {
        format!("worst relative error: action {worst_action:.1e}, imitation {worst_il:.1e}")
    })?;
    Ok(format!("20 points, worst relative error action {worst_action:.1e}, imitation {worst_il:.1e}"))
}

/// `(text, expected sentence spans, expected landmarks per step if checked)`.
type Fixture = (&'static str, &'static [Range<usize>], Option<&'static [&'static [&'static str]]>);

const CORPUS: &[Fixture] = &[
    ("Turn left and walk past the sofa. Stop at the kitchen.", &[0..2], None),
    ("Walk past the sofa. Walk to the table.", &[0..1, 1..2], Some(&[&["sofa"], &["table"]])),
    ("Ok. Walk to the table.", &[0..2], None),
    ("Turn left. Walk to the lamp.", &[0..2], None),
    ("Turn around. Go to the sofa.", &[0..2], None),
    ("Walk to the sofa. Turn right.", &[0..2], None),
    ("Veer right. Turn left. Walk to the sofa.", &[0..3], None),
    ("And then. Walk to the table.", &[0..2], None),
    ("The end. Walk to the table.", &[0..2], Some(&[&["table"]])),
    ("Make your way. Go to the sofa.", &[0..2], None),
    ("Face the lamp. Walk to the table.", &[0..1, 1..2], Some(&[&["lamp"], &["table"]])),
    ("Walk to the left side of the sofa.", &[0..1], Some(&[&["sofa"]])),
    ("Walk to the sofas. Go to the lamps.", &[0..1, 1..2], Some(&[&["sofa"], &["lamp"]])),
    ("Walk to the sofa. Wait there.", &[0..2], None),
    ("Go to the lamp. You will see the sofa.", &[0..2], None),
    ("Go to the sofa. There is a lamp.", &[0..2], None),
    ("Continue straight. Stop.", &[0..2], None),
    ("Walk to the sofa. Stop. Wait.", &[0..3], None),
    ("Stop at the sofa. Walk to the lamp.", &[0..2], None),
    ("You will see the lamp. Walk to the sofa.", &[0..2], None),
    ("Remain by the door. Walk to the sofa.", &[0..2], None),
    ("Walk to the sofa. Go to the table. Stop at the lamp.", &[0..1, 1..3], None),
    ("Walk to the sofa. Wait. Go to the lamp.", &[0..2, 2..3], None),
    ("With the sofa on your left. Walk to the lamp. Go into the kitchen.", &[0..2, 2..3], None),
    ("Facing the lamp. Walk forward. Go to the table.", &[0..2, 2..3], None),
    ("Go to the sofa. With the lamp ahead.", &[0..2], None),
    ("Walk to the table. Ok. Go to the sofa.", &[0..1, 1..3], None),
    ("Ok. Ok. Walk to the table.", &[0..3], None),
    ("Thanks. Done.", &[0..2], None),
    (
        "Walk to the sofa. Go to the table. Go to the lamp. Walk into the kitchen.",
        &[0..1, 1..2, 2..3, 3..4],
        Some(&[&["sofa"], &["table"], &["lamp"], &["kitchen"]]),
    ),
    ("WALK TO THE SOFA. Go to the lamp.", &[0..1, 1..2], None),
    ("Walk to the sofa", &[0..1], None),
    ("", &[], None),
];

// 6
fn segmenter_fixtures() -> Outcome {
    let lex = Lexicon::default();
    for (text, spans, landmarks) in CORPUS {
        let steps = segment(text, &lex, SegmenterMode::Babystep);
        let got: Vec<Range<usize>> = steps.iter().map(|s| s.sentence_span.clone()).collect();
        check(got == *spans, || format!("{text:?}: {got:?}, expected {spans:?}"))?;
        if let Some(expected) = landmarks {
            let got: Vec<Vec<String>> = steps.iter().map(|s| s.landmarks.clone()).collect();
            check(got == *expected, || format!("{text:?}: landmarks {got:?}, expected {expected:?}"))?;
        }
        let sentences = spans.last().map_or(0, |s| s.end);
        let per = segment(text, &lex, SegmenterMode::Sentence);
        let got: Vec<Range<usize>> = per.iter().map(|s| s.sentence_span.clone()).collect();
        let expected: Vec<Range<usize>> = (0..sentences).map(|i| i..i + 1).collect();
        check(got == expected, || format!("{text:?} in sentence mode: {got:?}"))?;
    }
    Ok(format!("{} instructions, both modes", CORPUS.len()))
}

// 7
fn reward_contract() -> Outcome {
    let ws = worlds(4, 40);
    let lex = Lexicon::default().with_landmarks(ws[0].landmark_vocab());
    let metric = Default::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..100 {
        let w = &ws[i % ws.len()];
        let e = sample_expert_episode(w, i as u64, 2..=6, &lex).map_err(|e| e.to_string())?;
        let mut rollout = vec![e.path[0]];
        for _ in 0..rng.gen_range(0..8) {
            let nb = w.neighbors(*rollout.last().unwrap());
            rollout.push(nb[rng.gen_range(0..nb.len())]);
        }
        let last = rollout.len() - 1;
        for t in 0..last {
            let r = fidelity_reward(w, &e.path, &rollout[..=t], t, last, &metric);
            check(r == 0.0, || format!("episode {i}: reward {r} at non-terminal step {t}"))?;
        }
        let pair = PathPair::new(&rollout, &e.path, w);
        let expected = success(&pair, 3.0) + cls(&pair, 3.0);
        let r = fidelity_reward(w, &e.path, &rollout, last, last, &metric);
        check(r == expected, || format!("episode {i}: terminal reward {r}, expected {expected}"))?;
        let perfect = fidelity_reward(w, &e.path, &e.path, e.path.len() - 1, e.path.len() - 1, &metric);
        check(perfect == 2.0, || format!("episode {i}: perfect rollout scores {perfect}"))?;
    }
    Ok("100 episodes".into())
}

struct SeedRun {
    il_x2: f64,
    crl_x2: f64,
    crl_x4: (f64, f64),
    base_x4: (f64, f64),
    main_time: Duration,
    total_time: Duration,
}

fn benchmark_runs() -> Result<Vec<SeedRun>, String> {
    let lex = Lexicon::default();
    let mut runs = Vec::new();
    for seed in 0..3u64 {
        let t = Instant::now();
        let bench = build_benchmark(&BenchmarkConfig { seed, ..Default::default() }, &lex).map_err(|e| e.to_string())?;
        let config = benchmark_train_config(seed);
        let out = train_phases(&bench.train, &bench.selection, &bench.worlds, &lex, &config).map_err(|e| e.to_string())?;
        let eval = |a: &Agent, k: usize, c| evaluate_agent(a, &bench.test[&k], &bench.worlds, &lex, c).unwrap().aggregate;
        let il_x2 = eval(&out.imitation, 2, &config).sdtw;
        let crl_x2 = eval(&out.agent, 2, &config).sdtw;
        let x4 = eval(&out.agent, 4, &config);
        let main_time = t.elapsed();
        let bc = baseline_config(&config);
        let (base, _) = train_agent(&bench.train, &bench.selection, &bench.worlds, &lex, &bc).map_err(|e| e.to_string())?;
        let b4 = eval(&base, 4, &bc);
        runs.push(SeedRun {
            il_x2,
            crl_x2,
            crl_x4: (x4.sdtw, x4.cls),
            base_x4: (b4.sdtw, b4.cls),
            main_time,
            total_time: t.elapsed(),
        });
    }
    Ok(runs)
}

// 8
fn curriculum_trend(runs: &[SeedRun]) -> Outcome {
    let mut detail = Vec::new();
    let mut wins = 0;
    for (seed, r) in runs.iter().enumerate() {
        let gain = (r.crl_x2 - r.il_x2) / r.il_x2;
        if r.crl_x2 > r.il_x2 && gain >= 0.10 {
            wins += 1;
        }
        detail.push(format!("seed {seed}: IL {:.3} -> CRL {:.3} ({:+.0}%)", r.il_x2, r.crl_x2, 100.0 * gain));
    }
    let time: Duration = runs.iter().map(|r| r.main_time).sum();
    check(time < Duration::from_secs(15 * 60), || format!("took {time:?}"))?;
    let detail = detail.join("; ");
    check(wins >= 2, || format!("{wins}/3 seeds: {detail}"))?;
    Ok(format!("{wins}/3 seeds; {detail}"))
}

// 9
fn length_generalization(runs: &[SeedRun]) -> Outcome {
    let mut detail = Vec::new();
    let mut wins = 0;
    for (seed, r) in runs.iter().enumerate() {
        if r.crl_x4.0 > r.base_x4.0 && r.crl_x4.1 > r.base_x4.1 {
            wins += 1;
        }
        detail.push(format!(
            "seed {seed}: sdtw {:.3} vs {:.3}, cls {:.3} vs {:.3}",
            r.crl_x4.0, r.base_x4.0, r.crl_x4.1, r.base_x4.1
        ));
    }
    let time: Duration = runs.iter().map(|r| r.total_time).sum();
    check(time < Duration::from_secs(20 * 60), || format!("took {time:?}"))?;
    let detail = detail.join("; ");
    check(wins >= 2, || format!("{wins}/3 seeds: {detail}"))?;
    Ok(format!("{wins}/3 seeds; {detail}"))
}

const TINY_TRAIN: &str = r#"{"embed_dim": 8, "landmark_epochs": 5, "il_iters": 20, "il_batch_size": 4,
  "lectures": 2, "rl_iters_per_lecture": 4, "eval_every": 2, "lecture_batch_sizes": [2], "episodes_per_update": 2}"#;

const TINY_BENCH: &str = r#"{"nodes": 20, "landmarks": 8, "train_worlds": 1, "selection_worlds": 1, "test_worlds": 1,
  "base_per_world": 60, "train_size": 12, "selection_size": 6, "test_size": 6}"#;

const CLI_RUNS: &[&[&str]] = &[
    &["gen", "--out", "data", "--nodes", "20", "--landmarks", "8", "--count", "30", "--factors", "1,2"],
    &["segment", "--out", "seg", "--input", "data/x1.jsonl"],
    &["align", "--out", "aligned", "--config", "tiny.json", "--input", "data/x1.jsonl", "--worlds", "data/worlds.json"],
    &["train", "--out", "run", "--config", "tiny.json", "--train", "data/x2.jsonl", "--val", "data/x2.jsonl", "--worlds", "data/worlds.json"],
    &["eval", "--out", "ev", "--checkpoint", "run/agent.json", "--split", "data/x2.jsonl", "--worlds", "data/worlds.json", "--buckets", "3"],
    &["transfer", "--out", "tr", "--config", "tiny.json", "--benchmark", "bench.json", "--with-baseline"],
];

fn run_cli(dir: &Path) -> Result<(), String> {
    std::fs::write(dir.join("tiny.json"), TINY_TRAIN).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("bench.json"), TINY_BENCH).map_err(|e| e.to_string())?;
    for args in CLI_RUNS {
        let out = Command::new(env!("CARGO_BIN_EXE_babywalk-lab"))
            .current_dir(dir)
            .args(["--threads", "1", "--seed", "7"])
            .args(*args)
            .output()
            .map_err(|e| e.to_string())?;
        check(out.status.success(), || format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    }
    Ok(())
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["data", "seg", "aligned", "run", "ev", "tr"] {
        for entry in std::fs::read_dir(dir.join(sub)).unwrap() {
            let p = entry.unwrap().path();
            let name = format!("{sub}/{}", p.file_name().unwrap().to_string_lossy());
            let mut bytes = std::fs::read(&p).unwrap();
            if name.ends_with("manifest.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                let o = v.as_object_mut().unwrap();
                o.remove("started_unix");
                o.remove("finished_unix");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(name, bytes);
        }
    }
    out
}

// 10
fn cli_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_cli(a.path())?;
    run_cli(b.path())?;
    let (fa, fb) = (files(a.path()), files(b.path()));
    check(fa.keys().eq(fb.keys()), || format!("different file sets: {:?} vs {:?}", fa.keys(), fb.keys()))?;
    for (name, bytes) in &fa {
        check(fb[name] == *bytes, || format!("{name} differs between reruns"))?;
    }
    let ckpts = fa.keys().filter(|n| n.ends_with(".ckpt.json") || n.ends_with("agent.json")).count();
    Ok(format!("{} commands, {} files identical ({ckpts} checkpoints)", CLI_RUNS.len(), fa.len()))
}

fn main() {
    let out = std::io::stdout();
    let mut out = out.lock();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, t: Instant, r: Outcome, limit: Option<u64>| {
        let elapsed = t.elapsed();
        let r = match (r, limit) {
            (Ok(msg), Some(s)) if elapsed > Duration::from_secs(s) => Err(format!("{msg}; over the {s}s budget")),
            (r, _) => r,
        };
        let (tag, msg) = match r {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failed += 1;
                ("FAIL", m)
            }
        };
        writeln!(out, "{tag} [{n:>2}] {name}: {msg} ({:.1}s)", elapsed.as_secs_f64()).unwrap();
        out.flush().unwrap();
    };
    let t = Instant::now();
    report(1, "metric identities", t, metric_identities(), Some(10));
    let t = Instant::now();
    report(2, "nDTW oracle", t, ndtw_oracle(), Some(30));
    let t = Instant::now();
    report(3, "alignment oracle", t, alignment_oracle(), Some(30));
    let t = Instant::now();
    report(4, "forgetting weights", t, forgetting(), None);
    let t = Instant::now();
    report(5, "gradient checks", t, gradient_checks(), Some(60));
    let t = Instant::now();
    report(6, "segmenter fixtures", t, segmenter_fixtures(), None);
    let t = Instant::now();
    report(7, "reward contract", t, reward_contract(), None);
    let t = Instant::now();
    match benchmark_runs() {
        Ok(runs) => {
            report(8, "curriculum trend", t, curriculum_trend(&runs), None);
            report(9, "length generalization", t, length_generalization(&runs), None);
        }
        Err(e) => {
            report(8, "curriculum trend", t, Err(e.clone()), None);
            report(9, "length generalization", t, Err(e), None);
        }
    }
    let t = Instant::now();
    report(10, "CLI determinism", t, cli_determinism(), None);
    drop(report);
    if failed > 0 {
        writeln!(std::io::stdout(), "{failed} criteria failed").unwrap();
        std::process::exit(1);
    }
}

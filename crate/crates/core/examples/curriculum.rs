//! Runs the frozen benchmark for one seed and prints imitation-only,
//! curriculum and baseline scores on every test factor.
//!
//! cargo run --release --example curriculum -- 0

use std::time::Instant;

use babywalk_lab::instruction::Lexicon;
use babywalk_lab::training::benchmark::{baseline_config, benchmark_train_config, build_benchmark, BenchmarkConfig};
use babywalk_lab::training::{evaluate_agent, train_phases};

fn main() -> babywalk_lab::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let lexicon = Lexicon::default();
    let t = Instant::now();
    let bench = build_benchmark(&BenchmarkConfig { seed, ..Default::default() }, &lexicon)?;
    let config = benchmark_train_config(seed);
    let out = train_phases(&bench.train, &bench.selection, &bench.worlds, &lexicon, &config)?;
    for l in &out.log.lectures {
        println!("lecture {}: kept iteration {} (selection sdtw {:.3})", l.lecture, l.best_iter, l.best_sdtw);
    }
    let bc = baseline_config(&config);
    let base = train_phases(&bench.train, &bench.selection, &bench.worlds, &lexicon, &bc)?;
    println!("{:>6} {:>22} {:>22} {:>22}", "split", "imitation sr/cls/sdtw", "curriculum", "baseline");
    for (k, split) in &bench.test {
        let il = evaluate_agent(&out.imitation, split, &bench.worlds, &lexicon, &config)?.aggregate;
        let crl = evaluate_agent(&out.agent, split, &bench.worlds, &lexicon, &config)?.aggregate;
        let b = evaluate_agent(&base.agent, split, &bench.worlds, &lexicon, &bc)?.aggregate;
        let cell = |a: &babywalk_lab::metrics::Aggregate| format!("{:.3}/{:.3}/{:.3}", a.sr, a.cls, a.sdtw);
        println!("{:>6} {:>22} {:>22} {:>22}", format!("x{k}"), cell(&il), cell(&crl), cell(&b));
    }
    println!("{:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}

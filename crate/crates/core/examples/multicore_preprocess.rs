//! A workload restricted to two cores hops between them, so each core sees
//! a chopped copy of the signature. Every core's trace is kept as its own
//! measurement; Gaussian smoothing followed by a moving maximum (window 10)
//! is compared with no preprocessing.
//!
//! cargo run --release --example multicore_preprocess -- [classes] [traces] [samples]

use freqprint::classifier::{evaluate_split, fit, FitConfig, Preset};
use freqprint::dataset::{Split, TraceDataset};
use freqprint::synth::{default_template_bank, generate_trace};
use freqprint::trace::{FrequencyTrace, LabeledTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Splits `full` across two cores: runs of 1..=8 samples alternate between
/// them and the idle core sits at `base`.
fn hop(full: &FrequencyTrace, base: u64, rng: &mut ChaCha8Rng) -> freqprint::Result<[FrequencyTrace; 2]> {
    let mut cores = [vec![base; full.len()], vec![base; full.len()]];
    let mut on = rng.random_range(0..2);
    let mut i = 0;
    while i < full.len() {
        let run = rng.random_range(1..=8).min(full.len() - i);
        cores[on][i..i + run].copy_from_slice(&full.samples()[i..i + run]);
        i += run;
        on ^= 1;
    }
    let [a, b] = cores;
    Ok([FrequencyTrace::new(a, 10, 2)?, FrequencyTrace::new(b, 10, 3)?])
}

fn main() -> freqprint::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let classes = args.next().unwrap_or(10);
    let traces = args.next().unwrap_or(30);
    let samples = args.next().unwrap_or(500);
    let seed = 3;

    let bank = default_template_bank(classes, samples, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for t in &bank {
        for _ in 0..traces {
            let full = generate_trace(t, samples, 0, 0, &mut rng)?;
            for core in hop(&full, t.base_khz, &mut rng)? {
                items.push(LabeledTrace::new(core, t.label.clone())?);
            }
        }
    }
    let ds = TraceDataset::new(items).split(seed)?;

    for (name, window) in [("raw", None), ("gaussian+movmax 10", Some(10))] {
        let mut cfg = FitConfig::new(Preset::Native, seed);
        cfg.smooth_window = window;
        cfg.movmax_window = window;
        let clf = fit(&ds, &cfg)?.classifier;
        let r = evaluate_split(&clf, &ds, Split::Test)?;
        println!("{name:>20}: top1 {:.3} top3 {:.3} top5 {:.3}", r.top1, r.top3, r.top5);
    }
    Ok(())
}

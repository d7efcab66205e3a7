//! Concurrent-container noise: a model trained on clean traces is evaluated
//! on test traces carrying k random cross-core bursts.
//!
//! cargo run --release --example concurrent_noise -- [classes] [traces] [samples] [seed]

use freqprint::classifier::{evaluate_split, fit, FitConfig, Preset};
use freqprint::dataset::Split;
use freqprint::synth::{default_template_bank, generate, SynthConfig};

fn main() -> freqprint::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let classes = args.next().unwrap_or(10);
    let traces = args.next().unwrap_or(50);
    let samples = args.next().unwrap_or(500);
    let seed = args.next().unwrap_or(1) as u64;

    let bank = default_template_bank(classes, samples, seed)?;
    let dataset = |k: usize| {
        let mut cfg = SynthConfig::new(bank.clone(), samples, traces, seed);
        cfg.concurrent_disturbers = k;
        // same split seed, so every k sees the same test items
        generate(&cfg)?.split(seed)
    };
    let clean = dataset(0)?;
    let clf = fit(&clean, &FitConfig::new(Preset::Native, seed))?.classifier;
    println!("disturbers\ttop1\ttop3\ttop5");
    for k in [0, 2, 4, 6, 8, 10] {
        let r = evaluate_split(&clf, &dataset(k)?, Split::Test)?;
        println!("{k}\t{:.3}\t{:.3}\t{:.3}", r.top1, r.top3, r.top5);
    }
    Ok(())
}

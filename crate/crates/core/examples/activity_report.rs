//! Misprediction rate against frequency activity. Half the classes are
//! busy and distinct, the other half idle with nearly identical short
//! bursts, so the idle ones absorb the confusions.
//!
//! cargo run --release --example activity_report -- [traces] [samples] [seed]

use freqprint::classifier::{activity_report, evaluate_split, fit, FitConfig, Preset};
use freqprint::dataset::Split;
use freqprint::synth::{generate, BurstSegment, SignatureTemplate, SynthConfig, DEFAULT_BASE_KHZ, DEFAULT_LEVELS};
use freqprint::trace::ActivityConfig;

fn bank(n: usize) -> Vec<SignatureTemplate> {
    let mut out = Vec::new();
    for i in 0..4 {
        let mut t = SignatureTemplate::flat(format!("busy{i}"), DEFAULT_BASE_KHZ, DEFAULT_LEVELS.to_vec(), 50_000);
        t.segments = vec![
            BurstSegment::new(n / 16 + i * n / 8, n / 8 + i * n / 32, 2),
            BurstSegment::new(n / 2 + i * n / 16, n / 8, i % 3),
        ];
        out.push(t);
    }
    for i in 0..4 {
        let mut t = SignatureTemplate::flat(format!("idle{i}"), DEFAULT_BASE_KHZ, vec![1_300_000], 50_000);
        t.segments = vec![BurstSegment::new(n / 3 + i, n / 40, 0)];
        out.push(t);
    }
    out
}

fn main() -> freqprint::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let traces = args.next().unwrap_or(20);
    let samples = args.next().unwrap_or(256);
    let seed = args.next().unwrap_or(5) as u64;

    let ds = generate(&SynthConfig::new(bank(samples), samples, traces, seed))?.split(seed)?;
    let clf = fit(&ds, &FitConfig::new(Preset::Native, seed))?.classifier;
    let report = evaluate_split(&clf, &ds, Split::Test)?;
    println!("top1 {:.3}", report.top1);
    print!("{}", activity_report(&report, &ds, &ActivityConfig::default()).to_tsv());
    Ok(())
}

//! Noise injection as a defense: a clean-trained model is scored on traces
//! overlaid with simulated FP bursts, then a model retrained on noisy
//! traces is scored on the same noisy test set.
//!
//! cargo run --release --example noise_defense -- [classes] [traces] [samples] [seed]

use freqprint::classifier::{evaluate_split, fit, FitConfig, Preset};
use freqprint::dataset::Split;
use freqprint::defense::{augment_with_noise, simulated_bursts, NoiseConfig};
use freqprint::synth::{default_template_bank, generate, SynthConfig, DEFAULT_LEVELS};

fn main() -> freqprint::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let classes = args.next().unwrap_or(10);
    let traces = args.next().unwrap_or(50);
    let samples = args.next().unwrap_or(500);
    let seed = args.next().unwrap_or(1) as u64;

    let bank = default_template_bank(classes, samples, seed)?;
    let clean = generate(&SynthConfig::new(bank, samples, traces, seed))?.split(seed)?;
    let max_khz = DEFAULT_LEVELS[DEFAULT_LEVELS.len() - 1];

    // 1-6 kernel units of 20 ms each, 20-150 ms apart
    let noise = NoiseConfig::new(0, (1, 6), (20, 150), 0.0);
    let noisy = clean.map_traces(|i, it| Ok(augment_with_noise(&it.trace, &noise, max_khz, seed ^ ((i as u64) << 20))))?;

    let horizon = samples as f64 * 10.0;
    let covered: f64 = (0..clean.len())
        .map(|i| {
            simulated_bursts(&noise, seed ^ ((i as u64) << 20), horizon)
                .iter()
                .map(|(a, b)| b.min(horizon) - a)
                .sum::<f64>()
                / horizon
        })
        .sum::<f64>()
        / clean.len() as f64;
    println!("burst coverage {covered:.3}");

    let cfg = FitConfig::new(Preset::Native, seed);
    let clean_model = fit(&clean, &cfg)?.classifier;
    let base = evaluate_split(&clean_model, &clean, Split::Test)?.top1;
    let attacked = evaluate_split(&clean_model, &noisy, Split::Test)?.top1;
    let retrained = fit(&noisy, &cfg)?.classifier;
    let recovered = evaluate_split(&retrained, &noisy, Split::Test)?.top1;
    println!("clean model on clean test   {base:.3}");
    println!("clean model on noisy test   {attacked:.3}");
    println!("noisy model on noisy test   {recovered:.3}");
    Ok(())
}

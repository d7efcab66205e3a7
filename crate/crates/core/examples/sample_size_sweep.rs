//! Accuracy as a function of how many samples the network sees.
//!
//! cargo run --release --example sample_size_sweep -- [classes] [traces] [samples]

use freqprint::classifier::{sample_size_sweep, sweep_to_tsv, FitConfig, Preset};
use freqprint::synth::{default_template_bank, generate, SynthConfig};

fn main() -> freqprint::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let classes = args.next().unwrap_or(10);
    let traces = args.next().unwrap_or(50);
    let samples = args.next().unwrap_or(500);

    let bank = default_template_bank(classes, samples, 1)?;
    let mut synth = SynthConfig::new(bank, samples, traces, 1);
    synth.concurrent_disturbers = 4;
    let ds = generate(&synth)?.split(1)?;
    let sizes: Vec<usize> = [64, 125, 250, 500].into_iter().filter(|&s| s <= samples).collect();
    let points = sample_size_sweep(&ds, &sizes, &FitConfig::new(Preset::Native, 1))?;
    print!("{}", sweep_to_tsv(&points));
    Ok(())
}

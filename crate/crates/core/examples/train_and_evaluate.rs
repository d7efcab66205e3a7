//! Offline phase on a synthetic bank: generate, split, train, report.
//!
//! cargo run --release --example train_and_evaluate -- [classes] [traces] [samples] [disturbers]

use std::time::Instant;

use freqprint::classifier::{evaluate_split, fit, FitConfig, Preset};
use freqprint::dataset::Split;
use freqprint::synth::{default_template_bank, generate, SynthConfig};

fn main() -> freqprint::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FREQPRINT_LOG", "info")).init();
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let classes = args.next().unwrap_or(10);
    let traces = args.next().unwrap_or(50);
    let samples = args.next().unwrap_or(500);
    let disturbers = args.next().unwrap_or(0);

    let bank = default_template_bank(classes, samples, 7)?;
    let mut synth = SynthConfig::new(bank, samples, traces, 7);
    synth.concurrent_disturbers = disturbers;
    let ds = generate(&synth)?.split(7)?;

    let t = Instant::now();
    let out = fit(&ds, &FitConfig::new(Preset::Native, 7))?;
    println!(
        "trained {} epochs (best {}), train accuracy {:.3}, {:.1?}",
        out.history.len(),
        out.best_epoch,
        out.train_accuracy,
        t.elapsed()
    );
    let report = evaluate_split(&out.classifier, &ds, Split::Test)?;
    print!("{}", report.to_tsv());
    Ok(())
}

//! Data collection campaign. Uses the real cpufreq interface when the host
//! exposes it, otherwise a scripted source on a virtual clock.
//!
//! cargo run --release --example collect_campaign -- [out_dir]

use std::sync::Arc;

use freqprint::dataset::read_dataset;
use freqprint::sampler::{
    parse_campaign_file, run_campaign, read_core_frequency, MockClock, Sampler, ScriptedSource, ShellWorkload,
};

const CAMPAIGN: &str = "\
interval_ms=10
num_samples=400
inter_measurement_sleep_s=1
cores=0
measurements_per_target=3
target=busy|sh -c 'while :; do :; done'|true
target=idle|sleep 60|true
";

fn main() -> freqprint::Result<()> {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("FREQPRINT_LOG", "info")).try_init();
    let out = std::env::args().nth(1).unwrap_or_else(|| "campaign-out".into());
    let file = parse_campaign_file(CAMPAIGN)?;

    let sampler = match read_core_frequency(0) {
        Ok(khz) => {
            println!("core 0 at {khz} kHz, sampling for real");
            Sampler::system(file.sampler)?
        }
        Err(e) => {
            println!("no cpufreq ({e}); replaying a script on a virtual clock");
            let script = (0..400).map(|i| if i % 50 < 20 { 2_800_000 } else { 1_000_000 }).collect();
            let src = Arc::new(ScriptedSource::new().with_core(0, script));
            Sampler::new(file.sampler, src, Arc::new(MockClock::new(0)))?
        }
    };
    let outcome = run_campaign(&sampler, &file.spec, out.as_ref(), &mut ShellWorkload::default())?;
    println!(
        "collected {} measurements ({} resumed, {} failed) in {}",
        outcome.collected,
        outcome.skipped,
        outcome.failures.len(),
        outcome.manifest.display()
    );
    let ds = read_dataset(&outcome.manifest)?;
    for c in ds.classes() {
        let n = ds.items().iter().filter(|it| it.label() == c).count();
        println!("{c}: {n} traces");
    }
    Ok(())
}

//! Writes a synthetic dataset and its template bank to disk, then reads it
//! back and prints per-class statistics.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [classes] [traces] [samples]

use std::path::PathBuf;

use freqprint::dataset::read_dataset;
use freqprint::synth::{default_template_bank, generate, write_template_file, SynthConfig};
use freqprint::trace::{frequency_activity, ActivityConfig};

fn main() -> freqprint::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth-out".into()));
    let mut nums = args.map(|a| a.parse::<usize>().expect("integer argument"));
    let classes = nums.next().unwrap_or(10);
    let traces = nums.next().unwrap_or(50);
    let samples = nums.next().unwrap_or(500);

    let bank = default_template_bank(classes, samples, 7)?;
    write_template_file(&bank, &out.join("templates.txt"))?;
    let ds = generate(&SynthConfig::new(bank, samples, traces, 7))?.split(7)?;
    let manifest = freqprint::dataset::write_dataset(&ds, &out)?;

    let back = read_dataset(&manifest)?;
    assert_eq!(back.items(), ds.items());
    let act = ActivityConfig::default();
    println!("label\ttraces\tmean_activity");
    for c in back.classes() {
        let its: Vec<_> = back.items().iter().filter(|it| it.label() == c).collect();
        let mean = its.iter().map(|it| frequency_activity(&it.trace, &act)).sum::<usize>() as f64 / its.len() as f64;
        println!("{c}\t{}\t{mean:.1}", its.len());
    }
    println!("wrote {}", manifest.display());
    Ok(())
}

//! Finite-difference check of backprop on both network presets.
//!
//! cargo run --release --example gradient_check -- [input_length] [classes]

use std::time::Instant;

use freqprint::classifier::Preset;
use freqprint::nn::{gradient_check_report, Tensor, DEFAULT_EPSILON};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> freqprint::Result<()> {
    let mut args = std::env::args().skip(1);
    let length: usize = args.next().map_or(500, |a| a.parse().expect("input length"));
    let classes: usize = args.next().map_or(8, |a| a.parse().expect("class count"));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = Tensor::sequence((0..length).map(|_| rng.random_range(0.0..1.0)).collect())?;
    for preset in [Preset::Native, Preset::Sandbox] {
        let model = preset.build(length, classes, 7)?;
        let t = Instant::now();
        let r = gradient_check_report(&model, &input, 3 % classes, DEFAULT_EPSILON, None)?;
        println!(
            "{preset}: {} params ({} refined, {} unresolved), max rel error {:.3e} at {:?} (analytic {:.3e}, numeric {:.3e}), {:.1?}",
            r.checked,
            r.refined,
            r.unresolved,
            r.max_rel_error,
            r.worst,
            r.analytic,
            r.numeric,
            t.elapsed()
        );
    }
    Ok(())
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{BurstSegment, SignatureTemplate};

pub const DEFAULT_BASE_KHZ: u64 = 1_000_000;
pub const DEFAULT_LEVELS: [u64; 3] = [1_800_000, 2_400_000, 2_800_000];
pub const DEFAULT_JITTER_KHZ: u64 = 50_000;

/// Minimum pairwise separation, as a fraction of the grid length.
const MIN_SEPARATION: f64 = 0.15;
const MAX_ATTEMPTS: usize = 100_000;

/// Number of samples whose level index differs between two templates.
pub fn hamming_separation(a: &SignatureTemplate, b: &SignatureTemplate, n: usize) -> usize {
    a.level_indices(n)
        .into_iter()
        .zip(b.level_indices(n))
        .filter(|(x, y)| x != y)
        .count()
}

fn random_layout(rng: &mut ChaCha8Rng, n: usize, n_levels: usize) -> Vec<BurstSegment> {
    let n_segments = rng.random_range(2..=5);
    let min_len = (n / 25).max(1);
    let max_len = (n / 5).max(min_len);
    let max_gap = (n / 4).max(1);
    let mut segs = Vec::with_capacity(n_segments);
    let mut cursor = rng.random_range(0..max_gap);
    for _ in 0..n_segments {
        let len = rng.random_range(min_len..=max_len);
        if cursor + len > n {
            break;
        }
        segs.push(BurstSegment::new(cursor, len, rng.random_range(0..n_levels)));
        cursor += len + rng.random_range(1..=max_gap);
    }
    segs
}

/// `n_classes` templates with random non-overlapping burst layouts, every
/// pair differing on at least 15% of the grid.
pub fn default_template_bank(n_classes: usize, n_samples: usize, seed: u64) -> Result<Vec<SignatureTemplate>> {
    if !(2..=64).contains(&n_classes) {
        return Err(Error::InvalidArgument(format!(
            "template bank needs 2..=64 classes, got {n_classes}"
        )));
    }
    if n_samples < 20 {
        return Err(Error::InvalidArgument("template bank needs at least 20 samples".into()));
    }
    let need = (MIN_SEPARATION * n_samples as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank: Vec<SignatureTemplate> = Vec::with_capacity(n_classes);
    let mut attempts = 0;
    while bank.len() < n_classes {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::InvalidArgument(format!(
                "could not place {n_classes} separated templates on {n_samples} samples"
            )));
        }
        let segments = random_layout(&mut rng, n_samples, DEFAULT_LEVELS.len());
        if segments.is_empty() {
            continue;
        }
        let candidate = SignatureTemplate {
            label: format!("class{:02}", bank.len()),
            base_khz: DEFAULT_BASE_KHZ,
            levels: DEFAULT_LEVELS.to_vec(),
            segments,
            jitter_khz: DEFAULT_JITTER_KHZ,
            prefix: None,
        };
        if bank
            .iter()
            .all(|t| hamming_separation(t, &candidate, n_samples) >= need)
        {
            bank.push(candidate);
        }
    }
    Ok(bank)
}

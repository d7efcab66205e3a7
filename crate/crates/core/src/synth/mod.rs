//! Synthetic frequency signatures.
//!
//! A [`SignatureTemplate`] describes a class as a plateau sequence: the core
//! idles at `base_khz` except during bursts, where it sits on one of a few
//! discrete levels (think P-states). [`generate`] turns templates into a
//! labeled dataset by adding Gaussian jitter and random cross-core
//! disturbance bursts, then snapping readings back onto the level ladder.

mod bank;
mod file;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::TraceDataset;
use crate::error::{Error, Result};
use crate::trace::{FrequencyTrace, LabeledTrace};

pub use bank::{default_template_bank, hamming_separation, DEFAULT_BASE_KHZ, DEFAULT_JITTER_KHZ, DEFAULT_LEVELS};
pub use file::{read_template_file, templates_from_str, templates_to_string, write_template_file, TEMPLATES_MAGIC};

/// Interval stamped on generated traces.
pub const SYNTH_INTERVAL_MS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BurstSegment {
    pub start: usize,
    pub len: usize,
    pub level: usize,
}

impl BurstSegment {
    pub fn new(start: usize, len: usize, level: usize) -> Self {
        BurstSegment { start, len, level }
    }
}

/// Optional lead-in before the workload proper, e.g. a microVM booting.
/// The template's own segments are shifted right by `length`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixSegment {
    pub name: String,
    pub length: usize,
    pub segments: Vec<BurstSegment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureTemplate {
    pub label: String,
    pub base_khz: u64,
    pub levels: Vec<u64>,
    pub segments: Vec<BurstSegment>,
    pub jitter_khz: u64,
    pub prefix: Option<PrefixSegment>,
}

impl SignatureTemplate {
    /// A template that never leaves its base frequency.
    pub fn flat(label: impl Into<String>, base_khz: u64, levels: Vec<u64>, jitter_khz: u64) -> Self {
        SignatureTemplate {
            label: label.into(),
            base_khz,
            levels,
            segments: Vec::new(),
            jitter_khz,
            prefix: None,
        }
    }

    pub fn max_level(&self) -> u64 {
        self.levels.iter().copied().max().unwrap_or(self.base_khz).max(self.base_khz)
    }

    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if self.label.is_empty() {
            return Err(Error::InvalidArgument("template label must be non-empty".into()));
        }
        if let Some(l) = self.levels.iter().find(|&&l| l < self.base_khz) {
            return Err(Error::InvalidArgument(format!(
                "template {:?}: level {l} below base {}",
                self.label, self.base_khz
            )));
        }
        let check = |segs: &[BurstSegment], limit: usize, what: &str| -> Result<()> {
            for s in segs {
                if s.len == 0 || s.start + s.len > limit {
                    return Err(Error::InvalidArgument(format!(
                        "template {:?}: {what} segment {s:?} outside [0, {limit})",
                        self.label
                    )));
                }
                if s.level >= self.levels.len() {
                    return Err(Error::InvalidArgument(format!(
                        "template {:?}: segment level {} but only {} levels",
                        self.label,
                        s.level,
                        self.levels.len()
                    )));
                }
            }
            Ok(())
        };
        check(&self.segments, n_samples, "burst")?;
        if let Some(p) = &self.prefix {
            check(&p.segments, p.length, "prefix")?;
        }
        Ok(())
    }

    /// Level index (or `None` for base) at every sample of an `n`-sample
    /// grid. Later segments overwrite earlier ones where they overlap.
    pub fn level_indices(&self, n: usize) -> Vec<Option<usize>> {
        let mut idx = vec![None; n];
        let mut paint = |segs: &[BurstSegment], offset: usize, limit: usize| {
            for s in segs {
                let lo = (s.start + offset).min(limit);
                let hi = (s.start + s.len + offset).min(limit);
                idx[lo..hi].iter_mut().for_each(|v| *v = Some(s.level));
            }
        };
        let shift = match &self.prefix {
            Some(p) => {
                paint(&p.segments, 0, p.length.min(n));
                p.length
            }
            None => 0,
        };
        paint(&self.segments, shift, n);
        idx
    }

    /// Noise-free plateau sequence in kHz.
    pub fn plateau(&self, n: usize) -> Vec<u64> {
        self.level_indices(n)
            .into_iter()
            .map(|l| l.map_or(self.base_khz, |i| self.levels[i]))
            .collect()
    }

    /// Samples spent on a level strictly above base.
    pub fn burst_coverage(&self, n: usize) -> usize {
        self.plateau(n).iter().filter(|&&f| f > self.base_khz).count()
    }

    fn nearest_level(&self, v: f64) -> u64 {
        std::iter::once(self.base_khz)
            .chain(self.levels.iter().copied())
            .min_by(|a, b| {
                let da = (*a as f64 - v).abs();
                let db = (*b as f64 - v).abs();
                da.total_cmp(&db)
            })
            .expect("base is always a candidate")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub templates: Vec<SignatureTemplate>,
    pub n_samples: usize,
    pub traces_per_class: usize,
    pub seed: u64,
    pub concurrent_disturbers: usize,
    pub disturbance_strength_khz: u64,
}

impl SynthConfig {
    pub fn new(templates: Vec<SignatureTemplate>, n_samples: usize, traces_per_class: usize, seed: u64) -> Self {
        SynthConfig {
            templates,
            n_samples,
            traces_per_class,
            seed,
            concurrent_disturbers: 0,
            disturbance_strength_khz: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.len() < 2 {
            return Err(Error::InvalidArgument("need at least two templates".into()));
        }
        for (i, t) in self.templates.iter().enumerate() {
            if self.templates[..i].iter().any(|o| o.label == t.label) {
                return Err(Error::InvalidArgument(format!("duplicate template label {:?}", t.label)));
            }
            t.validate(self.n_samples)?;
        }
        if self.traces_per_class < 5 {
            return Err(Error::InvalidArgument("traces_per_class must be ≥ 5".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Seed for trace `index` of class `class`; each trace gets an independent
/// stream so generation can be split up without changing results.
pub fn trace_seed(seed: u64, class: usize, index: usize) -> u64 {
    let mut z = seed
        ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One noisy rendition of `template`.
pub fn generate_trace<R: Rng + ?Sized>(
    template: &SignatureTemplate,
    n_samples: usize,
    disturbers: usize,
    strength_khz: u64,
    rng: &mut R,
) -> Result<FrequencyTrace> {
    let max_level = template.max_level() as f64;
    let mut values: Vec<f64> = template.plateau(n_samples).into_iter().map(|f| f as f64).collect();

    let min_len = (n_samples / 40).max(1);
    let max_len = (n_samples / 10).max(min_len);
    for _ in 0..disturbers {
        let start = rng.random_range(0..n_samples);
        let len = rng.random_range(min_len..=max_len);
        for v in values.iter_mut().skip(start).take(len) {
            *v = (*v + strength_khz as f64).min(max_level);
        }
    }

    let sigma = template.jitter_khz as f64;
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    let out = values
        .into_iter()
        .map(|v| {
            let v = match &noise {
                Some(n) => v + n.sample(rng).clamp(-4.0 * sigma, 4.0 * sigma),
                None => v,
            };
            let snap = template.nearest_level(v);
            let v = if (snap as f64 - v).abs() <= sigma { snap as f64 } else { v };
            (v.round() as u64).max(template.base_khz)
        })
        .collect();
    Ok(FrequencyTrace::new(out, SYNTH_INTERVAL_MS, 0)?.with_meta("template", template.label.clone()))
}

/// Generates `traces_per_class` traces for every template. Classes keep the
/// template order; all items start unassigned.
pub fn generate(cfg: &SynthConfig) -> Result<TraceDataset> {
    cfg.validate()?;
    let mut items = Vec::with_capacity(cfg.templates.len() * cfg.traces_per_class);
    for (ci, t) in cfg.templates.iter().enumerate() {
        for k in 0..cfg.traces_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(trace_seed(cfg.seed, ci, k));
            let trace = generate_trace(
                t,
                cfg.n_samples,
                cfg.concurrent_disturbers,
                cfg.disturbance_strength_khz,
                &mut rng,
            )?
            .with_start_time(k as u64 * cfg.n_samples as u64 * SYNTH_INTERVAL_MS);
            items.push(LabeledTrace::new(trace, t.label.clone())?);
        }
    }
    Ok(TraceDataset::new(items))
}

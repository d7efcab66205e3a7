//! Frequency traces: the basic measurement unit, plus the preprocessing
//! steps applied before classification.

mod file;
mod filter;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub use file::{read_trace_file, trace_from_str, trace_to_string, write_trace_file, TRACE_MAGIC};
pub use filter::{gaussian_kernel, gaussian_smooth, gaussian_window_weights, moving_max};

/// Default activity threshold: 1.2 GHz expressed in kHz.
pub const DEFAULT_ACTIVITY_THRESHOLD_KHZ: u64 = 1_200_000;

/// One measurement: frequency samples (kHz) read from a single core at a
/// fixed interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTrace {
    samples: Vec<u64>,
    interval_ms: u64,
    core_id: u32,
    start_time: u64,
    meta: BTreeMap<String, String>,
}

impl FrequencyTrace {
    pub fn new(samples: Vec<u64>, interval_ms: u64, core_id: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("trace needs at least one sample".into()));
        }
        if interval_ms == 0 {
            return Err(Error::InvalidArgument("interval_ms must be positive".into()));
        }
        Ok(FrequencyTrace {
            samples,
            interval_ms,
            core_id,
            start_time: 0,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_start_time(mut self, start_time: u64) -> Self {
        self.start_time = start_time;
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn samples(&self) -> &[u64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn interval_ms(&self) -> u64 {
        self.interval_ms
    }

    pub fn core_id(&self) -> u32 {
        self.core_id
    }

    pub fn start_time(&self) -> u64 {
        self.start_time
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.meta
    }

    pub fn max_sample(&self) -> u64 {
        self.samples.iter().copied().max().unwrap_or(0)
    }

    pub fn min_sample(&self) -> u64 {
        self.samples.iter().copied().min().unwrap_or(0)
    }

    /// Same metadata, new samples. Used by every operation that maps a
    /// trace onto a trace so interval, core and metadata carry over.
    pub(crate) fn with_samples(&self, samples: Vec<u64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("trace needs at least one sample".into()));
        }
        Ok(FrequencyTrace {
            samples,
            interval_ms: self.interval_ms,
            core_id: self.core_id,
            start_time: self.start_time,
            meta: self.meta.clone(),
        })
    }
}

/// A trace together with the class it was recorded for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTrace {
    pub trace: FrequencyTrace,
    label: String,
}

impl LabeledTrace {
    pub fn new(trace: FrequencyTrace, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if label.is_empty() {
            return Err(Error::InvalidArgument("label must be non-empty".into()));
        }
        Ok(LabeledTrace { trace, label })
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivityConfig {
    pub threshold_khz: u64,
}

impl ActivityConfig {
    pub fn new(threshold_khz: u64) -> Result<Self> {
        if threshold_khz == 0 {
            return Err(Error::InvalidArgument("activity threshold must be positive".into()));
        }
        Ok(ActivityConfig { threshold_khz })
    }
}

impl Default for ActivityConfig {
    fn default() -> Self {
        ActivityConfig {
            threshold_khz: DEFAULT_ACTIVITY_THRESHOLD_KHZ,
        }
    }
}

/// Number of samples strictly above the activity threshold.
pub fn frequency_activity(trace: &FrequencyTrace, cfg: &ActivityConfig) -> usize {
    trace
        .samples
        .iter()
        .filter(|&&f| f > cfg.threshold_khz)
        .count()
}

/// Maps samples linearly onto `[0, 1]` using the given bounds, clipping
/// anything outside them.
pub fn normalize(trace: &FrequencyTrace, f_min: u64, f_max: u64) -> Result<Vec<f64>> {
    if f_max <= f_min {
        return Err(Error::InvalidArgument(format!(
            "normalization bounds need f_max > f_min (got {f_min}..{f_max})"
        )));
    }
    let span = (f_max - f_min) as f64;
    Ok(trace
        .samples
        .iter()
        .map(|&f| ((f as f64 - f_min as f64) / span).clamp(0.0, 1.0))
        .collect())
}

/// Keeps the first `n` samples.
pub fn truncate(trace: &FrequencyTrace, n: usize) -> Result<FrequencyTrace> {
    if n == 0 || n > trace.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot truncate a {}-sample trace to {n}",
            trace.len()
        )));
    }
    trace.with_samples(trace.samples[..n].to_vec())
}

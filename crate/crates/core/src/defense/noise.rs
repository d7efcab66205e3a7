//! Randomized floating-point noise injection on a sibling core, and its
//! trace-level simulation.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::trace::FrequencyTrace;

pub const DEFAULT_KERNEL_ITERATIONS: u64 = 20_000_000;
/// Simulated wall time of one N_repeat unit; only used by the overlay.
pub const DEFAULT_REPEAT_UNIT_MS: f64 = 20.0;
const STOP_POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub core_id: u32,
    /// Inclusive range of kernel repetitions per burst.
    pub n_repeat_range: (u64, u64),
    /// Inclusive range of idle time after each burst.
    pub t_sleep_range_ms: (u64, u64),
    pub kernel_iterations: u64,
    pub duration_s: f64,
    pub repeat_unit_ms: f64,
}

impl NoiseConfig {
    pub fn new(core_id: u32, n_repeat_range: (u64, u64), t_sleep_range_ms: (u64, u64), duration_s: f64) -> Self {
        NoiseConfig {
            core_id,
            n_repeat_range,
            t_sleep_range_ms,
            kernel_iterations: DEFAULT_KERNEL_ITERATIONS,
            duration_s,
            repeat_unit_ms: DEFAULT_REPEAT_UNIT_MS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_repeat_range.0 > self.n_repeat_range.1 {
            return Err(Error::InvalidArgument("n_repeat range needs lo <= hi".into()));
        }
        if self.t_sleep_range_ms.0 > self.t_sleep_range_ms.1 {
            return Err(Error::InvalidArgument("t_sleep range needs lo <= hi".into()));
        }
        if self.kernel_iterations == 0 {
            return Err(Error::InvalidArgument("kernel_iterations must be at least 1".into()));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad duration {}", self.duration_s)));
        }
        if !(self.repeat_unit_ms > 0.0 && self.repeat_unit_ms.is_finite()) {
            return Err(Error::InvalidArgument("repeat_unit_ms must be positive".into()));
        }
        Ok(())
    }
}

/// The seeded sequence of `(n_repeat, t_sleep_ms)` draws. The injector and
/// the overlay consume the same sequence for the same seed and ranges.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    rng: ChaCha8Rng,
    n_repeat: (u64, u64),
    t_sleep: (u64, u64),
}

impl NoiseSchedule {
    pub fn new(cfg: &NoiseConfig, seed: u64) -> Self {
        NoiseSchedule {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n_repeat: cfg.n_repeat_range,
            t_sleep: cfg.t_sleep_range_ms,
        }
    }
}

impl Iterator for NoiseSchedule {
    type Item = (u64, u64);

    fn next(&mut self) -> Option<(u64, u64)> {
        let n = self.rng.random_range(self.n_repeat.0..=self.n_repeat.1);
        let t = self.rng.random_range(self.t_sleep.0..=self.t_sleep.1);
        Some((n, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BurstRecord {
    /// Milliseconds since the injector started.
    pub start_ms: u64,
    pub n_repeat: u64,
    pub t_sleep_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BurstLog {
    pub core_id: u32,
    pub seed: u64,
    pub bursts: Vec<BurstRecord>,
}

impl fmt::Display for BurstLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "core_id={}", self.core_id)?;
        writeln!(f, "seed={}", self.seed)?;
        for b in &self.bursts {
            writeln!(f, "burst_start_ms={} n_repeat={} t_sleep_ms={}", b.start_ms, b.n_repeat, b.t_sleep_ms)?;
        }
        Ok(())
    }
}

impl FromStr for BurstLog {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut core_id = None;
        let mut seed = None;
        let mut bursts = Vec::new();
        for (i, line) in s.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
            if line.is_empty() {
                continue;
            }
            let mut fields = std::collections::BTreeMap::new();
            for kv in line.split_whitespace() {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::parse(i, format!("expected key=value, got {kv:?}")))?;
                let v: u64 = v.parse().map_err(|_| Error::parse(i, format!("{k} is not an integer")))?;
                fields.insert(k, v);
            }
            let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::parse(i, format!("missing {k}")));
            if fields.contains_key("burst_start_ms") {
                bursts.push(BurstRecord {
                    start_ms: get("burst_start_ms")?,
                    n_repeat: get("n_repeat")?,
                    t_sleep_ms: get("t_sleep_ms")?,
                });
            } else if let Some(&c) = fields.get("core_id") {
                core_id = Some(u32::try_from(c).map_err(|_| Error::parse(i, "core_id out of range"))?);
            } else if let Some(&v) = fields.get("seed") {
                seed = Some(v);
            } else {
                return Err(Error::parse(i, "unknown burst log line"));
            }
        }
        Ok(BurstLog {
            core_id: core_id.ok_or_else(|| Error::parse(1, "burst log lacks core_id"))?,
            seed: seed.ok_or_else(|| Error::parse(1, "burst log lacks seed"))?,
            bursts,
        })
    }
}

static SINK: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

/// One kernel unit: a dependent add/multiply chain through memory-like
/// accumulators `a`, `b`, `c`, consumed by an opaque sink.
pub fn fp_kernel(iterations: u64) {
    let a = std::hint::black_box(1.0f64);
    let b = std::hint::black_box(0.5f64);
    let mut c = std::hint::black_box(0.25f64);
    for _ in 0..iterations {
        // load a, load c, add, multiply by b, store into c
        c = (a + c) * b;
    }
    SINK.store(std::hint::black_box(c).to_bits(), Ordering::Relaxed);
}

#[cfg(target_os = "linux")]
pub fn pin_to_core(core: u32) -> Result<()> {
    if core as usize >= libc::CPU_SETSIZE as usize {
        return Err(Error::InvalidArgument(format!("core {core} exceeds the affinity mask size")));
    }
    // SAFETY: cpu_set_t is plain data; CPU_SET writes inside it and
    // sched_setaffinity only reads it.
    let rc = unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(core as usize, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set)
    };
    if rc != 0 {
        let err = std::io::Error::last_os_error();
        return Err(match err.raw_os_error() {
            Some(libc::EINVAL) => Error::InvalidArgument(format!("core {core} is not available")),
            _ => Error::Platform(format!("cannot pin to core {core}: {err}")),
        });
    }
    Ok(())
}

#[cfg(not(target_os = "linux"))]
pub fn pin_to_core(_core: u32) -> Result<()> {
    Err(Error::UnsupportedPlatform("CPU affinity needs Linux".into()))
}

fn sleep_checked(d: Duration, stop: &AtomicBool) {
    let end = Instant::now() + d;
    loop {
        if stop.load(Ordering::Relaxed) {
            return;
        }
        let now = Instant::now();
        if now >= end {
            return;
        }
        std::thread::sleep((end - now).min(STOP_POLL));
    }
}

/// Pin the calling thread to `cfg.core_id` and alternate FP bursts with idle
/// periods until `stop` is set or `duration_s` elapses.
pub fn run_noise_injector(cfg: &NoiseConfig, seed: u64, stop: &AtomicBool) -> Result<BurstLog> {
    cfg.validate()?;
    pin_to_core(cfg.core_id)?;
    let start = Instant::now();
    let deadline = start + Duration::from_secs_f64(cfg.duration_s);
    let mut log = BurstLog {
        core_id: cfg.core_id,
        seed,
        bursts: Vec::new(),
    };
    for (n_repeat, t_sleep_ms) in NoiseSchedule::new(cfg, seed) {
        if stop.load(Ordering::Relaxed) || Instant::now() >= deadline {
            break;
        }
        log.bursts.push(BurstRecord {
            start_ms: start.elapsed().as_millis() as u64,
            n_repeat,
            t_sleep_ms,
        });
        for _ in 0..n_repeat {
            if stop.load(Ordering::Relaxed) {
                break;
            }
            fp_kernel(cfg.kernel_iterations);
        }
        let left = deadline.saturating_duration_since(Instant::now());
        sleep_checked(Duration::from_millis(t_sleep_ms).min(left), stop);
    }
    log::info!("noise injector on core {} logged {} bursts", cfg.core_id, log.bursts.len());
    Ok(log)
}

/// Burst intervals `[start, end)` in milliseconds covering `[0, horizon_ms)`.
pub fn simulated_bursts(cfg: &NoiseConfig, seed: u64, horizon_ms: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if cfg.n_repeat_range.1 == 0 {
        return out;
    }
    let mut t = 0.0;
    for (n, sleep) in NoiseSchedule::new(cfg, seed) {
        if t >= horizon_ms {
            break;
        }
        let len = n as f64 * cfg.repeat_unit_ms;
        if len > 0.0 {
            out.push((t, t + len));
        }
        t += len + sleep as f64;
    }
    out
}

/// Raise every sample whose timestamp falls inside a simulated burst to
/// `max_khz`. Samples already above `max_khz` are kept.
pub fn augment_with_noise(trace: &FrequencyTrace, cfg: &NoiseConfig, max_khz: u64, seed: u64) -> FrequencyTrace {
    let step = trace.interval_ms() as f64;
    let horizon = trace.len() as f64 * step;
    let bursts = simulated_bursts(cfg, seed, horizon);
    let mut samples = trace.samples().to_vec();
    for (start, end) in bursts {
        let first = (start / step).ceil() as usize;
        let mut j = first;
        while j < samples.len() && (j as f64) * step < end {
            samples[j] = samples[j].max(max_khz);
            j += 1;
        }
    }
    trace.with_samples(samples).expect("overlay keeps the sample count")
}

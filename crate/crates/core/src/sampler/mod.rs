//! Frequency sampling: per-core reads from cpufreq and the measurement
//! loop that turns a running target into one trace per monitored core.
//!
//! Each configured core is sampled by its own thread. All threads are
//! released together from a barrier and read at absolute deadlines
//! `start + k * interval`, so a slow read never pushes later samples back.

mod campaign;
mod clock;
mod source;

use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::trace::FrequencyTrace;

pub use campaign::{
    estimate_duration, parse_campaign_file, run_campaign, CampaignFile, CampaignOutcome, CampaignSpec,
    CampaignTarget, ERRORS_FILE,
};
pub use clock::{Clock, MockClock, SleepRecord, SystemClock};
pub use source::{
    discover_cores, parse_khz, read_core_frequency, FrequencySource, ScriptedSource, SysfsSource, SYSFS_CPU_ROOT,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerConfig {
    pub interval_ms: u64,
    pub num_samples: usize,
    pub inter_measurement_sleep_s: u64,
    pub cores: Vec<u32>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            interval_ms: 10,
            num_samples: 4000,
            inter_measurement_sleep_s: 5,
            cores: vec![0],
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval_ms == 0 {
            return Err(Error::InvalidArgument("interval_ms must be ≥ 1".into()));
        }
        if self.num_samples == 0 {
            return Err(Error::InvalidArgument("num_samples must be ≥ 1".into()));
        }
        if self.cores.is_empty() {
            return Err(Error::InvalidArgument("at least one core must be monitored".into()));
        }
        let mut seen = self.cores.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate core in sampler config".into()));
        }
        Ok(())
    }

    /// Time one measurement takes on the ideal grid.
    pub fn measurement_duration(&self) -> Duration {
        Duration::from_millis(self.interval_ms) * self.num_samples as u32
    }
}

/// Starts and stops the thing being fingerprinted.
pub trait Workload {
    fn launch(&mut self, target: &CampaignTarget) -> Result<()>;
    fn kill(&mut self, target: &CampaignTarget) -> Result<()>;
}

/// Runs the target's launch and kill strings through `sh -c`. The launch
/// command gets its own process group, which is killed after the kill
/// command so nothing it forked outlives the measurement.
#[derive(Debug, Default)]
pub struct ShellWorkload {
    child: Option<Child>,
}

impl Workload for ShellWorkload {
    fn launch(&mut self, target: &CampaignTarget) -> Result<()> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(&target.launch);
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        let child = cmd
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Target(format!("launching {:?}: {e}", target.label)))?;
        self.child = Some(child);
        Ok(())
    }

    fn kill(&mut self, target: &CampaignTarget) -> Result<()> {
        let mut result = Ok(());
        if !target.kill.trim().is_empty() {
            let status = Command::new("sh")
                .arg("-c")
                .arg(&target.kill)
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .status()
                .map_err(|e| Error::Target(format!("killing {:?}: {e}", target.label)))?;
            if !status.success() {
                result = Err(Error::Target(format!("kill command for {:?} exited with {status}", target.label)));
            }
        }
        if let Some(mut child) = self.child.take() {
            #[cfg(unix)]
            // SAFETY: plain syscall; the group id is the child's pid since it
            // was spawned as a group leader.
            unsafe {
                libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
            }
            if child.try_wait().ok().flatten().is_none() {
                let _ = child.kill();
            }
            let _ = child.wait();
        }
        result
    }
}

/// One measurement: a trace per monitored core plus when each read
/// actually happened, relative to the sampler clock's origin.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub traces: Vec<FrequencyTrace>,
    pub start: Duration,
    pub read_times: Vec<Vec<Duration>>,
}

impl Measurement {
    /// Largest distance between a read and its ideal grid point.
    pub fn max_drift(&self, interval_ms: u64) -> Duration {
        let step = Duration::from_millis(interval_ms);
        self.read_times
            .iter()
            .flat_map(|times| {
                times.iter().enumerate().map(move |(k, t)| {
                    let ideal = self.start + step * k as u32;
                    t.abs_diff(ideal)
                })
            })
            .max()
            .unwrap_or(Duration::ZERO)
    }
}

/// Drives measurements with an injectable frequency source and clock.
pub struct Sampler {
    cfg: SamplerConfig,
    source: Arc<dyn FrequencySource>,
    clock: Arc<dyn Clock>,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig, source: Arc<dyn FrequencySource>, clock: Arc<dyn Clock>) -> Result<Self> {
        cfg.validate()?;
        Ok(Sampler { cfg, source, clock })
    }

    /// Sysfs-backed sampler on the real clock.
    pub fn system(cfg: SamplerConfig) -> Result<Self> {
        Self::new(cfg, Arc::new(SysfsSource::default()), Arc::new(SystemClock::default()))
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    /// Launches the target, samples every configured core `num_samples`
    /// times, then kills the target.
    pub fn collect_measurement(&self, workload: &mut dyn Workload, target: &CampaignTarget) -> Result<Measurement> {
        workload.launch(target)?;
        let sampled = self.sample_cores(target);
        let killed = workload.kill(target);
        let m = sampled?;
        killed?;
        Ok(m)
    }

    fn sample_cores(&self, target: &CampaignTarget) -> Result<Measurement> {
        let cfg = &self.cfg;
        let n = cfg.num_samples;
        let step = Duration::from_millis(cfg.interval_ms);
        let barrier = Barrier::new(cfg.cores.len());
        let abort = AtomicBool::new(false);
        let start = self.clock.now();
        let start_wall = self.clock.wall_ms();

        type CoreResult = (u32, Vec<u64>, Vec<Duration>, Option<Error>);
        let results: Vec<CoreResult> = std::thread::scope(|scope| {
            let handles: Vec<_> = cfg
                .cores
                .iter()
                .map(|&core| {
                    let clock = self.clock.fork();
                    let source = Arc::clone(&self.source);
                    let (barrier, abort) = (&barrier, &abort);
                    scope.spawn(move || {
                        let mut samples = Vec::with_capacity(n);
                        let mut times = Vec::with_capacity(n);
                        barrier.wait();
                        for k in 0..n {
                            if abort.load(Ordering::Relaxed) {
                                return (core, samples, times, None);
                            }
                            clock.sleep_until(start + step * k as u32);
                            times.push(clock.now());
                            match source.read_khz(core) {
                                Ok(f) => samples.push(f),
                                Err(e) => {
                                    abort.store(true, Ordering::Relaxed);
                                    return (core, samples, times, Some(e));
                                }
                            }
                        }
                        clock.sleep_until(start + step * n as u32);
                        (core, samples, times, None)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sampling thread panicked"))
                .collect()
        });
        self.clock.sleep_until(start + step * n as u32);

        if let Some(cause) = results.iter().find_map(|r| r.3.as_ref()) {
            let cause = cause.to_string();
            let collected = results.iter().map(|r| r.1.len()).min().unwrap_or(0);
            return Err(Error::PartialData {
                collected,
                expected: n,
                samples: results.into_iter().map(|(c, s, _, _)| (c, s)).collect(),
                cause,
            });
        }

        let mut traces = Vec::with_capacity(results.len());
        let mut read_times = Vec::with_capacity(results.len());
        for (core, samples, times, _) in results {
            let trace = FrequencyTrace::new(samples, cfg.interval_ms, core)?
                .with_start_time(start_wall)
                .with_meta("label", target.label.clone());
            traces.push(trace);
            read_times.push(times);
        }
        Ok(Measurement {
            traces,
            start,
            read_times,
        })
    }
}

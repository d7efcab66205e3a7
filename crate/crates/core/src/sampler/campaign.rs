//! Data-collection campaigns: every target is measured a fixed number of
//! times with a cool-down between measurements. Results land in a dataset
//! directory whose manifest doubles as the resume log.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};

use crate::dataset::{read_manifest, sanitize_label, write_manifest, ManifestEntry, Split, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::trace::write_trace_file;
use crate::util;

use super::{Sampler, SamplerConfig, Workload};

/// Failed measurements are appended here (key=value lines) so they can be
/// inspected; they are retried on the next run.
pub const ERRORS_FILE: &str = "campaign_errors.log";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignTarget {
    pub label: String,
    pub launch: String,
    pub kill: String,
}

impl CampaignTarget {
    pub fn new(label: impl Into<String>, launch: impl Into<String>, kill: impl Into<String>) -> Self {
        CampaignTarget {
            label: label.into(),
            launch: launch.into(),
            kill: kill.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignSpec {
    pub targets: Vec<CampaignTarget>,
    pub measurements_per_target: usize,
}

impl CampaignSpec {
    pub fn new(targets: Vec<CampaignTarget>, measurements_per_target: usize) -> Result<Self> {
        let spec = CampaignSpec {
            targets,
            measurements_per_target,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.measurements_per_target == 0 {
            return Err(Error::InvalidArgument("measurements_per_target must be ≥ 1".into()));
        }
        let mut seen = HashSet::new();
        for t in &self.targets {
            if t.label.is_empty() || t.label.contains(['\t', '\n']) {
                return Err(Error::InvalidArgument(format!("bad target label {:?}", t.label)));
            }
            if !seen.insert(t.label.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate target label {:?}", t.label)));
            }
        }
        Ok(())
    }
}

/// Time spent sampling across the whole campaign (targets × repetitions ×
/// one measurement), excluding cool-downs and launch overhead.
pub fn estimate_duration(cfg: &SamplerConfig, spec: &CampaignSpec) -> Duration {
    cfg.measurement_duration() * (spec.targets.len() * spec.measurements_per_target) as u32
}

#[derive(Debug, Clone, Default)]
pub struct CampaignOutcome {
    pub manifest: PathBuf,
    pub estimated: Duration,
    pub collected: usize,
    pub skipped: usize,
    pub failures: Vec<(String, usize, String)>,
}

fn trace_rel_path(target_idx: usize, label: &str, rep: usize, core: u32) -> PathBuf {
    PathBuf::from("traces")
        .join(format!("{target_idx:03}_{}", sanitize_label(label)))
        .join(format!("{rep:05}_cpu{core}.trace"))
}

/// Runs every (target, repetition) pair not already present in the
/// manifest under `out_dir`.
pub fn run_campaign(
    sampler: &Sampler,
    spec: &CampaignSpec,
    out_dir: &Path,
    workload: &mut dyn Workload,
) -> Result<CampaignOutcome> {
    spec.validate()?;
    let cfg = sampler.config();
    let manifest = out_dir.join(MANIFEST_FILE);
    let mut entries = if manifest.exists() {
        read_manifest(&manifest)?
    } else {
        Vec::new()
    };
    let mut done: HashSet<PathBuf> = entries.iter().map(|e| e.path.clone()).collect();

    let estimated = estimate_duration(cfg, spec);
    info!(
        "campaign: {} targets x {} measurements, estimated {:.1} h of sampling",
        spec.targets.len(),
        spec.measurements_per_target,
        estimated.as_secs_f64() / 3600.0
    );

    let mut outcome = CampaignOutcome {
        manifest: manifest.clone(),
        estimated,
        ..Default::default()
    };
    let cool_down = Duration::from_secs(cfg.inter_measurement_sleep_s);

    for (ti, target) in spec.targets.iter().enumerate() {
        for rep in 0..spec.measurements_per_target {
            let paths: Vec<PathBuf> = cfg
                .cores
                .iter()
                .map(|&c| trace_rel_path(ti, &target.label, rep, c))
                .collect();
            if paths.iter().all(|p| done.contains(p)) {
                outcome.skipped += 1;
                continue;
            }

            match sampler.collect_measurement(workload, target) {
                Ok(m) => {
                    for (trace, rel) in m.traces.iter().zip(&paths) {
                        let mut trace = trace.clone();
                        trace.meta_mut().insert("repetition".into(), rep.to_string());
                        write_trace_file(&trace, &out_dir.join(rel))?;
                        if done.insert(rel.clone()) {
                            entries.push(ManifestEntry {
                                label: target.label.clone(),
                                path: rel.clone(),
                                split: Split::Unassigned,
                            });
                        }
                    }
                    write_manifest(&entries, &manifest)?;
                    outcome.collected += 1;
                }
                Err(e) => {
                    warn!("measurement {} #{rep} failed: {e}", target.label);
                    append_error(out_dir, &target.label, rep, &e)?;
                    outcome.failures.push((target.label.clone(), rep, e.to_string()));
                }
            }
            sampler.clock().sleep(cool_down);
        }
    }
    Ok(outcome)
}

fn append_error(out_dir: &Path, label: &str, rep: usize, err: &Error) -> Result<()> {
    let path = out_dir.join(ERRORS_FILE);
    let mut text = if path.exists() {
        util::read_to_string(&path)?
    } else {
        String::new()
    };
    let msg = err.to_string().replace('\n', " ");
    let _ = writeln!(text, "label={label}\trepetition={rep}\terror={msg}");
    util::write_atomic(&path, text.as_bytes())
}

/// Parsed campaign spec file: sampler settings plus targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignFile {
    pub sampler: SamplerConfig,
    pub spec: CampaignSpec,
}

/// Parses the campaign file format:
///
/// ```text
/// interval_ms=10
/// num_samples=4000
/// inter_measurement_sleep_s=5
/// cores=2,3
/// measurements_per_target=100
/// target=nginx|docker run -d --rm --name fp --cpuset-cpus 2 nginx|docker rm -f fp
/// ```
///
/// In a `target=` line the label runs up to the first `|` and the kill
/// command starts after the last one, so launch commands may contain pipes.
pub fn parse_campaign_file(text: &str) -> Result<CampaignFile> {
    let mut cfg = SamplerConfig::default();
    let mut measurements = 100;
    let mut targets = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(n, format!("expected key=value, got {line:?}")))?;
        let key = key.trim();
        let value = value.trim();
        let num = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| Error::parse(n, format!("{key} must be a non-negative integer")))
        };
        match key {
            "interval_ms" => cfg.interval_ms = num(value)?,
            "num_samples" => cfg.num_samples = num(value)? as usize,
            "inter_measurement_sleep_s" => cfg.inter_measurement_sleep_s = num(value)?,
            "measurements_per_target" => measurements = num(value)? as usize,
            "cores" => {
                cfg.cores = value
                    .split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<u32>()
                            .map_err(|_| Error::parse(n, format!("bad core id {c:?}")))
                    })
                    .collect::<Result<_>>()?
            }
            "target" => {
                let (label, rest) = value
                    .split_once('|')
                    .ok_or_else(|| Error::parse(n, "target needs label|launch|kill"))?;
                let (launch, kill) = rest
                    .rsplit_once('|')
                    .ok_or_else(|| Error::parse(n, "target needs label|launch|kill"))?;
                if label.trim().is_empty() || launch.trim().is_empty() {
                    return Err(Error::parse(n, "target label and launch command must be non-empty"));
                }
                targets.push(CampaignTarget::new(label.trim(), launch.trim(), kill.trim()));
            }
            other => return Err(Error::parse(n, format!("unknown key {other:?}"))),
        }
    }
    cfg.validate()?;
    let spec = CampaignSpec::new(targets, measurements)?;
    Ok(CampaignFile { sampler: cfg, spec })
}

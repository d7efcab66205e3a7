use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};

pub const SYSFS_CPU_ROOT: &str = "/sys/devices/system/cpu";

/// Anything that can report a core's current frequency in kHz.
pub trait FrequencySource: Send + Sync {
    fn read_khz(&self, core: u32) -> Result<u64>;
}

/// Parses the content of a cpufreq attribute such as `"2800000\n"`.
pub fn parse_khz(text: &str) -> Result<u64> {
    text.trim()
        .parse::<u64>()
        .map_err(|_| Error::Platform(format!("unexpected cpufreq content {text:?}")))
}

/// The Linux cpufreq interface under `/sys/devices/system/cpu`.
#[derive(Debug, Clone)]
pub struct SysfsSource {
    root: PathBuf,
}

impl Default for SysfsSource {
    fn default() -> Self {
        SysfsSource {
            root: PathBuf::from(SYSFS_CPU_ROOT),
        }
    }
}

impl SysfsSource {
    /// A source rooted somewhere other than `/sys/devices/system/cpu`,
    /// e.g. a fake tree in tests.
    pub fn with_root(root: impl Into<PathBuf>) -> Self {
        SysfsSource { root: root.into() }
    }

    pub fn attribute_path(&self, core: u32, attr: &str) -> PathBuf {
        self.root.join(format!("cpu{core}")).join("cpufreq").join(attr)
    }

    pub fn read_attribute(&self, core: u32, attr: &str) -> Result<u64> {
        let path = self.attribute_path(core, attr);
        match fs::read_to_string(&path) {
            Ok(text) => parse_khz(&text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(Error::UnsupportedPlatform(format!(
                "{} does not exist",
                path.display()
            ))),
            Err(e) if e.kind() == io::ErrorKind::PermissionDenied => {
                Err(Error::Access(format!("cannot read {}", path.display())))
            }
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// `(cpuinfo_min_freq, cpuinfo_max_freq)` for a core.
    pub fn hardware_limits(&self, core: u32) -> Result<(u64, u64)> {
        Ok((
            self.read_attribute(core, "cpuinfo_min_freq")?,
            self.read_attribute(core, "cpuinfo_max_freq")?,
        ))
    }

    /// Sorted ids of every `cpuN` directory exposing `scaling_cur_freq`.
    pub fn discover_cores(&self) -> Vec<u32> {
        let Ok(dir) = fs::read_dir(&self.root) else {
            return Vec::new();
        };
        let mut cores: Vec<u32> = dir
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name();
                let id = name.to_str()?.strip_prefix("cpu")?.parse::<u32>().ok()?;
                self.attribute_path(id, "scaling_cur_freq").exists().then_some(id)
            })
            .collect();
        cores.sort_unstable();
        cores.dedup();
        cores
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl FrequencySource for SysfsSource {
    fn read_khz(&self, core: u32) -> Result<u64> {
        self.read_attribute(core, "scaling_cur_freq")
    }
}

/// Reads `scaling_cur_freq` for one core from the live system.
pub fn read_core_frequency(core: u32) -> Result<u64> {
    SysfsSource::default().read_khz(core)
}

/// Cores with cpufreq support on the live system; empty when there is none.
pub fn discover_cores() -> Vec<u32> {
    SysfsSource::default().discover_cores()
}

/// A frequency source that replays fixed per-core sequences, cycling when
/// a script runs out. Can be told to fail at a given read.
#[derive(Debug, Default)]
pub struct ScriptedSource {
    scripts: HashMap<u32, Vec<u64>>,
    cursors: Mutex<HashMap<u32, usize>>,
    fail_after: Option<usize>,
    total: AtomicUsize,
}

impl ScriptedSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_core(mut self, core: u32, script: Vec<u64>) -> Self {
        assert!(!script.is_empty(), "script for core {core} is empty");
        self.scripts.insert(core, script);
        self
    }

    /// Each core fails every read after its first `reads` successful ones.
    pub fn failing_after(mut self, reads: usize) -> Self {
        self.fail_after = Some(reads);
        self
    }

    pub fn reads(&self, core: u32) -> usize {
        self.cursors.lock().unwrap().get(&core).copied().unwrap_or(0)
    }

    pub fn total_reads(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }
}

impl FrequencySource for ScriptedSource {
    fn read_khz(&self, core: u32) -> Result<u64> {
        let script = self
            .scripts
            .get(&core)
            .ok_or_else(|| Error::UnsupportedPlatform(format!("no cpufreq for core {core}")))?;
        let mut cursors = self.cursors.lock().unwrap();
        let k = cursors.entry(core).or_insert(0);
        if self.fail_after.is_some_and(|n| *k >= n) {
            return Err(Error::Platform(format!("scripted failure on core {core}")));
        }
        let v = script[*k % script.len()];
        *k += 1;
        self.total.fetch_add(1, Ordering::SeqCst);
        Ok(v)
    }
}

//! Detection of processes that poll cpufreq attributes at a sampling-attack
//! rate, from a syscall event stream.
//!
//! Event lines look like `<seconds.fraction> <pid> <syscall> [path]`, for
//! example `12.004 4242 read /sys/devices/system/cpu/cpu3/cpufreq/scaling_cur_freq`.
//! `strace -f -ttt -y -e trace=fstat,fadvise64,read,close` output can be
//! converted by taking the pid, timestamp, syscall name and the fd path shown
//! in angle brackets.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyscallEvent {
    pub timestamp_ms: u64,
    pub pid: u32,
    pub syscall: String,
    pub path: Option<String>,
}

impl SyscallEvent {
    pub fn new(timestamp_ms: u64, pid: u32, syscall: impl Into<String>, path: Option<&str>) -> Self {
        SyscallEvent {
            timestamp_ms,
            pid,
            syscall: syscall.into(),
            path: path.map(str::to_owned),
        }
    }
}

/// `"12.5"` is 12500 ms; digits past milliseconds are dropped.
pub fn parse_timestamp_ms(text: &str) -> Option<u64> {
    let (secs, frac) = text.split_once('.').unwrap_or((text, ""));
    if secs.is_empty() || !secs.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut ms: u64 = 0;
    for i in 0..3 {
        let d = frac.as_bytes().get(i).map_or(0, |b| u64::from(b - b'0'));
        ms = ms * 10 + d;
    }
    secs.parse::<u64>().ok()?.checked_mul(1000)?.checked_add(ms)
}

/// Parses event lines one at a time, checking that each pid's timestamps
/// never go backwards.
#[derive(Debug, Default)]
pub struct EventParser {
    line: usize,
    last: HashMap<u32, u64>,
}

impl EventParser {
    pub fn new() -> Self {
        Self::default()
    }

    /// `Ok(None)` for blank and `#` comment lines.
    pub fn parse_line(&mut self, line: &str) -> Result<Option<SyscallEvent>> {
        self.line += 1;
        let n = self.line;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return Ok(None);
        }
        let mut parts = line.splitn(4, char::is_whitespace);
        let ts = parts.next().unwrap_or_default();
        let timestamp_ms = parse_timestamp_ms(ts).ok_or_else(|| Error::parse(n, format!("bad timestamp {ts:?}")))?;
        let pid = parts
            .next()
            .and_then(|p| p.parse::<u32>().ok())
            .ok_or_else(|| Error::parse(n, "missing or bad pid"))?;
        let syscall = parts
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse(n, "missing syscall name"))?;
        let path = parts.next().map(str::trim).filter(|p| !p.is_empty());
        if let Some(&prev) = self.last.get(&pid) {
            if timestamp_ms < prev {
                return Err(Error::Order {
                    line: n,
                    msg: format!("pid {pid} goes back from {prev} ms to {timestamp_ms} ms"),
                });
            }
        }
        self.last.insert(pid, timestamp_ms);
        Ok(Some(SyscallEvent::new(timestamp_ms, pid, syscall, path)))
    }
}

pub fn parse_event_stream(text: &str) -> Result<Vec<SyscallEvent>> {
    let mut p = EventParser::new();
    let mut out = Vec::new();
    for line in text.lines() {
        out.extend(p.parse_line(line)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorConfig {
    pub pattern: Vec<String>,
    pub path_substring: String,
    pub min_repetitions: usize,
    pub window_ms: u64,
    pub max_gap_ms: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            pattern: ["fstat", "fadvise64", "read", "close"].map(String::from).to_vec(),
            path_substring: "cpufreq".into(),
            min_repetitions: 50,
            window_ms: 10_000,
            max_gap_ms: 50,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pattern.is_empty() || self.pattern.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidArgument("detector pattern must name at least one syscall".into()));
        }
        if self.min_repetitions == 0 || self.window_ms == 0 {
            return Err(Error::InvalidArgument("min_repetitions and window must be positive".into()));
        }
        Ok(())
    }

    /// `key=value` lines: `pattern` (comma separated), `path_substring`,
    /// `min_repetitions`, `window_s`, `max_gap_ms`. Missing keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = DetectorConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or_else(|| Error::parse(i + 1, "expected key=value"))?;
            let num = |v: &str| v.parse::<u64>().map_err(|_| Error::parse(i + 1, format!("{k} needs an integer")));
            match k {
                "pattern" => cfg.pattern = v.split(',').map(|s| s.trim().to_owned()).collect(),
                "path_substring" => cfg.path_substring = v.to_owned(),
                "min_repetitions" => cfg.min_repetitions = num(v)? as usize,
                "window_s" => cfg.window_ms = num(v)?.saturating_mul(1000),
                "max_gap_ms" => cfg.max_gap_ms = num(v)?,
                _ => return Err(Error::parse(i + 1, format!("unknown key {k:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::util::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub pid: u32,
    /// Completion time of the occurrence that reached the threshold.
    pub first_flag_ms: u64,
    /// Pattern occurrences over the whole stream.
    pub repetitions: usize,
}

#[derive(Debug, Default)]
struct PidState {
    /// Unmatched matching events since the last occurrence, fewer than the
    /// pattern length.
    pending: VecDeque<(u64, String)>,
    recent: VecDeque<u64>,
    total: usize,
    flagged: Option<u64>,
}

/// Streaming detector. Per pid, events on matching paths form a
/// subsequence; occurrences are leftmost non-overlapping runs of that
/// subsequence equal to the pattern with gaps of at most `max_gap_ms`. A pid
/// is flagged once `min_repetitions` occurrences complete within some
/// half-open window of `window_ms`.
#[derive(Debug)]
pub struct Detector {
    cfg: DetectorConfig,
    pids: BTreeMap<u32, PidState>,
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Detector {
            cfg,
            pids: BTreeMap::new(),
        })
    }

    pub fn push(&mut self, ev: &SyscallEvent) {
        let relevant = ev.path.as_deref().is_some_and(|p| p.contains(self.cfg.path_substring.as_str()));
        if !relevant {
            return;
        }
        let cfg = &self.cfg;
        let st = self.pids.entry(ev.pid).or_default();
        st.pending.push_back((ev.timestamp_ms, ev.syscall.clone()));
        if st.pending.len() < cfg.pattern.len() {
            return;
        }
        let hit = st.pending.iter().zip(&cfg.pattern).all(|((_, name), want)| name == want)
            && st.pending.iter().zip(st.pending.iter().skip(1)).all(|(a, b)| b.0 - a.0 <= cfg.max_gap_ms);
        if !hit {
            st.pending.pop_front();
            return;
        }
        st.pending.clear();
        let t = ev.timestamp_ms;
        st.total += 1;
        st.recent.push_back(t);
        while st.recent.front().is_some_and(|&f| t - f >= cfg.window_ms) {
            st.recent.pop_front();
        }
        if st.flagged.is_none() && st.recent.len() >= cfg.min_repetitions {
            st.flagged = Some(t);
            log::warn!("pid {} polls cpufreq {} times within {} ms", ev.pid, st.recent.len(), cfg.window_ms);
        }
    }

    /// Flagged pids ordered by flag time, then pid.
    pub fn detections(&self) -> Vec<Detection> {
        let mut out: Vec<Detection> = self
            .pids
            .iter()
            .filter_map(|(&pid, st)| {
                st.flagged.map(|first_flag_ms| Detection {
                    pid,
                    first_flag_ms,
                    repetitions: st.total,
                })
            })
            .collect();
        out.sort_by_key(|d| (d.first_flag_ms, d.pid));
        out
    }
}

pub fn detect(events: &[SyscallEvent], cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    let mut d = Detector::new(cfg.clone())?;
    for ev in events {
        d.push(ev);
    }
    Ok(d.detections())
}

/// Streams events from a reader without holding them in memory.
pub fn detect_reader(reader: impl BufRead, cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    let mut d = Detector::new(cfg.clone())?;
    let mut p = EventParser::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<events>", e))?;
        if let Some(ev) = p.parse_line(&line)? {
            d.push(&ev);
        }
    }
    Ok(d.detections())
}

pub fn detections_to_tsv(dets: &[Detection]) -> String {
    let mut s = String::from("pid\tfirst_flag_ms\trepetitions\n");
    for d in dets {
        s.push_str(&format!("{}\t{}\t{}\n", d.pid, d.first_flag_ms, d.repetitions));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PATH: &str = "/sys/devices/system/cpu/cpu2/cpufreq/scaling_cur_freq";

    fn poll(events: &mut Vec<SyscallEvent>, pid: u32, t: u64) {
        for (k, s) in ["fstat", "fadvise64", "read", "close"].iter().enumerate() {
            events.push(SyscallEvent::new(t + k as u64, pid, *s, Some(PATH)));
        }
    }

    /// Exhaustive reference: scan every start index of the filtered
    /// sequence, then count occurrences in every window by brute force.
    fn oracle(events: &[SyscallEvent], cfg: &DetectorConfig) -> Vec<Detection> {
        let mut pids: Vec<u32> = events.iter().map(|e| e.pid).collect();
        pids.sort_unstable();
        pids.dedup();
        let p = cfg.pattern.len();
        let mut out = Vec::new();
        for pid in pids {
            let seq: Vec<&SyscallEvent> = events
                .iter()
                .filter(|e| e.pid == pid && e.path.as_deref().is_some_and(|x| x.contains(&cfg.path_substring)))
                .collect();
            let mut occ = Vec::new();
            let mut i = 0;
            while i + p <= seq.len() {
                let names = (0..p).all(|k| seq[i + k].syscall == cfg.pattern[k]);
                let gaps = (1..p).all(|k| seq[i + k].timestamp_ms - seq[i + k - 1].timestamp_ms <= cfg.max_gap_ms);
                if names && gaps {
                    occ.push(seq[i + p - 1].timestamp_ms);
                    i += p;
                } else {
                    i += 1;
                }
            }
            let flag = occ.iter().enumerate().find_map(|(j, &t)| {
                let n = occ[..=j].iter().filter(|&&s| t - s < cfg.window_ms).count();
                (n >= cfg.min_repetitions).then_some(t)
            });
            if let Some(first_flag_ms) = flag {
                out.push(Detection {
                    pid,
                    first_flag_ms,
                    repetitions: occ.len(),
                });
            }
        }
        out.sort_by_key(|d| (d.first_flag_ms, d.pid));
        out
    }

    fn random_stream(rng: &mut ChaCha8Rng, cfg: &DetectorConfig) -> Vec<SyscallEvent> {
        let names = ["fstat", "fadvise64", "read", "close", "openat", "write"];
        let paths = [Some(PATH), Some("/etc/passwd"), None];
        let n_pids = rng.random_range(1..4u32);
        let mut clock = vec![0u64; n_pids as usize];
        let mut out = Vec::new();
        for _ in 0..rng.random_range(0..2000) {
            let pid = rng.random_range(0..n_pids);
            let c = &mut clock[pid as usize];
            if rng.random_bool(0.6) {
                // a mostly-clean poll, sometimes with a slow step
                for name in &cfg.pattern {
                    *c += if rng.random_bool(0.05) { rng.random_range(40..80) } else { rng.random_range(0..4) };
                    out.push(SyscallEvent::new(*c, pid + 100, name.clone(), Some(PATH)));
                }
            } else {
                *c += rng.random_range(0..30);
                let name = names[rng.random_range(0..names.len())];
                out.push(SyscallEvent::new(*c, pid + 100, name, paths[rng.random_range(0..3)]));
            }
            *c += rng.random_range(0..200);
        }
        out
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp_ms("12.001"), Some(12_001));
        assert_eq!(parse_timestamp_ms("12.5"), Some(12_500));
        assert_eq!(parse_timestamp_ms("3"), Some(3_000));
        assert_eq!(parse_timestamp_ms("1.123456"), Some(1_123));
        assert_eq!(parse_timestamp_ms("-1.0"), None);
        assert_eq!(parse_timestamp_ms("x.1"), None);
    }

    #[test]
    fn parser_lines_and_errors() {
        let text = "# trace\n\n0.000 7 fstat /sys/cpu/cpufreq/x\n0.010 7 getpid\n0.005 8 read a path with spaces\n";
        let ev = parse_event_stream(text).unwrap();
        assert_eq!(ev.len(), 3);
        assert!(parse_event_stream("").unwrap().is_empty());
        assert_eq!(ev[1].path, None);
        assert_eq!(ev[2].path.as_deref(), Some("a path with spaces"));
        match parse_event_stream("1.0 7 read\n0.5 7 read\n") {
            Err(Error::Order { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_event_stream("1.0 7 read\nbad\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_event_stream("1.0 x read"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_event_stream("1.0 7"), Err(Error::Parse { .. })));
    }

    #[test]
    fn threshold_boundary() {
        let cfg = DetectorConfig::default();
        for (reps, flagged) in [(49, false), (50, true)] {
            let mut ev = Vec::new();
            for r in 0..reps {
                poll(&mut ev, 42, r * 100);
            }
            let d = detect(&ev, &cfg).unwrap();
            assert_eq!(!d.is_empty(), flagged, "{reps} repetitions");
            if flagged {
                assert_eq!(d[0], Detection { pid: 42, first_flag_ms: 49 * 100 + 3, repetitions: 50 });
            }
        }
    }

    #[test]
    fn window_is_half_open() {
        let mut cfg = DetectorConfig::default();
        cfg.min_repetitions = 2;
        let mut ev = Vec::new();
        poll(&mut ev, 1, 0);
        poll(&mut ev, 1, 10_000);
        assert!(detect(&ev, &cfg).unwrap().is_empty());
        let mut ev = Vec::new();
        poll(&mut ev, 1, 0);
        poll(&mut ev, 1, 9_999);
        assert_eq!(detect(&ev, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn other_paths_never_flag() {
        let cfg = DetectorConfig::default();
        let mut ev = Vec::new();
        for r in 0..500u64 {
            for (k, s) in cfg.pattern.iter().enumerate() {
                ev.push(SyscallEvent::new(r * 10 + k as u64, 5, s.clone(), Some("/proc/stat")));
            }
        }
        assert!(detect(&ev, &cfg).unwrap().is_empty());
    }

    #[test]
    fn unrelated_syscalls_do_not_break_matches() {
        let cfg = DetectorConfig::default();
        let mut ev = Vec::new();
        for r in 0..60u64 {
            let t = r * 100;
            for (k, s) in cfg.pattern.iter().enumerate() {
                ev.push(SyscallEvent::new(t + 2 * k as u64, 9, s.clone(), Some(PATH)));
                ev.push(SyscallEvent::new(t + 2 * k as u64 + 1, 9, "write", Some("/dev/null")));
            }
        }
        assert_eq!(detect(&ev, &cfg).unwrap()[0].repetitions, 60);
    }

    #[test]
    fn slow_steps_do_not_match() {
        let mut cfg = DetectorConfig::default();
        cfg.min_repetitions = 1;
        let mut ev = Vec::new();
        for (k, s) in cfg.pattern.iter().enumerate() {
            ev.push(SyscallEvent::new(k as u64 * 51, 3, s.clone(), Some(PATH)));
        }
        assert!(detect(&ev, &cfg).unwrap().is_empty());
    }

    #[test]
    fn matches_oracle_on_random_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xde7);
        for case in 0..1000 {
            let mut cfg = DetectorConfig::default();
            cfg.min_repetitions = rng.random_range(1..40);
            cfg.window_ms = rng.random_range(100..20_000);
            if case % 3 == 0 {
                cfg.pattern = vec!["read".into(), "read".into(), "close".into()];
            }
            let ev = random_stream(&mut rng, &cfg);
            assert_eq!(detect(&ev, &cfg).unwrap(), oracle(&ev, &cfg), "case {case}");
        }
    }

    #[test]
    fn pid_interleaving_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = DetectorConfig::default();
        cfg.min_repetitions = 5;
        for _ in 0..50 {
            let ev = random_stream(&mut rng, &cfg);
            let mut by_pid = ev.clone();
            by_pid.sort_by_key(|e| e.pid);
            assert_eq!(detect(&ev, &cfg).unwrap(), detect(&by_pid, &cfg).unwrap());
        }
    }

    #[test]
    fn config_file() {
        let cfg = DetectorConfig::parse("pattern=read,close\nwindow_s=5\n# c\nmin_repetitions=3\n").unwrap();
        assert_eq!(cfg.pattern, vec!["read", "close"]);
        assert_eq!(cfg.window_ms, 5000);
        assert_eq!(cfg.max_gap_ms, 50);
        assert!(DetectorConfig::parse("nope=1").is_err());
        assert!(DetectorConfig::parse("min_repetitions=0").is_err());
    }

    #[test]
    fn reader_matches_slice() {
        let mut ev = Vec::new();
        for r in 0..55 {
            poll(&mut ev, 77, r * 50);
        }
        let text: String = ev
            .iter()
            .map(|e| format!("{}.{:03} {} {} {}\n", e.timestamp_ms / 1000, e.timestamp_ms % 1000, e.pid, e.syscall, PATH))
            .collect();
        let cfg = DetectorConfig::default();
        assert_eq!(detect_reader(text.as_bytes(), &cfg).unwrap(), detect(&ev, &cfg).unwrap());
        assert!(detections_to_tsv(&detect(&ev, &cfg).unwrap()).contains("77\t"));
    }
}

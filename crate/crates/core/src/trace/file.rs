//! Text trace format:
//!
//! ```text
//! freqprint-trace v1
//! interval_ms=10
//! core_id=3
//! start_time=1700000000000
//! meta.image=nginx
//!
//! 2800000
//! 2800000
//! ...
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::util;

use super::FrequencyTrace;

pub const TRACE_MAGIC: &str = "freqprint-trace v1";

pub fn trace_to_string(trace: &FrequencyTrace) -> Result<String> {
    let mut out = String::with_capacity(trace.len() * 8 + 128);
    out.push_str(TRACE_MAGIC);
    out.push('\n');
    out.push_str(&format!("interval_ms={}\n", trace.interval_ms()));
    out.push_str(&format!("core_id={}\n", trace.core_id()));
    out.push_str(&format!("start_time={}\n", trace.start_time()));
    for (k, v) in trace.meta() {
        if k.is_empty() || k.contains(['=', '\n', '\r']) || v.contains(['\n', '\r']) {
            return Err(Error::InvalidArgument(format!(
                "meta entry {k:?} cannot be written as a header line"
            )));
        }
        out.push_str(&format!("meta.{k}={v}\n"));
    }
    out.push('\n');
    for s in trace.samples() {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    Ok(out)
}

pub fn trace_from_str(text: &str) -> Result<FrequencyTrace> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim_end() == TRACE_MAGIC => {}
        _ => return Err(Error::parse(1, format!("expected header `{TRACE_MAGIC}`"))),
    }

    let mut interval_ms = None;
    let mut core_id = None;
    let mut start_time = None;
    let mut meta = BTreeMap::new();
    let mut header_end = None;
    for (n, line) in lines.by_ref() {
        if line.trim().is_empty() {
            header_end = Some(n);
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(n, format!("expected key=value, got {line:?}")))?;
        let num = |v: &str| {
            v.trim()
                .parse::<u64>()
                .map_err(|_| Error::parse(n, format!("{key} is not a non-negative integer")))
        };
        match key {
            "interval_ms" => interval_ms = Some(num(value)?),
            "core_id" => {
                let c = num(value)?;
                core_id = Some(u32::try_from(c).map_err(|_| Error::parse(n, "core_id out of range"))?)
            }
            "start_time" => start_time = Some(num(value)?),
            k if k.starts_with("meta.") && k.len() > 5 => {
                meta.insert(k[5..].to_string(), value.to_string());
            }
            other => return Err(Error::parse(n, format!("unknown header key {other:?}"))),
        }
    }
    let Some(blank_line) = header_end else {
        return Err(Error::parse(text.lines().count().max(1), "missing blank line before samples"));
    };
    let missing = |k: &str| Error::parse(blank_line, format!("missing required key {k}"));
    let interval_ms = interval_ms.ok_or_else(|| missing("interval_ms"))?;
    let core_id = core_id.ok_or_else(|| missing("core_id"))?;
    let start_time = start_time.ok_or_else(|| missing("start_time"))?;
    if interval_ms == 0 {
        return Err(Error::parse(blank_line, "interval_ms must be positive"));
    }

    let mut samples = Vec::new();
    for (n, line) in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let s = t
            .parse::<u64>()
            .map_err(|_| Error::parse(n, format!("sample {t:?} is not a non-negative integer")))?;
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(Error::parse(blank_line + 1, "trace has no samples"));
    }

    let mut trace = FrequencyTrace::new(samples, interval_ms, core_id)?.with_start_time(start_time);
    *trace.meta_mut() = meta;
    Ok(trace)
}

pub fn write_trace_file(trace: &FrequencyTrace, path: &Path) -> Result<()> {
    util::write_atomic(path, trace_to_string(trace)?.as_bytes())
}

pub fn read_trace_file(path: &Path) -> Result<FrequencyTrace> {
    trace_from_str(&util::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GOOD: &str = "freqprint-trace v1\ninterval_ms=10\ncore_id=3\nstart_time=5\nmeta.image=nginx:1.25\n\n2800000\n1000000\n";

    #[test]
    fn parses_example() {
        let t = trace_from_str(GOOD).unwrap();
        assert_eq!(t.samples(), &[2_800_000, 1_000_000]);
        assert_eq!(t.interval_ms(), 10);
        assert_eq!(t.core_id(), 3);
        assert_eq!(t.start_time(), 5);
        assert_eq!(t.meta()["image"], "nginx:1.25");
    }

    #[test]
    fn error_lines() {
        let neg = GOOD.replace("1000000", "-5");
        match trace_from_str(&neg) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
        let empty = "freqprint-trace v1\ninterval_ms=10\ncore_id=3\nstart_time=5\n\n";
        assert!(matches!(trace_from_str(empty), Err(Error::Parse { .. })));
        let no_core = GOOD.replace("core_id=3\n", "");
        assert!(matches!(trace_from_str(&no_core), Err(Error::Parse { .. })));
        let bad_magic = GOOD.replace("v1", "v9");
        assert!(matches!(trace_from_str(&bad_magic), Err(Error::Parse { line: 1, .. })));
        let junk = GOOD.replace("core_id=3", "core_id3");
        assert!(matches!(trace_from_str(&junk), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.trace");
        let t = trace_from_str(GOOD).unwrap();
        write_trace_file(&t, &p).unwrap();
        assert_eq!(read_trace_file(&p).unwrap(), t);
    }

    #[test]
    fn unwritable_meta_is_rejected() {
        let t = FrequencyTrace::new(vec![1], 1, 0).unwrap().with_meta("a=b", "c");
        assert!(trace_to_string(&t).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_identity(samples in prop::collection::vec(any::<u64>(), 1..200),
                               interval in 1u64..10_000, core in any::<u32>(), start in any::<u64>(),
                               meta in prop::collection::btree_map("[a-z_.]{1,8}", "[ -~]{0,16}", 0..4)) {
            let mut t = FrequencyTrace::new(samples, interval, core).unwrap().with_start_time(start);
            *t.meta_mut() = meta;
            let text = trace_to_string(&t).unwrap();
            prop_assert_eq!(trace_from_str(&text).unwrap(), t);
        }
    }
}

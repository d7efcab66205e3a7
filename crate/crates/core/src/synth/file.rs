//! Template bank text format. One block per template, blocks separated by
//! blank lines:
//!
//! ```text
//! freqprint-templates v1
//!
//! label=class00
//! base_khz=1000000
//! levels=1800000,2400000,2800000
//! jitter_khz=50000
//! segments=12:40:2,90:25:0
//! prefix.name=microvm_boot
//! prefix.length=100
//! prefix.segments=0:30:1
//! ```
//!
//! Segments are `start:len:level` triples.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::util;

use super::{BurstSegment, PrefixSegment, SignatureTemplate};

pub const TEMPLATES_MAGIC: &str = "freqprint-templates v1";

fn segments_to_string(segs: &[BurstSegment]) -> String {
    segs.iter()
        .map(|s| format!("{}:{}:{}", s.start, s.len, s.level))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_segments(v: &str, line: usize) -> Result<Vec<BurstSegment>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            let parts: Vec<_> = s.trim().split(':').collect();
            let bad = || Error::parse(line, format!("bad segment {s:?}, expected start:len:level"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let p = |x: &str| x.parse::<usize>().map_err(|_| bad());
            Ok(BurstSegment::new(p(parts[0])?, p(parts[1])?, p(parts[2])?))
        })
        .collect()
}

pub fn templates_to_string(templates: &[SignatureTemplate]) -> Result<String> {
    let mut out = String::from(TEMPLATES_MAGIC);
    out.push('\n');
    for t in templates {
        if t.label.is_empty() || t.label.contains(['\n', '\r']) {
            return Err(Error::InvalidArgument(format!("label {:?} cannot be written", t.label)));
        }
        let levels = t.levels.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let _ = write!(
            out,
            "\nlabel={}\nbase_khz={}\nlevels={levels}\njitter_khz={}\nsegments={}\n",
            t.label,
            t.base_khz,
            t.jitter_khz,
            segments_to_string(&t.segments)
        );
        if let Some(p) = &t.prefix {
            if p.name.contains(['\n', '\r']) {
                return Err(Error::InvalidArgument(format!("prefix name {:?} cannot be written", p.name)));
            }
            let _ = write!(
                out,
                "prefix.name={}\nprefix.length={}\nprefix.segments={}\n",
                p.name,
                p.length,
                segments_to_string(&p.segments)
            );
        }
    }
    Ok(out)
}

#[derive(Default)]
struct Partial {
    start_line: usize,
    label: Option<String>,
    base: Option<u64>,
    levels: Vec<u64>,
    jitter: u64,
    segments: Vec<BurstSegment>,
    prefix_name: Option<String>,
    prefix_length: Option<usize>,
    prefix_segments: Vec<BurstSegment>,
}

impl Partial {
    fn finish(self) -> Result<SignatureTemplate> {
        let line = self.start_line;
        let label = self.label.ok_or_else(|| Error::parse(line, "template block without label"))?;
        let base_khz = self.base.ok_or_else(|| Error::parse(line, "template block without base_khz"))?;
        let prefix = match (self.prefix_name, self.prefix_length) {
            (Some(name), Some(length)) => Some(PrefixSegment {
                name,
                length,
                segments: self.prefix_segments,
            }),
            (None, None) => None,
            _ => return Err(Error::parse(line, "prefix needs both prefix.name and prefix.length")),
        };
        Ok(SignatureTemplate {
            label,
            base_khz,
            levels: self.levels,
            segments: self.segments,
            jitter_khz: self.jitter,
            prefix,
        })
    }
}

pub fn templates_from_str(text: &str) -> Result<Vec<SignatureTemplate>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim_end() == TEMPLATES_MAGIC => {}
        _ => return Err(Error::parse(1, format!("expected header `{TEMPLATES_MAGIC}`"))),
    }
    let mut out = Vec::new();
    let mut cur: Option<Partial> = None;
    for (n, line) in lines {
        if line.trim().is_empty() {
            if let Some(p) = cur.take() {
                out.push(p.finish()?);
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(n, format!("expected key=value, got {line:?}")))?;
        let p = cur.get_or_insert_with(|| Partial {
            start_line: n,
            ..Default::default()
        });
        let num = |v: &str| {
            v.trim()
                .parse::<u64>()
                .map_err(|_| Error::parse(n, format!("{key} must be a non-negative integer")))
        };
        match key {
            "label" => p.label = Some(value.to_string()),
            "base_khz" => p.base = Some(num(value)?),
            "jitter_khz" => p.jitter = num(value)?,
            "levels" => {
                p.levels = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(num).collect::<Result<_>>()?
                }
            }
            "segments" => p.segments = parse_segments(value, n)?,
            "prefix.name" => p.prefix_name = Some(value.to_string()),
            "prefix.length" => p.prefix_length = Some(num(value)? as usize),
            "prefix.segments" => p.prefix_segments = parse_segments(value, n)?,
            other => return Err(Error::parse(n, format!("unknown key {other:?}"))),
        }
    }
    if let Some(p) = cur.take() {
        out.push(p.finish()?);
    }
    Ok(out)
}

pub fn write_template_file(templates: &[SignatureTemplate], path: &Path) -> Result<()> {
    util::write_atomic(path, templates_to_string(templates)?.as_bytes())
}

pub fn read_template_file(path: &Path) -> Result<Vec<SignatureTemplate>> {
    templates_from_str(&util::read_to_string(path)?)
}

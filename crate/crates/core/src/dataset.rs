//! Labeled trace collections, train/validation/test bookkeeping and the
//! on-disk manifest (`<label>\t<relative trace path>\t<split>` per line).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::trace::{read_trace_file, write_trace_file, LabeledTrace};
use crate::util;

pub const MANIFEST_FILE: &str = "manifest.tsv";

pub const TRAIN_FRACTION: f64 = 0.6;
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Minimum number of items per class before a split is attempted.
pub const MIN_ITEMS_PER_CLASS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceDataset {
    classes: Vec<String>,
    items: Vec<LabeledTrace>,
    splits: Vec<Split>,
}

impl TraceDataset {
    /// Builds a dataset with every item unassigned. Classes are ordered by
    /// first appearance.
    pub fn new(items: Vec<LabeledTrace>) -> Self {
        let mut classes: Vec<String> = Vec::new();
        for it in &items {
            if !classes.iter().any(|c| c == it.label()) {
                classes.push(it.label().to_string());
            }
        }
        let splits = vec![Split::Unassigned; items.len()];
        TraceDataset {
            classes,
            items,
            splits,
        }
    }

    /// Builds a dataset with an explicit class order and split tags.
    pub fn with_parts(classes: Vec<String>, items: Vec<LabeledTrace>, splits: Vec<Split>) -> Result<Self> {
        if splits.len() != items.len() {
            return Err(Error::InvalidDataset("one split tag per item required".into()));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(Error::InvalidDataset(format!("duplicate class {c:?}")));
            }
        }
        if let Some(it) = items.iter().find(|it| !classes.iter().any(|c| c == it.label())) {
            return Err(Error::InvalidDataset(format!("label {:?} is not a listed class", it.label())));
        }
        Ok(TraceDataset {
            classes,
            items,
            splits,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn items(&self) -> &[LabeledTrace] {
        &self.items
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn is_split(&self) -> bool {
        !self.splits.is_empty() && self.splits.iter().all(|s| *s != Split::Unassigned)
    }

    /// Items tagged with `split`, in dataset order.
    pub fn subset(&self, split: Split) -> impl Iterator<Item = &LabeledTrace> {
        self.items
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(it, _)| it)
    }

    /// Applies `f` to every trace, keeping labels and split tags.
    pub fn map_traces<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &LabeledTrace) -> Result<crate::trace::FrequencyTrace>,
    {
        let items = self
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| LabeledTrace::new(f(i, it)?, it.label()))
            .collect::<Result<Vec<_>>>()?;
        Ok(TraceDataset {
            classes: self.classes.clone(),
            items,
            splits: self.splits.clone(),
        })
    }

    pub fn with_splits(mut self, splits: Vec<Split>) -> Result<Self> {
        if splits.len() != self.items.len() {
            return Err(Error::InvalidDataset("one split tag per item required".into()));
        }
        self.splits = splits;
        Ok(self)
    }

    /// Random per-class 60/20/20 assignment, reproducible for a seed.
    pub fn split(&self, seed: u64) -> Result<Self> {
        split_dataset(self, seed)
    }
}

/// Target (train, validation, test) counts for a class of `m` items.
pub fn split_counts(m: usize) -> (usize, usize, usize) {
    let train = (TRAIN_FRACTION * m as f64).round() as usize;
    let val = (VALIDATION_FRACTION * m as f64).round() as usize;
    let train = train.min(m);
    let val = val.min(m - train);
    (train, val, m - train - val)
}

pub fn split_dataset(ds: &TraceDataset, seed: u64) -> Result<TraceDataset> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, it) in ds.items.iter().enumerate() {
        let c = ds
            .class_index(it.label())
            .ok_or_else(|| Error::InvalidDataset(format!("unknown label {:?}", it.label())))?;
        by_class.entry(c).or_default().push(i);
    }
    for (ci, class) in ds.classes.iter().enumerate() {
        let n = by_class.get(&ci).map_or(0, Vec::len);
        if n < MIN_ITEMS_PER_CLASS {
            return Err(Error::InvalidDataset(format!(
                "class {class:?} has {n} items, need at least {MIN_ITEMS_PER_CLASS}"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Split::Unassigned; ds.items.len()];
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let (train, val, _) = split_counts(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            splits[i] = if k < train {
                Split::Train
            } else if k < train + val {
                Split::Validation
            } else {
                Split::Test
            };
        }
    }
    Ok(TraceDataset {
        classes: ds.classes.clone(),
        items: ds.items.clone(),
        splits,
    })
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub label: String,
    pub path: PathBuf,
    pub split: Split,
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        let path = e
            .path
            .to_str()
            .ok_or_else(|| Error::InvalidArgument(format!("non-UTF-8 path {}", e.path.display())))?;
        if e.label.is_empty() || e.label.contains(['\t', '\n', '\r']) || path.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidArgument(format!(
                "manifest entry {:?} cannot be written as a line",
                e.label
            )));
        }
        out.push_str(&format!("{}\t{}\t{}\n", e.label, path, e.split));
    }
    Ok(out)
}

pub fn manifest_from_str(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols[0].is_empty() || cols[1].is_empty() {
            return Err(Error::parse(n, "expected <label>\\t<path>\\t<split>"));
        }
        let split = cols[2]
            .trim()
            .parse::<Split>()
            .map_err(|e| Error::parse(n, e.to_string()))?;
        entries.push(ManifestEntry {
            label: cols[0].to_string(),
            path: PathBuf::from(cols[1]),
            split,
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    manifest_from_str(&util::read_to_string(path)?)
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    util::write_atomic(path, manifest_to_string(entries)?.as_bytes())
}

/// Accepts either a dataset directory or a manifest file path.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads a dataset from a directory containing `manifest.tsv` (or from the
/// manifest path itself). Trace paths are relative to the manifest.
pub fn read_dataset(path: &Path) -> Result<TraceDataset> {
    let manifest = manifest_path(path);
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(&manifest)?;
    let mut items = Vec::with_capacity(entries.len());
    let mut splits = Vec::with_capacity(entries.len());
    for e in entries {
        let trace = read_trace_file(&base.join(&e.path))?;
        items.push(LabeledTrace::new(trace, e.label)?);
        splits.push(e.split);
    }
    TraceDataset::new(items).with_splits(splits)
}

/// Writes every trace under `dir/traces/` and the manifest at
/// `dir/manifest.tsv`.
pub fn write_dataset(ds: &TraceDataset, dir: &Path) -> Result<PathBuf> {
    let mut per_class: HashMap<&str, usize> = HashMap::new();
    let mut entries = Vec::with_capacity(ds.len());
    for (it, split) in ds.items.iter().zip(&ds.splits) {
        let n = per_class.entry(it.label()).or_default();
        let class = ds.class_index(it.label()).unwrap_or(0);
        let rel = PathBuf::from("traces")
            .join(format!("{class:03}_{}", sanitize_label(it.label())))
            .join(format!("{:05}.trace", *n));
        *n += 1;
        write_trace_file(&it.trace, &dir.join(&rel))?;
        entries.push(ManifestEntry {
            label: it.label().to_string(),
            path: rel,
            split: *split,
        });
    }
    let manifest = dir.join(MANIFEST_FILE);
    write_manifest(&entries, &manifest)?;
    Ok(manifest)
}

/// Rewrites only the split column of an existing manifest.
pub fn update_manifest_splits(path: &Path, ds: &TraceDataset) -> Result<()> {
    let manifest = manifest_path(path);
    let mut entries = read_manifest(&manifest)?;
    if entries.len() != ds.len() {
        return Err(Error::InvalidDataset("manifest and dataset disagree on item count".into()));
    }
    for (e, s) in entries.iter_mut().zip(&ds.splits) {
        e.split = *s;
    }
    write_manifest(&entries, &manifest)
}

/// File-system safe rendition of a label (`nginx:1.25` → `nginx_1.25`).
pub fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

use std::fmt::Write as _;

use crate::dataset::{Split, TraceDataset};
use crate::error::{Error, Result};
use crate::trace::{frequency_activity, ActivityConfig, LabeledTrace};

use super::pipeline::{rank, Classifier};

pub const REPORT_MAGIC: &str = "freqprint-report v1";
const NA: &str = "NA";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
    pub total: usize,
    /// `confusion[true][predicted]` over top-1 predictions.
    pub confusion: Vec<Vec<usize>>,
    pub class_counts: Vec<usize>,
    /// `None` for classes absent from the evaluated set.
    pub misprediction: Vec<Option<f64>>,
    /// Mean frequency activity of the evaluated traces per class.
    pub mean_activity: Vec<Option<f64>>,
    pub activity_threshold_khz: u64,
}

/// True if `label` is among the `k` most probable classes.
pub fn top_k_hit(probs: &[f64], label: usize, k: usize) -> bool {
    rank(probs).into_iter().take(k).any(|i| i == label)
}

pub fn evaluate<'a, I>(clf: &Classifier, items: I) -> Result<EvalReport>
where
    I: IntoIterator<Item = &'a LabeledTrace>,
{
    evaluate_with(clf, items, &ActivityConfig::default())
}

pub fn evaluate_split(clf: &Classifier, ds: &TraceDataset, split: Split) -> Result<EvalReport> {
    evaluate(clf, ds.subset(split))
}

pub fn evaluate_with<'a, I>(clf: &Classifier, items: I, activity: &ActivityConfig) -> Result<EvalReport>
where
    I: IntoIterator<Item = &'a LabeledTrace>,
{
    let c = clf.labels().len();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut hits = [0usize; 3];
    let mut activity_sum = vec![0u64; c];
    let mut total = 0usize;
    for it in items {
        let y = clf.class_index(it.label()).ok_or_else(|| {
            Error::InvalidDataset(format!("label {:?} was not seen at training time", it.label()))
        })?;
        let p = clf.probabilities(&it.trace)?;
        let order = rank(&p);
        confusion[y][order[0]] += 1;
        for (h, k) in hits.iter_mut().zip([1, 3, 5]) {
            if order.iter().take(k).any(|&i| i == y) {
                *h += 1;
            }
        }
        activity_sum[y] += frequency_activity(&it.trace, activity) as u64;
        total += 1;
    }
    if total == 0 {
        return Err(Error::InvalidDataset("nothing to evaluate".into()));
    }
    let class_counts: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let per_class = |f: &dyn Fn(usize) -> f64| -> Vec<Option<f64>> {
        (0..c).map(|i| (class_counts[i] > 0).then(|| f(i))).collect()
    };
    let misprediction = per_class(&|i| 1.0 - confusion[i][i] as f64 / class_counts[i] as f64);
    let mean_activity = per_class(&|i| activity_sum[i] as f64 / class_counts[i] as f64);
    let n = total as f64;
    Ok(EvalReport {
        labels: clf.labels().to_vec(),
        top1: hits[0] as f64 / n,
        top3: hits[1] as f64 / n,
        top5: hits[2] as f64 / n,
        total,
        confusion,
        class_counts,
        misprediction,
        mean_activity,
        activity_threshold_khz: activity.threshold_khz,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>> {
    if s == NA {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::parse(line, format!("expected a number or {NA}, got {s:?}")))
}

impl EvalReport {
    pub fn confusion_trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.confusion[i][i]).sum()
    }

    /// Key=value summary block, then a per-class table and the confusion
    /// matrix, both tab-separated.
    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "{REPORT_MAGIC}\ntop1={}\ntop3={}\ntop5={}\ntotal={}\nclasses={}\nactivity_threshold_khz={}\n\n",
            self.top1,
            self.top3,
            self.top5,
            self.total,
            self.labels.len(),
            self.activity_threshold_khz
        );
        s.push_str("label\ttest_count\tcorrect\tmisprediction_rate\tmean_activity\n");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = writeln!(
                s,
                "{l}\t{}\t{}\t{}\t{}",
                self.class_counts[i],
                self.confusion[i][i],
                opt(self.misprediction[i]),
                opt(self.mean_activity[i])
            );
        }
        s.push_str("\nconfusion");
        for l in &self.labels {
            let _ = write!(s, "\t{l}");
        }
        s.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            s.push_str(l);
            for v in &self.confusion[i] {
                let _ = write!(s, "\t{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.first().map(|l| l.trim_end()) != Some(REPORT_MAGIC) {
            return Err(Error::parse(1, format!("expected header `{REPORT_MAGIC}`")));
        }
        let mut i = 1;
        let mut kv = std::collections::BTreeMap::new();
        while i < lines.len() && !lines[i].is_empty() {
            let (k, v) = lines[i]
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, "expected key=value"))?;
            kv.insert(k, (i + 1, v));
            i += 1;
        }
        let summary_end = i + 1;
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::parse(summary_end, format!("summary lacks {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            let (ln, v) = get(k)?;
            v.parse().map_err(|_| Error::parse(ln, format!("{k} is not a number")))
        };
        let int = |k: &str| -> Result<u64> {
            let (ln, v) = get(k)?;
            v.parse().map_err(|_| Error::parse(ln, format!("{k} is not an integer")))
        };
        let n_classes = int("classes")? as usize;
        let (top1, top3, top5) = (num("top1")?, num("top3")?, num("top5")?);
        let total = int("total")? as usize;
        let activity_threshold_khz = int("activity_threshold_khz")?;
        i += 2; // blank line and table header
        let mut labels = Vec::with_capacity(n_classes);
        let mut class_counts = Vec::with_capacity(n_classes);
        let mut misprediction = Vec::with_capacity(n_classes);
        let mut mean_activity = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            let line = lines.get(i).ok_or_else(|| Error::parse(i + 1, "per-class table is truncated"))?;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::parse(i + 1, "per-class rows need 5 fields"));
            }
            labels.push(f[0].to_string());
            class_counts.push(f[1].parse().map_err(|_| Error::parse(i + 1, "bad test_count"))?);
            misprediction.push(parse_opt(f[3], i + 1)?);
            mean_activity.push(parse_opt(f[4], i + 1)?);
            i += 1;
        }
        i += 2; // blank line and confusion header
        let mut confusion = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            let line = lines.get(i).ok_or_else(|| Error::parse(i + 1, "confusion matrix is truncated"))?;
            let row = line
                .split('\t')
                .skip(1)
                .map(|v| v.parse::<usize>().map_err(|_| Error::parse(i + 1, "bad confusion count")))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != n_classes {
                return Err(Error::parse(i + 1, "confusion row has the wrong width"));
            }
            confusion.push(row);
            i += 1;
        }
        Ok(EvalReport {
            labels,
            top1,
            top3,
            top5,
            total,
            confusion,
            class_counts,
            misprediction,
            mean_activity,
            activity_threshold_khz,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityRow {
    pub label: String,
    pub misprediction_rate: Option<f64>,
    pub mean_activity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityReport {
    /// Sorted by descending misprediction rate; classes without test data last.
    pub rows: Vec<ActivityRow>,
    /// Spearman correlation of misprediction rate against mean activity, or
    /// `None` when either column has no spread.
    pub spearman: Option<f64>,
    pub threshold_khz: u64,
}

/// Per-class misprediction rate next to the mean frequency activity of that
/// class's traces in `ds`.
pub fn activity_report(report: &EvalReport, ds: &TraceDataset, cfg: &ActivityConfig) -> ActivityReport {
    let mut rows: Vec<(usize, ActivityRow)> = report
        .labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let acts: Vec<usize> = ds
                .items()
                .iter()
                .filter(|it| it.label() == label)
                .map(|it| frequency_activity(&it.trace, cfg))
                .collect();
            let mean = (!acts.is_empty()).then(|| acts.iter().sum::<usize>() as f64 / acts.len() as f64);
            (
                i,
                ActivityRow {
                    label: label.clone(),
                    misprediction_rate: report.misprediction.get(i).copied().flatten(),
                    mean_activity: mean,
                },
            )
        })
        .collect();
    rows.sort_by(|(ia, a), (ib, b)| match (a.misprediction_rate, b.misprediction_rate) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(ia.cmp(ib)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => ia.cmp(ib),
    });
    let rows: Vec<ActivityRow> = rows.into_iter().map(|(_, r)| r).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| Some((r.misprediction_rate?, r.mean_activity?)))
        .unzip();
    ActivityReport {
        spearman: spearman(&xs, &ys),
        rows,
        threshold_khz: cfg.threshold_khz,
    }
}

impl ActivityReport {
    pub fn to_tsv(&self) -> String {
        let mut s = format!("threshold_khz={}\nspearman={}\n\n", self.threshold_khz, opt(self.spearman));
        s.push_str("label\tmisprediction_rate\tmean_activity\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}", r.label, opt(r.misprediction_rate), opt(r.mean_activity));
        }
        s
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{fit, FitConfig, Preset};
    use crate::synth::{default_template_bank, generate, SignatureTemplate, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_random_probabilities_hit_k_over_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = 10;
        let draws = 10_000;
        for k in [1, 3, 5] {
            let mut hits = 0;
            for _ in 0..draws {
                let p: Vec<f64> = (0..c).map(|_| rng.random::<f64>()).collect();
                if top_k_hit(&p, rng.random_range(0..c), k) {
                    hits += 1;
                }
            }
            let rate = hits as f64 / draws as f64;
            let expect = k as f64 / c as f64;
            // four standard errors
            let tol = 4.0 * (expect * (1.0 - expect) / draws as f64).sqrt();
            assert!((rate - expect).abs() < tol, "k={k}: {rate}");
        }
    }

    #[test]
    fn certain_prediction_hits_every_k() {
        let p = [0.0, 0.0, 1.0, 0.0];
        for k in [1, 3, 5] {
            assert!(top_k_hit(&p, 2, k));
        }
        assert!(!top_k_hit(&p, 0, 1));
    }

    #[test]
    fn report_invariants_and_round_trip() {
        let bank = default_template_bank(4, 96, 9).unwrap();
        let mut synth = SynthConfig::new(bank, 96, 10, 9);
        synth.concurrent_disturbers = 6;
        let ds = generate(&synth).unwrap().split(9).unwrap();
        let mut cfg = FitConfig::new(Preset::Native, 9);
        cfg.train.max_epochs = 2;
        let clf = fit(&ds, &cfg).unwrap().classifier;
        let r = evaluate_split(&clf, &ds, Split::Test).unwrap();
        assert!(r.top1 <= r.top3 && r.top3 <= r.top5);
        assert_eq!(r.total, ds.subset(Split::Test).count());
        for (i, row) in r.confusion.iter().enumerate() {
            let expect = ds.subset(Split::Test).filter(|it| it.label() == r.labels[i]).count();
            assert_eq!(row.iter().sum::<usize>(), expect);
        }
        assert_eq!(r.confusion_trace() as f64 / r.total as f64, r.top1);
        assert_eq!(r, evaluate_split(&clf, &ds, Split::Test).unwrap());
        let back = EvalReport::from_tsv(&r.to_tsv()).unwrap();
        assert_eq!(back, r);
        assert!(EvalReport::from_tsv("nope").is_err());
    }

    fn report_with(labels: &[&str], mis: &[Option<f64>]) -> EvalReport {
        let c = labels.len();
        EvalReport {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            top1: 0.0,
            top3: 0.0,
            top5: 0.0,
            total: 0,
            confusion: vec![vec![0; c]; c],
            class_counts: vec![0; c],
            misprediction: mis.to_vec(),
            mean_activity: vec![None; c],
            activity_threshold_khz: 1_200_000,
        }
    }

    #[test]
    fn activity_rows_and_correlation() {
        let mut flat = SignatureTemplate::flat("flat", 1_000_000, vec![2_000_000], 0);
        flat.segments.clear();
        let mut busy = SignatureTemplate::flat("busy", 1_000_000, vec![2_000_000], 0);
        busy.segments.push(crate::synth::BurstSegment::new(10, 40, 0));
        let mut mid = SignatureTemplate::flat("mid", 1_000_000, vec![2_000_000], 0);
        mid.segments.push(crate::synth::BurstSegment::new(10, 10, 0));
        let ds = generate(&SynthConfig::new(vec![busy, flat, mid], 100, 5, 0)).unwrap();
        let cfg = ActivityConfig::default();

        let perfect = report_with(&["busy", "flat", "mid"], &[Some(0.0), Some(0.0), Some(0.0)]);
        let a = activity_report(&perfect, &ds, &cfg);
        assert_eq!(a.spearman, None);
        let min = a.rows.iter().min_by(|x, y| x.mean_activity.unwrap().total_cmp(&y.mean_activity.unwrap())).unwrap();
        assert_eq!(min.label, "flat");
        assert_eq!(min.mean_activity, Some(0.0));

        let r = report_with(&["busy", "flat", "mid"], &[Some(0.1), Some(0.6), None]);
        let a = activity_report(&r, &ds, &cfg);
        let order: Vec<_> = a.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(order, ["flat", "busy", "mid"]);
        assert_eq!(a.spearman, Some(-1.0));
        assert!(a.to_tsv().contains("spearman=-1"));
    }

    #[test]
    fn spearman_reference_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(spearman(&[1.0], &[1.0]), None);
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
        // x ranks [1.5,1.5,3,4], y ranks [1,2,3,4]: 4.5 / sqrt(4.5 * 5)
        let rho = spearman(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((rho - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-12);
    }
}

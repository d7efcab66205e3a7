use crate::dataset::{Split, TraceDataset};
use crate::error::{Error, Result};

use super::pipeline::{fit, FitConfig};
use super::report::{evaluate_split, EvalReport};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub size: usize,
    pub epochs: usize,
    pub report: EvalReport,
}

/// Retrain from scratch on each prefix length and evaluate on the test split.
pub fn sample_size_sweep(ds: &TraceDataset, sizes: &[usize], cfg: &FitConfig) -> Result<Vec<SweepPoint>> {
    let shortest = ds.items().iter().map(|it| it.trace.len()).min().unwrap_or(0);
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > shortest) {
        return Err(Error::InvalidArgument(format!(
            "sample size {s} outside 1..={shortest} (shortest trace)"
        )));
    }
    sizes
        .iter()
        .map(|&size| {
            let cfg = FitConfig {
                input_length: Some(size),
                ..cfg.clone()
            };
            let out = fit(ds, &cfg)?;
            let report = evaluate_split(&out.classifier, ds, Split::Test)?;
            log::info!("sweep size {size}: top1={:.3} top3={:.3} top5={:.3}", report.top1, report.top3, report.top5);
            Ok(SweepPoint {
                size,
                epochs: out.history.len(),
                report,
            })
        })
        .collect()
}

/// `size\ttop1\ttop3\ttop5` table.
pub fn sweep_to_tsv(points: &[SweepPoint]) -> String {
    let mut s = String::from("size\ttop1\ttop3\ttop5\n");
    for p in points {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", p.size, p.report.top1, p.report.top3, p.report.top5));
    }
    s
}

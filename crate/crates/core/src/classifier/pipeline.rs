use std::collections::BTreeMap;
use std::path::Path;

use crate::dataset::{Split, TraceDataset};
use crate::error::{Error, Result};
use crate::nn::{self, CnnModel, EpochMetrics, Mode, Tensor, TrainConfig};
use crate::trace::{gaussian_smooth, moving_max, normalize, truncate, FrequencyTrace};

use super::preset::Preset;

const META_LABELS: &str = "labels";
const META_PRESET: &str = "preset";
const META_LENGTH: &str = "preprocess.length";
const META_SMOOTH: &str = "preprocess.smooth_window";
const META_MOVMAX: &str = "preprocess.movmax_window";
const META_FMIN: &str = "preprocess.f_min_khz";
const META_FMAX: &str = "preprocess.f_max_khz";

/// Trace conditioning shared by training and inference: truncate, optional
/// Gaussian smoothing, optional moving max, then min-max normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preprocess {
    pub length: usize,
    pub smooth_window: Option<usize>,
    pub movmax_window: Option<usize>,
    pub f_min_khz: u64,
    pub f_max_khz: u64,
}

impl Preprocess {
    /// Truncation and filters, without normalization.
    pub fn filter(&self, trace: &FrequencyTrace) -> Result<FrequencyTrace> {
        filter_trace(trace, self.length, self.smooth_window, self.movmax_window)
    }

    pub fn apply(&self, trace: &FrequencyTrace) -> Result<Tensor> {
        let t = self.filter(trace)?;
        Tensor::sequence(normalize(&t, self.f_min_khz, self.f_max_khz)?)
    }

    fn write_meta(&self, meta: &mut BTreeMap<String, String>) {
        let opt = |w: Option<usize>| w.map_or("0".to_string(), |v| v.to_string());
        meta.insert(META_LENGTH.into(), self.length.to_string());
        meta.insert(META_SMOOTH.into(), opt(self.smooth_window));
        meta.insert(META_MOVMAX.into(), opt(self.movmax_window));
        meta.insert(META_FMIN.into(), self.f_min_khz.to_string());
        meta.insert(META_FMAX.into(), self.f_max_khz.to_string());
    }

    fn read_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn num(meta: &BTreeMap<String, String>, key: &str) -> Result<u64> {
            meta.get(key)
                .ok_or_else(|| Error::Format(format!("model metadata lacks {key}")))?
                .parse()
                .map_err(|_| Error::Format(format!("model metadata {key} is not an integer")))
        }
        let window = |k| num(meta, k).map(|v| (v > 0).then_some(v as usize));
        Ok(Preprocess {
            length: num(meta, META_LENGTH)? as usize,
            smooth_window: window(META_SMOOTH)?,
            movmax_window: window(META_MOVMAX)?,
            f_min_khz: num(meta, META_FMIN)?,
            f_max_khz: num(meta, META_FMAX)?,
        })
    }
}

fn filter_trace(
    trace: &FrequencyTrace,
    length: usize,
    smooth: Option<usize>,
    movmax: Option<usize>,
) -> Result<FrequencyTrace> {
    if trace.len() < length {
        return Err(Error::Shape(format!(
            "trace has {} samples, model expects at least {length}",
            trace.len()
        )));
    }
    let mut t = truncate(trace, length)?;
    if let Some(w) = smooth {
        t = gaussian_smooth(&t, w)?;
    }
    if let Some(w) = movmax {
        t = moving_max(&t, w)?;
    }
    Ok(t)
}

/// A trained network together with its class labels and preprocessing,
/// all persisted in the model file's metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    model: CnnModel,
    labels: Vec<String>,
    preprocess: Preprocess,
}

impl Classifier {
    pub fn new(mut model: CnnModel, labels: Vec<String>, preprocess: Preprocess) -> Result<Self> {
        if labels.len() != model.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for a {}-class model",
                labels.len(),
                model.num_classes()
            )));
        }
        if let Some(l) = labels.iter().find(|l| l.is_empty() || l.contains('\n')) {
            return Err(Error::InvalidArgument(format!("label {l:?} cannot be stored")));
        }
        if preprocess.length != model.input_length() {
            return Err(Error::Shape(format!(
                "preprocessing length {} differs from model input {}",
                preprocess.length,
                model.input_length()
            )));
        }
        if preprocess.f_max_khz <= preprocess.f_min_khz {
            return Err(Error::InvalidArgument("normalization bounds need f_max > f_min".into()));
        }
        model.meta_mut().insert(META_LABELS.into(), labels.join("\n"));
        preprocess.write_meta(model.meta_mut());
        Ok(Classifier {
            model,
            labels,
            preprocess,
        })
    }

    /// Recover a classifier from a model carrying classifier metadata.
    pub fn from_model(model: CnnModel) -> Result<Self> {
        let labels: Vec<String> = model
            .meta()
            .get(META_LABELS)
            .ok_or_else(|| Error::Format("model metadata lacks labels".into()))?
            .split('\n')
            .map(String::from)
            .collect();
        let preprocess = Preprocess::read_meta(model.meta())?;
        Self::new(model, labels, preprocess).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_model(nn::load_model(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        nn::save_model(&self.model, path)
    }

    pub fn model(&self) -> &CnnModel {
        &self.model
    }

    pub fn into_model(self) -> CnnModel {
        self.model
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn preprocess(&self) -> &Preprocess {
        &self.preprocess
    }

    pub fn preset(&self) -> Option<Preset> {
        self.model.meta().get(META_PRESET).and_then(|p| p.parse().ok())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn probabilities(&self, trace: &FrequencyTrace) -> Result<Vec<f64>> {
        self.model.forward(&self.preprocess.apply(trace)?, Mode::Eval)
    }

    /// Every class with its probability, most likely first; equal
    /// probabilities keep class order.
    pub fn predict(&self, trace: &FrequencyTrace) -> Result<Vec<(String, f64)>> {
        let p = self.probabilities(trace)?;
        Ok(rank(&p).into_iter().map(|i| (self.labels[i].clone(), p[i])).collect())
    }
}

/// Class indices by descending probability, ties by ascending index.
pub fn rank(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub preset: Preset,
    /// Samples fed to the network; `None` uses the shortest trace.
    pub input_length: Option<usize>,
    pub smooth_window: Option<usize>,
    pub movmax_window: Option<usize>,
    pub model_seed: u64,
    pub train: TrainConfig,
}

impl FitConfig {
    pub fn new(preset: Preset, seed: u64) -> Self {
        FitConfig {
            preset,
            input_length: None,
            smooth_window: None,
            movmax_window: None,
            model_seed: seed,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub classifier: Classifier,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    /// Eval-mode accuracy of the returned weights on the training split.
    pub train_accuracy: f64,
}

/// Train a preset network on the dataset's train split, early-stopping on
/// its validation split. Normalization bounds come from the train split only.
pub fn fit(ds: &TraceDataset, cfg: &FitConfig) -> Result<FitOutcome> {
    if !ds.is_split() {
        return Err(Error::InvalidDataset("dataset has no train/validation/test assignment".into()));
    }
    let train_items: Vec<_> = ds.subset(Split::Train).collect();
    let val_items: Vec<_> = ds.subset(Split::Validation).collect();
    if train_items.is_empty() || val_items.is_empty() {
        return Err(Error::InvalidDataset("train and validation splits must be non-empty".into()));
    }
    let shortest = ds.items().iter().map(|it| it.trace.len()).min().unwrap_or(0);
    let length = cfg.input_length.unwrap_or(shortest);
    if length == 0 || length > shortest {
        return Err(Error::InvalidArgument(format!(
            "input length {length} exceeds the shortest trace ({shortest} samples)"
        )));
    }

    let filtered = train_items
        .iter()
        .map(|it| filter_trace(&it.trace, length, cfg.smooth_window, cfg.movmax_window))
        .collect::<Result<Vec<_>>>()?;
    let f_min = filtered.iter().map(FrequencyTrace::min_sample).min().expect("non-empty");
    let mut f_max = filtered.iter().map(FrequencyTrace::max_sample).max().expect("non-empty");
    if f_max <= f_min {
        f_max = f_min + 1;
    }
    let preprocess = Preprocess {
        length,
        smooth_window: cfg.smooth_window,
        movmax_window: cfg.movmax_window,
        f_min_khz: f_min,
        f_max_khz: f_max,
    };

    let labels = ds.classes().to_vec();
    let tensors = |items: &[&crate::trace::LabeledTrace]| -> Result<Vec<(Tensor, usize)>> {
        items
            .iter()
            .map(|it| {
                let y = ds.class_index(it.label()).expect("dataset labels are in its classes");
                Ok((preprocess.apply(&it.trace)?, y))
            })
            .collect()
    };
    let train_t = tensors(&train_items)?;
    let val_t = tensors(&val_items)?;
    let train_s: Vec<nn::Sample<'_>> = train_t.iter().map(|(x, y)| (x, *y)).collect();
    let val_s: Vec<nn::Sample<'_>> = val_t.iter().map(|(x, y)| (x, *y)).collect();

    let model = cfg.preset.build(length, labels.len(), cfg.model_seed)?;
    log::info!(
        "training {} preset: {} classes, {} train / {} validation traces of {length} samples",
        cfg.preset,
        labels.len(),
        train_s.len(),
        val_s.len()
    );
    let out = nn::train(&model, &train_s, &val_s, &cfg.train)?;
    let (_, train_accuracy) = nn::evaluate_samples(&out.model, &train_s)?;
    Ok(FitOutcome {
        classifier: Classifier::new(out.model, labels, preprocess)?,
        history: out.history,
        best_epoch: out.best_epoch,
        train_accuracy,
    })
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::model::{cross_entropy, CnnModel, Dropout, Gradients, Mode};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            early_stop_patience: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_epsilon <= 0.0 {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1) and epsilon be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss over the epoch's mini-batches, dropout active.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation accuracy.
    pub model: CnnModel,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Best {
    accuracy: f64,
    loss: f64,
    epoch: usize,
    model: CnnModel,
}

/// Labelled examples borrowed from elsewhere.
pub type Sample<'a> = (&'a Tensor, usize);

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    fn new(model: &CnnModel) -> Self {
        Adam {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut CnnModel, g: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let lr = cfg.learning_rate;
        for (li, layer) in model.layers_mut().iter_mut().enumerate() {
            if layer.frozen {
                continue;
            }
            let (Some((w, b)), Some(gl), Some(ml), Some(vl)) = (
                layer.params_mut(),
                g.layers[li].as_ref(),
                self.m.layers[li].as_mut(),
                self.v.layers[li].as_mut(),
            ) else {
                continue;
            };
            let params = w.iter_mut().chain(b.iter_mut());
            let grads = gl.weights.iter().chain(&gl.bias);
            let ms = ml.weights.iter_mut().chain(ml.bias.iter_mut());
            let vs = vl.weights.iter_mut().chain(vl.bias.iter_mut());
            for (((p, gv), m), v) in params.zip(grads).zip(ms).zip(vs) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gv;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gv * gv;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_epsilon);
            }
        }
    }
}

/// Mean eval-mode loss and accuracy over `samples`.
pub fn evaluate_samples(model: &CnnModel, samples: &[Sample<'_>]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidDataset("cannot evaluate on an empty set".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, y) in samples {
        let p = model.forward(x, Mode::Eval)?;
        loss += cross_entropy(&p, *y)?;
        if argmax(&p) == *y {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

/// Mini-batch Adam on categorical cross-entropy with early stopping on
/// validation accuracy. Deterministic for a fixed seed.
pub fn train(model: &CnnModel, train_set: &[Sample<'_>], val_set: &[Sample<'_>], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidDataset("training needs non-empty train and validation splits".into()));
    }
    if let Some((_, y)) = train_set.iter().chain(val_set).find(|(_, y)| *y >= model.num_classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {} classes",
            model.num_classes()
        )));
    }
    let mut model = model.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d70f_0000_0001);
    let mut adam = Adam::new(&model);
    let mut grads = Gradients::zeros_like(&model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::new();
    let mut best: Option<Best> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill_zero();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, y) = train_set[i];
                let rec = model.record(x, Dropout::Sample(&mut dropout_rng))?;
                let loss = cross_entropy(rec.probabilities(), y)?;
                if !loss.is_finite() {
                    return Err(Error::State(format!("non-finite loss at epoch {epoch}")));
                }
                batch_loss += loss;
                model.backward_into(&rec, y, &mut grads)?;
            }
            let n = batch.len() as f64;
            grads.scale(1.0 / n);
            adam.step(&mut model, &grads, cfg);
            epoch_loss += batch_loss / n;
            batches += 1;
        }
        let (val_loss, val_accuracy) = evaluate_samples(&model, val_set)?;
        let m = EpochMetrics {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch}: train_loss={:.4} val_loss={:.4} val_acc={:.4}",
            m.train_loss,
            m.val_loss,
            m.val_accuracy
        );
        history.push(m);
        // patience counts epochs without a higher accuracy; among equally
        // accurate epochs the lower validation loss supplies the weights
        let improved = best.as_ref().is_none_or(|b| val_accuracy > b.accuracy);
        let tie_better = best
            .as_ref()
            .is_some_and(|b| val_accuracy == b.accuracy && val_loss < b.loss);
        if improved || tie_better {
            best = Some(Best {
                accuracy: val_accuracy,
                loss: val_loss,
                epoch,
                model: model.clone(),
            });
        }
        if improved {
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }
    let best = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model: best.model,
        history,
        best_epoch: best.epoch,
        stopped_early,
    })
}

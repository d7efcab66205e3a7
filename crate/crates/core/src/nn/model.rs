use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, maxpool1d_backward, maxpool1d_forward, relu,
    softmax, Conv1d, Dense, Layer, LayerKind, LayerSpec, KERNEL_SIZE,
};
use super::tensor::Tensor;

/// Lower clamp applied to the true-class probability in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from a generator seeded with `seed`.
    Train { seed: u64 },
}

pub(crate) enum Dropout<'a> {
    Off,
    Sample(&'a mut ChaCha8Rng),
}

/// Intermediates of one forward pass, enough to run backprop.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    /// `acts[i]` is the input of layer `i`; the last entry is the output.
    pub(crate) acts: Vec<Tensor>,
    pub(crate) argmax: Vec<Option<Vec<usize>>>,
    pub(crate) masks: Vec<Option<Vec<f64>>>,
}

impl ForwardRecord {
    pub fn input(&self) -> &Tensor {
        &self.acts[0]
    }

    pub fn probabilities(&self) -> &[f64] {
        self.acts.last().expect("record has an output").data()
    }

    pub fn dropout_masks(&self) -> &[Option<Vec<f64>>] {
        &self.masks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-layer parameter gradients; `None` for layers without parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn zeros_like(model: &CnnModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| {
                    l.params().map(|(w, b)| ParamGrad {
                        weights: vec![0.0; w.len()],
                        bias: vec![0.0; b.len()],
                    })
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for g in self.layers.iter_mut().flatten() {
            g.weights.fill(0.0);
            g.bias.fill(0.0);
        }
    }

    pub fn scale(&mut self, f: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= f);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.weights.iter().chain(&g.bias))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct CnnModel {
    layers: Vec<Layer>,
    input_channels: usize,
    input_length: usize,
    num_classes: usize,
    meta: BTreeMap<String, String>,
    recorded: Option<ForwardRecord>,
}

impl PartialEq for CnnModel {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.input_channels == other.input_channels
            && self.input_length == other.input_length
            && self.num_classes == other.num_classes
            && self.meta == other.meta
    }
}

impl CnnModel {
    /// Build from an architecture with He-uniform weights and zero biases.
    pub fn new(input_channels: usize, input_length: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = (input_channels, input_length);
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let kind = match *spec {
                LayerSpec::Conv1d { out_channels } => {
                    let mut c = Conv1d::zeros(shape.0, out_channels);
                    he_uniform(&mut c.weights, shape.0 * KERNEL_SIZE, &mut rng);
                    LayerKind::Conv1d(c)
                }
                LayerSpec::Dense { units } => {
                    let inputs = shape.0 * shape.1;
                    let mut d = Dense::zeros(inputs, units);
                    he_uniform(&mut d.weights, inputs, &mut rng);
                    LayerKind::Dense(d)
                }
                LayerSpec::MaxPool1d => LayerKind::MaxPool1d,
                LayerSpec::Dropout { rate } => LayerKind::Dropout { rate },
                LayerSpec::Relu => LayerKind::Relu,
                LayerSpec::Softmax => LayerKind::Softmax,
            };
            let layer = Layer::new(kind);
            shape = layer.output_shape(shape)?;
            layers.push(layer);
        }
        Self::from_layers(input_channels, input_length, layers)
    }

    /// Assemble from layers with existing weights, validating the shape chain.
    pub fn from_layers(input_channels: usize, input_length: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_channels == 0 || input_length == 0 {
            return Err(Error::Shape("model input shape must be non-empty".into()));
        }
        let mut shape = (input_channels, input_length);
        for (i, layer) in layers.iter().enumerate() {
            match &layer.kind {
                LayerKind::Softmax if i + 1 != layers.len() => {
                    return Err(Error::Shape("softmax must be the final layer".into()));
                }
                LayerKind::Dropout { rate } if !(*rate > 0.0 && *rate < 1.0) => {
                    return Err(Error::InvalidArgument(format!("dropout rate {rate} outside (0, 1)")));
                }
                LayerKind::Conv1d(c)
                    if c.weights.len() != c.in_channels * c.out_channels * KERNEL_SIZE
                        || c.bias.len() != c.out_channels =>
                {
                    return Err(Error::Shape(format!("layer {i}: conv1d parameter sizes are inconsistent")));
                }
                LayerKind::Dense(d) if d.weights.len() != d.inputs * d.units || d.bias.len() != d.units => {
                    return Err(Error::Shape(format!("layer {i}: dense parameter sizes are inconsistent")));
                }
                _ => {}
            }
            shape = layer
                .output_shape(shape)
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.spec())))?;
        }
        if !matches!(layers.last().map(|l| &l.kind), Some(LayerKind::Softmax)) {
            return Err(Error::Shape("final layer must be softmax".into()));
        }
        if shape.1 != 1 || shape.0 < 2 {
            return Err(Error::Shape(format!(
                "softmax needs a flat input of at least 2 classes, got {shape:?}"
            )));
        }
        Ok(CnnModel {
            layers,
            input_channels,
            input_length,
            num_classes: shape.0,
            meta: BTreeMap::new(),
            recorded: None,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn set_frozen(&mut self, layer: usize, frozen: bool) -> Result<()> {
        let l = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("no layer {layer}")))?;
        l.frozen = frozen;
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Free-form key/value pairs persisted with the model.
    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.meta
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != (self.input_channels, self.input_length) {
            return Err(Error::Shape(format!(
                "model expects input ({}, {}), got {:?}",
                self.input_channels,
                self.input_length,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Class probabilities. Eval mode is deterministic; train mode applies
    /// inverted dropout with masks drawn from `seed`.
    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<Vec<f64>> {
        let probs = match mode {
            Mode::Eval => self.run(input, Dropout::Off, false)?.0,
            Mode::Train { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.run(input, Dropout::Sample(&mut rng), false)?.0
            }
        };
        Ok(probs.into_data())
    }

    /// Forward pass that keeps its intermediates for a following `backward`.
    pub fn forward_recorded(&mut self, input: &Tensor, mode: Mode) -> Result<Vec<f64>> {
        let record = match mode {
            Mode::Eval => self.record(input, Dropout::Off)?,
            Mode::Train { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.record(input, Dropout::Sample(&mut rng))?
            }
        };
        let probs = record.probabilities().to_vec();
        self.recorded = Some(record);
        Ok(probs)
    }

    pub fn recorded(&self) -> Option<&ForwardRecord> {
        self.recorded.as_ref()
    }

    /// Gradients of the cross-entropy loss for the most recent
    /// `forward_recorded` call, which must have seen `input`.
    pub fn backward(&self, input: &Tensor, label: usize) -> Result<Gradients> {
        let rec = self
            .recorded
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        if rec.input() != input {
            return Err(Error::State("backward input differs from the recorded forward pass".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(rec, label, &mut grads)?;
        Ok(grads)
    }

    pub(crate) fn record(&self, input: &Tensor, dropout: Dropout<'_>) -> Result<ForwardRecord> {
        Ok(self.run(input, dropout, true)?.1.expect("recording requested"))
    }

    pub(crate) fn run(
        &self,
        input: &Tensor,
        mut dropout: Dropout<'_>,
        keep: bool,
    ) -> Result<(Tensor, Option<ForwardRecord>)> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut acts = Vec::with_capacity(if keep { n + 1 } else { 0 });
        let mut argmax = Vec::with_capacity(if keep { n } else { 0 });
        let mut masks = Vec::with_capacity(if keep { n } else { 0 });
        let mut cur = input.clone();
        for layer in &self.layers {
            let mut arg = None;
            let mut mask = None;
            let next = match &layer.kind {
                LayerKind::Conv1d(c) => conv1d_forward(&cur, c)?,
                LayerKind::Dense(d) => dense_forward(&cur, d)?,
                LayerKind::Relu => relu(&cur),
                LayerKind::MaxPool1d => {
                    let (o, a) = maxpool1d_forward(&cur)?;
                    arg = Some(a);
                    o
                }
                LayerKind::Dropout { rate } => {
                    let m = match &mut dropout {
                        Dropout::Off => None,
                        Dropout::Sample(rng) => Some(sample_mask(cur.data().len(), *rate, rng)),
                    };
                    let mut o = cur.clone();
                    if let Some(m) = &m {
                        o.data_mut().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                    }
                    mask = m;
                    o
                }
                LayerKind::Softmax => Tensor::from_raw(cur.channels(), 1, softmax(cur.data())),
            };
            if keep {
                acts.push(std::mem::replace(&mut cur, next));
                argmax.push(arg);
                masks.push(mask);
            } else {
                cur = next;
            }
        }
        if keep {
            acts.push(cur.clone());
            return Ok((cur, Some(ForwardRecord { acts, argmax, masks })));
        }
        Ok((cur, None))
    }

    /// Accumulate (add) the loss gradients of one sample into `grads`.
    pub(crate) fn backward_into(&self, rec: &ForwardRecord, label: usize, grads: &mut Gradients) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                self.num_classes
            )));
        }
        let n = self.layers.len();
        let first_param = self.layers.iter().position(|l| l.params().is_some()).unwrap_or(n);
        // softmax + cross-entropy: dL/dlogits = p - onehot
        let mut g = rec.acts[n].clone();
        g.data_mut()[label] -= 1.0;
        for i in (0..n - 1).rev() {
            if i < first_param {
                break;
            }
            let x = &rec.acts[i];
            let need = i > first_param;
            g = match &self.layers[i].kind {
                LayerKind::Dense(d) => {
                    let pg = grads.layers[i].as_mut().expect("dense has gradients");
                    match dense_backward(x, d, g.data(), &mut pg.weights, &mut pg.bias, need) {
                        Some(gi) => gi,
                        None => break,
                    }
                }
                LayerKind::Conv1d(c) => {
                    let pg = grads.layers[i].as_mut().expect("conv has gradients");
                    match conv1d_backward(x, c, &g, &mut pg.weights, &mut pg.bias, need) {
                        Some(gi) => gi,
                        None => break,
                    }
                }
                LayerKind::Relu => {
                    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    g
                }
                LayerKind::MaxPool1d => {
                    let arg = rec.argmax[i].as_ref().expect("pool records argmax");
                    maxpool1d_backward(&g, arg, x.length())
                }
                LayerKind::Dropout { .. } => {
                    if let Some(m) = &rec.masks[i] {
                        g.data_mut().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                    }
                    g
                }
                LayerKind::Softmax => unreachable!("softmax is only the final layer"),
            };
        }
        Ok(())
    }
}

fn he_uniform(w: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    for v in w {
        *v = rng.random_range(-limit..limit);
    }
}

fn sample_mask(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// `-ln p[label]`, with the probability clamped to at least 1e-12.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        Error::InvalidArgument(format!("label {label} out of range for {} classes", probs.len()))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

impl fmt::Display for CnnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input ({}, {})", self.input_channels, self.input_length)?;
        for l in &self.layers {
            write!(f, " -> {}", l.spec())?;
            if l.frozen {
                f.write_str("[frozen]")?;
            }
        }
        write!(f, " ({} params)", self.param_count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(3),
            LayerSpec::Relu,
            LayerSpec::conv(4),
            LayerSpec::Relu,
            LayerSpec::MaxPool1d,
            LayerSpec::dropout(),
            LayerSpec::dense(6),
            LayerSpec::Relu,
            LayerSpec::dense(3),
            LayerSpec::Softmax,
        ]
    }

    fn input(len: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::sequence((0..len).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn shape_chain_is_validated() {
        assert!(CnnModel::new(1, 10, &small_specs(), 0).is_ok());
        assert!(CnnModel::new(1, 10, &[LayerSpec::dense(3)], 0).is_err());
        assert!(CnnModel::new(1, 10, &[LayerSpec::conv(3), LayerSpec::Softmax], 0).is_err());
        assert!(CnnModel::new(1, 10, &[LayerSpec::Softmax, LayerSpec::dense(2), LayerSpec::Softmax], 0).is_err());
        let bad_rate = [LayerSpec::Dropout { rate: 1.0 }, LayerSpec::dense(2), LayerSpec::Softmax];
        assert!(matches!(CnnModel::new(1, 10, &bad_rate, 0), Err(Error::InvalidArgument(_))));
        let m = CnnModel::new(1, 10, &small_specs(), 0).unwrap();
        assert_eq!(m.num_classes(), 3);
        assert!(matches!(m.forward(&input(11, 0), Mode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_logits_give_uniform() {
        let mut m = CnnModel::new(1, 8, &[LayerSpec::dense(4), LayerSpec::Softmax], 0).unwrap();
        m.layers_mut()[0].params_mut().unwrap().0.fill(0.0);
        let p = m.forward(&input(8, 1), Mode::Eval).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn eval_is_deterministic_and_normalized() {
        let m = CnnModel::new(1, 20, &small_specs(), 4).unwrap();
        let x = input(20, 2);
        let a = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, m.forward(&x, Mode::Eval).unwrap());
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(
            m.forward(&x, Mode::Train { seed: 3 }).unwrap(),
            m.forward(&x, Mode::Train { seed: 3 }).unwrap()
        );
    }

    #[test]
    fn dropout_expectation_matches_eval() {
        // a dropout layer followed by a linear dense: E[masked] = eval activation
        let specs = [LayerSpec::dropout(), LayerSpec::dense(2), LayerSpec::Softmax];
        let m = CnnModel::new(1, 6, &specs, 9).unwrap();
        let x = input(6, 5);
        let eval = m.run(&x, Dropout::Off, true).unwrap().1.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 10_000;
        let mut mean = [0.0; 2];
        for _ in 0..draws {
            let rec = m.run(&x, Dropout::Sample(&mut rng), true).unwrap().1.unwrap();
            for (acc, v) in mean.iter_mut().zip(rec.acts[2].data()) {
                *acc += v / draws as f64;
            }
        }
        for (a, b) in mean.iter().zip(eval.acts[2].data()) {
            // standard error of the mean is below 0.02 for these magnitudes
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((cross_entropy(&[1.0 / e, 1.0 - 1.0 / e], 0).unwrap() - 1.0).abs() < 1e-12);
        assert!((cross_entropy(&[0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - (-(1e-12f64).ln())).abs() < 1e-9);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn backward_needs_recorded_forward() {
        let mut m = CnnModel::new(1, 10, &small_specs(), 0).unwrap();
        let x = input(10, 0);
        assert!(matches!(m.backward(&x, 0), Err(Error::State(_))));
        m.forward_recorded(&x, Mode::Eval).unwrap();
        assert!(m.backward(&x, 0).is_ok());
        assert!(matches!(m.backward(&input(10, 1), 0), Err(Error::State(_))));
        assert!(matches!(m.backward(&x, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn single_dense_gradient_is_outer_product() {
        let mut m = CnnModel::new(1, 5, &[LayerSpec::dense(3), LayerSpec::Softmax], 2).unwrap();
        let x = input(5, 3);
        let p = m.forward_recorded(&x, Mode::Eval).unwrap();
        let g = m.backward(&x, 1).unwrap();
        let pg = g.layers[0].as_ref().unwrap();
        for u in 0..3 {
            let d = p[u] - if u == 1 { 1.0 } else { 0.0 };
            assert!((pg.bias[u] - d).abs() < 1e-15);
            for j in 0..5 {
                assert!((pg.weights[u * 5 + j] - d * x.data()[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_conv_weight_grads() {
        let specs = [LayerSpec::conv(2), LayerSpec::Relu, LayerSpec::dense(3), LayerSpec::Softmax];
        let mut m = CnnModel::new(1, 6, &specs, 1).unwrap();
        // positive biases keep the relu open so gradients reach the conv bias
        m.layers_mut()[0].params_mut().unwrap().1.fill(0.5);
        let x = Tensor::sequence(vec![0.0; 6]).unwrap();
        m.forward_recorded(&x, Mode::Eval).unwrap();
        let g = m.backward(&x, 0).unwrap();
        let conv = g.layers[0].as_ref().unwrap();
        assert!(conv.weights.iter().all(|v| *v == 0.0));
        assert!(conv.bias.iter().any(|v| *v != 0.0));
    }
}

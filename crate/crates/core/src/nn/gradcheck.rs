//! Finite-difference gradient check.
//!
//! Perturbing one parameter only changes a single channel (conv) or unit
//! (dense) of that layer's output, so each loss evaluation starts from the
//! cached clean activations and recomputes only what the perturbation can
//! reach. Downstream layers see exactly the values a full forward pass with
//! the perturbed parameter would produce, up to floating-point reassociation.
//!
//! The loss is only piecewise smooth: a shift of ±ε can push a ReLU input
//! across zero or flip a max-pool winner, and the central difference then
//! straddles a kink. The probe detects this by comparing against the clean
//! pass and retries that parameter with ε/10, down to `MIN_EPSILON`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::layers::{
    conv1d_forward, conv_accumulate, dense_forward, dot, maxpool1d_forward, relu, softmax, LayerKind, KERNEL_SIZE,
    POOL_SIZE,
};
use super::model::{CnnModel, Dropout, ForwardRecord, Gradients, PROB_FLOOR};
use super::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const MIN_EPSILON: f64 = 1e-6;
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(layer, parameter index)` of the worst parameter; biases follow the
    /// weights in the index space.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Parameters whose difference had to use a smaller ε.
    pub refined: usize,
    /// Parameters that still crossed a kink at `MIN_EPSILON`.
    pub unresolved: usize,
}

/// Maximum relative error between backprop and central differences over
/// every trainable parameter. Dropout is off unless `dropout_seed` pins a
/// set of masks, which are then reused for every evaluation.
pub fn gradient_check(
    model: &CnnModel,
    input: &Tensor,
    label: usize,
    epsilon: f64,
    dropout_seed: Option<u64>,
) -> Result<f64> {
    Ok(gradient_check_report(model, input, label, epsilon, dropout_seed)?.max_rel_error)
}

pub fn gradient_check_report(
    model: &CnnModel,
    input: &Tensor,
    label: usize,
    epsilon: f64,
    dropout_seed: Option<u64>,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let rec = match dropout_seed {
        None => model.record(input, Dropout::Off)?,
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model.record(input, Dropout::Sample(&mut rng))?
        }
    };
    let mut grads = Gradients::zeros_like(model);
    model.backward_into(&rec, label, &mut grads)?;
    let probe = Probe { model, rec: &rec, label };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        refined: 0,
        unresolved: 0,
    };
    for (li, layer) in model.layers().iter().enumerate() {
        if layer.frozen {
            continue;
        }
        let Some(pg) = grads.layers[li].as_ref() else { continue };
        let analytic = pg.weights.iter().chain(&pg.bias);
        for (p, &ga) in analytic.enumerate() {
            let mut eps = epsilon;
            let gn = loop {
                let (plus, kp) = probe.perturbed_loss(li, p, eps);
                let (minus, km) = probe.perturbed_loss(li, p, -eps);
                let smooth = !(kp || km);
                if smooth || eps / 10.0 < MIN_EPSILON * 0.999 {
                    if eps < epsilon {
                        report.refined += 1;
                    }
                    if !smooth {
                        report.unresolved += 1;
                    }
                    break (plus - minus) / (2.0 * eps);
                }
                eps /= 10.0;
            };
            let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((li, p));
                report.analytic = ga;
                report.numeric = gn;
            }
        }
    }
    Ok(report)
}

enum Dirty {
    All,
    Channels(Vec<usize>),
}

struct Probe<'a> {
    model: &'a CnnModel,
    rec: &'a ForwardRecord,
    label: usize,
}

impl Probe<'_> {
    /// Loss with parameter `p` of layer `li` shifted by `delta`, and whether
    /// any ReLU or max-pool switched branch relative to the clean pass.
    fn perturbed_loss(&self, li: usize, p: usize, delta: f64) -> (f64, bool) {
        let x = &self.rec.acts[li];
        let mut out = self.rec.acts[li + 1].clone();
        let dirty = match &self.model.layers()[li].kind {
            LayerKind::Conv1d(c) => {
                let nw = c.weights.len();
                if p < nw {
                    let k = p % KERNEL_SIZE;
                    let ci = (p / KERNEL_SIZE) % c.in_channels;
                    let co = p / (KERNEL_SIZE * c.in_channels);
                    let mut kern = [0.0; KERNEL_SIZE];
                    kern[k] = delta;
                    conv_accumulate(out.channel_mut(co), x.channel(ci), &kern);
                    co
                } else {
                    let co = p - nw;
                    out.channel_mut(co).iter_mut().for_each(|v| *v += delta);
                    co
                }
            }
            LayerKind::Dense(d) => {
                let nw = d.weights.len();
                if p < nw {
                    let (u, j) = (p / d.inputs, p % d.inputs);
                    out.data_mut()[u] += delta * x.data()[j];
                    u
                } else {
                    out.data_mut()[p - nw] += delta;
                    p - nw
                }
            }
            _ => unreachable!("only parameterized layers are probed"),
        };
        self.loss_from(li, out, Dirty::Channels(vec![dirty]))
    }

    /// Propagate a modified output of layer `li` to the loss.
    fn loss_from(&self, li: usize, mut cur: Tensor, mut dirty: Dirty) -> (f64, bool) {
        let layers = self.model.layers();
        let mut kink = false;
        for i in li + 1..layers.len() {
            let clean_in = &self.rec.acts[i];
            let clean_out = &self.rec.acts[i + 1];
            let (next, d) = match (&layers[i].kind, dirty) {
                (LayerKind::Softmax, _) => (Tensor::from_raw(cur.channels(), 1, softmax(cur.data())), Dirty::All),
                (LayerKind::Relu, Dirty::All) => {
                    kink |= relu_switched(cur.data(), clean_in.data());
                    (relu(&cur), Dirty::All)
                }
                (LayerKind::Relu, Dirty::Channels(ds)) => {
                    let mut o = clean_out.clone();
                    for &d in &ds {
                        kink |= relu_switched(cur.channel(d), clean_in.channel(d));
                        for (ov, xv) in o.channel_mut(d).iter_mut().zip(cur.channel(d)) {
                            *ov = xv.max(0.0);
                        }
                    }
                    (o, Dirty::Channels(ds))
                }
                (LayerKind::Dropout { .. }, dirty) => {
                    match &self.rec.masks[i] {
                        None => (cur, dirty),
                        Some(m) => {
                            // masking is elementwise, so applying it to every
                            // channel only rewrites clean ones with themselves
                            let mut o = cur;
                            o.data_mut().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                            (o, dirty)
                        }
                    }
                }
                (LayerKind::MaxPool1d, Dirty::All) => {
                    let (o, arg) = maxpool1d_forward(&cur).expect("shape checked");
                    kink |= self.rec.argmax[i].as_deref() != Some(arg.as_slice());
                    (o, Dirty::All)
                }
                (LayerKind::MaxPool1d, Dirty::Channels(ds)) => {
                    let mut o = clean_out.clone();
                    let clean_arg = self.rec.argmax[i].as_ref().expect("pool records argmax");
                    let ol = o.length();
                    for &d in &ds {
                        let src = cur.channel(d);
                        for (k, ov) in o.channel_mut(d).iter_mut().enumerate() {
                            let j = k * POOL_SIZE;
                            let w = if src[j + 1] > src[j] { j + 1 } else { j };
                            kink |= w != clean_arg[d * ol + k];
                            *ov = src[w];
                        }
                    }
                    (o, Dirty::Channels(ds))
                }
                (LayerKind::Conv1d(c), Dirty::Channels(ds)) if ds.len() < c.in_channels => {
                    let mut o = clean_out.clone();
                    for &d in &ds {
                        let diff: Vec<f64> = cur.channel(d).iter().zip(clean_in.channel(d)).map(|(a, b)| a - b).collect();
                        for co in 0..c.out_channels {
                            let wi = c.weight_index(co, d, 0);
                            conv_accumulate(o.channel_mut(co), &diff, &c.weights[wi..wi + KERNEL_SIZE]);
                        }
                    }
                    (o, Dirty::All)
                }
                (LayerKind::Conv1d(c), _) => (conv1d_forward(&cur, c).expect("shape checked"), Dirty::All),
                (LayerKind::Dense(dn), Dirty::Channels(ds)) if ds.len() < cur.channels() => {
                    let mut o = clean_out.clone();
                    let len = cur.length();
                    for &d in &ds {
                        let diff: Vec<f64> = cur.channel(d).iter().zip(clean_in.channel(d)).map(|(a, b)| a - b).collect();
                        for (u, ov) in o.data_mut().iter_mut().enumerate() {
                            *ov += dot(&dn.row(u)[d * len..(d + 1) * len], &diff);
                        }
                    }
                    (o, Dirty::All)
                }
                (LayerKind::Dense(dn), _) => (dense_forward(&cur, dn).expect("shape checked"), Dirty::All),
            };
            cur = next;
            dirty = d;
        }
        (-cur.data()[self.label].max(PROB_FLOOR).ln(), kink)
    }
}

fn relu_switched(new: &[f64], clean: &[f64]) -> bool {
    new.iter().zip(clean).any(|(a, b)| (*a > 0.0) != (*b > 0.0))
}

//! Layer definitions and the forward/backward kernels for each kind.

use std::fmt;

use crate::error::{Error, Result};

use super::tensor::Tensor;

pub const KERNEL_SIZE: usize = 3;
pub const POOL_SIZE: usize = 2;
pub const DEFAULT_DROPOUT_RATE: f64 = 0.5;

/// Architecture description, without weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv1d { out_channels: usize },
    MaxPool1d,
    Dropout { rate: f64 },
    Dense { units: usize },
    Relu,
    Softmax,
}

impl LayerSpec {
    pub fn conv(out_channels: usize) -> Self {
        LayerSpec::Conv1d { out_channels }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn dropout() -> Self {
        LayerSpec::Dropout {
            rate: DEFAULT_DROPOUT_RATE,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxPool1d => "maxpool1d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Softmax => "softmax",
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv1d { out_channels } => write!(f, "conv1d({out_channels}, k={KERNEL_SIZE})"),
            LayerSpec::Dropout { rate } => write!(f, "dropout({rate})"),
            LayerSpec::Dense { units } => write!(f, "dense({units})"),
            other => f.write_str(other.kind()),
        }
    }
}

/// Convolution with kernel 3, stride 1, same padding.
/// Weights are indexed `[out][in][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Conv1d {
            in_channels,
            out_channels,
            weights: vec![0.0; out_channels * in_channels * KERNEL_SIZE],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn weight_index(&self, out: usize, inp: usize, k: usize) -> usize {
        (out * self.in_channels + inp) * KERNEL_SIZE + k
    }

    fn kernel(&self, out: usize, inp: usize) -> &[f64] {
        let i = self.weight_index(out, inp, 0);
        &self.weights[i..i + KERNEL_SIZE]
    }
}

/// Fully connected layer over the flattened input. Weights are `[unit][input]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub units: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, units: usize) -> Self {
        Dense {
            inputs,
            units,
            weights: vec![0.0; inputs * units],
            bias: vec![0.0; units],
        }
    }

    pub fn row(&self, unit: usize) -> &[f64] {
        &self.weights[unit * self.inputs..(unit + 1) * self.inputs]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv1d(Conv1d),
    MaxPool1d,
    Dropout { rate: f64 },
    Dense(Dense),
    Relu,
    Softmax,
}

/// A layer with its weights. Frozen layers keep their parameters during
/// training and are skipped by the gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub frozen: bool,
}

impl Layer {
    pub fn new(kind: LayerKind) -> Self {
        Layer { kind, frozen: false }
    }

    pub fn spec(&self) -> LayerSpec {
        match &self.kind {
            LayerKind::Conv1d(c) => LayerSpec::Conv1d {
                out_channels: c.out_channels,
            },
            LayerKind::MaxPool1d => LayerSpec::MaxPool1d,
            LayerKind::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
            LayerKind::Dense(d) => LayerSpec::Dense { units: d.units },
            LayerKind::Relu => LayerSpec::Relu,
            LayerKind::Softmax => LayerSpec::Softmax,
        }
    }

    /// `(weights, bias)` for parameterized layers.
    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match &self.kind {
            LayerKind::Conv1d(c) => Some((&c.weights, &c.bias)),
            LayerKind::Dense(d) => Some((&d.weights, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut [f64], &mut [f64])> {
        match &mut self.kind {
            LayerKind::Conv1d(c) => Some((&mut c.weights, &mut c.bias)),
            LayerKind::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().map_or(0, |(w, b)| w.len() + b.len())
    }

    pub fn output_shape(&self, (c, l): (usize, usize)) -> Result<(usize, usize)> {
        match &self.kind {
            LayerKind::Conv1d(conv) => {
                if c != conv.in_channels {
                    return Err(Error::Shape(format!(
                        "conv1d expects {} input channels, got {c}",
                        conv.in_channels
                    )));
                }
                Ok((conv.out_channels, l))
            }
            LayerKind::MaxPool1d => {
                if l < POOL_SIZE {
                    return Err(Error::Shape(format!("maxpool1d needs length >= 2, got {l}")));
                }
                Ok((c, l / POOL_SIZE))
            }
            LayerKind::Dense(d) => {
                if c * l != d.inputs {
                    return Err(Error::Shape(format!("dense expects {} inputs, got {}", d.inputs, c * l)));
                }
                Ok((d.units, 1))
            }
            LayerKind::Dropout { .. } | LayerKind::Relu | LayerKind::Softmax => Ok((c, l)),
        }
    }
}

fn check_conv_input(input: &Tensor, conv: &Conv1d) -> Result<()> {
    if input.channels() != conv.in_channels {
        return Err(Error::Shape(format!(
            "conv1d expects {} input channels, got {}",
            conv.in_channels,
            input.channels()
        )));
    }
    if conv.weights.len() != conv.out_channels * conv.in_channels * KERNEL_SIZE || conv.bias.len() != conv.out_channels {
        return Err(Error::Shape("conv1d weight/bias sizes do not match its channels".into()));
    }
    Ok(())
}

/// Accumulate `w * x` shifted by the kernel offsets into `out` (same padding).
#[inline]
pub(crate) fn conv_accumulate(out: &mut [f64], x: &[f64], w: &[f64]) {
    let l = out.len();
    let (w0, w1, w2) = (w[0], w[1], w[2]);
    for (o, xv) in out.iter_mut().zip(x) {
        *o += w1 * xv;
    }
    if l > 1 {
        for (o, xv) in out[1..].iter_mut().zip(&x[..l - 1]) {
            *o += w0 * xv;
        }
        for (o, xv) in out[..l - 1].iter_mut().zip(&x[1..]) {
            *o += w2 * xv;
        }
    }
}

pub fn conv1d_forward(input: &Tensor, conv: &Conv1d) -> Result<Tensor> {
    check_conv_input(input, conv)?;
    let l = input.length();
    let mut out = Tensor::zeros(conv.out_channels, l);
    for c in 0..conv.out_channels {
        let o = out.channel_mut(c);
        o.fill(conv.bias[c]);
        for ci in 0..conv.in_channels {
            conv_accumulate(o, input.channel(ci), conv.kernel(c, ci));
        }
    }
    Ok(out)
}

/// Gradients of a conv layer. `grad_in` is skipped when `need_input` is false
/// (first layer).
pub(crate) fn conv1d_backward(
    input: &Tensor,
    conv: &Conv1d,
    grad_out: &Tensor,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let l = input.length();
    let mut grad_in = need_input.then(|| Tensor::zeros(conv.in_channels, l));
    for c in 0..conv.out_channels {
        let g = grad_out.channel(c);
        grad_b[c] += g.iter().sum::<f64>();
        for ci in 0..conv.in_channels {
            let x = input.channel(ci);
            let wi = conv.weight_index(c, ci, 0);
            grad_w[wi + 1] += dot(g, x);
            if l > 1 {
                grad_w[wi] += dot(&g[1..], &x[..l - 1]);
                grad_w[wi + 2] += dot(&g[..l - 1], &x[1..]);
            }
            if let Some(gi) = grad_in.as_mut() {
                // transposed kernel: dx[j] += w0 g[j+1] + w1 g[j] + w2 g[j-1]
                let w = conv.kernel(c, ci);
                conv_accumulate(gi.channel_mut(ci), g, &[w[2], w[1], w[0]]);
            }
        }
    }
    grad_in
}

/// Non-overlapping max pooling of size 2. Returns the output and, per output
/// position, the index of the winning input element within its channel.
/// Ties go to the first element.
pub fn maxpool1d_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, l) = input.shape();
    if l < POOL_SIZE {
        return Err(Error::Shape(format!("maxpool1d needs length >= 2, got {l}")));
    }
    let ol = l / POOL_SIZE;
    let mut out = Vec::with_capacity(c * ol);
    let mut arg = Vec::with_capacity(c * ol);
    for ch in 0..c {
        let x = input.channel(ch);
        for i in 0..ol {
            let j = i * POOL_SIZE;
            let k = if x[j + 1] > x[j] { j + 1 } else { j };
            out.push(x[k]);
            arg.push(k);
        }
    }
    Ok((Tensor::from_raw(c, ol, out), arg))
}

pub fn maxpool1d_backward(grad_out: &Tensor, argmax: &[usize], input_length: usize) -> Tensor {
    let (c, ol) = grad_out.shape();
    let mut gi = Tensor::zeros(c, input_length);
    for ch in 0..c {
        let g = grad_out.channel(ch);
        let a = &argmax[ch * ol..(ch + 1) * ol];
        let dst = gi.channel_mut(ch);
        for (gv, &k) in g.iter().zip(a) {
            dst[k] += gv;
        }
    }
    gi
}

pub fn dense_forward(input: &Tensor, dense: &Dense) -> Result<Tensor> {
    let x = input.data();
    if x.len() != dense.inputs {
        return Err(Error::Shape(format!("dense expects {} inputs, got {}", dense.inputs, x.len())));
    }
    let out = (0..dense.units).map(|u| dense.bias[u] + dot(dense.row(u), x)).collect();
    Ok(Tensor::from_raw(dense.units, 1, out))
}

pub(crate) fn dense_backward(
    input: &Tensor,
    dense: &Dense,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let x = input.data();
    let mut gi = need_input.then(|| vec![0.0; dense.inputs]);
    for (u, &g) in grad_out.iter().enumerate() {
        grad_b[u] += g;
        if g == 0.0 {
            continue;
        }
        axpy(&mut grad_w[u * dense.inputs..(u + 1) * dense.inputs], g, x);
        if let Some(gi) = gi.as_mut() {
            axpy(gi, g, dense.row(u));
        }
    }
    gi.map(|d| Tensor::from_raw(input.channels(), input.length(), d))
}

pub fn relu(input: &Tensor) -> Tensor {
    let (c, l) = input.shape();
    Tensor::from_raw(c, l, input.data().iter().map(|&v| v.max(0.0)).collect())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable with a fixed order
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(input: &Tensor, conv: &Conv1d) -> Vec<f64> {
        let (cin, l) = input.shape();
        let mut out = vec![0.0; conv.out_channels * l];
        for c in 0..conv.out_channels {
            for i in 0..l {
                let mut s = conv.bias[c];
                for ci in 0..cin {
                    for k in 0..KERNEL_SIZE {
                        let j = i as isize + k as isize - 1;
                        if j >= 0 && (j as usize) < l {
                            s += conv.weights[conv.weight_index(c, ci, k)] * input.get(ci, j as usize);
                        }
                    }
                }
                out[c * l + i] = s;
            }
        }
        out
    }

    fn single(kernel: [f64; 3], bias: f64) -> Conv1d {
        Conv1d {
            in_channels: 1,
            out_channels: 1,
            weights: kernel.to_vec(),
            bias: vec![bias],
        }
    }

    #[test]
    fn conv_examples() {
        let x = Tensor::sequence(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(conv1d_forward(&x, &single([0.0, 1.0, 0.0], 0.0)).unwrap().data(), x.data());
        assert_eq!(conv1d_forward(&x, &single([1.0, 1.0, 1.0], 0.0)).unwrap().data(), &[3.0, 6.0, 5.0]);
        assert_eq!(conv1d_forward(&x, &single([0.0; 3], 2.5)).unwrap().data(), &[2.5; 3]);
        let two = Tensor::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(conv1d_forward(&two, &single([0.0; 3], 0.0)), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let cin = rng.random_range(1..5);
            let cout = rng.random_range(1..6);
            let l = rng.random_range(1..40);
            let x = Tensor::new(cin, l, (0..cin * l).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
            let mut conv = Conv1d::zeros(cin, cout);
            conv.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
            conv.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
            let fast = conv1d_forward(&x, &conv).unwrap();
            for (a, b) in fast.data().iter().zip(naive_conv(&x, &conv)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pool_examples() {
        let (o, a) = maxpool1d_forward(&Tensor::sequence(vec![1.0, 3.0, 2.0, 2.0]).unwrap()).unwrap();
        assert_eq!(o.data(), &[3.0, 2.0]);
        assert_eq!(a, vec![1, 2]);
        let (o, _) = maxpool1d_forward(&Tensor::sequence(vec![5.0, 5.0]).unwrap()).unwrap();
        assert_eq!(o.data(), &[5.0]);
        let (o, _) = maxpool1d_forward(&Tensor::sequence(vec![1.0, 2.0, 3.0, 4.0, 9.0]).unwrap()).unwrap();
        assert_eq!(o.data(), &[2.0, 4.0]);
        assert!(matches!(
            maxpool1d_forward(&Tensor::sequence(vec![1.0]).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0; 4]);
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let p = softmax(&[1000.0, 1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in prop::collection::vec(-700.0f64..700.0, 1..20),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let am = |v: &[f64]| v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best });
            prop_assert_eq!(am(&p), am(&q));
        }

        #[test]
        fn pool_backward_routes_to_argmax(
            c in 1usize..4,
            l in 2usize..30,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::new(c, l, (0..c * l).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let (o, arg) = maxpool1d_forward(&x).unwrap();
            let g = Tensor::new(c, o.length(), (0..o.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let gi = maxpool1d_backward(&g, &arg, l);
            let total_out: f64 = g.data().iter().sum();
            let total_in: f64 = gi.data().iter().sum();
            prop_assert!((total_out - total_in).abs() < 1e-12);
            for ch in 0..c {
                for i in 0..o.length() {
                    let k = arg[ch * o.length() + i];
                    prop_assert_eq!(gi.get(ch, k), g.get(ch, i));
                    prop_assert_eq!(o.get(ch, i), x.get(ch, k));
                }
            }
        }
    }
}

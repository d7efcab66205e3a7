use crate::error::{Error, Result};

use super::FrequencyTrace;

/// Unnormalized Gaussian taps for a centered window, as `(offset, weight)`.
///
/// Sigma is a quarter of the window. Odd windows use `window` integer
/// offsets around the center. Even windows span `-w/2..=w/2` with the two
/// end taps at half weight, so the kernel stays symmetric and the total
/// support still has width `window`.
pub fn gaussian_kernel(window: usize) -> Vec<(isize, f64)> {
    let sigma = window as f64 / 4.0;
    let two_var = 2.0 * sigma * sigma;
    let half = (window / 2) as isize;
    let even = window.is_multiple_of(2);
    (-half..=half)
        .map(|k| {
            let mut w = (-((k * k) as f64) / two_var).exp();
            if even && k.abs() == half {
                w *= 0.5;
            }
            (k, w)
        })
        .collect()
}

/// Normalized weights used at position `i` of a trace of length `len`.
/// Returns the first covered index and the weights from there on; taps that
/// fall off either edge are dropped and the rest re-normalized.
pub fn gaussian_window_weights(len: usize, window: usize, i: usize) -> (usize, Vec<f64>) {
    let kernel = gaussian_kernel(window);
    let mut start = None;
    let mut weights = Vec::with_capacity(kernel.len());
    for (k, w) in kernel {
        let j = i as isize + k;
        if j < 0 || j >= len as isize || w == 0.0 {
            continue;
        }
        start.get_or_insert(j as usize);
        weights.push(w);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (start.unwrap_or(i), weights)
}

/// Gaussian smoothing over a centered window, rounded back to whole kHz.
pub fn gaussian_smooth(trace: &FrequencyTrace, window: usize) -> Result<FrequencyTrace> {
    let n = trace.len();
    if window == 0 || window > n {
        return Err(Error::InvalidArgument(format!(
            "gaussian window must be in 1..={n}, got {window}"
        )));
    }
    let x = trace.samples();
    let out = (0..n)
        .map(|i| {
            let (start, w) = gaussian_window_weights(n, window, i);
            let v: f64 = w
                .iter()
                .zip(&x[start..])
                .map(|(w, &s)| w * s as f64)
                .sum();
            v.round().max(0.0) as u64
        })
        .collect();
    trace.with_samples(out)
}

/// Centered moving maximum, clamped at the edges. Even windows take one
/// more sample on the left than on the right.
pub fn moving_max(trace: &FrequencyTrace, window: usize) -> Result<FrequencyTrace> {
    if window == 0 {
        return Err(Error::InvalidArgument("moving_max window must be ≥ 1".into()));
    }
    let x = trace.samples();
    let n = x.len();
    let left = window / 2;
    let right = window - 1 - left;
    let out = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            *x[lo..=hi].iter().max().expect("non-empty window")
        })
        .collect();
    trace.with_samples(out)
}

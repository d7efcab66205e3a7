use crate::error::{Error, Result};

/// Activations laid out channel-major: `data[c * length + i]`. Flat vectors
/// (dense layer outputs) use `length == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    length: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(channels: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::Shape(format!("empty tensor shape ({channels}, {length})")));
        }
        if data.len() != channels * length {
            return Err(Error::Shape(format!(
                "shape ({channels}, {length}) needs {} values, got {}",
                channels * length,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite tensor value {v}")));
        }
        Ok(Tensor { channels, length, data })
    }

    /// Single-channel sequence, the shape of a preprocessed trace.
    pub fn sequence(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(1, n, data)
    }

    /// Flat vector of `data.len()` units.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(n, 1, data)
    }

    pub fn zeros(channels: usize, length: usize) -> Self {
        Tensor {
            channels,
            length,
            data: vec![0.0; channels * length],
        }
    }

    pub(crate) fn from_raw(channels: usize, length: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * length);
        Tensor { channels, length, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.length)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.length..(c + 1) * self.length]
    }

    pub(crate) fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let l = self.length;
        &mut self.data[c * l..(c + 1) * l]
    }

    pub fn get(&self, c: usize, i: usize) -> f64 {
        self.data[c * self.length + i]
    }
}

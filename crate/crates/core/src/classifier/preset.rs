use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{CnnModel, LayerSpec};

/// Smallest input the presets accept; two pooling stages need room to halve.
pub const MIN_INPUT_LENGTH: usize = 64;

const CONV_WIDTHS: [usize; 3] = [16, 32, 64];
const SANDBOX_EXTRA_CONV: usize = 64;
const DENSE_WIDTHS: [usize; 2] = [128, 64];

/// The two network shapes: three convolutions for bare-metal and container
/// traces, four for traces from sandboxed runtimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Native,
    Sandbox,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Native => "native",
            Preset::Sandbox => "sandbox",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(Preset::Native),
            "sandbox" => Ok(Preset::Sandbox),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset {other:?} (expected native or sandbox)"
            ))),
        }
    }
}

impl Preset {
    pub fn specs(self, num_classes: usize) -> Vec<LayerSpec> {
        let [c1, c2, c3] = CONV_WIDTHS;
        let mut s = vec![LayerSpec::conv(c1), LayerSpec::Relu, LayerSpec::conv(c2), LayerSpec::Relu];
        if self == Preset::Sandbox {
            s.extend([LayerSpec::conv(SANDBOX_EXTRA_CONV), LayerSpec::Relu]);
        }
        s.extend([
            LayerSpec::MaxPool1d,
            LayerSpec::dropout(),
            LayerSpec::conv(c3),
            LayerSpec::Relu,
            LayerSpec::MaxPool1d,
            LayerSpec::dropout(),
            LayerSpec::dense(DENSE_WIDTHS[0]),
            LayerSpec::Relu,
            LayerSpec::dense(DENSE_WIDTHS[1]),
            LayerSpec::Relu,
            LayerSpec::dense(num_classes),
            LayerSpec::Softmax,
        ]);
        s
    }

    pub fn build(self, input_length: usize, num_classes: usize, seed: u64) -> Result<CnnModel> {
        if input_length < MIN_INPUT_LENGTH {
            return Err(Error::InvalidArgument(format!(
                "input length {input_length} below the preset minimum {MIN_INPUT_LENGTH}"
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {num_classes}")));
        }
        let mut m = CnnModel::new(1, input_length, &self.specs(num_classes), seed)?;
        m.meta_mut().insert("preset".into(), self.to_string());
        Ok(m)
    }
}

pub fn build_preset(name: &str, input_length: usize, num_classes: usize, seed: u64) -> Result<CnnModel> {
    name.parse::<Preset>()?.build(input_length, num_classes, seed)
}

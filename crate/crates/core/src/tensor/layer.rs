use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Maxpool2d {
        window: usize,
        stride: usize,
    },
    FullyConnected {
        out: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Softmax,
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride: 1,
            padding,
        }
    }

    pub fn pool(window: usize, stride: usize) -> Self {
        LayerSpec::Maxpool2d { window, stride }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Maxpool2d { .. } => "maxpool2d",
            LayerSpec::FullyConnected { .. } => "fully-connected",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn has_parameters(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::FullyConnected { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::Architecture {
                layer: self.kind().to_string(),
                reason,
            })
        };
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad(format!(
                        "channels {out_channels}, kernel {kernel}, stride {stride} must all be >= 1"
                    ));
                }
            }
            LayerSpec::Maxpool2d { window, stride } => {
                if window == 0 || stride == 0 {
                    return bad(format!("window {window}, stride {stride} must be >= 1"));
                }
            }
            LayerSpec::FullyConnected { out } if out == 0 => return bad("zero output width".into()),
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                return bad(format!("rate {rate} outside [0, 1)"))
            }
            _ => {}
        }
        Ok(())
    }
}

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

/// One layer of a sequential detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        /// `(k_h, k_w)`, both odd.
        kernel: [usize; 2],
        out_channels: usize,
        stride: usize,
        padding: Padding,
    },
    LeakyRelu {
        slope: f32,
    },
    Relu,
    Maxpool2x2,
    /// Grid decode metadata. Carries no parameters; the preceding conv
    /// produces `boxes_per_cell * 5` channels laid out as
    /// `(tx, ty, tw, th, tobj)` per anchor.
    DetectHead {
        grid: [usize; 2],
        /// `(w, h)` as fractions of the image size.
        anchors: Vec<[f32; 2]>,
        boxes_per_cell: usize,
    },
}

impl LayerSpec {
    pub fn conv(k: usize, out_channels: usize) -> Self {
        Self::Conv2d {
            kernel: [k, k],
            out_channels,
            stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn leaky() -> Self {
        Self::LeakyRelu { slope: 0.1 }
    }

    pub fn is_nonlinearity(&self) -> bool {
        matches!(self, Self::LeakyRelu { .. } | Self::Relu)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Conv2d { .. } => "conv2d",
            Self::LeakyRelu { .. } => "leaky_relu",
            Self::Relu => "relu",
            Self::Maxpool2x2 => "maxpool2x2",
            Self::DetectHead { .. } => "detect_head",
        }
    }
}

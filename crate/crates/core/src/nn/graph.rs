use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::layer::{LayerSpec, Padding};
use crate::error::{bail, Result};
use crate::rng;
use crate::tensor::Shape;

/// Resolved geometry of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeom {
    pub input: Shape,
    pub output: Shape,
    pub weight_offset: usize,
    pub weight_count: usize,
}

/// Decode parameters of the final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSpec {
    pub grid: [usize; 2],
    pub anchors: Vec<[f32; 2]>,
    pub boxes_per_cell: usize,
}

/// A validated sequential detector: layer list, flat weights, input shape.
///
/// Conv weights are stored per layer as kernels in `(out, in, k_h, k_w)`
/// order followed by the biases, layers concatenated in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    weights: Vec<f32>,
    geoms: Vec<LayerGeom>,
}

impl ModelGraph {
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>, weights: Vec<f32>) -> Result<Self> {
        let geoms = propagate(input_shape, &layers)?;
        let expected: usize = geoms.iter().map(|g| g.weight_count).sum();
        if weights.len() != expected {
            bail!(
                CorruptModel,
                "weight count {} does not match layer parameter count {expected}",
                weights.len()
            );
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            bail!(CorruptModel, "non-finite weight at index {i}");
        }
        Ok(Self {
            input_shape,
            layers,
            weights,
            geoms,
        })
    }

    /// Builds the graph with zero weights.
    pub fn zeroed(input_shape: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        let geoms = propagate(input_shape, &layers)?;
        let n = geoms.iter().map(|g| g.weight_count).sum();
        Self::new(input_shape, layers, vec![0.0; n])
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn geoms(&self) -> &[LayerGeom] {
        &self.geoms
    }

    pub fn weight_offsets(&self) -> Vec<usize> {
        self.geoms.iter().map(|g| g.weight_offset).collect()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    /// Replaces the weights, keeping the architecture.
    pub fn with_weights(&self, weights: Vec<f32>) -> Result<Self> {
        Self::new(self.input_shape, self.layers.clone(), weights)
    }

    pub fn head(&self) -> HeadSpec {
        match self.layers.last() {
            Some(LayerSpec::DetectHead {
                grid,
                anchors,
                boxes_per_cell,
            }) => HeadSpec {
                grid: *grid,
                anchors: anchors.clone(),
                boxes_per_cell: *boxes_per_cell,
            },
            _ => unreachable!("validated graph ends in a detect head"),
        }
    }

    /// Channel counts of the nonlinearity layers, in order. Each channel is
    /// one coverage neuron.
    pub fn neuron_layers(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .zip(&self.geoms)
            .enumerate()
            .filter(|(_, (l, _))| l.is_nonlinearity())
            .map(|(i, (_, g))| (i, g.output.c))
            .collect()
    }

    pub fn neuron_count(&self) -> usize {
        self.neuron_layers().iter().map(|(_, c)| c).sum()
    }

    /// Seeded He-style initialisation.
    ///
    /// Kernels are `N(0, 2 / fan_in)`. The conv feeding the head gets a
    /// smaller scale and an objectness bias of `objectness_bias` so an
    /// untrained detector starts out predicting nothing.
    pub fn init_he(&mut self, seed: u64, objectness_bias: f32) {
        let mut r = rng::stream(seed, &[0x1417]);
        let last_conv = self
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Conv2d { .. }));
        for (i, layer) in self.layers.iter().enumerate() {
            let LayerSpec::Conv2d {
                kernel,
                out_channels,
                ..
            } = layer
            else {
                continue;
            };
            let g = self.geoms[i];
            let fan_in = kernel[0] * kernel[1] * g.input.c;
            let mut std = libm::sqrt(2.0 / fan_in as f64);
            let is_head = Some(i) == last_conv;
            if is_head {
                std *= 0.1;
            }
            let n_kernel = g.weight_count - out_channels;
            let w = &mut self.weights[g.weight_offset..g.weight_offset + g.weight_count];
            for v in &mut w[..n_kernel] {
                *v = (rng::normal(&mut r) * std) as f32;
            }
            for (o, b) in w[n_kernel..].iter_mut().enumerate() {
                *b = if is_head && o % 5 == 4 {
                    objectness_bias
                } else {
                    0.0
                };
            }
        }
        // keep the stream position independent of layer count changes
        let _ = r.random::<u32>();
    }
}

/// Propagates shapes through the layer list, validating every layer.
pub fn propagate(input: Shape, layers: &[LayerSpec]) -> Result<Vec<LayerGeom>> {
    if input.is_empty() {
        bail!(Format, "empty input shape {input:?}");
    }
    if layers.is_empty() {
        bail!(Format, "model has no layers");
    }
    let mut geoms = Vec::with_capacity(layers.len());
    let mut shape = input;
    let mut offset = 0;
    for (i, layer) in layers.iter().enumerate() {
        let (out, count) = match layer {
            LayerSpec::Conv2d {
                kernel,
                out_channels,
                stride,
                padding,
            } => {
                let [kh, kw] = *kernel;
                if kh % 2 == 0 || kw % 2 == 0 {
                    bail!(Format, "layer {i}: kernel dims must be odd, got {kh}x{kw}");
                }
                if *stride == 0 || *out_channels == 0 {
                    bail!(Format, "layer {i}: stride and out_channels must be positive");
                }
                let (oh, ow) = match padding {
                    Padding::Same => (shape.h.div_ceil(*stride), shape.w.div_ceil(*stride)),
                    Padding::Valid => {
                        if shape.h < kh || shape.w < kw {
                            bail!(Format, "layer {i}: input {shape:?} smaller than kernel");
                        }
                        ((shape.h - kh) / stride + 1, (shape.w - kw) / stride + 1)
                    }
                };
                (
                    Shape::new(oh, ow, *out_channels),
                    out_channels * shape.c * kh * kw + out_channels,
                )
            }
            LayerSpec::LeakyRelu { slope } => {
                if !slope.is_finite() {
                    bail!(Format, "layer {i}: non-finite leaky slope");
                }
                (shape, 0)
            }
            LayerSpec::Relu => (shape, 0),
            LayerSpec::Maxpool2x2 => {
                if !shape.h.is_multiple_of(2) || !shape.w.is_multiple_of(2) {
                    bail!(Format, "layer {i}: maxpool needs even dims, got {shape:?}");
                }
                (Shape::new(shape.h / 2, shape.w / 2, shape.c), 0)
            }
            LayerSpec::DetectHead {
                grid,
                anchors,
                boxes_per_cell,
            } => {
                if i + 1 != layers.len() {
                    bail!(Format, "detect_head must be the last layer (found at {i})");
                }
                if !matches!(layers.get(i.wrapping_sub(1)), Some(LayerSpec::Conv2d { .. })) {
                    bail!(Format, "detect_head must be fed by a conv2d layer");
                }
                if *boxes_per_cell == 0 || anchors.len() != *boxes_per_cell {
                    bail!(
                        Format,
                        "detect_head: {} anchors for {boxes_per_cell} boxes per cell",
                        anchors.len()
                    );
                }
                if anchors
                    .iter()
                    .any(|a| !(a[0] > 0.0 && a[1] > 0.0 && a[0].is_finite() && a[1].is_finite()))
                {
                    bail!(Format, "detect_head: anchors must be strictly positive");
                }
                if shape.c != boxes_per_cell * 5 {
                    bail!(
                        Format,
                        "detect_head: feeding layer has {} channels, expected {}",
                        shape.c,
                        boxes_per_cell * 5
                    );
                }
                if [shape.h, shape.w] != *grid {
                    bail!(
                        Format,
                        "detect_head: grid {grid:?} does not match feature map {}x{}",
                        shape.h,
                        shape.w
                    );
                }
                (shape, 0)
            }
        };
        geoms.push(LayerGeom {
            input: shape,
            output: out,
            weight_offset: offset,
            weight_count: count,
        });
        offset += count;
        shape = out;
    }
    if !matches!(layers.last(), Some(LayerSpec::DetectHead { .. })) {
        bail!(Format, "last layer must be detect_head");
    }
    Ok(geoms)
}

/// Anchors of the reference detector, as fractions of the image size.
pub const PERSON_MINI_ANCHORS: [[f32; 2]; 2] = [[0.15, 0.35], [0.40, 0.80]];

/// Layer list of the reference 96x96 "person-mini" detector.
///
/// Four conv + leaky blocks (16, 32, 64, 64 channels, the first three
/// followed by 2x2 max pooling) and a 1x1 conv producing 2 anchors x 5
/// values on a 12x12 grid.
pub fn person_mini_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(3, 16),
        LayerSpec::leaky(),
        LayerSpec::Maxpool2x2,
        LayerSpec::conv(3, 32),
        LayerSpec::leaky(),
        LayerSpec::Maxpool2x2,
        LayerSpec::conv(3, 64),
        LayerSpec::leaky(),
        LayerSpec::Maxpool2x2,
        LayerSpec::conv(3, 64),
        LayerSpec::leaky(),
        LayerSpec::conv(1, 10),
        LayerSpec::DetectHead {
            grid: [12, 12],
            anchors: PERSON_MINI_ANCHORS.to_vec(),
            boxes_per_cell: 2,
        },
    ]
}

pub const PERSON_MINI_INPUT: Shape = Shape::new(96, 96, 3);

/// The reference detector with seeded initial weights.
pub fn person_mini(seed: u64) -> ModelGraph {
    let mut g = ModelGraph::zeroed(PERSON_MINI_INPUT, person_mini_layers())
        .expect("reference architecture is valid");
    g.init_he(seed, -4.0);
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn person_mini_geometry() {
        let g = person_mini(1);
        assert_eq!(g.layers().iter().filter(|l| l.name() == "conv2d").count(), 5);
        assert_eq!(g.neuron_count(), 16 + 32 + 64 + 64);
        let counts: Vec<_> = g.neuron_layers().iter().map(|(_, c)| *c).collect();
        assert_eq!(counts, [16, 32, 64, 64]);
        let expected = (16 * 3 * 9 + 16) + (32 * 16 * 9 + 32) + (64 * 32 * 9 + 64)
            + (64 * 64 * 9 + 64)
            + (10 * 64 + 10);
        assert_eq!(g.param_count(), expected);
        assert_eq!(g.geoms().last().unwrap().output, Shape::new(12, 12, 10));
    }

    #[test]
    fn weight_mismatch_is_corrupt_model() {
        let g = person_mini(1);
        let mut w = g.weights().to_vec();
        w.pop();
        assert!(matches!(
            g.with_weights(w),
            Err(crate::Error::CorruptModel(_))
        ));
    }

    #[test]
    fn rejects_bad_architectures() {
        let s = Shape::new(8, 8, 3);
        let head = |c| LayerSpec::DetectHead {
            grid: [8, 8],
            anchors: vec![[0.5, 0.5]; c],
            boxes_per_cell: c,
        };
        // even kernel
        let l = vec![
            LayerSpec::Conv2d {
                kernel: [2, 3],
                out_channels: 5,
                stride: 1,
                padding: Padding::Same,
            },
            head(1),
        ];
        assert!(propagate(s, &l).is_err());
        // head channel mismatch
        assert!(propagate(s, &[LayerSpec::conv(3, 6), head(1)]).is_err());
        // head not last
        assert!(propagate(s, &[LayerSpec::conv(3, 5), head(1), LayerSpec::Relu]).is_err());
        // grid mismatch
        assert!(propagate(
            s,
            &[LayerSpec::conv(3, 5), LayerSpec::Maxpool2x2, LayerSpec::conv(1, 5), head(1)]
        )
        .is_err());
        // odd pooling
        assert!(propagate(Shape::new(7, 8, 3), &[LayerSpec::Maxpool2x2]).is_err());
        // non-positive anchor
        let bad = LayerSpec::DetectHead {
            grid: [8, 8],
            anchors: vec![[0.0, 0.5]],
            boxes_per_cell: 1,
        };
        assert!(propagate(s, &[LayerSpec::conv(3, 5), bad]).is_err());
        assert!(propagate(s, &[LayerSpec::conv(3, 5), head(1)]).is_ok());
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(person_mini(3), person_mini(3));
        assert_ne!(person_mini(3).weights(), person_mini(4).weights());
    }
}

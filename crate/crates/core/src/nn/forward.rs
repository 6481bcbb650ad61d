use alloc::vec::Vec;

use super::conv::{self, ConvGeom};
use super::graph::ModelGraph;
use super::layer::LayerSpec;
use crate::error::{bail, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Channel means of one post-nonlinearity layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub layer_index: usize,
    pub channel_means: Vec<f32>,
}

/// One [`LayerTrace`] per nonlinearity layer, in network order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivationTrace {
    pub layers: Vec<LayerTrace>,
}

impl ActivationTrace {
    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(|l| l.channel_means.len()).sum()
    }
}

/// Per-layer state retained for the backward pass.
pub(crate) struct Cached<F> {
    /// `outputs[i]` is the output of layer `i`; the input of layer `i` is
    /// `outputs[i - 1]` (or the network input for `i == 0`).
    pub outputs: Vec<Vec<F>>,
    /// im2col buffers and packed kernels of conv layers.
    pub cols: Vec<Option<Vec<F>>>,
    pub packed: Vec<Option<Vec<F>>>,
}

pub(crate) struct Pass<F> {
    pub input: Vec<F>,
    pub output: Vec<F>,
    pub trace: ActivationTrace,
    pub cache: Option<Cached<F>>,
}

pub(crate) fn conv_geom(graph: &ModelGraph, i: usize) -> Option<ConvGeom> {
    match &graph.layers()[i] {
        LayerSpec::Conv2d {
            kernel,
            stride,
            padding,
            ..
        } => {
            let g = graph.geoms()[i];
            Some(ConvGeom::new(g.input, g.output, *kernel, *stride, *padding))
        }
        _ => None,
    }
}

fn channel_means<F: Real>(data: &[F], shape: Shape) -> Result<Vec<f32>> {
    let mut sums = alloc::vec![0.0f64; shape.c];
    for px in data.chunks_exact(shape.c) {
        for (s, v) in sums.iter_mut().zip(px) {
            *s += v.to_f64();
        }
    }
    let n = shape.pixels() as f64;
    let means: Vec<f32> = sums.iter().map(|s| (s / n) as f32).collect();
    if means.iter().any(|m| !m.is_finite()) {
        bail!(Numeric, "non-finite activation mean");
    }
    Ok(means)
}

pub(crate) fn run<F: Real>(
    graph: &ModelGraph,
    weights: &[F],
    input: Vec<F>,
    keep: bool,
) -> Result<Pass<F>> {
    if input.len() != graph.input_shape().len() {
        bail!(
            Input,
            "input has {} values, model expects {:?}",
            input.len(),
            graph.input_shape()
        );
    }
    let n = graph.layers().len();
    let mut trace = ActivationTrace::default();
    let mut cache = keep.then(|| Cached {
        outputs: Vec::with_capacity(n),
        cols: Vec::with_capacity(n),
        packed: Vec::with_capacity(n),
    });
    let mut current: Option<Vec<F>> = None;
    for (i, layer) in graph.layers().iter().enumerate() {
        let geom = graph.geoms()[i];
        let x: &[F] = current.as_deref().unwrap_or(&input);
        let mut cols_keep = None;
        let mut packed_keep = None;
        let y = match layer {
            LayerSpec::Conv2d { .. } => {
                let cg = conv_geom(graph, i).expect("conv layer");
                let w = &weights[geom.weight_offset..geom.weight_offset + geom.weight_count];
                let (kernels, bias) = w.split_at(cg.kernel_len());
                let packed = conv::pack(&cg, kernels);
                let cols = conv::im2col(&cg, x);
                let y = conv::forward(&cg, &cols, &packed, bias);
                if keep {
                    cols_keep = Some(cols);
                    packed_keep = Some(packed);
                }
                y
            }
            LayerSpec::LeakyRelu { slope } => {
                let s = F::from_f32(*slope);
                x.iter().map(|&v| if v > F::ZERO { v } else { v * s }).collect()
            }
            LayerSpec::Relu => x
                .iter()
                .map(|&v| if v > F::ZERO { v } else { F::ZERO })
                .collect(),
            LayerSpec::Maxpool2x2 => maxpool(x, geom.input),
            LayerSpec::DetectHead { .. } => x.to_vec(),
        };
        if layer.is_nonlinearity() {
            trace.layers.push(LayerTrace {
                layer_index: i,
                channel_means: channel_means(&y, geom.output)?,
            });
        }
        if let Some(c) = cache.as_mut() {
            c.cols.push(cols_keep);
            c.packed.push(packed_keep);
            if let Some(prev) = current.take() {
                c.outputs.push(prev);
            }
        }
        current = Some(y);
    }
    let output = current.expect("non-empty graph");
    if output.iter().any(|v| !v.is_finite()) {
        bail!(Numeric, "non-finite network output");
    }
    if let Some(c) = cache.as_mut() {
        // last output is kept separately as `output`
        debug_assert_eq!(c.outputs.len(), n - 1);
    }
    Ok(Pass {
        input,
        output,
        trace,
        cache,
    })
}

fn maxpool<F: Real>(x: &[F], s: Shape) -> Vec<F> {
    let (oh, ow, c) = (s.h / 2, s.w / 2, s.c);
    let mut out = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let at = |dy: usize, dx: usize| x[((2 * oy + dy) * s.w + 2 * ox + dx) * c + ch];
                let mut m = at(0, 0);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let v = at(dy, dx);
                    if v > m {
                        m = v;
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

/// Index (within the 2x2 window, row-major) of the first maximum.
pub(crate) fn pool_argmax<F: Real>(x: &[F], s: Shape, oy: usize, ox: usize, ch: usize) -> usize {
    let at = |dy: usize, dx: usize| x[((2 * oy + dy) * s.w + 2 * ox + dx) * s.c + ch];
    let mut best = 0;
    let mut m = at(0, 0);
    for (k, (dy, dx)) in [(0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        let v = at(dy, dx);
        if v > m {
            m = v;
            best = k + 1;
        }
    }
    best
}

/// Runs the detector on one image.
///
/// Returns the raw head tensor `(S_h, S_w, B * 5)` and the activation trace
/// (one channel-mean vector per nonlinearity layer). Deterministic: the same
/// graph and image always give bit-identical results.
pub fn forward_with_trace(graph: &ModelGraph, image: &Tensor) -> Result<(Tensor, ActivationTrace)> {
    if image.shape() != graph.input_shape() {
        bail!(
            Input,
            "image shape {:?} does not match model input {:?}",
            image.shape(),
            graph.input_shape()
        );
    }
    let pass = run::<f32>(graph, graph.weights(), image.data().to_vec(), false)?;
    let out_shape = graph.geoms().last().expect("non-empty").output;
    Ok((Tensor::from_vec(out_shape, pass.output)?, pass.trace))
}

/// Forward pass in 64-bit arithmetic, used by reference computations.
pub fn forward_f64(graph: &ModelGraph, weights: &[f64], image: &[f64]) -> Result<(Vec<f64>, ActivationTrace)> {
    if weights.len() != graph.param_count() {
        bail!(Argument, "expected {} weights", graph.param_count());
    }
    let pass = run::<f64>(graph, weights, image.to_vec(), false)?;
    Ok((pass.output, pass.trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::{person_mini, ModelGraph};
    use crate::nn::layer::{LayerSpec, Padding};
    use alloc::vec;

    fn tiny(layers: Vec<LayerSpec>, input: Shape) -> ModelGraph {
        ModelGraph::zeroed(input, layers).unwrap()
    }

    #[test]
    fn zero_net_zero_means() {
        let mut g = person_mini(1);
        g = g.with_weights(vec![0.0; g.param_count()]).unwrap();
        let img = Tensor::zeros(g.input_shape());
        let (_, trace) = forward_with_trace(&g, &img).unwrap();
        assert_eq!(trace.neuron_count(), 176);
        assert!(trace.layers.iter().all(|l| l.channel_means.iter().all(|&m| m == 0.0)));
    }

    #[test]
    fn deterministic_and_shaped() {
        let g = person_mini(5);
        let img = crate::synth::render(&crate::synth::SceneSpec::sample(11, g.input_shape())).image;
        let a = forward_with_trace(&g, &img).unwrap();
        let b = forward_with_trace(&g, &img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.shape(), Shape::new(12, 12, 10));
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let g = person_mini(1);
        let img = Tensor::zeros(Shape::new(32, 32, 3));
        assert!(matches!(forward_with_trace(&g, &img), Err(crate::Error::Input(_))));
    }

    /// 1 conv (3x3, same padding) + relu on a 4x4 single-channel input,
    /// checked against a hand-written direct convolution.
    #[test]
    fn conv_relu_means_match_direct_convolution() {
        let input = Shape::new(4, 4, 1);
        let layers = vec![
            LayerSpec::conv(3, 5),
            LayerSpec::Relu,
            LayerSpec::conv(1, 5),
            LayerSpec::DetectHead {
                grid: [4, 4],
                anchors: vec![[0.3, 0.5]],
                boxes_per_cell: 1,
            },
        ];
        let g0 = tiny(layers, input);
        let mut r = crate::rng::stream(77, &[]);
        let w: Vec<f32> = (0..g0.param_count())
            .map(|_| crate::rng::normal(&mut r) as f32)
            .collect();
        let g = g0.with_weights(w.clone()).unwrap();
        let img: Vec<f32> = (0..16).map(|i| ((i * 7) % 11) as f32 / 10.0).collect();
        let (_, trace) = forward_with_trace(&g, &Tensor::from_vec(input, img.clone()).unwrap()).unwrap();
        assert_eq!(trace.layers.len(), 1);
        for o in 0..5 {
            let bias = w[45 + o];
            let mut sum = 0.0f64;
            for y in 0..4i32 {
                for x in 0..4i32 {
                    let mut acc = bias as f64;
                    for ky in 0..3i32 {
                        for kx in 0..3i32 {
                            let (iy, ix) = (y + ky - 1, x + kx - 1);
                            if (0..4).contains(&iy) && (0..4).contains(&ix) {
                                let kv = w[(o * 9) + (ky * 3 + kx) as usize] as f64;
                                acc += kv * img[(iy * 4 + ix) as usize] as f64;
                            }
                        }
                    }
                    sum += acc.max(0.0);
                }
            }
            let expected = sum / 16.0;
            let got = trace.layers[0].channel_means[o] as f64;
            assert!((got - expected).abs() < 1e-5, "channel {o}: {got} vs {expected}");
        }
    }

    #[test]
    fn strided_valid_conv_shape() {
        let layers = vec![
            LayerSpec::Conv2d {
                kernel: [3, 3],
                out_channels: 5,
                stride: 2,
                padding: Padding::Valid,
            },
            LayerSpec::DetectHead {
                grid: [3, 3],
                anchors: vec![[0.3, 0.5]],
                boxes_per_cell: 1,
            },
        ];
        let g = tiny(layers, Shape::new(7, 7, 2));
        let (out, trace) = forward_with_trace(&g, &Tensor::zeros(Shape::new(7, 7, 2))).unwrap();
        assert_eq!(out.shape(), Shape::new(3, 3, 5));
        assert!(trace.layers.is_empty());
    }

    #[test]
    fn conv_only_net_is_linear_in_input() {
        // conv without bias (zero biases) then leaky: channel means scale by c > 0
        let input = Shape::new(6, 6, 3);
        let layers = vec![
            LayerSpec::conv(3, 4),
            LayerSpec::leaky(),
            LayerSpec::conv(1, 5),
            LayerSpec::DetectHead {
                grid: [6, 6],
                anchors: vec![[0.3, 0.5]],
                boxes_per_cell: 1,
            },
        ];
        let mut g = tiny(layers, input);
        g.init_he(3, 0.0);
        let img: Vec<f32> = (0..input.len()).map(|i| (i % 13) as f32 / 13.0).collect();
        let a = forward_with_trace(&g, &Tensor::from_vec(input, img.clone()).unwrap()).unwrap().1;
        let scaled: Vec<f32> = img.iter().map(|v| v * 0.5).collect();
        let b = forward_with_trace(&g, &Tensor::from_vec(input, scaled).unwrap()).unwrap().1;
        for (x, y) in a.layers[0].channel_means.iter().zip(&b.layers[0].channel_means) {
            assert!((x * 0.5 - y).abs() < 1e-6);
        }
    }
}

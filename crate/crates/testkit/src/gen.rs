//! Seeded random instances: tiny graphs, images, boxes, detections, and a
//! small trained detector shared by the slower checks.

use cgt_core::nn::{person_mini, DecodeConfig, Detection, LayerSpec, ModelGraph, Padding};
use cgt_core::rng::{self, ChaCha8Rng};
use cgt_core::synth::generate;
use cgt_core::train::{train, TrainConfig};
use cgt_core::{BBox, Sample, Shape, Tensor};
use rand::Rng;

pub fn normal(r: &mut ChaCha8Rng) -> f32 {
    rng::normal(r) as f32
}

/// A random sequential detector with at most `max_neurons` coverage neurons.
///
/// One to three conv + nonlinearity blocks (relu or leaky, optional 2x2
/// pooling when the map is even), then a 1x1 conv into a detect head.
pub fn tiny_graph(r: &mut ChaCha8Rng, max_neurons: usize) -> ModelGraph {
    let side = [4, 5, 6, 8][r.random_range(0..4)];
    let input = Shape::new(side, side + r.random_range(0..2) * 2, r.random_range(1..4));
    let blocks = r.random_range(1..4);
    let per_block = (max_neurons / blocks).max(1);
    let (mut h, mut w) = (input.h, input.w);
    let mut layers = Vec::new();
    for _ in 0..blocks {
        let k = if r.random_bool(0.7) { 3 } else { 1 };
        layers.push(LayerSpec::Conv2d {
            kernel: [k, k],
            out_channels: r.random_range(1..=per_block.min(40)),
            stride: 1,
            padding: Padding::Same,
        });
        layers.push(if r.random_bool(0.5) {
            LayerSpec::Relu
        } else {
            LayerSpec::LeakyRelu { slope: r.random_range(0.01..0.3) }
        });
        if h % 2 == 0 && w % 2 == 0 && h > 2 && r.random_bool(0.4) {
            layers.push(LayerSpec::Maxpool2x2);
            h /= 2;
            w /= 2;
        }
    }
    let b = r.random_range(1..3);
    layers.push(LayerSpec::conv(1, b * 5));
    layers.push(LayerSpec::DetectHead {
        grid: [h, w],
        anchors: (0..b).map(|_| [r.random_range(0.1..0.9), r.random_range(0.1..0.9)]).collect(),
        boxes_per_cell: b,
    });
    let g = ModelGraph::zeroed(input, layers).expect("generated graph is valid");
    let weights = (0..g.param_count()).map(|_| normal(r) * 0.5).collect();
    g.with_weights(weights).expect("finite weights")
}

pub fn image(r: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    let data = (0..shape.len()).map(|_| r.random::<f32>()).collect();
    Tensor::from_vec(shape, data).expect("sized to shape")
}

/// A valid box inside a `w x h` canvas with sides of at least `min_side`.
pub fn bbox(r: &mut ChaCha8Rng, w: f32, h: f32, min_side: f32) -> BBox {
    let bw = r.random_range(min_side..=w.max(min_side + 1e-3));
    let bh = r.random_range(min_side..=h.max(min_side + 1e-3));
    let x = r.random_range(0.0..=(w - bw).max(0.0));
    let y = r.random_range(0.0..=(h - bh).max(0.0));
    BBox::raw(x, y, (x + bw).min(w.max(x + min_side)), (y + bh).min(h.max(y + min_side)))
}

/// Detections with distinct scores. About half are jittered copies of a
/// ground-truth box so that both matches and misses occur.
pub fn detections(r: &mut ChaCha8Rng, gts: &[BBox], n: usize, w: f32, h: f32) -> Vec<Detection> {
    let mut out: Vec<Detection> = Vec::with_capacity(n);
    while out.len() < n {
        let bbox = if !gts.is_empty() && r.random_bool(0.6) {
            let g = gts[r.random_range(0..gts.len())];
            let j = 0.25 * g.width().min(g.height());
            let mut jit = || r.random_range(-j..=j);
            let b = BBox::raw(g.x_min + jit(), g.y_min + jit(), g.x_max + jit(), g.y_max + jit());
            if !b.is_valid() {
                continue;
            }
            b
        } else {
            bbox(r, w, h, 2.0)
        };
        let score: f32 = r.random();
        if out.iter().any(|d| d.score == score) {
            continue;
        }
        out.push(Detection { bbox, score });
    }
    out
}

/// Samples with random images and one to three boxes each, for gradient checks.
pub fn samples(r: &mut ChaCha8Rng, shape: Shape, n: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let k = r.random_range(1..4);
            let boxes = (0..k)
                .map(|_| bbox(r, shape.w as f32, shape.h as f32, 1.0))
                .collect();
            Sample::new(format!("g{i}"), image(r, shape), boxes)
        })
        .collect()
}

pub const FIXTURE_DECODE: DecodeConfig = DecodeConfig {
    score_thresh: 0.05,
    iou_thresh: 0.45,
};

/// A briefly trained reference detector plus held-out synthetic scenes.
pub struct Fixture {
    pub model: ModelGraph,
    pub train: Vec<Sample>,
    pub held_out: Vec<Sample>,
}

/// Trains the reference detector on 120 scenes for 6 epochs. Deterministic.
pub fn trained_fixture() -> Fixture {
    let shape = Shape::new(96, 96, 3);
    let train_set = generate(11, 120, shape, "fx");
    let held_out = generate(12, 60, shape, "fh");
    let cfg = TrainConfig {
        epochs: 6,
        ..TrainConfig::default()
    };
    let (model, _) = train(&person_mini(cfg.init_seed), &train_set, &cfg, |_, _| Ok(None))
        .expect("fixture training succeeds");
    Fixture {
        model,
        train: train_set,
        held_out,
    }
}

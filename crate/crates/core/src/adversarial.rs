//! Pseudo-adversarial stand-in generator.
//!
//! Not an attack from the literature: a seeded, gradient-free random search
//! over blockwise sign perturbations confined to the regions where the
//! detector sees (or should see) persons. It keeps whichever candidate
//! lowers the image's AP the most, breaking ties by total detection score.
//! Its only purpose is to make the adversarial fuzzing path runnable
//! without external attack tooling.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::eval::{average_precision, BBox};
use crate::fuzz::AP_IOU;
use crate::nn::{detect, DecodeConfig, ModelGraph};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoAdvParams {
    /// Perturbation amplitude per channel value.
    pub epsilon: f32,
    /// Random candidates tried per image.
    pub iterations: usize,
    /// Side of the square blocks sharing one sign.
    pub block: usize,
    /// Margin in pixels added around target regions.
    pub margin: f32,
    pub decode: DecodeConfig,
}

impl Default for PseudoAdvParams {
    fn default() -> Self {
        Self {
            epsilon: 0.12,
            iterations: 8,
            block: 3,
            margin: 2.0,
            decode: DecodeConfig::default(),
        }
    }
}

fn objective(graph: &ModelGraph, img: &Tensor, boxes: &[BBox], cfg: DecodeConfig) -> Result<(f64, f64)> {
    let dets = detect(graph, img, cfg)?;
    let mass = dets.iter().map(|d| d.score as f64).sum();
    Ok((average_precision(&dets, boxes, AP_IOU), mass))
}

/// Returns a perturbed copy of `image` quantized to 8 bits.
pub fn pseudo_adversarial(
    graph: &ModelGraph,
    image: &Tensor,
    boxes: &[BBox],
    params: &PseudoAdvParams,
    seed: u64,
) -> Result<Tensor> {
    if !(params.epsilon > 0.0 && params.epsilon <= 1.0) || params.block == 0 {
        bail!(Argument, "invalid pseudo-adversarial parameters {params:?}");
    }
    let s = image.shape();
    let (w, h) = (s.w as f32, s.h as f32);
    let mut regions: Vec<BBox> = boxes.to_vec();
    regions.extend(detect(graph, image, params.decode)?.iter().map(|d| d.bbox));
    let m = params.margin;
    let regions: Vec<BBox> = regions
        .iter()
        .filter_map(|b| BBox::raw(b.x_min - m, b.y_min - m, b.x_max + m, b.y_max + m).clip(w, h))
        .collect();
    let inside = |y: usize, x: usize| {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        regions.is_empty()
            || regions
                .iter()
                .any(|b| px >= b.x_min && px <= b.x_max && py >= b.y_min && py <= b.y_max)
    };

    let mut best = image.quantize_u8();
    let mut best_score = objective(graph, &best, boxes, params.decode)?;
    let (bh, bw) = (s.h.div_ceil(params.block), s.w.div_ceil(params.block));
    for it in 0..params.iterations {
        let mut rng = rng::stream(seed, &[0xadd, it as u64]);
        let signs: Vec<f32> = (0..bh * bw * s.c)
            .map(|_| if rng.random_bool(0.5) { params.epsilon } else { -params.epsilon })
            .collect();
        let mut cand = image.clone();
        for y in 0..s.h {
            for x in 0..s.w {
                if !inside(y, x) {
                    continue;
                }
                let b = (y / params.block) * bw + x / params.block;
                for c in 0..s.c {
                    let v = cand.get(y, x, c) + signs[b * s.c + c];
                    cand.set(y, x, c, v);
                }
            }
        }
        let cand = cand.clamp01().quantize_u8();
        let score = objective(graph, &cand, boxes, params.decode)?;
        if score < best_score {
            best = cand;
            best_score = score;
        }
        if best_score.0 == 0.0 && best_score.1 == 0.0 {
            break;
        }
    }
    Ok(best)
}

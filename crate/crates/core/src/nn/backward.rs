//! Reverse-mode gradients through the sequential detector.

use alloc::vec;
use alloc::vec::Vec;

use super::conv;
use super::forward::{conv_geom, pool_argmax, Pass};
use super::graph::ModelGraph;
use super::layer::LayerSpec;
use crate::real::Real;

/// Back-propagates `d_raw` (gradient of the loss w.r.t. the head output)
/// through a cached forward pass, accumulating weight gradients into
/// `grad`.
pub(crate) fn backward<F: Real>(graph: &ModelGraph, pass: &Pass<F>, d_raw: Vec<F>, grad: &mut [F]) {
    let cache = pass
        .cache
        .as_ref()
        .expect("backward needs a forward pass run with keep = true");
    let mut d = d_raw;
    for i in (0..graph.layers().len()).rev() {
        let geom = graph.geoms()[i];
        let input: &[F] = if i == 0 { &pass.input } else { &cache.outputs[i - 1] };
        d = match &graph.layers()[i] {
            LayerSpec::DetectHead { .. } => d,
            LayerSpec::Conv2d { .. } => {
                let cg = conv_geom(graph, i).expect("conv layer");
                let cols = cache.cols[i].as_ref().expect("cached cols");
                let packed = cache.packed[i].as_ref().expect("cached kernels");
                let mut dpacked = vec![F::ZERO; cg.kernel_len()];
                let g = &mut grad[geom.weight_offset..geom.weight_offset + geom.weight_count];
                let (gk, gb) = g.split_at_mut(cg.kernel_len());
                let dcols = conv::backward(&cg, cols, packed, &d, &mut dpacked, gb, i > 0);
                conv::unpack_add(&cg, &dpacked, gk);
                match dcols {
                    Some(dc) => {
                        let mut dx = vec![F::ZERO; geom.input.len()];
                        conv::col2im(&cg, &dc, &mut dx);
                        dx
                    }
                    None => break,
                }
            }
            LayerSpec::LeakyRelu { slope } => {
                let s = F::from_f32(*slope);
                input
                    .iter()
                    .zip(&d)
                    .map(|(&x, &g)| if x > F::ZERO { g } else { g * s })
                    .collect()
            }
            LayerSpec::Relu => input
                .iter()
                .zip(&d)
                .map(|(&x, &g)| if x > F::ZERO { g } else { F::ZERO })
                .collect(),
            LayerSpec::Maxpool2x2 => {
                let s = geom.input;
                let mut dx = vec![F::ZERO; s.len()];
                let (oh, ow) = (s.h / 2, s.w / 2);
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..s.c {
                            let k = pool_argmax(input, s, oy, ox, ch);
                            let (dy, dxo) = (k / 2, k % 2);
                            dx[((2 * oy + dy) * s.w + 2 * ox + dxo) * s.c + ch] +=
                                d[(oy * ow + ox) * s.c + ch];
                        }
                    }
                }
                dx
            }
        };
    }
}

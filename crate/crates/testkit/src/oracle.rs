//! Reference computations written straight from the definitions.

use std::collections::BTreeSet;

use cgt_core::coverage::{CoverageKind, NeuronId, NeuronProfile};
use cgt_core::nn::{ActivationTrace, Detection, LayerSpec, ModelGraph, Padding};
use cgt_core::{BBox, Tensor};

/// Channel means of every nonlinearity layer, by direct nested-loop
/// convolution in f64. Supports stride-1 `Same` convolutions only.
pub fn naive_channel_means(graph: &ModelGraph, image: &Tensor) -> Vec<Vec<f64>> {
    let s = graph.input_shape();
    let (mut h, mut w, mut c) = (s.h, s.w, s.c);
    let mut x: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let weights = graph.weights();
    let mut out = Vec::new();
    for (layer, geom) in graph.layers().iter().zip(graph.geoms()) {
        match layer {
            LayerSpec::Conv2d {
                kernel: [kh, kw],
                out_channels: oc,
                stride,
                padding,
            } => {
                assert!(*stride == 1 && *padding == Padding::Same, "oracle handles stride-1 same convs");
                let wts = &weights[geom.weight_offset..geom.weight_offset + geom.weight_count];
                let bias = &wts[oc * c * kh * kw..];
                let (ph, pw) = (kh / 2, kw / 2);
                let mut y = vec![0.0; h * w * oc];
                for oy in 0..h {
                    for ox in 0..w {
                        for o in 0..*oc {
                            let mut acc = bias[o] as f64;
                            for i in 0..c {
                                for ky in 0..*kh {
                                    for kx in 0..*kw {
                                        let iy = oy as isize + ky as isize - ph as isize;
                                        let ix = ox as isize + kx as isize - pw as isize;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                            continue;
                                        }
                                        let wv = wts[((o * c + i) * kh + ky) * kw + kx] as f64;
                                        acc += wv * x[(iy as usize * w + ix as usize) * c + i];
                                    }
                                }
                            }
                            y[(oy * w + ox) * oc + o] = acc;
                        }
                    }
                }
                x = y;
                c = *oc;
            }
            LayerSpec::Relu | LayerSpec::LeakyRelu { .. } => {
                let slope = match layer {
                    LayerSpec::LeakyRelu { slope } => *slope as f64,
                    _ => 0.0,
                };
                for v in &mut x {
                    if *v < 0.0 {
                        *v *= slope;
                    }
                }
                let mut means = vec![0.0; c];
                for (k, v) in x.iter().enumerate() {
                    means[k % c] += v;
                }
                means.iter_mut().for_each(|m| *m /= (h * w) as f64);
                out.push(means);
            }
            LayerSpec::Maxpool2x2 => {
                let (nh, nw) = (h / 2, w / 2);
                let mut y = vec![f64::NEG_INFINITY; nh * nw * c];
                for yy in 0..h {
                    for xx in 0..w {
                        for i in 0..c {
                            let d = &mut y[((yy / 2) * nw + xx / 2) * c + i];
                            *d = d.max(x[(yy * w + xx) * c + i]);
                        }
                    }
                }
                x = y;
                (h, w) = (nh, nw);
            }
            LayerSpec::DetectHead { .. } => {}
        }
    }
    out
}

/// Coverage of one trace, neuron by neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCoverage {
    pub upper: BTreeSet<NeuronId>,
    pub lower: BTreeSet<NeuronId>,
    pub ratio: f64,
}

/// NC thresholds the layer-wise min-max scaled channel mean; NBC / SNAC
/// compare the raw mean against the profile's `(low, high)` by position.
pub fn coverage(kind: CoverageKind, trace: &ActivationTrace, profile: Option<&NeuronProfile>, t: f32) -> OracleCoverage {
    let mut upper = BTreeSet::new();
    let mut lower = BTreeSet::new();
    let mut total = 0usize;
    for layer in &trace.layers {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &m in &layer.channel_means {
            lo = lo.min(m);
            hi = hi.max(m);
        }
        for (ch, &m) in layer.channel_means.iter().enumerate() {
            let id = NeuronId {
                layer_index: layer.layer_index,
                channel_index: ch,
            };
            match kind {
                CoverageKind::Nc => {
                    let scaled = if hi > lo {
                        ((m as f64 - lo as f64) / (hi as f64 - lo as f64)) as f32
                    } else {
                        0.0
                    };
                    if scaled > t {
                        upper.insert(id);
                    }
                }
                CoverageKind::Nbc | CoverageKind::Snac => {
                    let p = profile.expect("profile required");
                    assert_eq!(p.neurons[total], id, "profile order");
                    if m > p.high[total] {
                        upper.insert(id);
                    } else if kind == CoverageKind::Nbc && m < p.low[total] {
                        lower.insert(id);
                    }
                }
            }
            total += 1;
        }
    }
    let ratio = match kind {
        _ if total == 0 => 0.0,
        CoverageKind::Nc | CoverageKind::Snac => upper.len() as f64 / total as f64,
        CoverageKind::Nbc => (upper.len() + lower.len()) as f64 / (2 * total) as f64,
    };
    OracleCoverage { upper, lower, ratio }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let area = |x0: f32, y0: f32, x1: f32, y1: f32| ((x1 - x0).max(0.0) as f64) * ((y1 - y0).max(0.0) as f64);
    let inter = area(
        a.x_min.max(b.x_min),
        a.y_min.max(b.y_min),
        a.x_max.min(b.x_max),
        a.y_max.min(b.y_max),
    );
    let union = area(a.x_min, a.y_min, a.x_max, a.y_max) + area(b.x_min, b.y_min, b.x_max, b.y_max) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// True positives among the `k` highest-scoring predictions, matched from
/// scratch: each in turn claims the unmatched ground truth of highest IoU
/// (lowest index on ties) when that IoU reaches `iou_min`.
fn true_positives_in_top(preds: &[&Detection], k: usize, gts: &[BBox], iou_min: f64) -> usize {
    let mut taken = vec![false; gts.len()];
    let mut tp = 0;
    for p in &preds[..k] {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&p.bbox, gt);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= iou_min {
                taken[g] = true;
                tp += 1;
            }
        }
    }
    tp
}

/// All-point interpolated AP. Recall moves in steps of `1 / n_gt`, so the
/// area under the interpolated curve is the mean over recall levels
/// `j / n_gt` of the best precision among prefixes reaching that level.
pub fn average_precision(preds: &[Detection], gts: &[BBox], iou_min: f64) -> f64 {
    if gts.is_empty() {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    let mut ranked: Vec<&Detection> = preds.iter().collect();
    ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    let points: Vec<(usize, f64)> = (1..=ranked.len())
        .map(|k| {
            let tp = true_positives_in_top(&ranked, k, gts, iou_min);
            (tp, tp as f64 / k as f64)
        })
        .collect();
    (1..=gts.len())
        .map(|level| {
            points
                .iter()
                .filter(|(tp, _)| *tp >= level)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / gts.len() as f64
}

/// Central differences of `f` at `x` with step `h` per coordinate.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b|_2 / max(|a|_2, |b|_2)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Grid-detector loss written out cell by cell. A ground truth belongs to
/// the cell holding its center and the anchor whose shape, centered on it,
/// overlaps best; when two claim one slot the earlier wins.
pub fn detector_loss(raw: &Tensor, gts: &[BBox], graph: &ModelGraph, coord: f64, noobj: f64) -> f64 {
    let head = graph.head();
    let [sh, sw] = head.grid;
    let (w, h) = (graph.input_shape().w as f64, graph.input_shape().h as f64);
    let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
    let owner = |row: usize, col: usize, a: usize| -> Option<(f64, f64, f64, f64)> {
        for gt in gts {
            let cx = (gt.x_min as f64 + gt.x_max as f64) / 2.0;
            let cy = (gt.y_min as f64 + gt.y_max as f64) / 2.0;
            let (gx, gy) = (cx / w * sw as f64, cy / h * sh as f64);
            if (gx.floor() as usize).min(sw - 1) != col || (gy.floor() as usize).min(sh - 1) != row {
                continue;
            }
            let (gw, gh) = ((gt.x_max - gt.x_min) as f64, (gt.y_max - gt.y_min) as f64);
            let shape_iou = |an: &[f32; 2]| {
                let (aw, ah) = (an[0] as f64 * w, an[1] as f64 * h);
                let i = gw.min(aw) * gh.min(ah);
                i / (gw * gh + aw * ah - i)
            };
            let mut best = 0;
            for (k, an) in head.anchors.iter().enumerate() {
                if shape_iou(an) > shape_iou(&head.anchors[best]) {
                    best = k;
                }
            }
            if best == a {
                let an = head.anchors[a];
                return Some((
                    gx - col as f64,
                    gy - row as f64,
                    (gw / (an[0] as f64 * w)).ln(),
                    (gh / (an[1] as f64 * h)).ln(),
                ));
            }
        }
        None
    };
    let b = head.boxes_per_cell;
    let mut loss = 0.0;
    for row in 0..sh {
        for col in 0..sw {
            for a in 0..b {
                let v = |k: usize| raw.get(row, col, a * 5 + k) as f64;
                let obj = sigmoid(v(4));
                match owner(row, col, a) {
                    Some((tx, ty, tw, th)) => {
                        loss += coord
                            * ((sigmoid(v(0)) - tx).powi(2)
                                + (sigmoid(v(1)) - ty).powi(2)
                                + (v(2) - tw).powi(2)
                                + (v(3) - th).powi(2));
                        loss += -obj.ln();
                    }
                    None => loss += noobj * -(1.0 - obj).ln(),
                }
            }
        }
    }
    loss
}

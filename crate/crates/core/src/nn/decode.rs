use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::graph::ModelGraph;
use crate::error::{bail, Result};
use crate::eval::{iou, BBox};
use crate::real::Real;
use crate::tensor::Tensor;

/// A decoded person detection in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub score_thresh: f32,
    pub iou_thresh: f32,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            score_thresh: 0.05,
            iou_thresh: 0.45,
        }
    }
}

/// Log-space size offsets are clamped here before exponentiation.
const MAX_LOG_SIZE: f32 = 8.0;

/// Decodes the raw head tensor and applies greedy NMS.
///
/// Per cell `(row, col)` and anchor: center is `(col + σ(tx)) / S_w · W`
/// (likewise for y), size is `anchor · exp(tw) · W`, score is `σ(tobj)`.
/// Boxes are clipped to the image and dropped when degenerate. Output is
/// sorted by descending score and no two kept boxes overlap with
/// `IoU >= iou_thresh`.
pub fn decode_and_nms(raw: &Tensor, graph: &ModelGraph, cfg: DecodeConfig) -> Result<Vec<Detection>> {
    let head = graph.head();
    let [sh, sw] = head.grid;
    let b = head.boxes_per_cell;
    let s = raw.shape();
    if (s.h, s.w, s.c) != (sh, sw, b * 5) {
        bail!(Input, "raw head shape {s:?} does not match grid {sh}x{sw}x{}", b * 5);
    }
    if raw.data().iter().any(|v| !v.is_finite()) {
        bail!(Numeric, "non-finite raw head value");
    }
    let img = graph.input_shape();
    let (w_img, h_img) = (img.w as f32, img.h as f32);
    let mut dets = Vec::new();
    for row in 0..sh {
        for col in 0..sw {
            let px = raw.pixel(row, col);
            for (a, anchor) in head.anchors.iter().enumerate() {
                let t = &px[a * 5..a * 5 + 5];
                let score = t[4].sigmoid();
                if !(score >= cfg.score_thresh) {
                    continue;
                }
                let cx = (col as f32 + t[0].sigmoid()) / sw as f32 * w_img;
                let cy = (row as f32 + t[1].sigmoid()) / sh as f32 * h_img;
                let bw = anchor[0] * t[2].min(MAX_LOG_SIZE).exp() * w_img;
                let bh = anchor[1] * t[3].min(MAX_LOG_SIZE).exp() * h_img;
                let bbox = BBox::raw(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)
                    .clip(w_img, h_img);
                if let Some(bbox) = bbox {
                    dets.push(Detection { bbox, score });
                }
            }
        }
    }
    Ok(nms(dets, cfg.iou_thresh))
}

/// Greedy non-maximum suppression. Ties in score keep input order.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f32) -> Vec<Detection> {
    // stable sort: equal scores keep decode order
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept
            .iter()
            .all(|k| iou(&k.bbox, &d.bbox) < iou_thresh as f64)
        {
            kept.push(d);
        }
    }
    kept
}

/// Runs the model on an image and returns decoded detections.
pub fn detect(graph: &ModelGraph, image: &Tensor, cfg: DecodeConfig) -> Result<Vec<Detection>> {
    let (raw, _) = super::forward_with_trace(graph, image)?;
    decode_and_nms(&raw, graph, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::person_mini;
    use crate::tensor::Shape;
    use alloc::vec;

    fn raw_with(f: impl Fn(usize, usize, usize) -> [f32; 5]) -> Tensor {
        let mut t = Tensor::zeros(Shape::new(12, 12, 10));
        for r in 0..12 {
            for c in 0..12 {
                for a in 0..2 {
                    let v = f(r, c, a);
                    for k in 0..5 {
                        t.set(r, c, a * 5 + k, v[k]);
                    }
                }
            }
        }
        t
    }

    #[test]
    fn all_negative_objectness_is_empty() {
        let g = person_mini(1);
        let raw = raw_with(|_, _, _| [0.0, 0.0, 0.0, 0.0, -1000.0]);
        assert!(decode_and_nms(&raw, &g, DecodeConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn decode_geometry() {
        let g = person_mini(1);
        // one box at cell (row 3, col 5), anchor 0, offsets σ(0)=0.5, tw=th=0
        let raw = raw_with(|r, c, a| {
            if (r, c, a) == (3, 5, 0) {
                [0.0, 0.0, 0.0, 0.0, 5.0]
            } else {
                [0.0, 0.0, 0.0, 0.0, -20.0]
            }
        });
        let d = decode_and_nms(&raw, &g, DecodeConfig::default()).unwrap();
        assert_eq!(d.len(), 1);
        let (cx, cy) = (5.5 / 12.0 * 96.0, 3.5 / 12.0 * 96.0);
        let (w, h) = (0.15 * 96.0, 0.35 * 96.0);
        let b = d[0].bbox;
        assert!((b.x_min - (cx - w / 2.0)).abs() < 1e-4);
        assert!((b.y_max - (cy + h / 2.0)).abs() < 1e-4);
        assert!((d[0].score - 5.0f32.sigmoid()).abs() < 1e-7);
    }

    #[test]
    fn identical_boxes_keep_highest() {
        let b = BBox::new(10.0, 10.0, 30.0, 50.0).unwrap();
        let kept = nms(
            vec![
                Detection { bbox: b, score: 0.8 },
                Detection { bbox: b, score: 0.9 },
            ],
            0.45,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn disjoint_boxes_all_kept_sorted() {
        let boxes = [
            (BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.3),
            (BBox::new(20.0, 0.0, 30.0, 10.0).unwrap(), 0.9),
            (BBox::new(5.0, 5.0, 15.0, 15.0).unwrap(), 0.6),
        ];
        // pairwise IoU, exhaustively
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(iou(&boxes[i].0, &boxes[j].0) < 0.45);
            }
        }
        let kept = nms(
            boxes.iter().map(|&(bbox, score)| Detection { bbox, score }).collect(),
            0.45,
        );
        let scores: Vec<f32> = kept.iter().map(|d| d.score).collect();
        assert_eq!(scores, [0.9, 0.6, 0.3]);
    }

    #[test]
    fn non_finite_raw_is_numeric_error() {
        let g = person_mini(1);
        let mut raw = raw_with(|_, _, _| [0.0; 5]);
        raw.data_mut()[7] = f32::INFINITY;
        assert!(matches!(
            decode_and_nms(&raw, &g, DecodeConfig::default()),
            Err(crate::Error::Numeric(_))
        ));
    }
}

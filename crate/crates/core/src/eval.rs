//! Detection quality: IoU, AP at an IoU threshold, relative change, and
//! corruption scores.
//!
//! Single class throughout, so mAP equals AP. AP uses all-point
//! interpolation of the precision-recall curve.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{detect, DecodeConfig, Detection, ModelGraph};
use crate::sample::Sample;

/// Axis-aligned box in pixel coordinates, `x_min < x_max`, `y_min < y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl BBox {
    /// Validated constructor: finite coordinates and positive area.
    pub fn new(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Result<Self> {
        let b = Self::raw(x_min, y_min, x_max, y_max);
        if !b.is_valid() {
            bail!(Argument, "degenerate box {b:?}");
        }
        Ok(b)
    }

    pub const fn raw(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> f32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        (self.width().max(0.0) as f64) * (self.height().max(0.0) as f64)
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    /// Intersection with `[0, w] x [0, h]`, `None` if nothing positive remains.
    pub fn clip(&self, w: f32, h: f32) -> Option<Self> {
        let b = Self::raw(
            self.x_min.max(0.0),
            self.y_min.max(0.0),
            self.x_max.min(w),
            self.y_max.min(h),
        );
        b.is_valid().then_some(b)
    }

    pub fn translate(&self, dx: f32, dy: f32) -> Self {
        Self::raw(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn within(&self, w: f32, h: f32) -> bool {
        self.is_valid() && self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= w && self.y_max <= h
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0) as f64;
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0) as f64;
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// [`iou`] that rejects zero-area or non-finite boxes.
pub fn iou_checked(a: &BBox, b: &BBox) -> Result<f64> {
    for bx in [a, b] {
        if !bx.is_valid() {
            bail!(Argument, "zero-area or non-finite box {bx:?}");
        }
    }
    Ok(iou(a, b))
}

/// Greedy matching of score-ordered predictions: each prediction takes the
/// unmatched ground truth with the highest IoU and is a true positive when
/// that IoU reaches `iou_min`.
fn match_greedy(order: &[usize], preds: &[Detection], gts: &[BBox], matched: &mut [bool], iou_min: f64) -> Vec<bool> {
    order
        .iter()
        .map(|&p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if matched[g] {
                    continue;
                }
                let v = iou(&preds[p].bbox, gt);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, v)) if v >= iou_min => {
                    matched[g] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// All-point interpolated AP from ranked TP flags.
///
/// Degenerate cases: no ground truth and no predictions is 1; no ground
/// truth with predictions, or ground truth without predictions, is 0.
pub fn ap_from_ranked(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if tp.is_empty() { 1.0 } else { 0.0 };
    }
    if tp.is_empty() {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp.len() + 2);
    let mut precision = Vec::with_capacity(tp.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    recall
        .windows(2)
        .zip(&precision[1..])
        .map(|(r, p)| (r[1] - r[0]) * p)
        .sum()
}

fn score_order(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

/// Per-image AP at `iou_min`.
pub fn average_precision(preds: &[Detection], gts: &[BBox], iou_min: f64) -> f64 {
    let order = score_order(preds);
    let mut matched = vec![false; gts.len()];
    let tp = match_greedy(&order, preds, gts, &mut matched, iou_min);
    ap_from_ranked(&tp, gts.len())
}

/// Dataset AP with predictions pooled across images.
///
/// Predictions of all images are ranked together by score (ties keep image
/// order, then prediction order); each is matched only against its own
/// image's ground truth.
pub fn pooled_average_precision(images: &[(Vec<Detection>, Vec<BBox>)], iou_min: f64) -> Result<f64> {
    if images.is_empty() {
        bail!(Argument, "dataset is empty");
    }
    let mut ranked: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, (p, _))| (0..p.len()).map(move |j| (i, j)))
        .collect();
    ranked.sort_by(|a, b| images[b.0].0[b.1].score.total_cmp(&images[a.0].0[a.1].score));
    let mut matched: Vec<Vec<bool>> = images.iter().map(|(_, g)| vec![false; g.len()]).collect();
    let tp: Vec<bool> = ranked
        .iter()
        .map(|&(i, j)| {
            let (preds, gts) = &images[i];
            match_greedy(&[j], preds, gts, &mut matched[i], iou_min)[0]
        })
        .collect();
    let n_gt = images.iter().map(|(_, g)| g.len()).sum();
    Ok(ap_from_ranked(&tp, n_gt))
}

/// mAP at IoU 0.5 of a model over a dataset, predictions pooled.
pub fn dataset_map<'a>(
    graph: &ModelGraph,
    samples: impl IntoIterator<Item = &'a Sample>,
    cfg: DecodeConfig,
) -> Result<f64> {
    let images = samples
        .into_iter()
        .map(|s| Ok((detect(graph, &s.image, cfg)?, s.boxes.clone())))
        .collect::<Result<Vec<_>>>()?;
    pooled_average_precision(&images, 0.5)
}

/// Percent change of `new` relative to `base`.
pub fn relative_change(new: f64, base: f64) -> Result<f64> {
    if !(base > 0.0) || !new.is_finite() {
        return Err(crate::Error::UndefinedChange(base));
    }
    Ok((new - base) / base * 100.0)
}

/// `mPC` is the mean mAP over the corruption grid, `rPC = mPC / mAP_clean`.
pub fn corruption_scores(grid_maps: &[f64], map_clean: f64) -> Result<(f64, f64)> {
    if grid_maps.is_empty() {
        bail!(Argument, "empty corruption grid");
    }
    if !(map_clean > 0.0) {
        bail!(Argument, "clean mAP must be positive, got {map_clean}");
    }
    let mpc = grid_maps.iter().sum::<f64>() / grid_maps.len() as f64;
    Ok((mpc, mpc / map_clean))
}

/// Headline scores of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub map_clean: f64,
    pub map_adv: f64,
    pub mpc: f64,
    pub rpc: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: BBox, score: f32) -> Detection {
        Detection { bbox: b, score }
    }

    fn bb(a: f32, b: f32, c: f32, d: f32) -> BBox {
        BBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou(&a, &bb(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-12);
        assert!(iou_checked(&a, &BBox::raw(1.0, 1.0, 1.0, 3.0)).is_err());
    }

    #[test]
    fn ap_examples() {
        let gt = bb(10.0, 10.0, 30.0, 50.0);
        assert_eq!(average_precision(&[det(gt, 0.7)], &[gt], 0.5), 1.0);
        let miss = bb(60.0, 60.0, 70.0, 70.0);
        assert_eq!(
            average_precision(&[det(miss, 0.9), det(gt, 0.3)], &[gt], 0.5),
            0.5
        );
        let gt2 = bb(50.0, 10.0, 70.0, 50.0);
        assert_eq!(average_precision(&[det(gt, 0.9)], &[gt, gt2], 0.5), 0.5);
    }

    #[test]
    fn ap_degenerate_rules() {
        let gt = bb(0.0, 0.0, 5.0, 5.0);
        assert_eq!(average_precision(&[], &[], 0.5), 1.0);
        assert_eq!(average_precision(&[det(gt, 0.5)], &[], 0.5), 0.0);
        assert_eq!(average_precision(&[], &[gt], 0.5), 0.0);
    }

    #[test]
    fn relative_change_examples() {
        assert!((relative_change(0.5, 0.4).unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(relative_change(0.4, 0.4).unwrap(), 0.0);
        let base = 43.45;
        assert!((relative_change(base * 1.2621, base).unwrap() - 26.21).abs() < 1e-9);
        assert!(matches!(relative_change(1.0, 0.0), Err(crate::Error::UndefinedChange(_))));
    }

    #[test]
    fn corruption_examples() {
        let (mpc, rpc) = corruption_scores(&[0.2, 0.4, 0.3, 0.1], 0.5).unwrap();
        assert!((mpc - 0.25).abs() < 1e-12);
        assert!((rpc - 0.5).abs() < 1e-12);
        let (_, rpc) = corruption_scores(&[0.5; 4], 0.5).unwrap();
        assert_eq!(rpc, 1.0);
        assert!(corruption_scores(&[], 0.5).is_err());
    }

    #[test]
    fn pooled_perfect_and_empty() {
        let gt = bb(0.0, 0.0, 5.0, 5.0);
        let imgs = vec![(vec![det(gt, 1.0)], vec![gt]), (vec![det(gt, 1.0)], vec![gt])];
        assert_eq!(pooled_average_precision(&imgs, 0.5).unwrap(), 1.0);
        let none = vec![(vec![], vec![gt]), (vec![], vec![gt])];
        assert_eq!(pooled_average_precision(&none, 0.5).unwrap(), 0.0);
        assert!(pooled_average_precision(&[], 0.5).is_err());
    }
}

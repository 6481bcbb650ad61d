//! Grid-detector loss, reverse-mode gradients, and SGD training.
//!
//! Loss for one image, with each ground truth assigned to the cell holding
//! its center and the anchor with the best shape IoU:
//!
//! ```text
//! λ_coord Σ_matched [(σ(tx)-x̂)² + (σ(ty)-ŷ)² + (tw-ŵ)² + (th-ĥ)²]
//!   + Σ_matched BCE(σ(tobj), 1) + λ_noobj Σ_unmatched BCE(σ(tobj), 0)
//! ```
//!
//! When two ground truths claim the same cell and anchor the first one wins.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::eval::BBox;
use crate::nn::{self, backward::backward, HeadSpec, ModelGraph};
use crate::real::Real;
use crate::rng;
use crate::sample::Sample;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub coord: f32,
    pub noobj: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            coord: 5.0,
            noobj: 0.5,
        }
    }
}

/// Initialisation used when retraining on the augmented set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainInit {
    /// Continue from the baseline weights.
    #[default]
    FineTune,
    /// Start again from the seeded initialisation.
    Scratch,
}

/// The fixed training recipe. Baseline and retrained models must share it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub lambda_coord: f32,
    pub lambda_noobj: f32,
    /// Multiplicative per-epoch learning-rate decay (1.0 keeps it constant).
    pub lr_decay: f32,
    pub weight_decay: f32,
    /// Global gradient-norm clip, disabled when `None`.
    pub max_grad_norm: Option<f32>,
    pub init_seed: u64,
    pub seed: u64,
    pub retrain_init: RetrainInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            lambda_coord: 5.0,
            lambda_noobj: 0.5,
            lr_decay: 1.0,
            weight_decay: 0.0,
            max_grad_norm: Some(10.0),
            init_seed: 1,
            seed: 1,
            retrain_init: RetrainInit::FineTune,
        }
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            coord: self.lambda_coord,
            noobj: self.lambda_noobj,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.lambda_coord, self.lambda_noobj, self.lr_decay];
        if self.batch_size == 0 || positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            bail!(Argument, "training hyperparameters must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            bail!(Argument, "momentum must be in [0, 1) and weight decay non-negative");
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            bail!(Argument, "max_grad_norm must be positive");
        }
        Ok(())
    }
}

/// Regression target for one cell / anchor slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    /// `(row * S_w + col) * B + anchor`.
    pub slot: usize,
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

/// Tolerance for boxes touching the image border.
const BORDER_EPS: f32 = 1e-3;

/// Assigns ground truths to `(cell, anchor)` slots.
pub fn assign_targets(gts: &[BBox], head: &HeadSpec, image: Shape) -> Result<Vec<Target>> {
    let [sh, sw] = head.grid;
    let (w, h) = (image.w as f32, image.h as f32);
    let mut taken = vec![false; sh * sw * head.boxes_per_cell];
    let mut out = Vec::new();
    for gt in gts {
        let inside = gt.is_valid()
            && gt.x_min >= -BORDER_EPS
            && gt.y_min >= -BORDER_EPS
            && gt.x_max <= w + BORDER_EPS
            && gt.y_max <= h + BORDER_EPS;
        if !inside {
            bail!(Argument, "ground truth {gt:?} outside the {w}x{h} image");
        }
        let (cx, cy) = gt.center();
        let gx = cx as f64 / w as f64 * sw as f64;
        let gy = cy as f64 / h as f64 * sh as f64;
        let col = (libm::floor(gx) as usize).min(sw - 1);
        let row = (libm::floor(gy) as usize).min(sh - 1);
        let (gw, gh) = (gt.width() as f64, gt.height() as f64);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (a, an) in head.anchors.iter().enumerate() {
            let (aw, ah) = (an[0] as f64 * w as f64, an[1] as f64 * h as f64);
            let inter = gw.min(aw) * gh.min(ah);
            let shape_iou = inter / (gw * gh + aw * ah - inter);
            if shape_iou > best.1 {
                best = (a, shape_iou);
            }
        }
        let a = best.0;
        let slot = (row * sw + col) * head.boxes_per_cell + a;
        if taken[slot] {
            continue;
        }
        taken[slot] = true;
        let an = head.anchors[a];
        out.push(Target {
            slot,
            tx: gx - col as f64,
            ty: gy - row as f64,
            tw: libm::log(gw / (an[0] as f64 * w as f64)),
            th: libm::log(gh / (an[1] as f64 * h as f64)),
        });
    }
    Ok(out)
}

/// Loss of one raw head output and its gradient w.r.t. that output.
pub(crate) fn head_loss<F: Real>(raw: &[F], targets: &[Target], slots: usize, lw: LossWeights) -> (F, Vec<F>) {
    let coord = F::from_f32(lw.coord);
    let noobj = F::from_f32(lw.noobj);
    let two = F::from_f32(2.0);
    let mut matched: Vec<Option<&Target>> = vec![None; slots];
    for t in targets {
        matched[t.slot] = Some(t);
    }
    let mut loss = F::ZERO;
    let mut grad = vec![F::ZERO; raw.len()];
    for (j, m) in matched.iter().enumerate() {
        let r = &raw[j * 5..j * 5 + 5];
        let g = &mut grad[j * 5..j * 5 + 5];
        match m {
            Some(t) => {
                for (k, target) in [(0, t.tx), (1, t.ty)] {
                    let s = r[k].sigmoid();
                    let e = s - F::from_f64(target);
                    loss += coord * e * e;
                    g[k] = two * coord * e * s * (F::ONE - s);
                }
                for (k, target) in [(2, t.tw), (3, t.th)] {
                    let e = r[k] - F::from_f64(target);
                    loss += coord * e * e;
                    g[k] = two * coord * e;
                }
                loss += (-r[4]).softplus();
                g[4] = r[4].sigmoid() - F::ONE;
            }
            None => {
                loss += noobj * r[4].softplus();
                g[4] = noobj * r[4].sigmoid();
            }
        }
    }
    (loss, grad)
}

/// Scalar loss of a raw head output against ground truth boxes.
pub fn detector_loss(raw: &Tensor, gts: &[BBox], graph: &ModelGraph, lw: LossWeights) -> Result<f64> {
    let head = graph.head();
    let out = graph.geoms().last().expect("non-empty").output;
    if raw.shape() != out {
        bail!(Input, "raw shape {:?} does not match head {:?}", raw.shape(), out);
    }
    let targets = assign_targets(gts, &head, graph.input_shape())?;
    let raw64: Vec<f64> = raw.data().iter().map(|&v| v as f64).collect();
    let (loss, _) = head_loss(&raw64, &targets, out.pixels() * head.boxes_per_cell, lw);
    if !loss.is_finite() {
        bail!(Numeric, "non-finite loss");
    }
    Ok(loss)
}

/// Mean batch loss and its exact gradient w.r.t. all weights, at the
/// precision of `F`.
pub fn batch_loss_grad<F: Real>(
    graph: &ModelGraph,
    weights: &[F],
    batch: &[&Sample],
    lw: LossWeights,
) -> Result<(F, Vec<F>)> {
    if batch.is_empty() {
        bail!(Argument, "empty batch");
    }
    if weights.len() != graph.param_count() {
        bail!(Argument, "expected {} weights, got {}", graph.param_count(), weights.len());
    }
    let head = graph.head();
    let slots = graph.geoms().last().expect("non-empty").output.pixels() * head.boxes_per_cell;
    let mut grad = vec![F::ZERO; weights.len()];
    let mut total = F::ZERO;
    for s in batch {
        if s.image.shape() != graph.input_shape() {
            bail!(Input, "sample {} has shape {:?}", s.id, s.image.shape());
        }
        let targets = assign_targets(&s.boxes, &head, graph.input_shape())?;
        let input = s.image.data().iter().map(|&v| F::from_f32(v)).collect();
        let pass = nn::run(graph, weights, input, true)?;
        let (loss, d_raw) = head_loss(&pass.output, &targets, slots, lw);
        if !loss.is_finite() {
            bail!(Numeric, "non-finite loss on sample {}", s.id);
        }
        total += loss;
        backward(graph, &pass, d_raw, &mut grad);
    }
    let inv = F::ONE / F::from_f64(batch.len() as f64);
    for g in &mut grad {
        *g *= inv;
    }
    Ok((total * inv, grad))
}

/// 32-bit gradients of the mean batch loss at the graph's weights.
pub fn backward_gradients(graph: &ModelGraph, batch: &[&Sample], lw: LossWeights) -> Result<(f64, Vec<f32>)> {
    let (l, g) = batch_loss_grad::<f32>(graph, graph.weights(), batch, lw)?;
    Ok((l as f64, g))
}

/// Same as [`backward_gradients`] with every operation in 64 bits.
pub fn backward_gradients_f64(graph: &ModelGraph, batch: &[&Sample], lw: LossWeights) -> Result<(f64, Vec<f64>)> {
    let w: Vec<f64> = graph.weights().iter().map(|&v| v as f64).collect();
    batch_loss_grad::<f64>(graph, &w, batch, lw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_map: Option<f64>,
}

/// SGD with momentum over seeded per-epoch shuffles.
///
/// `on_epoch` runs after every epoch with the current model and may return
/// a validation mAP to log. Deterministic given the initial weights, the
/// samples and the config.
pub fn train(
    graph: &ModelGraph,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ModelGraph) -> Result<Option<f64>>,
) -> Result<(ModelGraph, Vec<EpochLog>)> {
    cfg.validate()?;
    if samples.is_empty() {
        bail!(Argument, "training set is empty");
    }
    let lw = cfg.loss_weights();
    let mut weights = graph.weights().to_vec();
    let mut velocity = vec![0.0f32; weights.len()];
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut model = graph.clone();
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[0x7a41, epoch as u64]));
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, mut grad) = match batch_loss_grad::<f32>(&model, &weights, &batch, lw) {
                Ok(v) => v,
                Err(crate::Error::Numeric(m)) => {
                    bail!(Training, "epoch {epoch}: {m}")
                }
                Err(e) => return Err(e),
            };
            loss_sum += loss as f64 * batch.len() as f64;
            if let Some(max) = cfg.max_grad_norm {
                let norm = libm::sqrt(grad.iter().map(|g| (*g as f64) * (*g as f64)).sum::<f64>());
                if norm > max as f64 {
                    let s = (max as f64 / norm) as f32;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            for ((w, v), g) in weights.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g + cfg.weight_decay * *w;
                *w -= lr * *v;
            }
            if weights.iter().any(|w| !w.is_finite()) {
                bail!(Training, "weights became non-finite in epoch {epoch}");
            }
        }
        model = model.with_weights(weights.clone())?;
        let loss = loss_sum / samples.len() as f64;
        if !loss.is_finite() {
            bail!(Training, "non-finite loss in epoch {epoch}");
        }
        let val_map = on_epoch(epoch, &model)?;
        logs.push(EpochLog {
            epoch,
            loss,
            val_map,
        });
        lr *= cfg.lr_decay;
    }
    Ok((model, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{person_mini, LayerSpec};

    fn head() -> HeadSpec {
        person_mini(1).head()
    }

    #[test]
    fn no_gt_negative_objectness_loss_vanishes() {
        let g = person_mini(1);
        let mut raw = Tensor::zeros(Shape::new(12, 12, 10));
        for (i, v) in raw.data_mut().iter_mut().enumerate() {
            if i % 5 == 4 {
                *v = -1000.0;
            }
        }
        let l = detector_loss(&raw, &[], &g, LossWeights::default()).unwrap();
        assert!(l >= 0.0 && l < 1e-12, "{l}");
    }

    #[test]
    fn perfect_prediction_has_no_coordinate_loss() {
        let g = person_mini(1);
        let gt = BBox::new(30.0, 20.0, 44.0, 54.0).unwrap();
        let t = assign_targets(&[gt], &head(), g.input_shape()).unwrap()[0];
        let logit = |p: f64| libm::log(p / (1.0 - p)) as f32;
        let mut raw = Tensor::zeros(Shape::new(12, 12, 10));
        for (i, v) in raw.data_mut().iter_mut().enumerate() {
            if i % 5 == 4 {
                *v = -1000.0;
            }
        }
        let base = t.slot * 5;
        let d = raw.data_mut();
        d[base] = logit(t.tx);
        d[base + 1] = logit(t.ty);
        d[base + 2] = t.tw as f32;
        d[base + 3] = t.th as f32;
        d[base + 4] = 1000.0;
        let l = detector_loss(&raw, &[gt], &g, LossWeights::default()).unwrap();
        assert!(l < 1e-6, "{l}");
    }

    #[test]
    fn assignment_picks_center_cell_and_best_anchor() {
        let g = person_mini(1);
        // tall 14x34 box centred at (37, 37): cell (4, 4), small anchor
        let gt = BBox::new(30.0, 20.0, 44.0, 54.0).unwrap();
        let t = assign_targets(&[gt], &head(), g.input_shape()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].slot, (4 * 12 + 4) * 2);
        assert!((t[0].tx - (37.0 / 8.0 - 4.0)).abs() < 1e-9);
        // big box goes to the large anchor
        let big = BBox::new(10.0, 5.0, 50.0, 85.0).unwrap();
        let t = assign_targets(&[big], &head(), g.input_shape()).unwrap();
        assert_eq!(t[0].slot % 2, 1);
        // outside the image
        let out = BBox::new(90.0, 10.0, 100.0, 20.0).unwrap();
        assert!(assign_targets(&[out], &head(), g.input_shape()).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let g = person_mini(2);
        let s = Sample::new("a", Tensor::zeros(g.input_shape()), vec![]);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, logs) = train(&g, &[s], &cfg, |_, _| Ok(None)).unwrap();
        assert_eq!(out, g);
        assert!(logs.is_empty());
    }

    #[test]
    fn scaled_loss_scales_gradient() {
        let layers = vec![
            LayerSpec::conv(3, 3),
            LayerSpec::leaky(),
            LayerSpec::conv(1, 5),
            LayerSpec::DetectHead {
                grid: [6, 6],
                anchors: vec![[0.3, 0.6]],
                boxes_per_cell: 1,
            },
        ];
        let mut g = ModelGraph::zeroed(Shape::new(6, 6, 3), layers).unwrap();
        g.init_he(4, -1.0);
        let img = Tensor::filled(Shape::new(6, 6, 3), 0.3);
        let s = Sample::new("x", img, vec![BBox::new(1.0, 1.0, 3.0, 5.0).unwrap()]);
        let lw = LossWeights::default();
        let (_, g1) = backward_gradients_f64(&g, &[&s], lw).unwrap();
        let lw2 = LossWeights {
            coord: lw.coord * 3.0,
            noobj: lw.noobj * 3.0,
        };
        // objectness BCE of matched slots is not weighted, so compare a
        // model with no ground truth where every term is scaled
        let s0 = Sample::new("y", s.image.clone(), vec![]);
        let (_, a) = backward_gradients_f64(&g, &[&s0], lw).unwrap();
        let (_, b) = backward_gradients_f64(&g, &[&s0], lw2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((3.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
        assert!(g1.iter().any(|v| *v != 0.0));
    }
}

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::acceptance::{acceptance_test, AcceptanceParams};
use super::enhance::{apply_enhancement, Enhancement};
use super::filter::{apply_filter, Filter};
use super::geometric::{apply_geometric, scaled_len, GeometricParams};
use crate::error::{bail, Result};
use crate::eval::BBox;
use crate::rng;
use crate::tensor::Tensor;

/// Sampling ranges of the natural mutation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaturalParams {
    pub acceptance: AcceptanceParams,
    /// Extra attempts after a rejected first attempt.
    pub max_retries: u32,
    /// Enhancement factors are uniform in `[lo, hi]`.
    pub factor_range: [f32; 2],
    /// Independent inclusion probability of each filter.
    pub filter_prob: f64,
    pub flip_prob: f64,
    /// `dx`, `dy` uniform in `-max_shift..=max_shift`.
    pub max_shift: i32,
    pub scale_range: [f32; 2],
}

impl Default for NaturalParams {
    fn default() -> Self {
        Self {
            acceptance: AcceptanceParams::default(),
            max_retries: 3,
            factor_range: [0.5, 1.0],
            filter_prob: 0.5,
            flip_prob: 0.5,
            max_shift: 2,
            scale_range: [0.5, 1.0],
        }
    }
}

impl NaturalParams {
    /// Parameters under which the pipeline returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            factor_range: [1.0, 1.0],
            filter_prob: 0.0,
            flip_prob: 0.0,
            max_shift: 0,
            scale_range: [1.0, 1.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.acceptance.validate()?;
        let [flo, fhi] = self.factor_range;
        if !(0.0 <= flo && flo <= fhi && fhi <= 1.0) {
            bail!(Argument, "factor range {:?} not within [0, 1]", self.factor_range);
        }
        let [slo, shi] = self.scale_range;
        if !(0.5 <= slo && slo <= shi && shi <= 1.0) {
            bail!(Argument, "scale range {:?} not within [0.5, 1]", self.scale_range);
        }
        if !(0..=2).contains(&self.max_shift) {
            bail!(Argument, "max shift {} outside 0..=2", self.max_shift);
        }
        for p in [self.filter_prob, self.flip_prob] {
            if !(0.0..=1.0).contains(&p) {
                bail!(Argument, "probability {p} outside [0, 1]");
            }
        }
        Ok(())
    }
}

/// Everything needed to replay one natural mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub enhancements: Vec<(Enhancement, f32)>,
    pub filters: Vec<Filter>,
    pub flip: bool,
    pub dx: i32,
    pub dy: i32,
    pub scale: f32,
    /// Top-left `(x, y)` of the scaled content.
    pub offset: (usize, usize),
    pub accepted: bool,
    /// Rejected attempts before the accepted one.
    pub retries: u32,
    /// Seed of the stream the attempts were drawn from.
    pub seed: u64,
}

impl MutationRecord {
    pub fn geometric(&self) -> GeometricParams {
        GeometricParams {
            flip: self.flip,
            dx: self.dx,
            dy: self.dy,
            scale: self.scale,
            offset: self.offset,
        }
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f32; 2]) -> f32 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Textural ops applied in order; shared by mutation and replay.
fn textural(image: &Tensor, enh: &[(Enhancement, f32)], filters: &[Filter]) -> Result<Tensor> {
    let mut out = image.clone();
    for &(op, f) in enh {
        out = apply_enhancement(&out, op, f)?;
    }
    for &f in filters {
        out = apply_filter(&out, f);
    }
    Ok(out)
}

/// Runs the natural pipeline: enhancements, filters, flip and translation
/// draws, the acceptance test on the textural result, then scale and place.
///
/// Attempt `r` draws from `stream(seed, [r])`, so each retry is independent
/// of how many draws earlier attempts made. Returns `None` once all
/// `max_retries + 1` attempts are rejected.
pub fn mutate_natural(
    image: &Tensor,
    boxes: &[BBox],
    reference: &Tensor,
    seed: u64,
    params: &NaturalParams,
) -> Result<Option<(Tensor, Vec<BBox>, MutationRecord)>> {
    params.validate()?;
    if image.shape() != reference.shape() {
        bail!(Argument, "image {:?} vs reference {:?}", image.shape(), reference.shape());
    }
    let s = image.shape();
    for retry in 0..=params.max_retries {
        let mut rng = rng::stream(seed, &[retry as u64]);
        let mask: u8 = rng.random_range(1..16);
        let mut enhancements = Vec::new();
        for (i, op) in Enhancement::ALL.into_iter().enumerate() {
            if mask & (1 << i) != 0 {
                enhancements.push((op, uniform(&mut rng, params.factor_range)));
            }
        }
        let filters: Vec<Filter> = Filter::ALL
            .into_iter()
            .filter(|_| rng.random_bool(params.filter_prob))
            .collect();
        let flip = rng.random_bool(params.flip_prob);
        let m = params.max_shift;
        let dx = rng.random_range(-m..=m);
        let dy = rng.random_range(-m..=m);

        let candidate = textural(image, &enhancements, &filters)?;
        if !acceptance_test(reference, &candidate, &params.acceptance)? {
            continue;
        }

        let scale = uniform(&mut rng, params.scale_range);
        let free_x = s.w - scaled_len(s.w, scale);
        let free_y = s.h - scaled_len(s.h, scale);
        let offset = (rng.random_range(0..=free_x), rng.random_range(0..=free_y));
        let record = MutationRecord {
            enhancements,
            filters,
            flip,
            dx,
            dy,
            scale,
            offset,
            accepted: true,
            retries: retry,
            seed,
        };
        let (out, out_boxes) = apply_geometric(&candidate, boxes, &record.geometric())?;
        return Ok(Some((out, out_boxes, record)));
    }
    Ok(None)
}

/// Re-applies a recorded mutation.
pub fn replay(image: &Tensor, boxes: &[BBox], record: &MutationRecord) -> Result<(Tensor, Vec<BBox>)> {
    let t = textural(image, &record.enhancements, &record.filters)?;
    apply_geometric(&t, boxes, &record.geometric())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn img() -> Tensor {
        let s = Shape::new(24, 24, 3);
        let d = (0..s.len()).map(|i| ((i * 29) % 83) as f32 / 82.0).collect();
        Tensor::from_vec(s, d).unwrap()
    }

    #[test]
    fn identity_params_return_input() {
        let x = img();
        let b = [BBox::raw(2.0, 3.0, 10.0, 20.0)];
        for seed in 0..5 {
            let (o, ob, r) = mutate_natural(&x, &b, &x, seed, &NaturalParams::identity())
                .unwrap()
                .unwrap();
            assert_eq!(o, x);
            assert_eq!(ob, b);
            assert!(r.accepted && r.retries == 0 && r.filters.is_empty());
        }
    }

    #[test]
    fn inverted_reference_exhausts_retries() {
        let s = Shape::new(24, 24, 3);
        let mut x = Tensor::zeros(s);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = ((i / 3 + i / 72) % 2) as f32;
        }
        let inv = x.map(|v| 1.0 - v);
        assert!(mutate_natural(&x, &[], &inv, 7, &NaturalParams::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn deterministic_and_replayable() {
        let x = img();
        let b = [BBox::raw(2.0, 3.0, 10.0, 20.0)];
        let p = NaturalParams {
            acceptance: AcceptanceParams { alpha: 0.5, beta: 1.0 },
            ..NaturalParams::default()
        };
        let a = mutate_natural(&x, &b, &x, 42, &p).unwrap().unwrap();
        let c = mutate_natural(&x, &b, &x, 42, &p).unwrap().unwrap();
        assert_eq!(a.2, c.2);
        assert_eq!(a.0, c.0);
        let (r, rb) = replay(&x, &b, &a.2).unwrap();
        assert_eq!(r, a.0);
        assert_eq!(rb, a.1);
        let rec = &a.2;
        assert!(rec.enhancements.iter().all(|&(_, f)| (0.5..=1.0).contains(&f)));
        assert!(rec.dx.abs() <= 2 && rec.dy.abs() <= 2);
        assert!((0.5..=1.0).contains(&rec.scale));
    }

    #[test]
    fn rejects_bad_params() {
        let x = img();
        let p = NaturalParams { max_shift: 3, ..NaturalParams::default() };
        assert!(mutate_natural(&x, &[], &x, 1, &p).is_err());
        let p = NaturalParams { factor_range: [0.5, 1.2], ..NaturalParams::default() };
        assert!(mutate_natural(&x, &[], &x, 1, &p).is_err());
    }
}

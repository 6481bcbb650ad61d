use serde::{Deserialize, Serialize};

use super::filter::{convolve3x3_clamped, Filter};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Enhancement operators that blend the image with a degenerate version
/// of itself: `out = (1 - f) * degenerate + f * image`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enhancement {
    /// Degenerate: black.
    Brightness,
    /// Degenerate: uniform grey at the mean luminance.
    Contrast,
    /// Degenerate: per-pixel grayscale.
    Color,
    /// Degenerate: 3x3 smoothed image.
    Sharpness,
}

impl Enhancement {
    pub const ALL: [Self; 4] = [Self::Brightness, Self::Contrast, Self::Color, Self::Sharpness];
}

/// ITU-R 601 luma of an RGB pixel; mean of the channels otherwise.
pub fn luminance(px: &[f32]) -> f32 {
    if px.len() == 3 {
        0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
    } else {
        px.iter().sum::<f32>() / px.len() as f32
    }
}

fn blend(degenerate: &Tensor, img: &Tensor, factor: f32) -> Tensor {
    let mut out = img.clone();
    for (o, &d) in out.data_mut().iter_mut().zip(degenerate.data()) {
        *o = ((1.0 - factor) * d + factor * *o).clamp(0.0, 1.0);
    }
    out
}

pub fn apply_enhancement(img: &Tensor, op: Enhancement, factor: f32) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&factor) {
        bail!(Argument, "enhancement factor {factor} outside [0, 1]");
    }
    let s = img.shape();
    let degenerate = match op {
        Enhancement::Brightness => Tensor::zeros(s),
        Enhancement::Contrast => {
            let n = s.pixels().max(1) as f64;
            let mean = img
                .data()
                .chunks_exact(s.c)
                .map(|p| luminance(p) as f64)
                .sum::<f64>()
                / n;
            Tensor::filled(s, mean as f32)
        }
        Enhancement::Color => {
            let mut g = img.clone();
            for px in g.data_mut().chunks_exact_mut(s.c) {
                let l = luminance(px);
                px.iter_mut().for_each(|v| *v = l);
            }
            g
        }
        Enhancement::Sharpness => {
            let (k, d) = Filter::Smooth.kernel();
            convolve3x3_clamped(img, &k, d)
        }
    };
    Ok(blend(&degenerate, img, factor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn img() -> Tensor {
        let s = Shape::new(7, 6, 3);
        let d = (0..s.len()).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        Tensor::from_vec(s, d).unwrap()
    }

    #[test]
    fn factor_one_is_identity() {
        let x = img();
        for op in Enhancement::ALL {
            assert_eq!(apply_enhancement(&x, op, 1.0).unwrap(), x, "{op:?}");
        }
    }

    #[test]
    fn factor_zero_degenerates() {
        let x = img();
        let b = apply_enhancement(&x, Enhancement::Brightness, 0.0).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
        let c = apply_enhancement(&x, Enhancement::Contrast, 0.0).unwrap();
        let mean = x.data().chunks_exact(3).map(|p| luminance(p) as f64).sum::<f64>() / 42.0;
        assert!(c.data().iter().all(|&v| (v as f64 - mean).abs() < 1e-6));
        let g = apply_enhancement(&x, Enhancement::Color, 0.0).unwrap();
        assert!(g.data().chunks_exact(3).all(|p| p[0] == p[1] && p[1] == p[2]));
    }

    #[test]
    fn factor_out_of_range() {
        assert!(apply_enhancement(&img(), Enhancement::Color, 1.5).is_err());
        assert!(apply_enhancement(&img(), Enhancement::Color, -0.1).is_err());
    }
}

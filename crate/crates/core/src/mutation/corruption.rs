use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::{self, normal};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    GaussianBlur,
    DefocusBlur,
    BrightnessShift,
    ContrastShift,
    Pixelate,
}

impl Corruption {
    pub const ALL: [Self; 8] = [
        Self::GaussianNoise,
        Self::ShotNoise,
        Self::ImpulseNoise,
        Self::GaussianBlur,
        Self::DefocusBlur,
        Self::BrightnessShift,
        Self::ContrastShift,
        Self::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaussianNoise => "gaussian_noise",
            Self::ShotNoise => "shot_noise",
            Self::ImpulseNoise => "impulse_noise",
            Self::GaussianBlur => "gaussian_blur",
            Self::DefocusBlur => "defocus_blur",
            Self::BrightnessShift => "brightness_shift",
            Self::ContrastShift => "contrast_shift",
            Self::Pixelate => "pixelate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match Self::ALL.into_iter().find(|k| k.name() == s) {
            Some(k) => Ok(k),
            None => bail!(Argument, "unknown corruption {s:?}"),
        }
    }
}

/// Per-severity parameter of every operator (severity 1 first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionTable {
    /// Noise standard deviation.
    pub gaussian_noise: [f32; 5],
    /// Photon count per unit intensity; lower is noisier.
    pub shot_noise: [f32; 5],
    /// Fraction of channel values replaced by 0 or 1.
    pub impulse_noise: [f32; 5],
    /// Blur standard deviation in pixels.
    pub gaussian_blur: [f32; 5],
    /// Disk radius in pixels.
    pub defocus_blur: [f32; 5],
    /// Added intensity.
    pub brightness_shift: [f32; 5],
    /// Contrast factor around the channel mean; lower is stronger.
    pub contrast_shift: [f32; 5],
    /// Block side in pixels.
    pub pixelate: [f32; 5],
}

impl Default for CorruptionTable {
    fn default() -> Self {
        Self {
            gaussian_noise: [0.04, 0.08, 0.12, 0.18, 0.26],
            shot_noise: [60.0, 25.0, 12.0, 5.0, 3.0],
            impulse_noise: [0.03, 0.06, 0.09, 0.17, 0.27],
            gaussian_blur: [0.5, 1.0, 1.5, 2.0, 3.0],
            defocus_blur: [1.0, 1.5, 2.0, 3.0, 4.0],
            brightness_shift: [0.1, 0.2, 0.3, 0.4, 0.5],
            contrast_shift: [0.4, 0.3, 0.2, 0.1, 0.05],
            pixelate: [2.0, 3.0, 4.0, 6.0, 8.0],
        }
    }
}

impl CorruptionTable {
    pub fn param(&self, kind: Corruption, severity: u8) -> Result<f32> {
        if !(1..=5).contains(&severity) {
            bail!(Argument, "severity {severity} outside 1..=5");
        }
        let row = match kind {
            Corruption::GaussianNoise => &self.gaussian_noise,
            Corruption::ShotNoise => &self.shot_noise,
            Corruption::ImpulseNoise => &self.impulse_noise,
            Corruption::GaussianBlur => &self.gaussian_blur,
            Corruption::DefocusBlur => &self.defocus_blur,
            Corruption::BrightnessShift => &self.brightness_shift,
            Corruption::ContrastShift => &self.contrast_shift,
            Corruption::Pixelate => &self.pixelate,
        };
        let p = row[severity as usize - 1];
        if !p.is_finite() {
            bail!(Argument, "non-finite parameter for {}", kind.name());
        }
        Ok(p)
    }

    /// Deterministic in `(image, kind, severity, seed)`.
    pub fn apply(&self, img: &Tensor, kind: Corruption, severity: u8, seed: u64) -> Result<Tensor> {
        let p = self.param(kind, severity)?;
        let mut rng = rng::stream(seed, &[kind as u64, severity as u64]);
        let out = match kind {
            Corruption::GaussianNoise => img.map(|v| v + p * normal(&mut rng) as f32),
            Corruption::ShotNoise => {
                if p <= 0.0 {
                    bail!(Argument, "shot noise rate must be positive");
                }
                img.map(|v| poisson(&mut rng, (v.clamp(0.0, 1.0) * p) as f64) as f32 / p)
            }
            Corruption::ImpulseNoise => img.map(|v| {
                if rng.random::<f32>() < p {
                    if rng.random_bool(0.5) { 1.0 } else { 0.0 }
                } else {
                    v
                }
            }),
            Corruption::GaussianBlur => gaussian_blur(img, p),
            Corruption::DefocusBlur => disk_blur(img, p),
            Corruption::BrightnessShift => img.map(|v| v + p),
            Corruption::ContrastShift => {
                let means = img.channel_means();
                let mut out = img.clone();
                let c = img.shape().c;
                for px in out.data_mut().chunks_exact_mut(c) {
                    for (v, &m) in px.iter_mut().zip(&means) {
                        *v = ((*v as f64 - m) * p as f64 + m) as f32;
                    }
                }
                out
            }
            Corruption::Pixelate => pixelate(img, (p as usize).max(1)),
        };
        Ok(out.clamp01())
    }
}

pub fn apply_corruption(img: &Tensor, kind: Corruption, severity: u8, seed: u64) -> Result<Tensor> {
    CorruptionTable::default().apply(img, kind, severity, seed)
}

/// Knuth's multiplication method; rates here stay below ~60.
fn poisson(rng: &mut impl Rng, lambda: f64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    let limit = libm::exp(-lambda);
    let mut k = 0;
    let mut prod: f64 = rng.random();
    while prod > limit {
        k += 1;
        prod *= rng.random::<f64>();
    }
    k
}

/// Normalized weighted sum over integer offsets with clamp-to-edge borders.
fn stencil(img: &Tensor, taps: &[(isize, isize, f32)]) -> Tensor {
    let s = img.shape();
    let total: f32 = taps.iter().map(|t| t.2).sum();
    let mut out = Tensor::zeros(s);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut acc = vec![0.0f32; s.c];
    for y in 0..s.h {
        for x in 0..s.w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(dy, dx, w) in taps {
                let px = img.pixel(clamp(y as isize + dy, s.h), clamp(x as isize + dx, s.w));
                for (a, &v) in acc.iter_mut().zip(px) {
                    *a += w * v;
                }
            }
            for (c, a) in acc.iter().enumerate() {
                out.set(y, x, c, a / total);
            }
        }
    }
    out
}

fn gaussian_blur(img: &Tensor, sigma: f32) -> Tensor {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = libm::ceilf(3.0 * sigma) as isize;
    let w = |d: isize| libm::expf(-((d * d) as f32) / (2.0 * sigma * sigma));
    let horiz: Vec<_> = (-r..=r).map(|d| (0, d, w(d))).collect();
    let vert: Vec<_> = (-r..=r).map(|d| (d, 0, w(d))).collect();
    stencil(&stencil(img, &horiz), &vert)
}

fn disk_blur(img: &Tensor, radius: f32) -> Tensor {
    let r = libm::floorf(radius) as isize;
    let taps: Vec<_> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| ((dy * dy + dx * dx) as f32) <= radius * radius)
        .map(|(dy, dx)| (dy, dx, 1.0))
        .collect();
    stencil(img, &taps)
}

/// Replaces each `block x block` tile (partial at the borders) by its mean.
fn pixelate(img: &Tensor, block: usize) -> Tensor {
    let s = img.shape();
    let mut out = Tensor::zeros(s);
    let mut sum = vec![0.0f64; s.c];
    for by in (0..s.h).step_by(block) {
        for bx in (0..s.w).step_by(block) {
            let (ey, ex) = ((by + block).min(s.h), (bx + block).min(s.w));
            sum.iter_mut().for_each(|v| *v = 0.0);
            for y in by..ey {
                for x in bx..ex {
                    for (a, &v) in sum.iter_mut().zip(img.pixel(y, x)) {
                        *a += v as f64;
                    }
                }
            }
            let n = ((ey - by) * (ex - bx)) as f64;
            for y in by..ey {
                for x in bx..ex {
                    for (c, a) in sum.iter().enumerate() {
                        out.set(y, x, c, (a / n) as f32);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn img() -> Tensor {
        let s = Shape::new(20, 20, 3);
        let d = (0..s.len()).map(|i| ((i * 31) % 89) as f32 / 88.0).collect();
        Tensor::from_vec(s, d).unwrap()
    }

    #[test]
    fn deterministic_and_in_range() {
        let x = img();
        for k in Corruption::ALL {
            for sev in 1..=5 {
                let a = apply_corruption(&x, k, sev, 9).unwrap();
                let b = apply_corruption(&x, k, sev, 9).unwrap();
                assert_eq!(a, b, "{k:?}");
                assert_eq!(a.shape(), x.shape());
                assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn bad_severity() {
        assert!(apply_corruption(&img(), Corruption::Pixelate, 0, 1).is_err());
        assert!(apply_corruption(&img(), Corruption::Pixelate, 6, 1).is_err());
        assert!(Corruption::parse("fog").is_err());
        assert_eq!(Corruption::parse("shot_noise").unwrap(), Corruption::ShotNoise);
    }

    #[test]
    fn gaussian_noise_on_zero_image() {
        // E[max(0, N(0, s))] = s / sqrt(2 pi) ~= 0.01596 for s = 0.04.
        let z = Tensor::zeros(Shape::new(96, 96, 3));
        let out = apply_corruption(&z, Corruption::GaussianNoise, 1, 5).unwrap();
        let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / out.data().len() as f64;
        assert!((0.01..=0.03).contains(&mean), "{mean}");
        let expect = 0.04 / libm::sqrt(2.0 * core::f64::consts::PI);
        assert!((mean - expect).abs() < 1e-3, "{mean} vs {expect}");
    }

    #[test]
    fn pixelate_blocks_constant() {
        let out = apply_corruption(&img(), Corruption::Pixelate, 5, 0).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                assert_eq!(out.pixel(y, x), out.pixel(y / 8 * 8, x / 8 * 8));
            }
        }
    }

    #[test]
    fn constant_image_invariants() {
        let c = Tensor::filled(Shape::new(10, 10, 3), 0.3);
        for sev in 1..=5 {
            for k in [
                Corruption::ContrastShift,
                Corruption::GaussianBlur,
                Corruption::DefocusBlur,
                Corruption::Pixelate,
            ] {
                let out = apply_corruption(&c, k, sev, 3).unwrap();
                for (a, b) in out.data().iter().zip(c.data()) {
                    assert!((a - b).abs() < 1e-6, "{k:?} {sev}");
                }
            }
        }
    }

    #[test]
    fn shot_noise_is_unbiased() {
        let c = Tensor::filled(Shape::new(64, 64, 3), 0.5);
        let out = apply_corruption(&c, Corruption::ShotNoise, 3, 1).unwrap();
        let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / out.data().len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }
}

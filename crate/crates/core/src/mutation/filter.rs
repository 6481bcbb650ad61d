use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// 3x3 filters with the conventional imaging-toolkit kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    Detail,
    EdgeEnhance,
    Smooth,
    Sharpen,
}

impl Filter {
    pub const ALL: [Self; 4] = [Self::Detail, Self::EdgeEnhance, Self::Smooth, Self::Sharpen];

    /// Kernel and divisor; every kernel sums to its divisor.
    pub fn kernel(self) -> ([[f32; 3]; 3], f32) {
        match self {
            Self::Smooth => ([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]], 13.0),
            Self::Sharpen => ([[-2.0, -2.0, -2.0], [-2.0, 32.0, -2.0], [-2.0, -2.0, -2.0]], 16.0),
            Self::Detail => ([[0.0, -1.0, 0.0], [-1.0, 10.0, -1.0], [0.0, -1.0, 0.0]], 6.0),
            Self::EdgeEnhance => ([[-1.0, -1.0, -1.0], [-1.0, 10.0, -1.0], [-1.0, -1.0, -1.0]], 2.0),
        }
    }
}

/// Per-channel 3x3 convolution with clamp-to-edge borders, clamped to [0, 1].
pub fn convolve3x3_clamped(img: &Tensor, kernel: &[[f32; 3]; 3], divisor: f32) -> Tensor {
    let s = img.shape();
    let mut out = Tensor::zeros(s);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..s.c {
                let mut acc = 0.0f32;
                for (ky, row) in kernel.iter().enumerate() {
                    let iy = clamp(y as isize + ky as isize - 1, s.h);
                    for (kx, &k) in row.iter().enumerate() {
                        if k == 0.0 {
                            continue;
                        }
                        let ix = clamp(x as isize + kx as isize - 1, s.w);
                        acc += k * img.get(iy, ix, c);
                    }
                }
                out.set(y, x, c, (acc / divisor).clamp(0.0, 1.0));
            }
        }
    }
    out
}

pub fn apply_filter(img: &Tensor, op: Filter) -> Tensor {
    let (k, d) = op.kernel();
    convolve3x3_clamped(img, &k, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn kernels_are_normalized() {
        for f in Filter::ALL {
            let (k, d) = f.kernel();
            let s: f32 = k.iter().flatten().sum();
            assert_eq!(s, d, "{f:?}");
        }
    }

    #[test]
    fn constant_image_fixed_point() {
        let img = Tensor::filled(Shape::new(6, 5, 3), 0.4);
        for f in [Filter::Smooth, Filter::Sharpen, Filter::Detail, Filter::EdgeEnhance] {
            let out = apply_filter(&img, f);
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-6, "{f:?}");
            }
        }
    }

    #[test]
    fn edge_enhance_steepens_step() {
        // Step 0.4 -> 0.5 along x, edge at x = 4.
        let s = Shape::new(5, 8, 1);
        let mut img = Tensor::zeros(s);
        for y in 0..5 {
            for x in 0..8 {
                img.set(y, x, 0, if x < 4 { 0.4 } else { 0.5 });
            }
        }
        let out = apply_filter(&img, Filter::EdgeEnhance);
        // left: (10*0.4 - 5*0.4 - 3*0.5) / 2 = 0.25
        // right: (10*0.5 - 5*0.5 - 3*0.4) / 2 = 0.65
        assert!((out.get(2, 3, 0) - 0.25).abs() < 1e-6);
        assert!((out.get(2, 4, 0) - 0.65).abs() < 1e-6);
        assert!((out.get(2, 0, 0) - 0.4).abs() < 1e-6);
    }
}

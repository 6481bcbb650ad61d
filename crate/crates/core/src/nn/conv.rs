//! Convolution kernels over HWC buffers via im2col.
//!
//! The packed weight matrix is `[(k_y, k_x, in)][out]`, matching the column
//! layout of an HWC patch, so both the forward product and the weight
//! gradient are rank-1 updates over a contiguous output-channel row.

use alloc::vec;
use alloc::vec::Vec;

use super::layer::Padding;
use crate::real::Real;
use crate::tensor::Shape;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub input: Shape,
    pub output: Shape,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(input: Shape, output: Shape, kernel: [usize; 2], stride: usize, padding: Padding) -> Self {
        let [kh, kw] = kernel;
        let (pad_top, pad_left) = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let ph = ((output.h - 1) * stride + kh).saturating_sub(input.h);
                let pw = ((output.w - 1) * stride + kw).saturating_sub(input.w);
                (ph / 2, pw / 2)
            }
        };
        Self {
            input,
            output,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
        }
    }

    /// Patch length `k_h * k_w * in_channels`.
    pub fn patch(&self) -> usize {
        self.kh * self.kw * self.input.c
    }

    pub fn kernel_len(&self) -> usize {
        self.patch() * self.output.c
    }
}

/// Reorders `(out, in, k_y, k_x)` kernels into the packed `[patch][out]` matrix.
pub(crate) fn pack<F: Real>(g: &ConvGeom, kernels: &[F]) -> Vec<F> {
    let (cin, cout) = (g.input.c, g.output.c);
    let mut packed = vec![F::ZERO; g.kernel_len()];
    for o in 0..cout {
        for i in 0..cin {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let src = ((o * cin + i) * g.kh + ky) * g.kw + kx;
                    let k = (ky * g.kw + kx) * cin + i;
                    packed[k * cout + o] = kernels[src];
                }
            }
        }
    }
    packed
}

/// Inverse of [`pack`], accumulating into `out`.
pub(crate) fn unpack_add<F: Real>(g: &ConvGeom, packed: &[F], out: &mut [F]) {
    let (cin, cout) = (g.input.c, g.output.c);
    for o in 0..cout {
        for i in 0..cin {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let dst = ((o * cin + i) * g.kh + ky) * g.kw + kx;
                    let k = (ky * g.kw + kx) * cin + i;
                    out[dst] += packed[k * cout + o];
                }
            }
        }
    }
}

/// Zero-padded patches, one row per output pixel.
pub(crate) fn im2col<F: Real>(g: &ConvGeom, input: &[F]) -> Vec<F> {
    let k = g.patch();
    let cin = g.input.c;
    let mut cols = vec![F::ZERO; g.output.pixels() * k];
    for oy in 0..g.output.h {
        for ox in 0..g.output.w {
            let row = &mut cols[(oy * g.output.w + ox) * k..][..k];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.input.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.input.w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.input.w + ix as usize) * cin;
                    let dst = (ky * g.kw + kx) * cin;
                    row[dst..dst + cin].copy_from_slice(&input[src..src + cin]);
                }
            }
        }
    }
    cols
}

/// Scatter-adds patch gradients back onto the input gradient.
pub(crate) fn col2im<F: Real>(g: &ConvGeom, dcols: &[F], dinput: &mut [F]) {
    let k = g.patch();
    let cin = g.input.c;
    for oy in 0..g.output.h {
        for ox in 0..g.output.w {
            let row = &dcols[(oy * g.output.w + ox) * k..][..k];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.input.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.input.w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.input.w + ix as usize) * cin;
                    let src = (ky * g.kw + kx) * cin;
                    for c in 0..cin {
                        dinput[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
}

/// `out[p][o] = bias[o] + sum_k cols[p][k] * packed[k][o]`.
pub(crate) fn forward<F: Real>(g: &ConvGeom, cols: &[F], packed: &[F], bias: &[F]) -> Vec<F> {
    let k = g.patch();
    let cout = g.output.c;
    let mut out = vec![F::ZERO; g.output.pixels() * cout];
    for (row, acc) in cols.chunks_exact(k).zip(out.chunks_exact_mut(cout)) {
        acc.copy_from_slice(bias);
        for (&a, w) in row.iter().zip(packed.chunks_exact(cout)) {
            if a == F::ZERO {
                continue;
            }
            for (o, &wv) in acc.iter_mut().zip(w) {
                *o += a * wv;
            }
        }
    }
    out
}

/// Accumulates packed kernel and bias gradients; returns patch gradients
/// when `need_input` is set.
pub(crate) fn backward<F: Real>(
    g: &ConvGeom,
    cols: &[F],
    packed: &[F],
    dout: &[F],
    dpacked: &mut [F],
    dbias: &mut [F],
    need_input: bool,
) -> Option<Vec<F>> {
    let k = g.patch();
    let cout = g.output.c;
    for (row, d) in cols.chunks_exact(k).zip(dout.chunks_exact(cout)) {
        for (b, &dv) in dbias.iter_mut().zip(d) {
            *b += dv;
        }
        for (&a, dw) in row.iter().zip(dpacked.chunks_exact_mut(cout)) {
            if a == F::ZERO {
                continue;
            }
            for (w, &dv) in dw.iter_mut().zip(d) {
                *w += a * dv;
            }
        }
    }
    if !need_input {
        return None;
    }
    let mut dcols = vec![F::ZERO; cols.len()];
    for (drow, d) in dcols.chunks_exact_mut(k).zip(dout.chunks_exact(cout)) {
        for (dc, w) in drow.iter_mut().zip(packed.chunks_exact(cout)) {
            let mut s = F::ZERO;
            for (&wv, &dv) in w.iter().zip(d) {
                s += wv * dv;
            }
            *dc = s;
        }
    }
    Some(dcols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_unpack_roundtrip() {
        let g = ConvGeom::new(Shape::new(5, 5, 2), Shape::new(5, 5, 3), [3, 3], 1, Padding::Same);
        let k: Vec<f64> = (0..g.kernel_len()).map(|i| i as f64).collect();
        let p = pack(&g, &k);
        let mut back = vec![0.0; k.len()];
        unpack_add(&g, &p, &mut back);
        assert_eq!(k, back);
    }

    #[test]
    fn same_padding_offsets() {
        let g = ConvGeom::new(Shape::new(6, 6, 1), Shape::new(3, 3, 1), [3, 3], 2, Padding::Same);
        // (3-1)*2 + 3 - 6 = 1 -> top 0
        assert_eq!((g.pad_top, g.pad_left), (0, 0));
        let g = ConvGeom::new(Shape::new(6, 6, 1), Shape::new(6, 6, 1), [5, 5], 1, Padding::Same);
        assert_eq!((g.pad_top, g.pad_left), (2, 2));
    }
}

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::eval::BBox;
use crate::tensor::Tensor;

/// Boxes keeping less than this fraction of their area after clipping are
/// dropped.
pub const MIN_VISIBLE_FRACTION: f64 = 0.25;

/// Parameters of the geometric tail of the pipeline, applied in field order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricParams {
    pub flip: bool,
    pub dx: i32,
    pub dy: i32,
    /// Content scale in `(0, 1]`.
    pub scale: f32,
    /// Top-left `(x, y)` of the scaled content on the canvas.
    pub offset: (usize, usize),
}

impl GeometricParams {
    pub const IDENTITY: Self = Self {
        flip: false,
        dx: 0,
        dy: 0,
        scale: 1.0,
        offset: (0, 0),
    };
}

/// Size of the scaled content for a canvas side `n`.
pub fn scaled_len(n: usize, s: f32) -> usize {
    (libm::roundf(n as f32 * s) as usize).clamp(1, n)
}

pub fn flip_horizontal(img: &Tensor, boxes: &[BBox]) -> (Tensor, Vec<BBox>) {
    let s = img.shape();
    let mut out = Tensor::zeros(s);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..s.c {
                out.set(y, x, c, img.get(y, s.w - 1 - x, c));
            }
        }
    }
    let w = s.w as f32;
    let boxes = boxes
        .iter()
        .map(|b| BBox::raw(w - b.x_max, b.y_min, w - b.x_min, b.y_max))
        .collect();
    (out, boxes)
}

fn clip_keep(b: &BBox, w: f32, h: f32) -> Option<BBox> {
    let c = b.clip(w, h)?;
    (c.area() >= MIN_VISIBLE_FRACTION * b.area()).then_some(c)
}

/// Shifts content by `(dx, dy)` pixels with black fill.
pub fn translate(img: &Tensor, boxes: &[BBox], dx: i32, dy: i32) -> (Tensor, Vec<BBox>) {
    let s = img.shape();
    let mut out = Tensor::zeros(s);
    for y in 0..s.h {
        let sy = y as i64 - dy as i64;
        if sy < 0 || sy >= s.h as i64 {
            continue;
        }
        for x in 0..s.w {
            let sx = x as i64 - dx as i64;
            if sx < 0 || sx >= s.w as i64 {
                continue;
            }
            for c in 0..s.c {
                out.set(y, x, c, img.get(sy as usize, sx as usize, c));
            }
        }
    }
    let (w, h) = (s.w as f32, s.h as f32);
    let boxes = boxes
        .iter()
        .filter_map(|b| clip_keep(&b.translate(dx as f32, dy as f32), w, h))
        .collect();
    (out, boxes)
}

/// Resizes content by `scale` (bilinear, pixel-center aligned) and places it
/// with its top-left corner at `offset` on a black canvas of the same size.
pub fn scale_and_place(
    img: &Tensor,
    boxes: &[BBox],
    scale: f32,
    offset: (usize, usize),
) -> Result<(Tensor, Vec<BBox>)> {
    let s = img.shape();
    if !(scale > 0.0 && scale <= 1.0) {
        bail!(Argument, "scale {scale} outside (0, 1]");
    }
    let (sw, sh) = (scaled_len(s.w, scale), scaled_len(s.h, scale));
    let (ox, oy) = offset;
    if ox + sw > s.w || oy + sh > s.h {
        bail!(Argument, "offset {offset:?} puts {sw}x{sh} content off the canvas");
    }
    let (rx, ry) = (s.w as f32 / sw as f32, s.h as f32 / sh as f32);
    let mut out = Tensor::zeros(s);
    for y in 0..sh {
        let fy = ((y as f32 + 0.5) * ry - 0.5).clamp(0.0, (s.h - 1) as f32);
        let y0 = fy as usize;
        let y1 = (y0 + 1).min(s.h - 1);
        let wy = fy - y0 as f32;
        for x in 0..sw {
            let fx = ((x as f32 + 0.5) * rx - 0.5).clamp(0.0, (s.w - 1) as f32);
            let x0 = fx as usize;
            let x1 = (x0 + 1).min(s.w - 1);
            let wx = fx - x0 as f32;
            for c in 0..s.c {
                let top = img.get(y0, x0, c) * (1.0 - wx) + img.get(y0, x1, c) * wx;
                let bot = img.get(y1, x0, c) * (1.0 - wx) + img.get(y1, x1, c) * wx;
                out.set(oy + y, ox + x, c, (top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0));
            }
        }
    }
    let (kx, ky) = (sw as f32 / s.w as f32, sh as f32 / s.h as f32);
    let (fw, fh) = (s.w as f32, s.h as f32);
    let boxes = boxes
        .iter()
        .map(|b| {
            BBox::raw(
                b.x_min * kx + ox as f32,
                b.y_min * ky + oy as f32,
                b.x_max * kx + ox as f32,
                b.y_max * ky + oy as f32,
            )
        })
        .filter_map(|b| clip_keep(&b, fw, fh))
        .collect();
    Ok((out, boxes))
}

/// Flip, then translate, then scale and place.
pub fn apply_geometric(
    img: &Tensor,
    boxes: &[BBox],
    p: &GeometricParams,
) -> Result<(Tensor, Vec<BBox>)> {
    let (mut out, mut bs) = (img.clone(), boxes.to_vec());
    if p.flip {
        (out, bs) = flip_horizontal(&out, &bs);
    }
    if p.dx != 0 || p.dy != 0 {
        (out, bs) = translate(&out, &bs, p.dx, p.dy);
    }
    let s = img.shape();
    if scaled_len(s.w, p.scale) != s.w || scaled_len(s.h, p.scale) != s.h || p.offset != (0, 0) {
        (out, bs) = scale_and_place(&out, &bs, p.scale, p.offset)?;
    }
    Ok((out, bs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use alloc::vec;

    fn ramp(s: Shape) -> Tensor {
        let d = (0..s.len()).map(|i| ((i * 13) % 97) as f32 / 96.0).collect();
        Tensor::from_vec(s, d).unwrap()
    }

    #[test]
    fn flip_is_involution() {
        let img = ramp(Shape::new(5, 7, 3));
        let b = vec![BBox::raw(1.0, 0.5, 3.5, 4.0)];
        let (f, fb) = flip_horizontal(&img, &b);
        assert_ne!(f, img);
        let (g, gb) = flip_horizontal(&f, &fb);
        assert_eq!(g, img);
        assert_eq!(gb, b);
    }

    #[test]
    fn translate_box_arithmetic() {
        let img = Tensor::zeros(Shape::new(96, 96, 3));
        let (_, b) = translate(&img, &[BBox::raw(10.0, 10.0, 20.0, 20.0)], 2, 0);
        assert_eq!(b, vec![BBox::raw(12.0, 10.0, 22.0, 20.0)]);
    }

    #[test]
    fn translate_moves_pixels_and_fills_black() {
        let img = Tensor::filled(Shape::new(4, 4, 1), 1.0);
        let (t, _) = translate(&img, &[], -1, 2);
        assert_eq!(t.get(0, 0, 0), 0.0);
        assert_eq!(t.get(2, 0, 0), 1.0);
        assert_eq!(t.get(2, 3, 0), 0.0);
    }

    #[test]
    fn translate_drops_mostly_hidden_boxes() {
        let img = Tensor::zeros(Shape::new(10, 10, 1));
        // 4 px wide box at the left edge shifted by -2 keeps half: kept.
        // 2 px wide box shifted by -2 at x=0..2 keeps nothing: dropped.
        // 8 px wide box at x=-5..3 already partially outside (raw input).
        let (_, b) = translate(
            &img,
            &[BBox::raw(0.0, 0.0, 4.0, 4.0), BBox::raw(0.5, 5.0, 2.0, 8.0)],
            -2,
            0,
        );
        assert_eq!(b, vec![BBox::raw(0.0, 0.0, 2.0, 4.0)]);
    }

    #[test]
    fn scale_one_is_identity() {
        let img = ramp(Shape::new(6, 8, 3));
        let b = [BBox::raw(1.0, 1.0, 5.0, 4.0)];
        let (o, ob) = scale_and_place(&img, &b, 1.0, (0, 0)).unwrap();
        assert_eq!(o, img);
        assert_eq!(ob, b);
    }

    #[test]
    fn scale_half_places_content() {
        let img = Tensor::filled(Shape::new(8, 8, 1), 0.5);
        let (o, b) =
            scale_and_place(&img, &[BBox::raw(0.0, 0.0, 8.0, 4.0)], 0.5, (2, 3)).unwrap();
        assert_eq!(b, vec![BBox::raw(2.0, 3.0, 6.0, 5.0)]);
        for y in 0..8 {
            for x in 0..8 {
                let inside = (2..6).contains(&x) && (3..7).contains(&y);
                assert_eq!(o.get(y, x, 0), if inside { 0.5 } else { 0.0 });
            }
        }
        assert!(scale_and_place(&img, &[], 0.5, (5, 0)).is_err());
        assert!(scale_and_place(&img, &[], 1.5, (0, 0)).is_err());
    }

    #[test]
    fn identity_params() {
        let img = ramp(Shape::new(6, 6, 3));
        let b = [BBox::raw(1.0, 1.0, 3.0, 3.0)];
        let (o, ob) = apply_geometric(&img, &b, &GeometricParams::IDENTITY).unwrap();
        assert_eq!(o, img);
        assert_eq!(ob, b);
    }
}

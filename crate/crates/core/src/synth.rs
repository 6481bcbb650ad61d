//! Synthetic crowd scenes: stick-figure persons on a noisy gradient with
//! non-person distractor blobs, and exact amodal boxes.
//!
//! Figures are defined analytically and rasterized with 4x4 supersampling.
//! A figure's box is the pixel-aligned hull of every pixel it touches,
//! regardless of occlusion by later figures.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{iou, BBox};
use crate::mutation::GeometricParams;
use crate::rng::{self, normal};
use crate::sample::Sample;
use crate::tensor::{Shape, Tensor};

pub const MIN_PERSONS: usize = 1;
pub const MAX_PERSONS: usize = 6;
pub const MIN_HEIGHT: f32 = 12.0;
pub const MAX_HEIGHT: f32 = 48.0;
/// Half-width of a figure relative to its height.
pub const HALF_WIDTH: f32 = 0.22;
const MAX_PLACEMENT_IOU: f64 = 0.3;
/// Subsamples per pixel side when rasterizing figures.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub cx: f32,
    pub top: f32,
    pub height: f32,
    pub skin: [f32; 3],
    pub shirt: [f32; 3],
    pub pants: [f32; 3],
}

impl Person {
    /// Analytic extent; the rendered box is its pixel-aligned hull.
    pub fn extent(&self) -> BBox {
        let hw = HALF_WIDTH * self.height;
        BBox::raw(self.cx - hw, self.top, self.cx + hw, self.top + self.height)
    }

    /// Color at `(x, y)` if the point lies on the figure.
    fn color_at(&self, x: f32, y: f32) -> Option<[f32; 3]> {
        let h = self.height;
        let dx = (x - self.cx).abs();
        let v = (y - self.top) / h;
        if !(0.0..=1.0).contains(&v) {
            return None;
        }
        let u = dx / h;
        let hv = v - 0.12;
        if u * u + hv * hv <= 0.12 * 0.12 {
            return Some(self.skin);
        }
        if (0.24..=0.62).contains(&v) && u <= 0.17 {
            return Some(self.shirt);
        }
        if (0.26..=0.52).contains(&v) && u <= HALF_WIDTH {
            return Some(self.shirt.map(|c| c * 0.8));
        }
        if v >= 0.62 && (0.03..=0.15).contains(&u) {
            return Some(self.pants);
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Blob {
    Rect { bbox: BBox, color: [f32; 3] },
    Ellipse { bbox: BBox, color: [f32; 3] },
}

impl Blob {
    fn color_at(&self, x: f32, y: f32) -> Option<[f32; 3]> {
        match self {
            Self::Rect { bbox: b, color } => {
                (x >= b.x_min && x <= b.x_max && y >= b.y_min && y <= b.y_max).then_some(*color)
            }
            Self::Ellipse { bbox: b, color } => {
                let (cx, cy) = b.center();
                let nx = (x - cx) / (b.width() / 2.0);
                let ny = (y - cy) / (b.height() / 2.0);
                (nx * nx + ny * ny <= 1.0).then_some(*color)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub top: [f32; 3],
    pub bottom: [f32; 3],
    pub noise_sigma: f32,
}

/// Complete description of a scene; rendering is a pure function of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub background: Background,
    pub blobs: Vec<Blob>,
    pub persons: Vec<Person>,
    pub seed: u64,
}

/// A rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Tensor,
    pub boxes: Vec<BBox>,
}

fn color(rng: &mut impl Rng, lo: f32, hi: f32) -> [f32; 3] {
    [0; 3].map(|_| rng.random_range(lo..=hi))
}

impl SceneSpec {
    /// Scene with a person count drawn uniformly from 1..=6.
    pub fn sample(seed: u64, shape: Shape) -> Self {
        let n = rng::stream(seed, &[0xc0]).random_range(MIN_PERSONS..=MAX_PERSONS);
        Self::sample_with_count(seed, shape, n)
    }

    /// Scene with exactly `n` persons (fewer only if the canvas cannot fit
    /// them after many placement attempts).
    pub fn sample_with_count(seed: u64, shape: Shape, n: usize) -> Self {
        let mut rng = rng::stream(seed, &[0x5c]);
        let background = Background {
            top: color(&mut rng, 0.15, 0.85),
            bottom: color(&mut rng, 0.15, 0.85),
            noise_sigma: rng.random_range(0.01..=0.05),
        };
        let (w, h) = (shape.w as f32, shape.h as f32);
        let max_h = MAX_HEIGHT.min(h);
        let n_blobs = rng.random_range(0..=3);
        let blobs = (0..n_blobs)
            .map(|_| {
                let bw = rng.random_range(4.0..=(w / 3.0).max(5.0));
                let bh = rng.random_range(4.0..=(h / 3.0).max(5.0));
                let x = rng.random_range(0.0..=(w - bw).max(0.0));
                let y = rng.random_range(0.0..=(h - bh).max(0.0));
                let bbox = BBox::raw(x, y, x + bw, y + bh);
                let color = color(&mut rng, 0.0, 1.0);
                if rng.random_bool(0.5) {
                    Blob::Rect { bbox, color }
                } else {
                    Blob::Ellipse { bbox, color }
                }
            })
            .collect();
        let mut persons: Vec<Person> = Vec::with_capacity(n);
        let mut attempts = 0;
        while persons.len() < n && attempts < 1000 {
            attempts += 1;
            let height = rng.random_range(MIN_HEIGHT.min(max_h)..=max_h);
            let hw = HALF_WIDTH * height;
            let cx = rng.random_range(hw..=(w - hw).max(hw));
            let top = rng.random_range(0.0..=(h - height).max(0.0));
            let skin = [
                rng.random_range(0.7..=0.95),
                rng.random_range(0.5..=0.75),
                rng.random_range(0.35..=0.6),
            ];
            let p = Person {
                cx,
                top,
                height,
                skin,
                shirt: color(&mut rng, 0.0, 1.0),
                pants: color(&mut rng, 0.0, 0.5),
            };
            let e = p.extent();
            if persons.iter().all(|q| iou(&q.extent(), &e) <= MAX_PLACEMENT_IOU) {
                persons.push(p);
            }
        }
        Self {
            shape,
            background,
            blobs,
            persons,
            seed,
        }
    }

    /// The same scene with every person moved as the geometric mutation
    /// would move it. Background and blobs are left alone.
    pub fn transformed(&self, g: &GeometricParams) -> Self {
        let (w, h) = (self.shape.w as f32, self.shape.h as f32);
        let k = crate::mutation::scaled_len(self.shape.h, g.scale) as f32 / h;
        let mut out = self.clone();
        for p in &mut out.persons {
            if g.flip {
                p.cx = w - p.cx;
            }
            p.cx += g.dx as f32;
            p.top += g.dy as f32;
            p.cx = p.cx * k + g.offset.0 as f32;
            p.top = p.top * k + g.offset.1 as f32;
            p.height *= k;
        }
        out
    }
}

/// Rasterizes a scene. Boxes follow `spec.persons` order; persons entirely
/// off the canvas produce no box.
pub fn render(spec: &SceneSpec) -> Scene {
    let s = spec.shape;
    let mut img = Tensor::zeros(s);
    let mut rng = rng::stream(spec.seed, &[0xb6]);
    let bg = &spec.background;
    for y in 0..s.h {
        let t = if s.h > 1 { y as f32 / (s.h - 1) as f32 } else { 0.0 };
        for x in 0..s.w {
            for c in 0..s.c {
                let base = bg.top[c % 3] * (1.0 - t) + bg.bottom[c % 3] * t;
                let n = bg.noise_sigma * normal(&mut rng) as f32;
                img.set(y, x, c, base + n);
            }
        }
    }
    let mut hulls: Vec<Option<(usize, usize, usize, usize)>> = Vec::new();
    for y in 0..s.h {
        let py = y as f32 + 0.5;
        for x in 0..s.w {
            let px = x as f32 + 0.5;
            for b in &spec.blobs {
                if let Some(col) = b.color_at(px, py) {
                    for c in 0..s.c {
                        img.set(y, x, c, col[c % 3]);
                    }
                }
            }
        }
    }
    for p in &spec.persons {
        let mut hull: Option<(usize, usize, usize, usize)> = None;
        let e = p.extent();
        let y0 = libm::floorf(e.y_min).max(0.0) as usize;
        let y1 = (libm::ceilf(e.y_max).max(0.0) as usize).min(s.h);
        let x0 = libm::floorf(e.x_min).max(0.0) as usize;
        let x1 = (libm::ceilf(e.x_max).max(0.0) as usize).min(s.w);
        for y in y0..y1 {
            for x in x0..x1 {
                let mut hits = 0;
                let mut acc = [0.0f32; 3];
                for sy in 0..SUPERSAMPLE {
                    let py = y as f32 + (sy as f32 + 0.5) / SUPERSAMPLE as f32;
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f32 + (sx as f32 + 0.5) / SUPERSAMPLE as f32;
                        if let Some(col) = p.color_at(px, py) {
                            hits += 1;
                            acc.iter_mut().zip(col).for_each(|(a, c)| *a += c);
                        }
                    }
                }
                if hits == 0 {
                    continue;
                }
                let a = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
                for c in 0..s.c {
                    let v = img.get(y, x, c);
                    img.set(y, x, c, (1.0 - a) * v + acc[c % 3] / (SUPERSAMPLE * SUPERSAMPLE) as f32);
                }
                hull = Some(match hull {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                });
            }
        }
        hulls.push(hull);
    }
    let boxes = hulls
        .into_iter()
        .flatten()
        .map(|(a, b, c, d)| BBox::raw(a as f32, b as f32, (c + 1) as f32, (d + 1) as f32))
        .collect();
    Scene {
        image: img.clamp01(),
        boxes,
    }
}

/// `n` scenes with ids `{prefix}{index:05}`. Person counts cycle through
/// 1..=6 in independently shuffled blocks, so the count histogram is as
/// uniform as `n` allows. Images are snapped to the 8-bit grid, so a PNG
/// round trip reproduces them exactly.
pub fn generate(seed: u64, n: usize, shape: Shape, prefix: &str) -> Vec<Sample> {
    let span = MAX_PERSONS - MIN_PERSONS + 1;
    let mut counts = Vec::with_capacity(n + span);
    let mut block = 0u64;
    while counts.len() < n {
        let mut b: Vec<usize> = (MIN_PERSONS..=MAX_PERSONS).collect();
        b.shuffle(&mut rng::stream(seed, &[0xb1, block]));
        counts.extend(b);
        block += 1;
    }
    (0..n)
        .map(|i| {
            let spec = SceneSpec::sample_with_count(rng::derive(seed, &[0x5e, i as u64]), shape, counts[i]);
            let scene = render(&spec);
            Sample::new(format!("{prefix}{i:05}"), scene.image.quantize_u8(), scene.boxes)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutation::{apply_geometric, flip_horizontal, scaled_len};

    const S: Shape = Shape::new(96, 96, 3);

    #[test]
    fn deterministic_render() {
        let a = render(&SceneSpec::sample(3, S));
        let b = render(&SceneSpec::sample(3, S));
        assert_eq!(a, b);
        assert_ne!(a.image, render(&SceneSpec::sample(4, S)).image);
    }

    #[test]
    fn boxes_valid_and_tight() {
        for seed in 0..30 {
            let spec = SceneSpec::sample(seed, S);
            let scene = render(&spec);
            assert_eq!(scene.boxes.len(), spec.persons.len());
            for (b, p) in scene.boxes.iter().zip(&spec.persons) {
                assert!(b.within(96.0, 96.0));
                // Subsamples sit 1/8 px inside each pixel edge, so the hull
                // overshoots the analytic extent by under 7/8 px and falls
                // short of it by at most 1/8 px.
                let e = p.extent();
                assert!(b.y_min > e.y_min - 0.875 && b.y_min <= e.y_min + 0.125, "{b:?} {e:?}");
                assert!(b.y_max < e.y_max + 0.875 && b.y_max >= e.y_max - 0.125, "{b:?} {e:?}");
                // Arms reach the full half-width only between 0.26 and 0.52
                // of the height, which always spans many subsample rows.
                assert!(b.x_min > e.x_min - 0.875 && b.x_min <= e.x_min + 0.125, "{b:?} {e:?}");
                assert!(b.x_max < e.x_max + 0.875 && b.x_max >= e.x_max - 0.125, "{b:?} {e:?}");
            }
        }
    }

    #[test]
    fn counts_stratified() {
        let samples = generate(5, 60, Shape::new(48, 48, 3), "t");
        let mut hist = [0usize; 7];
        for s in &samples {
            hist[s.boxes.len()] += 1;
        }
        assert_eq!(&hist[1..], &[10; 6]);
        assert_eq!(samples[3].id, "t00003");
    }

    #[test]
    fn flip_rerender_exact() {
        for seed in 0..10 {
            let spec = SceneSpec::sample(seed, S);
            let scene = render(&spec);
            let (_, fb) = flip_horizontal(&scene.image, &scene.boxes);
            let g = GeometricParams { flip: true, ..GeometricParams::IDENTITY };
            assert_eq!(render(&spec.transformed(&g)).boxes, fb);
        }
    }

    #[test]
    fn translate_scale_rerender_within_one_px() {
        for seed in 0..10 {
            let spec = SceneSpec::sample(seed, S);
            let scene = render(&spec);
            let g = GeometricParams {
                flip: seed % 2 == 0,
                dx: (seed as i32 % 5) - 2,
                dy: 1,
                scale: 0.5 + 0.05 * seed as f32,
                offset: (3, 5),
            };
            let (_, tb) = apply_geometric(&scene.image, &scene.boxes, &g).unwrap();
            // Content pushed off the canvas before scaling is gone from the
            // mutant, so the re-render is cut to the scaled content area.
            let (sw, sh) = (scaled_len(96, g.scale) as f32, scaled_len(96, g.scale) as f32);
            let (ox, oy) = (g.offset.0 as f32, g.offset.1 as f32);
            let rb: Vec<BBox> = render(&spec.transformed(&g))
                .boxes
                .iter()
                .map(|b| {
                    BBox::raw(b.x_min.max(ox), b.y_min.max(oy), b.x_max.min(ox + sw), b.y_max.min(oy + sh))
                })
                .collect();
            assert_eq!(tb.len(), rb.len());
            for (a, b) in tb.iter().zip(&rb) {
                for (u, v) in [(a.x_min, b.x_min), (a.y_min, b.y_min), (a.x_max, b.x_max), (a.y_max, b.y_max)] {
                    assert!((u - v).abs() <= 1.0, "{a:?} vs {b:?}");
                }
            }
        }
    }
}

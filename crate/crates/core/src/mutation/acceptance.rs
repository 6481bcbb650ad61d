use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::{to_u8, Tensor};

/// Pixel-distance acceptance bounds for a mutant against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceParams {
    /// Bound on the fraction of changed pixels.
    pub alpha: f64,
    /// Bound on the largest channel change, as a fraction of 255.
    pub beta: f64,
}

impl Default for AcceptanceParams {
    fn default() -> Self {
        Self {
            alpha: 0.02,
            beta: 0.20,
        }
    }
}

impl AcceptanceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!(Argument, "acceptance alpha {} outside (0, 1)", self.alpha);
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            bail!(Argument, "acceptance beta {} outside (0, 1]", self.beta);
        }
        Ok(())
    }
}

/// `(L0, Linf)` on the 8-bit scale: pixels with any channel changed, and the
/// largest absolute channel difference.
pub fn pixel_distances(a: &Tensor, b: &Tensor) -> Result<(usize, u8)> {
    if a.shape() != b.shape() {
        bail!(Argument, "shape mismatch {:?} vs {:?}", a.shape(), b.shape());
    }
    let c = a.shape().c.max(1);
    let mut l0 = 0;
    let mut linf = 0u8;
    for (pa, pb) in a.data().chunks_exact(c).zip(b.data().chunks_exact(c)) {
        let mut changed = false;
        for (&u, &v) in pa.iter().zip(pb) {
            let d = to_u8(u).abs_diff(to_u8(v));
            changed |= d != 0;
            linf = linf.max(d);
        }
        l0 += changed as usize;
    }
    Ok((l0, linf))
}

pub fn acceptance_test(reference: &Tensor, candidate: &Tensor, p: &AcceptanceParams) -> Result<bool> {
    p.validate()?;
    let (l0, linf) = pixel_distances(reference, candidate)?;
    let s = reference.shape();
    Ok(l0 as f64 <= p.alpha * s.pixels() as f64 || linf as f64 <= p.beta * 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn checker(s: Shape) -> Tensor {
        let mut t = Tensor::zeros(s);
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..s.c {
                    t.set(y, x, c, if (x + y) % 2 == 0 { 0.1 } else { 0.9 });
                }
            }
        }
        t
    }

    #[test]
    fn identical_accepts() {
        let x = checker(Shape::new(8, 8, 3));
        assert_eq!(pixel_distances(&x, &x).unwrap(), (0, 0));
        assert!(acceptance_test(&x, &x, &AcceptanceParams::default()).unwrap());
    }

    #[test]
    fn small_shift_accepts() {
        let x = checker(Shape::new(8, 8, 3));
        let y = x.map(|v| v + 10.0 / 255.0);
        assert_eq!(pixel_distances(&x, &y).unwrap(), (64, 10));
        assert!(acceptance_test(&x, &y, &AcceptanceParams::default()).unwrap());
    }

    #[test]
    fn inversion_rejects() {
        let s = Shape::new(8, 8, 3);
        let mut x = Tensor::zeros(s);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = ((i / 3) % 2) as f32;
        }
        let y = x.map(|v| 1.0 - v);
        assert_eq!(pixel_distances(&x, &y).unwrap(), (64, 255));
        assert!(!acceptance_test(&x, &y, &AcceptanceParams::default()).unwrap());
    }

    #[test]
    fn few_large_changes_accept() {
        // 1 of 64 pixels fully changed: L0 = 1 <= 0.02 * 64.
        let x = checker(Shape::new(8, 8, 3));
        let mut y = x.clone();
        y.set(3, 3, 0, 1.0 - y.get(3, 3, 0));
        assert!(acceptance_test(&x, &y, &AcceptanceParams::default()).unwrap());
        y.set(4, 4, 0, 1.0 - y.get(4, 4, 0));
        assert!(!acceptance_test(&x, &y, &AcceptanceParams::default()).unwrap());
    }

    #[test]
    fn mismatch_and_bad_params() {
        let x = checker(Shape::new(8, 8, 3));
        let y = checker(Shape::new(8, 7, 3));
        assert!(acceptance_test(&x, &y, &AcceptanceParams::default()).is_err());
        let bad = AcceptanceParams { alpha: 0.0, beta: 0.2 };
        assert!(acceptance_test(&x, &x, &bad).is_err());
    }
}

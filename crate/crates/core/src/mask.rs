use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary map over an image grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

/// Axis-aligned box in pixel-edge coordinates: pixel `(x, y)` covers
/// `[x, x + 1) x [y, y + 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) || x1 >= x2 || y1 >= y2 {
            return Err(Error::invalid("box", format!("degenerate box {b:?}")));
        }
        Ok(b)
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn intersection(&self, other: &Self) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn within(&self, height: usize, width: usize) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width as f64 && self.y2 <= height as f64
    }
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::invalid(
                "mask",
                format!("{} bits for a {height}x{width} grid", bits.len()),
            ));
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self { height, width, bits }
    }

    /// Pixels of channel 0 above one half.
    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            height: t.height(),
            width: t.width(),
            bits: t.plane(0).iter().map(|&v| v > 0.5).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn(1, self.height, self.width, |_, y, x| {
            if self.get(y, x) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn union_with(&mut self, other: &Self) -> Result<()> {
        if !self.same_grid(other) {
            return Err(Error::invalid("mask union", "grids differ"));
        }
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// 4-connected components, ordered by their first pixel in row-major
    /// scan order.
    pub fn components(&self) -> Vec<Mask> {
        let (h, w) = (self.height, self.width);
        let mut label = vec![usize::MAX; h * w];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..h * w {
            if !self.bits[start] || label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = Mask::empty(h, w);
            label[start] = id;
            stack.push(start);
            while let Some(i) = stack.pop() {
                comp.bits[i] = true;
                let (y, x) = (i / w, i % w);
                let mut visit = |j: usize| {
                    if self.bits[j] && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            out.push(comp);
        }
        out
    }

    /// Tight box around the set pixels, `None` when empty.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    x1 = x1.min(x);
                    y1 = y1.min(y);
                    x2 = x2.max(x + 1);
                    y2 = y2.max(y + 1);
                }
            }
        }
        (x1 != usize::MAX).then_some(BoundingBox {
            x1: x1 as f64,
            y1: y1 as f64,
            x2: x2 as f64,
            y2: y2 as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_are_four_connected() {
        // diagonal neighbours stay separate
        let m = Mask::from_fn(3, 4, |y, x| (y == 0 && x < 2) || (y == 1 && x == 2) || (y == 2 && x == 2));
        let comps = m.components();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].count(), 2);
        assert_eq!(comps[1].count(), 2);
        assert!(comps[1].get(1, 2) && comps[1].get(2, 2));
        assert!(Mask::empty(2, 2).components().is_empty());
    }

    #[test]
    fn bbox_and_count() {
        let m = Mask::from_fn(5, 6, |y, x| (1..3).contains(&y) && (2..5).contains(&x));
        assert_eq!(m.count(), 6);
        assert_eq!(m.bounding_box(), Some(BoundingBox { x1: 2.0, y1: 1.0, x2: 5.0, y2: 3.0 }));
        assert_eq!(Mask::empty(3, 3).bounding_box(), None);
        assert_eq!(Mask::from_tensor(&m.to_tensor()), m);
    }

    #[test]
    fn box_iou() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BoundingBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
        assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(a.iou(&a), 1.0);
        assert!(BoundingBox::new(1.0, 0.0, 1.0, 2.0).is_err());
    }
}

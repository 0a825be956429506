//! Binary pixel masks and the morphology used by the synthetic styles.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![false; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(height, width);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(y, x);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// True when every pixel within Chebyshev distance `radius` of `(y, x)` is
    /// set; pixels beyond the border count as unset.
    fn all_within(&self, y: usize, x: usize, radius: usize) -> bool {
        let r = radius as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= self.height as isize || nx >= self.width as isize {
                    return false;
                }
                if !self.get(ny as usize, nx as usize) {
                    return false;
                }
            }
        }
        true
    }

    fn any_within(&self, y: usize, x: usize, radius: usize) -> bool {
        let r = radius as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= 0 && nx >= 0 && ny < self.height as isize && nx < self.width as isize && self.get(ny as usize, nx as usize) {
                    return true;
                }
            }
        }
        false
    }

    pub fn erode(&self, radius: usize) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.get(y, x) && self.all_within(y, x, radius))
    }

    pub fn dilate(&self, radius: usize) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.any_within(y, x, radius))
    }

    /// Dilation followed by erosion; the erosion treats the border as set so
    /// shapes touching the edge are not eaten away.
    pub fn close(&self, radius: usize) -> Self {
        let grown = self.dilate(radius);
        let r = radius as isize;
        Self::from_fn(self.height, self.width, |y, x| {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny >= 0 && nx >= 0 && ny < self.height as isize && nx < self.width as isize && !grown.get(ny as usize, nx as usize) {
                        return false;
                    }
                }
            }
            true
        })
    }

    /// Pixels of `self` within `width` pixels (Chebyshev) of the outside.
    pub fn inner_border(&self, width: usize) -> Self {
        let eroded = self.erode(width);
        Self::from_fn(self.height, self.width, |y, x| self.get(y, x) && !eroded.get(y, x))
    }

    /// Marks every pixel not reachable from the image border through unset
    /// pixels (4-connectivity), i.e. the strokes plus every enclosed region.
    pub fn fill_enclosed(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut outside = vec![false; h * w];
        let mut stack = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if (y == 0 || x == 0 || y == h - 1 || x == w - 1) && !self.get(y, x) {
                    outside[y * w + x] = true;
                    stack.push((y, x));
                }
            }
        }
        while let Some((y, x)) = stack.pop() {
            let mut visit = |ny: usize, nx: usize| {
                let i = ny * w + nx;
                if !outside[i] && !self.bits[i] {
                    outside[i] = true;
                    stack.push((ny, nx));
                }
            };
            if y > 0 {
                visit(y - 1, x);
            }
            if y + 1 < h {
                visit(y + 1, x);
            }
            if x > 0 {
                visit(y, x - 1);
            }
            if x + 1 < w {
                visit(y, x + 1);
            }
        }
        Self { height: h, width: w, bits: outside.into_iter().map(|o| !o).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize, lo: usize, hi: usize) -> Mask {
        Mask::from_fn(n, n, |y, x| (lo..hi).contains(&y) && (lo..hi).contains(&x))
    }

    #[test]
    fn border_width_two() {
        let m = square(12, 2, 10);
        let b = m.inner_border(2);
        assert_eq!(b.count(), 64 - 16);
        assert!(!b.get(5, 5));
        assert!(b.get(3, 5));
    }

    #[test]
    fn fill_recovers_square_from_outline() {
        let m = square(12, 2, 10);
        assert_eq!(m.inner_border(2).fill_enclosed(), m);
    }

    #[test]
    fn closing_fills_stripes() {
        let m = square(16, 3, 13);
        let stripes = Mask::from_fn(16, 16, |y, x| m.get(y, x) && (x + y) % 4 < 2);
        let closed = stripes.close(1);
        assert!(closed.get(7, 8) && closed.get(8, 8));
        assert!(!closed.get(0, 0));
    }
}

//! Dense row-major per-pixel storage shared by images, depth maps, masks
//! and point maps.

use nalgebra::Point3;

/// An 8-bit RGB triple.
pub type Rgb = [u8; 3];

/// A `width × height` row-major array of per-pixel values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type Mask = Grid<bool>;
pub type DepthMap = Grid<f64>;
pub type RgbImage = Grid<Rgb>;
pub type PointMap = Grid<Point3<f64>>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    /// Wraps `data` laid out row by row. Returns `None` if the length does
    /// not equal `width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[self.index(u, v)]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        let i = self.index(u, v);
        &mut self.data[i]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        let i = self.index(u, v);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Iterates `(u, v, &value)` in row-major order.
    pub fn iter_pixels(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, value)| (i % w, i / w, value))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.dims() == other.dims()
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Fraction of pixels set; 0 for an empty grid.
    pub fn coverage(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    /// Binary dilation with a square `(2r+1)×(2r+1)` structuring element.
    pub fn dilate(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = self.dims();
        // separable: horizontal pass then vertical pass
        let mut horizontal = Mask::filled(w, h, false);
        for v in 0..h {
            for u in 0..w {
                if *self.get(u, v) {
                    let lo = u.saturating_sub(radius);
                    let hi = (u + radius).min(w - 1);
                    for uu in lo..=hi {
                        horizontal.set(uu, v, true);
                    }
                }
            }
        }
        let mut out = Mask::filled(w, h, false);
        for v in 0..h {
            for u in 0..w {
                if *horizontal.get(u, v) {
                    let lo = v.saturating_sub(radius);
                    let hi = (v + radius).min(h - 1);
                    for vv in lo..=hi {
                        out.set(u, vv, true);
                    }
                }
            }
        }
        out
    }
}

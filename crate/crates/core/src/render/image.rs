use crate::error::{Error, Result};
use crate::tensorcore::Real;

/// Normalized image position of the center of pixel `(row, col)` in a
/// `width x height` image: `x = (2 col + 1) / width - 1`, `y = 1 - (2 row + 1) / height`.
#[inline]
pub fn pixel_center<F: Real>(row: usize, col: usize, width: usize, height: usize) -> [F; 2] {
    [
        F::lit((2 * col + 1) as f64 / width as f64 - 1.0),
        F::lit(1.0 - (2 * row + 1) as f64 / height as f64),
    ]
}

/// Row-major RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<F> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[F; 3]>,
}

impl<F: Real> Image<F> {
    pub fn filled(width: usize, height: usize, color: [F; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn new(width: usize, height: usize, data: Vec<[F; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [F; 3] {
        self.data[row * self.width + col]
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.height {
            for c in (0..self.width).rev() {
                data.push(self.get(r, c));
            }
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Row-major boolean coverage mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} mask needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn foreground(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.height {
            for c in (0..self.width).rev() {
                data.push(self.get(r, c));
            }
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

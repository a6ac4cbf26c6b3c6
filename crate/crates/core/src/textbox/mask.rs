use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Set of pixels on a `height x width` grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn empty(height: usize, width: usize) -> Self {
        PixelMask { height, width, bits: vec![false; height * width] }
    }

    pub fn rect(height: usize, width: usize, top: usize, left: usize, rows: usize, cols: usize) -> Self {
        let mut m = Self::empty(height, width);
        for r in top..(top + rows).min(height) {
            for c in left..(left + cols).min(width) {
                m.bits[r * width + c] = true;
            }
        }
        m
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::config(format!("{} bits for a {height}x{width} mask", bits.len())));
        }
        Ok(PixelMask { height, width, bits })
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

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn union(&self, other: &Self) -> Self {
        assert_eq!((self.height, self.width), (other.height, other.width));
        PixelMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        }
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    /// Run-length encoding over raster order: `(start, length)` per run of set pixels.
    pub fn to_runs(&self) -> Vec<(u32, u32)> {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < self.bits.len() {
            if self.bits[i] {
                let start = i;
                while i < self.bits.len() && self.bits[i] {
                    i += 1;
                }
                runs.push((start as u32, (i - start) as u32));
            } else {
                i += 1;
            }
        }
        runs
    }

    pub fn from_runs(height: usize, width: usize, runs: &[(u32, u32)]) -> Result<Self> {
        let mut m = Self::empty(height, width);
        for &(start, len) in runs {
            let (s, e) = (start as usize, start as usize + len as usize);
            if e > m.bits.len() {
                return Err(Error::Format(format!("mask run {start}+{len} leaves the grid")));
            }
            m.bits[s..e].iter_mut().for_each(|b| *b = true);
        }
        Ok(m)
    }
}

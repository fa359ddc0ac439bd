//! Run-length encoded binary masks over row-major pixel order.
//!
//! A mask is stored as alternating runs starting with the value in
//! `starts_with`. The canonical form has no zero-length runs, which makes
//! equality of encodings equivalent to equality of masks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ImageSize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("run lengths sum to {actual}, expected {expected} for a {size} mask")]
    LengthMismatch {
        size: ImageSize,
        expected: usize,
        actual: usize,
    },
    #[error("starts_with must be 0 or 1, got {0}")]
    StartValue(u8),
    #[error("dense mask has {actual} pixels, expected {expected}")]
    DenseLength { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub size: ImageSize,
    pub starts_with: u8,
    pub runs: Vec<u32>,
}

impl Rle {
    pub fn empty(size: ImageSize) -> Self {
        Self {
            size,
            starts_with: 0,
            runs: vec![size.pixel_count() as u32],
        }
    }

    /// Builds a canonical encoding from arbitrary runs, merging across any
    /// zero-length runs.
    pub fn from_runs(size: ImageSize, starts_with: u8, runs: &[u32]) -> Result<Self, MaskError> {
        if starts_with > 1 {
            return Err(MaskError::StartValue(starts_with));
        }
        let total: usize = runs.iter().map(|&r| r as usize).sum();
        if total != size.pixel_count() {
            return Err(MaskError::LengthMismatch {
                size,
                expected: size.pixel_count(),
                actual: total,
            });
        }
        let mut canon: Vec<u32> = Vec::with_capacity(runs.len());
        let mut first_value: Option<u8> = None;
        let mut value = starts_with;
        let mut current = starts_with;
        for &run in runs {
            if run > 0 {
                if first_value.is_none() {
                    first_value = Some(value);
                    current = value;
                    canon.push(run);
                } else if value == current {
                    *canon.last_mut().expect("non-empty") += run;
                } else {
                    current = value;
                    canon.push(run);
                }
            }
            value ^= 1;
        }
        Ok(Self {
            size,
            starts_with: first_value.unwrap_or(0),
            runs: canon,
        })
    }

    /// Decodes COCO-style counts where the first run is always background and
    /// may be zero.
    pub fn from_counts(size: ImageSize, counts: &[u32]) -> Result<Self, MaskError> {
        Self::from_runs(size, 0, counts)
    }

    /// Counts in the background-first convention used by the fixture format.
    pub fn to_counts(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.runs.len() + 1);
        if self.starts_with == 1 {
            out.push(0);
        }
        out.extend_from_slice(&self.runs);
        out
    }

    pub fn from_dense(size: ImageSize, pixels: &[bool]) -> Result<Self, MaskError> {
        if pixels.len() != size.pixel_count() {
            return Err(MaskError::DenseLength {
                expected: size.pixel_count(),
                actual: pixels.len(),
            });
        }
        let mut runs = Vec::new();
        let starts_with = u8::from(pixels.first().copied().unwrap_or(false));
        let mut current = starts_with == 1;
        let mut count = 0u32;
        for &p in pixels {
            if p != current {
                runs.push(count);
                count = 0;
                current = p;
            }
            count += 1;
        }
        runs.push(count);
        Ok(Self {
            size,
            starts_with,
            runs,
        })
    }

    pub fn to_dense(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.size.pixel_count());
        let mut value = self.starts_with == 1;
        for &run in &self.runs {
            out.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        out
    }

    fn foreground_runs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut offset = 0usize;
        let mut value = self.starts_with == 1;
        self.runs.iter().filter_map(move |&run| {
            let start = offset;
            offset += run as usize;
            let fg = value;
            value = !value;
            fg.then_some((start, offset))
        })
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.foreground_runs().map(|(s, e)| e - s).sum()
    }

    /// Whether pixel `(x, y)` is foreground. Out-of-range pixels are not.
    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x >= self.size.width || y >= self.size.height {
            return false;
        }
        let idx = y as usize * self.size.width as usize + x as usize;
        self.foreground_runs().any(|(s, e)| idx >= s && idx < e)
    }

    /// Whether a continuous position falls on a foreground pixel.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 {
            return false;
        }
        let w = self.size.width as f64;
        let h = self.size.height as f64;
        if x > w || y > h {
            return false;
        }
        // The far image edge belongs to the last pixel.
        let px = (x.floor() as u32).min(self.size.width - 1);
        let py = (y.floor() as u32).min(self.size.height - 1);
        self.contains(px, py)
    }

    /// Widest horizontal extent over all rows, in pixels.
    pub fn widest_row_px(&self) -> u32 {
        let w = self.size.width as usize;
        let dense = self.to_dense();
        dense
            .chunks(w)
            .filter_map(|row| {
                let first = row.iter().position(|&p| p)?;
                let last = row.iter().rposition(|&p| p)?;
                Some((last - first + 1) as u32)
            })
            .max()
            .unwrap_or(0)
    }

    /// Tallest vertical extent over all columns, in pixels.
    pub fn tallest_column_px(&self) -> u32 {
        let w = self.size.width as usize;
        let h = self.size.height as usize;
        let dense = self.to_dense();
        (0..w)
            .filter_map(|x| {
                let first = (0..h).find(|&y| dense[y * w + x])?;
                let last = (0..h).rev().find(|&y| dense[y * w + x])?;
                Some((last - first + 1) as u32)
            })
            .max()
            .unwrap_or(0)
    }

    /// Nearest-neighbour resampling into another frame.
    pub fn resample(&self, to: ImageSize) -> Rle {
        if to == self.size {
            return self.clone();
        }
        let src = self.to_dense();
        let (sw, sh) = (self.size.width as usize, self.size.height as usize);
        let mut out = Vec::with_capacity(to.pixel_count());
        for y in 0..to.height as usize {
            let sy = ((y as f64 + 0.5) * sh as f64 / to.height as f64) as usize;
            let sy = sy.min(sh - 1);
            for x in 0..to.width as usize {
                let sx = ((x as f64 + 0.5) * sw as f64 / to.width as f64) as usize;
                out.push(src[sy * sw + sx.min(sw - 1)]);
            }
        }
        Rle::from_dense(to, &out).expect("length matches target size")
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major RGB image with channels interleaved, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Per-pixel probability of a successful interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl AffordanceMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "affordance buffer of {} values for {width}x{height}",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Highest-probability pixel; ties go to the lowest `(row, col)`.
    pub fn argmax(&self) -> (usize, usize) {
        argmax_masked(&self.values, self.width, |_| true).unwrap_or((0, 0))
    }
}

/// Row-major argmax over entries accepted by `keep`, first index wins ties.
pub fn argmax_masked(values: &[f64], width: usize, keep: impl Fn(usize) -> bool) -> Option<(usize, usize)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if !keep(i) || v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| (i / width, i % width))
}

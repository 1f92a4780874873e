use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample mean with its standard error (`s / √n`, `s` with `n − 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub std_error: f64,
    /// `1.96 · std_error`.
    pub ci95: f64,
}

impl MeanSe {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::Config(format!(
                "standard error needs at least 2 values, got {n}"
            )));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std_dev = var.sqrt();
        let std_error = std_dev / (n as f64).sqrt();
        Ok(Self {
            n,
            mean,
            std_dev,
            std_error,
            ci95: 1.96 * std_error,
        })
    }
}

/// Standard error of the difference of two independent means.
pub fn pooled_std_error(a: &MeanSe, b: &MeanSe) -> f64 {
    (a.std_error.powi(2) + b.std_error.powi(2)).sqrt()
}

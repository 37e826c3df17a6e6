//! Gaussian kernel density estimation with Silverman's bandwidth.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Silverman's rule of thumb: `1.06 * sd * n^(-1/5)` with the sample
/// standard deviation.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Argument(alloc::format!(
            "bandwidth needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let sd = libm::sqrt(var);
    if sd == 0.0 {
        return Err(Error::DegenerateVariance(
            "zero standard deviation; bandwidth undefined".into(),
        ));
    }
    Ok(1.06 * sd * libm::pow(n, -0.2))
}

/// Evaluate the Gaussian-kernel density estimate at the given points.
pub fn kde_density(values: &[f64], eval_points: &[f64]) -> Result<Vec<f64>> {
    let h = silverman_bandwidth(values)?;
    let norm = 1.0 / (values.len() as f64 * h * libm::sqrt(2.0 * core::f64::consts::PI));
    Ok(eval_points
        .iter()
        .map(|&x| {
            let mut sum = 0.0;
            for &v in values {
                let u = (x - v) / h;
                sum += libm::exp(-0.5 * u * u);
            }
            norm * sum
        })
        .collect())
}

//! Reconstruction quality measures.

use crate::error::{Error, Result};
use crate::grid::Field;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    pub max_error: f64,
    pub mse: f64,
    /// Peak signal-to-noise ratio in dB over the original's value range;
    /// infinite for an exact match.
    pub psnr: f64,
}

pub fn max_abs_error(original: &[f64], reconstructed: &[f64]) -> f64 {
    original
        .iter()
        .zip(reconstructed)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

pub fn mse(original: &[f64], reconstructed: &[f64]) -> f64 {
    if original.is_empty() {
        return 0.0;
    }
    let sum: f64 = original
        .iter()
        .zip(reconstructed)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    sum / original.len() as f64
}

pub fn psnr(range: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        return f64::INFINITY;
    }
    20.0 * range.log10() - 10.0 * mse.log10()
}

pub fn quality(original: &Field, reconstructed: &Field) -> Result<Quality> {
    if original.dims() != reconstructed.dims() {
        return Err(Error::InvalidShape("fields differ in shape".into()));
    }
    let a = original.to_f64_vec();
    let b = reconstructed.to_f64_vec();
    let (lo, hi) = original.value_range();
    let m = mse(&a, &b);
    Ok(Quality {
        max_error: max_abs_error(&a, &b),
        mse: m,
        psnr: psnr(hi - lo, m),
    })
}

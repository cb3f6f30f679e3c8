//! Image quality metrics: MSE, PSNR, gradient energy.

use crate::error::{invalid, Result};
use crate::image::Image;

/// PSNR value reported when the MSE is exactly zero, keeping logs finite.
pub const PSNR_CAP_DB: f64 = 99.0;

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(invalid("mse requires equal-length non-empty inputs"));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in decibels: 10·log10(peak² / MSE).
/// Returns [`PSNR_CAP_DB`] when the MSE is zero.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(invalid("psnr requires images of identical shape"));
    }
    psnr_slices(a.data(), b.data(), peak)
}

pub fn psnr_slices(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Mean of squared forward differences in x and y, over all channels.
/// Zero iff the image is constant.
pub fn gradient_energy(img: &Image) -> f64 {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut sum = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w.saturating_sub(1) {
                let d = img.get(y, x + 1, ch) - img.get(y, x, ch);
                sum += d * d;
                count += 1;
            }
        }
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                let d = img.get(y + 1, x, ch) - img.get(y, x, ch);
                sum += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

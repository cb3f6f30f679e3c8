//! sRGB ↔ CIE Lab conversion and Lab chroma transfer.
//!
//! Constants follow the CIE standard with a D65 white point so Lab values
//! are reproducible bit-for-bit at f64:
//! - sRGB companding threshold 0.04045 / 12.92 / 1.055 / 2.4
//! - sRGB→XYZ matrix (D65, 2° observer), rows summing to the white point
//! - white point Xn, Yn, Zn = 0.95047, 1.0, 1.08883
//! - Lab knee at (6/29)^3
//!
//! The XYZ→sRGB direction uses the exact f64 inverse of the forward matrix
//! rather than published rounded constants, so round trips are limited only
//! by the companding functions (well inside 1e-6 for in-gamut colors).

use crate::error::{invalid, Result};
use crate::image::Image;

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

fn srgb_linearize(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_compand(c: f64) -> f64 {
    if c <= 0.04045 / 12.92 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// Exact inverse of the forward matrix, computed at f64.
fn xyz_to_srgb_matrix() -> [[f64; 3]; 3] {
    let m = &SRGB_TO_XYZ;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    inv
}

/// One sRGB pixel ([0,1] companded) to Lab (L in [0,100]).
pub fn rgb_pixel_to_lab(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let (rl, gl, bl) = (srgb_linearize(r), srgb_linearize(g), srgb_linearize(b));
    let m = &SRGB_TO_XYZ;
    let x = m[0][0] * rl + m[0][1] * gl + m[0][2] * bl;
    let y = m[1][0] * rl + m[1][1] * gl + m[1][2] * bl;
    let z = m[2][0] * rl + m[2][1] * gl + m[2][2] * bl;
    let fx = lab_f(x / WHITE[0]);
    let fy = lab_f(y / WHITE[1]);
    let fz = lab_f(z / WHITE[2]);
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

/// One Lab pixel back to sRGB. Out-of-gamut results are not clamped.
pub fn lab_pixel_to_rgb(l: f64, a: f64, b: f64) -> (f64, f64, f64) {
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let x = WHITE[0] * lab_f_inv(fx);
    let y = WHITE[1] * lab_f_inv(fy);
    let z = WHITE[2] * lab_f_inv(fz);
    let inv = xyz_to_srgb_matrix();
    let rl = inv[0][0] * x + inv[0][1] * y + inv[0][2] * z;
    let gl = inv[1][0] * x + inv[1][1] * y + inv[1][2] * z;
    let bl = inv[2][0] * x + inv[2][1] * y + inv[2][2] * z;
    (srgb_compand(rl), srgb_compand(gl), srgb_compand(bl))
}

/// Convert a 3-channel sRGB image to Lab planes (channel 0 = L, 1 = a, 2 = b).
pub fn rgb_to_lab(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(invalid("rgb_to_lab requires a 3-channel image"));
    }
    let mut out = Image::zeros(img.height(), img.width(), 3);
    let src = img.data();
    let dst = out.data_mut();
    for (d, s) in dst.chunks_exact_mut(3).zip(src.chunks_exact(3)) {
        let (l, a, b) = rgb_pixel_to_lab(s[0], s[1], s[2]);
        d[0] = l;
        d[1] = a;
        d[2] = b;
    }
    Ok(out)
}

/// Convert Lab planes back to sRGB.
pub fn lab_to_rgb(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(invalid("lab_to_rgb requires a 3-channel image"));
    }
    let mut out = Image::zeros(img.height(), img.width(), 3);
    let src = img.data();
    let dst = out.data_mut();
    for (d, s) in dst.chunks_exact_mut(3).zip(src.chunks_exact(3)) {
        let (r, g, b) = lab_pixel_to_rgb(s[0], s[1], s[2]);
        d[0] = r;
        d[1] = g;
        d[2] = b;
    }
    Ok(out)
}

/// Keep the lightness of `luma_source` and take the a,b chroma planes from
/// `chroma_source`. Also returns the assembled pre-conversion Lab image so
/// callers can inspect the exact a,b planes that were used.
pub fn color_transfer_ab_with_lab(
    luma_source: &Image,
    chroma_source: &Image,
) -> Result<(Image, Image)> {
    if !luma_source.same_shape(chroma_source) {
        return Err(invalid("color transfer requires images of identical shape"));
    }
    if luma_source.channels() != 3 {
        return Err(invalid("color transfer requires 3-channel images"));
    }
    let lab_luma = rgb_to_lab(luma_source)?;
    let lab_chroma = rgb_to_lab(chroma_source)?;
    let mut lab = lab_chroma;
    let l_src = lab_luma.data();
    let dst = lab.data_mut();
    for (d, s) in dst.chunks_exact_mut(3).zip(l_src.chunks_exact(3)) {
        d[0] = s[0];
    }
    let rgb = lab_to_rgb(&lab)?;
    Ok((rgb, lab))
}

/// Lightness from one image, chroma from another; see
/// [`color_transfer_ab_with_lab`] for the pre-conversion Lab planes.
pub fn color_transfer_ab(luma_source: &Image, chroma_source: &Image) -> Result<Image> {
    color_transfer_ab_with_lab(luma_source, chroma_source).map(|(rgb, _)| rgb)
}

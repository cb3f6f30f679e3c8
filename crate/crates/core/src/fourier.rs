//! 2-D DFT machinery: transforms, padding, half-spectrum compaction,
//! and frequency-domain convolution.
//!
//! Conventions, fixed for the whole crate:
//! - Unitary normalization (1/√(H·W)) in both directions, so round trips
//!   and Parseval hold exactly and fusion/Wiener math is normalization-free.
//! - Centered (fftshifted) frequency indexing: a spectrum stores coefficient
//!   (u, v) at row v + ⌊H/2⌋, column u + ⌊W/2⌋, where u is the horizontal
//!   and v the vertical integer frequency.
//! - With this pair of conventions the transform is its own adjoint pair:
//!   the adjoint of `dft2` is `idft2` and vice versa, which the network
//!   backward passes rely on.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};
use crate::image::{Image, Patch};

pub type Complex64 = Complex<f64>;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place 2-D FFT over natural (unshifted) layout, unnormalized.
pub(crate) fn fft2_raw(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(data.len(), h * w);
    let row_fft = plan(w, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); row_fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(w) {
        row_fft.process_with_scratch(row, &mut scratch);
    }
    let col_fft = plan(h, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); col_fft.get_inplace_scratch_len()];
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for (y, c) in col.iter_mut().enumerate() {
            *c = data[y * w + x];
        }
        col_fft.process_with_scratch(&mut col, &mut scratch);
        for (y, c) in col.iter().enumerate() {
            data[y * w + x] = *c;
        }
    }
}

/// Natural layout -> centered layout (fftshift), via two segment copies
/// per row.
pub(crate) fn shift_to_centered(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let (ch, cw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(h * w);
    for cy in 0..h {
        let sy = (cy + h - ch) % h;
        let row = &data[sy * w..(sy + 1) * w];
        // out[cx] = row[(cx + w - cw) % w]
        out.extend_from_slice(&row[w - cw..]);
        out.extend_from_slice(&row[..w - cw]);
    }
    out
}

/// Centered layout -> natural layout (inverse fftshift).
pub(crate) fn shift_to_natural(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let (ch, cw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(h * w);
    for ky in 0..h {
        let cy = (ky + ch) % h;
        let row = &data[cy * w..(cy + 1) * w];
        // out[kx] = row[(kx + cw) % w]
        out.extend_from_slice(&row[cw..]);
        out.extend_from_slice(&row[..cw]);
    }
    out
}

/// Complex H×W spectrum in centered layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    h: usize,
    w: usize,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(h: usize, w: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != h * w {
            return Err(invalid("spectrum data length does not match shape"));
        }
        Ok(Self { h, w, coeffs })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, coeffs: vec![Complex64::new(0.0, 0.0); h * w] }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    /// Side length for square spectra; panics on rectangular ones.
    pub fn side(&self) -> usize {
        assert_eq!(self.h, self.w, "side() requires a square spectrum");
        self.h
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Valid horizontal frequencies are −⌊W/2⌋ ..= W−1−⌊W/2⌋, vertical likewise.
    #[inline]
    pub fn index(&self, u: i64, v: i64) -> usize {
        let row = (v + (self.h / 2) as i64) as usize;
        let col = (u + (self.w / 2) as i64) as usize;
        row * self.w + col
    }

    #[inline]
    pub fn at(&self, u: i64, v: i64) -> Complex64 {
        self.coeffs[self.index(u, v)]
    }

    #[inline]
    pub fn set(&mut self, u: i64, v: i64, z: Complex64) {
        let i = self.index(u, v);
        self.coeffs[i] = z;
    }

    /// Squared l2 norm of the coefficients.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Unitary centered 2-D DFT of a square real patch.
pub fn dft2(p: &Patch) -> Spectrum {
    dft2_plane(p.data(), p.side(), p.side())
}

/// Unitary centered 2-D DFT of a real H×W plane.
pub fn dft2_plane(plane: &[f64], h: usize, w: usize) -> Spectrum {
    debug_assert_eq!(plane.len(), h * w);
    let mut data: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_raw(&mut data, h, w, false);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for z in &mut data {
        *z *= scale;
    }
    Spectrum { h, w, coeffs: shift_to_centered(&data, h, w) }
}

/// Unitary centered inverse DFT; the imaginary residue is discarded.
/// For conjugate-symmetric spectra (real origin) the residue is below 1e-9.
pub fn idft2(s: &Spectrum) -> Patch {
    let side = s.side();
    Patch::new(side, idft2_plane(s)).expect("square plane")
}

/// Rectangular inverse transform returning the real part as a flat plane.
pub fn idft2_plane(s: &Spectrum) -> Vec<f64> {
    let mut data = shift_to_natural(&s.coeffs, s.h, s.w);
    fft2_raw(&mut data, s.h, s.w, true);
    let scale = 1.0 / ((s.h * s.w) as f64).sqrt();
    data.iter().map(|z| z.re * scale).collect()
}

/// Center a patch inside a larger zero patch. Both sides must be odd.
pub fn pad_center(p: &Patch, target: usize) -> Result<Patch> {
    if target < p.side() {
        return Err(invalid(format!(
            "pad target {target} smaller than patch side {}",
            p.side()
        )));
    }
    if p.side() % 2 == 0 || target % 2 == 0 {
        return Err(invalid("pad_center requires odd sides"));
    }
    let off = (target - p.side()) / 2;
    let mut out = Patch::zeros(target);
    for y in 0..p.side() {
        for x in 0..p.side() {
            out.set(y + off, x + off, p.get(y, x));
        }
    }
    Ok(out)
}

/// Boundary handling for [`fft_convolve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// The image is treated as its own periodic world.
    Circular,
    /// Mirror-pad by ⌊K/2⌋ pixels (border sample not repeated), convolve, crop.
    ReflectPad,
}

/// Embed a K×K kernel into an H×W plane in natural layout, with the kernel
/// center at index (0, 0), wrapping negative offsets.
pub(crate) fn embed_kernel_natural(kernel: &[f64], kside: usize, h: usize, w: usize) -> Vec<f64> {
    let c = (kside / 2) as i64;
    let mut out = vec![0.0; h * w];
    for a in 0..kside {
        let dy = (a as i64 - c).rem_euclid(h as i64) as usize;
        for b in 0..kside {
            let dx = (b as i64 - c).rem_euclid(w as i64) as usize;
            out[dy * w + dx] += kernel[a * kside + b];
        }
    }
    out
}

/// Circular convolution of one plane with a centered kernel via the FFT.
pub(crate) fn circular_convolve_plane(
    plane: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    kside: usize,
) -> Vec<f64> {
    let kmap = embed_kernel_natural(kernel, kside, h, w);
    let mut kf: Vec<Complex64> = kmap.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_raw(&mut kf, h, w, false);
    circular_convolve_with_kernel_spectrum(plane, h, w, &kf)
}

/// Same as [`circular_convolve_plane`] but with a precomputed unnormalized
/// kernel spectrum in natural layout (lets callers amortize the kernel FFT).
pub(crate) fn circular_convolve_with_kernel_spectrum(
    plane: &[f64],
    h: usize,
    w: usize,
    kernel_spectrum: &[Complex64],
) -> Vec<f64> {
    let mut pf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_raw(&mut pf, h, w, false);
    for (p, k) in pf.iter_mut().zip(kernel_spectrum) {
        *p *= *k;
    }
    fft2_raw(&mut pf, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    pf.iter().map(|z| z.re * scale).collect()
}

/// Convolve an image with a blur kernel (weights row-major, side `kside`).
pub fn fft_convolve(img: &Image, kernel: &[f64], kside: usize, boundary: Boundary) -> Result<Image> {
    if kernel.len() != kside * kside {
        return Err(invalid("kernel data length does not match side"));
    }
    if kside == 0 || kside > img.height().min(img.width()) {
        return Err(invalid(format!(
            "kernel side {kside} invalid for {}x{} image",
            img.height(),
            img.width()
        )));
    }
    match boundary {
        Boundary::Circular => {
            let (h, w) = (img.height(), img.width());
            let planes: Vec<Vec<f64>> = (0..img.channels())
                .map(|c| circular_convolve_plane(&img.plane(c), h, w, kernel, kside))
                .collect();
            Image::from_planes(h, w, &planes)
        }
        Boundary::ReflectPad => {
            let pad = kside / 2;
            let padded = img.reflect_pad(pad)?;
            let conv = fft_convolve(&padded, kernel, kside, Boundary::Circular)?;
            conv.crop(pad, pad, img.height(), img.width())
        }
    }
}

/// All coefficients with max(|u|, |v|) ≤ radius as a (2r+1)² centered grid.
pub fn lowpass_coeffs(s: &Spectrum, radius: usize) -> Result<Spectrum> {
    let side = s.side();
    if radius >= side.div_ceil(2) {
        return Err(invalid(format!(
            "lowpass radius {radius} too large for side {side}"
        )));
    }
    let r = radius as i64;
    let out_side = 2 * radius + 1;
    let mut out = Spectrum::zeros(out_side, out_side);
    for v in -r..=r {
        for u in -r..=r {
            out.set(u, v, s.at(u, v));
        }
    }
    Ok(out)
}

/// Canonical ordering of the non-redundant half-plane for an odd side:
/// DC first, then the rest of row v = 0 (u = 1..=m), then the full rows
/// v = 1..=m. Exactly (P²+1)/2 coordinates.
pub fn half_plane_coords(side: usize) -> Vec<(i64, i64)> {
    assert!(side % 2 == 1, "half-plane ordering is defined for odd sides");
    let m = (side / 2) as i64;
    let mut out = Vec::with_capacity((side * side + 1) / 2);
    for u in 0..=m {
        out.push((u, 0));
    }
    for v in 1..=m {
        for u in -m..=m {
            out.push((u, v));
        }
    }
    out
}

/// Flat centered-layout indices of [`half_plane_coords`], cached per side.
pub(crate) fn half_plane_indices(side: usize) -> &'static [usize] {
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static [usize]>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("index cache");
    map.entry(side).or_insert_with(|| {
        let c = (side / 2) as i64;
        let v: Vec<usize> = half_plane_coords(side)
            .into_iter()
            .map(|(u, v)| ((v + c) * side as i64 + (u + c)) as usize)
            .collect();
        Box::leak(v.into_boxed_slice())
    })
}

/// The (P²+1)/2 non-redundant coefficients of a conjugate-symmetric square
/// spectrum with odd side, in the canonical ordering of [`half_plane_coords`].
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpectrum {
    side: usize,
    coeffs: Vec<Complex64>,
}

impl HalfSpectrum {
    pub fn compact(s: &Spectrum) -> Result<Self> {
        let side = s.side();
        if side % 2 == 0 {
            return Err(invalid("half-spectrum compaction requires an odd side"));
        }
        let coeffs = half_plane_indices(side)
            .iter()
            .map(|&i| s.coeffs[i])
            .collect();
        Ok(Self { side, coeffs })
    }

    pub fn from_coeffs(side: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if side % 2 == 0 || coeffs.len() != (side * side + 1) / 2 {
            return Err(invalid("half-spectrum coefficient count mismatch"));
        }
        Ok(Self { side, coeffs })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Reconstruct the full conjugate-symmetric spectrum.
    pub fn expand(&self) -> Spectrum {
        let mut out = Spectrum::zeros(self.side, self.side);
        for ((u, v), &z) in half_plane_coords(self.side).into_iter().zip(&self.coeffs) {
            out.set(u, v, z);
            if (u, v) != (0, 0) {
                out.set(-u, -v, z.conj());
            }
        }
        out
    }
}

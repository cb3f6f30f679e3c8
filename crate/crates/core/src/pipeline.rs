//! Whole-image restoration: burst normalization and integer alignment,
//! sliding-window network inference with Hanning recomposition, the vanilla
//! whole-image fusion baseline, and Lab chroma transfer.

use rayon::prelude::*;

use crate::color::{color_transfer_ab_with_lab, rgb_to_lab};
use crate::error::{invalid, Error, Result};
use crate::fba::{self};
use crate::fourier::{dft2_plane, fft2_raw, Complex64, Spectrum};
use crate::image::{Burst, Image, Patch};
use crate::metrics::gradient_energy;
use crate::net::BurstNet;

#[derive(Debug, Clone, PartialEq)]
pub struct DeployConfig {
    /// Patch grid stride in pixels.
    pub stride: usize,
    /// Burst length the network expects (pad by duplication, reduce by
    /// sharpness selection).
    pub burst: usize,
    /// Gaussian smoothing of the fusion weights, inference only.
    pub smoothing_sigma: f64,
    /// Exponent of the vanilla fusion baseline used for chroma.
    pub vanilla_p: f64,
    /// Integer-shift alignment to the sharpest frame.
    pub align: bool,
    /// Replace the network output's chroma with the baseline's.
    pub color_transfer: bool,
}

impl Default for DeployConfig {
    fn default() -> Self {
        Self {
            stride: 5,
            burst: 14,
            smoothing_sigma: 2.0,
            vanilla_p: 11.0,
            align: true,
            color_transfer: true,
        }
    }
}

/// Estimated integer translation of `frame` relative to `reference` by
/// phase correlation of single-channel planes.
pub fn phase_correlate(
    reference: &[f64],
    frame: &[f64],
    h: usize,
    w: usize,
) -> (i64, i64) {
    let mut fr: Vec<Complex64> = reference.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut ff: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_raw(&mut fr, h, w, false);
    fft2_raw(&mut ff, h, w, false);
    let mut cross: Vec<Complex64> = fr
        .iter()
        .zip(&ff)
        .map(|(a, b)| {
            let p = a * b.conj();
            let n = p.norm();
            if n > 1e-12 {
                p / n
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    fft2_raw(&mut cross, h, w, true);
    let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
    for (i, z) in cross.iter().enumerate() {
        if z.re > best_v {
            best_v = z.re;
            best = i;
        }
    }
    // The correlation surface peaks at (−dy mod H, −dx mod W).
    let py = (best / w) as i64;
    let px = (best % w) as i64;
    let wrap = |p: i64, n: i64| if p > n / 2 { p - n } else { p };
    let dy = -wrap(py, h as i64);
    let dx = -wrap(px, w as i64);
    (dy, dx)
}

/// Bring a burst to exactly `n` frames: duplicate cyclically when short,
/// keep the `n` frames with the highest gradient energy (original order
/// preserved, ties broken toward earlier frames) when long. When `align` is
/// set, every frame is circularly shifted onto the sharpest frame by
/// phase correlation of the grayscale planes.
pub fn normalize_burst(images: &[Image], n: usize, align: bool) -> Result<Burst> {
    if n == 0 {
        return Err(invalid("target burst length must be positive"));
    }
    let burst = Burst::new(images.to_vec())?;
    let mut frames = burst.into_frames();

    if frames.len() > n {
        let mut order: Vec<usize> = (0..frames.len()).collect();
        let energies: Vec<f64> = frames.iter().map(gradient_energy).collect();
        order.sort_by(|&a, &b| {
            energies[b]
                .partial_cmp(&energies[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut keep: Vec<usize> = order[..n].to_vec();
        keep.sort_unstable();
        frames = keep.into_iter().map(|i| frames[i].clone()).collect();
    } else if frames.len() < n {
        let distinct = frames.len();
        for i in distinct..n {
            frames.push(frames[i % distinct].clone());
        }
    }

    if align && frames.len() > 1 {
        let energies: Vec<f64> = frames.iter().map(gradient_energy).collect();
        let sharpest = energies
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (h, w) = (frames[0].height(), frames[0].width());
        let ref_plane = frames[sharpest].to_gray().plane(0);
        for i in 0..frames.len() {
            if i == sharpest {
                continue;
            }
            let plane = frames[i].to_gray().plane(0);
            let (dy, dx) = phase_correlate(&ref_plane, &plane, h, w);
            if (dy, dx) != (0, 0) {
                frames[i] = frames[i].circular_shift(-dy, -dx);
            }
        }
    }
    Burst::new(frames)
}

/// Square 2-D Hanning window (outer product of 1-D raised cosines);
/// side 1 degenerates to [1].
pub fn hanning2d(side: usize) -> Vec<f64> {
    assert!(side >= 1);
    if side == 1 {
        return vec![1.0];
    }
    let line: Vec<f64> = (0..side)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (side - 1) as f64).cos()))
        .collect();
    let mut out = Vec::with_capacity(side * side);
    for y in &line {
        for x in &line {
            out.push(y * x);
        }
    }
    out
}

/// Blend overlapping patches into an out_h×out_w plane: each patch is
/// weighted by a Hanning window, accumulated, and normalized by the summed
/// window. Positions are top-left corners and may extend past the canvas
/// (the overhang is discarded). Any canvas pixel left with zero coverage is
/// an error reporting the uncovered bounding box.
pub fn recompose(
    patches: &[Patch],
    positions: &[(i64, i64)],
    out_h: usize,
    out_w: usize,
) -> Result<Vec<f64>> {
    if patches.len() != positions.len() {
        return Err(invalid("one position per patch required"));
    }
    let side = match patches.first() {
        Some(p) => p.side(),
        None => return Err(invalid("no patches to recompose")),
    };
    if patches.iter().any(|p| p.side() != side) {
        return Err(invalid("all patches must share one side"));
    }
    // The Hanning window is exactly zero on the patch border; a tiny floor
    // keeps single-coverage border pixels defined (the window still cancels
    // in num/den) without disturbing overlapped regions.
    let window: Vec<f64> = hanning2d(side).iter().map(|w| w.max(1e-12)).collect();
    let mut num = vec![0.0; out_h * out_w];
    let mut den = vec![0.0; out_h * out_w];
    for (patch, &(py, px)) in patches.iter().zip(positions) {
        for y in 0..side {
            let oy = py + y as i64;
            if oy < 0 || oy >= out_h as i64 {
                continue;
            }
            for x in 0..side {
                let ox = px + x as i64;
                if ox < 0 || ox >= out_w as i64 {
                    continue;
                }
                let wgt = window[y * side + x];
                let o = oy as usize * out_w + ox as usize;
                num[o] += wgt * patch.get(y, x);
                den[o] += wgt;
            }
        }
    }
    let mut bbox: Option<((usize, usize), (usize, usize))> = None;
    for y in 0..out_h {
        for x in 0..out_w {
            if den[y * out_w + x] == 0.0 {
                let b = bbox.get_or_insert(((y, x), (y, x)));
                b.0 .0 = b.0 .0.min(y);
                b.0 .1 = b.0 .1.min(x);
                b.1 .0 = b.1 .0.max(y);
                b.1 .1 = b.1 .1.max(x);
            }
        }
    }
    if let Some((min, max)) = bbox {
        return Err(Error::Coverage { min, max });
    }
    for (n, d) in num.iter_mut().zip(&den) {
        *n /= d;
    }
    Ok(num)
}

/// Stride-grid positions covering [0, len − window], always including the
/// flush-right position.
fn grid_positions(len: usize, window: usize, stride: usize) -> Vec<usize> {
    let last = len - window;
    let mut out: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if *out.last().expect("non-empty grid") != last {
        out.push(last);
    }
    out
}

const PAD: usize = 32;
const WIN: usize = 65;
const OUT: usize = 33;

/// Run the network over one padded channel plane and recompose.
fn restore_plane(
    planes: &[Vec<f64>],
    h: usize,
    w: usize,
    net: &BurstNet,
    cfg: &DeployConfig,
) -> Result<Vec<f64>> {
    let (hp, wp) = (h + 2 * PAD, w + 2 * PAD);
    let ys = grid_positions(hp, WIN, cfg.stride);
    let xs = grid_positions(wp, WIN, cfg.stride);
    let mut jobs = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            jobs.push((y, x));
        }
    }
    let results: Vec<Result<Patch>> = jobs
        .par_iter()
        .map(|&(y, x)| {
            let burst: Vec<Patch> = planes
                .iter()
                .map(|pl| Patch::from_plane_region(pl, wp, y, x, WIN))
                .collect();
            net.predict_smoothed(&burst, cfg.smoothing_sigma)
        })
        .collect();
    let mut patches = Vec::with_capacity(jobs.len());
    for r in results {
        patches.push(r?);
    }
    // The 33×33 outputs sit at the window centers; map from padded
    // coordinates back onto the original canvas.
    let off = ((WIN - OUT) / 2) as i64 - PAD as i64;
    let positions: Vec<(i64, i64)> = jobs
        .iter()
        .map(|&(y, x)| (y as i64 + off, x as i64 + off))
        .collect();
    recompose(&patches, &positions, h, w)
}

/// Whole-image vanilla fusion on an already-normalized burst: per channel,
/// one full-image transform per frame, magnitude-power weights, Gaussian
/// weight smoothing, weighted fusion, inverse transform.
pub fn fba_fuse_whole(burst: &Burst, p: f64, smoothing_sigma: f64) -> Result<Image> {
    let frames = burst.frames();
    let (h, w, c) = (
        frames[0].height(),
        frames[0].width(),
        frames[0].channels(),
    );
    let mut planes = Vec::with_capacity(c);
    for ch in 0..c {
        let spectra: Vec<Spectrum> = frames
            .iter()
            .map(|f| dft2_plane(&f.plane(ch), h, w))
            .collect();
        let weights = fba::fba_weights(&spectra, p)?;
        let weights = fba::smooth_weights(&weights, smoothing_sigma);
        planes.push(fba::fuse_plane(&spectra, &weights)?);
    }
    Image::from_planes(h, w, &planes)
}

/// The vanilla fusion baseline on raw images: align (optional), fuse,
/// clamp. This is the comparison method and the chroma source.
pub fn fba_only(images: &[Image], p: f64, smoothing_sigma: f64, align: bool) -> Result<Image> {
    let burst = normalize_burst(images, images.len(), align)?;
    let mut out = fba_fuse_whole(&burst, p, smoothing_sigma)?;
    out.clamp01();
    Ok(out)
}

/// Everything [`deblur_burst`] produces, including the intermediate images
/// and the pre-conversion Lab planes of the color transfer.
pub struct DeblurOutput {
    /// Final restored image (after optional chroma transfer), clamped.
    pub image: Image,
    /// Network restoration before color transfer, clamped.
    pub network_image: Image,
    /// Vanilla fusion baseline on the same normalized burst, clamped.
    pub fba_image: Image,
    /// Assembled Lab image used for the transfer (L from the network, a and
    /// b copied from the baseline), before conversion back to RGB. None for
    /// single-channel inputs or when the transfer is disabled.
    pub lab_pre: Option<Image>,
}

/// Restore a sharp image from a burst: normalize/align to the network's
/// burst length, slide a 65×65 window with the configured stride over each
/// reflect-padded channel, fuse the network's predictions with Hanning
/// recomposition, then take chroma from the vanilla-fusion baseline.
pub fn deblur_burst(images: &[Image], net: &BurstNet, cfg: &DeployConfig) -> Result<DeblurOutput> {
    if cfg.burst != net.burst_len() {
        return Err(invalid(format!(
            "config burst {} does not match network burst {}",
            cfg.burst,
            net.burst_len()
        )));
    }
    if cfg.stride == 0 || cfg.stride > WIN {
        return Err(invalid("stride must be in 1..=65"));
    }
    let burst = normalize_burst(images, cfg.burst, cfg.align)?;
    let frames = burst.frames();
    let (h, w, c) = (
        frames[0].height(),
        frames[0].width(),
        frames[0].channels(),
    );
    if h < 2 || w < 2 {
        return Err(invalid("image too small to restore"));
    }

    let mut out_planes = Vec::with_capacity(c);
    for ch in 0..c {
        let padded: Vec<Vec<f64>> = frames
            .iter()
            .map(|f| {
                // Extract the channel, then reflect-pad as a 1-channel image.
                let plane = Image::new(h, w, 1, f.plane(ch))?;
                Ok(plane.reflect_pad(PAD.min(h - 1).min(w - 1))?.plane(0))
            })
            .collect::<Result<_>>()?;
        // Small images cannot take the full 32-pixel padding; pad what we
        // can and center-embed into the full padded size.
        let pad_used = PAD.min(h - 1).min(w - 1);
        let planes = if pad_used == PAD {
            padded
        } else {
            embed_padded(&padded, h, w, pad_used)?
        };
        out_planes.push(restore_plane(&planes, h, w, net, cfg)?);
    }
    let mut network_image = Image::from_planes(h, w, &out_planes)?;
    network_image.clamp01();

    let mut fba_image = fba_fuse_whole(&burst, cfg.vanilla_p, cfg.smoothing_sigma)?;
    fba_image.clamp01();

    if cfg.color_transfer && c == 3 {
        let (mut image, lab_pre) = color_transfer_ab_with_lab(&network_image, &fba_image)?;
        image.clamp01();
        Ok(DeblurOutput { image, network_image, fba_image, lab_pre: Some(lab_pre) })
    } else {
        Ok(DeblurOutput {
            image: network_image.clone(),
            network_image,
            fba_image,
            lab_pre: None,
        })
    }
}

/// Re-pad partially padded planes up to the full margin by mirroring the
/// available border, so the sliding grid geometry stays uniform.
fn embed_padded(
    planes: &[Vec<f64>],
    h: usize,
    w: usize,
    pad_used: usize,
) -> Result<Vec<Vec<f64>>> {
    let (hs, ws) = (h + 2 * pad_used, w + 2 * pad_used);
    let img_h = h + 2 * PAD;
    let img_w = w + 2 * PAD;
    let extra = PAD - pad_used;
    planes
        .iter()
        .map(|p| {
            let small = Image::new(hs, ws, 1, p.clone())?;
            // Mirror repeatedly until the margin is filled.
            let mut cur = small;
            let mut remaining = extra;
            while remaining > 0 {
                let step = remaining.min(cur.height() - 1).min(cur.width() - 1);
                cur = cur.reflect_pad(step)?;
                remaining -= step;
            }
            debug_assert_eq!(cur.height(), img_h);
            debug_assert_eq!(cur.width(), img_w);
            Ok(cur.plane(0))
        })
        .collect()
}

/// Convenience: the Lab a,b planes of an image (used by the acceptance
/// checks on chroma transfer).
pub fn lab_ab_planes(img: &Image) -> Result<(Vec<f64>, Vec<f64>)> {
    let lab = rgb_to_lab(img)?;
    Ok((lab.plane(1), lab.plane(2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{BurstNet, NetConfig};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn texture(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::datagen::synthetic_texture(h, w, &mut rng)
    }

    #[test]
    fn hanning_windows() {
        assert_eq!(hanning2d(1), vec![1.0]);
        let w3 = hanning2d(3);
        for (i, v) in w3.iter().enumerate() {
            if i == 4 {
                assert!((v - 1.0).abs() < 1e-15);
            } else {
                assert!(v.abs() < 1e-15);
            }
        }
        let w33 = hanning2d(33);
        for y in 0..33 {
            for x in 0..33 {
                assert!((w33[y * 33 + x] - w33[(32 - y) * 33 + x]).abs() < 1e-12);
                assert!((w33[y * 33 + x] - w33[y * 33 + (32 - x)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phase_correlation_recovers_integer_shifts() {
        let img = texture(48, 64, 1);
        let plane = img.plane(0);
        for (dy, dx) in [(0i64, 0i64), (3, -2), (-7, 5), (10, 10)] {
            let shifted = img.circular_shift(dy, dx);
            let (ey, ex) = phase_correlate(&plane, &shifted.plane(0), 48, 64);
            assert_eq!((ey, ex), (dy, dx), "shift ({dy},{dx})");
        }
    }

    #[test]
    fn normalize_burst_counts() {
        let a = texture(40, 40, 2);
        let b = texture(40, 40, 3);
        let c = texture(40, 40, 4);
        // 3 -> 14 cyclic duplication.
        let burst = normalize_burst(&[a.clone(), b.clone(), c.clone()], 14, false).unwrap();
        assert_eq!(burst.len(), 14);
        for (i, f) in burst.frames().iter().enumerate() {
            let want = [&a, &b, &c][i % 3];
            assert_eq!(f.data(), want.data(), "frame {i}");
        }
        // Exact count passes through unchanged.
        let burst = normalize_burst(&[a.clone(), b.clone(), c.clone()], 3, false).unwrap();
        assert_eq!(burst.frames()[1].data(), b.data());
        // Mixed shapes are rejected.
        let d = texture(40, 41, 5);
        assert!(normalize_burst(&[a.clone(), d], 2, false).is_err());
    }

    #[test]
    fn normalize_burst_keeps_sharpest() {
        // 20 frames with increasing blur; keep the 14 sharpest.
        let sharp = texture(48, 48, 6);
        let mut frames = Vec::new();
        for i in 0..20usize {
            let sigma = i as f64; // kernel spread grows with i
            let img = if i == 0 {
                sharp.clone()
            } else {
                let side = 9;
                let mut k = vec![0.0; side * side];
                for a in 0..side {
                    for b in 0..side {
                        let d2 = ((a as f64 - 4.0).powi(2) + (b as f64 - 4.0).powi(2))
                            / (0.5 + 0.35 * sigma);
                        k[a * side + b] = (-d2).exp();
                    }
                }
                let s: f64 = k.iter().sum();
                for v in &mut k {
                    *v /= s;
                }
                crate::fourier::fft_convolve(&sharp, &k, side, crate::fourier::Boundary::ReflectPad)
                    .unwrap()
            };
            frames.push(img);
        }
        let burst = normalize_burst(&frames, 14, false).unwrap();
        assert_eq!(burst.len(), 14);
        // Sharpness (gradient energy) decreases with blur, so the kept set
        // is exactly the first 14 frames in original order.
        for (i, f) in burst.frames().iter().enumerate() {
            assert_eq!(f.data(), frames[i].data(), "frame {i}");
        }
    }

    #[test]
    fn alignment_undoes_integer_shifts() {
        // A circularly shifted copy must land exactly back on the other
        // frame after alignment, whichever frame wins the sharpness vote
        // (the wrap seam perturbs gradient energies, so the vote is not
        // pinned here).
        let base = texture(48, 48, 7);
        let shifted = base.circular_shift(4, -3);
        let aligned = normalize_burst(&[base.clone(), shifted.clone()], 2, true).unwrap();
        assert_eq!(aligned.frames()[0].data(), aligned.frames()[1].data());

        let unaligned = normalize_burst(&[base, shifted], 2, false).unwrap();
        assert_ne!(unaligned.frames()[0].data(), unaligned.frames()[1].data());
    }

    #[test]
    fn recompose_identity_on_grid() {
        let img = texture(80, 80, 8);
        let padded = img.reflect_pad(32).unwrap();
        let plane = padded.plane(0);
        let (hp, wp) = (144, 144);
        let ys = grid_positions(hp, 65, 5);
        let mut patches = Vec::new();
        let mut positions = Vec::new();
        for &y in &ys {
            for &x in &ys {
                let window = Patch::from_plane_region(&plane, wp, y, x, 65);
                patches.push(window.center_crop(33).unwrap());
                positions.push((y as i64 - 16, x as i64 - 16));
            }
        }
        let out = recompose(&patches, &positions, 80, 80).unwrap();
        for (a, b) in out.iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn recompose_single_full_patch_is_identity() {
        let img = texture(33, 33, 9);
        let patch = Patch::new(33, img.plane(0)).unwrap();
        let out = recompose(&[patch.clone()], &[(0, 0)], 33, 33).unwrap();
        for (a, b) in out.iter().zip(patch.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn recompose_blends_convexly_and_reports_coverage() {
        let zeros = Patch::zeros(33);
        let ones = Patch::constant(33, 1.0);
        let out = recompose(&[zeros, ones], &[(0, 0), (0, 16)], 33, 49).unwrap();
        let mut last = 0.0;
        for x in 0..49 {
            let v = out[16 * 49 + x];
            assert!((0.0..=1.0).contains(&v));
            if x > 16 {
                assert!(v >= last - 1e-12, "monotone across the overlap");
            }
            last = v;
        }
        // A far-away canvas region is uncovered.
        let err = recompose(&[Patch::zeros(33)], &[(0, 0)], 100, 100);
        match err {
            Err(Error::Coverage { min, max }) => {
                assert_eq!(min.0, 0);
                assert_eq!(max, (99, 99));
            }
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    fn tiny_net(burst: usize, seed: u64) -> BurstNet {
        BurstNet::new(NetConfig { burst, width_scale: 1.0 / 1024.0 }, seed).unwrap()
    }

    #[test]
    fn fba_only_single_image_is_identity() {
        let img = texture(40, 40, 10);
        let out = fba_only(&[img.clone()], 11.0, 0.0, false).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fba_only_p0_is_temporal_mean() {
        let a = texture(32, 32, 11);
        let b = texture(32, 32, 12);
        let out = fba_only(&[a.clone(), b.clone()], 0.0, 0.0, false).unwrap();
        for i in 0..a.data().len() {
            let mean = 0.5 * (a.data()[i] + b.data()[i]);
            assert!((out.data()[i] - mean.clamp(0.0, 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn fba_prefers_the_sharp_frame() {
        let sharp = texture(48, 48, 13);
        let blurred = crate::fourier::fft_convolve(
            &sharp,
            &vec![1.0 / 49.0; 49],
            7,
            crate::fourier::Boundary::ReflectPad,
        )
        .unwrap();
        let frames = vec![sharp.clone(), blurred.clone(), blurred.clone(), blurred];
        let fused = fba_only(&frames, 30.0, 0.0, false).unwrap();
        let mean = fba_only(&frames, 0.0, 0.0, false).unwrap();
        let p_f = crate::metrics::psnr(&fused, &sharp, 1.0).unwrap();
        let p_m = crate::metrics::psnr(&mean, &sharp, 1.0).unwrap();
        assert!(p_f > p_m + 1.0, "fused {p_f:.2} dB vs mean {p_m:.2} dB");
    }

    #[test]
    fn deblur_runs_on_single_frame_burst() {
        let img = texture(48, 48, 14);
        let net = tiny_net(14, 15);
        let cfg = DeployConfig { align: false, ..Default::default() };
        let out = deblur_burst(&[img], &net, &cfg).unwrap();
        assert_eq!(out.image.height(), 48);
        assert!(out.image.data().iter().all(|v| v.is_finite()));
        assert!(out.lab_pre.is_none());
    }

    #[test]
    fn deblur_color_chroma_matches_baseline_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let planes: Vec<Vec<f64>> = (0..3)
            .map(|s| texture(40, 40, 20 + s).plane(0))
            .collect();
        let color = Image::from_planes(40, 40, &planes).unwrap();
        let blurred = crate::fourier::fft_convolve(
            &color,
            &vec![1.0 / 9.0; 9],
            3,
            crate::fourier::Boundary::ReflectPad,
        )
        .unwrap();
        let mut frames = vec![color.clone(), blurred];
        for f in &mut frames {
            crate::datagen::add_gaussian_noise(f.data_mut(), 1e-5, &mut rng);
            f.clamp01();
        }
        let net = tiny_net(3, 17);
        let cfg = DeployConfig { burst: 3, align: false, ..Default::default() };
        let out = deblur_burst(&frames, &net, &cfg).unwrap();
        let lab_pre = out.lab_pre.as_ref().unwrap();
        let (a_base, b_base) = lab_ab_planes(&out.fba_image).unwrap();
        assert_eq!(lab_pre.plane(1), a_base);
        assert_eq!(lab_pre.plane(2), b_base);
    }

    #[test]
    fn deblur_is_shift_consistent_for_stride_multiples() {
        let img = texture(50, 50, 18);
        let blurred = crate::fourier::fft_convolve(
            &img,
            &vec![1.0 / 9.0; 9],
            3,
            crate::fourier::Boundary::ReflectPad,
        )
        .unwrap();
        let frames = vec![img.clone(), blurred];
        let net = tiny_net(2, 19);
        let cfg = DeployConfig { burst: 2, align: false, color_transfer: false, ..Default::default() };
        let out = deblur_burst(&frames, &net, &cfg).unwrap();
        let shifted_frames: Vec<Image> = frames.iter().map(|f| f.circular_shift(5, 5)).collect();
        let out_shifted = deblur_burst(&shifted_frames, &net, &cfg).unwrap();
        // Compare interior pixels (away from reflect-pad boundary effects).
        let mut max_err = 0.0f64;
        for y in 12..38usize {
            for x in 12..38usize {
                let a = out_shifted.image.get(y, x, 0);
                let b = out.image.get(y - 5, x - 5, 0);
                max_err = max_err.max((a - b).abs());
            }
        }
        assert!(max_err < 1e-3, "shift consistency residual {max_err}");
    }
}

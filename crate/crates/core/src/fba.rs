//! Fourier burst accumulation: fuse a burst by a per-frequency weighted
//! average of the frames' Fourier coefficients.
//!
//! Two weighting schemes are provided. The vanilla scheme weights frame i at
//! frequency ζ by |α̂_i(ζ)|^p normalized over frames, optionally followed by
//! Gaussian smoothing of the weight planes. The learnable scheme feeds the
//! per-frequency magnitude vector (normalized across frames) through a small
//! shared two-layer network and a softmax over frames, and has an exact
//! backward pass so it can sit inside an end-to-end trained pipeline.

use ndarray::{Array1, Array2};

use crate::error::{invalid, Result};
use crate::fourier::{dft2, idft2, idft2_plane, Complex64, Spectrum};
use crate::image::{mirror_index, Patch};
use crate::nn::{burst_mlp_backward, burst_mlp_forward, BurstMlpGrads, BurstMlpViews};

/// Guards the magnitude normalization against all-zero frequencies.
pub const MAG_EPS: f64 = 1e-8;

/// One non-negative weight per frame per frequency, summing to 1 over
/// frames at every frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    n: usize,
    h: usize,
    w: usize,
    weights: Vec<f64>,
}

impl WeightField {
    pub fn new(n: usize, h: usize, w: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n * h * w {
            return Err(invalid("weight field data does not match shape"));
        }
        Ok(Self { n, h, w, weights })
    }

    pub fn burst_len(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn at(&self, frame: usize, idx: usize) -> f64 {
        self.weights[frame * self.h * self.w + idx]
    }

    /// Flat weight plane of one frame.
    pub fn frame(&self, frame: usize) -> &[f64] {
        let m = self.h * self.w;
        &self.weights[frame * m..(frame + 1) * m]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Vanilla FBA configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbaConfig {
    pub p: f64,
    pub smoothing_sigma: f64,
}

impl Default for FbaConfig {
    fn default() -> Self {
        Self { p: 11.0, smoothing_sigma: 2.0 }
    }
}

fn check_stack(spectra: &[Spectrum]) -> Result<(usize, usize, usize)> {
    let first = spectra
        .first()
        .ok_or_else(|| invalid("need at least one spectrum"))?;
    let (h, w) = (first.h(), first.w());
    if !spectra.iter().all(|s| s.h() == h && s.w() == w) {
        return Err(invalid("spectra must share dimensions"));
    }
    Ok((spectra.len(), h, w))
}

/// Per-frequency magnitude-power weights: w_i(ζ) = |α̂_i|^p / Σ_j |α̂_j|^p.
/// Frequencies where every magnitude is zero fall back to uniform 1/N.
/// Magnitudes are scaled by the per-frequency maximum before the power so
/// large p does not overflow; the ratio is algebraically unchanged.
pub fn fba_weights(spectra: &[Spectrum], p: f64) -> Result<WeightField> {
    if p < 0.0 || !p.is_finite() {
        return Err(invalid("fba weight exponent must be finite and >= 0"));
    }
    let (n, h, w) = check_stack(spectra)?;
    let m = h * w;
    let mut weights = vec![0.0; n * m];
    for j in 0..m {
        let mags: Vec<f64> = (0..n).map(|i| spectra[i].coeffs()[j].norm()).collect();
        let max = mags.iter().cloned().fold(0.0f64, f64::max);
        if max == 0.0 {
            for i in 0..n {
                weights[i * m + j] = 1.0 / n as f64;
            }
            continue;
        }
        let powered: Vec<f64> = mags.iter().map(|m| (m / max).powf(p)).collect();
        let sum: f64 = powered.iter().sum();
        for i in 0..n {
            weights[i * m + j] = powered[i] / sum;
        }
    }
    WeightField::new(n, h, w, weights)
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

fn smooth_plane_reflect(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let radius = (taps.len() / 2) as i64;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sx = mirror_index(x as i64 + k as i64 - radius, w);
                acc += t * plane[y * w + sx];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sy = mirror_index(y as i64 + k as i64 - radius, h);
                acc += t * rows[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Convolve each frame's weight plane with a truncated (±3σ) Gaussian under
/// reflect boundary, then renormalize per frequency so frames again sum to 1.
/// σ = 0 is the identity.
pub fn smooth_weights(field: &WeightField, sigma: f64) -> WeightField {
    if sigma <= 0.0 {
        return field.clone();
    }
    let taps = gaussian_taps(sigma);
    let (n, h, w) = (field.n, field.h, field.w);
    let m = h * w;
    let mut weights = vec![0.0; n * m];
    for i in 0..n {
        let smoothed = smooth_plane_reflect(field.frame(i), h, w, &taps);
        weights[i * m..(i + 1) * m].copy_from_slice(&smoothed);
    }
    for j in 0..m {
        let sum: f64 = (0..n).map(|i| weights[i * m + j]).sum();
        if sum <= 1e-300 {
            for i in 0..n {
                weights[i * m + j] = 1.0 / n as f64;
            }
        } else {
            for i in 0..n {
                weights[i * m + j] /= sum;
            }
        }
    }
    WeightField { n, h, w, weights }
}

/// Weighted sum of spectra under a weight field.
pub fn fuse_spectra(spectra: &[Spectrum], field: &WeightField) -> Result<Spectrum> {
    let (n, h, w) = check_stack(spectra)?;
    if field.n != n || field.h != h || field.w != w {
        return Err(invalid("weight field shape does not match spectra"));
    }
    let m = h * w;
    let mut fused = Spectrum::zeros(h, w);
    for i in 0..n {
        let plane = field.frame(i);
        for (j, z) in spectra[i].coeffs().iter().enumerate() {
            fused.coeffs_mut()[j] += plane[j] * z;
        }
    }
    debug_assert_eq!(fused.coeffs().len(), m);
    Ok(fused)
}

/// Fuse square patch spectra and return the spatial patch
/// (imaginary residue below 1e-9 is discarded by the inverse transform).
pub fn fba_fuse(spectra: &[Spectrum], field: &WeightField) -> Result<Patch> {
    let fused = fuse_spectra(spectra, field)?;
    if fused.h() != fused.w() {
        return Err(invalid("fba_fuse requires square spectra"));
    }
    Ok(idft2(&fused))
}

/// Rectangular variant returning a flat H×W plane.
pub fn fuse_plane(spectra: &[Spectrum], field: &WeightField) -> Result<Vec<f64>> {
    Ok(idft2_plane(&fuse_spectra(spectra, field)?))
}

/// Magnitudes of a spectrum stack as an N×M matrix (M = flattened grid).
pub(crate) fn magnitude_matrix(spectra: &[Spectrum]) -> Array2<f64> {
    let n = spectra.len();
    let m = spectra[0].coeffs().len();
    Array2::from_shape_fn((n, m), |(i, j)| spectra[i].coeffs()[j].norm())
}

/// Column-wise magnitude normalization: n_i = m_i / (Σ_k m_k + ε).
/// Returns the normalized matrix and the per-column denominators.
pub(crate) fn normalized_magnitudes(mags: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let m = mags.ncols();
    let mut denom = Array1::zeros(m);
    for j in 0..m {
        denom[j] = mags.column(j).sum() + MAG_EPS;
    }
    let normalized = Array2::from_shape_fn(mags.raw_dim(), |(i, j)| mags[[i, j]] / denom[j]);
    (normalized, denom)
}

/// Backward of [`normalized_magnitudes`].
pub(crate) fn normalized_magnitudes_backward(
    mags: &Array2<f64>,
    denom: &Array1<f64>,
    grad_n: &Array2<f64>,
) -> Array2<f64> {
    let (n, m) = (mags.nrows(), mags.ncols());
    let mut out = Array2::zeros((n, m));
    for j in 0..m {
        let d = denom[j];
        let dot: f64 = (0..n).map(|i| grad_n[[i, j]] * mags[[i, j]]).sum();
        for i in 0..n {
            out[[i, j]] = grad_n[[i, j]] / d - dot / (d * d);
        }
    }
    out
}

/// Column-wise softmax over frames.
pub(crate) fn softmax_columns(z: &Array2<f64>) -> Array2<f64> {
    let (n, m) = (z.nrows(), z.ncols());
    let mut out = Array2::zeros((n, m));
    for j in 0..m {
        let max = z.column(j).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for i in 0..n {
            let e = (z[[i, j]] - max).exp();
            out[[i, j]] = e;
            sum += e;
        }
        for i in 0..n {
            out[[i, j]] /= sum;
        }
    }
    out
}

/// Backward of [`softmax_columns`]: grad_z_i = w_i (g_i − Σ_k w_k g_k).
pub(crate) fn softmax_backward_columns(w: &Array2<f64>, grad_w: &Array2<f64>) -> Array2<f64> {
    let (n, m) = (w.nrows(), w.ncols());
    let mut out = Array2::zeros((n, m));
    for j in 0..m {
        let dot: f64 = (0..n).map(|i| w[[i, j]] * grad_w[[i, j]]).sum();
        for i in 0..n {
            out[[i, j]] = w[[i, j]] * (grad_w[[i, j]] - dot);
        }
    }
    out
}

/// Intermediates of a learnable-fusion forward pass, for the backward pass.
#[derive(Debug, Clone)]
pub struct LfbaCache {
    pub(crate) spectra: Vec<Spectrum>,
    pub(crate) mags: Array2<f64>,
    pub(crate) denom: Array1<f64>,
    pub(crate) normalized: Array2<f64>,
    pub(crate) hidden_pre: Array2<f64>,
    pub(crate) weights: Array2<f64>,
}

/// Learnable fusion weights: per frequency, the normalized magnitude vector
/// across frames feeds a shared two-layer N→N network (ReLU between), and a
/// softmax over frames turns the outputs into convex weights.
pub fn learnable_fba_weights(
    spectra: &[Spectrum],
    mlp: &BurstMlpViews,
) -> Result<(WeightField, LfbaCache)> {
    let (n, h, w) = check_stack(spectra)?;
    if mlp.burst_len() != n {
        return Err(invalid(format!(
            "fusion network sized for burst {} applied to burst {n}",
            mlp.burst_len()
        )));
    }
    let mags = magnitude_matrix(spectra);
    let (normalized, denom) = normalized_magnitudes(&mags);
    let (logits, hidden_pre) = burst_mlp_forward(&normalized, mlp)?;
    let weights = softmax_columns(&logits);
    let field = WeightField::new(n, h, w, weights.iter().cloned().collect())?;
    let cache = LfbaCache {
        spectra: spectra.to_vec(),
        mags,
        denom,
        normalized,
        hidden_pre,
        weights,
    };
    Ok((field, cache))
}

/// Forward pass of the learnable fusion layer: weights, weighted sum,
/// inverse transform. Returns the fused patch and the backward cache.
pub fn learnable_fba_forward(
    spectra: &[Spectrum],
    mlp: &BurstMlpViews,
) -> Result<(Patch, LfbaCache)> {
    let (field, cache) = learnable_fba_weights(spectra, mlp)?;
    let fused = fba_fuse(spectra, &field)?;
    Ok((fused, cache))
}

/// Gradients produced by [`learnable_fba_backward`].
pub struct LfbaGrads {
    pub mlp: BurstMlpGrads,
    /// Complex gradients w.r.t. each input spectrum.
    pub spectra: Vec<Spectrum>,
}

/// Exact reverse-mode gradients through the inverse transform, weighted sum,
/// softmax, shared network, and magnitude computation (|z| takes subgradient
/// 0 at z = 0).
pub fn learnable_fba_backward(
    cache: &LfbaCache,
    mlp: &BurstMlpViews,
    grad_out: &Patch,
) -> Result<LfbaGrads> {
    let n = cache.spectra.len();
    let (h, w) = (cache.spectra[0].h(), cache.spectra[0].w());
    if grad_out.side() != h || h != w {
        return Err(invalid("upstream gradient does not match cached forward"));
    }
    // Adjoint of (idft2 + take real part) is the forward transform.
    let g_spec = dft2(grad_out);
    let m = h * w;

    let mut grad_w = Array2::zeros((n, m));
    let mut grad_spectra: Vec<Spectrum> = (0..n).map(|_| Spectrum::zeros(h, w)).collect();
    for i in 0..n {
        let alpha = cache.spectra[i].coeffs();
        let gs = grad_spectra[i].coeffs_mut();
        for j in 0..m {
            let g = g_spec.coeffs()[j];
            // fused = Σ w_i α_i with real w: ∂/∂w_i = Re(G conj(α_i)),
            // ∂/∂α_i = w_i G.
            grad_w[[i, j]] = (g * alpha[j].conj()).re;
            gs[j] += cache.weights[[i, j]] * g;
        }
    }

    let grad_logits = softmax_backward_columns(&cache.weights, &grad_w);
    let mlp_grads = burst_mlp_backward(&cache.normalized, mlp, &cache.hidden_pre, &grad_logits);
    let grad_mags = normalized_magnitudes_backward(&cache.mags, &cache.denom, &mlp_grads.x);

    // Magnitude backward: ∂|z|/∂z = z/|z| componentwise on (re, im).
    for i in 0..n {
        let alpha = cache.spectra[i].coeffs();
        let gs = grad_spectra[i].coeffs_mut();
        for j in 0..m {
            let mag = cache.mags[[i, j]];
            if mag > 0.0 {
                let scale = grad_mags[[i, j]] / mag;
                gs[j] += Complex64::new(scale * alpha[j].re, scale * alpha[j].im);
            }
        }
    }

    Ok(LfbaGrads { mlp: mlp_grads, spectra: grad_spectra })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, identity_plus_noise, ModelParams};
    use ndarray::Array2 as Mat;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_patch(side: usize, seed: u64) -> Patch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Patch::new(side, (0..side * side).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn spectra_of(patches: &[Patch]) -> Vec<Spectrum> {
        patches.iter().map(dft2).collect()
    }

    fn identity_mlp(n: usize) -> ModelParams {
        let mut p = ModelParams::new();
        p.insert2("fba.w1", Mat::eye(n)).unwrap();
        p.insert1("fba.b1", ndarray::Array1::zeros(n)).unwrap();
        p.insert2("fba.w2", Mat::eye(n)).unwrap();
        p.insert1("fba.b2", ndarray::Array1::zeros(n)).unwrap();
        p
    }

    #[test]
    fn weights_p0_is_uniform() {
        let patches: Vec<Patch> = (0..3).map(|i| random_patch(9, i)).collect();
        let field = fba_weights(&spectra_of(&patches), 0.0).unwrap();
        for v in field.weights() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_single_frame_is_one() {
        let field = fba_weights(&spectra_of(&[random_patch(9, 5)]), 11.0).unwrap();
        for v in field.weights() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_follow_magnitude_powers() {
        // Two constant patches: DC magnitudes 2 and 1, p = 2 -> 0.8 / 0.2.
        let a = Patch::constant(5, 2.0 / 5.0);
        let b = Patch::constant(5, 1.0 / 5.0);
        let field = fba_weights(&spectra_of(&[a, b]), 2.0).unwrap();
        let dc = 2 * 5 + 2; // centered index of (0,0)
        assert!((field.at(0, dc) - 0.8).abs() < 1e-12);
        assert!((field.at(1, dc) - 0.2).abs() < 1e-12);
        assert!(fba_weights(&spectra_of(&[random_patch(5, 1)]), -1.0).is_err());
    }

    #[test]
    fn weight_field_invariants_across_burst_sizes_and_powers() {
        for n in [1usize, 2, 5, 14] {
            let patches: Vec<Patch> = (0..n).map(|i| random_patch(9, 100 + i as u64)).collect();
            let spectra = spectra_of(&patches);
            for p in [0.0, 1.0, 7.0, 11.0, 100.0] {
                let field = fba_weights(&spectra, p).unwrap();
                assert!(field.weights().iter().all(|&v| v >= 0.0));
                let m = field.h() * field.w();
                for j in 0..m {
                    let sum: f64 = (0..n).map(|i| field.at(i, j)).sum();
                    assert!((sum - 1.0).abs() < 1e-9, "n={n} p={p} j={j}: {sum}");
                }
            }
        }
    }

    #[test]
    fn smoothing_keeps_invariants() {
        let patches: Vec<Patch> = (0..4).map(|i| random_patch(17, 20 + i as u64)).collect();
        let field = fba_weights(&spectra_of(&patches), 11.0).unwrap();
        let same = smooth_weights(&field, 0.0);
        assert_eq!(same, field);

        let uniform = fba_weights(&spectra_of(&patches), 0.0).unwrap();
        let smoothed_uniform = smooth_weights(&uniform, 2.0);
        for (a, b) in smoothed_uniform.weights().iter().zip(uniform.weights()) {
            assert!((a - b).abs() < 1e-12);
        }

        let smoothed = smooth_weights(&field, 2.0);
        let m = field.h() * field.w();
        for j in 0..m {
            let sum: f64 = (0..4).map(|i| smoothed.at(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_identical_frames_returns_the_frame() {
        let p = random_patch(9, 30);
        let spectra = spectra_of(&[p.clone(), p.clone(), p.clone()]);
        let field = fba_weights(&spectra, 11.0).unwrap();
        let fused = fba_fuse(&spectra, &field).unwrap();
        for (a, b) in fused.data().iter().zip(p.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn fuse_p0_is_pixel_mean() {
        let patches: Vec<Patch> = (0..4).map(|i| random_patch(9, 40 + i as u64)).collect();
        let spectra = spectra_of(&patches);
        let field = fba_weights(&spectra, 0.0).unwrap();
        let fused = fba_fuse(&spectra, &field).unwrap();
        for idx in 0..81 {
            let mean: f64 = patches.iter().map(|p| p.data()[idx]).sum::<f64>() / 4.0;
            assert!((fused.data()[idx] - mean).abs() < 1e-10);
        }
    }

    #[test]
    fn large_p_selects_max_magnitude_per_frequency() {
        let sharp = random_patch(9, 50);
        let mut blurred = sharp.clone();
        // Heavy blur: keep only a smooth local average.
        let img = crate::image::Image::new(9, 9, 1, sharp.data().to_vec()).unwrap();
        let kernel = vec![1.0 / 25.0; 25];
        let b = crate::fourier::fft_convolve(&img, &kernel, 5, crate::fourier::Boundary::Circular)
            .unwrap();
        blurred.data_mut().copy_from_slice(b.data());

        let spectra = spectra_of(&[sharp, blurred]);
        let field = fba_weights(&spectra, 100.0).unwrap();
        let fused = fuse_spectra(&spectra, &field).unwrap();
        for j in 0..81 {
            let (m0, m1) = (spectra[0].coeffs()[j].norm(), spectra[1].coeffs()[j].norm());
            let max_mag = m0.max(m1);
            let sel = if m0 >= m1 {
                spectra[0].coeffs()[j]
            } else {
                spectra[1].coeffs()[j]
            };
            // Where one frame clearly dominates, fusion matches selection.
            if max_mag > 1e-6 && (m0 / m1).max(m1 / m0) > 1.05 {
                assert!(
                    (fused.coeffs()[j] - sel).norm() <= 1e-3 * max_mag,
                    "freq {j}"
                );
            }
        }
    }

    #[test]
    fn fuse_is_invariant_under_frame_reordering() {
        let patches: Vec<Patch> = (0..5).map(|i| random_patch(9, 60 + i as u64)).collect();
        let spectra = spectra_of(&patches);
        let fused = fba_fuse(&spectra, &fba_weights(&spectra, 11.0).unwrap()).unwrap();
        let mut perm = spectra.clone();
        perm.rotate_left(2);
        let fused_perm = fba_fuse(&perm, &fba_weights(&perm, 11.0).unwrap()).unwrap();
        for (a, b) in fused.data().iter().zip(fused_perm.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convex_fusion_never_exceeds_max_magnitude() {
        let patches: Vec<Patch> = (0..6).map(|i| random_patch(9, 70 + i as u64)).collect();
        let spectra = spectra_of(&patches);
        for p in [0.0, 1.0, 11.0] {
            let field = fba_weights(&spectra, p).unwrap();
            let fused = fuse_spectra(&spectra, &field).unwrap();
            for j in 0..81 {
                let max_mag = spectra
                    .iter()
                    .map(|s| s.coeffs()[j].norm())
                    .fold(0.0f64, f64::max);
                assert!(fused.coeffs()[j].norm() <= max_mag + 1e-12);
            }
        }
    }

    #[test]
    fn learnable_identity_init_matches_vanilla_argmax() {
        let n = 5;
        let params = identity_mlp(n);
        let mlp = BurstMlpViews::from_params(&params, "fba").unwrap();
        let patches: Vec<Patch> = (0..n).map(|i| random_patch(9, 80 + i as u64)).collect();
        let spectra = spectra_of(&patches);
        let (field, _) = learnable_fba_weights(&spectra, &mlp).unwrap();
        let vanilla = fba_weights(&spectra, 1.0).unwrap();
        let m = field.h() * field.w();
        for j in 0..m {
            let argmax = |f: &WeightField| {
                (0..n)
                    .max_by(|&a, &b| f.at(a, j).partial_cmp(&f.at(b, j)).unwrap())
                    .unwrap()
            };
            assert_eq!(argmax(&field), argmax(&vanilla), "frequency {j}");
        }
    }

    #[test]
    fn learnable_identical_frames_reproduce_the_frame() {
        let n = 3;
        let params = identity_mlp(n);
        let mlp = BurstMlpViews::from_params(&params, "fba").unwrap();
        let p = random_patch(9, 90);
        let spectra = spectra_of(&vec![p.clone(); n]);
        let (fused, _) = learnable_fba_forward(&spectra, &mlp).unwrap();
        for (a, b) in fused.data().iter().zip(p.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn learnable_is_permutation_equivariant_with_shared_rows() {
        // With symmetric parameters (identity matrices), permuting the
        // frames permutes the weights identically, so fusion is invariant.
        let n = 4;
        let params = identity_mlp(n);
        let mlp = BurstMlpViews::from_params(&params, "fba").unwrap();
        let patches: Vec<Patch> = (0..n).map(|i| random_patch(9, 95 + i as u64)).collect();
        let spectra = spectra_of(&patches);
        let (fused, _) = learnable_fba_forward(&spectra, &mlp).unwrap();
        let mut perm = spectra.clone();
        perm.swap(0, 2);
        perm.swap(1, 3);
        let (fused_perm, _) = learnable_fba_forward(&perm, &mlp).unwrap();
        for (a, b) in fused.data().iter().zip(fused_perm.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn learnable_is_scale_covariant() {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut params = ModelParams::new();
        params.insert2("fba.w1", identity_plus_noise(&mut rng, n, 1e-2)).unwrap();
        params.insert1("fba.b1", ndarray::Array1::zeros(n)).unwrap();
        params.insert2("fba.w2", Mat::eye(n)).unwrap();
        params.insert1("fba.b2", ndarray::Array1::zeros(n)).unwrap();
        let mlp = BurstMlpViews::from_params(&params, "fba").unwrap();

        let patches: Vec<Patch> = (0..n).map(|i| random_patch(9, 130 + i as u64)).collect();
        let spectra = spectra_of(&patches);
        let (fused, _) = learnable_fba_forward(&spectra, &mlp).unwrap();
        let c = 3.7;
        let scaled: Vec<Spectrum> = spectra
            .iter()
            .map(|s| {
                let mut t = s.clone();
                for z in t.coeffs_mut() {
                    *z *= c;
                }
                t
            })
            .collect();
        let (fused_scaled, _) = learnable_fba_forward(&scaled, &mlp).unwrap();
        for (a, b) in fused_scaled.data().iter().zip(fused.data()) {
            assert!((a - c * b).abs() < 1e-6 * (1.0 + b.abs()));
        }
    }

    /// Finite-difference check helper: loss = Σ c ⊙ fused over a spectra
    /// stack parameterized as flat [re..., im...] per frame.
    fn check_spectra_grad(spectra: &[Spectrum], params: &ModelParams, tol: f64) {
        let n = spectra.len();
        let side = spectra[0].h();
        let m = side * side;
        let mlp = BurstMlpViews::from_params(params, "fba").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        // Small coefficients keep the loss magnitude low so the central
        // difference at ε = 1e-6 stays well above f64 rounding noise.
        let c: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..0.15)).collect();

        let flat: Vec<f64> = spectra
            .iter()
            .flat_map(|s| {
                s.coeffs()
                    .iter()
                    .map(|z| z.re)
                    .chain(s.coeffs().iter().map(|z| z.im))
                    .collect::<Vec<_>>()
            })
            .collect();

        let rebuild = |xs: &[f64]| -> Vec<Spectrum> {
            (0..n)
                .map(|i| {
                    let base = i * 2 * m;
                    let coeffs = (0..m)
                        .map(|j| Complex64::new(xs[base + j], xs[base + m + j]))
                        .collect();
                    Spectrum::new(side, side, coeffs).unwrap()
                })
                .collect()
        };
        let loss = |xs: &[f64]| {
            let spectra = rebuild(xs);
            let (fused, _) = learnable_fba_forward(&spectra, &mlp).unwrap();
            fused.data().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
        };

        let (fused, cache) = learnable_fba_forward(spectra, &mlp).unwrap();
        let mut grad_out = Patch::zeros(side);
        grad_out.data_mut().copy_from_slice(&c);
        let grads = learnable_fba_backward(&cache, &mlp, &grad_out).unwrap();
        let _ = fused;
        let analytic: Vec<f64> = grads
            .spectra
            .iter()
            .flat_map(|s| {
                s.coeffs()
                    .iter()
                    .map(|z| z.re)
                    .chain(s.coeffs().iter().map(|z| z.im))
                    .collect::<Vec<_>>()
            })
            .collect();
        let err = grad_check(loss, &flat, &analytic, 1e-6);
        assert!(err < tol, "spectra grad err {err}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        let mut params = ModelParams::new();
        params.insert2("fba.w1", identity_plus_noise(&mut rng, n, 0.05)).unwrap();
        params
            .insert1("fba.b1", ndarray::Array1::from_shape_fn(n, |_| rng.gen_range(0.01..0.1)))
            .unwrap();
        params.insert2("fba.w2", identity_plus_noise(&mut rng, n, 0.05)).unwrap();
        params.insert1("fba.b2", ndarray::Array1::zeros(n)).unwrap();

        let patches: Vec<Patch> = (0..n).map(|i| random_patch(5, 300 + i as u64)).collect();
        check_spectra_grad(&spectra_of(&patches), &params, 1e-4);

        // Parameter gradients via the same scalar loss.
        let mlp = BurstMlpViews::from_params(&params, "fba").unwrap();
        let spectra = spectra_of(&patches);
        let m = 25;
        let mut rng2 = ChaCha8Rng::seed_from_u64(301);
        let c: Vec<f64> = (0..m).map(|_| rng2.gen_range(0.5..1.5)).collect();
        let (_, cache) = learnable_fba_forward(&spectra, &mlp).unwrap();
        let mut grad_out = Patch::zeros(5);
        grad_out.data_mut().copy_from_slice(&c);
        let grads = learnable_fba_backward(&cache, &mlp, &grad_out).unwrap();

        let w1 = params.mat("fba.w1").unwrap().to_owned();
        let loss_w1 = |ws: &[f64]| {
            let wv = Mat::from_shape_vec((n, n), ws.to_vec()).unwrap();
            let m2 = BurstMlpViews {
                w1: wv.view(),
                b1: params.vec("fba.b1").unwrap(),
                w2: params.mat("fba.w2").unwrap(),
                b2: params.vec("fba.b2").unwrap(),
            };
            let (fused, _) = learnable_fba_forward(&spectra, &m2).unwrap();
            fused.data().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
        };
        let err = grad_check(
            loss_w1,
            w1.as_slice().unwrap(),
            grads.mlp.w1.as_slice().unwrap(),
            1e-6,
        );
        assert!(err < 1e-4, "w1 grad err {err}");
    }

    #[test]
    fn backward_handles_negligible_frame() {
        // One frame with ~zero magnitudes couples to the loss only through
        // the normalization denominators; the gradient must still match.
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(400);
        let mut params = ModelParams::new();
        params.insert2("fba.w1", identity_plus_noise(&mut rng, n, 0.05)).unwrap();
        params.insert1("fba.b1", ndarray::Array1::zeros(n)).unwrap();
        params.insert2("fba.w2", identity_plus_noise(&mut rng, n, 0.05)).unwrap();
        params.insert1("fba.b2", ndarray::Array1::zeros(n)).unwrap();

        let patches: Vec<Patch> = (0..n).map(|i| random_patch(5, 500 + i as u64)).collect();
        let mut spectra = spectra_of(&patches);
        // Replace frame 1 with controlled tiny magnitudes (1e-3..2e-3):
        // negligible next to the other frames' O(0.1..2) coefficients but
        // still three decades above the probe step, keeping the
        // finite-difference oracle away from the |z| = 0 kink.
        let mut rng2 = ChaCha8Rng::seed_from_u64(501);
        for z in spectra[1].coeffs_mut() {
            let mag = rng2.gen_range(1e-3..2e-3);
            let phase = rng2.gen_range(0.0..std::f64::consts::TAU);
            *z = Complex64::new(mag * phase.cos(), mag * phase.sin());
        }
        check_spectra_grad(&spectra, &params, 1e-4);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let n = 2;
        let params = identity_mlp(n);
        let mlp = BurstMlpViews::from_params(&params, "fba").unwrap();
        let patches: Vec<Patch> = (0..n).map(|i| random_patch(5, 600 + i as u64)).collect();
        let spectra = spectra_of(&patches);
        let (_, cache) = learnable_fba_forward(&spectra, &mlp).unwrap();
        let grads = learnable_fba_backward(&cache, &mlp, &Patch::zeros(5)).unwrap();
        assert!(grads.mlp.w1.iter().all(|&v| v == 0.0));
        assert!(grads.mlp.b2.iter().all(|&v| v == 0.0));
        for s in &grads.spectra {
            assert!(s.coeffs().iter().all(|z| z.re == 0.0 && z.im == 0.0));
        }
    }
}

//! Frequency-band analysis and per-frame deconvolution-filter prediction.
//!
//! Per 65×65 input patch the spectrum is read at three analysis sizes
//! (center crops of 17/33/65 pixels, each transformed at its own size) plus
//! a low-pass block of the 65×65 spectrum, giving four feature bands. Bands
//! first interact across the burst through small shared per-coefficient
//! networks, then per frame a dense trunk merges the bands pairwise into an
//! encoding and predicts one real, symmetric multiplicative gain per
//! frequency of the 65×65 grid. Multiplying the input spectrum by those
//! gains and cropping the center 33×33 of the inverse transform yields the
//! per-frame sharp-patch estimate.
//!
//! Parameter names used throughout: `share.b{1..4}.{w1,b1,w2,b2}` for the
//! band-sharing networks, `merge.{low,high}.{w,b}`, `trunk.fc{1,2}.{w,b}`
//! and `head.{w,b}` for the trunk.

use std::sync::OnceLock;

use ndarray::{Array1, Array2};

use crate::error::{invalid, Result};
use crate::fourier::{dft2, half_plane_coords, idft2, lowpass_coeffs, Complex64, HalfSpectrum, Spectrum};
use crate::image::Patch;
use crate::nn::{
    burst_mlp_backward, burst_mlp_forward, dense_backward_rows, dense_forward_rows,
    relu_backward, BurstMlpViews, ModelParams,
};

pub const PATCH_IN: usize = 65;
pub const PATCH_OUT: usize = 33;
pub const BAND_SIDES: [usize; 3] = [17, 33, 65];
pub const LOWPASS_RADIUS: usize = 4;

/// Real feature lengths per band: 2 × number of stored complex coefficients.
pub const BAND_FEATURES: [usize; 4] = [290, 1090, 4226, 162];
/// Input widths of the two pairwise merge layers.
pub const MERGE_LOW_IN: usize = BAND_FEATURES[0] + BAND_FEATURES[1];
pub const MERGE_HIGH_IN: usize = BAND_FEATURES[2] + BAND_FEATURES[3];
/// Half-plane gain count (65² + 1)/2 and the full mirrored grid size.
pub const GAIN_HALF: usize = (PATCH_IN * PATCH_IN + 1) / 2;
pub const GAIN_GRID: usize = PATCH_IN * PATCH_IN;

/// Per-frame band features, each stored as re‖im concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    pub feats: [Vec<f64>; 4],
}

fn features_from_coeffs(coeffs: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * coeffs.len());
    out.extend(coeffs.iter().map(|z| z.re));
    out.extend(coeffs.iter().map(|z| z.im));
    out
}

fn coeff_grads_from_features(grad: &[f64]) -> Vec<Complex64> {
    let m = grad.len() / 2;
    (0..m)
        .map(|j| Complex64::new(grad[j], grad[m + j]))
        .collect()
}

/// Feature scale per band: half-spectrum coefficients are divided by the
/// analysis side, putting every band's DC feature at the crop mean and all
/// coefficient features on a comparable O(1) range. Raw unitary-DFT
/// coefficients span three orders of magnitude (the 65×65 DC alone sits
/// near 32), which conditions plain SGD so badly that training stalls.
pub const BAND_SCALES: [f64; 4] = [
    1.0 / 17.0,
    1.0 / 33.0,
    1.0 / (PATCH_IN as f64),
    1.0 / (PATCH_IN as f64),
];

fn scaled_features(coeffs: &[Complex64], scale: f64) -> Vec<f64> {
    let mut out = features_from_coeffs(coeffs);
    for v in &mut out {
        *v *= scale;
    }
    out
}

/// Band extraction plus the cached 65×65 spectrum that the Wiener stage
/// reuses.
pub(crate) fn extract_bands_cached(p: &Patch) -> Result<(BandSet, Spectrum)> {
    if p.side() != PATCH_IN {
        return Err(invalid(format!(
            "band extraction expects a {PATCH_IN}x{PATCH_IN} patch, got side {}",
            p.side()
        )));
    }
    let s65 = dft2(p);
    let s33 = dft2(&p.center_crop(33)?);
    let s17 = dft2(&p.center_crop(17)?);
    let b1 = scaled_features(HalfSpectrum::compact(&s17)?.coeffs(), BAND_SCALES[0]);
    let b2 = scaled_features(HalfSpectrum::compact(&s33)?.coeffs(), BAND_SCALES[1]);
    let b3 = scaled_features(HalfSpectrum::compact(&s65)?.coeffs(), BAND_SCALES[2]);
    let b4 = scaled_features(lowpass_coeffs(&s65, LOWPASS_RADIUS)?.coeffs(), BAND_SCALES[3]);
    let bands = BandSet { feats: [b1, b2, b3, b4] };
    debug_assert_eq!(bands.feats[0].len(), BAND_FEATURES[0]);
    debug_assert_eq!(bands.feats[1].len(), BAND_FEATURES[1]);
    debug_assert_eq!(bands.feats[2].len(), BAND_FEATURES[2]);
    debug_assert_eq!(bands.feats[3].len(), BAND_FEATURES[3]);
    Ok((bands, s65))
}

/// Frequency bands of one 65×65 patch.
pub fn extract_bands(p: &Patch) -> Result<BandSet> {
    extract_bands_cached(p).map(|(b, _)| b)
}

/// Map the half-plane gain vector index to its grid index and the mirrored
/// grid index (None for the self-paired DC entry).
fn gain_index_map() -> &'static [(usize, Option<usize>)] {
    static MAP: OnceLock<Vec<(usize, Option<usize>)>> = OnceLock::new();
    MAP.get_or_init(|| {
        let c = (PATCH_IN / 2) as i64;
        half_plane_coords(PATCH_IN)
            .into_iter()
            .map(|(u, v)| {
                let idx = ((v + c) * PATCH_IN as i64 + (u + c)) as usize;
                let mirror = if (u, v) == (0, 0) {
                    None
                } else {
                    Some(((-v + c) * PATCH_IN as i64 + (-u + c)) as usize)
                };
                (idx, mirror)
            })
            .collect()
    })
}

/// Real 65×65 multiplicative gain per centered frequency, symmetric under
/// (u,v) → (−u,−v) by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGains {
    grid: Vec<f64>,
}

impl FilterGains {
    /// Mirror a half-plane prediction onto the symmetric grid.
    pub fn from_half(half: &[f64]) -> Result<Self> {
        if half.len() != GAIN_HALF {
            return Err(invalid(format!(
                "expected {GAIN_HALF} half-plane gains, got {}",
                half.len()
            )));
        }
        let mut grid = vec![0.0; GAIN_GRID];
        for (k, &(idx, mirror)) in gain_index_map().iter().enumerate() {
            grid[idx] = half[k];
            if let Some(m) = mirror {
                grid[m] = half[k];
            }
        }
        Ok(Self { grid })
    }

    /// Adjoint of [`FilterGains::from_half`]: fold grid gradients back onto
    /// the half-plane.
    pub fn half_adjoint(grad_grid: &[f64]) -> Vec<f64> {
        debug_assert_eq!(grad_grid.len(), GAIN_GRID);
        gain_index_map()
            .iter()
            .map(|&(idx, mirror)| grad_grid[idx] + mirror.map_or(0.0, |m| grad_grid[m]))
            .collect()
    }

    /// Build directly from a full symmetric grid (centered layout).
    pub fn from_grid(grid: Vec<f64>) -> Result<Self> {
        if grid.len() != GAIN_GRID {
            return Err(invalid("gain grid must be 65x65"));
        }
        Ok(Self { grid })
    }

    pub fn uniform(v: f64) -> Self {
        Self { grid: vec![v; GAIN_GRID] }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    #[inline]
    pub fn at(&self, u: i64, v: i64) -> f64 {
        let c = (PATCH_IN / 2) as i64;
        self.grid[((v + c) * PATCH_IN as i64 + (u + c)) as usize]
    }
}

/// Multiply the patch spectrum by the gains, invert, crop the center 33×33.
/// Symmetric real gains on a conjugate-symmetric spectrum keep the
/// imaginary residue below 1e-9; it is discarded by the inverse transform.
pub fn apply_wiener(p: &Patch, gains: &FilterGains) -> Result<Patch> {
    if p.side() != PATCH_IN {
        return Err(invalid("apply_wiener expects a 65x65 patch"));
    }
    let s65 = dft2(p);
    Ok(apply_wiener_spectrum(&s65, gains))
}

pub(crate) fn apply_wiener_spectrum(s65: &Spectrum, gains: &FilterGains) -> Patch {
    let mut prod = s65.clone();
    for (z, g) in prod.coeffs_mut().iter_mut().zip(&gains.grid) {
        *z *= *g;
    }
    let full = idft2(&prod);
    full.center_crop(PATCH_OUT).expect("65 -> 33 center crop")
}

/// Backward of the Wiener stage. Returns (grad wrt gain grid, complex grad
/// wrt the input spectrum).
pub(crate) fn apply_wiener_backward(
    s65: &Spectrum,
    gains: &FilterGains,
    grad_out: &Patch,
) -> (Vec<f64>, Spectrum) {
    debug_assert_eq!(grad_out.side(), PATCH_OUT);
    // Adjoint of the center crop: embed into zeros.
    let mut padded = Patch::zeros(PATCH_IN);
    let off = (PATCH_IN - PATCH_OUT) / 2;
    for y in 0..PATCH_OUT {
        for x in 0..PATCH_OUT {
            padded.set(y + off, x + off, grad_out.get(y, x));
        }
    }
    // Adjoint of (idft2 + take real part) is the forward transform.
    let d = dft2(&padded);
    let mut grad_grid = vec![0.0; GAIN_GRID];
    let mut grad_spec = Spectrum::zeros(PATCH_IN, PATCH_IN);
    for j in 0..GAIN_GRID {
        let dj = d.coeffs()[j];
        grad_grid[j] = (dj * s65.coeffs()[j].conj()).re;
        grad_spec.coeffs_mut()[j] = gains.grid[j] * dj;
    }
    (grad_grid, grad_spec)
}

/// Wiener backward pass exposed for the verification battery: gradients
/// w.r.t. the gain grid and the input spectrum.
pub fn wiener_backward_probe(
    s65: &Spectrum,
    gains: &FilterGains,
    grad_out: &Patch,
) -> (Vec<f64>, Spectrum) {
    apply_wiener_backward(s65, gains, grad_out)
}

/// Stack one band's features across the burst: row t = frame t.
fn band_matrix(bands: &[BandSet], k: usize) -> Array2<f64> {
    let n = bands.len();
    let f = bands[0].feats[k].len();
    let mut x = Array2::zeros((n, f));
    for (t, b) in bands.iter().enumerate() {
        x.row_mut(t)
            .into_slice()
            .expect("row-major")
            .copy_from_slice(&b.feats[k]);
    }
    x
}

/// Cached band-share inputs and hidden preactivations.
pub struct BandShareCache {
    x: [Array2<f64>; 4],
    hidden_pre: [Array2<f64>; 4],
}

/// Cross-frame information sharing: for each band, every feature position
/// forms an N-vector across the burst and passes through a band-specific
/// shared two-layer network; real and imaginary channels go through the
/// same network independently.
pub fn band_share(
    bands: &[BandSet],
    params: &ModelParams,
) -> Result<(Vec<BandSet>, BandShareCache)> {
    let n = bands.len();
    if n == 0 {
        return Err(invalid("band_share needs at least one frame"));
    }
    let mut out: Vec<BandSet> = bands.to_vec();
    let mut xs = Vec::with_capacity(4);
    let mut hiddens = Vec::with_capacity(4);
    for k in 0..4 {
        let mlp = BurstMlpViews::from_params(params, &format!("share.b{}", k + 1))?;
        if mlp.burst_len() != n {
            return Err(invalid(format!(
                "band-share network sized for burst {}, got {n} frames",
                mlp.burst_len()
            )));
        }
        let x = band_matrix(bands, k);
        let (y, hidden_pre) = burst_mlp_forward(&x, &mlp)?;
        for (t, frame) in out.iter_mut().enumerate() {
            frame.feats[k] = y.row(t).to_vec();
        }
        xs.push(x);
        hiddens.push(hidden_pre);
    }
    let cache = BandShareCache {
        x: xs.try_into().expect("four bands"),
        hidden_pre: hiddens.try_into().expect("four bands"),
    };
    Ok((out, cache))
}

/// Backward of [`band_share`]; accumulates parameter gradients and returns
/// gradients w.r.t. the input feature matrices.
pub(crate) fn band_share_backward(
    cache: &BandShareCache,
    params: &ModelParams,
    grad_bands: &[Array2<f64>; 4],
    grads: &mut ModelParams,
) -> Result<[Array2<f64>; 4]> {
    let mut out = Vec::with_capacity(4);
    for k in 0..4 {
        let prefix = format!("share.b{}", k + 1);
        let mlp = BurstMlpViews::from_params(params, &prefix)?;
        let g = burst_mlp_backward(&cache.x[k], &mlp, &cache.hidden_pre[k], &grad_bands[k]);
        grads.get_mut(&format!("{prefix}.w1"))?.zip_mut_with(&g.w1.into_dyn(), |a, b| *a += b);
        grads.get_mut(&format!("{prefix}.b1"))?.zip_mut_with(&g.b1.into_dyn(), |a, b| *a += b);
        grads.get_mut(&format!("{prefix}.w2"))?.zip_mut_with(&g.w2.into_dyn(), |a, b| *a += b);
        grads.get_mut(&format!("{prefix}.b2"))?.zip_mut_with(&g.b2.into_dyn(), |a, b| *a += b);
        out.push(g.x);
    }
    Ok(out.try_into().expect("four bands"))
}

pub(crate) struct TrunkCache {
    in_low: Array2<f64>,
    in_high: Array2<f64>,
    h_low_pre: Array2<f64>,
    h_high_pre: Array2<f64>,
    enc: Array2<f64>,
    t1_pre: Array2<f64>,
    t1: Array2<f64>,
    t2_pre: Array2<f64>,
    t2: Array2<f64>,
}

/// Per-frame trunk, weights shared across frames: merge (b1',b2') and
/// (b3',b4') to the encoding, two hidden layers, then the linear gain head
/// mirrored onto the symmetric grid.
pub(crate) fn predict_gains_burst(
    adjusted: &[BandSet],
    params: &ModelParams,
) -> Result<(Vec<FilterGains>, TrunkCache)> {
    let n = adjusted.len();
    let mut in_low = Array2::zeros((n, MERGE_LOW_IN));
    let mut in_high = Array2::zeros((n, MERGE_HIGH_IN));
    for (t, b) in adjusted.iter().enumerate() {
        let row = in_low.row_mut(t).into_slice().expect("row-major");
        row[..BAND_FEATURES[0]].copy_from_slice(&b.feats[0]);
        row[BAND_FEATURES[0]..].copy_from_slice(&b.feats[1]);
        let row = in_high.row_mut(t).into_slice().expect("row-major");
        row[..BAND_FEATURES[2]].copy_from_slice(&b.feats[2]);
        row[BAND_FEATURES[2]..].copy_from_slice(&b.feats[3]);
    }
    let h_low_pre = dense_forward_rows(&in_low, params.mat("merge.low.w")?, params.vec("merge.low.b")?);
    let h_low = h_low_pre.mapv(|v| v.max(0.0));
    let h_high_pre =
        dense_forward_rows(&in_high, params.mat("merge.high.w")?, params.vec("merge.high.b")?);
    let h_high = h_high_pre.mapv(|v| v.max(0.0));

    let hidden = h_low.ncols();
    let mut enc = Array2::zeros((n, 2 * hidden));
    enc.slice_mut(ndarray::s![.., ..hidden]).assign(&h_low);
    enc.slice_mut(ndarray::s![.., hidden..]).assign(&h_high);

    let t1_pre = dense_forward_rows(&enc, params.mat("trunk.fc1.w")?, params.vec("trunk.fc1.b")?);
    let t1 = t1_pre.mapv(|v| v.max(0.0));
    let t2_pre = dense_forward_rows(&t1, params.mat("trunk.fc2.w")?, params.vec("trunk.fc2.b")?);
    let t2 = t2_pre.mapv(|v| v.max(0.0));
    let half = dense_forward_rows(&t2, params.mat("head.w")?, params.vec("head.b")?);

    let gains = (0..n)
        .map(|t| FilterGains::from_half(half.row(t).as_slice().expect("contiguous row")))
        .collect::<Result<Vec<_>>>()?;
    let cache = TrunkCache {
        in_low,
        in_high,
        h_low_pre,
        h_high_pre,
        enc,
        t1_pre,
        t1,
        t2_pre,
        t2,
    };
    Ok((gains, cache))
}

/// Predict the deconvolution gains for a single frame's adjusted bands.
pub fn predict_gains(bands: &BandSet, params: &ModelParams) -> Result<FilterGains> {
    let (mut gains, _) = predict_gains_burst(std::slice::from_ref(bands), params)?;
    Ok(gains.pop().expect("one frame"))
}

/// Backward of the trunk; returns gradients w.r.t. the adjusted band
/// feature matrices (one per band).
pub(crate) fn predict_gains_backward(
    cache: &TrunkCache,
    params: &ModelParams,
    grad_half: &Array2<f64>,
    grads: &mut ModelParams,
) -> Result<[Array2<f64>; 4]> {
    let mut acc = |name: &str, g2: Option<Array2<f64>>, g1: Option<Array1<f64>>| -> Result<()> {
        if let Some(g) = g2 {
            grads.get_mut(name)?.zip_mut_with(&g.into_dyn(), |a, b| *a += b);
        }
        if let Some(g) = g1 {
            grads.get_mut(name)?.zip_mut_with(&g.into_dyn(), |a, b| *a += b);
        }
        Ok(())
    };

    let (g_t2, gw_head, gb_head) = dense_backward_rows(&cache.t2, params.mat("head.w")?, grad_half);
    acc("head.w", Some(gw_head), None)?;
    acc("head.b", None, Some(gb_head))?;

    let mut g_t2_pre = g_t2;
    relu_backward(&cache.t2_pre, &mut g_t2_pre);
    let (g_t1, gw2, gb2) = dense_backward_rows(&cache.t1, params.mat("trunk.fc2.w")?, &g_t2_pre);
    acc("trunk.fc2.w", Some(gw2), None)?;
    acc("trunk.fc2.b", None, Some(gb2))?;

    let mut g_t1_pre = g_t1;
    relu_backward(&cache.t1_pre, &mut g_t1_pre);
    let (g_enc, gw1, gb1) = dense_backward_rows(&cache.enc, params.mat("trunk.fc1.w")?, &g_t1_pre);
    acc("trunk.fc1.w", Some(gw1), None)?;
    acc("trunk.fc1.b", None, Some(gb1))?;

    let hidden = cache.h_low_pre.ncols();
    let mut g_low = g_enc.slice(ndarray::s![.., ..hidden]).to_owned();
    relu_backward(&cache.h_low_pre, &mut g_low);
    let (g_in_low, gw_low, gb_low) =
        dense_backward_rows(&cache.in_low, params.mat("merge.low.w")?, &g_low);
    acc("merge.low.w", Some(gw_low), None)?;
    acc("merge.low.b", None, Some(gb_low))?;

    let mut g_high = g_enc.slice(ndarray::s![.., hidden..]).to_owned();
    relu_backward(&cache.h_high_pre, &mut g_high);
    let (g_in_high, gw_high, gb_high) =
        dense_backward_rows(&cache.in_high, params.mat("merge.high.w")?, &g_high);
    acc("merge.high.w", Some(gw_high), None)?;
    acc("merge.high.b", None, Some(gb_high))?;

    let n = grad_half.nrows();
    let split = |m: &Array2<f64>, a: usize| -> (Array2<f64>, Array2<f64>) {
        (
            m.slice(ndarray::s![.., ..a]).to_owned(),
            m.slice(ndarray::s![.., a..]).to_owned(),
        )
    };
    let _ = n;
    let (g_b1, g_b2) = split(&g_in_low, BAND_FEATURES[0]);
    let (g_b3, g_b4) = split(&g_in_high, BAND_FEATURES[2]);
    Ok([g_b1, g_b2, g_b3, g_b4])
}

/// Full forward cache for one burst through the deconvolution stages.
pub struct DeconvCache {
    pub(crate) s65: Vec<Spectrum>,
    pub(crate) share: BandShareCache,
    pub(crate) trunk: TrunkCache,
    pub(crate) gains: Vec<FilterGains>,
}

/// Run the deconvolution stages for a whole burst: band extraction, band
/// sharing, per-frame gain prediction, Wiener application. Returns the
/// per-frame 33×33 estimates plus the cache for the backward pass.
pub fn forward_burst(burst: &[Patch], params: &ModelParams) -> Result<(Vec<Patch>, DeconvCache)> {
    let n = burst.len();
    let share_n = params.mat("share.b1.w1")?.nrows();
    if n != share_n {
        return Err(invalid(format!(
            "network is configured for bursts of {share_n}, got {n} frames"
        )));
    }
    let mut bands = Vec::with_capacity(n);
    let mut s65 = Vec::with_capacity(n);
    for p in burst {
        let (b, s) = extract_bands_cached(p)?;
        bands.push(b);
        s65.push(s);
    }
    let (adjusted, share) = band_share(&bands, params)?;
    let (gains, trunk) = predict_gains_burst(&adjusted, params)?;
    let estimates = s65
        .iter()
        .zip(&gains)
        .map(|(s, g)| apply_wiener_spectrum(s, g))
        .collect();
    Ok((estimates, DeconvCache { s65, share, trunk, gains }))
}

/// Reverse-mode gradients through all deconvolution stages. Parameter
/// gradients are accumulated into `grads`; gradients w.r.t. the input
/// patches (needed for composed gradient checks, not for training) are
/// returned when `want_input_grads` is set.
pub fn backward_burst(
    cache: &DeconvCache,
    params: &ModelParams,
    grad_estimates: &[Patch],
    grads: &mut ModelParams,
    want_input_grads: bool,
) -> Result<Option<Vec<Patch>>> {
    let n = cache.s65.len();
    if grad_estimates.len() != n {
        return Err(invalid("gradient count does not match cached burst"));
    }
    // Wiener stage: per frame, gain-grid grads and the spectrum grads.
    let mut grad_half = Array2::zeros((n, GAIN_HALF));
    let mut grad_s65: Vec<Spectrum> = Vec::with_capacity(n);
    for t in 0..n {
        let (grid_grad, spec_grad) =
            apply_wiener_backward(&cache.s65[t], &cache.gains[t], &grad_estimates[t]);
        let half = FilterGains::half_adjoint(&grid_grad);
        grad_half.row_mut(t).assign(&Array1::from_vec(half));
        grad_s65.push(spec_grad);
    }

    let grad_bands = predict_gains_backward(&cache.trunk, params, &grad_half, grads)?;
    let grad_features = band_share_backward(&cache.share, params, &grad_bands, grads)?;

    if !want_input_grads {
        return Ok(None);
    }

    // Scatter feature gradients back into complex spectrum gradients and
    // push them through the transform adjoints into the patches.
    let coords65 = half_plane_coords(PATCH_IN);
    let coords33 = half_plane_coords(33);
    let coords17 = half_plane_coords(17);
    let r = LOWPASS_RADIUS as i64;
    let mut input_grads = Vec::with_capacity(n);
    for t in 0..n {
        let mut g65 = grad_s65[t].clone();
        let b3 = coeff_grads_from_features(grad_features[2].row(t).as_slice().unwrap());
        for ((u, v), dz) in coords65.iter().zip(b3) {
            let idx = g65.index(*u, *v);
            g65.coeffs_mut()[idx] += BAND_SCALES[2] * dz;
        }
        let b4 = coeff_grads_from_features(grad_features[3].row(t).as_slice().unwrap());
        let mut it = b4.into_iter();
        for v in -r..=r {
            for u in -r..=r {
                let idx = g65.index(u, v);
                g65.coeffs_mut()[idx] += BAND_SCALES[3] * it.next().expect("81 lowpass grads");
            }
        }
        let mut dp = idft2(&g65);

        for (coords, grad_row, side, scale) in [
            (&coords33, grad_features[1].row(t), 33usize, BAND_SCALES[1]),
            (&coords17, grad_features[0].row(t), 17usize, BAND_SCALES[0]),
        ] {
            let mut gs = Spectrum::zeros(side, side);
            let dzs = coeff_grads_from_features(grad_row.as_slice().unwrap());
            for ((u, v), dz) in coords.iter().zip(dzs) {
                gs.set(*u, *v, scale * dz);
            }
            let sub = idft2(&gs);
            let off = (PATCH_IN - side) / 2;
            for y in 0..side {
                for x in 0..side {
                    let v = dp.get(y + off, x + off) + sub.get(y, x);
                    dp.set(y + off, x + off, v);
                }
            }
        }
        input_grads.push(dp);
    }
    Ok(Some(input_grads))
}

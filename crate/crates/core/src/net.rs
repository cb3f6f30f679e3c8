//! The full burst-restoration network: deconvolution stages followed by the
//! learnable fusion layer, with parameter initialization, shape validation,
//! and an end-to-end backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ndarray::{Array1, Array2};

use crate::deconv::{
    self, DeconvCache, GAIN_HALF, MERGE_HIGH_IN, MERGE_LOW_IN, PATCH_IN, PATCH_OUT,
};
use crate::error::{invalid, Result};
use crate::fba::{
    fba_fuse, learnable_fba_backward, learnable_fba_forward, learnable_fba_weights,
    smooth_weights, LfbaCache,
};
use crate::fourier::{dft2, idft2, Spectrum};
use crate::image::Patch;
use crate::nn::{glorot_uniform, identity_plus_noise, BurstMlpViews, ModelParams};

/// Reference merge width at width_scale 1; the encoding is twice this.
pub const FULL_MERGE_WIDTH: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    /// Number of frames the network consumes (14 in the standard pipeline).
    pub burst: usize,
    /// Scale on the trunk widths; 1 gives the 2048/4096 reference network.
    pub width_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { burst: 14, width_scale: 1.0 }
    }
}

impl NetConfig {
    pub fn merge_width(&self) -> usize {
        ((FULL_MERGE_WIDTH as f64 * self.width_scale).round() as usize).max(1)
    }

    pub fn encoding_width(&self) -> usize {
        2 * self.merge_width()
    }
}

/// Deconvolution network plus learnable fusion, owning all parameters.
#[derive(Debug, Clone)]
pub struct BurstNet {
    pub cfg: NetConfig,
    pub params: ModelParams,
}

/// Forward intermediates for [`BurstNet::backward`].
pub struct NetCache {
    deconv: DeconvCache,
    estimates: Vec<Patch>,
    lfba: LfbaCache,
}

impl BurstNet {
    /// Fresh network. Dense layers use Glorot-uniform weights with zero
    /// biases; burst-shared networks start at identity-plus-noise so the
    /// initial fusion approximates magnitude-proportional weighting.
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        if cfg.burst == 0 {
            return Err(invalid("burst size must be positive"));
        }
        if !(cfg.width_scale > 0.0 && cfg.width_scale <= 1.0) {
            return Err(invalid("width_scale must be in (0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.burst;
        let h = cfg.merge_width();
        let e = cfg.encoding_width();
        let mut params = ModelParams::new();
        for k in 1..=4 {
            params.insert2(&format!("share.b{k}.w1"), identity_plus_noise(&mut rng, n, 1e-2))?;
            params.insert1(&format!("share.b{k}.b1"), Array1::zeros(n))?;
            params.insert2(&format!("share.b{k}.w2"), Array2::eye(n))?;
            params.insert1(&format!("share.b{k}.b2"), Array1::zeros(n))?;
        }
        params.insert2("merge.low.w", glorot_uniform(&mut rng, h, MERGE_LOW_IN))?;
        params.insert1("merge.low.b", Array1::zeros(h))?;
        params.insert2("merge.high.w", glorot_uniform(&mut rng, h, MERGE_HIGH_IN))?;
        params.insert1("merge.high.b", Array1::zeros(h))?;
        params.insert2("trunk.fc1.w", glorot_uniform(&mut rng, e, e))?;
        params.insert1("trunk.fc1.b", Array1::zeros(e))?;
        params.insert2("trunk.fc2.w", glorot_uniform(&mut rng, e, e))?;
        params.insert1("trunk.fc2.b", Array1::zeros(e))?;
        params.insert2("head.w", glorot_uniform(&mut rng, GAIN_HALF, e))?;
        params.insert1("head.b", Array1::zeros(GAIN_HALF))?;
        params.insert2("fba.w1", identity_plus_noise(&mut rng, n, 1e-2))?;
        params.insert1("fba.b1", Array1::zeros(n))?;
        params.insert2("fba.w2", Array2::eye(n))?;
        params.insert1("fba.b2", Array1::zeros(n))?;
        Ok(Self { cfg, params })
    }

    /// Rebuild a network from loaded parameters, deriving and validating
    /// the configuration from the tensor shapes.
    pub fn from_params(params: ModelParams) -> Result<Self> {
        let n = params.mat("share.b1.w1")?.nrows();
        let h = params.mat("merge.low.w")?.nrows();
        let e = 2 * h;
        let expect2 = |name: &str, rows: usize, cols: usize| -> Result<()> {
            let m = params.mat(name)?;
            if m.nrows() != rows || m.ncols() != cols {
                return Err(invalid(format!(
                    "parameter {name:?} has shape {}x{}, want {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(())
        };
        let expect1 = |name: &str, len: usize| -> Result<()> {
            let v = params.vec(name)?;
            if v.len() != len {
                return Err(invalid(format!(
                    "parameter {name:?} has length {}, want {len}",
                    v.len()
                )));
            }
            Ok(())
        };
        for k in 1..=4 {
            expect2(&format!("share.b{k}.w1"), n, n)?;
            expect1(&format!("share.b{k}.b1"), n)?;
            expect2(&format!("share.b{k}.w2"), n, n)?;
            expect1(&format!("share.b{k}.b2"), n)?;
        }
        expect2("merge.low.w", h, MERGE_LOW_IN)?;
        expect1("merge.low.b", h)?;
        expect2("merge.high.w", h, MERGE_HIGH_IN)?;
        expect1("merge.high.b", h)?;
        expect2("trunk.fc1.w", e, e)?;
        expect1("trunk.fc1.b", e)?;
        expect2("trunk.fc2.w", e, e)?;
        expect1("trunk.fc2.b", e)?;
        expect2("head.w", GAIN_HALF, e)?;
        expect1("head.b", GAIN_HALF)?;
        expect2("fba.w1", n, n)?;
        expect1("fba.b1", n)?;
        expect2("fba.w2", n, n)?;
        expect1("fba.b2", n)?;
        let cfg = NetConfig {
            burst: n,
            width_scale: h as f64 / FULL_MERGE_WIDTH as f64,
        };
        Ok(Self { cfg, params })
    }

    pub fn burst_len(&self) -> usize {
        self.cfg.burst
    }

    fn fusion_views(&self) -> Result<BurstMlpViews<'_>> {
        BurstMlpViews::from_params(&self.params, "fba")
    }

    /// Full forward pass: per-frame estimates, their spectra, learnable
    /// fusion. Returns the fused 33×33 prediction and the backward cache.
    pub fn forward(&self, burst: &[Patch]) -> Result<(Patch, NetCache)> {
        let (estimates, dcache) = deconv::forward_burst(burst, &self.params)?;
        let spectra: Vec<Spectrum> = estimates.iter().map(dft2).collect();
        let (fused, lfba) = learnable_fba_forward(&spectra, &self.fusion_views()?)?;
        Ok((fused, NetCache { deconv: dcache, estimates, lfba }))
    }

    /// Reverse-mode gradients for the whole network. Returns parameter
    /// gradients and, when requested, gradients w.r.t. the input patches.
    pub fn backward(
        &self,
        cache: &NetCache,
        grad_pred: &Patch,
        want_input_grads: bool,
    ) -> Result<(ModelParams, Option<Vec<Patch>>)> {
        let mut grads = self.params.zeros_like();
        let mlp = self.fusion_views()?;
        let lgrads = learnable_fba_backward(&cache.lfba, &mlp, grad_pred)?;
        grads.get_mut("fba.w1")?.zip_mut_with(&lgrads.mlp.w1.into_dyn(), |a, b| *a += b);
        grads.get_mut("fba.b1")?.zip_mut_with(&lgrads.mlp.b1.into_dyn(), |a, b| *a += b);
        grads.get_mut("fba.w2")?.zip_mut_with(&lgrads.mlp.w2.into_dyn(), |a, b| *a += b);
        grads.get_mut("fba.b2")?.zip_mut_with(&lgrads.mlp.b2.into_dyn(), |a, b| *a += b);

        // Adjoint of the per-estimate forward transform.
        let grad_estimates: Vec<Patch> = lgrads.spectra.iter().map(idft2).collect();
        let input_grads = deconv::backward_burst(
            &cache.deconv,
            &self.params,
            &grad_estimates,
            &mut grads,
            want_input_grads,
        )?;
        let _ = &cache.estimates;
        Ok((grads, input_grads))
    }

    /// Inference-only prediction (no cache).
    pub fn predict(&self, burst: &[Patch]) -> Result<Patch> {
        self.forward(burst).map(|(p, _)| p)
    }

    /// Inference with Gaussian smoothing of the fusion weights, applied only
    /// at deployment (never during training).
    pub fn predict_smoothed(&self, burst: &[Patch], smoothing_sigma: f64) -> Result<Patch> {
        let (estimates, _) = deconv::forward_burst(burst, &self.params)?;
        let spectra: Vec<Spectrum> = estimates.iter().map(dft2).collect();
        let (field, _) = learnable_fba_weights(&spectra, &self.fusion_views()?)?;
        let field = smooth_weights(&field, smoothing_sigma);
        fba_fuse(&spectra, &field)
    }

    /// Per-frame 33×33 deconvolution estimates without fusion.
    pub fn per_frame_estimates(&self, burst: &[Patch]) -> Result<Vec<Patch>> {
        Ok(deconv::forward_burst(burst, &self.params)?.0)
    }
}

/// Forward intermediates for a whole batch of bursts. The training path
/// stacks examples so the trunk sees batch·burst rows per GEMM and the
/// shared per-coefficient networks see batch·positions columns; this is the
/// same arithmetic as the per-burst path, batched for throughput.
pub struct BatchCache {
    batch: usize,
    s65: Vec<Spectrum>,
    share_x: [Array2<f64>; 4],
    share_hidden: [Array2<f64>; 4],
    adjusted: Vec<crate::deconv::BandSet>,
    trunk: crate::deconv::TrunkCache,
    gains: Vec<crate::deconv::FilterGains>,
    est_spectra: Vec<Spectrum>,
    fba_mags: Array2<f64>,
    fba_denom: Array1<f64>,
    fba_norm: Array2<f64>,
    fba_hidden: Array2<f64>,
    fba_weights: Array2<f64>,
}

const EST_LEN: usize = PATCH_OUT * PATCH_OUT;

impl BurstNet {
    /// Batched forward pass over several bursts; returns one fused 33×33
    /// prediction per burst.
    pub fn forward_batch(&self, bursts: &[Vec<Patch>]) -> Result<(Vec<Patch>, BatchCache)> {
        let n = self.cfg.burst;
        let b = bursts.len();
        if b == 0 {
            return Err(invalid("empty batch"));
        }
        for burst in bursts {
            check_burst(burst, n)?;
        }
        // Band extraction for every (example, frame).
        let mut bands = Vec::with_capacity(b * n);
        let mut s65 = Vec::with_capacity(b * n);
        for burst in bursts {
            for p in burst {
                let (bd, s) = crate::deconv::extract_bands_cached(p)?;
                bands.push(bd);
                s65.push(s);
            }
        }
        // Band sharing: columns are (example, position) pairs.
        let mut share_x: Vec<Array2<f64>> = Vec::with_capacity(4);
        let mut share_hidden: Vec<Array2<f64>> = Vec::with_capacity(4);
        let mut adjusted = bands.clone();
        for k in 0..4 {
            let mk = bands[0].feats[k].len();
            let mut x = Array2::zeros((n, b * mk));
            for t in 0..n {
                let row = x.row_mut(t).into_slice().expect("row-major");
                for e in 0..b {
                    row[e * mk..(e + 1) * mk].copy_from_slice(&bands[e * n + t].feats[k]);
                }
            }
            let mlp = BurstMlpViews::from_params(&self.params, &format!("share.b{}", k + 1))?;
            let (y, hidden) = crate::nn::burst_mlp_forward(&x, &mlp)?;
            for t in 0..n {
                let row = y.row(t).to_slice().expect("row-major");
                for e in 0..b {
                    adjusted[e * n + t].feats[k]
                        .copy_from_slice(&row[e * mk..(e + 1) * mk]);
                }
            }
            share_x.push(x);
            share_hidden.push(hidden);
        }
        // Trunk over all batch·burst rows (weights are frame-shared).
        let (gains, trunk) = crate::deconv::predict_gains_burst(&adjusted, &self.params)?;
        // Wiener application and estimate spectra.
        let est_spectra: Vec<Spectrum> = s65
            .iter()
            .zip(&gains)
            .map(|(s, g)| dft2(&crate::deconv::apply_wiener_spectrum(s, g)))
            .collect();
        // Learnable fusion, batched over examples in the column axis.
        let mut fba_mags = Array2::zeros((n, b * EST_LEN));
        for t in 0..n {
            let row = fba_mags.row_mut(t).into_slice().expect("row-major");
            for e in 0..b {
                let coeffs = est_spectra[e * n + t].coeffs();
                for (j, z) in coeffs.iter().enumerate() {
                    row[e * EST_LEN + j] = z.norm();
                }
            }
        }
        let (fba_norm, fba_denom) = crate::fba::normalized_magnitudes(&fba_mags);
        let fusion = self.fusion_views()?;
        let (logits, fba_hidden) = crate::nn::burst_mlp_forward(&fba_norm, &fusion)?;
        let fba_weights = crate::fba::softmax_columns(&logits);
        let mut preds = Vec::with_capacity(b);
        for e in 0..b {
            let mut fused = Spectrum::zeros(PATCH_OUT, PATCH_OUT);
            for t in 0..n {
                let coeffs = est_spectra[e * n + t].coeffs();
                for (j, z) in coeffs.iter().enumerate() {
                    fused.coeffs_mut()[j] += fba_weights[[t, e * EST_LEN + j]] * z;
                }
            }
            preds.push(idft2(&fused));
        }
        let cache = BatchCache {
            batch: b,
            s65,
            share_x: share_x.try_into().expect("four bands"),
            share_hidden: share_hidden.try_into().expect("four bands"),
            adjusted,
            trunk,
            gains,
            est_spectra,
            fba_mags,
            fba_denom,
            fba_norm,
            fba_hidden,
            fba_weights,
        };
        Ok((preds, cache))
    }

    /// Parameter gradients for a batched forward pass. Gradients w.r.t. the
    /// input patches are not produced (training never needs them).
    pub fn backward_batch(&self, cache: &BatchCache, grad_preds: &[Patch]) -> Result<ModelParams> {
        let n = self.cfg.burst;
        let b = cache.batch;
        if grad_preds.len() != b {
            return Err(invalid("gradient count does not match cached batch"));
        }
        let mut grads = self.params.zeros_like();

        // Fusion backward, batched over the column axis.
        let mut grad_w = Array2::zeros((n, b * EST_LEN));
        let mut grad_est_spectra: Vec<Spectrum> =
            (0..b * n).map(|_| Spectrum::zeros(PATCH_OUT, PATCH_OUT)).collect();
        for e in 0..b {
            let g_spec = dft2(&grad_preds[e]);
            for t in 0..n {
                let alpha = cache.est_spectra[e * n + t].coeffs();
                let gs = grad_est_spectra[e * n + t].coeffs_mut();
                for (j, g) in g_spec.coeffs().iter().enumerate() {
                    grad_w[[t, e * EST_LEN + j]] = (g * alpha[j].conj()).re;
                    gs[j] += cache.fba_weights[[t, e * EST_LEN + j]] * g;
                }
            }
        }
        let grad_logits = crate::fba::softmax_backward_columns(&cache.fba_weights, &grad_w);
        let fusion = self.fusion_views()?;
        let fg = crate::nn::burst_mlp_backward(
            &cache.fba_norm,
            &fusion,
            &cache.fba_hidden,
            &grad_logits,
        );
        grads.get_mut("fba.w1")?.zip_mut_with(&fg.w1.into_dyn(), |a, g| *a += g);
        grads.get_mut("fba.b1")?.zip_mut_with(&fg.b1.into_dyn(), |a, g| *a += g);
        grads.get_mut("fba.w2")?.zip_mut_with(&fg.w2.into_dyn(), |a, g| *a += g);
        grads.get_mut("fba.b2")?.zip_mut_with(&fg.b2.into_dyn(), |a, g| *a += g);
        let grad_mags =
            crate::fba::normalized_magnitudes_backward(&cache.fba_mags, &cache.fba_denom, &fg.x);
        for e in 0..b {
            for t in 0..n {
                let alpha = cache.est_spectra[e * n + t].coeffs();
                let gs = grad_est_spectra[e * n + t].coeffs_mut();
                for j in 0..EST_LEN {
                    let mag = cache.fba_mags[[t, e * EST_LEN + j]];
                    if mag > 0.0 {
                        let scale = grad_mags[[t, e * EST_LEN + j]] / mag;
                        gs[j] += crate::fourier::Complex64::new(
                            scale * alpha[j].re,
                            scale * alpha[j].im,
                        );
                    }
                }
            }
        }

        // Wiener backward per (example, frame); the gain-grid gradients feed
        // the trunk, the spectrum path stops here (no input grads).
        let mut grad_half = Array2::zeros((b * n, GAIN_HALF));
        for r in 0..b * n {
            let grad_est = idft2(&grad_est_spectra[r]);
            let (grid_grad, _) = crate::deconv::apply_wiener_backward(
                &cache.s65[r],
                &cache.gains[r],
                &grad_est,
            );
            let half = crate::deconv::FilterGains::half_adjoint(&grid_grad);
            grad_half.row_mut(r).assign(&Array1::from_vec(half));
        }

        let grad_bands = crate::deconv::predict_gains_backward(
            &cache.trunk,
            &self.params,
            &grad_half,
            &mut grads,
        )?;

        // Regroup trunk feature gradients into share-layer column layout and
        // run the shared-MLP backward per band.
        for k in 0..4 {
            let mk = cache.share_x[k].ncols() / b;
            let mut gy = Array2::zeros((n, b * mk));
            for t in 0..n {
                let dst = gy.row_mut(t).into_slice().expect("row-major");
                for e in 0..b {
                    let src = grad_bands[k].row(e * n + t);
                    dst[e * mk..(e + 1) * mk]
                        .copy_from_slice(src.to_slice().expect("row-major"));
                }
            }
            let prefix = format!("share.b{}", k + 1);
            let mlp = BurstMlpViews::from_params(&self.params, &prefix)?;
            let g = crate::nn::burst_mlp_backward(
                &cache.share_x[k],
                &mlp,
                &cache.share_hidden[k],
                &gy,
            );
            grads.get_mut(&format!("{prefix}.w1"))?.zip_mut_with(&g.w1.into_dyn(), |a, v| *a += v);
            grads.get_mut(&format!("{prefix}.b1"))?.zip_mut_with(&g.b1.into_dyn(), |a, v| *a += v);
            grads.get_mut(&format!("{prefix}.w2"))?.zip_mut_with(&g.w2.into_dyn(), |a, v| *a += v);
            grads.get_mut(&format!("{prefix}.b2"))?.zip_mut_with(&g.b2.into_dyn(), |a, v| *a += v);
        }
        let _ = &cache.adjusted;
        Ok(grads)
    }
}

/// Shared input contract of the network.
pub fn check_burst(burst: &[Patch], n: usize) -> Result<()> {
    if burst.len() != n {
        return Err(invalid(format!("expected {n} frames, got {}", burst.len())));
    }
    if burst.iter().any(|p| p.side() != PATCH_IN) {
        return Err(invalid(format!("every frame must be {PATCH_IN}x{PATCH_IN}")));
    }
    Ok(())
}

/// The fixed layer-boundary table for a given configuration, used by the
/// shape audit: band features, merge outputs, encoding, trunk, head, grid.
pub fn layer_boundaries(cfg: &NetConfig) -> Vec<(String, usize)> {
    let h = cfg.merge_width();
    let e = cfg.encoding_width();
    vec![
        ("band1".into(), 290),
        ("band2".into(), 1090),
        ("band3".into(), 4226),
        ("band4".into(), 162),
        ("merge.low".into(), h),
        ("merge.high".into(), h),
        ("encoding".into(), e),
        ("trunk.fc1".into(), e),
        ("trunk.fc2".into(), e),
        ("head".into(), GAIN_HALF),
        ("gains".into(), PATCH_IN * PATCH_IN),
        ("output".into(), PATCH_OUT * PATCH_OUT),
    ]
}

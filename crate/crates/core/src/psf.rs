//! Synthetic camera-shake point spread functions.
//!
//! Shake trajectories are drawn from a Gaussian process with a Matérn ν=3/2
//! covariance over t ∈ [0,1], rasterized onto a kernel grid by bilinear
//! splatting. Spatially varying blur splits one trajectory into contiguous
//! fragments, rasterizes each, and applies them with an overlap-add
//! (Efficient Filter Flow) scheme over a partition-of-unity window grid.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::fourier::{self, Boundary};
use crate::image::Image;

/// Non-negative K×K point spread function summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    side: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    /// Build from raw weights, validating non-negativity and normalizing
    /// the sum to exactly 1.
    pub fn new(side: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != side * side || side == 0 {
            return Err(invalid("kernel weight count does not match side"));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(invalid("kernel weights must be finite and non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(invalid("kernel weights must not all be zero"));
        }
        let weights = weights.iter().map(|w| w / sum).collect();
        Ok(Self { side, weights })
    }

    /// Identity kernel: all mass at the center pixel.
    pub fn delta(side: usize) -> Self {
        assert!(side % 2 == 1, "delta kernel needs an odd side");
        let mut weights = vec![0.0; side * side];
        weights[(side / 2) * side + side / 2] = 1.0;
        Self { side, weights }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Convolve an image with this kernel.
    pub fn apply(&self, img: &Image, boundary: Boundary) -> Result<Image> {
        fourier::fft_convolve(img, &self.weights, self.side, boundary)
    }
}

/// 2-D image-plane shake path over uniformly spaced times in [0,1].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Trajectory {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(invalid("trajectory needs >= 2 equal-length coordinate lists"));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(invalid("trajectory coordinates must be finite"));
        }
        Ok(Self { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// Matérn ν=3/2 Gaussian process configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GpConfig {
    /// Smoothness; only ν = 3/2 is supported.
    pub nu: f64,
    /// Length scale on the unit time interval.
    pub length_scale: f64,
    /// Marginal variance in pixels².
    pub variance: f64,
    /// Number of uniformly spaced time samples.
    pub samples: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self { nu: 1.5, length_scale: 0.3, variance: 4.0, samples: 250 }
    }
}

/// Matérn ν=3/2 covariance: σ²·(1 + √3·d/ℓ)·exp(−√3·d/ℓ).
pub fn matern_cov(d: f64, cfg: &GpConfig) -> Result<f64> {
    if d < 0.0 {
        return Err(invalid("matern_cov distance must be non-negative"));
    }
    if cfg.nu != 1.5 {
        return Err(invalid("only Matérn nu = 3/2 is supported"));
    }
    if cfg.length_scale <= 0.0 || cfg.variance <= 0.0 {
        return Err(invalid("length_scale and variance must be positive"));
    }
    let s = 3f64.sqrt() * d / cfg.length_scale;
    Ok(cfg.variance * (1.0 + s) * (-s).exp())
}

/// Lower-triangular Cholesky factor of a symmetric matrix, or None if a
/// non-positive pivot is hit.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let dj = diag.sqrt();
        l[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / dj;
        }
    }
    Some(l)
}

/// Prepared GP sampler: the covariance Cholesky factor is computed once and
/// reused for every draw, which matters when synthesizing kernels in bulk.
#[derive(Debug, Clone)]
pub struct GpSampler {
    cfg: GpConfig,
    chol: Vec<f64>,
}

impl GpSampler {
    pub fn new(cfg: GpConfig) -> Result<Self> {
        if cfg.samples < 2 {
            return Err(invalid("GP sampler needs at least 2 time samples"));
        }
        let n = cfg.samples;
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = (i as f64 - j as f64).abs() / (n - 1) as f64;
                cov[i * n + j] = matern_cov(d, &cfg)?;
            }
        }
        // Relative diagonal jitter (scaled by the marginal variance) starts
        // at 1e-10 and escalates x10 up to 3 retries.
        let mut jitter = 1e-10 * cfg.variance;
        for _ in 0..4 {
            let mut a = cov.clone();
            for i in 0..n {
                a[i * n + i] += jitter;
            }
            if let Some(chol) = cholesky(&a, n) {
                return Ok(Self { cfg, chol });
            }
            jitter *= 10.0;
        }
        Err(Error::NumericFailure(
            "GP covariance not factorizable after jitter escalation".into(),
        ))
    }

    pub fn config(&self) -> &GpConfig {
        &self.cfg
    }

    /// One raw (uncentered) GP draw over the time grid: L·z with z ~ N(0, I).
    pub fn draw_series(&self, rng: &mut impl Rng) -> Vec<f64> {
        let n = self.cfg.samples;
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let row = &self.chol[i * n..i * n + i + 1];
            out[i] = row.iter().zip(&z).map(|(l, zv)| l * zv).sum();
        }
        out
    }

    /// Two independent GP draws as (x(t), y(t)), mean-centered so the
    /// trajectory centroid sits at the origin.
    pub fn sample_trajectory(&self, rng: &mut impl Rng) -> Trajectory {
        let mut xs = self.draw_series(rng);
        let mut ys = self.draw_series(rng);
        for series in [&mut xs, &mut ys] {
            let mean = series.iter().sum::<f64>() / series.len() as f64;
            for v in series.iter_mut() {
                *v -= mean;
            }
        }
        Trajectory { xs, ys }
    }
}

/// Convenience wrapper building a sampler per call; batch users should hold
/// a [`GpSampler`].
pub fn sample_trajectory(cfg: &GpConfig, rng: &mut impl Rng) -> Result<Trajectory> {
    Ok(GpSampler::new(cfg.clone())?.sample_trajectory(rng))
}

/// Rasterize a trajectory onto a K×K kernel by bilinear splatting; each of
/// the T samples deposits mass 1/T. The trajectory is isotropically rescaled
/// if needed so max |coordinate| ≤ (K−1)/2 − 1, then the result is
/// normalized to sum 1.
pub fn rasterize(traj: &Trajectory, side: usize) -> Result<BlurKernel> {
    if traj.is_empty() {
        return Err(invalid("cannot rasterize an empty trajectory"));
    }
    if side < 3 || side % 2 == 0 {
        return Err(invalid("kernel side must be odd and >= 3"));
    }
    let bound = (side - 1) as f64 / 2.0 - 1.0;
    let max_abs = traj
        .xs
        .iter()
        .chain(&traj.ys)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if max_abs > bound { bound / max_abs } else { 1.0 };
    let center = (side / 2) as f64;
    let mut weights = vec![0.0; side * side];
    let mass = 1.0 / traj.len() as f64;
    for (&x, &y) in traj.xs.iter().zip(&traj.ys) {
        let px = center + x * scale;
        let py = center + y * scale;
        let (x0, y0) = (px.floor(), py.floor());
        let (fx, fy) = (px - x0, py - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        weights[y0 * side + x0] += mass * (1.0 - fx) * (1.0 - fy);
        weights[y0 * side + x0 + 1] += mass * fx * (1.0 - fy);
        weights[(y0 + 1) * side + x0] += mass * (1.0 - fx) * fy;
        weights[(y0 + 1) * side + x0 + 1] += mass * fx * fy;
    }
    BlurKernel::new(side, weights)
}

/// Split a trajectory into contiguous fragments of near-equal length
/// (⌊T/f⌋ or ⌈T/f⌉ samples, covering every sample exactly once), re-center
/// each fragment, and rasterize at 17×17.
pub fn split_trajectory(traj: &Trajectory, fragments: usize) -> Result<Vec<BlurKernel>> {
    split_trajectory_sized(traj, fragments, 17)
}

pub fn split_trajectory_sized(
    traj: &Trajectory,
    fragments: usize,
    kernel_side: usize,
) -> Result<Vec<BlurKernel>> {
    let t = traj.len();
    if fragments == 0 || fragments > t {
        return Err(invalid(format!(
            "cannot split {t} samples into {fragments} fragments"
        )));
    }
    let base = t / fragments;
    let extra = t % fragments;
    let mut out = Vec::with_capacity(fragments);
    let mut start = 0usize;
    for f in 0..fragments {
        let len = base + usize::from(f < extra);
        let xs = traj.xs[start..start + len].to_vec();
        let ys = traj.ys[start..start + len].to_vec();
        start += len;
        let (mx, my) = (
            xs.iter().sum::<f64>() / len as f64,
            ys.iter().sum::<f64>() / len as f64,
        );
        let frag = Trajectory {
            xs: xs.iter().map(|v| v - mx).collect(),
            ys: ys.iter().map(|v| v - my).collect(),
        };
        out.push(rasterize(&frag, kernel_side)?);
    }
    debug_assert_eq!(start, t);
    Ok(out)
}

/// Bartlett–Hann window sample at position n of length len.
fn bartlett_hann(n: usize, len: usize) -> f64 {
    if len == 1 {
        return 1.0;
    }
    let x = n as f64 / (len - 1) as f64;
    0.62 - 0.48 * (x - 0.5).abs() - 0.38 * (2.0 * std::f64::consts::PI * x).cos()
}

/// 1-D partition of unity: `regions` half-overlapping Bartlett–Hann windows
/// covering [0, len), renormalized pointwise so they sum to exactly 1.
/// Returns (start, weights-per-pixel) per region.
fn window_partition(len: usize, regions: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    if regions == 0 {
        return Err(invalid("need at least one window region"));
    }
    if regions == 1 {
        return Ok(vec![(0, vec![1.0; len])]);
    }
    if len < regions + 1 {
        return Err(invalid(format!(
            "axis of length {len} too short for {regions} overlapping regions"
        )));
    }
    let w = (2 * len).div_ceil(regions + 1);
    let mut spans = Vec::with_capacity(regions);
    for r in 0..regions {
        let start = r * (len - w) / (regions - 1);
        spans.push((start, (0..w).map(|n| bartlett_hann(n, w)).collect::<Vec<_>>()));
    }
    // Pointwise renormalization enforces the exact partition of unity; where
    // every covering window is zero (axis endpoints) the covering regions
    // share the pixel uniformly.
    let mut sums = vec![0.0; len];
    for (start, win) in &spans {
        for (i, v) in win.iter().enumerate() {
            sums[start + i] += v;
        }
    }
    for p in 0..len {
        if sums[p] > 1e-12 {
            continue;
        }
        let covering: Vec<usize> = spans
            .iter()
            .enumerate()
            .filter(|(_, (s, win))| p >= *s && p < s + win.len())
            .map(|(r, _)| r)
            .collect();
        if covering.is_empty() {
            return Err(Error::NumericFailure(format!(
                "window partition left position {p} uncovered"
            )));
        }
        let share = 1.0 / covering.len() as f64;
        for r in covering {
            let (s, win) = &mut spans[r];
            win[p - *s] = share;
        }
        sums[p] = 1.0;
    }
    for (start, win) in &mut spans {
        for (i, v) in win.iter_mut().enumerate() {
            *v /= sums[*start + i];
        }
    }
    Ok(spans)
}

/// Spatially varying blur as a windowed sum of regionally invariant
/// convolutions: the image is convolved with each region's kernel (reflect
/// boundary) and the results are blended by a grid of partition-of-unity
/// Bartlett–Hann windows with 50% overlap per axis. With identical kernels
/// this reduces exactly to a single global convolution, and any set of
/// mass-1 kernels preserves constant images.
pub fn eff_blur(
    img: &Image,
    kernels: &[BlurKernel],
    grid_rows: usize,
    grid_cols: usize,
) -> Result<Image> {
    if kernels.len() != grid_rows * grid_cols {
        return Err(invalid(format!(
            "expected {} kernels for a {grid_rows}x{grid_cols} grid, got {}",
            grid_rows * grid_cols,
            kernels.len()
        )));
    }
    let rows = window_partition(img.height(), grid_rows)?;
    let cols = window_partition(img.width(), grid_cols)?;
    let mut out = Image::zeros(img.height(), img.width(), img.channels());
    for (r, (y0, wy)) in rows.iter().enumerate() {
        for (c, (x0, wx)) in cols.iter().enumerate() {
            let blurred = kernels[r * grid_cols + c].apply(img, Boundary::ReflectPad)?;
            for (dy, vy) in wy.iter().enumerate() {
                for (dx, vx) in wx.iter().enumerate() {
                    let weight = vy * vx;
                    if weight == 0.0 {
                        continue;
                    }
                    for ch in 0..img.channels() {
                        let v = out.get(y0 + dy, x0 + dx, ch)
                            + weight * blurred.get(y0 + dy, x0 + dx, ch);
                        out.set(y0 + dy, x0 + dx, ch, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Write a kernel as plain text: first line the side K, then K rows of K
/// space-separated decimals.
pub fn write_kernel(path: &Path, kernel: &BlurKernel) -> Result<()> {
    let mut text = format!("{}\n", kernel.side());
    for row in kernel.weights().chunks_exact(kernel.side()) {
        let mut line = String::new();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{v:.17e}");
        }
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Read a kernel written by [`write_kernel`].
pub fn read_kernel(path: &Path) -> Result<BlurKernel> {
    let text = std::fs::read_to_string(path)?;
    let mut tokens = text.split_ascii_whitespace();
    let side: usize = tokens
        .next()
        .ok_or_else(|| Error::Format("empty kernel file".into()))?
        .parse()
        .map_err(|_| Error::Format("bad kernel side".into()))?;
    let weights: Vec<f64> = tokens
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format("bad kernel weight".into()))?;
    if weights.len() != side * side {
        return Err(Error::Format(format!(
            "kernel file has {} weights, want {}",
            weights.len(),
            side * side
        )));
    }
    BlurKernel::new(side, weights)
}

//! Minimal neural-network engine: dense layers, ReLU, the burst-shared
//! per-coefficient MLP, MSE loss, SGD with momentum and a step-decay
//! learning-rate schedule, binary checkpoints, and finite-difference
//! gradient checking.
//!
//! All math is f64. Parameters live in a [`ModelParams`] map keyed by name;
//! map iteration is lexicographic, which fixes the checkpoint layout and
//! makes optimizer updates deterministic.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, Axis, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// Named collection of trainable tensors. Shapes are fixed at insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, ArrayD<f64>>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: ArrayD<f64>) -> Result<()> {
        if self.tensors.contains_key(name) {
            return Err(invalid(format!("duplicate parameter name {name:?}")));
        }
        self.tensors.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn insert2(&mut self, name: &str, tensor: Array2<f64>) -> Result<()> {
        self.insert(name, tensor.into_dyn())
    }

    pub fn insert1(&mut self, name: &str, tensor: Array1<f64>) -> Result<()> {
        self.insert(name, tensor.into_dyn())
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| invalid(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ArrayD<f64>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| invalid(format!("missing parameter {name:?}")))
    }

    /// View a rank-2 tensor as a matrix.
    pub fn mat(&self, name: &str) -> Result<ArrayView2<'_, f64>> {
        self.get(name)?
            .view()
            .into_dimensionality()
            .map_err(|_| invalid(format!("parameter {name:?} is not a matrix")))
    }

    /// View a rank-1 tensor as a vector.
    pub fn vec(&self, name: &str) -> Result<ArrayView1<'_, f64>> {
        self.get(name)?
            .view()
            .into_dimensionality()
            .map_err(|_| invalid(format!("parameter {name:?} is not a vector")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values.
    pub fn value_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Same names and shapes, all values zero. Used for gradient buffers.
    pub fn zeros_like(&self) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
            .collect();
        Self { tensors }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Global l2 norm across every tensor.
    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .values()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Accumulate `other` into self (same structure required).
    pub fn add_assign(&mut self, other: &ModelParams) -> Result<()> {
        for (name, g) in other.iter() {
            let t = self.get_mut(name)?;
            if t.raw_dim() != g.raw_dim() {
                return Err(invalid(format!("shape mismatch accumulating {name:?}")));
            }
            t.zip_mut_with(g, |a, b| *a += b);
        }
        Ok(())
    }
}

/// y = W·x + b.
pub fn dense_forward(x: ArrayView1<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    if w.ncols() != x.len() || w.nrows() != b.len() {
        return Err(invalid(format!(
            "dense shape mismatch: W {}x{}, x {}, b {}",
            w.nrows(),
            w.ncols(),
            x.len(),
            b.len()
        )));
    }
    Ok(w.dot(&x) + b)
}

/// Gradients of a dense layer given upstream grad_y.
pub fn dense_backward(
    x: ArrayView1<f64>,
    w: ArrayView2<f64>,
    grad_y: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array2<f64>, Array1<f64>)> {
    if w.ncols() != x.len() || w.nrows() != grad_y.len() {
        return Err(invalid("dense backward shape mismatch"));
    }
    let grad_x = w.t().dot(&grad_y);
    let grad_w = Array2::from_shape_fn((grad_y.len(), x.len()), |(i, j)| grad_y[i] * x[j]);
    Ok((grad_x, grad_w, grad_y.to_owned()))
}

/// Row-batched dense layer: rows of `x` are independent inputs.
pub fn dense_forward_rows(
    x: &Array2<f64>,
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
) -> Array2<f64> {
    debug_assert_eq!(x.ncols(), w.ncols());
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Row-batched dense backward; weight gradients sum over rows.
pub fn dense_backward_rows(
    x: &Array2<f64>,
    w: ArrayView2<f64>,
    grad_y: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let grad_x = grad_y.dot(&w);
    let grad_w = grad_y.t().dot(x);
    let grad_b = grad_y.sum_axis(Axis(0));
    (grad_x, grad_w, grad_b)
}

pub fn relu(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Mask upstream gradients by the sign of the cached preactivation
/// (subgradient 0 at exactly zero).
pub fn relu_backward(pre: &Array2<f64>, grad: &mut Array2<f64>) {
    grad.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Parameters of a burst-shared two-layer MLP (N -> N -> N, ReLU between).
#[derive(Debug, Clone)]
pub struct BurstMlpViews<'a> {
    pub w1: ArrayView2<'a, f64>,
    pub b1: ArrayView1<'a, f64>,
    pub w2: ArrayView2<'a, f64>,
    pub b2: ArrayView1<'a, f64>,
}

impl<'a> BurstMlpViews<'a> {
    pub fn from_params(params: &'a ModelParams, prefix: &str) -> Result<Self> {
        Ok(Self {
            w1: params.mat(&format!("{prefix}.w1"))?,
            b1: params.vec(&format!("{prefix}.b1"))?,
            w2: params.mat(&format!("{prefix}.w2"))?,
            b2: params.vec(&format!("{prefix}.b2"))?,
        })
    }

    pub fn burst_len(&self) -> usize {
        self.w1.nrows()
    }
}

/// Apply the shared MLP independently at each of the M column positions of
/// an N×M input: equivalent to a 1×1 convolution over positions with N
/// channels. Returns the output and the cached hidden preactivation.
pub fn burst_mlp_forward(
    x: &Array2<f64>,
    mlp: &BurstMlpViews,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = mlp.burst_len();
    if x.nrows() != n || mlp.w1.ncols() != n || mlp.w2.nrows() != n || mlp.w2.ncols() != n {
        return Err(invalid(format!(
            "burst MLP sized for N={n} got input with {} rows",
            x.nrows()
        )));
    }
    let mut hidden_pre = mlp.w1.dot(x);
    for (i, mut row) in hidden_pre.outer_iter_mut().enumerate() {
        let bi = mlp.b1[i];
        row.mapv_inplace(|v| v + bi);
    }
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let mut y = mlp.w2.dot(&hidden);
    for (i, mut row) in y.outer_iter_mut().enumerate() {
        let bi = mlp.b2[i];
        row.mapv_inplace(|v| v + bi);
    }
    Ok((y, hidden_pre))
}

/// Gradients for [`burst_mlp_forward`]; weight grads sum over positions.
pub struct BurstMlpGrads {
    pub x: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

pub fn burst_mlp_backward(
    x: &Array2<f64>,
    mlp: &BurstMlpViews,
    hidden_pre: &Array2<f64>,
    grad_y: &Array2<f64>,
) -> BurstMlpGrads {
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let grad_w2 = grad_y.dot(&hidden.t());
    let grad_b2 = grad_y.sum_axis(Axis(1));
    let mut grad_h = mlp.w2.t().dot(grad_y);
    relu_backward(hidden_pre, &mut grad_h);
    let grad_w1 = grad_h.dot(&x.t());
    let grad_b1 = grad_h.sum_axis(Axis(1));
    let grad_x = mlp.w1.t().dot(&grad_h);
    BurstMlpGrads { x: grad_x, w1: grad_w1, b1: grad_b1, w2: grad_w2, b2: grad_b2 }
}

/// Mean squared error and its gradient w.r.t. the prediction.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(invalid("mse_loss requires equal-length non-empty inputs"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Step-decay learning rate: base · decay^⌊step/period⌋.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: f64,
    pub period: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base: 2.0, decay: 0.8, period: 5000 }
    }
}

impl LrSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        self.base * self.decay.powi((step / self.period) as i32)
    }
}

/// SGD with momentum: v ← β·v + g; p ← p − lr(step)·v.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    velocity: ModelParams,
    pub beta: f64,
    pub schedule: LrSchedule,
    step: u64,
}

impl SgdMomentum {
    pub fn new(params: &ModelParams, beta: f64, schedule: LrSchedule) -> Self {
        Self { velocity: params.zeros_like(), beta, schedule, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Learning rate the next accepted step will use.
    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    /// Apply one update. Non-finite gradients reject the step (no state is
    /// touched) and surface as a numeric failure for the caller to report.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<f64> {
        if !grads.all_finite() {
            return Err(Error::NumericFailure(
                "non-finite gradient; step rejected".into(),
            ));
        }
        let lr = self.schedule.lr(self.step);
        for (name, g) in grads.iter() {
            let v = self.velocity.get_mut(name)?;
            v.zip_mut_with(g, |v, &g| *v = *v * self.beta + g);
            let p = params.get_mut(name)?;
            p.zip_mut_with(&*v, |p, &v| *p -= lr * v);
        }
        self.step += 1;
        Ok(lr)
    }
}

/// Glorot uniform initialization for a dense weight matrix.
pub fn glorot_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

/// Identity matrix plus Gaussian noise of the given standard deviation.
pub fn identity_plus_noise(rng: &mut impl Rng, n: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        let noise: f64 = rng.sample(StandardNormal);
        f64::from(i == j) + std * noise
    })
}

/// Max relative error between analytic gradients and central differences
/// of a scalar function, with denominator max(|a|, |n|, 1e-8).
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
) -> f64 {
    grad_check_coords(&mut f, x, analytic, eps, &(0..x.len()).collect::<Vec<_>>())
}

/// Like [`grad_check`] but probing only the listed coordinates, which keeps
/// checks of large parameter tensors tractable.
pub fn grad_check_coords(
    f: &mut impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: &[usize],
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        probe[i] = x[i] + eps;
        let fp = f(&probe);
        probe[i] = x[i] - eps;
        let fm = f(&probe);
        probe[i] = x[i];
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Pick every `step`-th coordinate whose analytic gradient carries at least
/// `rel_floor` of the maximum magnitude. Central differences on coordinates
/// whose true gradient is orders of magnitude below the function value sit
/// under the f64 rounding floor and say nothing about correctness; probing
/// the coordinates that carry the gradient mass does.
pub fn significant_coords(analytic: &[f64], step: usize, rel_floor: f64) -> Vec<usize> {
    let max = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = rel_floor * max;
    let coords: Vec<usize> = (0..analytic.len())
        .step_by(step.max(1))
        .filter(|&i| analytic[i].abs() >= floor)
        .collect();
    assert!(
        !coords.is_empty(),
        "no significant coordinates to probe (max |grad| = {max})"
    );
    coords
}

const CHECKPOINT_MAGIC: &[u8; 6] = b"BDNET1";

/// Write parameters to a binary checkpoint. Layout: magic "BDNET1",
/// u32 tensor count, then per tensor u16 name length + name bytes,
/// u8 rank, u32 dims, f64 little-endian values. Bit-exact round trip.
pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(invalid("parameter name too long for checkpoint format"));
        }
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        let shape = tensor.shape();
        if shape.len() > u8::MAX as usize {
            return Err(invalid("tensor rank too large for checkpoint format"));
        }
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let slice = bytes
            .get(*pos..*pos + n)
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        *pos += n;
        Ok(slice)
    };
    if take(&mut pos, 6)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic (want BDNET1)".into()));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut params = ModelParams::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let n: usize = dims.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let tensor = ArrayD::from_shape_vec(IxDyn(&dims), values)
            .map_err(|_| Error::Format("checkpoint tensor shape mismatch".into()))?;
        params.insert(&name, tensor)?;
    }
    if pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(params)
}

/// CSV-friendly float formatting used by the training log (shortest
/// round-trippable representation).
pub fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_identity_passthrough() {
        let x = Array1::from_vec(vec![1.0, -2.0, 3.0]);
        let w = Array2::eye(3);
        let b = Array1::zeros(3);
        let y = dense_forward(x.view(), w.view(), b.view()).unwrap();
        assert_eq!(y, x);
        assert!(dense_forward(x.view(), Array2::eye(4).view(), b.view()).is_err());
    }

    #[test]
    fn dense_grad_b_equals_upstream() {
        let x = Array1::from_vec(vec![0.5, -0.3]);
        let w = Array2::from_shape_vec((3, 2), vec![0.1, 0.2, -0.4, 0.3, 0.7, -0.1]).unwrap();
        let g = Array1::from_vec(vec![1.0, -2.0, 0.5]);
        let (_, _, gb) = dense_backward(x.view(), w.view(), g.view()).unwrap();
        assert_eq!(gb, g);
    }

    #[test]
    fn dense_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = glorot_uniform(&mut rng, 5, 7);
        let b = Array1::from_shape_fn(5, |_| rng.gen_range(-0.5..0.5));
        let x = Array1::from_shape_fn(7, |_| rng.gen_range(-1.0..1.0));
        let c = Array1::from_shape_fn(5, |_| rng.gen_range(0.5..1.5));
        // scalar loss: c · (Wx + b)
        let loss = |xs: &[f64]| {
            let xv = Array1::from_vec(xs.to_vec());
            dense_forward(xv.view(), w.view(), b.view()).unwrap().dot(&c)
        };
        let grad_y = c.clone();
        let (gx, gw, gb) = dense_backward(x.view(), w.view(), grad_y.view()).unwrap();
        let err = grad_check(loss, x.as_slice().unwrap(), gx.as_slice().unwrap(), 1e-6);
        assert!(err < 1e-4, "input grad err {err}");

        // and w.r.t. the weights
        let x2 = x.clone();
        let loss_w = |ws: &[f64]| {
            let wv = Array2::from_shape_vec((5, 7), ws.to_vec()).unwrap();
            dense_forward(x2.view(), wv.view(), b.view()).unwrap().dot(&c)
        };
        let err = grad_check(
            loss_w,
            w.as_slice().unwrap(),
            gw.as_slice().unwrap(),
            1e-6,
        );
        assert!(err < 1e-4, "weight grad err {err}");
        assert_eq!(gb, c);
    }

    #[test]
    fn batched_dense_agrees_with_vector_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = glorot_uniform(&mut rng, 4, 6);
        let b = Array1::from_shape_fn(4, |_| rng.gen_range(-0.5..0.5));
        let x = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0));
        let y = dense_forward_rows(&x, w.view(), b.view());
        for r in 0..3 {
            let yr = dense_forward(x.row(r), w.view(), b.view()).unwrap();
            for c in 0..4 {
                assert!((y[[r, c]] - yr[c]).abs() < 1e-12);
            }
        }
    }

    fn toy_mlp(n: usize, seed: u64) -> (Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            glorot_uniform(&mut rng, n, n),
            Array1::from_shape_fn(n, |_| rng.gen_range(-0.3..0.3)),
            glorot_uniform(&mut rng, n, n),
            Array1::from_shape_fn(n, |_| rng.gen_range(-0.3..0.3)),
        )
    }

    #[test]
    fn burst_mlp_identity_passthrough_on_nonnegative_input() {
        let n = 4;
        let w = Array2::eye(n);
        let b = Array1::zeros(n);
        let mlp = BurstMlpViews { w1: w.view(), b1: b.view(), w2: w.view(), b2: b.view() };
        let x = Array2::from_shape_fn((n, 6), |(i, j)| (i + j) as f64 * 0.1);
        let (y, _) = burst_mlp_forward(&x, &mlp).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn burst_mlp_single_position_is_dense_composition() {
        let n = 5;
        let (w1, b1, w2, b2) = toy_mlp(n, 3);
        let mlp = BurstMlpViews { w1: w1.view(), b1: b1.view(), w2: w2.view(), b2: b2.view() };
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 * 0.3 - 0.7);
        let (y, _) = burst_mlp_forward(&x, &mlp).unwrap();
        let mut h = dense_forward(x.column(0), w1.view(), b1.view()).unwrap();
        h.mapv_inplace(|v| v.max(0.0));
        let want = dense_forward(h.view(), w2.view(), b2.view()).unwrap();
        for i in 0..n {
            assert!((y[[i, 0]] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn burst_mlp_is_positionwise_local() {
        let n = 3;
        let (w1, b1, w2, b2) = toy_mlp(n, 4);
        let mlp = BurstMlpViews { w1: w1.view(), b1: b1.view(), w2: w2.view(), b2: b2.view() };
        let x = Array2::from_shape_fn((n, 8), |(i, j)| ((i * 8 + j) as f64).sin());
        let (y, _) = burst_mlp_forward(&x, &mlp).unwrap();
        let mut x2 = x.clone();
        x2[[1, 5]] += 0.25;
        let (y2, _) = burst_mlp_forward(&x2, &mlp).unwrap();
        for j in 0..8 {
            for i in 0..n {
                if j == 5 {
                    continue;
                }
                assert_eq!(y[[i, j]], y2[[i, j]], "column {j} must be untouched");
            }
        }
        assert!((&y2.column(5) - &y.column(5)).iter().any(|d| d.abs() > 1e-9));
    }

    #[test]
    fn burst_mlp_finite_difference_check() {
        let n = 4;
        let m = 6;
        let (w1, b1, w2, b2) = toy_mlp(n, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..1.0));
        let c = Array2::from_shape_fn((n, m), |_| rng.gen_range(0.5..1.5));

        let mlp = BurstMlpViews { w1: w1.view(), b1: b1.view(), w2: w2.view(), b2: b2.view() };
        let (_, hidden_pre) = burst_mlp_forward(&x, &mlp).unwrap();
        let grads = burst_mlp_backward(&x, &mlp, &hidden_pre, &c);

        let loss_x = |xs: &[f64]| {
            let xv = Array2::from_shape_vec((n, m), xs.to_vec()).unwrap();
            let (y, _) = burst_mlp_forward(&xv, &mlp).unwrap();
            (&y * &c).sum()
        };
        let err = grad_check(loss_x, x.as_slice().unwrap(), grads.x.as_slice().unwrap(), 1e-6);
        assert!(err < 1e-4, "x grad err {err}");

        let loss_w1 = |ws: &[f64]| {
            let wv = Array2::from_shape_vec((n, n), ws.to_vec()).unwrap();
            let m2 = BurstMlpViews { w1: wv.view(), b1: b1.view(), w2: w2.view(), b2: b2.view() };
            let (y, _) = burst_mlp_forward(&x, &m2).unwrap();
            (&y * &c).sum()
        };
        let err = grad_check(loss_w1, w1.as_slice().unwrap(), grads.w1.as_slice().unwrap(), 1e-6);
        assert!(err < 1e-4, "w1 grad err {err}");
    }

    #[test]
    fn mse_cases() {
        let (l, g) = mse_loss(&[3.0], &[1.0]).unwrap();
        assert_eq!(l, 4.0);
        assert_eq!(g, vec![4.0]);
        let (l, g) = mse_loss(&[0.2, 0.4], &[0.2, 0.4]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(mse_loss(&[0.0], &[0.0, 1.0]).is_err());

        let pred = [0.3, -0.2, 0.9];
        let target = [0.1, 0.1, 0.5];
        let (_, grad) = mse_loss(&pred, &target).unwrap();
        let err = grad_check(
            |p| mse_loss(p, &target).unwrap().0,
            &pred,
            &grad,
            1e-6,
        );
        assert!(err < 1e-6, "mse grad err {err}");
    }

    #[test]
    fn lr_schedule_paper_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0), 2.0);
        assert_eq!(s.lr(4999), 2.0);
        assert!((s.lr(5000) - 1.6).abs() < 1e-15);
        assert!((s.lr(10000) - 1.28).abs() < 1e-15);
        // Non-increasing, piecewise constant with period 5000.
        let mut last = f64::INFINITY;
        for step in (0..20000).step_by(500) {
            let lr = s.lr(step);
            assert!(lr <= last);
            assert_eq!(lr, s.lr(step - step % 5000));
            last = lr;
        }
    }

    fn scalar_params(v: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.insert1("p", Array1::from_vec(vec![v])).unwrap();
        p
    }

    #[test]
    fn sgd_plain_step() {
        // beta = 0, lr = 1, g = 2, p = 5 -> p = 3.
        let mut params = scalar_params(5.0);
        let grads = scalar_params(2.0);
        let mut opt = SgdMomentum::new(&params, 0.0, LrSchedule { base: 1.0, decay: 1.0, period: 1 });
        opt.step(&mut params, &grads).unwrap();
        assert_eq!(params.get("p").unwrap()[0], 3.0);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        // Two steps with constant g and beta = 0.9: v2 = 1.9 g.
        let mut params = scalar_params(0.0);
        let grads = scalar_params(1.0);
        let mut opt = SgdMomentum::new(&params, 0.9, LrSchedule { base: 1.0, decay: 1.0, period: 1 });
        opt.step(&mut params, &grads).unwrap();
        opt.step(&mut params, &grads).unwrap();
        // p = -(v1 + v2) = -(1 + 1.9)
        assert!((params.get("p").unwrap()[0] + 2.9).abs() < 1e-15);
        assert_eq!(opt.step_count(), 2);
    }

    #[test]
    fn sgd_zero_grads_leave_fresh_params_unchanged_and_decay_velocity() {
        let mut params = scalar_params(1.5);
        let zeros = scalar_params(0.0);
        let mut opt = SgdMomentum::new(&params, 0.9, LrSchedule { base: 1.0, decay: 1.0, period: 1 });
        opt.step(&mut params, &zeros).unwrap();
        assert_eq!(params.get("p").unwrap()[0], 1.5);

        // After one real step the velocity decays by beta per zero-grad step.
        let g = scalar_params(1.0);
        opt.step(&mut params, &g).unwrap();
        let before = params.get("p").unwrap()[0];
        opt.step(&mut params, &zeros).unwrap();
        let after = params.get("p").unwrap()[0];
        assert!((before - after - 0.9).abs() < 1e-15); // lr * beta * v = 0.9
    }

    #[test]
    fn sgd_rejects_non_finite_gradients() {
        let mut params = scalar_params(1.0);
        let grads = scalar_params(f64::NAN);
        let mut opt = SgdMomentum::new(&params, 0.9, LrSchedule::default());
        assert!(opt.step(&mut params, &grads).is_err());
        assert_eq!(params.get("p").unwrap()[0], 1.0);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn grad_check_linear_is_exact() {
        let c = [1.3, -0.7, 0.2];
        let f = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let err = grad_check(f, &[0.4, 0.6, -0.1], &c, 1e-6);
        assert!(err < 1e-9, "linear fn err {err}");
    }

    #[test]
    fn grad_check_relu_away_from_kink() {
        let f = |x: &[f64]| x.iter().map(|v| v.max(0.0)).sum::<f64>();
        let x = [0.5, -0.7, 1.2];
        let analytic = [1.0, 0.0, 1.0];
        let err = grad_check(f, &x, &analytic, 1e-6);
        assert!(err < 1e-6, "relu err {err}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ModelParams::new();
        params.insert2("a.w", glorot_uniform(&mut rng, 3, 5)).unwrap();
        params.insert1("a.b", Array1::from_shape_fn(3, |_| rng.gen::<f64>())).unwrap();
        params
            .insert("z.t", ArrayD::from_shape_fn(IxDyn(&[2, 2, 2]), |_| rng.gen::<f64>()))
            .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&p1, &params).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded, params);
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        std::fs::write(&p, b"BDXXX1\x00\x00\x00\x00").unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn params_reject_duplicates_and_report_norms() {
        let mut p = ModelParams::new();
        p.insert1("x", Array1::from_vec(vec![3.0, 4.0])).unwrap();
        assert!(p.insert1("x", Array1::zeros(2)).is_err());
        assert_eq!(p.l2_norm(), 5.0);
        assert_eq!(p.value_count(), 2);
    }
}

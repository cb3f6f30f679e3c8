//! Finite-difference verification battery over every backward pass in the
//! crate, callable from the CLI and the acceptance suite.
//!
//! Each check builds a fixed-seed configuration, evaluates a scalar probe
//! functional, and compares analytic gradients against central differences
//! at ε = 1e-6, reporting the max relative error over the probed
//! coordinates (denominator max(|a|, |n|, 1e-8)). Probes target coordinates
//! carrying real gradient mass; coordinates orders of magnitude below the
//! function scale sit under the f64 rounding floor of the difference
//! quotient and are skipped.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::deconv::{self, FilterGains, GAIN_HALF};
use crate::error::Result;
use crate::fba::{learnable_fba_backward, learnable_fba_forward};
use crate::fourier::{dft2, idft2, Complex64, Spectrum};
use crate::image::Patch;
use crate::net::{BurstNet, NetConfig};
use crate::nn::{
    self, burst_mlp_backward, burst_mlp_forward, grad_check_coords, significant_coords,
    BurstMlpViews, ModelParams,
};

/// Which part of the battery to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckScope {
    All,
    Nn,
    Fba,
    Deconv,
}

impl CheckScope {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(Self::All),
            "nn" => Some(Self::Nn),
            "fba" => Some(Self::Fba),
            "deconvnet" | "deconv" => Some(Self::Deconv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
}

pub const CHECK_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;

fn random_patch(side: usize, seed: u64) -> Patch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Patch::new(side, (0..side * side).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn check_dense() -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = nn::glorot_uniform(&mut rng, 5, 7);
    let b = Array1::from_shape_fn(5, |_| rng.gen_range(-0.5..0.5));
    let x = Array1::from_shape_fn(7, |_| rng.gen_range(-1.0..1.0));
    let c = Array1::from_shape_fn(5, |_| rng.gen_range(0.5..1.5));
    let (gx, gw, _) = nn::dense_backward(x.view(), w.view(), c.view()).unwrap();
    let mut worst = nn::grad_check(
        |xs| {
            let xv = Array1::from_vec(xs.to_vec());
            nn::dense_forward(xv.view(), w.view(), b.view()).unwrap().dot(&c)
        },
        x.as_slice().unwrap(),
        gx.as_slice().unwrap(),
        EPS,
    );
    worst = worst.max(nn::grad_check(
        |ws| {
            let wv = Array2::from_shape_vec((5, 7), ws.to_vec()).unwrap();
            nn::dense_forward(x.view(), wv.view(), b.view()).unwrap().dot(&c)
        },
        w.as_slice().unwrap(),
        gw.as_slice().unwrap(),
        EPS,
    ));
    CheckReport { name: "dense".into(), max_rel_err: worst }
}

fn check_relu() -> CheckReport {
    // Probed away from the kink per the shared contract.
    let x = [0.7, -0.9, 1.3, -0.2, 0.4];
    let analytic = [1.0, 0.0, 1.0, 0.0, 1.0];
    let err = nn::grad_check(
        |xs| xs.iter().map(|v| v.max(0.0)).sum::<f64>(),
        &x,
        &analytic,
        EPS,
    );
    CheckReport { name: "relu".into(), max_rel_err: err }
}

fn check_mse() -> CheckReport {
    let pred = [0.3, -0.1, 0.8, 0.5];
    let target = [0.1, 0.2, 0.4, 0.9];
    let (_, grad) = nn::mse_loss(&pred, &target).unwrap();
    let err = nn::grad_check(|p| nn::mse_loss(p, &target).unwrap().0, &pred, &grad, EPS);
    CheckReport { name: "mse".into(), max_rel_err: err }
}

fn check_burst_mlp() -> CheckReport {
    let n = 4;
    let m = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let w1 = nn::glorot_uniform(&mut rng, n, n);
    let b1 = Array1::from_shape_fn(n, |_| rng.gen_range(-0.2..0.2));
    let w2 = nn::glorot_uniform(&mut rng, n, n);
    let b2 = Array1::from_shape_fn(n, |_| rng.gen_range(-0.2..0.2));
    let mlp = BurstMlpViews { w1: w1.view(), b1: b1.view(), w2: w2.view(), b2: b2.view() };
    let x = Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..1.0));
    let c = Array2::from_shape_fn((n, m), |_| rng.gen_range(0.5..1.5));
    let (_, hidden) = burst_mlp_forward(&x, &mlp).unwrap();
    let grads = burst_mlp_backward(&x, &mlp, &hidden, &c);
    let loss_x = |xs: &[f64]| {
        let xv = Array2::from_shape_vec((n, m), xs.to_vec()).unwrap();
        (&burst_mlp_forward(&xv, &mlp).unwrap().0 * &c).sum()
    };
    let mut worst = nn::grad_check(loss_x, x.as_slice().unwrap(), grads.x.as_slice().unwrap(), EPS);
    let loss_w1 = |ws: &[f64]| {
        let wv = Array2::from_shape_vec((n, n), ws.to_vec()).unwrap();
        let m2 = BurstMlpViews { w1: wv.view(), b1: b1.view(), w2: w2.view(), b2: b2.view() };
        (&burst_mlp_forward(&x, &m2).unwrap().0 * &c).sum()
    };
    worst = worst.max(nn::grad_check(
        loss_w1,
        w1.as_slice().unwrap(),
        grads.w1.as_slice().unwrap(),
        EPS,
    ));
    CheckReport { name: "burst_mlp".into(), max_rel_err: worst }
}

fn check_learnable_fba() -> CheckReport {
    let n = 3;
    let side = 5;
    let m = side * side;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut params = ModelParams::new();
    params.insert2("fba.w1", nn::identity_plus_noise(&mut rng, n, 0.05)).unwrap();
    params.insert1("fba.b1", Array1::from_shape_fn(n, |_| rng.gen_range(0.0..0.1))).unwrap();
    params.insert2("fba.w2", nn::identity_plus_noise(&mut rng, n, 0.05)).unwrap();
    params.insert1("fba.b2", Array1::zeros(n)).unwrap();
    let mlp = BurstMlpViews::from_params(&params, "fba").unwrap();

    let spectra: Vec<Spectrum> = (0..n).map(|i| dft2(&random_patch(side, 20 + i as u64))).collect();
    let c: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..0.15)).collect();

    let (_, cache) = learnable_fba_forward(&spectra, &mlp).unwrap();
    let mut grad_out = Patch::zeros(side);
    grad_out.data_mut().copy_from_slice(&c);
    let grads = learnable_fba_backward(&cache, &mlp, &grad_out).unwrap();

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
    let loss = |xs: &[f64]| {
        let spectra: Vec<Spectrum> = (0..n)
            .map(|i| {
                let base = i * 2 * m;
                let coeffs = (0..m)
                    .map(|j| Complex64::new(xs[base + j], xs[base + m + j]))
                    .collect();
                Spectrum::new(side, side, coeffs).unwrap()
            })
            .collect();
        let (fused, _) = learnable_fba_forward(&spectra, &mlp).unwrap();
        fused.data().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut worst = nn::grad_check(loss, &flat, &analytic, EPS);

    let w1 = params.mat("fba.w1").unwrap().to_owned();
    let loss_w1 = |ws: &[f64]| {
        let wv = Array2::from_shape_vec((n, n), ws.to_vec()).unwrap();
        let m2 = BurstMlpViews {
            w1: wv.view(),
            b1: params.vec("fba.b1").unwrap(),
            w2: params.mat("fba.w2").unwrap(),
            b2: params.vec("fba.b2").unwrap(),
        };
        let (fused, _) = learnable_fba_forward(&spectra, &m2).unwrap();
        fused.data().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
    };
    worst = worst.max(nn::grad_check(
        loss_w1,
        w1.as_slice().unwrap(),
        grads.mlp.w1.as_slice().unwrap(),
        EPS,
    ));
    CheckReport { name: "learnable_fba".into(), max_rel_err: worst }
}

fn check_apply_wiener() -> CheckReport {
    let p = random_patch(65, 30);
    let s65 = dft2(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let half: Vec<f64> = (0..GAIN_HALF).map(|_| rng.gen_range(0.5..1.5)).collect();
    let gains = FilterGains::from_half(&half).unwrap();
    let c: Vec<f64> = (0..33 * 33).map(|_| rng.gen_range(0.0025..0.0075)).collect();
    let mut grad_out = Patch::zeros(33);
    grad_out.data_mut().copy_from_slice(&c);
    let (grad_grid, grad_spec) = deconv::wiener_backward_probe(&s65, &gains, &grad_out);
    let grad_half = FilterGains::half_adjoint(&grad_grid);

    let mut loss_half = |hs: &[f64]| {
        let g = FilterGains::from_half(hs).unwrap();
        let out = deconv::apply_wiener(&p, &g).unwrap();
        out.data().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
    };
    let coords = significant_coords(&grad_half, 31, 1e-3);
    let mut worst = grad_check_coords(&mut loss_half, &half, &grad_half, EPS, &coords);

    let grad_patch = idft2(&grad_spec);
    let mut loss_patch = |xs: &[f64]| {
        let patch = Patch::new(65, xs.to_vec()).unwrap();
        let out = deconv::apply_wiener(&patch, &gains).unwrap();
        out.data().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
    };
    let coords = significant_coords(grad_patch.data(), 53, 1e-3);
    worst = worst.max(grad_check_coords(
        &mut loss_patch,
        p.data(),
        grad_patch.data(),
        EPS,
        &coords,
    ));
    CheckReport { name: "apply_wiener".into(), max_rel_err: worst }
}

/// Composed toy-width network (deconvolution + learnable fusion) against a
/// linear probe functional: inputs, fusion weights, and two deconvolution
/// tensors (merge and head) on their significant coordinates.
fn check_composed() -> CheckReport {
    let n = 3;
    let net = BurstNet::new(NetConfig { burst: n, width_scale: 1.0 / 1024.0 }, 40).unwrap();
    let burst: Vec<Patch> = (0..n as u64).map(|t| random_patch(65, 50 + t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let c: Vec<f64> = (0..33 * 33).map(|_| rng.gen_range(0.01..0.03)).collect();
    let probe = |net: &BurstNet, burst: &[Patch]| -> f64 {
        let (pred, _) = net.forward(burst).unwrap();
        pred.data().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
    };

    let (_, cache) = net.forward(&burst).unwrap();
    let mut grad_pred = Patch::zeros(33);
    grad_pred.data_mut().copy_from_slice(&c);
    let (grads, input_grads) = net.backward(&cache, &grad_pred, true).unwrap();
    let input_grads = input_grads.unwrap();

    let flat: Vec<f64> = burst.iter().flat_map(|p| p.data().to_vec()).collect();
    let analytic: Vec<f64> = input_grads.iter().flat_map(|p| p.data().to_vec()).collect();
    let mut loss_inputs = |xs: &[f64]| {
        let b: Vec<Patch> = (0..n)
            .map(|t| Patch::new(65, xs[t * 4225..(t + 1) * 4225].to_vec()).unwrap())
            .collect();
        probe(&net, &b)
    };
    let coords = significant_coords(&analytic, 301, 0.05);
    let mut worst = grad_check_coords(&mut loss_inputs, &flat, &analytic, EPS, &coords);

    for (name, step) in [("fba.w1", 1usize), ("merge.high.w", 613), ("head.w", 401)] {
        let base = net.params.get(name).unwrap().clone();
        let g = grads.get(name).unwrap().clone();
        let shape = base.shape().to_vec();
        let base_flat: Vec<f64> = base.iter().cloned().collect();
        let g_flat: Vec<f64> = g.iter().cloned().collect();
        let mut loss_param = |vs: &[f64]| {
            let mut net2 = net.clone();
            *net2.params.get_mut(name).unwrap() =
                ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&shape), vs.to_vec()).unwrap();
            probe(&net2, &burst)
        };
        let coords = significant_coords(&g_flat, step, 1e-2);
        worst = worst.max(grad_check_coords(&mut loss_param, &base_flat, &g_flat, EPS, &coords));
    }
    CheckReport { name: "composed_net".into(), max_rel_err: worst }
}

/// Run the selected battery, in a fixed report order.
pub fn run_battery(scope: CheckScope) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    if matches!(scope, CheckScope::All | CheckScope::Nn) {
        out.push(check_dense());
        out.push(check_relu());
        out.push(check_mse());
        out.push(check_burst_mlp());
    }
    if matches!(scope, CheckScope::All | CheckScope::Fba) {
        out.push(check_learnable_fba());
    }
    if matches!(scope, CheckScope::All | CheckScope::Deconv) {
        out.push(check_apply_wiener());
        out.push(check_composed());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_everywhere() {
        let reports = run_battery(CheckScope::All).unwrap();
        assert_eq!(reports.len(), 7);
        for r in &reports {
            assert!(
                r.max_rel_err < CHECK_TOLERANCE,
                "{}: {}",
                r.name,
                r.max_rel_err
            );
        }
    }

    #[test]
    fn scopes_filter_checks() {
        let nn_only = run_battery(CheckScope::Nn).unwrap();
        assert!(nn_only.iter().any(|r| r.name == "dense"));
        assert!(!nn_only.iter().any(|r| r.name == "composed_net"));
        assert!(CheckScope::parse("fba") == Some(CheckScope::Fba));
        assert!(CheckScope::parse("bogus").is_none());
    }
}

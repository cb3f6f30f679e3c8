//! End-to-end training loop: batched SGD with momentum over the composed
//! network, periodic validation, best-checkpoint saving, CSV logging.
//!
//! Batches are processed in fixed chunks of eight examples; chunks run in
//! parallel and their gradient contributions are summed in chunk order, so
//! training is bit-reproducible regardless of thread scheduling.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::{augment, stream_seed, BurstSynth, TrainingExample};
use crate::error::{invalid, Error, Result};
use crate::image::Patch;
use crate::metrics;
use crate::net::{BurstNet, NetConfig};
use crate::nn::{fmt_f64, load_checkpoint, mse_loss, save_checkpoint, LrSchedule, SgdMomentum};

/// Fixed chunk width for deterministic batch parallelism.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub lr_period: u64,
    pub max_steps: u64,
    pub width_scale: f64,
    pub burst: usize,
    pub seed: u64,
    pub log_every: u64,
    pub val_every: u64,
    /// Batches whose global gradient norm exceeds this are skipped.
    pub grad_norm_guard: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            momentum: 0.9,
            base_lr: 2.0,
            lr_decay: 0.8,
            lr_period: 5000,
            max_steps: 5000,
            width_scale: 1.0,
            burst: 14,
            seed: 0,
            log_every: 50,
            val_every: 500,
            grad_norm_guard: 1e4,
        }
    }
}

/// Where training examples come from.
pub enum TrainSampler {
    /// Sharp-patch pool; bursts are synthesized on the fly (optionally with
    /// dihedral augmentation, per the synthesizer's config).
    Synthetic { pool: Vec<Patch>, synth: BurstSynth },
    /// Precomputed examples sampled with replacement.
    Fixed(Vec<TrainingExample>),
}

impl TrainSampler {
    /// Deterministic example for one RNG stream seed.
    pub fn example(&self, seed: u64) -> Result<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            TrainSampler::Synthetic { pool, synth } => {
                if pool.is_empty() {
                    return Err(Error::EmptyDataset("empty sharp-patch pool".into()));
                }
                let sharp = &pool[rng.gen_range(0..pool.len())];
                let sharp = if synth.cfg.augment {
                    augment(sharp, &mut rng)
                } else {
                    sharp.clone()
                };
                synth.make_burst(&sharp, &mut rng)
            }
            TrainSampler::Fixed(examples) => {
                if examples.is_empty() {
                    return Err(Error::EmptyDataset("empty example list".into()));
                }
                Ok(examples[rng.gen_range(0..examples.len())].clone())
            }
        }
    }
}

/// Training data: a sampler plus a precomputed validation set.
pub struct TrainData {
    pub sampler: TrainSampler,
    pub val: Vec<TrainingExample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub step: u64,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub val_psnr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub rows: Vec<TrainRow>,
    pub skipped_batches: u64,
    pub best_val_mse: f64,
}

impl TrainLog {
    /// CSV with the header `step,lr,train_mse,val_mse,val_psnr`;
    /// validation columns are empty on non-validation steps.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,train_mse,val_mse,val_psnr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step,
                fmt_f64(r.lr),
                fmt_f64(r.train_mse),
                r.val_mse.map(fmt_f64).unwrap_or_default(),
                r.val_psnr.map(fmt_f64).unwrap_or_default(),
            ));
        }
        out
    }
}

/// Mean MSE (the training objective, unclamped) and mean PSNR (predictions
/// clamped to [0,1]) over a validation set. No augmentation, no smoothing.
pub fn evaluate(net: &BurstNet, val: &[TrainingExample]) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Err(invalid("validation set is empty"));
    }
    let chunks: Vec<&[TrainingExample]> = val.chunks(CHUNK).collect();
    let per_chunk: Vec<Result<Vec<(f64, f64)>>> = chunks
        .par_iter()
        .map(|chunk| {
            let bursts: Vec<Vec<Patch>> = chunk.iter().map(|e| e.burst.clone()).collect();
            let (preds, _) = net.forward_batch(&bursts)?;
            chunk
                .iter()
                .zip(&preds)
                .map(|(ex, pred)| {
                    let mse = metrics::mse(pred.data(), ex.target.data())?;
                    let clamped: Vec<f64> =
                        pred.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
                    let psnr = metrics::psnr_slices(&clamped, ex.target.data(), 1.0)?;
                    Ok((mse, psnr))
                })
                .collect()
        })
        .collect();
    let mut mse_sum = 0.0;
    let mut psnr_sum = 0.0;
    let mut count = 0usize;
    for chunk in per_chunk {
        for (m, p) in chunk? {
            mse_sum += m;
            psnr_sum += p;
            count += 1;
        }
    }
    Ok((mse_sum / count as f64, psnr_sum / count as f64))
}

/// Gradients and mean loss of one batch, computed in fixed chunks.
fn batch_gradients(
    net: &BurstNet,
    sampler: &TrainSampler,
    seeds: &[u64],
) -> Result<(f64, crate::nn::ModelParams)> {
    let batch = seeds.len() as f64;
    let chunk_seeds: Vec<&[u64]> = seeds.chunks(CHUNK).collect();
    let results: Vec<Result<(f64, crate::nn::ModelParams)>> = chunk_seeds
        .par_iter()
        .map(|seeds| {
            let examples: Vec<TrainingExample> = seeds
                .iter()
                .map(|&s| sampler.example(s))
                .collect::<Result<_>>()?;
            let bursts: Vec<Vec<Patch>> = examples.iter().map(|e| e.burst.clone()).collect();
            let (preds, cache) = net.forward_batch(&bursts)?;
            let mut loss_sum = 0.0;
            let mut grad_preds = Vec::with_capacity(preds.len());
            for (pred, ex) in preds.iter().zip(&examples) {
                let (loss, grad) = mse_loss(pred.data(), ex.target.data())?;
                loss_sum += loss;
                let mut gp = Patch::zeros(pred.side());
                for (g, v) in gp.data_mut().iter_mut().zip(&grad) {
                    *g = v / batch;
                }
                grad_preds.push(gp);
            }
            let grads = net.backward_batch(&cache, &grad_preds)?;
            Ok((loss_sum, grads))
        })
        .collect();
    let mut total = net.params.zeros_like();
    let mut loss_sum = 0.0;
    for r in results {
        let (l, g) = r?;
        loss_sum += l;
        total.add_assign(&g)?;
    }
    Ok((loss_sum / batch, total))
}

/// Train a fresh network. The checkpoint at `out` always holds the best
/// validated parameters seen so far (initially the fresh ones); the CSV log
/// is written to `log_path` when given. Logs train loss every `log_every`
/// steps, validates every `val_every` steps and at the final step, and
/// checkpoints on every validation improvement. A non-finite batch loss
/// aborts with the last good checkpoint retained on disk.
pub fn train(
    cfg: &TrainConfig,
    data: &TrainData,
    out: &Path,
    log_path: Option<&Path>,
) -> Result<TrainLog> {
    if cfg.batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(invalid("momentum must be in [0, 1)"));
    }
    let mut net = BurstNet::new(
        NetConfig { burst: cfg.burst, width_scale: cfg.width_scale },
        cfg.seed,
    )?;
    let schedule = LrSchedule { base: cfg.base_lr, decay: cfg.lr_decay, period: cfg.lr_period };
    let mut opt = SgdMomentum::new(&net.params, cfg.momentum, schedule);
    save_checkpoint(out, &net.params)?;

    let mut log = TrainLog { rows: Vec::new(), skipped_batches: 0, best_val_mse: f64::INFINITY };
    let write_log = |log: &TrainLog| -> Result<()> {
        if let Some(p) = log_path {
            std::fs::write(p, log.to_csv())?;
        }
        Ok(())
    };

    for step in 1..=cfg.max_steps {
        let seeds: Vec<u64> = (0..cfg.batch_size as u64)
            .map(|j| stream_seed(cfg.seed, (step - 1) * cfg.batch_size as u64 + j))
            .collect();
        let (loss, grads) = batch_gradients(&net, &data.sampler, &seeds)?;
        if !loss.is_finite() {
            write_log(&log)?;
            return Err(Error::NumericFailure(format!(
                "non-finite training loss at step {step}; last good checkpoint retained"
            )));
        }
        let norm = grads.l2_norm();
        let lr;
        if !norm.is_finite() || norm > cfg.grad_norm_guard {
            log.skipped_batches += 1;
            lr = opt.current_lr();
            eprintln!("step {step}: gradient norm {norm:.3e} over guard, batch skipped");
        } else {
            lr = opt.step(&mut net.params, &grads)?;
        }

        let log_step = step % cfg.log_every == 0 || step == cfg.max_steps;
        let val_step = step % cfg.val_every == 0 || step == cfg.max_steps;
        if log_step || val_step {
            let mut row = TrainRow { step, lr, train_mse: loss, val_mse: None, val_psnr: None };
            if val_step {
                let (vm, vp) = evaluate(&net, &data.val)?;
                row.val_mse = Some(vm);
                row.val_psnr = Some(vp);
                if vm < log.best_val_mse {
                    log.best_val_mse = vm;
                    save_checkpoint(out, &net.params)?;
                }
            }
            log.rows.push(row);
        }
    }
    write_log(&log)?;
    Ok(log)
}

/// Load a checkpoint back into a network.
pub fn load_net(path: &Path) -> Result<BurstNet> {
    BurstNet::from_params(load_checkpoint(path)?)
}

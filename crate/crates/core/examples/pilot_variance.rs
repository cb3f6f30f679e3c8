use burstdeblur::datagen::*;
use burstdeblur::fba;
use burstdeblur::fourier::dft2;
use burstdeblur::image::Patch;
use burstdeblur::psf::GpConfig;
use burstdeblur::trainer::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let variance: f64 = std::env::args().nth(1).unwrap().parse().unwrap();
    let steps: u64 = std::env::args().nth(2).unwrap().parse().unwrap();
    let gp = GpConfig { variance, ..Default::default() };
    let noise_var = 0.0009;

    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let pool: Vec<Patch> = (0..2048)
        .map(|_| Patch::new(65, synthetic_texture(65, 65, &mut rng).plane(0)).unwrap())
        .collect();
    let synth = BurstSynth::new(DatagenConfig {
        noise_variance: noise_var,
        gp: gp.clone(),
        ..Default::default()
    })
    .unwrap();
    let val_synth = BurstSynth::new(DatagenConfig {
        noise_variance: noise_var,
        kernel_sizes: vec![17],
        gp: gp.clone(),
        ..Default::default()
    })
    .unwrap();
    let val: Vec<TrainingExample> = (0..128)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(stream_seed(0xC0C0, i));
            let sharp = Patch::new(65, synthetic_texture(65, 65, &mut r).plane(0)).unwrap();
            val_synth.make_burst(&sharp, &mut r).unwrap()
        })
        .collect();

    let metric = |patch: &Patch, target: &Patch| {
        let clamped: Vec<f64> = patch.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        burstdeblur::metrics::psnr_slices(&clamped, target.data(), 1.0).unwrap()
    };
    let mut fba_psnr = 0.0;
    let mut mean_psnr = 0.0;
    for ex in &val {
        let spectra: Vec<_> = ex.burst.iter().map(dft2).collect();
        let w = fba::smooth_weights(&fba::fba_weights(&spectra, 11.0).unwrap(), 2.0);
        let fused = fba::fba_fuse(&spectra, &w).unwrap().center_crop(33).unwrap();
        fba_psnr += metric(&fused, &ex.target) / val.len() as f64;
        let w0 = fba::fba_weights(&spectra, 0.0).unwrap();
        let mean = fba::fba_fuse(&spectra, &w0).unwrap().center_crop(33).unwrap();
        mean_psnr += metric(&mean, &ex.target) / val.len() as f64;
    }
    println!("variance {variance}: FBA {fba_psnr:.3} dB, mean {mean_psnr:.3} dB");

    let cfg = TrainConfig {
        batch_size: 32,
        max_steps: steps,
        width_scale: 1.0 / 16.0,
        burst: 14,
        seed: 7,
        base_lr: 0.25,
        log_every: 50,
        val_every: 250,
        ..Default::default()
    };
    let data = TrainData { sampler: TrainSampler::Synthetic { pool, synth }, val: val.clone() };
    let dir = std::env::temp_dir().join(format!("pilot_var_{variance}"));
    std::fs::create_dir_all(&dir).unwrap();
    let log = train(&cfg, &data, &dir.join("net.ckpt"), None).unwrap();
    for r in log.rows.iter().filter(|r| r.val_psnr.is_some()) {
        println!(
            "step {:4}: train {:.3e}  val psnr {:.3} dB  margin {:+.3} dB",
            r.step,
            r.train_mse,
            r.val_psnr.unwrap(),
            r.val_psnr.unwrap() - fba_psnr
        );
    }
    println!("skipped {}", log.skipped_batches);
}

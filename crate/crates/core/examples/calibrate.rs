// Temporary calibration harness for acceptance-test parameters. Deleted
// once the numbers are frozen.

use std::time::Instant;

use ride_core::grid::Grid2D;
use ride_core::mask::PixelMask;
use ride_core::metrics::{psnr, MetricConfig};
use ride_core::model::{ModelConfig, RideModel, TrainConfig};
use ride_core::recover::{cs_recover, cs_recover_noisy, inpaint, Init, RecoveryConfig};
use ride_core::rng::SeededRng;
use ride_core::sensing::MeasurementOperator;
use ride_core::slstm::CausalWindow;
use ride_core::synth::{gaussian_mrf, texture_corpus};

fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let t0 = Instant::now();
    let lr = env_f64("LR", 2e-3);
    let ppe = env_usize("PPE", 320);
    let batch = env_usize("BATCH", 8);
    let iters = env_usize("ITERS", 200);
    let eta = env_f64("ETA", 5e-3);
    let lambda = env_f64("LAMBDA", 20.0);
    let inpaint_eta = env_f64("INPAINT_ETA", 0.02);
    let inpaint_iters = env_usize("INPAINT_ITERS", 150);
    let stage = std::env::var("STAGE").unwrap_or_else(|_| "c5".into());

    let corpus = texture_corpus(12, 48, 48, 1000);
    let held_out = texture_corpus(4, 48, 48, 9000);

    if stage == "c5" || stage == "all" {
        // ---- criterion 5 model: C=8, S=3, H=32, curriculum 8->14 ----
        let cfg5 = ModelConfig {
            components: 8,
            scales: 3,
            rank: None,
            hidden: 32,
            window: CausalWindow::default_four(),
            dequantize: false,
        };
        let mut model = RideModel::new(&cfg5, 42);
        let init_ll: f64 = held_out.iter().map(|im| model.log_likelihood(im).unwrap().per_pixel).sum::<f64>() / 4.0;
        let tc = TrainConfig {
            patch_start: 8,
            patch_end: 14,
            patch_step: 2,
            epochs: 4,
            initial_lr: lr,
            batch_size: batch,
            patches_per_epoch: ppe,
            seed: 7,
        };
        let t = Instant::now();
        let trace = model.train(&corpus, &tc).unwrap();
        let train_secs = t.elapsed().as_secs_f64();
        let final_ll: f64 = held_out.iter().map(|im| model.log_likelihood(im).unwrap().per_pixel).sum::<f64>() / 4.0;
        println!("c5 train: {train_secs:.1}s, trace {:?}", trace.avg_loglik_per_pixel);
        println!("c5 held-out ll/px: init {init_ll:.3} -> {final_ll:.3}");
        // typical mixture precision after training
        let max_alpha = model.mcgsm.log_precision.iter().cloned().fold(f64::MIN, f64::max);
        println!("c5 max alpha {max_alpha:.2} (std {:.4})", (-0.5 * max_alpha).exp());

        let metric = MetricConfig::default();
        let mut wins = 0;
        let mut ratios = Vec::new();
        for k in 0..10u64 {
            let truth = gaussian_mrf(32, 32, 0.8, 0.8, 0.18, 2000 + k);
            let op = MeasurementOperator::gaussian(1024, 410, 3000 + k).unwrap();
            let y = op.measure(&truth, 0.0, &mut SeededRng::new(1)).unwrap();
            let baseline = Grid2D::from_vec(32, 32, op.adjoint(&y.values).unwrap()).unwrap();
            let psnr_base = psnr(&truth, &baseline, &metric).unwrap();

            let rcfg = RecoveryConfig {
                step_size: eta,
                momentum: 0.9,
                iterations: iters,
                entropy_threshold: Some(3.5),
                lambda: 0.0,
                noise_sigma: 0.0,
                init: Init::Random { seed: 4000 + k },
                clamp: (0.0, 1.0),
                four_directions: true,
            };
            let t = Instant::now();
            let (rec, trace4) = cs_recover(&model, &op, &y, &rcfg).unwrap();
            let rec_secs = t.elapsed().as_secs_f64();
            let psnr_rec = psnr(&truth, &rec, &metric).unwrap();

            let single_cfg = RecoveryConfig {
                four_directions: false,
                ..rcfg.clone()
            };
            let (_, trace1) = cs_recover(&model, &op, &y, &single_cfg).unwrap();
            let target = *trace1.log_prior.last().unwrap();
            let crossing = trace4
                .log_prior
                .iter()
                .position(|&v| v >= target)
                .map(|p| p + 1)
                .unwrap_or(usize::MAX);
            let ratio = crossing as f64 / iters as f64;
            ratios.push(ratio);

            // noisy engine on the same data (noiseless y, soft constraint)
            let noisy_cfg = RecoveryConfig {
                lambda,
                ..rcfg.clone()
            };
            let (xn, _) = cs_recover_noisy(&model, &op, &y, &noisy_cfg).unwrap();
            let num: f64 = op
                .forward(xn.data())
                .unwrap()
                .iter()
                .zip(&y.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = y.values.iter().map(|v| v * v).sum::<f64>().sqrt();

            let margin = psnr_rec - psnr_base;
            if margin >= 3.0 {
                wins += 1;
            }
            println!(
                "seed {k}: base {psnr_base:.2} rec {psnr_rec:.2} margin {margin:.2} | 4dir-cross ratio {ratio:.2} | noisy rel-res {:.4} | {rec_secs:.1}s/recovery",
                num / den
            );
        }
        println!("c5 wins(>=3dB): {wins}/10; c7 ratios<=0.75: {}/10", ratios.iter().filter(|r| **r <= 0.75).count());
        model.save(std::path::Path::new("/tmp/c5model.rm")).unwrap();

        // ---- criterion 9: inpainting vs mean fill ----
        let mut iwins = 0;
        for k in 0..10u64 {
            let truth = gaussian_mrf(32, 32, 0.8, 0.8, 0.18, 5000 + k);
            let mask = PixelMask::random(32, 32, 0.7, &mut SeededRng::new(6000 + k)).unwrap();
            let mut observed = truth.clone();
            for r in 0..32 {
                for c in 0..32 {
                    if !mask.is_observed(r, c) {
                        observed.set(r, c, 0.0);
                    }
                }
            }
            let obs_mean = {
                let mut s = 0.0;
                let mut n = 0;
                for r in 0..32 {
                    for c in 0..32 {
                        if mask.is_observed(r, c) {
                            s += truth.get(r, c);
                            n += 1;
                        }
                    }
                }
                s / n as f64
            };
            let mut fill = truth.clone();
            for r in 0..32 {
                for c in 0..32 {
                    if !mask.is_observed(r, c) {
                        fill.set(r, c, obs_mean);
                    }
                }
            }
            let psnr_fill = psnr(&truth, &fill, &metric).unwrap();
            let icfg = RecoveryConfig {
                step_size: inpaint_eta,
                momentum: 0.9,
                iterations: inpaint_iters,
                entropy_threshold: Some(3.5),
                lambda: 0.0,
                noise_sigma: 0.0,
                init: Init::Random { seed: 7000 + k },
                clamp: (0.0, 1.0),
                four_directions: true,
            };
            let (rec, _) = inpaint(&model, &observed, &mask, &icfg).unwrap();
            let psnr_rec = psnr(&truth, &rec, &metric).unwrap();
            if psnr_rec > psnr_fill {
                iwins += 1;
            }
            println!("inpaint seed {k}: fill {psnr_fill:.2} rec {psnr_rec:.2}");
        }
        println!("c9 wins: {iwins}/10");
    }

    if stage == "c6" || stage == "all" {
        // ---- criterion 6 model: C=12, S=4 so ln(48) > 3.5 ----
        let cfg6 = ModelConfig {
            components: 12,
            scales: 4,
            rank: None,
            hidden: 32,
            window: CausalWindow::default_four(),
            dequantize: false,
        };
        let mut model6 = RideModel::new(&cfg6, 43);
        let tc6 = TrainConfig {
            patch_start: 8,
            patch_end: 14,
            patch_step: 2,
            epochs: 4,
            initial_lr: lr,
            batch_size: batch,
            patches_per_epoch: ppe,
            seed: 8,
        };
        let t = Instant::now();
        model6.train(&corpus, &tc6).unwrap();
        println!("c6 train: {:.1}s", t.elapsed().as_secs_f64());

        let truth = gaussian_mrf(32, 32, 0.8, 0.8, 0.18, 2000);
        let noise = {
            let mut rng = SeededRng::new(123);
            Grid2D::from_vec(32, 32, (0..1024).map(|_| rng.next_uniform()).collect()).unwrap()
        };
        for (name, im) in [("noise", &noise), ("texture", &truth)] {
            let e = model6.entropy_map(im).unwrap();
            let over = e.data().iter().filter(|&&h| h > 3.5).count();
            println!("c6 {name}: {over}/1024 pixels over tau=3.5, max {:.3}", e.data().iter().cloned().fold(0.0f64, f64::max));
        }
        let op = MeasurementOperator::gaussian(1024, 410, 3000).unwrap();
        let y = op.measure(&truth, 0.0, &mut SeededRng::new(1)).unwrap();
        let rcfg = RecoveryConfig {
            step_size: eta,
            momentum: 0.9,
            iterations: iters,
            entropy_threshold: Some(3.5),
            lambda: 0.0,
            noise_sigma: 0.0,
            init: Init::Random { seed: 4000 },
            clamp: (0.0, 1.0),
            four_directions: true,
        };
        let (_, trace) = cs_recover(&model6, &op, &y, &rcfg).unwrap();
        let nonzero = trace.masked_fraction.iter().filter(|&&f| f > 0.0).count();
        println!(
            "c6 recovery: masked fraction nonzero at {nonzero}/{} iterations; first ten {:?}",
            trace.len(),
            &trace.masked_fraction[..10.min(trace.len())]
        );
    }

    if stage == "c8" || stage == "all" {
        // ---- criterion 8a: full curriculum on textures ----
        let cfg8 = ModelConfig {
            components: 4,
            scales: 3,
            rank: None,
            hidden: 16,
            window: CausalWindow::default_four(),
            dequantize: false,
        };
        let mut m8 = RideModel::new(&cfg8, 44);
        let init_ll: f64 = held_out.iter().map(|im| m8.log_likelihood(im).unwrap().per_pixel).sum::<f64>() / 4.0;
        let tc8 = TrainConfig {
            patch_start: 8,
            patch_end: 22,
            patch_step: 2,
            epochs: 8,
            initial_lr: env_f64("LR8", 2e-3),
            batch_size: 8,
            patches_per_epoch: env_usize("PPE8", 240),
            seed: 9,
        };
        let t = Instant::now();
        let trace = m8.train(&corpus, &tc8).unwrap();
        let final_ll: f64 = held_out.iter().map(|im| m8.log_likelihood(im).unwrap().per_pixel).sum::<f64>() / 4.0;
        println!(
            "c8a train {:.1}s: held-out {init_ll:.3} -> {final_ll:.3} (gain {:.3}), trace {:?}",
            t.elapsed().as_secs_f64(),
            final_ll - init_ll,
            trace.avg_loglik_per_pixel
        );

        // ---- criterion 8b: iid Gaussian data ----
        let sigma = 0.1;
        let gen = |count: usize, seed: u64| -> Vec<Grid2D> {
            let mut rng = SeededRng::new(seed);
            (0..count)
                .map(|_| {
                    Grid2D::from_vec(32, 32, (0..1024).map(|_| 0.5 + sigma * rng.next_gaussian()).collect())
                        .unwrap()
                })
                .collect()
        };
        let train_imgs = gen(40, 500);
        let test_imgs = gen(20, 600);
        let cfgb = ModelConfig {
            components: 2,
            scales: 2,
            rank: None,
            hidden: 8,
            window: CausalWindow::default_four(),
            dequantize: false,
        };
        let mut mb = RideModel::new(&cfgb, 45);
        let tcb = TrainConfig {
            patch_start: 8,
            patch_end: 22,
            patch_step: 2,
            epochs: 8,
            initial_lr: env_f64("LRB", 5e-3),
            batch_size: 16,
            patches_per_epoch: env_usize("PPEB", 1600),
            seed: 10,
        };
        let t = Instant::now();
        mb.train(&train_imgs, &tcb).unwrap();
        let ll: f64 = test_imgs.iter().map(|im| mb.log_likelihood(im).unwrap().per_pixel).sum::<f64>() / 20.0;
        let target = -0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln();
        println!(
            "c8b train {:.1}s: held-out ll {ll:.4}, analytic -h {target:.4}, gap {:.4}",
            t.elapsed().as_secs_f64(),
            (ll - target).abs()
        );
    }

    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}

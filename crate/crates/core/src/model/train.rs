//! Maximum-likelihood training with the growing-patch curriculum.
//!
//! Each epoch trains on fresh random crops of one patch size, starting small
//! and growing by a fixed step, while the Adam learning rate halves. Small
//! patches make the early epochs cheap and stable; later epochs expose the
//! recurrence to longer contexts.

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::imgio::{dequantize, extract_patches};
use crate::optim::AdamState;
use crate::rng::SeededRng;

use super::{AnalysisWants, RideModel};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub patch_start: usize,
    pub patch_end: usize,
    pub patch_step: usize,
    /// One patch size per epoch; sizes cap at `patch_end`.
    pub epochs: usize,
    /// Adam learning rate for epoch 0; halved every epoch after.
    pub initial_lr: f64,
    pub batch_size: usize,
    pub patches_per_epoch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_start: 8,
            patch_end: 22,
            patch_step: 2,
            epochs: 8,
            initial_lr: 1e-4,
            batch_size: 16,
            patches_per_epoch: 512,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_start == 0 || self.patch_end < self.patch_start || self.patch_step == 0 {
            return Err(Error::InvalidArg(format!(
                "patch schedule {}..{} step {} is not ascending",
                self.patch_start, self.patch_end, self.patch_step
            )));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::InvalidArg("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || (self.epochs > 0 && self.patches_per_epoch < self.batch_size) {
            return Err(Error::InvalidArg(
                "need at least one full batch per epoch".into(),
            ));
        }
        Ok(())
    }

    pub fn patch_size_for_epoch(&self, epoch: usize) -> usize {
        (self.patch_start + epoch * self.patch_step).min(self.patch_end)
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        self.initial_lr / 2f64.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    /// Average per-pixel log-likelihood of the training batches, per epoch.
    pub avg_loglik_per_pixel: Vec<f64>,
    pub patch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl RideModel {
    /// Runs the curriculum on random crops of `images`. Returns the per-epoch
    /// likelihood trace. With `epochs == 0` the model is untouched.
    pub fn train(&mut self, images: &[Grid2D], cfg: &TrainConfig) -> Result<TrainTrace> {
        cfg.validate()?;
        self.validate()?;
        let mut trace = TrainTrace::default();
        if cfg.epochs == 0 {
            return Ok(trace);
        }
        if images.is_empty() {
            return Err(Error::InvalidArg("training dataset is empty".into()));
        }
        for (i, im) in images.iter().enumerate() {
            if !im.all_finite() {
                return Err(Error::NonFinite(format!("training image {i}")));
            }
        }

        let mut flat = self.to_flat();
        let mut adam = AdamState::new(flat.len(), cfg.initial_lr);
        let mut rng = SeededRng::new(cfg.seed);

        for epoch in 0..cfg.epochs {
            let size = cfg.patch_size_for_epoch(epoch);
            adam.set_learning_rate(cfg.lr_for_epoch(epoch));
            let batches = cfg.patches_per_epoch / cfg.batch_size;
            let mut ll_sum = 0.0;
            let mut pixel_count = 0usize;

            for batch in 0..batches {
                let mut patches = extract_patches(images, size, cfg.batch_size, &mut rng)?;
                if self.preprocess.dequantize {
                    for p in &mut patches {
                        dequantize(p, &mut rng);
                    }
                }

                let mut grad_slstm = self.slstm.zeros_like();
                let mut grad_mcgsm = self.mcgsm.zeros_like();
                let mut batch_ll = 0.0;
                for patch in &patches {
                    let analysis = self
                        .analyze(patch, AnalysisWants::training())
                        .map_err(|e| Error::Train {
                            epoch,
                            batch,
                            detail: e.to_string(),
                        })?;
                    batch_ll += analysis.loglik;
                    grad_slstm.add_scaled(&analysis.dslstm.expect("training grads"), 1.0);
                    grad_mcgsm.add_scaled(&analysis.dmcgsm.expect("training grads"), 1.0);
                }

                let batch_pixels = (cfg.batch_size * size * size) as f64;
                // Adam minimizes; feed the gradient of the per-pixel NLL.
                let mut grad_flat = Vec::with_capacity(flat.len());
                grad_slstm.push_flat(&mut grad_flat);
                grad_mcgsm.push_flat(&mut grad_flat);
                let scale = -1.0 / batch_pixels;
                for g in &mut grad_flat {
                    *g *= scale;
                }
                adam.step(&mut flat, &grad_flat).map_err(|e| Error::Train {
                    epoch,
                    batch,
                    detail: e.to_string(),
                })?;
                if flat.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Train {
                        epoch,
                        batch,
                        detail: "parameters became non-finite".into(),
                    });
                }
                self.set_from_flat(&flat)?;

                ll_sum += batch_ll;
                pixel_count += cfg.batch_size * size * size;
            }

            trace.avg_loglik_per_pixel.push(ll_sum / pixel_count as f64);
            trace.patch_sizes.push(size);
            trace.learning_rates.push(adam.learning_rate());
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, RideModel};
    use crate::slstm::CausalWindow;
    use crate::synth::texture_corpus;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            components: 2,
            scales: 2,
            rank: Some(4),
            hidden: 8,
            window: CausalWindow::default_four(),
            dequantize: false,
        }
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let mut m = RideModel::new(&tiny_config(), 1);
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let trace = m.train(&[], &cfg).unwrap();
        assert!(trace.avg_loglik_per_pixel.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn short_training_improves_likelihood() {
        let corpus = texture_corpus(4, 24, 24, 5);
        let mut m = RideModel::new(&tiny_config(), 2);
        let held_out = texture_corpus(2, 24, 24, 99);
        let before: f64 = held_out
            .iter()
            .map(|im| m.log_likelihood(im).unwrap().per_pixel)
            .sum::<f64>()
            / held_out.len() as f64;
        let cfg = TrainConfig {
            patch_start: 8,
            patch_end: 10,
            patch_step: 2,
            epochs: 2,
            initial_lr: 3e-3,
            batch_size: 4,
            patches_per_epoch: 64,
            seed: 3,
        };
        let trace = m.train(&corpus, &cfg).unwrap();
        assert_eq!(trace.avg_loglik_per_pixel.len(), 2);
        assert_eq!(trace.patch_sizes, vec![8, 10]);
        let after: f64 = held_out
            .iter()
            .map(|im| m.log_likelihood(im).unwrap().per_pixel)
            .sum::<f64>()
            / held_out.len() as f64;
        assert!(after > before, "held-out ll {before} -> {after}");
    }

    #[test]
    fn schedule_and_validation() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.patch_size_for_epoch(0), 8);
        assert_eq!(cfg.patch_size_for_epoch(7), 22);
        assert_eq!(cfg.patch_size_for_epoch(20), 22);
        assert!((cfg.lr_for_epoch(1) - 5e-5).abs() < 1e-20);

        let bad = TrainConfig {
            patch_step: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn poisoned_dataset_is_rejected_before_training() {
        let mut corpus = texture_corpus(2, 16, 16, 7);
        corpus[1].set(3, 3, f64::INFINITY);
        let mut m = RideModel::new(&tiny_config(), 4);
        let before = m.clone();
        let cfg = TrainConfig {
            patch_start: 8,
            patch_end: 8,
            patch_step: 2,
            epochs: 1,
            initial_lr: 1e-3,
            batch_size: 2,
            patches_per_epoch: 4,
            seed: 5,
        };
        assert!(m.train(&corpus, &cfg).is_err());
        // Abort without corrupting the parameters.
        assert_eq!(m, before);
        assert!(m.slstm.all_finite() && m.mcgsm.all_finite());
    }
}

//! Training harness: configuration, the alternating critic/generator
//! loop, checkpoints and the per-step loss log.

pub mod adam;
pub mod checkpoint;
pub mod critic;
pub mod loss_log;
pub mod losses;
pub mod perceptual;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PatchSample;
use crate::error::{Error, Result};
use crate::model::{GeneratorParams, ModelConfig};
use crate::params::ParamSet;
use crate::rng::{derive, seeded};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use adam::{adam_step, decayed_lr, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use critic::{critic_input_gradient, critic_value, CriticConfig, DiscriminatorParams};
pub use loss_log::{LossLogger, LossRow, LOSS_LOG_HEADER};
pub use losses::{
    discriminator_loss, discriminator_step_gradients, generator_loss, generator_step_gradients,
    mean_mse, LossMode,
};
pub use perceptual::FeatureExtractor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub loss: LossMode,
    /// Weight of the perceptual term in the generator loss.
    pub lambda_perceptual: f64,
    /// Weight of the critic's gradient penalty.
    pub lambda_gp: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Exponential decay factor applied per decay interval.
    pub decay_gamma: f64,
    /// Decay interval in epochs.
    pub decay_every_epochs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    /// Seed of the fixed perceptual feature extractor.
    pub phi_seed: u64,
    /// Channel plan of the strided critic.
    pub critic_channels: Vec<usize>,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Production-scale settings.
    pub fn paper() -> Self {
        Self {
            seed: 0,
            loss: LossMode::GanPerceptual,
            lambda_perceptual: 0.1,
            lambda_gp: 10.0,
            lr_g: 1e-4,
            lr_d: 4e-4,
            decay_gamma: 0.97,
            decay_every_epochs: 1,
            batch_size: 32,
            epochs: 40,
            critic_steps: 1,
            phi_seed: 17,
            critic_channels: vec![8, 16, 32, 64],
            model: ModelConfig::paper(),
        }
    }

    /// Desk-scale settings: tiny model, plain MSE, two epochs. The
    /// learning rate is raised so the short run can make progress.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            loss: LossMode::MseOnly,
            lambda_perceptual: 0.1,
            lambda_gp: 10.0,
            lr_g: 1e-3,
            lr_d: 4e-4,
            decay_gamma: 0.97,
            decay_every_epochs: 1,
            batch_size: 4,
            epochs: 2,
            critic_steps: 1,
            phi_seed: 17,
            critic_channels: vec![4, 8],
            model: ModelConfig::tiny(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.lambda_perceptual < 0.0 || self.lambda_gp < 0.0 {
            return Err(Error::arg("loss weights must be >= 0"));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::arg("learning rates must be > 0"));
        }
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return Err(Error::arg(format!(
                "decay gamma {} not in (0, 1]",
                self.decay_gamma
            )));
        }
        if self.decay_every_epochs == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::arg("batch size, epochs and decay interval must be >= 1"));
        }
        if self.critic_steps == 0 {
            return Err(Error::arg("critic_steps must be >= 1"));
        }
        Ok(())
    }
}

/// What a finished (or aborted) run produced.
#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub generator: GeneratorParams<T>,
    pub steps: usize,
    pub loss_log: PathBuf,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub best_val_mse: Option<f64>,
    pub initial_train_mse: f64,
    pub final_train_mse: f64,
}

/// Trains a generator (and, in adversarial mode, a critic) on the given
/// samples. Fully deterministic per configuration: iteration order,
/// interpolation draws and initialization all derive from `config.seed`.
///
/// Writes per-epoch checkpoints, a final checkpoint, a best-validation
/// checkpoint (when `val_set` is non-empty) and the per-step loss CSV
/// into `out_dir`. A non-finite loss aborts with the failing step index
/// after writing a `checkpoint_lastgood` from the step before.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    train_set: &[PatchSample<T>],
    val_set: &[PatchSample<T>],
    out_dir: &Path,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    let patch_shape = train_set[0].target.shape().to_vec();
    for s in train_set.iter().chain(val_set) {
        if s.target.shape() != patch_shape || s.low_stack.shape() != [3, patch_shape[0], patch_shape[1]] {
            return Err(Error::shape("inconsistent patch shapes in dataset"));
        }
    }
    std::fs::create_dir_all(out_dir)?;

    let mut generator = GeneratorParams::<T>::init(config.model, config.seed)?;
    let mut g_state = AdamState::new(generator.set());
    let gan = config.loss == LossMode::GanPerceptual;
    let mut critic = if gan {
        Some(DiscriminatorParams::<T>::init(
            CriticConfig {
                channels: config.critic_channels.clone(),
                input_hw: (patch_shape[0], patch_shape[1]),
            },
            derive(config.seed, 0x0d, 0),
        )?)
    } else {
        None
    };
    let mut d_state = critic.as_ref().map(|c| AdamState::new(c.set()));
    let phi = gan.then(|| FeatureExtractor::<T>::new(config.phi_seed));
    let hyper = AdamHyper::default();

    let log_path = out_dir.join("loss_log.csv");
    let mut logger = LossLogger::create(&log_path)?;
    let initial_train_mse = mean_mse(&generator, train_set)?;

    let mut last_good: (ParamSet<T>, Option<ParamSet<T>>) =
        (generator.set().clone(), critic.as_ref().map(|c| c.set().clone()));
    let mut step = 0usize;
    let mut best: Option<(f64, PathBuf)> = None;

    for epoch in 0..config.epochs {
        let intervals = epoch / config.decay_every_epochs;
        let lr_g = decayed_lr(config.lr_g, config.decay_gamma, intervals);
        let lr_d = decayed_lr(config.lr_d, config.decay_gamma, intervals);

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut seeded(derive(config.seed, 0x0e, epoch as u64)));

        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<PatchSample<T>> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let mut critic_parts = losses::CriticLossParts::default();
            if let (Some(d), Some(d_state)) = (critic.as_mut(), d_state.as_mut()) {
                let real: Vec<Tensor<T>> = batch
                    .iter()
                    .map(|s| s.target.reshaped(&[1, patch_shape[0], patch_shape[1]]).unwrap())
                    .collect();
                let fakes: Vec<Result<Tensor<T>>> = batch
                    .par_iter()
                    .map(|s| {
                        generator
                            .denoise_patch(&s.low_stack, false)?
                            .reshaped(&[1, patch_shape[0], patch_shape[1]])
                    })
                    .collect();
                let mut fake = Vec::with_capacity(fakes.len());
                for f in fakes {
                    fake.push(f?);
                }
                for critic_iter in 0..config.critic_steps {
                    let interp_seed = derive(
                        config.seed,
                        0x0f,
                        (step * config.critic_steps + critic_iter) as u64,
                    );
                    let (d_grads, parts) = discriminator_step_gradients(
                        &real,
                        &fake,
                        d,
                        config.lambda_gp,
                        interp_seed,
                    )?;
                    if !parts.total.is_finite() || !d_grads.all_finite() {
                        return abort(step, out_dir, config, &last_good);
                    }
                    adam_step(d.set_mut(), &d_grads, d_state, lr_d, &hyper)?;
                    critic_parts = parts;
                }
            }

            let (g_grads, parts) = generator_step_gradients(
                &batch,
                &generator,
                critic.as_ref(),
                phi.as_ref(),
                config.lambda_perceptual,
                config.loss,
            )?;
            if !parts.total.is_finite() || !g_grads.all_finite() {
                return abort(step, out_dir, config, &last_good);
            }
            adam_step(generator.set_mut(), &g_grads, &mut g_state, lr_g, &hyper)?;

            logger.log(&LossRow {
                step,
                epoch,
                mse: parts.mse,
                perceptual: parts.perceptual,
                adversarial_g: parts.adversarial,
                critic_loss: critic_parts.total,
                gp: critic_parts.gradient_penalty,
                lr_g,
                lr_d,
            })?;
            last_good = (generator.set().clone(), critic.as_ref().map(|c| c.set().clone()));
            step += 1;
        }

        let epoch_ckpt = out_dir.join(format!("checkpoint_epoch{epoch}"));
        save_checkpoint(&epoch_ckpt, config, generator.set(), critic.as_ref().map(|c| c.set()))?;

        if !val_set.is_empty() {
            let val_mse = mean_mse(&generator, val_set)?;
            if best.as_ref().is_none_or(|(m, _)| val_mse < *m) {
                let path = out_dir.join("checkpoint_best");
                save_checkpoint(&path, config, generator.set(), critic.as_ref().map(|c| c.set()))?;
                best = Some((val_mse, path));
            }
        }
    }

    let final_checkpoint = out_dir.join("checkpoint_final");
    save_checkpoint(&final_checkpoint, config, generator.set(), critic.as_ref().map(|c| c.set()))?;
    let final_train_mse = mean_mse(&generator, train_set)?;
    Ok(TrainOutcome {
        generator,
        steps: step,
        loss_log: log_path,
        final_checkpoint,
        best_checkpoint: best.as_ref().map(|(_, p)| p.clone()),
        best_val_mse: best.map(|(m, _)| m),
        initial_train_mse,
        final_train_mse,
    })
}

fn abort<T: Scalar>(
    step: usize,
    out_dir: &Path,
    config: &TrainConfig,
    last_good: &(ParamSet<T>, Option<ParamSet<T>>),
) -> Result<TrainOutcome<T>> {
    save_checkpoint(
        &out_dir.join("checkpoint_lastgood"),
        config,
        &last_good.0,
        last_good.1.as_ref(),
    )?;
    Err(Error::TrainingAborted {
        step,
        reason: "non-finite loss or gradient".into(),
    })
}

/// Rebuilds a generator from a checkpoint.
pub fn generator_from_checkpoint<T: Scalar>(base: &Path) -> Result<(GeneratorParams<T>, CheckpointManifest)> {
    let (manifest, g_set, _) = load_checkpoint::<T>(base)?;
    let generator = GeneratorParams::from_set(manifest.train.model, g_set)?;
    Ok((generator, manifest))
}

//! Generator and critic objectives.

use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::data::PatchSample;
use crate::error::{Error, Result};
use crate::model::{generator_forward, GeneratorParams};
use crate::params::GradMap;
use crate::rng::{derive, seeded};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::critic::{critic_input_gradient, critic_value, DiscriminatorParams};
use crate::train::perceptual::FeatureExtractor;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    MseOnly,
    GanPerceptual,
}

/// Per-batch generator loss components (all batch means).
#[derive(Clone, Copy, Debug, Default)]
pub struct GeneratorLossParts {
    pub total: f64,
    pub mse: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

/// Per-batch critic loss components.
#[derive(Clone, Copy, Debug, Default)]
pub struct CriticLossParts {
    pub total: f64,
    pub gradient_penalty: f64,
}

/// Batch generator loss, as a value.
///
/// In `GanPerceptual` mode: `-mean(D(G(X))) + lambda * mean(||phi(G(X)) -
/// phi(y)||^2)`; in `MseOnly` mode: `mean((G(X) - y)^2)`.
pub fn generator_loss<T: Scalar>(
    inputs: &[Tensor<T>],
    targets: &[Tensor<T>],
    generator: &GeneratorParams<T>,
    critic: Option<&DiscriminatorParams<T>>,
    phi: Option<&FeatureExtractor<T>>,
    lambda: f64,
    mode: LossMode,
) -> Result<f64> {
    let (_, parts) = generator_batch(inputs, targets, generator, critic, phi, lambda, mode, false)?;
    Ok(parts.total)
}

/// Batch generator loss and parameter gradients.
pub fn generator_step_gradients<T: Scalar>(
    batch: &[PatchSample<T>],
    generator: &GeneratorParams<T>,
    critic: Option<&DiscriminatorParams<T>>,
    phi: Option<&FeatureExtractor<T>>,
    lambda: f64,
    mode: LossMode,
) -> Result<(GradMap<T>, GeneratorLossParts)> {
    let inputs: Vec<Tensor<T>> = batch.iter().map(|s| s.low_stack.clone()).collect();
    let targets: Vec<Tensor<T>> = batch.iter().map(|s| s.target.clone()).collect();
    let (grads, parts) =
        generator_batch(&inputs, &targets, generator, critic, phi, lambda, mode, true)?;
    Ok((grads.expect("gradients requested"), parts))
}

#[allow(clippy::too_many_arguments)]
fn generator_batch<T: Scalar>(
    inputs: &[Tensor<T>],
    targets: &[Tensor<T>],
    generator: &GeneratorParams<T>,
    critic: Option<&DiscriminatorParams<T>>,
    phi: Option<&FeatureExtractor<T>>,
    lambda: f64,
    mode: LossMode,
    with_grads: bool,
) -> Result<(Option<GradMap<T>>, GeneratorLossParts)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::arg(format!(
            "generator loss: {} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if mode == LossMode::GanPerceptual && (critic.is_none() || phi.is_none()) {
        return Err(Error::arg(
            "adversarial-perceptual loss needs both a critic and a feature extractor",
        ));
    }
    let lambda_t = T::from_f64_lit(lambda);
    let per_sample: Vec<Result<(Option<GradMap<T>>, GeneratorLossParts)>> = inputs
        .par_iter()
        .zip(targets.par_iter())
        .map(|(input, target)| {
            let mut tape = Tape::new();
            let input_id = tape.constant(input.clone());
            let (vars, bound) = generator.bind(&mut tape, with_grads);
            let (out, _) = generator_forward(&mut tape, input_id, &vars, generator.config())?;
            let target_id = tape.constant(target.clone());
            let diff = tape.sub(out, target_id)?;
            let sq = tape.mul(diff, diff)?;
            let mse_id = tape.mean(sq);
            let mse = tape.value(mse_id).item().to_f64_lit();

            let mut parts = GeneratorLossParts {
                mse,
                ..Default::default()
            };
            let loss = match mode {
                LossMode::MseOnly => {
                    parts.total = mse;
                    mse_id
                }
                LossMode::GanPerceptual => {
                    let (d, phi) = (critic.unwrap(), phi.unwrap());
                    let shape = tape.shape(out).to_vec();
                    let image = tape.reshape(out, &[1, shape[0], shape[1]])?;
                    let target_img = tape.reshape(target_id, &[1, shape[0], shape[1]])?;
                    let (dvars, _) = d.bind(&mut tape, false);
                    let score = critic_value(&mut tape, image, &dvars, d.config())?;
                    let adversarial = tape.scale(score, -T::one());
                    let fx = phi.features(&mut tape, image)?;
                    let fy = phi.features(&mut tape, target_img)?;
                    let fdiff = tape.sub(fx, fy)?;
                    let fsq = tape.mul(fdiff, fdiff)?;
                    let perceptual = tape.sum(fsq);
                    let weighted = tape.scale(perceptual, lambda_t);
                    let loss = tape.add(adversarial, weighted)?;
                    parts.adversarial = tape.value(adversarial).item().to_f64_lit();
                    parts.perceptual = tape.value(perceptual).item().to_f64_lit();
                    parts.total = tape.value(loss).item().to_f64_lit();
                    loss
                }
            };
            let grads = if with_grads {
                let sweep = tape.backward(loss)?;
                Some(GradMap::collect(generator.set(), &bound, &sweep))
            } else {
                None
            };
            Ok((grads, parts))
        })
        .collect();

    // deterministic in-order reduction
    let scale = 1.0 / inputs.len() as f64;
    let mut grads: Option<GradMap<T>> = None;
    let mut parts = GeneratorLossParts::default();
    for r in per_sample {
        let (g, p) = r?;
        parts.total += p.total * scale;
        parts.mse += p.mse * scale;
        parts.perceptual += p.perceptual * scale;
        parts.adversarial += p.adversarial * scale;
        if let Some(g) = g {
            match &mut grads {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
    }
    if let Some(g) = &mut grads {
        g.scale(T::from_f64_lit(scale));
    }
    Ok((grads, parts))
}

/// Batch critic loss, as a value: `mean(D(fake)) - mean(D(real)) +
/// lambda_gp * mean((||grad D(x_hat)|| - 1)^2)`, with `x_hat` drawn per
/// sample on the segment between real and fake.
pub fn discriminator_loss<T: Scalar>(
    real: &[Tensor<T>],
    fake: &[Tensor<T>],
    critic: &DiscriminatorParams<T>,
    lambda_gp: f64,
    interpolation_seed: u64,
) -> Result<f64> {
    let (_, parts) = discriminator_batch(real, fake, critic, lambda_gp, interpolation_seed, false)?;
    Ok(parts.total)
}

/// Batch critic loss and parameter gradients.
pub fn discriminator_step_gradients<T: Scalar>(
    real: &[Tensor<T>],
    fake: &[Tensor<T>],
    critic: &DiscriminatorParams<T>,
    lambda_gp: f64,
    interpolation_seed: u64,
) -> Result<(GradMap<T>, CriticLossParts)> {
    let (grads, parts) = discriminator_batch(real, fake, critic, lambda_gp, interpolation_seed, true)?;
    Ok((grads.expect("gradients requested"), parts))
}

fn discriminator_batch<T: Scalar>(
    real: &[Tensor<T>],
    fake: &[Tensor<T>],
    critic: &DiscriminatorParams<T>,
    lambda_gp: f64,
    interpolation_seed: u64,
    with_grads: bool,
) -> Result<(Option<GradMap<T>>, CriticLossParts)> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::arg(format!(
            "discriminator loss: {} real vs {} fake samples",
            real.len(),
            fake.len()
        )));
    }
    for (r, f) in real.iter().zip(fake) {
        if r.shape() != f.shape() {
            return Err(Error::shape(format!(
                "discriminator loss: real {:?} vs fake {:?}",
                r.shape(),
                f.shape()
            )));
        }
    }
    let lambda_t = T::from_f64_lit(lambda_gp);
    let per_sample: Vec<Result<(Option<GradMap<T>>, f64, f64)>> = real
        .par_iter()
        .zip(fake.par_iter())
        .enumerate()
        .map(|(k, (real_img, fake_img))| {
            let u = seeded(derive(interpolation_seed, 0x75, k as u64)).gen_range(0.0..1.0);
            let u_t = T::from_f64_lit(u);
            let interp: Vec<T> = real_img
                .data()
                .iter()
                .zip(fake_img.data())
                .map(|(&r, &f)| u_t * r + (T::one() - u_t) * f)
                .collect();
            let interp = Tensor::from_vec(real_img.shape(), interp)?;

            let mut tape = Tape::new();
            let (vars, bound) = critic.bind(&mut tape, with_grads);
            let fake_id = tape.constant(fake_img.clone());
            let real_id = tape.constant(real_img.clone());
            let interp_id = tape.constant(interp);
            let d_fake = critic_value(&mut tape, fake_id, &vars, critic.config())?;
            let d_real = critic_value(&mut tape, real_id, &vars, critic.config())?;
            let grad = critic_input_gradient(&mut tape, interp_id, &vars, critic.config())?;
            let norm = tape.l2_norm(grad);
            let deviation = tape.add_scalar(norm, -T::one());
            let penalty = tape.mul(deviation, deviation)?;
            let spread = tape.sub(d_fake, d_real)?;
            let weighted = tape.scale(penalty, lambda_t);
            let loss = tape.add(spread, weighted)?;

            let total = tape.value(loss).item().to_f64_lit();
            let gp = tape.value(penalty).item().to_f64_lit();
            let grads = if with_grads {
                let sweep = tape.backward(loss)?;
                Some(GradMap::collect(critic.set(), &bound, &sweep))
            } else {
                None
            };
            Ok((grads, total, gp))
        })
        .collect();

    let scale = 1.0 / real.len() as f64;
    let mut grads: Option<GradMap<T>> = None;
    let mut parts = CriticLossParts::default();
    for r in per_sample {
        let (g, total, gp) = r?;
        parts.total += total * scale;
        parts.gradient_penalty += gp * scale;
        if let Some(g) = g {
            match &mut grads {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
    }
    if let Some(g) = &mut grads {
        g.scale(T::from_f64_lit(scale));
    }
    Ok((grads, parts))
}

/// Mean generator MSE over a sample list, untracked; the validation
/// metric.
pub fn mean_mse<T: Scalar>(
    generator: &GeneratorParams<T>,
    samples: &[PatchSample<T>],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::arg("mean_mse: empty sample list"));
    }
    let per: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| {
            let out = generator.denoise_patch(&s.low_stack, false)?;
            let mse = out
                .data()
                .iter()
                .zip(s.target.data())
                .map(|(&a, &b)| (a - b).to_f64_lit().powi(2))
                .sum::<f64>()
                / out.numel() as f64;
            Ok(mse)
        })
        .collect();
    let mut total = 0.0;
    for r in per {
        total += r?;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::{seeded, uniform_tensor};
    use crate::train::critic::CriticConfig;

    fn toy_generator() -> GeneratorParams<f64> {
        let cfg = ModelConfig {
            blocks: 1,
            embed_channels: 4,
            feature_channels: 2,
            tail_channels: 2,
            ecc_hidden: 4,
            graph: crate::graph::GraphConfig {
                k: 3,
                ..Default::default()
            },
        };
        GeneratorParams::init(cfg, 3).unwrap()
    }

    #[test]
    fn lambda_zero_is_pure_adversarial() {
        let gen = toy_generator();
        let critic =
            DiscriminatorParams::<f64>::init(CriticConfig { channels: vec![2], input_hw: (12, 12) }, 1)
                .unwrap();
        let phi = FeatureExtractor::new(2);
        let mut rng = seeded(5);
        let inputs: Vec<Tensor<f64>> = (0..2).map(|_| uniform_tensor(&mut rng, &[3, 12, 12], 0.0, 1.0)).collect();
        let targets: Vec<Tensor<f64>> = (0..2).map(|_| uniform_tensor(&mut rng, &[12, 12], 0.0, 1.0)).collect();
        let loss = generator_loss(
            &inputs,
            &targets,
            &gen,
            Some(&critic),
            Some(&phi),
            0.0,
            LossMode::GanPerceptual,
        )
        .unwrap();
        // hand-compose -mean(D(G(X)))
        let mut expect = 0.0;
        for input in &inputs {
            let out = gen.denoise_patch(input, false).unwrap();
            let img = out.reshaped(&[1, 12, 12]).unwrap();
            expect -= critic.score(&img).unwrap();
        }
        expect /= inputs.len() as f64;
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
    }

    #[test]
    fn perceptual_term_vanishes_when_output_equals_target() {
        let gen = toy_generator();
        let critic =
            DiscriminatorParams::<f64>::init(CriticConfig { channels: vec![2], input_hw: (12, 12) }, 1)
                .unwrap();
        let phi = FeatureExtractor::new(2);
        let mut rng = seeded(6);
        let inputs: Vec<Tensor<f64>> = vec![uniform_tensor(&mut rng, &[3, 12, 12], 0.0, 1.0)];
        // target = generator output
        let targets = vec![gen.denoise_patch(&inputs[0], false).unwrap()];
        let with_phi = generator_loss(
            &inputs, &targets, &gen, Some(&critic), Some(&phi), 123.0, LossMode::GanPerceptual,
        )
        .unwrap();
        let without_phi = generator_loss(
            &inputs, &targets, &gen, Some(&critic), Some(&phi), 0.0, LossMode::GanPerceptual,
        )
        .unwrap();
        assert!((with_phi - without_phi).abs() < 1e-10);
    }

    #[test]
    fn random_batch_matches_hand_composition() {
        let gen = toy_generator();
        let critic =
            DiscriminatorParams::<f64>::init(CriticConfig { channels: vec![2], input_hw: (12, 12) }, 7)
                .unwrap();
        let phi = FeatureExtractor::new(9);
        let lambda = 0.1;
        let mut rng = seeded(7);
        let inputs: Vec<Tensor<f64>> = (0..3).map(|_| uniform_tensor(&mut rng, &[3, 12, 12], 0.0, 1.0)).collect();
        let targets: Vec<Tensor<f64>> = (0..3).map(|_| uniform_tensor(&mut rng, &[12, 12], 0.0, 1.0)).collect();
        let loss = generator_loss(
            &inputs, &targets, &gen, Some(&critic), Some(&phi), lambda, LossMode::GanPerceptual,
        )
        .unwrap();
        let mut expect = 0.0;
        for (input, target) in inputs.iter().zip(&targets) {
            let out = gen.denoise_patch(input, false).unwrap().reshaped(&[1, 12, 12]).unwrap();
            let timg = target.reshaped(&[1, 12, 12]).unwrap();
            let fx = phi.features_value(&out).unwrap();
            let fy = phi.features_value(&timg).unwrap();
            let dist: f64 = fx
                .data()
                .iter()
                .zip(fy.data())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            expect += -critic.score(&out).unwrap() + lambda * dist;
        }
        expect /= 3.0;
        assert!((loss - expect).abs() < 1e-10, "{loss} vs {expect}");
    }

    #[test]
    fn mse_mode_matches_direct_mse() {
        let gen = toy_generator();
        let mut rng = seeded(8);
        let inputs: Vec<Tensor<f64>> = vec![uniform_tensor(&mut rng, &[3, 12, 12], 0.0, 1.0)];
        let targets: Vec<Tensor<f64>> = vec![uniform_tensor(&mut rng, &[12, 12], 0.0, 1.0)];
        let loss =
            generator_loss(&inputs, &targets, &gen, None, None, 0.1, LossMode::MseOnly).unwrap();
        let out = gen.denoise_patch(&inputs[0], false).unwrap();
        let expect: f64 = out
            .data()
            .iter()
            .zip(targets[0].data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / 144.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn unit_norm_linear_critic_has_zero_penalty() {
        let cfg = CriticConfig::linear((4, 4));
        let mut critic = DiscriminatorParams::<f64>::init(cfg, 1).unwrap();
        let mut w = vec![0.0; 16];
        w[3] = 0.6;
        w[10] = 0.8; // ||w|| = 1
        critic
            .set_mut()
            .set("d.fc.weight", Tensor::from_vec(&[16, 1], w).unwrap())
            .unwrap();
        let mut rng = seeded(9);
        let real: Vec<Tensor<f64>> = (0..4).map(|_| uniform_tensor(&mut rng, &[1, 4, 4], 0.0, 1.0)).collect();
        let fake: Vec<Tensor<f64>> = (0..4).map(|_| uniform_tensor(&mut rng, &[1, 4, 4], 0.0, 1.0)).collect();
        let with_pen = discriminator_loss(&real, &fake, &critic, 10.0, 42).unwrap();
        let without_pen = discriminator_loss(&real, &fake, &critic, 0.0, 42).unwrap();
        assert!((with_pen - without_pen).abs() < 1e-10);
    }

    #[test]
    fn constant_critic_penalty_equals_lambda() {
        // zero weights: D is constant, grad norm 0, penalty = 1 per sample
        let cfg = CriticConfig::linear((4, 4));
        let mut critic = DiscriminatorParams::<f64>::init(cfg, 1).unwrap();
        critic
            .set_mut()
            .set("d.fc.weight", Tensor::zeros(&[16, 1]))
            .unwrap();
        critic.set_mut().set("d.fc.bias", Tensor::scalar(0.7)).unwrap();
        let mut rng = seeded(10);
        let real: Vec<Tensor<f64>> = (0..3).map(|_| uniform_tensor(&mut rng, &[1, 4, 4], 0.0, 1.0)).collect();
        let fake: Vec<Tensor<f64>> = (0..3).map(|_| uniform_tensor(&mut rng, &[1, 4, 4], 0.0, 1.0)).collect();
        let lambda_gp = 10.0;
        let loss = discriminator_loss(&real, &fake, &critic, lambda_gp, 1).unwrap();
        // D(fake) - D(real) = 0; penalty = lambda_gp * 1
        assert!((loss - lambda_gp).abs() < 1e-10, "{loss}");
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        // d loss_D / d theta through the unrolled penalty program
        use crate::gradcheck::grad_check;
        let cfg = CriticConfig {
            channels: vec![2],
            input_hw: (6, 6),
        };
        let critic = DiscriminatorParams::<f64>::init(cfg.clone(), 11).unwrap();
        let mut rng = seeded(12);
        let real: Tensor<f64> = uniform_tensor(&mut rng, &[1, 6, 6], 0.0, 1.0);
        let fake: Tensor<f64> = uniform_tensor(&mut rng, &[1, 6, 6], 0.0, 1.0);

        // flatten all critic params as grad_check inputs
        let values: Vec<Tensor<f64>> = critic.set().iter().map(|e| e.value.clone()).collect();
        let check = grad_check(
            |tape, ids| {
                let bound = crate::params::BoundParams::from_ids(ids.to_vec());
                let vars = critic.vars_from_bound(&bound);
                let fake_id = tape.constant(fake.clone());
                let real_id = tape.constant(real.clone());
                let u = 0.37;
                let interp: Vec<f64> = real
                    .data()
                    .iter()
                    .zip(fake.data())
                    .map(|(&r, &f)| u * r + (1.0 - u) * f)
                    .collect();
                let interp_id = tape.constant(Tensor::from_vec(&[1, 6, 6], interp).unwrap());
                let d_fake = critic_value(tape, fake_id, &vars, critic.config())?;
                let d_real = critic_value(tape, real_id, &vars, critic.config())?;
                let grad = critic_input_gradient(tape, interp_id, &vars, critic.config())?;
                let norm = tape.l2_norm(grad);
                let dev = tape.add_scalar(norm, -1.0);
                let pen = tape.mul(dev, dev)?;
                let spread = tape.sub(d_fake, d_real)?;
                let weighted = tape.scale(pen, 10.0);
                tape.add(spread, weighted)
            },
            &values,
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-4, "{}", check.max_rel_error);
    }
}

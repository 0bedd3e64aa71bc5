//! The Wasserstein critic: strided 3x3 convolutions with leaky
//! activations, flattened into one linear score.
//!
//! Besides the score itself, the critic exposes its input gradient as a
//! forward tape program ([`critic_input_gradient`]): the chain rule is
//! unrolled layer by layer with the activation masks inserted as
//! detached constants. The resulting gradient-norm penalty is then an
//! ordinary differentiable function of the critic parameters, which is
//! exactly what the gradient-penalty objective needs.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Padding, Tape, TensorId};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamKind, ParamSet};
use crate::rng::{derive, normal_tensor, seeded};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const STRIDE: (usize, usize) = (2, 2);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticConfig {
    /// Output channels of each strided convolution; empty means a purely
    /// linear critic (used by the objective's unit tests).
    pub channels: Vec<usize>,
    /// Input spatial extents the critic was built for.
    pub input_hw: (usize, usize),
}

impl CriticConfig {
    pub fn standard(input_hw: (usize, usize)) -> Self {
        Self {
            channels: vec![8, 16, 32, 64],
            input_hw,
        }
    }

    /// No convolutions: `D(x) = <w, x> + b`.
    pub fn linear(input_hw: (usize, usize)) -> Self {
        Self {
            channels: Vec::new(),
            input_hw,
        }
    }

    /// Spatial extents after each stride-2 convolution.
    fn layer_extents(&self) -> Vec<(usize, usize)> {
        let mut extents = vec![self.input_hw];
        for _ in &self.channels {
            let (h, w) = *extents.last().unwrap();
            extents.push(((h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1));
        }
        extents
    }

    /// Flattened feature count in front of the linear head.
    fn head_inputs(&self) -> usize {
        let (h, w) = *self.layer_extents().last().unwrap();
        let c = self.channels.last().copied().unwrap_or(1);
        c * h * w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_hw.0 == 0 || self.input_hw.1 == 0 {
            return Err(Error::arg("critic input extents must be positive"));
        }
        if self.channels.contains(&0) {
            return Err(Error::arg("critic channel counts must be positive"));
        }
        Ok(())
    }
}

/// Learnable parameters of the critic.
#[derive(Clone, Debug)]
pub struct DiscriminatorParams<T> {
    config: CriticConfig,
    set: ParamSet<T>,
}

pub struct CriticVars {
    convs: Vec<(TensorId, TensorId)>,
    head_weight: TensorId,
    head_bias: TensorId,
}

pub const CRITIC_SLOPE: f64 = 0.2;

impl<T: Scalar> DiscriminatorParams<T> {
    pub fn init(config: CriticConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(derive(seed, 0x44, 0));
        let mut set = ParamSet::new();
        let mut c_in = 1;
        for (i, &c_out) in config.channels.iter().enumerate() {
            let std = (2.0 / (c_in * 9) as f64).sqrt();
            set.insert(
                format!("d.conv{i}.kernel"),
                normal_tensor(&mut rng, &[c_out, c_in, 3, 3], 0.0, std),
                ParamKind::Dense,
            );
            set.insert(format!("d.conv{i}.bias"), Tensor::zeros(&[c_out]), ParamKind::Dense);
            c_in = c_out;
        }
        let head = config.head_inputs();
        set.insert(
            "d.fc.weight",
            normal_tensor(&mut rng, &[head, 1], 0.0, (1.0 / head as f64).sqrt()),
            ParamKind::Dense,
        );
        set.insert("d.fc.bias", Tensor::zeros(&[1]), ParamKind::Dense);
        Ok(Self { config, set })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn set(&self) -> &ParamSet<T> {
        &self.set
    }

    pub fn set_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.set
    }

    pub fn from_set(config: CriticConfig, set: ParamSet<T>) -> Result<Self> {
        let template = Self::init(config.clone(), 0)?;
        if template.set.len() != set.len() {
            return Err(Error::arg(format!(
                "critic parameter count {} does not match architecture ({} expected)",
                set.len(),
                template.set.len()
            )));
        }
        for (have, want) in set.iter().zip(template.set.iter()) {
            if have.name != want.name || have.value.shape() != want.value.shape() {
                return Err(Error::arg(format!(
                    "critic parameter {} (shape {:?}) does not match architecture",
                    have.name,
                    have.value.shape()
                )));
            }
        }
        Ok(Self { config, set })
    }

    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> (CriticVars, BoundParams) {
        let bound = self.set.bind(tape, requires_grad);
        let vars = self.vars_from_bound(&bound);
        (vars, bound)
    }

    /// Assembles typed handles from already-registered leaf ids.
    pub fn vars_from_bound(&self, bound: &BoundParams) -> CriticVars {
        let convs = (0..self.config.channels.len())
            .map(|i| {
                (
                    bound.id_of(&self.set, &format!("d.conv{i}.kernel")),
                    bound.id_of(&self.set, &format!("d.conv{i}.bias")),
                )
            })
            .collect();
        CriticVars {
            convs,
            head_weight: bound.id_of(&self.set, "d.fc.weight"),
            head_bias: bound.id_of(&self.set, "d.fc.bias"),
        }
    }

    /// Untracked critic score of one `[1, H, W]` image.
    pub fn score(&self, image: &Tensor<T>) -> Result<T> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let (vars, _) = self.bind(&mut tape, false);
        let out = critic_value(&mut tape, x, &vars, &self.config)?;
        Ok(tape.value(out).item())
    }

    /// Smallest |pre-activation| over all layers at `image`; infinite for
    /// a linear critic. Finite-difference probes of the penalty are only
    /// smooth when this margin comfortably exceeds the probe step (an
    /// activation mask must not flip between probes).
    pub fn preactivation_margin(&self, image: &Tensor<T>) -> Result<f64> {
        let mut tape = Tape::new();
        let slope = T::from_f64_lit(CRITIC_SLOPE);
        let mut h = tape.constant(image.clone());
        let (vars, _) = self.bind(&mut tape, false);
        let mut margin = f64::INFINITY;
        for &(kernel, bias) in &vars.convs {
            let z = tape.conv2d_strided(h, kernel, Some(bias), Padding::Zero, STRIDE)?;
            for &v in tape.value(z).data() {
                margin = margin.min(v.to_f64_lit().abs());
            }
            h = tape.leaky_relu(z, slope)?;
        }
        Ok(margin)
    }
}

/// Critic score as a one-element tensor on the tape.
pub fn critic_value<T: Scalar>(
    tape: &mut Tape<T>,
    image: TensorId,
    vars: &CriticVars,
    config: &CriticConfig,
) -> Result<TensorId> {
    let shape = tape.shape(image);
    if shape != [1, config.input_hw.0, config.input_hw.1] {
        return Err(Error::shape(format!(
            "critic expects [1, {}, {}], got {shape:?}",
            config.input_hw.0, config.input_hw.1
        )));
    }
    let slope = T::from_f64_lit(CRITIC_SLOPE);
    let mut h = image;
    for &(kernel, bias) in &vars.convs {
        let z = tape.conv2d_strided(h, kernel, Some(bias), Padding::Zero, STRIDE)?;
        h = tape.leaky_relu(z, slope)?;
    }
    let flat = tape.shape(h).iter().product::<usize>();
    let row = tape.reshape(h, &[1, flat])?;
    let scored = tape.matmul(row, vars.head_weight)?;
    let scored = tape.add_row_bias(scored, vars.head_bias)?;
    tape.reshape(scored, &[1])
}

/// The critic's gradient with respect to its input, unrolled as a
/// forward program: activation masks enter as detached constants (their
/// parameter derivative is zero almost everywhere), every other factor
/// stays differentiable. Returns a `[1, H, W]` tape value.
pub fn critic_input_gradient<T: Scalar>(
    tape: &mut Tape<T>,
    image: TensorId,
    vars: &CriticVars,
    config: &CriticConfig,
) -> Result<TensorId> {
    let shape = tape.shape(image);
    if shape != [1, config.input_hw.0, config.input_hw.1] {
        return Err(Error::shape(format!(
            "critic expects [1, {}, {}], got {shape:?}",
            config.input_hw.0, config.input_hw.1
        )));
    }
    let slope = T::from_f64_lit(CRITIC_SLOPE);
    // forward, keeping each layer's pre-activation for the masks
    let mut h = image;
    let mut pre_activations = Vec::with_capacity(vars.convs.len());
    for &(kernel, bias) in &vars.convs {
        let z = tape.conv2d_strided(h, kernel, Some(bias), Padding::Zero, STRIDE)?;
        pre_activations.push(z);
        h = tape.leaky_relu(z, slope)?;
    }
    // d score / d h_last is the head weight itself
    let last_shape = tape.shape(h).to_vec();
    let mut grad = tape.reshape(vars.head_weight, &last_shape)?;
    let extents = config.layer_extents();
    for (layer, &(kernel, _)) in vars.convs.iter().enumerate().rev() {
        let mask_t = {
            let z = tape.value(pre_activations[layer]);
            z.map(|v| if v > T::zero() { T::one() } else { slope })
        };
        let mask = tape.constant(mask_t);
        let gz = tape.mul(grad, mask)?;
        grad = tape.conv2d_input_grad(gz, kernel, Padding::Zero, STRIDE, extents[layer])?;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::{seeded, uniform_tensor};

    #[test]
    fn linear_critic_is_inner_product() {
        let cfg = CriticConfig::linear((3, 3));
        let mut d = DiscriminatorParams::<f64>::init(cfg, 1).unwrap();
        let w: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        d.set_mut()
            .set("d.fc.weight", Tensor::from_vec(&[9, 1], w.clone()).unwrap())
            .unwrap();
        let x: Tensor<f64> = uniform_tensor(&mut seeded(2), &[1, 3, 3], -1.0, 1.0);
        let expect: f64 = x.data().iter().zip(&w).map(|(&a, &b)| a * b).sum();
        assert!((d.score(&x).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn score_shapes_shrink_by_stride() {
        let cfg = CriticConfig::standard((32, 32));
        assert_eq!(cfg.layer_extents().last(), Some(&(2, 2)));
        assert_eq!(cfg.head_inputs(), 64 * 2 * 2);
        let d = DiscriminatorParams::<f64>::init(cfg, 3).unwrap();
        let x: Tensor<f64> = uniform_tensor(&mut seeded(4), &[1, 32, 32], 0.0, 1.0);
        assert!(d.score(&x).unwrap().is_finite());
    }

    #[test]
    fn input_gradient_matches_tape_backward_and_fd() {
        let cfg = CriticConfig {
            channels: vec![3, 5],
            input_hw: (9, 9),
        };
        let d = DiscriminatorParams::<f64>::init(cfg.clone(), 5).unwrap();
        let x: Tensor<f64> = uniform_tensor(&mut seeded(6), &[1, 9, 9], -0.5, 0.5);

        // unrolled program
        let mut tape = Tape::new();
        let xid = tape.constant(x.clone());
        let (vars, _) = d.bind(&mut tape, false);
        let g_unrolled = critic_input_gradient(&mut tape, xid, &vars, &cfg).unwrap();
        let g_unrolled = tape.value(g_unrolled).clone();

        // ordinary reverse sweep
        let mut tape2 = Tape::new();
        let xid2 = tape2.leaf(x.clone(), true);
        let (vars2, _) = d.bind(&mut tape2, false);
        let score = critic_value(&mut tape2, xid2, &vars2, &cfg).unwrap();
        let grads = tape2.backward(score).unwrap();
        let g_backward = grads.wrt(xid2).unwrap().clone();
        assert!(g_unrolled.max_abs_diff(&g_backward) < 1e-12);

        // finite differences
        let check = grad_check(
            |tape, ids| {
                let (vars, _) = d.bind(tape, false);
                critic_value(tape, ids[0], &vars, &cfg)
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-5, "{}", check.max_rel_error);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let cfg = CriticConfig::standard((16, 16));
        let d = DiscriminatorParams::<f64>::init(cfg, 1).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 8, 8]);
        assert!(d.score(&x).is_err());
    }
}

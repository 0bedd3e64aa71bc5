//! The stacked denoising generator: embedding, local branch, plane/depth
//! graph branches, learnable fusion and center-slice replacement.
//!
//! Each block embeds the 3-slice stack with 3-D convolutions (reflect
//! padding everywhere, stride 1), runs the three branches on the center
//! slice, fuses them with a learnable scalar and writes the result back
//! into the center position of the feature stack. The full generator
//! stacks several blocks and finishes with a two-conv channel
//! encoder-decoder tail.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Padding, Tape, TensorId};
use crate::error::{Error, Result};
use crate::graph::{
    depth_gcn, plane_gcn, plane_gcn_with_edges, EccParams, EccVars, EdgeSet, GraphConfig,
    ThetaMode,
};
use crate::params::{BoundParams, ParamKind, ParamSet};
use crate::rng::{derive, normal_tensor, seeded};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Architecture hyperparameters of the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub graph: GraphConfig,
    /// Number of stacked blocks (1..=5; 3 is the production depth).
    pub blocks: usize,
    /// Output channels of the first embedding convolution.
    pub embed_channels: usize,
    /// Working feature channels of every branch.
    pub feature_channels: usize,
    /// Hidden channels of the tail encoder-decoder.
    pub tail_channels: usize,
    /// Hidden width of the edge networks.
    pub ecc_hidden: usize,
}

impl ModelConfig {
    /// Production-scale configuration.
    pub fn paper() -> Self {
        Self {
            graph: GraphConfig::default(),
            blocks: 3,
            embed_channels: 64,
            feature_channels: 32,
            tail_channels: 16,
            ecc_hidden: 16,
        }
    }

    /// Desk-scale configuration: one block, 8 channels, diagonal edge
    /// maps, K = 4.
    pub fn tiny() -> Self {
        Self {
            graph: GraphConfig {
                k: 4,
                theta: ThetaMode::Diagonal,
                ..GraphConfig::default()
            },
            blocks: 1,
            embed_channels: 16,
            feature_channels: 8,
            tail_channels: 4,
            ecc_hidden: 8,
        }
    }

    /// Gradient-audit configuration: small enough for exhaustive central
    /// differences.
    pub fn toy() -> Self {
        Self {
            graph: GraphConfig {
                k: 4,
                ..GraphConfig::default()
            },
            blocks: 1,
            embed_channels: 8,
            feature_channels: 4,
            tail_channels: 2,
            ecc_hidden: 4,
        }
    }

    /// Slice count of the input stack (the depth-graph vertex count).
    pub fn slices(&self) -> usize {
        self.graph.m
    }

    pub fn center_slice(&self) -> usize {
        self.graph.m / 2
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        if self.graph.m != 3 {
            return Err(Error::arg(format!(
                "the generator expects 3-slice stacks, got m={}",
                self.graph.m
            )));
        }
        if self.blocks == 0 || self.blocks > 5 {
            return Err(Error::arg(format!("block count {} not in 1..=5", self.blocks)));
        }
        if self.embed_channels == 0
            || self.feature_channels == 0
            || self.tail_channels == 0
            || self.ecc_hidden == 0
        {
            return Err(Error::arg("channel counts must be positive"));
        }
        Ok(())
    }
}

/// Tape handles of one convolution's parameters.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub kernel: TensorId,
    pub bias: TensorId,
}

/// Tape handles of one block's parameters.
pub struct BlockVars {
    pub embed: Vec<ConvVars>,
    pub local: ConvVars,
    pub plane: EccVars,
    pub depth: EccVars,
    pub alpha: TensorId,
}

/// Tape handles of the whole generator.
pub struct GeneratorVars {
    pub blocks: Vec<BlockVars>,
    pub tail: Vec<ConvVars>,
}

/// All learnable parameters of the generator, stored flat and named.
#[derive(Clone, Debug)]
pub struct GeneratorParams<T> {
    config: ModelConfig,
    set: ParamSet<T>,
}

/// Kernel noise relative to the He scale; the remainder of each kernel is
/// a center-tap passthrough so an untrained model starts near identity.
const INIT_NOISE_FRACTION: f64 = 0.2;

fn passthrough_conv_kernel<T: Scalar>(
    rng: &mut rand_chacha::ChaCha8Rng,
    c_out: usize,
    c_in: usize,
    spatial: &[usize],
) -> Tensor<T> {
    let taps: usize = spatial.iter().product();
    let he = (2.0 / (c_in * taps) as f64).sqrt();
    let mut shape = vec![c_out, c_in];
    shape.extend_from_slice(spatial);
    let noise: Tensor<T> = normal_tensor(rng, &shape, 0.0, INIT_NOISE_FRACTION * he);
    let mut data = noise.to_vec();
    let center: usize = spatial.iter().fold(0usize, |acc, &e| acc * e + e / 2);
    for o in 0..c_out {
        let i = o % c_in;
        let idx = (o * c_in + i) * taps + center;
        data[idx] = data[idx] + T::one();
    }
    Tensor::from_vec(&shape, data).unwrap()
}

impl<T: Scalar> GeneratorParams<T> {
    /// Seeded initialization. Convolutions start as noisy passthroughs,
    /// edge networks as identity maps and the fusion scalars at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(derive(seed, 0x47, 0));
        let mut set = ParamSet::new();
        let c_feat = config.feature_channels;
        for b in 0..config.blocks {
            let embeds: Vec<(usize, usize)> = if b == 0 {
                vec![(config.embed_channels, 1), (c_feat, config.embed_channels)]
            } else {
                vec![(c_feat, c_feat)]
            };
            for (j, (c_out, c_in)) in embeds.into_iter().enumerate() {
                set.insert(
                    format!("g.block{b}.embed{j}.kernel"),
                    passthrough_conv_kernel(&mut rng, c_out, c_in, &[3, 3, 3]),
                    ParamKind::Dense,
                );
                set.insert(
                    format!("g.block{b}.embed{j}.bias"),
                    Tensor::zeros(&[c_out]),
                    ParamKind::Dense,
                );
            }
            set.insert(
                format!("g.block{b}.local.kernel"),
                passthrough_conv_kernel(&mut rng, c_feat, c_feat, &[3, 3]),
                ParamKind::Dense,
            );
            set.insert(
                format!("g.block{b}.local.bias"),
                Tensor::zeros(&[c_feat]),
                ParamKind::Dense,
            );
            for branch in ["plane", "depth"] {
                let ecc = EccParams::<T>::init(&mut rng, c_feat, config.ecc_hidden, config.graph.theta);
                set.insert(format!("g.block{b}.{branch}.w1"), ecc.w1, ParamKind::Dense);
                set.insert(format!("g.block{b}.{branch}.b1"), ecc.b1, ParamKind::Dense);
                set.insert(format!("g.block{b}.{branch}.w2"), ecc.w2, ParamKind::Dense);
                set.insert(format!("g.block{b}.{branch}.b2"), ecc.b2, ParamKind::Dense);
                set.insert(format!("g.block{b}.{branch}.bias"), ecc.bias, ParamKind::Dense);
            }
            // "initialized to 0": the untrained block passes pure context
            set.insert(
                format!("g.block{b}.alpha"),
                Tensor::zeros(&[1]),
                ParamKind::UnitInterval,
            );
        }
        set.insert(
            "g.tail0.kernel",
            passthrough_conv_kernel(&mut rng, config.tail_channels, c_feat, &[3, 3, 3]),
            ParamKind::Dense,
        );
        set.insert("g.tail0.bias", Tensor::zeros(&[config.tail_channels]), ParamKind::Dense);
        set.insert(
            "g.tail1.kernel",
            passthrough_conv_kernel(&mut rng, 1, config.tail_channels, &[3, 3, 3]),
            ParamKind::Dense,
        );
        set.insert("g.tail1.bias", Tensor::zeros(&[1]), ParamKind::Dense);
        Ok(Self { config, set })
    }

    /// Rehydrates parameters (e.g. from a checkpoint), validating names,
    /// shapes and kinds against the architecture.
    pub fn from_set(config: ModelConfig, set: ParamSet<T>) -> Result<Self> {
        let template = Self::init(config, 0)?;
        if template.set.len() != set.len() {
            return Err(Error::arg(format!(
                "parameter count {} does not match architecture ({} expected)",
                set.len(),
                template.set.len()
            )));
        }
        for (have, want) in set.iter().zip(template.set.iter()) {
            if have.name != want.name
                || have.value.shape() != want.value.shape()
                || have.kind != want.kind
            {
                return Err(Error::arg(format!(
                    "parameter {} (shape {:?}) does not match architecture entry {} (shape {:?})",
                    have.name,
                    have.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        Ok(Self { config, set })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set(&self) -> &ParamSet<T> {
        &self.set
    }

    pub fn set_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.set
    }

    /// The clamped fusion scalar of a block.
    pub fn effective_alpha(&self, block: usize) -> T {
        let raw = self.set.get(&format!("g.block{block}.alpha")).unwrap().item();
        raw.max(T::zero()).min(T::one())
    }

    /// Registers every parameter on a tape and assembles typed handles.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> (GeneratorVars, BoundParams) {
        let bound = self.set.bind(tape, requires_grad);
        let vars = self.vars_from_bound(&bound);
        (vars, bound)
    }

    /// Assembles typed handles from already-registered leaf ids (one per
    /// parameter, in set order).
    pub fn vars_from_bound(&self, bound: &BoundParams) -> GeneratorVars {
        let conv = |name: String| ConvVars {
            kernel: bound.id_of(&self.set, &format!("{name}.kernel")),
            bias: bound.id_of(&self.set, &format!("{name}.bias")),
        };
        let ecc = |name: String| EccVars {
            w1: bound.id_of(&self.set, &format!("{name}.w1")),
            b1: bound.id_of(&self.set, &format!("{name}.b1")),
            w2: bound.id_of(&self.set, &format!("{name}.w2")),
            b2: bound.id_of(&self.set, &format!("{name}.b2")),
            bias: bound.id_of(&self.set, &format!("{name}.bias")),
            mode: self.config.graph.theta,
        };
        let blocks = (0..self.config.blocks)
            .map(|b| BlockVars {
                embed: (0..if b == 0 { 2 } else { 1 })
                    .map(|j| conv(format!("g.block{b}.embed{j}")))
                    .collect(),
                local: conv(format!("g.block{b}.local")),
                plane: ecc(format!("g.block{b}.plane")),
                depth: ecc(format!("g.block{b}.depth")),
                alpha: bound.id_of(&self.set, &format!("g.block{b}.alpha")),
            })
            .collect();
        let tail = vec![conv("g.tail0".into()), conv("g.tail1".into())];
        GeneratorVars { blocks, tail }
    }

    /// Untracked forward pass on a single stack; the output is clamped to
    /// [0,1] when `clamp` is set (inference), left raw otherwise.
    pub fn denoise_patch(&self, raw: &Tensor<T>, clamp: bool) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let input = tape.constant(raw.clone());
        let (vars, _) = self.bind(&mut tape, false);
        let (out, _) = generator_forward(&mut tape, input, &vars, &self.config)?;
        let value = tape.value(out).clone();
        Ok(if clamp {
            value.map(|v| v.max(T::zero()).min(T::one()))
        } else {
            value
        })
    }
}

/// Embedding layer of one block. The first block maps the raw
/// `[D, H, W]` stack through two 3-D convolutions; later blocks map the
/// `[D, C, H, W]` feature stack through one. Output is `[D, C, H, W]`.
pub fn embed_block<T: Scalar>(
    tape: &mut Tape<T>,
    input: TensorId,
    block: &BlockVars,
    config: &ModelConfig,
    first: bool,
) -> Result<TensorId> {
    let slope = T::from_f64_lit(0.2);
    let shape = tape.shape(input).to_vec();
    let mut x = if first {
        if shape.len() != 3 || shape[0] != config.slices() {
            return Err(Error::shape(format!(
                "embedding expects a [{}, H, W] raw stack, got {shape:?}",
                config.slices()
            )));
        }
        tape.reshape(input, &[1, shape[0], shape[1], shape[2]])?
    } else {
        if shape.len() != 4 || shape[0] != config.slices() {
            return Err(Error::shape(format!(
                "embedding expects a [{}, C, H, W] feature stack, got {shape:?}",
                config.slices()
            )));
        }
        tape.swap01(input)?
    };
    for conv in &block.embed {
        x = tape.conv3d(x, conv.kernel, Some(conv.bias), Padding::Reflect)?;
        x = tape.leaky_relu(x, slope)?;
    }
    tape.swap01(x)
}

/// Local branch: one 3x3 reflect-padded convolution on the center slice.
pub fn local_branch<T: Scalar>(
    tape: &mut Tape<T>,
    center: TensorId,
    local: &ConvVars,
) -> Result<TensorId> {
    tape.conv2d(center, local.kernel, Some(local.bias), Padding::Reflect)
}

/// One block: embed, run the three branches on the center slice, fuse,
/// and replace the center entry of the feature stack. Returns the new
/// stack and the plane edge set that was used.
pub fn block_forward<T: Scalar>(
    tape: &mut Tape<T>,
    stack: TensorId,
    vars: &BlockVars,
    config: &ModelConfig,
    first: bool,
    frozen_edges: Option<&EdgeSet<T>>,
) -> Result<(TensorId, EdgeSet<T>)> {
    let embedded = embed_block(tape, stack, vars, config, first)?;
    let center_idx = config.center_slice();
    let center = tape.slice_entry(embedded, center_idx)?;
    let (non_local, edges) = match frozen_edges {
        Some(e) => (plane_gcn_with_edges(tape, center, e, &vars.plane)?, e.clone()),
        None => plane_gcn(tape, center, &config.graph, &vars.plane)?,
    };
    let local = local_branch(tape, center, &vars.local)?;
    let context = depth_gcn(tape, embedded, &vars.depth)?;
    let fused = tape.fuse(non_local, local, context, vars.alpha)?;
    let out = tape.replace_entry(embedded, fused, center_idx)?;
    Ok((out, edges))
}

fn generator_impl<T: Scalar>(
    tape: &mut Tape<T>,
    raw: TensorId,
    vars: &GeneratorVars,
    config: &ModelConfig,
    frozen: Option<&[EdgeSet<T>]>,
) -> Result<(TensorId, Vec<EdgeSet<T>>)> {
    config.validate()?;
    if let Some(f) = frozen {
        if f.len() != config.blocks {
            return Err(Error::arg(format!(
                "frozen edge sets cover {} blocks, model has {}",
                f.len(),
                config.blocks
            )));
        }
    }
    let mut stack = raw;
    let mut edge_sets = Vec::with_capacity(config.blocks);
    for (b, block) in vars.blocks.iter().enumerate() {
        let (next, edges) =
            block_forward(tape, stack, block, config, b == 0, frozen.map(|f| &f[b]))?;
        stack = next;
        edge_sets.push(edges);
    }
    // tail: channel encoder-decoder, then the center depth slice
    let mut x = tape.swap01(stack)?; // [C, D, H, W]
    x = tape.conv3d(x, vars.tail[0].kernel, Some(vars.tail[0].bias), Padding::Reflect)?;
    x = tape.relu(x);
    x = tape.conv3d(x, vars.tail[1].kernel, Some(vars.tail[1].bias), Padding::Reflect)?;
    let x = tape.swap01(x)?; // [D, 1, H, W]
    let center = tape.slice_entry(x, config.center_slice())?; // [1, H, W]
    let s = tape.shape(center).to_vec();
    let out = tape.reshape(center, &[s[1], s[2]])?;
    Ok((out, edge_sets))
}

/// Full generator pass: blocks, tail, center-slice extraction.
/// `[D, H, W] -> [H, W]`, unclamped (the loss sees raw values).
pub fn generator_forward<T: Scalar>(
    tape: &mut Tape<T>,
    raw: TensorId,
    vars: &GeneratorVars,
    config: &ModelConfig,
) -> Result<(TensorId, Vec<EdgeSet<T>>)> {
    generator_impl(tape, raw, vars, config, None)
}

/// Generator pass over fixed plane-graph topologies, one edge set per
/// block. Used by the finite-difference audits, where the discrete
/// neighbor selection must not flip between probes.
pub fn generator_forward_frozen<T: Scalar>(
    tape: &mut Tape<T>,
    raw: TensorId,
    vars: &GeneratorVars,
    config: &ModelConfig,
    edges: &[EdgeSet<T>],
) -> Result<TensorId> {
    generator_impl(tape, raw, vars, config, Some(edges)).map(|(id, _)| id)
}

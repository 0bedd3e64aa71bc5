//! Fixed-weight perceptual feature extractor.
//!
//! A seeded three-layer convolutional network (channels 1 -> 8 -> 16 ->
//! 16, average pooling between layers) whose weights never train. It
//! stands in for a pretrained backbone: the perceptual objective only
//! needs some fixed feature map that is differentiable with respect to
//! the image.

use crate::autodiff::{Padding, Tape, TensorId};
use crate::error::{Error, Result};
use crate::rng::{derive, normal_tensor, seeded};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const CHANNELS: [usize; 3] = [8, 16, 16];

#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    seed: u64,
    kernels: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeded(derive(seed, 0x66, 0));
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        let mut c_in = 1;
        for &c_out in &CHANNELS {
            let std = (2.0 / (c_in * 9) as f64).sqrt();
            kernels.push(normal_tensor(&mut rng, &[c_out, c_in, 3, 3], 0.0, std));
            biases.push(normal_tensor(&mut rng, &[c_out], 0.0, 0.05));
            c_in = c_out;
        }
        Self {
            seed,
            kernels,
            biases,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Feature map of a `[1, H, W]` image, as a tape value. The
    /// extractor's weights enter as constants, so gradients flow into
    /// the image only.
    pub fn features(&self, tape: &mut Tape<T>, image: TensorId) -> Result<TensorId> {
        let shape = tape.shape(image);
        if shape.len() != 3 || shape[0] != 1 {
            return Err(Error::shape(format!(
                "feature extractor expects [1, H, W], got {shape:?}"
            )));
        }
        // two poolings shrink extents by 4x; the last 3x3 reflect conv
        // still needs 3 pixels
        if shape[1] < 12 || shape[2] < 12 {
            return Err(Error::shape(format!(
                "feature extractor needs at least 12x12 input, got {shape:?}"
            )));
        }
        let mut h = image;
        for (i, (k, b)) in self.kernels.iter().zip(&self.biases).enumerate() {
            let kid = tape.constant(k.clone());
            let bid = tape.constant(b.clone());
            h = tape.conv2d(h, kid, Some(bid), Padding::Reflect)?;
            h = tape.relu(h);
            if i + 1 < self.kernels.len() {
                h = tape.avg_pool2(h)?;
            }
        }
        Ok(h)
    }

    /// Untracked feature map of an image value.
    pub fn features_value(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let id = tape.constant(image.clone());
        let out = self.features(&mut tape, id)?;
        Ok(tape.value(out).clone())
    }
}

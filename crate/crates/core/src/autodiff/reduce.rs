//! Scalar reductions.

use super::{accumulate, Op, Tape, TensorId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s = self.value(a).data().iter().copied().fold(T::zero(), |x, y| x + y);
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = T::from_f64_lit(self.value(a).numel() as f64);
        let s = self.value(a).data().iter().copied().fold(T::zero(), |x, y| x + y);
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s / n), Op::Mean(a), tracked)
    }

    /// Euclidean norm of all elements, as a one-element tensor.
    ///
    /// The value is exact (no epsilon); at the origin the backward rule
    /// picks the zero subgradient.
    pub fn l2_norm(&mut self, a: TensorId) -> TensorId {
        let s = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x * x)
            .fold(T::zero(), |x, y| x + y);
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s.sqrt()), Op::L2Norm(a), tracked)
    }

    pub(super) fn backward_reduce(&self, node: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let gi = g[0];
        match &self.nodes[node].op {
            Op::Sum(a) => {
                if self.tracked(*a) {
                    let n = self.value(*a).numel();
                    accumulate(&mut grads[a.0], n, |buf| {
                        for o in buf.iter_mut() {
                            *o = *o + gi;
                        }
                    });
                }
            }
            Op::Mean(a) => {
                if self.tracked(*a) {
                    let n = self.value(*a).numel();
                    let scale = gi / T::from_f64_lit(n as f64);
                    accumulate(&mut grads[a.0], n, |buf| {
                        for o in buf.iter_mut() {
                            *o = *o + scale;
                        }
                    });
                }
            }
            Op::L2Norm(a) => {
                if self.tracked(*a) {
                    let norm = self.nodes[node].value.item();
                    if norm > T::zero() {
                        let xv = self.value(*a).data();
                        let scale = gi / norm;
                        accumulate(&mut grads[a.0], xv.len(), |buf| {
                            for (o, &x) in buf.iter_mut().zip(xv) {
                                *o = *o + x * scale;
                            }
                        });
                    }
                }
            }
            _ => unreachable!("not a reduce op"),
        }
    }
}

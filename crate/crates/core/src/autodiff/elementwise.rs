//! Elementwise operations and the fusion combinator.

use super::{accumulate, Activation, Op, Tape, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    fn binary_same_shape(&self, a: TensorId, b: TensorId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: operand shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "add")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(data, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(data, Op::Sub(a, b), tracked))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(data, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: TensorId, c: T) -> TensorId {
        let data = self.value(a).map(|x| x * c);
        let tracked = self.tracked(a);
        self.push(data, Op::Scale(a, c), tracked)
    }

    pub fn add_scalar(&mut self, a: TensorId, c: T) -> TensorId {
        let data = self.value(a).map(|x| x + c);
        let tracked = self.tracked(a);
        self.push(data, Op::AddScalar(a, c), tracked)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data = self.value(a).map(|x| x.max(T::zero()));
        let tracked = self.tracked(a);
        self.push(data, Op::Relu(a), tracked)
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: T) -> Result<TensorId> {
        if slope < T::zero() || slope >= T::one() {
            return Err(Error::arg(format!("leaky_relu slope {slope} not in [0,1)")));
        }
        let data = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        let tracked = self.tracked(a);
        Ok(self.push(data, Op::LeakyRelu(a, slope), tracked))
    }

    /// Elementwise activation; shape preserved.
    pub fn activate(&mut self, a: TensorId, kind: Activation<T>) -> Result<TensorId> {
        match kind {
            Activation::Relu => Ok(self.relu(a)),
            Activation::LeakyRelu(slope) => self.leaky_relu(a, slope),
        }
    }

    /// Learnable convex blend of the inner-slice branches with the context
    /// branch: `alpha * (non_local + local) / 2 + (1 - alpha) * context`.
    /// `alpha` is a one-element tensor.
    pub fn fuse(
        &mut self,
        non_local: TensorId,
        local: TensorId,
        context: TensorId,
        alpha: TensorId,
    ) -> Result<TensorId> {
        self.binary_same_shape(non_local, local, "fuse")?;
        self.binary_same_shape(non_local, context, "fuse")?;
        if self.value(alpha).numel() != 1 {
            return Err(Error::shape(format!(
                "fuse: alpha must be one element, got shape {:?}",
                self.shape(alpha)
            )));
        }
        let a = self.value(alpha).item();
        let half = T::from_f64_lit(0.5);
        let nl = self.value(non_local).data();
        let lo = self.value(local).data();
        let cx = self.value(context).data();
        let out: Vec<T> = nl
            .iter()
            .zip(lo)
            .zip(cx)
            .map(|((&n, &l), &c)| a * (n + l) * half + (T::one() - a) * c)
            .collect();
        let value = Tensor::from_vec(self.shape(non_local), out).unwrap();
        let tracked = self.any_tracked(&[non_local, local, context, alpha]);
        Ok(self.push(
            value,
            Op::Fuse {
                non_local,
                local,
                context,
                alpha,
            },
            tracked,
        ))
    }

    /// Forward `2x` with a deliberately wrong backward rule (`3g`).
    /// Exists only as a negative control for the gradient-check harness.
    #[doc(hidden)]
    pub fn bugged_scale(&mut self, a: TensorId) -> TensorId {
        let two = T::from_f64_lit(2.0);
        let data = self.value(a).map(|x| x * two);
        let tracked = self.tracked(a);
        self.push(data, Op::BuggedScale(a), tracked)
    }

    pub(super) fn backward_elementwise(&self, node: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[node].op {
            Op::Add(a, b) => {
                for (&id, sign) in [(a, T::one()), (b, T::one())].iter().map(|(i, s)| (*i, *s)) {
                    if self.tracked(id) {
                        accumulate(&mut grads[id.0], g.len(), |buf| {
                            for (o, &gi) in buf.iter_mut().zip(g) {
                                *o = *o + gi * sign;
                            }
                        });
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.tracked(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for (o, &gi) in buf.iter_mut().zip(g) {
                            *o = *o + gi;
                        }
                    });
                }
                if self.tracked(*b) {
                    accumulate(&mut grads[b.0], g.len(), |buf| {
                        for (o, &gi) in buf.iter_mut().zip(g) {
                            *o = *o - gi;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.tracked(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for ((o, &gi), &bi) in buf.iter_mut().zip(g).zip(bv) {
                            *o = *o + gi * bi;
                        }
                    });
                }
                if self.tracked(*b) {
                    accumulate(&mut grads[b.0], g.len(), |buf| {
                        for ((o, &gi), &ai) in buf.iter_mut().zip(g).zip(av) {
                            *o = *o + gi * ai;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                if self.tracked(*a) {
                    let c = *c;
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for (o, &gi) in buf.iter_mut().zip(g) {
                            *o = *o + gi * c;
                        }
                    });
                }
            }
            Op::AddScalar(a, _) => {
                if self.tracked(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for (o, &gi) in buf.iter_mut().zip(g) {
                            *o = *o + gi;
                        }
                    });
                }
            }
            Op::Relu(a) => {
                if self.tracked(*a) {
                    let xv = self.value(*a).data();
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for ((o, &gi), &x) in buf.iter_mut().zip(g).zip(xv) {
                            if x > T::zero() {
                                *o = *o + gi;
                            }
                        }
                    });
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.tracked(*a) {
                    let xv = self.value(*a).data();
                    let slope = *slope;
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for ((o, &gi), &x) in buf.iter_mut().zip(g).zip(xv) {
                            *o = *o + if x > T::zero() { gi } else { gi * slope };
                        }
                    });
                }
            }
            Op::Fuse {
                non_local,
                local,
                context,
                alpha,
            } => {
                let a = self.value(*alpha).item();
                let half = T::from_f64_lit(0.5);
                let nl = self.value(*non_local).data();
                let lo = self.value(*local).data();
                let cx = self.value(*context).data();
                for &branch in [non_local, local].iter() {
                    if self.tracked(*branch) {
                        accumulate(&mut grads[branch.0], g.len(), |buf| {
                            for (o, &gi) in buf.iter_mut().zip(g) {
                                *o = *o + gi * a * half;
                            }
                        });
                    }
                }
                if self.tracked(*context) {
                    accumulate(&mut grads[context.0], g.len(), |buf| {
                        for (o, &gi) in buf.iter_mut().zip(g) {
                            *o = *o + gi * (T::one() - a);
                        }
                    });
                }
                if self.tracked(*alpha) {
                    let mut da = T::zero();
                    for (((&gi, &n), &l), &c) in g.iter().zip(nl).zip(lo).zip(cx) {
                        da = da + gi * ((n + l) * half - c);
                    }
                    accumulate(&mut grads[alpha.0], 1, |buf| {
                        buf[0] = buf[0] + da;
                    });
                }
            }
            Op::BuggedScale(a) => {
                if self.tracked(*a) {
                    let three = T::from_f64_lit(3.0);
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for (o, &gi) in buf.iter_mut().zip(g) {
                            *o = *o + gi * three;
                        }
                    });
                }
            }
            _ => unreachable!("not an elementwise op"),
        }
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = tape.activate(x, Activation::Relu).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let l = tape.activate(x, Activation::LeakyRelu(0.2)).unwrap();
        assert_eq!(tape.value(l).data(), &[-0.2, 0.0, 2.0]);
    }

    #[test]
    fn leaky_slope_outside_unit_interval_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(1.0));
        assert!(tape.leaky_relu(x, 1.0).is_err());
        assert!(tape.leaky_relu(x, -0.1).is_err());
    }
}

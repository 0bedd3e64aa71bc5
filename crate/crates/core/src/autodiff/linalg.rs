//! Dense 2-D linear algebra.

use super::{accumulate, Op, Tape, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!(
                "matmul: incompatible shapes {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::from_vec(&[m, n], out).unwrap();
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    /// `[n,m] + [m]`, the bias broadcast of a linear layer.
    pub fn add_row_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::shape(format!(
                "add_row_bias: rows {sx:?} incompatible with bias {sb:?}"
            )));
        }
        let (n, m) = (sx[0], sx[1]);
        let xv = self.value(x).data();
        let bv = self.value(bias).data();
        let mut out = Vec::with_capacity(n * m);
        for r in 0..n {
            for c in 0..m {
                out.push(xv[r * m + c] + bv[c]);
            }
        }
        let value = Tensor::from_vec(&[n, m], out).unwrap();
        let tracked = self.any_tracked(&[x, bias]);
        Ok(self.push(value, Op::AddRowBias(x, bias), tracked))
    }

    pub(super) fn backward_linalg(&self, node: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[node].op {
            Op::MatMul(a, b) => {
                let sa = self.shape(*a);
                let (m, k) = (sa[0], sa[1]);
                let n = self.shape(*b)[1];
                if self.tracked(*a) {
                    // dA = g . B^T
                    let bv = self.value(*b).data();
                    accumulate(&mut grads[a.0], m * k, |buf| {
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                for p in 0..k {
                                    buf[i * k + p] = buf[i * k + p] + gij * bv[p * n + j];
                                }
                            }
                        }
                    });
                }
                if self.tracked(*b) {
                    // dB = A^T . g
                    let av = self.value(*a).data();
                    accumulate(&mut grads[b.0], k * n, |buf| {
                        for i in 0..m {
                            for p in 0..k {
                                let aip = av[i * k + p];
                                for j in 0..n {
                                    buf[p * n + j] = buf[p * n + j] + aip * g[i * n + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::AddRowBias(x, bias) => {
                let sx = self.shape(*x);
                let (n, m) = (sx[0], sx[1]);
                if self.tracked(*x) {
                    accumulate(&mut grads[x.0], n * m, |buf| {
                        for (o, &gi) in buf.iter_mut().zip(g) {
                            *o = *o + gi;
                        }
                    });
                }
                if self.tracked(*bias) {
                    accumulate(&mut grads[bias.0], m, |buf| {
                        for r in 0..n {
                            for c in 0..m {
                                buf[c] = buf[c] + g[r * m + c];
                            }
                        }
                    });
                }
            }
            _ => unreachable!("not a linalg op"),
        }
    }
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            for j in 0..n {
                out[i * n + j] = out[i * n + j] + aip * b[p * n + j];
            }
        }
    }
    out
}

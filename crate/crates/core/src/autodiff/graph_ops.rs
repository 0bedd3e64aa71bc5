//! Tape operations backing graph construction and edge-conditioned
//! aggregation: neighbor gathers, pairwise feature distances, per-segment
//! softmax weights and per-edge linear maps.
//!
//! Edge lists are flat with CSR [`Segments`]; segment `n` holds the edges
//! of center `n`. Ragged segments cover clipped windows near borders.

use std::sync::Arc;

use super::{accumulate, Op, Segments, Tape, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Gathers rows of `source` (`[P, C]`) at `indices`, giving `[E, C]`.
    pub fn gather_rows(&mut self, source: TensorId, indices: Arc<Vec<usize>>) -> Result<TensorId> {
        let s = self.shape(source);
        if s.len() != 2 {
            return Err(Error::shape(format!("gather_rows source must be [P,C], got {s:?}")));
        }
        let (p, c) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= p) {
            return Err(Error::arg(format!("gather_rows: index {bad} out of range for {p} rows")));
        }
        let src = self.value(source).data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices.iter() {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::from_vec(&[indices.len(), c], out).unwrap();
        let tracked = self.tracked(source);
        Ok(self.push(value, Op::GatherRows { source, indices }, tracked))
    }

    /// Squared Euclidean distance between each edge's center and neighbor
    /// feature vectors, divided by the square root of the channel count:
    /// for edge `e` of center `n`, `||centers[n] - neighbors[e]||^2 / sqrt(C)`.
    pub fn pair_distance(
        &mut self,
        centers: TensorId,
        neighbors: TensorId,
        segments: Arc<Segments>,
    ) -> Result<TensorId> {
        let (sc, sn) = (self.shape(centers), self.shape(neighbors));
        if sc.len() != 2 || sn.len() != 2 || sc[1] != sn[1] {
            return Err(Error::shape(format!(
                "pair_distance: centers {sc:?} and neighbors {sn:?} disagree on channels"
            )));
        }
        if segments.count() != sc[0] || segments.total() != sn[0] {
            return Err(Error::shape(format!(
                "pair_distance: segments ({} centers, {} edges) do not match tensors ({}, {})",
                segments.count(),
                segments.total(),
                sc[0],
                sn[0]
            )));
        }
        let c = sc[1];
        let inv_sqrt_c = T::one() / T::from_f64_lit((c as f64).sqrt());
        let cv = self.value(centers).data();
        let nv = self.value(neighbors).data();
        let mut out = vec![T::zero(); segments.total()];
        for n in 0..segments.count() {
            let center = &cv[n * c..(n + 1) * c];
            for e in segments.range(n) {
                let neigh = &nv[e * c..(e + 1) * c];
                let mut acc = T::zero();
                for (&a, &b) in center.iter().zip(neigh) {
                    let d = a - b;
                    acc = acc + d * d;
                }
                out[e] = acc * inv_sqrt_c;
            }
        }
        let value = Tensor::from_vec(&[segments.total()], out).unwrap();
        let tracked = self.any_tracked(&[centers, neighbors]);
        Ok(self.push(
            value,
            Op::PairDistance {
                centers,
                neighbors,
                segments,
            },
            tracked,
        ))
    }

    /// Per-segment softmax of negated distances, computed with
    /// max-subtraction. Each segment's weights sum to one.
    pub fn segment_softmax_neg(
        &mut self,
        distances: TensorId,
        segments: Arc<Segments>,
    ) -> Result<TensorId> {
        let s = self.shape(distances);
        if s.len() != 1 || s[0] != segments.total() {
            return Err(Error::shape(format!(
                "segment_softmax_neg: distances {s:?} do not match {} edges",
                segments.total()
            )));
        }
        let ev = self.value(distances).data();
        let mut out = vec![T::zero(); ev.len()];
        for n in 0..segments.count() {
            let r = segments.range(n);
            if r.is_empty() {
                continue;
            }
            // max of (-e) is -min(e)
            let min_e = ev[r.clone()].iter().copied().fold(T::infinity(), T::min);
            let mut denom = T::zero();
            for e in r.clone() {
                let w = (min_e - ev[e]).exp();
                out[e] = w;
                denom = denom + w;
            }
            for e in r {
                out[e] = out[e] / denom;
            }
        }
        let value = Tensor::from_vec(&[ev.len()], out).unwrap();
        let tracked = self.tracked(distances);
        Ok(self.push(
            value,
            Op::SegmentSoftmaxNeg {
                distances,
                segments,
            },
            tracked,
        ))
    }

    /// Mean of the edge rows within each segment: `[E, C] -> [N, C]`.
    /// Empty segments produce zero rows.
    pub fn segment_mean(&mut self, values: TensorId, segments: Arc<Segments>) -> Result<TensorId> {
        let s = self.shape(values);
        if s.len() != 2 || s[0] != segments.total() {
            return Err(Error::shape(format!(
                "segment_mean: values {s:?} do not match {} edges",
                segments.total()
            )));
        }
        let c = s[1];
        let vv = self.value(values).data();
        let mut out = vec![T::zero(); segments.count() * c];
        for n in 0..segments.count() {
            let r = segments.range(n);
            if r.is_empty() {
                continue;
            }
            let inv = T::one() / T::from_f64_lit(r.len() as f64);
            for e in r {
                for ch in 0..c {
                    out[n * c + ch] = out[n * c + ch] + vv[e * c + ch] * inv;
                }
            }
        }
        let value = Tensor::from_vec(&[segments.count(), c], out).unwrap();
        let tracked = self.tracked(values);
        Ok(self.push(value, Op::SegmentMean { values, segments }, tracked))
    }

    /// Per-edge matrix-vector product: `[E, R*C] x [E, C] -> [E, R]`,
    /// reading each matrix row-major.
    pub fn edge_matvec(&mut self, matrices: TensorId, vectors: TensorId) -> Result<TensorId> {
        let (sm, sv) = (self.shape(matrices), self.shape(vectors));
        if sm.len() != 2 || sv.len() != 2 || sm[0] != sv[0] {
            return Err(Error::shape(format!(
                "edge_matvec: matrices {sm:?} and vectors {sv:?} disagree on edge count"
            )));
        }
        let (e_count, c) = (sv[0], sv[1]);
        if c == 0 || sm[1] % c != 0 {
            return Err(Error::shape(format!(
                "edge_matvec: matrix width {} is not a multiple of vector length {c}",
                sm[1]
            )));
        }
        let r = sm[1] / c;
        let mv = self.value(matrices).data();
        let vv = self.value(vectors).data();
        let mut out = vec![T::zero(); e_count * r];
        for e in 0..e_count {
            for row in 0..r {
                let mut acc = T::zero();
                for ch in 0..c {
                    acc = acc + mv[e * r * c + row * c + ch] * vv[e * c + ch];
                }
                out[e * r + row] = acc;
            }
        }
        let value = Tensor::from_vec(&[e_count, r], out).unwrap();
        let tracked = self.any_tracked(&[matrices, vectors]);
        Ok(self.push(value, Op::EdgeMatVec { matrices, vectors }, tracked))
    }

    pub(super) fn backward_graph(&self, node: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[node].op {
            Op::GatherRows { source, indices } => {
                if self.tracked(*source) {
                    let c = self.shape(*source)[1];
                    let n = self.value(*source).numel();
                    accumulate(&mut grads[source.0], n, |buf| {
                        for (e, &i) in indices.iter().enumerate() {
                            for ch in 0..c {
                                buf[i * c + ch] = buf[i * c + ch] + g[e * c + ch];
                            }
                        }
                    });
                }
            }
            Op::PairDistance {
                centers,
                neighbors,
                segments,
            } => {
                let c = self.shape(*centers)[1];
                let coef = T::from_f64_lit(2.0) / T::from_f64_lit((c as f64).sqrt());
                let cv = self.value(*centers).data();
                let nv = self.value(*neighbors).data();
                let track_c = self.tracked(*centers);
                let track_n = self.tracked(*neighbors);
                let mut dc = vec![T::zero(); cv.len()];
                let mut dn = vec![T::zero(); nv.len()];
                for n in 0..segments.count() {
                    for e in segments.range(n) {
                        let gv = g[e] * coef;
                        for ch in 0..c {
                            let d = (cv[n * c + ch] - nv[e * c + ch]) * gv;
                            if track_c {
                                dc[n * c + ch] = dc[n * c + ch] + d;
                            }
                            if track_n {
                                dn[e * c + ch] = dn[e * c + ch] - d;
                            }
                        }
                    }
                }
                if track_c {
                    accumulate(&mut grads[centers.0], dc.len(), |buf| {
                        for (o, d) in buf.iter_mut().zip(dc) {
                            *o = *o + d;
                        }
                    });
                }
                if track_n {
                    accumulate(&mut grads[neighbors.0], dn.len(), |buf| {
                        for (o, d) in buf.iter_mut().zip(dn) {
                            *o = *o + d;
                        }
                    });
                }
            }
            Op::SegmentSoftmaxNeg { distances, segments } => {
                if self.tracked(*distances) {
                    let av = self.nodes[node].value.data();
                    accumulate(&mut grads[distances.0], av.len(), |buf| {
                        for n in 0..segments.count() {
                            let r = segments.range(n);
                            let mut dot = T::zero();
                            for e in r.clone() {
                                dot = dot + g[e] * av[e];
                            }
                            // d a / d e = -a_j (g_j - <g, a>)
                            for e in r {
                                buf[e] = buf[e] - av[e] * (g[e] - dot);
                            }
                        }
                    });
                }
            }
            Op::SegmentMean { values, segments } => {
                if self.tracked(*values) {
                    let c = self.shape(*values)[1];
                    let n_total = self.value(*values).numel();
                    accumulate(&mut grads[values.0], n_total, |buf| {
                        for n in 0..segments.count() {
                            let r = segments.range(n);
                            if r.is_empty() {
                                continue;
                            }
                            let inv = T::one() / T::from_f64_lit(r.len() as f64);
                            for e in r {
                                for ch in 0..c {
                                    buf[e * c + ch] = buf[e * c + ch] + g[n * c + ch] * inv;
                                }
                            }
                        }
                    });
                }
            }
            Op::EdgeMatVec { matrices, vectors } => {
                let sv = self.shape(*vectors);
                let (e_count, c) = (sv[0], sv[1]);
                let r = self.shape(*matrices)[1] / c;
                let mv = self.value(*matrices).data();
                let vv = self.value(*vectors).data();
                if self.tracked(*matrices) {
                    accumulate(&mut grads[matrices.0], mv.len(), |buf| {
                        for e in 0..e_count {
                            for row in 0..r {
                                let gv = g[e * r + row];
                                for ch in 0..c {
                                    let idx = e * r * c + row * c + ch;
                                    buf[idx] = buf[idx] + gv * vv[e * c + ch];
                                }
                            }
                        }
                    });
                }
                if self.tracked(*vectors) {
                    accumulate(&mut grads[vectors.0], vv.len(), |buf| {
                        for e in 0..e_count {
                            for row in 0..r {
                                let gv = g[e * r + row];
                                for ch in 0..c {
                                    buf[e * c + ch] = buf[e * c + ch] + gv * mv[e * r * c + row * c + ch];
                                }
                            }
                        }
                    });
                }
            }
            _ => unreachable!("not a graph op"),
        }
    }
}

//! Layout and slicing operations. All of these move data without
//! arithmetic, so their backward rules are pure index maps.

use super::{accumulate, Op, Tape, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        let value = self.value(a).reshaped(shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Reshape(a), tracked))
    }

    /// Swaps the first two axes: `[d0, d1, ..] -> [d1, d0, ..]`.
    pub fn swap01(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.shape(a);
        if s.len() < 2 {
            return Err(Error::shape(format!("swap01 needs rank >= 2, got {s:?}")));
        }
        let (d0, d1) = (s[0], s[1]);
        let block: usize = s[2..].iter().product();
        let mut out_shape = s.to_vec();
        out_shape.swap(0, 1);
        let xv = self.value(a).data();
        let mut out = vec![T::zero(); xv.len()];
        for i in 0..d0 {
            for j in 0..d1 {
                let src = (i * d1 + j) * block;
                let dst = (j * d0 + i) * block;
                out[dst..dst + block].copy_from_slice(&xv[src..src + block]);
            }
        }
        let value = Tensor::from_vec(&out_shape, out).unwrap();
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Swap01(a), tracked))
    }

    /// `[C,H,W] -> [H*W, C]`: one feature vector per pixel.
    pub fn pixels_to_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.shape(a);
        if s.len() != 3 {
            return Err(Error::shape(format!("pixels_to_rows expects [C,H,W], got {s:?}")));
        }
        let (c, hw) = (s[0], s[1] * s[2]);
        let xv = self.value(a).data();
        let mut out = vec![T::zero(); xv.len()];
        for ch in 0..c {
            for p in 0..hw {
                out[p * c + ch] = xv[ch * hw + p];
            }
        }
        let value = Tensor::from_vec(&[hw, c], out).unwrap();
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::PixelsToRows(a), tracked))
    }

    /// `[H*W, C] -> [C,H,W]`, the inverse layout of [`Tape::pixels_to_rows`].
    pub fn rows_to_pixels(&mut self, a: TensorId, h: usize, w: usize) -> Result<TensorId> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != h * w {
            return Err(Error::shape(format!(
                "rows_to_pixels: {s:?} does not match {h}x{w} pixels"
            )));
        }
        let (hw, c) = (s[0], s[1]);
        let xv = self.value(a).data();
        let mut out = vec![T::zero(); xv.len()];
        for p in 0..hw {
            for ch in 0..c {
                out[ch * hw + p] = xv[p * c + ch];
            }
        }
        let value = Tensor::from_vec(&[c, h, w], out).unwrap();
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::RowsToPixels(a), tracked))
    }

    /// Concatenates row matrices `[n_i, C]` along the first axis.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::arg("concat_rows: empty input list"));
        }
        let c = self.shape(parts[0]).get(1).copied().unwrap_or(0);
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != c {
                return Err(Error::shape(format!(
                    "concat_rows: part shape {s:?} incompatible with column count {c}"
                )));
            }
            rows += s[0];
        }
        let mut out = Vec::with_capacity(rows * c);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_vec(&[rows, c], out).unwrap();
        let tracked = self.any_tracked(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), tracked))
    }

    /// Extracts entry `index` along the first axis: `[D, ..] -> [..]`.
    pub fn slice_entry(&mut self, stack: TensorId, index: usize) -> Result<TensorId> {
        let s = self.shape(stack);
        if s.len() < 2 || index >= s[0] {
            return Err(Error::shape(format!(
                "slice_entry: index {index} out of range for shape {s:?}"
            )));
        }
        let block: usize = s[1..].iter().product();
        let value = Tensor::from_vec(
            &s[1..],
            self.value(stack).data()[index * block..(index + 1) * block].to_vec(),
        )
        .unwrap();
        let tracked = self.tracked(stack);
        Ok(self.push(value, Op::SliceEntry { stack, index }, tracked))
    }

    /// Returns the stack with entry `index` replaced by `slice`. All other
    /// entries are copied bit-identically.
    pub fn replace_entry(
        &mut self,
        stack: TensorId,
        slice: TensorId,
        index: usize,
    ) -> Result<TensorId> {
        let s = self.shape(stack).to_vec();
        if s.len() < 2 || index >= s[0] {
            return Err(Error::shape(format!(
                "replace_entry: index {index} out of range for shape {s:?}"
            )));
        }
        if self.shape(slice) != &s[1..] {
            return Err(Error::shape(format!(
                "replace_entry: slice shape {:?} does not match stack entry shape {:?}",
                self.shape(slice),
                &s[1..]
            )));
        }
        let block: usize = s[1..].iter().product();
        let mut out = self.value(stack).to_vec();
        out[index * block..(index + 1) * block].copy_from_slice(self.value(slice).data());
        let value = Tensor::from_vec(&s, out).unwrap();
        let tracked = self.any_tracked(&[stack, slice]);
        Ok(self.push(value, Op::ReplaceEntry { stack, slice, index }, tracked))
    }

    pub(super) fn backward_shape(&self, node: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[node].op {
            Op::Reshape(a) => {
                if self.tracked(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for (o, &gi) in buf.iter_mut().zip(g) {
                            *o = *o + gi;
                        }
                    });
                }
            }
            Op::Swap01(a) => {
                if self.tracked(*a) {
                    let s = self.shape(*a);
                    let (d0, d1) = (s[0], s[1]);
                    let block: usize = s[2..].iter().product();
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for i in 0..d0 {
                            for j in 0..d1 {
                                let src = (j * d0 + i) * block;
                                let dst = (i * d1 + j) * block;
                                for k in 0..block {
                                    buf[dst + k] = buf[dst + k] + g[src + k];
                                }
                            }
                        }
                    });
                }
            }
            Op::PixelsToRows(a) => {
                if self.tracked(*a) {
                    let s = self.shape(*a);
                    let (c, hw) = (s[0], s[1] * s[2]);
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for ch in 0..c {
                            for p in 0..hw {
                                buf[ch * hw + p] = buf[ch * hw + p] + g[p * c + ch];
                            }
                        }
                    });
                }
            }
            Op::RowsToPixels(a) => {
                if self.tracked(*a) {
                    let s = self.shape(*a);
                    let (hw, c) = (s[0], s[1]);
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for p in 0..hw {
                            for ch in 0..c {
                                buf[p * c + ch] = buf[p * c + ch] + g[ch * hw + p];
                            }
                        }
                    });
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.tracked(p) {
                        let gs = &g[offset..offset + n];
                        accumulate(&mut grads[p.0], n, |buf| {
                            for (o, &gi) in buf.iter_mut().zip(gs) {
                                *o = *o + gi;
                            }
                        });
                    }
                    offset += n;
                }
            }
            Op::SliceEntry { stack, index } => {
                if self.tracked(*stack) {
                    let n = self.value(*stack).numel();
                    let block = g.len();
                    let start = index * block;
                    accumulate(&mut grads[stack.0], n, |buf| {
                        for (o, &gi) in buf[start..start + block].iter_mut().zip(g) {
                            *o = *o + gi;
                        }
                    });
                }
            }
            Op::ReplaceEntry { stack, slice, index } => {
                let block = self.value(*slice).numel();
                let start = index * block;
                if self.tracked(*stack) {
                    accumulate(&mut grads[stack.0], g.len(), |buf| {
                        for (i, (o, &gi)) in buf.iter_mut().zip(g).enumerate() {
                            if i < start || i >= start + block {
                                *o = *o + gi;
                            }
                        }
                    });
                }
                if self.tracked(*slice) {
                    accumulate(&mut grads[slice.0], block, |buf| {
                        for (o, &gi) in buf.iter_mut().zip(&g[start..start + block]) {
                            *o = *o + gi;
                        }
                    });
                }
            }
            _ => unreachable!("not a shape op"),
        }
    }
}

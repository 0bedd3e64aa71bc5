//! 2-D and 3-D convolutions with reflect/zero/none padding.
//!
//! The input-adjoint is exposed as a first-class differentiable operation
//! ([`Tape::conv2d_input_grad`]) so that a critic's input gradient can be
//! written as an ordinary forward program and differentiated again, which
//! is what the gradient-penalty objective requires.

use super::{accumulate, Op, Padding, Tape, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Resolved 2-D convolution geometry.
#[derive(Clone, Copy, Debug)]
struct Geom2 {
    c_in: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    ph: isize,
    pw: isize,
    sh: usize,
    sw: usize,
    padding: Padding,
}

/// Mirror-without-repeat index fold; requires `|i| <= n-1` overshoot.
#[inline]
fn reflect_idx(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * n - 2 - i as usize
    } else {
        i as usize
    }
}

/// Maps a virtual (padded) coordinate to a source coordinate.
/// `None` means the tap reads a zero (zero padding) or is skipped.
#[inline]
fn map_coord(i: isize, n: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Reflect => Some(reflect_idx(i, n)),
        Padding::Zero | Padding::None => {
            if i >= 0 && (i as usize) < n {
                Some(i as usize)
            } else {
                None
            }
        }
    }
}

fn out_extent(n: usize, k: usize, pad: usize, stride: usize) -> Result<usize> {
    if n + 2 * pad < k {
        return Err(Error::shape(format!(
            "extent {n} too small for kernel {k} with padding {pad}"
        )));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

fn resolve_geom2(
    input_shape: &[usize],
    kernel_shape: &[usize],
    padding: Padding,
    stride: (usize, usize),
) -> Result<Geom2> {
    if input_shape.len() != 3 {
        return Err(Error::shape(format!(
            "conv2d input must be [C,H,W], got {input_shape:?}"
        )));
    }
    if kernel_shape.len() != 4 {
        return Err(Error::shape(format!(
            "conv2d kernel must be [C_out,C_in,kh,kw], got {kernel_shape:?}"
        )));
    }
    let (c_in, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (c_out, kc, kh, kw) = (
        kernel_shape[0],
        kernel_shape[1],
        kernel_shape[2],
        kernel_shape[3],
    );
    if kc != c_in {
        return Err(Error::shape(format!(
            "conv2d: kernel expects {kc} input channels but input has {c_in}"
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::arg(format!("conv2d kernel extents must be odd, got {kh}x{kw}")));
    }
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::arg("conv2d stride must be >= 1"));
    }
    let (ph, pw) = match padding {
        Padding::None => (0, 0),
        Padding::Zero | Padding::Reflect => ((kh - 1) / 2, (kw - 1) / 2),
    };
    if padding == Padding::Reflect && (h < kh || w < kw) {
        return Err(Error::shape(format!(
            "reflect padding needs H >= kh and W >= kw, got {h}x{w} vs {kh}x{kw}"
        )));
    }
    let oh = out_extent(h, kh, ph, stride.0)?;
    let ow = out_extent(w, kw, pw, stride.1)?;
    Ok(Geom2 {
        c_in,
        c_out,
        kh,
        kw,
        h,
        w,
        oh,
        ow,
        ph: ph as isize,
        pw: pw as isize,
        sh: stride.0,
        sw: stride.1,
        padding,
    })
}

fn conv2d_raw<T: Scalar>(x: &[T], k: &[T], bias: Option<&[T]>, g: Geom2) -> Vec<T> {
    let mut out = vec![T::zero(); g.c_out * g.oh * g.ow];
    for o in 0..g.c_out {
        let b = bias.map_or(T::zero(), |b| b[o]);
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut acc = b;
                for i in 0..g.c_in {
                    for ky in 0..g.kh {
                        let iy = match map_coord((oy * g.sh + ky) as isize - g.ph, g.h, g.padding) {
                            Some(v) => v,
                            None => continue,
                        };
                        for kx in 0..g.kw {
                            let ix =
                                match map_coord((ox * g.sw + kx) as isize - g.pw, g.w, g.padding) {
                                    Some(v) => v,
                                    None => continue,
                                };
                            acc = acc
                                + k[((o * g.c_in + i) * g.kh + ky) * g.kw + kx]
                                    * x[(i * g.h + iy) * g.w + ix];
                        }
                    }
                }
                out[(o * g.oh + oy) * g.ow + ox] = acc;
            }
        }
    }
    out
}

/// Adjoint of [`conv2d_raw`] with respect to the input.
fn conv2d_input_grad_raw<T: Scalar>(gy: &[T], k: &[T], g: Geom2) -> Vec<T> {
    let mut out = vec![T::zero(); g.c_in * g.h * g.w];
    for o in 0..g.c_out {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let gv = gy[(o * g.oh + oy) * g.ow + ox];
                for i in 0..g.c_in {
                    for ky in 0..g.kh {
                        let iy = match map_coord((oy * g.sh + ky) as isize - g.ph, g.h, g.padding) {
                            Some(v) => v,
                            None => continue,
                        };
                        for kx in 0..g.kw {
                            let ix =
                                match map_coord((ox * g.sw + kx) as isize - g.pw, g.w, g.padding) {
                                    Some(v) => v,
                                    None => continue,
                                };
                            let idx = (i * g.h + iy) * g.w + ix;
                            out[idx] =
                                out[idx] + gv * k[((o * g.c_in + i) * g.kh + ky) * g.kw + kx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv2d_raw`] with respect to the kernel.
fn conv2d_kernel_grad_raw<T: Scalar>(gy: &[T], x: &[T], g: Geom2) -> Vec<T> {
    let mut out = vec![T::zero(); g.c_out * g.c_in * g.kh * g.kw];
    for o in 0..g.c_out {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let gv = gy[(o * g.oh + oy) * g.ow + ox];
                for i in 0..g.c_in {
                    for ky in 0..g.kh {
                        let iy = match map_coord((oy * g.sh + ky) as isize - g.ph, g.h, g.padding) {
                            Some(v) => v,
                            None => continue,
                        };
                        for kx in 0..g.kw {
                            let ix =
                                match map_coord((ox * g.sw + kx) as isize - g.pw, g.w, g.padding) {
                                    Some(v) => v,
                                    None => continue,
                                };
                            let idx = ((o * g.c_in + i) * g.kh + ky) * g.kw + kx;
                            out[idx] = out[idx] + gv * x[(i * g.h + iy) * g.w + ix];
                        }
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// 3-D, stride fixed at 1.

#[derive(Clone, Copy, Debug)]
struct Geom3 {
    c_in: usize,
    c_out: usize,
    kd: usize,
    kh: usize,
    kw: usize,
    d: usize,
    h: usize,
    w: usize,
    od: usize,
    oh: usize,
    ow: usize,
    pd: isize,
    ph: isize,
    pw: isize,
    padding: Padding,
}

fn resolve_geom3(input_shape: &[usize], kernel_shape: &[usize], padding: Padding) -> Result<Geom3> {
    if input_shape.len() != 4 {
        return Err(Error::shape(format!(
            "conv3d input must be [C,D,H,W], got {input_shape:?}"
        )));
    }
    if kernel_shape.len() != 5 {
        return Err(Error::shape(format!(
            "conv3d kernel must be [C_out,C_in,kd,kh,kw], got {kernel_shape:?}"
        )));
    }
    let (c_in, d, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (c_out, kc, kd, kh, kw) = (
        kernel_shape[0],
        kernel_shape[1],
        kernel_shape[2],
        kernel_shape[3],
        kernel_shape[4],
    );
    if kc != c_in {
        return Err(Error::shape(format!(
            "conv3d: kernel expects {kc} input channels but input has {c_in}"
        )));
    }
    if kd % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::arg(format!(
            "conv3d kernel extents must be odd, got {kd}x{kh}x{kw}"
        )));
    }
    let (pd, ph, pw) = match padding {
        Padding::None => (0, 0, 0),
        Padding::Zero | Padding::Reflect => ((kd - 1) / 2, (kh - 1) / 2, (kw - 1) / 2),
    };
    if padding == Padding::Reflect && (d < kd || h < kh || w < kw) {
        return Err(Error::shape(format!(
            "reflect padding needs extents >= kernel, got {d}x{h}x{w} vs {kd}x{kh}x{kw}"
        )));
    }
    let od = out_extent(d, kd, pd, 1)?;
    let oh = out_extent(h, kh, ph, 1)?;
    let ow = out_extent(w, kw, pw, 1)?;
    Ok(Geom3 {
        c_in,
        c_out,
        kd,
        kh,
        kw,
        d,
        h,
        w,
        od,
        oh,
        ow,
        pd: pd as isize,
        ph: ph as isize,
        pw: pw as isize,
        padding,
    })
}

/// Shared loop for the forward pass and both adjoints: `visit` receives
/// (output flat index, kernel flat index, input flat index).
#[inline]
fn for_each_tap3(g: Geom3, mut visit: impl FnMut(usize, usize, usize)) {
    for o in 0..g.c_out {
        for od in 0..g.od {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let oidx = ((o * g.od + od) * g.oh + oy) * g.ow + ox;
                    for i in 0..g.c_in {
                        for kd in 0..g.kd {
                            let id = match map_coord((od + kd) as isize - g.pd, g.d, g.padding) {
                                Some(v) => v,
                                None => continue,
                            };
                            for ky in 0..g.kh {
                                let iy = match map_coord((oy + ky) as isize - g.ph, g.h, g.padding)
                                {
                                    Some(v) => v,
                                    None => continue,
                                };
                                for kx in 0..g.kw {
                                    let ix = match map_coord(
                                        (ox + kx) as isize - g.pw,
                                        g.w,
                                        g.padding,
                                    ) {
                                        Some(v) => v,
                                        None => continue,
                                    };
                                    let kidx = (((o * g.c_in + i) * g.kd + kd) * g.kh + ky) * g.kw
                                        + kx;
                                    let iidx = ((i * g.d + id) * g.h + iy) * g.w + ix;
                                    visit(oidx, kidx, iidx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// 2-D convolution, stride 1. Reflect/zero padding preserves `H,W`.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        padding: Padding,
    ) -> Result<TensorId> {
        self.conv2d_strided(input, kernel, bias, padding, (1, 1))
    }

    /// 2-D convolution with a stride; used by the downsampling critic.
    pub fn conv2d_strided(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        padding: Padding,
        stride: (usize, usize),
    ) -> Result<TensorId> {
        let g = resolve_geom2(self.shape(input), self.shape(kernel), padding, stride)?;
        if let Some(b) = bias {
            if self.shape(b) != [g.c_out] {
                return Err(Error::shape(format!(
                    "conv2d bias shape {:?} does not match {} output channels",
                    self.shape(b),
                    g.c_out
                )));
            }
        }
        let out = conv2d_raw(
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data().to_vec()).as_deref(),
            g,
        );
        let value = Tensor::from_vec(&[g.c_out, g.oh, g.ow], out).unwrap();
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        let tracked = self.any_tracked(&inputs);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
                stride,
            },
            tracked,
        ))
    }

    /// The gradient of a stride-`stride` conv2d output with respect to its
    /// input, as a differentiable forward operation. `input_hw` names the
    /// spatial extents of the original input.
    pub fn conv2d_input_grad(
        &mut self,
        grad_out: TensorId,
        kernel: TensorId,
        padding: Padding,
        stride: (usize, usize),
        input_hw: (usize, usize),
    ) -> Result<TensorId> {
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d_input_grad kernel must be [C_out,C_in,kh,kw], got {ks:?}"
            )));
        }
        let input_shape = [ks[1], input_hw.0, input_hw.1];
        let g = resolve_geom2(&input_shape, &ks, padding, stride)?;
        let gys = self.shape(grad_out);
        if gys != [g.c_out, g.oh, g.ow] {
            return Err(Error::shape(format!(
                "conv2d_input_grad: grad shape {gys:?} does not match conv output [{},{},{}]",
                g.c_out, g.oh, g.ow
            )));
        }
        let out = conv2d_input_grad_raw(self.value(grad_out).data(), self.value(kernel).data(), g);
        let value = Tensor::from_vec(&input_shape, out).unwrap();
        let tracked = self.any_tracked(&[grad_out, kernel]);
        Ok(self.push(
            value,
            Op::Conv2dInputGrad {
                grad_out,
                kernel,
                padding,
                stride,
            },
            tracked,
        ))
    }

    /// 3-D convolution, stride 1. Reflect padding preserves `D,H,W`.
    pub fn conv3d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        padding: Padding,
    ) -> Result<TensorId> {
        let g = resolve_geom3(self.shape(input), self.shape(kernel), padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [g.c_out] {
                return Err(Error::shape(format!(
                    "conv3d bias shape {:?} does not match {} output channels",
                    self.shape(b),
                    g.c_out
                )));
            }
        }
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let mut out = vec![T::zero(); g.c_out * g.od * g.oh * g.ow];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            let plane = g.od * g.oh * g.ow;
            for (o, chunk) in out.chunks_mut(plane).enumerate() {
                chunk.fill(bv[o]);
            }
        }
        for_each_tap3(g, |oidx, kidx, iidx| {
            out[oidx] = out[oidx] + k[kidx] * x[iidx];
        });
        let value = Tensor::from_vec(&[g.c_out, g.od, g.oh, g.ow], out).unwrap();
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        let tracked = self.any_tracked(&inputs);
        Ok(self.push(
            value,
            Op::Conv3d {
                input,
                kernel,
                bias,
                padding,
            },
            tracked,
        ))
    }

    /// 2x2 average pooling with stride 2; odd trailing rows/columns are
    /// dropped.
    pub fn avg_pool2(&mut self, input: TensorId) -> Result<TensorId> {
        let s = self.shape(input);
        if s.len() != 3 || s[1] < 2 || s[2] < 2 {
            return Err(Error::shape(format!(
                "avg_pool2 expects [C,H>=2,W>=2], got {s:?}"
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let quarter = T::from_f64_lit(0.25);
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (ch * h + 2 * oy) * w + 2 * ox;
                    out[(ch * oh + oy) * ow + ox] =
                        (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]) * quarter;
                }
            }
        }
        let value = Tensor::from_vec(&[c, oh, ow], out).unwrap();
        let tracked = self.tracked(input);
        Ok(self.push(value, Op::AvgPool2(input), tracked))
    }

    pub(super) fn backward_conv(&self, node: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[node].op {
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
                stride,
            } => {
                let geom =
                    resolve_geom2(self.shape(*input), self.shape(*kernel), *padding, *stride)
                        .expect("geometry was validated at forward time");
                if self.tracked(*input) {
                    let dx = conv2d_input_grad_raw(g, self.value(*kernel).data(), geom);
                    accumulate(&mut grads[input.0], dx.len(), |buf| {
                        for (o, d) in buf.iter_mut().zip(dx) {
                            *o = *o + d;
                        }
                    });
                }
                if self.tracked(*kernel) {
                    let dk = conv2d_kernel_grad_raw(g, self.value(*input).data(), geom);
                    accumulate(&mut grads[kernel.0], dk.len(), |buf| {
                        for (o, d) in buf.iter_mut().zip(dk) {
                            *o = *o + d;
                        }
                    });
                }
                if let Some(b) = bias {
                    if self.tracked(*b) {
                        let plane = geom.oh * geom.ow;
                        accumulate(&mut grads[b.0], geom.c_out, |buf| {
                            for o in 0..geom.c_out {
                                for v in &g[o * plane..(o + 1) * plane] {
                                    buf[o] = buf[o] + *v;
                                }
                            }
                        });
                    }
                }
            }
            Op::Conv2dInputGrad {
                grad_out,
                kernel,
                padding,
                stride,
            } => {
                // This op's value has the conv input's shape; `g` is
                // therefore input-shaped, and both adjoints reuse the
                // conv family (the map is bilinear).
                let in_shape = self.nodes[node].value.shape().to_vec();
                let geom = resolve_geom2(&in_shape, self.shape(*kernel), *padding, *stride)
                    .expect("geometry was validated at forward time");
                if self.tracked(*grad_out) {
                    let dgy = conv2d_raw(g, self.value(*kernel).data(), None, geom);
                    accumulate(&mut grads[grad_out.0], dgy.len(), |buf| {
                        for (o, d) in buf.iter_mut().zip(dgy) {
                            *o = *o + d;
                        }
                    });
                }
                if self.tracked(*kernel) {
                    let dk = conv2d_kernel_grad_raw(self.value(*grad_out).data(), g, geom);
                    accumulate(&mut grads[kernel.0], dk.len(), |buf| {
                        for (o, d) in buf.iter_mut().zip(dk) {
                            *o = *o + d;
                        }
                    });
                }
            }
            Op::Conv3d {
                input,
                kernel,
                bias,
                padding,
            } => {
                let geom = resolve_geom3(self.shape(*input), self.shape(*kernel), *padding)
                    .expect("geometry was validated at forward time");
                let track_in = self.tracked(*input);
                let track_k = self.tracked(*kernel);
                if track_in || track_k {
                    let x = self.value(*input).data();
                    let k = self.value(*kernel).data();
                    let mut dx = vec![T::zero(); x.len()];
                    let mut dk = vec![T::zero(); k.len()];
                    for_each_tap3(geom, |oidx, kidx, iidx| {
                        let gv = g[oidx];
                        if track_in {
                            dx[iidx] = dx[iidx] + gv * k[kidx];
                        }
                        if track_k {
                            dk[kidx] = dk[kidx] + gv * x[iidx];
                        }
                    });
                    if track_in {
                        accumulate(&mut grads[input.0], dx.len(), |buf| {
                            for (o, d) in buf.iter_mut().zip(dx) {
                                *o = *o + d;
                            }
                        });
                    }
                    if track_k {
                        accumulate(&mut grads[kernel.0], dk.len(), |buf| {
                            for (o, d) in buf.iter_mut().zip(dk) {
                                *o = *o + d;
                            }
                        });
                    }
                }
                if let Some(b) = bias {
                    if self.tracked(*b) {
                        let plane = geom.od * geom.oh * geom.ow;
                        accumulate(&mut grads[b.0], geom.c_out, |buf| {
                            for o in 0..geom.c_out {
                                for v in &g[o * plane..(o + 1) * plane] {
                                    buf[o] = buf[o] + *v;
                                }
                            }
                        });
                    }
                }
            }
            Op::AvgPool2(input) => {
                if self.tracked(*input) {
                    let s = self.shape(*input);
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let (oh, ow) = (h / 2, w / 2);
                    let quarter = T::from_f64_lit(0.25);
                    accumulate(&mut grads[input.0], c * h * w, |buf| {
                        for ch in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = g[(ch * oh + oy) * ow + ox] * quarter;
                                    let base = (ch * h + 2 * oy) * w + 2 * ox;
                                    buf[base] = buf[base] + gv;
                                    buf[base + 1] = buf[base + 1] + gv;
                                    buf[base + w] = buf[base + w] + gv;
                                    buf[base + w + 1] = buf[base + w + 1] + gv;
                                }
                            }
                        }
                    });
                }
            }
            _ => unreachable!("not a conv op"),
        }
    }
}

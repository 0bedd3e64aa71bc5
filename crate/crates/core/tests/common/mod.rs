//! Independent naive references. Everything here is written as direct
//! loops against the mathematical definitions, deliberately not sharing
//! code with the implementation it checks.

#![allow(dead_code)]

use ridnet_core::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    None,
    Zero,
    Reflect,
}

fn fold(i: isize, n: usize) -> Option<usize> {
    if i < 0 {
        Some((-i) as usize)
    } else if (i as usize) < n {
        Some(i as usize)
    } else {
        Some(2 * n - 2 - i as usize)
    }
}

fn coord(i: isize, n: usize, pad: Pad) -> Option<usize> {
    match pad {
        Pad::Reflect => fold(i, n),
        Pad::Zero | Pad::None => {
            if i >= 0 && (i as usize) < n {
                Some(i as usize)
            } else {
                None
            }
        }
    }
}

/// Six-nested-loop 2-D convolution reference.
pub fn naive_conv2d(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    bias: &[f64],
    pad: Pad,
    stride: (usize, usize),
) -> Tensor<f64> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (ph, pw) = match pad {
        Pad::None => (0isize, 0isize),
        _ => ((kh / 2) as isize, (kw / 2) as isize),
    };
    let oh = (h + 2 * ph as usize - kh) / stride.0 + 1;
    let ow = (w + 2 * pw as usize - kw) / stride.1 + 1;
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for i in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride.0 + ky) as isize - ph;
                            let ix = (ox * stride.1 + kx) as isize - pw;
                            if let (Some(sy), Some(sx)) = (coord(iy, h, pad), coord(ix, w, pad)) {
                                acc += k.at(&[o, i, ky, kx]) * x.at(&[i, sy, sx]);
                            }
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::from_vec(&[c_out, oh, ow], out).unwrap()
}

/// Nested-loop 3-D convolution reference (stride 1).
pub fn naive_conv3d(x: &Tensor<f64>, k: &Tensor<f64>, bias: &[f64], pad: Pad) -> Tensor<f64> {
    let (c_in, d, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, kd, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3], k.shape()[4]);
    let (pd, ph, pw) = match pad {
        Pad::None => (0isize, 0isize, 0isize),
        _ => ((kd / 2) as isize, (kh / 2) as isize, (kw / 2) as isize),
    };
    let od = d + 2 * pd as usize - kd + 1;
    let oh = h + 2 * ph as usize - kh + 1;
    let ow = w + 2 * pw as usize - kw + 1;
    let mut out = vec![0.0; c_out * od * oh * ow];
    for o in 0..c_out {
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[o];
                    for i in 0..c_in {
                        for kz in 0..kd {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iz = (oz + kz) as isize - pd;
                                    let iy = (oy + ky) as isize - ph;
                                    let ix = (ox + kx) as isize - pw;
                                    if let (Some(sz), Some(sy), Some(sx)) =
                                        (coord(iz, d, pad), coord(iy, h, pad), coord(ix, w, pad))
                                    {
                                        acc += k.at(&[o, i, kz, ky, kx]) * x.at(&[i, sz, sy, sx]);
                                    }
                                }
                            }
                        }
                    }
                    out[((o * od + oz) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[c_out, od, oh, ow], out).unwrap()
}

/// Feature vector of pixel `(r, c)` in a `[C, H, W]` map.
pub fn pixel_vec(map: &Tensor<f64>, r: usize, c: usize) -> Vec<f64> {
    (0..map.shape()[0]).map(|ch| map.at(&[ch, r, c])).collect()
}

/// Squared Euclidean distance over sqrt(dim), straight from the formula.
pub fn naive_distance(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    ss / (a.len() as f64).sqrt()
}

/// Exhaustive candidate enumeration + full sort KNN reference: the d x d
/// window clipped at borders, minus the 3 x 3 block around the center,
/// sorted by (distance, flat index), first k-1 kept.
pub fn exhaustive_knn(
    map: &Tensor<f64>,
    center: (usize, usize),
    d: usize,
    k: usize,
) -> Vec<usize> {
    let (h, w) = (map.shape()[1], map.shape()[2]);
    let cv = pixel_vec(map, center.0, center.1);
    let half = (d / 2) as isize;
    let mut scored = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let dr = r as isize - center.0 as isize;
            let dc = c as isize - center.1 as isize;
            if dr.abs() <= 1 && dc.abs() <= 1 {
                continue;
            }
            if dr.abs() > half || dc.abs() > half {
                continue;
            }
            scored.push((naive_distance(&cv, &pixel_vec(map, r, c)), r * w + c));
        }
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(k - 1);
    scored.into_iter().map(|(_, p)| p).collect()
}

/// Stable softmax of negated distances.
pub fn naive_weights(distances: &[f64]) -> Vec<f64> {
    let m = distances.iter().cloned().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = distances.iter().map(|d| (m - d).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|e| e / s).collect()
}

/// Two-layer edge network, direct loops: `F(a) = W2 lrelu(W1 a + b1) + b2`.
pub fn naive_edge_network(
    a: f64,
    w1: &Tensor<f64>,
    b1: &Tensor<f64>,
    w2: &Tensor<f64>,
    b2: &Tensor<f64>,
) -> Vec<f64> {
    let hidden_n = b1.numel();
    let out_n = b2.numel();
    let mut hidden = vec![0.0; hidden_n];
    for j in 0..hidden_n {
        let z = a * w1.at(&[0, j]) + b1.data()[j];
        hidden[j] = if z > 0.0 { z } else { 0.2 * z };
    }
    let mut out = vec![0.0; out_n];
    for (o, out_o) in out.iter_mut().enumerate() {
        let mut acc = b2.data()[o];
        for (j, hj) in hidden.iter().enumerate() {
            acc += hj * w2.at(&[j, o]);
        }
        *out_o = acc;
    }
    out
}

pub struct NaiveEcc<'a> {
    pub w1: &'a Tensor<f64>,
    pub b1: &'a Tensor<f64>,
    pub w2: &'a Tensor<f64>,
    pub b2: &'a Tensor<f64>,
    pub bias: &'a Tensor<f64>,
    pub full: bool,
}

/// Per-edge map + mean aggregation: for each neighbor, theta = F(a_ij)
/// applied to the neighbor vector; the mean over neighbors plus the bias.
pub fn naive_aggregate(
    center_vec: &[f64],
    neighbor_vecs: &[Vec<f64>],
    ecc: &NaiveEcc<'_>,
) -> Vec<f64> {
    let c = center_vec.len();
    let mut out = vec![0.0; c];
    if neighbor_vecs.is_empty() {
        for (o, b) in out.iter_mut().zip(ecc.bias.data()) {
            *o = *b;
        }
        return out;
    }
    let distances: Vec<f64> = neighbor_vecs
        .iter()
        .map(|v| naive_distance(center_vec, v))
        .collect();
    let weights = naive_weights(&distances);
    for (v, &a) in neighbor_vecs.iter().zip(&weights) {
        let theta = naive_edge_network(a, ecc.w1, ecc.b1, ecc.w2, ecc.b2);
        if ecc.full {
            for r in 0..c {
                let mut acc = 0.0;
                for (col, &vc) in v.iter().enumerate() {
                    acc += theta[r * c + col] * vc;
                }
                out[r] += acc;
            }
        } else {
            for r in 0..c {
                out[r] += theta[r] * v[r];
            }
        }
    }
    let inv = 1.0 / neighbor_vecs.len() as f64;
    for (o, b) in out.iter_mut().zip(ecc.bias.data()) {
        *o = *o * inv + *b;
    }
    out
}

/// Monolithic plane-branch reference: per pixel, candidates, sort,
/// softmax, edge network, aggregate. No shortcuts shared with the
/// implementation.
pub fn monolithic_plane_gcn(
    map: &Tensor<f64>,
    d: usize,
    k: usize,
    ecc: &NaiveEcc<'_>,
) -> Tensor<f64> {
    let (ch, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    let mut out = vec![0.0; ch * h * w];
    for r in 0..h {
        for c in 0..w {
            let center_vec = pixel_vec(map, r, c);
            let neighbors = exhaustive_knn(map, (r, c), d, k);
            let neighbor_vecs: Vec<Vec<f64>> = neighbors
                .iter()
                .map(|&p| pixel_vec(map, p / w, p % w))
                .collect();
            let s = naive_aggregate(&center_vec, &neighbor_vecs, ecc);
            for (chan, &v) in s.iter().enumerate() {
                out[chan * h * w + r * w + c] = v;
            }
        }
    }
    Tensor::from_vec(&[ch, h, w], out).unwrap()
}

/// Per-pixel depth-branch reference: the center slice aggregates the
/// co-located vectors of the other slices.
pub fn naive_depth_gcn(stack: &Tensor<f64>, ecc: &NaiveEcc<'_>) -> Tensor<f64> {
    let (m, ch, h, w) = (
        stack.shape()[0],
        stack.shape()[1],
        stack.shape()[2],
        stack.shape()[3],
    );
    let center = m / 2;
    let mut out = vec![0.0; ch * h * w];
    for r in 0..h {
        for c in 0..w {
            let center_vec: Vec<f64> = (0..ch).map(|q| stack.at(&[center, q, r, c])).collect();
            let neighbor_vecs: Vec<Vec<f64>> = (0..m)
                .filter(|&s| s != center)
                .map(|s| (0..ch).map(|q| stack.at(&[s, q, r, c])).collect())
                .collect();
            let sv = naive_aggregate(&center_vec, &neighbor_vecs, ecc);
            for (chan, &v) in sv.iter().enumerate() {
                out[chan * h * w + r * w + c] = v;
            }
        }
    }
    Tensor::from_vec(&[ch, h, w], out).unwrap()
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max)
}

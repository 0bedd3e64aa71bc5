//! Per-pixel similarity graphs and probability-conditioned edge
//! aggregation.
//!
//! The plane graph connects each pixel of a feature map to its most
//! similar candidates inside a `d x d` non-local window (the center and
//! its 8 directly adjacent pixels are excluded from the candidate pool).
//! The depth graph connects each pixel to the co-located pixels of the
//! other slices of a stack. Both aggregate neighbor features through a
//! small edge network conditioned on the softmax edge weight.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Segments, Tape, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Slope of the edge network's hidden activation.
pub const ECC_HIDDEN_SLOPE: f64 = 0.2;

/// How the edge network output is interpreted as a per-edge linear map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    /// Full `C x C` matrix per edge.
    Full,
    /// Diagonal: a `C`-vector applied elementwise.
    Diagonal,
}

impl ThetaMode {
    pub fn output_dim(self, channels: usize) -> usize {
        match self {
            ThetaMode::Full => channels * channels,
            ThetaMode::Diagonal => channels,
        }
    }
}

/// Graph hyperparameters.
///
/// `k` counts vertices, so each pixel selects `k - 1` neighbors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Odd non-local search window extent in pixels.
    pub d: usize,
    /// Vertex count of the plane graph; `k - 1` neighbors are selected.
    pub k: usize,
    /// Vertex count of the depth graph (slice count of the stack).
    pub m: usize,
    pub theta: ThetaMode,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            d: 9,
            k: 8,
            m: 3,
            theta: ThetaMode::Full,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d.is_multiple_of(2) || self.d < 5 {
            return Err(Error::arg(format!("graph window d={} must be odd and >= 5", self.d)));
        }
        if self.k < 2 {
            return Err(Error::arg(format!("graph k={} must be >= 2", self.k)));
        }
        if self.k - 1 > self.d * self.d - 9 {
            return Err(Error::arg(format!(
                "graph k={} exceeds the candidate pool d*d-9={}",
                self.k,
                self.d * self.d - 9
            )));
        }
        if self.m < 2 {
            return Err(Error::arg(format!("graph m={} must be >= 2", self.m)));
        }
        Ok(())
    }
}

/// Per-pixel neighbor lists with their distances and softmax weights,
/// stored flat with CSR segments (segment `i` = edges of center pixel `i`).
#[derive(Clone, Debug)]
pub struct EdgeSet<T> {
    pub segments: Arc<Segments>,
    /// Flat neighbor indices into the row matrix the graph was built on.
    pub indices: Arc<Vec<usize>>,
    pub distances: Vec<T>,
    pub weights: Vec<T>,
    /// Number of centers that received fewer neighbors than requested
    /// because the clipped window had too few candidates.
    pub deficit_centers: usize,
}

/// Borrowed view of one center's edges.
pub struct EdgeEntry<'a, T> {
    pub indices: &'a [usize],
    pub distances: &'a [T],
    pub weights: &'a [T],
}

impl<T: Scalar> EdgeSet<T> {
    pub fn center_count(&self) -> usize {
        self.segments.count()
    }

    pub fn entry(&self, center: usize) -> EdgeEntry<'_, T> {
        let r = self.segments.range(center);
        EdgeEntry {
            indices: &self.indices[r.clone()],
            distances: &self.distances[r.clone()],
            weights: &self.weights[r],
        }
    }
}

/// Squared Euclidean distance between two feature vectors divided by the
/// square root of their dimension.
pub fn feature_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "feature_distance: vector lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::arg("feature_distance: empty vectors"));
    }
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc = acc + d * d;
    }
    Ok(acc / T::from_f64_lit((a.len() as f64).sqrt()))
}

/// Softmax of negated distances, computed with max-subtraction. The
/// result sums to one.
pub fn edge_weights<T: Scalar>(distances: &[T]) -> Result<Vec<T>> {
    if distances.is_empty() {
        return Err(Error::arg("edge_weights: empty distance list"));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < T::zero()) {
        return Err(Error::arg("edge_weights: distances must be finite and >= 0"));
    }
    let min = distances.iter().copied().fold(T::infinity(), T::min);
    let mut weights: Vec<T> = distances.iter().map(|&d| (min - d).exp()).collect();
    let denom = weights.iter().copied().fold(T::zero(), |a, b| a + b);
    for w in &mut weights {
        *w = *w / denom;
    }
    Ok(weights)
}

/// Candidate pixels for `center` under `config`: the d x d window clipped
/// at the borders, minus the center and its 8 directly adjacent pixels.
/// Flat indices in row-major order.
fn window_candidates(h: usize, w: usize, center: (usize, usize), d: usize) -> Vec<usize> {
    let half = (d / 2) as isize;
    let (cr, cc) = (center.0 as isize, center.1 as isize);
    let mut out = Vec::new();
    for r in (cr - half).max(0)..=(cr + half).min(h as isize - 1) {
        for c in (cc - half).max(0)..=(cc + half).min(w as isize - 1) {
            if (r - cr).abs() <= 1 && (c - cc).abs() <= 1 {
                continue;
            }
            out.push(r as usize * w + c as usize);
        }
    }
    out
}

/// The `k - 1` candidates with smallest feature distance to the center;
/// ties broken by smaller flat index. Returns fewer when the clipped
/// window has fewer candidates.
pub fn knn_neighbors<T: Scalar>(
    map: &Tensor<T>,
    center: (usize, usize),
    config: &GraphConfig,
) -> Result<Vec<usize>> {
    config.validate()?;
    let s = map.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("knn_neighbors expects [C,H,W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if center.0 >= h || center.1 >= w {
        return Err(Error::arg(format!(
            "knn_neighbors: center {center:?} outside {h}x{w} map"
        )));
    }
    let data = map.data();
    let hw = h * w;
    let center_flat = center.0 * w + center.1;
    let vec_at = |p: usize| -> Vec<T> { (0..c).map(|ch| data[ch * hw + p]).collect() };
    let center_vec = vec_at(center_flat);
    let mut scored: Vec<(T, usize)> = window_candidates(h, w, center, config.d)
        .into_iter()
        .map(|p| {
            let d = feature_distance(&center_vec, &vec_at(p)).expect("equal lengths");
            (d, p)
        })
        .collect();
    scored.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(config.k - 1);
    Ok(scored.into_iter().map(|(_, p)| p).collect())
}

/// Builds the plane graph of a feature map: one neighbor list per pixel.
pub fn build_plane_edges<T: Scalar>(map: &Tensor<T>, config: &GraphConfig) -> Result<EdgeSet<T>> {
    config.validate()?;
    let s = map.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("build_plane_edges expects [C,H,W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let data = map.data();
    let hw = h * w;
    let vec_at = |p: usize| -> Vec<T> { (0..c).map(|ch| data[ch * hw + p]).collect() };

    let mut offsets = Vec::with_capacity(hw + 1);
    offsets.push(0usize);
    let mut indices = Vec::new();
    let mut distances = Vec::new();
    let mut deficit_centers = 0;
    for row in 0..h {
        for col in 0..w {
            let center_vec = vec_at(row * w + col);
            let mut scored: Vec<(T, usize)> = window_candidates(h, w, (row, col), config.d)
                .into_iter()
                .map(|p| {
                    let d = feature_distance(&center_vec, &vec_at(p)).expect("equal lengths");
                    (d, p)
                })
                .collect();
            scored.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            if scored.len() < config.k - 1 {
                deficit_centers += 1;
            }
            scored.truncate(config.k - 1);
            for (d, p) in scored {
                indices.push(p);
                distances.push(d);
            }
            offsets.push(indices.len());
        }
    }
    let segments = Arc::new(Segments::from_offsets(offsets)?);
    let weights = segment_weights(&distances, &segments)?;
    Ok(EdgeSet {
        segments,
        indices: Arc::new(indices),
        distances,
        weights,
        deficit_centers,
    })
}

/// Builds the depth graph of a stack `[M, C, H, W]`: for every pixel the
/// center slice connects to the co-located pixels of the other `M - 1`
/// slices. Neighbor indices address the `[M*H*W, C]` row matrix formed by
/// stacking the slices.
pub fn build_depth_edges<T: Scalar>(stack: &Tensor<T>) -> Result<EdgeSet<T>> {
    let s = stack.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("build_depth_edges expects [M,C,H,W], got {s:?}")));
    }
    let (m, c, h, w) = (s[0], s[1], s[2], s[3]);
    if m < 2 {
        return Err(Error::arg(format!("depth graph needs M >= 2 slices, got {m}")));
    }
    let center = m / 2;
    let hw = h * w;
    let data = stack.data();
    let vec_at = |slice: usize, p: usize| -> Vec<T> {
        (0..c).map(|ch| data[(slice * c + ch) * hw + p]).collect()
    };
    let (indices, segments) = depth_topology(m, center, hw);
    let mut distances = Vec::with_capacity(indices.len());
    for p in 0..hw {
        let center_vec = vec_at(center, p);
        for slice in 0..m {
            if slice == center {
                continue;
            }
            distances.push(feature_distance(&center_vec, &vec_at(slice, p))?);
        }
    }
    let weights = segment_weights(&distances, &segments)?;
    Ok(EdgeSet {
        segments,
        indices,
        distances,
        weights,
        deficit_centers: 0,
    })
}

/// Co-located depth topology: for each of `hw` pixels, the same pixel in
/// every non-center slice, slices in ascending order.
pub(crate) fn depth_topology(m: usize, center: usize, hw: usize) -> (Arc<Vec<usize>>, Arc<Segments>) {
    let mut indices = Vec::with_capacity(hw * (m - 1));
    for p in 0..hw {
        for slice in 0..m {
            if slice != center {
                indices.push(slice * hw + p);
            }
        }
    }
    (Arc::new(indices), Arc::new(Segments::uniform(hw, m - 1)))
}

fn segment_weights<T: Scalar>(distances: &[T], segments: &Segments) -> Result<Vec<T>> {
    let mut weights = vec![T::zero(); distances.len()];
    for n in 0..segments.count() {
        let r = segments.range(n);
        if r.is_empty() {
            continue;
        }
        let w = edge_weights(&distances[r.clone()])?;
        weights[r].copy_from_slice(&w);
    }
    Ok(weights)
}

// ---------------------------------------------------------------------------
// Edge network parameters and the differentiable aggregation program.

/// Parameters of the edge network `F` (a two-layer perceptron mapping a
/// scalar edge weight to a per-edge linear map) plus the aggregation bias.
#[derive(Clone, Debug)]
pub struct EccParams<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    /// Aggregation bias, one entry per feature channel.
    pub bias: Tensor<T>,
    pub mode: ThetaMode,
}

impl<T: Scalar> EccParams<T> {
    /// Seeded initialization. The edge network starts out producing the
    /// identity map for every edge (`b2` is an identity matrix / ones),
    /// so aggregation begins as a plain neighbor mean.
    pub fn init(rng: &mut rand_chacha::ChaCha8Rng, channels: usize, hidden: usize, mode: ThetaMode) -> Self {
        use crate::rng::normal_tensor;
        let out_dim = mode.output_dim(channels);
        let b2 = match mode {
            ThetaMode::Full => {
                let mut eye = vec![T::zero(); channels * channels];
                for i in 0..channels {
                    eye[i * channels + i] = T::one();
                }
                Tensor::from_vec(&[out_dim], eye).unwrap()
            }
            ThetaMode::Diagonal => Tensor::full(&[out_dim], T::one()),
        };
        Self {
            w1: normal_tensor(rng, &[1, hidden], 0.0, 0.5),
            b1: Tensor::zeros(&[hidden]),
            w2: normal_tensor(rng, &[hidden, out_dim], 0.0, 0.1 / (hidden as f64).sqrt()),
            b2,
            bias: Tensor::zeros(&[channels]),
            mode,
        }
    }

    pub fn channels(&self) -> usize {
        self.bias.numel()
    }

    pub fn hidden(&self) -> usize {
        self.b1.numel()
    }

    pub fn validate(&self) -> Result<()> {
        let hidden = self.hidden();
        let c = self.channels();
        let out_dim = self.mode.output_dim(c);
        if self.w1.shape() != [1, hidden]
            || self.w2.shape() != [hidden, out_dim]
            || self.b2.shape() != [out_dim]
        {
            return Err(Error::shape(format!(
                "edge network shapes inconsistent: w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}, bias {:?} ({:?})",
                self.w1.shape(),
                self.b1.shape(),
                self.w2.shape(),
                self.b2.shape(),
                self.bias.shape(),
                self.mode
            )));
        }
        Ok(())
    }
}

/// Tape handles of one [`EccParams`] set.
#[derive(Clone, Copy, Debug)]
pub struct EccVars {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
    pub bias: TensorId,
    pub mode: ThetaMode,
}

impl<T: Scalar> EccParams<T> {
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> EccVars {
        EccVars {
            w1: tape.leaf(self.w1.clone(), requires_grad),
            b1: tape.leaf(self.b1.clone(), requires_grad),
            w2: tape.leaf(self.w2.clone(), requires_grad),
            b2: tape.leaf(self.b2.clone(), requires_grad),
            bias: tape.leaf(self.bias.clone(), requires_grad),
            mode: self.mode,
        }
    }
}

/// Differentiable aggregation over a fixed topology.
///
/// `rows` is the `[P, C]` matrix neighbor indices address, `centers` the
/// `[N, C]` matrix of center vectors (segment `n` belongs to row `n`).
/// For each center: distances to its neighbors, softmax weights, the edge
/// network applied to each weight, the per-edge linear map applied to the
/// neighbor vector, the mean over edges, plus the bias. Gradients flow
/// through the weights into both center and neighbor features.
pub fn ecc_combine<T: Scalar>(
    tape: &mut Tape<T>,
    rows: TensorId,
    centers: TensorId,
    indices: Arc<Vec<usize>>,
    segments: Arc<Segments>,
    ecc: &EccVars,
) -> Result<TensorId> {
    let channels = tape.shape(rows)[1];
    if tape.shape(ecc.bias) != [channels] {
        return Err(Error::shape(format!(
            "ecc_combine: bias has {:?} entries but features have {channels} channels",
            tape.shape(ecc.bias)
        )));
    }
    let edge_count = indices.len();
    let neighbors = tape.gather_rows(rows, indices)?;
    let distances = tape.pair_distance(centers, neighbors, Arc::clone(&segments))?;
    let weights = tape.segment_softmax_neg(distances, Arc::clone(&segments))?;
    let weight_col = tape.reshape(weights, &[edge_count, 1])?;
    let hidden = tape.matmul(weight_col, ecc.w1)?;
    let hidden = tape.add_row_bias(hidden, ecc.b1)?;
    let hidden = tape.leaky_relu(hidden, T::from_f64_lit(ECC_HIDDEN_SLOPE))?;
    let theta = tape.matmul(hidden, ecc.w2)?;
    let theta = tape.add_row_bias(theta, ecc.b2)?;
    let mapped = match ecc.mode {
        ThetaMode::Full => tape.edge_matvec(theta, neighbors)?,
        ThetaMode::Diagonal => tape.mul(theta, neighbors)?,
    };
    let aggregated = tape.segment_mean(mapped, segments)?;
    tape.add_row_bias(aggregated, ecc.bias)
}

/// Aggregated feature vector of a single center pixel, as a value.
pub fn ecc_aggregate<T: Scalar>(
    center: usize,
    edges: &EdgeSet<T>,
    map: &Tensor<T>,
    params: &EccParams<T>,
) -> Result<Tensor<T>> {
    params.validate()?;
    let s = map.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("ecc_aggregate expects [C,H,W], got {s:?}")));
    }
    if s[0] != params.channels() {
        return Err(Error::shape(format!(
            "ecc_aggregate: map has {} channels, edge network expects {}",
            s[0],
            params.channels()
        )));
    }
    let entry_range = edges.segments.range(center);
    let indices: Arc<Vec<usize>> = Arc::new(edges.indices[entry_range.clone()].to_vec());
    let segments = Arc::new(Segments::uniform(1, entry_range.len()));
    let mut tape = Tape::new();
    let map_id = tape.constant(map.clone());
    let rows = tape.pixels_to_rows(map_id)?;
    let center_rows = tape.gather_rows(rows, Arc::new(vec![center]))?;
    let ecc = params.bind(&mut tape, false);
    let out = ecc_combine(&mut tape, rows, center_rows, indices, segments, &ecc)?;
    tape.value(out).reshaped(&[params.channels()])
}

/// Plane graph branch on a fixed topology: every output pixel is the
/// edge-conditioned aggregate of its neighbors. `[C,H,W] -> [C,H,W]`.
pub fn plane_gcn_with_edges<T: Scalar>(
    tape: &mut Tape<T>,
    map: TensorId,
    edges: &EdgeSet<T>,
    ecc: &EccVars,
) -> Result<TensorId> {
    let s = tape.shape(map);
    if s.len() != 3 {
        return Err(Error::shape(format!("plane_gcn expects [C,H,W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    if edges.center_count() != h * w {
        return Err(Error::shape(format!(
            "plane_gcn: edge set covers {} centers but map has {} pixels",
            edges.center_count(),
            h * w
        )));
    }
    let rows = tape.pixels_to_rows(map)?;
    let out = ecc_combine(
        tape,
        rows,
        rows,
        Arc::clone(&edges.indices),
        Arc::clone(&edges.segments),
        ecc,
    )?;
    tape.rows_to_pixels(out, h, w)
}

/// Plane graph branch: builds the K-NN topology from the map's current
/// values, then aggregates differentiably. Returns the edge set alongside
/// the output id.
pub fn plane_gcn<T: Scalar>(
    tape: &mut Tape<T>,
    map: TensorId,
    config: &GraphConfig,
    ecc: &EccVars,
) -> Result<(TensorId, EdgeSet<T>)> {
    let edges = build_plane_edges(tape.value(map), config)?;
    let out = plane_gcn_with_edges(tape, map, &edges, ecc)?;
    Ok((out, edges))
}

/// Depth graph branch on a stack `[M, C, H, W]`: for every pixel the
/// center slice aggregates the co-located feature vectors of the other
/// slices. Returns `[C, H, W]`.
pub fn depth_gcn<T: Scalar>(
    tape: &mut Tape<T>,
    stack: TensorId,
    ecc: &EccVars,
) -> Result<TensorId> {
    let s = tape.shape(stack).to_vec();
    if s.len() != 4 {
        return Err(Error::shape(format!("depth_gcn expects [M,C,H,W], got {s:?}")));
    }
    let (m, h, w) = (s[0], s[2], s[3]);
    if m < 2 {
        return Err(Error::arg(format!("depth_gcn needs M >= 2 slices, got {m}")));
    }
    let center = m / 2;
    let hw = h * w;
    let mut parts = Vec::with_capacity(m);
    for slice in 0..m {
        let entry = tape.slice_entry(stack, slice)?;
        parts.push(tape.pixels_to_rows(entry)?);
    }
    let all_rows = tape.concat_rows(&parts)?;
    let (indices, segments) = depth_topology(m, center, hw);
    let out = ecc_combine(tape, all_rows, parts[center], indices, segments, ecc)?;
    tape.rows_to_pixels(out, h, w)
}

//! Graph construction on image feature maps.
//!
//! Every spatial position of an NCHW feature map is a graph node whose
//! feature vector runs along the channel axis. Three constructions are
//! provided:
//!
//! * **DAGC**: compare each node with the nodes that lie `k, 2k, ...` hops
//!   away along its row and column (with wraparound) and connect only those
//!   whose distance is below `mu - sigma`, where `mu`/`sigma` are cheap
//!   per-image estimates taken between diagonally opposite quadrants.
//! * **SVGA**: the same axial pattern with every candidate connected.
//! * **KNN**: the `k` nearest nodes over the whole image.
//!
//! DAGC and SVGA aggregate with max-relative pooling, `max_j (x_j - x_i)`,
//! starting from zero; KNN aggregates with max-relative over its neighbors.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::Exec;
use crate::error::{Error, Result};
use crate::tensor::{Axis, BinaryOp, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMethod {
    Dagc,
    Svga,
    Knn,
}

impl GraphMethod {
    pub const ALL: [GraphMethod; 3] = [GraphMethod::Svga, GraphMethod::Dagc, GraphMethod::Knn];

    pub fn name(self) -> &'static str {
        match self {
            GraphMethod::Dagc => "dagc",
            GraphMethod::Svga => "svga",
            GraphMethod::Knn => "knn",
        }
    }
}

impl fmt::Display for GraphMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dagc" => Ok(GraphMethod::Dagc),
            "svga" => Ok(GraphMethod::Svga),
            "knn" => Ok(GraphMethod::Knn),
            other => Err(Error::config(format!("unknown graph method {other:?} (dagc|svga|knn)"))),
        }
    }
}

/// Construction method plus its `k`: hop distance for DAGC/SVGA, neighbor
/// count for KNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub method: GraphMethod,
    pub k: usize,
}

impl GraphSpec {
    pub fn new(method: GraphMethod, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("graph k must be at least 1"));
        }
        Ok(Self { method, k })
    }

    /// Checks `k` against a concrete `h x w` map.
    pub fn validate_for(&self, h: usize, w: usize) -> Result<()> {
        match self.method {
            GraphMethod::Knn if self.k >= h * w => Err(Error::config(format!(
                "knn k = {} needs more than {} nodes",
                self.k,
                h * w
            ))),
            GraphMethod::Dagc | GraphMethod::Svga if self.k >= h.max(w) => Err(Error::config(format!(
                "hop distance {} must be below max(H, W) = {}",
                self.k,
                h.max(w)
            ))),
            _ => Ok(()),
        }
    }
}

/// Per-image estimates of the mean and population standard deviation of
/// inter-node distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatPair<T> {
    pub mu: T,
    pub sigma: T,
}

impl<T: Element> StatPair<T> {
    /// The DAGC connection threshold `mu - sigma`.
    pub fn threshold(&self) -> T {
        self.mu - self.sigma
    }
}

/// Maps a row (or column) index under the half swap; the middle index of an
/// odd extent maps to `None`.
#[inline]
fn half_swap(i: usize, extent: usize) -> Option<usize> {
    let half = extent / 2;
    let far = extent - half;
    if i < half {
        Some(i + far)
    } else if i >= far {
        Some(i - far)
    } else {
        None
    }
}

/// Swaps the top-left quadrant with the bottom-right and the top-right with
/// the bottom-left. Quadrants are `floor(H/2) x floor(W/2)`; with an odd
/// extent the middle row or column stays where it is.
pub fn quadrant_flip<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("quadrant_flip")?;
    if h < 2 {
        return Err(Error::dim("quadrant_flip", "height", format!("need H >= 2, got {h}")));
    }
    if w < 2 {
        return Err(Error::dim("quadrant_flip", "width", format!("need W >= 2, got {w}")));
    }
    let xd = x.data();
    let mut out = Vec::with_capacity(xd.len());
    for plane in xd.chunks_exact(h * w).take(n * c) {
        for r in 0..h {
            for col in 0..w {
                let src = match (half_swap(r, h), half_swap(col, w)) {
                    (Some(r2), Some(c2)) => r2 * w + c2,
                    _ => r * w + col,
                };
                out.push(plane[src]);
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Node pairs compared when estimating statistics for one `h x w` image:
/// the top-left/bottom-right and top-right/bottom-left quadrant pairings.
pub fn stats_pair_count(h: usize, w: usize) -> u64 {
    2 * (h / 2) as u64 * (w / 2) as u64
}

/// Distance between each node and its quadrant-flipped partner, one entry per
/// unordered pair, in a fixed order (top-left quadrant then top-right, row-major).
fn quadrant_distances<T: Element>(x: &Tensor<T>, n: usize) -> Vec<T> {
    let (_, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (hh, hw) = (h / 2, w / 2);
    let plane = h * w;
    let xd = &x.data()[n * c * plane..][..c * plane];
    let mut out = Vec::with_capacity(2 * hh * hw);
    for cols in [0..hw, (w - hw)..w] {
        for r in 0..hh {
            let r2 = r + (h - hh);
            for col in cols.clone() {
                let c2 = half_swap(col, w).expect("quadrant column");
                let (p, q) = (r * w + col, r2 * w + c2);
                let mut acc = T::zero();
                for ch in 0..c {
                    let d = xd[ch * plane + p] - xd[ch * plane + q];
                    acc = acc + d * d;
                }
                out.push(acc.sqrt());
            }
        }
    }
    out
}

/// `mu` and population `sigma` of the distances between each image and its
/// quadrant-flipped copy, computed independently per batch element. Images
/// too small to have quadrants get `(0, 0)`.
pub fn estimate_stats<T: Element>(x: &Tensor<T>) -> Result<Vec<StatPair<T>>> {
    let (n, ..) = x.dims4("estimate_stats")?;
    Ok((0..n)
        .map(|i| {
            let d = quadrant_distances(x, i);
            if d.is_empty() {
                return StatPair {
                    mu: T::zero(),
                    sigma: T::zero(),
                };
            }
            let count = T::from_f64(d.len() as f64);
            let mu = d.iter().fold(T::zero(), |a, &v| a + v) / count;
            let var = d.iter().fold(T::zero(), |a, &v| a + (v - mu) * (v - mu)) / count;
            StatPair { mu, sigma: var.sqrt() }
        })
        .collect())
}

/// Roll distances `0, k, 2k, ...` strictly below `extent`.
pub fn axial_offsets(extent: usize, k: usize) -> Vec<usize> {
    assert!(k >= 1, "hop distance must be positive");
    (0..extent).step_by(k).collect()
}

/// The node mask applied at one roll.
#[derive(Debug, Clone)]
pub struct OffsetMask<T: Element> {
    pub axis: Axis,
    pub shift: usize,
    /// `(N, 1, H, W)` of zeros and ones.
    pub mask: Tensor<T>,
}

/// What an axial aggregation connected, and what it cost.
#[derive(Debug, Clone)]
pub struct ConnectionTrace<T: Element> {
    pub masks: Vec<OffsetMask<T>>,
    /// Mask ones per batch element, summed over every roll.
    pub connections_per_image: Vec<u64>,
    /// Node-to-node distance evaluations made by the roll loops.
    pub comparisons: u64,
    /// Distance evaluations made while estimating statistics.
    pub stats_comparisons: u64,
}

impl<T: Element> ConnectionTrace<T> {
    pub fn connections(&self) -> u64 {
        self.connections_per_image.iter().sum()
    }

    /// Masks as f32 0/1 tensors named `<axis>+<shift>`, for GVT export.
    pub fn mask_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        self.masks
            .iter()
            .map(|m| (format!("{}+{}", m.axis.name(), m.shift), m.mask.cast()))
            .collect()
    }
}

/// How each axial candidate is admitted.
#[derive(Debug, Clone)]
pub enum MaskRule<T> {
    /// Connect where `distance < threshold[n]` (strict).
    Threshold(Vec<T>),
    /// Evaluate distances but connect every candidate.
    ForceAll,
    /// Connect every candidate without evaluating distances.
    Static,
}

/// The shared roll/mask/max loop behind DAGC and SVGA, over any backend.
///
/// `x_final` starts at zero, so the result is elementwise non-negative.
/// Height rolls run first, then width rolls.
pub fn axial_aggregate<T: Element, E: Exec<T>>(
    exec: &mut E,
    x: &E::Value,
    k: usize,
    rule: &MaskRule<T>,
) -> Result<(E::Value, ConnectionTrace<T>)> {
    if k == 0 {
        return Err(Error::config("hop distance k must be at least 1"));
    }
    let xv = exec.value(x);
    let (n, _, h, w) = xv.dims4("axial_aggregate")?;
    if let MaskRule::Threshold(t) = rule {
        if t.len() != n {
            return Err(Error::dim(
                "dagc_aggregate",
                "batch",
                format!("{} thresholds for batch of {n}", t.len()),
            ));
        }
    }
    let mut trace = ConnectionTrace {
        masks: Vec::new(),
        connections_per_image: vec![0; n],
        comparisons: 0,
        stats_comparisons: 0,
    };
    let all_ones: Tensor<T> = Tensor::ones(&[n, 1, h, w])?;
    let mut x_final = exec.constant(Tensor::zeros(xv.shape())?);
    for (axis, extent) in [(Axis::Height, h), (Axis::Width, w)] {
        for shift in axial_offsets(extent, k) {
            let rolled = exec.roll(x, shift as isize, axis)?;
            let diff = exec.binary(BinaryOp::Sub, &rolled, x)?;
            let contribution = match rule {
                MaskRule::Static => {
                    for c in &mut trace.connections_per_image {
                        *c += (h * w) as u64;
                    }
                    trace.masks.push(OffsetMask {
                        axis,
                        shift,
                        mask: all_ones.clone(),
                    });
                    diff
                }
                MaskRule::Threshold(_) | MaskRule::ForceAll => {
                    let dist = node_distances(&exec.value(&diff))?;
                    trace.comparisons += (n * h * w) as u64;
                    let mut mask = Vec::with_capacity(n * h * w);
                    for (i, &d) in dist.iter().enumerate() {
                        let img = i / (h * w);
                        let on = match rule {
                            MaskRule::Threshold(t) => {
                                if shift != 0 {
                                    exec.note_mask_margin((d - t[img]).abs().as_f64());
                                }
                                d < t[img]
                            }
                            _ => true,
                        };
                        if on {
                            trace.connections_per_image[img] += 1;
                        }
                        mask.push(if on { T::one() } else { T::zero() });
                    }
                    let mask = Tensor::from_vec(&[n, 1, h, w], mask)?;
                    let m = exec.constant(mask.clone());
                    trace.masks.push(OffsetMask { axis, shift, mask });
                    exec.binary(BinaryOp::Mul, &diff, &m)?
                }
            };
            x_final = exec.binary(BinaryOp::Max, &x_final, &contribution)?;
        }
    }
    Ok((x_final, trace))
}

/// Eager [`axial_aggregate`] without materialized rolls. Performs the same
/// floating-point operations in the same order, so results match bit for bit.
fn axial_aggregate_eager<T: Element>(x: &Tensor<T>, k: usize, rule: &MaskRule<T>) -> Result<(Tensor<T>, ConnectionTrace<T>)> {
    if k == 0 {
        return Err(Error::config("hop distance k must be at least 1"));
    }
    let (n, c, h, w) = x.dims4("axial_aggregate")?;
    if let MaskRule::Threshold(t) = rule {
        if t.len() != n {
            return Err(Error::dim(
                "dagc_aggregate",
                "batch",
                format!("{} thresholds for batch of {n}", t.len()),
            ));
        }
    }
    let plane = h * w;
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    let mut trace = ConnectionTrace {
        masks: Vec::new(),
        connections_per_image: vec![0; n],
        comparisons: 0,
        stats_comparisons: 0,
    };
    let all_ones: Tensor<T> = Tensor::ones(&[n, 1, h, w])?;
    let mut src = vec![0usize; plane];
    let mut dist = vec![T::zero(); plane];
    let mut mask = vec![T::zero(); n * plane];
    for (axis, extent) in [(Axis::Height, h), (Axis::Width, w)] {
        for shift in axial_offsets(extent, k) {
            let s = shift % extent;
            for (q, slot) in src.iter_mut().enumerate() {
                let (r, col) = (q / w, q % w);
                *slot = match axis {
                    Axis::Height => (r + h - s) % h * w + col,
                    Axis::Width => r * w + (col + w - s) % w,
                };
            }
            for img in 0..n {
                let image = &xd[img * c * plane..][..c * plane];
                let m = &mut mask[img * plane..][..plane];
                match rule {
                    MaskRule::Static => trace.connections_per_image[img] += plane as u64,
                    MaskRule::Threshold(_) | MaskRule::ForceAll => {
                        dist.fill(T::zero());
                        for p in image.chunks_exact(plane) {
                            for ((acc, &from), &v) in dist.iter_mut().zip(&src).zip(p) {
                                let d = p[from] - v;
                                *acc = *acc + d * d;
                            }
                        }
                        trace.comparisons += plane as u64;
                        for (slot, acc) in m.iter_mut().zip(&dist) {
                            let on = match rule {
                                MaskRule::Threshold(t) => acc.sqrt() < t[img],
                                _ => true,
                            };
                            if on {
                                trace.connections_per_image[img] += 1;
                            }
                            *slot = if on { T::one() } else { T::zero() };
                        }
                    }
                }
                let o = &mut out[img * c * plane..][..c * plane];
                for (op, p) in o.chunks_exact_mut(plane).zip(image.chunks_exact(plane)) {
                    if let MaskRule::Static = rule {
                        for ((acc, &from), &v) in op.iter_mut().zip(&src).zip(p) {
                            *acc = BinaryOp::Max.apply(*acc, p[from] - v);
                        }
                    } else {
                        for (((acc, &from), &v), &mv) in op.iter_mut().zip(&src).zip(p).zip(m.iter()) {
                            *acc = BinaryOp::Max.apply(*acc, (p[from] - v) * mv);
                        }
                    }
                }
            }
            let mask = match rule {
                MaskRule::Static => all_ones.clone(),
                _ => Tensor::from_vec(&[n, 1, h, w], mask.clone())?,
            };
            trace.masks.push(OffsetMask { axis, shift, mask });
        }
    }
    Ok((Tensor::from_vec(x.shape(), out)?, trace))
}

/// Channel-wise L2 norm at each node of an `(N, C, H, W)` difference map, laid out `(N, H*W)`.
fn node_distances<T: Element>(diff: &Tensor<T>) -> Result<Vec<T>> {
    let (n, c, h, w) = diff.dims4("node_distances")?;
    let plane = h * w;
    let mut acc = vec![T::zero(); n * plane];
    for ni in 0..n {
        let dst = &mut acc[ni * plane..][..plane];
        for ci in 0..c {
            let src = &diff.data()[(ni * c + ci) * plane..][..plane];
            for (a, &v) in dst.iter_mut().zip(src) {
                *a = *a + v * v;
            }
        }
    }
    Ok(acc.into_iter().map(|v| v.sqrt()).collect())
}

/// DAGC aggregation with the `mu - sigma` threshold from `stats`.
pub fn dagc_aggregate<T: Element>(
    x: &Tensor<T>,
    k: usize,
    stats: &[StatPair<T>],
) -> Result<(Tensor<T>, ConnectionTrace<T>)> {
    let thresholds = stats.iter().map(StatPair::threshold).collect();
    let (out, mut trace) = axial_aggregate_eager(x, k, &MaskRule::Threshold(thresholds))?;
    let (_, _, h, w) = x.dims4("dagc_aggregate")?;
    trace.stats_comparisons = stats.len() as u64 * stats_pair_count(h, w);
    Ok((out, trace))
}

/// DAGC aggregation with explicit per-image thresholds.
pub fn dagc_aggregate_with_thresholds<T: Element>(
    x: &Tensor<T>,
    k: usize,
    thresholds: &[T],
) -> Result<(Tensor<T>, ConnectionTrace<T>)> {
    axial_aggregate_eager(x, k, &MaskRule::Threshold(thresholds.to_vec()))
}

/// DAGC loop with every mask entry forced to one.
pub fn dagc_aggregate_forced<T: Element>(x: &Tensor<T>, k: usize) -> Result<(Tensor<T>, ConnectionTrace<T>)> {
    axial_aggregate_eager(x, k, &MaskRule::ForceAll)
}

/// Static axial aggregation: every `k`-th row/column node is connected.
pub fn svga_aggregate<T: Element>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    Ok(svga_aggregate_traced(x, k)?.0)
}

pub fn svga_aggregate_traced<T: Element>(x: &Tensor<T>, k: usize) -> Result<(Tensor<T>, ConnectionTrace<T>)> {
    axial_aggregate_eager(x, k, &MaskRule::Static)
}

/// `k` neighbors for every node of every image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    pub batch: usize,
    pub nodes: usize,
    pub k: usize,
    /// `(batch, nodes, k)` linear node indices, nearest first.
    pub indices: Vec<u32>,
    /// Node-to-node distance evaluations made while building the table.
    pub comparisons: u64,
}

impl NeighborTable {
    pub fn neighbors(&self, image: usize, node: usize) -> &[u32] {
        &self.indices[(image * self.nodes + node) * self.k..][..self.k]
    }

    /// Indices encoded as f32, shape `(batch, nodes, k)`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.indices.iter().map(|&i| i as f32).collect();
        Tensor::from_vec(&[self.batch, self.nodes, self.k], data).expect("table dimensions are positive")
    }
}

/// The `k` nearest other nodes by channel-wise L2 distance. Ranking uses
/// squared distance; ties go to the smaller linear node index.
pub fn knn_neighbors<T: Element>(x: &Tensor<T>, k: usize) -> Result<NeighborTable> {
    let (n, c, h, w) = x.dims4("knn_neighbors")?;
    let nodes = h * w;
    if k == 0 || k >= nodes {
        return Err(Error::config(format!("knn needs 1 <= k < H*W = {nodes}, got k = {k}")));
    }
    let mut indices = Vec::with_capacity(n * nodes * k);
    let mut feats = vec![T::zero(); nodes * c];
    let mut row: Vec<(f64, u32)> = Vec::with_capacity(nodes);
    for ni in 0..n {
        // Node-major copy so each distance reads contiguous memory.
        for ci in 0..c {
            let src = &x.data()[(ni * c + ci) * nodes..][..nodes];
            for (p, &v) in src.iter().enumerate() {
                feats[p * c + ci] = v;
            }
        }
        for i in 0..nodes {
            let fi = &feats[i * c..][..c];
            row.clear();
            for j in 0..nodes {
                let fj = &feats[j * c..][..c];
                let d = fi.iter().zip(fj).fold(T::zero(), |a, (&p, &q)| a + (p - q) * (p - q));
                if j != i {
                    row.push((d.as_f64(), j as u32));
                }
            }
            let cmp = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            row.select_nth_unstable_by(k - 1, cmp);
            row[..k].sort_unstable_by(cmp);
            indices.extend(row[..k].iter().map(|&(_, j)| j));
        }
    }
    Ok(NeighborTable {
        batch: n,
        nodes,
        k,
        indices,
        comparisons: (n * nodes * nodes) as u64,
    })
}

/// Max-relative aggregation over a neighbor table, plus the winning neighbor
/// of each output element (first in table order on ties).
pub fn max_relative_forward<T: Element>(x: &Tensor<T>, table: &NeighborTable) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4("knn_aggregate")?;
    if table.batch != n {
        return Err(Error::dim("knn_aggregate", "batch", format!("table has {} images, input {n}", table.batch)));
    }
    if table.nodes != h * w {
        return Err(Error::dim(
            "knn_aggregate",
            "nodes",
            format!("table has {} nodes, input has {}", table.nodes, h * w),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(x.len());
    let mut arg = Vec::with_capacity(x.len());
    for ni in 0..n {
        for ci in 0..c {
            let xs = &x.data()[(ni * c + ci) * plane..][..plane];
            for (i, &xi) in xs.iter().enumerate() {
                let nb = table.neighbors(ni, i);
                let mut best = xs[nb[0] as usize] - xi;
                let mut best_j = nb[0];
                for &j in &nb[1..] {
                    let v = xs[j as usize] - xi;
                    if v > best {
                        best = v;
                        best_j = j;
                    }
                }
                out.push(best);
                arg.push(best_j);
            }
        }
    }
    Ok((Tensor::from_vec(x.shape(), out)?, arg))
}

/// Per node, per channel: `max_j (x_j - x_i)` over the table's neighbors.
pub fn knn_aggregate<T: Element>(x: &Tensor<T>, table: &NeighborTable) -> Result<Tensor<T>> {
    Ok(max_relative_forward(x, table)?.0)
}

/// KNN aggregation as an [`Exec`] op (the table is built from the current value).
pub fn knn_aggregate_on<T: Element, E: Exec<T>>(exec: &mut E, x: &E::Value, k: usize) -> Result<(E::Value, Arc<NeighborTable>)> {
    let table = Arc::new(knn_neighbors(&exec.value(x), k)?);
    Ok((exec.max_relative(x, &table)?, table))
}

/// Closed-form comparison counts for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonCount {
    /// Distance evaluations made from each node.
    pub per_node: u64,
    pub nodes: u64,
    /// `per_node * nodes`.
    pub total: u64,
    /// One-time statistics pass (DAGC only), reported separately.
    pub stats_pass: u64,
}

pub fn count_comparisons(method: GraphMethod, h: usize, w: usize, k: usize) -> ComparisonCount {
    let nodes = (h * w) as u64;
    let (per_node, stats_pass) = match method {
        GraphMethod::Knn => (nodes, 0),
        GraphMethod::Dagc => ((h.div_ceil(k) + w.div_ceil(k)) as u64, stats_pair_count(h, w)),
        GraphMethod::Svga => (0, 0),
    };
    ComparisonCount {
        per_node,
        nodes,
        total: per_node * nodes,
        stats_pass,
    }
}

//! Eager and taped execution of the primitive set.
//!
//! Blocks are written once against [`Exec`]. [`Eager`] evaluates directly on
//! tensors; [`Tape`] records every primitive so the same forward pass can be
//! differentiated in reverse mode or replayed with substituted leaves (which
//! is how finite differences are taken).

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{max_relative_forward, NeighborTable};
use crate::tensor::ops::{self, batch_norm_backward, broadcast_dims, conv2d_backward, gelu_grad_scalar, BatchNormParams};
use crate::tensor::{Axis, BinaryOp, ConvGeom, Element, Tensor};

/// Backend that blocks are evaluated on.
pub trait Exec<T: Element> {
    type Value: Clone;

    /// A trainable tensor. Taped backends report gradients for it under `name`.
    fn param(&mut self, name: &str, t: &Tensor<T>) -> Self::Value;
    /// A value that carries no gradient (masks, inputs under test).
    fn constant(&mut self, t: Tensor<T>) -> Self::Value;
    fn value(&self, v: &Self::Value) -> Tensor<T>;

    fn conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: Option<&Self::Value>, geom: ConvGeom) -> Result<Self::Value>;
    /// Inference-form BN; the running statistics in `stats` are constants.
    fn batch_norm(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        stats: &BatchNormParams<T>,
    ) -> Result<Self::Value>;
    fn gelu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn binary(&mut self, op: BinaryOp, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn roll(&mut self, x: &Self::Value, shift: isize, axis: Axis) -> Result<Self::Value>;
    fn concat_channels(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn reshape(&mut self, x: &Self::Value, shape: &[usize]) -> Result<Self::Value>;
    fn max_relative(&mut self, x: &Self::Value, table: &Arc<NeighborTable>) -> Result<Self::Value>;

    /// Distance between a DAGC comparison and its threshold, for tie detection.
    fn note_mask_margin(&mut self, _margin: f64) {}
}

/// Direct evaluation, no recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<T: Element> Exec<T> for Eager {
    type Value = Tensor<T>;

    fn param(&mut self, _name: &str, t: &Tensor<T>) -> Tensor<T> {
        t.clone()
    }

    fn constant(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn value(&self, v: &Tensor<T>) -> Tensor<T> {
        v.clone()
    }

    fn conv2d(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, geom: ConvGeom) -> Result<Tensor<T>> {
        ops::conv2d_raw(x, w, b, geom)
    }

    fn batch_norm(&mut self, x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, stats: &BatchNormParams<T>) -> Result<Tensor<T>> {
        ops::batch_norm(x, &bn_with(gamma, beta, stats))
    }

    fn gelu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::gelu(x))
    }

    fn binary(&mut self, op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::elementwise(op, a, b)
    }

    fn roll(&mut self, x: &Tensor<T>, shift: isize, axis: Axis) -> Result<Tensor<T>> {
        ops::roll(x, shift, axis)
    }

    fn concat_channels(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::concat_channels(a, b)
    }

    fn global_avg_pool(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::global_avg_pool(x)
    }

    fn reshape(&mut self, x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        x.reshape(shape)
    }

    fn max_relative(&mut self, x: &Tensor<T>, table: &Arc<NeighborTable>) -> Result<Tensor<T>> {
        Ok(max_relative_forward(x, table)?.0)
    }
}

fn bn_with<T: Element>(gamma: &Tensor<T>, beta: &Tensor<T>, stats: &BatchNormParams<T>) -> BatchNormParams<T> {
    BatchNormParams {
        gamma: gamma.clone(),
        beta: beta.clone(),
        running_mean: stats.running_mean.clone(),
        running_var: stats.running_var.clone(),
        eps: stats.eps,
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T: Element> {
    Param(String),
    Constant,
    Conv2d { geom: ConvGeom, has_bias: bool },
    BatchNorm { stats: BatchNormParams<T> },
    Gelu,
    Binary(BinaryOp),
    Roll { shift: isize, axis: Axis },
    Concat,
    GlobalAvgPool,
    Reshape(Vec<usize>),
    MaxRelative(Arc<NeighborTable>),
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
struct Node<T: Element> {
    op: Op<T>,
    inputs: Vec<Var>,
    value: Tensor<T>,
}

/// Recording of primitive applications in topological order.
#[derive(Debug, Clone)]
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
    min_max_gap: f64,
    min_mask_margin: f64,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn eval<T: Element>(op: &Op<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    match op {
        Op::Param(_) | Op::Constant => Err(Error::Tape("leaf nodes are not evaluated".into())),
        Op::Conv2d { geom, has_bias } => {
            let b = if *has_bias { Some(inputs[2]) } else { None };
            ops::conv2d_raw(inputs[0], inputs[1], b, *geom)
        }
        Op::BatchNorm { stats } => ops::batch_norm(inputs[0], &bn_with(inputs[1], inputs[2], stats)),
        Op::Gelu => Ok(ops::gelu(inputs[0])),
        Op::Binary(op) => ops::elementwise(*op, inputs[0], inputs[1]),
        Op::Roll { shift, axis } => ops::roll(inputs[0], *shift, *axis),
        Op::Concat => ops::concat_channels(inputs[0], inputs[1]),
        Op::GlobalAvgPool => ops::global_avg_pool(inputs[0]),
        Op::Reshape(shape) => inputs[0].reshape(shape),
        Op::MaxRelative(table) => Ok(max_relative_forward(inputs[0], table)?.0),
        Op::Sum => Ok(Tensor::scalar(inputs[0].sum())),
        Op::Mean => Ok(Tensor::scalar(inputs[0].sum() / T::from_f64(inputs[0].len() as f64))),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            min_max_gap: f64::INFINITY,
            min_mask_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Tensor<T>> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or_else(|| Error::Tape(format!("variable {} is not on this tape", v.0)))
    }

    fn leaf(&mut self, op: Op<T>, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op,
            inputs: Vec::new(),
            value: t,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op<T>, inputs: Vec<Var>) -> Result<Var> {
        let values = inputs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let value = eval(&op, &values)?;
        if let Op::Binary(BinaryOp::Max) = op {
            let gap = max_gap(values[0], values[1]);
            self.min_max_gap = self.min_max_gap.min(gap);
        }
        self.nodes.push(Node { op, inputs, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn get(&self, v: Var) -> Result<&Tensor<T>> {
        self.check(v)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sum, vec![x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Mean, vec![x])
    }

    /// Parameters in registration order.
    pub fn params(&self) -> Vec<(String, Var)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Param(name) => Some((name.clone(), Var(i))),
                _ => None,
            })
            .collect()
    }

    /// Smallest nonzero `|a - b|` seen by any recorded max, i.e. the distance to
    /// the nearest kink of the piecewise-linear part of the graph.
    pub fn min_max_gap(&self) -> f64 {
        self.min_max_gap
    }

    pub fn min_mask_margin(&self) -> f64 {
        self.min_mask_margin
    }

    /// Re-evaluates the tape up to `target`, substituting leaf values from `overrides`.
    pub fn replay_value(&self, overrides: &HashMap<Var, Tensor<T>>, target: Var) -> Result<Tensor<T>> {
        self.check(target)?;
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(target.0 + 1);
        for (i, node) in self.nodes[..=target.0].iter().enumerate() {
            let v = match node.op {
                Op::Param(_) | Op::Constant => match overrides.get(&Var(i)) {
                    Some(t) if t.shape() == node.value.shape() => t.clone(),
                    Some(t) => {
                        return Err(Error::Tape(format!(
                            "override for {i} has shape {:?}, recorded {:?}",
                            t.shape(),
                            node.value.shape()
                        )))
                    }
                    None => node.value.clone(),
                },
                _ => {
                    let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &values[v.0]).collect();
                    eval(&node.op, &ins)?
                }
            };
            values.push(v);
        }
        Ok(values.pop().expect("target is on the tape"))
    }

    /// Re-evaluates every node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Param(_) | Op::Constant => node.value.clone(),
                _ => {
                    let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &values[v.0]).collect();
                    eval(&node.op, &ins)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when replaying reproduces every recorded value bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        Ok(self.replay()?.iter().zip(&self.nodes).all(|(r, n)| r.bit_eq(&n.value)))
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.check(loss)?;
        if lv.len() != 1 {
            return Err(Error::Tape(format!("loss must be a scalar, got shape {:?}", lv.shape())));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let g = Tensor::from_vec(node.value.shape(), g)?;
            let contributions = self.local_grads(node, &g)?;
            for (input, d) in node.inputs.iter().zip(contributions) {
                let Some(d) = d else { continue };
                match &mut adj[input.0] {
                    Some(acc) => {
                        for (a, &v) in acc.iter_mut().zip(d.data()) {
                            *a = *a + v;
                        }
                    }
                    slot @ None => *slot = Some(d.to_vec()),
                }
            }
            adj[i] = Some(g.to_vec());
        }
        let grads = adj
            .into_iter()
            .zip(&self.nodes)
            .map(|(a, n)| a.map(|a| Tensor::from_vec(n.value.shape(), a)).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let inp = |k: usize| &self.nodes[node.inputs[k].0].value;
        Ok(match &node.op {
            Op::Param(_) | Op::Constant => Vec::new(),
            Op::Conv2d { geom, has_bias } => {
                let (dx, dw, db) = conv2d_backward(inp(0), inp(1), *has_bias, *geom, g)?;
                let mut v = vec![Some(dx), Some(dw)];
                if *has_bias {
                    v.push(db);
                }
                v
            }
            Op::BatchNorm { stats } => {
                let (dx, dg, db) = batch_norm_backward(inp(0), &bn_with(inp(1), inp(2), stats), g)?;
                vec![Some(dx), Some(dg), Some(db)]
            }
            Op::Gelu => {
                let x = inp(0);
                let d = x.data().iter().zip(g.data()).map(|(&x, &g)| g * gelu_grad_scalar(x)).collect();
                vec![Some(Tensor::from_vec(x.shape(), d)?)]
            }
            Op::Binary(op) => binary_grads(*op, inp(0), inp(1), g)?,
            Op::Roll { shift, axis } => vec![Some(ops::roll(g, -shift, *axis)?)],
            Op::Concat => {
                let ca = inp(0).shape()[1];
                let cb = inp(1).shape()[1];
                vec![Some(ops::slice_channels(g, 0, ca)?), Some(ops::slice_channels(g, ca, cb)?)]
            }
            Op::GlobalAvgPool => {
                let x = inp(0);
                let (_, _, h, w) = x.dims4("global_avg_pool")?;
                let scale = T::from_f64((h * w) as f64);
                let d = Tensor::from_fn(x.shape(), |i| g.data()[i / (h * w)] / scale)?;
                vec![Some(d)]
            }
            Op::Reshape(_) => vec![Some(g.reshape(inp(0).shape())?)],
            Op::MaxRelative(table) => {
                let x = inp(0);
                let (_, arg) = max_relative_forward(x, table)?;
                let (n, c, h, w) = x.dims4("max_relative")?;
                let plane = h * w;
                let mut d = vec![T::zero(); x.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * plane;
                        for i in 0..plane {
                            let gv = g.data()[base + i];
                            let j = arg[base + i] as usize;
                            d[base + j] = d[base + j] + gv;
                            d[base + i] = d[base + i] - gv;
                        }
                    }
                }
                vec![Some(Tensor::from_vec(x.shape(), d)?)]
            }
            Op::Sum => {
                let x = inp(0);
                vec![Some(Tensor::full(x.shape(), g.data()[0])?)]
            }
            Op::Mean => {
                let x = inp(0);
                let v = g.data()[0] / T::from_f64(x.len() as f64);
                vec![Some(Tensor::full(x.shape(), v)?)]
            }
        })
    }
}

/// Smallest nonzero separation between the two arguments of a max.
fn max_gap<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let gap = |x: T, y: T| {
        let d = (x - y).abs().as_f64();
        if d == 0.0 {
            f64::INFINITY
        } else {
            d
        }
    };
    if a.shape() == b.shape() {
        return a.data().iter().zip(b.data()).map(|(&x, &y)| gap(x, y)).fold(f64::INFINITY, f64::min);
    }
    match broadcast_dims(a, b) {
        Ok((_, c, plane)) => (0..a.len())
            .map(|i| gap(a.data()[i], b.data()[(i / (c * plane)) * plane + i % plane]))
            .fold(f64::INFINITY, f64::min),
        Err(_) => f64::INFINITY,
    }
}

/// Sums a full-shape gradient over channels when `b` was broadcast.
fn reduce_to<T: Element>(d: Vec<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return Tensor::from_vec(b.shape(), d);
    }
    let (n, c, plane) = broadcast_dims(a, b)?;
    let mut out = vec![T::zero(); b.len()];
    for ni in 0..n {
        for ci in 0..c {
            for p in 0..plane {
                let o = &mut out[ni * plane + p];
                *o = *o + d[(ni * c + ci) * plane + p];
            }
        }
    }
    Tensor::from_vec(b.shape(), out)
}

fn binary_grads<T: Element>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
    let bcast = a.shape() != b.shape();
    let (c, plane) = if bcast {
        let (_, c, plane) = broadcast_dims(a, b)?;
        (c, plane)
    } else {
        (1, a.len())
    };
    let b_at = |i: usize| {
        if bcast {
            b.data()[(i / (c * plane)) * plane + i % plane]
        } else {
            b.data()[i]
        }
    };
    let gd = g.data();
    let (da, db): (Vec<T>, Vec<T>) = match op {
        BinaryOp::Add => (gd.to_vec(), gd.to_vec()),
        BinaryOp::Sub => (gd.to_vec(), gd.iter().map(|&v| -v).collect()),
        BinaryOp::Mul => (
            (0..a.len()).map(|i| gd[i] * b_at(i)).collect(),
            (0..a.len()).map(|i| gd[i] * a.data()[i]).collect(),
        ),
        BinaryOp::Max => (0..a.len())
            .map(|i| {
                let (x, y) = (a.data()[i], b_at(i));
                if x >= y || y.is_nan() {
                    (gd[i], T::zero())
                } else {
                    (T::zero(), gd[i])
                }
            })
            .unzip(),
    };
    Ok(vec![Some(Tensor::from_vec(a.shape(), da)?), Some(reduce_to(db, a, b)?)])
}

impl<T: Element> Exec<T> for Tape<T> {
    type Value = Var;

    fn param(&mut self, name: &str, t: &Tensor<T>) -> Var {
        self.leaf(Op::Param(name.to_owned()), t.clone())
    }

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Op::Constant, t)
    }

    fn value(&self, v: &Var) -> Tensor<T> {
        self.nodes[v.0].value.clone()
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, geom: ConvGeom) -> Result<Var> {
        let mut inputs = vec![*x, *w];
        inputs.extend(b.copied());
        self.record(
            Op::Conv2d {
                geom,
                has_bias: b.is_some(),
            },
            inputs,
        )
    }

    fn batch_norm(&mut self, x: &Var, gamma: &Var, beta: &Var, stats: &BatchNormParams<T>) -> Result<Var> {
        self.record(Op::BatchNorm { stats: stats.clone() }, vec![*x, *gamma, *beta])
    }

    fn gelu(&mut self, x: &Var) -> Result<Var> {
        self.record(Op::Gelu, vec![*x])
    }

    fn binary(&mut self, op: BinaryOp, a: &Var, b: &Var) -> Result<Var> {
        self.record(Op::Binary(op), vec![*a, *b])
    }

    fn roll(&mut self, x: &Var, shift: isize, axis: Axis) -> Result<Var> {
        self.record(Op::Roll { shift, axis }, vec![*x])
    }

    fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.record(Op::Concat, vec![*a, *b])
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        self.record(Op::GlobalAvgPool, vec![*x])
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape(shape.to_vec()), vec![*x])
    }

    fn max_relative(&mut self, x: &Var, table: &Arc<NeighborTable>) -> Result<Var> {
        self.record(Op::MaxRelative(Arc::clone(table)), vec![*x])
    }

    fn note_mask_margin(&mut self, margin: f64) {
        self.min_mask_margin = self.min_mask_margin.min(margin);
    }
}

/// Adjoints indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; zero-filled when `v` does not reach the loss.
    pub fn get(&self, tape: &Tape<T>, v: Var) -> Result<Tensor<T>> {
        let shape = tape.get(v)?.shape().to_vec();
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Ok(g.clone()),
            None => Tensor::zeros(&shape),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        SplitMix64::new(seed).tensor(shape, -1.0, 1.0)
    }

    /// Central differences of `loss` w.r.t. leaf `v`, replaying the tape.
    fn numeric(tape: &Tape<f64>, v: Var, loss: Var) -> Tensor<f64> {
        let base = tape.get(v).unwrap().clone();
        let h = 1e-5;
        Tensor::from_fn(base.shape(), |i| {
            let mut plus = base.to_vec();
            plus[i] += h;
            let mut minus = base.to_vec();
            minus[i] -= h;
            let f = |d: Vec<f64>| {
                let mut o = HashMap::new();
                o.insert(v, Tensor::from_vec(base.shape(), d).unwrap());
                tape.replay_value(&o, loss).unwrap().data()[0]
            };
            (f(plus) - f(minus)) / (2.0 * h)
        })
        .unwrap()
    }

    fn rel_err(a: &Tensor<f64>, n: &Tensor<f64>) -> f64 {
        let scale = a.data().iter().chain(n.data()).fold(1e-12f64, |m, v| m.max(v.abs()));
        a.max_abs_diff(n) / scale
    }

    /// Builds `loss = sum(op(...) * probe)` so every output element matters
    /// with a distinct weight, then compares against finite differences.
    fn check(build: impl Fn(&mut Tape<f64>, &[Var]) -> Var, shapes: &[&[usize]], seed: u64) {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| tape.param(&format!("p{i}"), &rand(s, seed + i as u64)))
            .collect();
        let out = build(&mut tape, &leaves);
        let probe = tape.constant(SplitMix64::new(seed + 99).tensor(tape.get(out).unwrap().shape(), 0.5, 1.5));
        let weighted = tape.binary(BinaryOp::Mul, &out, &probe).unwrap();
        let loss = tape.sum(weighted).unwrap();
        assert!(tape.min_max_gap() > 1e-3, "tie in max, reseed");
        let grads = tape.backward(loss).unwrap();
        for &v in &leaves {
            let a = grads.get(&tape, v).unwrap();
            let n = numeric(&tape, v, loss);
            let e = rel_err(&a, &n);
            assert!(e < 1e-4, "relative error {e}");
        }
        assert!(tape.replay_matches().unwrap());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param("x", &rand(&[2, 3], 1));
        let loss = tape.sum(x).unwrap();
        let g = tape.backward(loss).unwrap().get(&tape, x).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gelu_gradient_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::<f64>::zeros(&[1, 2, 2, 2]).unwrap());
        let y = tape.gelu(&x).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap().get(&tape, x).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn conv_gradients() {
        for (seed, geom, ws) in [
            (1, ConvGeom::new(1, 1, 1), [3usize, 2, 3, 3]),
            (2, ConvGeom::new(2, 1, 1), [3, 2, 3, 3]),
            (3, ConvGeom::new(1, 1, 2), [4, 1, 3, 3]),
            (4, ConvGeom::POINTWISE, [5, 2, 1, 1]),
        ] {
            let cin = ws[1] * geom.groups;
            check(
                |t, l| t.conv2d(&l[0], &l[1], Some(&l[2]), geom).unwrap(),
                &[&[2, cin, 5, 5], &ws, &[ws[0]]],
                seed,
            );
        }
    }

    #[test]
    fn batch_norm_gradients() {
        let stats = BatchNormParams::random(&mut SplitMix64::new(5), 3).unwrap();
        check(|t, l| t.batch_norm(&l[0], &l[1], &l[2], &stats).unwrap(), &[&[2, 3, 2, 2], &[3], &[3]], 10);
    }

    #[test]
    fn pointwise_gradients() {
        check(|t, l| t.gelu(&l[0]).unwrap(), &[&[1, 2, 3, 3]], 20);
        for op in [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul] {
            check(|t, l| t.binary(op, &l[0], &l[1]).unwrap(), &[&[2, 3, 2, 2], &[2, 3, 2, 2]], 21);
            check(|t, l| t.binary(op, &l[0], &l[1]).unwrap(), &[&[2, 3, 2, 2], &[2, 1, 2, 2]], 22);
        }
    }

    #[test]
    fn max_gradients_away_from_ties() {
        let mut seed = 30;
        loop {
            let a = rand(&[1, 2, 3, 3], seed);
            let b = rand(&[1, 2, 3, 3], seed + 1);
            if max_gap(&a, &b) > 1e-3 {
                break;
            }
            seed += 2;
        }
        check(|t, l| t.binary(BinaryOp::Max, &l[0], &l[1]).unwrap(), &[&[1, 2, 3, 3], &[1, 2, 3, 3]], seed);
    }

    #[test]
    fn structural_gradients() {
        check(|t, l| t.roll(&l[0], 2, Axis::Height).unwrap(), &[&[1, 2, 5, 3]], 40);
        check(|t, l| t.roll(&l[0], -1, Axis::Width).unwrap(), &[&[1, 2, 3, 4]], 41);
        check(|t, l| t.concat_channels(&l[0], &l[1]).unwrap(), &[&[2, 1, 3, 3], &[2, 2, 3, 3]], 42);
        check(|t, l| t.global_avg_pool(&l[0]).unwrap(), &[&[2, 3, 2, 4]], 43);
        check(|t, l| t.reshape(&l[0], &[2, 12]).unwrap(), &[&[2, 3, 2, 2]], 44);
        check(|t, l| {
            let m = t.mean(l[0]).unwrap();
            t.binary(BinaryOp::Mul, &m, &m).unwrap()
        }, &[&[2, 3]], 45);
    }

    #[test]
    fn max_relative_gradient() {
        let x = rand(&[1, 2, 3, 3], 50);
        let table = Arc::new(crate::graph::knn_neighbors(&x, 3).unwrap());
        check(|t, l| t.max_relative(&l[0], &table).unwrap(), &[&[1, 2, 3, 3]], 50);
    }

    #[test]
    fn untaped_var_is_an_error() {
        let mut other = Tape::<f64>::new();
        let _ = other.param("a", &rand(&[2], 1));
        let foreign = other.param("b", &rand(&[2], 2));
        let tape = Tape::<f64>::new();
        assert!(matches!(tape.backward(foreign), Err(Error::Tape(_))));
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", &rand(&[2], 1));
        assert!(matches!(tape.backward(x), Err(Error::Tape(_))));
    }

    #[test]
    fn eager_and_tape_agree_bitwise() {
        let x = rand(&[1, 2, 4, 4], 60);
        let w = rand(&[3, 2, 3, 3], 61);
        let stats = BatchNormParams::random(&mut SplitMix64::new(62), 3).unwrap();
        let mut e = Eager;
        let y = Exec::<f64>::conv2d(&mut e, &x, &w, None, ConvGeom::new(1, 1, 1)).unwrap();
        let y = e.batch_norm(&y, &stats.gamma, &stats.beta, &stats).unwrap();
        let eager = e.gelu(&y).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param("w", &w);
        let g = tape.param("g", &stats.gamma);
        let b = tape.param("b", &stats.beta);
        let y = tape.conv2d(&xv, &wv, None, ConvGeom::new(1, 1, 1)).unwrap();
        let y = tape.batch_norm(&y, &g, &b, &stats).unwrap();
        let y = tape.gelu(&y).unwrap();
        assert!(tape.get(y).unwrap().bit_eq(&eager));
        assert!(tape.replay_matches().unwrap());
    }
}

//! Network building blocks: grapher, FFN, MBConv, stem, downsample and head.
//!
//! Each block has a generic `*_on` form evaluated on any [`Exec`] backend and
//! an eager wrapper on plain tensors. Parameter names passed to
//! [`Exec::param`] are the same dotted paths the weight manifest uses.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Eager, Exec};
use crate::error::{Error, Result};
use crate::graph::{axial_aggregate, estimate_stats, knn_aggregate_on, stats_pair_count, GraphMethod, GraphSpec, MaskRule};
use crate::rng::SplitMix64;
use crate::tensor::ops::{BatchNormParams, ConvParams};
use crate::tensor::{ConvGeom, Element, Tensor};

pub const FFN_EXPANSION: usize = 4;
pub const MBCONV_EXPANSION: usize = 4;
/// Hidden width of the classifier MLP relative to the stage-4 width.
pub const HEAD_EXPANSION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Counted, saved and differentiated.
    Trainable,
    /// Saved but neither counted nor differentiated (BN running statistics).
    Buffer,
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything holding named tensors, visited depth-first in declaration order.
pub trait Module<T: Element>: Clone {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>));

    fn named_tensors(&self, prefix: &str) -> Vec<(String, ParamKind, Tensor<T>)> {
        let mut out = Vec::new();
        // Tensors share storage, so the clone is shallow.
        self.clone().visit_mut(prefix, &mut |name, kind, t| out.push((name.to_owned(), kind, t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        self.named_tensors("")
            .iter()
            .filter(|(_, kind, _)| *kind == ParamKind::Trainable)
            .map(|(_, _, t)| t.len())
            .sum()
    }
}

impl<T: Element> Module<T> for ConvParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), ParamKind::Trainable, &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), ParamKind::Trainable, b);
        }
    }
}

impl<T: Element> Module<T> for BatchNormParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), ParamKind::Trainable, &mut self.gamma);
        f(&join(prefix, "beta"), ParamKind::Trainable, &mut self.beta);
        f(&join(prefix, "running_mean"), ParamKind::Buffer, &mut self.running_mean);
        f(&join(prefix, "running_var"), ParamKind::Buffer, &mut self.running_var);
    }
}

/// How BN layers are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormInit {
    #[default]
    Identity,
    /// Random affine terms and running statistics.
    Random,
}

impl NormInit {
    fn make<T: Element>(self, rng: &mut SplitMix64, c: usize) -> Result<BatchNormParams<T>> {
        match self {
            NormInit::Identity => BatchNormParams::identity(c),
            NormInit::Random => BatchNormParams::random(rng, c),
        }
    }
}

/// A convolution followed by inference BN.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn<T: Element> {
    pub conv: ConvParams<T>,
    pub bn: BatchNormParams<T>,
}

impl<T: Element> ConvBn<T> {
    pub fn init(
        rng: &mut SplitMix64,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        geom: ConvGeom,
        norm: NormInit,
    ) -> Result<Self> {
        let conv = ConvParams::init(rng, in_ch, out_ch, kernel, geom)?;
        let bn = norm.make(rng, out_ch)?;
        Ok(Self { conv, bn })
    }

    pub fn pointwise(rng: &mut SplitMix64, in_ch: usize, out_ch: usize, norm: NormInit) -> Result<Self> {
        Self::init(rng, in_ch, out_ch, 1, ConvGeom::POINTWISE, norm)
    }

    /// Zeroes the convolution and the BN shift so the unit outputs exactly zero
    /// (given zero running mean).
    pub fn zero_output(&mut self) -> Result<()> {
        self.conv.weight = Tensor::zeros(self.conv.weight.shape())?;
        if let Some(b) = &mut self.conv.bias {
            *b = Tensor::zeros(b.shape())?;
        }
        self.bn.beta = Tensor::zeros(self.bn.beta.shape())?;
        Ok(())
    }
}

impl<T: Element> Module<T> for ConvBn<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.conv.visit_mut(prefix, f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrapherParams<T: Element> {
    /// Depthwise 3x3 positional encoding; `None` drops CPE entirely.
    pub cpe: Option<ConvParams<T>>,
    pub w_in: ConvBn<T>,
    /// 1x1 conv over `concat(x, x_final)`, 2C -> C.
    pub dyn_out: ConvBn<T>,
    pub w_out: ConvBn<T>,
}

impl<T: Element> GrapherParams<T> {
    pub fn init(rng: &mut SplitMix64, c: usize, use_cpe: bool, norm: NormInit) -> Result<Self> {
        let cpe = if use_cpe {
            Some(ConvParams::init(rng, c, c, 3, ConvGeom::new(1, 1, c))?)
        } else {
            None
        };
        Ok(Self {
            cpe,
            w_in: ConvBn::pointwise(rng, c, c, norm)?,
            dyn_out: ConvBn::pointwise(rng, 2 * c, c, norm)?,
            w_out: ConvBn::pointwise(rng, c, c, norm)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.w_in.conv.out_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let mut checks = vec![
            ("w_in", &self.w_in.conv, c, c),
            ("dyn_out", &self.dyn_out.conv, 2 * c, c),
            ("w_out", &self.w_out.conv, c, c),
        ];
        if let Some(cpe) = &self.cpe {
            checks.push(("cpe", cpe, c, c));
        }
        for (name, conv, cin, cout) in checks {
            if conv.in_channels() != cin || conv.out_channels() != cout {
                return Err(Error::config(format!(
                    "grapher {name} is {}->{}, block width {c} needs {cin}->{cout}",
                    conv.in_channels(),
                    conv.out_channels()
                )));
            }
        }
        Ok(())
    }
}

impl<T: Element> Module<T> for GrapherParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        if let Some(cpe) = &mut self.cpe {
            cpe.visit_mut(&join(prefix, "cpe"), f);
        }
        self.w_in.visit_mut(&join(prefix, "w_in"), f);
        self.dyn_out.visit_mut(&join(prefix, "dyn_out"), f);
        self.w_out.visit_mut(&join(prefix, "w_out"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams<T: Element> {
    pub w1: ConvBn<T>,
    pub w2: ConvBn<T>,
}

impl<T: Element> FfnParams<T> {
    pub fn init(rng: &mut SplitMix64, c: usize, expansion: usize, norm: NormInit) -> Result<Self> {
        Ok(Self {
            w1: ConvBn::pointwise(rng, c, expansion * c, norm)?,
            w2: ConvBn::pointwise(rng, expansion * c, c, norm)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w1.conv.out_channels()
    }
}

impl<T: Element> Module<T> for FfnParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.w1.visit_mut(&join(prefix, "w1"), f);
        self.w2.visit_mut(&join(prefix, "w2"), f);
    }
}

/// Dynamic Grapher followed by FFN.
#[derive(Debug, Clone, PartialEq)]
pub struct DagcBlockParams<T: Element> {
    pub grapher: GrapherParams<T>,
    pub ffn: FfnParams<T>,
}

impl<T: Element> DagcBlockParams<T> {
    pub fn init(rng: &mut SplitMix64, c: usize, use_cpe: bool, norm: NormInit) -> Result<Self> {
        Ok(Self {
            grapher: GrapherParams::init(rng, c, use_cpe, norm)?,
            ffn: FfnParams::init(rng, c, FFN_EXPANSION, norm)?,
        })
    }
}

impl<T: Element> Module<T> for DagcBlockParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.grapher.visit_mut(&join(prefix, "grapher"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbconvParams<T: Element> {
    pub expand: ConvBn<T>,
    pub dw: ConvBn<T>,
    pub project: ConvBn<T>,
}

impl<T: Element> MbconvParams<T> {
    pub fn init(rng: &mut SplitMix64, c: usize, expansion: usize, norm: NormInit) -> Result<Self> {
        let hidden = expansion * c;
        Ok(Self {
            expand: ConvBn::pointwise(rng, c, hidden, norm)?,
            dw: ConvBn::init(rng, hidden, hidden, 3, ConvGeom::new(1, 1, hidden), norm)?,
            project: ConvBn::pointwise(rng, hidden, c, norm)?,
        })
    }
}

impl<T: Element> Module<T> for MbconvParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.expand.visit_mut(&join(prefix, "expand"), f);
        self.dw.visit_mut(&join(prefix, "dw"), f);
        self.project.visit_mut(&join(prefix, "project"), f);
    }
}

/// Two stride-2 3x3 conv-BN-GeLU units, 3 -> C/2 -> C.
#[derive(Debug, Clone, PartialEq)]
pub struct StemParams<T: Element> {
    pub conv1: ConvBn<T>,
    pub conv2: ConvBn<T>,
}

impl<T: Element> StemParams<T> {
    pub fn init(rng: &mut SplitMix64, in_ch: usize, c: usize, norm: NormInit) -> Result<Self> {
        if c < 2 {
            return Err(Error::config(format!("stem width {c} leaves no intermediate channels")));
        }
        let geom = ConvGeom::new(2, 1, 1);
        Ok(Self {
            conv1: ConvBn::init(rng, in_ch, c / 2, 3, geom, norm)?,
            conv2: ConvBn::init(rng, c / 2, c, 3, geom, norm)?,
        })
    }
}

impl<T: Element> Module<T> for StemParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
    }
}

/// Stride-2 3x3 conv + BN between stages.
#[derive(Debug, Clone, PartialEq)]
pub struct DownsampleParams<T: Element> {
    pub conv: ConvBn<T>,
}

impl<T: Element> DownsampleParams<T> {
    pub fn init(rng: &mut SplitMix64, in_ch: usize, out_ch: usize, norm: NormInit) -> Result<Self> {
        Ok(Self {
            conv: ConvBn::init(rng, in_ch, out_ch, 3, ConvGeom::new(2, 1, 1), norm)?,
        })
    }
}

impl<T: Element> Module<T> for DownsampleParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.conv.visit_mut(prefix, f);
    }
}

/// Global average pool, then a two-layer MLP (as 1x1 convs) to the class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T: Element> {
    pub fc1: ConvParams<T>,
    pub fc2: ConvParams<T>,
}

impl<T: Element> HeadParams<T> {
    pub fn init(rng: &mut SplitMix64, c: usize, classes: usize) -> Result<Self> {
        if classes < 1 {
            return Err(Error::config("head needs at least one class"));
        }
        let hidden = HEAD_EXPANSION * c;
        Ok(Self {
            fc1: ConvParams::init(rng, c, hidden, 1, ConvGeom::POINTWISE)?,
            fc2: ConvParams::init(rng, hidden, classes, 1, ConvGeom::POINTWISE)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.fc2.out_channels()
    }
}

impl<T: Element> Module<T> for HeadParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// What one graph aggregation did, per image where it varies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateInfo {
    pub method: GraphMethod,
    pub k: usize,
    pub height: usize,
    pub width: usize,
    pub connections_per_image: Vec<u64>,
    pub comparisons: u64,
    pub stats_comparisons: u64,
}

fn channels_of(x: &Tensor<impl Element>, op: &'static str, expected: usize) -> Result<(usize, usize, usize, usize)> {
    let dims = x.dims4(op)?;
    if dims.1 != expected {
        return Err(Error::dim(op, "channels", format!("expected {expected} channels, got {}", dims.1)));
    }
    Ok(dims)
}

pub fn conv_on<T: Element, E: Exec<T>>(exec: &mut E, prefix: &str, p: &ConvParams<T>, x: &E::Value) -> Result<E::Value> {
    let w = exec.param(&join(prefix, "weight"), &p.weight);
    let b = p.bias.as_ref().map(|b| exec.param(&join(prefix, "bias"), b));
    exec.conv2d(x, &w, b.as_ref(), p.geom)
}

pub fn conv_bn_on<T: Element, E: Exec<T>>(exec: &mut E, prefix: &str, p: &ConvBn<T>, x: &E::Value) -> Result<E::Value> {
    let y = conv_on(exec, prefix, &p.conv, x)?;
    let bn = join(prefix, "bn");
    let gamma = exec.param(&join(&bn, "gamma"), &p.bn.gamma);
    let beta = exec.param(&join(&bn, "beta"), &p.bn.beta);
    exec.batch_norm(&y, &gamma, &beta, &p.bn)
}

fn conv_bn_gelu_on<T: Element, E: Exec<T>>(exec: &mut E, prefix: &str, p: &ConvBn<T>, x: &E::Value) -> Result<E::Value> {
    let y = conv_bn_on(exec, prefix, p, x)?;
    exec.gelu(&y)
}

/// `x + depthwise3x3(x)`.
pub fn cpe_on<T: Element, E: Exec<T>>(exec: &mut E, prefix: &str, p: &ConvParams<T>, x: &E::Value) -> Result<E::Value> {
    channels_of(&exec.value(x), "cpe", p.out_channels())?;
    let enc = conv_on(exec, prefix, p, x)?;
    exec.binary(crate::tensor::BinaryOp::Add, x, &enc)
}

/// Graph aggregation of `x` by `spec`, then BN(conv1x1(concat(x, x_final))).
///
/// Statistics, thresholds and masks are taken from the current value of `x`
/// and enter the computation as constants.
pub fn dyn_conv_on<T: Element, E: Exec<T>>(
    exec: &mut E,
    prefix: &str,
    spec: GraphSpec,
    p: &ConvBn<T>,
    x: &E::Value,
) -> Result<(E::Value, AggregateInfo)> {
    let xv = exec.value(x);
    let (n, _, h, w) = channels_of(&xv, "dyn_conv", p.conv.in_channels() / 2)?;
    let mut info = AggregateInfo {
        method: spec.method,
        k: spec.k,
        height: h,
        width: w,
        connections_per_image: vec![0; n],
        comparisons: 0,
        stats_comparisons: 0,
    };
    let x_final = match spec.method {
        GraphMethod::Dagc | GraphMethod::Svga => {
            let rule = if spec.method == GraphMethod::Dagc {
                let stats = estimate_stats(&xv)?;
                info.stats_comparisons = n as u64 * stats_pair_count(h, w);
                MaskRule::Threshold(stats.iter().map(|s| s.threshold()).collect())
            } else {
                MaskRule::Static
            };
            let (out, trace) = axial_aggregate(exec, x, spec.k, &rule)?;
            info.connections_per_image = trace.connections_per_image;
            info.comparisons = trace.comparisons;
            out
        }
        GraphMethod::Knn => {
            // Inside a model the neighbor count shrinks to fit small maps.
            let k = spec.k.min(h * w - 1);
            if k == 0 {
                exec.constant(Tensor::zeros(xv.shape())?)
            } else {
                let (out, table) = knn_aggregate_on(exec, x, k)?;
                info.connections_per_image = vec![(h * w * k) as u64; n];
                info.comparisons = table.comparisons;
                out
            }
        }
    };
    let cat = exec.concat_channels(x, &x_final)?;
    Ok((conv_bn_on(exec, prefix, p, &cat)?, info))
}

/// cpe -> w_in (+BN) -> dyn_conv -> GeLU -> w_out (+BN) -> + x
pub fn dynamic_grapher_on<T: Element, E: Exec<T>>(
    exec: &mut E,
    prefix: &str,
    spec: GraphSpec,
    p: &GrapherParams<T>,
    x: &E::Value,
) -> Result<(E::Value, AggregateInfo)> {
    channels_of(&exec.value(x), "dynamic_grapher", p.channels())?;
    let h = match &p.cpe {
        Some(cpe) => cpe_on(exec, &join(prefix, "cpe"), cpe, x)?,
        None => x.clone(),
    };
    let h = conv_bn_on(exec, &join(prefix, "w_in"), &p.w_in, &h)?;
    let (h, info) = dyn_conv_on(exec, &join(prefix, "dyn_out"), spec, &p.dyn_out, &h)?;
    let h = exec.gelu(&h)?;
    let h = conv_bn_on(exec, &join(prefix, "w_out"), &p.w_out, &h)?;
    Ok((exec.binary(crate::tensor::BinaryOp::Add, &h, x)?, info))
}

/// `w2(GeLU(w1(y))) + y`, BN after each 1x1.
pub fn ffn_on<T: Element, E: Exec<T>>(exec: &mut E, prefix: &str, p: &FfnParams<T>, y: &E::Value) -> Result<E::Value> {
    channels_of(&exec.value(y), "ffn", p.w1.conv.in_channels())?;
    let h = conv_bn_gelu_on(exec, &join(prefix, "w1"), &p.w1, y)?;
    let h = conv_bn_on(exec, &join(prefix, "w2"), &p.w2, &h)?;
    exec.binary(crate::tensor::BinaryOp::Add, &h, y)
}

pub fn dagc_block_on<T: Element, E: Exec<T>>(
    exec: &mut E,
    prefix: &str,
    spec: GraphSpec,
    p: &DagcBlockParams<T>,
    x: &E::Value,
) -> Result<(E::Value, AggregateInfo)> {
    let (y, info) = dynamic_grapher_on(exec, &join(prefix, "grapher"), spec, &p.grapher, x)?;
    Ok((ffn_on(exec, &join(prefix, "ffn"), &p.ffn, &y)?, info))
}

/// expand -> BN -> GeLU -> dw -> BN -> GeLU -> project -> BN, plus residual.
pub fn mbconv_on<T: Element, E: Exec<T>>(exec: &mut E, prefix: &str, p: &MbconvParams<T>, x: &E::Value) -> Result<E::Value> {
    let c = p.expand.conv.in_channels();
    if p.project.conv.out_channels() != c {
        return Err(Error::config(format!(
            "mbconv maps {c} channels to {}, residual needs equal widths",
            p.project.conv.out_channels()
        )));
    }
    channels_of(&exec.value(x), "mbconv", c)?;
    let h = conv_bn_gelu_on(exec, &join(prefix, "expand"), &p.expand, x)?;
    let h = conv_bn_gelu_on(exec, &join(prefix, "dw"), &p.dw, &h)?;
    let h = conv_bn_on(exec, &join(prefix, "project"), &p.project, &h)?;
    exec.binary(crate::tensor::BinaryOp::Add, &h, x)
}

pub fn stem_on<T: Element, E: Exec<T>>(exec: &mut E, prefix: &str, p: &StemParams<T>, x: &E::Value) -> Result<E::Value> {
    let (_, _, h, w) = channels_of(&exec.value(x), "stem", p.conv1.conv.in_channels())?;
    for (axis, e) in [("height", h), ("width", w)] {
        if e % 4 != 0 {
            return Err(Error::dim("stem", axis, format!("extent {e} is not divisible by 4")));
        }
    }
    let y = conv_bn_gelu_on(exec, &join(prefix, "conv1"), &p.conv1, x)?;
    conv_bn_gelu_on(exec, &join(prefix, "conv2"), &p.conv2, &y)
}

pub fn downsample_on<T: Element, E: Exec<T>>(
    exec: &mut E,
    prefix: &str,
    p: &DownsampleParams<T>,
    x: &E::Value,
) -> Result<E::Value> {
    let (_, _, h, w) = channels_of(&exec.value(x), "downsample", p.conv.conv.in_channels())?;
    for (axis, e) in [("height", h), ("width", w)] {
        if e % 2 != 0 {
            return Err(Error::dim("downsample", axis, format!("extent {e} is odd")));
        }
    }
    conv_bn_on(exec, prefix, &p.conv, x)
}

/// Logits of shape `(N, classes)`.
pub fn head_on<T: Element, E: Exec<T>>(exec: &mut E, prefix: &str, p: &HeadParams<T>, x: &E::Value) -> Result<E::Value> {
    let (n, ..) = channels_of(&exec.value(x), "head", p.fc1.in_channels())?;
    let pooled = exec.global_avg_pool(x)?;
    let h = conv_on(exec, &join(prefix, "fc1"), &p.fc1, &pooled)?;
    let h = exec.gelu(&h)?;
    let logits = conv_on(exec, &join(prefix, "fc2"), &p.fc2, &h)?;
    exec.reshape(&logits, &[n, p.classes()])
}

pub fn cpe<T: Element>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    cpe_on(&mut Eager, "", p, x)
}

pub fn dyn_conv<T: Element>(x: &Tensor<T>, k: usize, p: &ConvBn<T>) -> Result<Tensor<T>> {
    Ok(dyn_conv_on(&mut Eager, "", GraphSpec::new(GraphMethod::Dagc, k)?, p, x)?.0)
}

pub fn dynamic_grapher<T: Element>(x: &Tensor<T>, k: usize, p: &GrapherParams<T>) -> Result<Tensor<T>> {
    Ok(dynamic_grapher_on(&mut Eager, "", GraphSpec::new(GraphMethod::Dagc, k)?, p, x)?.0)
}

pub fn ffn<T: Element>(y: &Tensor<T>, p: &FfnParams<T>) -> Result<Tensor<T>> {
    ffn_on(&mut Eager, "", p, y)
}

pub fn dagc_block<T: Element>(x: &Tensor<T>, k: usize, p: &DagcBlockParams<T>) -> Result<Tensor<T>> {
    Ok(dagc_block_on(&mut Eager, "", GraphSpec::new(GraphMethod::Dagc, k)?, p, x)?.0)
}

pub fn mbconv<T: Element>(x: &Tensor<T>, p: &MbconvParams<T>) -> Result<Tensor<T>> {
    mbconv_on(&mut Eager, "", p, x)
}

pub fn stem<T: Element>(image: &Tensor<T>, p: &StemParams<T>) -> Result<Tensor<T>> {
    stem_on(&mut Eager, "", p, image)
}

pub fn downsample<T: Element>(x: &Tensor<T>, p: &DownsampleParams<T>) -> Result<Tensor<T>> {
    downsample_on(&mut Eager, "", p, x)
}

pub fn head<T: Element>(x: &Tensor<T>, p: &HeadParams<T>) -> Result<Tensor<T>> {
    head_on(&mut Eager, "", p, x)
}

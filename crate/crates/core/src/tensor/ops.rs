//! Primitive tensor operations and their adjoint kernels.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use super::{Element, Tensor};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Stride, zero padding and channel grouping of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub const POINTWISE: ConvGeom = ConvGeom {
        stride: 1,
        padding: 0,
        groups: 1,
    };

    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T: Element> {
    /// `(out_ch, in_ch / groups, kh, kw)`
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geom: ConvGeom,
}

impl<T: Element> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>, geom: ConvGeom) -> Result<Self> {
        let p = Self { weight, bias, geom };
        p.validate()?;
        Ok(p)
    }

    /// Fan-in uniform initialization of weight and bias.
    pub fn init(
        rng: &mut SplitMix64,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        geom: ConvGeom,
    ) -> Result<Self> {
        if geom.groups == 0 || in_ch % geom.groups != 0 || out_ch % geom.groups != 0 {
            return Err(Error::config(format!(
                "channels {in_ch}->{out_ch} not divisible by groups {}",
                geom.groups
            )));
        }
        let per_group = in_ch / geom.groups;
        let fan_in = per_group * kernel * kernel;
        let weight = rng.fan_in_uniform(&[out_ch, per_group, kernel, kernel], fan_in);
        let bias = rng.fan_in_uniform(&[out_ch], fan_in);
        Self::new(weight, Some(bias), geom)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.geom.groups
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn validate(&self) -> Result<()> {
        let ws = self.weight.shape();
        if ws.len() != 4 {
            return Err(Error::dim("conv2d", "weight", format!("weight must be rank 4, got {ws:?}")));
        }
        let g = self.geom;
        if g.stride == 0 || g.groups == 0 {
            return Err(Error::config("conv stride and groups must be positive"));
        }
        if ws[0] % g.groups != 0 {
            return Err(Error::config(format!(
                "out channels {} not divisible by groups {}",
                ws[0], g.groups
            )));
        }
        if let Some(b) = &self.bias {
            if b.shape() != [ws[0]] {
                return Err(Error::dim(
                    "conv2d",
                    "bias",
                    format!("bias shape {:?} does not match {} out channels", b.shape(), ws[0]),
                ));
            }
        }
        Ok(())
    }
}

/// Inference-form batch normalization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: T,
}

impl<T: Element> BatchNormParams<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;

    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::ones(&[channels])?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::ones(&[channels])?,
            eps: T::from_f64(Self::DEFAULT_EPS),
        })
    }

    /// Non-trivial statistics and affine terms, for tests that must see BN do something.
    pub fn random(rng: &mut SplitMix64, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: rng.tensor(&[channels], 0.5, 1.5),
            beta: rng.tensor(&[channels], -0.5, 0.5),
            running_mean: rng.tensor(&[channels], -0.2, 0.2),
            running_var: rng.tensor(&[channels], 0.5, 2.0),
            eps: T::from_f64(Self::DEFAULT_EPS),
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        for (name, t) in [
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if t.shape() != [c] {
                return Err(Error::dim(
                    "batch_norm",
                    "channels",
                    format!("{name} has shape {:?}, gamma has {c} channels", t.shape()),
                ));
            }
        }
        if self.running_var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::config("running_var must be non-negative"));
        }
        if self.eps < T::zero() {
            return Err(Error::config("batch norm epsilon must be non-negative"));
        }
        Ok(())
    }

    /// Per-channel `(scale, shift)` with `out = (x - mean) * scale + beta`.
    fn scale(&self) -> Vec<T> {
        self.gamma
            .data()
            .iter()
            .zip(self.running_var.data())
            .map(|(&g, &v)| g / (v + self.eps).sqrt())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    Height,
    Width,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Height => "height",
            Axis::Width => "width",
        }
    }

    /// Tensor axis index in NCHW.
    pub fn index(self) -> usize {
        match self {
            Axis::Height => 2,
            Axis::Width => 3,
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            2 => Ok(Axis::Height),
            3 => Ok(Axis::Width),
            _ => Err(Error::config(format!(
                "roll axis {index} is not a spatial axis (expected 2=height or 3=width)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Max,
}

impl BinaryOp {
    #[inline]
    pub fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            // Ties resolve to `a`; NaN in `b` is ignored.
            BinaryOp::Max => {
                if a >= b || b.is_nan() {
                    a
                } else {
                    b
                }
            }
        }
    }
}

fn out_extent(op: &'static str, axis: &'static str, input: usize, k: usize, g: ConvGeom) -> Result<usize> {
    let padded = input + 2 * g.padding;
    if padded < k {
        return Err(Error::dim(
            op,
            axis,
            format!("padded extent {padded} is smaller than kernel {k}"),
        ));
    }
    Ok((padded - k) / g.stride + 1)
}

/// Output positions `o` in `[lo, hi)` whose input tap `o*stride + off - pad` is in bounds.
#[inline]
fn tap_range(out_len: usize, in_len: usize, off: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > off { (pad - off).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > off {
        ((in_len + pad - off - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct ConvShape {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cg: usize,
    og: usize,
}

fn conv_shape<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, g: ConvGeom) -> Result<ConvShape> {
    let (n, c, h, w) = x.dims4("conv2d")?;
    let ws = weight.shape();
    if ws.len() != 4 {
        return Err(Error::dim("conv2d", "weight", format!("weight must be rank 4, got {ws:?}")));
    }
    if g.stride == 0 || g.groups == 0 {
        return Err(Error::config("conv stride and groups must be positive"));
    }
    if c % g.groups != 0 || ws[0] % g.groups != 0 {
        return Err(Error::config(format!(
            "channels {c}->{} not divisible by groups {}",
            ws[0], g.groups
        )));
    }
    let cg = c / g.groups;
    if ws[1] != cg {
        return Err(Error::dim(
            "conv2d",
            "channels",
            format!("input has {c} channels ({cg} per group) but weight expects {} per group", ws[1]),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [ws[0]] {
            return Err(Error::dim("conv2d", "bias", format!("bias shape {:?} for {} outputs", b.shape(), ws[0])));
        }
    }
    let oh = out_extent("conv2d", "height", h, ws[2], g)?;
    let ow = out_extent("conv2d", "width", w, ws[3], g)?;
    Ok(ConvShape {
        n,
        c,
        h,
        w,
        o: ws[0],
        kh: ws[2],
        kw: ws[3],
        oh,
        ow,
        cg,
        og: ws[0] / g.groups,
    })
}

/// Direct NCHW convolution (cross-correlation) with zero padding.
pub fn conv2d_raw<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Result<Tensor<T>> {
    let s = conv_shape(x, weight, bias, g)?;
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![T::zero(); s.n * s.o * s.oh * s.ow];
    let plane = s.oh * s.ow;
    for n in 0..s.n {
        for o in 0..s.o {
            let grp = o / s.og;
            let dst = &mut out[(n * s.o + o) * plane..][..plane];
            if let Some(b) = bias {
                dst.fill(b.data()[o]);
            }
            for icl in 0..s.cg {
                let ic = grp * s.cg + icl;
                let src = &xd[(n * s.c + ic) * s.h * s.w..][..s.h * s.w];
                for ki in 0..s.kh {
                    let (y0, y1) = tap_range(s.oh, s.h, ki, g.padding, g.stride);
                    for kj in 0..s.kw {
                        let wv = wd[((o * s.cg + icl) * s.kh + ki) * s.kw + kj];
                        let (x0, x1) = tap_range(s.ow, s.w, kj, g.padding, g.stride);
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ki - g.padding;
                            let out_row = &mut dst[oy * s.ow..][..s.ow];
                            let in_row = &src[iy * s.w..][..s.w];
                            if g.stride == 1 {
                                let shift = kj as isize - g.padding as isize;
                                let in_slice = &in_row[(x0 as isize + shift) as usize..(x1 as isize + shift) as usize];
                                for (d, &v) in out_row[x0..x1].iter_mut().zip(in_slice) {
                                    *d = *d + wv * v;
                                }
                            } else {
                                for ox in x0..x1 {
                                    let ix = ox * g.stride + kj - g.padding;
                                    out_row[ox] = out_row[ox] + wv * in_row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[s.n, s.o, s.oh, s.ow], out)
}

/// Adjoints of [`conv2d_raw`]: `(d_input, d_weight, d_bias)`.
pub(crate) fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    with_bias: bool,
    g: ConvGeom,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let s = conv_shape(x, weight, None, g)?;
    let xd = x.data();
    let wd = weight.data();
    let dyd = dy.data();
    let mut dx = vec![T::zero(); xd.len()];
    let mut dw = vec![T::zero(); wd.len()];
    let plane = s.oh * s.ow;
    for n in 0..s.n {
        for o in 0..s.o {
            let grp = o / s.og;
            let gy = &dyd[(n * s.o + o) * plane..][..plane];
            for icl in 0..s.cg {
                let ic = grp * s.cg + icl;
                let base = (n * s.c + ic) * s.h * s.w;
                for ki in 0..s.kh {
                    let (y0, y1) = tap_range(s.oh, s.h, ki, g.padding, g.stride);
                    for kj in 0..s.kw {
                        let widx = ((o * s.cg + icl) * s.kh + ki) * s.kw + kj;
                        let wv = wd[widx];
                        let (x0, x1) = tap_range(s.ow, s.w, kj, g.padding, g.stride);
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ki - g.padding;
                            for ox in x0..x1 {
                                let ix = ox * g.stride + kj - g.padding;
                                let gv = gy[oy * s.ow + ox];
                                let xi = base + iy * s.w + ix;
                                acc = acc + gv * xd[xi];
                                dx[xi] = dx[xi] + gv * wv;
                            }
                        }
                        dw[widx] = dw[widx] + acc;
                    }
                }
            }
        }
    }
    let db = if with_bias {
        let mut db = vec![T::zero(); s.o];
        for n in 0..s.n {
            for (o, slot) in db.iter_mut().enumerate() {
                let gy = &dyd[(n * s.o + o) * plane..][..plane];
                *slot = gy.iter().fold(*slot, |a, &v| a + v);
            }
        }
        Some(Tensor::from_vec(&[s.o], db)?)
    } else {
        None
    };
    Ok((
        Tensor::from_vec(x.shape(), dx)?,
        Tensor::from_vec(weight.shape(), dw)?,
        db,
    ))
}

pub fn conv2d<T: Element>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d_raw(x, &p.weight, p.bias.as_ref(), p.geom)
}

/// Per-channel spatial filtering; `p.geom.groups` must equal the channel count.
pub fn depthwise_conv2d<T: Element>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let (_, c, _, _) = x.dims4("depthwise_conv2d")?;
    if p.geom.groups != c {
        return Err(Error::config(format!(
            "depthwise conv needs groups == channels, got groups {} for {c} channels",
            p.geom.groups
        )));
    }
    if p.weight.shape()[1] != 1 {
        return Err(Error::config("depthwise conv needs one input channel per kernel"));
    }
    conv2d(x, p)
}

fn bn_check<T: Element>(x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4("batch_norm")?;
    p.validate()?;
    if p.channels() != c {
        return Err(Error::dim(
            "batch_norm",
            "channels",
            format!("input has {c} channels, parameters have {}", p.channels()),
        ));
    }
    Ok((n, c, h * w))
}

pub fn batch_norm<T: Element>(x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<Tensor<T>> {
    let (n, c, plane) = bn_check(x, p)?;
    let scale = p.scale();
    let (mean, beta) = (p.running_mean.data(), p.beta.data());
    let xd = x.data();
    let mut out = Vec::with_capacity(xd.len());
    for i in 0..n * c {
        let ch = i % c;
        let (m, sc, b) = (mean[ch], scale[ch], beta[ch]);
        out.extend(xd[i * plane..][..plane].iter().map(|&v| (v - m) * sc + b));
    }
    Tensor::from_vec(x.shape(), out)
}

/// Adjoints of [`batch_norm`] w.r.t. `(x, gamma, beta)`; running statistics are constants.
pub(crate) fn batch_norm_backward<T: Element>(
    x: &Tensor<T>,
    p: &BatchNormParams<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, plane) = bn_check(x, p)?;
    let scale = p.scale();
    let mean = p.running_mean.data();
    let xd = x.data();
    let dyd = dy.data();
    let mut dx = Vec::with_capacity(xd.len());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for i in 0..n * c {
        let ch = i % c;
        let inv_std = (p.running_var.data()[ch] + p.eps).sqrt().recip();
        let xs = &xd[i * plane..][..plane];
        let gs = &dyd[i * plane..][..plane];
        for (&xv, &gv) in xs.iter().zip(gs) {
            dx.push(gv * scale[ch]);
            dgamma[ch] = dgamma[ch] + gv * (xv - mean[ch]) * inv_std;
            dbeta[ch] = dbeta[ch] + gv;
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), dx)?,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

/// Exact GeLU, `x * Phi(x)` with the erf form of the normal CDF.
#[inline]
pub fn gelu_scalar<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    x * half * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

/// `Phi(x) + x * phi(x)`.
#[inline]
pub fn gelu_grad_scalar<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(1.0 / (2.0 * PI).sqrt());
    cdf + x * pdf
}

pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

/// Circular shift along a spatial axis: `out[i] = x[(i - shift) mod extent]`.
pub fn roll<T: Element>(x: &Tensor<T>, shift: isize, axis: Axis) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("roll")?;
    let extent = match axis {
        Axis::Height => h,
        Axis::Width => w,
    };
    let s = shift.rem_euclid(extent as isize) as usize;
    let xd = x.data();
    if s == 0 {
        return Tensor::from_vec(x.shape(), xd.to_vec());
    }
    let mut out = Vec::with_capacity(xd.len());
    for plane in xd.chunks_exact(h * w).take(n * c) {
        match axis {
            Axis::Height => {
                // Rows [h - s, h) move to the top.
                out.extend_from_slice(&plane[(h - s) * w..]);
                out.extend_from_slice(&plane[..(h - s) * w]);
            }
            Axis::Width => {
                for row in plane.chunks_exact(w) {
                    out.extend_from_slice(&row[w - s..]);
                    out.extend_from_slice(&row[..w - s]);
                }
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// `a op b`, with `b` either the same shape as `a` or rank 4 with a single
/// channel that broadcasts across `a`'s channels.
pub fn elementwise<T: Element>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ad, bd) = (a.data(), b.data());
    if a.shape() == b.shape() {
        let out = ad.iter().zip(bd).map(|(&x, &y)| op.apply(x, y)).collect();
        return Tensor::from_vec(a.shape(), out);
    }
    let (n, c, plane) = broadcast_dims(a, b)?;
    let mut out = Vec::with_capacity(ad.len());
    for ni in 0..n {
        let bs = &bd[ni * plane..][..plane];
        for ci in 0..c {
            let as_ = &ad[(ni * c + ci) * plane..][..plane];
            out.extend(as_.iter().zip(bs).map(|(&x, &y)| op.apply(x, y)));
        }
    }
    Tensor::from_vec(a.shape(), out)
}

/// `(N, C, H*W)` when `b` is `a` with a singleton channel axis.
pub(crate) fn broadcast_dims<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = a.dims4("elementwise")?;
    match b.shape() {
        &[bn, 1, bh, bw] if bn == n && bh == h && bw == w => Ok((n, c, h * w)),
        bs => Err(Error::dim(
            "elementwise",
            "channels",
            format!("shape {bs:?} does not broadcast to {:?}", a.shape()),
        )),
    }
}

pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = a.dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
    for (axis, x, y) in [("batch", n, nb), ("height", h, hb), ("width", w, wb)] {
        if x != y {
            return Err(Error::dim("concat_channels", axis, format!("{x} vs {y}")));
        }
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for ni in 0..n {
        out.extend_from_slice(&a.data()[ni * ca * plane..][..ca * plane]);
        out.extend_from_slice(&b.data()[ni * cb * plane..][..cb * plane]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], out)
}

/// Channels `[start, start + len)`.
pub fn slice_channels<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("slice_channels")?;
    if len == 0 || start + len > c {
        return Err(Error::dim(
            "slice_channels",
            "channels",
            format!("range {start}..{} outside {c} channels", start + len),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    for ni in 0..n {
        out.extend_from_slice(&x.data()[(ni * c + start) * plane..][..len * plane]);
    }
    Tensor::from_vec(&[n, len, h, w], out)
}

/// Mean over H x W, giving `(N, C, 1, 1)`.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let count = T::from_f64((h * w) as f64);
    let out = x
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) / count)
        .collect();
    Tensor::from_vec(&[n, c, 1, 1], out)
}

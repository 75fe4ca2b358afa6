use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::autodiff::{Eager, Exec};
use crate::blocks::{
    dagc_block_on, downsample_on, head_on, mbconv_on, stem_on, AggregateInfo, DagcBlockParams, DownsampleParams, HeadParams,
    MbconvParams, Module, NormInit, ParamKind, StemParams, MBCONV_EXPANSION,
};
use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::rng::SplitMix64;
use crate::tensor::gvt::{decode_bundle, encode_bundle};
use crate::tensor::{DynTensor, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Stem,
    Mbconv,
    Dagc,
    Downsample,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Unit<T: Element> {
    Stem(StemParams<T>),
    Mbconv { stage: usize, params: MbconvParams<T> },
    Dagc { stage: usize, spec: GraphSpec, params: DagcBlockParams<T> },
    /// Into `stage`.
    Downsample { stage: usize, params: DownsampleParams<T> },
    Head(HeadParams<T>),
}

impl<T: Element> Unit<T> {
    pub fn kind(&self) -> UnitKind {
        match self {
            Unit::Stem(_) => UnitKind::Stem,
            Unit::Mbconv { .. } => UnitKind::Mbconv,
            Unit::Dagc { .. } => UnitKind::Dagc,
            Unit::Downsample { .. } => UnitKind::Downsample,
            Unit::Head(_) => UnitKind::Head,
        }
    }

    /// Stage index (0-based) the unit belongs to; `None` for stem and head.
    pub fn stage(&self) -> Option<usize> {
        match self {
            Unit::Mbconv { stage, .. } | Unit::Dagc { stage, .. } | Unit::Downsample { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        match self {
            Unit::Stem(p) => p.visit_mut(prefix, f),
            Unit::Mbconv { params, .. } => params.visit_mut(prefix, f),
            Unit::Dagc { params, .. } => params.visit_mut(prefix, f),
            Unit::Downsample { params, .. } => params.visit_mut(prefix, f),
            Unit::Head(p) => p.visit_mut(prefix, f),
        }
    }
}

/// An assembled network: units in execution order with their manifest names.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Element> {
    pub config: ModelConfig,
    pub units: Vec<(String, Unit<T>)>,
}

/// Shapes and graph activity observed during a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    /// Output shape of each stage.
    pub stage_shapes: Vec<Vec<usize>>,
    /// One entry per DAGC block, in order.
    pub aggregates: Vec<AggregateInfo>,
}

/// Deterministic initialization: fan-in uniform convs, identity BN.
pub fn build<T: Element>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    let mut rng = SplitMix64::new(seed);
    let norm = NormInit::Identity;
    let mut units = Vec::with_capacity(config.unit_count());
    units.push(("stem".to_owned(), Unit::Stem(StemParams::init(&mut rng, config.in_channels, config.stages[0].channels, norm)?)));
    for (i, s) in config.stages.iter().enumerate() {
        let n = i + 1;
        if i > 0 {
            let params = DownsampleParams::init(&mut rng, config.stages[i - 1].channels, s.channels, norm)?;
            units.push((format!("down{n}"), Unit::Downsample { stage: i, params }));
        }
        for r in 0..s.mbconv_repeats {
            let params = MbconvParams::init(&mut rng, s.channels, MBCONV_EXPANSION, norm)?;
            units.push((format!("stage{n}.mbconv{}", r + 1), Unit::Mbconv { stage: i, params }));
        }
        let spec = GraphSpec::new(config.graph, s.k)?;
        for r in 0..s.dagc_repeats {
            let params = DagcBlockParams::init(&mut rng, s.channels, config.use_cpe, norm)?;
            units.push((format!("stage{n}.dagc{}", r + 1), Unit::Dagc { stage: i, spec, params }));
        }
    }
    let last = config.stages.last().expect("validated").channels;
    units.push(("head".to_owned(), Unit::Head(HeadParams::init(&mut rng, last, config.classes)?)));
    Ok(Model {
        config: config.clone(),
        units,
    })
}

impl<T: Element> Model<T> {
    pub fn named_tensors(&self) -> Vec<(String, ParamKind, Tensor<T>)> {
        let mut out = Vec::new();
        for (name, unit) in &self.units {
            unit.clone().visit_mut(name, &mut |n, kind, t| out.push((n.to_owned(), kind, t.clone())));
        }
        out
    }

    /// Trainable element count of the instantiated tensors.
    pub fn param_count(&self) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(_, kind, _)| *kind == ParamKind::Trainable)
            .map(|(_, _, t)| t.len())
            .sum()
    }

    /// Ordered `(name, shape)` pairs as written to weight files.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.named_tensors()
            .into_iter()
            .map(|(n, _, t)| (n, t.shape().to_vec()))
            .collect()
    }

    pub fn forward(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(images)?.0)
    }

    pub fn forward_traced(&self, images: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace)> {
        self.forward_on(&mut Eager, images)
    }

    pub fn forward_on<E: Exec<T>>(&self, exec: &mut E, images: &Tensor<T>) -> Result<(E::Value, ForwardTrace)> {
        let batch = images.shape().first().copied().unwrap_or(0);
        let expected = self.config.input_shape(batch.max(1));
        if images.shape() != expected {
            return Err(Error::dim(
                "forward",
                "input",
                format!("expected shape {expected:?} for model {}, got {:?}", self.config.name, images.shape()),
            ));
        }
        let mut trace = ForwardTrace {
            stage_shapes: Vec::new(),
            aggregates: Vec::new(),
        };
        let mut x = exec.constant(images.clone());
        for (i, (name, unit)) in self.units.iter().enumerate() {
            x = match unit {
                Unit::Stem(p) => stem_on(exec, name, p, &x)?,
                Unit::Mbconv { params, .. } => mbconv_on(exec, name, params, &x)?,
                Unit::Dagc { spec, params, .. } => {
                    let (y, info) = dagc_block_on(exec, name, *spec, params, &x)?;
                    trace.aggregates.push(info);
                    y
                }
                Unit::Downsample { params, .. } => downsample_on(exec, name, params, &x)?,
                Unit::Head(p) => head_on(exec, name, p, &x)?,
            };
            // The stem opens stage 0, so a stage without blocks still reports its shape.
            let stage_of = |u: &Unit<T>| if u.kind() == UnitKind::Stem { Some(0) } else { u.stage() };
            let next_stage = self.units.get(i + 1).and_then(|(_, u)| stage_of(u));
            if let Some(s) = stage_of(unit) {
                if next_stage != Some(s) {
                    trace.stage_shapes.push(exec.value(&x).shape().to_vec());
                }
            }
        }
        Ok((x, trace))
    }
}

pub fn save_weights<T: Element>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()>
where
    DynTensor: From<Tensor<T>>,
{
    let entries: Vec<(String, DynTensor)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, _, t)| (n, DynTensor::from(t)))
        .collect();
    fs::write(path, encode_bundle(&entries))?;
    Ok(())
}

/// Rebuilds the model for `config` and fills it from a weight file. The file
/// must list exactly the manifest of `config`, in order, with matching shapes
/// and element type.
pub fn load_weights<T: Element>(config: &ModelConfig, path: impl AsRef<Path>) -> Result<Model<T>> {
    let bytes = fs::read(path)?;
    let entries = decode_bundle(&bytes)?;
    let mut model = build::<T>(config, 0)?;
    let mut cursor = entries.into_iter();
    let mut failure: Option<Error> = None;
    for (unit_name, unit) in &mut model.units {
        unit.visit_mut(unit_name, &mut |name, _, slot| {
            if failure.is_some() {
                return;
            }
            let result = match cursor.next() {
                None => Err(format!("missing tensor {name}")),
                Some((found, _)) if found != name => Err(format!("expected tensor {name}, found {found}")),
                Some((_, t)) if t.shape() != slot.shape() => {
                    Err(format!("{name} has shape {:?}, expected {:?}", t.shape(), slot.shape()))
                }
                Some((_, t)) => t.exact::<T>().map(|t| *slot = t).map_err(|e| format!("{name}: {e}")),
            };
            if let Err(msg) = result {
                failure = Some(Error::format(format!("block {unit_name}: {msg}")));
            }
        });
        if let Some(e) = failure.take() {
            return Err(e);
        }
    }
    if let Some((extra, _)) = cursor.next() {
        return Err(Error::format(format!("unexpected tensor {extra} after the last block")));
    }
    Ok(model)
}

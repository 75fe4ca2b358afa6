//! Closed-form parameter and multiply-accumulate counts.
//!
//! Convolution MACs are `out_elements * in_ch / groups * kh * kw` (bias adds,
//! BN, activations and pooling are not counted). A DAGC aggregate adds `C`
//! multiplies per compared node pair, including the statistics pass; SVGA adds
//! none and KNN compares every node pair.

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::blocks::{FFN_EXPANSION, HEAD_EXPANSION, MBCONV_EXPANSION};
use crate::error::Result;
use crate::graph::{count_comparisons, GraphMethod};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEntry {
    pub name: String,
    pub params: u64,
    pub conv_macs: u64,
    pub graph_macs: u64,
    pub macs: u64,
}

impl CostEntry {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: 0,
            conv_macs: 0,
            graph_macs: 0,
            macs: 0,
        }
    }

    fn add(&mut self, params: u64, conv_macs: u64, graph_macs: u64) {
        self.params += params;
        self.conv_macs += conv_macs;
        self.graph_macs += graph_macs;
        self.macs += conv_macs + graph_macs;
    }
}

/// Totals plus a stem / per-stage / head breakdown. The downsample in front of
/// a stage is booked to that stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub model: String,
    pub resolution: usize,
    pub params: u64,
    pub macs: u64,
    pub stem: CostEntry,
    pub stages: Vec<CostEntry>,
    pub head: CostEntry,
}

impl CostReport {
    pub fn entries(&self) -> impl Iterator<Item = &CostEntry> {
        std::iter::once(&self.stem).chain(&self.stages).chain(std::iter::once(&self.head))
    }
}

/// `(params, macs)` of a bias-carrying conv producing `out_hw` spatial positions.
fn conv(cin: u64, cout: u64, k: u64, groups: u64, out_hw: u64) -> (u64, u64) {
    (cout * (cin / groups) * k * k + cout, out_hw * cout * (cin / groups) * k * k)
}

fn conv_bn(cin: u64, cout: u64, k: u64, groups: u64, out_hw: u64) -> (u64, u64) {
    let (p, m) = conv(cin, cout, k, groups, out_hw);
    (p + 2 * cout, m)
}

fn sum(parts: &[(u64, u64)]) -> (u64, u64) {
    parts.iter().fold((0, 0), |(p, m), &(a, b)| (p + a, m + b))
}

fn stem(cin: u64, c: u64, r: u64) -> (u64, u64) {
    let h = c / 2;
    sum(&[conv_bn(cin, h, 3, 1, (r / 2) * (r / 2)), conv_bn(h, c, 3, 1, (r / 4) * (r / 4))])
}

fn mbconv(c: u64, hw: u64) -> (u64, u64) {
    let e = MBCONV_EXPANSION as u64 * c;
    sum(&[conv_bn(c, e, 1, 1, hw), conv_bn(e, e, 3, e, hw), conv_bn(e, c, 1, 1, hw)])
}

/// `(params, conv_macs, graph_macs)` of one DAGC block (grapher + FFN).
fn dagc_block(c: u64, h: usize, w: usize, k: usize, method: GraphMethod, use_cpe: bool) -> (u64, u64, u64) {
    let hw = (h * w) as u64;
    let r = FFN_EXPANSION as u64 * c;
    let mut parts = vec![
        conv_bn(c, c, 1, 1, hw),
        conv_bn(2 * c, c, 1, 1, hw),
        conv_bn(c, c, 1, 1, hw),
        conv_bn(c, r, 1, 1, hw),
        conv_bn(r, c, 1, 1, hw),
    ];
    if use_cpe {
        parts.push(conv(c, c, 3, c, hw));
    }
    let (p, m) = sum(&parts);
    let compared = match method {
        GraphMethod::Knn if h * w < 2 => 0,
        _ => {
            let cc = count_comparisons(method, h, w, k);
            cc.total + cc.stats_pass
        }
    };
    (p, m, compared * c)
}

fn downsample(cin: u64, cout: u64, out_hw: u64) -> (u64, u64) {
    conv_bn(cin, cout, 3, 1, out_hw)
}

fn head(c: u64, classes: u64) -> (u64, u64) {
    let hidden = HEAD_EXPANSION as u64 * c;
    sum(&[conv(c, hidden, 1, 1, 1), conv(hidden, classes, 1, 1, 1)])
}

/// Parameters and MACs of `config` at a square input of `resolution`.
pub fn count_macs(config: &ModelConfig, resolution: usize) -> Result<CostReport> {
    let mut at = config.clone();
    at.resolution = resolution;
    at.validate()?;
    let r = resolution as u64;
    let mut stem_entry = CostEntry::new("stem");
    let (p, m) = stem(config.in_channels as u64, config.stages[0].channels as u64, r);
    stem_entry.add(p, m, 0);
    let mut stages = Vec::new();
    for (i, s) in config.stages.iter().enumerate() {
        let mut e = CostEntry::new(format!("stage{}", i + 1));
        let extent = at.stage_extent(i);
        let hw = (extent * extent) as u64;
        let c = s.channels as u64;
        if i > 0 {
            let (p, m) = downsample(config.stages[i - 1].channels as u64, c, hw);
            e.add(p, m, 0);
        }
        for _ in 0..s.mbconv_repeats {
            let (p, m) = mbconv(c, hw);
            e.add(p, m, 0);
        }
        for _ in 0..s.dagc_repeats {
            let (p, m, g) = dagc_block(c, extent, extent, s.k, config.graph, config.use_cpe);
            e.add(p, m, g);
        }
        stages.push(e);
    }
    let mut head_entry = CostEntry::new("head");
    let (p, m) = head(config.stages.last().expect("validated").channels as u64, config.classes as u64);
    head_entry.add(p, m, 0);
    let mut report = CostReport {
        model: config.name.clone(),
        resolution,
        params: 0,
        macs: 0,
        stem: stem_entry,
        stages,
        head: head_entry,
    };
    report.params = report.entries().map(|e| e.params).sum();
    report.macs = report.entries().map(|e| e.macs).sum();
    Ok(report)
}

/// Cost report at the configured resolution.
pub fn count_params(config: &ModelConfig) -> Result<CostReport> {
    count_macs(config, config.resolution)
}

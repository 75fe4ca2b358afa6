//! Model configurations, assembly and cost accounting.

mod config_file;
pub mod cost;
mod model;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphMethod;

pub use cost::{count_macs, count_params, CostEntry, CostReport};
pub use model::{build, load_weights, save_weights, ForwardTrace, Model, Unit, UnitKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub channels: usize,
    pub mbconv_repeats: usize,
    pub dagc_repeats: usize,
    /// Axial hop distance (or neighbor count for KNN graphs).
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub stages: Vec<StageConfig>,
    pub classes: usize,
    /// Square input extent.
    pub resolution: usize,
    pub in_channels: usize,
    pub graph: GraphMethod,
    pub use_cpe: bool,
}

pub const PREDEFINED: [&str; 4] = ["S", "M", "B", "toy"];
pub const DEFAULT_K: [usize; 4] = [8, 4, 2, 1];

fn stages(channels: [usize; 4], mbconv: [usize; 4], dagc: [usize; 4], k: [usize; 4]) -> Vec<StageConfig> {
    (0..4)
        .map(|i| StageConfig {
            channels: channels[i],
            mbconv_repeats: mbconv[i],
            dagc_repeats: dagc[i],
            k: k[i],
        })
        .collect()
}

impl ModelConfig {
    /// One of `S`, `M`, `B` (224 input, 1000 classes) or `toy` (32 input, 10 classes).
    pub fn predefined(name: &str) -> Result<Self> {
        let (stages, resolution, classes) = match name.to_ascii_lowercase().as_str() {
            "s" => (stages([48, 96, 192, 384], [2, 2, 6, 2], [2, 2, 2, 2], DEFAULT_K), 224, 1000),
            "m" => (stages([56, 112, 224, 448], [3, 3, 9, 3], [3, 3, 3, 3], DEFAULT_K), 224, 1000),
            "b" => (stages([64, 128, 256, 512], [4, 4, 12, 3], [4, 4, 4, 3], DEFAULT_K), 224, 1000),
            "toy" => (stages([8, 16, 32, 64], [1; 4], [1; 4], [2, 2, 1, 1]), 32, 10),
            _ => {
                return Err(Error::config(format!(
                    "unknown model {name:?} (expected one of {})",
                    PREDEFINED.join(", ")
                )))
            }
        };
        let name = if name.eq_ignore_ascii_case("toy") { "toy".to_owned() } else { name.to_ascii_uppercase() };
        Ok(Self {
            name,
            stages,
            classes,
            resolution,
            in_channels: 3,
            graph: GraphMethod::Dagc,
            use_cpe: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages.len() > 4 {
            return Err(Error::config(format!("{} stages, expected 1 to 4", self.stages.len())));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels < 2 || s.k < 1 {
                return Err(Error::config(format!(
                    "stage{} needs channels >= 2 and k >= 1, got channels {} k {}",
                    i + 1,
                    s.channels,
                    s.k
                )));
            }
        }
        if let Some(w) = self.stages.windows(2).find(|w| w[1].channels <= w[0].channels) {
            return Err(Error::config(format!(
                "stage channels must strictly increase, got {} then {}",
                w[0].channels, w[1].channels
            )));
        }
        if self.resolution == 0 || self.resolution % 32 != 0 {
            return Err(Error::config(format!("resolution {} is not a positive multiple of 32", self.resolution)));
        }
        if self.classes < 1 || self.in_channels < 1 {
            return Err(Error::config("classes and input channels must be positive"));
        }
        Ok(())
    }

    /// Spatial extent of stage `i` (0-based).
    pub fn stage_extent(&self, i: usize) -> usize {
        (self.resolution / 4) >> i
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.in_channels, self.resolution, self.resolution]
    }

    /// Number of assembled units: stem, every block, downsamples and head.
    pub fn unit_count(&self) -> usize {
        let blocks: usize = self.stages.iter().map(|s| s.mbconv_repeats + s.dagc_repeats).sum();
        1 + blocks + self.stages.len() - 1 + 1
    }

    pub fn parse(text: &str) -> Result<Self> {
        config_file::parse(text)
    }

    pub fn to_text(&self) -> String {
        config_file::render(self)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

//! Plain-text `key = value` model configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! name = S
//! resolution = 224
//! classes = 1000
//! in_channels = 3
//! graph = dagc
//! cpe = true
//! stage1.channels = 48
//! stage1.mbconv_repeats = 2
//! stage1.dagc_repeats = 2
//! stage1.k = 8
//! ```
//!
//! Stages are numbered from 1 without gaps. Every key is required except
//! `in_channels` (3), `graph` (dagc) and `cpe` (true).

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{ModelConfig, StageConfig};
use crate::error::{Error, Result};
use crate::graph::GraphMethod;

const STAGE_KEYS: [&str; 4] = ["channels", "mbconv_repeats", "dagc_repeats", "k"];

fn number(key: &str, value: &str, line: usize) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::config(format!("line {line}: {key} expects a non-negative integer, got {value:?}")))
}

pub(super) fn parse(text: &str) -> Result<ModelConfig> {
    let mut top: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut stages: BTreeMap<usize, BTreeMap<String, usize>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {line}: expected key = value, got {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if let Some(rest) = key.strip_prefix("stage") {
            let (index, field) = rest
                .split_once('.')
                .ok_or_else(|| Error::config(format!("line {line}: stage key {key:?} needs a field")))?;
            let index: usize = index
                .parse()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| Error::config(format!("line {line}: bad stage number in {key:?}")))?;
            if !STAGE_KEYS.contains(&field) {
                return Err(Error::config(format!("line {line}: unknown stage field {field:?}")));
            }
            let v = number(key, value, line)?;
            if stages.entry(index).or_default().insert(field.to_owned(), v).is_some() {
                return Err(Error::config(format!("line {line}: duplicate key {key:?}")));
            }
        } else {
            if !["name", "resolution", "classes", "in_channels", "graph", "cpe"].contains(&key) {
                return Err(Error::config(format!("line {line}: unknown key {key:?}")));
            }
            if top.insert(key.to_owned(), (value.to_owned(), line)).is_some() {
                return Err(Error::config(format!("line {line}: duplicate key {key:?}")));
            }
        }
    }
    let required = |key: &str| {
        top.get(key)
            .cloned()
            .ok_or_else(|| Error::config(format!("missing key {key:?}")))
    };
    let (name, _) = required("name")?;
    let (res, line) = required("resolution")?;
    let resolution = number("resolution", &res, line)?;
    let (cls, line) = required("classes")?;
    let classes = number("classes", &cls, line)?;
    let in_channels = match top.get("in_channels") {
        Some((v, line)) => number("in_channels", v, *line)?,
        None => 3,
    };
    let graph = match top.get("graph") {
        Some((v, line)) => v.parse().map_err(|e| Error::config(format!("line {line}: {e}")))?,
        None => GraphMethod::Dagc,
    };
    let use_cpe = match top.get("cpe") {
        Some((v, line)) => v
            .parse()
            .map_err(|_| Error::config(format!("line {line}: cpe expects true or false, got {v:?}")))?,
        None => true,
    };
    let mut out = Vec::new();
    for (expected, (index, fields)) in (1..).zip(&stages) {
        if *index != expected {
            return Err(Error::config(format!("stage{expected} is missing")));
        }
        let get = |f: &str| {
            fields
                .get(f)
                .copied()
                .ok_or_else(|| Error::config(format!("missing key \"stage{index}.{f}\"")))
        };
        out.push(StageConfig {
            channels: get("channels")?,
            mbconv_repeats: get("mbconv_repeats")?,
            dagc_repeats: get("dagc_repeats")?,
            k: get("k")?,
        });
    }
    let config = ModelConfig {
        name,
        stages: out,
        classes,
        resolution,
        in_channels,
        graph,
        use_cpe,
    };
    config.validate()?;
    Ok(config)
}

pub(super) fn render(c: &ModelConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "name = {}", c.name);
    let _ = writeln!(s, "resolution = {}", c.resolution);
    let _ = writeln!(s, "classes = {}", c.classes);
    let _ = writeln!(s, "in_channels = {}", c.in_channels);
    let _ = writeln!(s, "graph = {}", c.graph);
    let _ = writeln!(s, "cpe = {}", c.use_cpe);
    for (i, st) in c.stages.iter().enumerate() {
        let n = i + 1;
        let _ = writeln!(s, "stage{n}.channels = {}", st.channels);
        let _ = writeln!(s, "stage{n}.mbconv_repeats = {}", st.mbconv_repeats);
        let _ = writeln!(s, "stage{n}.dagc_repeats = {}", st.dagc_repeats);
        let _ = writeln!(s, "stage{n}.k = {}", st.k);
    }
    s
}

//! Graph-construction micro-benchmark.

use std::time::Instant;

use axialvig::graph::{
    count_comparisons, dagc_aggregate, estimate_stats, knn_aggregate, knn_neighbors, svga_aggregate_traced, ComparisonCount,
    GraphMethod, GraphSpec,
};
use axialvig::tensor::{DType, Element};
use axialvig::{Error, SplitMix64, Tensor};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub k: usize,
    pub methods: Vec<GraphMethod>,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    pub dtype: DType,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config("height, width and channels must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no graph method selected".into()));
        }
        for &m in &self.methods {
            GraphSpec::new(m, self.k)?.validate_for(self.height, self.width)?;
        }
        Ok(())
    }
}

/// Seed-determined outcome of one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodCounts {
    pub method: GraphMethod,
    /// Closed-form counts for one image.
    pub closed_form: ComparisonCount,
    /// Distance evaluations the implementation actually made.
    pub comparisons: u64,
    pub stats_comparisons: u64,
    pub connections: u64,
    pub counts_match: bool,
    /// Sum of the aggregated output, as a cheap fingerprint.
    pub output_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodTiming {
    pub method: GraphMethod,
    pub samples: usize,
    pub median_ms: f64,
    pub iqr_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchDeterministic {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub k: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    pub methods: Vec<MethodCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub deterministic: BenchDeterministic,
    pub timing: Vec<MethodTiming>,
}

impl BenchResult {
    pub fn counts_match(&self) -> bool {
        self.deterministic.methods.iter().all(|m| m.counts_match)
    }

    pub fn median(&self, method: GraphMethod) -> Option<f64> {
        self.timing.iter().find(|t| t.method == method).map(|t| t.median_ms)
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

struct Outcome {
    comparisons: u64,
    stats_comparisons: u64,
    connections: u64,
    sum: f64,
}

fn run_once<T: Element>(method: GraphMethod, x: &Tensor<T>, k: usize) -> Result<Outcome, Error> {
    Ok(match method {
        GraphMethod::Dagc => {
            let stats = estimate_stats(x)?;
            let (out, trace) = dagc_aggregate(x, k, &stats)?;
            Outcome {
                comparisons: trace.comparisons,
                stats_comparisons: trace.stats_comparisons,
                connections: trace.connections(),
                sum: out.sum().as_f64(),
            }
        }
        GraphMethod::Svga => {
            let (out, trace) = svga_aggregate_traced(x, k)?;
            Outcome {
                comparisons: trace.comparisons,
                stats_comparisons: 0,
                connections: trace.connections(),
                sum: out.sum().as_f64(),
            }
        }
        GraphMethod::Knn => {
            let table = knn_neighbors(x, k)?;
            let out = knn_aggregate(x, &table)?;
            Outcome {
                comparisons: table.comparisons,
                stats_comparisons: 0,
                connections: table.indices.len() as u64,
                sum: out.sum().as_f64(),
            }
        }
    })
}

fn bench_typed<T: Element>(spec: &BenchSpec) -> Result<BenchResult, Error> {
    let x: Tensor<T> = SplitMix64::new(spec.seed).tensor(&[1, spec.channels, spec.height, spec.width], -1.0, 1.0);
    let mut methods = Vec::new();
    let mut timing = Vec::new();
    for &method in &spec.methods {
        for _ in 0..spec.warmup {
            run_once(method, &x, spec.k)?;
        }
        let mut samples = Vec::with_capacity(spec.repeats);
        let mut last = None;
        for _ in 0..spec.repeats {
            let start = Instant::now();
            let outcome = run_once(method, &x, spec.k)?;
            samples.push(start.elapsed().as_secs_f64() * 1e3);
            last = Some(outcome);
        }
        let outcome = last.expect("repeats >= 1");
        let closed_form = count_comparisons(method, spec.height, spec.width, spec.k);
        methods.push(MethodCounts {
            method,
            closed_form,
            comparisons: outcome.comparisons,
            stats_comparisons: outcome.stats_comparisons,
            connections: outcome.connections,
            counts_match: outcome.comparisons == closed_form.total && outcome.stats_comparisons == closed_form.stats_pass,
            output_sum: outcome.sum,
        });
        samples.sort_by(f64::total_cmp);
        timing.push(MethodTiming {
            method,
            samples: samples.len(),
            median_ms: quantile(&samples, 0.5),
            iqr_ms: quantile(&samples, 0.75) - quantile(&samples, 0.25),
            min_ms: samples[0],
            max_ms: samples[samples.len() - 1],
        });
    }
    Ok(BenchResult {
        deterministic: BenchDeterministic {
            height: spec.height,
            width: spec.width,
            channels: spec.channels,
            k: spec.k,
            repeats: spec.repeats,
            warmup: spec.warmup,
            seed: spec.seed,
            methods,
        },
        timing,
    })
}

/// Runs warmups then timed repeats of each method on the calling thread.
pub fn bench_graph(spec: &BenchSpec) -> Result<BenchResult, Error> {
    spec.validate()?;
    match spec.dtype {
        DType::F32 => bench_typed::<f32>(spec),
        DType::F64 => bench_typed::<f64>(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert_eq!(quantile(&s, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn single_repeat_is_well_formed() {
        let spec = BenchSpec {
            height: 8,
            width: 8,
            channels: 4,
            k: 2,
            methods: GraphMethod::ALL.to_vec(),
            repeats: 1,
            warmup: 0,
            seed: 1,
            dtype: DType::F64,
        };
        let r = bench_graph(&spec).unwrap();
        assert!(r.counts_match());
        for t in &r.timing {
            assert!(t.min_ms <= t.median_ms && t.median_ms <= t.max_ms);
            assert_eq!(t.iqr_ms, 0.0);
        }
        let dagc = r.deterministic.methods.iter().find(|m| m.method == GraphMethod::Dagc).unwrap();
        assert_eq!(dagc.comparisons, 64 * 8);
        assert_eq!(dagc.stats_comparisons, 32);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = BenchSpec {
            height: 4,
            width: 4,
            channels: 2,
            k: 4,
            methods: vec![GraphMethod::Dagc],
            repeats: 1,
            warmup: 0,
            seed: 0,
            dtype: DType::F32,
        };
        assert!(bench_graph(&spec).is_err());
        spec.k = 2;
        spec.repeats = 0;
        assert!(bench_graph(&spec).is_err());
    }
}

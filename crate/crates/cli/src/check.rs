//! Oracle-equivalence and invariant suites.

use std::fmt;
use std::str::FromStr;

use axialvig::autodiff::{Eager, Exec};
use axialvig::blocks::{self, DagcBlockParams, FfnParams, GrapherParams, MbconvParams, NormInit, FFN_EXPANSION, MBCONV_EXPANSION};
use axialvig::graph::{
    count_comparisons, dagc_aggregate, dagc_aggregate_forced, dagc_aggregate_with_thresholds, estimate_stats, knn_aggregate,
    knn_neighbors, quadrant_flip, svga_aggregate, svga_aggregate_traced, GraphMethod, GraphSpec,
};
use axialvig::{oracle, zoo, Error, SplitMix64, Tensor};
use serde::Serialize;

pub const HEIGHTS: [usize; 3] = [4, 6, 8];
pub const WIDTHS: [usize; 3] = [4, 6, 8];
pub const CHANNELS: [usize; 3] = [1, 2, 4];
pub const KS: [usize; 3] = [1, 2, 4];
pub const ORACLE_TOLERANCE: f64 = 1e-12;
pub const CONNECTIVITY_SEEDS: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Oracle,
    Invariants,
    All,
}

impl Suite {
    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "oracle" => Ok(Suite::Oracle),
            "invariants" => Ok(Suite::Invariants),
            "all" => Ok(Suite::All),
            _ => Err(Error::Config(format!("unknown suite {s:?} (expected oracle, invariants or all)"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Oracle => "oracle",
            Suite::Invariants => "invariants",
            Suite::All => "all",
        })
    }
}

/// Deliberate corruptions for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Fault {
    /// Shift every DAGC threshold up before aggregating.
    Threshold,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "threshold" => Ok(Fault::Threshold),
            _ => Err(Error::Config(format!("unknown fault {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub id: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub heights: Vec<usize>,
    pub widths: Vec<usize>,
    pub channels: Vec<usize>,
    pub ks: Vec<usize>,
    pub seeds: u64,
    pub combinations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub suite: Suite,
    pub fault: Option<Fault>,
    pub grid: Grid,
    pub cases: usize,
    pub passed: usize,
    pub failures: Vec<Failure>,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

type CaseFn = Box<dyn Fn() -> Result<(), String> + Send + Sync>;

struct Case {
    id: String,
    run: CaseFn,
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    seed: u64,
}

impl Shape {
    fn id(&self) -> String {
        format!("h{}w{}c{}k{}/s{}", self.h, self.w, self.c, self.k, self.seed)
    }

    fn input(&self, batch: usize) -> Tensor<f64> {
        let mix = (self.h as u64) << 48 | (self.w as u64) << 40 | (self.c as u64) << 32 | (self.k as u64) << 24;
        SplitMix64::new(mix ^ self.seed).tensor(&[batch, self.c, self.h, self.w], -1.0, 1.0)
    }
}

fn grid(seeds: u64) -> Vec<Shape> {
    let mut out = Vec::new();
    for h in HEIGHTS {
        for w in WIDTHS {
            for c in CHANNELS {
                for k in KS {
                    for seed in 0..seeds {
                        out.push(Shape { h, w, c, k, seed });
                    }
                }
            }
        }
    }
    out
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<(), String> {
    ensure(a.shape() == b.shape(), || format!("{name}: shape {:?} vs {:?}", a.shape(), b.shape()))?;
    let d = a.max_abs_diff(b);
    ensure(d <= ORACLE_TOLERANCE, || format!("{name}: max abs diff {d:e} exceeds {ORACLE_TOLERANCE:e}"))
}

fn err(e: Error) -> String {
    e.to_string()
}

fn oracle_case(s: Shape, fault: Option<Fault>) -> Result<(), String> {
    let x = s.input(2);
    let stats = estimate_stats(&x).map_err(err)?;
    let expected_stats = oracle::quadrant_stats(&x);
    for (img, (got, want)) in stats.iter().zip(&expected_stats).enumerate() {
        ensure((got.mu - want.0).abs() <= ORACLE_TOLERANCE && (got.sigma - want.1).abs() <= ORACLE_TOLERANCE, || {
            format!("stats image {img}: ({}, {}) vs ({}, {})", got.mu, got.sigma, want.0, want.1)
        })?;
    }
    let thresholds: Vec<f64> = expected_stats.iter().map(|(m, sd)| m - sd).collect();
    let used: Vec<f64> = match fault {
        Some(Fault::Threshold) => stats.iter().map(|p| p.threshold() + 0.25).collect(),
        None => stats.iter().map(|p| p.threshold()).collect(),
    };
    let (got, trace) = dagc_aggregate_with_thresholds(&x, s.k, &used).map_err(err)?;
    let (want, connections) = oracle::dagc(&x, s.k, &thresholds);
    close("dagc", &got, &want)?;
    ensure(trace.connections_per_image == connections, || {
        format!("dagc connections {:?} vs {:?}", trace.connections_per_image, connections)
    })?;
    close("svga", &svga_aggregate(&x, s.k).map_err(err)?, &oracle::svga(&x, s.k))?;
    let knn_k = s.k.min(s.h * s.w - 1);
    let table = knn_neighbors(&x, knn_k).map_err(err)?;
    let expected = oracle::knn(&x, knn_k);
    for (img, per_node) in expected.iter().enumerate() {
        for (node, want) in per_node.iter().enumerate() {
            let got = table.neighbors(img, node);
            ensure(got == want.as_slice(), || format!("knn image {img} node {node}: {got:?} vs {want:?}"))?;
        }
    }
    close("knn", &knn_aggregate(&x, &table).map_err(err)?, &oracle::max_relative(&x, &expected))
}

fn invariant_case(s: Shape) -> Result<(), String> {
    let x = s.input(2);
    let stats = estimate_stats(&x).map_err(err)?;
    let (dagc, trace) = dagc_aggregate(&x, s.k, &stats).map_err(err)?;
    let (svga, svga_trace) = svga_aggregate_traced(&x, s.k).map_err(err)?;
    ensure(dagc.data().iter().all(|&v| v >= 0.0), || "dagc output has a negative entry".into())?;
    ensure(dagc.data().iter().zip(svga.data()).all(|(d, v)| d <= v), || "dagc exceeds svga".into())?;
    ensure(trace.connections() <= svga_trace.connections(), || "dagc connects more than svga".into())?;

    let (forced, _) = dagc_aggregate_forced(&x, s.k).map_err(err)?;
    ensure(forced.bit_eq(&svga), || "forced dagc differs from svga".into())?;

    let flipped = estimate_stats(&quadrant_flip(&x).map_err(err)?).map_err(err)?;
    for (a, b) in stats.iter().zip(&flipped) {
        ensure((a.mu - b.mu).abs() <= ORACLE_TOLERANCE && (a.sigma - b.sigma).abs() <= ORACLE_TOLERANCE, || {
            "stats change under quadrant flip".into()
        })?;
    }

    let perm: Vec<usize> = (0..s.c).rev().collect();
    let permute = |t: &Tensor<f64>| {
        let (c, h, w) = (t.shape()[1], t.shape()[2], t.shape()[3]);
        Tensor::from_fn(t.shape(), |i| {
            let (img, rest) = (i / (c * h * w), i % (c * h * w));
            t.at4(img, perm[rest / (h * w)], rest % (h * w) / w, rest % w)
        })
    };
    let px = permute(&x).map_err(err)?;
    let (pd, _) = dagc_aggregate(&px, s.k, &estimate_stats(&px).map_err(err)?).map_err(err)?;
    let expect = permute(&dagc).map_err(err)?;
    ensure(pd.max_abs_diff(&expect) <= ORACLE_TOLERANCE, || "dagc not channel-permutation equivariant".into())?;

    let higher: Vec<f64> = stats.iter().map(|p| p.threshold() + 0.1).collect();
    let (_, more) = dagc_aggregate_with_thresholds(&x, s.k, &higher).map_err(err)?;
    ensure(more.connections() >= trace.connections(), || "raising the threshold removed connections".into())?;

    let cc = count_comparisons(GraphMethod::Dagc, s.h, s.w, s.k);
    ensure(trace.comparisons == 2 * cc.total && trace.stats_comparisons == 2 * cc.stats_pass, || {
        format!("dagc counters ({}, {}) vs closed form ({}, {}) per image", trace.comparisons, trace.stats_comparisons, cc.total, cc.stats_pass)
    })?;
    let knn_k = s.k.min(s.h * s.w - 1);
    let table = knn_neighbors(&x, knn_k).map_err(err)?;
    let kc = count_comparisons(GraphMethod::Knn, s.h, s.w, knn_k);
    ensure(table.comparisons == 2 * kc.total, || format!("knn counter {} vs {}", table.comparisons, 2 * kc.total))
}

fn constant_image_case() -> Result<(), String> {
    let x = Tensor::<f64>::full(&[1, 3, 6, 6], 0.7).map_err(err)?;
    let stats = estimate_stats(&x).map_err(err)?;
    ensure(stats[0].mu == 0.0 && stats[0].sigma == 0.0, || format!("stats {:?}", stats[0]))?;
    let (out, trace) = dagc_aggregate(&x, 2, &stats).map_err(err)?;
    ensure(trace.connections() == 0, || format!("{} connections", trace.connections()))?;
    ensure(out.data().iter().all(|&v| v == 0.0), || "x_final is not zero".into())
}

fn connectivity_case() -> Result<(), String> {
    let mut counts: Vec<u64> = (0..CONNECTIVITY_SEEDS)
        .map(|seed| {
            let x: Tensor<f64> = SplitMix64::new(seed).tensor(&[1, 4, 8, 8], -1.0, 1.0);
            let stats = estimate_stats(&x).map_err(err)?;
            Ok(dagc_aggregate(&x, 2, &stats).map_err(err)?.1.connections())
        })
        .collect::<Result<_, String>>()?;
    counts.sort_unstable();
    counts.dedup();
    ensure(counts.len() >= 2, || format!("only {} distinct connection count(s)", counts.len()))
}

fn block_residual_case(seed: u64) -> Result<(), String> {
    let c = 8;
    let mut rng = SplitMix64::new(seed);
    let x: Tensor<f64> = rng.tensor(&[1, c, 8, 8], -1.0, 1.0);
    let mut grapher = GrapherParams::<f64>::init(&mut rng, c, true, NormInit::Identity).map_err(err)?;
    grapher.w_out.zero_output().map_err(err)?;
    ensure(blocks::dynamic_grapher(&x, 2, &grapher).map_err(err)?.bit_eq(&x), || "grapher with zero w_out is not the identity".into())?;

    let mut ffn = FfnParams::<f64>::init(&mut rng, c, FFN_EXPANSION, NormInit::Identity).map_err(err)?;
    ffn.w2.zero_output().map_err(err)?;
    ensure(blocks::ffn(&x, &ffn).map_err(err)?.bit_eq(&x), || "ffn with zero w2 is not the identity".into())?;

    let mut mb = MbconvParams::<f64>::init(&mut rng, c, MBCONV_EXPANSION, NormInit::Identity).map_err(err)?;
    mb.project.zero_output().map_err(err)?;
    ensure(blocks::mbconv(&x, &mb).map_err(err)?.bit_eq(&x), || "mbconv with zero projection is not the identity".into())?;

    let block = DagcBlockParams::<f64>::init(&mut rng, c, true, NormInit::Random).map_err(err)?;
    for spec in GraphMethod::ALL.map(|m| GraphSpec::new(m, 2).expect("k > 0")) {
        let (y, info) = blocks::dagc_block_on(&mut Eager, "b", spec, &block, &Exec::<f64>::constant(&mut Eager, x.clone())).map_err(err)?;
        ensure(y.shape() == x.shape(), || format!("{spec:?} block changed shape to {:?}", y.shape()))?;
        ensure(info.method == spec.method, || "aggregate info reports the wrong method".into())?;
    }
    Ok(())
}

fn toy_model_case(method: GraphMethod) -> Result<(), String> {
    let mut config = zoo::ModelConfig::predefined("toy").map_err(err)?;
    config.graph = method;
    let model = zoo::build::<f64>(&config, 3).map_err(err)?;
    let img: Tensor<f64> = SplitMix64::new(4).tensor(&[2, 3, 32, 32], -1.0, 1.0);
    let (logits, trace) = model.forward_traced(&img).map_err(err)?;
    ensure(logits.shape() == [2, config.classes], || format!("logits shape {:?}", logits.shape()))?;
    let want: Vec<Vec<usize>> =
        (0..config.stages.len()).map(|i| vec![2, config.stages[i].channels, config.stage_extent(i), config.stage_extent(i)]).collect();
    ensure(trace.stage_shapes == want, || format!("stage shapes {:?}", trace.stage_shapes))?;
    let again = zoo::build::<f64>(&config, 3).map_err(err)?.forward(&img).map_err(err)?;
    ensure(again.bit_eq(&logits), || "forward is not deterministic".into())
}

fn cases(suite: Suite, seeds: u64, fault: Option<Fault>) -> Vec<Case> {
    let mut out = Vec::new();
    if suite.includes(Suite::Oracle) {
        for s in grid(seeds) {
            out.push(Case {
                id: format!("oracle/{}", s.id()),
                run: Box::new(move || oracle_case(s, fault)),
            });
        }
    }
    if suite.includes(Suite::Invariants) {
        for s in grid(seeds) {
            out.push(Case {
                id: format!("invariants/{}", s.id()),
                run: Box::new(move || invariant_case(s)),
            });
        }
        out.push(Case {
            id: "invariants/constant-image".into(),
            run: Box::new(constant_image_case),
        });
        out.push(Case {
            id: "invariants/variable-connectivity".into(),
            run: Box::new(connectivity_case),
        });
        for seed in 0..seeds {
            out.push(Case {
                id: format!("invariants/block-residuals/s{seed}"),
                run: Box::new(move || block_residual_case(seed)),
            });
        }
        for method in GraphMethod::ALL {
            out.push(Case {
                id: format!("invariants/toy-model/{method}"),
                run: Box::new(move || toy_model_case(method)),
            });
        }
    }
    out
}

/// Runs the selected suites on up to `threads` workers. Results are reported
/// in case order regardless of scheduling.
pub fn run_check(suite: Suite, seeds: u64, fault: Option<Fault>, threads: usize) -> Result<CheckReport, Error> {
    if seeds < 1 {
        return Err(Error::Config("seeds must be at least 1".into()));
    }
    let cases = cases(suite, seeds, fault);
    let threads = threads.clamp(1, cases.len().max(1));
    let chunk = cases.len().div_ceil(threads);
    let results: Vec<Result<(), String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cases
            .chunks(chunk.max(1))
            .map(|part| scope.spawn(move || part.iter().map(|c| (c.run)()).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("check worker panicked")).collect()
    });
    let failures: Vec<Failure> = cases
        .iter()
        .zip(results)
        .filter_map(|(c, r)| r.err().map(|detail| Failure { id: c.id.clone(), detail }))
        .collect();
    Ok(CheckReport {
        suite,
        fault,
        grid: Grid {
            heights: HEIGHTS.to_vec(),
            widths: WIDTHS.to_vec(),
            channels: CHANNELS.to_vec(),
            ks: KS.to_vec(),
            seeds,
            combinations: HEIGHTS.len() * WIDTHS.len() * CHANNELS.len() * KS.len(),
        },
        cases: cases.len(),
        passed: cases.len() - failures.len(),
        failures,
    })
}

//! The ten acceptance criteria, run in order on one thread so the latency
//! measurement is not disturbed by the others. Each prints one PASS/FAIL line.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use axialvig::gradcheck::{gradcheck, BlockUnderTest, TOLERANCE};
use axialvig::graph::{
    count_comparisons, dagc_aggregate, dagc_aggregate_forced, estimate_stats, knn_neighbors, svga_aggregate, GraphMethod,
};
use axialvig::tensor::gvt;
use axialvig::zoo::{build, count_macs, count_params, load_weights, save_weights};
use axialvig::{DynTensor, ModelConfig, SplitMix64, Tensor};
use axialvig_cli::bench::{bench_graph, BenchSpec};
use axialvig_cli::check::{run_check, Suite};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(got: f64, target: f64, tol: f64) -> bool {
    (got / target - 1.0).abs() <= tol
}

fn oracle_equivalence() -> Outcome {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let start = Instant::now();
    let r = run_check(Suite::Oracle, 5, None, threads).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(r.grid.combinations >= 27 && r.grid.seeds >= 5, || format!("grid too small: {:?}", r.grid))?;
    ensure(r.pass(), || format!("{} failing cases, first {:?}", r.failures.len(), r.failures.first()))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{} cases over {} shape/K combinations x {} seeds at 1e-12 in {elapsed:.2?}", r.cases, r.grid.combinations, r.grid.seeds))
}

fn edge_semantics() -> Outcome {
    let mut checked = 0;
    for (shape, value) in [([1, 1, 4, 4], 0.0), ([2, 3, 6, 8], -1.25), ([1, 4, 8, 8], 3.5), ([1, 2, 5, 7], 1e6)] {
        let x = Tensor::<f64>::full(&shape, value).map_err(|e| e.to_string())?;
        let stats = estimate_stats(&x).map_err(|e| e.to_string())?;
        ensure(stats.iter().all(|p| p.mu == 0.0 && p.sigma == 0.0), || format!("{shape:?}: stats {stats:?}"))?;
        for k in [1, 2, 3] {
            let (out, trace) = dagc_aggregate(&x, k, &stats).map_err(|e| e.to_string())?;
            ensure(trace.connections() == 0, || format!("{shape:?} k={k}: {} connections", trace.connections()))?;
            ensure(out.data().iter().all(|v| v.to_bits() == 0), || format!("{shape:?} k={k}: x_final not +0"))?;
            checked += 1;
        }
    }
    for seed in 0..10u64 {
        for k in [1, 2, 4] {
            let x: Tensor<f64> = SplitMix64::new(seed).tensor(&[2, 3, 8, 6], -2.0, 2.0);
            let forced = dagc_aggregate_forced(&x, k).map_err(|e| e.to_string())?.0;
            let svga = svga_aggregate(&x, k).map_err(|e| e.to_string())?;
            ensure(forced.bit_eq(&svga), || format!("seed {seed} k={k}: forced DAGC differs from SVGA"))?;
            let f32_forced = dagc_aggregate_forced(&x.cast::<f32>(), k).map_err(|e| e.to_string())?.0;
            ensure(f32_forced.bit_eq(&svga_aggregate(&x.cast::<f32>(), k).map_err(|e| e.to_string())?), || {
                format!("seed {seed} k={k}: f32 forced DAGC differs from SVGA")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} constant-image and forced-mask cases"))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<String> = Vec::new();
    for block in [BlockUnderTest::Dagc, BlockUnderTest::Grapher, BlockUnderTest::Ffn, BlockUnderTest::Mbconv] {
        let r = gradcheck(block, 0).map_err(|e| e.to_string())?;
        ensure(r.input_shape == [1, 8, 8, 8], || format!("{block}: input {:?}", r.input_shape))?;
        let failing: Vec<&str> = r.tensors.iter().filter(|t| !(t.max_rel_error < TOLERANCE)).map(|t| t.name.as_str()).collect();
        ensure(r.pass && failing.is_empty(), || format!("{block}: failing tensors {failing:?}"))?;
        worst.push(format!("{block} {:.1e}", r.max_rel_error));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("max rel error {} (< {TOLERANCE:e}) in {elapsed:.2?}", worst.join(", ")))
}

fn complexity_counters() -> Outcome {
    let mut shapes = vec![(56, 56, 8), (7, 7, 1), (14, 14, 2), (28, 28, 4), (5, 9, 3)];
    for h in [4, 6, 8] {
        for w in [4, 6, 8] {
            for k in [1, 2, 4] {
                shapes.push((h, w, k));
            }
        }
    }
    for &(h, w, k) in &shapes {
        let x: Tensor<f32> = SplitMix64::new((h * 100 + w * 10 + k) as u64).tensor(&[1, 3, h, w], -1.0, 1.0);
        let stats = estimate_stats(&x).map_err(|e| e.to_string())?;
        let (_, trace) = dagc_aggregate(&x, k, &stats).map_err(|e| e.to_string())?;
        let d = count_comparisons(GraphMethod::Dagc, h, w, k);
        ensure(d.per_node == (h.div_ceil(k) + w.div_ceil(k)) as u64, || format!("{h}x{w} k={k}: closed form"))?;
        ensure(trace.comparisons == d.total && trace.stats_comparisons == d.stats_pass, || {
            format!("{h}x{w} k={k}: DAGC counted ({}, {}) vs ({}, {})", trace.comparisons, trace.stats_comparisons, d.total, d.stats_pass)
        })?;
        if h * w <= 64 * 64 {
            let kk = k.min(h * w - 1);
            let table = knn_neighbors(&x, kk).map_err(|e| e.to_string())?;
            let n = count_comparisons(GraphMethod::Knn, h, w, kk);
            ensure(n.per_node == (h * w) as u64 && table.comparisons == n.total, || {
                format!("{h}x{w}: KNN counted {} vs {}", table.comparisons, n.total)
            })?;
        }
    }
    let d = count_comparisons(GraphMethod::Dagc, 56, 56, 8);
    let n = count_comparisons(GraphMethod::Knn, 56, 56, 8);
    ensure(d.per_node == 14 && n.per_node == 3136, || format!("per-node {} / {}", d.per_node, n.per_node))?;
    ensure(d.per_node * 224 == n.per_node, || "ratio is not 14/3136".into())?;
    Ok(format!(
        "{} shapes exact; 56x56 K=8 per-node DAGC/KNN = {}/{} = {:.4}%",
        shapes.len(),
        d.per_node,
        n.per_node,
        100.0 * d.per_node as f64 / n.per_node as f64
    ))
}

fn latency_ordering() -> Outcome {
    let spec = BenchSpec {
        height: 56,
        width: 56,
        channels: 48,
        k: 8,
        methods: GraphMethod::ALL.to_vec(),
        repeats: 30,
        warmup: 5,
        seed: 0,
        dtype: axialvig::DType::F32,
    };
    let r = bench_graph(&spec).map_err(|e| e.to_string())?;
    ensure(r.counts_match(), || "bench counts disagree with closed forms".into())?;
    let med = |m| r.median(m).expect("method benchmarked");
    let (s, d, k) = (med(GraphMethod::Svga), med(GraphMethod::Dagc), med(GraphMethod::Knn));
    let line = format!("median SVGA {s:.3} ms < DAGC {d:.3} ms < KNN {k:.3} ms");
    ensure(s < d && d < k, || format!("ordering violated: {line}"))?;
    Ok(line)
}

fn parameter_counts() -> Outcome {
    let mut parts = Vec::new();
    let mut last = 0;
    for (name, target) in [("S", 12.0e6), ("M", 21.9e6), ("B", 30.9e6)] {
        let config = ModelConfig::predefined(name).map_err(|e| e.to_string())?;
        let analytic = count_params(&config).map_err(|e| e.to_string())?.params;
        let built = build::<f32>(&config, 0).map_err(|e| e.to_string())?.param_count() as u64;
        ensure(analytic == built, || format!("{name}: analytic {analytic} vs instantiated {built}"))?;
        ensure(within(analytic as f64, target, 0.10), || format!("{name}: {analytic} vs {target}"))?;
        ensure(analytic > last, || format!("{name}: not above the previous size"))?;
        last = analytic;
        parts.push(format!("{name} {:.2}M ({:+.1}%)", analytic as f64 / 1e6, 100.0 * (analytic as f64 / target - 1.0)));
    }
    Ok(parts.join(", "))
}

fn mac_counts() -> Outcome {
    let mut parts = Vec::new();
    for (name, target) in [("S", 1.6e9), ("M", 3.2e9), ("B", 5.2e9)] {
        let config = ModelConfig::predefined(name).map_err(|e| e.to_string())?;
        let macs = count_macs(&config, 224).map_err(|e| e.to_string())?.macs;
        ensure(within(macs as f64, target, 0.20), || format!("{name}: {macs} vs {target}"))?;
        parts.push(format!("{name} {:.3}G ({:+.1}%)", macs as f64 / 1e9, 100.0 * (macs as f64 / target - 1.0)));
    }
    Ok(parts.join(", "))
}

fn architecture_fidelity() -> Outcome {
    let config = ModelConfig::predefined("S").map_err(|e| e.to_string())?;
    let model = build::<f32>(&config, 1).map_err(|e| e.to_string())?;
    let img: Tensor<f32> = SplitMix64::new(2).tensor(&config.input_shape(2), -1.0, 1.0);
    let (logits, trace) = model.forward_traced(&img).map_err(|e| e.to_string())?;
    let extents: Vec<usize> = trace.stage_shapes.iter().map(|s| s[2]).collect();
    ensure(extents == [56, 28, 14, 7], || format!("stage extents {extents:?}"))?;
    ensure(trace.stage_shapes.iter().all(|s| s[3] == s[2]), || "non-square stage".into())?;
    ensure(logits.shape() == [2, 1000], || format!("logits {:?}", logits.shape()))?;
    ensure(logits.data().iter().all(|v| v.is_finite()), || "non-finite logits".into())?;

    let toy = ModelConfig::predefined("toy").map_err(|e| e.to_string())?;
    let start = Instant::now();
    let toy_model = build::<f32>(&toy, 0).map_err(|e| e.to_string())?;
    let out = toy_model
        .forward(&SplitMix64::new(3).tensor(&toy.input_shape(1), -1.0, 1.0))
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(out.shape() == [1, toy.classes], || format!("toy logits {:?}", out.shape()))?;
    ensure(elapsed < Duration::from_secs(1), || format!("toy forward took {elapsed:?}"))?;
    Ok(format!("S extents {extents:?}, logits {:?}; toy end-to-end {elapsed:.2?}", logits.shape()))
}

fn variable_connectivity() -> Outcome {
    let mut counts = Vec::new();
    for seed in 0..20u64 {
        let x: Tensor<f64> = SplitMix64::new(1000 + seed).tensor(&[1, 8, 14, 14], -1.0, 1.0);
        let stats = estimate_stats(&x).map_err(|e| e.to_string())?;
        counts.push(dagc_aggregate(&x, 2, &stats).map_err(|e| e.to_string())?.1.connections());
    }
    let mut distinct = counts.clone();
    distinct.sort_unstable();
    distinct.dedup();
    ensure(distinct.len() >= 2, || format!("connection counts {counts:?}"))?;
    Ok(format!("{} distinct counts over 20 inputs (range {}..={})", distinct.len(), distinct[0], distinct[distinct.len() - 1]))
}

fn determinism_and_serialization() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = ModelConfig::predefined("toy").map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.gvtb"), dir.path().join("b.gvtb"));
    save_weights(&build::<f32>(&config, 9).map_err(|e| e.to_string())?, &a).map_err(|e| e.to_string())?;
    save_weights(&build::<f32>(&config, 9).map_err(|e| e.to_string())?, &b).map_err(|e| e.to_string())?;
    let bytes = fs::read(&a).map_err(|e| e.to_string())?;
    ensure(bytes == fs::read(&b).map_err(|e| e.to_string())?, || "weights differ for one seed".into())?;

    let loaded = load_weights::<f32>(&config, &a).map_err(|e| e.to_string())?;
    ensure(loaded == build::<f32>(&config, 9).map_err(|e| e.to_string())?, || "weights changed in round trip".into())?;
    let img: Tensor<f32> = SplitMix64::new(4).tensor(&config.input_shape(3), -1.0, 1.0);
    let first = loaded.forward(&img).map_err(|e| e.to_string())?;
    let second = build::<f32>(&config, 9).and_then(|m| m.forward(&img)).map_err(|e| e.to_string())?;
    ensure(first.bit_eq(&second), || "forward not bit-identical".into())?;

    let specials = [0.0, -0.0, 1.0e-310, -3.5, f64::MAX, f64::MIN_POSITIVE, f64::INFINITY, 1.0 / 3.0];
    let t64 = Tensor::from_vec(&[2, 4], specials.to_vec()).map_err(|e| e.to_string())?;
    let t32: Tensor<f32> = t64.cast();
    for t in [DynTensor::from(t64.clone()), DynTensor::from(t32.clone()), DynTensor::from(first.clone())] {
        let back = gvt::decode(&gvt::encode_dyn(&t)).map_err(|e| e.to_string())?;
        let same = match (&t, &back) {
            (DynTensor::F32(x), DynTensor::F32(y)) => x.bit_eq(y),
            (DynTensor::F64(x), DynTensor::F64(y)) => x.bit_eq(y),
            _ => false,
        };
        ensure(same, || format!("GVT round trip changed a {:?} tensor", t.dtype()))?;
    }

    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy_seed0_random42_logits.gvt");
    let logits = build::<f32>(&config, 0)
        .and_then(|m| m.forward(&SplitMix64::new(42).tensor(&config.input_shape(1), -1.0, 1.0)))
        .map_err(|e| e.to_string())?;
    let expected = fs::read(&fixture).map_err(|e| e.to_string())?;
    ensure(gvt::encode(&logits) == expected, || "toy logits differ from the committed fixture".into())?;
    Ok(format!("{}-byte weight bundle reproducible; forwards and GVT round trips bit-exact; fixture matches", bytes.len()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("edge semantics", edge_semantics),
        ("gradient checks", gradient_checks),
        ("comparison counters", complexity_counters),
        ("latency ordering", latency_ordering),
        ("parameter counts", parameter_counts),
        ("MAC counts", mac_counts),
        ("architecture fidelity", architecture_fidelity),
        ("variable connectivity", variable_connectivity),
        ("determinism and serialization", determinism_and_serialization),
    ];
    // Written to the raw handle so the lines show even when output is captured.
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => writeln!(out, "criterion {:>2} {name}: PASS ({detail})", i + 1).unwrap(),
            Err(reason) => {
                writeln!(out, "criterion {:>2} {name}: FAIL ({reason})", i + 1).unwrap();
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

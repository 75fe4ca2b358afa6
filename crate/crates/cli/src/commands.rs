//! Subcommand drivers. Each prints `key=value` lines to `out` and optionally
//! writes a JSON report.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use axialvig::gradcheck::{gradcheck_with_input, GradcheckReport, CHANNELS, EXTENT};
use axialvig::tensor::gvt;
use axialvig::zoo::{build, count_macs, load_weights, save_weights, CostReport, ForwardTrace, Model};
use axialvig::{DType, DynTensor, Element, Error, ModelConfig, SplitMix64, Tensor};
use serde::Serialize;

use crate::bench::{bench_graph, BenchSpec, MethodTiming};
use crate::check::{run_check, CheckReport, Fault, Suite};
use crate::report::{threads_from_env, Environment, Report};
use crate::{BenchArgs, CheckArgs, Cli, Command, CountArgs, FaultArg, ForwardArgs, GradcheckArgs, InitArgs, ModelArgs, SuiteArg};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => crate::EXIT_SUCCESS,
            Outcome::Fail => crate::EXIT_FAILURE,
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Outcome, Error> {
    match cli.command {
        Command::BenchGraph(a) => bench_cmd(a, out),
        Command::Check(a) => check_cmd(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
        Command::Count(a) => count_cmd(a, out),
        Command::Forward(a) => forward_cmd(a, out),
        Command::Init(a) => init_cmd(a, out),
    }
}

fn load_config(m: &ModelArgs) -> Result<ModelConfig, Error> {
    match (&m.model, &m.config) {
        (Some(name), _) => ModelConfig::predefined(name),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| with_path("config", path, e.into()))?;
            ModelConfig::parse(&text)
        }
        (None, None) => Err(Error::Config("one of --model or --config is required".into())),
    }
}

/// Names the offending file on I/O failures.
fn with_path(what: &str, path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Config(format!("cannot read {what} file {}: {io}", path.display())),
        other => other,
    }
}

fn bench_cmd(a: BenchArgs, out: &mut dyn Write) -> Result<Outcome, Error> {
    let spec = BenchSpec {
        height: a.height,
        width: a.width,
        channels: a.channels,
        k: a.k,
        methods: a.method.methods(),
        repeats: a.repeats,
        warmup: a.warmup,
        seed: a.seed,
        dtype: a.dtype.into(),
    };
    let result = bench_graph(&spec)?;
    for (m, t) in result.deterministic.methods.iter().zip(&result.timing) {
        writeln!(
            out,
            "method={} median_ms={:.6} iqr_ms={:.6} min_ms={:.6} max_ms={:.6} comparisons={} closed_form={} stats_comparisons={} closed_form_stats={} per_node={} connections={} counts_match={}",
            m.method,
            t.median_ms,
            t.iqr_ms,
            t.min_ms,
            t.max_ms,
            m.comparisons,
            m.closed_form.total,
            m.stats_comparisons,
            m.closed_form.stats_pass,
            m.closed_form.per_node,
            m.connections,
            m.counts_match
        )?;
    }
    let pass = result.counts_match();
    writeln!(out, "result={}", if pass { "pass" } else { "fail" })?;
    if let Some(path) = &a.output {
        Report::<_, Vec<MethodTiming>>::new("bench-graph", Environment::new(spec.dtype.name(), 1), &result.deterministic, Some(result.timing.clone()))
            .write(path)?;
    }
    Ok(Outcome::from_pass(pass))
}

fn check_cmd(a: CheckArgs, out: &mut dyn Write) -> Result<Outcome, Error> {
    let suite = match a.suite {
        SuiteArg::Oracle => Suite::Oracle,
        SuiteArg::Invariants => Suite::Invariants,
        SuiteArg::All => Suite::All,
    };
    let fault = a.inject_fault.map(|FaultArg::Threshold| Fault::Threshold);
    let threads = threads_from_env()?;
    let start = Instant::now();
    let report = run_check(suite, a.seeds, fault, threads)?;
    let elapsed = start.elapsed().as_secs_f64();
    for f in &report.failures {
        writeln!(out, "case={} status=fail detail={:?}", f.id, f.detail)?;
    }
    writeln!(
        out,
        "suite={} combinations={} seeds={} cases={} passed={} failed={} result={}",
        report.suite,
        report.grid.combinations,
        report.grid.seeds,
        report.cases,
        report.passed,
        report.failures.len(),
        if report.pass() { "pass" } else { "fail" }
    )?;
    if let Some(path) = &a.output {
        Report::<&CheckReport, Elapsed>::new("check", Environment::new("f64", threads), &report, Some(Elapsed { seconds: elapsed })).write(path)?;
    }
    Ok(Outcome::from_pass(report.pass()))
}

#[derive(Debug, Clone, Serialize)]
struct Elapsed {
    seconds: f64,
}

fn gradcheck_cmd(a: GradcheckArgs, out: &mut dyn Write) -> Result<Outcome, Error> {
    let input = a.tie_input.then(|| Tensor::<f64>::zeros(&[1, CHANNELS, EXTENT, EXTENT])).transpose()?;
    let report: GradcheckReport = gradcheck_with_input(a.block.into(), a.seed, input)?;
    for t in &report.tensors {
        writeln!(
            out,
            "tensor={} elements={} max_rel_error={:e} max_abs_error={:e} status={}",
            t.name,
            t.elements,
            t.max_rel_error,
            t.max_abs_error,
            if t.pass { "pass" } else { "fail" }
        )?;
    }
    for note in &report.notes {
        writeln!(out, "note={note:?}")?;
    }
    for t in report.tensors.iter().filter(|t| !t.pass) {
        writeln!(out, "failed_tensor={}", t.name)?;
    }
    writeln!(
        out,
        "block={} seed={} resamples={} tolerance={:e} max_rel_error={:e} result={}",
        report.block,
        report.seed,
        report.resamples,
        report.tolerance,
        report.max_rel_error,
        if report.pass { "pass" } else { "fail" }
    )?;
    if let Some(path) = &a.output {
        Report::<_, ()>::new("gradcheck", Environment::new("f64", 1), &report, None).write(path)?;
    }
    Ok(Outcome::from_pass(report.pass))
}

fn count_cmd(a: CountArgs, out: &mut dyn Write) -> Result<Outcome, Error> {
    let config = load_config(&a.model)?;
    let report: CostReport = count_macs(&config, a.resolution.unwrap_or(config.resolution))?;
    writeln!(out, "model={} resolution={}", report.model, report.resolution)?;
    for e in report.entries() {
        writeln!(
            out,
            "unit={} params={} conv_macs={} graph_macs={} macs={}",
            e.name, e.params, e.conv_macs, e.graph_macs, e.macs
        )?;
    }
    writeln!(
        out,
        "total params={} macs={} params_m={:.3} gmacs={:.3}",
        report.params,
        report.macs,
        report.params as f64 / 1e6,
        report.macs as f64 / 1e9
    )?;
    if let Some(path) = &a.output {
        Report::<_, ()>::new("count", Environment::new("none", 1), &report, None).write(path)?;
    }
    Ok(Outcome::Pass)
}

/// Indices and values of the `k` largest entries of `row`, ties to the lower index.
pub fn top_k(row: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i, row[i])).collect()
}

#[derive(Debug, Clone, Serialize)]
struct TopEntry {
    image: usize,
    rank: usize,
    class: usize,
    logit: f64,
}

#[derive(Debug, Clone, Serialize)]
struct ForwardSummary {
    model: String,
    input_shape: Vec<usize>,
    logits_shape: Vec<usize>,
    stage_shapes: Vec<Vec<usize>>,
    connections: Vec<Vec<u64>>,
    top5: Vec<TopEntry>,
}

/// Forward pass split across up to `threads` batch chunks. Every per-image
/// computation is independent, so the result does not depend on the split.
pub fn forward_batched<T: Element>(model: &Model<T>, images: &Tensor<T>, threads: usize) -> Result<(Tensor<T>, ForwardTrace), Error> {
    let n = images.shape().first().copied().unwrap_or(0);
    if threads <= 1 || n <= 1 {
        return model.forward_traced(images);
    }
    let per = images.len() / n;
    let chunk = n.div_ceil(threads.min(n));
    let parts: Vec<Result<(Tensor<T>, ForwardTrace), Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(n);
                let mut shape = images.shape().to_vec();
                shape[0] = end - start;
                let slice = images.data()[start * per..end * per].to_vec();
                scope.spawn(move || model.forward_traced(&Tensor::from_vec(&shape, slice)?))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("forward worker panicked")).collect()
    });
    let mut data = Vec::new();
    let mut trace: Option<ForwardTrace> = None;
    for part in parts {
        let (logits, t) = part?;
        data.extend_from_slice(logits.data());
        trace = Some(match trace {
            None => t,
            Some(mut acc) => {
                for (s, extra) in acc.stage_shapes.iter_mut().zip(&t.stage_shapes) {
                    s[0] += extra[0];
                }
                for (a, b) in acc.aggregates.iter_mut().zip(t.aggregates) {
                    a.connections_per_image.extend(b.connections_per_image);
                    a.comparisons += b.comparisons;
                    a.stats_comparisons += b.stats_comparisons;
                }
                acc
            }
        });
    }
    let classes = data.len() / n;
    Ok((Tensor::from_vec(&[n, classes], data)?, trace.expect("n > 1")))
}

fn forward_typed<T: Element>(a: &ForwardArgs, config: &ModelConfig, out: &mut dyn Write) -> Result<Outcome, Error>
where
    DynTensor: From<Tensor<T>>,
{
    let model: Model<T> = match &a.weights {
        Some(path) => load_weights(config, path).map_err(|e| with_path("weights", path, e))?,
        None => build(config, a.init_seed)?,
    };
    let images: Tensor<T> = match (&a.input.input, a.input.random) {
        (Some(path), _) => gvt::read_tensor(path).map_err(|e| with_path("input", path, e))?.into_dtype(),
        (None, Some(seed)) => {
            if a.batch == 0 {
                return Err(Error::Config("batch must be at least 1".into()));
            }
            SplitMix64::new(seed).tensor(&config.input_shape(a.batch), -1.0, 1.0)
        }
        (None, None) => return Err(Error::Config("one of --input or --random is required".into())),
    };
    let threads = threads_from_env()?;
    let (logits, trace) = forward_batched(&model, &images, threads)?;
    if let Some(path) = &a.output {
        gvt::write_tensor(path, &logits)?;
    }
    let classes = logits.shape()[1];
    let mut top5 = Vec::new();
    for (img, row) in logits.data().chunks(classes).enumerate() {
        let row: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
        for (rank, (class, logit)) in top_k(&row, 5).into_iter().enumerate() {
            writeln!(out, "image={img} rank={} class={class} logit={logit:.9e}", rank + 1)?;
            top5.push(TopEntry {
                image: img,
                rank: rank + 1,
                class,
                logit,
            });
        }
    }
    writeln!(out, "model={} logits_shape={:?} dtype={}", config.name, logits.shape(), T::DTYPE)?;
    if let Some(path) = &a.report {
        let summary = ForwardSummary {
            model: config.name.clone(),
            input_shape: images.shape().to_vec(),
            logits_shape: logits.shape().to_vec(),
            stage_shapes: trace.stage_shapes,
            connections: trace.aggregates.into_iter().map(|a| a.connections_per_image).collect(),
            top5,
        };
        Report::<_, ()>::new("forward", Environment::new(T::DTYPE.name(), threads), &summary, None).write(path)?;
    }
    Ok(Outcome::Pass)
}

fn forward_cmd(a: ForwardArgs, out: &mut dyn Write) -> Result<Outcome, Error> {
    let config = load_config(&a.model)?;
    match DType::from(a.dtype) {
        DType::F32 => forward_typed::<f32>(&a, &config, out),
        DType::F64 => forward_typed::<f64>(&a, &config, out),
    }
}

/// One `name shape` line per tensor, in file order.
pub fn manifest_text(manifest: &[(String, Vec<usize>)]) -> String {
    manifest
        .iter()
        .map(|(name, shape)| {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            format!("{name} {}\n", dims.join("x"))
        })
        .collect()
}

fn init_typed<T: Element>(a: &InitArgs, config: &ModelConfig, out: &mut dyn Write) -> Result<Outcome, Error>
where
    DynTensor: From<Tensor<T>>,
{
    let model: Model<T> = build(config, a.seed)?;
    save_weights(&model, &a.output)?;
    let text = manifest_text(&model.manifest());
    out.write_all(text.as_bytes())?;
    writeln!(out, "model={} seed={} dtype={} params={}", config.name, a.seed, T::DTYPE, model.param_count())?;
    if let Some(path) = &a.manifest {
        write_file(path, &text)?;
    }
    Ok(Outcome::Pass)
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text)?;
    Ok(())
}

fn init_cmd(a: InitArgs, out: &mut dyn Write) -> Result<Outcome, Error> {
    let config = load_config(&a.model)?;
    match DType::from(a.dtype) {
        DType::F32 => init_typed::<f32>(&a, &config, out),
        DType::F64 => init_typed::<f64>(&a, &config, out),
    }
}

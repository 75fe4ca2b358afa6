use axialvig::blocks::Module;
use axialvig::tensor::gvt;
use axialvig::zoo::{build, count_macs, count_params, save_weights, ModelConfig, Unit};
use axialvig::{SplitMix64, Tensor};

#[test]
fn s_pyramid_at_224() {
    let config = ModelConfig::predefined("S").unwrap();
    let model = build::<f32>(&config, 5).unwrap();
    let img: Tensor<f32> = SplitMix64::new(6).tensor(&[1, 3, 224, 224], -1.0, 1.0);
    let (logits, trace) = model.forward_traced(&img).unwrap();
    assert_eq!(logits.shape(), &[1, 1000]);
    let shapes: Vec<Vec<usize>> = trace.stage_shapes;
    assert_eq!(shapes, vec![vec![1, 48, 56, 56], vec![1, 96, 28, 28], vec![1, 192, 14, 14], vec![1, 384, 7, 7]]);
    assert!(logits.data().iter().all(|v| v.is_finite()));
    // The odd 7x7 stage still builds a graph.
    assert!(trace.aggregates.iter().filter(|a| a.height == 7).all(|a| a.comparisons == 49 * 14));
}

#[test]
fn every_unit_keeps_its_shape_contract() {
    for name in ["S", "M", "B", "toy"] {
        let config = ModelConfig::predefined(name).unwrap();
        let model = build::<f32>(&config, 0).unwrap();
        for (unit_name, unit) in &model.units {
            let (params, kind) = match unit {
                Unit::Stem(p) => (p.param_count(), "stem"),
                Unit::Mbconv { params, .. } => (params.param_count(), "mbconv"),
                Unit::Dagc { params, .. } => (params.param_count(), "dagc"),
                Unit::Downsample { params, .. } => (params.param_count(), "down"),
                Unit::Head(p) => (p.param_count(), "head"),
            };
            assert!(params > 0, "{unit_name} ({kind})");
        }
        assert_eq!(model.units.len(), config.unit_count());
    }
}

#[test]
fn table_targets() {
    let targets = [("S", 12.0e6, 1.6e9), ("M", 21.9e6, 3.2e9), ("B", 30.9e6, 5.2e9)];
    let mut last = 0;
    for (name, params, macs) in targets {
        let config = ModelConfig::predefined(name).unwrap();
        let r = count_macs(&config, 224).unwrap();
        assert!((r.params as f64 / params - 1.0).abs() <= 0.10, "{name} params {}", r.params);
        assert!((r.macs as f64 / macs - 1.0).abs() <= 0.20, "{name} macs {}", r.macs);
        assert!(r.params > last);
        last = r.params;
    }
}

#[test]
fn frozen_counts() {
    // Closed-form totals, cross-checked against an independent script.
    let got: Vec<(u64, u64)> = ["S", "M", "B"]
        .iter()
        .map(|n| {
            let r = count_params(&ModelConfig::predefined(n).unwrap()).unwrap();
            (r.params, r.macs)
        })
        .collect();
    assert_eq!(got, vec![(12_213_832, 1_566_577_152), (22_531_648, 3_089_684_864), (31_926_248, 5_023_258_112)]);
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let config = ModelConfig::predefined("toy").unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    save_weights(&build::<f32>(&config, 11).unwrap(), &a).unwrap();
    save_weights(&build::<f32>(&config, 11).unwrap(), &b).unwrap();
    save_weights(&build::<f32>(&config, 12).unwrap(), &c).unwrap();
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    let entries = gvt::decode_bundle(&a).unwrap();
    assert_eq!(entries[0].0, "stem.conv1.weight");
    assert_eq!(entries.last().unwrap().0, "head.fc2.bias");
}

#[test]
fn f64_and_f32_models_agree_closely() {
    let config = ModelConfig::predefined("toy").unwrap();
    let img: Tensor<f64> = SplitMix64::new(2).tensor(&[2, 3, 32, 32], -1.0, 1.0);
    let a = build::<f64>(&config, 4).unwrap().forward(&img).unwrap();
    let b = build::<f32>(&config, 4).unwrap().forward(&img.cast()).unwrap();
    // DAGC masks can flip between precisions, so only rough agreement is expected.
    assert!(a.max_abs_diff(&b.cast()) < 0.05, "{}", a.max_abs_diff(&b.cast()));
}

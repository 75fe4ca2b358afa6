use std::collections::HashMap;

use axialvig::autodiff::{Eager, Exec, Tape};
use axialvig::graph::{
    axial_aggregate, count_comparisons, dagc_aggregate, dagc_aggregate_forced, dagc_aggregate_with_thresholds, estimate_stats, knn_neighbors,
    quadrant_flip, svga_aggregate, svga_aggregate_traced, GraphMethod, MaskRule,
};
use axialvig::tensor::gvt;
use axialvig::tensor::ops::{concat_channels, conv2d_raw, roll, slice_channels, BatchNormParams};
use axialvig::tensor::{Axis, BinaryOp, ConvGeom};
use axialvig::zoo::{ModelConfig, StageConfig};
use axialvig::{oracle, DynTensor, SplitMix64, Tensor};
use proptest::prelude::*;

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    SplitMix64::new(seed).tensor(shape, -1.0, 1.0)
}

fn shape4() -> impl Strategy<Value = [usize; 4]> {
    (1usize..3, 1usize..5, 1usize..9, 1usize..9).prop_map(|(n, c, h, w)| [n, c, h, w])
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for di in 0..kh {
                            for dj in 0..kw {
                                let r = (i * stride + di) as isize - pad as isize;
                                let q = (j * stride + dj) as isize - pad as isize;
                                if r >= 0 && q >= 0 && (r as usize) < h && (q as usize) < wd {
                                    acc += x.at4(b, ic, r as usize, q as usize) * w.at4(oc, ic, di, dj);
                                }
                            }
                        }
                    }
                    out[((b * o + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    out
}

fn permute_channels(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (_, c, h, w) = x.dims4("permute").unwrap();
    Tensor::from_fn(x.shape(), |i| {
        let (b, rest) = (i / (c * h * w), i % (c * h * w));
        let (ch, p) = (rest / (h * w), rest % (h * w));
        x.data()[(b * c + perm[ch]) * h * w + p]
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roll_inverts_and_wraps(shape in shape4(), shift in -20isize..20, seed in any::<u64>(), height in any::<bool>()) {
        let x = rand(&shape, seed);
        let axis = if height { Axis::Height } else { Axis::Width };
        let back = roll(&roll(&x, shift, axis).unwrap(), -shift, axis).unwrap();
        prop_assert!(back.bit_eq(&x));
        let extent = shape[axis.index()] as isize;
        prop_assert!(roll(&x, extent, axis).unwrap().bit_eq(&x));
    }

    #[test]
    fn concat_then_slice_recovers(shape in shape4(), extra in 1usize..4, seed in any::<u64>()) {
        let a = rand(&shape, seed);
        let b = rand(&[shape[0], extra, shape[2], shape[3]], seed ^ 1);
        let cat = concat_channels(&a, &b).unwrap();
        prop_assert!(slice_channels(&cat, 0, shape[1]).unwrap().bit_eq(&a));
        prop_assert!(slice_channels(&cat, shape[1], extra).unwrap().bit_eq(&b));
    }

    #[test]
    fn conv_matches_naive_loops(
        n in 1usize..3, c in 1usize..5, h in 3usize..9, w in 3usize..9, o in 1usize..4,
        k in prop::sample::select(vec![1usize, 3]), stride in 1usize..3, pad in 0usize..2, seed in any::<u64>(),
    ) {
        let x = rand(&[n, c, h, w], seed);
        let wt = rand(&[o, c, k, k], seed ^ 2);
        let y = conv2d_raw(&x, &wt, None, ConvGeom::new(stride, pad, 1)).unwrap();
        let expected = naive_conv(&x, &wt, stride, pad);
        prop_assert_eq!(y.len(), expected.len());
        for (a, b) in y.data().iter().zip(&expected) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn gvt_round_trip(rank in 1usize..5, seed in any::<u64>(), f32s in any::<bool>()) {
        let mut rng = SplitMix64::new(seed);
        let shape: Vec<usize> = (0..rank).map(|_| 1 + rng.below(4) as usize).collect();
        let t = rng.tensor::<f64>(&shape, -1e6, 1e6);
        let d = if f32s { DynTensor::F32(t.cast()) } else { DynTensor::F64(t) };
        prop_assert_eq!(gvt::decode(&gvt::encode_dyn(&d)).unwrap(), d);
    }

    #[test]
    fn flip_involution_and_stats_symmetry(shape in (1usize..3, 1usize..5, 2usize..9, 2usize..9), seed in any::<u64>()) {
        let x = rand(&[shape.0, shape.1, shape.2, shape.3], seed);
        let f = quadrant_flip(&x).unwrap();
        prop_assert!(quadrant_flip(&f).unwrap().bit_eq(&x));
        prop_assert_eq!(estimate_stats(&x).unwrap(), estimate_stats(&f).unwrap());
    }

    #[test]
    fn aggregates_match_oracles(shape in shape4(), k in 1usize..5, seed in any::<u64>()) {
        let x = rand(&shape, seed);
        let stats = estimate_stats(&x).unwrap();
        let thr: Vec<f64> = stats.iter().map(|s| s.threshold()).collect();
        let (d, trace) = dagc_aggregate(&x, k, &stats).unwrap();
        let (od, conns) = oracle::dagc(&x, k, &thr);
        prop_assert!(d.max_abs_diff(&od) <= 1e-12);
        prop_assert_eq!(&trace.connections_per_image, &conns);
        let s = svga_aggregate(&x, k).unwrap();
        prop_assert!(s.max_abs_diff(&oracle::svga(&x, k)) <= 1e-12);
        prop_assert!(dagc_aggregate_forced(&x, k).unwrap().0.bit_eq(&s));
        // Non-negative, and bounded by the unmasked aggregate.
        for (a, b) in d.data().iter().zip(s.data()) {
            prop_assert!(*a >= 0.0 && *b >= 0.0 && a <= b);
        }
    }

    #[test]
    fn oracle_stats_agree(shape in (1usize..3, 1usize..5, 1usize..9, 1usize..9), seed in any::<u64>()) {
        let x = rand(&[shape.0, shape.1, shape.2, shape.3], seed);
        for (s, (mu, sigma)) in estimate_stats(&x).unwrap().iter().zip(oracle::quadrant_stats(&x)) {
            prop_assert!((s.mu - mu).abs() <= 1e-12 && (s.sigma - sigma).abs() <= 1e-12);
        }
    }

    #[test]
    fn fused_eager_aggregates_match_the_generic_loop(shape in shape4(), k in 1usize..5, seed in any::<u64>(), t in 0.0f64..2.0) {
        let x = rand(&shape, seed);
        let thresholds = vec![t; shape[0]];
        let cases = [
            (dagc_aggregate_with_thresholds(&x, k, &thresholds).unwrap(), MaskRule::Threshold(thresholds.clone())),
            (dagc_aggregate_forced(&x, k).unwrap(), MaskRule::ForceAll),
            (svga_aggregate_traced(&x, k).unwrap(), MaskRule::Static),
        ];
        for ((fused, ft), rule) in cases {
            let (generic, gt) = axial_aggregate(&mut Eager, &x, k, &rule).unwrap();
            prop_assert!(fused.bit_eq(&generic));
            prop_assert_eq!(&ft.connections_per_image, &gt.connections_per_image);
            prop_assert_eq!(ft.comparisons, gt.comparisons);
            prop_assert_eq!(ft.masks.len(), gt.masks.len());
            for (a, b) in ft.masks.iter().zip(&gt.masks) {
                prop_assert!(a.axis == b.axis && a.shift == b.shift && a.mask.bit_eq(&b.mask));
            }
        }
    }

    #[test]
    fn raising_the_threshold_only_adds_connections(shape in shape4(), k in 1usize..4, seed in any::<u64>(), t in 0.0f64..2.0, dt in 0.0f64..1.0) {
        let x = rand(&shape, seed);
        let lo = vec![t; shape[0]];
        let hi = vec![t + dt; shape[0]];
        let (a, ta) = dagc_aggregate_with_thresholds(&x, k, &lo).unwrap();
        let (b, tb) = dagc_aggregate_with_thresholds(&x, k, &hi).unwrap();
        prop_assert!(ta.connections() <= tb.connections());
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!(p <= q);
        }
    }

    #[test]
    fn channel_permutation_equivariance(shape in shape4(), k in 1usize..4, seed in any::<u64>()) {
        let x = rand(&shape, seed);
        let mut perm: Vec<usize> = (0..shape[1]).collect();
        let mut rng = SplitMix64::new(seed ^ 3);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let px = permute_channels(&x, &perm);
        let out = dagc_aggregate(&x, k, &estimate_stats(&x).unwrap()).unwrap().0;
        let pout = dagc_aggregate(&px, k, &estimate_stats(&px).unwrap()).unwrap().0;
        // Distances sum channels in a different order, so compare to rounding.
        prop_assert!(pout.max_abs_diff(&permute_channels(&out, &perm)) <= 1e-12);
    }

    #[test]
    fn counters_match_closed_forms(n in 1usize..3, c in 1usize..3, h in 1usize..12, w in 1usize..12, k in 1usize..9, seed in any::<u64>()) {
        let x = rand(&[n, c, h, w], seed);
        let stats = estimate_stats(&x).unwrap();
        let (_, trace) = dagc_aggregate(&x, k, &stats).unwrap();
        let cc = count_comparisons(GraphMethod::Dagc, h, w, k);
        prop_assert_eq!(trace.comparisons, n as u64 * cc.total);
        prop_assert_eq!(trace.stats_comparisons, n as u64 * cc.stats_pass);
        let (_, st) = svga_aggregate_traced(&x, k).unwrap();
        prop_assert_eq!(st.comparisons, n as u64 * count_comparisons(GraphMethod::Svga, h, w, k).total);
        if h * w > k {
            let table = knn_neighbors(&x, k).unwrap();
            prop_assert_eq!(table.comparisons, n as u64 * count_comparisons(GraphMethod::Knn, h, w, k).total);
        }
    }

    #[test]
    fn knn_tables_are_sorted_distinct_and_exclude_self(shape in (1usize..3, 1usize..4, 2usize..6, 2usize..6), seed in any::<u64>(), k in 1usize..4) {
        let (n, c, h, w) = shape;
        prop_assume!(k < h * w);
        let x = rand(&[n, c, h, w], seed);
        let table = knn_neighbors(&x, k).unwrap();
        let expected = oracle::knn(&x, k);
        for img in 0..n {
            for node in 0..h * w {
                let nb = table.neighbors(img, node);
                prop_assert!(!nb.contains(&(node as u32)));
                prop_assert_eq!(nb, &expected[img][node][..]);
            }
        }
    }

    #[test]
    fn composite_gradients_match_replay_differences(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let x: Tensor<f64> = rng.tensor(&[1, 2, 4, 4], -1.0, 1.0);
        let w: Tensor<f64> = rng.tensor(&[3, 2, 3, 3], -1.0, 1.0);
        let b: Tensor<f64> = rng.tensor(&[3], -1.0, 1.0);
        let bn = BatchNormParams::<f64>::random(&mut rng, 3).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param("x", &x);
        let wv = tape.param("w", &w);
        let bv = tape.param("b", &b);
        let g = tape.param("gamma", &bn.gamma);
        let be = tape.param("beta", &bn.beta);
        let y = tape.conv2d(&xv, &wv, Some(&bv), ConvGeom::new(1, 1, 1)).unwrap();
        let y = tape.batch_norm(&y, &g, &be, &bn).unwrap();
        let y = tape.gelu(&y).unwrap();
        let r = tape.roll(&y, 1, Axis::Width).unwrap();
        let y = tape.binary(BinaryOp::Mul, &y, &r).unwrap();
        let loss = tape.mean(y).unwrap();
        prop_assert!(tape.replay_matches().unwrap());
        let grads = tape.backward(loss).unwrap();
        let h = 1e-6;
        for (name, var) in tape.params() {
            let base = tape.get(var).unwrap().clone();
            let analytic = grads.get(&tape, var).unwrap();
            let mut worst: f64 = 0.0;
            let mut scale: f64 = f64::MIN_POSITIVE;
            for i in 0..base.len() {
                let at = |d: f64| {
                    let mut v = base.to_vec();
                    v[i] += d;
                    let o = HashMap::from([(var, Tensor::from_vec(base.shape(), v).unwrap())]);
                    tape.replay_value(&o, loss).unwrap().data()[0]
                };
                let num = (at(h) - at(-h)) / (2.0 * h);
                worst = worst.max((num - analytic.data()[i]).abs());
                scale = scale.max(num.abs()).max(analytic.data()[i].abs());
            }
            prop_assert!(worst / scale < 1e-4, "{} rel err {}", name, worst / scale);
        }
    }

    #[test]
    fn config_text_round_trip(
        chans in prop::collection::vec(2usize..40, 1..5),
        reps in prop::collection::vec((0usize..4, 0usize..4, 1usize..9), 4),
        res in 1usize..10, classes in 1usize..2000, cpe in any::<bool>(),
        method in prop::sample::select(GraphMethod::ALL.to_vec()),
    ) {
        let mut c = chans.clone();
        c.sort_unstable();
        c.dedup();
        let stages = c.iter().zip(&reps).map(|(&channels, &(m, d, k))| StageConfig {
            channels, mbconv_repeats: m, dagc_repeats: d, k,
        }).collect();
        let config = ModelConfig {
            name: "prop".into(), stages, classes, resolution: 32 * res, in_channels: 3, graph: method, use_cpe: cpe,
        };
        prop_assert_eq!(ModelConfig::parse(&config.to_text()).unwrap(), config);
    }
}

#[test]
fn eager_and_tape_agree_on_a_block_chain() {
    use axialvig::blocks::{dagc_block_on, mbconv_on, DagcBlockParams, MbconvParams, NormInit};
    use axialvig::graph::GraphSpec;
    let mut rng = SplitMix64::new(77);
    let d = DagcBlockParams::<f64>::init(&mut rng, 8, true, NormInit::Random).unwrap();
    let m = MbconvParams::<f64>::init(&mut rng, 8, 4, NormInit::Random).unwrap();
    let x = rand(&[1, 8, 8, 8], 78);
    let spec = GraphSpec::new(GraphMethod::Dagc, 2).unwrap();
    let (y, _) = dagc_block_on(&mut Eager, "d", spec, &d, &x).unwrap();
    let eager = mbconv_on(&mut Eager, "m", &m, &y).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let (y, _) = dagc_block_on(&mut tape, "d", spec, &d, &xv).unwrap();
    let out = mbconv_on(&mut tape, "m", &m, &y).unwrap();
    assert!(tape.get(out).unwrap().bit_eq(&eager));
    assert!(tape.replay_matches().unwrap());
}

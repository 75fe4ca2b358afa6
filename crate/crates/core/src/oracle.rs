//! Brute-force reference implementations.
//!
//! These enumerate neighbors node by node with plain index arithmetic and
//! share no code with the roll/mask/max pipeline in [`crate::graph`]. They are
//! slow and f64-only on purpose.

use crate::tensor::Tensor;

fn feature(x: &Tensor<f64>, n: usize, r: usize, c: usize) -> Vec<f64> {
    (0..x.shape()[1]).map(|ch| x.at4(n, ch, r, c)).collect()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Mean and population std of the distance between every node in a quadrant
/// and the node it trades places with when diagonal quadrants swap.
pub fn quadrant_stats(x: &Tensor<f64>) -> Vec<(f64, f64)> {
    let (n, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (qh, qw) = (h / 2, w / 2);
    let partner = |i: usize, extent: usize, half: usize| -> Option<usize> {
        if i < half {
            Some(extent - half + i)
        } else if i >= extent - half {
            Some(i - (extent - half))
        } else {
            None
        }
    };
    (0..n)
        .map(|img| {
            let mut d = Vec::new();
            for r in 0..h {
                for c in 0..w {
                    if let (Some(r2), Some(c2)) = (partner(r, h, qh), partner(c, w, qw)) {
                        d.push(l2(&feature(x, img, r, c), &feature(x, img, r2, c2)));
                    }
                }
            }
            if d.is_empty() {
                return (0.0, 0.0);
            }
            let mu = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d.len() as f64;
            (mu, var.sqrt())
        })
        .collect()
}

/// Axial candidates of node `(r, c)`: every node `m*k` rows above (with
/// wraparound) and `m*k` columns to the left, `m = 0, 1, ...` while `m*k`
/// stays below the extent. A roll by `s` brings the node at `i - s` to `i`.
fn axial_candidates(h: usize, w: usize, k: usize, r: usize, c: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut m = 0;
    while m * k < h {
        out.push(((r + h - (m * k) % h) % h, c));
        m += 1;
    }
    let mut m = 0;
    while m * k < w {
        out.push((r, (c + w - (m * k) % w) % w));
        m += 1;
    }
    out
}

/// Axial max-relative aggregation; `connect(distance, image)` decides each
/// candidate. Returns the output and the connection count per image.
fn axial_oracle(
    x: &Tensor<f64>,
    k: usize,
    connect: impl Fn(f64, usize) -> bool,
) -> (Tensor<f64>, Vec<u64>) {
    let (n, ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = vec![0.0; x.len()];
    let mut connections = vec![0u64; n];
    for img in 0..n {
        for r in 0..h {
            for c in 0..w {
                let me = feature(x, img, r, c);
                let mut best = vec![0.0f64; ch];
                for (r2, c2) in axial_candidates(h, w, k, r, c) {
                    let other = feature(x, img, r2, c2);
                    if !connect(l2(&me, &other), img) {
                        continue;
                    }
                    connections[img] += 1;
                    for (b, (o, s)) in best.iter_mut().zip(other.iter().zip(&me)) {
                        *b = b.max(o - s);
                    }
                }
                for (cc, b) in best.into_iter().enumerate() {
                    out[((img * ch + cc) * h + r) * w + c] = b;
                }
            }
        }
    }
    (Tensor::from_vec(x.shape(), out).expect("same shape"), connections)
}

/// DAGC: connect candidates whose distance is strictly below `thresholds[image]`.
pub fn dagc(x: &Tensor<f64>, k: usize, thresholds: &[f64]) -> (Tensor<f64>, Vec<u64>) {
    axial_oracle(x, k, |d, img| d < thresholds[img])
}

/// SVGA: connect every axial candidate.
pub fn svga(x: &Tensor<f64>, k: usize) -> Tensor<f64> {
    axial_oracle(x, k, |_, _| true).0
}

/// Nearest `k` other nodes per node by full sort on `(squared distance, index)`.
pub fn knn(x: &Tensor<f64>, k: usize) -> Vec<Vec<Vec<u32>>> {
    let (n, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    (0..n)
        .map(|img| {
            let feats: Vec<Vec<f64>> = (0..h * w).map(|p| feature(x, img, p / w, p % w)).collect();
            (0..h * w)
                .map(|i| {
                    let mut all: Vec<(f64, u32)> = (0..h * w)
                        .filter(|&j| j != i)
                        .map(|j| {
                            let d2: f64 = feats[i].iter().zip(&feats[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                            (d2, j as u32)
                        })
                        .collect();
                    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                    all.into_iter().take(k).map(|(_, j)| j).collect()
                })
                .collect()
        })
        .collect()
}

/// Max-relative aggregation over explicit neighbor lists.
pub fn max_relative(x: &Tensor<f64>, neighbors: &[Vec<Vec<u32>>]) -> Tensor<f64> {
    let (n, ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = vec![0.0; x.len()];
    for img in 0..n {
        for p in 0..h * w {
            let me = feature(x, img, p / w, p % w);
            for (cc, &m) in me.iter().enumerate() {
                let best = neighbors[img][p]
                    .iter()
                    .map(|&j| x.at4(img, cc, j as usize / w, j as usize % w) - m)
                    .fold(f64::NEG_INFINITY, f64::max);
                out[((img * ch + cc) * h + p / w) * w + p % w] = best;
            }
        }
    }
    Tensor::from_vec(x.shape(), out).expect("same shape")
}

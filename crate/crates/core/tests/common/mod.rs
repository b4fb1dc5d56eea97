//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use chunkconf::deformconv::DeformWeights;
use chunkconf::numerics::{Real, Tensor};

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    z.iter().map(|v| v - m - s.ln()).collect()
}

/// Probability of `targets` under joint logits `[T, U+1, V+1]`, summed
/// over every interleaving of `T` blanks and `U` emissions that ends in a blank.
pub fn rnnt_brute_force(logits: &Tensor<f64>, targets: &[usize]) -> f64 {
    let (t, u1, v1) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let u = u1 - 1;
    let blank = v1 - 1;
    let lp = |ti: usize, ui: usize| {
        let base = (ti * u1 + ui) * v1;
        log_softmax(&logits.data()[base..base + v1])
    };
    // The first T+U−1 moves pick U emissions; the last move is the final blank.
    let moves = t + u - 1;
    let mut total = 0.0;
    for bits in 0u32..(1 << moves) {
        if bits.count_ones() as usize != u {
            continue;
        }
        let (mut ti, mut ui, mut logp) = (0usize, 0usize, 0.0);
        for m in 0..moves {
            let row = lp(ti, ui);
            if bits >> m & 1 == 1 {
                logp += row[targets[ui]];
                ui += 1;
            } else {
                logp += row[blank];
                ti += 1;
            }
        }
        if ti != t - 1 || ui != u {
            continue;
        }
        logp += lp(ti, ui)[blank];
        total += logp.exp();
    }
    total
}

fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Probability of `targets` under per-frame logits `[T, V+1]`, summed over
/// every length-T path that collapses to it.
pub fn ctc_brute_force(logits: &Tensor<f64>, targets: &[usize], blank: usize) -> f64 {
    let (t, v1) = (logits.rows(), logits.cols());
    let lp: Vec<Vec<f64>> = (0..t).map(|i| log_softmax(logits.row(i))).collect();
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    let count = v1.pow(t as u32);
    for idx in 0..count {
        let mut r = idx;
        for p in path.iter_mut() {
            *p = r % v1;
            r /= v1;
        }
        if collapse(&path, blank) == targets {
            total += path.iter().enumerate().map(|(i, &s)| lp[i][s]).sum::<f64>().exp();
        }
    }
    total
}

/// Grouped convolution with zero padding, written out directly.
pub fn grouped_conv(x: &Tensor<f64>, w: &DeformWeights<f64>) -> Tensor<f64> {
    let (t, c_in, c_out, k) = (x.rows(), w.c_in(), w.c_out(), w.k);
    let (cin_g, cout_g) = (c_in / w.groups, c_out / w.groups);
    let mut y = Tensor::zeros(&[t, c_out]);
    for p in 0..t {
        for co in 0..c_out {
            let g = co / cout_g;
            let mut s = w.output_bias.data()[co];
            for cl in 0..cin_g {
                for tap in 0..k {
                    let src = p as i64 + tap as i64 - (k / 2) as i64;
                    if (0..t as i64).contains(&src) {
                        s += w.output_kernel.data()[(co * cin_g + cl) * k + tap] * x.at(src as usize, g * cin_g + cl);
                    }
                }
            }
            *y.at_mut(p, co) = s;
        }
    }
    y
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` accumulated in double precision.
pub fn rel_err<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let mut num = 0.0;
    let (mut na, mut nb) = (0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x.to_f64(), y.to_f64());
        num += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    num.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-30)
}

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::tail::TransducerTail;

/// `log(exp(a) + exp(b))`, exact when either side is `-inf`.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-softmax of one logit row.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Forward and backward log-probabilities on the `T' × (U+1)` transducer lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct LossLattice {
    /// `[T', U+1]`; `log_alpha[0][0] = 0`.
    pub log_alpha: Tensor<f64>,
    /// `[T', U+1]`; log-probability of finishing from each node, including its outgoing transition.
    pub log_beta: Tensor<f64>,
    /// `[T', U+1]` blank log-probabilities per node.
    pub blank: Tensor<f64>,
    /// `[T', U]` log-probability of emitting the next target at each node.
    pub emit: Tensor<f64>,
}

impl LossLattice {
    pub fn frames(&self) -> usize {
        self.log_alpha.rows()
    }

    pub fn labels(&self) -> usize {
        self.log_alpha.cols() - 1
    }

    /// `log P(targets)`: the terminal node followed by its final blank.
    pub fn log_likelihood(&self) -> f64 {
        let (t, u) = (self.frames() - 1, self.labels());
        self.log_alpha.at(t, u) + self.blank.at(t, u)
    }
}

fn check_targets(targets: &[usize], vocab: usize) -> Result<()> {
    match targets.iter().find(|&&y| y >= vocab) {
        Some(&label) => Err(Error::LabelOutOfRange { label, vocab }),
        None => Ok(()),
    }
}

/// Builds the lattice from joint logits `[T', U+1, V+1]`; the blank is index `V`.
pub fn rnnt_lattice(logits: &Tensor<f64>, targets: &[usize]) -> Result<LossLattice> {
    if logits.rank() != 3 || logits.shape()[1] != targets.len() + 1 || logits.shape()[2] < 2 {
        return Err(Error::shape("rnnt logits", logits.shape(), &[0, targets.len() + 1, 0]));
    }
    let (t, u1, v1) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    if t == 0 {
        return Err(Error::InfeasibleAlignment { required: 1, available: 0 });
    }
    let blank_id = v1 - 1;
    check_targets(targets, blank_id)?;
    let u = u1 - 1;

    let mut blank = Tensor::zeros(&[t, u1]);
    let mut emit = Tensor::full(&[t, u.max(1)], f64::NEG_INFINITY);
    for ti in 0..t {
        for ui in 0..u1 {
            let base = (ti * u1 + ui) * v1;
            let lp = log_softmax(&logits.data()[base..base + v1]);
            *blank.at_mut(ti, ui) = lp[blank_id];
            if ui < u {
                *emit.at_mut(ti, ui) = lp[targets[ui]];
            }
        }
    }
    if u == 0 {
        emit = Tensor::zeros(&[t, 0]);
    }

    let ninf = f64::NEG_INFINITY;
    let mut alpha = Tensor::full(&[t, u1], ninf);
    for ti in 0..t {
        for ui in 0..u1 {
            let v = if ti == 0 && ui == 0 {
                0.0
            } else {
                let from_t = if ti > 0 { alpha.at(ti - 1, ui) + blank.at(ti - 1, ui) } else { ninf };
                let from_u = if ui > 0 { alpha.at(ti, ui - 1) + emit.at(ti, ui - 1) } else { ninf };
                log_add(from_t, from_u)
            };
            *alpha.at_mut(ti, ui) = v;
        }
    }

    let mut beta = Tensor::full(&[t, u1], ninf);
    for ti in (0..t).rev() {
        for ui in (0..u1).rev() {
            let v = if ti == t - 1 && ui == u {
                blank.at(ti, ui)
            } else {
                let via_blank = if ti + 1 < t { beta.at(ti + 1, ui) + blank.at(ti, ui) } else { ninf };
                let via_emit = if ui < u { beta.at(ti, ui + 1) + emit.at(ti, ui) } else { ninf };
                log_add(via_blank, via_emit)
            };
            *beta.at_mut(ti, ui) = v;
        }
    }

    Ok(LossLattice {
        log_alpha: alpha,
        log_beta: beta,
        blank,
        emit,
    })
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient of the loss with respect to the logits, same shape.
    pub grad: Tensor<f64>,
}

/// Transducer loss `−log P(targets)` and its gradient with respect to the
/// joint logits `[T', U+1, V+1]`.
pub fn rnnt_loss_from_logits(logits: &Tensor<f64>, targets: &[usize]) -> Result<LossOutput> {
    let lat = rnnt_lattice(logits, targets)?;
    let ll = lat.log_likelihood();
    let (t, u1, v1) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let (u, blank_id) = (u1 - 1, v1 - 1);
    let mut grad = Tensor::zeros(logits.shape());
    for ti in 0..t {
        for ui in 0..u1 {
            let a = lat.log_alpha.at(ti, ui);
            // Occupancy of the outgoing blank and emit transitions.
            let g_blank = if ti + 1 < t {
                -(a + lat.blank.at(ti, ui) + lat.log_beta.at(ti + 1, ui) - ll).exp()
            } else if ui == u {
                -(a + lat.blank.at(ti, ui) - ll).exp()
            } else {
                0.0
            };
            let g_emit = if ui < u {
                -(a + lat.emit.at(ti, ui) + lat.log_beta.at(ti, ui + 1) - ll).exp()
            } else {
                0.0
            };
            let base = (ti * u1 + ui) * v1;
            let p: Vec<f64> = log_softmax(&logits.data()[base..base + v1]).iter().map(|l| l.exp()).collect();
            let total = g_blank + g_emit;
            let row = &mut grad.data_mut()[base..base + v1];
            for (k, r) in row.iter_mut().enumerate() {
                *r = -p[k] * total;
            }
            row[blank_id] += g_blank;
            if ui < u {
                row[targets[ui]] += g_emit;
            }
        }
    }
    Ok(LossOutput { loss: -ll, grad })
}

/// Transducer loss of `targets` given encoder frames `[T', d]`; the
/// gradient is with respect to the joint logits.
pub fn rnnt_loss(enc: &Tensor<f64>, targets: &[usize], tail: &TransducerTail) -> Result<LossOutput> {
    check_targets(targets, tail.vocab())?;
    rnnt_loss_from_logits(&tail.lattice_logits(enc, targets)?, targets)
}

/// Minimum frames for a CTC alignment: one per label plus one blank
/// between each pair of repeated neighbours.
pub fn ctc_min_frames(targets: &[usize]) -> usize {
    targets.len() + targets.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC loss `−log P(targets)` for logits `[T', V+1]` and its gradient.
pub fn ctc_loss(logits: &Tensor<f64>, targets: &[usize], blank_id: usize) -> Result<LossOutput> {
    if logits.rank() != 2 || blank_id >= logits.cols() {
        return Err(Error::shape("ctc logits", logits.shape(), &[0, blank_id + 1]));
    }
    let (t, v1) = (logits.rows(), logits.cols());
    for &y in targets {
        if y >= v1 || y == blank_id {
            return Err(Error::LabelOutOfRange { label: y, vocab: v1 - 1 });
        }
    }
    let required = ctc_min_frames(targets).max(1);
    if t < required {
        return Err(Error::InfeasibleAlignment { required, available: t });
    }

    let ext: Vec<usize> = std::iter::once(blank_id)
        .chain(targets.iter().flat_map(|&y| [y, blank_id]))
        .collect();
    let s = ext.len();
    let lp: Vec<Vec<f64>> = (0..t).map(|ti| log_softmax(logits.row(ti))).collect();
    let ninf = f64::NEG_INFINITY;
    let skip_ok = |i: usize| i >= 2 && ext[i] != blank_id && ext[i] != ext[i - 2];

    // alpha includes the emission at t; beta excludes it.
    let mut alpha = vec![vec![ninf; s]; t];
    alpha[0][0] = lp[0][ext[0]];
    if s > 1 {
        alpha[0][1] = lp[0][ext[1]];
    }
    for ti in 1..t {
        for i in 0..s {
            let mut acc = alpha[ti - 1][i];
            if i >= 1 {
                acc = log_add(acc, alpha[ti - 1][i - 1]);
            }
            if skip_ok(i) {
                acc = log_add(acc, alpha[ti - 1][i - 2]);
            }
            alpha[ti][i] = acc + lp[ti][ext[i]];
        }
    }
    let ll = if s > 1 { log_add(alpha[t - 1][s - 1], alpha[t - 1][s - 2]) } else { alpha[t - 1][0] };

    let mut beta = vec![vec![ninf; s]; t];
    beta[t - 1][s - 1] = 0.0;
    if s > 1 {
        beta[t - 1][s - 2] = 0.0;
    }
    for ti in (0..t - 1).rev() {
        for i in 0..s {
            let mut acc = beta[ti + 1][i] + lp[ti + 1][ext[i]];
            if i + 1 < s {
                acc = log_add(acc, beta[ti + 1][i + 1] + lp[ti + 1][ext[i + 1]]);
            }
            if i + 2 < s && skip_ok(i + 2) {
                acc = log_add(acc, beta[ti + 1][i + 2] + lp[ti + 1][ext[i + 2]]);
            }
            beta[ti][i] = acc;
        }
    }

    let mut grad = Tensor::zeros(&[t, v1]);
    for ti in 0..t {
        let row = grad.row_mut(ti);
        for (k, r) in row.iter_mut().enumerate() {
            *r = lp[ti][k].exp();
        }
        for i in 0..s {
            let occ = alpha[ti][i] + beta[ti][i] - ll;
            if occ > ninf {
                row[ext[i]] -= occ.exp();
            }
        }
    }
    Ok(LossOutput { loss: -ll, grad })
}

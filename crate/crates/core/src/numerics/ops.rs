use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Additive penalty applied to masked scores before exponentiation.
pub const MASK_PENALTY: f64 = -1e9;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materialising the transpose.
pub fn matmul_bt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::shape("matmul_bt", a.shape(), b.shape()));
    }
    let (m, n) = (a.shape()[0], b.shape()[0]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            *out.at_mut(i, j) = dot(ar, b.row(j));
        }
    }
    Ok(out)
}

/// `aᵀ · b`.
pub fn matmul_at<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0] {
        return Err(Error::shape("matmul_at", a.shape(), b.shape()));
    }
    let (r, m, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for t in 0..r {
        let ar = a.row(t);
        let br = b.row(t);
        for (i, &av) in ar.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let orow = out.row_mut(i);
            for (o, &bv) in orow.iter_mut().zip(br) {
                *o = *o + av * bv;
            }
        }
    }
    debug_assert_eq!(out.shape(), &[m, n]);
    Ok(out)
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `x · w + b` for `x: [N, in]`, `w: [in, out]`, `b: [out]`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let mut y = matmul(x, w)?;
    if let Some(b) = b {
        add_row_bias(&mut y, b)?;
    }
    Ok(y)
}

pub fn add_row_bias<T: Real>(y: &mut Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if b.len() != y.cols() {
        return Err(Error::shape("bias", y.shape(), b.shape()));
    }
    for r in 0..y.rows() {
        for (v, &bv) in y.row_mut(r).iter_mut().zip(b.data()) {
            *v = *v + bv;
        }
    }
    Ok(())
}

/// Column sums of a 2-D tensor (bias gradient).
pub fn sum_rows<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(&[g.cols()]);
    for r in 0..g.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o = *o + v;
        }
    }
    out
}

/// Softmax over the last axis of `scores: [..., T, T]` with a `[T, T]`
/// binary mask applied additively before exponentiation. Masked entries
/// come out exactly zero.
pub fn masked_softmax<T: Real>(scores: &Tensor<T>, mask: &[bool]) -> Result<Tensor<T>> {
    let t = scores.cols();
    if scores.rank() < 2 || scores.shape()[scores.rank() - 2] != t || mask.len() != t * t {
        return Err(Error::shape("masked_softmax", scores.shape(), &[mask.len()]));
    }
    let mut out = scores.clone();
    let rows = out.rows();
    for r in 0..rows {
        let i = r % t;
        masked_softmax_row(out.row_mut(r), &mask[i * t..(i + 1) * t]).map_err(|_| Error::InvalidMask { row: i })?;
    }
    Ok(out)
}

/// In-place masked softmax of one row; `Err(())` when every entry is masked.
pub(crate) fn masked_softmax_row<T: Real>(row: &mut [T], mask: &[bool]) -> std::result::Result<(), ()> {
    if !mask.iter().any(|&m| m) {
        return Err(());
    }
    let penalty = T::from_f64(MASK_PENALTY);
    let mut max = T::neg_infinity();
    for (v, &m) in row.iter_mut().zip(mask) {
        if !m {
            *v = *v + penalty;
        }
        if *v > max {
            max = *v;
        }
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for (v, &m) in row.iter_mut().zip(mask) {
        *v = if m { *v * inv } else { T::zero() };
    }
    Ok(())
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn swish<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * sigmoid(v))
}

/// d swish / dx evaluated at `x`, multiplied by `dy`.
pub fn swish_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(dy, "swish_backward", |v, g| {
        let s = sigmoid(v);
        g * (s + v * s * (T::one() - s))
    })
}

/// Gated linear unit over the last axis: `a ⊙ σ(b)` for `x = [a | b]`.
pub fn glu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let c2 = x.cols();
    if !c2.is_multiple_of(2) {
        return Err(Error::shape("glu", x.shape(), &[c2 / 2 * 2]));
    }
    let c = c2 / 2;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = c;
    let mut out = Tensor::zeros(&shape);
    for r in 0..x.rows() {
        let src = x.row(r);
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = src[j] * sigmoid(src[c + j]);
        }
    }
    Ok(out)
}

pub fn glu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let c = dy.cols();
    if x.cols() != 2 * c || x.rows() != dy.rows() {
        return Err(Error::shape("glu_backward", x.shape(), dy.shape()));
    }
    let mut dx = Tensor::zeros(x.shape());
    for r in 0..x.rows() {
        let src = x.row(r);
        let g = dy.row(r);
        let d = dx.row_mut(r);
        for j in 0..c {
            let s = sigmoid(src[c + j]);
            d[j] = g[j] * s;
            d[c + j] = g[j] * src[j] * s * (T::one() - s);
        }
    }
    Ok(dx)
}

/// Layer normalisation over the last axis with `eps` inside the square root.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let d = x.cols();
    if d == 0 || gamma.len() != d || beta.len() != d {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    let eps = T::from_f64(eps);
    let n = T::from_f64(d as f64);
    let mut out = Tensor::zeros(x.shape());
    for r in 0..x.rows() {
        let xr = x.row(r);
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (xr[j] - mean) * inv * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok(out)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: f64,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let d = x.cols();
    if gamma.len() != d || dy.shape() != x.shape() {
        return Err(Error::shape("layer_norm_backward", x.shape(), dy.shape()));
    }
    let eps = T::from_f64(eps);
    let n = T::from_f64(d as f64);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[d]);
    let mut dbeta = Tensor::zeros(&[d]);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let g = dy.row(r);
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        let xhat: Vec<T> = xr.iter().map(|&v| (v - mean) * inv).collect();
        let dxhat: Vec<T> = g.iter().zip(gamma.data()).map(|(&a, &b)| a * b).collect();
        let mean_dxhat = dxhat.iter().copied().sum::<T>() / n;
        let mean_dxhat_xhat = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
        for j in 0..d {
            dgamma.data_mut()[j] = dgamma.data()[j] + g[j] * xhat[j];
            dbeta.data_mut()[j] = dbeta.data()[j] + g[j];
        }
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Per-channel convolution of `x: [T, C]` with `kernel: [C, K]`, stride 1,
/// zero padding of `(K-1)/2` on both sides.
pub fn depthwise_conv1d<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    depthwise_conv1d_segmented(x, kernel, x.rows().max(1))
}

/// As [`depthwise_conv1d`], but every run of `segment` rows is convolved
/// independently with its own zero padding.
pub fn depthwise_conv1d_segmented<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, segment: usize) -> Result<Tensor<T>> {
    let (t, c) = (x.rows(), x.cols());
    if kernel.rank() != 2 || kernel.shape()[0] != c {
        return Err(Error::shape("depthwise_conv1d", x.shape(), kernel.shape()));
    }
    let k = kernel.shape()[1];
    if k.is_multiple_of(2) {
        return Err(Error::Config(format!("depthwise kernel size must be odd, got {k}")));
    }
    if segment == 0 {
        return Err(Error::Config("segment length must be positive".into()));
    }
    let half = (k / 2) as isize;
    let mut out = Tensor::zeros(x.shape());
    let kd = kernel.data();
    for start in (0..t).step_by(segment) {
        let end = (start + segment).min(t);
        for p in start..end {
            let orow_base = p * c;
            for tap in 0..k {
                let s = p as isize + tap as isize - half;
                if s < start as isize || s >= end as isize {
                    continue;
                }
                let xrow = x.row(s as usize);
                let od = &mut out.data_mut()[orow_base..orow_base + c];
                for ch in 0..c {
                    od[ch] = od[ch] + xrow[ch] * kd[ch * k + tap];
                }
            }
        }
    }
    Ok(out)
}

/// LSTM cell parameters; gate order along the `4H` axis is input, forget,
/// cell candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights<T> {
    /// `[D_in, 4H]`
    pub w_ih: Tensor<T>,
    /// `[H, 4H]`
    pub w_hh: Tensor<T>,
    /// `[4H]`
    pub bias: Tensor<T>,
}

impl<T: Real> LstmWeights<T> {
    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[0]
    }

    pub fn num_params(&self) -> usize {
        self.w_ih.len() + self.w_hh.len() + self.bias.len()
    }
}

pub fn lstm_step<T: Real>(x: &[T], h: &[T], c: &[T], w: &LstmWeights<T>) -> Result<(Vec<T>, Vec<T>)> {
    let hid = w.hidden();
    if w.w_ih.shape() != [x.len(), 4 * hid]
        || w.w_hh.shape() != [hid, 4 * hid]
        || w.bias.len() != 4 * hid
        || h.len() != hid
        || c.len() != hid
    {
        return Err(Error::shape("lstm_step", &[x.len(), h.len(), c.len()], w.w_ih.shape()));
    }
    let mut gates = w.bias.data().to_vec();
    for (xi, &xv) in x.iter().enumerate() {
        for (g, &wv) in gates.iter_mut().zip(w.w_ih.row(xi)) {
            *g = *g + xv * wv;
        }
    }
    for (hi, &hv) in h.iter().enumerate() {
        for (g, &wv) in gates.iter_mut().zip(w.w_hh.row(hi)) {
            *g = *g + hv * wv;
        }
    }
    let mut h_new = vec![T::zero(); hid];
    let mut c_new = vec![T::zero(); hid];
    for j in 0..hid {
        let i_g = sigmoid(gates[j]);
        let f_g = sigmoid(gates[hid + j]);
        let g_g = gates[2 * hid + j].tanh();
        let o_g = sigmoid(gates[3 * hid + j]);
        c_new[j] = f_g * c[j] + i_g * g_g;
        h_new[j] = o_g * c_new[j].tanh();
    }
    Ok((h_new, c_new))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn t2(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(i, p) * b.at(p, j);
                }
                *out.at_mut(i, j) = s;
            }
        }
        out
    }

    #[test]
    fn matmul_examples() {
        let m = t2(&[&[1., 2.], &[3., 4.]]);
        assert_eq!(matmul(&Tensor::identity(2), &m).unwrap(), m);
        let r = matmul(&t2(&[&[1., 2.]]), &t2(&[&[3.], &[4.]])).unwrap();
        assert_eq!(r.data(), &[11.0]);
        let mut rng = Rng::seed(3);
        let a = rng.normal_tensor::<f64>(&[5, 4], 1.0);
        let b = rng.normal_tensor::<f64>(&[4, 3], 1.0);
        assert_eq!(matmul(&a, &b).unwrap(), naive_matmul(&a, &b));
        assert!(matmul_bt(&a, &b.transpose()).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-14);
        assert!(matmul_at(&a.transpose(), &b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-14);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let err = matmul(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_linearity() {
        let mut rng = Rng::seed(11);
        let a = rng.normal_tensor::<f64>(&[4, 6], 1.0);
        let b = rng.normal_tensor::<f64>(&[6, 5], 1.0);
        let c = rng.normal_tensor::<f64>(&[6, 5], 1.0);
        let lhs = matmul(&a, &b.add(&c).unwrap()).unwrap();
        let rhs = matmul(&a, &b).unwrap().add(&matmul(&a, &c).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn masked_softmax_examples() {
        let all = vec![true; 16];
        let s = Tensor::<f64>::zeros(&[4, 4]);
        let p = masked_softmax(&s, &all).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let mut diag = vec![false; 16];
        for i in 0..4 {
            diag[i * 4 + i] = true;
        }
        assert_eq!(masked_softmax(&s, &diag).unwrap(), Tensor::identity(4));

        let s = t2(&[&[0.0, 2f64.ln()], &[0.0, 0.0]]);
        let p = masked_softmax(&s, &[true; 4]).unwrap();
        let want = [1.0 / 3.0, 2.0 / 3.0, 0.5, 0.5];
        for (a, b) in p.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_softmax_rejects_empty_row() {
        let mut m = vec![true; 9];
        m[3..6].fill(false);
        let err = masked_softmax(&Tensor::<f64>::zeros(&[3, 3]), &m).unwrap_err();
        assert!(matches!(err, Error::InvalidMask { row: 1 }));
    }

    #[test]
    fn masked_softmax_batched_rows_normalise() {
        let mut rng = Rng::seed(5);
        let s: Tensor<f32> = rng.normal_tensor(&[3, 5, 5], 3.0);
        let mask: Vec<bool> = (0..25).map(|i| i % 5 == i / 5 || rng.unit() < 0.5).collect();
        let p = masked_softmax(&s, &mask).unwrap();
        for r in 0..15 {
            let row = p.row(r);
            let i = r % 5;
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for j in 0..5 {
                if !mask[i * 5 + j] {
                    assert_eq!(row[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::full(&[3], 1.0);
        let zero = Tensor::zeros(&[3]);
        let y = layer_norm(&t2(&[&[1., 1., 1.]]), &one, &zero, LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let y = layer_norm(&t2(&[&[-1., 1.]]), &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), LAYER_NORM_EPS).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-4 && (y.data()[1] - 1.0).abs() < 1e-4);

        // variance 1 → scale 1/sqrt(1+eps)
        let y = layer_norm(&t2(&[&[0., 2.]]), &Tensor::full(&[2], 2.0), &Tensor::full(&[2], 1.0), LAYER_NORM_EPS).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] - (1.0 - 2.0 * s)).abs() < 1e-15);
        assert!((y.data()[1] - (1.0 + 2.0 * s)).abs() < 1e-15);
    }

    #[test]
    fn swish_examples() {
        let y = swish(&Tensor::from_vec(&[3], vec![0.0f64, 50.0, 1.0]).unwrap());
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 50.0).abs() < 1e-12);
        assert!((y.data()[2] - 0.7310585786300049).abs() < 1e-6);
    }

    #[test]
    fn glu_examples() {
        let y = glu(&Tensor::from_vec(&[1, 2], vec![3.0f64, 0.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1.5]);
        let y = glu(&Tensor::from_vec(&[1, 2], vec![0.0f64, 7.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0]);
        let y = glu(&Tensor::from_vec(&[1, 2], vec![2.0f64, 1.0]).unwrap()).unwrap();
        assert!((y.data()[0] - 1.4621171572600098).abs() < 1e-6);
        assert!(glu(&Tensor::<f64>::zeros(&[2, 3])).is_err());
    }

    fn naive_dwconv(x: &Tensor<f64>, k: &Tensor<f64>) -> Tensor<f64> {
        let (t, c) = (x.rows(), x.cols());
        let kk = k.shape()[1];
        let half = (kk / 2) as i64;
        let mut out = Tensor::zeros(&[t, c]);
        for p in 0..t {
            for ch in 0..c {
                let mut s = 0.0;
                for j in 0..kk {
                    let src = p as i64 + j as i64 - half;
                    if src >= 0 && (src as usize) < t {
                        s += x.at(src as usize, ch) * k.at(ch, j);
                    }
                }
                *out.at_mut(p, ch) = s;
            }
        }
        out
    }

    #[test]
    fn depthwise_examples() {
        let mut rng = Rng::seed(2);
        let x: Tensor<f64> = rng.normal_tensor::<f64>(&[6, 2], 1.0);
        let delta = Tensor::from_rows(&[vec![0., 1., 0.], vec![0., 1., 0.]]);
        assert_eq!(depthwise_conv1d(&x, &delta).unwrap(), x);

        let y = depthwise_conv1d(&Tensor::full(&[5, 1], 1.0), &Tensor::full(&[1, 3], 1.0)).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 3.0, 3.0, 2.0]);

        let x = rng.normal_tensor::<f64>(&[7, 2], 1.0);
        let k = rng.normal_tensor::<f64>(&[2, 3], 1.0);
        assert_eq!(depthwise_conv1d(&x, &k).unwrap(), naive_dwconv(&x, &k));

        assert!(matches!(depthwise_conv1d(&x, &Tensor::zeros(&[2, 4])), Err(Error::Config(_))));
    }

    #[test]
    fn depthwise_grid_matches_naive() {
        let mut rng = Rng::seed(9);
        for t in 1..=16 {
            for c in 1..=4 {
                for k in [1, 3, 5] {
                    let x = rng.normal_tensor::<f64>(&[t, c], 1.0);
                    let kern = rng.normal_tensor::<f64>(&[c, k], 1.0);
                    assert_eq!(depthwise_conv1d(&x, &kern).unwrap(), naive_dwconv(&x, &kern));
                }
            }
        }
    }

    #[test]
    fn depthwise_kernel_longer_than_sequence() {
        let mut rng = Rng::seed(4);
        let x = rng.normal_tensor::<f64>(&[4, 3], 1.0);
        let k = rng.normal_tensor::<f64>(&[3, 31], 1.0);
        assert_eq!(depthwise_conv1d(&x, &k).unwrap(), naive_dwconv(&x, &k));
    }

    #[test]
    fn segmented_equals_per_segment() {
        let mut rng = Rng::seed(8);
        let x = rng.normal_tensor::<f64>(&[12, 3], 1.0);
        let k = rng.normal_tensor::<f64>(&[3, 5], 1.0);
        let y = depthwise_conv1d_segmented(&x, &k, 4).unwrap();
        for s in 0..3 {
            let part = depthwise_conv1d(&x.slice_rows(4 * s, 4 * s + 4), &k).unwrap();
            assert_eq!(y.slice_rows(4 * s, 4 * s + 4), part);
        }
    }

    fn lstm_zero(d_in: usize, h: usize) -> LstmWeights<f64> {
        LstmWeights {
            w_ih: Tensor::zeros(&[d_in, 4 * h]),
            w_hh: Tensor::zeros(&[h, 4 * h]),
            bias: Tensor::zeros(&[4 * h]),
        }
    }

    #[test]
    fn lstm_zero_weights() {
        let w = lstm_zero(3, 2);
        let (h, c) = lstm_step(&[1.0, -2.0, 0.5], &[0.0; 2], &[0.0; 2], &w).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
    }

    #[test]
    fn lstm_saturated_forget_keeps_cell() {
        let mut w = lstm_zero(2, 2);
        for j in 0..2 {
            w.bias.data_mut()[j] = -100.0;
            w.bias.data_mut()[2 + j] = 100.0;
        }
        let c = [0.7, -1.3];
        let (_, c2) = lstm_step(&[0.3, 0.1], &[0.2, 0.4], &c, &w).unwrap();
        assert!((c2[0] - c[0]).abs() < 1e-12 && (c2[1] - c[1]).abs() < 1e-12);
    }

    #[test]
    fn lstm_matches_scalar_reference() {
        let mut rng = Rng::seed(21);
        let (d_in, hid) = (3, 3);
        let w = LstmWeights {
            w_ih: rng.normal_tensor::<f64>(&[d_in, 4 * hid], 0.5),
            w_hh: rng.normal_tensor::<f64>(&[hid, 4 * hid], 0.5),
            bias: rng.normal_tensor::<f64>(&[4 * hid], 0.5),
        };
        let x: Vec<f64> = (0..d_in).map(|_| rng.normal()).collect();
        let h: Vec<f64> = (0..hid).map(|_| rng.normal()).collect();
        let c: Vec<f64> = (0..hid).map(|_| rng.normal()).collect();
        let (h2, c2) = lstm_step(&x, &h, &c, &w).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..hid {
            let gate = |g: usize| {
                let col = g * hid + j;
                let mut s = w.bias.data()[col];
                for i in 0..d_in {
                    s += x[i] * w.w_ih.at(i, col);
                }
                for i in 0..hid {
                    s += h[i] * w.w_hh.at(i, col);
                }
                s
            };
            let cj = sig(gate(1)) * c[j] + sig(gate(0)) * gate(2).tanh();
            let hj = sig(gate(3)) * cj.tanh();
            assert!((c2[j] - cj).abs() < 1e-12);
            assert!((h2[j] - hj).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_shape_mismatch() {
        let w = lstm_zero(3, 2);
        assert!(lstm_step(&[1.0, 2.0], &[0.0; 2], &[0.0; 2], &w).is_err());
    }
}

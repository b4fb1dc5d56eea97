//! 1-D deformable convolution.
//!
//! A pointwise offset convolution predicts, for every timestep, offset
//! group and kernel tap, a real-valued shift. The output convolution then
//! samples its taps at `p + (k − ⌊K/2⌋) + offset` with linear
//! interpolation between the two neighbouring frames. Frames outside the
//! sequence (or outside the current chunk, in segmented mode) read as zero.

use crate::error::{Error, Result};
use crate::numerics::ops::{add_row_bias, matmul, matmul_at, matmul_bt, sum_rows};
use crate::numerics::{layer_norm, swish, Real, Rng, Tensor, LAYER_NORM_EPS};

#[derive(Clone, Debug, PartialEq)]
pub struct DeformWeights<T> {
    /// `[C_out, C_in / groups, K]`
    pub output_kernel: Tensor<T>,
    /// `[C_out]`
    pub output_bias: Tensor<T>,
    /// `[K · offset_groups, C_in]`; row `g·K + k` predicts tap `k` of offset group `g`.
    pub offset_kernel: Tensor<T>,
    /// `[K · offset_groups]`
    pub offset_bias: Tensor<T>,
    pub k: usize,
    pub groups: usize,
    pub offset_groups: usize,
}

#[derive(Clone, Debug)]
pub struct DeformGrads<T> {
    pub x: Tensor<T>,
    pub output_kernel: Tensor<T>,
    pub output_bias: Tensor<T>,
    pub offset_kernel: Tensor<T>,
    pub offset_bias: Tensor<T>,
    /// Gradient with respect to the predicted offsets, `[T, offset_groups, K]`.
    pub offsets: Tensor<T>,
}

impl<T: Real> DeformWeights<T> {
    pub fn new(c_in: usize, c_out: usize, k: usize, groups: usize, offset_groups: usize, rng: &mut Rng) -> Result<Self> {
        check_layout(c_in, c_out, k, groups, offset_groups)?;
        let cin_g = c_in / groups;
        let cout_g = c_out / groups;
        Ok(Self {
            output_kernel: rng.xavier(&[c_out, cin_g, k], cin_g * k, cout_g * k),
            output_bias: Tensor::zeros(&[c_out]),
            offset_kernel: rng.xavier(&[k * offset_groups, c_in], c_in, k * offset_groups),
            offset_bias: Tensor::zeros(&[k * offset_groups]),
            k,
            groups,
            offset_groups,
        })
    }

    pub fn c_in(&self) -> usize {
        self.offset_kernel.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.output_kernel.shape()[0]
    }

    pub fn num_params(&self) -> usize {
        self.output_kernel.len() + self.output_bias.len() + self.offset_kernel.len() + self.offset_bias.len()
    }

    fn validate(&self) -> Result<()> {
        let (c_in, c_out) = (self.c_in(), self.c_out());
        check_layout(c_in, c_out, self.k, self.groups, self.offset_groups)?;
        let expect = [
            (&self.output_kernel, vec![c_out, c_in / self.groups, self.k]),
            (&self.output_bias, vec![c_out]),
            (&self.offset_kernel, vec![self.k * self.offset_groups, c_in]),
            (&self.offset_bias, vec![self.k * self.offset_groups]),
        ];
        for (t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("deform weights", &shape, t.shape()));
            }
        }
        Ok(())
    }
}

fn check_layout(c_in: usize, c_out: usize, k: usize, groups: usize, offset_groups: usize) -> Result<()> {
    if k.is_multiple_of(2) {
        return Err(Error::Config(format!("deformable kernel size must be odd, got {k}")));
    }
    if groups == 0 || !c_in.is_multiple_of(groups) || !c_out.is_multiple_of(groups) {
        return Err(Error::Config(format!(
            "channels {c_in}->{c_out} not divisible into {groups} groups"
        )));
    }
    if offset_groups == 0 || !c_in.is_multiple_of(offset_groups) {
        return Err(Error::Config(format!(
            "{c_in} input channels not divisible into {offset_groups} offset groups"
        )));
    }
    Ok(())
}

/// Per-timestep offsets `[T, offset_groups, K]`, a pointwise affine map of `x`.
pub fn predict_offsets<T: Real>(x: &Tensor<T>, w: &DeformWeights<T>) -> Result<Tensor<T>> {
    w.validate()?;
    if x.rank() != 2 || x.cols() != w.c_in() {
        return Err(Error::shape("predict_offsets", x.shape(), w.offset_kernel.shape()));
    }
    let mut off = matmul_bt(x, &w.offset_kernel)?;
    add_row_bias(&mut off, &w.offset_bias)?;
    off.reshape(&[x.rows(), w.offset_groups, w.k])
}

/// Sampling positions of the `K` taps at output position `p` for one
/// offset group: `p + (k − ⌊K/2⌋) + offsets[k]`.
pub fn sample_positions<T: Real>(p: usize, offsets: &[T]) -> Vec<f64> {
    let half = (offsets.len() / 2) as f64;
    offsets
        .iter()
        .enumerate()
        .map(|(k, &o)| p as f64 + k as f64 - half + o.to_f64())
        .collect()
}

/// Interpolation corners for sample position `s` within `[start, end)`:
/// `(floor index, fraction)` plus in-range flags for floor and floor + 1.
#[inline]
fn corners(s: f64, start: usize, end: usize) -> (isize, f64, bool, bool) {
    let f = s.floor();
    let fr = s - f;
    let i0 = f as isize;
    let in0 = i0 >= start as isize && i0 < end as isize;
    let in1 = i0 + 1 >= start as isize && i0 + 1 < end as isize;
    (i0, fr, in0, in1)
}

fn check_offsets<T: Real>(x: &Tensor<T>, w: &DeformWeights<T>, offsets: &Tensor<T>) -> Result<()> {
    if x.rank() != 2 || x.cols() != w.c_in() {
        return Err(Error::shape("deform_conv1d", x.shape(), w.offset_kernel.shape()));
    }
    if offsets.shape() != [x.rows(), w.offset_groups, w.k] {
        return Err(Error::shape("deform_conv1d offsets", &[x.rows(), w.offset_groups, w.k], offsets.shape()));
    }
    Ok(())
}

/// Interpolated samples `[C_in, K]` at output position `p`.
fn gather<T: Real>(x: &Tensor<T>, w: &DeformWeights<T>, offsets: &Tensor<T>, p: usize, start: usize, end: usize, buf: &mut [T]) {
    let (c_in, k) = (w.c_in(), w.k);
    let per_og = c_in / w.offset_groups;
    let half = (k / 2) as f64;
    let off_row = &offsets.data()[p * w.offset_groups * k..(p + 1) * w.offset_groups * k];
    for og in 0..w.offset_groups {
        for tap in 0..k {
            let s = (p - start) as f64 + tap as f64 - half + off_row[og * k + tap].to_f64() + start as f64;
            let (i0, fr, in0, in1) = corners(s, start, end);
            let (w0, w1) = (T::from_f64(1.0 - fr), T::from_f64(fr));
            for ci in og * per_og..(og + 1) * per_og {
                let mut v = T::zero();
                if in0 {
                    v = v + w0 * x.at(i0 as usize, ci);
                }
                if in1 {
                    v = v + w1 * x.at((i0 + 1) as usize, ci);
                }
                buf[ci * k + tap] = v;
            }
        }
    }
}

pub fn deform_conv1d_forward<T: Real>(x: &Tensor<T>, w: &DeformWeights<T>, offsets: &Tensor<T>) -> Result<Tensor<T>> {
    deform_conv1d_segmented(x, w, offsets, x.rows().max(1))
}

/// Deformable convolution where each run of `segment` frames is treated as
/// an isolated sequence: samples never read across segment boundaries.
pub fn deform_conv1d_segmented<T: Real>(
    x: &Tensor<T>,
    w: &DeformWeights<T>,
    offsets: &Tensor<T>,
    segment: usize,
) -> Result<Tensor<T>> {
    w.validate()?;
    check_offsets(x, w, offsets)?;
    if segment == 0 {
        return Err(Error::Config("segment length must be positive".into()));
    }
    let (t, c_in, c_out, k) = (x.rows(), w.c_in(), w.c_out(), w.k);
    let (cin_g, cout_g) = (c_in / w.groups, c_out / w.groups);
    let mut out = Tensor::zeros(&[t, c_out]);
    let mut buf = vec![T::zero(); c_in * k];
    let wk = w.output_kernel.data();
    for start in (0..t).step_by(segment) {
        let end = (start + segment).min(t);
        for p in start..end {
            gather(x, w, offsets, p, start, end, &mut buf);
            let orow = out.row_mut(p);
            for (co, o) in orow.iter_mut().enumerate() {
                let g = co / cout_g;
                let taps = &buf[g * cin_g * k..(g + 1) * cin_g * k];
                let kern = &wk[co * cin_g * k..(co + 1) * cin_g * k];
                *o = w.output_bias.data()[co] + crate::numerics::ops::dot(taps, kern);
            }
        }
    }
    Ok(out)
}

/// Gradients of `Σ upstream ⊙ deform_conv1d_forward(x, w, predict_offsets(x, w))`,
/// flowing through both the kernel and the predicted offsets.
pub fn deform_conv1d_backward<T: Real>(x: &Tensor<T>, w: &DeformWeights<T>, upstream: &Tensor<T>) -> Result<DeformGrads<T>> {
    deform_conv1d_backward_segmented(x, w, upstream, x.rows().max(1))
}

pub fn deform_conv1d_backward_segmented<T: Real>(
    x: &Tensor<T>,
    w: &DeformWeights<T>,
    upstream: &Tensor<T>,
    segment: usize,
) -> Result<DeformGrads<T>> {
    let offsets = predict_offsets(x, w)?;
    let (t, c_in, c_out, k) = (x.rows(), w.c_in(), w.c_out(), w.k);
    if upstream.shape() != [t, c_out] {
        return Err(Error::shape("deform_conv1d_backward", &[t, c_out], upstream.shape()));
    }
    if segment == 0 {
        return Err(Error::Config("segment length must be positive".into()));
    }
    let (cin_g, cout_g) = (c_in / w.groups, c_out / w.groups);
    let per_og = c_in / w.offset_groups;
    let half = (k / 2) as f64;

    let mut g_x = Tensor::zeros(x.shape());
    let mut g_kernel = Tensor::zeros(w.output_kernel.shape());
    let mut g_off = Tensor::zeros(offsets.shape());
    let mut samples = vec![T::zero(); c_in * k];
    let mut g_samples = vec![T::zero(); c_in * k];
    let wk = w.output_kernel.data();

    for start in (0..t).step_by(segment) {
        let end = (start + segment).min(t);
        for p in start..end {
            gather(x, w, &offsets, p, start, end, &mut samples);
            g_samples.fill(T::zero());
            let up = upstream.row(p);
            for (co, &gy) in up.iter().enumerate() {
                if gy == T::zero() {
                    continue;
                }
                let g = co / cout_g;
                let base = g * cin_g * k;
                let kern = &wk[co * cin_g * k..(co + 1) * cin_g * k];
                let gk = &mut g_kernel.data_mut()[co * cin_g * k..(co + 1) * cin_g * k];
                for idx in 0..cin_g * k {
                    gk[idx] = gk[idx] + gy * samples[base + idx];
                    g_samples[base + idx] = g_samples[base + idx] + gy * kern[idx];
                }
            }
            for og in 0..w.offset_groups {
                for tap in 0..k {
                    let oidx = (p * w.offset_groups + og) * k + tap;
                    let s = p as f64 + tap as f64 - half + offsets.data()[oidx].to_f64();
                    let (i0, fr, in0, in1) = corners(s, start, end);
                    let (w0, w1) = (T::from_f64(1.0 - fr), T::from_f64(fr));
                    let mut d_off = T::zero();
                    for ci in og * per_og..(og + 1) * per_og {
                        let gs = g_samples[ci * k + tap];
                        if gs == T::zero() {
                            continue;
                        }
                        let x0 = if in0 { x.at(i0 as usize, ci) } else { T::zero() };
                        let x1 = if in1 { x.at((i0 + 1) as usize, ci) } else { T::zero() };
                        if in0 {
                            *g_x.at_mut(i0 as usize, ci) = g_x.at(i0 as usize, ci) + gs * w0;
                        }
                        if in1 {
                            *g_x.at_mut((i0 + 1) as usize, ci) = g_x.at((i0 + 1) as usize, ci) + gs * w1;
                        }
                        d_off = d_off + gs * (x1 - x0);
                    }
                    g_off.data_mut()[oidx] = d_off;
                }
            }
        }
    }

    let g_off_2d = g_off.clone().reshape(&[t, w.offset_groups * k])?;
    g_x.axpy(T::one(), &matmul(&g_off_2d, &w.offset_kernel)?)?;
    Ok(DeformGrads {
        x: g_x,
        output_kernel: g_kernel,
        output_bias: sum_rows(upstream),
        offset_kernel: matmul_at(&g_off_2d, x)?,
        offset_bias: sum_rows(&g_off_2d),
        offsets: g_off,
    })
}

/// Deformable convolution followed by layer normalisation and Swish; the
/// replacement for self-attention in the soft variant.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformModule<T> {
    pub conv: DeformWeights<T>,
    pub ln_gamma: Tensor<T>,
    pub ln_beta: Tensor<T>,
}

impl<T: Real> DeformModule<T> {
    pub fn new(d: usize, k: usize, groups: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv: DeformWeights::new(d, d, k, groups, groups, rng)?,
            ln_gamma: Tensor::full(&[d], T::one()),
            ln_beta: Tensor::zeros(&[d]),
        })
    }

    pub fn num_params(&self) -> usize {
        self.conv.num_params() + self.ln_gamma.len() + self.ln_beta.len()
    }
}

pub fn deform_module_forward<T: Real>(x: &Tensor<T>, m: &DeformModule<T>) -> Result<Tensor<T>> {
    deform_module_segmented(x, m, x.rows().max(1))
}

pub fn deform_module_segmented<T: Real>(x: &Tensor<T>, m: &DeformModule<T>, segment: usize) -> Result<Tensor<T>> {
    if m.conv.c_in() != m.conv.c_out() {
        return Err(Error::Config("deformable module must preserve width".into()));
    }
    let off = predict_offsets(x, &m.conv)?;
    let y = deform_conv1d_segmented(x, &m.conv, &off, segment)?;
    Ok(swish(&layer_norm(&y, &m.ln_gamma, &m.ln_beta, LAYER_NORM_EPS)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, rel_error, DEFAULT_STEP};

    fn weights(t_seed: u64, c: usize, k: usize, groups: usize) -> DeformWeights<f64> {
        let mut rng = Rng::seed(t_seed);
        let mut w = DeformWeights::new(c, c, k, groups, groups, &mut rng).unwrap();
        w.output_bias = rng.normal_tensor::<f64>(&[c], 0.3);
        w
    }

    /// Standard grouped convolution with zero padding, written directly.
    fn grouped_conv(x: &Tensor<f64>, w: &DeformWeights<f64>) -> Tensor<f64> {
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
                        if src >= 0 && (src as usize) < t {
                            s += w.output_kernel.data()[(co * cin_g + cl) * k + tap] * x.at(src as usize, g * cin_g + cl);
                        }
                    }
                }
                *y.at_mut(p, co) = s;
            }
        }
        y
    }

    #[test]
    fn predict_offsets_examples() {
        let mut w = weights(1, 4, 3, 1);
        w.offset_kernel = Tensor::zeros(&[3, 4]);
        w.offset_bias = Tensor::zeros(&[3]);
        let x = Rng::seed(2).normal_tensor::<f64>(&[5, 4], 1.0);
        assert!(predict_offsets(&x, &w).unwrap().data().iter().all(|&v| v == 0.0));

        w.offset_bias = Tensor::from_vec(&[3], vec![-1.0, 3.0, 0.0]).unwrap();
        let off = predict_offsets(&x, &w).unwrap();
        assert_eq!(off.shape(), &[5, 1, 3]);
        for p in 0..5 {
            assert_eq!(&off.data()[p * 3..p * 3 + 3], &[-1.0, 3.0, 0.0]);
        }

        let w = weights(3, 4, 5, 2);
        let off = predict_offsets(&x, &w).unwrap();
        for p in 0..5 {
            for o in 0..10 {
                let direct: f64 = (0..4).map(|c| x.at(p, c) * w.offset_kernel.at(o, c)).sum::<f64>() + w.offset_bias.data()[o];
                assert!((off.data()[p * 10 + o] - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fig2_sampling_positions() {
        let pos = sample_positions(2, &[-1.0f64, 3.0, 0.0]);
        assert_eq!(pos, vec![0.0, 5.0, 3.0]);

        // Single channel, unit kernel: output at the 3rd timestep sums x at {0, 5, 3}.
        let mut w = DeformWeights::<f64>::new(1, 1, 3, 1, 1, &mut Rng::seed(0)).unwrap();
        w.output_kernel = Tensor::full(&[1, 1, 3], 1.0);
        let x = Tensor::from_vec(&[8, 1], (0..8).map(|i| 10f64.powi(i)).collect()).unwrap();
        let mut off = Tensor::zeros(&[8, 1, 3]);
        off.data_mut()[6..9].copy_from_slice(&[-1.0, 3.0, 0.0]);
        let y = deform_conv1d_forward(&x, &w, &off).unwrap();
        assert_eq!(y.at(2, 0), 1.0 + 1e5 + 1e3);
    }

    #[test]
    fn fractional_offset_on_linear_signal() {
        let mut w = DeformWeights::<f64>::new(1, 1, 3, 1, 1, &mut Rng::seed(0)).unwrap();
        w.output_kernel = Tensor::from_vec(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let x = Tensor::from_vec(&[6, 1], (0..6).map(|i| i as f64).collect()).unwrap();
        let mut off = Tensor::zeros(&[6, 1, 3]);
        for p in 0..6 {
            off.data_mut()[p * 3 + 1] = 0.5;
        }
        let y = deform_conv1d_forward(&x, &w, &off).unwrap();
        for p in 0..5 {
            assert_eq!(y.at(p, 0), p as f64 + 0.5);
        }
    }

    #[test]
    fn zero_offsets_reduce_to_grouped_conv() {
        let mut seed = 0;
        for t in 1..=32 {
            for c in 1..=8 {
                for k in [3, 5] {
                    for groups in [1, 2, 4] {
                        if c % groups != 0 {
                            continue;
                        }
                        seed += 1;
                        let w = weights(seed, c, k, groups);
                        let x = Rng::seed(seed + 10_000).normal_tensor::<f64>(&[t, c], 1.0);
                        let off = Tensor::zeros(&[t, groups, k]);
                        let y = deform_conv1d_forward(&x, &w, &off).unwrap();
                        assert!(y.max_abs_diff(&grouped_conv(&x, &w)) < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn integer_offsets_shift_taps() {
        let (t, c, k) = (10, 4, 3);
        let w = weights(5, c, k, 2);
        let x = Rng::seed(6).normal_tensor::<f64>(&[t, c], 1.0);
        let deltas = [-2i64, 1, 3];
        let mut off = Tensor::zeros(&[t, 2, k]);
        for p in 0..t {
            for g in 0..2 {
                for tap in 0..k {
                    off.data_mut()[(p * 2 + g) * k + tap] = deltas[tap] as f64;
                }
            }
        }
        let y = deform_conv1d_forward(&x, &w, &off).unwrap();
        let cin_g = c / 2;
        for p in 0..t {
            for co in 0..c {
                let g = co / cin_g;
                let mut s = w.output_bias.data()[co];
                for cl in 0..cin_g {
                    for tap in 0..k {
                        let src = p as i64 + tap as i64 - 1 + deltas[tap];
                        if (0..t as i64).contains(&src) {
                            s += w.output_kernel.data()[(co * cin_g + cl) * k + tap] * x.at(src as usize, g * cin_g + cl);
                        }
                    }
                }
                assert!((y.at(p, co) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translation_on_interior() {
        let (t, c, k) = (16, 4, 5);
        let w = weights(7, c, k, 2);
        let x = Rng::seed(8).normal_tensor::<f64>(&[t, c], 1.0);
        let off = Rng::seed(9).uniform_tensor::<f64>(&[t, 2, k], -1.5, 1.5);
        // Shifting input and offsets together by one frame shifts the output.
        let mut xs = Tensor::zeros(&[t, c]);
        let mut offs = Tensor::zeros(&[t, 2, k]);
        for p in 1..t {
            xs.row_mut(p).copy_from_slice(x.row(p - 1));
            let n = 2 * k;
            offs.data_mut()[p * n..(p + 1) * n].copy_from_slice(&off.data()[(p - 1) * n..p * n]);
        }
        let y = deform_conv1d_forward(&x, &w, &off).unwrap();
        let ys = deform_conv1d_forward(&xs, &w, &offs).unwrap();
        // |offset| ≤ 1.5 and half-width 2 keep these samples away from both ends.
        for p in 4..t - 5 {
            for co in 0..c {
                assert!((y.at(p, co) - ys.at(p + 1, co)).abs() < 1e-12, "p={p}");
            }
        }
    }

    #[test]
    fn locality_by_perturbation() {
        let (t, c, k) = (20, 4, 5);
        let w = weights(10, c, k, 2);
        let x = Rng::seed(11).normal_tensor::<f64>(&[t, c], 1.0);
        let off = Rng::seed(12).uniform_tensor::<f64>(&[t, 2, k], -2.0, 3.0);
        let (min_off, max_off) = off.data().iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let y = deform_conv1d_forward(&x, &w, &off).unwrap();
        let p = 10usize;
        let lo = (p as f64 - 2.0 + min_off).floor() as i64;
        let hi = (p as f64 + 2.0 + max_off).ceil() as i64;
        for q in 0..t as i64 {
            if q >= lo && q <= hi {
                continue;
            }
            let mut xp = x.clone();
            for ch in 0..c {
                *xp.at_mut(q as usize, ch) += 5.0;
            }
            let yp = deform_conv1d_forward(&xp, &w, &off).unwrap();
            assert_eq!(y.row(p), yp.row(p), "perturbing {q} changed output {p}");
        }
    }

    #[test]
    fn segments_do_not_leak() {
        let (t, c, k) = (12, 4, 5);
        let w = weights(13, c, k, 2);
        let x = Rng::seed(14).normal_tensor::<f64>(&[t, c], 1.0);
        let off = Rng::seed(15).uniform_tensor::<f64>(&[t, 2, k], -4.0, 4.0);
        let y = deform_conv1d_segmented(&x, &w, &off, 4).unwrap();
        for s in (0..t).step_by(4) {
            let off_s = Tensor::from_vec(&[4, 2, k], off.data()[s * 2 * k..(s + 4) * 2 * k].to_vec()).unwrap();
            let ys = deform_conv1d_forward(&x.slice_rows(s, s + 4), &w, &off_s).unwrap();
            assert!(y.slice_rows(s, s + 4).max_abs_diff(&ys) < 1e-14);
        }
    }

    fn loss(y: &Tensor<f64>, up: &Tensor<f64>) -> f64 {
        y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
    }

    fn full_forward(x: &Tensor<f64>, w: &DeformWeights<f64>) -> Tensor<f64> {
        deform_conv1d_forward(x, w, &predict_offsets(x, w).unwrap()).unwrap()
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let w = weights(20, 4, 5, 2);
        let x = Rng::seed(21).normal_tensor::<f64>(&[8, 4], 1.0);
        let g = deform_conv1d_backward(&x, &w, &Tensor::zeros(&[8, 4])).unwrap();
        for t in [&g.x, &g.output_kernel, &g.output_bias, &g.offset_kernel, &g.offset_bias] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn out_of_range_sample_has_zero_gradient() {
        let mut w = weights(22, 2, 3, 1);
        w.offset_kernel = Tensor::zeros(&[3, 2]);
        // tap 0 of every position lands at p − 1 − 10 < −1: fully outside.
        w.offset_bias = Tensor::from_vec(&[3], vec![-10.0, 0.0, 0.0]).unwrap();
        let x = Rng::seed(23).normal_tensor::<f64>(&[6, 2], 1.0);
        let up = Rng::seed(24).normal_tensor::<f64>(&[6, 2], 1.0);
        let g = deform_conv1d_backward(&x, &w, &up).unwrap();
        for p in 0..6 {
            assert_eq!(g.offsets.data()[p * 3], 0.0);
        }
        assert_eq!(g.offset_bias.data()[0], 0.0);
        for co in 0..2 {
            for cl in 0..2 {
                assert_eq!(g.output_kernel.data()[(co * 2 + cl) * 3], 0.0);
            }
        }
        // x only receives gradient through the two in-range taps.
        let mut w_only0 = w.clone();
        for co in 0..2 {
            for cl in 0..2 {
                for tap in 1..3 {
                    w_only0.output_kernel.data_mut()[(co * 2 + cl) * 3 + tap] = 0.0;
                }
            }
        }
        let g0 = deform_conv1d_backward(&x, &w_only0, &up).unwrap();
        assert!(g0.x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (t, c, k, groups) = (8, 4, 5, 2);
        let mut w = weights(30, c, k, groups);
        let x = Rng::seed(31).normal_tensor::<f64>(&[t, c], 1.0);
        w.offset_kernel = w.offset_kernel.scale(0.05);
        keep_fractions_interior(&x, &mut w);
        let up = Rng::seed(32).normal_tensor::<f64>(&[t, c], 1.0);
        let g = deform_conv1d_backward(&x, &w, &up).unwrap();

        let fd = finite_diff_grad(|xx| loss(&full_forward(xx, &w), &up), &x, DEFAULT_STEP).unwrap();
        assert!(rel_error(&g.x, &fd) < 1e-5, "x: {}", rel_error(&g.x, &fd));
        macro_rules! check {
            ($field:ident) => {{
                let fd = finite_diff_grad(
                    |p| {
                        let mut ww = w.clone();
                        ww.$field = p.clone();
                        loss(&full_forward(&x, &ww), &up)
                    },
                    &w.$field,
                    DEFAULT_STEP,
                )
                .unwrap();
                let e = rel_error(&g.$field, &fd);
                assert!(e < 1e-5, "{}: {e}", stringify!($field));
            }};
        }
        check!(output_kernel);
        check!(output_bias);
        check!(offset_kernel);
        check!(offset_bias);
    }

    /// Shifts offset biases so every sample's fractional part lies in [0.2, 0.8].
    fn keep_fractions_interior(x: &Tensor<f64>, w: &mut DeformWeights<f64>) {
        w.offset_bias = Tensor::zeros(w.offset_bias.shape());
        let off = predict_offsets(x, w).unwrap();
        let n = w.offset_groups * w.k;
        for o in 0..n {
            let vals: Vec<f64> = (0..x.rows()).map(|p| off.data()[p * n + o]).collect();
            let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
            let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
            assert!(hi - lo < 0.6);
            w.offset_bias.data_mut()[o] = 0.5 - (lo + hi) / 2.0 + ((o % 3) as f64 - 1.0);
        }
    }

    #[test]
    fn module_zero_input_gives_zero() {
        let m = DeformModule::<f64>::new(8, 5, 2, &mut Rng::seed(40)).unwrap();
        let y = deform_module_forward(&Tensor::zeros(&[6, 8]), &m).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn module_is_conv_norm_swish() {
        let mut m = DeformModule::<f64>::new(8, 5, 2, &mut Rng::seed(41)).unwrap();
        let mut rng = Rng::seed(42);
        m.ln_gamma = rng.normal_tensor::<f64>(&[8], 1.0);
        m.ln_beta = rng.normal_tensor::<f64>(&[8], 1.0);
        let x = rng.normal_tensor::<f64>(&[6, 8], 1.0);
        let y = deform_module_forward(&x, &m).unwrap();
        let staged = swish(&layer_norm(&full_forward(&x, &m.conv), &m.ln_gamma, &m.ln_beta, LAYER_NORM_EPS).unwrap());
        assert_eq!(y, staged);

        m.conv.offset_kernel = Tensor::zeros(m.conv.offset_kernel.shape());
        m.conv.offset_bias = Tensor::zeros(m.conv.offset_bias.shape());
        let y = deform_module_forward(&x, &m).unwrap();
        let std = swish(&layer_norm(&grouped_conv(&x, &m.conv), &m.ln_gamma, &m.ln_beta, LAYER_NORM_EPS).unwrap());
        assert!(y.max_abs_diff(&std) < 1e-12);
    }

    #[test]
    fn layout_errors() {
        let mut rng = Rng::seed(0);
        assert!(DeformWeights::<f64>::new(8, 8, 4, 2, 2, &mut rng).is_err());
        assert!(DeformWeights::<f64>::new(6, 8, 5, 4, 2, &mut rng).is_err());
        let w = weights(1, 4, 3, 2);
        assert!(predict_offsets(&Tensor::<f64>::zeros(&[3, 5]), &w).is_err());
        assert!(deform_conv1d_forward(&Tensor::zeros(&[3, 4]), &w, &Tensor::zeros(&[3, 1, 3])).is_err());
    }
}

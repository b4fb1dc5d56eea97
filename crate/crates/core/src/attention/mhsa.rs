use super::mask::AttentionMask;
use crate::error::{Error, Result};
use crate::numerics::ops::{dot, masked_softmax_row, matmul, matmul_at, matmul_bt};
use crate::numerics::{Real, Rng, Tensor};

/// Multi-head self-attention parameters with relative-position terms.
///
/// Scores for head `h` between query `i` and key `j` are
/// `((q_i + u_h)·k_j + (q_i + v_h)·r_{i−j}) / sqrt(d_head)` where
/// `r_{i−j}` is the sinusoidal embedding of the signed distance projected
/// by `w_pos`. No projection carries a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct MhsaWeights<T> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
    pub w_pos: Tensor<T>,
    /// `[heads, d_head]` content bias.
    pub u_bias: Tensor<T>,
    /// `[heads, d_head]` position bias.
    pub v_bias: Tensor<T>,
    pub heads: usize,
}

/// Gradients of a scalar loss with respect to the attention input and every weight.
#[derive(Clone, Debug)]
pub struct MhsaGrads<T> {
    pub x: Tensor<T>,
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
    pub w_pos: Tensor<T>,
    pub u_bias: Tensor<T>,
    pub v_bias: Tensor<T>,
}

impl<T: Real> MhsaWeights<T> {
    pub fn new(d: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!("d_model {d} not divisible by {heads} heads")));
        }
        let dk = d / heads;
        Ok(Self {
            w_q: rng.xavier(&[d, d], d, d),
            w_k: rng.xavier(&[d, d], d, d),
            w_v: rng.xavier(&[d, d], d, d),
            w_o: rng.xavier(&[d, d], d, d),
            w_pos: rng.xavier(&[d, d], d, d),
            u_bias: Tensor::zeros(&[heads, dk]),
            v_bias: Tensor::zeros(&[heads, dk]),
            heads,
        })
    }

    pub fn d_model(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn d_head(&self) -> usize {
        self.d_model() / self.heads
    }

    pub fn num_params(&self) -> usize {
        self.w_q.len()
            + self.w_k.len()
            + self.w_v.len()
            + self.w_o.len()
            + self.w_pos.len()
            + self.u_bias.len()
            + self.v_bias.len()
    }

    fn validate(&self) -> Result<()> {
        let d = self.d_model();
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d_model {d} not divisible by {} heads", self.heads)));
        }
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.w_o, &self.w_pos] {
            if m.shape() != [d, d] {
                return Err(Error::shape("mhsa weights", &[d, d], m.shape()));
            }
        }
        for b in [&self.u_bias, &self.v_bias] {
            if b.shape() != [self.heads, d / self.heads] {
                return Err(Error::shape("mhsa bias", &[self.heads, d / self.heads], b.shape()));
            }
        }
        Ok(())
    }
}

/// Sinusoidal embeddings of signed distances `t−1, …, −(t−1)`; row
/// `i − j + t − 1` holds distance `i − j`.
pub fn relative_position_table<T: Real>(t: usize, d: usize) -> Tensor<T> {
    let n = (2 * t).saturating_sub(1);
    let mut pe = Tensor::zeros(&[n, d]);
    for row in 0..n {
        let dist = row as f64 - (t as f64 - 1.0);
        let r = pe.row_mut(row);
        for k in 0..d / 2 + d % 2 {
            let freq = (-(2.0 * k as f64) / d as f64 * 10000f64.ln()).exp();
            r[2 * k] = T::from_f64((dist * freq).sin());
            if 2 * k + 1 < d {
                r[2 * k + 1] = T::from_f64((dist * freq).cos());
            }
        }
    }
    pe
}

fn head_cols<T: Real>(m: &Tensor<T>, h: usize, dk: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(&[m.rows(), dk]);
    for i in 0..m.rows() {
        out.row_mut(i).copy_from_slice(&m.row(i)[h * dk..(h + 1) * dk]);
    }
    out
}

fn put_head_cols<T: Real>(dst: &mut Tensor<T>, src: &Tensor<T>, h: usize, dk: usize) {
    for i in 0..src.rows() {
        dst.row_mut(i)[h * dk..(h + 1) * dk].copy_from_slice(src.row(i));
    }
}

fn add_bias_rows<T: Real>(m: &Tensor<T>, b: &[T]) -> Tensor<T> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for (v, &bv) in out.row_mut(i).iter_mut().zip(b) {
            *v = *v + bv;
        }
    }
    out
}

struct Projections<T> {
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    pe: Tensor<T>,
    r: Tensor<T>,
}

fn project<T: Real>(x: &Tensor<T>, w: &MhsaWeights<T>) -> Result<Projections<T>> {
    let t = x.rows();
    let pe = relative_position_table(t, w.d_model());
    Ok(Projections {
        q: matmul(x, &w.w_q)?,
        k: matmul(x, &w.w_k)?,
        v: matmul(x, &w.w_v)?,
        r: matmul(&pe, &w.w_pos)?,
        pe,
    })
}

/// Post-softmax attention probabilities for one head, `[T, T]`.
fn head_probs<T: Real>(
    qu: &Tensor<T>,
    qv: &Tensor<T>,
    k: &Tensor<T>,
    r: &Tensor<T>,
    mask: &AttentionMask,
    scale: T,
) -> Result<Tensor<T>> {
    let t = qu.rows();
    let mut p = Tensor::zeros(&[t, t]);
    for i in 0..t {
        let (qui, qvi) = (qu.row(i), qv.row(i));
        let row = p.row_mut(i);
        for (j, s) in row.iter_mut().enumerate() {
            *s = (dot(qui, k.row(j)) + dot(qvi, r.row(i + t - 1 - j))) * scale;
        }
        masked_softmax_row(row, mask.row(i)).map_err(|_| Error::InvalidMask { row: i })?;
    }
    Ok(p)
}

fn check_inputs<T: Real>(x: &Tensor<T>, w: &MhsaWeights<T>, mask: &AttentionMask) -> Result<()> {
    w.validate()?;
    if x.rank() != 2 || x.cols() != w.d_model() {
        return Err(Error::shape("mhsa_forward", x.shape(), w.w_q.shape()));
    }
    if mask.len() != x.rows() {
        return Err(Error::shape("mhsa_forward mask", &[x.rows()], &[mask.len()]));
    }
    Ok(())
}

fn forward_impl<T: Real>(
    x: &Tensor<T>,
    w: &MhsaWeights<T>,
    mask: &AttentionMask,
    keep_maps: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    check_inputs(x, w, mask)?;
    let (t, d, dk) = (x.rows(), w.d_model(), w.d_head());
    let pr = project(x, w)?;
    let scale = T::from_f64(1.0 / (dk as f64).sqrt());
    let mut concat = Tensor::zeros(&[t, d]);
    let mut maps = keep_maps.then(|| Tensor::zeros(&[w.heads, t, t]));
    for h in 0..w.heads {
        let qh = head_cols(&pr.q, h, dk);
        let qu = add_bias_rows(&qh, w.u_bias.row(h));
        let qv = add_bias_rows(&qh, w.v_bias.row(h));
        let p = head_probs(&qu, &qv, &head_cols(&pr.k, h, dk), &head_cols(&pr.r, h, dk), mask, scale)?;
        let oh = matmul(&p, &head_cols(&pr.v, h, dk))?;
        put_head_cols(&mut concat, &oh, h, dk);
        if let Some(m) = maps.as_mut() {
            m.data_mut()[h * t * t..(h + 1) * t * t].copy_from_slice(p.data());
        }
    }
    Ok((matmul(&concat, &w.w_o)?, maps))
}

/// Returns the attention output `[T, D]` and the post-softmax maps `[heads, T, T]`.
pub fn mhsa_forward<T: Real>(x: &Tensor<T>, w: &MhsaWeights<T>, mask: &AttentionMask) -> Result<(Tensor<T>, Tensor<T>)> {
    let (y, maps) = forward_impl(x, w, mask, true)?;
    Ok((y, maps.expect("maps requested")))
}

/// Attention output only; skips materialising the `[heads, T, T]` maps.
pub fn mhsa_output<T: Real>(x: &Tensor<T>, w: &MhsaWeights<T>, mask: &AttentionMask) -> Result<Tensor<T>> {
    Ok(forward_impl(x, w, mask, false)?.0)
}

/// Gradients of `Σ upstream ⊙ mhsa_forward(x).y`.
pub fn mhsa_backward<T: Real>(
    x: &Tensor<T>,
    w: &MhsaWeights<T>,
    mask: &AttentionMask,
    upstream: &Tensor<T>,
) -> Result<MhsaGrads<T>> {
    check_inputs(x, w, mask)?;
    if upstream.shape() != x.shape() {
        return Err(Error::shape("mhsa_backward", x.shape(), upstream.shape()));
    }
    let (t, d, dk) = (x.rows(), w.d_model(), w.d_head());
    let pr = project(x, w)?;
    let scale = T::from_f64(1.0 / (dk as f64).sqrt());

    let mut concat = Tensor::zeros(&[t, d]);
    let mut probs = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let qh = head_cols(&pr.q, h, dk);
        let qu = add_bias_rows(&qh, w.u_bias.row(h));
        let qv = add_bias_rows(&qh, w.v_bias.row(h));
        let p = head_probs(&qu, &qv, &head_cols(&pr.k, h, dk), &head_cols(&pr.r, h, dk), mask, scale)?;
        put_head_cols(&mut concat, &matmul(&p, &head_cols(&pr.v, h, dk))?, h, dk);
        probs.push(p);
    }

    let g_wo = matmul_at(&concat, upstream)?;
    let g_concat = matmul_bt(upstream, &w.w_o)?;

    let mut g_q = Tensor::zeros(&[t, d]);
    let mut g_k = Tensor::zeros(&[t, d]);
    let mut g_v = Tensor::zeros(&[t, d]);
    let mut g_r = Tensor::zeros(&[pr.r.rows(), d]);
    let mut g_u = Tensor::zeros(&[w.heads, dk]);
    let mut g_vb = Tensor::zeros(&[w.heads, dk]);

    for (h, p) in probs.iter().enumerate() {
        let qh = head_cols(&pr.q, h, dk);
        let kh = head_cols(&pr.k, h, dk);
        let vh = head_cols(&pr.v, h, dk);
        let rh = head_cols(&pr.r, h, dk);
        let qu = add_bias_rows(&qh, w.u_bias.row(h));
        let qv = add_bias_rows(&qh, w.v_bias.row(h));
        let g_oh = head_cols(&g_concat, h, dk);

        let g_p = matmul_bt(&g_oh, &vh)?;
        put_head_cols(&mut g_v, &matmul_at(p, &g_oh)?, h, dk);

        // softmax backward; masked entries have p = 0 so their score gradient is exactly 0
        let mut g_s = Tensor::zeros(&[t, t]);
        for i in 0..t {
            let pi = p.row(i);
            let gi = g_p.row(i);
            let inner = dot(pi, gi);
            for (j, s) in g_s.row_mut(i).iter_mut().enumerate() {
                *s = pi[j] * (gi[j] - inner) * scale;
            }
        }

        let mut g_qh = Tensor::zeros(&[t, dk]);
        let mut g_kh = Tensor::zeros(&[t, dk]);
        let mut g_rh = Tensor::zeros(&[rh.rows(), dk]);
        for i in 0..t {
            for j in 0..t {
                let a = g_s.at(i, j);
                if a == T::zero() {
                    continue;
                }
                let ridx = i + t - 1 - j;
                let (kj, rr) = (kh.row(j), rh.row(ridx));
                {
                    let gq = g_qh.row_mut(i);
                    for c in 0..dk {
                        gq[c] = gq[c] + a * (kj[c] + rr[c]);
                    }
                }
                {
                    let gu = g_u.row_mut(h);
                    for c in 0..dk {
                        gu[c] = gu[c] + a * kj[c];
                    }
                }
                {
                    let gv = g_vb.row_mut(h);
                    for c in 0..dk {
                        gv[c] = gv[c] + a * rr[c];
                    }
                }
                {
                    let qui = qu.row(i);
                    let gk = g_kh.row_mut(j);
                    for c in 0..dk {
                        gk[c] = gk[c] + a * qui[c];
                    }
                }
                {
                    let qvi = qv.row(i);
                    let gr = g_rh.row_mut(ridx);
                    for c in 0..dk {
                        gr[c] = gr[c] + a * qvi[c];
                    }
                }
            }
        }
        put_head_cols(&mut g_q, &g_qh, h, dk);
        put_head_cols(&mut g_k, &g_kh, h, dk);
        put_head_cols(&mut g_r, &g_rh, h, dk);
    }

    let mut g_x = matmul_bt(&g_q, &w.w_q)?;
    g_x.axpy(T::one(), &matmul_bt(&g_k, &w.w_k)?)?;
    g_x.axpy(T::one(), &matmul_bt(&g_v, &w.w_v)?)?;

    Ok(MhsaGrads {
        w_q: matmul_at(x, &g_q)?,
        w_k: matmul_at(x, &g_k)?,
        w_v: matmul_at(x, &g_v)?,
        w_o: g_wo,
        w_pos: matmul_at(&pr.pe, &g_r)?,
        u_bias: g_u,
        v_bias: g_vb,
        x: g_x,
    })
}

use crate::attention::{mhsa_forward, mhsa_output, AttentionMask, MhsaWeights};
use crate::deformconv::{deform_module_segmented, DeformModule, DeformWeights};
use crate::error::{Error, Result};
use crate::numerics::{depthwise_conv1d_segmented, glu, layer_norm, linear, swish, Real, Rng, Tensor, LAYER_NORM_EPS};
use crate::numerics::ops::add_row_bias;

use super::config::{EncoderConfig, Variant};

/// Flat, named view of a module's tensors in a fixed order.
pub trait NamedParams<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>);
}

macro_rules! named_params {
    ($ty:ident { $($field:ident),* $(; $($sub:ident),*)? }) => {
        impl<T: Real> NamedParams<T> for $ty<T> {
            fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
                $(out.push((format!("{prefix}{}", stringify!($field)), &self.$field));)*
                $($(self.$sub.collect(&format!("{prefix}{}.", stringify!($sub)), out);)*)?
            }
            fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
                $(out.push((format!("{prefix}{}", stringify!($field)), &mut self.$field));)*
                $($(self.$sub.collect_mut(&format!("{prefix}{}.", stringify!($sub)), out);)*)?
            }
        }
    };
}

named_params!(MhsaWeights { w_q, w_k, w_v, w_o, w_pos, u_bias, v_bias });
named_params!(DeformWeights { output_kernel, output_bias, offset_kernel, offset_bias });
named_params!(DeformModule { ln_gamma, ln_beta; conv });

fn ones<T: Real>(d: usize) -> Tensor<T> {
    Tensor::full(&[d], T::one())
}

/// Pre-norm feed-forward module: LN → Linear → Swish → Linear.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<T> {
    pub ln_gamma: Tensor<T>,
    pub ln_beta: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}
named_params!(FeedForward { ln_gamma, ln_beta, w1, b1, w2, b2 });

impl<T: Real> FeedForward<T> {
    pub fn new(d: usize, ffn: usize, rng: &mut Rng) -> Self {
        Self {
            ln_gamma: ones(d),
            ln_beta: Tensor::zeros(&[d]),
            w1: rng.xavier(&[d, ffn], d, ffn),
            b1: Tensor::zeros(&[ffn]),
            w2: rng.xavier(&[ffn, d], ffn, d),
            b2: Tensor::zeros(&[d]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = layer_norm(x, &self.ln_gamma, &self.ln_beta, LAYER_NORM_EPS)?;
        let h = swish(&linear(&h, &self.w1, Some(&self.b1))?);
        linear(&h, &self.w2, Some(&self.b2))
    }
}

/// Convolution module: LN → pointwise (×2) → GLU → depthwise → LN → Swish → pointwise.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvModule<T> {
    pub ln_gamma: Tensor<T>,
    pub ln_beta: Tensor<T>,
    /// `[d, 2d]`
    pub pw1: Tensor<T>,
    pub pw1_bias: Tensor<T>,
    /// `[d, K]`
    pub dw: Tensor<T>,
    pub dw_bias: Tensor<T>,
    pub norm_gamma: Tensor<T>,
    pub norm_beta: Tensor<T>,
    /// `[d, d]`
    pub pw2: Tensor<T>,
    pub pw2_bias: Tensor<T>,
}
named_params!(ConvModule { ln_gamma, ln_beta, pw1, pw1_bias, dw, dw_bias, norm_gamma, norm_beta, pw2, pw2_bias });

impl<T: Real> ConvModule<T> {
    pub fn new(d: usize, k: usize, rng: &mut Rng) -> Self {
        Self {
            ln_gamma: ones(d),
            ln_beta: Tensor::zeros(&[d]),
            pw1: rng.xavier(&[d, 2 * d], d, 2 * d),
            pw1_bias: Tensor::zeros(&[2 * d]),
            dw: rng.xavier(&[d, k], k, k),
            dw_bias: Tensor::zeros(&[d]),
            norm_gamma: ones(d),
            norm_beta: Tensor::zeros(&[d]),
            pw2: rng.xavier(&[d, d], d, d),
            pw2_bias: Tensor::zeros(&[d]),
        }
    }

    /// Depthwise convolution zero-pads at every `segment` boundary.
    pub fn forward(&self, x: &Tensor<T>, segment: usize) -> Result<Tensor<T>> {
        let h = layer_norm(x, &self.ln_gamma, &self.ln_beta, LAYER_NORM_EPS)?;
        let h = glu(&linear(&h, &self.pw1, Some(&self.pw1_bias))?)?;
        let mut h = depthwise_conv1d_segmented(&h, &self.dw, segment)?;
        add_row_bias(&mut h, &self.dw_bias)?;
        let h = swish(&layer_norm(&h, &self.norm_gamma, &self.norm_beta, LAYER_NORM_EPS)?);
        linear(&h, &self.pw2, Some(&self.pw2_bias))
    }
}

/// Pre-norm self-attention module.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionModule<T> {
    pub ln_gamma: Tensor<T>,
    pub ln_beta: Tensor<T>,
    pub mhsa: MhsaWeights<T>,
}
named_params!(AttentionModule { ln_gamma, ln_beta; mhsa });

#[derive(Clone, Debug, PartialEq)]
pub enum Middle<T> {
    Attention(AttentionModule<T>),
    Deform(DeformModule<T>),
    Absent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformerBlock<T> {
    pub ffn1: FeedForward<T>,
    pub middle: Middle<T>,
    pub conv: ConvModule<T>,
    pub ffn2: FeedForward<T>,
    pub ln_gamma: Tensor<T>,
    pub ln_beta: Tensor<T>,
}

impl<T: Real> NamedParams<T> for ConformerBlock<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.ffn1.collect(&format!("{prefix}ffn1."), out);
        match &self.middle {
            Middle::Attention(m) => m.collect(&format!("{prefix}attn."), out),
            Middle::Deform(m) => m.collect(&format!("{prefix}deform."), out),
            Middle::Absent => {}
        }
        self.conv.collect(&format!("{prefix}conv."), out);
        self.ffn2.collect(&format!("{prefix}ffn2."), out);
        out.push((format!("{prefix}ln_gamma"), &self.ln_gamma));
        out.push((format!("{prefix}ln_beta"), &self.ln_beta));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.ffn1.collect_mut(&format!("{prefix}ffn1."), out);
        match &mut self.middle {
            Middle::Attention(m) => m.collect_mut(&format!("{prefix}attn."), out),
            Middle::Deform(m) => m.collect_mut(&format!("{prefix}deform."), out),
            Middle::Absent => {}
        }
        self.conv.collect_mut(&format!("{prefix}conv."), out);
        self.ffn2.collect_mut(&format!("{prefix}ffn2."), out);
        out.push((format!("{prefix}ln_gamma"), &mut self.ln_gamma));
        out.push((format!("{prefix}ln_beta"), &mut self.ln_beta));
    }
}

impl<T: Real> ConformerBlock<T> {
    /// Each submodule draws from its own stream forked off `rng`, so the
    /// shared submodules are identical across variants for a given seed.
    pub fn new(config: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        let d = config.d_model;
        let (mut r_ffn1, mut r_mid, mut r_conv, mut r_ffn2) = (rng.fork(), rng.fork(), rng.fork(), rng.fork());
        let middle = match config.variant {
            Variant::Baseline => Middle::Attention(AttentionModule {
                ln_gamma: ones(d),
                ln_beta: Tensor::zeros(&[d]),
                mhsa: MhsaWeights::new(d, config.heads, &mut r_mid)?,
            }),
            Variant::Soft => Middle::Deform(DeformModule::new(d, config.deform_kernel, config.deform_groups, &mut r_mid)?),
            Variant::Hard => Middle::Absent,
        };
        Ok(Self {
            ffn1: FeedForward::new(d, config.ffn_dim, &mut r_ffn1),
            middle,
            conv: ConvModule::new(d, config.conv_kernel, &mut r_conv),
            ffn2: FeedForward::new(d, config.ffn_dim, &mut r_ffn2),
            ln_gamma: ones(d),
            ln_beta: Tensor::zeros(&[d]),
        })
    }

    pub fn variant(&self) -> Variant {
        match self.middle {
            Middle::Attention(_) => Variant::Baseline,
            Middle::Deform(_) => Variant::Soft,
            Middle::Absent => Variant::Hard,
        }
    }
}

/// Output of one block plus, for attention blocks asked to keep them, the
/// `[heads, T, T]` post-softmax maps.
pub type BlockOutput<T> = (Tensor<T>, Option<Tensor<T>>);

/// Runs `x` as a single unsegmented sequence; a missing mask means full attention.
pub fn block_forward<T: Real>(x: &Tensor<T>, block: &ConformerBlock<T>, mask: Option<&AttentionMask>) -> Result<BlockOutput<T>> {
    block_forward_segmented(x, block, mask, x.rows().max(1), true)
}

/// As [`block_forward`], with convolutional modules isolated to runs of
/// `segment` frames.
pub fn block_forward_segmented<T: Real>(
    x: &Tensor<T>,
    block: &ConformerBlock<T>,
    mask: Option<&AttentionMask>,
    segment: usize,
    keep_maps: bool,
) -> Result<BlockOutput<T>> {
    let half = T::from_f64(0.5);
    let mut h = x.clone();
    h.axpy(half, &block.ffn1.forward(x)?)?;

    let mut maps = None;
    match &block.middle {
        Middle::Attention(att) => {
            let owned;
            let mask = match mask {
                Some(m) => m,
                None => {
                    owned = AttentionMask::full(h.rows());
                    &owned
                }
            };
            if mask.len() != h.rows() {
                return Err(Error::shape("block mask", &[h.rows()], &[mask.len()]));
            }
            let normed = layer_norm(&h, &att.ln_gamma, &att.ln_beta, LAYER_NORM_EPS)?;
            let y = if keep_maps {
                let (y, m) = mhsa_forward(&normed, &att.mhsa, mask)?;
                maps = Some(m);
                y
            } else {
                mhsa_output(&normed, &att.mhsa, mask)?
            };
            h.axpy(T::one(), &y)?;
        }
        Middle::Deform(def) => {
            let y = deform_module_segmented(&h, def, segment)?;
            h.axpy(T::one(), &y)?;
        }
        Middle::Absent => {}
    }

    let c = block.conv.forward(&h, segment)?;
    h.axpy(T::one(), &c)?;
    let f = block.ffn2.forward(&h)?;
    h.axpy(half, &f)?;
    Ok((layer_norm(&h, &block.ln_gamma, &block.ln_beta, LAYER_NORM_EPS)?, maps))
}

use crate::error::{Error, Result};
use crate::transducer::TransducerConfig;

use super::config::{EncoderConfig, Variant};

fn subsample_params(c: &EncoderConfig) -> usize {
    let (f, d) = (c.feature_dim, c.d_model);
    2 * f * d + d + 2 * d * d + d + d * d + d
}

fn ffn_params(c: &EncoderConfig) -> usize {
    let (d, f) = (c.d_model, c.ffn_dim);
    2 * d + d * f + f + f * d + d
}

fn conv_params(c: &EncoderConfig) -> usize {
    let d = c.d_model;
    2 * d + 2 * d * d + 2 * d + d * c.conv_kernel + d + 2 * d + d * d + d
}

/// Parameters of the module between the first feed-forward and the
/// convolution module.
pub fn middle_params(c: &EncoderConfig) -> usize {
    let d = c.d_model;
    match c.variant {
        Variant::Baseline => 2 * d + 5 * d * d + 2 * d,
        Variant::Soft => {
            let (k, g) = (c.deform_kernel, c.deform_groups);
            d * (d / g) * k + d + k * g * d + k * g + 2 * d
        }
        Variant::Hard => 0,
    }
}

pub fn block_params(c: &EncoderConfig) -> usize {
    2 * ffn_params(c) + middle_params(c) + conv_params(c) + 2 * c.d_model
}

/// Exact scalar parameter count, computed from the configuration alone.
/// With `include_transducer`, adds a predictor and joint sized to the
/// encoder with `vocab` labels plus blank.
pub fn count_parameters(config: &EncoderConfig, include_transducer: bool, vocab: usize) -> usize {
    let encoder = subsample_params(config) + config.layers * block_params(config);
    if include_transducer {
        encoder + TransducerConfig::for_encoder(config, vocab).num_params()
    } else {
        encoder
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WidthSearch {
    pub config: EncoderConfig,
    pub count: usize,
}

/// Largest width the search will consider.
pub const MAX_SEARCH_WIDTH: usize = 1 << 16;

/// Smallest `d_model` on the grid of multiples of `lcm(heads, deform_groups)`
/// whose encoder parameter count reaches `target`. The feed-forward width keeps its
/// ratio to `d_model`.
pub fn ablation_width_search(target: usize, config: &EncoderConfig) -> Result<WidthSearch> {
    config.validate()?;
    let (h, g) = (config.heads.max(1), config.deform_groups.max(1));
    let step = h / gcd(h, g) * g;
    let ratio = config.ffn_dim as f64 / config.d_model as f64;
    let mut d = step;
    while d <= MAX_SEARCH_WIDTH {
        let candidate = if d == config.d_model {
            config.clone()
        } else {
            EncoderConfig {
                d_model: d,
                ffn_dim: ((d as f64 * ratio).round() as usize).max(1),
                ..config.clone()
            }
        };
        let count = count_parameters(&candidate, false, 0);
        if count >= target {
            return Ok(WidthSearch { config: candidate, count });
        }
        d += step;
    }
    Err(Error::Search(format!(
        "no d_model up to {MAX_SEARCH_WIDTH} reaches {target} parameters"
    )))
}

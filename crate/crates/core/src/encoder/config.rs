use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Conformer block with relative-position self-attention.
    Baseline,
    /// Self-attention replaced by a deformable convolution module.
    Soft,
    /// Self-attention removed.
    Hard,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Soft, Variant::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Soft => "soft",
            Variant::Hard => "hard",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "soft" => Ok(Variant::Soft),
            "hard" => Ok(Variant::Hard),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

fn default_hop() -> usize {
    10
}

fn default_subsample() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub variant: Variant,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub conv_kernel: usize,
    pub deform_kernel: usize,
    pub deform_groups: usize,
    pub feature_dim: usize,
    #[serde(default = "default_hop")]
    pub frame_hop_ms: usize,
    #[serde(default = "default_subsample")]
    pub subsample_factor: usize,
}

impl EncoderConfig {
    /// 12 layers of width 512 with 8 heads, 2048-wide feed-forward,
    /// kernel-31 convolution and 80-dimensional input features.
    pub fn large(variant: Variant) -> Self {
        Self {
            variant,
            d_model: 512,
            layers: 12,
            heads: 8,
            ffn_dim: 2048,
            conv_kernel: 31,
            deform_kernel: 5,
            deform_groups: 8,
            feature_dim: 80,
            frame_hop_ms: 10,
            subsample_factor: 4,
        }
    }

    /// Small configuration for property tests.
    pub fn toy(variant: Variant) -> Self {
        Self {
            variant,
            d_model: 16,
            layers: 2,
            heads: 2,
            ffn_dim: 32,
            conv_kernel: 15,
            deform_kernel: 5,
            deform_groups: 2,
            feature_dim: 8,
            frame_hop_ms: 10,
            subsample_factor: 4,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self { variant, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d_model == 0 || self.layers == 0 || self.ffn_dim == 0 || self.feature_dim == 0 {
            return bad("d_model, layers, ffn_dim and feature_dim must be positive".into());
        }
        if self.frame_hop_ms == 0 {
            return bad("frame_hop_ms must be positive".into());
        }
        if self.subsample_factor != 4 {
            return bad(format!(
                "the two stride-2 convolutions subsample by 4, got subsample_factor {}",
                self.subsample_factor
            ));
        }
        if self.conv_kernel.is_multiple_of(2) || self.deform_kernel.is_multiple_of(2) {
            return bad(format!(
                "kernel sizes must be odd (conv {}, deform {})",
                self.conv_kernel, self.deform_kernel
            ));
        }
        if self.variant == Variant::Baseline && (self.heads == 0 || !self.d_model.is_multiple_of(self.heads)) {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.variant == Variant::Soft && (self.deform_groups == 0 || !self.d_model.is_multiple_of(self.deform_groups)) {
            return bad(format!(
                "d_model {} not divisible by {} deformable groups",
                self.d_model, self.deform_groups
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Raw feature frames spanned by `ms` milliseconds.
    pub fn frames_for_ms(&self, ms: usize) -> usize {
        ms / self.frame_hop_ms
    }
}

/// Chunk duration and the post-subsampling frame count it maps to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChunkSpec {
    pub chunk_ms: usize,
    pub frames_per_chunk: usize,
}

impl ChunkSpec {
    pub const SIZES_MS: [usize; 4] = [160, 320, 640, 1280];

    pub fn new(chunk_ms: usize, config: &EncoderConfig) -> Result<Self> {
        let per_frame = config.frame_hop_ms * config.subsample_factor;
        if chunk_ms == 0 || !chunk_ms.is_multiple_of(per_frame) {
            return Err(Error::Config(format!(
                "chunk of {chunk_ms} ms is not a whole number of {per_frame} ms encoder frames"
            )));
        }
        Ok(Self {
            chunk_ms,
            frames_per_chunk: chunk_ms / per_frame,
        })
    }

    /// Raw feature frames per chunk, before subsampling.
    pub fn raw_frames(&self, config: &EncoderConfig) -> usize {
        self.frames_per_chunk * config.subsample_factor
    }
}

//! Relative-position multi-head self-attention, chunk and band masks, and
//! per-layer mean attention maps.

mod mask;
mod mhsa;
mod stats;

pub use mask::{band_density, band_mask, band_ones, chunk_mask, combine_masks, AttentionMask, MaskKind};
pub use mhsa::{mhsa_backward, mhsa_forward, mhsa_output, relative_position_table, MhsaGrads, MhsaWeights};
pub use stats::AttentionStats;

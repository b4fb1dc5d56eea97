//! Convolutional subsampling frontend, Conformer blocks with a
//! variant-selected middle module, chunked streaming drivers, parameter
//! counting and checkpoints.

mod block;
pub mod checkpoint;
mod config;
mod model;
mod params;

pub use block::{
    block_forward, block_forward_segmented, AttentionModule, BlockOutput, ConformerBlock, ConvModule, FeedForward,
    Middle, NamedParams,
};
pub use config::{ChunkSpec, EncoderConfig, Variant};
pub use model::{pad_to_chunks, subsampled_len, Encoded, Encoder, Mode, Subsampler, MIN_FRAMES};
pub use params::{ablation_width_search, block_params, count_parameters, middle_params, WidthSearch, MAX_SEARCH_WIDTH};

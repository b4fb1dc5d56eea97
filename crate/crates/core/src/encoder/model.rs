use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::attention::{band_mask, chunk_mask, combine_masks, AttentionMask, AttentionStats};
use crate::error::{Error, Result};
use crate::numerics::{linear, swish, Real, Rng, Tensor};

use super::block::{block_forward_segmented, ConformerBlock, NamedParams};
use super::checkpoint::{read_tensors, write_tensors};
use super::config::{ChunkSpec, EncoderConfig, Variant};

/// Minimum raw frames for the two stride-2 convolutions to produce one frame.
pub const MIN_FRAMES: usize = 4;

/// Two kernel-2 stride-2 convolutions with Swish, then a linear projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Subsampler<T> {
    /// `[2F, d]`: taps of frame `2i` stacked over taps of frame `2i+1`.
    pub conv1_w: Tensor<T>,
    pub conv1_b: Tensor<T>,
    /// `[2d, d]`
    pub conv2_w: Tensor<T>,
    pub conv2_b: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
}

impl<T: Real> NamedParams<T> for Subsampler<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (n, t) in [
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("proj_w", &self.proj_w),
            ("proj_b", &self.proj_b),
        ] {
            out.push((format!("{prefix}{n}"), t));
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (n, t) in [
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("proj_w", &mut self.proj_w),
            ("proj_b", &mut self.proj_b),
        ] {
            out.push((format!("{prefix}{n}"), t));
        }
    }
}

/// Pairs consecutive rows: `[T, C] → [⌊T/2⌋, 2C]`, dropping an odd tail row.
fn pair_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c) = (x.rows() / 2, x.cols());
    Tensor::from_vec(&[n, 2 * c], x.data()[..n * 2 * c].to_vec()).expect("pairing preserves size")
}

impl<T: Real> Subsampler<T> {
    pub fn new(feature_dim: usize, d: usize, rng: &mut Rng) -> Self {
        Self {
            conv1_w: rng.xavier(&[2 * feature_dim, d], 2 * feature_dim, 2 * d),
            conv1_b: Tensor::zeros(&[d]),
            conv2_w: rng.xavier(&[2 * d, d], 2 * d, 2 * d),
            conv2_b: Tensor::zeros(&[d]),
            proj_w: rng.xavier(&[d, d], d, d),
            proj_b: Tensor::zeros(&[d]),
        }
    }

    pub fn forward(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.conv1_w.shape()[0] / 2;
        if features.rank() != 2 || features.cols() != f {
            return Err(Error::shape("subsample", features.shape(), &[features.rows(), f]));
        }
        if features.rows() < MIN_FRAMES {
            return Err(Error::InputTooShort {
                frames: features.rows(),
                min: MIN_FRAMES,
            });
        }
        let h = swish(&linear(&pair_rows(features), &self.conv1_w, Some(&self.conv1_b))?);
        let h = swish(&linear(&pair_rows(&h), &self.conv2_w, Some(&self.conv2_b))?);
        linear(&h, &self.proj_w, Some(&self.proj_b))
    }
}

/// Output length of the subsampling frontend.
pub fn subsampled_len(frames: usize) -> usize {
    frames / 2 / 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Whole sequence at once with block-diagonal chunk masks.
    MaskedBatch,
    /// One chunk at a time, nothing carried between chunks.
    Incremental,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::MaskedBatch, Mode::Incremental];

    pub fn name(self) -> &'static str {
        match self {
            Mode::MaskedBatch => "masked-batch",
            Mode::Incremental => "incremental",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked-batch" => Ok(Mode::MaskedBatch),
            "incremental" => Ok(Mode::Incremental),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoded<T> {
    /// `[T', d_model]`, `T'` covering the zero-padded input.
    pub output: Tensor<T>,
    /// Per-layer mean chunk attention maps, when requested from an attention model.
    pub stats: Option<AttentionStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    config: EncoderConfig,
    pub subsample: Subsampler<T>,
    pub blocks: Vec<ConformerBlock<T>>,
}

/// Zero-pads `features` at the end to a whole number of `raw`-frame chunks.
pub fn pad_to_chunks<T: Real>(features: &Tensor<T>, raw: usize) -> Tensor<T> {
    let t = features.rows();
    let padded = t.div_ceil(raw) * raw;
    if padded == t {
        return features.clone();
    }
    let mut data = features.data().to_vec();
    data.resize(padded * features.cols(), T::zero());
    Tensor::from_vec(&[padded, features.cols()], data).expect("padding preserves width")
}

impl<T: Real> Encoder<T> {
    pub fn new(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed(seed);
        let mut r_sub = rng.fork();
        let subsample = Subsampler::new(config.feature_dim, config.d_model, &mut r_sub);
        let blocks = (0..config.layers)
            .map(|_| ConformerBlock::new(config, &mut rng.fork()))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            subsample,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.subsample.collect("subsample.", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("blocks.{i:02}."), &mut out);
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.subsample.collect_mut("subsample.", &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&format!("blocks.{i:02}."), &mut out);
        }
        out
    }

    /// Parameter count by enumerating the constructed tensors.
    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Encoder<U> {
        let mut out = Encoder::<U>::new(&self.config, 0).expect("config already validated");
        for ((_, dst), (_, src)) in out.named_tensors_mut().into_iter().zip(self.named_tensors()) {
            *dst = src.cast();
        }
        out
    }

    fn run_blocks(&self, mut h: Tensor<T>, mask: Option<&AttentionMask>, segment: usize, stats: &mut Option<AttentionStats>, whole_maps: bool) -> Result<Tensor<T>> {
        for (layer, block) in self.blocks.iter().enumerate() {
            let (y, maps) = block_forward_segmented(&h, block, mask, segment, stats.is_some())?;
            if let (Some(s), Some(m)) = (stats.as_mut(), maps) {
                if whole_maps {
                    s.accumulate(&m, layer)?;
                } else {
                    s.accumulate_blocks(&m, layer)?;
                }
            }
            h = y;
        }
        Ok(h)
    }

    fn new_stats(&self, chunk: &ChunkSpec, collect_stats: bool) -> Option<AttentionStats> {
        (collect_stats && self.config.variant == Variant::Baseline)
            .then(|| AttentionStats::new(self.config.layers, chunk.frames_per_chunk))
    }

    /// Full-context forward pass over an unchunked sequence.
    pub fn forward(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.subsample.forward(features)?;
        let segment = h.rows().max(1);
        self.run_blocks(h, None, segment, &mut None, true)
    }

    /// Splits the zero-padded input into raw-frame chunks and encodes each
    /// independently.
    pub fn encode_incremental(&self, features: &Tensor<T>, chunk: &ChunkSpec, collect_stats: bool) -> Result<Encoded<T>> {
        let raw = chunk.raw_frames(&self.config);
        let padded = pad_to_chunks(features, raw);
        if padded.rows() == 0 {
            return Err(Error::InputTooShort { frames: 0, min: MIN_FRAMES });
        }
        let mut stats = self.new_stats(chunk, collect_stats);
        let mut outs = Vec::with_capacity(padded.rows() / raw);
        for start in (0..padded.rows()).step_by(raw) {
            let h = self.subsample.forward(&padded.slice_rows(start, start + raw))?;
            outs.push(self.run_blocks(h, None, chunk.frames_per_chunk, &mut stats, true)?);
        }
        Ok(Encoded {
            output: Tensor::concat_rows(&outs)?,
            stats,
        })
    }

    /// Encodes the whole zero-padded sequence at once under a chunk mask
    /// (intersected with an `extra_band`-diagonal band when given).
    pub fn encode_masked_batch(
        &self,
        features: &Tensor<T>,
        chunk: &ChunkSpec,
        extra_band: Option<usize>,
        collect_stats: bool,
    ) -> Result<Encoded<T>> {
        let padded = pad_to_chunks(features, chunk.raw_frames(&self.config));
        let h = self.subsample.forward(&padded)?;
        let t = h.rows();
        let c = chunk.frames_per_chunk;
        let mask = if self.config.variant == Variant::Baseline {
            let cm = chunk_mask(t, c)?;
            Some(match extra_band {
                Some(n) => combine_masks(&cm, &band_mask(t, n)?)?,
                None => cm,
            })
        } else {
            None
        };
        let mut stats = self.new_stats(chunk, collect_stats);
        let output = self.run_blocks(h, mask.as_ref(), c, &mut stats, false)?;
        Ok(Encoded { output, stats })
    }

    pub fn encode(&self, features: &Tensor<T>, chunk: &ChunkSpec, mode: Mode) -> Result<Tensor<T>> {
        Ok(match mode {
            Mode::MaskedBatch => self.encode_masked_batch(features, chunk, None, false)?.output,
            Mode::Incremental => self.encode_incremental(features, chunk, false)?.output,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_tensors(path, &self.named_tensors())
    }

    /// Loads weights for `config` from a checkpoint; names and shapes must
    /// match the model exactly.
    pub fn load(config: &EncoderConfig, path: &Path) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let stored = read_tensors(path)?;
        let mut slots = model.named_tensors_mut();
        if stored.len() != slots.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model expects {}",
                stored.len(),
                slots.len()
            )));
        }
        for ((name, dst), (sname, src)) in slots.iter_mut().zip(stored) {
            if *name != sname {
                return Err(Error::Format(format!("expected tensor {name}, found {sname}")));
            }
            if dst.shape() != src.shape() {
                return Err(Error::Format(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            **dst = src.cast();
        }
        drop(slots);
        Ok(model)
    }
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Running per-layer sums of head-averaged attention maps at a fixed chunk
/// length. Each accumulated chunk counts as one sample; the mean is taken
/// over heads, chunks, and utterances alike.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStats {
    chunk_len: usize,
    sums: Vec<Vec<f64>>,
    counts: Vec<u64>,
}

impl AttentionStats {
    pub fn new(layers: usize, chunk_len: usize) -> Self {
        Self {
            chunk_len,
            sums: vec![vec![0.0; chunk_len * chunk_len]; layers],
            counts: vec![0; layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.sums.len()
    }

    pub fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    pub fn sample_count(&self, layer: usize) -> u64 {
        self.counts[layer]
    }

    /// Adds one chunk's `[heads, T, T]` maps (T = chunk length) to `layer`.
    pub fn accumulate<T: Real>(&mut self, maps: &Tensor<T>, layer: usize) -> Result<()> {
        let t = self.chunk_len;
        if maps.rank() != 3 || maps.shape()[1] != t || maps.shape()[2] != t {
            return Err(Error::Stats(format!(
                "expected [heads, {t}, {t}] maps, got {:?}",
                maps.shape()
            )));
        }
        if layer >= self.layers() {
            return Err(Error::Stats(format!("layer {layer} out of range ({} layers)", self.layers())));
        }
        let heads = maps.shape()[0];
        let inv = 1.0 / heads as f64;
        let sum = &mut self.sums[layer];
        for h in 0..heads {
            let block = &maps.data()[h * t * t..(h + 1) * t * t];
            for (s, &v) in sum.iter_mut().zip(block) {
                *s += v.to_f64() * inv;
            }
        }
        self.counts[layer] += 1;
        Ok(())
    }

    /// Splits full-sequence `[heads, T', T']` maps into their diagonal
    /// chunk blocks and accumulates each block as a sample.
    pub fn accumulate_blocks<T: Real>(&mut self, maps: &Tensor<T>, layer: usize) -> Result<()> {
        let c = self.chunk_len;
        if maps.rank() != 3 || maps.shape()[1] != maps.shape()[2] || c == 0 || !maps.shape()[1].is_multiple_of(c) {
            return Err(Error::Stats(format!(
                "maps {:?} do not tile into {c}-frame chunks",
                maps.shape()
            )));
        }
        let (heads, tt) = (maps.shape()[0], maps.shape()[1]);
        for start in (0..tt).step_by(c) {
            let mut block = Tensor::<T>::zeros(&[heads, c, c]);
            for h in 0..heads {
                for i in 0..c {
                    let src = (h * tt + start + i) * tt + start;
                    let dst = (h * c + i) * c;
                    block.data_mut()[dst..dst + c].copy_from_slice(&maps.data()[src..src + c]);
                }
            }
            self.accumulate(&block, layer)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.chunk_len != self.chunk_len || other.layers() != self.layers() {
            return Err(Error::Stats("cannot merge stats of different shape".into()));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn mean(&self, layer: usize) -> Result<Tensor<f64>> {
        let n = *self
            .counts
            .get(layer)
            .ok_or_else(|| Error::Stats(format!("layer {layer} out of range")))?;
        if n == 0 {
            return Err(Error::Stats(format!("layer {layer} has no samples")));
        }
        let t = self.chunk_len;
        Tensor::from_vec(&[t, t], self.sums[layer].iter().map(|v| v / n as f64).collect())
    }

    /// Row-major CSV of a layer's mean map, 6 significant digits.
    pub fn mean_csv(&self, layer: usize) -> Result<String> {
        let m = self.mean(layer)?;
        let mut s = String::new();
        for i in 0..m.rows() {
            let row: Vec<String> = m.row(i).iter().map(|&v| crate::harness::fmt_real(v)).collect();
            writeln!(s, "{}", row.join(",")).unwrap();
        }
        Ok(s)
    }

    /// Writes `attn_layer_XX.csv` for every layer into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        (0..self.layers())
            .map(|l| {
                let path = dir.join(format!("attn_layer_{l:02}.csv"));
                std::fs::write(&path, self.mean_csv(l)?)?;
                Ok(path)
            })
            .collect()
    }
}

use std::path::{Path, PathBuf};

use crate::attention::{band_mask, AttentionStats};
use crate::encoder::{ChunkSpec, Encoder, EncoderConfig, Variant};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

use super::bench::Utterance;
use super::fmt_real;

/// Number of central diagonals kept by the sweep, or every diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Band {
    Diagonals(usize),
    All,
}

impl Band {
    fn label(self) -> String {
        match self {
            Band::Diagonals(n) => n.to_string(),
            Band::All => "all".into(),
        }
    }
}

impl std::str::FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Band::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n % 2 == 1 => Ok(Band::Diagonals(n)),
            _ => Err(Error::Config(format!("band must be an odd diagonal count or \"all\", got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub utterance_id: usize,
    pub band: Band,
    pub frames_per_chunk: usize,
    /// Fraction of each chunk's attention map left unmasked.
    pub retained_fraction: f64,
    /// `‖y_band − y_full‖ / ‖y_full‖` over the encoder output.
    pub divergence: f64,
}

pub const SWEEP_CSV_HEADER: &str = "utterance_id,n_diag,frames_per_chunk,retained_fraction,divergence";

impl SweepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.utterance_id,
            self.band.label(),
            self.frames_per_chunk,
            fmt_real(self.retained_fraction),
            fmt_real(self.divergence)
        )
    }
}

fn require_attention(config: &EncoderConfig) -> Result<()> {
    if config.variant != Variant::Baseline {
        return Err(Error::UnsupportedVariant(config.variant.to_string()));
    }
    Ok(())
}

/// Re-encodes every utterance with each band intersected into the chunk
/// mask, without retraining, and measures how far the output moves.
/// Records are ordered by utterance, then by band.
pub fn mask_sweep(
    config: &EncoderConfig,
    chunk: &ChunkSpec,
    bands: &[Band],
    utterances: &[Utterance],
    seed: u64,
    exec: Execution,
) -> Result<Vec<SweepRecord>> {
    require_attention(config)?;
    let encoder = Encoder::<f32>::new(config, seed)?;
    let c = chunk.frames_per_chunk;
    let fractions = bands
        .iter()
        .map(|&b| match b {
            Band::All => Ok(1.0),
            Band::Diagonals(n) => band_mask(c, n).map(|m| m.density()),
        })
        .collect::<Result<Vec<f64>>>()?;

    let per_utt = par::map(utterances, exec, |_, u| -> Result<Vec<SweepRecord>> {
        let full = encoder.encode_masked_batch(&u.features, chunk, None, false)?.output;
        let norm = full.norm() as f64;
        bands
            .iter()
            .zip(&fractions)
            .map(|(&band, &retained_fraction)| {
                let divergence = match band {
                    Band::All => 0.0,
                    Band::Diagonals(n) => {
                        let y = encoder.encode_masked_batch(&u.features, chunk, Some(n), false)?.output;
                        y.sub(&full)?.norm() as f64 / norm
                    }
                };
                Ok(SweepRecord {
                    utterance_id: u.id,
                    band,
                    frames_per_chunk: c,
                    retained_fraction,
                    divergence,
                })
            })
            .collect()
    });
    Ok(per_utt.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

/// Mean per-layer attention maps over every chunk of every utterance,
/// written as `attn_layer_XX.csv` into `out_dir`.
pub fn dump_attention(
    config: &EncoderConfig,
    chunk: &ChunkSpec,
    utterances: &[Utterance],
    seed: u64,
    exec: Execution,
    out_dir: &Path,
) -> Result<(AttentionStats, Vec<PathBuf>)> {
    require_attention(config)?;
    let encoder = Encoder::<f32>::new(config, seed)?;
    let parts = par::map(utterances, exec, |_, u| {
        encoder
            .encode_incremental(&u.features, chunk, true)
            .map(|e| e.stats.expect("attention model collects stats"))
    });
    let mut stats = AttentionStats::new(config.layers, chunk.frames_per_chunk);
    for p in parts {
        stats.merge(&p?)?;
    }
    let paths = stats.write_csv(out_dir)?;
    Ok((stats, paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::bench::{gen_utterances, BenchPlan};

    fn utts(cfg: &EncoderConfig, durs: Vec<f64>) -> Vec<Utterance> {
        let mut plan = BenchPlan::new(5, cfg.feature_dim);
        plan.durations_s = durs;
        gen_utterances(&plan).unwrap()
    }

    #[test]
    fn band_parsing() {
        assert_eq!("all".parse::<Band>().unwrap(), Band::All);
        assert_eq!("7".parse::<Band>().unwrap(), Band::Diagonals(7));
        assert!("6".parse::<Band>().is_err());
        assert!("x".parse::<Band>().is_err());
    }

    #[test]
    fn sweep_fractions_and_divergence() {
        let cfg = EncoderConfig::toy(Variant::Baseline);
        let chunk = ChunkSpec::new(1280, &cfg).unwrap();
        let u = utts(&cfg, vec![2.56, 1.28]);
        let bands = [Band::Diagonals(7), Band::Diagonals(5), Band::All];
        let recs = mask_sweep(&cfg, &chunk, &bands, &u, 1, Execution::Parallel).unwrap();
        assert_eq!(recs.len(), 6);
        assert_eq!(recs[0].retained_fraction, 212.0 / 1024.0);
        assert_eq!(recs[1].retained_fraction, 154.0 / 1024.0);
        assert_eq!((recs[2].retained_fraction, recs[2].divergence), (1.0, 0.0));
        assert!(recs[0].divergence > 0.0 && recs[1].divergence > 0.0);
        assert_eq!(recs[3].utterance_id, 1);
        let seq = mask_sweep(&cfg, &chunk, &bands, &u, 1, Execution::Sequential).unwrap();
        assert_eq!(recs, seq);
    }

    #[test]
    fn attention_free_variants_rejected() {
        for v in [Variant::Soft, Variant::Hard] {
            let cfg = EncoderConfig::toy(v);
            let chunk = ChunkSpec::new(160, &cfg).unwrap();
            let u = utts(&cfg, vec![0.32]);
            assert!(matches!(mask_sweep(&cfg, &chunk, &[Band::All], &u, 0, Execution::Sequential), Err(Error::UnsupportedVariant(_))));
            let dir = tempfile::tempdir().unwrap();
            assert!(dump_attention(&cfg, &chunk, &u, 0, Execution::Sequential, dir.path()).is_err());
        }
    }

    #[test]
    fn dump_writes_one_file_per_layer() {
        let cfg = EncoderConfig::toy(Variant::Baseline);
        let chunk = ChunkSpec::new(320, &cfg).unwrap();
        let u = utts(&cfg, vec![0.64, 0.96]);
        let dir = tempfile::tempdir().unwrap();
        let (stats, paths) = dump_attention(&cfg, &chunk, &u, 2, Execution::Parallel, dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(stats.sample_count(0), 5);
        let text = std::fs::read_to_string(&paths[1]).unwrap();
        assert_eq!(text.lines().count(), 8);
    }

    #[test]
    fn repeated_identical_chunk_mean_equals_single() {
        let cfg = EncoderConfig::toy(Variant::Baseline);
        let chunk = ChunkSpec::new(320, &cfg).unwrap();
        let one = utts(&cfg, vec![0.32]);
        let mut twice = one[0].clone();
        twice.features = crate::numerics::Tensor::concat_rows(&[one[0].features.clone(), one[0].features.clone()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, _) = dump_attention(&cfg, &chunk, &one, 3, Execution::Sequential, dir.path()).unwrap();
        let (b, _) = dump_attention(&cfg, &chunk, &[twice], 3, Execution::Sequential, dir.path()).unwrap();
        for l in 0..cfg.layers {
            assert!(a.mean(l).unwrap().max_abs_diff(&b.mean(l).unwrap()) < 1e-12);
        }
    }
}

use std::time::Instant;

use crate::encoder::{ChunkSpec, Encoder, EncoderConfig, Mode, Variant};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

use super::fmt_real;

/// Synthetic utterance set and timing protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchPlan {
    pub seed: u64,
    pub durations_s: Vec<f64>,
    pub feature_dim: usize,
    pub frame_hop_ms: usize,
    /// Each utterance is its base features concatenated this many times.
    pub repeat_factor: usize,
    pub warmup_runs: usize,
    pub timed_runs: usize,
}

impl BenchPlan {
    /// Four lengths spanning 15 s to 2 min, one warmup, five timed runs.
    pub fn new(seed: u64, feature_dim: usize) -> Self {
        Self {
            seed,
            durations_s: vec![15.0, 30.0, 60.0, 120.0],
            feature_dim,
            frame_hop_ms: 10,
            repeat_factor: 1,
            warmup_runs: 1,
            timed_runs: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_runs < 1 || self.timed_runs < 3 {
            return Err(Error::Config(format!(
                "need at least 1 warmup and 3 timed runs, got {} and {}",
                self.warmup_runs, self.timed_runs
            )));
        }
        if !matches!(self.repeat_factor, 1 | 3) {
            return Err(Error::Config(format!("repeat factor must be 1 or 3, got {}", self.repeat_factor)));
        }
        if self.durations_s.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Config("utterance durations must be positive".into()));
        }
        if self.feature_dim == 0 || self.frame_hop_ms == 0 {
            return Err(Error::Config("feature_dim and frame_hop_ms must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: usize,
    pub duration_s: f64,
    /// `[frames, feature_dim]`
    pub features: Tensor<f32>,
}

/// Seeded standard-normal feature frames, one utterance per planned duration.
pub fn gen_utterances(plan: &BenchPlan) -> Result<Vec<Utterance>> {
    plan.validate()?;
    let mut rng = Rng::seed(plan.seed);
    plan.durations_s
        .iter()
        .enumerate()
        .map(|(id, &dur)| {
            let mut r = rng.fork();
            let frames = (dur * 1000.0 / plan.frame_hop_ms as f64).round() as usize;
            let base: Tensor<f32> = r.normal_tensor(&[frames, plan.feature_dim], 1.0);
            let parts = vec![base; plan.repeat_factor];
            Ok(Utterance {
                id,
                duration_s: (frames * plan.repeat_factor * plan.frame_hop_ms) as f64 / 1000.0,
                features: Tensor::concat_rows(&parts)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RtfRecord {
    pub utterance_id: usize,
    pub audio_duration_s: f64,
    pub encoder_wall_time_s: f64,
    pub rtf: f64,
    pub variant: Variant,
    pub mode: Mode,
    pub chunk_ms: usize,
    pub repeat_factor: usize,
}

pub const RTF_CSV_HEADER: &str =
    "utterance_id,audio_duration_s,encoder_wall_time_s,rtf,variant,mode,chunk_ms,repeat_factor";

impl RtfRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.utterance_id,
            fmt_real(self.audio_duration_s),
            fmt_real(self.encoder_wall_time_s),
            fmt_real(self.rtf),
            self.variant,
            self.mode,
            self.chunk_ms,
            self.repeat_factor
        )
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Median wall time in seconds of `timed` encodes after `warmup` untimed ones.
pub fn time_encoder(
    encoder: &Encoder<f32>,
    features: &Tensor<f32>,
    chunk: &ChunkSpec,
    mode: Mode,
    warmup: usize,
    timed: usize,
) -> Result<f64> {
    for _ in 0..warmup {
        std::hint::black_box(encoder.encode(features, chunk, mode)?);
    }
    let mut times = Vec::with_capacity(timed);
    for _ in 0..timed {
        let start = Instant::now();
        std::hint::black_box(encoder.encode(features, chunk, mode)?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(median(&mut times))
}

/// Times the encoder alone on every planned utterance, strictly one after
/// another on the calling thread.
pub fn bench_rtf(plan: &BenchPlan, config: &EncoderConfig, chunk: &ChunkSpec, mode: Mode) -> Result<Vec<RtfRecord>> {
    if plan.feature_dim != config.feature_dim || plan.frame_hop_ms != config.frame_hop_ms {
        return Err(Error::Config(format!(
            "plan features {}@{} ms do not match config {}@{} ms",
            plan.feature_dim, plan.frame_hop_ms, config.feature_dim, config.frame_hop_ms
        )));
    }
    let encoder = Encoder::<f32>::new(config, plan.seed)?;
    gen_utterances(plan)?
        .iter()
        .map(|u| {
            let wall = time_encoder(&encoder, &u.features, chunk, mode, plan.warmup_runs, plan.timed_runs)?;
            if !(wall > 0.0) {
                return Err(Error::Config("clock reported a non-positive duration".into()));
            }
            Ok(RtfRecord {
                utterance_id: u.id,
                audio_duration_s: u.duration_s,
                encoder_wall_time_s: wall,
                rtf: wall / u.duration_s,
                variant: config.variant,
                mode,
                chunk_ms: chunk.chunk_ms,
                repeat_factor: plan.repeat_factor,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Config("slope fit needs at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::Config("slope fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("slope fit needs distinct x values".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

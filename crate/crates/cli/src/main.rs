use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};

use chunkconf::encoder::{ChunkSpec, Encoder, EncoderConfig, Mode, Variant};
use chunkconf::harness::{
    bench_rtf, dump_attention, fmt_real, gen_utterances, gradcheck, human_count, mask_sweep, params_report, Band,
    BenchPlan, GradcheckOptions, Scope, RTF_CSV_HEADER, SWEEP_CSV_HEADER,
};
use chunkconf::numerics::{Rng, Tensor};
use chunkconf::par::Execution;
use chunkconf::transducer::{edit_counts, GreedyDecoder, TransducerConfig, TransducerTail};

const DECODE_CSV_HEADER: &str = "chunk_index,frames,emitted_incremental,emitted_masked_batch,tokens_incremental";

/// Streaming Conformer encoder variants: experiment harness.
///
/// Reals in every CSV are printed with 6 significant digits. Without
/// --config, `params` uses the full-size encoder and every other command the
/// toy encoder (d_model 16, 2 layers).
#[derive(Parser, Debug)]
#[command(name = "chunkconf", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Encoder config JSON (fields as in EncoderConfig)
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Override the config's variant: baseline, soft or hard
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Chunk length in milliseconds
    #[arg(long, global = true, default_value = "1280",
          value_parser = PossibleValuesParser::new(["160", "320", "640", "1280"]).map(|s| s.parse::<usize>().unwrap()))]
    chunk_ms: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Encoding mode: masked-batch or incremental
    #[arg(long, global = true, default_value = "masked-batch")]
    mode: Mode,
    /// Concatenate each synthetic utterance with itself this many times
    #[arg(long, global = true, default_value = "1",
          value_parser = PossibleValuesParser::new(["1", "3"]).map(|s| s.parse::<usize>().unwrap()))]
    repeat: usize,
    /// Directory for CSV output (stdout when omitted)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parameter totals of all variants and their pairwise deltas.
    ///
    /// Writes params.csv and deltas.csv.
    #[command(after_help = "CSV columns:\n  params.csv: variant,parameters,delta_vs_baseline,percent_vs_baseline\n  deltas.csv: from,to,delta,percent")]
    Params {
        /// Include the transducer predictor and joint
        #[arg(long)]
        transducer: bool,
        #[arg(long, default_value_t = 64)]
        vocab: usize,
    },
    /// Finite-difference check of every analytic gradient in double precision.
    ///
    /// Exits 1 if any relative error reaches the tolerance. Writes gradcheck.csv.
    #[command(after_help = "CSV columns:\n  gradcheck.csv: operation,parameter,seeds,max_rel_error,worst_seed,tolerance,status")]
    Gradcheck {
        /// attention, deform, rnnt, ctc or all
        #[arg(long, default_value = "all")]
        scope: Scope,
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, hide = true)]
        corrupt: bool,
        /// Run seeds one after another
        #[arg(long)]
        sequential: bool,
    },
    /// Re-encodes synthetic utterances with the chunk attention maps
    /// restricted to central diagonals, reporting output divergence.
    ///
    /// Baseline variant only. Writes mask_sweep.csv.
    #[command(after_help = "CSV columns:\n  mask_sweep.csv: utterance_id,n_diag,frames_per_chunk,retained_fraction,divergence\n  divergence = |y_band - y_full| / |y_full| over the encoder output")]
    MaskSweep {
        /// Odd diagonal counts; "all" is always added
        #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
        bands: Vec<Band>,
        /// Utterance durations in seconds
        #[arg(long, value_delimiter = ',', default_value = "10,20")]
        durations: Vec<f64>,
    },
    /// Mean attention map per layer over all chunks of synthetic utterances.
    ///
    /// Baseline variant only. Requires --out; writes attn_layer_XX.csv.
    #[command(after_help = "CSV columns:\n  attn_layer_XX.csv: one row per query position, one column per key position, no header")]
    AttnDump {
        #[arg(long, value_delimiter = ',', default_value = "10,20")]
        durations: Vec<f64>,
    },
    /// Encoder-only real time factor on synthetic utterances, timed serially.
    ///
    /// Writes rtf.csv.
    #[command(after_help = "CSV columns:\n  rtf.csv: utterance_id,audio_duration_s,encoder_wall_time_s,rtf,variant,mode,chunk_ms,repeat_factor\n  encoder_wall_time_s is the median of the timed runs")]
    BenchRtf {
        #[arg(long, value_delimiter = ',', default_value = "15,30,60,120")]
        durations: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = 5)]
        timed: usize,
    },
    /// Greedy transducer decoding of one synthetic utterance, chunk by chunk,
    /// from both encoding modes.
    ///
    /// Exits 1 if the two modes produce different hypotheses. Writes decode.csv.
    #[command(after_help = "CSV columns:\n  decode.csv: chunk_index,frames,emitted_incremental,emitted_masked_batch,tokens_incremental\n  tokens_incremental is a space-separated list of label ids")]
    DecodeDemo {
        #[arg(long, default_value_t = 64)]
        vocab: usize,
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
    },
}

fn load_config(common: &Common, default: EncoderConfig) -> Result<EncoderConfig> {
    let mut cfg = match &common.config {
        Some(path) => EncoderConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?,
        None => default,
    };
    if let Some(v) = common.variant {
        cfg = cfg.with_variant(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes `text` to `out/name`, or to stdout without `--out`.
fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn utterance_plan(common: &Common, feature_dim: usize, durations: &[f64]) -> BenchPlan {
    BenchPlan {
        durations_s: durations.to_vec(),
        repeat_factor: common.repeat,
        ..BenchPlan::new(common.seed, feature_dim)
    }
}

enum Outcome {
    Ok,
    CheckFailed,
}

fn run(cli: Cli) -> Result<Outcome> {
    let common = &cli.common;
    let out = common.out.as_deref();
    match cli.command {
        Command::Params { transducer, vocab } => {
            let cfg = load_config(common, EncoderConfig::large(Variant::Baseline))?;
            let report = params_report(&cfg, transducer, vocab);
            for &(v, n) in &report.totals {
                eprintln!("{v:>8}: {n} ({})", human_count(n));
            }
            match out {
                Some(_) => {
                    emit(out, "params.csv", &report.totals_csv())?;
                    emit(out, "deltas.csv", &report.deltas_csv())?;
                }
                None => emit(None, "", &format!("{}\n{}", report.totals_csv(), report.deltas_csv()))?,
            }
        }
        Command::Gradcheck { scope, seeds, tolerance, corrupt, sequential } => {
            let opts = GradcheckOptions {
                first_seed: common.seed,
                seeds,
                tolerance,
                corrupt,
                exec: if sequential { Execution::Sequential } else { Execution::Parallel },
            };
            let report = gradcheck(scope, &opts)?;
            emit(out, "gradcheck.csv", &report.csv())?;
            for (op, err) in report.max_by_operation() {
                let status = if err < tolerance { "pass" } else { "FAIL" };
                eprintln!("{op:>9}: max rel error {} {status}", fmt_real(err));
            }
            if !report.passed() {
                return Ok(Outcome::CheckFailed);
            }
        }
        Command::MaskSweep { mut bands, durations } => {
            let cfg = load_config(common, EncoderConfig::toy(Variant::Baseline))?;
            let chunk = ChunkSpec::new(common.chunk_ms, &cfg)?;
            if !bands.contains(&Band::All) {
                bands.push(Band::All);
            }
            let utts = gen_utterances(&utterance_plan(common, cfg.feature_dim, &durations))?;
            let recs = mask_sweep(&cfg, &chunk, &bands, &utts, common.seed, Execution::Parallel)?;
            let mut csv = format!("{SWEEP_CSV_HEADER}\n");
            for r in &recs {
                csv.push_str(&r.csv_row());
                csv.push('\n');
            }
            emit(out, "mask_sweep.csv", &csv)?;
        }
        Command::AttnDump { durations } => {
            let Some(dir) = out else {
                bail!(UsageError("attn-dump needs --out <DIR>".into()));
            };
            let cfg = load_config(common, EncoderConfig::toy(Variant::Baseline))?;
            let chunk = ChunkSpec::new(common.chunk_ms, &cfg)?;
            let utts = gen_utterances(&utterance_plan(common, cfg.feature_dim, &durations))?;
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let (_, paths) = dump_attention(&cfg, &chunk, &utts, common.seed, Execution::Parallel, dir)?;
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::BenchRtf { durations, warmup, timed } => {
            let cfg = load_config(common, EncoderConfig::toy(Variant::Baseline))?;
            let chunk = ChunkSpec::new(common.chunk_ms, &cfg)?;
            let plan = BenchPlan {
                warmup_runs: warmup,
                timed_runs: timed,
                frame_hop_ms: cfg.frame_hop_ms,
                ..utterance_plan(common, cfg.feature_dim, &durations)
            };
            let recs = bench_rtf(&plan, &cfg, &chunk, common.mode)?;
            let mut csv = format!("{RTF_CSV_HEADER}\n");
            for r in &recs {
                csv.push_str(&r.csv_row());
                csv.push('\n');
            }
            emit(out, "rtf.csv", &csv)?;
        }
        Command::DecodeDemo { vocab, duration } => {
            let cfg = load_config(common, EncoderConfig::toy(Variant::Baseline))?;
            let chunk = ChunkSpec::new(common.chunk_ms, &cfg)?;
            let plan = utterance_plan(common, cfg.feature_dim, &[duration]);
            let features = gen_utterances(&plan)?.remove(0).features;
            let encoder = Encoder::<f32>::new(&cfg, common.seed)?;
            let tail = TransducerTail::new(
                &TransducerConfig::for_encoder(&cfg, vocab),
                &mut Rng::seed(common.seed ^ 0x7a11),
            );
            let inc: Tensor<f64> = encoder.encode(&features, &chunk, Mode::Incremental)?.cast();
            let bat: Tensor<f64> = encoder.encode(&features, &chunk, Mode::MaskedBatch)?.cast();
            let c = chunk.frames_per_chunk;
            let (mut dec_inc, mut dec_bat) = (GreedyDecoder::new(&tail)?, GreedyDecoder::new(&tail)?);
            let mut csv = format!("{DECODE_CSV_HEADER}\n");
            for (i, start) in (0..inc.rows()).step_by(c).enumerate() {
                let end = (start + c).min(inc.rows());
                let a = dec_inc.push_chunk(&inc.slice_rows(start, end))?;
                let b = dec_bat.push_chunk(&bat.slice_rows(start, end))?;
                let tokens: Vec<String> = a.iter().map(ToString::to_string).collect();
                csv.push_str(&format!("{i},{},{},{},{}\n", end - start, a.len(), b.len(), tokens.join(" ")));
            }
            emit(out, "decode.csv", &csv)?;
            let (a, b) = (dec_inc.finish(), dec_bat.finish());
            let diff = edit_counts(&a, &b);
            eprintln!(
                "{} labels; modes differ by {} edits (S {} I {} D {})",
                a.len(),
                diff.total(),
                diff.substitutions,
                diff.insertions,
                diff.deletions
            );
            if diff.total() != 0 {
                return Ok(Outcome::CheckFailed);
            }
        }
    }
    Ok(Outcome::Ok)
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn is_usage_error(err: &anyhow::Error) -> bool {
    use chunkconf::Error as E;
    err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(
                e.downcast_ref::<E>(),
                Some(E::Config(_) | E::UnsupportedVariant(_) | E::InputTooShort { .. } | E::Json(_))
            )
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}

//! Experiment harness: synthetic utterances, RTF benchmarking, the band
//! masking sweep, attention-map dumps, gradient checks, and parameter tables.

mod bench;
mod gradcheck;
mod params;
mod sweep;

pub use bench::{
    bench_rtf, gen_utterances, loglog_slope, median, time_encoder, BenchPlan, RtfRecord, Utterance, RTF_CSV_HEADER,
};
pub use gradcheck::{
    gradcheck, keep_fractions_interior, GradRow, GradcheckOptions, GradcheckReport, Operation, Scope,
    GRADCHECK_CSV_HEADER,
};
pub use params::{human_count, params_report, ParamDelta, ParamsReport, DELTAS_CSV_HEADER, PARAMS_CSV_HEADER};
pub use sweep::{dump_attention, mask_sweep, Band, SweepRecord, SWEEP_CSV_HEADER};

/// Formats a real with 6 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.5e}")
}

/// Parses a CSV produced by this module back into rows of fields.
pub fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip_to_printed_precision() {
        for v in [0.0, 1.0, -2.5e-7, 123456.789, 0.2070, 1.23456789012345, f64::MIN_POSITIVE] {
            let back: f64 = fmt_real(v).parse().unwrap();
            let tol = v.abs() * 5e-6;
            assert!((back - v).abs() <= tol, "{v} -> {}", fmt_real(v));
            assert_eq!(fmt_real(back), fmt_real(v));
        }
        assert_eq!(fmt_real(0.20703125), "2.07031e-1");
    }

    #[test]
    fn csv_parse() {
        let rows = parse_csv("a,b\n1,2\n\n");
        assert_eq!(rows, vec![vec!["a", "b"], vec!["1", "2"]]);
    }
}

use crate::encoder::{count_parameters, EncoderConfig, Variant};

use super::fmt_real;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamsReport {
    /// Totals in `Variant::ALL` order.
    pub totals: Vec<(Variant, usize)>,
    pub include_transducer: bool,
    pub vocab: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDelta {
    pub from: Variant,
    pub to: Variant,
    /// `count(to) − count(from)`
    pub delta: i64,
    /// `delta / count(from)` in percent.
    pub percent: f64,
}

pub const PARAMS_CSV_HEADER: &str = "variant,parameters,delta_vs_baseline,percent_vs_baseline";
pub const DELTAS_CSV_HEADER: &str = "from,to,delta,percent";

/// Parameter totals of all three variants of `config`'s shape.
pub fn params_report(config: &EncoderConfig, include_transducer: bool, vocab: usize) -> ParamsReport {
    ParamsReport {
        totals: Variant::ALL
            .iter()
            .map(|&v| (v, count_parameters(&config.with_variant(v), include_transducer, vocab)))
            .collect(),
        include_transducer,
        vocab,
    }
}

impl ParamsReport {
    pub fn count(&self, v: Variant) -> usize {
        self.totals.iter().find(|(x, _)| *x == v).map(|(_, n)| *n).expect("all variants counted")
    }

    pub fn delta(&self, from: Variant, to: Variant) -> ParamDelta {
        let (a, b) = (self.count(from), self.count(to));
        let delta = b as i64 - a as i64;
        ParamDelta {
            from,
            to,
            delta,
            percent: 100.0 * delta as f64 / a as f64,
        }
    }

    /// Every ordered pair of distinct variants.
    pub fn deltas(&self) -> Vec<ParamDelta> {
        let mut out = Vec::new();
        for &a in &Variant::ALL {
            for &b in &Variant::ALL {
                if a != b {
                    out.push(self.delta(a, b));
                }
            }
        }
        out
    }

    pub fn totals_csv(&self) -> String {
        let mut s = format!("{PARAMS_CSV_HEADER}\n");
        for &(v, n) in &self.totals {
            let d = self.delta(Variant::Baseline, v);
            s.push_str(&format!("{v},{n},{},{}\n", d.delta, fmt_real(d.percent)));
        }
        s
    }

    pub fn deltas_csv(&self) -> String {
        let mut s = format!("{DELTAS_CSV_HEADER}\n");
        for d in self.deltas() {
            s.push_str(&format!("{},{},{},{}\n", d.from, d.to, d.delta, fmt_real(d.percent)));
        }
        s
    }
}

/// Human-readable count such as `81.3M`.
pub fn human_count(n: usize) -> String {
    if n >= 1_000_000 {
        format!("{:.1}M", n as f64 / 1e6)
    } else if n >= 1_000 {
        format!("{:.1}K", n as f64 / 1e3)
    } else {
        n.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_scale_report() {
        let r = params_report(&EncoderConfig::large(Variant::Baseline), false, 0);
        let bh = r.delta(Variant::Hard, Variant::Baseline);
        assert!((15_500_000..=16_100_000).contains(&bh.delta));
        let sh = r.delta(Variant::Hard, Variant::Soft);
        assert!((1_600_000..=2_600_000).contains(&sh.delta));
        assert_eq!(r.delta(Variant::Hard, Variant::Hard).delta, 0);
        assert!(r.delta(Variant::Baseline, Variant::Hard).percent < 0.0);
        assert_eq!(r.deltas().len(), 6);
        assert_eq!(r.totals_csv().lines().count(), 4);
        assert!(r.totals_csv().lines().nth(1).unwrap().starts_with("baseline,"));
    }

    #[test]
    fn human_counts() {
        assert_eq!(human_count(81_300_000), "81.3M");
        assert_eq!(human_count(2_500), "2.5K");
        assert_eq!(human_count(12), "12");
    }
}

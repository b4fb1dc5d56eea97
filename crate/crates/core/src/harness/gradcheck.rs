use std::str::FromStr;

use crate::attention::{band_mask, chunk_mask, combine_masks, mhsa_backward, mhsa_output, AttentionMask, MhsaWeights};
use crate::deformconv::{deform_conv1d_backward, deform_conv1d_forward, predict_offsets, DeformWeights};
use crate::error::{Error, Result};
use crate::numerics::{finite_diff_grad, rel_error, Rng, Tensor, DEFAULT_STEP};
use crate::par::{self, Execution};
use crate::transducer::{ctc_loss, ctc_min_frames, rnnt_loss_from_logits};

use super::fmt_real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Attention,
    Deform,
    Rnnt,
    Ctc,
    All,
}

impl Scope {
    fn operations(self) -> Vec<Operation> {
        match self {
            Scope::Attention => vec![Operation::Attention],
            Scope::Deform => vec![Operation::Deform],
            Scope::Rnnt => vec![Operation::Rnnt],
            Scope::Ctc => vec![Operation::Ctc],
            Scope::All => vec![Operation::Attention, Operation::Deform, Operation::Rnnt, Operation::Ctc],
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "attention" => Scope::Attention,
            "deform" => Scope::Deform,
            "rnnt" => Scope::Rnnt,
            "ctc" => Scope::Ctc,
            "all" => Scope::All,
            other => return Err(Error::Config(format!("unknown gradcheck scope {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operation {
    Attention,
    Deform,
    Rnnt,
    Ctc,
}

impl Operation {
    pub fn name(self) -> &'static str {
        match self {
            Operation::Attention => "attention",
            Operation::Deform => "deform",
            Operation::Rnnt => "rnnt",
            Operation::Ctc => "ctc",
        }
    }

    fn run(self, seed: u64) -> Result<Vec<(&'static str, Tensor<f64>, Tensor<f64>)>> {
        match self {
            Operation::Attention => attention_case(seed),
            Operation::Deform => deform_case(seed),
            Operation::Rnnt => rnnt_case(seed),
            Operation::Ctc => ctc_case(seed),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub first_seed: u64,
    pub seeds: usize,
    pub tolerance: f64,
    /// Scales every analytic gradient by `1 + 1e-3` before comparing; a
    /// check that still passes is not checking anything.
    pub corrupt: bool,
    pub exec: Execution,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            first_seed: 0,
            seeds: 100,
            tolerance: 1e-5,
            corrupt: false,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub operation: &'static str,
    pub parameter: &'static str,
    pub seeds: usize,
    pub max_rel_error: f64,
    pub worst_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradRow>,
    pub tolerance: f64,
}

pub const GRADCHECK_CSV_HEADER: &str = "operation,parameter,seeds,max_rel_error,worst_seed,tolerance,status";

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.max_rel_error < self.tolerance)
    }

    /// Worst relative error per operation.
    pub fn max_by_operation(&self) -> Vec<(&'static str, f64)> {
        let mut out: Vec<(&'static str, f64)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|(op, _)| *op == r.operation) {
                Some((_, e)) => *e = e.max(r.max_rel_error),
                None => out.push((r.operation, r.max_rel_error)),
            }
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut s = format!("{GRADCHECK_CSV_HEADER}\n");
        for r in &self.rows {
            let status = if r.max_rel_error < self.tolerance { "pass" } else { "fail" };
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.operation,
                r.parameter,
                r.seeds,
                fmt_real(r.max_rel_error),
                r.worst_seed,
                fmt_real(self.tolerance),
                status
            ));
        }
        s
    }
}

/// Compares analytic gradients with central finite differences for every
/// operation in `scope` over `opts.seeds` random problems each.
pub fn gradcheck(scope: Scope, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rows = Vec::new();
    for op in scope.operations() {
        let seeds: Vec<u64> = (0..opts.seeds as u64).map(|i| opts.first_seed + i).collect();
        let results = par::map(&seeds, opts.exec, |_, &seed| -> Result<Vec<(&'static str, f64)>> {
            Ok(op
                .run(seed)?
                .into_iter()
                .map(|(name, analytic, numeric)| {
                    let analytic = if opts.corrupt { analytic.scale(1.0 + 1e-3) } else { analytic };
                    (name, rel_error(&analytic, &numeric))
                })
                .collect())
        });
        let mut op_rows: Vec<GradRow> = Vec::new();
        for (res, &seed) in results.into_iter().zip(&seeds) {
            for (name, err) in res? {
                let row = match op_rows.iter_mut().find(|r| r.parameter == name) {
                    Some(r) => r,
                    None => {
                        op_rows.push(GradRow {
                            operation: op.name(),
                            parameter: name,
                            seeds: 0,
                            max_rel_error: 0.0,
                            worst_seed: seed,
                        });
                        op_rows.last_mut().unwrap()
                    }
                };
                row.seeds += 1;
                if err > row.max_rel_error || err.is_nan() {
                    row.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                    row.worst_seed = seed;
                }
            }
        }
        rows.extend(op_rows);
    }
    Ok(GradcheckReport {
        rows,
        tolerance: opts.tolerance,
    })
}

fn dot_loss(y: &Tensor<f64>, up: &Tensor<f64>) -> f64 {
    y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
}

fn random_mask(rng: &mut Rng, t: usize) -> Result<AttentionMask> {
    let band = |rng: &mut Rng| band_mask(t, 2 * rng.below(t) + 1);
    let chunk = |rng: &mut Rng| chunk_mask(t, 1 + rng.below(t));
    match rng.below(4) {
        0 => Ok(AttentionMask::full(t)),
        1 => chunk(rng),
        2 => band(rng),
        _ => {
            let c = chunk(rng)?;
            combine_masks(&c, &band(rng)?)
        }
    }
}

fn attention_case(seed: u64) -> Result<Vec<(&'static str, Tensor<f64>, Tensor<f64>)>> {
    let mut rng = Rng::seed(seed);
    let t = 3 + rng.below(4);
    let heads = 1 + rng.below(2);
    let d = heads * (2 + rng.below(2));
    let mut w = MhsaWeights::<f64>::new(d, heads, &mut rng)?;
    w.u_bias = rng.normal_tensor(w.u_bias.shape(), 0.5);
    w.v_bias = rng.normal_tensor(w.v_bias.shape(), 0.5);
    let x = rng.normal_tensor(&[t, d], 1.0);
    let up = rng.normal_tensor(&[t, d], 1.0);
    let mask = random_mask(&mut rng, t)?;
    let g = mhsa_backward(&x, &w, &mask, &up)?;

    let loss = |x: &Tensor<f64>, w: &MhsaWeights<f64>| dot_loss(&mhsa_output(x, w, &mask).expect("valid shapes"), &up);
    let mut out = vec![("x", g.x.clone(), finite_diff_grad(|p| loss(p, &w), &x, DEFAULT_STEP)?)];
    macro_rules! field {
        ($f:ident) => {{
            let fd = finite_diff_grad(
                |p| {
                    let mut ww = w.clone();
                    ww.$f = p.clone();
                    loss(&x, &ww)
                },
                &w.$f,
                DEFAULT_STEP,
            )?;
            out.push((stringify!($f), g.$f.clone(), fd));
        }};
    }
    field!(w_q);
    field!(w_k);
    field!(w_v);
    field!(w_o);
    field!(w_pos);
    field!(u_bias);
    field!(v_bias);
    Ok(out)
}

/// Rescales and shifts the offset predictor so that every sampling
/// position of `x` has a fractional part in `[0.25, 0.75]`, keeping finite
/// differences away from the kinks of linear interpolation.
pub fn keep_fractions_interior(x: &Tensor<f64>, w: &mut DeformWeights<f64>, rng: &mut Rng) -> Result<()> {
    let n = w.offset_groups * w.k;
    w.offset_bias = Tensor::zeros(&[n]);
    let off = predict_offsets(x, w)?;
    for o in 0..n {
        let vals: Vec<f64> = (0..x.rows()).map(|p| off.data()[p * n + o]).collect();
        let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let shrink = if hi - lo > 0.5 { 0.5 / (hi - lo) } else { 1.0 };
        for v in w.offset_kernel.row_mut(o) {
            *v *= shrink;
        }
        let mid = (lo + hi) / 2.0 * shrink;
        let shift = rng.below(5) as f64 - 2.0;
        w.offset_bias.data_mut()[o] = 0.5 - mid + shift;
    }
    Ok(())
}

fn deform_case(seed: u64) -> Result<Vec<(&'static str, Tensor<f64>, Tensor<f64>)>> {
    let mut rng = Rng::seed(seed);
    let t = 4 + rng.below(5);
    let groups = 1 + rng.below(2);
    let c = groups * (1 + rng.below(2));
    let k = if rng.below(2) == 0 { 3 } else { 5 };
    let mut w = DeformWeights::<f64>::new(c, c, k, groups, groups, &mut rng)?;
    w.output_bias = rng.normal_tensor(&[c], 0.5);
    w.offset_kernel = w.offset_kernel.scale(0.1);
    let x = rng.normal_tensor(&[t, c], 1.0);
    keep_fractions_interior(&x, &mut w, &mut rng)?;
    let up = rng.normal_tensor(&[t, c], 1.0);
    let g = deform_conv1d_backward(&x, &w, &up)?;

    let loss = |x: &Tensor<f64>, w: &DeformWeights<f64>| {
        let off = predict_offsets(x, w).expect("valid shapes");
        dot_loss(&deform_conv1d_forward(x, w, &off).expect("valid shapes"), &up)
    };
    let mut out = vec![("x", g.x.clone(), finite_diff_grad(|p| loss(p, &w), &x, DEFAULT_STEP)?)];
    macro_rules! field {
        ($f:ident) => {{
            let fd = finite_diff_grad(
                |p| {
                    let mut ww = w.clone();
                    ww.$f = p.clone();
                    loss(&x, &ww)
                },
                &w.$f,
                DEFAULT_STEP,
            )?;
            out.push((stringify!($f), g.$f.clone(), fd));
        }};
    }
    field!(output_kernel);
    field!(output_bias);
    field!(offset_kernel);
    field!(offset_bias);
    Ok(out)
}

fn random_targets(rng: &mut Rng, u: usize, v: usize) -> Vec<usize> {
    (0..u).map(|_| rng.below(v)).collect()
}

fn rnnt_case(seed: u64) -> Result<Vec<(&'static str, Tensor<f64>, Tensor<f64>)>> {
    let mut rng = Rng::seed(seed);
    let (t, u, v) = (1 + rng.below(4), rng.below(4), 2 + rng.below(3));
    let targets = random_targets(&mut rng, u, v);
    let z = rng.normal_tensor(&[t, u + 1, v + 1], 1.5);
    let an = rnnt_loss_from_logits(&z, &targets)?.grad;
    let fd = finite_diff_grad(|p| rnnt_loss_from_logits(p, &targets).expect("valid lattice").loss, &z, DEFAULT_STEP)?;
    Ok(vec![("logits", an, fd)])
}

fn ctc_case(seed: u64) -> Result<Vec<(&'static str, Tensor<f64>, Tensor<f64>)>> {
    let mut rng = Rng::seed(seed);
    let (u, v) = (rng.below(4), 2 + rng.below(3));
    let targets = random_targets(&mut rng, u, v);
    let t = ctc_min_frames(&targets).max(1) + rng.below(3);
    let z = rng.normal_tensor(&[t, v + 1], 1.5);
    let an = ctc_loss(&z, &targets, v)?.grad;
    let fd = finite_diff_grad(|p| ctc_loss(p, &targets, v).expect("feasible").loss, &z, DEFAULT_STEP)?;
    Ok(vec![("logits", an, fd)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(seeds: usize) -> GradcheckOptions {
        GradcheckOptions {
            seeds,
            ..Default::default()
        }
    }

    #[test]
    fn all_scopes_pass() {
        let report = gradcheck(Scope::All, &opts(10)).unwrap();
        assert!(report.passed(), "{}", report.csv());
        let ops: Vec<_> = report.max_by_operation().into_iter().map(|(o, _)| o).collect();
        assert_eq!(ops, vec!["attention", "deform", "rnnt", "ctc"]);
        assert_eq!(report.rows.iter().filter(|r| r.operation == "attention").count(), 8);
    }

    #[test]
    fn corruption_is_detected() {
        for scope in [Scope::Attention, Scope::Deform, Scope::Rnnt, Scope::Ctc] {
            let mut o = opts(3);
            o.corrupt = true;
            let report = gradcheck(scope, &o).unwrap();
            assert!(!report.passed(), "{scope:?}");
            assert!(report.csv().contains(",fail"));
        }
    }

    #[test]
    fn deterministic_across_execution_modes() {
        let mut o = opts(6);
        let a = gradcheck(Scope::Deform, &o).unwrap();
        o.exec = Execution::Sequential;
        let b = gradcheck(Scope::Deform, &o).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.csv(), b.csv());
    }

    #[test]
    fn scope_parsing() {
        assert_eq!("ctc".parse::<Scope>().unwrap(), Scope::Ctc);
        assert!("lstm".parse::<Scope>().is_err());
    }
}

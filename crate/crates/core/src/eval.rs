//! Episode-level evaluation, confidence intervals and report rendering.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::exec::par_map;
use crate::numerics::{math, Mat, Rng};
use crate::pipelines::{fiveway_predict, MethodId, Predictor};
use crate::problems::{sample_fiveway, sample_problem, ClassBank, EpisodeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: MethodId,
    pub k: usize,
    pub n_problems: usize,
    pub per_problem_accuracy: Vec<f64>,
    pub mean: f64,
    pub ci95_halfwidth: f64,
    pub seed: u64,
    /// Filled in by callers that have a clock; 0 otherwise.
    pub wall_time_s: f64,
}

impl EvalReport {
    pub fn from_accuracies(method: MethodId, k: usize, seed: u64, per_problem_accuracy: Vec<f64>) -> Result<Self> {
        let (mean, ci95_halfwidth) = confidence_interval(&per_problem_accuracy)?;
        Ok(Self {
            method,
            k,
            n_problems: per_problem_accuracy.len(),
            per_problem_accuracy,
            mean,
            ci95_halfwidth,
            seed,
            wall_time_s: 0.0,
        })
    }

    /// Lower and upper ends of the 95% interval.
    pub fn interval(&self) -> (f64, f64) {
        (self.mean - self.ci95_halfwidth, self.mean + self.ci95_halfwidth)
    }
}

/// Mean and 95% normal-approximation half-width `1.96 s / sqrt(n)`, with
/// `s` the sample standard deviation.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        bail!(Invalid, "a confidence interval needs at least 2 values, got {}", values.len());
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok((values[0], 0.0));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * math::sqrt(var) / math::sqrt(n)))
}

/// Runs `predictor` on `n_problems` one-vs-all episodes from `bank` and
/// records each episode's query accuracy. Episode `i` is sampled from stream
/// `i` of `seed`, so results do not depend on evaluation order.
pub fn evaluate(
    predictor: &dyn Predictor,
    method: MethodId,
    k: usize,
    bank: &ClassBank,
    cfg: &EpisodeConfig,
    n_problems: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_problems < 2 {
        bail!(Config, "evaluation needs at least 2 problems, got {}", n_problems);
    }
    cfg.validate()?;
    let root = Rng::new(seed);
    let ids: Vec<u64> = (0..n_problems as u64).collect();
    let accs = par_map(&ids, |_, &i| -> Result<f64> {
        let problem = sample_problem(bank, cfg, &mut root.stream(i))?;
        let xs = Mat::from_rows(problem.test_set.iter().map(|e| &e.features))?;
        let scores = predictor.adapt(&problem.train_set)?.score(&xs)?;
        let correct = scores.iter().zip(&problem.test_set).filter(|(s, e)| s.positive == e.label.is_positive()).count();
        Ok(correct as f64 / problem.test_set.len() as f64)
    });
    EvalReport::from_accuracies(method, k, seed, accs.into_iter().collect::<Result<_>>()?)
}

/// 5-way accuracy over `n_problems` episodes, one stream of `seed` each.
pub fn evaluate_fiveway(
    predictor: &dyn Predictor,
    method: MethodId,
    k: usize,
    bank: &ClassBank,
    n_problems: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_problems < 2 {
        bail!(Config, "evaluation needs at least 2 problems, got {}", n_problems);
    }
    let root = Rng::new(seed);
    let ids: Vec<u64> = (0..n_problems as u64).collect();
    let accs = par_map(&ids, |_, &i| -> Result<f64> {
        let fw = sample_fiveway(bank, &mut root.stream(i))?;
        let pred = fiveway_predict(predictor, &fw)?;
        let correct = pred.iter().zip(&fw.queries).filter(|(p, (_, y))| *p == y).count();
        Ok(correct as f64 / fw.queries.len() as f64)
    });
    EvalReport::from_accuracies(method, k, seed, accs.into_iter().collect::<Result<_>>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

pub const CSV_HEADER: &str = "method,k,n_problems,mean_acc,ci95,seed,wall_time_s";

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Renders reports as CSV (one row each, accuracies in percent) or as a
/// markdown grid with one row per k and one column per method.
pub fn render_report(reports: &[EvalReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        bail!(Invalid, "nothing to report");
    }
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in reports {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{:.3}",
                    r.method,
                    r.k,
                    r.n_problems,
                    pct(r.mean),
                    pct(r.ci95_halfwidth),
                    r.seed,
                    r.wall_time_s
                );
            }
        }
        ReportFormat::Markdown => {
            let mut methods: Vec<MethodId> = reports.iter().map(|r| r.method).collect();
            methods.sort();
            methods.dedup();
            let mut ks: Vec<usize> = reports.iter().map(|r| r.k).collect();
            ks.sort_unstable();
            ks.dedup();
            out.push_str("| k |");
            for m in &methods {
                let _ = write!(out, " {} |", m);
            }
            out.push_str("\n|---|");
            for _ in &methods {
                out.push_str("---|");
            }
            out.push('\n');
            for k in ks {
                let _ = write!(out, "| {} |", k);
                for m in &methods {
                    match reports.iter().find(|r| r.k == k && r.method == *m) {
                        Some(r) => {
                            let _ = write!(out, " {} ± {} |", pct(r.mean), pct(r.ci95_halfwidth));
                        }
                        None => out.push_str(" - |"),
                    }
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

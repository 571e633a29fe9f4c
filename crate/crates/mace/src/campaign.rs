//! Repeated-seed campaigns and their on-disk traces.
//!
//! A campaign writes into its output directory:
//!
//! - `spec.json`: the resolved experiment spec,
//! - `run_<i>.csv`: one row per successful evaluation of run `i`,
//! - `summary.csv`: one row per run,
//! - `summary.json`: statistics of the final incumbents across runs.
//!
//! Run `i` uses seed `seed + i`. Everything in the summaries is a function of
//! the spec alone, so re-running a campaign reproduces them byte for byte.

use std::fs;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use mace_core::engine::{
    run_constrained, run_one_stage, run_random, run_unconstrained, Evaluation, Evaluator, Fault, FaultKind, Mode,
    Observation, ProblemShape, RunRecord,
};
use mace_core::problems::{builtin, Problem};
use serde::Serialize;

use crate::config::{Algorithm, ExperimentSpec};
use crate::external::ExternalEvaluator;

/// Built-in problem evaluator that records per-point wall time.
pub struct BuiltinEvaluator {
    problem: Problem,
}

impl BuiltinEvaluator {
    pub fn new(problem: Problem) -> Self {
        Self { problem }
    }
}

impl Evaluator for BuiltinEvaluator {
    fn evaluate_batch(&mut self, points: &[Vec<f64>]) -> Vec<Evaluation> {
        points
            .iter()
            .map(|x| {
                let start = Instant::now();
                let outcome = self
                    .problem
                    .evaluate(x)
                    .map(|(y, constraints)| Observation { y, constraints })
                    .map_err(|e| Fault::new(FaultKind::NonFinite, e.to_string()));
                Evaluation {
                    outcome,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                }
            })
            .collect()
    }
}

/// Runs one optimization with the algorithm named in `spec`.
pub fn execute_run<E: Evaluator>(
    spec: &ExperimentSpec,
    shape: ProblemShape,
    seed: u64,
    evaluator: &mut E,
) -> Result<RunRecord> {
    let config = spec.run_config(seed);
    let record = match (spec.algorithm, spec.resolved_mode()) {
        (Algorithm::Random, _) => run_random(shape, &config, evaluator),
        (Algorithm::Omace, _) => run_one_stage(shape, &config, evaluator),
        (_, Mode::Unconstrained) => run_unconstrained(shape, &config, evaluator),
        (_, Mode::Constrained) => run_constrained(shape, &config, evaluator),
    };
    Ok(record?)
}

fn run_one(spec: &ExperimentSpec, shape: ProblemShape, seed: u64) -> Result<RunRecord> {
    match spec.external_command() {
        Some(cmd) => {
            let mut ev = ExternalEvaluator::new(cmd, Duration::from_secs_f64(spec.timeout_secs))
                .with_max_parallel(spec.max_parallel);
            execute_run(spec, shape, seed, &mut ev)
        }
        None => {
            let mut ev = BuiltinEvaluator::new(builtin(&spec.problem)?);
            execute_run(spec, shape, seed, &mut ev)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    /// Final incumbent objective, if the run ended feasible.
    pub best: Option<f64>,
    pub feasible: bool,
    pub evaluations: usize,
    pub faults: usize,
    pub first_feasible_eval: Option<usize>,
    pub incumbent_eval: Option<usize>,
}

impl RunSummary {
    pub fn of(run: usize, seed: u64, record: &RunRecord) -> Self {
        let feasible = record.is_feasible();
        Self {
            run,
            seed,
            best: if feasible { record.best_value() } else { None },
            feasible,
            evaluations: record.rows.len(),
            faults: record.faults(),
            first_feasible_eval: record.first_feasible_eval,
            incumbent_eval: record.incumbent.as_ref().filter(|i| i.feasible).map(|i| i.eval_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignSummary {
    pub problem: String,
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub repeats: usize,
    pub budget: usize,
    pub batch: usize,
    pub seed: u64,
    /// Statistics over the final incumbents of feasible runs.
    pub best: Option<f64>,
    pub worst: Option<f64>,
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub faults: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_evals_to_first_feasible: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_evals_to_incumbent: Option<f64>,
    pub runs: Vec<RunSummary>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// `(best, worst, mean, population std)`.
pub fn statistics(values: &[f64]) -> Option<(f64, f64, f64, f64)> {
    let m = mean(values)?;
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let worst = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some((best, worst, m, var.sqrt()))
}

impl CampaignSummary {
    pub fn new(spec: &ExperimentSpec, runs: Vec<RunSummary>) -> Self {
        let finals: Vec<f64> = runs.iter().filter_map(|r| r.best).collect();
        let stats = statistics(&finals);
        let constrained = spec.resolved_mode() == Mode::Constrained;
        let to_f64 = |v: Option<usize>| v.map(|n| n as f64);
        let first: Vec<f64> = runs.iter().filter_map(|r| to_f64(r.first_feasible_eval)).collect();
        let incumbent: Vec<f64> = runs.iter().filter_map(|r| to_f64(r.incumbent_eval)).collect();
        Self {
            problem: spec.problem.clone(),
            algorithm: spec.algorithm,
            mode: spec.resolved_mode(),
            repeats: runs.len(),
            budget: spec.budget,
            batch: spec.batch,
            seed: spec.seed,
            best: stats.map(|s| s.0),
            worst: stats.map(|s| s.1),
            mean: stats.map(|s| s.2),
            std: stats.map(|s| s.3),
            faults: runs.iter().map(|r| r.faults).sum(),
            success_count: constrained.then(|| runs.iter().filter(|r| r.feasible).count()),
            mean_evals_to_first_feasible: if constrained { mean(&first) } else { None },
            mean_evals_to_incumbent: if constrained { mean(&incumbent) } else { None },
            runs,
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the successful evaluations of one run.
pub fn write_run_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["iter".to_string(), "eval_index".to_string()];
    header.extend((0..record.shape.dim).map(|i| format!("x_{i}")));
    header.push("y".into());
    header.extend((0..record.shape.n_constraints).map(|i| format!("c_{i}")));
    header.extend(["feasible", "provenance", "incumbent", "wall_ms"].map(String::from));
    w.write_record(&header)?;
    for row in record.rows.iter().filter(|r| r.fault.is_none()) {
        let mut fields = vec![row.iteration.to_string(), row.eval_index.to_string()];
        fields.extend(row.point.iter().map(f64::to_string));
        fields.push(opt(row.y));
        fields.extend(row.constraints.iter().map(f64::to_string));
        fields.push(row.feasible.to_string());
        fields.push(row.provenance.as_str().into());
        fields.push(opt(row.incumbent));
        fields.push(format!("{:.3}", row.wall_ms));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, runs: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "run",
        "seed",
        "best",
        "feasible",
        "evaluations",
        "faults",
        "first_feasible_eval",
        "incumbent_eval",
    ])?;
    for r in runs {
        w.write_record([
            r.run.to_string(),
            r.seed.to_string(),
            opt(r.best),
            r.feasible.to_string(),
            r.evaluations.to_string(),
            r.faults.to_string(),
            opt(r.first_feasible_eval),
            opt(r.incumbent_eval),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub struct Campaign {
    pub summary: CampaignSummary,
    pub records: Vec<RunRecord>,
}

/// Executes every run of `spec` and writes the traces and summaries to
/// `spec.out`. Independent runs execute on up to `available_parallelism`
/// threads.
pub fn run_campaign(spec: &ExperimentSpec) -> Result<Campaign> {
    let spec = spec.clone().resolve()?;
    let shape = spec.shape()?;
    let shape = ProblemShape {
        dim: shape.dim,
        n_constraints: shape.n_constraints,
    };
    let repeats = spec.resolved_repeats();
    fs::create_dir_all(&spec.out).with_context(|| format!("creating {}", spec.out.display()))?;
    fs::write(spec.out.join("spec.json"), spec.to_json() + "\n")?;

    let threads = thread::available_parallelism().map_or(1, |n| n.get()).min(repeats);
    let mut slots: Vec<Option<Result<RunRecord>>> = (0..repeats).map(|_| None).collect();
    thread::scope(|scope| {
        let chunks: Vec<_> = slots
            .chunks_mut(repeats.div_ceil(threads))
            .enumerate()
            .map(|(c, chunk)| {
                let spec = &spec;
                let first = c * repeats.div_ceil(threads);
                scope.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        let i = first + k;
                        let seed = spec.seed.wrapping_add(i as u64);
                        log::info!("run {i} (seed {seed}) started");
                        *slot = Some(run_one(spec, shape, seed));
                    }
                })
            })
            .collect();
        for h in chunks {
            h.join().expect("campaign worker");
        }
    });

    let mut records = Vec::with_capacity(repeats);
    let mut runs = Vec::with_capacity(repeats);
    for (i, slot) in slots.into_iter().enumerate() {
        let record = slot.expect("every run executed").with_context(|| format!("run {i}"))?;
        let seed = spec.seed.wrapping_add(i as u64);
        write_run_csv(&spec.out.join(format!("run_{i}.csv")), &record)?;
        let summary = RunSummary::of(i, seed, &record);
        log::info!("run {i}: best {:?}, {} fault(s)", summary.best, summary.faults);
        runs.push(summary);
        records.push(record);
    }
    write_summary_csv(&spec.out.join("summary.csv"), &runs)?;
    let summary = CampaignSummary::new(&spec, runs);
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    fs::write(spec.out.join("summary.json"), json)?;
    Ok(Campaign { summary, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics_values() {
        assert_eq!(statistics(&[]), None);
        assert_eq!(statistics(&[2.0]), Some((2.0, 2.0, 2.0, 0.0)));
        let (b, w, m, s) = statistics(&[1.0, 3.0]).unwrap();
        assert_eq!((b, w, m, s), (1.0, 3.0, 2.0, 1.0));
    }
}

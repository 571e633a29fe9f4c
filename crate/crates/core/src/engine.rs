//! Outer optimization loops.
//!
//! [`run_unconstrained`] fits a GP each iteration, searches the Pareto front
//! of `(LCB, -PI, -EI)` with DEMO and evaluates `B` distinct members of it.
//! [`run_constrained`] first proposes from the front of
//! `(-PF, naive violation, adaptive violation)` until a feasible observation
//! exists, then from the six-objective ensemble, keeping only candidates
//! whose adaptive violation is at most `rho`. [`run_one_stage`] skips the
//! feasibility hunt, and [`run_random`] is the uniform random-search baseline.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{
    adaptive_violation, beta_schedule, ei, lcb, naive_violation, pf, pi, AcqContext, DEFAULT_DELTA, DEFAULT_NU,
    DEFAULT_XI,
};
use crate::design::{latin_hypercube, uniform, uniform_point, Bounds};
use crate::gp::{fit_gp, fit_gp_to, Dataset, GpModel, DEFAULT_RESTARTS};
use crate::moo::{demo_optimize, DemoConfig, ParetoSet};
use crate::problems::Problem;
use crate::{Error, Result};

pub const DEFAULT_RHO: f64 = 0.05;
/// Points closer than this in every coordinate are the same candidate.
pub const DEDUP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProblemShape {
    pub dim: usize,
    pub n_constraints: usize,
}

/// Which acquisition functions enter the objective vector. Coordinates keep
/// the order LCB, -PI, -EI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ensemble {
    pub pi: bool,
    pub ei: bool,
    pub lcb: bool,
}

impl Ensemble {
    pub const ALL: Self = Self {
        pi: true,
        ei: true,
        lcb: true,
    };

    /// Parses a comma-separated subset of `pi`, `ei`, `lcb`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut e = Self {
            pi: false,
            ei: false,
            lcb: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "pi" => e.pi = true,
                "ei" => e.ei = true,
                "lcb" => e.lcb = true,
                other => {
                    return Err(Error::InvalidArgument(format!("unknown acquisition `{other}`")));
                }
            }
        }
        if e.is_empty() {
            return Err(Error::InvalidArgument("ensemble must not be empty".into()));
        }
        Ok(e)
    }

    pub fn len(&self) -> usize {
        usize::from(self.pi) + usize::from(self.ei) + usize::from(self.lcb)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for Ensemble {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (on, name) in [(self.pi, "pi"), (self.ei, "ei"), (self.lcb, "lcb")] {
            if on {
                if !first {
                    f.write_str(",")?;
                }
                f.write_str(name)?;
                first = false;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Mode {
    Unconstrained,
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum InitialDesign {
    LatinHypercube,
    Uniform,
}

/// Every constant of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_init: usize,
    pub n_iter: usize,
    pub batch_size: usize,
    /// Improvement jitter on the standardized target scale.
    pub xi: f64,
    pub nu: f64,
    pub delta: f64,
    pub rho: f64,
    /// The engine overrides `demo.seed` every iteration.
    pub demo: DemoConfig,
    pub seed: u64,
    pub mode: Mode,
    pub ensemble: Ensemble,
    pub gp_restarts: usize,
    pub initial_design: InitialDesign,
    /// Optional hard cap on evaluator calls; the last batch is shortened to fit.
    pub max_evaluations: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_init: 20,
            n_iter: 16,
            batch_size: 5,
            xi: DEFAULT_XI,
            nu: DEFAULT_NU,
            delta: DEFAULT_DELTA,
            rho: DEFAULT_RHO,
            demo: DemoConfig::default(),
            seed: 0,
            mode: Mode::Unconstrained,
            ensemble: Ensemble::ALL,
            gp_restarts: DEFAULT_RESTARTS,
            initial_design: InitialDesign::LatinHypercube,
            max_evaluations: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size < 1 {
            return fail(format!("batch_size must be >= 1, got {}", self.batch_size));
        }
        if self.n_init < 2 {
            return fail(format!("n_init must be >= 2, got {}", self.n_init));
        }
        if self.ensemble.is_empty() {
            return fail("ensemble must not be empty".into());
        }
        if !(self.rho >= 0.0) {
            return fail(format!("rho must be >= 0, got {}", self.rho));
        }
        if !(self.xi >= 0.0) || !(self.nu > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!(
                "need xi >= 0, nu > 0 and 0 < delta < 1, got {}, {}, {}",
                self.xi, self.nu, self.delta
            ));
        }
        if self.gp_restarts < 1 {
            return fail("gp_restarts must be >= 1".into());
        }
        if let Some(cap) = self.max_evaluations {
            if cap < self.n_init {
                return fail(format!("max_evaluations ({cap}) is below n_init ({})", self.n_init));
            }
        }
        self.demo.validate()
    }

    /// Evaluator calls a run makes (faults included).
    pub fn total_evaluations(&self) -> usize {
        let planned = self.n_init + self.n_iter * self.batch_size;
        self.max_evaluations.map_or(planned, |cap| planned.min(cap))
    }

    /// Context in objective units; `target_scale` converts `xi` from the
    /// standardized scale the objective model was fitted on.
    fn context(&self, tau: f64, t: usize, dim: usize, target_scale: f64) -> AcqContext {
        AcqContext {
            tau,
            xi: self.xi * target_scale,
            t,
            d: dim,
            nu: self.nu,
            delta: self.delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Stage {
    Initial,
    Unconstrained,
    /// Hunting for the first feasible point.
    Stage1,
    /// Optimizing under the feasibility-aware ensemble.
    Stage2,
    Random,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Initial => "initial",
            Stage::Unconstrained => "unconstrained",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Random => "random",
        }
    }
}

/// Whether a constrained run is still looking for its first feasible point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Seeking,
    Optimizing,
}

impl Phase {
    pub fn of(dataset: &Dataset) -> Self {
        if dataset.any_feasible() {
            Phase::Optimizing
        } else {
            Phase::Seeking
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Provenance {
    Initial,
    ParetoSample,
    FallbackRandom,
    Random,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Initial => "initial",
            Provenance::ParetoSample => "pareto-sample",
            Provenance::FallbackRandom => "fallback-random",
            Provenance::Random => "random",
        }
    }
}

/// Points chosen for one round of concurrent evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchProposal {
    pub points: Vec<Vec<f64>>,
    pub provenance: Vec<Provenance>,
    /// Index into the source Pareto set for `ParetoSample` points.
    pub source: Vec<Option<usize>>,
    pub stage: Stage,
}

/// Draws `b` distinct members of `pareto` uniformly without replacement,
/// topping up with uniform random points when the set is too small.
pub fn sample_batch<R: Rng + ?Sized>(pareto: &ParetoSet, b: usize, stage: Stage, rng: &mut R) -> Result<BatchProposal> {
    if pareto.is_empty() {
        return Err(Error::InvalidArgument("cannot sample from an empty Pareto set".into()));
    }
    let dim = pareto.points[0].len();
    let mut distinct: Vec<usize> = Vec::new();
    for (i, p) in pareto.points.iter().enumerate() {
        let duplicate = distinct.iter().any(|&j| {
            pareto.points[j]
                .iter()
                .zip(p)
                .all(|(a, c)| (a - c).abs() <= DEDUP_TOLERANCE)
        });
        if !duplicate {
            distinct.push(i);
        }
    }
    let take = b.min(distinct.len());
    let chosen = rand::seq::index::sample(rng, distinct.len(), take);
    let mut proposal = BatchProposal {
        points: Vec::with_capacity(b),
        provenance: Vec::with_capacity(b),
        source: Vec::with_capacity(b),
        stage,
    };
    for k in chosen.iter() {
        let i = distinct[k];
        proposal.points.push(pareto.points[i].clone());
        proposal.provenance.push(Provenance::ParetoSample);
        proposal.source.push(Some(i));
    }
    for _ in take..b {
        proposal.points.push(uniform_point(dim, rng));
        proposal.provenance.push(Provenance::FallbackRandom);
        proposal.source.push(None);
    }
    Ok(proposal)
}

fn constraint_posteriors(models: &[GpModel], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    models.iter().map(|m| m.predict_unchecked(x)).unzip()
}

fn push_ensemble(out: &mut Vec<f64>, mean: f64, sd: f64, ctx: &AcqContext, beta: f64, ensemble: Ensemble) {
    if ensemble.lcb {
        out.push(lcb(mean, sd, beta));
    }
    if ensemble.pi {
        out.push(-pi(mean, sd, ctx));
    }
    if ensemble.ei {
        out.push(-ei(mean, sd, ctx));
    }
}

/// `x -> (LCB, -PI, -EI)` restricted to `ensemble`.
pub fn build_unconstrained_objectives<'a>(
    model: &'a GpModel,
    ctx: &AcqContext,
    ensemble: Ensemble,
) -> impl Fn(&[f64]) -> Vec<f64> + 'a {
    let ctx = *ctx;
    let beta = beta_schedule(&ctx);
    move |x: &[f64]| {
        let (mean, sd) = model.predict_unchecked(x);
        let mut out = Vec::with_capacity(3);
        push_ensemble(&mut out, mean, sd, &ctx, beta, ensemble);
        out
    }
}

/// `x -> (-PF, naive violation, adaptive violation)`.
pub fn build_stage1_objectives(
    constraint_models: &[GpModel],
    phase: Phase,
) -> Result<impl Fn(&[f64]) -> Vec<f64> + '_> {
    if phase == Phase::Optimizing {
        return Err(Error::State(
            "feasibility hunt requested but a feasible point exists".into(),
        ));
    }
    if constraint_models.is_empty() {
        return Err(Error::InvalidArgument(
            "feasibility hunt needs at least one constraint".into(),
        ));
    }
    Ok(move |x: &[f64]| {
        let (means, sds) = constraint_posteriors(constraint_models, x);
        vec![
            -pf(&means, &sds).unwrap_or(0.0),
            naive_violation(&means),
            adaptive_violation(&means, &sds).unwrap_or(f64::INFINITY),
        ]
    })
}

fn stage2_objectives<'a>(
    objective_model: &'a GpModel,
    constraint_models: &'a [GpModel],
    ctx: &AcqContext,
    ensemble: Ensemble,
) -> impl Fn(&[f64]) -> Vec<f64> + 'a {
    let ctx = *ctx;
    let beta = beta_schedule(&ctx);
    move |x: &[f64]| {
        let (mean, sd) = objective_model.predict_unchecked(x);
        let (means, sds) = constraint_posteriors(constraint_models, x);
        let mut out = Vec::with_capacity(6);
        push_ensemble(&mut out, mean, sd, &ctx, beta, ensemble);
        out.push(-pf(&means, &sds).unwrap_or(0.0));
        out.push(naive_violation(&means));
        out.push(adaptive_violation(&means, &sds).unwrap_or(f64::INFINITY));
        out
    }
}

/// `x -> (LCB, -PI, -EI, -PF, naive violation, adaptive violation)`, the
/// first three restricted to `ensemble`.
pub fn build_stage2_objectives<'a>(
    objective_model: &'a GpModel,
    constraint_models: &'a [GpModel],
    ctx: &AcqContext,
    ensemble: Ensemble,
    phase: Phase,
) -> Result<impl Fn(&[f64]) -> Vec<f64> + 'a> {
    if constraint_models.is_empty() {
        return Err(Error::InvalidArgument(
            "constrained ensemble needs at least one constraint".into(),
        ));
    }
    if phase == Phase::Seeking {
        return Err(Error::State("no feasible observation to define the incumbent".into()));
    }
    Ok(stage2_objectives(objective_model, constraint_models, ctx, ensemble))
}

/// Outcome of candidate pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub set: ParetoSet,
    /// Indices of `set` members in the unpruned input.
    pub kept: Vec<usize>,
    /// Every member exceeded `rho`, so the input was returned unchanged.
    pub fallback: bool,
}

/// Keeps the members whose adaptive violation is at most `rho`; returns the
/// input unchanged (flagged) if that would leave nothing.
pub fn prune_candidates(pareto: &ParetoSet, constraint_models: &[GpModel], rho: f64) -> Pruned {
    let kept: Vec<usize> = pareto
        .points
        .iter()
        .enumerate()
        .filter(|(_, x)| {
            let (means, sds) = constraint_posteriors(constraint_models, x);
            adaptive_violation(&means, &sds).is_ok_and(|v| v <= rho)
        })
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        return Pruned {
            set: pareto.clone(),
            kept: (0..pareto.len()).collect(),
            fallback: true,
        };
    }
    Pruned {
        set: pareto.subset(&kept),
        kept,
        fallback: false,
    }
}

/// Best observation so far: feasible beats infeasible, then lower objective
/// (feasible) or lower total violation (infeasible), then earlier.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub point: Vec<f64>,
    pub value: f64,
    pub feasible: bool,
    /// `sum_i max(0, c_i)` of the incumbent.
    pub violation: f64,
    /// 1-based position among all evaluator calls.
    pub eval_index: usize,
}

impl Incumbent {
    pub fn is_better_than(&self, other: &Incumbent) -> bool {
        match (self.feasible, other.feasible) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.value < other.value,
            (false, false) => {
                self.violation < other.violation || (self.violation == other.violation && self.value < other.value)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub constraints: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    NonFinite,
    Timeout,
    Exited,
    Protocol,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub kind: FaultKind,
    pub detail: String,
}

impl Fault {
    pub fn new(kind: FaultKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outcome: core::result::Result<Observation, Fault>,
    pub wall_ms: f64,
}

/// Evaluates a batch of unit-cube points. Implementations may run the points
/// concurrently but must return one result per point, in order.
pub trait Evaluator {
    fn evaluate_batch(&mut self, points: &[Vec<f64>]) -> Vec<Evaluation>;
}

/// Sequential evaluator over a built-in problem.
pub struct ProblemEvaluator<'p> {
    problem: &'p Problem,
}

impl<'p> ProblemEvaluator<'p> {
    pub fn new(problem: &'p Problem) -> Self {
        Self { problem }
    }
}

impl Evaluator for ProblemEvaluator<'_> {
    fn evaluate_batch(&mut self, points: &[Vec<f64>]) -> Vec<Evaluation> {
        points
            .iter()
            .map(|x| Evaluation {
                outcome: self
                    .problem
                    .evaluate(x)
                    .map(|(y, constraints)| Observation { y, constraints })
                    .map_err(|e| Fault::new(FaultKind::NonFinite, format!("{e}"))),
                wall_ms: 0.0,
            })
            .collect()
    }
}

/// One evaluator call.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    /// 0 for the initial design.
    pub iteration: usize,
    /// 0-based position among all evaluator calls.
    pub eval_index: usize,
    pub point: Vec<f64>,
    pub y: Option<f64>,
    pub constraints: Vec<f64>,
    pub feasible: bool,
    pub provenance: Provenance,
    pub fault: Option<Fault>,
    /// Incumbent objective value after this row.
    pub incumbent: Option<f64>,
    pub wall_ms: f64,
}

/// A proposed point with the acquisition vector it was selected under.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalLog {
    pub point: Vec<f64>,
    pub provenance: Provenance,
    pub objectives: Option<Vec<f64>>,
    /// Confidence-scaled violation under the iteration's constraint models.
    pub adaptive_violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub stage: Stage,
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub pareto_size: usize,
    pub candidates: usize,
    pub pruning_fallback: bool,
    pub proposals: Vec<ProposalLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub shape: ProblemShape,
    pub rows: Vec<EvalRow>,
    pub iterations: Vec<IterationLog>,
    pub incumbent: Option<Incumbent>,
    /// 1-based evaluation count at which the first feasible point appeared.
    pub first_feasible_eval: Option<usize>,
}

impl RunRecord {
    pub fn faults(&self) -> usize {
        self.rows.iter().filter(|r| r.fault.is_some()).count()
    }

    pub fn best_value(&self) -> Option<f64> {
        self.incumbent.as_ref().map(|i| i.value)
    }

    pub fn is_feasible(&self) -> bool {
        self.incumbent.as_ref().is_some_and(|i| i.feasible)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Strategy {
    Unconstrained,
    TwoStage,
    OneStage,
    Random,
}

struct Runner<'e, E: Evaluator> {
    shape: ProblemShape,
    config: RunConfig,
    evaluator: &'e mut E,
    rng: ChaCha8Rng,
    dataset: Dataset,
    record: RunRecord,
    budget: usize,
}

impl<'e, E: Evaluator> Runner<'e, E> {
    fn new(shape: ProblemShape, config: &RunConfig, evaluator: &'e mut E) -> Result<Self> {
        config.validate()?;
        if shape.dim == 0 {
            return Err(Error::InvalidArgument("problem dimension must be positive".into()));
        }
        Ok(Self {
            shape,
            config: config.clone(),
            evaluator,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            dataset: Dataset::new(Bounds::unit(shape.dim), shape.n_constraints),
            record: RunRecord {
                shape,
                rows: Vec::new(),
                iterations: Vec::new(),
                incumbent: None,
                first_feasible_eval: None,
            },
            budget: config.total_evaluations(),
        })
    }

    fn remaining(&self) -> usize {
        self.budget - self.record.rows.len()
    }

    fn evaluate(&mut self, iteration: usize, points: &[Vec<f64>], provenance: &[Provenance]) {
        let mut results = self.evaluator.evaluate_batch(points);
        results.truncate(points.len());
        while results.len() < points.len() {
            results.push(Evaluation {
                outcome: Err(Fault::new(FaultKind::Other, "evaluator returned no result")),
                wall_ms: 0.0,
            });
        }
        for ((x, prov), result) in points.iter().zip(provenance).zip(results) {
            let eval_index = self.record.rows.len();
            let checked = result.outcome.and_then(|obs| {
                if !obs.y.is_finite() {
                    Err(Fault::new(FaultKind::NonFinite, format!("objective {}", obs.y)))
                } else if obs.constraints.len() != self.shape.n_constraints {
                    Err(Fault::new(
                        FaultKind::Protocol,
                        format!(
                            "expected {} constraint values, got {}",
                            self.shape.n_constraints,
                            obs.constraints.len()
                        ),
                    ))
                } else if obs.constraints.iter().any(|c| !c.is_finite()) {
                    Err(Fault::new(FaultKind::NonFinite, "non-finite constraint value"))
                } else {
                    Ok(obs)
                }
            });
            let mut row = EvalRow {
                iteration,
                eval_index,
                point: x.clone(),
                y: None,
                constraints: Vec::new(),
                feasible: false,
                provenance: *prov,
                fault: None,
                incumbent: None,
                wall_ms: result.wall_ms,
            };
            match checked {
                Ok(obs) => {
                    let feasible = obs.constraints.iter().all(|c| *c < 0.0);
                    let candidate = Incumbent {
                        point: x.clone(),
                        value: obs.y,
                        feasible,
                        violation: naive_violation(&obs.constraints),
                        eval_index: eval_index + 1,
                    };
                    if self
                        .record
                        .incumbent
                        .as_ref()
                        .is_none_or(|inc| candidate.is_better_than(inc))
                    {
                        self.record.incumbent = Some(candidate);
                    }
                    if feasible && self.record.first_feasible_eval.is_none() {
                        self.record.first_feasible_eval = Some(eval_index + 1);
                    }
                    row.y = Some(obs.y);
                    row.feasible = feasible;
                    // out-of-cube points never reach here: proposals live in [0,1]^d
                    let _ = self.dataset.push(x.clone(), obs.y, obs.constraints.clone());
                    row.constraints = obs.constraints;
                }
                Err(fault) => row.fault = Some(fault),
            }
            row.incumbent = self.record.incumbent.as_ref().map(|i| i.value);
            self.record.rows.push(row);
        }
    }

    fn initial_design(&mut self, strategy: Strategy) {
        let n = self.config.n_init.min(self.budget);
        let (points, prov) = if strategy == Strategy::Random {
            (uniform(n, self.shape.dim, &mut self.rng), Provenance::Random)
        } else {
            let pts = match self.config.initial_design {
                InitialDesign::LatinHypercube => latin_hypercube(n, self.shape.dim, &mut self.rng),
                InitialDesign::Uniform => uniform(n, self.shape.dim, &mut self.rng),
            };
            (pts, Provenance::Initial)
        };
        self.evaluate(0, &points, &vec![prov; n]);
    }

    fn fit_constraints(&self, seed: u64) -> Result<Vec<GpModel>> {
        (0..self.shape.n_constraints)
            .map(|i| {
                fit_gp_to(
                    self.dataset.points(),
                    &self.dataset.constraint_column(i),
                    self.config.gp_restarts,
                    seed.wrapping_add(1 + i as u64),
                )
            })
            .collect()
    }

    fn random_batch(&mut self, b: usize, prov: Provenance, stage: Stage) -> (BatchProposal, IterationLog) {
        let points = uniform(b, self.shape.dim, &mut self.rng);
        let proposal = BatchProposal {
            provenance: vec![prov; b],
            source: vec![None; b],
            points,
            stage,
        };
        let log = IterationLog {
            iteration: 0,
            stage,
            tau: None,
            beta: None,
            pareto_size: 0,
            candidates: 0,
            pruning_fallback: false,
            proposals: Vec::new(),
        };
        (proposal, log)
    }

    fn propose(&mut self, t: usize, b: usize, strategy: Strategy) -> Result<(BatchProposal, IterationLog)> {
        if strategy == Strategy::Random {
            return Ok(self.random_batch(b, Provenance::Random, Stage::Random));
        }
        let gp_seed = self.rng.next_u64();
        let demo_seed = self.rng.next_u64();
        let stage = match strategy {
            Strategy::Unconstrained => Stage::Unconstrained,
            Strategy::OneStage => Stage::Stage2,
            _ if Phase::of(&self.dataset) == Phase::Seeking => Stage::Stage1,
            _ => Stage::Stage2,
        };
        if self.dataset.len() < 2 {
            return Ok(self.random_batch(b, Provenance::FallbackRandom, stage));
        }
        let dim = self.shape.dim;
        let demo = DemoConfig {
            seed: demo_seed,
            ..self.config.demo.clone()
        };

        let objective_model = match stage {
            Stage::Stage1 => None,
            _ => Some(fit_gp(&self.dataset, self.config.gp_restarts, gp_seed)?),
        };
        let constraint_models = match stage {
            Stage::Unconstrained => Vec::new(),
            _ => self.fit_constraints(gp_seed)?,
        };
        let tau = match stage {
            Stage::Stage1 => None,
            Stage::Unconstrained => self.dataset.min_y(),
            _ => self.dataset.min_feasible_y().or(self.dataset.min_y()),
        };
        let target_scale = objective_model.as_ref().map_or(1.0, |m| m.standardization().scale);
        let ctx = tau.map(|tau| self.config.context(tau, t, dim, target_scale));

        let pareto = match (stage, &objective_model, &ctx) {
            (Stage::Stage1, _, _) => {
                let f = build_stage1_objectives(&constraint_models, Phase::Seeking)?;
                demo_optimize(f, dim, &demo)?
            }
            (Stage::Unconstrained, Some(model), Some(ctx)) => demo_optimize(
                build_unconstrained_objectives(model, ctx, self.config.ensemble),
                dim,
                &demo,
            )?,
            (_, Some(model), Some(ctx)) => demo_optimize(
                stage2_objectives(model, &constraint_models, ctx, self.config.ensemble),
                dim,
                &demo,
            )?,
            _ => return Err(Error::State("objective model missing outside stage 1".into())),
        };

        let (candidates, fallback) = if stage == Stage::Stage2 {
            let pruned = prune_candidates(&pareto, &constraint_models, self.config.rho);
            (pruned.set, pruned.fallback)
        } else {
            (pareto.clone(), false)
        };
        let proposal = sample_batch(&candidates, b, stage, &mut self.rng)?;
        let proposals = proposal
            .points
            .iter()
            .zip(&proposal.provenance)
            .zip(&proposal.source)
            .map(|((x, prov), src)| ProposalLog {
                point: x.clone(),
                provenance: *prov,
                objectives: src.map(|i| candidates.objectives[i].clone()),
                adaptive_violation: if constraint_models.is_empty() {
                    None
                } else {
                    let (m, s) = constraint_posteriors(&constraint_models, x);
                    adaptive_violation(&m, &s).ok()
                },
            })
            .collect();
        let log = IterationLog {
            iteration: t,
            stage,
            tau,
            beta: ctx.as_ref().map(beta_schedule),
            pareto_size: pareto.len(),
            candidates: candidates.len(),
            pruning_fallback: fallback,
            proposals,
        };
        Ok((proposal, log))
    }

    fn run(mut self, strategy: Strategy) -> Result<RunRecord> {
        self.initial_design(strategy);
        for t in 1..=self.config.n_iter {
            let b = self.config.batch_size.min(self.remaining());
            if b == 0 {
                break;
            }
            let (proposal, mut log) = match self.propose(t, b, strategy) {
                Ok(p) => p,
                // a surrogate that cannot be fitted should not end the run
                Err(Error::FitFailure(_)) | Err(Error::NumericalSingularity { .. }) => {
                    self.random_batch(b, Provenance::FallbackRandom, Stage::Initial)
                }
                Err(e) => return Err(e),
            };
            log.iteration = t;
            if log.proposals.is_empty() {
                log.proposals = proposal
                    .points
                    .iter()
                    .zip(&proposal.provenance)
                    .map(|(x, p)| ProposalLog {
                        point: x.clone(),
                        provenance: *p,
                        objectives: None,
                        adaptive_violation: None,
                    })
                    .collect();
            }
            self.record.iterations.push(log);
            self.evaluate(t, &proposal.points, &proposal.provenance);
        }
        Ok(self.record)
    }
}

/// Batch BO over the `(LCB, -PI, -EI)` ensemble (or the configured subset).
pub fn run_unconstrained<E: Evaluator>(
    shape: ProblemShape,
    config: &RunConfig,
    evaluator: &mut E,
) -> Result<RunRecord> {
    Runner::new(shape, config, evaluator)?.run(Strategy::Unconstrained)
}

/// Two-stage constrained batch BO.
pub fn run_constrained<E: Evaluator>(shape: ProblemShape, config: &RunConfig, evaluator: &mut E) -> Result<RunRecord> {
    require_constraints(shape)?;
    Runner::new(shape, config, evaluator)?.run(Strategy::TwoStage)
}

/// Constrained ablation that always uses the six-objective ensemble with
/// pruning; before any feasible point exists the incumbent is the lowest
/// observed objective.
pub fn run_one_stage<E: Evaluator>(shape: ProblemShape, config: &RunConfig, evaluator: &mut E) -> Result<RunRecord> {
    require_constraints(shape)?;
    Runner::new(shape, config, evaluator)?.run(Strategy::OneStage)
}

/// Uniform random search with the same budget and batch structure.
pub fn run_random<E: Evaluator>(shape: ProblemShape, config: &RunConfig, evaluator: &mut E) -> Result<RunRecord> {
    Runner::new(shape, config, evaluator)?.run(Strategy::Random)
}

fn require_constraints(shape: ProblemShape) -> Result<()> {
    if shape.n_constraints == 0 {
        return Err(Error::InvalidArgument(
            "constrained mode needs at least one constraint".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelHyperParams;
    use crate::problems::builtin;

    fn toy_model(points: &[Vec<f64>], y: &[f64]) -> GpModel {
        let h = KernelHyperParams::isotropic(1.0, 0.01, 0.2, points[0].len()).unwrap();
        GpModel::with_hyperparams(points, y, h).unwrap()
    }

    fn quick_config() -> RunConfig {
        RunConfig {
            n_init: 6,
            n_iter: 3,
            batch_size: 3,
            gp_restarts: 2,
            demo: DemoConfig {
                population_size: 20,
                max_evaluations: 200,
                ..DemoConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn ensemble_parsing() {
        assert_eq!(Ensemble::parse("pi,ei,lcb").unwrap(), Ensemble::ALL);
        let e = Ensemble::parse("EI, lcb").unwrap();
        assert_eq!((e.pi, e.ei, e.lcb), (false, true, true));
        assert_eq!(alloc::string::ToString::to_string(&e), "ei,lcb");
        assert!(Ensemble::parse("").is_err());
        assert!(Ensemble::parse("ucb").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig {
            batch_size: 0,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            n_init: 1,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            rho: -1.0,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
        assert_eq!(RunConfig::default().total_evaluations(), 100);
        let capped = RunConfig {
            batch_size: 15,
            n_iter: 6,
            max_evaluations: Some(100),
            ..RunConfig::default()
        };
        assert_eq!(capped.total_evaluations(), 100);
    }

    #[test]
    fn sample_batch_distinct_members() {
        let set = ParetoSet {
            points: (0..50).map(|i| vec![i as f64 / 50.0]).collect(),
            objectives: (0..50).map(|i| vec![i as f64, -(i as f64)]).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&set, 5, Stage::Unconstrained, &mut rng).unwrap();
        assert_eq!(b.points.len(), 5);
        assert!(b.provenance.iter().all(|p| *p == Provenance::ParetoSample));
        for (i, p) in b.points.iter().enumerate() {
            assert!(set.points.contains(p));
            for q in &b.points[i + 1..] {
                assert_ne!(p, q);
            }
        }
        let mut again = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_batch(&set, 5, Stage::Unconstrained, &mut again).unwrap(), b);
    }

    #[test]
    fn sample_batch_tops_up_with_random_points() {
        let set = ParetoSet {
            points: vec![vec![0.1], vec![0.2], vec![0.3], vec![0.3 + 1e-12]],
            objectives: vec![vec![1.0], vec![1.0], vec![1.0], vec![1.0]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = sample_batch(&set, 5, Stage::Stage1, &mut rng).unwrap();
        let pareto = b.provenance.iter().filter(|p| **p == Provenance::ParetoSample).count();
        assert_eq!(pareto, 3);
        assert_eq!(b.points.len(), 5);
        assert_eq!(b.stage, Stage::Stage1);
        let empty = ParetoSet {
            points: vec![],
            objectives: vec![],
        };
        assert!(sample_batch(&empty, 1, Stage::Stage1, &mut rng).is_err());
    }

    #[test]
    fn unconstrained_vector_at_exact_observation() {
        let points = vec![vec![0.2], vec![0.5], vec![0.9]];
        let h = KernelHyperParams::isotropic(1.0, 1e-6, 0.2, 1).unwrap();
        let model = GpModel::with_hyperparams(&points, &[1.0, 0.0, 2.0], h).unwrap();
        let (mean, sd) = model.predict(&[0.5]).unwrap();
        let ctx = AcqContext::new(mean, 1, 1);
        let f = build_unconstrained_objectives(&model, &ctx, Ensemble::ALL);
        let v = f(&[0.5]);
        assert!(sd < 1e-2);
        assert_eq!(v[0], lcb(mean, sd, beta_schedule(&ctx)));
        assert!(v[1] > -1e-3 && v[1] <= 0.0, "{v:?}");
        assert!(v[2] > -1e-3 && v[2] <= 0.0, "{v:?}");
    }

    #[test]
    fn composition_identity() {
        let points = vec![vec![0.1, 0.3], vec![0.5, 0.8], vec![0.9, 0.2], vec![0.4, 0.4]];
        let obj = toy_model(&points, &[1.0, -0.5, 0.3, 0.0]);
        let cons = vec![
            toy_model(&points, &[0.2, -0.3, 0.5, -0.1]),
            toy_model(&points, &[-1.0, 0.4, -0.2, 0.1]),
        ];
        let ctx = AcqContext::new(-0.5, 3, 2);
        let beta = beta_schedule(&ctx);
        let x = [0.33, 0.61];
        let (m, s) = obj.predict(&x).unwrap();
        let cm: Vec<f64> = cons.iter().map(|c| c.predict(&x).unwrap().0).collect();
        let cs: Vec<f64> = cons.iter().map(|c| c.predict(&x).unwrap().1).collect();

        let v = build_unconstrained_objectives(&obj, &ctx, Ensemble::ALL)(&x);
        assert_eq!(v, vec![lcb(m, s, beta), -pi(m, s, &ctx), -ei(m, s, &ctx)]);

        let v1 = build_stage1_objectives(&cons, Phase::Seeking).unwrap()(&x);
        assert_eq!(
            v1,
            vec![
                -pf(&cm, &cs).unwrap(),
                naive_violation(&cm),
                adaptive_violation(&cm, &cs).unwrap()
            ]
        );

        let v2 = build_stage2_objectives(&obj, &cons, &ctx, Ensemble::ALL, Phase::Optimizing).unwrap()(&x);
        assert_eq!(v2[..3], v[..]);
        assert_eq!(v2[3..], v1[..]);

        let pi_ei = Ensemble::parse("pi,ei").unwrap();
        assert_eq!(
            build_unconstrained_objectives(&obj, &ctx, pi_ei)(&x),
            vec![-pi(m, s, &ctx), -ei(m, s, &ctx)]
        );
    }

    #[test]
    fn stage_builders_check_state() {
        let points = vec![vec![0.1], vec![0.6]];
        let m = toy_model(&points, &[0.0, 1.0]);
        let ctx = AcqContext::new(0.0, 1, 1);
        assert!(matches!(
            build_stage1_objectives(std::slice::from_ref(&m), Phase::Optimizing),
            Err(Error::State(_))
        ));
        assert!(matches!(
            build_stage1_objectives(&[], Phase::Seeking),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_stage2_objectives(&m, &[], &ctx, Ensemble::ALL, Phase::Optimizing),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_stage2_objectives(&m, std::slice::from_ref(&m), &ctx, Ensemble::ALL, Phase::Seeking),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn deep_feasible_beats_violating_point() {
        let points = vec![vec![0.1], vec![0.3], vec![0.7], vec![0.9]];
        let h = KernelHyperParams::isotropic(1.0, 1e-3, 0.15, 1).unwrap();
        let con = GpModel::with_hyperparams(&points, &[-10.0, -10.0, 5.0, 5.0], h).unwrap();
        let f = build_stage1_objectives(core::slice::from_ref(&con), Phase::Seeking).unwrap();
        let good = f(&[0.2]);
        let bad = f(&[0.8]);
        assert!(
            (good[0] + 1.0).abs() < 1e-5 && good[1] == 0.0 && good[2] == 0.0,
            "{good:?}"
        );
        assert!(crate::moo::dominates(&good, &bad).unwrap());
    }

    #[test]
    fn pruning_contract() {
        let points = vec![vec![0.1], vec![0.5], vec![0.9]];
        let h = KernelHyperParams::isotropic(1.0, 1e-4, 0.1, 1).unwrap();
        let con = GpModel::with_hyperparams(&points, &[-1.0, 1.0, -1.0], h).unwrap();
        let set = ParetoSet {
            points: vec![vec![0.1], vec![0.5], vec![0.9]],
            objectives: vec![vec![0.0], vec![1.0], vec![2.0]],
        };
        let pruned = prune_candidates(&set, core::slice::from_ref(&con), 0.05);
        assert!(!pruned.fallback);
        assert_eq!(pruned.kept, vec![0, 2]);
        let only_bad = set.subset(&[1]);
        let pruned = prune_candidates(&only_bad, core::slice::from_ref(&con), 0.05);
        assert!(pruned.fallback);
        assert_eq!(pruned.set, only_bad);
    }

    #[test]
    fn incumbent_ordering() {
        let inc = |value, feasible, violation, eval_index| Incumbent {
            point: vec![],
            value,
            feasible,
            violation,
            eval_index,
        };
        assert!(inc(10.0, true, 0.0, 2).is_better_than(&inc(-5.0, false, 0.1, 1)));
        assert!(inc(1.0, true, 0.0, 2).is_better_than(&inc(2.0, true, 0.0, 1)));
        assert!(!inc(1.0, true, 0.0, 2).is_better_than(&inc(1.0, true, 0.0, 1)));
        assert!(inc(9.0, false, 0.1, 2).is_better_than(&inc(1.0, false, 0.2, 1)));
    }

    #[test]
    fn zero_iterations_returns_initial_best() {
        let p = builtin("branin").unwrap();
        let cfg = RunConfig {
            n_iter: 0,
            ..quick_config()
        };
        let rec = run_unconstrained(p.shape(), &cfg, &mut ProblemEvaluator::new(&p)).unwrap();
        assert_eq!(rec.rows.len(), 6);
        let best = rec.rows.iter().filter_map(|r| r.y).fold(f64::INFINITY, f64::min);
        assert_eq!(rec.best_value(), Some(best));
        assert!(rec.iterations.is_empty());
    }

    #[test]
    fn budget_and_monotone_incumbent() {
        let p = builtin("branin").unwrap();
        let cfg = quick_config();
        let rec = run_unconstrained(p.shape(), &cfg, &mut ProblemEvaluator::new(&p)).unwrap();
        assert_eq!(rec.rows.len(), 6 + 3 * 3);
        let trace: Vec<f64> = rec.rows.iter().filter_map(|r| r.incumbent).collect();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn constrained_mode_requires_constraints() {
        let p = builtin("branin").unwrap();
        let err = run_constrained(p.shape(), &quick_config(), &mut ProblemEvaluator::new(&p));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    struct Flaky<'p> {
        inner: ProblemEvaluator<'p>,
        calls: usize,
    }

    impl Evaluator for Flaky<'_> {
        fn evaluate_batch(&mut self, points: &[Vec<f64>]) -> Vec<Evaluation> {
            let mut out = self.inner.evaluate_batch(points);
            for e in out.iter_mut() {
                self.calls += 1;
                if self.calls.is_multiple_of(4) {
                    e.outcome = Ok(Observation {
                        y: f64::NAN,
                        constraints: vec![],
                    });
                }
            }
            out
        }
    }

    #[test]
    fn faults_are_recorded_and_skipped() {
        let p = builtin("branin").unwrap();
        let cfg = quick_config();
        let mut ev = Flaky {
            inner: ProblemEvaluator::new(&p),
            calls: 0,
        };
        let rec = run_unconstrained(p.shape(), &cfg, &mut ev).unwrap();
        assert_eq!(rec.rows.len(), cfg.total_evaluations());
        assert_eq!(rec.faults(), cfg.total_evaluations() / 4);
        assert!(rec.rows.iter().filter(|r| r.fault.is_some()).all(|r| r.y.is_none()));
    }
}

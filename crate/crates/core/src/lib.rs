//! Batch Bayesian optimization by sampling from the Pareto front of an
//! acquisition-function ensemble.
//!
//! Each outer iteration fits Gaussian-process surrogates to everything
//! observed so far, runs a multi-objective differential evolution over the
//! vector `(LCB, -PI, -EI)` and draws `B` distinct members of the resulting
//! Pareto set for concurrent evaluation. Constrained problems are solved in
//! two stages: the engine first hunts for a feasible design using the
//! probability of feasibility together with two constraint-violation
//! measures, then optimizes the six-objective ensemble and prunes candidates
//! whose confidence-scaled violation exceeds `rho`.
//!
//! The crate is `no_std` (with `alloc`); evaluation of the black box is
//! delegated to an [`Evaluator`](engine::Evaluator) so that process spawning,
//! threading and file IO live in the companion `mace` crate.
//!
//! ```
//! use mace_core::engine::{run_unconstrained, ProblemEvaluator, RunConfig};
//! use mace_core::problems::builtin;
//!
//! let problem = builtin("branin").unwrap();
//! let mut config = RunConfig::default();
//! config.n_init = 6;
//! config.n_iter = 2;
//! config.batch_size = 2;
//! config.gp_restarts = 2;
//! config.demo.population_size = 20;
//! config.demo.max_evaluations = 200;
//! let mut evaluator = ProblemEvaluator::new(&problem);
//! let record = run_unconstrained(problem.shape(), &config, &mut evaluator).unwrap();
//! assert_eq!(record.rows.len(), 10);
//! ```
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod acquisition;
pub mod design;
pub mod engine;
mod error;
pub mod gp;
mod linalg;
pub mod moo;
mod optim;
pub mod problems;

pub use error::{Error, Result};

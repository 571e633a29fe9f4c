//! Analytic benchmark problems and weighted figure-of-merit composition.
//!
//! Feasibility is `c(x) < 0` for every constraint; a value of exactly zero
//! counts as infeasible.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::design::Bounds;
use crate::engine::ProblemShape;
use crate::{Error, Result};

/// A scalar function of a point in original (box) coordinates.
pub type Metric = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub const BUILTIN_NAMES: [&str; 6] = [
    "branin",
    "hartmann6",
    "sphere10",
    "ring-constrained-2d",
    "constrained-branin",
    "amp-mimic-10d",
];

pub const BRANIN_OPTIMUM: f64 = 0.397_887_357_729_738;
pub const HARTMANN6_OPTIMUM: f64 = -3.322_368_011_415_515;

/// Centre and squared radius of the feasible disc of `ring-constrained-2d`
/// (area 1% of the unit square).
pub const RING_CENTER: [f64; 2] = [0.7, 0.3];
pub const RING_RADIUS_SQ: f64 = 0.01 / PI;

pub struct Problem {
    pub name: String,
    pub bounds: Bounds,
    pub objective: Metric,
    pub constraints: Vec<Metric>,
    /// Global minimum of the objective ignoring constraints, when known.
    pub known_optimum: Option<f64>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .field("n_constraints", &self.constraints.len())
            .field("known_optimum", &self.known_optimum)
            .finish()
    }
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn shape(&self) -> ProblemShape {
        ProblemShape {
            dim: self.dim(),
            n_constraints: self.n_constraints(),
        }
    }

    /// Evaluates objective and constraints at a unit-cube point.
    pub fn evaluate(&self, x_unit: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x_unit.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "point has dimension {}, problem `{}` has {}",
                x_unit.len(),
                self.name,
                self.dim()
            )));
        }
        let x = self.bounds.denormalize(x_unit);
        let y = (self.objective)(&x);
        if !y.is_finite() {
            return Err(Error::EvaluatorFault(format!("objective is {y} at {x:?}")));
        }
        let c: Vec<f64> = self.constraints.iter().map(|g| g(&x)).collect();
        if let Some(bad) = c.iter().find(|v| v.is_nan()) {
            return Err(Error::EvaluatorFault(format!("constraint is {bad} at {x:?}")));
        }
        Ok((y, c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

pub struct FomTerm {
    pub weight: f64,
    pub sense: Sense,
    pub metric: Metric,
}

/// Weighted sum of performance metrics.
pub struct FomSpec {
    terms: Vec<FomTerm>,
}

impl FomSpec {
    pub fn new(terms: Vec<FomTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument(
                "a figure of merit needs at least one metric".into(),
            ));
        }
        if let Some(t) = terms.iter().find(|t| !t.weight.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite weight {}", t.weight)));
        }
        Ok(Self { terms })
    }
}

/// `x -> sum_i alpha_i f_i(x)`; maximized metrics enter negated so the result
/// is always minimized.
pub fn fom_weighted_sum(spec: FomSpec) -> Metric {
    Box::new(move |x| {
        spec.terms
            .iter()
            .map(|t| {
                let v = (t.metric)(x);
                match t.sense {
                    Sense::Minimize => t.weight * v,
                    Sense::Maximize => -t.weight * v,
                }
            })
            .sum()
    })
}

pub fn branin_fn(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    let q = x2 - b * x1 * x1 + c * x1 - 6.0;
    q * q + 10.0 * (1.0 - t) * libm::cos(x1) + 10.0
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

pub fn hartmann6_fn(x: &[f64]) -> f64 {
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..6)
                .map(|j| HARTMANN_A[i][j] * (x[j] - HARTMANN_P[i][j]) * (x[j] - HARTMANN_P[i][j]))
                .sum();
            HARTMANN_ALPHA[i] * libm::exp(-inner)
        })
        .sum::<f64>()
}

/// Target point of `amp-mimic-10d`.
pub const AMP_TARGET: [f64; 10] = [0.32, 0.71, 0.45, 0.18, 0.63, 0.27, 0.84, 0.52, 0.39, 0.66];

fn amp_objective() -> Metric {
    let distance = FomTerm {
        weight: 1.0,
        sense: Sense::Minimize,
        metric: Box::new(|x: &[f64]| x.iter().zip(AMP_TARGET).map(|(v, a)| (v - a) * (v - a)).sum()),
    };
    let ripple = FomTerm {
        weight: 0.05,
        sense: Sense::Maximize,
        metric: Box::new(|x: &[f64]| {
            x.iter()
                .zip(AMP_TARGET)
                .map(|(v, a)| libm::cos(6.0 * PI * (v - a)))
                .sum()
        }),
    };
    let offset = FomTerm {
        weight: 0.5,
        sense: Sense::Minimize,
        metric: Box::new(|_: &[f64]| 1.0),
    };
    // Every coordinate contributes (v-a)^2 + 0.05 (1 - cos(6 pi (v-a))) >= 0.
    fom_weighted_sum(FomSpec::new(vec![distance, ripple, offset]).expect("static spec"))
}

/// Looks up a built-in problem by name.
pub fn builtin(name: &str) -> Result<Problem> {
    let problem = match name {
        "branin" => Problem {
            name: name.to_string(),
            bounds: Bounds::new(vec![-5.0, 0.0], vec![10.0, 15.0])?,
            objective: Box::new(branin_fn),
            constraints: Vec::new(),
            known_optimum: Some(BRANIN_OPTIMUM),
        },
        "hartmann6" => Problem {
            name: name.to_string(),
            bounds: Bounds::unit(6),
            objective: Box::new(hartmann6_fn),
            constraints: Vec::new(),
            known_optimum: Some(HARTMANN6_OPTIMUM),
        },
        "sphere10" => Problem {
            name: name.to_string(),
            bounds: Bounds::new(vec![-5.0; 10], vec![5.0; 10])?,
            objective: Box::new(|x: &[f64]| x.iter().map(|v| v * v).sum()),
            constraints: Vec::new(),
            known_optimum: Some(0.0),
        },
        "ring-constrained-2d" => Problem {
            name: name.to_string(),
            bounds: Bounds::unit(2),
            // unconstrained minimum sits outside the disc, so the constraint is active
            objective: Box::new(|x: &[f64]| {
                let (a, b) = (x[0] - 0.25, x[1] - 0.75);
                a * a + b * b + 0.05 * libm::sin(7.0 * x[0]) * libm::sin(5.0 * x[1]) + 0.05
            }),
            constraints: vec![Box::new(|x: &[f64]| {
                let (a, b) = (x[0] - RING_CENTER[0], x[1] - RING_CENTER[1]);
                a * a + b * b - RING_RADIUS_SQ
            })],
            known_optimum: None,
        },
        "constrained-branin" => {
            let bounds = Bounds::new(vec![-5.0, 0.0], vec![10.0, 15.0])?;
            let unit = bounds.clone();
            Problem {
                name: name.to_string(),
                bounds,
                objective: Box::new(branin_fn),
                constraints: vec![Box::new(move |x: &[f64]| {
                    let u = unit.normalize(x);
                    (u[0] - 0.5) * (u[0] - 0.5) + (u[1] - 0.5) * (u[1] - 0.5) - 0.25
                })],
                known_optimum: Some(BRANIN_OPTIMUM),
            }
        }
        "amp-mimic-10d" => Problem {
            name: name.to_string(),
            bounds: Bounds::unit(10),
            objective: amp_objective(),
            constraints: vec![
                // "gain" spec: the first five sizes must be large enough on average
                Box::new(|x: &[f64]| 0.55 - x[..5].iter().sum::<f64>() / 5.0),
                // "bandwidth" spec: coupled products of the remaining sizes
                Box::new(|x: &[f64]| 0.25 - (x[5] * x[6] + x[7] * x[8]) + 0.1 * (x[9] - 0.5) * (x[9] - 0.5)),
            ],
            known_optimum: Some(0.0),
        },
        _ => return Err(Error::NotFound(name.to_string())),
    };
    Ok(problem)
}

//! Pareto dominance and a DEMO-style multi-objective differential evolution
//! over the unit cube.
//!
//! All objectives are minimized. The optimizer keeps a DE/rand/1/bin
//! population in which a child replaces its parent when it dominates it, is
//! discarded when the parent dominates it, and otherwise joins the
//! population; after each generation the population is truncated back to
//! size by non-dominated sorting with crowding distance. Every evaluated point
//! also passes through a bounded external archive of non-dominated points.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::uniform_point;
use crate::{Error, Result};

pub const DEFAULT_POPULATION: usize = 100;
pub const DEFAULT_EVALUATIONS: usize = 2000;
pub const DEFAULT_ARCHIVE_CAPACITY: usize = 600;

/// Settings of the inner multi-objective search.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DemoConfig {
    pub population_size: usize,
    /// Objective calls after the initial population has been evaluated.
    pub max_evaluations: usize,
    pub scale_factor: f64,
    pub crossover_rate: f64,
    pub archive_capacity: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            population_size: DEFAULT_POPULATION,
            max_evaluations: DEFAULT_EVALUATIONS,
            scale_factor: 0.8,
            crossover_rate: 0.9,
            archive_capacity: DEFAULT_ARCHIVE_CAPACITY,
            seed: 0,
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 4 {
            return Err(Error::InvalidArgument(format!(
                "population_size must be at least 4, got {}",
                self.population_size
            )));
        }
        if self.max_evaluations < self.population_size {
            return Err(Error::InvalidArgument(format!(
                "max_evaluations ({}) must be at least population_size ({})",
                self.max_evaluations, self.population_size
            )));
        }
        if !(self.scale_factor > 0.0) || !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::InvalidArgument(format!(
                "need scale_factor > 0 and crossover_rate in [0,1], got {} and {}",
                self.scale_factor, self.crossover_rate
            )));
        }
        if self.archive_capacity < 1 {
            return Err(Error::InvalidArgument("archive_capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Mutually non-dominated points (unit cube) with their objective vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoSet {
    pub points: Vec<Vec<f64>>,
    pub objectives: Vec<Vec<f64>>,
}

impl ParetoSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            objectives: indices.iter().map(|&i| self.objectives[i].clone()).collect(),
        }
    }
}

#[inline]
pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if !(x <= y) {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// `a` dominates `b`: no worse everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "objective vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(dominates_unchecked(a, b))
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x + 0.0).total_cmp(&(y + 0.0)))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// Indices (ascending) of the vectors no other vector dominates.
///
/// Sorting lexicographically puts every dominator before the vectors it
/// dominates, so each candidate only needs checking against the front found
/// so far. Adding `0.0` folds `-0.0` into `+0.0` for the sort key.
pub fn pareto_front(objectives: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..objectives.len()).collect();
    order.sort_by(|&i, &j| lexicographic(&objectives[i], &objectives[j]).then(i.cmp(&j)));
    let mut front: Vec<usize> = Vec::new();
    for &i in &order {
        if !front
            .iter()
            .any(|&f| dominates_unchecked(&objectives[f], &objectives[i]))
        {
            front.push(i);
        }
    }
    front.sort_unstable();
    front
}

/// Fronts of the fast non-dominated sort, best first.
pub fn non_dominated_sort(objectives: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates_unchecked(&objectives[i], &objectives[j]) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates_unchecked(&objectives[j], &objectives[i]) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `members` (indices into `objectives`).
/// Boundary members get `+inf`.
pub fn crowding_distance(objectives: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let k = members.len();
    let mut dist = vec![0.0; k];
    if k <= 2 {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        return dist;
    }
    let m = objectives[members[0]].len();
    let mut order: Vec<usize> = (0..k).collect();
    for obj in 0..m {
        order.sort_by(|&a, &b| {
            objectives[members[a]][obj]
                .total_cmp(&objectives[members[b]][obj])
                .then(a.cmp(&b))
        });
        let lo = objectives[members[order[0]]][obj];
        let hi = objectives[members[order[k - 1]]][obj];
        dist[order[0]] = f64::INFINITY;
        dist[order[k - 1]] = f64::INFINITY;
        let span = hi - lo;
        if !(span > 0.0) || !span.is_finite() {
            continue;
        }
        for w in 1..k - 1 {
            let gap = objectives[members[order[w + 1]]][obj] - objectives[members[order[w - 1]]][obj];
            dist[order[w]] += gap / span;
        }
    }
    dist
}

/// Indices of the `keep` survivors chosen front by front, the last partial
/// front by decreasing crowding distance.
fn truncate(objectives: &[Vec<f64>], keep: usize) -> Vec<usize> {
    let mut survivors = Vec::with_capacity(keep);
    for front in non_dominated_sort(objectives) {
        if survivors.len() + front.len() <= keep {
            survivors.extend_from_slice(&front);
        } else {
            let dist = crowding_distance(objectives, &front);
            let mut order: Vec<usize> = (0..front.len()).collect();
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            survivors.extend(order.into_iter().take(keep - survivors.len()).map(|i| front[i]));
        }
        if survivors.len() == keep {
            break;
        }
    }
    survivors
}

/// Bounded external archive of mutually non-dominated evaluations.
struct Archive {
    capacity: usize,
    points: Vec<Vec<f64>>,
    objectives: Vec<Vec<f64>>,
}

impl Archive {
    fn new(capacity: usize) -> Self {
        Self {
            capacity,
            points: Vec::new(),
            objectives: Vec::new(),
        }
    }

    fn insert(&mut self, point: &[f64], objective: &[f64]) {
        let mut i = 0;
        while i < self.objectives.len() {
            let other = &self.objectives[i];
            if dominates_unchecked(other, objective) || (other == objective && self.points[i] == point) {
                return;
            }
            if dominates_unchecked(objective, other) {
                self.objectives.swap_remove(i);
                self.points.swap_remove(i);
            } else {
                i += 1;
            }
        }
        self.points.push(point.to_vec());
        self.objectives.push(objective.to_vec());
        if self.points.len() > self.capacity {
            let all: Vec<usize> = (0..self.objectives.len()).collect();
            let dist = crowding_distance(&self.objectives, &all);
            let worst = (0..dist.len())
                .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)))
                .unwrap_or(0);
            self.objectives.swap_remove(worst);
            self.points.swap_remove(worst);
        }
    }
}

struct Evaluations<'f, F> {
    f: &'f mut F,
    calls: usize,
}

impl<F: FnMut(&[f64]) -> Vec<f64>> Evaluations<'_, F> {
    fn eval(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.calls += 1;
        let v = (self.f)(x);
        if v.iter().any(|o| o.is_nan()) {
            return Err(Error::EvaluatorFault(format!("objective returned NaN at {x:?}")));
        }
        Ok(v)
    }
}

fn reflect(v: f64) -> f64 {
    let mut v = v;
    // a few reflections bring any DE step back; clamp guards pathological F
    for _ in 0..4 {
        if v < 0.0 {
            v = -v;
        } else if v > 1.0 {
            v = 2.0 - v;
        } else {
            return v;
        }
    }
    v.clamp(0.0, 1.0)
}

fn distinct_others<R: Rng>(rng: &mut R, n: usize, exclude: usize) -> [usize; 3] {
    let mut picked = [usize::MAX; 3];
    let mut k = 0;
    while k < 3 {
        let c = rng.gen_range(0..n);
        if c != exclude && !picked[..k].contains(&c) {
            picked[k] = c;
            k += 1;
        }
    }
    picked
}

/// Minimizes the vector-valued `objective` over `[0,1]^dim`.
///
/// The initial population (`population_size` calls) is followed by exactly
/// `max_evaluations` further calls. Returns the non-dominated members of the
/// final population and the external archive, without duplicate points.
pub fn demo_optimize<F>(mut objective: F, dim: usize, config: &DemoConfig) -> Result<ParetoSet>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    config.validate()?;
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let np = config.population_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut evals = Evaluations {
        f: &mut objective,
        calls: 0,
    };
    let mut archive = Archive::new(config.archive_capacity);

    let mut pop_x: Vec<Vec<f64>> = Vec::with_capacity(2 * np);
    let mut pop_f: Vec<Vec<f64>> = Vec::with_capacity(2 * np);
    for _ in 0..np {
        let x = uniform_point(dim, &mut rng);
        let f = evals.eval(&x)?;
        archive.insert(&x, &f);
        pop_x.push(x);
        pop_f.push(f);
    }
    let m = pop_f[0].len();
    if m == 0 {
        return Err(Error::InvalidArgument("objective returned an empty vector".into()));
    }

    let mut used = 0;
    while used < config.max_evaluations {
        let parents = pop_x.len().min(np);
        for i in 0..parents {
            if used == config.max_evaluations {
                break;
            }
            let [r1, r2, r3] = distinct_others(&mut rng, parents, i);
            let forced = rng.gen_range(0..dim);
            let child: Vec<f64> = (0..dim)
                .map(|k| {
                    if k == forced || rng.gen::<f64>() < config.crossover_rate {
                        reflect(pop_x[r1][k] + config.scale_factor * (pop_x[r2][k] - pop_x[r3][k]))
                    } else {
                        pop_x[i][k]
                    }
                })
                .collect();
            let child_f = evals.eval(&child)?;
            used += 1;
            if child_f.len() != m {
                return Err(Error::InvalidArgument(format!(
                    "objective returned {} values, expected {m}",
                    child_f.len()
                )));
            }
            archive.insert(&child, &child_f);
            if dominates_unchecked(&child_f, &pop_f[i]) {
                pop_x[i] = child;
                pop_f[i] = child_f;
            } else if !dominates_unchecked(&pop_f[i], &child_f) {
                pop_x.push(child);
                pop_f.push(child_f);
            }
        }
        if pop_x.len() > np {
            let keep = truncate(&pop_f, np);
            pop_x = keep.iter().map(|&i| pop_x[i].clone()).collect();
            pop_f = keep.iter().map(|&i| pop_f[i].clone()).collect();
        }
    }
    debug_assert_eq!(evals.calls, np + config.max_evaluations);

    let mut all_x = archive.points;
    let mut all_f = archive.objectives;
    all_x.extend(pop_x);
    all_f.extend(pop_f);
    let mut set_x: Vec<Vec<f64>> = Vec::new();
    let mut set_f: Vec<Vec<f64>> = Vec::new();
    for i in pareto_front(&all_f) {
        if !set_x.contains(&all_x[i]) {
            set_x.push(all_x[i].clone());
            set_f.push(all_f[i].clone());
        }
    }
    Ok(ParetoSet {
        points: set_x,
        objectives: set_f,
    })
}

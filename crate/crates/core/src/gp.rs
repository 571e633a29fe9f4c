//! Gaussian-process regression with a squared-exponential ARD kernel.
//!
//! Targets are standardized to zero mean and unit variance before fitting and
//! predictions are mapped back to the original scale. Hyperparameters are
//! chosen by multi-start maximization of the log marginal likelihood over a
//! bounded box in log-space, using analytic gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::Bounds;
use crate::linalg::{Cholesky, SquareMatrix};
use crate::optim::{minimize_box, Settings};
use crate::{Error, Result};

/// Bounds of the hyperparameter search, in natural units.
pub const LENGTHSCALE_RANGE: (f64, f64) = (0.01, 10.0);
pub const SIGNAL_STDDEV_RANGE: (f64, f64) = (0.01, 10.0);
pub const NOISE_STDDEV_RANGE: (f64, f64) = (1e-6, 1.0);
pub const DEFAULT_RESTARTS: usize = 10;

/// Squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelHyperParams {
    signal_stddev: f64,
    noise_stddev: f64,
    lengthscales: Vec<f64>,
}

impl KernelHyperParams {
    pub fn new(signal_stddev: f64, noise_stddev: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(signal_stddev) || !positive(noise_stddev) {
            return Err(Error::InvalidArgument(format!(
                "kernel stddevs must be positive, got signal {signal_stddev} noise {noise_stddev}"
            )));
        }
        if lengthscales.is_empty() || !lengthscales.iter().all(|l| positive(*l)) {
            return Err(Error::InvalidArgument(format!(
                "lengthscales must be non-empty and positive, got {lengthscales:?}"
            )));
        }
        Ok(Self {
            signal_stddev,
            noise_stddev,
            lengthscales,
        })
    }

    /// Same lengthscale on every axis.
    pub fn isotropic(signal_stddev: f64, noise_stddev: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        Self::new(signal_stddev, noise_stddev, vec![lengthscale; dim])
    }

    pub fn signal_stddev(&self) -> f64 {
        self.signal_stddev
    }

    pub fn noise_stddev(&self) -> f64 {
        self.noise_stddev
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn from_log(theta: &[f64]) -> Self {
        Self {
            signal_stddev: libm::exp(theta[0]),
            noise_stddev: libm::exp(theta[1]),
            lengthscales: theta[2..].iter().map(|v| libm::exp(*v)).collect(),
        }
    }
}

fn check_dim(point: &[f64], hyp: &KernelHyperParams) -> Result<()> {
    if point.len() != hyp.dim() {
        return Err(Error::InvalidArgument(format!(
            "point has dimension {}, kernel expects {}",
            point.len(),
            hyp.dim()
        )));
    }
    Ok(())
}

#[inline]
fn scaled_sq_dist(a: &[f64], b: &[f64], inv_sq_ls: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_sq_ls)
        .map(|((p, q), w)| {
            let d = p - q;
            d * d * w
        })
        .sum()
}

/// `sigma_f^2 * exp(-0.5 * sum_k ((a_k - b_k) / l_k)^2)`.
pub fn kernel_se(a: &[f64], b: &[f64], hyp: &KernelHyperParams) -> Result<f64> {
    check_dim(a, hyp)?;
    check_dim(b, hyp)?;
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&hyp.lengthscales)
        .map(|((p, q), l)| {
            let d = (p - q) / l;
            d * d
        })
        .sum();
    Ok(hyp.signal_stddev * hyp.signal_stddev * libm::exp(-0.5 * r2))
}

/// Observed design points (unit-cube coordinates), objective values and
/// constraint values for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    bounds: Bounds,
    n_constraints: usize,
    points: Vec<Vec<f64>>,
    y: Vec<f64>,
    constraints: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(bounds: Bounds, n_constraints: usize) -> Self {
        Self {
            bounds,
            n_constraints,
            points: Vec::new(),
            y: Vec::new(),
            constraints: Vec::new(),
        }
    }

    /// Builds an unconstrained dataset on the unit cube.
    pub fn from_points(points: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one point".into()));
        }
        if points.len() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} targets",
                points.len(),
                y.len()
            )));
        }
        let mut data = Self::new(Bounds::unit(dim), 0);
        for (x, v) in points.into_iter().zip(y) {
            data.push(x, v, Vec::new())?;
        }
        Ok(data)
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64, constraints: Vec<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "point has dimension {}, dataset has {}",
                x.len(),
                self.dim()
            )));
        }
        if !x.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("point {x:?} outside the unit cube")));
        }
        if constraints.len() != self.n_constraints {
            return Err(Error::InvalidArgument(format!(
                "expected {} constraint values, got {}",
                self.n_constraints,
                constraints.len()
            )));
        }
        if !y.is_finite() || !constraints.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("observations must be finite".into()));
        }
        self.points.push(x);
        self.y.push(y);
        self.constraints.push(constraints);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn n_constraints(&self) -> usize {
        self.n_constraints
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn constraints(&self, row: usize) -> &[f64] {
        &self.constraints[row]
    }

    /// Values of constraint `i` over all rows.
    pub fn constraint_column(&self, i: usize) -> Vec<f64> {
        self.constraints.iter().map(|row| row[i]).collect()
    }

    /// Strict feasibility: every constraint value below zero.
    pub fn is_feasible(&self, row: usize) -> bool {
        self.constraints[row].iter().all(|c| *c < 0.0)
    }

    pub fn any_feasible(&self) -> bool {
        (0..self.len()).any(|i| self.is_feasible(i))
    }

    pub fn min_y(&self) -> Option<f64> {
        self.y.iter().copied().reduce(f64::min)
    }

    pub fn min_feasible_y(&self) -> Option<f64> {
        (0..self.len())
            .filter(|&i| self.is_feasible(i))
            .map(|i| self.y[i])
            .reduce(f64::min)
    }
}

/// Affine map between raw targets and their standardized form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn fit(targets: &[f64]) -> Self {
        let n = targets.len() as f64;
        if targets.is_empty() {
            return Self { mean: 0.0, scale: 1.0 };
        }
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = libm::sqrt(var);
        Self {
            mean,
            scale: if scale > 1e-12 { scale } else { 1.0 },
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }
}

/// Pairwise squared coordinate differences, one `n x n` block per dimension.
struct PairwiseDiffs {
    n: usize,
    blocks: Vec<Vec<f64>>,
}

impl PairwiseDiffs {
    fn new(points: &[Vec<f64>]) -> Self {
        let n = points.len();
        let dim = points.first().map_or(0, Vec::len);
        let blocks = (0..dim)
            .map(|k| {
                let mut b = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..i {
                        let d = points[i][k] - points[j][k];
                        b[i * n + j] = d * d;
                        b[j * n + i] = d * d;
                    }
                }
                b
            })
            .collect();
        Self { n, blocks }
    }

    fn signal_cov(&self, hyp: &KernelHyperParams) -> SquareMatrix {
        let n = self.n;
        let sf2 = hyp.signal_stddev * hyp.signal_stddev;
        let inv: Vec<f64> = hyp.lengthscales.iter().map(|l| 0.5 / (l * l)).collect();
        let mut k = SquareMatrix::zeros(n);
        for i in 0..n {
            k.set(i, i, sf2);
            for j in 0..i {
                let idx = i * n + j;
                let r: f64 = self.blocks.iter().zip(&inv).map(|(b, w)| b[idx] * w).sum();
                let v = sf2 * libm::exp(-r);
                k.set(i, j, v);
                k.set(j, i, v);
            }
        }
        k
    }
}

fn noisy(mut k: SquareMatrix, noise_stddev: f64) -> SquareMatrix {
    let s2 = noise_stddev * noise_stddev;
    for i in 0..k.n {
        k.set(i, i, k.get(i, i) + s2);
    }
    k
}

fn lml_value(chol: &Cholesky, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len() as f64;
    let fit: f64 = y.iter().zip(alpha).map(|(a, b)| a * b).sum();
    -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n * libm::log(2.0 * PI)
}

/// Log marginal likelihood of the dataset's objective values, evaluated on
/// standardized targets.
pub fn log_marginal_likelihood(dataset: &Dataset, hyp: &KernelHyperParams) -> Result<f64> {
    log_marginal_likelihood_of(dataset.points(), dataset.y(), hyp)
}

/// Log marginal likelihood for arbitrary targets (standardized internally).
pub fn log_marginal_likelihood_of(points: &[Vec<f64>], targets: &[f64], hyp: &KernelHyperParams) -> Result<f64> {
    validate_training(points, targets, 1)?;
    check_dim(&points[0], hyp)?;
    let st = Standardization::fit(targets);
    let y: Vec<f64> = targets.iter().map(|v| st.apply(*v)).collect();
    let k = noisy(PairwiseDiffs::new(points).signal_cov(hyp), hyp.noise_stddev);
    let chol = Cholesky::factor(&k)?;
    let alpha = chol.solve(&y);
    Ok(lml_value(&chol, &y, &alpha))
}

/// Negative log marginal likelihood and its gradient with respect to
/// `theta = (ln sigma_f, ln sigma_n, ln l_1, ..., ln l_d)`.
fn neg_lml_with_grad(diffs: &PairwiseDiffs, y: &[f64], theta: &[f64], grad: &mut [f64]) -> Option<f64> {
    let hyp = KernelHyperParams::from_log(theta);
    let n = diffs.n;
    let kf = diffs.signal_cov(&hyp);
    let chol = Cholesky::factor(&noisy(kf.clone(), hyp.noise_stddev)).ok()?;
    let alpha = chol.solve(y);
    let value = lml_value(&chol, y, &alpha);
    let inv = chol.inverse();

    grad.iter_mut().for_each(|g| *g = 0.0);
    let sn2 = hyp.noise_stddev * hyp.noise_stddev;
    let inv_sq: Vec<f64> = hyp.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    for i in 0..n {
        for j in 0..n {
            let idx = i * n + j;
            let w = alpha[i] * alpha[j] - inv.data[idx];
            let wk = w * kf.data[idx];
            grad[0] += wk;
            for (k, block) in diffs.blocks.iter().enumerate() {
                grad[2 + k] += 0.5 * wk * block[idx] * inv_sq[k];
            }
        }
        grad[1] += (alpha[i] * alpha[i] - inv.data[i * n + i]) * sn2;
    }
    grad.iter_mut().for_each(|g| *g = -*g);
    Some(-value)
}

fn validate_training(points: &[Vec<f64>], targets: &[f64], min_points: usize) -> Result<()> {
    if points.len() < min_points {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_points} training points, got {}",
            points.len()
        )));
    }
    if points.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} points but {} targets",
            points.len(),
            targets.len()
        )));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidArgument(
            "training points have inconsistent dimension".into(),
        ));
    }
    if !targets.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("training targets must be finite".into()));
    }
    Ok(())
}

/// A trained GP: hyperparameters plus the cached factorization of the
/// training covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    hyperparams: KernelHyperParams,
    dim: usize,
    train: Vec<f64>,
    alpha: Vec<f64>,
    chol: Cholesky,
    standardization: Standardization,
    half_inv_sq_ls: Vec<f64>,
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on the given data.
    pub fn with_hyperparams(points: &[Vec<f64>], targets: &[f64], hyperparams: KernelHyperParams) -> Result<Self> {
        validate_training(points, targets, 1)?;
        check_dim(&points[0], &hyperparams)?;
        let standardization = Standardization::fit(targets);
        let y: Vec<f64> = targets.iter().map(|v| standardization.apply(*v)).collect();
        let k = noisy(
            PairwiseDiffs::new(points).signal_cov(&hyperparams),
            hyperparams.noise_stddev,
        );
        let chol = Cholesky::factor(&k)?;
        let alpha = chol.solve(&y);
        let half_inv_sq_ls = hyperparams.lengthscales.iter().map(|l| 0.5 / (l * l)).collect();
        Ok(Self {
            dim: points[0].len(),
            train: points.iter().flatten().copied().collect(),
            alpha,
            chol,
            standardization,
            half_inv_sq_ls,
            hyperparams,
        })
    }

    /// Hyperparameters in standardized-target units.
    pub fn hyperparams(&self) -> &KernelHyperParams {
        &self.hyperparams
    }

    /// Noise standard deviation on the original target scale.
    pub fn noise_stddev(&self) -> f64 {
        self.hyperparams.noise_stddev * self.standardization.scale
    }

    /// Signal standard deviation on the original target scale.
    pub fn signal_stddev(&self) -> f64 {
        self.hyperparams.signal_stddev * self.standardization.scale
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    /// Diagonal jitter the factorization needed (0 when none).
    pub fn jitter(&self) -> f64 {
        self.chol.jitter
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_train(&self) -> usize {
        self.alpha.len()
    }

    /// Posterior mean and standard deviation at `x`, on the original scale.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "query has dimension {}, model expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> (f64, f64) {
        let sf2 = self.hyperparams.signal_stddev * self.hyperparams.signal_stddev;
        let mut kstar: Vec<f64> = self
            .train
            .chunks_exact(self.dim)
            .map(|p| sf2 * libm::exp(-scaled_sq_dist(p, x, &self.half_inv_sq_ls)))
            .collect();
        let mean: f64 = kstar.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        self.chol.forward_in_place(&mut kstar);
        let explained: f64 = kstar.iter().map(|v| v * v).sum();
        let var = (sf2 - explained).max(0.0);
        let st = self.standardization;
        (st.mean + st.scale * mean, st.scale * libm::sqrt(var))
    }
}

/// Fits a GP to the dataset's objective values.
pub fn fit_gp(dataset: &Dataset, restarts: usize, seed: u64) -> Result<GpModel> {
    fit_gp_to(dataset.points(), dataset.y(), restarts, seed)
}

/// Fits a GP to arbitrary targets over the given points by multi-start
/// maximization of the log marginal likelihood. Restart 0 starts from a
/// fixed central guess, the others from seeded uniform draws in the
/// log-parameter box.
pub fn fit_gp_to(points: &[Vec<f64>], targets: &[f64], restarts: usize, seed: u64) -> Result<GpModel> {
    validate_training(points, targets, 2)?;
    let dim = points[0].len();
    let st = Standardization::fit(targets);
    let y: Vec<f64> = targets.iter().map(|v| st.apply(*v)).collect();
    let diffs = PairwiseDiffs::new(points);

    let mut lower = vec![libm::log(SIGNAL_STDDEV_RANGE.0), libm::log(NOISE_STDDEV_RANGE.0)];
    let mut upper = vec![libm::log(SIGNAL_STDDEV_RANGE.1), libm::log(NOISE_STDDEV_RANGE.1)];
    lower.extend(core::iter::repeat_n(libm::log(LENGTHSCALE_RANGE.0), dim));
    upper.extend(core::iter::repeat_n(libm::log(LENGTHSCALE_RANGE.1), dim));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for restart in 0..restarts.max(1) {
        let start: Vec<f64> = if restart == 0 {
            let mut s = vec![0.0, libm::log(0.1)];
            s.extend(core::iter::repeat_n(libm::log(0.3), dim));
            s
        } else {
            lower
                .iter()
                .zip(&upper)
                .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                .collect()
        };
        let found = minimize_box(
            |theta, grad| neg_lml_with_grad(&diffs, &y, theta, grad),
            &start,
            &lower,
            &upper,
            Settings::default(),
        );
        if let Some(m) = found {
            if best.as_ref().is_none_or(|(v, _)| m.value < *v) {
                best = Some((m.value, m.x));
            }
        }
    }
    let (_, theta) = best.ok_or_else(|| Error::FitFailure(format!("no finite likelihood in {restarts} restarts")))?;
    GpModel::with_hyperparams(points, targets, KernelHyperParams::from_log(&theta))
}

//! Search-box geometry and initial designs in the unit cube.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{Error, Result};

/// Per-dimension box `[lower_k, upper_k]` of the original design space.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidArgument(alloc::format!(
                "bounds need matching non-empty lower/upper, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidArgument(alloc::format!(
                    "dimension {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lower: alloc::vec![0.0; dim],
            upper: alloc::vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Maps unit-cube coordinates into the box.
    pub fn denormalize(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect()
    }

    /// Maps box coordinates into the unit cube.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }
}

/// Latin-hypercube sample: each axis is cut into `n` strata and every stratum
/// holds exactly one point.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = alloc::vec![alloc::vec![0.0; dim]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for k in 0..dim {
        strata.shuffle(rng);
        for (point, &s) in points.iter_mut().zip(&strata) {
            point[k] = (s as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    points
}

pub fn uniform_point<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.gen::<f64>()).collect()
}

pub fn uniform<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| uniform_point(dim, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lhs_has_one_point_per_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = latin_hypercube(20, 4, &mut rng);
        for k in 0..4 {
            let mut seen = [false; 20];
            for p in &pts {
                assert!((0.0..1.0).contains(&p[k]));
                seen[(p[k] * 20.0) as usize] = true;
            }
            assert!(seen.iter().all(|s| *s));
        }
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(Bounds::new(vec![0.0], vec![0.0]).is_err());
        assert!(Bounds::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(Bounds::new(vec![f64::NAN], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn unit_round_trip(lo in -1e3f64..1e3, width in 1e-3f64..1e3, u in 0.0f64..=1.0) {
            let b = Bounds::new(vec![lo, -lo], vec![lo + width, -lo + 2.0 * width]).unwrap();
            let x = b.denormalize(&[u, 1.0 - u]);
            let back = b.normalize(&x);
            prop_assert!((back[0] - u).abs() < 1e-12 * (1.0 + lo.abs() / width));
            let again = b.denormalize(&b.normalize(&x));
            prop_assert!((again[0] - x[0]).abs() <= 1e-12 * (1.0 + x[0].abs()));
        }
    }
}

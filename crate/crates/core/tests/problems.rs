use mace_core::design::Bounds;
use mace_core::problems::{
    builtin, fom_weighted_sum, FomSpec, FomTerm, Sense, BRANIN_OPTIMUM, BUILTIN_NAMES, RING_CENTER,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn branin_grid_oracle() {
    let p = builtin("branin").unwrap();
    let n = 2000;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        for j in 0..=n {
            let u = [i as f64 / n as f64, j as f64 / n as f64];
            best = best.min(p.evaluate(&u).unwrap().0);
        }
    }
    // the grid can only overshoot the true minimum
    assert!(best >= BRANIN_OPTIMUM - 1e-12);
    assert!(best - BRANIN_OPTIMUM < 1e-4, "grid minimum {best}");
    let at = p.bounds.normalize(&[std::f64::consts::PI, 2.275]);
    assert!((p.evaluate(&at).unwrap().0 - 0.397887).abs() < 1e-4);
}

#[test]
fn ring_feasible_volume_is_one_percent() {
    let p = builtin("ring-constrained-2d").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 1_000_000;
    let feasible = (0..n)
        .filter(|_| {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            p.evaluate(&x).unwrap().1[0] < 0.0
        })
        .count();
    let frac = feasible as f64 / n as f64;
    assert!((frac - 0.01).abs() <= 0.002, "{frac}");
    assert!(p.evaluate(&RING_CENTER).unwrap().1[0] < 0.0);
}

#[test]
fn known_optimum_is_a_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in BUILTIN_NAMES {
        let p = builtin(name).unwrap();
        let Some(opt) = p.known_optimum else { continue };
        for _ in 0..100_000 {
            let x: Vec<f64> = (0..p.dim()).map(|_| rng.gen()).collect();
            let y = p.evaluate(&x).unwrap().0;
            assert!(y >= opt - 1e-6, "{name}: {y} < {opt}");
        }
    }
}

#[test]
fn evaluation_is_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for name in BUILTIN_NAMES {
        let p = builtin(name).unwrap();
        let q = builtin(name).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..p.dim()).map(|_| rng.gen()).collect();
            assert_eq!(p.evaluate(&x).unwrap(), q.evaluate(&x).unwrap());
            assert_eq!(p.evaluate(&x).unwrap(), p.evaluate(&x).unwrap());
        }
    }
}

#[test]
fn unit_cube_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for name in BUILTIN_NAMES {
        let b = builtin(name).unwrap().bounds;
        for _ in 0..1000 {
            let u: Vec<f64> = (0..b.dim()).map(|_| rng.gen()).collect();
            let back = b.normalize(&b.denormalize(&u));
            assert!(u.iter().zip(&back).all(|(a, c)| (a - c).abs() <= 1e-12));
        }
    }
    assert!(Bounds::new(vec![0.0], vec![0.0]).is_err());
}

#[test]
fn constrained_branin_disc() {
    let p = builtin("constrained-branin").unwrap();
    assert!(p.evaluate(&[0.5, 0.5]).unwrap().1[0] < 0.0);
    assert!(p.evaluate(&[0.0, 0.0]).unwrap().1[0] > 0.0);
    // boundary counts as infeasible: c = 0 exactly
    assert_eq!(p.evaluate(&[0.5, 1.0]).unwrap().1[0], 0.0);
}

#[test]
fn fom_composition() {
    let identity = fom_weighted_sum(
        FomSpec::new(vec![FomTerm {
            weight: 1.0,
            sense: Sense::Minimize,
            metric: Box::new(|x: &[f64]| x[0] * 3.0),
        }])
        .unwrap(),
    );
    assert_eq!(identity(&[2.0]), 6.0);
    let gain = fom_weighted_sum(
        FomSpec::new(vec![FomTerm {
            weight: 2.0,
            sense: Sense::Maximize,
            metric: Box::new(|x: &[f64]| x[0]),
        }])
        .unwrap(),
    );
    assert_eq!(gain(&[1.5]), -3.0);
}

#[test]
fn amp_mimic_shape() {
    let p = builtin("amp-mimic-10d").unwrap();
    assert_eq!((p.dim(), p.n_constraints()), (10, 2));
    let (y, c) = p.evaluate(&[0.9; 10]).unwrap();
    assert!(y > 0.0);
    assert!(c.iter().all(|v| *v < 0.0), "{c:?}");
}

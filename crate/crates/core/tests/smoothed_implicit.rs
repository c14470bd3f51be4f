use bilevel_core::error::Error;
use bilevel_core::hypergrad::{ImplicitError, LossGrads};
use bilevel_core::lower::{DenseMatrix, LeastSquaresTerm, SmoothTerm};
use bilevel_core::smoothed::*;
use bilevel_core::toy::{analytic_gradient, run_estimator, ToyConfig, ToyEstimator, ToyTerm};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `E = 0.5 (x - theta)^2`
struct Shift;

impl SmoothTerm<f64> for Shift {
    fn dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        0.5 * (x[0] - theta[0]).powi(2)
    }
    fn grad(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        vec![x[0] - theta[0]]
    }
    fn hess_apply(&self, _x: &[f64], _theta: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
    fn mixed_apply_transpose(&self, _x: &[f64], _theta: &[f64], v: &[f64]) -> Vec<f64> {
        vec![-v[0]]
    }
    fn mixed_apply(&self, _x: &[f64], _theta: &[f64], dtheta: &[f64]) -> Vec<f64> {
        vec![-dtheta[0]]
    }
}

#[test]
fn shifted_quadratic() {
    for theta in [-1.0, 0.25, 3.0] {
        let xstar = [theta];
        let r = implicit_gradient(&Shift, &[theta], &xstar, &LossGrads::state_only(vec![theta], 1), 1e-12, 10).unwrap();
        assert!((r.gradient[0] - theta).abs() < 1e-15);
        assert_eq!(r.stationarity, Some(0.0));
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn least_squares_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let (m, d, p) = (8, 4, 3);
        let a = random_vec(&mut rng, m * d);
        let bp = random_vec(&mut rng, m * p);
        let b = random_vec(&mut rng, m);
        let theta = random_vec(&mut rng, p);
        let target = random_vec(&mut rng, d);
        let term = LeastSquaresTerm::new(
            DenseMatrix::new(m, d, a.clone()).unwrap(),
            b.clone(),
            DenseMatrix::new(m, p, bp.clone()).unwrap(),
        )
        .unwrap();
        let am = DMatrix::from_row_slice(m, d, &a);
        let bm = DMatrix::from_row_slice(m, p, &bp);
        let ata = am.transpose() * &am;
        let rhs = am.transpose() * (DVector::from_vec(b) + &bm * DVector::from_vec(theta.clone()));
        let xstar = ata.clone().lu().solve(&rhs).unwrap();
        let dx = ata.lu().solve(&(am.transpose() * &bm)).unwrap();
        let resid = &xstar - DVector::from_vec(target.clone());
        let oracle = dx.transpose() * &resid;
        let loss = LossGrads::state_only(resid.iter().copied().collect(), p);
        let r = implicit_gradient(&term, &theta, xstar.as_slice(), &loss, 1e-12, 40).unwrap();
        for i in 0..p {
            assert!((r.gradient[i] - oracle[i]).abs() <= 1e-9 * oracle.norm().max(1.0));
        }
    }
}

#[test]
fn hessian_products_are_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let term = LeastSquaresTerm::new(
        DenseMatrix::new(6, 4, random_vec(&mut rng, 24)).unwrap(),
        random_vec(&mut rng, 6),
        DenseMatrix::new(6, 2, random_vec(&mut rng, 12)).unwrap(),
    )
    .unwrap();
    let barrier = ToyTerm::with_barrier(1.0, 1.0, 1e-2);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for _ in 0..100 {
        let (x, th, v, w) = (
            random_vec(&mut rng, 4),
            random_vec(&mut rng, 2),
            random_vec(&mut rng, 4),
            random_vec(&mut rng, 4),
        );
        let gap = dot(&term.hess_apply(&x, &th, &v), &w) - dot(&v, &term.hess_apply(&x, &th, &w));
        assert!(gap.abs() <= 1e-10);
        let (x1, t1) = ([rng.gen_range(0.1..2.0)], [rng.gen_range(-2.0..2.0)]);
        let gap = barrier.hess_apply(&x1, &t1, &[v[0]])[0] * w[0] - v[0] * barrier.hess_apply(&x1, &t1, &[w[0]])[0];
        assert!(gap.abs() <= 1e-10);
    }
}

#[test]
fn barrier_derivatives_by_hand() {
    let t = ToyTerm::<f64>::with_barrier(1.0, 1.0, 0.01);
    assert!((t.second_derivative(1.0, 1.0) - 2.01).abs() < 1e-15);
    assert_eq!(t.mixed_derivative(1.0, 1.0), 1.0);
}

#[test]
fn barrier_minimizer() {
    for lambda in [0.5, 1.0, 4.0] {
        let x: f64 = toy_barrier_minimize(0.0, lambda, 1.0, 1e-4, 1e-14).unwrap();
        assert!((x - 1e-2).abs() < 1e-13);
    }
    let x: f64 = toy_barrier_minimize(1.0, 1.0, 1.0, 1e-12, 1e-14).unwrap();
    assert!((x - 0.5).abs() < 1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let theta: f64 = rng.gen_range(-3.0..3.0);
        let mu = 10f64.powf(rng.gen_range(-10.0..0.0));
        let x = toy_barrier_minimize(theta, 1.0, 1.0, mu, 1e-13).unwrap();
        let term = ToyTerm::with_barrier(1.0, 1.0, mu);
        let r = term.grad(&[x], &[theta])[0];
        assert!(x > 0.0 && r.abs() <= 1e-12, "theta {theta}, mu {mu}: residual {r:e}");
    }
}

#[test]
fn toy_estimate_improves_as_the_barrier_shrinks() {
    let mut prev = f64::INFINITY;
    for mu in [1e-2, 1e-4, 1e-6] {
        let cfg = ToyConfig {
            mu,
            ..ToyConfig::default()
        };
        let out = run_estimator(ToyEstimator::SmoothedImpl, &cfg).unwrap();
        assert!(out.abs_error <= prev, "mu {mu}: {} > {prev}", out.abs_error);
        prev = out.abs_error;
    }
    assert!(prev <= 1e-3);
    let reference = analytic_gradient(0.3, &ToyConfig::default());
    assert!(reference.distance(-0.17216) < 1e-5);
}

#[test]
fn stalled_solve_returns_the_best_iterate() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let term = LeastSquaresTerm::new(
        DenseMatrix::new(6, 5, random_vec(&mut rng, 30)).unwrap(),
        vec![0.0; 6],
        DenseMatrix::new(6, 1, random_vec(&mut rng, 6)).unwrap(),
    )
    .unwrap();
    let loss = LossGrads::state_only(random_vec(&mut rng, 5), 1);
    let err = implicit_gradient(&term, &[0.0], &[0.0; 5], &loss, 1e-14, 1).unwrap_err();
    let ImplicitError::NotConverged(nc) = err.clone() else {
        panic!("expected a non-converged solve, got {err:?}");
    };
    assert!(nc.residual > 1e-14 && nc.iterations == 1);
    assert!(matches!(Error::from(err.clone()), Error::NotConverged { .. }));
    let best = err.into_best().unwrap();
    assert!(!best.warnings.is_empty());
}

#[test]
fn conjugate_gradient_on_spd_system() {
    let q = [4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0];
    let apply = |v: &[f64]| (0..3).map(|i| (0..3).map(|j| q[i * 3 + j] * v[j]).sum()).collect();
    let sol = conjugate_gradient(apply, &[1.0, 2.0, 3.0], 1e-14, 10);
    assert!(sol.converged && sol.iterations <= 3 + 1);
    let back: Vec<f64> = apply(&sol.x);
    for (a, b) in back.iter().zip([1.0, 2.0, 3.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

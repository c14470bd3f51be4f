//! Implicit differentiation of a smoothed lower level,
//! `dL/dtheta = -(d^2E/dtheta dx)^T [H^{-1} dL/dx] + dL/dtheta`.

use crate::error::{check_len, Error, NotConverged, Result};
use crate::hypergrad::{Estimator, GradientReport, ImplicitError, LossGrads};
use crate::lower::SmoothTerm;
use crate::scalar::vecops;
use crate::Scalar;

/// Default barrier weight for estimator comparisons.
pub const DEFAULT_MU: f64 = 1e-6;

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution<T> {
    pub x: Vec<T>,
    /// `|b - A x| / |b|`
    pub relative_residual: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive definite operator.
pub fn conjugate_gradient<T: Scalar>(
    apply: impl Fn(&[T]) -> Vec<T>,
    b: &[T],
    tol: T,
    max_iters: usize,
) -> CgSolution<T> {
    let bnorm = vecops::norm(b);
    let mut x = vec![T::zero(); b.len()];
    if bnorm == T::zero() {
        return CgSolution {
            x,
            relative_residual: T::zero(),
            iterations: 0,
            converged: true,
        };
    }
    let mut r = b.to_vec();
    let mut d = r.clone();
    let mut rr = vecops::dot(&r, &r);
    let mut iterations = 0;
    while rr.sqrt() > tol * bnorm && iterations < max_iters {
        let ad = apply(&d);
        let dad = vecops::dot(&d, &ad);
        if !(dad > T::zero()) {
            break;
        }
        let step = rr / dad;
        vecops::axpy(step, &d, &mut x);
        vecops::axpy(-step, &ad, &mut r);
        let rr_new = vecops::dot(&r, &r);
        let beta = rr_new / rr;
        d = r.iter().zip(&d).map(|(&ri, &di)| ri + beta * di).collect();
        rr = rr_new;
        iterations += 1;
    }
    let relative_residual = rr.sqrt() / bnorm;
    CgSolution {
        x,
        relative_residual,
        iterations,
        converged: relative_residual <= tol,
    }
}

/// Implicit-function-theorem gradient at an approximate minimizer `xstar` of the
/// smooth energy `sp`. The Hessian system is solved by conjugate gradients.
pub fn implicit_gradient<T: Scalar, S: SmoothTerm<T>>(
    sp: &S,
    theta: &[T],
    xstar: &[T],
    loss: &LossGrads<T>,
    tol: T,
    max_iters: usize,
) -> Result<GradientReport<T>, ImplicitError<T>> {
    check_len("minimizer", sp.dim(), xstar.len())?;
    check_len("theta", sp.param_dim(), theta.len())?;
    check_len("loss gradient wrt x", sp.dim(), loss.wrt_x.len())?;
    check_len("loss gradient wrt theta", sp.param_dim(), loss.wrt_theta.len())?;
    let cg = conjugate_gradient(|v| sp.hess_apply(xstar, theta, v), &loss.wrt_x, tol, max_iters);
    let mixed = sp.mixed_apply_transpose(xstar, theta, &cg.x);
    let gradient = loss
        .wrt_theta
        .iter()
        .zip(&mixed)
        .map(|(&l, &m)| l - m)
        .collect();
    let report = GradientReport {
        gradient,
        contributions: Vec::new(),
        estimator: Estimator::SmoothedImplicit,
        n_forward: 0,
        n_back: cg.iterations,
        fixed_point_residual: None,
        solve_residual: Some(cg.relative_residual),
        stationarity: Some(vecops::norm(&sp.grad(xstar, theta))),
        warnings: Vec::new(),
    };
    if cg.converged {
        Ok(report)
    } else {
        Err(ImplicitError::NotConverged(NotConverged {
            best: report,
            residual: cg.relative_residual,
            iterations: cg.iterations,
        }))
    }
}

/// Minimizer of the log-barrier toy energy
/// `lambda/2 (theta x - b)^2 + x^2/2 - mu log x`, i.e. the positive root of
/// `(lambda theta^2 + 1) x - lambda theta b - mu / x = 0`.
///
/// The quadratic formula gives the starting point; safeguarded Newton steps on a
/// sign-change bracket polish it until `|residual| <= tol`.
pub fn toy_barrier_minimize<T: Scalar>(theta: T, lambda: T, b: T, mu: T, tol: T) -> Result<T> {
    if !(mu > T::zero()) {
        return Err(Error::Config(format!("barrier weight must be positive, got {mu}")));
    }
    if !(lambda > T::zero()) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let a = lambda * theta * theta + T::one();
    let c = lambda * theta * b;
    let phi = |x: T| a * x - c - mu / x;
    let disc = (c * c + T::lit(4.0) * a * mu).sqrt();
    let mut x = if c >= T::zero() {
        (c + disc) / (a + a)
    } else {
        (mu + mu) / (disc - c)
    };

    // phi is increasing on x > 0
    let (mut lo, mut hi) = (T::zero(), T::infinity());
    for _ in 0..200 {
        let r = phi(x);
        if r.abs() <= tol {
            break;
        }
        if r < T::zero() {
            lo = x;
        } else {
            hi = x;
        }
        let next = x - r / (a + mu / (x * x));
        x = if next > lo && next < hi {
            next
        } else if hi.is_finite() {
            T::lit(0.5) * (lo + hi)
        } else {
            x + x
        };
    }
    Ok(x)
}

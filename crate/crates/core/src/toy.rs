//! One-dimensional nonnegative least-squares bilevel problem
//!
//! ```text
//! min_theta 1/2 (x*(theta) - g)^2
//!   s.t. x*(theta) = argmin_{x >= 0} lambda/2 (theta x - b)^2 + x^2/2
//! ```
//!
//! with closed-form solution map and gradient, used to validate every estimator.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::bregman::{BregmanGenerator, SimpleFunction};
use crate::error::{Error, Result};
use crate::hypergrad::{
    fixedpoint_implicit, fixedpoint_neumann, reverse_abstract, reverse_fbs, FbsStep, GradientReport,
    LossGrads,
};
use crate::lower::{fbs_run, IterateTrace, LowerProblem, SmoothTerm};
use crate::smoothed::{implicit_gradient, toy_barrier_minimize, DEFAULT_MU};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig<T> {
    pub lambda: T,
    pub b: T,
    /// The ground truth is `x*(theta_star)`.
    pub theta_star: T,
    pub theta_eval: T,
    pub n_forward: usize,
    pub n_back: usize,
    pub alpha: T,
    pub mu: T,
    pub x0: T,
}

impl<T: Scalar> Default for ToyConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::one(),
            b: T::one(),
            theta_star: T::one(),
            theta_eval: T::lit(0.3),
            n_forward: 200,
            n_back: 200,
            alpha: T::lit(0.5),
            mu: T::lit(DEFAULT_MU),
            x0: T::one(),
        }
    }
}

impl<T: Scalar> ToyConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("mu", self.mu),
            ("x0", self.x0),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("b", self.b), ("theta_star", self.theta_star), ("theta_eval", self.theta_eval)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        if self.n_back > self.n_forward {
            return Err(Error::Config(format!(
                "n_back = {} exceeds n_forward = {}",
                self.n_back, self.n_forward
            )));
        }
        Ok(())
    }

    /// The target `g = x*(theta_star)`.
    pub fn ground_truth(&self) -> T {
        analytic_solution_map(self.theta_star, self.lambda, self.b)
    }

    pub fn problem(&self) -> LowerProblem<T, ToyTerm<T>> {
        LowerProblem::new(ToyTerm::new(self.lambda, self.b), SimpleFunction::NonNegative)
    }
}

/// `x*(theta) = max(0, lambda theta b / (1 + lambda theta^2))`
pub fn analytic_solution_map<T: Scalar>(theta: T, lambda: T, b: T) -> T {
    (lambda * theta * b / (T::one() + lambda * theta * theta)).max(T::zero())
}

/// The exact derivative, or the subdifferential interval at the kink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticGradient<T> {
    Value(T),
    Interval { lo: T, hi: T },
}

impl<T: Scalar> AnalyticGradient<T> {
    pub fn bounds(&self) -> (T, T) {
        match *self {
            AnalyticGradient::Value(v) => (v, v),
            AnalyticGradient::Interval { lo, hi } => (lo, hi),
        }
    }

    /// Distance from `v` to the value or interval; `0` inside the interval.
    pub fn distance(&self, v: T) -> T {
        let (lo, hi) = self.bounds();
        if v < lo {
            lo - v
        } else if v > hi {
            v - hi
        } else {
            T::zero()
        }
    }

    pub fn contains(&self, v: T) -> bool {
        self.distance(v) == T::zero()
    }
}

/// `dL/dtheta = lambda b (1 - lambda theta^2) / (1 + lambda theta^2)^2 (x(theta) - g)`
/// away from `theta = 0`; at `theta = 0` the ordered interval between `0` and
/// `lambda b (x(0) - g)`.
pub fn analytic_gradient<T: Scalar>(theta: T, config: &ToyConfig<T>) -> AnalyticGradient<T> {
    let ToyConfig { lambda, b, .. } = *config;
    let g = config.ground_truth();
    let x = analytic_solution_map(theta, lambda, b);
    if theta == T::zero() {
        let end = lambda * b * (x - g);
        AnalyticGradient::Interval {
            lo: end.min(T::zero()),
            hi: end.max(T::zero()),
        }
    } else if x == T::zero() {
        // the solution map is locally constant where it is clipped
        AnalyticGradient::Value(T::zero())
    } else {
        let s = T::one() + lambda * theta * theta;
        AnalyticGradient::Value(lambda * b * (T::one() - lambda * theta * theta) / (s * s) * (x - g))
    }
}

/// `f_mu(x; theta) = lambda/2 (theta x - b)^2 + x^2/2 - mu log x`; `mu = 0` is the
/// unsmoothed data term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTerm<T> {
    pub lambda: T,
    pub b: T,
    pub mu: T,
}

impl<T: Scalar> ToyTerm<T> {
    pub fn new(lambda: T, b: T) -> Self {
        Self {
            lambda,
            b,
            mu: T::zero(),
        }
    }

    pub fn with_barrier(lambda: T, b: T, mu: T) -> Self {
        Self { lambda, b, mu }
    }

    /// `d^2 f_mu / dx^2`
    pub fn second_derivative(&self, x: T, theta: T) -> T {
        let base = self.lambda * theta * theta + T::one();
        if self.mu > T::zero() {
            base + self.mu / (x * x)
        } else {
            base
        }
    }

    /// `d/dtheta df_mu/dx`
    pub fn mixed_derivative(&self, x: T, theta: T) -> T {
        T::lit(2.0) * self.lambda * theta * x - self.lambda * self.b
    }
}

impl<T: Scalar> SmoothTerm<T> for ToyTerm<T> {
    fn dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[T], theta: &[T]) -> T {
        let r = theta[0] * x[0] - self.b;
        let base = T::lit(0.5) * (self.lambda * r * r + x[0] * x[0]);
        if self.mu > T::zero() {
            base - self.mu * x[0].ln()
        } else {
            base
        }
    }
    fn grad(&self, x: &[T], theta: &[T]) -> Vec<T> {
        let t = theta[0];
        let mut d = self.lambda * t * (t * x[0] - self.b) + x[0];
        if self.mu > T::zero() {
            d = d - self.mu / x[0];
        }
        vec![d]
    }
    fn hess_apply(&self, x: &[T], theta: &[T], v: &[T]) -> Vec<T> {
        vec![self.second_derivative(x[0], theta[0]) * v[0]]
    }
    fn mixed_apply_transpose(&self, x: &[T], theta: &[T], v: &[T]) -> Vec<T> {
        vec![self.mixed_derivative(x[0], theta[0]) * v[0]]
    }
    fn mixed_apply(&self, x: &[T], theta: &[T], dtheta: &[T]) -> Vec<T> {
        vec![self.mixed_derivative(x[0], theta[0]) * dtheta[0]]
    }
    fn lipschitz(&self, theta: &[T]) -> Option<T> {
        (self.mu == T::zero()).then(|| self.lambda * theta[0] * theta[0] + T::one())
    }
}

/// `L(x) = (x - g)^2 / 2`
pub fn toy_loss<T: Scalar>(x: T, g: T) -> T {
    T::lit(0.5) * (x - g) * (x - g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ToyEstimator {
    SmoothedImpl,
    ProjGd,
    ProjGd2,
    BregmanFb,
    BregmanFb2,
    BregmanFbImpl,
}

impl ToyEstimator {
    pub const ALL: [ToyEstimator; 6] = [
        ToyEstimator::SmoothedImpl,
        ToyEstimator::ProjGd,
        ToyEstimator::ProjGd2,
        ToyEstimator::BregmanFb,
        ToyEstimator::BregmanFb2,
        ToyEstimator::BregmanFbImpl,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            ToyEstimator::SmoothedImpl => "smoothed-impl",
            ToyEstimator::ProjGd => "proj-gd",
            ToyEstimator::ProjGd2 => "proj-gd2",
            ToyEstimator::BregmanFb => "bregman-fb",
            ToyEstimator::BregmanFb2 => "bregman-fb2",
            ToyEstimator::BregmanFbImpl => "bregman-fb-impl",
        }
    }

    /// Whether the estimate is the exact derivative of a fixed unrolled composite.
    pub fn is_unrolled(&self) -> bool {
        matches!(self, ToyEstimator::ProjGd | ToyEstimator::BregmanFb)
    }

    pub fn uses_forward_solver(&self) -> bool {
        !matches!(self, ToyEstimator::SmoothedImpl)
    }

    pub fn generator(&self) -> BregmanGenerator {
        match self {
            ToyEstimator::ProjGd | ToyEstimator::ProjGd2 => BregmanGenerator::euclidean(1),
            _ => BregmanGenerator::entropy_orthant(1),
        }
    }

    pub fn nonsmooth<T: Scalar>(&self) -> SimpleFunction<T> {
        match self {
            ToyEstimator::ProjGd | ToyEstimator::ProjGd2 => SimpleFunction::NonNegative,
            _ => SimpleFunction::Zero,
        }
    }
}

impl fmt::Display for ToyEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ToyEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToyEstimator::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| {
                let tags: Vec<_> = ToyEstimator::ALL.iter().map(|k| k.tag()).collect();
                Error::Config(format!("unknown estimator '{s}' (expected one of {})", tags.join(", ")))
            })
    }
}

/// Slack for [`ToyOutcome::in_interval`], absorbing rounding at differentiable points.
pub const REFERENCE_TOL: f64 = 1e-10;

/// A single estimator evaluation with its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyOutcome<T> {
    pub kind: ToyEstimator,
    pub theta: T,
    pub n_forward: usize,
    pub n_back: usize,
    pub report: GradientReport<T>,
    pub estimate: T,
    pub reference: AnalyticGradient<T>,
    /// Distance to the reference value or interval.
    pub abs_error: T,
    /// `abs_error <= REFERENCE_TOL`.
    pub in_interval: bool,
    /// `E(x^k)` along the forward pass; empty for the smoothed estimator.
    pub energies: Vec<T>,
}

/// The lower-level problem solved by `kind`'s forward pass.
pub fn estimator_problem<T: Scalar>(kind: ToyEstimator, config: &ToyConfig<T>) -> LowerProblem<T, ToyTerm<T>> {
    LowerProblem::new(ToyTerm::new(config.lambda, config.b), kind.nonsmooth())
}

/// Forward pass of `kind` at `theta` (not defined for the smoothed estimator).
pub fn forward_trace<T: Scalar>(kind: ToyEstimator, config: &ToyConfig<T>, theta: T) -> Result<IterateTrace<T>> {
    let problem = estimator_problem(kind, config);
    fbs_run(
        &problem,
        &[theta],
        &[config.x0],
        config.n_forward,
        config.alpha,
        &kind.generator(),
    )
}

/// The unrolled loss `theta -> L(x^n(theta))` of the forward pass of `kind`.
pub fn unrolled_loss<T: Scalar>(kind: ToyEstimator, config: &ToyConfig<T>, theta: T) -> Result<T> {
    let tr = forward_trace(kind, config, theta)?;
    Ok(toy_loss(tr.final_point[0], config.ground_truth()))
}

/// Evaluates `kind` at `config.theta_eval`.
pub fn run_estimator<T: Scalar>(kind: ToyEstimator, config: &ToyConfig<T>) -> Result<ToyOutcome<T>> {
    config.validate()?;
    let theta = [config.theta_eval];
    let g = config.ground_truth();
    let (report, energies) = if kind == ToyEstimator::SmoothedImpl {
        let term = ToyTerm::with_barrier(config.lambda, config.b, config.mu);
        let x = toy_barrier_minimize(config.theta_eval, config.lambda, config.b, config.mu, T::lit(1e-13))?;
        let loss = LossGrads::state_only(vec![x - g], 1);
        let report = match implicit_gradient(&term, &theta, &[x], &loss, T::lit(1e-10), 10) {
            Ok(r) => r,
            Err(e) => e.clone().into_best().ok_or_else(|| Error::from(e))?,
        };
        (report, Vec::new())
    } else {
        let problem = estimator_problem(kind, config);
        let gen = kind.generator();
        let trace = fbs_run(&problem, &theta, &[config.x0], config.n_forward, config.alpha, &gen)?;
        let energies = trace.iterates.iter().map(|x| problem.energy(x, &theta)).collect();
        let xstar = trace.final_point.clone();
        let loss = LossGrads::state_only(vec![xstar[0] - g], 1);
        let step = FbsStep::new(&problem, gen, config.alpha);
        let report = match kind {
            ToyEstimator::ProjGd => reverse_fbs(&trace, &problem, &gen, &theta, &loss, config.n_back)?,
            ToyEstimator::BregmanFb => reverse_abstract(&trace, &step, &theta, &loss, config.n_back)?,
            ToyEstimator::ProjGd2 | ToyEstimator::BregmanFb2 => {
                fixedpoint_neumann(&xstar, &step, &theta, config.n_back, &loss)?
            }
            ToyEstimator::BregmanFbImpl => {
                let max_iters = 10 * config.n_forward.max(1);
                match fixedpoint_implicit(&xstar, &step, &theta, &loss, T::lit(1e-10), max_iters) {
                    Ok(r) => r,
                    Err(e) => e.clone().into_best().ok_or_else(|| Error::from(e))?,
                }
            }
            ToyEstimator::SmoothedImpl => unreachable!(),
        };
        (report, energies)
    };
    let mut report = report;
    report.n_forward = if kind.uses_forward_solver() { config.n_forward } else { 0 };
    let estimate = report.gradient[0];
    let reference = analytic_gradient(config.theta_eval, config);
    let abs_error = reference.distance(estimate);
    Ok(ToyOutcome {
        kind,
        theta: config.theta_eval,
        n_forward: config.n_forward,
        n_back: config.n_back,
        report,
        estimate,
        reference,
        abs_error,
        in_interval: abs_error <= T::lit(REFERENCE_TOL),
        energies,
    })
}

/// One cell of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint<T> {
    pub kind: ToyEstimator,
    pub theta: T,
    pub n_forward: usize,
    pub n_back: usize,
}

impl<T: Scalar> SweepPoint<T> {
    /// Cartesian product in the order kind, theta, n_forward, n_back; cells with
    /// `n_back > n_forward` are skipped.
    pub fn grid(kinds: &[ToyEstimator], thetas: &[T], n_forward: &[usize], n_back: &[usize]) -> Vec<Self> {
        let mut out = Vec::new();
        for &kind in kinds {
            for &theta in thetas {
                for &nf in n_forward {
                    for &nb in n_back {
                        if nb <= nf {
                            out.push(SweepPoint {
                                kind,
                                theta,
                                n_forward: nf,
                                n_back: nb,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow<T> {
    pub point: SweepPoint<T>,
    pub outcome: Result<ToyOutcome<T>>,
}

/// Evaluates every grid cell on top of `base`. Rows keep grid order; a failing cell
/// is recorded and the sweep continues. `threads = 0` runs serially.
pub fn sweep<T: Scalar>(base: &ToyConfig<T>, grid: &[SweepPoint<T>], threads: usize) -> Vec<SweepRow<T>> {
    let eval = |p: &SweepPoint<T>| {
        let cfg = ToyConfig {
            theta_eval: p.theta,
            n_forward: p.n_forward,
            n_back: p.n_back,
            ..*base
        };
        SweepRow {
            point: *p,
            outcome: run_estimator(p.kind, &cfg),
        }
    };
    if threads == 0 || grid.len() < 2 {
        return grid.iter().map(eval).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| grid.par_iter().map(eval).collect()),
        Err(e) => {
            log::warn!("falling back to serial sweep: {e}");
            grid.iter().map(eval).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn solution_map_examples() {
        assert_eq!(analytic_solution_map(0.0, 1.0, 1.0), 0.0);
        assert_eq!(analytic_solution_map(1.0, 1.0, 1.0), 0.5);
        assert_eq!(analytic_solution_map(-1.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn analytic_gradient_examples() {
        let cfg = ToyConfig::<f64>::default();
        match analytic_gradient(0.3, &cfg) {
            AnalyticGradient::Value(v) => assert_abs_diff_eq!(v, -0.17216, epsilon = 1e-5),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            analytic_gradient(0.0, &cfg),
            AnalyticGradient::Interval { lo: -0.5, hi: 0.0 }
        );
        assert_eq!(analytic_gradient(1.0, &cfg), AnalyticGradient::Value(0.0));
    }

    #[test]
    fn interval_is_ordered_for_negative_b() {
        let cfg = ToyConfig {
            b: -1.0,
            theta_star: -1.0,
            ..ToyConfig::<f64>::default()
        };
        // g = x*(-1) with b = -1 is 0.5, x(0) = 0: endpoint lambda b (0 - 0.5) = 0.5
        assert_eq!(
            analytic_gradient(0.0, &cfg),
            AnalyticGradient::Interval { lo: 0.0, hi: 0.5 }
        );
    }

    #[test]
    fn barrier_derivatives_by_hand() {
        let t = ToyTerm::with_barrier(1.0, 1.0, 0.01);
        assert_abs_diff_eq!(t.second_derivative(1.0, 1.0), 2.01, epsilon = 1e-15);
        assert_abs_diff_eq!(t.mixed_derivative(1.0, 1.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn one_bregman_step_at_theta_zero() {
        let cfg = ToyConfig {
            n_forward: 1,
            n_back: 1,
            ..ToyConfig::<f64>::default()
        };
        let tr = forward_trace(ToyEstimator::BregmanFb, &cfg, 0.0).unwrap();
        assert_abs_diff_eq!(tr.final_point[0], (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn tags_round_trip() {
        for k in ToyEstimator::ALL {
            assert_eq!(k.tag().parse::<ToyEstimator>().unwrap(), k);
        }
        assert!("bregman".parse::<ToyEstimator>().is_err());
    }

    #[test]
    fn empty_grid_gives_empty_table() {
        assert!(sweep::<f64>(&ToyConfig::default(), &[], 4).is_empty());
    }
}

//! Forward passes of the lower-level splitting algorithms.
//!
//! Both solvers record the complete iterate sequence in an [`IterateTrace`] so the
//! reverse sweeps in [`crate::hypergrad`] can revisit every step. Iteration counts
//! are update counts: `n` updates produce iterates `x^0 ..= x^n`.

use log::warn;

use crate::bregman::{BregmanGenerator, GeneratorKind, ProxResult, SimpleFunction};
use crate::error::{check_len, Error, Result};
use crate::scalar::vecops;
use crate::Scalar;

/// The smooth part `f(x; theta)` of a lower-level energy with the derivatives the
/// unrolled and implicit estimators need.
pub trait SmoothTerm<T: Scalar> {
    fn dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn value(&self, x: &[T], theta: &[T]) -> T;
    /// `grad_x f(x; theta)`
    fn grad(&self, x: &[T], theta: &[T]) -> Vec<T>;
    /// `(d^2 f / dx^2) v`
    fn hess_apply(&self, x: &[T], theta: &[T], v: &[T]) -> Vec<T>;
    /// `(d grad_x f / d theta)^T v`, a vector in parameter space.
    fn mixed_apply_transpose(&self, x: &[T], theta: &[T], v: &[T]) -> Vec<T>;
    /// `(d grad_x f / d theta) dtheta`, a vector in state space.
    fn mixed_apply(&self, x: &[T], theta: &[T], dtheta: &[T]) -> Vec<T>;
    /// Lipschitz constant of `grad_x f(.; theta)`, when known.
    fn lipschitz(&self, _theta: &[T]) -> Option<T> {
        None
    }
}

impl<T: Scalar, S: SmoothTerm<T> + ?Sized> SmoothTerm<T> for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn value(&self, x: &[T], theta: &[T]) -> T {
        (**self).value(x, theta)
    }
    fn grad(&self, x: &[T], theta: &[T]) -> Vec<T> {
        (**self).grad(x, theta)
    }
    fn hess_apply(&self, x: &[T], theta: &[T], v: &[T]) -> Vec<T> {
        (**self).hess_apply(x, theta, v)
    }
    fn mixed_apply_transpose(&self, x: &[T], theta: &[T], v: &[T]) -> Vec<T> {
        (**self).mixed_apply_transpose(x, theta, v)
    }
    fn mixed_apply(&self, x: &[T], theta: &[T], dtheta: &[T]) -> Vec<T> {
        (**self).mixed_apply(x, theta, dtheta)
    }
    fn lipschitz(&self, theta: &[T]) -> Option<T> {
        (**self).lipschitz(theta)
    }
}

/// A parameter-free linear map with its adjoint.
pub trait LinearOperator<T: Scalar> {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, x: &[T]) -> Vec<T>;
    fn apply_adjoint(&self, y: &[T]) -> Vec<T>;
}

/// The coupling operator `K(theta)` of a saddle-point problem.
pub trait Coupling<T: Scalar> {
    fn primal_dim(&self) -> usize;
    fn dual_dim(&self) -> usize;
    fn apply(&self, theta: &[T], u: &[T]) -> Vec<T>;
    fn apply_adjoint(&self, theta: &[T], p: &[T]) -> Vec<T>;
    /// `grad_theta <p, K(theta) u>`
    fn param_vjp(&self, theta: &[T], u: &[T], p: &[T]) -> Vec<T>;
    /// `(d/dtheta K(theta) u) dtheta`
    fn param_jvp(&self, theta: &[T], u: &[T], dtheta: &[T]) -> Vec<T>;
    /// `(d/dtheta K(theta)^T p) dtheta`
    fn param_adjoint_jvp(&self, theta: &[T], p: &[T], dtheta: &[T]) -> Vec<T>;
    /// Upper bound (or accurate estimate) of `|K(theta)|` used for step sizes.
    fn norm_bound(&self, theta: &[T]) -> T;
}

impl<T: Scalar, C: Coupling<T> + ?Sized> Coupling<T> for &C {
    fn primal_dim(&self) -> usize {
        (**self).primal_dim()
    }
    fn dual_dim(&self) -> usize {
        (**self).dual_dim()
    }
    fn apply(&self, theta: &[T], u: &[T]) -> Vec<T> {
        (**self).apply(theta, u)
    }
    fn apply_adjoint(&self, theta: &[T], p: &[T]) -> Vec<T> {
        (**self).apply_adjoint(theta, p)
    }
    fn param_vjp(&self, theta: &[T], u: &[T], p: &[T]) -> Vec<T> {
        (**self).param_vjp(theta, u, p)
    }
    fn param_jvp(&self, theta: &[T], u: &[T], dtheta: &[T]) -> Vec<T> {
        (**self).param_jvp(theta, u, dtheta)
    }
    fn param_adjoint_jvp(&self, theta: &[T], p: &[T], dtheta: &[T]) -> Vec<T> {
        (**self).param_adjoint_jvp(theta, p, dtheta)
    }
    fn norm_bound(&self, theta: &[T]) -> T {
        (**self).norm_bound(theta)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_len("dense matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        self.data
            .chunks(self.cols)
            .map(|row| vecops::dot(row, x))
            .collect()
    }

    pub fn matvec_t(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for (row, &yi) in self.data.chunks(self.cols).zip(y) {
            vecops::axpy(yi, row, &mut out);
        }
        out
    }
}

impl<T: Scalar> LinearOperator<T> for DenseMatrix<T> {
    fn input_dim(&self) -> usize {
        self.cols
    }
    fn output_dim(&self) -> usize {
        self.rows
    }
    fn apply(&self, x: &[T]) -> Vec<T> {
        self.matvec(x)
    }
    fn apply_adjoint(&self, y: &[T]) -> Vec<T> {
        self.matvec_t(y)
    }
}

/// `f(x; theta) = 0.5 |A x - b - B theta|^2`, the least-squares data term of a
/// (nonnegative) least-squares lower level.
#[derive(Debug, Clone)]
pub struct LeastSquaresTerm<T> {
    pub a: DenseMatrix<T>,
    pub b: Vec<T>,
    pub b_param: DenseMatrix<T>,
}

impl<T: Scalar> LeastSquaresTerm<T> {
    pub fn new(a: DenseMatrix<T>, b: Vec<T>, b_param: DenseMatrix<T>) -> Result<Self> {
        check_len("least-squares rhs", a.rows, b.len())?;
        check_len("least-squares parameter map rows", a.rows, b_param.rows)?;
        Ok(Self { a, b, b_param })
    }

    fn residual(&self, x: &[T], theta: &[T]) -> Vec<T> {
        let ax = self.a.matvec(x);
        let bt = self.b_param.matvec(theta);
        ax.iter()
            .zip(&self.b)
            .zip(&bt)
            .map(|((&a, &b), &c)| a - b - c)
            .collect()
    }
}

impl<T: Scalar> SmoothTerm<T> for LeastSquaresTerm<T> {
    fn dim(&self) -> usize {
        self.a.cols
    }
    fn param_dim(&self) -> usize {
        self.b_param.cols
    }
    fn value(&self, x: &[T], theta: &[T]) -> T {
        let r = self.residual(x, theta);
        T::lit(0.5) * vecops::dot(&r, &r)
    }
    fn grad(&self, x: &[T], theta: &[T]) -> Vec<T> {
        self.a.matvec_t(&self.residual(x, theta))
    }
    fn hess_apply(&self, _x: &[T], _theta: &[T], v: &[T]) -> Vec<T> {
        self.a.matvec_t(&self.a.matvec(v))
    }
    fn mixed_apply_transpose(&self, _x: &[T], _theta: &[T], v: &[T]) -> Vec<T> {
        let av = self.a.matvec(v);
        self.b_param.matvec_t(&av).iter().map(|&t| -t).collect()
    }
    fn mixed_apply(&self, _x: &[T], _theta: &[T], dtheta: &[T]) -> Vec<T> {
        let bt = self.b_param.matvec(dtheta);
        self.a.matvec_t(&bt).iter().map(|&t| -t).collect()
    }
    fn lipschitz(&self, _theta: &[T]) -> Option<T> {
        let n = operator_norm_bound(&self.a, 100).value;
        Some(n * n)
    }
}

/// A coupling that does not depend on the parameters.
#[derive(Debug, Clone)]
pub struct FixedCoupling<O> {
    op: O,
    norm: f64,
}

impl<O> FixedCoupling<O> {
    /// Wraps `op`, estimating its norm by power iteration.
    pub fn new<T: Scalar>(op: O) -> Self
    where
        O: LinearOperator<T>,
    {
        let norm = operator_norm_bound(&op, 100).value.as_f64();
        Self { op, norm }
    }

    /// Wraps `op` with a caller-supplied norm bound.
    pub fn with_bound(op: O, bound: f64) -> Self {
        Self { op, norm: bound }
    }

    pub fn operator(&self) -> &O {
        &self.op
    }
}

impl<T: Scalar, O: LinearOperator<T>> Coupling<T> for FixedCoupling<O> {
    fn primal_dim(&self) -> usize {
        self.op.input_dim()
    }
    fn dual_dim(&self) -> usize {
        self.op.output_dim()
    }
    fn apply(&self, _theta: &[T], u: &[T]) -> Vec<T> {
        self.op.apply(u)
    }
    fn apply_adjoint(&self, _theta: &[T], p: &[T]) -> Vec<T> {
        self.op.apply_adjoint(p)
    }
    fn param_vjp(&self, theta: &[T], _u: &[T], _p: &[T]) -> Vec<T> {
        vec![T::zero(); theta.len()]
    }
    fn param_jvp(&self, _theta: &[T], _u: &[T], _dtheta: &[T]) -> Vec<T> {
        vec![T::zero(); self.op.output_dim()]
    }
    fn param_adjoint_jvp(&self, _theta: &[T], _p: &[T], _dtheta: &[T]) -> Vec<T> {
        vec![T::zero(); self.op.input_dim()]
    }
    fn norm_bound(&self, _theta: &[T]) -> T {
        T::lit(self.norm)
    }
}

/// `K = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroCoupling {
    pub primal_dim: usize,
    pub dual_dim: usize,
}

impl<T: Scalar> Coupling<T> for ZeroCoupling {
    fn primal_dim(&self) -> usize {
        self.primal_dim
    }
    fn dual_dim(&self) -> usize {
        self.dual_dim
    }
    fn apply(&self, _theta: &[T], _u: &[T]) -> Vec<T> {
        vec![T::zero(); self.dual_dim]
    }
    fn apply_adjoint(&self, _theta: &[T], _p: &[T]) -> Vec<T> {
        vec![T::zero(); self.primal_dim]
    }
    fn param_vjp(&self, theta: &[T], _u: &[T], _p: &[T]) -> Vec<T> {
        vec![T::zero(); theta.len()]
    }
    fn param_jvp(&self, _theta: &[T], _u: &[T], _dtheta: &[T]) -> Vec<T> {
        vec![T::zero(); self.dual_dim]
    }
    fn param_adjoint_jvp(&self, _theta: &[T], _p: &[T], _dtheta: &[T]) -> Vec<T> {
        vec![T::zero(); self.primal_dim]
    }
    fn norm_bound(&self, _theta: &[T]) -> T {
        T::zero()
    }
}

/// `min_x f(x; theta) + g(x)`
#[derive(Debug, Clone)]
pub struct LowerProblem<T, S> {
    pub smooth: S,
    pub nonsmooth: SimpleFunction<T>,
}

impl<T: Scalar, S: SmoothTerm<T>> LowerProblem<T, S> {
    pub fn new(smooth: S, nonsmooth: SimpleFunction<T>) -> Self {
        Self { smooth, nonsmooth }
    }

    pub fn energy(&self, x: &[T], theta: &[T]) -> T {
        self.smooth.value(x, theta) + self.nonsmooth.value(x)
    }
}

/// `min_u max_p <K(theta) u, p> + f(u; theta) + g(u) - h*(p)`
#[derive(Debug, Clone)]
pub struct SaddleProblem<T, S, C> {
    pub smooth: S,
    pub coupling: C,
    pub primal_g: SimpleFunction<T>,
    pub dual_h: SimpleFunction<T>,
}

/// Bregman geometries of the primal and the dual variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalDualGenerators {
    pub primal: BregmanGenerator,
    pub dual: BregmanGenerator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSizes<T> {
    ForwardBackward { alpha: T },
    PrimalDual { tau: T, sigma: T },
}

/// Recorded forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateTrace<T> {
    /// `x^0 ..= x^n` (the primal `u` for primal-dual runs).
    pub iterates: Vec<Vec<T>>,
    /// `p^0 ..= p^n`; empty for forward-backward runs.
    pub duals: Vec<Vec<T>>,
    /// Forward-step results `y^k = grad psi(x^k) - alpha grad f(x^k)`, `k < n`.
    pub intermediates: Vec<Vec<T>>,
    pub steps: StepSizes<T>,
    /// Running mean of the primal iterates, when requested.
    pub ergodic: Option<Vec<T>>,
    pub final_point: Vec<T>,
}

impl<T: Scalar> IterateTrace<T> {
    /// Number of recorded updates.
    pub fn len(&self) -> usize {
        self.iterates.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_primal_dual(&self) -> bool {
        matches!(self.steps, StepSizes::PrimalDual { .. })
    }

    /// State `k` of the algorithm: `x^k`, or `(u^k, p^k)` stacked for primal-dual.
    pub fn state(&self, k: usize) -> Vec<T> {
        if self.duals.is_empty() {
            self.iterates[k].clone()
        } else {
            let mut s = self.iterates[k].clone();
            s.extend_from_slice(&self.duals[k]);
            s
        }
    }

    pub fn last_state(&self) -> Vec<T> {
        self.state(self.len())
    }

    /// The trace of the first `k` updates, with the ergodic mean recomputed.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.len());
        let iterates = self.iterates[..=k].to_vec();
        let duals = if self.duals.is_empty() {
            Vec::new()
        } else {
            self.duals[..=k].to_vec()
        };
        let intermediates = self.intermediates[..k.min(self.intermediates.len())].to_vec();
        let ergodic = self.ergodic.as_ref().map(|_| mean_of(&iterates));
        let final_point = ergodic.clone().unwrap_or_else(|| iterates[k].clone());
        Self {
            iterates,
            duals,
            intermediates,
            steps: self.steps,
            ergodic,
            final_point,
        }
    }
}

/// Arithmetic mean of a nonempty list of vectors, summed in index order.
pub fn mean_of<T: Scalar>(vs: &[Vec<T>]) -> Vec<T> {
    let mut out = vec![T::zero(); vs[0].len()];
    for v in vs {
        vecops::add_assign(&mut out, v);
    }
    let inv = T::one() / T::lit(vs.len() as f64);
    out.iter_mut().for_each(|x| *x = *x * inv);
    out
}

pub(crate) fn iterate_ok<T: Scalar>(gen: &BregmanGenerator, x: &[T]) -> bool {
    x.iter().all(|v| v.is_finite())
        && match gen.kind() {
            GeneratorKind::Euclidean => true,
            GeneratorKind::EntropyOrthant => x.iter().all(|&v| v > T::zero()),
            GeneratorKind::EntropySimplex { .. } => x.iter().all(|&v| v >= T::zero()),
            GeneratorKind::BinaryEntropy => x.iter().all(|&v| v.abs() <= T::one()),
        }
}

/// One forward-backward step; returns the forward-step result `y` and the prox.
pub(crate) fn fbs_update<T: Scalar, S: SmoothTerm<T>>(
    problem: &LowerProblem<T, S>,
    gen: &BregmanGenerator,
    theta: &[T],
    x: &[T],
    alpha: T,
) -> (Vec<T>, ProxResult<T>) {
    let cost = problem.smooth.grad(x, theta);
    let mut y = gen.grad_unchecked(x);
    vecops::axpy(-alpha, &cost, &mut y);
    let prox = gen.prox_unchecked(&problem.nonsmooth, x, &cost, alpha);
    (y, prox)
}

pub(crate) fn validate_fbs<T: Scalar, S: SmoothTerm<T>>(
    problem: &LowerProblem<T, S>,
    gen: &BregmanGenerator,
    theta: &[T],
    x0: &[T],
    alpha: T,
) -> Result<()> {
    check_len("generator", problem.smooth.dim(), gen.dim())?;
    check_len("theta", problem.smooth.param_dim(), theta.len())?;
    let zero = vec![T::zero(); gen.dim()];
    gen.check_prox_args(&problem.nonsmooth, x0, &zero, alpha)?;
    gen.check_interior(x0)?;
    if let Some(lf) = problem.smooth.lipschitz(theta) {
        if lf > T::zero() && alpha > lf.recip() {
            warn!("forward-backward step {alpha} exceeds 1/L_f = {}", lf.recip());
        }
    }
    Ok(())
}

/// Default forward-backward step `1 / L_f`, if the Lipschitz constant is known and positive.
pub fn default_fbs_step<T: Scalar, S: SmoothTerm<T>>(smooth: &S, theta: &[T]) -> Option<T> {
    smooth
        .lipschitz(theta)
        .filter(|&l| l > T::zero())
        .map(|l| l.recip())
}

/// Runs `n` forward-backward updates
/// `x^{k+1} = prox^psi_{alpha g}(grad psi(x^k) - alpha grad f(x^k; theta))`.
pub fn fbs_run<T: Scalar, S: SmoothTerm<T>>(
    problem: &LowerProblem<T, S>,
    theta: &[T],
    x0: &[T],
    n: usize,
    alpha: T,
    gen: &BregmanGenerator,
) -> Result<IterateTrace<T>> {
    validate_fbs(problem, gen, theta, x0, alpha)?;
    let mut iterates = Vec::with_capacity(n + 1);
    let mut intermediates = Vec::with_capacity(n);
    iterates.push(x0.to_vec());
    for k in 0..n {
        let (y, prox) = fbs_update(problem, gen, theta, &iterates[k], alpha);
        if !iterate_ok(gen, &prox.point) {
            return Err(Error::Divergence { iteration: k + 1 });
        }
        intermediates.push(y);
        iterates.push(prox.point);
    }
    let final_point = iterates[n].clone();
    Ok(IterateTrace {
        iterates,
        duals: Vec::new(),
        intermediates,
        steps: StepSizes::ForwardBackward { alpha },
        ergodic: None,
        final_point,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdConfig<T> {
    pub iterations: usize,
    pub tau: T,
    pub sigma: T,
    pub ergodic: bool,
}

/// Largest equal pair `tau = sigma` with `(1/tau - L_f)/sigma >= L^2`, shrunk by 0.99.
/// Falls back to `1` when both constants vanish.
pub fn default_pd_steps<T: Scalar>(lipschitz_f: T, norm_k: T) -> (T, T) {
    let lf = lipschitz_f.max(T::zero());
    let l = norm_k.abs();
    if lf == T::zero() && l == T::zero() {
        return (T::one(), T::one());
    }
    let inv = (lf + (lf * lf + T::lit(4.0) * l * l).sqrt()) * T::lit(0.5);
    let t = T::lit(0.99) / inv;
    (t, t)
}

pub(crate) struct PdUpdate<T> {
    pub u_next: Vec<T>,
    pub p_next: Vec<T>,
    pub primal: ProxResult<T>,
    pub dual: ProxResult<T>,
    pub extrapolated: Vec<T>,
}

pub(crate) fn pd_update<T: Scalar, S: SmoothTerm<T>, C: Coupling<T>>(
    problem: &SaddleProblem<T, S, C>,
    gens: &PrimalDualGenerators,
    theta: &[T],
    u: &[T],
    p: &[T],
    tau: T,
    sigma: T,
) -> PdUpdate<T> {
    let mut cost_u = problem.smooth.grad(u, theta);
    vecops::add_assign(&mut cost_u, &problem.coupling.apply_adjoint(theta, p));
    let primal = gens
        .primal
        .prox_unchecked(&problem.primal_g, u, &cost_u, tau);
    let extrapolated: Vec<T> = primal
        .point
        .iter()
        .zip(u)
        .map(|(&a, &b)| a + a - b)
        .collect();
    let cost_p: Vec<T> = problem
        .coupling
        .apply(theta, &extrapolated)
        .into_iter()
        .map(|v| -v)
        .collect();
    let dual = gens.dual.prox_unchecked(&problem.dual_h, p, &cost_p, sigma);
    PdUpdate {
        u_next: primal.point.clone(),
        p_next: dual.point.clone(),
        primal,
        dual,
        extrapolated,
    }
}

pub(crate) fn validate_pd<T: Scalar, S: SmoothTerm<T>, C: Coupling<T>>(
    problem: &SaddleProblem<T, S, C>,
    gens: &PrimalDualGenerators,
    theta: &[T],
    tau: T,
    sigma: T,
) -> Result<()> {
    let du = problem.coupling.primal_dim();
    let dp = problem.coupling.dual_dim();
    check_len("smooth term", du, problem.smooth.dim())?;
    check_len("primal generator", du, gens.primal.dim())?;
    check_len("dual generator", dp, gens.dual.dim())?;
    check_len("theta", problem.smooth.param_dim(), theta.len())?;
    gens.primal
        .check_prox_args(&problem.primal_g, &vec![T::zero(); du], &vec![T::zero(); du], tau)?;
    gens.dual
        .check_prox_args(&problem.dual_h, &vec![T::zero(); dp], &vec![T::zero(); dp], sigma)?;
    let lf = problem.smooth.lipschitz(theta).unwrap_or_else(T::zero);
    let l = problem.coupling.norm_bound(theta);
    let lhs = (tau.recip() - lf) * sigma.recip();
    let rhs = l * l;
    if !(tau.recip() > lf) || lhs < rhs * (T::one() - T::lit(1e-12)) {
        return Err(Error::Config(format!(
            "primal-dual steps tau = {tau}, sigma = {sigma} violate (1/tau - L_f)/sigma >= |K|^2 \
             (L_f = {lf}, |K| = {l})"
        )));
    }
    Ok(())
}

/// Runs the Bregman primal-dual algorithm
///
/// ```text
/// u^{k+1} = prox^{psi_u}_{tau g}(u^k; grad f(u^k) + K^T p^k)
/// p^{k+1} = prox^{psi_p}_{sigma h*}(p^k; -K (2 u^{k+1} - u^k))
/// ```
///
/// With `ergodic` set, the running mean of `u^0 ..= u^n` is returned as the final point.
pub fn pd_run<T: Scalar, S: SmoothTerm<T>, C: Coupling<T>>(
    problem: &SaddleProblem<T, S, C>,
    theta: &[T],
    u0: &[T],
    p0: &[T],
    config: &PdConfig<T>,
    gens: &PrimalDualGenerators,
) -> Result<IterateTrace<T>> {
    let PdConfig {
        iterations: n,
        tau,
        sigma,
        ergodic,
    } = *config;
    validate_pd(problem, gens, theta, tau, sigma)?;
    gens.primal.check_interior(u0)?;
    gens.dual.check_interior(p0)?;

    let mut iterates = Vec::with_capacity(n + 1);
    let mut duals = Vec::with_capacity(n + 1);
    iterates.push(u0.to_vec());
    duals.push(p0.to_vec());
    let mut mean = u0.to_vec();
    for k in 0..n {
        let step = pd_update(problem, gens, theta, &iterates[k], &duals[k], tau, sigma);
        if !iterate_ok(&gens.primal, &step.u_next) || !iterate_ok(&gens.dual, &step.p_next) {
            return Err(Error::Divergence { iteration: k + 1 });
        }
        if ergodic {
            // s^{k+1} = u^{k+1} / (k+2) + (k+1)/(k+2) s^k
            let w_new = T::one() / T::lit((k + 2) as f64);
            let w_old = T::lit((k + 1) as f64) * w_new;
            for (m, &u) in mean.iter_mut().zip(&step.u_next) {
                *m = w_new * u + w_old * *m;
            }
        }
        iterates.push(step.u_next);
        duals.push(step.p_next);
    }
    let final_point = if ergodic {
        mean.clone()
    } else {
        iterates[n].clone()
    };
    Ok(IterateTrace {
        iterates,
        duals,
        intermediates: Vec::new(),
        steps: StepSizes::PrimalDual { tau, sigma },
        ergodic: ergodic.then_some(mean),
        final_point,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate<T> {
    pub value: T,
    pub iterations: usize,
}

/// Power-iteration estimate of `|K|` (a lower bound that converges to the norm).
///
/// The start vector is the deterministic ramped alternating sequence
/// `(-1)^i (1 + i/d)`; a pure `±1` pattern is orthogonal to the dominant singular
/// vector of grid difference operators with an even width.
pub fn operator_norm_bound<T: Scalar, O: LinearOperator<T> + ?Sized>(
    op: &O,
    iterations: usize,
) -> NormEstimate<T> {
    let d = op.input_dim();
    if d == 0 {
        return NormEstimate {
            value: T::zero(),
            iterations: 0,
        };
    }
    let mut v: Vec<T> = (0..d)
        .map(|i| {
            let sign = if i % 2 == 0 { T::one() } else { -T::one() };
            sign * (T::one() + T::lit(i as f64 / d as f64))
        })
        .collect();
    let mut estimate = T::zero();
    for it in 0..iterations {
        let nv = vecops::norm(&v);
        if nv == T::zero() {
            return NormEstimate {
                value: T::zero(),
                iterations: it,
            };
        }
        v.iter_mut().for_each(|x| *x = *x / nv);
        let kv = op.apply(&v);
        estimate = vecops::norm(&kv);
        v = op.apply_adjoint(&kv);
    }
    NormEstimate {
        value: estimate,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// `f(x; theta) = 0.5 |x - theta|^2 * weight`
    struct Pull {
        weight: f64,
        dim: usize,
    }

    impl SmoothTerm<f64> for Pull {
        fn dim(&self) -> usize {
            self.dim
        }
        fn param_dim(&self) -> usize {
            self.dim
        }
        fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
            0.5 * self.weight * vecops::norm_diff(x, theta).powi(2)
        }
        fn grad(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
            x.iter().zip(theta).map(|(a, b)| self.weight * (a - b)).collect()
        }
        fn hess_apply(&self, _x: &[f64], _t: &[f64], v: &[f64]) -> Vec<f64> {
            vecops::scale(self.weight, v)
        }
        fn mixed_apply_transpose(&self, _x: &[f64], _t: &[f64], v: &[f64]) -> Vec<f64> {
            vecops::scale(-self.weight, v)
        }
        fn mixed_apply(&self, _x: &[f64], _t: &[f64], d: &[f64]) -> Vec<f64> {
            vecops::scale(-self.weight, d)
        }
        fn lipschitz(&self, _t: &[f64]) -> Option<f64> {
            Some(self.weight)
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let p = LowerProblem::new(Pull { weight: 0.0, dim: 3 }, SimpleFunction::Zero);
        let x0 = [0.3, -1.0, 2.0];
        let tr = fbs_run(&p, &[0.0; 3], &x0, 7, 0.5, &BregmanGenerator::euclidean(3)).unwrap();
        assert_eq!(tr.len(), 7);
        assert_eq!(tr.intermediates.len(), 7);
        assert!(tr.iterates.iter().all(|x| x == &x0.to_vec()));
    }

    #[test]
    fn projected_gradient_on_pull() {
        let p = LowerProblem::new(Pull { weight: 1.0, dim: 2 }, SimpleFunction::NonNegative);
        let tr = fbs_run(&p, &[-1.0, 0.5], &[1.0, 1.0], 1, 1.0, &BregmanGenerator::euclidean(2))
            .unwrap();
        assert_eq!(tr.final_point, vec![0.0, 0.5]);
    }

    #[test]
    fn fbs_rejects_exterior_start() {
        let p = LowerProblem::new(Pull { weight: 1.0, dim: 1 }, SimpleFunction::Zero);
        let err = fbs_run(&p, &[0.0], &[-0.1], 3, 0.5, &BregmanGenerator::entropy_orthant(1))
            .unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn fbs_reports_underflow_as_divergence() {
        // huge pull toward a negative target drives the entropy iterate to exactly 0
        let p = LowerProblem::new(Pull { weight: 1e6, dim: 1 }, SimpleFunction::Zero);
        let err = fbs_run(&p, &[-1.0], &[1.0], 50, 1.0, &BregmanGenerator::entropy_orthant(1))
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn norm_of_identity_and_zero() {
        let id = DenseMatrix::<f64>::identity(5);
        assert_relative_eq!(operator_norm_bound(&id, 100).value, 1.0, epsilon = 1e-6);
        let z = DenseMatrix::<f64>::zeros(4, 5);
        assert_eq!(operator_norm_bound(&z, 100).value, 0.0);
    }

    #[test]
    fn default_steps_satisfy_the_inequality() {
        for &(lf, l) in &[(0.0, 2.0), (1.5, 0.0), (3.0, 2.5), (0.0, 0.0)] {
            let (t, s) = default_pd_steps(lf, l);
            assert!((1.0 / t - lf) / s >= l * l);
        }
    }

    #[test]
    fn pd_with_zero_everything_is_stationary() {
        let problem = SaddleProblem {
            smooth: Pull { weight: 0.0, dim: 2 },
            coupling: ZeroCoupling {
                primal_dim: 2,
                dual_dim: 3,
            },
            primal_g: SimpleFunction::Zero,
            dual_h: SimpleFunction::Zero,
        };
        let gens = PrimalDualGenerators {
            primal: BregmanGenerator::euclidean(2),
            dual: BregmanGenerator::euclidean(3),
        };
        let cfg = PdConfig {
            iterations: 5,
            tau: 1.0,
            sigma: 1.0,
            ergodic: true,
        };
        let u0 = [0.2, 0.7];
        let p0 = [0.1, -0.3, 0.0];
        let tr = pd_run(&problem, &[0.0, 0.0], &u0, &p0, &cfg, &gens).unwrap();
        assert!(tr.iterates.iter().all(|u| u == &u0.to_vec()));
        assert!(tr.duals.iter().all(|p| p == &p0.to_vec()));
        assert_eq!(tr.final_point, u0.to_vec());
    }

    #[test]
    fn pd_rejects_large_steps() {
        let problem = SaddleProblem {
            smooth: Pull { weight: 1.0, dim: 2 },
            coupling: FixedCoupling::new(DenseMatrix::<f64>::identity(2)),
            primal_g: SimpleFunction::Zero,
            dual_h: SimpleFunction::Zero,
        };
        let gens = PrimalDualGenerators {
            primal: BregmanGenerator::euclidean(2),
            dual: BregmanGenerator::euclidean(2),
        };
        let cfg = PdConfig {
            iterations: 1,
            tau: 0.9,
            sigma: 0.9,
            ergodic: false,
        };
        let err = pd_run(&problem, &[0.0; 2], &[0.0; 2], &[0.0; 2], &cfg, &gens).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}

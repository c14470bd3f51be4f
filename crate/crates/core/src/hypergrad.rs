//! Hypergradient estimators: reverse-mode unrolling (generic, forward-backward and
//! primal-dual), forward-mode unrolling, and the two fixed-point estimators.

use crate::bregman::BregmanGenerator;
use crate::error::{check_len, Error, NotConverged, Result};
use crate::lower::{
    fbs_update, iterate_ok, pd_update, validate_pd, Coupling, IterateTrace, LowerProblem, PrimalDualGenerators,
    SaddleProblem, SmoothTerm, StepSizes,
};
use crate::scalar::vecops;
use crate::Scalar;

/// Number of consecutive growing back-iterations that triggers the spectral warning.
pub const GROWTH_WINDOW: usize = 20;

/// Partial derivatives of the upper-level loss at the final point.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads<T> {
    pub wrt_x: Vec<T>,
    pub wrt_theta: Vec<T>,
}

impl<T: Scalar> LossGrads<T> {
    pub fn new(wrt_x: Vec<T>, wrt_theta: Vec<T>) -> Self {
        Self { wrt_x, wrt_theta }
    }

    /// Loss that depends on the lower-level solution only.
    pub fn state_only(wrt_x: Vec<T>, param_dim: usize) -> Self {
        Self {
            wrt_x,
            wrt_theta: vec![T::zero(); param_dim],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    ReverseAbstract,
    ReverseFbs,
    ReversePd,
    ForwardUnrolled,
    FixedPointNeumann,
    FixedPointImplicit,
    SmoothedImplicit,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::ReverseAbstract => "reverse-abstract",
            Estimator::ReverseFbs => "reverse-fbs",
            Estimator::ReversePd => "reverse-pd",
            Estimator::ForwardUnrolled => "forward-unrolled",
            Estimator::FixedPointNeumann => "fixedpoint-neumann",
            Estimator::FixedPointImplicit => "fixedpoint-implicit",
            Estimator::SmoothedImplicit => "smoothed-implicit",
        }
    }
}

/// An estimate of `dL/dtheta`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport<T> {
    pub gradient: Vec<T>,
    /// `|w^k - w^{k+1}|` for every back-iteration, in the order they were taken.
    pub contributions: Vec<T>,
    pub estimator: Estimator,
    pub n_forward: usize,
    pub n_back: usize,
    /// `|x* - A(x*)|` for fixed-point estimators.
    pub fixed_point_residual: Option<T>,
    /// Final residual of an inner linear solve.
    pub solve_residual: Option<T>,
    /// `|grad_x E(x*)|` for the smoothed estimator.
    pub stationarity: Option<T>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> GradientReport<T> {
    fn new(estimator: Estimator, gradient: Vec<T>, n_forward: usize, n_back: usize) -> Self {
        Self {
            gradient,
            contributions: Vec::new(),
            estimator,
            n_forward,
            n_back,
            fixed_point_residual: None,
            solve_residual: None,
            stationarity: None,
            warnings: Vec::new(),
        }
    }
}

/// One step `x -> A(x, theta)` of an iterative algorithm with its derivatives.
pub trait StepMap<T: Scalar> {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn apply(&self, x: &[T], theta: &[T]) -> Vec<T>;
    /// `((dA/dx)^T v, (dA/dtheta)^T v)`
    fn vjp(&self, x: &[T], theta: &[T], v: &[T]) -> (Vec<T>, Vec<T>);
    /// `(dA/dx) dx + (dA/dtheta) dtheta`
    fn jvp(&self, x: &[T], theta: &[T], dx: &[T], dtheta: &[T]) -> Vec<T>;
    /// Whether `x` is a valid iterate; forward passes stop with a divergence error otherwise.
    fn admissible(&self, _x: &[T]) -> bool {
        true
    }
    /// Rejects configurations the step cannot evaluate. The estimators call this
    /// once before the first `apply`/`vjp`/`jvp`.
    fn check(&self, _x: &[T], _theta: &[T]) -> Result<()> {
        Ok(())
    }
}

/// The Bregman forward-backward step `x -> prox(x; grad f(x; theta))`.
#[derive(Debug, Clone, Copy)]
pub struct FbsStep<'a, T, S> {
    pub problem: &'a LowerProblem<T, S>,
    pub gen: BregmanGenerator,
    pub alpha: T,
}

impl<'a, T: Scalar, S: SmoothTerm<T>> FbsStep<'a, T, S> {
    pub fn new(problem: &'a LowerProblem<T, S>, gen: BregmanGenerator, alpha: T) -> Self {
        Self {
            problem,
            gen,
            alpha,
        }
    }
}

impl<T: Scalar, S: SmoothTerm<T>> StepMap<T> for FbsStep<'_, T, S> {
    fn state_dim(&self) -> usize {
        self.gen.dim()
    }
    fn check(&self, x: &[T], theta: &[T]) -> Result<()> {
        check_len("generator", self.problem.smooth.dim(), self.gen.dim())?;
        check_len("theta", self.problem.smooth.param_dim(), theta.len())?;
        let zero = vec![T::zero(); self.gen.dim()];
        self.gen.check_prox_args(&self.problem.nonsmooth, x, &zero, self.alpha)?;
        self.gen.check_interior(x)
    }
    fn param_dim(&self) -> usize {
        self.problem.smooth.param_dim()
    }
    fn apply(&self, x: &[T], theta: &[T]) -> Vec<T> {
        fbs_update(self.problem, &self.gen, theta, x, self.alpha).1.point
    }
    fn vjp(&self, x: &[T], theta: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        let (_, prox) = fbs_update(self.problem, &self.gen, theta, x, self.alpha);
        let s = prox.jacobian_wrt_cost.apply_transpose(v);
        let mut zx = prox.jacobian_wrt_point.apply_transpose(v);
        vecops::add_assign(&mut zx, &self.problem.smooth.hess_apply(x, theta, &s));
        let zt = self.problem.smooth.mixed_apply_transpose(x, theta, &s);
        (zx, zt)
    }
    fn jvp(&self, x: &[T], theta: &[T], dx: &[T], dtheta: &[T]) -> Vec<T> {
        let (_, prox) = fbs_update(self.problem, &self.gen, theta, x, self.alpha);
        let mut dc = self.problem.smooth.hess_apply(x, theta, dx);
        vecops::add_assign(&mut dc, &self.problem.smooth.mixed_apply(x, theta, dtheta));
        let mut out = prox.jacobian_wrt_point.apply(dx);
        vecops::add_assign(&mut out, &prox.jacobian_wrt_cost.apply(&dc));
        out
    }
    fn admissible(&self, x: &[T]) -> bool {
        iterate_ok(&self.gen, x)
    }
}

/// The Bregman primal-dual step on the stacked state `(u, p)`.
#[derive(Debug, Clone, Copy)]
pub struct PdStep<'a, T, S, C> {
    pub problem: &'a SaddleProblem<T, S, C>,
    pub gens: PrimalDualGenerators,
    pub tau: T,
    pub sigma: T,
}

impl<'a, T: Scalar, S: SmoothTerm<T>, C: Coupling<T>> PdStep<'a, T, S, C> {
    pub fn new(problem: &'a SaddleProblem<T, S, C>, gens: PrimalDualGenerators, tau: T, sigma: T) -> Self {
        Self {
            problem,
            gens,
            tau,
            sigma,
        }
    }

    fn split<'v>(&self, x: &'v [T]) -> (&'v [T], &'v [T]) {
        x.split_at(self.gens.primal.dim())
    }

    /// Back-propagates the cotangents `(a, b)` of `(u^{k+1}, p^{k+1})` to `(u^k, p^k)`
    /// and `theta`.
    fn pullback(&self, u: &[T], p: &[T], theta: &[T], a: &[T], b: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let pr = self.problem;
        let step = pd_update(pr, &self.gens, theta, u, p, self.tau, self.sigma);

        // dual update p' = P_p(p, -K(theta) (2u' - u))
        let t = step.dual.jacobian_wrt_cost.apply_transpose(b);
        let mut zp = step.dual.jacobian_wrt_point.apply_transpose(b);
        let ext_bar: Vec<T> = pr.coupling.apply_adjoint(theta, &t).iter().map(|&v| -v).collect();
        let mut zt: Vec<T> = pr
            .coupling
            .param_vjp(theta, &step.extrapolated, &t)
            .iter()
            .map(|&v| -v)
            .collect();
        let mut a_total = a.to_vec();
        vecops::axpy(T::lit(2.0), &ext_bar, &mut a_total);
        let mut zu: Vec<T> = ext_bar.iter().map(|&v| -v).collect();

        // primal update u' = P_u(u, grad f(u) + K(theta)^T p)
        let s = step.primal.jacobian_wrt_cost.apply_transpose(&a_total);
        vecops::add_assign(&mut zu, &step.primal.jacobian_wrt_point.apply_transpose(&a_total));
        vecops::add_assign(&mut zu, &pr.smooth.hess_apply(u, theta, &s));
        vecops::add_assign(&mut zp, &pr.coupling.apply(theta, &s));
        vecops::add_assign(&mut zt, &pr.smooth.mixed_apply_transpose(u, theta, &s));
        vecops::add_assign(&mut zt, &pr.coupling.param_vjp(theta, &s, p));
        (zu, zp, zt)
    }
}

impl<T: Scalar, S: SmoothTerm<T>, C: Coupling<T>> StepMap<T> for PdStep<'_, T, S, C> {
    fn state_dim(&self) -> usize {
        self.gens.primal.dim() + self.gens.dual.dim()
    }
    fn check(&self, x: &[T], theta: &[T]) -> Result<()> {
        validate_pd(self.problem, &self.gens, theta, self.tau, self.sigma)?;
        check_len("primal-dual state", self.state_dim(), x.len())?;
        let (u, p) = self.split(x);
        self.gens.primal.check_interior(u)?;
        self.gens.dual.check_interior(p)
    }
    fn param_dim(&self) -> usize {
        self.problem.smooth.param_dim()
    }
    fn apply(&self, x: &[T], theta: &[T]) -> Vec<T> {
        let (u, p) = self.split(x);
        let step = pd_update(self.problem, &self.gens, theta, u, p, self.tau, self.sigma);
        let mut out = step.u_next;
        out.extend_from_slice(&step.p_next);
        out
    }
    fn vjp(&self, x: &[T], theta: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        let (u, p) = self.split(x);
        let (a, b) = self.split(v);
        let (mut zu, zp, zt) = self.pullback(u, p, theta, a, b);
        zu.extend_from_slice(&zp);
        (zu, zt)
    }
    fn jvp(&self, x: &[T], theta: &[T], dx: &[T], dtheta: &[T]) -> Vec<T> {
        let pr = self.problem;
        let (u, p) = self.split(x);
        let (du, dp) = self.split(dx);
        let step = pd_update(pr, &self.gens, theta, u, p, self.tau, self.sigma);

        let mut dcu = pr.smooth.hess_apply(u, theta, du);
        vecops::add_assign(&mut dcu, &pr.smooth.mixed_apply(u, theta, dtheta));
        vecops::add_assign(&mut dcu, &pr.coupling.apply_adjoint(theta, dp));
        vecops::add_assign(&mut dcu, &pr.coupling.param_adjoint_jvp(theta, p, dtheta));
        let mut du_next = step.primal.jacobian_wrt_point.apply(du);
        vecops::add_assign(&mut du_next, &step.primal.jacobian_wrt_cost.apply(&dcu));

        let dext: Vec<T> = du_next.iter().zip(du).map(|(&a, &b)| a + a - b).collect();
        let mut kd = pr.coupling.apply(theta, &dext);
        vecops::add_assign(&mut kd, &pr.coupling.param_jvp(theta, &step.extrapolated, dtheta));
        let dcp: Vec<T> = kd.iter().map(|&v| -v).collect();
        let mut dp_next = step.dual.jacobian_wrt_point.apply(dp);
        vecops::add_assign(&mut dp_next, &step.dual.jacobian_wrt_cost.apply(&dcp));

        du_next.extend_from_slice(&dp_next);
        du_next
    }
    fn admissible(&self, x: &[T]) -> bool {
        let (u, p) = self.split(x);
        iterate_ok(&self.gens.primal, u) && iterate_ok(&self.gens.dual, p)
    }
}

fn check_back<T: Scalar>(trace: &IterateTrace<T>, n_back: usize) -> Result<()> {
    if n_back > trace.len() {
        return Err(Error::Config(format!(
            "n_back = {n_back} exceeds the {} recorded updates",
            trace.len()
        )));
    }
    Ok(())
}

/// Cotangent of the last recorded state. For primal-dual traces a primal-only
/// loss gradient is padded with zeros in the dual block.
fn seed<T: Scalar>(trace: &IterateTrace<T>, wrt_x: &[T]) -> Result<Vec<T>> {
    let primal = trace.iterates[0].len();
    let dual = trace.duals.first().map_or(0, Vec::len);
    if wrt_x.len() == primal + dual {
        Ok(wrt_x.to_vec())
    } else {
        check_len("loss gradient wrt x", primal, wrt_x.len())?;
        let mut z = wrt_x.to_vec();
        z.resize(primal + dual, T::zero());
        Ok(z)
    }
}

/// Flags `GROWTH_WINDOW` consecutive increases of `|z|`.
#[derive(Default)]
struct GrowthMonitor {
    last: Option<f64>,
    run: usize,
    fired: bool,
}

impl GrowthMonitor {
    fn observe<T: Scalar>(&mut self, z: &[T]) {
        let n = vecops::norm(z).as_f64();
        if let Some(prev) = self.last {
            self.run = if n > prev { self.run + 1 } else { 0 };
            if self.run >= GROWTH_WINDOW {
                self.fired = true;
            }
        }
        self.last = Some(n);
    }

    fn warning(&self) -> Option<String> {
        self.fired.then(|| {
            format!(
                "|z| grew over {GROWTH_WINDOW} consecutive back-iterations; \
                 the step map may not be contractive at this point"
            )
        })
    }
}

fn finish<T: Scalar>(w: Vec<T>, loss: &LossGrads<T>) -> Result<Vec<T>> {
    check_len("loss gradient wrt theta", w.len(), loss.wrt_theta.len())?;
    Ok(vecops::add(&w, &loss.wrt_theta))
}

/// Reverse-mode differentiation of an abstract algorithm `x^{k+1} = A(x^k, theta)`:
///
/// ```text
/// w^k = w^{k+1} + (dA/dtheta)^T z^{k+1},   z^k = (dA/dx)^T z^{k+1}
/// ```
///
/// over the last `n_back` recorded steps; returns `w + dL/dtheta`.
pub fn reverse_abstract<T: Scalar, M: StepMap<T> + ?Sized>(
    trace: &IterateTrace<T>,
    step: &M,
    theta: &[T],
    loss: &LossGrads<T>,
    n_back: usize,
) -> Result<GradientReport<T>> {
    check_back(trace, n_back)?;
    check_len("theta", step.param_dim(), theta.len())?;
    step.check(&trace.state(0), theta)?;
    let n = trace.len();
    let mut z = seed(trace, &loss.wrt_x)?;
    check_len("trace state", step.state_dim(), z.len())?;
    let mut w = vec![T::zero(); theta.len()];
    let mut contributions = Vec::with_capacity(n_back);
    let mut monitor = GrowthMonitor::default();
    for k in (n - n_back..n).rev() {
        let (zx, zt) = step.vjp(&trace.state(k), theta, &z);
        contributions.push(vecops::norm(&zt));
        vecops::add_assign(&mut w, &zt);
        z = zx;
        monitor.observe(&z);
    }
    let mut report = GradientReport::new(Estimator::ReverseAbstract, finish(w, loss)?, n, n_back);
    report.contributions = contributions;
    report.warnings.extend(monitor.warning());
    Ok(report)
}

/// Reverse-mode differentiation of Bregman forward-backward splitting with the
/// prox derivative evaluated at the recorded forward-step results
/// `y^k = grad psi(x^k) - alpha grad f(x^k; theta)`.
pub fn reverse_fbs<T: Scalar, S: SmoothTerm<T>>(
    trace: &IterateTrace<T>,
    problem: &LowerProblem<T, S>,
    gen: &BregmanGenerator,
    theta: &[T],
    loss: &LossGrads<T>,
    n_back: usize,
) -> Result<GradientReport<T>> {
    let StepSizes::ForwardBackward { alpha } = trace.steps else {
        return Err(Error::Config("reverse_fbs needs a forward-backward trace".into()));
    };
    check_back(trace, n_back)?;
    check_len("theta", problem.smooth.param_dim(), theta.len())?;
    check_len("generator", trace.iterates[0].len(), gen.dim())?;
    let n = trace.len();
    let mut z = seed(trace, &loss.wrt_x)?;
    let mut w = vec![T::zero(); theta.len()];
    let mut contributions = Vec::with_capacity(n_back);
    let mut monitor = GrowthMonitor::default();
    for k in (n - n_back..n).rev() {
        let x = &trace.iterates[k];
        let zy = gen.mirror_vjp(&problem.nonsmooth, &trace.intermediates[k], &trace.iterates[k + 1], &z);
        let zt: Vec<T> = problem
            .smooth
            .mixed_apply_transpose(x, theta, &zy)
            .iter()
            .map(|&v| -alpha * v)
            .collect();
        let hpsi = gen.hess_diag(x);
        let hf = problem.smooth.hess_apply(x, theta, &zy);
        z = hpsi
            .iter()
            .zip(&zy)
            .zip(&hf)
            .map(|((&h, &a), &b)| h * a - alpha * b)
            .collect();
        contributions.push(vecops::norm(&zt));
        vecops::add_assign(&mut w, &zt);
        monitor.observe(&z);
    }
    let mut report = GradientReport::new(Estimator::ReverseFbs, finish(w, loss)?, n, n_back);
    report.contributions = contributions;
    report.warnings.extend(monitor.warning());
    Ok(report)
}

/// Reverse-mode differentiation of the Bregman primal-dual algorithm.
///
/// The cotangents of `u^k` and `p^k` run backwards together; the dual update's
/// dependence on the extrapolation `2u^{k+1} - u^k` feeds twice into the adjoint of
/// `u^{k+1}` and negatively into that of `u^k`. With `ergodic` set the loss is taken
/// at the primal mean, so every visited `u^k` receives `dL/du / (n+1)`; by linearity
/// this equals averaging the per-iterate gradients.
pub fn reverse_pd<T: Scalar, S: SmoothTerm<T>, C: Coupling<T>>(
    trace: &IterateTrace<T>,
    problem: &SaddleProblem<T, S, C>,
    gens: &PrimalDualGenerators,
    theta: &[T],
    loss: &LossGrads<T>,
    n_back: usize,
    ergodic: bool,
) -> Result<GradientReport<T>> {
    let StepSizes::PrimalDual { tau, sigma } = trace.steps else {
        return Err(Error::Config("reverse_pd needs a primal-dual trace".into()));
    };
    check_back(trace, n_back)?;
    check_len("theta", problem.smooth.param_dim(), theta.len())?;
    check_len("primal generator", trace.iterates[0].len(), gens.primal.dim())?;
    check_len("loss gradient wrt u", gens.primal.dim(), loss.wrt_x.len())?;
    let step = PdStep::new(problem, *gens, tau, sigma);
    let n = trace.len();
    let inject = if ergodic {
        vecops::scale(T::one() / T::lit((n + 1) as f64), &loss.wrt_x)
    } else {
        loss.wrt_x.clone()
    };
    let mut zu = inject.clone();
    let mut zp = vec![T::zero(); gens.dual.dim()];
    let mut w = vec![T::zero(); theta.len()];
    let mut contributions = Vec::with_capacity(n_back);
    let mut monitor = GrowthMonitor::default();
    for k in (n - n_back..n).rev() {
        let (u_bar, p_bar, zt) = step.pullback(&trace.iterates[k], &trace.duals[k], theta, &zu, &zp);
        contributions.push(vecops::norm(&zt));
        vecops::add_assign(&mut w, &zt);
        zu = u_bar;
        zp = p_bar;
        if ergodic {
            vecops::add_assign(&mut zu, &inject);
        }
        monitor.observe(&zu);
    }
    let mut report = GradientReport::new(Estimator::ReversePd, finish(w, loss)?, n, n_back);
    report.contributions = contributions;
    report.warnings.extend(monitor.warning());
    Ok(report)
}

/// Tangents `dx^n/dtheta . v` for every requested direction `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult<T> {
    pub final_state: Vec<T>,
    pub directions: Vec<Vec<T>>,
    pub tangents: Vec<Vec<T>>,
    pub n_forward: usize,
}

impl<T: Scalar> ForwardResult<T> {
    /// `<dL/dx, t_i> + <dL/dtheta, v_i>` for each direction `v_i`.
    pub fn directional_derivatives(&self, loss: &LossGrads<T>) -> Vec<T> {
        let dim = self.final_state.len();
        self.tangents
            .iter()
            .zip(&self.directions)
            .map(|(t, v)| {
                let lx = if loss.wrt_x.len() == dim {
                    vecops::dot(&loss.wrt_x, t)
                } else {
                    vecops::dot(&loss.wrt_x, &t[..loss.wrt_x.len()])
                };
                lx + vecops::dot(&loss.wrt_theta, v)
            })
            .collect()
    }

    /// The full gradient, when the directions are the canonical basis.
    pub fn gradient_report(&self, loss: &LossGrads<T>) -> GradientReport<T> {
        GradientReport::new(
            Estimator::ForwardUnrolled,
            self.directional_derivatives(loss),
            self.n_forward,
            0,
        )
    }
}

/// The canonical basis of `R^p`.
pub fn basis<T: Scalar>(p: usize) -> Vec<Vec<T>> {
    (0..p)
        .map(|i| {
            let mut e = vec![T::zero(); p];
            e[i] = T::one();
            e
        })
        .collect()
}

/// Forward-mode unrolling: runs `n` steps from the parameter-independent `x0`,
/// carrying `dx^k/dtheta . v` alongside.
pub fn forward_unrolled<T: Scalar, M: StepMap<T> + ?Sized>(
    step: &M,
    theta: &[T],
    x0: &[T],
    n: usize,
    directions: &[Vec<T>],
) -> Result<ForwardResult<T>> {
    if directions.is_empty() {
        return Err(Error::Config("forward mode needs at least one direction".into()));
    }
    check_len("initial state", step.state_dim(), x0.len())?;
    check_len("theta", step.param_dim(), theta.len())?;
    for d in directions {
        check_len("direction", theta.len(), d.len())?;
    }
    step.check(x0, theta)?;
    let mut x = x0.to_vec();
    let mut tangents = vec![vec![T::zero(); x0.len()]; directions.len()];
    for k in 0..n {
        for (t, d) in tangents.iter_mut().zip(directions) {
            *t = step.jvp(&x, theta, t, d);
        }
        x = step.apply(&x, theta);
        if !step.admissible(&x) {
            return Err(Error::Divergence { iteration: k + 1 });
        }
    }
    Ok(ForwardResult {
        final_state: x,
        directions: directions.to_vec(),
        tangents,
        n_forward: n,
    })
}

/// Fixed-point gradient with the inverse `(I - dA/dx)^{-T}` replaced by the truncated
/// geometric series of length `n0`, all Jacobians taken at `xstar`.
pub fn fixedpoint_neumann<T: Scalar, M: StepMap<T> + ?Sized>(
    xstar: &[T],
    step: &M,
    theta: &[T],
    n0: usize,
    loss: &LossGrads<T>,
) -> Result<GradientReport<T>> {
    check_len("fixed point", step.state_dim(), xstar.len())?;
    check_len("theta", step.param_dim(), theta.len())?;
    step.check(xstar, theta)?;
    check_len("loss gradient wrt x", xstar.len(), loss.wrt_x.len())?;
    let mut z = loss.wrt_x.clone();
    let mut w = vec![T::zero(); theta.len()];
    let mut contributions = Vec::with_capacity(n0);
    let mut monitor = GrowthMonitor::default();
    for _ in 0..n0 {
        let (zx, zt) = step.vjp(xstar, theta, &z);
        contributions.push(vecops::norm(&zt));
        vecops::add_assign(&mut w, &zt);
        z = zx;
        monitor.observe(&z);
    }
    let mut report = GradientReport::new(Estimator::FixedPointNeumann, finish(w, loss)?, 0, n0);
    report.contributions = contributions;
    report.fixed_point_residual = Some(vecops::norm_diff(xstar, &step.apply(xstar, theta)));
    report.warnings.extend(monitor.warning());
    Ok(report)
}

/// Fixed-point gradient from the adjoint system `(I - dA/dx)^T z = dL/dx`, solved by
/// the transposed fixed-point iteration `z <- (dA/dx)^T z + dL/dx` until the update
/// falls below `tol * |dL/dx|`.
pub fn fixedpoint_implicit<T: Scalar, M: StepMap<T> + ?Sized>(
    xstar: &[T],
    step: &M,
    theta: &[T],
    loss: &LossGrads<T>,
    tol: T,
    max_solve_iters: usize,
) -> Result<GradientReport<T>, ImplicitError<T>> {
    check_len("fixed point", step.state_dim(), xstar.len())?;
    check_len("theta", step.param_dim(), theta.len())?;
    step.check(xstar, theta)?;
    check_len("loss gradient wrt x", xstar.len(), loss.wrt_x.len())?;
    check_len("loss gradient wrt theta", theta.len(), loss.wrt_theta.len())?;
    let g = &loss.wrt_x;
    let scale = vecops::norm(g);
    let fp_residual = vecops::norm_diff(xstar, &step.apply(xstar, theta));

    let mut z = g.clone();
    let mut best = (T::infinity(), z.clone());
    let mut residual = if scale == T::zero() { T::zero() } else { T::infinity() };
    let mut iterations = 0;
    while residual > tol * scale && iterations < max_solve_iters {
        let (mut zx, _) = step.vjp(xstar, theta, &z);
        vecops::add_assign(&mut zx, g);
        residual = vecops::norm_diff(&zx, &z);
        z = zx;
        iterations += 1;
        if residual < best.0 {
            best = (residual, z.clone());
        }
    }
    let converged = residual <= tol * scale;
    let z_used = if converged { z } else { best.1 };
    let (_, zt) = step.vjp(xstar, theta, &z_used);
    let mut report = GradientReport::new(
        Estimator::FixedPointImplicit,
        vecops::add(&zt, &loss.wrt_theta),
        0,
        iterations,
    );
    report.fixed_point_residual = Some(fp_residual);
    let rel = if scale > T::zero() {
        if converged {
            residual / scale
        } else {
            best.0 / scale
        }
    } else {
        T::zero()
    };
    report.solve_residual = Some(rel);
    if converged {
        Ok(report)
    } else {
        Err(ImplicitError::NotConverged(NotConverged {
            best: report,
            residual: rel,
            iterations,
        }))
    }
}

/// Failure of an implicit estimator: either invalid input or a linear solve that
/// stopped above tolerance (with the best estimate attached).
#[derive(Debug, Clone, thiserror::Error)]
pub enum ImplicitError<T: Scalar> {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error(transparent)]
    NotConverged(NotConverged<T>),
}

impl<T: Scalar> From<ImplicitError<T>> for Error {
    fn from(e: ImplicitError<T>) -> Self {
        match e {
            ImplicitError::Invalid(e) => e,
            ImplicitError::NotConverged(nc) => nc.into(),
        }
    }
}

impl<T: Scalar> ImplicitError<T> {
    /// The estimate, converged or not; `None` only for invalid input.
    pub fn into_best(self) -> Option<GradientReport<T>> {
        match self {
            ImplicitError::Invalid(_) => None,
            ImplicitError::NotConverged(nc) => {
                let msg = nc.to_string();
                let mut best = nc.best;
                best.warnings.push(msg);
                Some(best)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bregman::SimpleFunction;
    use crate::lower::{fbs_run, DenseMatrix, LeastSquaresTerm};
    use approx::assert_abs_diff_eq;

    /// `A(x, theta) = x / 2 + theta`
    struct Contraction;

    impl StepMap<f64> for Contraction {
        fn state_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn apply(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
            vec![0.5 * x[0] + theta[0]]
        }
        fn vjp(&self, _x: &[f64], _t: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (vec![0.5 * v[0]], vec![v[0]])
        }
        fn jvp(&self, _x: &[f64], _t: &[f64], dx: &[f64], dt: &[f64]) -> Vec<f64> {
            vec![0.5 * dx[0] + dt[0]]
        }
    }

    #[test]
    fn neumann_series_on_contraction() {
        let theta = [0.7];
        let loss = LossGrads::state_only(vec![1.0], 1);
        let r = fixedpoint_neumann(&[1.4], &Contraction, &theta, 40, &loss).unwrap();
        assert_abs_diff_eq!(r.gradient[0], 2.0, epsilon = 1e-6);
        assert_eq!(r.contributions.len(), 40);
        assert_abs_diff_eq!(r.fixed_point_residual.unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn implicit_solve_on_contraction() {
        let loss = LossGrads::state_only(vec![1.0], 1);
        let r = fixedpoint_implicit(&[1.4], &Contraction, &[0.7], &loss, 1e-10, 1000).unwrap();
        assert_abs_diff_eq!(r.gradient[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn implicit_solve_reports_best_when_capped() {
        let loss = LossGrads::state_only(vec![1.0], 1);
        let err = fixedpoint_implicit(&[1.4], &Contraction, &[0.7], &loss, 1e-10, 5).unwrap_err();
        let best = err.into_best().unwrap();
        assert!(best.gradient[0] > 1.9 && best.gradient[0] < 2.0);
        assert_eq!(best.warnings.len(), 1);
    }

    #[test]
    fn n_back_beyond_trace_is_rejected() {
        let a = DenseMatrix::identity(2);
        let term = LeastSquaresTerm::new(a, vec![1.0, 2.0], DenseMatrix::identity(2)).unwrap();
        let p = LowerProblem::new(term, SimpleFunction::Zero);
        let gen = BregmanGenerator::euclidean(2);
        let tr = fbs_run(&p, &[0.0, 0.0], &[0.0, 0.0], 3, 0.5, &gen).unwrap();
        let loss = LossGrads::state_only(vec![1.0, 1.0], 2);
        assert!(matches!(
            reverse_fbs(&tr, &p, &gen, &[0.0, 0.0], &loss, 4),
            Err(Error::Config(_))
        ));
        let full = reverse_fbs(&tr, &p, &gen, &[0.0, 0.0], &loss, 3).unwrap();
        assert_eq!(full.contributions.len(), 3);
    }

    #[test]
    fn forward_mode_needs_a_direction() {
        assert!(forward_unrolled(&Contraction, &[0.0], &[0.0], 3, &[]).is_err());
    }

    #[test]
    fn zero_iterations_give_zero_tangent() {
        let r = forward_unrolled(&Contraction, &[0.3], &[1.0], 0, &basis(1)).unwrap();
        assert_eq!(r.tangents, vec![vec![0.0]]);
    }
}

//! Outer-loop optimizers: gradient descent, iPiano and ADAM.

use std::time::Instant;

use crate::bregman::SimpleFunction;
use crate::error::{check_len, Error, Result};
use crate::scalar::vecops;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct UpperState<T> {
    pub theta: Vec<T>,
    /// Previous iterate, for the inertial term.
    pub theta_prev: Vec<T>,
    /// ADAM first moment.
    pub m: Vec<T>,
    /// ADAM second moment.
    pub v: Vec<T>,
    pub iteration: usize,
}

impl<T: Scalar> UpperState<T> {
    pub fn new(theta: Vec<T>) -> Self {
        let zeros = vec![T::zero(); theta.len()];
        Self {
            theta_prev: theta.clone(),
            theta,
            m: zeros.clone(),
            v: zeros,
            iteration: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpianoConfig<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> IpianoConfig<T> {
    /// Constant step `alpha` with the default inertia `beta = 0.8`.
    pub fn with_step(alpha: T) -> Self {
        Self {
            alpha,
            beta: T::lit(0.8),
        }
    }
}

/// `theta+ = prox_{alpha ell}(theta - alpha grad + beta (theta - theta_prev))`
pub fn ipiano_step<T: Scalar>(
    state: &UpperState<T>,
    grad: &[T],
    config: &IpianoConfig<T>,
    ell: &SimpleFunction<T>,
) -> Result<UpperState<T>> {
    check_len("outer gradient", state.theta.len(), grad.len())?;
    let IpianoConfig { alpha, beta } = *config;
    if !(alpha > T::zero()) || !(beta >= T::zero() && beta <= T::one()) {
        return Err(Error::Config(format!(
            "iPiano needs alpha > 0 and beta in [0, 1], got alpha = {alpha}, beta = {beta}"
        )));
    }
    let forward: Vec<T> = state
        .theta
        .iter()
        .zip(&state.theta_prev)
        .zip(grad)
        .map(|((&t, &tp), &g)| t - alpha * g + beta * (t - tp))
        .collect();
    let theta = ell.prox(&forward, alpha)?;
    Ok(UpperState {
        theta_prev: state.theta.clone(),
        theta,
        m: state.m.clone(),
        v: state.v.clone(),
        iteration: state.iteration + 1,
    })
}

/// Plain gradient descent, the `beta = 0`, `ell = 0` instance of iPiano.
pub fn gd_step<T: Scalar>(state: &UpperState<T>, grad: &[T], rate: T) -> Result<UpperState<T>> {
    ipiano_step(
        state,
        grad,
        &IpianoConfig {
            alpha: rate,
            beta: T::zero(),
        },
        &SimpleFunction::Zero,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            rate: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

impl<T: Scalar> AdamConfig<T> {
    pub fn with_rate(rate: T) -> Self {
        Self {
            rate,
            ..Self::default()
        }
    }
}

/// One bias-corrected ADAM step.
pub fn adam_step<T: Scalar>(state: &UpperState<T>, grad: &[T], config: &AdamConfig<T>) -> Result<UpperState<T>> {
    check_len("outer gradient", state.theta.len(), grad.len())?;
    let AdamConfig {
        rate,
        beta1,
        beta2,
        eps,
    } = *config;
    let in_unit = |b: T| b >= T::zero() && b < T::one();
    if !(rate > T::zero()) || !in_unit(beta1) || !in_unit(beta2) {
        return Err(Error::Config(format!(
            "ADAM needs rate > 0 and betas in [0, 1), got {rate}, {beta1}, {beta2}"
        )));
    }
    let t = (state.iteration + 1) as i32;
    let c1 = T::one() - beta1.powi(t);
    let c2 = T::one() - beta2.powi(t);
    let mut next = UpperState {
        theta_prev: state.theta.clone(),
        theta: state.theta.clone(),
        m: state.m.clone(),
        v: state.v.clone(),
        iteration: state.iteration + 1,
    };
    for i in 0..grad.len() {
        let g = grad[i];
        next.m[i] = beta1 * next.m[i] + (T::one() - beta1) * g;
        next.v[i] = beta2 * next.v[i] + (T::one() - beta2) * g * g;
        let mhat = next.m[i] / c1;
        let vhat = next.v[i] / c2;
        next.theta[i] = next.theta[i] - rate * mhat / (vhat.sqrt() + eps);
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer<T> {
    GradientDescent { rate: T },
    IPiano { config: IpianoConfig<T>, ell: SimpleFunction<T> },
    Adam(AdamConfig<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn step(&self, state: &UpperState<T>, grad: &[T]) -> Result<UpperState<T>> {
        match self {
            Optimizer::GradientDescent { rate } => gd_step(state, grad, *rate),
            Optimizer::IPiano { config, ell } => ipiano_step(state, grad, config, ell),
            Optimizer::Adam(config) => adam_step(state, grad, config),
        }
    }
}

/// Loss, gradient and optional metrics of the bilevel objective at one `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterEvaluation<T> {
    pub loss: T,
    pub gradient: Vec<T>,
    pub metrics: Vec<(&'static str, f64)>,
}

/// The upper-level problem: one lower-level solve plus hypergradient per call.
pub trait OuterObjective<T: Scalar> {
    fn evaluate(&mut self, theta: &[T]) -> Result<OuterEvaluation<T>>;
}

impl<T: Scalar, F> OuterObjective<T> for F
where
    F: FnMut(&[T]) -> Result<OuterEvaluation<T>>,
{
    fn evaluate(&mut self, theta: &[T]) -> Result<OuterEvaluation<T>> {
        self(theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow<T> {
    pub iteration: usize,
    /// Loss at the iterate before this iteration's step.
    pub loss: T,
    pub theta: Vec<T>,
    pub metrics: Vec<(&'static str, f64)>,
    /// Wall time since the start of the run.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterLog<T> {
    pub rows: Vec<LogRow<T>>,
    pub final_state: UpperState<T>,
}

/// Runs `iterations` outer steps. Errors carry the outer iteration index.
pub fn run_outer<T: Scalar, O: OuterObjective<T> + ?Sized>(
    objective: &mut O,
    theta0: Vec<T>,
    optimizer: &Optimizer<T>,
    iterations: usize,
) -> Result<OuterLog<T>> {
    let start = Instant::now();
    let mut state = UpperState::new(theta0);
    let mut rows = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let eval = objective.evaluate(&state.theta).map_err(|e| e.at_outer(it))?;
        if !eval.loss.is_finite() || !vecops::is_finite(&eval.gradient) {
            return Err(Error::Divergence { iteration: it }.at_outer(it));
        }
        rows.push(LogRow {
            iteration: it,
            loss: eval.loss,
            theta: state.theta.clone(),
            metrics: eval.metrics,
            seconds: start.elapsed().as_secs_f64(),
        });
        state = optimizer.step(&state, &eval.gradient).map_err(|e| e.at_outer(it))?;
    }
    Ok(OuterLog {
        rows,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ipiano_without_inertia_is_gradient_descent() {
        let s = UpperState::new(vec![1.0, -2.0]);
        let a = ipiano_step(
            &s,
            &[0.5, 0.25],
            &IpianoConfig {
                alpha: 0.1,
                beta: 0.0,
            },
            &SimpleFunction::Zero,
        )
        .unwrap();
        assert_eq!(a.theta, vec![1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
        assert_eq!(a.theta_prev, vec![1.0, -2.0]);
    }

    #[test]
    fn ipiano_projects_onto_box() {
        let s = UpperState::new(vec![1.2]);
        let a = ipiano_step(
            &s,
            &[-2.0],
            &IpianoConfig {
                alpha: 0.1,
                beta: 0.5,
            },
            &SimpleFunction::Box {
                lower: 0.0,
                upper: 1.0,
            },
        )
        .unwrap();
        assert_eq!(a.theta, vec![1.0]);
    }

    #[test]
    fn ipiano_rejects_bad_inertia() {
        let s = UpperState::new(vec![0.0]);
        let cfg = IpianoConfig {
            alpha: 0.1,
            beta: 1.5,
        };
        assert!(ipiano_step(&s, &[0.0], &cfg, &SimpleFunction::Zero).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_theta() {
        let s = UpperState::new(vec![0.3, 0.4]);
        let a = adam_step(&s, &[0.0, 0.0], &AdamConfig::default()).unwrap();
        assert_eq!(a.theta, s.theta);
    }

    #[test]
    fn adam_constant_gradient_moves_by_rate() {
        let cfg = AdamConfig::default();
        let mut s = UpperState::new(vec![0.0]);
        let mut last = 0.0f64;
        for _ in 0..2000 {
            let next = adam_step(&s, &[3.0], &cfg).unwrap();
            last = s.theta[0] - next.theta[0];
            s = next;
        }
        assert!((last - 1e-3).abs() < 1e-8, "{last}");
    }

    #[test]
    fn zero_iterations_give_an_empty_log() {
        let mut obj = |_: &[f64]| -> Result<OuterEvaluation<f64>> { unreachable!() };
        let log = run_outer(&mut obj, vec![1.0], &Optimizer::GradientDescent { rate: 0.1 }, 0).unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(log.final_state.theta, vec![1.0]);
    }

    #[test]
    fn errors_carry_the_outer_iteration() {
        let mut calls = 0;
        let mut obj = |t: &[f64]| -> Result<OuterEvaluation<f64>> {
            calls += 1;
            if calls == 3 {
                return Err(Error::Divergence { iteration: 7 });
            }
            Ok(OuterEvaluation {
                loss: t[0] * t[0],
                gradient: vec![2.0 * t[0]],
                metrics: Vec::new(),
            })
        };
        let err = run_outer(&mut obj, vec![1.0], &Optimizer::GradientDescent { rate: 0.1 }, 5).unwrap_err();
        assert!(matches!(err, Error::Outer { iteration: 2, .. }), "{err}");
    }
}

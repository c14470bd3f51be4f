//! Ergodic Bregman primal-dual solver for the TV segmentation model
//! `min_u <c, u> + e^s |W grad u|_1` over pixel-wise unit simplices.

use crate::bregman::{BregmanGenerator, SimpleFunction};
use crate::error::{check_len, Result};
use crate::hypergrad::{reverse_pd, GradientReport, LossGrads};
use crate::lower::{default_pd_steps, pd_run, Coupling, IterateTrace, PdConfig, PrimalDualGenerators, SaddleProblem};
use crate::scalar::vecops;
use crate::Scalar;

use super::operator::{ContrastWeights, CostTerm, TvCoupling, WeightedGradient};
use super::{check_label_field, CostTensor, SegmentationState, FEASIBILITY_TOL};
use crate::lower::LinearOperator;

/// The saddle-point form: simplex entropy on the primal, binary entropy on the dual
/// (whose conjugate term is the indicator of the `l_inf` unit ball).
pub fn segmentation_problem<T: Scalar>(coupling: &TvCoupling<T>) -> SaddleProblem<T, CostTerm, &TvCoupling<T>> {
    SaddleProblem {
        smooth: CostTerm {
            dim: coupling.primal_dim(),
        },
        coupling,
        primal_g: SimpleFunction::Zero,
        dual_h: SimpleFunction::Box {
            lower: -T::one(),
            upper: T::one(),
        },
    }
}

pub fn segmentation_generators<T: Scalar>(coupling: &TvCoupling<T>) -> PrimalDualGenerators {
    let n = coupling.grid().npix();
    PrimalDualGenerators {
        primal: BregmanGenerator::simplex_field(coupling.labels, n),
        dual: BregmanGenerator::binary_entropy(2 * coupling.labels * n),
    }
}

/// Lower-level parameters `phi = [c, s]`.
pub fn lower_params<T: Scalar>(c: &CostTensor<T>, log_smoothness: T) -> Vec<T> {
    let mut phi = c.values.clone();
    phi.push(log_smoothness);
    phi
}

/// Default `tau = sigma` for the given smoothness.
pub fn default_steps<T: Scalar>(coupling: &TvCoupling<T>, log_smoothness: T) -> (T, T) {
    default_pd_steps(T::zero(), log_smoothness.exp() * coupling.base_norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSolution<T> {
    /// Ergodic primal and last dual iterate.
    pub state: SegmentationState<T>,
    pub trace: IterateTrace<T>,
    pub phi: Vec<T>,
    pub tau: T,
    pub sigma: T,
}

/// Runs `n` ergodic primal-dual iterations from the uniform labeling. `steps`
/// overrides the default step sizes.
pub fn solve_segmentation<T: Scalar>(
    c: &CostTensor<T>,
    coupling: &TvCoupling<T>,
    log_smoothness: T,
    n: usize,
    steps: Option<(T, T)>,
) -> Result<SegmentationSolution<T>> {
    check_len("cost tensor grid", coupling.grid().npix(), c.grid.npix())?;
    check_len("cost tensor labels", coupling.labels, c.labels)?;
    let (tau, sigma) = steps.unwrap_or_else(|| default_steps(coupling, log_smoothness));
    let problem = segmentation_problem(coupling);
    let gens = segmentation_generators(coupling);
    let phi = lower_params(c, log_smoothness);
    let init = SegmentationState::initial(c.grid, c.labels);
    let config = PdConfig {
        iterations: n,
        tau,
        sigma,
        ergodic: true,
    };
    let trace = pd_run(&problem, &phi, &init.u, &init.p, &config, &gens)?;
    let state = SegmentationState {
        grid: c.grid,
        labels: c.labels,
        u: trace.final_point.clone(),
        p: trace.duals[trace.len()].clone(),
    };
    Ok(SegmentationSolution {
        state,
        trace,
        phi,
        tau,
        sigma,
    })
}

/// `dL/dphi` through the full ergodic unrolled solve, where `dl_du` is the loss
/// gradient at the ergodic primal.
pub fn solution_gradient<T: Scalar>(
    sol: &SegmentationSolution<T>,
    coupling: &TvCoupling<T>,
    dl_du: Vec<T>,
) -> Result<GradientReport<T>> {
    let problem = segmentation_problem(coupling);
    let gens = segmentation_generators(coupling);
    let loss = LossGrads::state_only(dl_du, sol.phi.len());
    reverse_pd(&sol.trace, &problem, &gens, &sol.phi, &loss, sol.trace.len(), true)
}

/// `<c, u> + scale * |W grad u|_1` for a feasible label field `u`.
pub fn tv_energy<T: Scalar>(u: &[T], weights: &ContrastWeights<T>, c: &CostTensor<T>, scale: T) -> Result<T> {
    let npix = weights.grid.npix();
    check_len("cost tensor grid", npix, c.grid.npix())?;
    check_label_field(u, c.labels, npix, T::lit(FEASIBILITY_TOL))?;
    let op = WeightedGradient { weights };
    let tv: T = u
        .chunks(npix)
        .map(|f| op.apply(f).iter().map(|v| v.abs()).sum::<T>())
        .sum();
    Ok(vecops::dot(&c.values, u) + scale * tv)
}

#[cfg(test)]
mod tests {
    use super::super::Grid;
    use super::*;

    #[test]
    fn hand_counted_energy() {
        let g = Grid::new(2, 1).unwrap();
        let w = ContrastWeights::uniform(g);
        let c = CostTensor::zeros(g, 2);
        // pixel 0 takes label 0, pixel 1 label 1
        let u = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(tv_energy(&u, &w, &c, 1.0).unwrap(), 2.0);
        let one_label = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(tv_energy(&one_label, &w, &c, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn infeasible_field_is_rejected() {
        let g = Grid::new(2, 1).unwrap();
        let w = ContrastWeights::uniform(g);
        let c = CostTensor::zeros(g, 2);
        assert!(tv_energy(&[0.7, 0.0, 0.0, 1.0], &w, &c, 1.0).is_err());
    }

    #[test]
    fn single_pixel_goes_to_cheapest_label() {
        let g = Grid::new(1, 1).unwrap();
        let coupling = TvCoupling::new(ContrastWeights::uniform(g), 2);
        let c = CostTensor::<f64>::new(g, 2, vec![0.0, 10.0]).unwrap();
        let sol = solve_segmentation(&c, &coupling, 0.0, 500, None).unwrap();
        let err = (sol.state.u[0] - 1.0).abs().max(sol.state.u[1].abs());
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn equal_costs_keep_uniform_labels() {
        let g = Grid::new(3, 3).unwrap();
        let coupling = TvCoupling::new(ContrastWeights::uniform(g), 3);
        let c = CostTensor::<f64>::new(g, 3, vec![0.4; 27]).unwrap();
        let sol = solve_segmentation(&c, &coupling, 0.0, 50, None).unwrap();
        for v in &sol.state.u {
            assert!((v - 1.0 / 3.0).abs() < 1e-14);
        }
    }
}

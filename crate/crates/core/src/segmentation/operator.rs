//! Forward differences, contrast weights and the TV coupling `K = e^s W grad`.

use crate::error::{check_len, Error, Result};
use crate::lower::{operator_norm_bound, Coupling, LinearOperator, SmoothTerm};
use crate::scalar::vecops;
use crate::Scalar;

use super::Grid;

/// Default contrast sensitivity of the edge weights.
pub const DEFAULT_GAMMA: f64 = 10.0;

/// Forward differences of one field with zero Neumann boundary: `[x block, y block]`.
pub fn grad_apply<T: Scalar>(grid: &Grid, u: &[T]) -> Vec<T> {
    let n = grid.npix();
    let mut out = vec![T::zero(); 2 * n];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let pi = grid.index(i, j);
            if i + 1 < grid.nx {
                out[pi] = u[pi + 1] - u[pi];
            }
            if j + 1 < grid.ny {
                out[n + pi] = u[pi + grid.nx] - u[pi];
            }
        }
    }
    out
}

/// `-grad^T p`, the discrete divergence.
pub fn div_apply<T: Scalar>(grid: &Grid, p: &[T]) -> Vec<T> {
    let n = grid.npix();
    let mut out = vec![T::zero(); n];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let pi = grid.index(i, j);
            if i + 1 < grid.nx {
                out[pi] = out[pi] + p[pi];
                out[pi + 1] = out[pi + 1] - p[pi];
            }
            if j + 1 < grid.ny {
                out[pi] = out[pi] + p[n + pi];
                out[pi + grid.nx] = out[pi + grid.nx] - p[n + pi];
            }
        }
    }
    out
}

/// Per-edge weights in `(0, 1]`, laid out like the output of [`grad_apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastWeights<T> {
    pub grid: Grid,
    pub values: Vec<T>,
}

impl<T: Scalar> ContrastWeights<T> {
    pub fn uniform(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![T::one(); 2 * grid.npix()],
        }
    }

    /// `exp(-gamma |forward difference of intensity|)`; boundary entries, which
    /// multiply a zero difference, are `1`.
    pub fn from_intensity(grid: Grid, intensity: &[T], gamma: T) -> Result<Self> {
        check_len("intensity", grid.npix(), intensity.len())?;
        if !(gamma >= T::zero()) {
            return Err(Error::Config(format!("gamma must be nonnegative, got {gamma}")));
        }
        let values = grad_apply(&grid, intensity)
            .into_iter()
            .map(|d| (-gamma * d.abs()).exp())
            .collect();
        Ok(Self { grid, values })
    }

    pub fn from_values(grid: Grid, values: Vec<T>) -> Result<Self> {
        check_len("contrast weights", 2 * grid.npix(), values.len())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > T::zero() && v <= T::one()))
        {
            return Err(Error::Domain {
                domain: "weight range (0, 1]",
                index: i,
                value: v.as_f64(),
            });
        }
        Ok(Self { grid, values })
    }
}

/// `W grad` on one label field.
#[derive(Debug, Clone, Copy)]
pub struct WeightedGradient<'a, T> {
    pub weights: &'a ContrastWeights<T>,
}

impl<T: Scalar> LinearOperator<T> for WeightedGradient<'_, T> {
    fn input_dim(&self) -> usize {
        self.weights.grid.npix()
    }
    fn output_dim(&self) -> usize {
        2 * self.weights.grid.npix()
    }
    fn apply(&self, x: &[T]) -> Vec<T> {
        let mut g = grad_apply(&self.weights.grid, x);
        g.iter_mut().zip(&self.weights.values).for_each(|(a, &w)| *a = *a * w);
        g
    }
    fn apply_adjoint(&self, y: &[T]) -> Vec<T> {
        let wy: Vec<T> = y.iter().zip(&self.weights.values).map(|(&a, &w)| a * w).collect();
        div_apply(&self.weights.grid, &wy).into_iter().map(|v| -v).collect()
    }
}

/// `K(phi) u = e^s W grad u`, applied per label, where `s` is the last entry of the
/// lower-level parameter vector `phi = [c, s]`.
#[derive(Debug, Clone)]
pub struct TvCoupling<T> {
    pub weights: ContrastWeights<T>,
    pub labels: usize,
    /// `|W grad|` from power iteration.
    base_norm: T,
}

impl<T: Scalar> TvCoupling<T> {
    pub fn new(weights: ContrastWeights<T>, labels: usize) -> Self {
        let base_norm = operator_norm_bound(&WeightedGradient { weights: &weights }, 100).value;
        Self {
            weights,
            labels,
            base_norm,
        }
    }

    pub fn grid(&self) -> Grid {
        self.weights.grid
    }

    /// Power-iteration estimate of `|W grad|`.
    pub fn base_norm(&self) -> T {
        self.base_norm
    }

    fn scale(&self, phi: &[T]) -> T {
        phi[phi.len() - 1].exp()
    }

    fn per_label(&self, x: &[T], chunk: usize, f: impl Fn(&[T]) -> Vec<T>) -> Vec<T> {
        x.chunks(chunk).flat_map(f).collect()
    }

    /// `W grad u` without the smoothness scale.
    pub fn unscaled_apply(&self, u: &[T]) -> Vec<T> {
        let op = WeightedGradient {
            weights: &self.weights,
        };
        self.per_label(u, self.grid().npix(), |f| op.apply(f))
    }

    fn unscaled_adjoint(&self, p: &[T]) -> Vec<T> {
        let op = WeightedGradient {
            weights: &self.weights,
        };
        self.per_label(p, 2 * self.grid().npix(), |f| op.apply_adjoint(f))
    }
}

impl<T: Scalar> Coupling<T> for TvCoupling<T> {
    fn primal_dim(&self) -> usize {
        self.labels * self.grid().npix()
    }
    fn dual_dim(&self) -> usize {
        2 * self.labels * self.grid().npix()
    }
    fn apply(&self, phi: &[T], u: &[T]) -> Vec<T> {
        vecops::scale(self.scale(phi), &self.unscaled_apply(u))
    }
    fn apply_adjoint(&self, phi: &[T], p: &[T]) -> Vec<T> {
        vecops::scale(self.scale(phi), &self.unscaled_adjoint(p))
    }
    fn param_vjp(&self, phi: &[T], u: &[T], p: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); phi.len()];
        out[phi.len() - 1] = vecops::dot(p, &self.apply(phi, u));
        out
    }
    fn param_jvp(&self, phi: &[T], u: &[T], dphi: &[T]) -> Vec<T> {
        vecops::scale(dphi[dphi.len() - 1], &self.apply(phi, u))
    }
    fn param_adjoint_jvp(&self, phi: &[T], p: &[T], dphi: &[T]) -> Vec<T> {
        vecops::scale(dphi[dphi.len() - 1], &self.apply_adjoint(phi, p))
    }
    fn norm_bound(&self, phi: &[T]) -> T {
        self.scale(phi) * self.base_norm
    }
}

/// The linear data term `f(u; phi) = <c, u>` with `phi = [c, s]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostTerm {
    pub dim: usize,
}

impl<T: Scalar> SmoothTerm<T> for CostTerm {
    fn dim(&self) -> usize {
        self.dim
    }
    fn param_dim(&self) -> usize {
        self.dim + 1
    }
    fn value(&self, u: &[T], phi: &[T]) -> T {
        vecops::dot(&phi[..self.dim], u)
    }
    fn grad(&self, _u: &[T], phi: &[T]) -> Vec<T> {
        phi[..self.dim].to_vec()
    }
    fn hess_apply(&self, _u: &[T], _phi: &[T], v: &[T]) -> Vec<T> {
        vec![T::zero(); v.len()]
    }
    fn mixed_apply_transpose(&self, _u: &[T], _phi: &[T], v: &[T]) -> Vec<T> {
        let mut out = v.to_vec();
        out.push(T::zero());
        out
    }
    fn mixed_apply(&self, _u: &[T], _phi: &[T], dphi: &[T]) -> Vec<T> {
        dphi[..self.dim].to_vec()
    }
    fn lipschitz(&self, _phi: &[T]) -> Option<T> {
        Some(T::zero())
    }
}

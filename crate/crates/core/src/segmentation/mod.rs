//! Multi-label segmentation with anisotropic TV as a bilevel instance.
//!
//! Field layout: a label field `u` is label-major, `u[k * npix + pi]` with pixel index
//! `pi = i + j * nx`; the dual field stores, per label, the x-difference block followed
//! by the y-difference block. Labels are 0-based in memory.

pub mod data;
pub mod io;
pub mod loss;
pub mod model;
pub mod operator;
pub mod solve;
pub mod train;

pub use loss::{mean_iou, pixel_accuracy, softmax_loss};
pub use model::{Features, LinearUnaryModel};
pub use operator::{div_apply, grad_apply, ContrastWeights, CostTerm, TvCoupling, WeightedGradient};
pub use solve::{
    default_steps, lower_params, segmentation_generators, segmentation_problem, solution_gradient, solve_segmentation,
    tv_energy, SegmentationSolution,
};
pub use train::{train, Sample, TrainConfig, TrainLogRow, TrainResult};

use crate::error::{check_len, Error, Result};
use crate::Scalar;

/// Feasibility tolerance of primal label fields.
pub const FEASIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!("grid must be nonempty, got {nx}x{ny}")));
        }
        Ok(Self { nx, ny })
    }

    pub fn npix(&self) -> usize {
        self.nx * self.ny
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + j * self.nx
    }
}

/// Per-pixel, per-label costs `c[k * npix + pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTensor<T> {
    pub grid: Grid,
    pub labels: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> CostTensor<T> {
    pub fn new(grid: Grid, labels: usize, values: Vec<T>) -> Result<Self> {
        if labels == 0 {
            return Err(Error::Config("at least one label is required".into()));
        }
        check_len("cost tensor", labels * grid.npix(), values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain {
                domain: "finite reals",
                index: i,
                value: values[i].as_f64(),
            });
        }
        Ok(Self { grid, labels, values })
    }

    pub fn zeros(grid: Grid, labels: usize) -> Self {
        Self {
            grid,
            labels,
            values: vec![T::zero(); labels * grid.npix()],
        }
    }

    pub fn get(&self, k: usize, pixel: usize) -> T {
        self.values[k * self.grid.npix() + pixel]
    }
}

/// Primal label field and dual field of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationState<T> {
    pub grid: Grid,
    pub labels: usize,
    pub u: Vec<T>,
    pub p: Vec<T>,
}

impl<T: Scalar> SegmentationState<T> {
    /// Uniform labels and zero dual.
    pub fn initial(grid: Grid, labels: usize) -> Self {
        let n = grid.npix();
        Self {
            grid,
            labels,
            u: vec![T::one() / T::lit(labels as f64); labels * n],
            p: vec![T::zero(); 2 * labels * n],
        }
    }

    /// Most likely label per pixel; ties go to the smallest label.
    pub fn labeling(&self) -> Vec<usize> {
        argmax_labels(&self.u, self.labels, self.grid.npix())
    }
}

pub fn argmax_labels<T: Scalar>(u: &[T], labels: usize, npix: usize) -> Vec<usize> {
    (0..npix)
        .map(|pi| {
            let mut best = 0;
            for k in 1..labels {
                if u[k * npix + pi] > u[best * npix + pi] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Checks that every pixel of `u` lies on the unit simplex within `tol`.
pub fn check_label_field<T: Scalar>(u: &[T], labels: usize, npix: usize, tol: T) -> Result<()> {
    check_len("label field", labels * npix, u.len())?;
    if let Some(i) = u.iter().position(|&v| !(v >= -tol)) {
        return Err(Error::Domain {
            domain: "nonnegative orthant",
            index: i,
            value: u[i].as_f64(),
        });
    }
    for pi in 0..npix {
        let s: T = (0..labels).map(|k| u[k * npix + pi]).sum();
        if (s - T::one()).abs() > tol {
            return Err(Error::OffSimplex {
                group: pi,
                sum: s.as_f64(),
            });
        }
    }
    Ok(())
}

//! Affine per-pixel unary model producing the cost tensor.

use crate::error::{check_len, Error, Result};
use crate::Scalar;

use super::{CostTensor, Grid};

/// Feature channels `data[ch * npix + pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features<T> {
    pub grid: Grid,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Features<T> {
    pub fn new(grid: Grid, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("at least one feature channel is required".into()));
        }
        check_len("feature data", channels * grid.npix(), data.len())?;
        Ok(Self { grid, channels, data })
    }

    pub fn channel(&self, ch: usize) -> &[T] {
        let n = self.grid.npix();
        &self.data[ch * n..(ch + 1) * n]
    }

    /// Mean over channels, the intensity used for contrast weights.
    pub fn mean_channel(&self) -> Vec<T> {
        let n = self.grid.npix();
        let inv = T::one() / T::lit(self.channels as f64);
        (0..n)
            .map(|pi| (0..self.channels).map(|ch| self.data[ch * n + pi]).sum::<T>() * inv)
            .collect()
    }
}

/// `c^k_pi = <weights_k, features_pi> + bias_k`, plus a log-smoothness scale on the
/// regularizer.
///
/// Parameter layout: `[weights (labels x channels, row-major), bias (labels), log_smoothness]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearUnaryModel {
    pub labels: usize,
    pub channels: usize,
}

impl LinearUnaryModel {
    pub fn new(labels: usize, channels: usize) -> Result<Self> {
        if labels == 0 || channels == 0 {
            return Err(Error::Config(format!(
                "model needs labels and channels, got {labels} and {channels}"
            )));
        }
        Ok(Self { labels, channels })
    }

    pub fn param_dim(&self) -> usize {
        self.labels * self.channels + self.labels + 1
    }

    /// All-zero parameters: equal costs and unit smoothness.
    pub fn zero_params<T: Scalar>(&self) -> Vec<T> {
        vec![T::zero(); self.param_dim()]
    }

    pub fn bias_offset(&self) -> usize {
        self.labels * self.channels
    }

    pub fn log_smoothness<T: Scalar>(&self, theta: &[T]) -> T {
        theta[self.param_dim() - 1]
    }

    fn check<T: Scalar>(&self, theta: &[T], features: &Features<T>) -> Result<()> {
        check_len("model parameters", self.param_dim(), theta.len())?;
        check_len("feature channels", self.channels, features.channels)
    }

    pub fn apply<T: Scalar>(&self, theta: &[T], features: &Features<T>) -> Result<CostTensor<T>> {
        self.check(theta, features)?;
        let n = features.grid.npix();
        let b0 = self.bias_offset();
        let mut values = vec![T::zero(); self.labels * n];
        for k in 0..self.labels {
            let out = &mut values[k * n..(k + 1) * n];
            out.iter_mut().for_each(|v| *v = theta[b0 + k]);
            for ch in 0..self.channels {
                let w = theta[k * self.channels + ch];
                for (v, &f) in out.iter_mut().zip(features.channel(ch)) {
                    *v = *v + w * f;
                }
            }
        }
        CostTensor::new(features.grid, self.labels, values)
    }

    /// `(dc/dtheta)^T v` for a cost-space vector `v`; the log-smoothness entry is zero.
    pub fn vjp<T: Scalar>(&self, theta: &[T], features: &Features<T>, v: &[T]) -> Result<Vec<T>> {
        self.check(theta, features)?;
        let n = features.grid.npix();
        check_len("cost cotangent", self.labels * n, v.len())?;
        let b0 = self.bias_offset();
        let mut out = vec![T::zero(); self.param_dim()];
        for k in 0..self.labels {
            let vk = &v[k * n..(k + 1) * n];
            out[b0 + k] = vk.iter().copied().sum();
            for ch in 0..self.channels {
                out[k * self.channels + ch] = features
                    .channel(ch)
                    .iter()
                    .zip(vk)
                    .map(|(&f, &g)| f * g)
                    .sum();
            }
        }
        Ok(out)
    }
}

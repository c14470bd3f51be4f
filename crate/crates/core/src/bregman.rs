//! Bregman generating functions, distances and closed-form proximal maps.
//!
//! Every proximal map here solves
//!
//! ```text
//!     argmin_x  step * (<cost, x> + g(x)) + D_psi(x, xbar)
//! ```
//!
//! and returns the minimizer together with its Jacobians with respect to the
//! prox center `xbar` and the linear `cost`. For the entropy-type generators the
//! constraint set is handled implicitly by the generator, so `g` is only the
//! (redundant) domain indicator.

use crate::error::{check_len, Error, Result};
use crate::Scalar;

/// Distance from the boundary below which entropy-domain inputs are rejected.
pub const INTERIOR_TOL: f64 = 1e-14;
/// Allowed deviation of a simplex group's sum from one.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneratorKind {
    /// `psi(x) = 0.5 |x|^2` on the full space.
    Euclidean,
    /// `psi(x) = sum x log x` on the nonnegative orthant.
    EntropyOrthant,
    /// Entropy restricted to a product of unit simplices. The vector is stored
    /// label-major: entry `(group g, label k)` lives at `k * groups + g`.
    EntropySimplex { labels: usize },
    /// `psi(x) = 0.5 sum (1+x)log(1+x) + (1-x)log(1-x)` on the box `[-1, 1]^d`.
    BinaryEntropy,
}

impl GeneratorKind {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::Euclidean => "euclidean",
            GeneratorKind::EntropyOrthant => "entropy-orthant",
            GeneratorKind::EntropySimplex { .. } => "entropy-simplex",
            GeneratorKind::BinaryEntropy => "binary-entropy-interval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BregmanGenerator {
    kind: GeneratorKind,
    dim: usize,
}

/// Simple convex functions with cheap proximal maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimpleFunction<T> {
    Zero,
    /// Indicator of the nonnegative orthant.
    NonNegative,
    /// Indicator of the box `[lower, upper]^d`.
    Box { lower: T, upper: T },
    /// `weight * |x|_1`.
    L1 { weight: T },
}

impl<T: Scalar> SimpleFunction<T> {
    pub fn name(&self) -> &'static str {
        match self {
            SimpleFunction::Zero => "zero",
            SimpleFunction::NonNegative => "nonnegative-indicator",
            SimpleFunction::Box { .. } => "box-indicator",
            SimpleFunction::L1 { .. } => "l1-norm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SimpleFunction::Box { lower, upper } if !(lower <= upper) => Err(Error::Config(
                format!("box bounds are inverted: [{lower}, {upper}]"),
            )),
            SimpleFunction::L1 { weight } if !(weight >= T::zero()) => {
                Err(Error::Config(format!("negative l1 weight {weight}")))
            }
            _ => Ok(()),
        }
    }

    /// Value of the function (`+inf` outside an indicator's set).
    pub fn value(&self, x: &[T]) -> T {
        match *self {
            SimpleFunction::Zero => T::zero(),
            SimpleFunction::NonNegative => {
                if x.iter().all(|&v| v >= T::zero()) {
                    T::zero()
                } else {
                    T::infinity()
                }
            }
            SimpleFunction::Box { lower, upper } => {
                if x.iter().all(|&v| v >= lower && v <= upper) {
                    T::zero()
                } else {
                    T::infinity()
                }
            }
            SimpleFunction::L1 { weight } => weight * x.iter().map(|v| v.abs()).sum::<T>(),
        }
    }

    /// Euclidean proximal point of `step * g` at `x` (no derivative information).
    pub fn prox(&self, x: &[T], step: T) -> Result<Vec<T>> {
        self.validate()?;
        Ok(match *self {
            SimpleFunction::Zero => x.to_vec(),
            SimpleFunction::NonNegative => x.iter().map(|&v| v.max(T::zero())).collect(),
            SimpleFunction::Box { lower, upper } => {
                x.iter().map(|&v| v.max(lower).min(upper)).collect()
            }
            SimpleFunction::L1 { weight } => {
                let t = step * weight;
                x.iter()
                    .map(|&v| v.signum() * (v.abs() - t).max(T::zero()))
                    .collect()
            }
        })
    }
}

/// Jacobian of a proximal map. Entropy-simplex maps couple the labels of one
/// group, every other map is separable.
#[derive(Debug, Clone, PartialEq)]
pub enum Jacobian<T> {
    Diagonal(Vec<T>),
    /// One dense `labels x labels` block per group; `blocks[(g * L + i) * L + j]`
    /// is the derivative of output `(g, i)` with respect to input `(g, j)`.
    SimplexBlocks {
        labels: usize,
        groups: usize,
        blocks: Vec<T>,
    },
}

impl<T: Scalar> Jacobian<T> {
    pub fn dim(&self) -> usize {
        match self {
            Jacobian::Diagonal(d) => d.len(),
            Jacobian::SimplexBlocks { labels, groups, .. } => labels * groups,
        }
    }

    pub fn apply(&self, v: &[T]) -> Vec<T> {
        self.apply_impl(v, false)
    }

    pub fn apply_transpose(&self, v: &[T]) -> Vec<T> {
        self.apply_impl(v, true)
    }

    fn apply_impl(&self, v: &[T], transpose: bool) -> Vec<T> {
        match self {
            Jacobian::Diagonal(d) => d.iter().zip(v).map(|(&a, &b)| a * b).collect(),
            &Jacobian::SimplexBlocks {
                labels,
                groups,
                ref blocks,
            } => {
                let mut out = vec![T::zero(); labels * groups];
                for g in 0..groups {
                    let block = &blocks[g * labels * labels..(g + 1) * labels * labels];
                    for i in 0..labels {
                        let mut acc = T::zero();
                        for j in 0..labels {
                            let a = if transpose {
                                block[j * labels + i]
                            } else {
                                block[i * labels + j]
                            };
                            acc = acc + a * v[j * groups + g];
                        }
                        out[i * groups + g] = acc;
                    }
                }
                out
            }
        }
    }

    /// Materialized row-major matrix, for tests and small problems.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let n = self.dim();
        let mut m = vec![vec![T::zero(); n]; n];
        match self {
            Jacobian::Diagonal(d) => {
                for (i, &v) in d.iter().enumerate() {
                    m[i][i] = v;
                }
            }
            &Jacobian::SimplexBlocks {
                labels,
                groups,
                ref blocks,
            } => {
                for g in 0..groups {
                    for i in 0..labels {
                        for j in 0..labels {
                            m[i * groups + g][j * groups + g] =
                                blocks[(g * labels + i) * labels + j];
                        }
                    }
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult<T> {
    pub point: Vec<T>,
    pub jacobian_wrt_point: Jacobian<T>,
    pub jacobian_wrt_cost: Jacobian<T>,
}

impl BregmanGenerator {
    pub fn new(kind: GeneratorKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("generator dimension must be positive".into()));
        }
        if let GeneratorKind::EntropySimplex { labels } = kind {
            if labels == 0 || dim % labels != 0 {
                return Err(Error::Config(format!(
                    "simplex dimension {dim} is not a multiple of the label count {labels}"
                )));
            }
        }
        Ok(Self { kind, dim })
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(GeneratorKind::Euclidean, dim).expect("positive dimension")
    }

    pub fn entropy_orthant(dim: usize) -> Self {
        Self::new(GeneratorKind::EntropyOrthant, dim).expect("positive dimension")
    }

    /// A single unit simplex in `R^labels`.
    pub fn simplex(labels: usize) -> Self {
        Self::new(GeneratorKind::EntropySimplex { labels }, labels).expect("positive dimension")
    }

    /// `groups` interleaved simplices of `labels` entries each (label-major).
    pub fn simplex_field(labels: usize, groups: usize) -> Self {
        Self::new(GeneratorKind::EntropySimplex { labels }, labels * groups)
            .expect("positive dimension")
    }

    pub fn binary_entropy(dim: usize) -> Self {
        Self::new(GeneratorKind::BinaryEntropy, dim).expect("positive dimension")
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_entropy(&self) -> bool {
        !matches!(self.kind, GeneratorKind::Euclidean)
    }

    fn simplex_shape(&self) -> Option<(usize, usize)> {
        match self.kind {
            GeneratorKind::EntropySimplex { labels } => Some((labels, self.dim / labels)),
            _ => None,
        }
    }

    /// Rejects points outside the closed domain.
    pub fn check_domain<T: Scalar>(&self, x: &[T]) -> Result<()> {
        self.check_with_margin(x, T::zero())
    }

    /// Rejects points that are not at least `1e-14` away from the domain boundary.
    pub fn check_interior<T: Scalar>(&self, x: &[T]) -> Result<()> {
        let margin = if self.is_entropy() {
            T::lit(INTERIOR_TOL)
        } else {
            T::zero()
        };
        self.check_with_margin(x, margin)
    }

    fn check_with_margin<T: Scalar>(&self, x: &[T], margin: T) -> Result<()> {
        check_len("generator input", self.dim, x.len())?;
        let domain = match self.kind {
            GeneratorKind::Euclidean => "full space",
            GeneratorKind::EntropyOrthant => "nonnegative orthant interior",
            GeneratorKind::EntropySimplex { .. } => "unit simplex interior",
            GeneratorKind::BinaryEntropy => "open box (-1, 1)",
        };
        for (index, &v) in x.iter().enumerate() {
            let ok = v.is_finite()
                && match self.kind {
                    GeneratorKind::Euclidean => true,
                    GeneratorKind::EntropyOrthant | GeneratorKind::EntropySimplex { .. } => {
                        v >= margin
                    }
                    GeneratorKind::BinaryEntropy => v.abs() <= T::one() - margin,
                };
            if !ok {
                return Err(Error::Domain {
                    domain,
                    index,
                    value: v.as_f64(),
                });
            }
        }
        if let Some((labels, groups)) = self.simplex_shape() {
            for g in 0..groups {
                let sum: T = (0..labels).map(|k| x[k * groups + g]).sum();
                if (sum - T::one()).abs() > T::lit(SIMPLEX_TOL) {
                    return Err(Error::OffSimplex {
                        group: g,
                        sum: sum.as_f64(),
                    });
                }
            }
        }
        Ok(())
    }

    /// `psi(x)`; `0 log 0` is taken as `0`.
    pub fn value<T: Scalar>(&self, x: &[T]) -> Result<T> {
        self.check_domain(x)?;
        let xlogx = |v: T| if v > T::zero() { v * v.ln() } else { T::zero() };
        Ok(match self.kind {
            GeneratorKind::Euclidean => x.iter().map(|&v| v * v).sum::<T>() * T::lit(0.5),
            GeneratorKind::EntropyOrthant | GeneratorKind::EntropySimplex { .. } => {
                x.iter().map(|&v| xlogx(v)).sum()
            }
            GeneratorKind::BinaryEntropy => {
                x.iter()
                    .map(|&v| xlogx(T::one() + v) + xlogx(T::one() - v))
                    .sum::<T>()
                    * T::lit(0.5)
            }
        })
    }

    /// `grad psi(x)`, defined on the interior.
    pub fn grad<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_domain(x)?;
        Ok(self.grad_unchecked(x))
    }

    pub(crate) fn grad_unchecked<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        match self.kind {
            GeneratorKind::Euclidean => x.to_vec(),
            GeneratorKind::EntropyOrthant | GeneratorKind::EntropySimplex { .. } => {
                x.iter().map(|&v| v.ln() + T::one()).collect()
            }
            GeneratorKind::BinaryEntropy => x.iter().map(|&v| atanh(v)).collect(),
        }
    }

    /// Diagonal of the Hessian of `psi` at an interior point.
    pub fn hess_diag<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        match self.kind {
            GeneratorKind::Euclidean => vec![T::one(); x.len()],
            GeneratorKind::EntropyOrthant | GeneratorKind::EntropySimplex { .. } => {
                x.iter().map(|&v| v.recip()).collect()
            }
            GeneratorKind::BinaryEntropy => {
                x.iter().map(|&v| (T::one() - v * v).recip()).collect()
            }
        }
    }

    /// `D_psi(x, xbar)` for `x` in the domain and `xbar` in its interior.
    pub fn distance<T: Scalar>(&self, x: &[T], xbar: &[T]) -> Result<T> {
        self.check_domain(x)?;
        self.check_interior(xbar)?;
        let gx = self.value(x)?;
        let gxbar = self.value(xbar)?;
        let grad = self.grad_unchecked(xbar);
        let lin: T = grad
            .iter()
            .zip(x.iter().zip(xbar))
            .map(|(&g, (&a, &b))| g * (a - b))
            .sum();
        Ok((gx - gxbar - lin).max(T::zero()))
    }

    /// Proximal map of `step * (<cost, .> + g)` in the geometry of this generator.
    ///
    /// Entropy generators accept `g = Zero` or the indicator of their own domain.
    /// The Euclidean generator evaluates `prox_{step g}(xbar - step * cost)`.
    pub fn prox<T: Scalar>(
        &self,
        g: &SimpleFunction<T>,
        xbar: &[T],
        cost: &[T],
        step: T,
    ) -> Result<ProxResult<T>> {
        self.check_prox_args(g, xbar, cost, step)?;
        self.check_interior(xbar)?;
        Ok(self.prox_unchecked(g, xbar, cost, step))
    }

    pub(crate) fn check_prox_args<T: Scalar>(
        &self,
        g: &SimpleFunction<T>,
        xbar: &[T],
        cost: &[T],
        step: T,
    ) -> Result<()> {
        check_len("prox center", self.dim, xbar.len())?;
        check_len("prox cost", self.dim, cost.len())?;
        if !(step > T::zero()) {
            return Err(Error::Config(format!("prox step must be positive, got {step}")));
        }
        g.validate()?;
        let supported = match (self.kind, g) {
            (GeneratorKind::Euclidean, SimpleFunction::L1 { .. }) => false,
            (GeneratorKind::Euclidean, _) => true,
            (_, SimpleFunction::Zero) => true,
            (GeneratorKind::EntropyOrthant, SimpleFunction::NonNegative) => true,
            (GeneratorKind::BinaryEntropy, &SimpleFunction::Box { lower, upper }) => {
                lower == -T::one() && upper == T::one()
            }
            _ => false,
        };
        if supported {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "{} with the {} generator",
                g.name(),
                self.kind.name()
            )))
        }
    }

    /// Prox without input validation; used inside the solvers, which check iterates
    /// for divergence themselves.
    pub(crate) fn prox_unchecked<T: Scalar>(
        &self,
        g: &SimpleFunction<T>,
        xbar: &[T],
        cost: &[T],
        step: T,
    ) -> ProxResult<T> {
        match self.kind {
            GeneratorKind::Euclidean => {
                let shifted: Vec<T> = xbar
                    .iter()
                    .zip(cost)
                    .map(|(&x, &c)| x - step * c)
                    .collect();
                let (point, d) = euclidean_prox_kernel(&shifted, g);
                let dc = d.iter().map(|&v| -step * v).collect();
                ProxResult {
                    point,
                    jacobian_wrt_point: Jacobian::Diagonal(d),
                    jacobian_wrt_cost: Jacobian::Diagonal(dc),
                }
            }
            GeneratorKind::EntropyOrthant => orthant_kernel(xbar, cost, step),
            GeneratorKind::EntropySimplex { labels } => {
                simplex_kernel(labels, self.dim / labels, xbar, cost, step)
            }
            GeneratorKind::BinaryEntropy => interval_kernel(xbar, cost, step),
        }
    }

    /// `(d prox / d y)^T v` for the prox written in mirror coordinates,
    /// `x = prox(y)` with `y = grad psi(xbar) - step * cost`. `x` must be the
    /// prox output belonging to `y`.
    pub fn mirror_vjp<T: Scalar>(&self, g: &SimpleFunction<T>, y: &[T], x: &[T], v: &[T]) -> Vec<T> {
        match self.kind {
            GeneratorKind::Euclidean => {
                let (_, d) = euclidean_prox_kernel(y, g);
                d.iter().zip(v).map(|(&a, &b)| a * b).collect()
            }
            GeneratorKind::EntropyOrthant => x.iter().zip(v).map(|(&a, &b)| a * b).collect(),
            GeneratorKind::EntropySimplex { labels } => {
                let groups = self.dim / labels;
                let mut out = vec![T::zero(); self.dim];
                for gi in 0..groups {
                    let xv: T = (0..labels).map(|k| x[k * groups + gi] * v[k * groups + gi]).sum();
                    for k in 0..labels {
                        let i = k * groups + gi;
                        out[i] = x[i] * (v[i] - xv);
                    }
                }
                out
            }
            GeneratorKind::BinaryEntropy => x
                .iter()
                .zip(v)
                .map(|(&a, &b)| (T::one() - a * a) * b)
                .collect(),
        }
    }
}

fn atanh<T: Scalar>(v: T) -> T {
    T::lit(0.5) * ((T::one() + v) / (T::one() - v)).ln()
}

/// Euclidean prox of `g` (step independent for the supported functions) and the
/// diagonal of its derivative. At a kink the derivative is taken as `0`.
fn euclidean_prox_kernel<T: Scalar>(x: &[T], g: &SimpleFunction<T>) -> (Vec<T>, Vec<T>) {
    match *g {
        SimpleFunction::Zero => (x.to_vec(), vec![T::one(); x.len()]),
        SimpleFunction::NonNegative => x
            .iter()
            .map(|&v| {
                if v > T::zero() {
                    (v, T::one())
                } else {
                    (T::zero(), T::zero())
                }
            })
            .unzip(),
        SimpleFunction::Box { lower, upper } => x
            .iter()
            .map(|&v| {
                if v > lower && v < upper {
                    (v, T::one())
                } else {
                    (v.max(lower).min(upper), T::zero())
                }
            })
            .unzip(),
        SimpleFunction::L1 { .. } => unreachable!("rejected by check_prox_args"),
    }
}

fn orthant_kernel<T: Scalar>(xbar: &[T], cost: &[T], step: T) -> ProxResult<T> {
    let e: Vec<T> = cost.iter().map(|&c| (-step * c).exp()).collect();
    let point: Vec<T> = xbar.iter().zip(&e).map(|(&x, &ei)| x * ei).collect();
    let dc = point.iter().map(|&p| -step * p).collect();
    ProxResult {
        point,
        jacobian_wrt_point: Jacobian::Diagonal(e),
        jacobian_wrt_cost: Jacobian::Diagonal(dc),
    }
}

fn simplex_kernel<T: Scalar>(
    labels: usize,
    groups: usize,
    xbar: &[T],
    cost: &[T],
    step: T,
) -> ProxResult<T> {
    let n = labels * groups;
    let mut point = vec![T::zero(); n];
    let mut jp = vec![T::zero(); groups * labels * labels];
    let mut jc = vec![T::zero(); groups * labels * labels];
    let mut logits = vec![T::zero(); labels];
    let mut ratio = vec![T::zero(); labels];
    for g in 0..groups {
        // shift by the largest log-weight so the exponentials cannot overflow
        let mut shift = T::neg_infinity();
        for k in 0..labels {
            let i = k * groups + g;
            logits[k] = xbar[i].ln() - step * cost[i];
            shift = shift.max(logits[k]);
        }
        let norm: T = logits.iter().map(|&l| (l - shift).exp()).sum();
        for k in 0..labels {
            let i = k * groups + g;
            point[i] = (logits[k] - shift).exp() / norm;
            // x_k / xbar_k, computed without dividing by a possibly vanishing xbar_k
            ratio[k] = (-step * cost[i] - shift).exp() / norm;
        }
        let base = g * labels * labels;
        for a in 0..labels {
            let xa = point[a * groups + g];
            for b in 0..labels {
                let xb = point[b * groups + g];
                let delta = if a == b { T::one() } else { T::zero() };
                jp[base + a * labels + b] = delta * ratio[a] - xa * ratio[b];
                jc[base + a * labels + b] = -step * (delta * xa - xa * xb);
            }
        }
    }
    ProxResult {
        point,
        jacobian_wrt_point: Jacobian::SimplexBlocks {
            labels,
            groups,
            blocks: jp,
        },
        jacobian_wrt_cost: Jacobian::SimplexBlocks {
            labels,
            groups,
            blocks: jc,
        },
    }
}

/// Closed form `(e^{-2 a c} - r) / (e^{-2 a c} + r)`, `r = (1 - xbar) / (1 + xbar)`,
/// evaluated as `tanh(atanh(xbar) - a c)` which is the same function but does not
/// overflow for large costs.
fn interval_kernel<T: Scalar>(xbar: &[T], cost: &[T], step: T) -> ProxResult<T> {
    let n = xbar.len();
    let mut point = Vec::with_capacity(n);
    let mut jp = Vec::with_capacity(n);
    let mut jc = Vec::with_capacity(n);
    let two = T::lit(2.0);
    for (&xb, &c) in xbar.iter().zip(cost) {
        if xb.abs() >= T::one() {
            // boundary points are fixed points; derivative is the one-sided limit
            point.push(xb);
            jp.push((two * step * c * xb).exp().min(T::max_value()));
            jc.push(T::zero());
            continue;
        }
        let ybar = atanh(xb);
        let y = ybar - step * c;
        let x = y.tanh();
        // (1 - x^2) / (1 - xbar^2) = (cosh(ybar) / cosh(y))^2
        let (ab, ay) = (ybar.abs(), y.abs());
        let ratio = (ab - ay).exp() * (T::one() + (-two * ab).exp()) / (T::one() + (-two * ay).exp());
        point.push(x);
        jp.push(ratio * ratio);
        jc.push(-step * (T::one() - x * x));
    }
    ProxResult {
        point,
        jacobian_wrt_point: Jacobian::Diagonal(jp),
        jacobian_wrt_cost: Jacobian::Diagonal(jc),
    }
}

/// `psi(x) - psi(xbar) - <grad psi(xbar), x - xbar>`.
pub fn bregman_distance<T: Scalar>(gen: &BregmanGenerator, x: &[T], xbar: &[T]) -> Result<T> {
    gen.distance(x, xbar)
}

/// Entropy prox on the nonnegative orthant: `xbar_i * exp(-alpha c_i)`.
pub fn prox_entropy_orthant<T: Scalar>(xbar: &[T], c: &[T], alpha: T) -> Result<ProxResult<T>> {
    let gen = BregmanGenerator::new(GeneratorKind::EntropyOrthant, xbar.len())?;
    gen.prox(&SimpleFunction::Zero, xbar, c, alpha)
}

/// Entropy prox on one unit simplex (normalized exponential weights).
pub fn prox_entropy_simplex<T: Scalar>(xbar: &[T], c: &[T], alpha: T) -> Result<ProxResult<T>> {
    let gen = BregmanGenerator::new(GeneratorKind::EntropySimplex { labels: xbar.len() }, xbar.len())?;
    gen.prox(&SimpleFunction::Zero, xbar, c, alpha)
}

/// Entropy prox on a label-major product of `xbar.len() / labels` simplices.
pub fn prox_entropy_simplex_field<T: Scalar>(
    labels: usize,
    xbar: &[T],
    c: &[T],
    alpha: T,
) -> Result<ProxResult<T>> {
    let gen = BregmanGenerator::new(GeneratorKind::EntropySimplex { labels }, xbar.len())?;
    gen.prox(&SimpleFunction::Zero, xbar, c, alpha)
}

/// Binary-entropy prox on the box `(-1, 1)^d`.
pub fn prox_binary_entropy_interval<T: Scalar>(
    xbar: &[T],
    c: &[T],
    alpha: T,
) -> Result<ProxResult<T>> {
    let gen = BregmanGenerator::new(GeneratorKind::BinaryEntropy, xbar.len())?;
    gen.prox(&SimpleFunction::Zero, xbar, c, alpha)
}

/// Euclidean prox (projection for indicators) of `alpha * g` at `xbar`.
/// The Jacobian with respect to the cost refers to the shifted argument
/// `xbar - alpha * c` and is `-alpha` times the point Jacobian.
pub fn prox_euclidean<T: Scalar>(
    xbar: &[T],
    g: &SimpleFunction<T>,
    alpha: T,
) -> Result<ProxResult<T>> {
    let gen = BregmanGenerator::new(GeneratorKind::Euclidean, xbar.len())?;
    let zero = vec![T::zero(); xbar.len()];
    gen.prox(g, xbar, &zero, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn distance_examples() {
        let e = BregmanGenerator::euclidean(2);
        assert_eq!(e.distance(&[2.0, -1.0], &[2.0, -1.0]).unwrap(), 0.0);
        let e1 = BregmanGenerator::euclidean(1);
        assert_relative_eq!(e1.distance(&[3.0], &[1.0]).unwrap(), 2.0);
        let h = BregmanGenerator::entropy_orthant(1);
        let d = h.distance(&[1.0], &[std::f64::consts::E]).unwrap();
        assert_relative_eq!(d, std::f64::consts::E - 2.0, epsilon = 1e-14);
    }

    #[test]
    fn distance_rejects_domain_violation() {
        let h = BregmanGenerator::entropy_orthant(3);
        let err = h.distance(&[1.0, -0.5, 1.0], &[1.0, 1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Domain { index: 1, .. }), "{err}");
        let err = h.distance(&[1.0, 1.0, 1.0], &[1.0, 1e-16, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Domain { index: 1, .. }));
    }

    #[test]
    fn orthant_examples() {
        let r = prox_entropy_orthant(&[0.3, 2.0], &[0.0, 0.0], 0.7).unwrap();
        assert_eq!(r.point, vec![0.3, 2.0]);
        assert_eq!(r.jacobian_wrt_point, Jacobian::Diagonal(vec![1.0, 1.0]));
        let r = prox_entropy_orthant(&[1.0], &[2f64.ln()], 1.0).unwrap();
        assert_relative_eq!(r.point[0], 0.5, epsilon = 1e-15);
        let r = prox_entropy_orthant(&[2.0], &[2.0], 0.5).unwrap();
        assert_relative_eq!(r.point[0], 2.0 * (-1f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(r.point[0], 0.73576, epsilon = 1e-5);
        assert!(prox_entropy_orthant(&[0.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn simplex_examples() {
        let r = prox_entropy_simplex(&[0.25; 4], &[0.0; 4], 3.0).unwrap();
        for &p in &r.point {
            assert_relative_eq!(p, 0.25, epsilon = 1e-16);
        }
        let xbar = [0.1, 0.6, 0.3];
        let r = prox_entropy_simplex(&xbar, &[0.0; 3], 0.4).unwrap();
        for (a, b) in r.point.iter().zip(&xbar) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        let r = prox_entropy_simplex(&[0.5, 0.5], &[0.0, 3f64.ln()], 1.0).unwrap();
        assert_relative_eq!(r.point[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(r.point[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn simplex_rejects_off_simplex_input() {
        let err = prox_entropy_simplex(&[0.5, 0.6], &[0.0, 0.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::OffSimplex { group: 0, .. }));
    }

    #[test]
    fn simplex_survives_huge_costs() {
        let r = prox_entropy_simplex(&[0.5, 0.5], &[-1e4, 1e4], 1.0).unwrap();
        assert_eq!(r.point, vec![1.0, 0.0]);
        assert!(r.jacobian_wrt_point.to_dense().iter().flatten().all(|v: &f64| v.is_finite()));
    }

    #[test]
    fn interval_examples() {
        let r = prox_binary_entropy_interval(&[0.0], &[0.0], 1.0).unwrap();
        assert_eq!(r.point[0], 0.0);
        let r = prox_binary_entropy_interval(&[-0.8, 0.35], &[0.0, 0.0], 2.0).unwrap();
        assert_relative_eq!(r.point[0], -0.8, epsilon = 1e-15);
        assert_relative_eq!(r.point[1], 0.35, epsilon = 1e-15);
        let r = prox_binary_entropy_interval(&[0.0], &[-0.5 * 3f64.ln()], 1.0).unwrap();
        assert_relative_eq!(r.point[0], 0.5, epsilon = 1e-15);
        assert!(prox_binary_entropy_interval(&[1.0], &[0.0], 1.0).is_err());
        assert!(prox_binary_entropy_interval(&[-1.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn interval_matches_printed_closed_form() {
        for &(xb, c, a) in &[(0.3f64, 0.7f64, 0.4f64), (-0.9, -1.2, 0.25), (0.99, 2.0, 1.0)] {
            let r = prox_binary_entropy_interval(&[xb], &[c], a).unwrap();
            let e = (-2.0 * a * c).exp();
            let ratio = (1.0 - xb) / (1.0 + xb);
            assert_relative_eq!(r.point[0], (e - ratio) / (e + ratio), epsilon = 1e-14);
        }
    }

    #[test]
    fn euclidean_examples() {
        let r = prox_euclidean(&[0.4, -2.0], &SimpleFunction::Zero, 0.5).unwrap();
        assert_eq!(r.point, vec![0.4, -2.0]);
        let r = prox_euclidean(&[-0.3], &SimpleFunction::NonNegative, 1.0).unwrap();
        assert_eq!(r.point, vec![0.0]);
        let r = prox_euclidean(&[0.7], &SimpleFunction::NonNegative, 1.0).unwrap();
        assert_eq!(r.point, vec![0.7]);
        assert_eq!(r.jacobian_wrt_point, Jacobian::Diagonal(vec![1.0]));
        // kink convention
        let r = prox_euclidean(&[0.0], &SimpleFunction::NonNegative, 1.0).unwrap();
        assert_eq!(r.jacobian_wrt_point, Jacobian::Diagonal(vec![0.0]));
        let b = SimpleFunction::Box {
            lower: 0.0,
            upper: 1.0,
        };
        let r = prox_euclidean(&[1.4, 0.5], &b, 1.0).unwrap();
        assert_eq!(r.point, vec![1.0, 0.5]);
    }

    #[test]
    fn unsupported_functions() {
        let err = prox_euclidean(&[1.0], &SimpleFunction::L1 { weight: 1.0 }, 1.0).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
        let g = BregmanGenerator::simplex(2);
        let err = g
            .prox(&SimpleFunction::NonNegative, &[0.5, 0.5], &[0.0, 0.0], 1.0)
            .unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn simplex_field_blocks_are_independent() {
        // two groups, three labels, label-major
        let xbar = [0.2, 0.5, 0.3, 0.1, 0.5, 0.4];
        let c = [0.1, -0.2, 0.3, 0.0, 0.4, 0.4];
        let joint = prox_entropy_simplex_field(3, &xbar, &c, 0.8).unwrap();
        for g in 0..2 {
            let xb: Vec<f64> = (0..3).map(|k| xbar[k * 2 + g]).collect();
            let cg: Vec<f64> = (0..3).map(|k| c[k * 2 + g]).collect();
            let single = prox_entropy_simplex(&xb, &cg, 0.8).unwrap();
            for k in 0..3 {
                assert_relative_eq!(joint.point[k * 2 + g], single.point[k], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn works_in_single_precision() {
        let r = prox_entropy_simplex(&[0.5f32, 0.5], &[0.0, 3f32.ln()], 1.0).unwrap();
        assert!((r.point[0] - 0.75).abs() < 1e-6);
    }
}

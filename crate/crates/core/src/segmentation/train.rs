//! Bilevel training of the unary model: cost tensor -> ergodic primal-dual solve ->
//! softmax loss -> reverse pass -> outer step.

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{check_len, Error, Result};
use crate::upper::{run_outer, AdamConfig, OuterEvaluation, Optimizer};
use crate::Scalar;

use super::loss::{mean_iou, pixel_accuracy, softmax_loss};
use super::model::{Features, LinearUnaryModel};
use super::operator::{ContrastWeights, TvCoupling, DEFAULT_GAMMA};
use super::solve::{solution_gradient, solve_segmentation};
use super::argmax_labels;

/// Default number of lower-level iterations per outer step.
pub const DEFAULT_N_INNER: usize = 100;

/// One training image with its ground truth and precomputed coupling.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub features: Features<T>,
    /// 0-based labels per pixel.
    pub gt: Vec<usize>,
    pub coupling: TvCoupling<T>,
}

impl<T: Scalar> Sample<T> {
    /// Builds the contrast weights from the mean feature channel.
    pub fn new(features: Features<T>, gt: Vec<usize>, labels: usize, gamma: T) -> Result<Self> {
        check_len("ground truth", features.grid.npix(), gt.len())?;
        if let Some(&l) = gt.iter().find(|&&l| l >= labels) {
            return Err(Error::Input(format!("ground-truth label {l} exceeds {labels} labels")));
        }
        let weights = ContrastWeights::from_intensity(features.grid, &features.mean_channel(), gamma)?;
        Ok(Self {
            coupling: TvCoupling::new(weights, labels),
            features,
            gt,
        })
    }

    pub fn labels(&self) -> usize {
        self.coupling.labels
    }
}

/// Loss, gradient and prediction for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval<T> {
    /// Summed over pixels.
    pub loss: T,
    pub gradient: Vec<T>,
    pub labeling: Vec<usize>,
    pub tau: T,
    pub sigma: T,
}

/// Unrolled loss of one image and its exact gradient with respect to the model
/// parameters. Step sizes are treated as constants; `steps = None` derives them
/// from the current smoothness.
pub fn image_objective<T: Scalar>(
    model: &LinearUnaryModel,
    theta: &[T],
    sample: &Sample<T>,
    n_inner: usize,
    steps: Option<(T, T)>,
) -> Result<ImageEval<T>> {
    let c = model.apply(theta, &sample.features)?;
    let s = model.log_smoothness(theta);
    let sol = solve_segmentation(&c, &sample.coupling, s, n_inner, steps)?;
    let (loss, dl_du) = softmax_loss(&sol.state.u, &sample.gt, model.labels)?;
    let report = solution_gradient(&sol, &sample.coupling, dl_du)?;
    let dphi = &report.gradient;
    let ncost = c.values.len();
    let mut gradient = model.vjp(theta, &sample.features, &dphi[..ncost])?;
    let last = gradient.len() - 1;
    gradient[last] = gradient[last] + dphi[ncost];
    Ok(ImageEval {
        loss,
        gradient,
        labeling: sol.state.labeling(),
        tau: sol.tau,
        sigma: sol.sigma,
    })
}

/// Mean per-pixel loss over a dataset with pooled metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEval<T> {
    pub loss: T,
    pub gradient: Vec<T>,
    pub pixel_acc: f64,
    pub mean_iou: f64,
}

/// Evaluates every sample (in parallel when a pool is given) and averages the
/// per-pixel losses in dataset order.
pub fn dataset_objective<T: Scalar>(
    model: &LinearUnaryModel,
    theta: &[T],
    samples: &[Sample<T>],
    n_inner: usize,
    pool: Option<&ThreadPool>,
) -> Result<DatasetEval<T>> {
    if samples.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let eval = |s: &Sample<T>| image_objective(model, theta, s, n_inner, None);
    let evals: Vec<Result<ImageEval<T>>> = match pool {
        Some(pool) => pool.install(|| samples.par_iter().map(eval).collect()),
        None => samples.iter().map(eval).collect(),
    };
    let mut loss = T::zero();
    let mut gradient = vec![T::zero(); model.param_dim()];
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    let inv_images = T::one() / T::lit(samples.len() as f64);
    for (e, s) in evals.into_iter().zip(samples) {
        let e = e?;
        let w = inv_images / T::lit(s.gt.len() as f64);
        loss = loss + w * e.loss;
        for (g, &d) in gradient.iter_mut().zip(&e.gradient) {
            *g = *g + w * d;
        }
        pred.extend_from_slice(&e.labeling);
        gt.extend_from_slice(&s.gt);
    }
    Ok(DatasetEval {
        loss,
        gradient,
        pixel_acc: pixel_accuracy(&pred, &gt),
        mean_iou: mean_iou(&pred, &gt, model.labels),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub n_inner: usize,
    /// Outer iterations (full-batch).
    pub iterations: usize,
    pub optimizer: Optimizer<T>,
    pub gamma: T,
    /// Worker threads for per-image solves; `0` runs serially.
    pub threads: usize,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            n_inner: DEFAULT_N_INNER,
            iterations: 200,
            optimizer: Optimizer::Adam(AdamConfig::default()),
            gamma: T::lit(DEFAULT_GAMMA),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub iter: usize,
    pub loss: f64,
    pub pixel_acc: f64,
    pub mean_iou: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult<T> {
    pub theta: Vec<T>,
    pub log: Vec<TrainLogRow>,
    /// Evaluation at the returned parameters.
    pub final_eval: DatasetEval<T>,
}

fn build_pool(threads: usize) -> Result<Option<ThreadPool>> {
    if threads == 0 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Full-batch bilevel training from `theta0`.
pub fn train<T: Scalar>(
    model: &LinearUnaryModel,
    samples: &[Sample<T>],
    theta0: Vec<T>,
    config: &TrainConfig<T>,
) -> Result<TrainResult<T>> {
    if samples.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    check_len("initial parameters", model.param_dim(), theta0.len())?;
    for s in samples {
        check_len("sample labels", model.labels, s.labels())?;
    }
    let pool = build_pool(config.threads)?;
    let mut objective = |theta: &[T]| -> Result<OuterEvaluation<T>> {
        let e = dataset_objective(model, theta, samples, config.n_inner, pool.as_ref())?;
        Ok(OuterEvaluation {
            loss: e.loss,
            gradient: e.gradient,
            metrics: vec![("pixel_acc", e.pixel_acc), ("mean_iou", e.mean_iou)],
        })
    };
    let outer = run_outer(&mut objective, theta0, &config.optimizer, config.iterations)?;
    let log = outer
        .rows
        .iter()
        .map(|r| {
            let metric = |name: &str| {
                r.metrics
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map_or(f64::NAN, |(_, v)| *v)
            };
            TrainLogRow {
                iter: r.iteration,
                loss: r.loss.as_f64(),
                pixel_acc: metric("pixel_acc"),
                mean_iou: metric("mean_iou"),
                seconds: r.seconds,
            }
        })
        .collect();
    let theta = outer.final_state.theta;
    let final_eval = dataset_objective(model, &theta, samples, config.n_inner, pool.as_ref())?;
    Ok(TrainResult {
        theta,
        log,
        final_eval,
    })
}

/// Predicted labelings of every sample under `theta`.
pub fn predict<T: Scalar>(
    model: &LinearUnaryModel,
    theta: &[T],
    samples: &[Sample<T>],
    n_inner: usize,
) -> Result<Vec<Vec<usize>>> {
    samples
        .iter()
        .map(|s| {
            let c = model.apply(theta, &s.features)?;
            let sol = solve_segmentation(&c, &s.coupling, model.log_smoothness(theta), n_inner, None)?;
            Ok(argmax_labels(&sol.state.u, model.labels, s.features.grid.npix()))
        })
        .collect()
}

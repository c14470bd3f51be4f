//! `check-grad`: analytic gradients against central finite differences.

use bilevel_core::segmentation::data::{synthetic_dataset, SyntheticSpec};
use bilevel_core::segmentation::train::image_objective;
use bilevel_core::segmentation::{default_steps, LinearUnaryModel, Sample};
use bilevel_core::smoothed::toy_barrier_minimize;
use bilevel_core::toy::{self, ToyConfig, ToyEstimator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{key, unhashed, KeySpec, Settings};
use crate::output::{num, OutDir};
use crate::toy::{base_config, kinds};
use crate::{CliError, Status};

pub const KEYS: &[KeySpec] = &[
    key("module", "segmentation"),
    key("h", "1e-6"),
    key("seed", "1"),
    // segmentation
    key("size", "4x4"),
    key("labels", "2"),
    key("n_inner", "10"),
    key("gamma", "10"),
    key("tol", "1e-4"),
    // toy
    key("theta", "0.3"),
    key("kind", "all"),
    key("n", "200"),
    key("tol_unrolled", "1e-6"),
    key("tol_approx", "1e-2"),
    key("lambda", "1"),
    key("b", "1"),
    key("theta_star", "1"),
    key("alpha", "0.5"),
    key("mu", "1e-6"),
    key("x0", "1"),
    unhashed("out", "."),
];

pub fn run(s: &Settings, out: &mut OutDir) -> Result<Status, CliError> {
    match s.str("module") {
        "segmentation" => segmentation(s, out),
        "toy" => toy_module(s, out),
        other => Err(CliError::Usage(format!(
            "unknown module '{other}' (expected segmentation or toy)"
        ))),
    }
}

fn report(pass: bool, line: String) -> Status {
    println!("{} {line}", if pass { "PASS" } else { "FAIL" });
    if pass {
        Status::Ok
    } else {
        Status::Fail
    }
}

fn segmentation(s: &Settings, out: &mut OutDir) -> Result<Status, CliError> {
    let (nx, ny) = s.size("size")?;
    let labels: usize = s.get("labels")?;
    let n_inner: usize = s.get("n_inner")?;
    let h: f64 = s.get("h")?;
    let tol: f64 = s.get("tol")?;
    let seed: u64 = s.get("seed")?;
    let spec = SyntheticSpec {
        nx,
        ny,
        labels,
        images: 1,
        noiseless: 0,
        noise: 0.1,
        seed,
    };
    let img = synthetic_dataset::<f64>(&spec)?.remove(0);
    let sample = Sample::new(img.features, img.gt, labels, s.get("gamma")?)?;
    let model = LinearUnaryModel::new(labels, sample.features.channels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..model.param_dim()).map(|_| rng.gen_range(-0.5..0.5)).collect();
    // step sizes from the base point, held fixed on both sides of each difference
    let steps = Some(default_steps(&sample.coupling, model.log_smoothness(&theta)));
    let eval = image_objective(&model, &theta, &sample, n_inner, steps)?;

    let mut csv = out.csv("check_grad.csv", &["index", "analytic", "finite_difference", "abs_diff"])?;
    let (mut diff2, mut norm2) = (0.0, 0.0);
    for i in 0..theta.len() {
        let at = |d: f64| -> Result<f64, CliError> {
            let mut t = theta.clone();
            t[i] += d;
            Ok(image_objective(&model, &t, &sample, n_inner, steps)?.loss)
        };
        let fd = (at(h)? - at(-h)?) / (2.0 * h);
        let g = eval.gradient[i];
        diff2 += (g - fd).powi(2);
        norm2 += fd * fd;
        csv.row(&[i.to_string(), num(g), num(fd), num((g - fd).abs())])?;
    }
    csv.close()?;
    let rel = diff2.sqrt() / norm2.sqrt().max(f64::MIN_POSITIVE);
    Ok(report(
        rel <= tol,
        format!(
            "check-grad segmentation {nx}x{ny} labels={labels} n_inner={n_inner}: relative error {rel:.3e} (tol {tol:e})"
        ),
    ))
}

fn toy_module(s: &Settings, out: &mut OutDir) -> Result<Status, CliError> {
    let n: usize = s.get("n")?;
    let theta: f64 = s.get("theta")?;
    let h: f64 = s.get("h")?;
    let cfg = ToyConfig {
        theta_eval: theta,
        n_forward: n,
        n_back: n,
        ..base_config(s)?
    };
    let g = cfg.ground_truth();
    let mut csv = out.csv(
        "check_grad.csv",
        &["kind", "theta", "estimate", "finite_difference", "rel_error", "tol", "pass"],
    )?;
    let mut all = true;
    for kind in kinds(s, "kind")? {
        let est = toy::run_estimator(kind, &cfg)?.estimate;
        // each estimator is compared with the derivative of the map it approximates
        let fd = match kind {
            ToyEstimator::SmoothedImpl => {
                let loss = |t: f64| -> Result<f64, CliError> {
                    Ok(toy::toy_loss(toy_barrier_minimize(t, cfg.lambda, cfg.b, cfg.mu, 1e-14)?, g))
                };
                (loss(theta + 10.0 * h)? - loss(theta - 10.0 * h)?) / (20.0 * h)
            }
            _ => {
                let unrolled = match kind {
                    ToyEstimator::ProjGd | ToyEstimator::ProjGd2 => ToyEstimator::ProjGd,
                    _ => ToyEstimator::BregmanFb,
                };
                let loss = |t: f64| toy::unrolled_loss(unrolled, &cfg, t);
                (loss(theta + h)? - loss(theta - h)?) / (2.0 * h)
            }
        };
        let tol: f64 = if kind.is_unrolled() {
            s.get("tol_unrolled")?
        } else {
            s.get("tol_approx")?
        };
        let rel = (est - fd).abs() / fd.abs().max(f64::MIN_POSITIVE);
        let pass = rel <= tol;
        all &= pass;
        csv.row(&[
            kind.tag().into(),
            num(theta),
            num(est),
            num(fd),
            num(rel),
            num(tol),
            pass.to_string(),
        ])?;
        report(pass, format!("check-grad toy {kind} theta={theta}: relative error {rel:.3e} (tol {tol:e})"));
    }
    csv.close()?;
    Ok(if all { Status::Ok } else { Status::Fail })
}

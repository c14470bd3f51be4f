//! `toy-gradients` and `toy-sweep`.

use bilevel_core::toy::{self, SweepPoint, ToyConfig, ToyEstimator, ToyOutcome};

use crate::config::{key, unhashed, KeySpec, Settings};
use crate::output::{num, OutDir};
use crate::{worker_threads, CliError, Status};

macro_rules! toy_keys {
    ($($extra:expr),* $(,)?) => {
        &[
            key("lambda", "1"),
            key("b", "1"),
            key("theta_star", "1"),
            key("alpha", "0.5"),
            key("mu", "1e-6"),
            key("x0", "1"),
            unhashed("out", "."),
            $($extra),*
        ]
    };
}

pub const GRADIENT_KEYS: &[KeySpec] = toy_keys![
    key("theta", "0.3"),
    key("kind", "bregman-fb"),
    key("n", "200"),
    key("n_back", "same"),
];

pub const SWEEP_KEYS: &[KeySpec] = toy_keys![
    key("kinds", "all"),
    key("thetas", "0,0.3"),
    key("n_forward", "200"),
    key("n_back", "0,1,2,5,10,20,50,100,200"),
    unhashed("threads", "auto"),
];

pub const COLUMNS: [&str; 9] = [
    "kind",
    "theta",
    "n_forward",
    "n_back",
    "estimate",
    "reference_lo",
    "reference_hi",
    "abs_error",
    "in_interval",
];

pub fn base_config(s: &Settings) -> Result<ToyConfig<f64>, CliError> {
    let cfg = ToyConfig {
        lambda: s.get("lambda")?,
        b: s.get("b")?,
        theta_star: s.get("theta_star")?,
        alpha: s.get("alpha")?,
        mu: s.get("mu")?,
        x0: s.get("x0")?,
        ..ToyConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn kinds(s: &Settings, k: &str) -> Result<Vec<ToyEstimator>, CliError> {
    if s.str(k) == "all" {
        return Ok(ToyEstimator::ALL.to_vec());
    }
    let kinds: Vec<ToyEstimator> = s.list(k)?;
    if kinds.is_empty() {
        return Err(CliError::Usage(format!("'{k}' names no estimator")));
    }
    Ok(kinds)
}

pub fn row(o: &ToyOutcome<f64>) -> Vec<String> {
    let (lo, hi) = o.reference.bounds();
    vec![
        o.kind.tag().to_string(),
        num(o.theta),
        o.n_forward.to_string(),
        o.n_back.to_string(),
        num(o.estimate),
        num(lo),
        num(hi),
        num(o.abs_error),
        o.in_interval.to_string(),
    ]
}

pub fn gradients(s: &Settings, out: &mut OutDir) -> Result<Status, CliError> {
    let n: usize = s.get("n")?;
    let n_back = match s.str("n_back") {
        "same" => n,
        _ => s.get("n_back")?,
    };
    let cfg = ToyConfig {
        theta_eval: s.get("theta")?,
        n_forward: n,
        n_back,
        ..base_config(s)?
    };
    let outcomes = kinds(s, "kind")?
        .into_iter()
        .map(|k| toy::run_estimator(k, &cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut main = out.csv("toy_gradients.csv", &COLUMNS)?;
    let mut contrib = out.csv("contributions.csv", &["kind", "theta", "k", "contribution"])?;
    let mut energy = out.csv("energy.csv", &["kind", "theta", "k", "energy"])?;
    println!(
        "{:<16} {:>14} {:>14} {:>14} {:>10}",
        "kind", "estimate", "reference_lo", "reference_hi", "abs_error"
    );
    for o in &outcomes {
        let r = row(o);
        main.row(&r)?;
        println!("{:<16} {:>14} {:>14} {:>14} {:>10.2e}", r[0], fmt(o.estimate), r[5], r[6], o.abs_error);
        for (k, c) in o.report.contributions.iter().enumerate() {
            contrib.row(&[o.kind.tag().into(), num(o.theta), k.to_string(), num(*c)])?;
        }
        for (k, e) in o.energies.iter().enumerate() {
            energy.row(&[o.kind.tag().into(), num(o.theta), k.to_string(), num(*e)])?;
        }
        for w in &o.report.warnings {
            log::warn!("{}: {w}", o.kind);
        }
    }
    main.close()?;
    contrib.close()?;
    energy.close()?;
    Ok(Status::Ok)
}

fn fmt(v: f64) -> String {
    format!("{v:.10}")
}

pub fn sweep(s: &Settings, out: &mut OutDir) -> Result<Status, CliError> {
    let base = base_config(s)?;
    let grid = SweepPoint::grid(
        &kinds(s, "kinds")?,
        &s.list::<f64>("thetas")?,
        &s.list::<usize>("n_forward")?,
        &s.list::<usize>("n_back")?,
    );
    let rows = toy::sweep(&base, &grid, worker_threads(s)?);
    let mut csv = out.csv("toy_sweep.csv", &COLUMNS)?;
    let mut failed = 0;
    for r in &rows {
        match &r.outcome {
            Ok(o) => csv.row(&row(o))?,
            Err(e) => {
                failed += 1;
                eprintln!(
                    "{} at theta {} (n_forward {}, n_back {}): {e}",
                    r.point.kind, r.point.theta, r.point.n_forward, r.point.n_back
                );
                let nan = num(f64::NAN);
                csv.row(&[
                    r.point.kind.tag().into(),
                    num(r.point.theta),
                    r.point.n_forward.to_string(),
                    r.point.n_back.to_string(),
                    nan.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan,
                    "false".into(),
                ])?;
            }
        }
    }
    csv.close()?;
    println!("{} rows, {failed} failed", rows.len());
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} sweep cells failed")));
    }
    Ok(Status::Ok)
}

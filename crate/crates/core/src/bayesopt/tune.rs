//! The outer tuning loop: a random initial design, a kernel fitted by
//! maximum likelihood, then expected-improvement proposals.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use super::acquisition::{expected_improvement, propose_next, ProposalSearch};
use super::design::HyperBox;
use super::gp::{fit_kernel_mle, Kernel, MleBounds, Observation, Posterior};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneConfig {
    /// Total tuning stages `L`.
    pub stages: usize,
    /// Uniform-random stages `L0` before the first proposal.
    pub initial_stages: usize,
    pub mle_restarts: usize,
    /// Refit the kernel after every new observation instead of once after
    /// the initial design.
    pub refit: bool,
    pub search: ProposalSearch,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig { stages: 60, initial_stages: 10, mle_restarts: 5, refit: false, search: ProposalSearch::default() }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_stages >= 1 && self.initial_stages < self.stages) {
            return Err(Error::config(format!(
                "need 1 <= L0 < L, got L0 = {} and L = {}",
                self.initial_stages, self.stages
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    /// 1-based tuning stage.
    pub stage: usize,
    pub theta: Vec<f64>,
    /// `None` when the evaluator failed.
    pub value: Option<f64>,
    /// Best value so far; `None` until the first success.
    pub incumbent: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub theta_star: Vec<f64>,
    pub c_star: f64,
    pub history: Vec<HistoryEntry>,
    pub kernel: Kernel,
    /// The kernel MLE could not improve on its initialization.
    pub mle_warning: bool,
}

impl TuneResult {
    pub fn observations(&self) -> Vec<Observation> {
        observations(&self.history)
    }

    pub fn incumbent_trace(&self) -> Vec<Option<f64>> {
        self.history.iter().map(|h| h.incumbent).collect()
    }
}

fn observations(history: &[HistoryEntry]) -> Vec<Observation> {
    history.iter().filter_map(|h| h.value.map(|value| Observation { theta: h.theta.clone(), value })).collect()
}

/// Initial kernel for the MLE: sample mean and variance, lengthscales a
/// fifth of each box width.
pub fn default_kernel(bounds: &HyperBox, observations: &[Observation]) -> Kernel {
    let n = observations.len().max(1) as f64;
    let mean = observations.iter().map(|o| o.value).sum::<f64>() / n;
    let var = observations.iter().map(|o| (o.value - mean).powi(2)).sum::<f64>() / n;
    Kernel {
        mean,
        amplitude: var.max(1e-6),
        inv_lengthscales: bounds.widths().iter().map(|w| 25.0 / (w * w)).collect(),
        jitter: super::gp::DEFAULT_JITTER,
    }
}

fn fit(
    bounds: &HyperBox,
    obs: &[Observation],
    restarts: usize,
    rng: &mut (impl Rng + ?Sized),
) -> Result<(Kernel, bool)> {
    let init = default_kernel(bounds, obs);
    let fit = fit_kernel_mle(&init, obs, restarts, &MleBounds::for_box(bounds, obs), rng)?;
    Ok((fit.kernel, fit.warning))
}

/// Maximizes `evaluator` over `bounds`. A failed evaluation is recorded in
/// the history and otherwise ignored.
pub fn tune<F, R>(mut evaluator: F, bounds: &HyperBox, config: TuneConfig, rng: &mut R) -> Result<TuneResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    config.validate()?;
    let mut history: Vec<HistoryEntry> = Vec::with_capacity(config.stages);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut kernel: Option<Kernel> = None;
    let mut warning = false;

    for stage in 1..=config.stages {
        let obs = observations(&history);
        let theta = if stage <= config.initial_stages || obs.is_empty() {
            bounds.sample_uniform(rng)
        } else {
            if kernel.is_none() || config.refit {
                let (k, w) = fit(bounds, &obs, config.mle_restarts, rng)?;
                kernel = Some(k);
                warning |= w;
            }
            let post = Posterior::new(kernel.as_ref().expect("fitted above"), &obs)?;
            let incumbent = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1);
            propose_next(&post, incumbent, bounds, config.search, rng).theta
        };
        let (value, error) = match evaluator(&theta) {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("evaluator returned {v}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(v) = value {
            if best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((theta.clone(), v));
            }
        }
        history.push(HistoryEntry { stage, theta, value, incumbent: best.as_ref().map(|b| b.1), error });
    }

    let (theta_star, c_star) = best.ok_or(Error::Empty("every tuning stage failed"))?;
    let kernel = match kernel {
        Some(k) => k,
        None => default_kernel(bounds, &observations(&history)),
    };
    Ok(TuneResult { theta_star, c_star, history, kernel, mle_warning: warning })
}

pub fn write_history_csv<W: Write>(out: W, history: &[HistoryEntry], theta_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["stage".to_string()];
    header.extend(theta_names.iter().cloned());
    header.extend(["value".to_string(), "incumbent".to_string()]);
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for h in history {
        let mut row = vec![h.stage.to_string()];
        row.extend(h.theta.iter().map(f64::to_string));
        row.extend([opt(h.value), opt(h.incumbent)]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneSummary {
    pub theta_star: Vec<f64>,
    pub c_star: f64,
    #[serde(rename = "L")]
    pub stages: usize,
    #[serde(rename = "L0")]
    pub initial_stages: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub theta: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub ei: f64,
}

/// Posterior mean, standard deviation and EI on a regular grid with
/// `per_dim` points per axis. Only for boxes of at most three dimensions.
pub fn posterior_grid(post: &Posterior, bounds: &HyperBox, incumbent: f64, per_dim: usize) -> Result<Vec<GridPoint>> {
    let d = bounds.dims();
    if d > 3 || per_dim < 2 {
        return Err(Error::config("posterior grid needs at most 3 dims and at least 2 points per axis"));
    }
    let total = per_dim.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let unit: Vec<f64> = (0..d)
            .map(|_| {
                let i = rem % per_dim;
                rem /= per_dim;
                i as f64 / (per_dim - 1) as f64
            })
            .collect();
        let theta = bounds.from_unit(&unit);
        let (m, s) = post.predict(&theta);
        out.push(GridPoint { theta, mean: m, sd: s, ei: expected_improvement(m, s, incumbent) });
    }
    Ok(out)
}

pub fn write_grid_csv<W: Write>(out: W, grid: &[GridPoint], theta_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = theta_names.to_vec();
    header.extend(["mean", "sd", "ei"].map(String::from));
    w.write_record(&header)?;
    for g in grid {
        let mut row: Vec<String> = g.theta.iter().map(f64::to_string).collect();
        row.extend([g.mean.to_string(), g.sd.to_string(), g.ei.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn unit_box() -> HyperBox {
        HyperBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn constant_evaluator() {
        let cfg = TuneConfig { stages: 15, initial_stages: 5, ..TuneConfig::default() };
        let r = tune(|_| Ok(0.7), &unit_box(), cfg, &mut stream(0, &[])).unwrap();
        assert_eq!(r.c_star, 0.7);
        assert!(r.history.iter().all(|h| h.incumbent == Some(0.7)));
        assert_eq!(r.history.len(), 15);
    }

    #[test]
    fn rejects_bad_stage_counts() {
        let cfg = TuneConfig { stages: 1, initial_stages: 1, ..TuneConfig::default() };
        assert!(tune(|_| Ok(0.0), &unit_box(), cfg, &mut stream(0, &[])).is_err());
    }

    #[test]
    fn failures_are_recorded_and_skipped() {
        let mut calls = 0;
        let cfg = TuneConfig { stages: 12, initial_stages: 4, ..TuneConfig::default() };
        let r = tune(
            |t| {
                calls += 1;
                if calls % 3 == 0 {
                    Err(Error::config("boom"))
                } else {
                    Ok(1.0 - (t[0] - 0.4).powi(2))
                }
            },
            &unit_box(),
            cfg,
            &mut stream(1, &[]),
        )
        .unwrap();
        assert_eq!(r.history.iter().filter(|h| h.error.is_some()).count(), 4);
        assert_eq!(r.observations().len(), 8);
        let trace: Vec<f64> = r.incumbent_trace().into_iter().flatten().collect();
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn history_csv_has_one_row_per_stage() {
        let cfg = TuneConfig { stages: 3, initial_stages: 2, ..TuneConfig::default() };
        let r = tune(|t| Ok(t[0]), &unit_box(), cfg, &mut stream(2, &[])).unwrap();
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &r.history, &["a".into(), "b".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("stage,a,b,value,incumbent\n"));
        let summary = TuneSummary { theta_star: r.theta_star.clone(), c_star: r.c_star, stages: 3, initial_stages: 2 };
        let json = serde_json::to_value(&summary).unwrap();
        assert_eq!(json["L"], 3);
        assert_eq!(json["L0"], 2);
    }

    #[test]
    fn grid_covers_the_box_corners() {
        let b = unit_box();
        let k = Kernel::new(0.0, 1.0, vec![1.0, 1.0]).unwrap();
        let post = Posterior::new(&k, &[Observation { theta: vec![0.5, 0.5], value: 1.0 }]).unwrap();
        let g = posterior_grid(&post, &b, 1.0, 5).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0].theta, vec![0.0, 0.0]);
        assert_eq!(g[24].theta, vec![1.0, 1.0]);
        assert!((g[12].mean - 1.0).abs() < 1e-6);
    }
}

//! Synthetic phishing-judgment model and the accuracy metric.
//!
//! A session's attention features map to a probability of judging the email
//! correctly through a monotone logistic link:
//! `P(correct) = σ(b0 + b1 meanAAL + b2 contentFrac - b3 distractFrac)`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{cal, ScoreTable};
use crate::error::{Error, Result};
use crate::gaze::{simulate_session, GazeDynamics, SessionId, VisualAid, VisualState, VsTrajectory, MAIN_CONTENT_AOI};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgmentModel {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

impl Default for JudgmentModel {
    fn default() -> Self {
        JudgmentModel { b0: 0.0, b1: 0.15, b2: 2.0, b3: 1.0 }
    }
}

impl JudgmentModel {
    /// Saturated model that always judges correctly.
    pub fn always_correct() -> Self {
        JudgmentModel { b0: 50.0, b1: 0.0, b2: 0.0, b3: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.b0, self.b1, self.b2, self.b3].iter().all(|b| b.is_finite()) {
            return Err(Error::config("judgment weights must be finite"));
        }
        if self.b1 < 0.0 || self.b2 < 0.0 || self.b3 < 0.0 {
            return Err(Error::config("judgment weights b1, b2, b3 must be non-negative"));
        }
        Ok(())
    }

    pub fn linear(&self, f: &Features) -> f64 {
        self.b0 + self.b1 * f.mean_aal + self.b2 * f.content_fraction - self.b3 * f.distraction_fraction
    }

    pub fn p_correct(&self, f: &Features) -> f64 {
        sigmoid(self.linear(f))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    /// Duration-weighted mean of the per-stage AAL, i.e. total CAL over
    /// total time.
    pub mean_aal: f64,
    pub content_fraction: f64,
    pub distraction_fraction: f64,
    /// Fraction of time in every state, indexed like the dynamics.
    pub occupancy: Vec<f64>,
}

pub fn extract_features(trajectory: &VsTrajectory, table: &ScoreTable, period: f64) -> Result<Features> {
    let total = trajectory.total_duration();
    if trajectory.is_empty() || total <= 0.0 {
        return Err(Error::Empty("trajectory has no segments"));
    }
    let mut cal_sum = 0.0;
    for slice in trajectory.stage_slices(period) {
        cal_sum += cal(&slice.pieces, table, slice.duration)?;
    }
    let n_aoi = table.n_aoi();
    let occupancy: Vec<f64> = trajectory.occupancy(n_aoi).into_iter().map(|t| t / total).collect();
    let content =
        if MAIN_CONTENT_AOI <= n_aoi { occupancy[VisualState::Aoi(MAIN_CONTENT_AOI).index(n_aoi)] } else { 0.0 };
    Ok(Features {
        mean_aal: cal_sum / total,
        content_fraction: content,
        distraction_fraction: occupancy[VisualState::Distraction.index(n_aoi)],
        occupancy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgment {
    Correct,
    Wrong,
}

impl Judgment {
    pub fn as_str(self) -> &'static str {
        match self {
            Judgment::Correct => "correct",
            Judgment::Wrong => "wrong",
        }
    }
}

/// Draws one judgment; consumes exactly one uniform.
pub fn judge<R: Rng + ?Sized>(model: &JudgmentModel, features: &Features, rng: &mut R) -> Judgment {
    let u: f64 = rng.random();
    if u < model.p_correct(features) {
        Judgment::Correct
    } else {
        Judgment::Wrong
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentRecord {
    pub session: SessionId,
    pub z: Judgment,
    pub theta: Vec<f64>,
}

pub fn accuracy(records: &[JudgmentRecord]) -> Result<f64> {
    accuracy_of(records.iter().map(|r| r.z))
}

pub fn accuracy_of(judgments: impl IntoIterator<Item = Judgment>) -> Result<f64> {
    let (mut n, mut correct) = (0usize, 0usize);
    for z in judgments {
        n += 1;
        correct += (z == Judgment::Correct) as usize;
    }
    if n == 0 {
        return Err(Error::Empty("no judgment records"));
    }
    Ok(correct as f64 / n as f64)
}

pub fn write_records_csv<W: Write>(out: W, records: &[JudgmentRecord], theta_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["session_id".to_string(), "z".to_string()];
    header.extend(theta_names.iter().cloned());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.session.to_string(), r.z.as_str().to_string()];
        row.extend(r.theta.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// The no-aid environment the baseline is calibrated against.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationEnv<'a> {
    pub dynamics: &'a GazeDynamics,
    pub table: &'a ScoreTable,
    pub period: f64,
    pub aid: VisualAid,
}

/// Features of `sessions` independent no-aid sessions, each with a Burr
/// inspection time.
pub fn simulate_features(env: &CalibrationEnv<'_>, sessions: usize, seed: u64) -> Result<Vec<Features>> {
    (0..sessions)
        .map(|i| {
            let mut t_rng = stream(seed, &[i as u64, Purpose::Inspection as u64]);
            let mut g_rng = stream(seed, &[i as u64, Purpose::Gaze as u64]);
            let horizon = env.dynamics.sample_inspection_time(&mut t_rng);
            let traj =
                simulate_session(env.dynamics, |_| env.aid, horizon, env.period, SessionId::default(), &mut g_rng)?;
            extract_features(&traj, env.table, env.period)
        })
        .collect()
}

pub fn expected_accuracy(model: &JudgmentModel, features: &[Features]) -> f64 {
    features.iter().map(|f| model.p_correct(f)).sum::<f64>() / features.len() as f64
}

const CALIBRATION_TOLERANCE: f64 = 0.005;
const MAX_BRACKET: f64 = 1e3;

/// Sets `b0` so the expected no-aid accuracy over a fixed simulated
/// population hits `target`. The expectation is a smooth increasing function
/// of `b0`, so plain bisection applies.
pub fn calibrate_baseline(model: &JudgmentModel, target: f64, features: &[Features]) -> Result<JudgmentModel> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Calibration(format!("target accuracy must lie in (0, 1), got {target}")));
    }
    if features.is_empty() {
        return Err(Error::Empty("no sessions to calibrate on"));
    }
    let acc = |b0: f64| expected_accuracy(&JudgmentModel { b0, ..*model }, features);
    let (mut lo, mut hi) = (-10.0, 10.0);
    while acc(lo) > target {
        lo *= 2.0;
        if lo < -MAX_BRACKET {
            return Err(Error::Calibration(format!("accuracy stays above {target} for every intercept")));
        }
    }
    while acc(hi) < target {
        hi *= 2.0;
        if hi > MAX_BRACKET {
            return Err(Error::Calibration(format!("accuracy stays below {target} for every intercept")));
        }
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let a = acc(mid);
        if (a - target).abs() < CALIBRATION_TOLERANCE * 1e-3 || hi - lo < 1e-12 {
            break;
        }
        if a < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (acc(mid) - target).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration(format!("bisection ended {} away from the target", (acc(mid) - target).abs())));
    }
    Ok(JudgmentModel { b0: mid, ..*model })
}

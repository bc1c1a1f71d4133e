//! Attention metrics over generation stages.
//!
//! Dwelling in state `s` accrues attention at rate `r(s) e^{-α(s) τ}`, where
//! `τ` restarts at zero at the start of every transition stage. The
//! cumulative attention level (CAL) of a generation stage is the integral of
//! that rate since the stage began; dividing the end-of-stage CAL by the
//! period gives the average attention level (AAL), and quantizing the AAL
//! gives the attention state the learner sees.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::{TrajectorySegment, VisualState, VsTrajectory};

const COVERAGE_TOLERANCE: f64 = 1e-9;

/// Concentration score `r(s)` and decay rate `α(s)` for every visual state.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    n_aoi: usize,
    score: Vec<f64>,
    decay: Vec<f64>,
}

impl ScoreTable {
    pub fn new(n_aoi: usize, score: Vec<f64>, decay: Vec<f64>) -> Result<Self> {
        let t = ScoreTable { n_aoi, score, decay };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_aoi + 2;
        if self.score.len() != n || self.decay.len() != n {
            return Err(Error::config(format!("score table must cover {n} states")));
        }
        if self.score.iter().any(|r| !r.is_finite()) {
            return Err(Error::config("concentration scores must be finite"));
        }
        if self.decay.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::config("decay rates must be positive"));
        }
        Ok(())
    }

    pub fn n_aoi(&self) -> usize {
        self.n_aoi
    }

    pub fn score(&self, s: VisualState) -> f64 {
        self.score[s.index(self.n_aoi)]
    }

    pub fn decay(&self, s: VisualState) -> f64 {
        self.decay[s.index(self.n_aoi)]
    }

    pub fn scores(&self) -> &[f64] {
        &self.score
    }

    pub fn decays(&self) -> &[f64] {
        &self.decay
    }

    pub fn set(&mut self, s: VisualState, score: f64, decay: f64) -> Result<()> {
        if !(decay > 0.0 && decay.is_finite() && score.is_finite()) {
            return Err(Error::config(format!("invalid score/decay for {s}: {score}, {decay}")));
        }
        let i = s.index(self.n_aoi);
        self.score[i] = score;
        self.decay[i] = decay;
        Ok(())
    }

    /// Range every AAL falls in: `[min(0, min r), max(0, max r)]`.
    pub fn aal_bounds(&self) -> (f64, f64) {
        let lo = self.score.iter().copied().fold(0.0, f64::min);
        let hi = self.score.iter().copied().fold(0.0, f64::max);
        (lo, hi)
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreFile {
    aoi_count: usize,
    score: BTreeMap<String, f64>,
    decay: BTreeMap<String, f64>,
}

impl ScoreTable {
    /// Missing `ua`/`da` entries default to score 0 and decay 1.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScoreFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let n_aoi = file.aoi_count;
        let mut score = vec![f64::NAN; n_aoi + 2];
        let mut decay = vec![f64::NAN; n_aoi + 2];
        score[n_aoi] = 0.0;
        score[n_aoi + 1] = 0.0;
        decay[n_aoi] = 1.0;
        decay[n_aoi + 1] = 1.0;
        for (target, map, what) in [(&mut score, &file.score, "score"), (&mut decay, &file.decay, "decay")] {
            for (key, &value) in map {
                let s: VisualState = key.parse()?;
                if !s.is_valid(n_aoi) {
                    return Err(Error::config(format!("`{what}.{key}` is outside the {n_aoi}-AoI space")));
                }
                target[s.index(n_aoi)] = value;
            }
        }
        if let Some(i) = score.iter().chain(&decay).position(|v| v.is_nan()) {
            let s = VisualState::from_index(i % (n_aoi + 2), n_aoi);
            return Err(Error::config(format!("missing score or decay for {s}")));
        }
        ScoreTable::new(n_aoi, score, decay)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let file = ScoreFile {
            aoi_count: self.n_aoi,
            score: VisualState::all(self.n_aoi).map(|s| (s.to_string(), self.score(s))).collect(),
            decay: VisualState::all(self.n_aoi).map(|s| (s.to_string(), self.decay(s))).collect(),
        };
        toml::to_string(&file).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn store(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

/// Attention accrued after `t` seconds in one transition stage of state `s`:
/// `r (1 - e^{-α t}) / α`.
pub fn stage_reward(table: &ScoreTable, s: VisualState, t: f64) -> f64 {
    let (r, a) = (table.score(s), table.decay(s));
    r * -(-a * t).exp_m1() / a
}

/// CAL at time `t` into a generation stage. `pieces` are the stage's
/// transition stages with stage-relative starts and must cover `[0, t]`
/// without gaps; the piece in progress at `t` contributes its partial reward.
pub fn cal(pieces: &[TrajectorySegment], table: &ScoreTable, t: f64) -> Result<f64> {
    let mut covered = 0.0;
    let mut total = 0.0;
    for p in pieces {
        if covered >= t {
            break;
        }
        if (p.start - covered).abs() > COVERAGE_TOLERANCE {
            return Err(Error::Coverage { at: covered });
        }
        total += stage_reward(table, p.state, p.duration.min(t - p.start));
        covered = p.end();
    }
    if covered < t - COVERAGE_TOLERANCE {
        return Err(Error::Coverage { at: covered });
    }
    Ok(total)
}

/// `(time, CAL)` samples across a stage every `dt` seconds, endpoints
/// included.
pub fn cal_series(pieces: &[TrajectorySegment], table: &ScoreTable, duration: f64, dt: f64) -> Result<Vec<(f64, f64)>> {
    let steps = (duration / dt).ceil() as usize;
    (0..=steps)
        .map(|i| {
            let t = (i as f64 * dt).min(duration);
            cal(pieces, table, t).map(|v| (t, v))
        })
        .collect()
}

/// Average attention level of a stage.
pub fn aal(v_end: f64, period: f64) -> f64 {
    v_end / period
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "quantizer", rename_all = "kebab-case")]
pub enum Quantizer {
    /// Attentive (`x = 1`) iff `AAL >= threshold`, otherwise inattentive.
    Binary { threshold: f64 },
    /// `levels` equal bins over `[min, max]`, values clamped into range.
    Uniform { levels: usize, min: f64, max: f64 },
}

impl Default for Quantizer {
    fn default() -> Self {
        Quantizer::Uniform { levels: 4, min: -30.0, max: 60.0 }
    }
}

/// Index of the inattentive state under binary quantization.
pub const INATTENTIVE: usize = 0;
/// Index of the attentive state under binary quantization.
pub const ATTENTIVE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    /// Generation-stage length `T^pl` in seconds.
    pub period: f64,
    pub quantizer: Quantizer,
}

impl AttentionConfig {
    pub fn new(period: f64, quantizer: Quantizer) -> Result<Self> {
        let c = AttentionConfig { period, quantizer };
        c.validate()?;
        Ok(c)
    }

    pub fn binary(period: f64, threshold: f64) -> Result<Self> {
        Self::new(period, Quantizer::Binary { threshold })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::config(format!("period length must be positive, got {}", self.period)));
        }
        match self.quantizer {
            Quantizer::Binary { threshold } if !threshold.is_finite() => {
                Err(Error::config("attention threshold must be finite"))
            }
            Quantizer::Uniform { levels, min, max } if levels < 2 || !(min < max) => Err(Error::config(format!(
                "uniform quantizer needs >= 2 levels and min < max, got {levels} over [{min}, {max}]"
            ))),
            _ => Ok(()),
        }
    }

    /// Number of attention states `X`.
    pub fn n_states(&self) -> usize {
        match self.quantizer {
            Quantizer::Binary { .. } => 2,
            Quantizer::Uniform { levels, .. } => levels,
        }
    }

    pub fn quantize(&self, v: f64) -> usize {
        quantize(v, self)
    }

    /// Numeric level standing for attention state `x`, used as the learning
    /// reward. Uniform bins use their centers; the binary states use the
    /// midpoints of `[lo, threshold]` and `[threshold, hi]`, where `[lo, hi]`
    /// is the table's AAL range.
    pub fn representative(&self, x: usize, table: &ScoreTable) -> f64 {
        match self.quantizer {
            Quantizer::Binary { threshold } => {
                let (lo, hi) = table.aal_bounds();
                let cut = threshold.clamp(lo, hi);
                if x == ATTENTIVE {
                    0.5 * (cut + hi)
                } else {
                    0.5 * (lo + cut)
                }
            }
            Quantizer::Uniform { levels, min, max } => {
                let width = (max - min) / levels as f64;
                min + (x as f64 + 0.5) * width
            }
        }
    }
}

/// Attention state of an AAL value.
pub fn quantize(v: f64, config: &AttentionConfig) -> usize {
    match config.quantizer {
        Quantizer::Binary { threshold } => {
            if v >= threshold {
                ATTENTIVE
            } else {
                INATTENTIVE
            }
        }
        Quantizer::Uniform { levels, min, max } => {
            let v = v.clamp(min, max);
            let bin = ((v - min) / (max - min) * levels as f64).floor() as usize;
            bin.min(levels - 1)
        }
    }
}

// ---------------------------------------------------------------------------
// Pupil traces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PupilTrace {
    pub samples: Vec<(f64, f64)>,
}

/// Pupil diameter is taken to be proportional to the instantaneous attention
/// rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilModel {
    pub scale: f64,
    pub sample_rate: f64,
}

impl Default for PupilModel {
    fn default() -> Self {
        PupilModel { scale: 1.0, sample_rate: 60.0 }
    }
}

/// `(state, τ)` for each sample time, where `τ` is the time since the
/// current transition stage began. Generation-stage boundaries start a new
/// transition stage.
fn sample_points(traj: &VsTrajectory, period: f64, rate: f64) -> Vec<(f64, VisualState, f64)> {
    let total = traj.total_duration();
    let mut out = Vec::with_capacity((total * rate) as usize + 1);
    for slice in traj.stage_slices(period) {
        let first = (slice.start * rate).ceil() as usize;
        let mut j = first;
        loop {
            let t = j as f64 / rate;
            if t >= slice.start + slice.duration || t >= total {
                break;
            }
            let local = t - slice.start;
            let i = slice.pieces.partition_point(|p| p.end() <= local).min(slice.pieces.len() - 1);
            let piece = &slice.pieces[i];
            out.push((t, piece.state, (local - piece.start).max(0.0)));
            j += 1;
        }
    }
    out
}

pub fn synth_pupil_trace<R: Rng + ?Sized>(
    trajectory: &VsTrajectory,
    table: &ScoreTable,
    period: f64,
    model: PupilModel,
    noise_sd: f64,
    rng: &mut R,
) -> Result<PupilTrace> {
    if !(noise_sd >= 0.0) {
        return Err(Error::config("noise_sd must be non-negative"));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::config(e.to_string()))?;
    let samples = sample_points(trajectory, period, model.sample_rate)
        .into_iter()
        .map(|(t, s, tau)| {
            let clean = model.scale * table.score(s) * (-table.decay(s) * tau).exp();
            let d = if noise_sd > 0.0 { clean + noise.sample(rng) } else { clean };
            (t, d)
        })
        .collect();
    Ok(PupilTrace { samples })
}

pub fn write_pupil_csv<W: Write>(out: W, trace: &PupilTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "diameter"])?;
    for (t, d) in &trace.samples {
        w.write_record([t.to_string(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pupil_csv<R: Read>(input: R) -> Result<PupilTrace> {
    let mut r = csv::Reader::from_reader(input);
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::config(format!("bad number `{s}` in pupil trace")));
        samples.push((parse(&rec[0])?, parse(&rec[1])?));
    }
    if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::config("pupil trace times must be strictly increasing"));
    }
    Ok(PupilTrace { samples })
}

// ---------------------------------------------------------------------------
// Score fitting by simulated annealing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealConfig {
    pub initial_temperature: f64,
    /// Geometric cooling factor per iteration.
    pub cooling: f64,
    pub iterations: usize,
    /// Proposal standard deviation as a fraction of the bound width.
    pub proposal_scale: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig { initial_temperature: 1.0, cooling: 0.995, iterations: 10_000, proposal_scale: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBounds {
    pub score: (f64, f64),
    pub decay: (f64, f64),
}

impl Default for ScoreBounds {
    fn default() -> Self {
        ScoreBounds { score: (0.0, 50.0), decay: (0.01, 20.0) }
    }
}

#[derive(Debug, Clone)]
pub struct ScoreFit {
    pub table: ScoreTable,
    /// Mean squared error of the returned table.
    pub objective: f64,
    pub initial_objective: f64,
    /// Best objective after each iteration.
    pub incumbent_trace: Vec<f64>,
    pub accepted: usize,
}

/// Fits `r` and `α` for every visited state by minimizing the mean squared
/// error between `scale r(s) e^{-α(s) τ}` and the pupil diameters.
///
/// Each move perturbs one coordinate with a Gaussian step; moves that leave
/// the bounds are rejected. States never visited keep their initial values.
#[allow(clippy::too_many_arguments)]
pub fn fit_scores<R: Rng + ?Sized>(
    traces: &[PupilTrace],
    trajectories: &[VsTrajectory],
    period: f64,
    model: PupilModel,
    init: &ScoreTable,
    config: AnnealConfig,
    bounds: ScoreBounds,
    rng: &mut R,
) -> Result<ScoreFit> {
    if traces.len() != trajectories.len() {
        return Err(Error::config("each pupil trace needs its trajectory"));
    }
    if traces.iter().all(|t| t.samples.is_empty()) {
        return Err(Error::Empty("no pupil samples to fit"));
    }
    let n = init.n_aoi() + 2;
    let n_aoi = init.n_aoi();
    let mut by_state: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    for (trace, traj) in traces.iter().zip(trajectories) {
        let points = sample_points(traj, period, model.sample_rate);
        for (&(t, d), &(tp, s, tau)) in trace.samples.iter().zip(&points) {
            if (t - tp).abs() > 1e-6 {
                return Err(Error::config(format!("trace sample at {t} s does not align with the trajectory")));
            }
            by_state[s.index(n_aoi)].push((tau, d));
        }
    }
    let n_samples: usize = by_state.iter().map(Vec::len).sum();
    let sse = |r: f64, a: f64, obs: &[(f64, f64)]| -> f64 {
        obs.iter().map(|&(tau, d)| (model.scale * r * (-a * tau).exp() - d).powi(2)).sum()
    };

    let mut score = init.scores().to_vec();
    let mut decay = init.decays().to_vec();
    let mut state_sse: Vec<f64> = (0..n).map(|i| sse(score[i], decay[i], &by_state[i])).collect();
    let mut current = state_sse.iter().sum::<f64>();
    let initial_objective = current / n_samples as f64;
    let mut best = (current, score.clone(), decay.clone());
    let active: Vec<usize> = (0..n).filter(|&i| !by_state[i].is_empty()).collect();

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut temperature = config.initial_temperature;
    let mut trace = Vec::with_capacity(config.iterations);
    let mut accepted = 0;
    for _ in 0..config.iterations {
        let i = active[rng.random_range(0..active.len())];
        let on_score = rng.random_bool(0.5);
        let (lo, hi) = if on_score { bounds.score } else { bounds.decay };
        let step = config.proposal_scale * (hi - lo) * normal.sample(rng);
        let (r, a) = if on_score { (score[i] + step, decay[i]) } else { (score[i], decay[i] + step) };
        let proposal = if on_score { r } else { a };
        if (lo..=hi).contains(&proposal) {
            let new_sse = sse(r, a, &by_state[i]);
            let delta = (new_sse - state_sse[i]) / n_samples as f64;
            if delta <= 0.0 || rng.random::<f64>() < (-delta / temperature).exp() {
                score[i] = r;
                decay[i] = a;
                current += new_sse - state_sse[i];
                state_sse[i] = new_sse;
                accepted += 1;
                if current < best.0 {
                    best = (current, score.clone(), decay.clone());
                }
            }
        }
        temperature *= config.cooling;
        trace.push(best.0 / n_samples as f64);
    }

    let (best_sse, score, decay) = best;
    Ok(ScoreFit {
        table: ScoreTable::new(n_aoi, score, decay)?,
        objective: best_sse / n_samples as f64,
        initial_objective,
        incumbent_trace: trace,
        accepted,
    })
}

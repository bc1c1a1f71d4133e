//! Experiment orchestration: sessions, populations and the tuning loop.
//!
//! A session runs the per-stage learning loop for one reader and one email.
//! A population cascades the Q-table, attention state and stage counter
//! through `n_bo` sessions and scores the judgments. Tuning evaluates each
//! hyperparameter vector as the mean accuracy of `n_rp` independent
//! populations.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{aal, cal, AttentionConfig, Quantizer, ScoreTable};
use crate::bayesopt::{tune, HistoryEntry, HyperBox, Kernel, ProposalSearch, TuneConfig};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::gaze::{GazeDynamics, SessionId, SessionSimulator, VisualAid, VisualState, VsTrajectory};
use crate::judgment::{
    accuracy, calibrate_baseline, extract_features, judge, simulate_features, CalibrationEnv, Features, Judgment,
    JudgmentModel, JudgmentRecord,
};
use crate::policy::{epsilon_at, q_update, record_visit, select_aid, CurvePoint, LearningParams, QTable};
use crate::rng::{derive_seed, stream, SessionStreams};

/// Samples per second of the eye tracker; period lengths given in samples
/// are converted with it.
pub const SAMPLE_RATE: f64 = 60.0;

const EVAL_TAG: u64 = 0xE7A1;
const TUNE_TAG: u64 = 0x7E5E;
const CALIBRATION_TAG: u64 = 0xCA1B;

/// One coordinate of the tuned hyperparameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaParam {
    AttentionThreshold,
    /// Generation-stage length in eye-tracker samples.
    PeriodSamples,
    PeriodSeconds,
    /// Number of uniform quantizer levels, rounded to an integer.
    Levels,
    Score(VisualState),
    Decay(VisualState),
}

impl ThetaParam {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "attention_threshold" => ThetaParam::AttentionThreshold,
            "period_samples" => ThetaParam::PeriodSamples,
            "period_seconds" => ThetaParam::PeriodSeconds,
            "levels" => ThetaParam::Levels,
            _ => match name.split_once('.') {
                Some(("score", s)) => ThetaParam::Score(s.parse()?),
                Some(("decay", s)) => ThetaParam::Decay(s.parse()?),
                _ => return Err(Error::config(format!("unknown hyperparameter `{name}`"))),
            },
        })
    }

    pub fn name(&self) -> String {
        match self {
            ThetaParam::AttentionThreshold => "attention_threshold".into(),
            ThetaParam::PeriodSamples => "period_samples".into(),
            ThetaParam::PeriodSeconds => "period_seconds".into(),
            ThetaParam::Levels => "levels".into(),
            ThetaParam::Score(s) => format!("score.{s}"),
            ThetaParam::Decay(s) => format!("decay.{s}"),
        }
    }
}

/// How aids are chosen during a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    /// ε-greedy Q-learning.
    Learned,
    /// The same aid every stage; the Q-table is left untouched.
    Fixed(VisualAid),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSpec {
    pub target: f64,
    pub sessions: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dynamics: GazeDynamics,
    pub scores: ScoreTable,
    pub attention: AttentionConfig,
    pub learning: LearningParams,
    pub judgment: JudgmentModel,
    /// Calibrate `b0` against the no-aid environment before running.
    pub calibration: Option<CalibrationSpec>,
    pub baseline_aid: VisualAid,
    /// Emails per population `N^bo`.
    pub n_bo: usize,
    /// Populations averaged per evaluation `n^rp`.
    pub n_rp: usize,
    pub tune: TuneConfig,
    pub seed: u64,
    pub initial_state: usize,
    pub theta: Vec<ThetaParam>,
    pub theta_box: HyperBox,
    /// Hyperparameters used by single evaluations.
    pub theta0: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileRef {
    file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AttentionSection {
    period_seconds: f64,
    quantizer: String,
    threshold: f64,
    levels: usize,
    min: f64,
    max: f64,
}

impl Default for AttentionSection {
    fn default() -> Self {
        AttentionSection {
            period_seconds: 398.0 / SAMPLE_RATE,
            quantizer: "binary".into(),
            threshold: 5.56,
            levels: 4,
            min: -30.0,
            max: 60.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct JudgmentSection {
    b0: f64,
    b1: f64,
    b2: f64,
    b3: f64,
    calibrate: bool,
    target: f64,
    sessions: usize,
}

impl Default for JudgmentSection {
    fn default() -> Self {
        let m = JudgmentModel::default();
        JudgmentSection { b0: m.b0, b1: m.b1, b2: m.b2, b3: m.b3, calibrate: true, target: 0.746, sessions: 20_000 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentSection {
    aids: Vec<String>,
    baseline_aid: String,
    n_bo: usize,
    n_rp: usize,
    stages: usize,
    initial_stages: usize,
    mle_restarts: usize,
    refit: bool,
    seed: u64,
    initial_state: usize,
    theta: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    theta0: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let t = TuneConfig::default();
        ExperimentSection {
            aids: vec!["aN".into(), "aY".into()],
            baseline_aid: "aN".into(),
            n_bo: 100,
            n_rp: 20,
            stages: t.stages,
            initial_stages: t.initial_stages,
            mle_restarts: t.mle_restarts,
            refit: t.refit,
            seed: 0,
            initial_state: 0,
            theta: vec!["attention_threshold".into(), "period_samples".into()],
            lower: vec![1.0, 60.0],
            upper: vec![33.0, 600.0],
            theta0: vec![5.56, 398.0],
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    gaze: FileRef,
    scores: FileRef,
    attention: AttentionSection,
    learning: LearningParams,
    judgment: JudgmentSection,
    experiment: ExperimentSection,
}

impl ExperimentConfig {
    /// Parses a config; relative file references resolve against `base`.
    pub fn from_toml_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let resolve = |p: &Path| match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        };
        let dynamics = match &file.gaze.file {
            Some(p) => GazeDynamics::load(&resolve(p))?,
            None => fixtures::case_study_dynamics(),
        };
        let dynamics = dynamics.select_aids(&file.experiment.aids)?;
        let scores = match &file.scores.file {
            Some(p) => ScoreTable::load(&resolve(p))?,
            None => fixtures::table_one(),
        };
        if scores.n_aoi() != dynamics.n_aoi() {
            return Err(Error::config(format!(
                "score table covers {} AoIs but the dynamics have {}",
                scores.n_aoi(),
                dynamics.n_aoi()
            )));
        }
        let a = &file.attention;
        let quantizer = match a.quantizer.as_str() {
            "binary" => Quantizer::Binary { threshold: a.threshold },
            "uniform" => Quantizer::Uniform { levels: a.levels, min: a.min, max: a.max },
            other => return Err(Error::config(format!("unknown quantizer `{other}`"))),
        };
        let attention = AttentionConfig::new(a.period_seconds, quantizer)?;
        file.learning.validate()?;
        let j = &file.judgment;
        let judgment = JudgmentModel { b0: j.b0, b1: j.b1, b2: j.b2, b3: j.b3 };
        judgment.validate()?;
        let calibration = j.calibrate.then_some(CalibrationSpec { target: j.target, sessions: j.sessions });
        let e = &file.experiment;
        let baseline_aid = dynamics
            .aid_by_name(&e.baseline_aid)
            .ok_or_else(|| Error::config(format!("baseline aid `{}` is not in the aid library", e.baseline_aid)))?;
        let theta = e.theta.iter().map(|n| ThetaParam::parse(n)).collect::<Result<Vec<_>>>()?;
        let theta_box = HyperBox::new(e.lower.clone(), e.upper.clone())?;
        let config = ExperimentConfig {
            dynamics,
            scores,
            attention,
            learning: file.learning,
            judgment,
            calibration,
            baseline_aid,
            n_bo: e.n_bo,
            n_rp: e.n_rp,
            tune: TuneConfig {
                stages: e.stages,
                initial_stages: e.initial_stages,
                mle_restarts: e.mle_restarts,
                refit: e.refit,
                search: ProposalSearch::default(),
            },
            seed: e.seed,
            initial_state: e.initial_state,
            theta,
            theta_box,
            theta0: e.theta0.clone(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent()).map_err(|e| match e {
            Error::Config(message) => Error::Parse { path: path.to_path_buf(), message },
            other => other,
        })
    }

    /// The built-in case-study experiment.
    pub fn case_study() -> Self {
        Self::from_toml_str(fixtures::EXPERIMENT_TOML, None).expect("built-in experiment is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bo < 1 || self.n_rp < 1 {
            return Err(Error::config("n_bo and n_rp must be at least 1"));
        }
        self.tune.validate()?;
        if self.theta.len() != self.theta_box.dims() || self.theta0.len() != self.theta.len() {
            return Err(Error::config("theta names, bounds and theta0 must have the same length"));
        }
        if self.initial_state >= self.attention.n_states() {
            return Err(Error::config(format!("initial attention state {} is out of range", self.initial_state)));
        }
        for p in &self.theta {
            match p {
                ThetaParam::AttentionThreshold if !matches!(self.attention.quantizer, Quantizer::Binary { .. }) => {
                    return Err(Error::config("attention_threshold needs the binary quantizer"));
                }
                ThetaParam::Levels if !matches!(self.attention.quantizer, Quantizer::Uniform { .. }) => {
                    return Err(Error::config("levels needs the uniform quantizer"));
                }
                ThetaParam::Score(s) | ThetaParam::Decay(s) if !s.is_valid(self.dynamics.n_aoi()) => {
                    return Err(Error::config(format!("state {s} is outside the AoI space")));
                }
                _ => {}
            }
        }
        self.environment(&self.theta0, PolicyMode::Learned).map(|_| ())
    }

    pub fn theta_names(&self) -> Vec<String> {
        self.theta.iter().map(ThetaParam::name).collect()
    }

    /// Applies `theta` on top of the configured attention model.
    pub fn environment(&self, theta: &[f64], policy: PolicyMode) -> Result<Environment<'_>> {
        if theta.len() != self.theta.len() {
            return Err(Error::config(format!("expected {} hyperparameters, got {}", self.theta.len(), theta.len())));
        }
        let mut attention = self.attention;
        let mut scores = self.scores.clone();
        for (p, &v) in self.theta.iter().zip(theta) {
            match *p {
                ThetaParam::AttentionThreshold => attention.quantizer = Quantizer::Binary { threshold: v },
                ThetaParam::PeriodSamples => attention.period = v / SAMPLE_RATE,
                ThetaParam::PeriodSeconds => attention.period = v,
                ThetaParam::Levels => {
                    if let Quantizer::Uniform { min, max, .. } = attention.quantizer {
                        attention.quantizer = Quantizer::Uniform { levels: (v.round() as usize).max(2), min, max };
                    }
                }
                ThetaParam::Score(s) => {
                    let d = scores.decay(s);
                    scores.set(s, v, d)?;
                }
                ThetaParam::Decay(s) => {
                    let r = scores.score(s);
                    scores.set(s, r, v)?;
                }
            }
        }
        attention.validate()?;
        if let PolicyMode::Fixed(a) = policy {
            if a.0 >= self.dynamics.n_aids() {
                return Err(Error::config(format!("aid {} is not in the library", a.0)));
            }
        }
        Ok(Environment {
            dynamics: &self.dynamics,
            scores,
            attention,
            learning: self.learning,
            judgment: self.judgment,
            policy,
            theta: theta.to_vec(),
        })
    }

    /// Fixes `b0` so the no-aid population accuracy matches the calibration
    /// target. A no-op when calibration is disabled.
    pub fn calibrated(mut self) -> Result<Self> {
        if let Some(spec) = self.calibration {
            let env = CalibrationEnv {
                dynamics: &self.dynamics,
                table: &self.scores,
                period: self.attention.period,
                aid: self.baseline_aid,
            };
            let seed = derive_seed(self.seed, &[CALIBRATION_TAG]);
            let features = simulate_features(&env, spec.sessions.max(1), seed)?;
            self.judgment = calibrate_baseline(&self.judgment, spec.target, &features)?;
            self.calibration = None;
        }
        Ok(self)
    }
}

/// Everything a session needs, with `theta` already applied.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    pub dynamics: &'a GazeDynamics,
    pub scores: ScoreTable,
    pub attention: AttentionConfig,
    pub learning: LearningParams,
    pub judgment: JudgmentModel,
    pub policy: PolicyMode,
    pub theta: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Sessions and populations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SessionResult {
    pub session: SessionId,
    pub qtable: QTable,
    pub final_state: usize,
    /// Complete generation stages `K`.
    pub stages: usize,
    pub inspection_time: f64,
    /// Aid shown in each stage, including a trailing partial stage.
    pub aids: Vec<VisualAid>,
    /// AAL of each complete stage.
    pub stage_aal: Vec<f64>,
    pub features: Features,
    pub z: Judgment,
    pub curve: Vec<CurvePoint>,
    pub trajectory: VsTrajectory,
}

/// One reader vetting one email. `stage_offset` is the number of stages
/// already run in the population and drives the exploration schedule.
pub fn run_individual(
    env: &Environment<'_>,
    mut qtable: QTable,
    x0: usize,
    stage_offset: usize,
    session: SessionId,
    streams: &mut SessionStreams,
) -> Result<SessionResult> {
    let (period, table) = (env.attention.period, &env.scores);
    let horizon = env.dynamics.sample_inspection_time(&mut streams.inspection);
    let mut sim = SessionSimulator::new(env.dynamics, horizon, period, session, &mut streams.gaze)?;
    let k_total = sim.full_stages();
    let choose = |q: &QTable, x: usize, k: usize, rng: &mut _| match env.policy {
        PolicyMode::Learned => select_aid(q, x, epsilon_at(k, env.learning.epsilon), rng),
        PolicyMode::Fixed(a) => a,
    };

    let mut x = x0;
    let mut a = choose(&qtable, x, stage_offset, &mut streams.policy);
    let mut aids = Vec::with_capacity(k_total + 1);
    let mut stage_aal = Vec::with_capacity(k_total);
    let mut curve = Vec::new();
    for k in 0..k_total {
        aids.push(a);
        let pieces = sim.run_stage(a, &mut streams.gaze)?;
        let v = aal(cal(&pieces, table, period)?, period);
        let x_next = env.attention.quantize(v);
        stage_aal.push(v);
        if env.policy == PolicyMode::Learned {
            record_visit(&mut qtable, x, a);
            let reward = env.attention.representative(x_next, table);
            q_update(&mut qtable, x, a, reward, x_next, &env.learning);
            curve.push(CurvePoint { stage: stage_offset + k + 1, x, a, q_value: qtable.value(x, a) });
        }
        x = x_next;
        a = choose(&qtable, x, stage_offset + k + 1, &mut streams.policy);
    }
    if !sim.is_finished() {
        aids.push(a);
        sim.run_stage(a, &mut streams.gaze)?;
    }
    let trajectory = sim.into_trajectory();
    let features = extract_features(&trajectory, table, period)?;
    let z = judge(&env.judgment, &features, &mut streams.judgment);
    Ok(SessionResult {
        session,
        qtable,
        final_state: x,
        stages: k_total,
        inspection_time: horizon,
        aids,
        stage_aal,
        features,
        z,
        curve,
        trajectory,
    })
}

#[derive(Debug, Clone)]
pub struct PopulationResult {
    pub accuracy: f64,
    pub records: Vec<JudgmentRecord>,
    pub qtable: QTable,
    pub final_state: usize,
    pub total_stages: usize,
    pub curve: Vec<CurvePoint>,
    pub stage_aal: Vec<f64>,
    pub session_mean_aal: Vec<f64>,
    /// Fraction of stages (partial ones included) shown each aid.
    pub aid_share: Vec<f64>,
}

impl PopulationResult {
    pub fn mean_stage_aal(&self) -> f64 {
        if self.stage_aal.is_empty() {
            0.0
        } else {
            self.stage_aal.iter().sum::<f64>() / self.stage_aal.len() as f64
        }
    }
}

/// Seed of one population run inside an evaluation.
pub fn population_seed(master: u64, stage: u64, repeat: u64) -> u64 {
    derive_seed(master, &[EVAL_TAG, stage, repeat])
}

/// Cascades the Q-table, attention state and stage counter through
/// `n_bo` sessions starting from a zero table.
pub fn run_population(env: &Environment<'_>, n_bo: usize, initial_state: usize, seed: u64) -> Result<PopulationResult> {
    let n_x = env.attention.n_states();
    let n_a = env.dynamics.n_aids();
    let mut qtable = QTable::zeros(n_x, n_a);
    let mut x = initial_state.min(n_x - 1);
    let mut k = 0;
    let mut records = Vec::with_capacity(n_bo);
    let mut curve = Vec::new();
    let mut stage_aal = Vec::new();
    let mut session_mean_aal = Vec::with_capacity(n_bo);
    let mut aid_count = vec![0usize; n_a];
    for n in 0..n_bo {
        let session = SessionId { user: 0, email: n as u32 };
        let mut streams = SessionStreams::new(seed, n as u64);
        let r = run_individual(env, qtable, x, k, session, &mut streams)?;
        qtable = r.qtable;
        x = r.final_state;
        k += r.stages;
        records.push(JudgmentRecord { session, z: r.z, theta: env.theta.clone() });
        curve.extend(r.curve);
        stage_aal.extend(r.stage_aal);
        session_mean_aal.push(r.features.mean_aal);
        for a in r.aids {
            aid_count[a.0] += 1;
        }
    }
    let shown = aid_count.iter().sum::<usize>().max(1) as f64;
    Ok(PopulationResult {
        accuracy: accuracy(&records)?,
        records,
        qtable,
        final_state: x,
        total_stages: k,
        curve,
        stage_aal,
        session_mean_aal,
        aid_share: aid_count.iter().map(|&c| c as f64 / shown).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub mean: f64,
    pub variance: f64,
    pub repeats: usize,
}

/// Mean and sample variance of `n_rp` independent population accuracies,
/// computed in parallel.
pub fn evaluate(config: &ExperimentConfig, theta: &[f64], policy: PolicyMode, stage: u64) -> Result<Evaluation> {
    let env = config.environment(theta, policy)?;
    let accs = (0..config.n_rp as u64)
        .into_par_iter()
        .map(|r| {
            run_population(&env, config.n_bo, config.initial_state, population_seed(config.seed, stage, r))
                .map(|p| p.accuracy)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let variance = if accs.len() > 1 { accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(Evaluation { mean, variance, repeats: accs.len() })
}

#[derive(Debug, Clone, Serialize)]
pub struct StageStats {
    pub stage: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub theta_names: Vec<String>,
    pub history: Vec<HistoryEntry>,
    pub stage_stats: Vec<StageStats>,
    pub theta_star: Vec<f64>,
    pub c_star: f64,
    pub kernel: Kernel,
    pub mle_warning: bool,
    pub judgment: JudgmentModel,
    pub seed: u64,
}

impl RunReport {
    /// Mean accuracy of each stage; `None` where the evaluation failed.
    pub fn accuracy_series(&self) -> Vec<Option<f64>> {
        self.history.iter().map(|h| h.value).collect()
    }
}

/// Tunes `theta` with Bayesian optimization. Expects a calibrated config.
pub fn run_tuning(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let mut stats = Vec::with_capacity(config.tune.stages);
    let mut stage = 0u64;
    let mut rng = stream(config.seed, &[TUNE_TAG]);
    let result = tune(
        |theta| {
            stage += 1;
            let e = evaluate(config, theta, PolicyMode::Learned, stage)?;
            stats.push(StageStats { stage: stage as usize, mean: e.mean, variance: e.variance });
            Ok(e.mean)
        },
        &config.theta_box,
        config.tune,
        &mut rng,
    )?;
    Ok(RunReport {
        theta_names: config.theta_names(),
        history: result.history,
        stage_stats: stats,
        theta_star: result.theta_star,
        c_star: result.c_star,
        kernel: result.kernel,
        mle_warning: result.mle_warning,
        judgment: config.judgment,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SessionStreams;

    fn config() -> ExperimentConfig {
        let mut c = ExperimentConfig::case_study();
        c.calibration = None;
        c.judgment.b0 = 0.3;
        c
    }

    #[test]
    fn case_study_config_parses() {
        let c = ExperimentConfig::case_study();
        assert_eq!(c.theta_names(), ["attention_threshold", "period_samples"]);
        assert_eq!(c.n_bo, 100);
        assert_eq!(c.dynamics.aid_names(), ["aN", "aY"]);
        assert!((c.attention.period - 398.0 / 60.0).abs() < 1e-12);
        assert!(c.calibration.is_some());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let bad = [
            "[experiment]\nn_bo = 0\n",
            "[experiment]\nstages = 5\ninitial_stages = 5\n",
            "[attention]\nquantizer = \"ternary\"\n",
            "[experiment]\nbaseline_aid = \"aQ\"\n",
            "[experiment]\ntheta = [\"attention_threshold\"]\n",
            "[nonsense]\n",
        ];
        for text in bad {
            assert!(ExperimentConfig::from_toml_str(text, None).is_err(), "{text}");
        }
    }

    #[test]
    fn theta_maps_onto_the_environment() {
        let c = config();
        let env = c.environment(&[10.0, 180.0], PolicyMode::Learned).unwrap();
        assert_eq!(env.attention.period, 3.0);
        assert_eq!(env.attention.quantizer, Quantizer::Binary { threshold: 10.0 });
        assert_eq!(ThetaParam::parse("score.s5").unwrap(), ThetaParam::Score(VisualState::Aoi(5)));
        assert_eq!(ThetaParam::Decay(VisualState::Distraction).name(), "decay.da");
    }

    fn session_with_horizon(env: &Environment<'_>, horizon_seed: u64) -> SessionResult {
        let mut s = SessionStreams::new(horizon_seed, 0);
        run_individual(env, QTable::zeros(2, 2), 0, 0, SessionId::default(), &mut s).unwrap()
    }

    #[test]
    fn stage_count_brackets_inspection_time() {
        let c = config();
        let env = c.environment(&[5.56, 180.0], PolicyMode::Learned).unwrap();
        for seed in 0..50 {
            let r = session_with_horizon(&env, seed);
            let k = r.stages as f64;
            assert!(k * 3.0 <= r.inspection_time + 1e-9 && r.inspection_time < (k + 1.0) * 3.0);
            assert_eq!(r.qtable.total_visits(), r.stages as u64);
            assert!((r.trajectory.total_duration() - r.inspection_time).abs() < 1e-9);
        }
    }

    #[test]
    fn short_session_leaves_table_unchanged() {
        let c = config();
        // a period longer than any plausible inspection time
        let env = c.environment(&[5.56, 600.0 * 60.0], PolicyMode::Learned).unwrap();
        let r = session_with_horizon(&env, 3);
        assert_eq!(r.stages, 0);
        assert_eq!(r.qtable, QTable::zeros(2, 2));
        assert_eq!(r.aids.len(), 1);
    }

    #[test]
    fn sessions_are_deterministic() {
        let c = config();
        let env = c.environment(&c.theta0, PolicyMode::Learned).unwrap();
        let a = session_with_horizon(&env, 9);
        let b = session_with_horizon(&env, 9);
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.qtable, b.qtable);
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn population_visits_match_stage_count() {
        let c = config();
        let env = c.environment(&c.theta0, PolicyMode::Learned).unwrap();
        let p = run_population(&env, 30, 0, 5).unwrap();
        assert_eq!(p.qtable.total_visits(), p.total_stages as u64);
        assert_eq!(p.records.len(), 30);
        assert!((0.0..=1.0).contains(&p.accuracy));
    }

    #[test]
    fn always_correct_population() {
        let mut c = config();
        c.judgment = JudgmentModel::always_correct();
        let env = c.environment(&c.theta0, PolicyMode::Learned).unwrap();
        assert_eq!(run_population(&env, 20, 0, 1).unwrap().accuracy, 1.0);
    }

    #[test]
    fn fixed_policy_uses_one_aid() {
        let c = config();
        let env = c.environment(&c.theta0, PolicyMode::Fixed(VisualAid(1))).unwrap();
        let p = run_population(&env, 10, 0, 2).unwrap();
        assert_eq!(p.aid_share, vec![0.0, 1.0]);
        assert_eq!(p.qtable.total_visits(), 0);
    }

    #[test]
    fn tuning_report_is_consistent() {
        let mut c = config();
        c.n_bo = 5;
        c.n_rp = 2;
        c.tune.stages = 4;
        c.tune.initial_stages = 2;
        let r = run_tuning(&c).unwrap();
        assert_eq!(r.history.len(), 4);
        assert_eq!(r.stage_stats.len(), 4);
        let inc: Vec<f64> = r.history.iter().filter_map(|h| h.incumbent).collect();
        assert!(inc.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(r.c_star, *inc.last().unwrap());
        assert_eq!(run_tuning(&c).unwrap().history, r.history);
    }
}

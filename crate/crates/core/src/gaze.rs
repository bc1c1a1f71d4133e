//! Visual states and the semi-Markov gaze model.
//!
//! A reader's gaze occupies one of `I + 2` visual states: `I` areas of
//! interest (AoIs), the uninformative area of the email, and the distraction
//! area off the email. Under visual aid `a` the gaze stays in state `i` for an
//! exponential sojourn with mean `φ^i(a)` and then jumps to `j` with
//! probability `P^{ij}(a)`. The diagonal of every `P(a)` is zero: staying put
//! is expressed by the sojourn alone, so trajectories never contain two
//! adjacent segments with the same state.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-12;
/// Files written by hand rarely sum to one exactly; rows within this
/// distance are renormalized on load.
const LOAD_TOLERANCE: f64 = 1e-6;

/// AoI index of the main email content.
pub const MAIN_CONTENT_AOI: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VisualState {
    /// Area of interest, 1-based as in `s^1..s^I`.
    Aoi(usize),
    Uninformative,
    Distraction,
}

impl VisualState {
    pub fn index(self, n_aoi: usize) -> usize {
        match self {
            VisualState::Aoi(i) => i - 1,
            VisualState::Uninformative => n_aoi,
            VisualState::Distraction => n_aoi + 1,
        }
    }

    pub fn from_index(index: usize, n_aoi: usize) -> Self {
        match index {
            i if i < n_aoi => VisualState::Aoi(i + 1),
            i if i == n_aoi => VisualState::Uninformative,
            i if i == n_aoi + 1 => VisualState::Distraction,
            i => panic!("state index {i} out of range for {n_aoi} AoIs"),
        }
    }

    pub fn all(n_aoi: usize) -> impl Iterator<Item = VisualState> {
        (0..n_aoi + 2).map(move |i| VisualState::from_index(i, n_aoi))
    }

    pub fn is_valid(self, n_aoi: usize) -> bool {
        match self {
            VisualState::Aoi(i) => (1..=n_aoi).contains(&i),
            _ => true,
        }
    }
}

impl fmt::Display for VisualState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VisualState::Aoi(i) => write!(f, "s{i}"),
            VisualState::Uninformative => f.write_str("ua"),
            VisualState::Distraction => f.write_str("da"),
        }
    }
}

impl FromStr for VisualState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ua" => Ok(VisualState::Uninformative),
            "da" => Ok(VisualState::Distraction),
            _ => s
                .strip_prefix('s')
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(VisualState::Aoi)
                .ok_or_else(|| Error::config(format!("unknown visual state `{s}`"))),
        }
    }
}

/// Index into the visual-aid library of a [`GazeDynamics`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VisualAid(pub usize);

/// Burr type XII inspection-time law,
/// `F(t) = 1 - (1 + (t/ρ1)^ρ2)^(-ρ3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurrParams {
    pub scale: f64,
    pub shape_c: f64,
    pub shape_k: f64,
}

impl BurrParams {
    pub const CASE_STUDY: BurrParams = BurrParams { scale: 11.7, shape_c: 62.5, shape_k: 0.04 };

    pub fn new(scale: f64, shape_c: f64, shape_k: f64) -> Result<Self> {
        let p = BurrParams { scale, shape_c, shape_k };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if [self.scale, self.shape_c, self.shape_k].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::config(format!("Burr parameters must be positive, got {self:?}")))
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        1.0 - (1.0 + (t / self.scale).powf(self.shape_c)).powf(-self.shape_k)
    }

    /// Inverse CDF for `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        self.scale * ((1.0 - u).powf(-1.0 / self.shape_k) - 1.0).powf(1.0 / self.shape_c)
    }

    /// Analytic mean `ρ1 ρ3 B(ρ3 - 1/ρ2, 1 + 1/ρ2)`; infinite when `ρ2 ρ3 <= 1`.
    pub fn mean(&self) -> f64 {
        let a = self.shape_k - 1.0 / self.shape_c;
        if a <= 0.0 {
            return f64::INFINITY;
        }
        let b = 1.0 + 1.0 / self.shape_c;
        let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
        self.scale * self.shape_k * ln_beta.exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            // open interval: u = 0 gives t = 0 and u -> 1 overflows
            let u: f64 = rng.random();
            if u <= 0.0 {
                continue;
            }
            let t = self.quantile(u);
            if t.is_finite() && t > 0.0 {
                return t;
            }
        }
    }
}

/// Transition matrix and sojourn scales under one visual aid.
#[derive(Debug, Clone, PartialEq)]
pub struct AidDynamics {
    /// Row-major `(I+2) x (I+2)`.
    pub transition: Vec<Vec<f64>>,
    /// Mean sojourn per state, seconds.
    pub sojourn: Vec<f64>,
}

impl AidDynamics {
    pub fn row(&self, state: usize) -> &[f64] {
        &self.transition[state]
    }
}

/// How a visual aid reshapes the no-aid dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AidEffect {
    /// Multiplier in `[0, 1]` on transitions into the uninformative and
    /// distraction states, applied before row renormalization.
    pub distraction_damping: f64,
    /// Multiplier in `(0, 1]` on the main-content sojourn.
    pub content_sojourn_scale: f64,
}

impl Default for AidEffect {
    fn default() -> Self {
        AidEffect { distraction_damping: 0.5, content_sojourn_scale: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeDynamics {
    n_aoi: usize,
    aid_names: Vec<String>,
    per_aid: Vec<AidDynamics>,
    initial: Vec<f64>,
    burr: BurrParams,
}

impl GazeDynamics {
    pub fn new(
        n_aoi: usize,
        aid_names: Vec<String>,
        per_aid: Vec<AidDynamics>,
        initial: Vec<f64>,
        burr: BurrParams,
    ) -> Result<Self> {
        let d = GazeDynamics { n_aoi, aid_names, per_aid, initial, burr };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if self.n_aoi == 0 {
            return Err(Error::config("at least one AoI is required"));
        }
        if self.per_aid.is_empty() || self.per_aid.len() != self.aid_names.len() {
            return Err(Error::config("visual-aid library must be non-empty with one name per aid"));
        }
        for (name, dynamics) in self.aid_names.iter().zip(&self.per_aid) {
            if dynamics.transition.len() != n || dynamics.sojourn.len() != n {
                return Err(Error::config(format!("aid `{name}` must cover {n} states")));
            }
            for (i, row) in dynamics.transition.iter().enumerate() {
                let state = VisualState::from_index(i, self.n_aoi);
                if row.len() != n {
                    return Err(Error::config(format!("aid `{name}` row {state} has {} entries", row.len())));
                }
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::config(format!("aid `{name}` row {state} has a negative entry")));
                }
                let sum: f64 = row.iter().sum();
                if sum == 0.0 {
                    return Err(Error::ZeroRow { aid: name.clone(), state: state.to_string() });
                }
                if (sum - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::config(format!("aid `{name}` row {state} sums to {sum}")));
                }
                if row[i] != 0.0 {
                    return Err(Error::config(format!("aid `{name}` has a self-transition at {state}")));
                }
            }
            if dynamics.sojourn.iter().any(|s| !s.is_finite() || *s <= 0.0) {
                return Err(Error::config(format!("aid `{name}` has a non-positive sojourn scale")));
            }
        }
        if self.initial.len() != n || self.initial.iter().any(|p| *p < 0.0) {
            return Err(Error::config("initial distribution must cover every state"));
        }
        let sum: f64 = self.initial.iter().sum();
        if (sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::config(format!("initial distribution sums to {sum}")));
        }
        self.burr.validate()
    }

    pub fn n_aoi(&self) -> usize {
        self.n_aoi
    }

    pub fn n_states(&self) -> usize {
        self.n_aoi + 2
    }

    pub fn n_aids(&self) -> usize {
        self.per_aid.len()
    }

    pub fn aid_names(&self) -> &[String] {
        &self.aid_names
    }

    pub fn aid_name(&self, aid: VisualAid) -> &str {
        &self.aid_names[aid.0]
    }

    pub fn aid_by_name(&self, name: &str) -> Option<VisualAid> {
        self.aid_names.iter().position(|n| n == name).map(VisualAid)
    }

    pub fn aid(&self, aid: VisualAid) -> &AidDynamics {
        &self.per_aid[aid.0]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn burr(&self) -> BurrParams {
        self.burr
    }

    pub fn state(&self, index: usize) -> VisualState {
        VisualState::from_index(index, self.n_aoi)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> VisualState {
        self.state(sample_index(&self.initial, rng))
    }

    /// Adds (or replaces) an aid derived from `base` by `effect`.
    pub fn with_effect_aid(mut self, name: &str, base: VisualAid, effect: AidEffect) -> Result<Self> {
        let derived = apply_visual_aid_effect(self.aid(base), self.n_aoi, effect)?;
        match self.aid_by_name(name) {
            Some(existing) => self.per_aid[existing.0] = derived,
            None => {
                self.aid_names.push(name.to_string());
                self.per_aid.push(derived);
            }
        }
        self.validate()?;
        Ok(self)
    }

    /// Restricts the library to the named aids, in the given order.
    pub fn select_aids(&self, names: &[String]) -> Result<Self> {
        let mut per_aid = Vec::with_capacity(names.len());
        for name in names {
            let aid = self.aid_by_name(name).ok_or_else(|| Error::config(format!("unknown visual aid `{name}`")))?;
            per_aid.push(self.aid(aid).clone());
        }
        GazeDynamics::new(self.n_aoi, names.to_vec(), per_aid, self.initial.clone(), self.burr)
    }

    pub fn sample_inspection_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.burr.sample(rng)
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Draws an inspection time `T_m^n` from the dynamics' Burr law.
pub fn sample_inspection_time<R: Rng + ?Sized>(dynamics: &GazeDynamics, rng: &mut R) -> f64 {
    dynamics.sample_inspection_time(rng)
}

fn draw_sojourn<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    Exp::new(1.0 / scale).expect("sojourn scale validated positive").sample(rng)
}

/// One semi-Markov step: the sojourn in `current`, then the next state.
pub fn step_semi_markov<R: Rng + ?Sized>(
    dynamics: &GazeDynamics,
    current: VisualState,
    aid: VisualAid,
    rng: &mut R,
) -> Result<(VisualState, f64)> {
    let i = current.index(dynamics.n_aoi);
    let aid_dyn = dynamics.aid(aid);
    let row = aid_dyn.row(i);
    if row.iter().all(|p| *p == 0.0) {
        return Err(Error::ZeroRow { aid: dynamics.aid_name(aid).to_string(), state: current.to_string() });
    }
    let sojourn = draw_sojourn(aid_dyn.sojourn[i], rng);
    let next = dynamics.state(sample_index(row, rng));
    Ok((next, sojourn))
}

/// Reshapes one aid's dynamics: transitions into `ua`/`da` are damped and
/// rows renormalized, and the main-content sojourn is scaled.
pub fn apply_visual_aid_effect(base: &AidDynamics, n_aoi: usize, effect: AidEffect) -> Result<AidDynamics> {
    if !(0.0..=1.0).contains(&effect.distraction_damping) {
        return Err(Error::config("distraction_damping must lie in [0, 1]"));
    }
    if !(effect.content_sojourn_scale > 0.0 && effect.content_sojourn_scale <= 1.0) {
        return Err(Error::config("content_sojourn_scale must lie in (0, 1]"));
    }
    if n_aoi < MAIN_CONTENT_AOI {
        return Err(Error::config(format!("the main-content AoI s{MAIN_CONTENT_AOI} does not exist")));
    }
    let ua = VisualState::Uninformative.index(n_aoi);
    let da = VisualState::Distraction.index(n_aoi);
    let transition = base
        .transition
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut row = row.clone();
            row[ua] *= effect.distraction_damping;
            row[da] *= effect.distraction_damping;
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            } else {
                // all mass was on ua/da and got annihilated
                let targets: Vec<usize> = (0..n_aoi).filter(|&j| j != i).collect();
                let p = 1.0 / targets.len() as f64;
                targets.iter().for_each(|&j| row[j] = p);
            }
            row
        })
        .collect();
    let mut sojourn = base.sojourn.clone();
    sojourn[VisualState::Aoi(MAIN_CONTENT_AOI).index(n_aoi)] *= effect.content_sojourn_scale;
    Ok(AidDynamics { transition, sojourn })
}

/// Participant `user` reading email `email`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct SessionId {
    pub user: u32,
    pub email: u32,
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.user, self.email)
    }
}

impl FromStr for SessionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("malformed session id `{s}`"));
        let (m, n) = s.split_once('-').ok_or_else(bad)?;
        Ok(SessionId { user: m.parse().map_err(|_| bad())?, email: n.parse().map_err(|_| bad())? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySegment {
    pub state: VisualState,
    pub start: f64,
    pub duration: f64,
}

impl TrajectorySegment {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// The pieces of a trajectory that fall inside one generation stage, with
/// start times relative to the stage start. A segment that straddles a stage
/// boundary is split, so each piece is one transition stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSlice {
    pub index: usize,
    pub start: f64,
    pub duration: f64,
    pub pieces: Vec<TrajectorySegment>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VsTrajectory {
    pub session: SessionId,
    segments: Vec<TrajectorySegment>,
}

impl VsTrajectory {
    pub fn new(session: SessionId) -> Self {
        VsTrajectory { session, segments: Vec::new() }
    }

    /// Builds a trajectory from `(state, duration)` pairs laid end to end.
    pub fn from_durations(session: SessionId, parts: &[(VisualState, f64)]) -> Self {
        let mut traj = VsTrajectory::new(session);
        for &(state, duration) in parts {
            traj.extend(state, duration);
        }
        traj
    }

    pub fn segments(&self) -> &[TrajectorySegment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.last().map_or(0.0, TrajectorySegment::end)
    }

    /// Appends time in `state`, merging with the last segment when the state
    /// is unchanged.
    pub fn extend(&mut self, state: VisualState, duration: f64) {
        if duration <= 0.0 {
            return;
        }
        let start = self.total_duration();
        match self.segments.last_mut() {
            Some(last) if last.state == state => last.duration += duration,
            _ => self.segments.push(TrajectorySegment { state, start, duration }),
        }
    }

    /// State occupied at time `t`, if `t` lies within the trajectory.
    pub fn state_at(&self, t: f64) -> Option<VisualState> {
        let i = self.segments.partition_point(|s| s.end() <= t);
        self.segments.get(i).filter(|s| s.start <= t).map(|s| s.state)
    }

    /// Splits the trajectory into generation stages of length `period`; the
    /// last slice may be partial.
    pub fn stage_slices(&self, period: f64) -> Vec<StageSlice> {
        let total = self.total_duration();
        let mut slices: Vec<StageSlice> = Vec::new();
        if total <= 0.0 {
            return slices;
        }
        let n_stages = (total / period).ceil().max(1.0) as usize;
        for k in 0..n_stages {
            let start = k as f64 * period;
            let end = ((k + 1) as f64 * period).min(total);
            if end - start <= 1e-12 {
                break;
            }
            slices.push(StageSlice { index: k, start, duration: end - start, pieces: Vec::new() });
        }
        for seg in &self.segments {
            let first = ((seg.start / period).floor() as usize).min(slices.len() - 1);
            for slice in &mut slices[first..] {
                let lo = seg.start.max(slice.start);
                let hi = seg.end().min(slice.start + slice.duration);
                if hi <= lo {
                    if slice.start >= seg.end() {
                        break;
                    }
                    continue;
                }
                slice.pieces.push(TrajectorySegment { state: seg.state, start: lo - slice.start, duration: hi - lo });
            }
        }
        slices
    }

    /// Seconds spent in each state, indexed like the dynamics.
    pub fn occupancy(&self, n_aoi: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n_aoi + 2];
        for seg in &self.segments {
            occ[seg.state.index(n_aoi)] += seg.duration;
        }
        occ
    }
}

/// Steps the gaze process one generation stage at a time, so a controller
/// can pick the aid for each stage after seeing the previous one.
pub struct SessionSimulator<'a> {
    dynamics: &'a GazeDynamics,
    period: f64,
    horizon: f64,
    now: f64,
    stage: usize,
    state: VisualState,
    trajectory: VsTrajectory,
}

impl<'a> SessionSimulator<'a> {
    pub fn new<R: Rng + ?Sized>(
        dynamics: &'a GazeDynamics,
        horizon: f64,
        period: f64,
        session: SessionId,
        rng: &mut R,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::config(format!("inspection time must be positive, got {horizon}")));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::config(format!("period length must be positive, got {period}")));
        }
        let state = dynamics.sample_initial(rng);
        Ok(SessionSimulator {
            dynamics,
            period,
            horizon,
            now: 0.0,
            stage: 0,
            state,
            trajectory: VsTrajectory::new(session),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.now >= self.horizon
    }

    /// Number of complete generation stages `K` with `K T_pl <= T`.
    pub fn full_stages(&self) -> usize {
        (self.horizon / self.period).floor() as usize
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Simulates the next stage under `aid` and returns its pieces with
    /// stage-relative start times. An in-flight sojourn is cut at the stage
    /// end; the state carries over and its sojourn is redrawn under the next
    /// aid.
    pub fn run_stage<R: Rng + ?Sized>(&mut self, aid: VisualAid, rng: &mut R) -> Result<Vec<TrajectorySegment>> {
        let stage_start = self.stage as f64 * self.period;
        let stage_end = ((self.stage + 1) as f64 * self.period).min(self.horizon);
        let mut pieces = Vec::new();
        while self.now < stage_end {
            let (next, sojourn) = step_semi_markov(self.dynamics, self.state, aid, rng)?;
            let start = self.now;
            if start + sojourn >= stage_end {
                pieces.push(TrajectorySegment {
                    state: self.state,
                    start: start - stage_start,
                    duration: stage_end - start,
                });
                self.trajectory.extend(self.state, stage_end - start);
                self.now = stage_end;
            } else {
                pieces.push(TrajectorySegment { state: self.state, start: start - stage_start, duration: sojourn });
                self.trajectory.extend(self.state, sojourn);
                self.now = start + sojourn;
                self.state = next;
            }
        }
        self.stage += 1;
        Ok(pieces)
    }

    pub fn into_trajectory(self) -> VsTrajectory {
        self.trajectory
    }
}

/// Simulates a whole session; `schedule(k)` gives the aid for stage `k`
/// (0-based).
pub fn simulate_session<R, F>(
    dynamics: &GazeDynamics,
    mut schedule: F,
    horizon: f64,
    period: f64,
    session: SessionId,
    rng: &mut R,
) -> Result<VsTrajectory>
where
    R: Rng + ?Sized,
    F: FnMut(usize) -> VisualAid,
{
    let mut sim = SessionSimulator::new(dynamics, horizon, period, session, rng)?;
    while !sim.is_finished() {
        let aid = schedule(sim.stage());
        sim.run_stage(aid, rng)?;
    }
    Ok(sim.into_trajectory())
}

/// Which aid was on screen when. Stage `k` covers `[k period, (k+1) period)`;
/// stages past the end of `aids` keep the last aid.
#[derive(Debug, Clone, PartialEq)]
pub struct AidSchedule {
    pub period: f64,
    pub aids: Vec<VisualAid>,
}

impl AidSchedule {
    pub fn constant(aid: VisualAid) -> Self {
        AidSchedule { period: f64::INFINITY, aids: vec![aid] }
    }

    pub fn aid_at(&self, t: f64) -> VisualAid {
        let k = if self.period.is_finite() { (t / self.period).floor().max(0.0) as usize } else { 0 };
        self.aids[k.min(self.aids.len() - 1)]
    }

    /// Times at which the displayed aid changes.
    fn switch_times(&self) -> Vec<f64> {
        self.aids
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] != w[1])
            .map(|(k, _)| (k + 1) as f64 * self.period)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DynamicsEstimate {
    pub dynamics: GazeDynamics,
    /// `(aid, state)` pairs with no observed exit; their rows fell back to
    /// uniform.
    pub unobserved: Vec<(VisualAid, VisualState)>,
}

/// Empirical transition frequencies and mean sojourns per aid.
///
/// Each transition is attributed to the aid displayed when it happened. Time
/// in a state is cut wherever the displayed aid changes, and `φ` is the mean
/// length of the resulting pieces.
pub fn estimate_dynamics(
    observations: &[(VsTrajectory, AidSchedule)],
    n_aoi: usize,
    aid_names: &[String],
) -> Result<DynamicsEstimate> {
    if observations.iter().all(|(t, _)| t.is_empty()) {
        return Err(Error::Empty("no trajectories to estimate dynamics from"));
    }
    if aid_names.is_empty() {
        return Err(Error::config("visual-aid library must be non-empty"));
    }
    let n = n_aoi + 2;
    let n_aids = aid_names.len();
    let mut counts = vec![vec![vec![0.0f64; n]; n]; n_aids];
    let mut time = vec![vec![0.0f64; n]; n_aids];
    let mut pieces = vec![vec![0usize; n]; n_aids];
    let mut initial = vec![0.0; n];

    for (traj, schedule) in observations {
        let segs = traj.segments();
        let Some(first) = segs.first() else { continue };
        initial[first.state.index(n_aoi)] += 1.0;
        let switches = schedule.switch_times();
        for (w, seg) in segs.iter().enumerate() {
            if !seg.state.is_valid(n_aoi) {
                return Err(Error::config(format!("state {} outside the {n_aoi}-AoI space", seg.state)));
            }
            let s = seg.state.index(n_aoi);
            let mut cuts: Vec<f64> = vec![seg.start];
            cuts.extend(switches.iter().copied().filter(|&x| x > seg.start && x < seg.end()));
            cuts.push(seg.end());
            for pair in cuts.windows(2) {
                let a = schedule.aid_at(0.5 * (pair[0] + pair[1])).0;
                if a >= n_aids {
                    return Err(Error::config(format!("aid index {a} outside the library")));
                }
                time[a][s] += pair[1] - pair[0];
                pieces[a][s] += 1;
            }
            if let Some(next) = segs.get(w + 1) {
                let a = schedule.aid_at(seg.end()).0;
                counts[a][s][next.state.index(n_aoi)] += 1.0;
            }
        }
    }

    let total_time: f64 = time.iter().flatten().sum();
    let total_pieces: usize = pieces.iter().flatten().sum();
    let fallback_sojourn = total_time / total_pieces as f64;
    let mut unobserved = Vec::new();
    let mut per_aid = Vec::with_capacity(n_aids);
    for a in 0..n_aids {
        let mut transition = Vec::with_capacity(n);
        for (i, row_counts) in counts[a].iter().enumerate() {
            let total: f64 = row_counts.iter().sum();
            let row = if total > 0.0 {
                row_counts.iter().map(|c| c / total).collect()
            } else {
                unobserved.push((VisualAid(a), VisualState::from_index(i, n_aoi)));
                let p = 1.0 / (n - 1) as f64;
                (0..n).map(|j| if j == i { 0.0 } else { p }).collect()
            };
            transition.push(row);
        }
        let sojourn = (0..n)
            .map(|i| if pieces[a][i] > 0 { time[a][i] / pieces[a][i] as f64 } else { fallback_sojourn })
            .collect();
        per_aid.push(AidDynamics { transition, sojourn });
    }
    let starts: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= starts);

    let dynamics = GazeDynamics::new(n_aoi, aid_names.to_vec(), per_aid, initial, BurrParams::CASE_STUDY)?;
    Ok(DynamicsEstimate { dynamics, unobserved })
}

// ---------------------------------------------------------------------------
// Config file and CSV surfaces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct DynamicsFile {
    aoi_count: usize,
    aids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<Vec<f64>>,
    burr: [f64; 3],
    #[serde(default)]
    transition: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default)]
    sojourn: BTreeMap<String, Vec<f64>>,
    /// Aids built from another aid by an effect instead of listed verbatim.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    derived: BTreeMap<String, DerivedAid>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DerivedAid {
    base: String,
    #[serde(flatten)]
    effect: AidEffect,
}

fn normalize_loaded(values: &mut [f64], what: &str) -> Result<()> {
    let sum: f64 = values.iter().sum();
    if sum > 0.0 && (sum - 1.0).abs() <= LOAD_TOLERANCE {
        values.iter_mut().for_each(|p| *p /= sum);
        Ok(())
    } else if sum == 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{what} sums to {sum}, expected 1")))
    }
}

impl GazeDynamics {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: DynamicsFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let n = file.aoi_count + 2;
        let mut initial = match file.initial {
            Some(v) => v,
            None => {
                let mut v = vec![0.0; n];
                if n > 2 {
                    v[0] = 1.0; // starts on the title AoI
                }
                v
            }
        };
        normalize_loaded(&mut initial, "initial distribution")?;

        let mut names = Vec::new();
        let mut per_aid = Vec::new();
        for name in &file.aids {
            if file.derived.contains_key(name) {
                continue;
            }
            let mut transition = file
                .transition
                .get(name)
                .cloned()
                .ok_or_else(|| Error::config(format!("missing `transition.{name}`")))?;
            for (i, row) in transition.iter_mut().enumerate() {
                normalize_loaded(row, &format!("transition.{name} row {i}"))?;
            }
            let sojourn =
                file.sojourn.get(name).cloned().ok_or_else(|| Error::config(format!("missing `sojourn.{name}`")))?;
            names.push(name.clone());
            per_aid.push(AidDynamics { transition, sojourn });
        }
        let [r1, r2, r3] = file.burr;
        let mut dynamics = GazeDynamics::new(file.aoi_count, names, per_aid, initial, BurrParams::new(r1, r2, r3)?)?;
        for name in &file.aids {
            if let Some(d) = file.derived.get(name) {
                let base = dynamics
                    .aid_by_name(&d.base)
                    .ok_or_else(|| Error::config(format!("derived aid `{name}` names unknown base `{}`", d.base)))?;
                dynamics = dynamics.with_effect_aid(name, base, d.effect)?;
            }
        }
        // keep the declared aid order
        dynamics.select_aids(&file.aids)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let file = DynamicsFile {
            aoi_count: self.n_aoi,
            aids: self.aid_names.clone(),
            initial: Some(self.initial.clone()),
            burr: [self.burr.scale, self.burr.shape_c, self.burr.shape_k],
            transition: self.aid_names.iter().cloned().zip(self.per_aid.iter().map(|d| d.transition.clone())).collect(),
            sojourn: self.aid_names.iter().cloned().zip(self.per_aid.iter().map(|d| d.sojourn.clone())).collect(),
            derived: BTreeMap::new(),
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

pub const TRAJECTORY_CSV_HEADER: [&str; 4] = ["session_id", "state", "start_s", "duration_s"];

pub fn write_trajectories_csv<W: Write>(out: W, trajectories: &[VsTrajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_CSV_HEADER)?;
    for traj in trajectories {
        for seg in traj.segments() {
            w.write_record([
                traj.session.to_string(),
                seg.state.to_string(),
                seg.start.to_string(),
                seg.duration.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads trajectories back, grouped by session id in order of first
/// appearance.
pub fn read_trajectories_csv<R: Read>(input: R) -> Result<Vec<VsTrajectory>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(TRAJECTORY_CSV_HEADER) {
        return Err(Error::config(format!("unexpected trajectory header {headers:?}")));
    }
    let mut out: Vec<VsTrajectory> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let session: SessionId = rec[0].parse()?;
        let state: VisualState = rec[1].parse()?;
        let duration: f64 = rec[3].parse().map_err(|_| Error::config(format!("bad duration `{}`", &rec[3])))?;
        match out.last_mut() {
            Some(t) if t.session == session => t.extend(state, duration),
            _ => {
                let mut t = VsTrajectory::new(session);
                t.extend(state, duration);
                out.push(t);
            }
        }
    }
    Ok(out)
}

//! Tabular Q-learning over (attention state, visual aid).

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::VisualAid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub q: Vec<Vec<f64>>,
    pub visits: Vec<Vec<u64>>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_aids: usize) -> Self {
        QTable { q: vec![vec![0.0; n_aids]; n_states], visits: vec![vec![0; n_aids]; n_states] }
    }

    pub fn n_states(&self) -> usize {
        self.q.len()
    }

    pub fn n_aids(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    pub fn value(&self, x: usize, a: VisualAid) -> f64 {
        self.q[x][a.0]
    }

    pub fn visit_count(&self, x: usize, a: VisualAid) -> u64 {
        self.visits[x][a.0]
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().flatten().sum()
    }

    /// Greedy aid for `x`; ties go to the lowest aid id.
    pub fn greedy(&self, x: usize) -> VisualAid {
        let row = &self.q[x];
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        VisualAid(best)
    }

    pub fn max_value(&self, x: usize) -> f64 {
        self.q[x].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check_shape(&self, n_states: usize, n_aids: usize) -> Result<()> {
        let ok = self.q.len() == n_states
            && self.visits.len() == n_states
            && self.q.iter().all(|r| r.len() == n_aids)
            && self.visits.iter().all(|r| r.len() == n_aids);
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("Q-table must be {n_states}x{n_aids}")))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: QTable = serde_json::from_str(text)?;
        t.check_shape(t.q.len(), t.n_aids())?;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EpsilonSchedule {
    /// `ε_k = κ / (κ + k)`
    InverseStage { kappa: f64 },
    /// `ε_k = decay^k`
    Exponential { decay: f64 },
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule::InverseStage { kappa: 50.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningParams {
    pub beta: f64,
    pub eta0: f64,
    pub epsilon: EpsilonSchedule,
}

impl Default for LearningParams {
    fn default() -> Self {
        LearningParams { beta: 0.9, eta0: 10.0, epsilon: EpsilonSchedule::default() }
    }
}

impl LearningParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::config(format!("eta0 must be positive, got {}", self.eta0)));
        }
        match self.epsilon {
            EpsilonSchedule::InverseStage { kappa } if !(kappa > 0.0 && kappa.is_finite()) => {
                Err(Error::config("epsilon kappa must be positive"))
            }
            EpsilonSchedule::Exponential { decay } if !(decay > 0.0 && decay < 1.0) => {
                Err(Error::config("epsilon decay must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

/// `η0 / (n - 1 + η0)` for the `n`-th visit.
pub fn learning_rate(visit_count: u64, eta0: f64) -> f64 {
    debug_assert!(visit_count >= 1);
    eta0 / ((visit_count.max(1) - 1) as f64 + eta0)
}

pub fn epsilon_at(k: usize, schedule: EpsilonSchedule) -> f64 {
    match schedule {
        EpsilonSchedule::InverseStage { kappa } => kappa / (kappa + k as f64),
        EpsilonSchedule::Exponential { decay } => decay.powi(k.min(i32::MAX as usize) as i32),
    }
}

/// ε-greedy choice. The uniform draw for exploration is taken only when the
/// explore coin comes up.
pub fn select_aid<R: Rng + ?Sized>(table: &QTable, x: usize, epsilon: f64, rng: &mut R) -> VisualAid {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        VisualAid(rng.random_range(0..table.n_aids()))
    } else {
        table.greedy(x)
    }
}

pub fn record_visit(table: &mut QTable, x: usize, a: VisualAid) -> u64 {
    let v = &mut table.visits[x][a.0];
    *v += 1;
    *v
}

/// One temporal-difference step on `q(x, a)`. The visit for this
/// experience must already be recorded: the rate uses the current count.
pub fn q_update(table: &mut QTable, x: usize, a: VisualAid, reward: f64, x_next: usize, params: &LearningParams) {
    let gamma = learning_rate(table.visit_count(x, a), params.eta0);
    let target = reward + params.beta * table.max_value(x_next);
    let q = &mut table.q[x][a.0];
    *q += gamma * (target - *q);
}

/// One row of a learning curve: the value of the entry just updated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub stage: usize,
    pub x: usize,
    pub a: VisualAid,
    pub q_value: f64,
}

pub fn write_learning_curve_csv<W: Write>(out: W, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stage", "x", "a", "q_value"])?;
    for p in points {
        w.write_record([p.stage.to_string(), p.x.to_string(), p.a.0.to_string(), p.q_value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

//! Expected improvement and its maximization over a box.

use rand::Rng;
use statrs::function::erf::erfc;

use super::design::{latin_hypercube, HyperBox};
use super::gp::{ascend, Posterior};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[(Y - incumbent)^+]` for `Y ~ N(mean, sd²)`.
pub fn expected_improvement(mean: f64, sd: f64, incumbent: f64) -> f64 {
    let gap = mean - incumbent;
    if !(sd > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalSearch {
    /// Latin-hypercube candidates scored before ascent.
    pub candidates: usize,
    /// Best candidates used as ascent starts.
    pub starts: usize,
    pub ascent_steps: usize,
}

impl Default for ProposalSearch {
    fn default() -> Self {
        ProposalSearch { candidates: 256, starts: 8, ascent_steps: 60 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub theta: Vec<f64>,
    pub ei: f64,
    /// EI was zero everywhere searched and the point is uniform random.
    pub fallback: bool,
    /// EI at each ascent start, for checking the maximization contract.
    pub start_ei: Vec<f64>,
}

/// Maximizes EI by projected gradient ascent, in unit-cube coordinates, from
/// the best Latin-hypercube candidates.
pub fn propose_next<R: Rng + ?Sized>(
    posterior: &Posterior,
    incumbent: f64,
    bounds: &HyperBox,
    search: ProposalSearch,
    rng: &mut R,
) -> Proposal {
    let ei_unit = |u: &[f64]| {
        let (m, s) = posterior.predict(&bounds.from_unit(u));
        expected_improvement(m, s, incumbent)
    };
    let mut scored: Vec<(f64, Vec<f64>)> =
        latin_hypercube(search.candidates.max(1), bounds.dims(), rng).into_iter().map(|u| (ei_unit(&u), u)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    if !(scored[0].0 > 0.0) {
        return Proposal { theta: bounds.sample_uniform(rng), ei: 0.0, fallback: true, start_ei: vec![] };
    }
    let unit = vec![(0.0, 1.0); bounds.dims()];
    let mut best = (scored[0].1.clone(), scored[0].0);
    let mut start_ei = Vec::new();
    for (v, u) in scored.into_iter().take(search.starts.max(1)) {
        start_ei.push(v);
        let (x, fx) = ascend(&ei_unit, u, &unit, search.ascent_steps, 0.05);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    Proposal { theta: bounds.from_unit(&best.0), ei: best.1, fallback: false, start_ei }
}

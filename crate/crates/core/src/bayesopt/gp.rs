//! Squared-exponential Gaussian-process regression.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::design::HyperBox;
use super::linalg::{cho_solve, cholesky_jittered, log_det_from_cholesky, solve_lower, Matrix};
use crate::error::{Error, Result};

pub const DEFAULT_JITTER: f64 = 1e-10;

/// `k(θ, θ') = amplitude · exp(-Σ λ_i (θ_i - θ'_i)²)` with constant prior
/// mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub mean: f64,
    pub amplitude: f64,
    pub inv_lengthscales: Vec<f64>,
    pub jitter: f64,
}

impl Kernel {
    pub fn new(mean: f64, amplitude: f64, inv_lengthscales: Vec<f64>) -> Result<Self> {
        let k = Kernel { mean, amplitude, inv_lengthscales, jitter: DEFAULT_JITTER };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) || !self.mean.is_finite() {
            return Err(Error::config("kernel amplitude must be positive and the mean finite"));
        }
        if self.inv_lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::config("inverse lengthscales must be positive"));
        }
        if !(self.jitter > 0.0) {
            return Err(Error::config("jitter must be positive"));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.inv_lengthscales.len()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = self.inv_lengthscales.iter().zip(a.iter().zip(b)).map(|(l, (x, y))| l * (x - y) * (x - y)).sum();
        self.amplitude * (-d2).exp()
    }

    pub fn gram(&self, points: &[Vec<f64>]) -> Matrix {
        let n = points.len();
        let mut k = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(&points[i], &points[j]);
                k[i][j] = v;
                k[j][i] = v;
            }
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub theta: Vec<f64>,
    pub value: f64,
}

/// A GP conditioned on noise-free observations.
#[derive(Debug, Clone)]
pub struct Posterior {
    kernel: Kernel,
    points: Vec<Vec<f64>>,
    chol: Matrix,
    weights: Vec<f64>,
    jitter: f64,
}

impl Posterior {
    pub fn new(kernel: &Kernel, observations: &[Observation]) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Empty("GP needs at least one observation"));
        }
        if let Some(o) = observations.iter().find(|o| o.theta.len() != kernel.dims()) {
            return Err(Error::config(format!("observation has {} dims, kernel has {}", o.theta.len(), kernel.dims())));
        }
        let points: Vec<Vec<f64>> = observations.iter().map(|o| o.theta.clone()).collect();
        let (chol, jitter) = cholesky_jittered(&kernel.gram(&points), kernel.jitter)?;
        let resid: Vec<f64> = observations.iter().map(|o| o.value - kernel.mean).collect();
        let weights = cho_solve(&chol, &resid);
        Ok(Posterior { kernel: kernel.clone(), points, chol, weights, jitter })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Jitter actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and standard deviation at `theta`.
    pub fn predict(&self, theta: &[f64]) -> (f64, f64) {
        let k: Vec<f64> = self.points.iter().map(|p| self.kernel.eval(theta, p)).collect();
        let mean = self.kernel.mean + k.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
        let v = solve_lower(&self.chol, &k);
        let var = self.kernel.amplitude - v.iter().map(|x| x * x).sum::<f64>();
        (mean, var.max(0.0).sqrt())
    }
}

pub fn gp_posterior(kernel: &Kernel, observations: &[Observation], theta: &[f64]) -> Result<(f64, f64)> {
    Ok(Posterior::new(kernel, observations)?.predict(theta))
}

pub fn log_marginal_likelihood(kernel: &Kernel, observations: &[Observation]) -> Result<f64> {
    let post = Posterior::new(kernel, observations)?;
    let resid: Vec<f64> = observations.iter().map(|o| o.value - kernel.mean).collect();
    let quad: f64 = resid.iter().zip(&post.weights).map(|(a, b)| a * b).sum();
    let n = observations.len() as f64;
    Ok(-0.5 * quad - 0.5 * log_det_from_cholesky(&post.chol) - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// Search region for the kernel MLE. Amplitude and inverse lengthscales are
/// searched in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct MleBounds {
    pub mean: (f64, f64),
    pub amplitude: (f64, f64),
    pub inv_lengthscales: Vec<(f64, f64)>,
}

impl MleBounds {
    /// Lengthscales between a hundredth and a few times the box width in
    /// every dimension; mean and amplitude scaled to the observed values.
    pub fn for_box(b: &HyperBox, observations: &[Observation]) -> Self {
        let (lo, hi) = observations
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o.value), hi.max(o.value)));
        let span = (hi - lo).max(1e-3);
        let mag = lo.abs().max(hi.abs()).max(span);
        MleBounds {
            mean: (lo - 2.0 * span, hi + 2.0 * span),
            amplitude: (1e-4 * span * span, 10.0 * mag * mag),
            inv_lengthscales: b.widths().iter().map(|w| (0.05 / (w * w), 1e4 / (w * w))).collect(),
        }
    }

    fn to_params(&self) -> Vec<(f64, f64)> {
        let mut v = vec![self.mean, (self.amplitude.0.ln(), self.amplitude.1.ln())];
        v.extend(self.inv_lengthscales.iter().map(|(a, b)| (a.ln(), b.ln())));
        v
    }
}

#[derive(Debug, Clone)]
pub struct MleFit {
    pub kernel: Kernel,
    pub log_likelihood: f64,
    /// Set when no restart improved on the initial kernel.
    pub warning: bool,
    /// Log-likelihood at each restart's starting point.
    pub start_log_likelihoods: Vec<f64>,
}

fn unpack(p: &[f64], jitter: f64) -> Kernel {
    Kernel { mean: p[0], amplitude: p[1].exp(), inv_lengthscales: p[2..].iter().map(|v| v.exp()).collect(), jitter }
}

fn pack(k: &Kernel) -> Vec<f64> {
    let mut p = vec![k.mean, k.amplitude.ln()];
    p.extend(k.inv_lengthscales.iter().map(|v| v.ln()));
    p
}

/// Projected gradient ascent with central finite differences and a
/// backtracking step.
pub(crate) fn ascend(
    f: &dyn Fn(&[f64]) -> f64,
    start: Vec<f64>,
    bounds: &[(f64, f64)],
    steps: usize,
    initial_step: f64,
) -> (Vec<f64>, f64) {
    let clip = |p: &mut Vec<f64>| {
        for (v, (lo, hi)) in p.iter_mut().zip(bounds) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let mut x = start;
    clip(&mut x);
    let mut fx = f(&x);
    let mut step = initial_step;
    for _ in 0..steps {
        let mut grad = vec![0.0; x.len()];
        for i in 0..x.len() {
            let h = 1e-6 * (bounds[i].1 - bounds[i].0).max(1e-300);
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] = (up[i] + h).min(bounds[i].1);
            dn[i] = (dn[i] - h).max(bounds[i].0);
            if up[i] > dn[i] {
                grad[i] = (f(&up) - f(&dn)) / (up[i] - dn[i]);
            }
        }
        let norm = grad.iter().zip(bounds).map(|(g, (lo, hi))| (g * (hi - lo)).powi(2)).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        let mut improved = false;
        while step > 1e-9 {
            let mut y: Vec<f64> = x
                .iter()
                .zip(&grad)
                .zip(bounds)
                .map(|((v, g), (lo, hi))| v + step * g * (hi - lo).powi(2) / norm)
                .collect();
            clip(&mut y);
            let fy = f(&y);
            if fy > fx {
                x = y;
                fx = fy;
                improved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (x, fx)
}

/// Multi-start maximum-likelihood fit of all kernel parameters. The first
/// start is `init`; the rest are uniform in the (log) bounds.
pub fn fit_kernel_mle<R: Rng + ?Sized>(
    init: &Kernel,
    observations: &[Observation],
    restarts: usize,
    bounds: &MleBounds,
    rng: &mut R,
) -> Result<MleFit> {
    if observations.is_empty() {
        return Err(Error::Empty("MLE needs observations"));
    }
    if bounds.inv_lengthscales.len() != init.dims() {
        return Err(Error::config("MLE bounds and kernel dims differ"));
    }
    let pb = bounds.to_params();
    let jitter = init.jitter;
    let objective = |p: &[f64]| log_marginal_likelihood(&unpack(p, jitter), observations).unwrap_or(f64::NEG_INFINITY);
    let init_ll = log_marginal_likelihood(init, observations).unwrap_or(f64::NEG_INFINITY);

    let mut starts = vec![pack(init)];
    for _ in 1..restarts.max(1) {
        starts.push(pb.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect());
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_lls = Vec::with_capacity(starts.len());
    for s in starts {
        start_lls.push(objective(&s));
        let (p, v) = ascend(&objective, s, &pb, 200, 0.1);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((p, v));
        }
    }
    let (p, v) = best.expect("at least one start");
    if !(v > init_ll) {
        return Ok(MleFit {
            kernel: init.clone(),
            log_likelihood: init_ll,
            warning: true,
            start_log_likelihoods: start_lls,
        });
    }
    Ok(MleFit { kernel: unpack(&p, jitter), log_likelihood: v, warning: false, start_log_likelihoods: start_lls })
}

//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's own numerics.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Two-sided one-sample KS statistic `D_n` against `cdf`.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS p-value with the Stephens small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Pearson χ² goodness-of-fit p-value. Cells with zero expected mass must
/// have zero counts and are dropped.
pub fn chi_square_p_value(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0;
    for (&c, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            assert_eq!(c, 0, "draw landed on a zero-probability cell");
            continue;
        }
        let e = p * n as f64;
        stat += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    if cells < 2 {
        return 1.0;
    }
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

/// GP posterior mean and variance by explicit matrix inversion.
pub fn gp_explicit(
    mean: f64,
    amplitude: f64,
    inv_lengthscales: &[f64],
    jitter: f64,
    points: &[Vec<f64>],
    values: &[f64],
    theta: &[f64],
) -> (f64, f64) {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).zip(inv_lengthscales).map(|((x, y), l)| l * (x - y) * (x - y)).sum();
        amplitude * (-d2).exp()
    };
    let n = points.len();
    let gram = DMatrix::from_fn(n, n, |i, j| k(&points[i], &points[j]) + if i == j { jitter } else { 0.0 });
    let inv = gram.try_inverse().expect("gram matrix invertible");
    let kv = DVector::from_fn(n, |i, _| k(theta, &points[i]));
    let resid = DVector::from_fn(n, |i, _| values[i] - mean);
    let m = mean + (kv.transpose() * &inv * resid)[(0, 0)];
    let v = amplitude - (kv.transpose() * &inv * &kv)[(0, 0)];
    (m, v)
}

/// Monte Carlo estimate of `E[(Y - c)^+]`, `Y ~ N(mean, sd²)`, with its
/// standard error.
pub fn ei_monte_carlo<R: Rng>(mean: f64, sd: f64, incumbent: f64, draws: usize, rng: &mut R) -> (f64, f64) {
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        let z: f64 = StandardNormal.sample(rng);
        let gain = (mean + sd * z - incumbent).max(0.0);
        s += gain;
        s2 += gain * gain;
    }
    let n = draws as f64;
    let m = s / n;
    let var = (s2 / n - m * m).max(0.0) * n / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Sample mean and unbiased standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

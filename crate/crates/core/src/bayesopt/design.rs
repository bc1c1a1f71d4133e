//! Hyperparameter boxes and space-filling designs.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl HyperBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::config("box bounds must be non-empty and of equal length"));
        }
        if let Some(i) =
            (0..lower.len()).find(|&i| !(lower[i] < upper[i]) || !lower[i].is_finite() || !upper[i].is_finite())
        {
            return Err(Error::config(format!(
                "box dimension {i} needs lower < upper, got [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(HyperBox { lower, upper })
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dims()
            && theta.iter().zip(self.lower.iter().zip(&self.upper)).all(|(t, (l, u))| l <= t && t <= u)
    }

    pub fn clip(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(self.lower.iter().zip(&self.upper)).map(|(t, (l, u))| t.clamp(*l, *u)).collect()
    }

    pub fn to_unit(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(self.lower.iter().zip(&self.upper)).map(|(t, (l, u))| (t - l) / (u - l)).collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, h))| (l + v * (h - l)).clamp(*l, *h)).collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| rng.random_range(*l..=*u)).collect()
    }
}

/// `n` points in the unit cube, one per stratum along every axis.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        perm.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            p[d] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn box_validation_and_mapping() {
        assert!(HyperBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(HyperBox::new(vec![], vec![]).is_err());
        let b = HyperBox::new(vec![1.0, 60.0], vec![33.0, 600.0]).unwrap();
        assert_eq!(b.from_unit(&[0.5, 0.5]), vec![17.0, 330.0]);
        assert_eq!(b.to_unit(&[17.0, 330.0]), vec![0.5, 0.5]);
        assert_eq!(b.clip(&[-5.0, 900.0]), vec![1.0, 600.0]);
        let mut rng = stream(0, &[]);
        for _ in 0..100 {
            assert!(b.contains(&b.sample_uniform(&mut rng)));
        }
    }

    #[test]
    fn latin_hypercube_stratifies_each_axis() {
        let pts = latin_hypercube(20, 3, &mut stream(1, &[]));
        for d in 0..3 {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[d] * 20.0) as usize).collect();
            bins.sort_unstable();
            assert_eq!(bins, (0..20).collect::<Vec<_>>());
        }
    }
}

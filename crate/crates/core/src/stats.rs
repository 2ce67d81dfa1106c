//! Streaming moments with pairwise merging (Welford / Chan et al.).

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n;
        self.n += other.n;
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Mean vector and co-moment matrix of a fixed-length real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiWelford {
    pub n: u64,
    pub mean: Vec<f64>,
    comoment: Vec<f64>,
    delta: Vec<f64>,
}

impl MultiWelford {
    pub fn new(dim: usize) -> Self {
        MultiWelford { n: 0, mean: vec![0.0; dim], comoment: vec![0.0; dim * dim], delta: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, x: &[f64]) {
        let d = self.dim();
        assert_eq!(x.len(), d);
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for i in 0..d {
            self.delta[i] = x[i] - self.mean[i];
            self.mean[i] += self.delta[i] * inv;
        }
        // C += (x − old mean)(x − new mean)ᵀ, kept symmetric by filling
        // the upper triangle and mirroring.
        for i in 0..d {
            let di = self.delta[i];
            for j in i..d {
                self.comoment[i * d + j] += di * (x[j] - self.mean[j]);
            }
        }
        for i in 0..d {
            for j in 0..i {
                self.comoment[i * d + j] = self.comoment[j * d + i];
            }
        }
    }

    pub fn merge(&mut self, other: &MultiWelford) {
        assert_eq!(self.dim(), other.dim());
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let d = self.dim();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..d {
            self.delta[i] = other.mean[i] - self.mean[i];
        }
        for i in 0..d {
            for j in 0..d {
                self.comoment[i * d + j] += other.comoment[i * d + j] + self.delta[i] * self.delta[j] * na * nb / n;
            }
        }
        for i in 0..d {
            self.mean[i] += self.delta[i] * nb / n;
        }
        self.n += other.n;
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.comoment[i * self.dim() + j] / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self, i: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.covariance(i, i) / self.n as f64).sqrt()
        }
    }

    /// Standard error of a smooth function of the mean with the given
    /// gradient (delta method): sqrt(gᵀΣg / n).
    pub fn delta_stderr(&self, grad: &[(usize, f64)]) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let mut v = 0.0;
        for &(i, gi) in grad {
            for &(j, gj) in grad {
                v += gi * gj * self.covariance(i, j);
            }
        }
        (v.max(0.0) / self.n as f64).sqrt()
    }
}

/// Sample cumulants κ₁..κ₄ of a data set (biased moment estimators).
pub fn cumulants(xs: &[f64]) -> [f64; 4] {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    [mean, m2, m3, m4 - 3.0 * m2 * m2]
}

/// Ordinary least-squares slope and intercept of y on x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

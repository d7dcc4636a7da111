//! Shared Monte-Carlo machinery for the oracle tests. All sampling here goes
//! through nalgebra so the oracles stay independent of the crate's own
//! linear algebra.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct MvnSampler {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: &[f64], cov_row_major: &[f64]) -> Self {
        let d = mean.len();
        let cov = DMatrix::from_row_slice(d, d, cov_row_major);
        let chol = cov
            .clone()
            .cholesky()
            .unwrap_or_else(|| {
                let jittered = cov + DMatrix::identity(d, d) * 1e-12;
                jittered.cholesky().expect("oracle covariance must be PSD")
            })
            .l();
        MvnSampler {
            mean: DVector::from_row_slice(mean),
            chol,
        }
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let eps = DVector::from_iterator(
            self.mean.len(),
            (0..self.mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        (&self.mean + &self.chol * eps).iter().copied().collect()
    }
}

/// Mean and standard error of a statistic computed over batches of samples.
pub struct BatchEstimate {
    pub value: f64,
    pub se: f64,
}

/// Splits `total` draws into `batches` groups, computes `stat` per group, and
/// returns the grand mean with its standard error across batches.
pub fn batch_estimate<F>(
    rng: &mut ChaCha8Rng,
    total: usize,
    batches: usize,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
    stat: F,
) -> BatchEstimate
where
    F: Fn(&[Vec<f64>]) -> f64,
{
    let per = total / batches;
    let mut values = Vec::with_capacity(batches);
    let mut buf = Vec::with_capacity(per);
    for _ in 0..batches {
        buf.clear();
        for _ in 0..per {
            buf.push(draw(rng));
        }
        values.push(stat(&buf));
    }
    let mean = values.iter().sum::<f64>() / batches as f64;
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (batches as f64 - 1.0);
    BatchEstimate {
        value: mean,
        se: (var / batches as f64).sqrt(),
    }
}

/// Sample covariance between two scalar projections of the draws.
pub fn sample_cov(samples: &[Vec<f64>], f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> f64) -> f64 {
    let n = samples.len() as f64;
    let (mut mf, mut mg) = (0.0, 0.0);
    for s in samples {
        mf += f(s);
        mg += g(s);
    }
    mf /= n;
    mg /= n;
    let mut acc = 0.0;
    for s in samples {
        acc += (f(s) - mf) * (g(s) - mg);
    }
    acc / (n - 1.0)
}

pub fn sample_mean(samples: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> f64 {
    samples.iter().map(|s| f(s)).sum::<f64>() / samples.len() as f64
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Asserts `|observed − expected| ≤ k·se` with a readable failure message.
pub fn assert_within_se(expected: f64, observed: f64, se: f64, k: f64, label: &str) {
    let diff = (observed - expected).abs();
    let bound = k * se.max(1e-15);
    assert!(
        diff <= bound,
        "{label}: |{observed} - {expected}| = {diff} exceeds {k}·SE = {bound}"
    );
}

//! Gaussian beliefs and numerically safe joint-Gaussian operations.
//!
//! All covariance outputs are symmetrized and, where a factorization is
//! required, repaired with escalating diagonal jitter before failing. Solves
//! never form an explicit inverse; everything goes through Cholesky factors.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve_mat, dot, solve_lower, sub_vec, Matrix};
use crate::real::{Real, LN_2PI};

/// First jitter magnitude tried by [`repair_psd`].
pub const JITTER_START: f64 = 1e-10;
/// Default jitter cap; with the ×10 schedule this allows 7 attempts.
pub const JITTER_MAX: f64 = 1e-4;

/// Gaussian over a real vector: mean plus full covariance.
#[derive(Clone, Debug)]
pub struct GaussianBelief<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

impl<T: Real> GaussianBelief<T> {
    pub fn new(mean: Vec<T>, cov: Matrix<T>) -> Result<Self> {
        if cov.rows() != mean.len() || cov.cols() != mean.len() {
            return Err(Error::dims("belief covariance", mean.len(), cov.rows()));
        }
        Ok(GaussianBelief { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Point mass at `mean` (zero covariance).
    pub fn point(mean: Vec<T>) -> Self {
        let d = mean.len();
        GaussianBelief {
            mean,
            cov: Matrix::zeros(d, d),
        }
    }

    /// Exact multivariate normal log-density at `point`, via Cholesky.
    pub fn log_density(&self, point: &[T]) -> Result<T> {
        if point.len() != self.dim() {
            return Err(Error::dims("log_density point", self.dim(), point.len()));
        }
        let repaired = repair_psd(&self.cov, JITTER_MAX)?;
        let l = repaired.cholesky().ok_or(Error::NonPsdCovariance)?;
        let diff = sub_vec(point, &self.mean);
        let z = solve_lower(&l, &diff);
        let quad = dot(&z, &z);
        let mut log_det = T::zero();
        for i in 0..l.rows() {
            log_det = log_det + l[(i, i)].ln();
        }
        let half = T::from_f64(-0.5);
        let d = T::from_f64(self.dim() as f64);
        Ok(half * (d * T::from_f64(LN_2PI) + quad) - log_det)
    }
}

/// Blocks of a joint Gaussian over `(a, b)`; the full covariance is
/// `[[aa, ab], [abᵀ, bb]]`.
#[derive(Clone, Debug)]
pub struct JointBlocks<T> {
    pub mean_a: Vec<T>,
    pub mean_b: Vec<T>,
    pub cov_aa: Matrix<T>,
    pub cov_bb: Matrix<T>,
    pub cov_ab: Matrix<T>,
}

impl<T: Real> JointBlocks<T> {
    pub fn validate(&self) -> Result<()> {
        let (da, db) = (self.mean_a.len(), self.mean_b.len());
        if self.cov_aa.rows() != da || self.cov_aa.cols() != da {
            return Err(Error::dims("cov_aa", da, self.cov_aa.rows()));
        }
        if self.cov_bb.rows() != db || self.cov_bb.cols() != db {
            return Err(Error::dims("cov_bb", db, self.cov_bb.rows()));
        }
        if self.cov_ab.rows() != da || self.cov_ab.cols() != db {
            return Err(Error::dims("cov_ab rows", da, self.cov_ab.rows()));
        }
        Ok(())
    }

    /// Assembles the full `(a, b)` covariance.
    pub fn full_cov(&self) -> Matrix<T> {
        let (da, db) = (self.mean_a.len(), self.mean_b.len());
        Matrix::from_fn(da + db, da + db, |i, j| match (i < da, j < da) {
            (true, true) => self.cov_aa[(i, j)],
            (true, false) => self.cov_ab[(i, j - da)],
            (false, true) => self.cov_ab[(j, i - da)],
            (false, false) => self.cov_bb[(i - da, j - da)],
        })
    }
}

/// Symmetrizes and, if needed, adds escalating diagonal jitter (starting at
/// 1e-10, ×10 per attempt, capped at `max_jitter`) until Cholesky succeeds.
pub fn repair_psd<T: Real>(cov: &Matrix<T>, max_jitter: f64) -> Result<Matrix<T>> {
    if !cov.is_square() {
        return Err(Error::dims("repair_psd", cov.rows(), cov.cols()));
    }
    let sym = cov.symmetrized();
    if sym.cholesky().is_some() {
        return Ok(sym);
    }
    let mut jitter = JITTER_START;
    while jitter <= max_jitter * (1.0 + 1e-12) {
        let mut candidate = sym.clone();
        candidate.add_jitter(T::from_f64(jitter));
        if candidate.cholesky().is_some() {
            return Ok(candidate);
        }
        jitter *= 10.0;
    }
    Err(Error::NonPsdCovariance)
}

/// Conditions the joint Gaussian on `b = observed_b`, returning the belief
/// over block `a`. The gain solve goes through a Cholesky factor of the
/// (repaired) `bb` block; the output covariance is symmetrized and repaired.
pub fn condition<T: Real>(joint: &JointBlocks<T>, observed_b: &[T]) -> Result<GaussianBelief<T>> {
    joint.validate()?;
    if observed_b.len() != joint.mean_b.len() {
        return Err(Error::dims("observation", joint.mean_b.len(), observed_b.len()));
    }
    let bb = repair_psd(&joint.cov_bb, JITTER_MAX)?;
    let l = bb.cholesky().ok_or(Error::NonPsdCovariance)?;
    // K = Σ_ab Σ_bb⁻¹, via Σ_bb Kᵀ = Σ_abᵀ
    let gain = cholesky_solve_mat(&l, &joint.cov_ab.transpose()).transpose();
    let innovation = sub_vec(observed_b, &joint.mean_b);
    let shift = gain.matvec(&innovation);
    let mean: Vec<T> = joint
        .mean_a
        .iter()
        .zip(&shift)
        .map(|(&m, &s)| m + s)
        .collect();
    let reduction = gain.matmul(&bb).matmul(&gain.transpose());
    let cov = repair_psd(&joint.cov_aa.sub(&reduction), JITTER_MAX)?;
    GaussianBelief::new(mean, cov)
}

/// KL divergence from a diagonal Gaussian to the standard normal:
/// `½ Σ_i (−log v_i + v_i + m_i² − 1)`.
pub fn kl_to_standard_normal<T: Real>(mean: &[T], diag_var: &[T]) -> Result<T> {
    if mean.len() != diag_var.len() {
        return Err(Error::dims("kl dims", mean.len(), diag_var.len()));
    }
    let mut acc = T::zero();
    for (&m, &v) in mean.iter().zip(diag_var) {
        if v.value() <= 0.0 {
            return Err(Error::NonPositiveVariance);
        }
        acc = acc + v - v.ln() + m * m - T::one();
    }
    Ok(acc * T::from_f64(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_joint(saa: f64, sbb: f64, sab: f64) -> JointBlocks<f64> {
        JointBlocks {
            mean_a: vec![0.0],
            mean_b: vec![0.0],
            cov_aa: Matrix::from_rows(vec![vec![saa]]),
            cov_bb: Matrix::from_rows(vec![vec![sbb]]),
            cov_ab: Matrix::from_rows(vec![vec![sab]]),
        }
    }

    #[test]
    fn bivariate_conditioning_closed_form() {
        // m_a=0, m_b=0, Σ_aa=1, Σ_bb=1, Σ_ab=0.5, observe y=1 → N(0.5, 0.75)
        let post = condition(&scalar_joint(1.0, 1.0, 0.5), &[1.0]).unwrap();
        assert_relative_eq!(post.mean[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(post.cov[(0, 0)], 0.75, epsilon = 1e-10);
    }

    #[test]
    fn zero_cross_covariance_is_identity() {
        let post = condition(&scalar_joint(2.0, 3.0, 0.0), &[17.0]).unwrap();
        assert_relative_eq!(post.mean[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(post.cov[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn uninformative_observation_keeps_prior() {
        let post = condition(&scalar_joint(1.0, 1e6, 0.5), &[123.0]).unwrap();
        assert_relative_eq!(post.mean[0], 0.0, epsilon = 1e-3);
        assert_relative_eq!(post.cov[(0, 0)], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn log_density_reference_values() {
        let b = GaussianBelief::new(vec![0.0], Matrix::from_rows(vec![vec![1.0]])).unwrap();
        assert_relative_eq!(b.log_density(&[0.0]).unwrap(), -0.9189385332046727, epsilon = 1e-7);
        let b2 = GaussianBelief::new(vec![0.0, 0.0], Matrix::identity(2)).unwrap();
        assert_relative_eq!(b2.log_density(&[0.0, 0.0]).unwrap(), -1.8378770664093453, epsilon = 1e-7);
    }

    #[test]
    fn log_density_quadrature_normalization() {
        // N(2, 4): trapezoid quadrature of exp(log_density) integrates to 1
        let b = GaussianBelief::new(vec![2.0], Matrix::from_rows(vec![vec![4.0]])).unwrap();
        let n = 40_000;
        let (lo, hi) = (-18.0, 22.0);
        let h = (hi - lo) / n as f64;
        let mut mass = 0.0;
        for k in 0..=n {
            let x = lo + k as f64 * h;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            mass += w * b.log_density(&[x]).unwrap().exp();
        }
        mass *= h;
        assert_relative_eq!(mass, 1.0, epsilon = 1e-6);
        // density at 4 matches the quadrature-normalized evaluation
        let direct = b.log_density(&[4.0]).unwrap().exp();
        assert_relative_eq!(direct / mass, direct, epsilon = 1e-6);
    }

    #[test]
    fn repair_identity_unchanged() {
        let id = Matrix::<f64>::identity(3);
        let r = repair_psd(&id, JITTER_MAX).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(r[(i, j)], id[(i, j)], epsilon = 0.0);
            }
        }
    }

    #[test]
    fn repair_slightly_asymmetric() {
        let m = Matrix::from_rows(vec![vec![1.0, 1.0000001], vec![1.0000001, 1.0]]);
        let r = repair_psd(&m, JITTER_MAX).unwrap();
        assert!(r.cholesky().is_some());
        // eigenvalue oracle: both eigenvalues nonnegative
        let na = nalgebra::DMatrix::from_row_slice(2, 2, r.data());
        let eig = na.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn repair_rejects_indefinite_with_small_cap() {
        let m = Matrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(repair_psd(&m, 1e-6), Err(Error::NonPsdCovariance)));
    }

    #[test]
    fn kl_reference_values() {
        assert_relative_eq!(
            kl_to_standard_normal(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).unwrap(),
            0.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(kl_to_standard_normal(&[1.0], &[1.0]).unwrap(), 0.5, epsilon = 1e-14);
        // numeric KL integral oracle for N(0,2) vs N(0,1)
        let expected = 0.5 * (-(2.0f64).ln() + 2.0 - 1.0);
        assert_relative_eq!(kl_to_standard_normal(&[0.0], &[2.0]).unwrap(), expected, epsilon = 1e-12);
        let n = 200_000;
        let (lo, hi) = (-30.0, 30.0);
        let h = (hi - lo) / n as f64;
        let mut kl = 0.0;
        for k in 0..=n {
            let x = lo + k as f64 * h;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let p = (-0.5 * x * x / 2.0).exp() / (2.0 * std::f64::consts::PI * 2.0).sqrt();
            let q = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            if p > 0.0 {
                kl += w * p * (p / q).ln();
            }
        }
        kl *= h;
        assert_relative_eq!(kl, expected, epsilon = 1e-6);
    }

    #[test]
    fn kl_rejects_nonpositive_variance() {
        assert!(matches!(
            kl_to_standard_normal(&[0.0], &[0.0]),
            Err(Error::NonPositiveVariance)
        ));
    }
}

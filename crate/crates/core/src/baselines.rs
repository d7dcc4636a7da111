//! Reference approximations: Monte-Carlo uncertainty propagation, an
//! unscented Kalman filter on the augmented state, and MC variants of the
//! training objectives.

use crate::error::{Error, Result};
use crate::gaussian::{repair_psd, GaussianBelief, JITTER_MAX};
use crate::inference::FilterResult;
use crate::layers::Scheme;
use crate::linalg::Matrix;
use crate::model::{AugmentedBelief, ProDssmModel, Trajectory};
use crate::train::{log_hyper_prior, point_param_log_prior, ObjectiveKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

/// Per-particle generator: one base seed, one ChaCha stream per particle, so
/// results do not depend on scheduling or evaluation order.
fn particle_rng(seed: u64, particle: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(particle);
    rng
}

fn sample_gaussian(rng: &mut ChaCha8Rng, mean: &[f64], chol: &Matrix<f64>) -> Vec<f64> {
    let eps: Vec<f64> = (0..mean.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let scaled = chol.matvec(&eps);
    mean.iter().zip(&scaled).map(|(&m, &s)| m + s).collect()
}

/// Draws `(x, w)` from an augmented belief. Uses block sampling when the
/// cross-covariance is structurally zero, otherwise factorizes the full
/// joint.
struct InitialSampler {
    mean: Vec<f64>,
    chol: Matrix<f64>,
    split: usize,
}

impl InitialSampler {
    fn new(belief: &AugmentedBelief<f64>) -> Result<Self> {
        let dx = belief.state_dim();
        if belief.state_weight_cov.is_none() {
            // independent blocks: factor them separately and stack
            let lx = repair_psd(&belief.state_cov, JITTER_MAX)?
                .cholesky()
                .ok_or(Error::NonPsdCovariance)?;
            let lw = repair_psd(&belief.weight_cov.to_dense(), JITTER_MAX)?
                .cholesky()
                .ok_or(Error::NonPsdCovariance)?;
            let dw = belief.weight_dim();
            let mut chol = Matrix::zeros(dx + dw, dx + dw);
            for i in 0..dx {
                for j in 0..dx {
                    chol[(i, j)] = lx[(i, j)];
                }
            }
            for i in 0..dw {
                for j in 0..dw {
                    chol[(dx + i, dx + j)] = lw[(i, j)];
                }
            }
            Ok(InitialSampler {
                mean: belief.mean_z(),
                chol,
                split: dx,
            })
        } else {
            let cov = repair_psd(&belief.cov_z(), JITTER_MAX)?;
            let chol = cov.cholesky().ok_or(Error::NonPsdCovariance)?;
            Ok(InitialSampler {
                mean: belief.mean_z(),
                chol,
                split: dx,
            })
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let z = sample_gaussian(rng, &self.mean, &self.chol);
        (z[..self.split].to_vec(), z[self.split..].to_vec())
    }
}

/// Empirical per-step moments of the latent state with jackknife standard
/// errors.
#[derive(Clone, Debug)]
pub struct McMoments {
    pub mean: Vec<Vec<f64>>,
    pub cov: Vec<Matrix<f64>>,
    pub se_mean: Vec<Vec<f64>>,
    pub se_cov: Vec<Matrix<f64>>,
    /// Raw per-step samples (step-major, then particle), kept for the
    /// statistics the harness derives from paths.
    pub samples: Vec<Vec<Vec<f64>>>,
}

/// `samples`-fold seeded ancestral rollouts, weights handled per scheme.
pub fn mc_moments(
    model: &ProDssmModel<f64>,
    initial: &AugmentedBelief<f64>,
    horizon: usize,
    cfg: &McConfig,
) -> Result<McMoments> {
    if cfg.samples < 2 {
        return Err(Error::DimensionMismatch(
            "at least 2 samples are needed for a covariance".into(),
        ));
    }
    let dx = model.state_dim();
    let sampler = InitialSampler::new(initial)?;
    let layout = model.weight_layout();
    let prior_mean = &model.weights.mean;
    let prior_std: Vec<f64> = model.weights.var().iter().map(|v| v.sqrt()).collect();
    let mut samples: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(cfg.samples); horizon];
    for p in 0..cfg.samples {
        let mut rng = particle_rng(cfg.seed, p as u64);
        let (mut x, mut w) = sampler.draw(&mut rng);
        for (t, step) in samples.iter_mut().enumerate().take(horizon) {
            if model.scheme == Scheme::Local && t > 0 {
                // resample weights from the prior at every step
                w = prior_mean
                    .iter()
                    .zip(&prior_std)
                    .map(|(&m, &sd)| m + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect();
            }
            let (mean, var) = model.transition_point(&x, &w, &layout);
            x = mean
                .iter()
                .zip(&var)
                .map(|(&m, &v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            step.push(x.clone());
        }
    }

    let s = cfg.samples as f64;
    let mut out = McMoments {
        mean: Vec::with_capacity(horizon),
        cov: Vec::with_capacity(horizon),
        se_mean: Vec::with_capacity(horizon),
        se_cov: Vec::with_capacity(horizon),
        samples: Vec::new(),
    };
    for step in &samples {
        let mut mean = vec![0.0f64; dx];
        for x in step {
            for (m, &v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= s;
        }
        let mut m2: Matrix<f64> = Matrix::zeros(dx, dx);
        for x in step {
            for i in 0..dx {
                for j in 0..dx {
                    m2[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        let cov = m2.scale(1.0 / (s - 1.0));
        let se_mean: Vec<f64> = (0..dx).map(|i| (cov[(i, i)] / s).sqrt()).collect();

        // jackknife over leave-one-out covariances, via the exact rank-one
        // downdate of the centered second-moment matrix
        let mut sum: Matrix<f64> = Matrix::zeros(dx, dx);
        let mut sumsq: Matrix<f64> = Matrix::zeros(dx, dx);
        for x in step {
            for i in 0..dx {
                for j in 0..dx {
                    let di = x[i] - mean[i];
                    let dj = x[j] - mean[j];
                    let loo = (m2[(i, j)] - s / (s - 1.0) * di * dj) / (s - 2.0);
                    sum[(i, j)] += loo;
                    sumsq[(i, j)] += loo * loo;
                }
            }
        }
        let se_cov = Matrix::from_fn(dx, dx, |i, j| {
            let mean_loo = sum[(i, j)] / s;
            let var_pseudo = f64::max(sumsq[(i, j)] / s - mean_loo * mean_loo, 0.0);
            ((s - 1.0) * var_pseudo).sqrt()
        });

        out.mean.push(mean);
        out.cov.push(cov);
        out.se_mean.push(se_mean);
        out.se_cov.push(se_cov);
    }
    out.samples = samples;
    Ok(out)
}

/// Unscented transform scaling parameters.
#[derive(Clone, Copy, Debug)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        UkfParams {
            alpha: 1.0,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

/// 2n+1 sigma points with mean and covariance weights.
#[derive(Clone, Debug)]
pub struct SigmaPointSet {
    pub points: Vec<Vec<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

impl SigmaPointSet {
    /// Builds the symmetric sigma-point set for `N(mean, cov)`.
    pub fn build(mean: &[f64], cov: &Matrix<f64>, params: &UkfParams) -> Result<Self> {
        let n = mean.len();
        let nf = n as f64;
        let lambda = params.alpha * params.alpha * (nf + params.kappa) - nf;
        let scale = (nf + lambda).sqrt();
        let repaired = repair_psd(cov, JITTER_MAX)?;
        let l = repaired.cholesky().ok_or(Error::NonPsdCovariance)?;
        let mut points = Vec::with_capacity(2 * n + 1);
        points.push(mean.to_vec());
        for k in 0..n {
            let col: Vec<f64> = (0..n).map(|i| l[(i, k)] * scale).collect();
            points.push(mean.iter().zip(&col).map(|(&m, &c)| m + c).collect());
            points.push(mean.iter().zip(&col).map(|(&m, &c)| m - c).collect());
        }
        let w0_mean = lambda / (nf + lambda);
        let w0_cov = w0_mean + 1.0 - params.alpha * params.alpha + params.beta;
        let wi = 1.0 / (2.0 * (nf + lambda));
        let mut mean_weights = vec![wi; 2 * n + 1];
        let mut cov_weights = vec![wi; 2 * n + 1];
        mean_weights[0] = w0_mean;
        cov_weights[0] = w0_cov;
        Ok(SigmaPointSet {
            points,
            mean_weights,
            cov_weights,
        })
    }

    pub fn weighted_mean(&self, values: &[Vec<f64>]) -> Vec<f64> {
        let d = values[0].len();
        let mut mean = vec![0.0; d];
        for (w, v) in self.mean_weights.iter().zip(values) {
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += w * x;
            }
        }
        mean
    }

    pub fn weighted_cov(
        &self,
        a: &[Vec<f64>],
        mean_a: &[f64],
        b: &[Vec<f64>],
        mean_b: &[f64],
    ) -> Matrix<f64> {
        let (da, db) = (mean_a.len(), mean_b.len());
        let mut cov = Matrix::zeros(da, db);
        for ((w, va), vb) in self.cov_weights.iter().zip(a).zip(b) {
            for i in 0..da {
                for j in 0..db {
                    cov[(i, j)] += w * (va[i] - mean_a[i]) * (vb[j] - mean_b[j]);
                }
            }
        }
        cov
    }
}

/// Unscented Kalman filter on the augmented state `(x, w)`.
///
/// The transition maps each sigma point through the scheme's augmented mean
/// function; the additive noise is the mean-weighted transition variance.
/// Under the local scheme the weight image is the prior mean with the prior
/// variance as noise, which re-expands the weight block every step.
pub fn ukf_filter(
    model: &ProDssmModel<f64>,
    observations: &Trajectory,
    initial: &AugmentedBelief<f64>,
    params: &UkfParams,
) -> Result<FilterResult<f64>> {
    let dx = model.state_dim();
    let dy = model.obs_dim();
    let layout = model.weight_layout();
    let r = model.r_diag();
    let prior_var = model.weights.var();

    let mut mean = initial.mean_z();
    let mut cov = initial.cov_z();
    let mut posteriors = Vec::with_capacity(observations.len());
    let mut emissions = Vec::with_capacity(observations.len());
    let mut log_likelihood = 0.0;

    for obs in &observations.observations {
        if obs.len() != dy {
            return Err(Error::dims("observation", dy, obs.len()));
        }
        // predict
        let sigma = SigmaPointSet::build(&mean, &cov, params)?;
        let mut images = Vec::with_capacity(sigma.points.len());
        let mut noise = vec![0.0; mean.len()];
        for (point, w_mean) in sigma.points.iter().zip(&sigma.mean_weights) {
            let (x, w) = point.split_at(dx);
            let (f_mean, f_var) = model.transition_point(x, w, &layout);
            let mut image = f_mean;
            match model.scheme {
                Scheme::Local => image.extend_from_slice(&model.weights.mean),
                Scheme::Global => image.extend_from_slice(w),
            }
            for i in 0..dx {
                noise[i] += w_mean * f_var[i];
            }
            images.push(image);
        }
        if model.scheme == Scheme::Local {
            for (i, v) in prior_var.iter().enumerate() {
                noise[dx + i] = *v;
            }
        }
        let mut pred_mean = sigma.weighted_mean(&images);
        let mut pred_cov = sigma.weighted_cov(&images, &pred_mean, &images, &pred_mean);
        for (i, v) in noise.iter().enumerate() {
            pred_cov[(i, i)] += v;
        }
        pred_cov = repair_psd(&pred_cov, JITTER_MAX)?;

        // update with freshly generated sigma points
        let sigma_u = SigmaPointSet::build(&pred_mean, &pred_cov, params)?;
        let ys: Vec<Vec<f64>> = sigma_u
            .points
            .iter()
            .map(|p| model.emission_point(&p[..dx]))
            .collect();
        let y_mean = sigma_u.weighted_mean(&ys);
        let mut y_cov = sigma_u.weighted_cov(&ys, &y_mean, &ys, &y_mean);
        for i in 0..dy {
            y_cov[(i, i)] += r[i];
        }
        let y_cov = repair_psd(&y_cov, JITTER_MAX)?;
        let zy_cov = sigma_u.weighted_cov(&sigma_u.points, &pred_mean, &ys, &y_mean);

        let predicted_y = GaussianBelief::new(y_mean.clone(), y_cov.clone())?;
        log_likelihood += predicted_y.log_density(obs)?;

        let ly = y_cov.cholesky().ok_or(Error::NonPsdCovariance)?;
        // K = C S⁻¹ via S Kᵀ = Cᵀ
        let gain = crate::linalg::cholesky_solve_mat(&ly, &zy_cov.transpose()).transpose();
        let innovation: Vec<f64> = obs.iter().zip(&y_mean).map(|(o, m)| o - m).collect();
        let shift = gain.matvec(&innovation);
        for (m, s) in pred_mean.iter_mut().zip(&shift) {
            *m += s;
        }
        let reduction = gain.matmul(&y_cov).matmul(&gain.transpose());
        mean = pred_mean;
        cov = repair_psd(&pred_cov.sub(&reduction), JITTER_MAX)?;

        posteriors.push(AugmentedBelief::from_dense(mean.clone(), cov.clone(), dx));
        emissions.push(predicted_y);
    }
    Ok(FilterResult {
        posteriors,
        one_step_emissions: emissions,
        log_likelihood,
    })
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn diag_log_density(y: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&yi, &mi), &vi) in y.iter().zip(mean).zip(var) {
        let d = yi - mi;
        acc += -0.5 * (crate::real::LN_2PI + vi.ln() + d * d / vi);
    }
    acc
}

/// Monte-Carlo counterpart of the deterministic objectives: the inner moment
/// propagation is replaced by seeded particle rollouts and a predictive
/// mixture density. Priors are identical to the deterministic objective.
pub fn mc_objective(
    model: &ProDssmModel<f64>,
    objective: &ObjectiveKind,
    cfg: &McConfig,
) -> Result<f64> {
    let layout = model.weight_layout();
    let r = model.r_diag();
    let draw_weights = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        model
            .weights
            .mean
            .iter()
            .zip(model.weights.var())
            .map(|(&m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut ll = 0.0;
    match objective {
        ObjectiveKind::Regression {
            inputs,
            targets,
            depth,
        } => {
            for (case, (input, target)) in inputs.iter().zip(targets).enumerate() {
                let mut case_lls = Vec::with_capacity(cfg.samples);
                for p in 0..cfg.samples {
                    let mut rng = particle_rng(cfg.seed.wrapping_add(case as u64), p as u64);
                    let mut x = input.clone();
                    let mut w = draw_weights(&mut rng);
                    for step in 0..*depth {
                        if step > 0 && model.scheme == Scheme::Local {
                            w = draw_weights(&mut rng);
                        }
                        let (mean, var) = model.transition_point(&x, &w, &layout);
                        x = mean
                            .iter()
                            .zip(&var)
                            .map(|(&m, &v)| {
                                m + v.sqrt() * rng.sample::<f64, _>(StandardNormal)
                            })
                            .collect();
                    }
                    let y_mean = model.emission_point(&x);
                    case_lls.push(diag_log_density(target, &y_mean, &r));
                }
                ll += log_sum_exp(&case_lls) - (cfg.samples as f64).ln();
            }
        }
        ObjectiveKind::Ssm { data } => {
            // open-loop predictive mixture per step; collapses onto the
            // deterministic objective when the model is noise-free
            let init_var: Vec<f64> = model.init_log_var.iter().map(|v| v.exp()).collect();
            for (case, traj) in data.iter().enumerate() {
                let horizon = traj.len();
                let mut per_step: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.samples); horizon];
                for p in 0..cfg.samples {
                    let mut rng = particle_rng(cfg.seed.wrapping_add(case as u64), p as u64);
                    let mut x: Vec<f64> = model
                        .init_mean
                        .iter()
                        .zip(&init_var)
                        .map(|(&m, &v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let mut w = draw_weights(&mut rng);
                    for (t, obs) in traj.observations.iter().enumerate() {
                        if t > 0 && model.scheme == Scheme::Local {
                            w = draw_weights(&mut rng);
                        }
                        let (mean, var) = model.transition_point(&x, &w, &layout);
                        x = mean
                            .iter()
                            .zip(&var)
                            .map(|(&m, &v)| {
                                m + v.sqrt() * rng.sample::<f64, _>(StandardNormal)
                            })
                            .collect();
                        let y_mean = model.emission_point(&x);
                        per_step[t].push(diag_log_density(obs, &y_mean, &r));
                    }
                }
                for lls in &per_step {
                    ll += log_sum_exp(lls) - (cfg.samples as f64).ln();
                }
            }
        }
    }
    let value = ll + log_hyper_prior(&model.weights) + point_param_log_prior(&model.g_params);
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    Ok(value)
}

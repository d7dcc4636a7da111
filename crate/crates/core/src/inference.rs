//! Deterministic multi-step prediction and Gaussian filtering on the
//! augmented state.
//!
//! The filter alternates the assumed-density prediction with a standard
//! Gaussian conditioning update. Under the local scheme the gain's weight
//! rows are structurally zero, so only the state block is conditioned; under
//! the global scheme the full augmented covariance is updated and the weight
//! block turns dense.

use crate::error::{Error, Result};
use crate::gaussian::{condition, GaussianBelief, JointBlocks};
use crate::layers::Scheme;
use crate::model::{augmented_step, emission_moments, AugmentedBelief, ProDssmModel, Trajectory};
use crate::real::Real;

/// Per-step filtering output: posterior beliefs, one-step-ahead emission
/// beliefs, and the accumulated predictive log-likelihood.
#[derive(Clone, Debug)]
pub struct FilterResult<T> {
    pub posteriors: Vec<AugmentedBelief<T>>,
    pub one_step_emissions: Vec<GaussianBelief<T>>,
    pub log_likelihood: T,
}

/// Horizon-indexed open-loop beliefs over the augmented state and emissions.
#[derive(Clone, Debug)]
pub struct PredictiveResult<T> {
    pub state_beliefs: Vec<AugmentedBelief<T>>,
    pub emission_beliefs: Vec<GaussianBelief<T>>,
}

/// Deterministic Gaussian filter on the augmented state.
pub fn det_filter<T: Real>(
    model: &ProDssmModel<T>,
    observations: &Trajectory,
    initial: &AugmentedBelief<T>,
) -> Result<FilterResult<T>> {
    let dy = model.obs_dim();
    let mut belief = initial.clone();
    let mut posteriors = Vec::with_capacity(observations.len());
    let mut emissions = Vec::with_capacity(observations.len());
    let mut log_likelihood = T::zero();

    for obs in &observations.observations {
        if obs.len() != dy {
            return Err(Error::dims("observation", dy, obs.len()));
        }
        // predict; under Local this also re-expands the weight block
        belief = augmented_step(&belief, model)?;
        let em = emission_moments(&belief, model)?;
        let y: Vec<T> = obs.iter().map(|&v| T::from_f64(v)).collect();
        let predicted_y = GaussianBelief::new(em.y_mean.clone(), em.y_cov.clone())?;
        log_likelihood = log_likelihood + predicted_y.log_density(&y)?;

        match model.scheme {
            Scheme::Local => {
                // weight rows of the gain are structurally zero: verify, then
                // condition the state block only
                assert!(
                    em.wy_cov.is_none() && belief.state_weight_cov.is_none(),
                    "local filter must not correlate weights with emissions"
                );
                let joint = JointBlocks {
                    mean_a: belief.state_mean.clone(),
                    mean_b: em.y_mean,
                    cov_aa: belief.state_cov.clone(),
                    cov_bb: em.y_cov,
                    cov_ab: em.xy_cov,
                };
                let posterior = condition(&joint, &y)?;
                belief.state_mean = posterior.mean;
                belief.state_cov = posterior.cov;
            }
            Scheme::Global => {
                let joint = em.into_joint_blocks(&belief);
                let posterior = condition(&joint, &y)?;
                belief =
                    AugmentedBelief::from_dense(posterior.mean, posterior.cov, model.state_dim());
            }
        }
        posteriors.push(belief.clone());
        emissions.push(predicted_y);
    }

    Ok(FilterResult {
        posteriors,
        one_step_emissions: emissions,
        log_likelihood,
    })
}

/// Open-loop assumed-density rollout with emission beliefs at every step.
pub fn det_predict<T: Real>(
    model: &ProDssmModel<T>,
    initial: &AugmentedBelief<T>,
    horizon: usize,
) -> Result<PredictiveResult<T>> {
    if horizon == 0 {
        return Err(Error::DimensionMismatch("horizon must be at least 1".into()));
    }
    let mut belief = initial.clone();
    let mut state_beliefs = Vec::with_capacity(horizon);
    let mut emission_beliefs = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        belief = augmented_step(&belief, model)?;
        let em = emission_moments(&belief, model)?;
        emission_beliefs.push(GaussianBelief::new(em.y_mean, em.y_cov)?);
        state_beliefs.push(belief.clone());
    }
    Ok(PredictiveResult {
        state_beliefs,
        emission_beliefs,
    })
}

/// Filters the history, then predicts `horizon` steps ahead from the final
/// posterior.
pub fn predictive_distribution<T: Real>(
    model: &ProDssmModel<T>,
    history: &Trajectory,
    horizon: usize,
) -> Result<PredictiveResult<T>> {
    if history.is_empty() {
        return Err(Error::DimensionMismatch("history is empty".into()));
    }
    let filtered = det_filter(model, history, &model.prior_belief())?;
    let last = filtered.posteriors.last().expect("non-empty history");
    det_predict(model, last, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::WeightCov;
    use crate::linalg::Matrix;
    use crate::model::{NetworkSpec, VarianceModel, WeightDistribution};
    use approx::assert_relative_eq;

    fn scalar_linear_model(r: f64, scheme: Scheme) -> ProDssmModel<f64> {
        ProDssmModel {
            f_spec: NetworkSpec::mlp(1, &[], 1),
            variance_model: VarianceModel::ConstantDiag(vec![(0.04f64).ln()]),
            g_spec: NetworkSpec::mlp(1, &[], 1),
            g_params: vec![1.0, 0.0],
            log_r: vec![r.ln()],
            init_mean: vec![0.0],
            init_log_var: vec![0.0f64],
            weights: WeightDistribution {
                mean: vec![0.8, 0.2],
                log_var: vec![f64::NEG_INFINITY; 2],
            },
            scheme,
        }
    }

    #[test]
    fn uninformative_observations_follow_open_loop() {
        let model = scalar_linear_model(1e6, Scheme::Local);
        let traj = Trajectory {
            observations: vec![vec![5.0], vec![-3.0], vec![7.0]],
            latents: None,
        };
        let filtered = det_filter(&model, &traj, &model.prior_belief()).unwrap();
        let open_loop = det_predict(&model, &model.prior_belief(), 3).unwrap();
        for t in 0..3 {
            let a = &filtered.posteriors[t];
            let b = &open_loop.state_beliefs[t];
            assert_relative_eq!(a.state_mean[0], b.state_mean[0], max_relative = 1e-3);
            assert_relative_eq!(a.state_cov[(0, 0)], b.state_cov[(0, 0)], max_relative = 1e-3);
        }
    }

    #[test]
    fn zero_gain_update_is_identity() {
        // conditioning with zero cross-covariance must leave the belief alone
        let model = scalar_linear_model(0.5, Scheme::Local);
        let mut belief = model.prior_belief();
        belief.state_cov = Matrix::from_rows(vec![vec![0.0]]);
        // manually build the joint with zero state covariance => zero cross-cov
        let em = emission_moments(&belief, &model).unwrap();
        assert_relative_eq!(em.xy_cov[(0, 0)], 0.0);
    }

    #[test]
    fn horizon_one_predict_is_step_plus_emission() {
        let model = scalar_linear_model(0.5, Scheme::Local);
        let belief = model.prior_belief();
        let pred = det_predict(&model, &belief, 1).unwrap();
        let step = augmented_step(&belief, &model).unwrap();
        let em = emission_moments(&step, &model).unwrap();
        assert_relative_eq!(pred.emission_beliefs[0].mean[0], em.y_mean[0]);
        assert_relative_eq!(pred.state_beliefs[0].state_mean[0], step.state_mean[0]);
    }

    #[test]
    fn local_filter_keeps_weight_block_at_prior() {
        let mut model = scalar_linear_model(0.1, Scheme::Local);
        model.weights.log_var = vec![(0.05f64).ln(); 2];
        let traj = model.simulate(10, 11);
        let filtered = det_filter(&model, &traj, &model.prior_belief()).unwrap();
        for p in &filtered.posteriors {
            assert!(p.state_weight_cov.is_none());
            assert_eq!(p.weight_mean, model.weights.mean);
            match &p.weight_cov {
                WeightCov::Diagonal(v) => {
                    for (a, b) in v.iter().zip(model.weights.var()) {
                        assert_relative_eq!(*a, b);
                    }
                }
                WeightCov::Dense(_) => panic!("local weight covariance must stay diagonal"),
            }
        }
    }

    #[test]
    fn global_filter_densifies_weight_covariance() {
        let mut model = scalar_linear_model(0.1, Scheme::Global);
        model.weights.log_var = vec![(0.05f64).ln(); 2];
        let traj = model.simulate(5, 13);
        let filtered = det_filter(&model, &traj, &model.prior_belief()).unwrap();
        let last = filtered.posteriors.last().unwrap();
        match &last.weight_cov {
            WeightCov::Dense(m) => {
                let off = m[(0, 1)].abs();
                assert!(off > 1e-12, "expected off-diagonal weight correlation, got {off}");
            }
            WeightCov::Diagonal(_) => panic!("global update must densify the weight block"),
        }
    }

    #[test]
    fn predictive_distribution_chains_filter_and_predict() {
        let model = scalar_linear_model(0.3, Scheme::Local);
        let traj = model.simulate(6, 5);
        let pred = predictive_distribution(&model, &traj, 4).unwrap();
        assert_eq!(pred.emission_beliefs.len(), 4);
        let filtered = det_filter(&model, &traj, &model.prior_belief()).unwrap();
        let manual = det_predict(&model, filtered.posteriors.last().unwrap(), 4).unwrap();
        assert_relative_eq!(
            pred.emission_beliefs[0].mean[0],
            manual.emission_beliefs[0].mean[0],
            epsilon = 1e-12
        );
    }
}

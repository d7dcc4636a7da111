//! Type-II MAP training: deterministic objectives for dynamical-system
//! likelihood (via filtering) and deep-stochastic-layer regression, the
//! hyper-prior, gradients (adjoint or finite differences), and an Adam loop.

use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::inference::{det_filter, det_predict};
use crate::layers::WeightCov;
use crate::linalg::Matrix;
use crate::model::{AugmentedBelief, ProDssmModel, Trajectory, VarianceModel, WeightDistribution};
use crate::real::Real;
use crate::tape;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::ops::Range;
use std::time::Instant;

/// Named slices of the flattened trainable parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamBlock {
    WeightMean,
    WeightLogVar,
    GParams,
    LogR,
    VarianceConst,
    InitMean,
    InitLogVar,
}

/// Bijective flattened view over a model's trainable fields.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub weight_mean: Range<usize>,
    pub weight_log_var: Range<usize>,
    pub g_params: Range<usize>,
    pub log_r: Range<usize>,
    pub variance_const: Option<Range<usize>>,
    pub init_mean: Range<usize>,
    pub init_log_var: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn of(model: &ProDssmModel<f64>) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let dw = model.weight_dim();
        let weight_mean = take(dw);
        let weight_log_var = take(dw);
        let g_params = take(model.g_params.len());
        let log_r = take(model.log_r.len());
        let variance_const = match &model.variance_model {
            VarianceModel::ConstantDiag(lv) => Some(take(lv.len())),
            VarianceModel::LogVarNet(_) => None,
        };
        let init_mean = take(model.init_mean.len());
        let init_log_var = take(model.init_log_var.len());
        ParamLayout {
            weight_mean,
            weight_log_var,
            g_params,
            log_r,
            variance_const,
            init_mean,
            init_log_var,
            total: at,
        }
    }

    pub fn block_range(&self, block: ParamBlock) -> Option<Range<usize>> {
        match block {
            ParamBlock::WeightMean => Some(self.weight_mean.clone()),
            ParamBlock::WeightLogVar => Some(self.weight_log_var.clone()),
            ParamBlock::GParams => Some(self.g_params.clone()),
            ParamBlock::LogR => Some(self.log_r.clone()),
            ParamBlock::VarianceConst => self.variance_const.clone(),
            ParamBlock::InitMean => Some(self.init_mean.clone()),
            ParamBlock::InitLogVar => Some(self.init_log_var.clone()),
        }
    }
}

/// Flattens the trainable fields in layout order.
pub fn pack(model: &ProDssmModel<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend_from_slice(&model.weights.mean);
    out.extend_from_slice(&model.weights.log_var);
    out.extend_from_slice(&model.g_params);
    out.extend_from_slice(&model.log_r);
    if let VarianceModel::ConstantDiag(lv) = &model.variance_model {
        out.extend_from_slice(lv);
    }
    out.extend_from_slice(&model.init_mean);
    out.extend_from_slice(&model.init_log_var);
    out
}

/// Rebuilds a model over scalar type `T` from the template's structure and a
/// flattened parameter vector.
pub fn unpack<T: Real>(template: &ProDssmModel<f64>, params: &[T]) -> ProDssmModel<T> {
    let layout = ParamLayout::of(template);
    assert_eq!(params.len(), layout.total, "parameter vector length");
    let slice = |r: Range<usize>| params[r].to_vec();
    ProDssmModel {
        f_spec: template.f_spec.clone(),
        variance_model: match &template.variance_model {
            VarianceModel::ConstantDiag(_) => VarianceModel::ConstantDiag(slice(
                layout.variance_const.clone().expect("constant variance block"),
            )),
            VarianceModel::LogVarNet(spec) => VarianceModel::LogVarNet(spec.clone()),
        },
        g_spec: template.g_spec.clone(),
        g_params: slice(layout.g_params.clone()),
        log_r: slice(layout.log_r.clone()),
        init_mean: slice(layout.init_mean.clone()),
        init_log_var: slice(layout.init_log_var.clone()),
        weights: WeightDistribution {
            mean: slice(layout.weight_mean.clone()),
            log_var: slice(layout.weight_log_var.clone()),
        },
        scheme: template.scheme,
    }
}

/// Log hyper-prior over the weight distribution, constants dropped:
/// `½ Σ_i (log Σ_ii − m_i² − Σ_ii)`.
pub fn log_hyper_prior<T: Real>(weights: &WeightDistribution<T>) -> T {
    let mut acc = T::zero();
    for (&m, &lv) in weights.mean.iter().zip(&weights.log_var) {
        acc = acc + lv - m * m - lv.exp();
    }
    acc * T::from_f64(0.5)
}

/// Standard-normal log-prior on a point-parameter vector, constants dropped.
pub fn point_param_log_prior<T: Real>(params: &[T]) -> T {
    let mut acc = T::zero();
    for &p in params {
        acc = acc - p * p;
    }
    acc * T::from_f64(0.5)
}

/// Which likelihood the objective evaluates.
#[derive(Clone, Debug)]
pub enum ObjectiveKind {
    /// Sum of per-trajectory prediction-error log-likelihoods from the
    /// deterministic filter.
    Ssm { data: Vec<Trajectory> },
    /// Deep-stochastic-layer regression: each input is the initial latent
    /// state, rolled forward `depth` transitions with no filtering.
    Regression {
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        depth: usize,
    },
}

impl ObjectiveKind {
    pub fn num_cases(&self) -> usize {
        match self {
            ObjectiveKind::Ssm { data } => data.len(),
            ObjectiveKind::Regression { inputs, .. } => inputs.len(),
        }
    }
}

fn regression_case_log_density<T: Real>(
    model: &ProDssmModel<T>,
    input: &[f64],
    target: &[f64],
    depth: usize,
) -> Result<T> {
    let dx = model.state_dim();
    if input.len() != dx {
        return Err(Error::dims("regression input", dx, input.len()));
    }
    let belief = AugmentedBelief {
        state_mean: input.iter().map(|&v| T::from_f64(v)).collect(),
        state_cov: Matrix::zeros(dx, dx),
        weight_mean: model.weights.mean.clone(),
        weight_cov: WeightCov::Diagonal(model.weights.var()),
        state_weight_cov: None,
    };
    let pred = det_predict(model, &belief, depth)?;
    let terminal: &GaussianBelief<T> = pred.emission_beliefs.last().expect("depth >= 1");
    let y: Vec<T> = target.iter().map(|&v| T::from_f64(v)).collect();
    terminal.log_density(&y)
}

/// Likelihood term over a subset of cases (all cases when `subset` is `None`).
fn likelihood_term<T: Real>(
    model: &ProDssmModel<T>,
    objective: &ObjectiveKind,
    subset: Option<&[usize]>,
) -> Result<T> {
    let mut acc = T::zero();
    match objective {
        ObjectiveKind::Ssm { data } => {
            let all: Vec<usize> = (0..data.len()).collect();
            let idx = subset.unwrap_or(&all);
            for &i in idx {
                let result = det_filter(model, &data[i], &model.prior_belief())?;
                acc = acc + result.log_likelihood;
            }
        }
        ObjectiveKind::Regression {
            inputs,
            targets,
            depth,
        } => {
            let all: Vec<usize> = (0..inputs.len()).collect();
            let idx = subset.unwrap_or(&all);
            for &i in idx {
                acc = acc + regression_case_log_density(model, &inputs[i], &targets[i], *depth)?;
            }
        }
    }
    Ok(acc)
}

fn prior_term<T: Real>(model: &ProDssmModel<T>) -> T {
    log_hyper_prior(&model.weights) + point_param_log_prior(&model.g_params)
}

/// Full deterministic objective: likelihood + hyper-prior + point-parameter
/// prior. No sampling anywhere.
pub fn objective_value<T: Real>(
    template: &ProDssmModel<f64>,
    params: &[T],
    objective: &ObjectiveKind,
) -> Result<T> {
    objective_value_subset(template, params, objective, None, 1.0)
}

fn objective_value_subset<T: Real>(
    template: &ProDssmModel<f64>,
    params: &[T],
    objective: &ObjectiveKind,
    subset: Option<&[usize]>,
    likelihood_scale: f64,
) -> Result<T> {
    let model = unpack(template, params);
    let ll = likelihood_term(&model, objective, subset)?;
    let value = ll * T::from_f64(likelihood_scale) + prior_term(&model);
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    Ok(value)
}

/// Objective over dynamical-system data (deterministic filter likelihood
/// plus priors).
pub fn ssm_objective(model: &ProDssmModel<f64>, data: &[Trajectory]) -> Result<f64> {
    let objective = ObjectiveKind::Ssm { data: data.to_vec() };
    objective_value(model, &pack(model), &objective)
}

/// Objective for the regression mode at the given rollout depth.
pub fn regression_objective(
    model: &ProDssmModel<f64>,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    depth: usize,
) -> Result<f64> {
    let objective = ObjectiveKind::Regression {
        inputs: inputs.to_vec(),
        targets: targets.to_vec(),
        depth,
    };
    objective_value(model, &pack(model), &objective)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    /// Reverse-mode differentiation through the whole deterministic pipeline.
    Adjoint,
    /// Central differences with step `1e-4 · (1 + |θ_i|)`.
    FiniteDifference,
}

/// Objective value and gradient at `params`.
pub fn gradient(
    template: &ProDssmModel<f64>,
    params: &[f64],
    objective: &ObjectiveKind,
    mode: GradientMode,
) -> Result<(f64, Vec<f64>)> {
    gradient_subset(template, params, objective, mode, None, 1.0)
}

fn gradient_subset(
    template: &ProDssmModel<f64>,
    params: &[f64],
    objective: &ObjectiveKind,
    mode: GradientMode,
    subset: Option<&[usize]>,
    likelihood_scale: f64,
) -> Result<(f64, Vec<f64>)> {
    match mode {
        GradientMode::Adjoint => tape::record(params, |vars| {
            objective_value_subset(template, vars, objective, subset, likelihood_scale)
        }),
        GradientMode::FiniteDifference => {
            let value =
                objective_value_subset(template, params, objective, subset, likelihood_scale)?;
            let mut grad = vec![0.0; params.len()];
            let mut probe = params.to_vec();
            for i in 0..params.len() {
                let h = 1e-4 * (1.0 + params[i].abs());
                probe[i] = params[i] + h;
                let plus =
                    objective_value_subset(template, &probe, objective, subset, likelihood_scale)?;
                probe[i] = params[i] - h;
                let minus =
                    objective_value_subset(template, &probe, objective, subset, likelihood_scale)?;
                probe[i] = params[i];
                grad[i] = (plus - minus) / (2.0 * h);
            }
            Ok((value, grad))
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// `None` runs full-batch.
    pub batch_size: Option<usize>,
    pub gradient_mode: GradientMode,
    pub seed: u64,
    /// Stop when the gradient norm falls below this.
    pub tolerance: f64,
    /// Stop after this many iterations without objective improvement.
    pub plateau: Option<usize>,
    /// Parameter blocks excluded from updates.
    pub frozen: Vec<ParamBlock>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            iterations: 1000,
            batch_size: None,
            gradient_mode: GradientMode::Adjoint,
            seed: 0,
            tolerance: 1e-6,
            plateau: None,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::DimensionMismatch("learning rate must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::DimensionMismatch("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: ProDssmModel<f64>,
    pub best_objective: f64,
    pub log: Vec<IterationRecord>,
    /// Set when optimization stopped because the objective went non-finite;
    /// the returned model is the last good one.
    pub aborted_nonfinite: bool,
}

/// Adam ascent on the training objective. Deterministic given the seed.
pub fn fit(
    template: &ProDssmModel<f64>,
    objective: &ObjectiveKind,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    let layout = ParamLayout::of(template);
    let frozen_mask: Vec<bool> = {
        let mut mask = vec![false; layout.total];
        for block in &config.frozen {
            if let Some(range) = layout.block_range(*block) {
                for m in &mut mask[range] {
                    *m = true;
                }
            }
        }
        mask
    };

    let mut params = pack(template);
    let mut best_params = params.clone();
    let mut best_objective = f64::NEG_INFINITY;
    let mut since_improvement = 0usize;
    let mut aborted = false;

    let n_cases = objective.num_cases();
    let batch = config.batch_size.filter(|&b| b > 0 && b < n_cases);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n_cases).collect();
    let mut cursor = n_cases; // forces a shuffle on first use

    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m1 = vec![0.0; params.len()];
    let mut m2 = vec![0.0; params.len()];
    let mut log = Vec::new();
    let started = Instant::now();

    for iter in 0..config.iterations {
        let (subset, scale): (Option<Vec<usize>>, f64) = match batch {
            None => (None, 1.0),
            Some(b) => {
                if cursor + b > n_cases {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let chosen = order[cursor..cursor + b].to_vec();
                cursor += b;
                (Some(chosen), n_cases as f64 / b as f64)
            }
        };
        let step = gradient_subset(
            template,
            &params,
            objective,
            config.gradient_mode,
            subset.as_deref(),
            scale,
        );
        let (value, mut grad) = match step {
            Ok(v) => v,
            Err(Error::NonFiniteObjective) => {
                aborted = true;
                break;
            }
            Err(e) => return Err(e),
        };
        for (g, &frozen) in grad.iter_mut().zip(&frozen_mask) {
            if frozen {
                *g = 0.0;
            }
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        log.push(IterationRecord {
            iteration: iter,
            objective: value,
            grad_norm,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });

        if value > best_objective {
            best_objective = value;
            best_params = params.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if grad_norm < config.tolerance {
            break;
        }
        if let Some(window) = config.plateau {
            if since_improvement >= window {
                break;
            }
        }

        let t = (iter + 1) as f64;
        let correction1 = 1.0 - beta1.powf(t);
        let correction2 = 1.0 - beta2.powf(t);
        for i in 0..params.len() {
            m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
            m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
            let mh = m1[i] / correction1;
            let vh = m2[i] / correction2;
            params[i] += config.learning_rate * mh / (vh.sqrt() + eps);
        }
    }

    let model = unpack(template, &best_params);
    Ok(FitResult {
        model,
        best_objective,
        log,
        aborted_nonfinite: aborted,
    })
}

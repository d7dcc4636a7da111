//! Synthetic model builders used by the benchmark harness and the test
//! suites: random ReLU-MLP models with controlled moment scales and random
//! stable linear-Gaussian systems.

use crate::layers::Scheme;
use crate::model::{NetworkSpec, ProDssmModel, VarianceModel, WeightDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Knobs for [`random_model`]. Ranges are sampled log-uniformly.
#[derive(Clone, Debug)]
pub struct RandomModelConfig {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub f_hidden: Vec<usize>,
    pub g_hidden: Vec<usize>,
    pub scheme: Scheme,
    pub residual: bool,
    /// When set, the transition variance is a log-variance network with one
    /// hidden layer of this width; otherwise a trainable constant diagonal.
    pub variance_net_width: Option<usize>,
    pub weight_var_range: (f64, f64),
    pub init_var_range: (f64, f64),
    pub trans_var_range: (f64, f64),
    pub emission_var_range: (f64, f64),
}

impl Default for RandomModelConfig {
    fn default() -> Self {
        RandomModelConfig {
            state_dim: 1,
            obs_dim: 1,
            f_hidden: vec![8],
            g_hidden: vec![],
            scheme: Scheme::Local,
            residual: false,
            variance_net_width: None,
            weight_var_range: (1e-4, 1e-2),
            init_var_range: (1e-3, 3e-2),
            trans_var_range: (1e-4, 1e-2),
            emission_var_range: (1e-2, 1e-1),
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

/// Fan-in-scaled parameter draw for one network.
fn random_net_params(rng: &mut ChaCha8Rng, spec: &NetworkSpec, bias_std: f64) -> Vec<f64> {
    let mut params = Vec::with_capacity(spec.num_weights());
    for (rows, cols) in spec.affine_shapes() {
        let std = (1.0 / cols as f64).sqrt();
        for _ in 0..rows * cols {
            params.push(std * rng.sample::<f64, _>(StandardNormal));
        }
        for _ in 0..rows {
            params.push(bias_std * rng.sample::<f64, _>(StandardNormal));
        }
    }
    params
}

/// Draws a random ProDSSM with moderate, trained-model-like scales.
pub fn random_model(cfg: &RandomModelConfig, seed: u64) -> ProDssmModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f_spec = {
        let mut s = NetworkSpec::mlp(cfg.state_dim, &cfg.f_hidden, cfg.state_dim);
        s.residual = cfg.residual;
        s
    };
    let g_spec = NetworkSpec::mlp(cfg.state_dim, &cfg.g_hidden, cfg.obs_dim);
    let variance_model = match cfg.variance_net_width {
        None => VarianceModel::ConstantDiag(
            (0..cfg.state_dim)
                .map(|_| log_uniform(&mut rng, cfg.trans_var_range).ln())
                .collect(),
        ),
        Some(width) => VarianceModel::LogVarNet(NetworkSpec::mlp(
            cfg.state_dim,
            &[width],
            cfg.state_dim,
        )),
    };
    let mut f_params = random_net_params(&mut rng, &f_spec, 0.3);
    if let VarianceModel::LogVarNet(spec) = &variance_model {
        // bias the variance head toward small, safe variances
        let mut l_params = random_net_params(&mut rng, spec, 0.1);
        let shapes = spec.affine_shapes();
        let last = shapes.last().copied().expect("variance net has layers");
        let tail = l_params.len();
        let target = log_uniform(&mut rng, cfg.trans_var_range).ln();
        for b in l_params[tail - last.0..].iter_mut() {
            *b += target;
        }
        f_params.extend(l_params);
    }
    let d_w = f_params.len();
    let weights = WeightDistribution {
        mean: f_params,
        log_var: (0..d_w)
            .map(|_| log_uniform(&mut rng, cfg.weight_var_range).ln())
            .collect(),
    };
    let g_params = random_net_params(&mut rng, &g_spec, 0.3);
    ProDssmModel {
        f_spec,
        variance_model,
        g_spec,
        g_params,
        log_r: (0..cfg.obs_dim)
            .map(|_| log_uniform(&mut rng, cfg.emission_var_range).ln())
            .collect(),
        init_mean: (0..cfg.state_dim)
            .map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        init_log_var: (0..cfg.state_dim)
            .map(|_| log_uniform(&mut rng, cfg.init_var_range).ln())
            .collect(),
        weights,
        scheme: cfg.scheme,
    }
}

/// Random stable linear-Gaussian SSM with deterministic weights: a single
/// affine transition scaled to spectral radius ≤ 0.8 (via the row-sum bound)
/// and a single affine emission.
pub fn linear_gaussian_model(state_dim: usize, obs_dim: usize, seed: u64) -> ProDssmModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f_spec = NetworkSpec::mlp(state_dim, &[], state_dim);
    let g_spec = NetworkSpec::mlp(state_dim, &[], obs_dim);
    let mut a: Vec<f64> = (0..state_dim * state_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let max_row_sum = (0..state_dim)
        .map(|i| {
            a[i * state_dim..(i + 1) * state_dim]
                .iter()
                .map(|v| v.abs())
                .sum::<f64>()
        })
        .fold(f64::MIN, f64::max);
    for v in &mut a {
        *v *= 0.8 / max_row_sum.max(1e-12);
    }
    let mut f_params = a;
    f_params.extend((0..state_dim).map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal)));
    let d_w = f_params.len();
    let mut g_params: Vec<f64> = (0..obs_dim * state_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    g_params.extend((0..obs_dim).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)));
    ProDssmModel {
        f_spec,
        variance_model: VarianceModel::ConstantDiag(
            (0..state_dim)
                .map(|_| rng.gen_range(0.01f64..0.1).ln())
                .collect(),
        ),
        g_spec,
        g_params,
        log_r: (0..obs_dim)
            .map(|_| rng.gen_range(0.05f64..0.5).ln())
            .collect(),
        init_mean: (0..state_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
        init_log_var: (0..state_dim)
            .map(|_| rng.gen_range(0.1f64..1.0).ln())
            .collect(),
        weights: WeightDistribution {
            mean: f_params,
            log_var: vec![f64::NEG_INFINITY; d_w],
        },
        scheme: Scheme::Local,
    }
}

//! The kink benchmark system: the nonlinear transition function, ReLU-MLP
//! ground-truth models built from it, and the grid evaluation protocol.

use prodssm_core::layers::Scheme;
use prodssm_core::model::{NetworkSpec, ProDssmModel, VarianceModel, WeightDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Transition mean of the kink system:
/// `0.8 + (x + 0.2)·(1 − 5/(1 + e^{−2x}))`.
pub fn kink_mean(x: f64) -> f64 {
    0.8 + (x + 0.2) * (1.0 - 5.0 / (1.0 + (-2.0 * x).exp()))
}

/// Benchmark configuration: transition noise 0.05², emission noise from
/// {0.008, 0.08, 0.8}, 10 trajectories of length 120.
#[derive(Clone, Copy, Debug)]
pub struct KinkSystem {
    pub transition_var: f64,
    pub emission_var: f64,
    pub trajectory_len: usize,
    pub trajectory_count: usize,
}

impl KinkSystem {
    pub fn with_noise(emission_var: f64) -> Self {
        KinkSystem {
            transition_var: 0.05 * 0.05,
            emission_var,
            trajectory_len: 120,
            trajectory_count: 10,
        }
    }
}

/// Range the ground-truth nets are built over; the kink attractor plus noise
/// stays well inside it.
pub const KINK_RANGE: (f64, f64) = (-3.2, 1.6);

/// Hidden-activation scale of the constructed nets. Smaller values shift
/// output sensitivity from the output layer to the input layer.
const ACTIVATION_SCALE: f64 = 0.3;

/// Builds a width-`width` ReLU network that reproduces `f` as its exact
/// piecewise-linear interpolant on `[lo, hi]`, constant outside.
///
/// Unit 0 emulates the linear term via `relu(s·(x − lo))`; the last unit
/// cancels the terminal slope so the extension beyond `hi` is flat.
pub fn piecewise_linear_params(
    f: impl Fn(f64) -> f64,
    width: usize,
    (lo, hi): (f64, f64),
) -> (NetworkSpec, Vec<f64>) {
    assert!(width >= 4, "need at least 4 units for the construction");
    let spec = NetworkSpec::mlp(1, &[width], 1);
    let knots = width; // one unit per grid point, first and last are clamps
    let h = (hi - lo) / (knots - 1) as f64;
    let t: Vec<f64> = (0..knots).map(|k| lo + k as f64 * h).collect();
    let slopes: Vec<f64> = (0..knots - 1)
        .map(|k| (f(t[k + 1]) - f(t[k])) / h)
        .collect();

    let s = ACTIVATION_SCALE;
    let mut a1 = Vec::with_capacity(width);
    let mut b1 = Vec::with_capacity(width);
    let mut a2 = Vec::with_capacity(width);
    // linear emulation from the left edge
    a1.push(s);
    b1.push(-s * t[0]);
    a2.push(slopes[0] / s);
    // slope changes at interior knots
    for k in 1..knots - 1 {
        a1.push(s);
        b1.push(-s * t[k]);
        a2.push((slopes[k] - slopes[k - 1]) / s);
    }
    // flatten beyond the right edge
    a1.push(s);
    b1.push(-s * t[knots - 1]);
    a2.push(-slopes[knots - 2] / s);
    let b2 = f(t[0]);

    let mut params = Vec::with_capacity(spec.num_weights());
    params.extend_from_slice(&a1);
    params.extend_from_slice(&b1);
    params.extend_from_slice(&a2);
    params.push(b2);
    assert_eq!(params.len(), spec.num_weights());
    (spec, params)
}

/// Ground-truth kink ProDSSM: the piecewise-linear kink net as transition
/// mean, identity emission, constant transition variance, and a prescribed
/// isotropic weight variance (zero for the deterministic-weight rows).
pub fn kink_model(
    system: &KinkSystem,
    width: usize,
    weight_var: f64,
    scheme: Scheme,
) -> ProDssmModel<f64> {
    let (f_spec, f_params) = piecewise_linear_params(kink_mean, width, KINK_RANGE);
    let d_w = f_params.len();
    let log_wv = if weight_var > 0.0 {
        weight_var.ln()
    } else {
        f64::NEG_INFINITY
    };
    ProDssmModel {
        f_spec,
        variance_model: VarianceModel::ConstantDiag(vec![system.transition_var.ln()]),
        g_spec: NetworkSpec::mlp(1, &[], 1),
        g_params: vec![1.0, 0.0],
        log_r: vec![system.emission_var.ln()],
        init_mean: vec![0.0],
        init_log_var: vec![(0.25f64).ln()],
        weights: WeightDistribution {
            mean: f_params,
            log_var: vec![log_wv; d_w],
        },
        scheme,
    }
}

/// Untrained model template for learning the kink dynamics: width-50 mean
/// net, trainable constant transition variance, identity emission held
/// fixed, near-deterministic weight initialization.
pub fn kink_training_template(width: usize, emission_var: f64, seed: u64) -> ProDssmModel<f64> {
    let f_spec = NetworkSpec::mlp(1, &[width], 1);
    let d_w = f_spec.num_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = Vec::with_capacity(d_w);
    // fan-in-scaled first layer, then biases spread across the state range
    for _ in 0..width {
        mean.push(1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal));
    }
    for k in 0..width {
        let t = KINK_RANGE.0 + (KINK_RANGE.1 - KINK_RANGE.0) * (k as f64 / (width - 1) as f64);
        mean.push(-t + 0.05 * rng.sample::<f64, _>(StandardNormal));
    }
    for _ in 0..width {
        mean.push(0.1 * rng.sample::<f64, _>(StandardNormal) / (width as f64).sqrt());
    }
    mean.push(0.0);
    ProDssmModel {
        f_spec,
        variance_model: VarianceModel::ConstantDiag(vec![(0.01f64).ln()]),
        g_spec: NetworkSpec::mlp(1, &[], 1),
        g_params: vec![1.0, 0.0],
        log_r: vec![emission_var.ln()],
        init_mean: vec![0.0],
        init_log_var: vec![(0.25f64).ln()],
        weights: WeightDistribution {
            mean,
            log_var: vec![(1e-4f64).ln(); d_w],
        },
        scheme: Scheme::Local,
    }
}

/// Grid metrics of a learned transition model against the true kink mean:
/// `mean` and `var` are estimated per grid point from `samples` weight
/// draws, following the 70-point evaluation protocol.
#[derive(Clone, Debug)]
pub struct GridEvaluation {
    pub points: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub truth: Vec<f64>,
    pub nll: f64,
    pub mse: f64,
}

pub fn evaluate_on_grid(
    model: &ProDssmModel<f64>,
    (lo, hi): (f64, f64),
    grid_size: usize,
    samples: usize,
    seed: u64,
) -> GridEvaluation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = model.weight_layout();
    let w_std: Vec<f64> = model.weights.var().iter().map(|v| v.sqrt()).collect();
    let points: Vec<f64> = (0..grid_size)
        .map(|k| lo + (hi - lo) * k as f64 / (grid_size - 1) as f64)
        .collect();
    let mut mean = Vec::with_capacity(grid_size);
    let mut var = Vec::with_capacity(grid_size);
    let mut truth = Vec::with_capacity(grid_size);
    let mut nll = 0.0;
    let mut mse = 0.0;
    for &x in &points {
        let mut values = Vec::with_capacity(samples);
        for _ in 0..samples {
            let w: Vec<f64> = model
                .weights
                .mean
                .iter()
                .zip(&w_std)
                .map(|(&m, &sd)| m + sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            values.push(model.transition_point(&[x], &w, &layout).0[0]);
        }
        let m = values.iter().sum::<f64>() / samples as f64;
        let v = values.iter().map(|f| (f - m) * (f - m)).sum::<f64>() / (samples as f64 - 1.0);
        let target = kink_mean(x);
        let d = target - m;
        nll += 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + d * d / v);
        mse += d * d;
        mean.push(m);
        var.push(v);
        truth.push(target);
    }
    GridEvaluation {
        points,
        mean,
        var,
        truth,
        nll: nll / grid_size as f64,
        mse: mse / grid_size as f64,
    }
}

//! The ProDSSM generative model and its one-step augmented moment map.
//!
//! A model bundles a transition-mean network `f`, a transition-variance head
//! (constant diagonal or a log-variance network sharing the weight vector
//! with `f`), an emission network `g` with deterministic point parameters,
//! emission noise, an initial state belief, and a Gaussian weight
//! distribution under either the local or global scheme.

use crate::error::{Error, Result};
use crate::gaussian::{repair_psd, GaussianBelief, JointBlocks, JITTER_MAX};
use crate::layers::{
    propagate_layers, LayerBelief, LayerOp, Scheme, WeightCov, WeightLayout,
};
use crate::linalg::{add_vec, Matrix};
use crate::real::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// One entry of a network's layer list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Affine { out_dim: usize },
    Relu,
}

/// Architecture of one feed-forward ReLU network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerKind>,
    /// When set the network computes `x + net(x)`; requires equal input and
    /// output dimensions.
    pub residual: bool,
}

impl NetworkSpec {
    /// Plain MLP: affine layers interleaved with ReLU activations.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerKind::Affine { out_dim: h });
            layers.push(LayerKind::Relu);
        }
        layers.push(LayerKind::Affine { out_dim: output_dim });
        NetworkSpec {
            input_dim,
            layers,
            residual: false,
        }
    }

    pub fn with_residual(mut self) -> Self {
        self.residual = true;
        self
    }

    pub fn output_dim(&self) -> usize {
        let mut d = self.input_dim;
        for l in &self.layers {
            if let LayerKind::Affine { out_dim } = l {
                d = *out_dim;
            }
        }
        d
    }

    /// `(out, in)` shape of every affine layer in network order.
    pub fn affine_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut d = self.input_dim;
        for l in &self.layers {
            if let LayerKind::Affine { out_dim } = l {
                shapes.push((*out_dim, d));
                d = *out_dim;
            }
        }
        shapes
    }

    pub fn num_weights(&self) -> usize {
        self.affine_shapes()
            .iter()
            .map(|(r, c)| r * c + r)
            .sum()
    }

    /// Layer ops with affine slots starting at `slot_offset`.
    pub fn ops(&self, slot_offset: usize) -> Vec<LayerOp> {
        let mut ops = Vec::with_capacity(self.layers.len());
        let mut slot = slot_offset;
        for l in &self.layers {
            match l {
                LayerKind::Affine { .. } => {
                    ops.push(LayerOp::Affine(slot));
                    slot += 1;
                }
                LayerKind::Relu => ops.push(LayerOp::Relu),
            }
        }
        ops
    }

    pub fn validate(&self) -> Result<()> {
        if self.residual && self.output_dim() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "residual network must preserve dimension ({} -> {})",
                self.input_dim,
                self.output_dim()
            )));
        }
        Ok(())
    }
}

/// Per-weight Gaussian with diagonal covariance, parameterized by
/// log-variances so positivity is structural.
#[derive(Clone, Debug)]
pub struct WeightDistribution<T> {
    pub mean: Vec<T>,
    pub log_var: Vec<T>,
}

impl<T: Real> WeightDistribution<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn var(&self) -> Vec<T> {
        self.log_var.iter().map(|&lv| lv.exp()).collect()
    }
}

/// Transition-variance head.
#[derive(Clone, Debug)]
pub enum VarianceModel<T> {
    /// State-independent diagonal, stored as log-variances.
    ConstantDiag(Vec<T>),
    /// Network predicting elementwise log-variance; its weights share the
    /// flattened weight vector with the mean network.
    LogVarNet(NetworkSpec),
}

/// Joint Gaussian belief over the augmented state `(x, w)`.
#[derive(Clone, Debug)]
pub struct AugmentedBelief<T> {
    pub state_mean: Vec<T>,
    pub state_cov: Matrix<T>,
    pub weight_mean: Vec<T>,
    pub weight_cov: WeightCov<T>,
    /// `Cov[x, w]`; `None` is the structural zero of the local scheme.
    pub state_weight_cov: Option<Matrix<T>>,
}

impl<T: Real> AugmentedBelief<T> {
    pub fn state_dim(&self) -> usize {
        self.state_mean.len()
    }

    pub fn weight_dim(&self) -> usize {
        self.weight_mean.len()
    }

    pub fn augmented_dim(&self) -> usize {
        self.state_dim() + self.weight_dim()
    }

    pub fn mean_z(&self) -> Vec<T> {
        let mut m = self.state_mean.clone();
        m.extend_from_slice(&self.weight_mean);
        m
    }

    /// Dense covariance over `(x, w)`.
    pub fn cov_z(&self) -> Matrix<T> {
        let dx = self.state_dim();
        let dw = self.weight_dim();
        let wc = self.weight_cov.to_dense();
        Matrix::from_fn(dx + dw, dx + dw, |i, j| match (i < dx, j < dx) {
            (true, true) => self.state_cov[(i, j)],
            (true, false) => match &self.state_weight_cov {
                Some(c) => c[(i, j - dx)],
                None => T::zero(),
            },
            (false, true) => match &self.state_weight_cov {
                Some(c) => c[(j, i - dx)],
                None => T::zero(),
            },
            (false, false) => wc[(i - dx, j - dx)],
        })
    }

    /// Rebuilds block structure from a dense augmented mean/covariance.
    pub fn from_dense(mean: Vec<T>, cov: Matrix<T>, state_dim: usize) -> Self {
        let dw = mean.len() - state_dim;
        let state_mean = mean[..state_dim].to_vec();
        let weight_mean = mean[state_dim..].to_vec();
        let state_cov = Matrix::from_fn(state_dim, state_dim, |i, j| cov[(i, j)]);
        let swc = Matrix::from_fn(state_dim, dw, |i, j| cov[(i, state_dim + j)]);
        let wc = Matrix::from_fn(dw, dw, |i, j| cov[(state_dim + i, state_dim + j)]);
        AugmentedBelief {
            state_mean,
            state_cov,
            weight_mean,
            weight_cov: WeightCov::Dense(wc),
            state_weight_cov: Some(swc),
        }
    }

    fn layer_belief(&self, track_input_cross: bool) -> LayerBelief<T> {
        LayerBelief {
            state_mean: self.state_mean.clone(),
            state_cov: self.state_cov.clone(),
            weight_mean: self.weight_mean.clone(),
            weight_cov: self.weight_cov.clone(),
            state_weight_cov: self.state_weight_cov.clone(),
            input_cross_cov: if track_input_cross {
                Some(self.state_cov.clone())
            } else {
                None
            },
            weight_input_cross: if track_input_cross {
                self.state_weight_cov.as_ref().map(|c| c.transpose())
            } else {
                None
            },
        }
    }
}

/// Full ProDSSM: networks, noise, initial belief, weight distribution, scheme.
#[derive(Clone, Debug)]
pub struct ProDssmModel<T> {
    pub f_spec: NetworkSpec,
    pub variance_model: VarianceModel<T>,
    pub g_spec: NetworkSpec,
    pub g_params: Vec<T>,
    pub log_r: Vec<T>,
    pub init_mean: Vec<T>,
    pub init_log_var: Vec<T>,
    pub weights: WeightDistribution<T>,
    pub scheme: Scheme,
}

impl<T: Real> ProDssmModel<T> {
    pub fn state_dim(&self) -> usize {
        self.f_spec.input_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.g_spec.output_dim()
    }

    pub fn weight_dim(&self) -> usize {
        self.weights.dim()
    }

    pub fn r_diag(&self) -> Vec<T> {
        self.log_r.iter().map(|&lr| lr.exp()).collect()
    }

    /// Layout of the flattened weight vector: the mean network's affine
    /// layers followed by the variance network's, when present.
    pub fn weight_layout(&self) -> WeightLayout {
        let mut shapes = self.f_spec.affine_shapes();
        if let VarianceModel::LogVarNet(spec) = &self.variance_model {
            shapes.extend(spec.affine_shapes());
        }
        WeightLayout::new(&shapes)
    }

    fn f_ops(&self) -> Vec<LayerOp> {
        self.f_spec.ops(0)
    }

    fn l_ops(&self) -> Option<Vec<LayerOp>> {
        match &self.variance_model {
            VarianceModel::ConstantDiag(_) => None,
            VarianceModel::LogVarNet(spec) => {
                Some(spec.ops(self.f_spec.affine_shapes().len()))
            }
        }
    }

    fn g_layout(&self) -> WeightLayout {
        WeightLayout::new(&self.g_spec.affine_shapes())
    }

    pub fn validate(&self) -> Result<()> {
        self.f_spec.validate()?;
        self.g_spec.validate()?;
        let dx = self.state_dim();
        if self.f_spec.output_dim() != dx {
            return Err(Error::dims("f output", dx, self.f_spec.output_dim()));
        }
        match &self.variance_model {
            VarianceModel::ConstantDiag(lv) => {
                if lv.len() != dx {
                    return Err(Error::dims("constant variance", dx, lv.len()));
                }
            }
            VarianceModel::LogVarNet(spec) => {
                spec.validate()?;
                if spec.input_dim != dx || spec.output_dim() != dx {
                    return Err(Error::dims("variance net dims", dx, spec.output_dim()));
                }
            }
        }
        if self.g_spec.input_dim != dx {
            return Err(Error::dims("g input", dx, self.g_spec.input_dim));
        }
        if self.log_r.len() != self.obs_dim() {
            return Err(Error::dims("log_r", self.obs_dim(), self.log_r.len()));
        }
        if self.init_mean.len() != dx || self.init_log_var.len() != dx {
            return Err(Error::dims("initial belief", dx, self.init_mean.len()));
        }
        if self.g_params.len() != self.g_spec.num_weights() {
            return Err(Error::dims(
                "g parameters",
                self.g_spec.num_weights(),
                self.g_params.len(),
            ));
        }
        let layout = self.weight_layout();
        layout.validate()?;
        if self.weights.dim() != layout.total() {
            return Err(Error::dims("weights", layout.total(), self.weights.dim()));
        }
        Ok(())
    }

    pub fn initial_state_belief(&self) -> GaussianBelief<T> {
        let var: Vec<T> = self.init_log_var.iter().map(|&lv| lv.exp()).collect();
        GaussianBelief {
            mean: self.init_mean.clone(),
            cov: Matrix::diag(&var),
        }
    }

    /// Initial joint belief: state prior, weight prior, zero cross terms.
    pub fn prior_belief(&self) -> AugmentedBelief<T> {
        AugmentedBelief {
            state_mean: self.init_mean.clone(),
            state_cov: Matrix::diag(
                &self
                    .init_log_var
                    .iter()
                    .map(|&lv| lv.exp())
                    .collect::<Vec<T>>(),
            ),
            weight_mean: self.weights.mean.clone(),
            weight_cov: WeightCov::Diagonal(self.weights.var()),
            state_weight_cov: None,
        }
    }
}

/// Expected transition variance `E[L(z)]` over the state block.
fn expected_transition_variance<T: Real>(
    model: &ProDssmModel<T>,
    input: &LayerBelief<T>,
    layout: &WeightLayout,
) -> Result<Vec<T>> {
    match &model.variance_model {
        VarianceModel::ConstantDiag(lv) => Ok(lv.iter().map(|&v| v.exp()).collect()),
        VarianceModel::LogVarNet(_) => {
            let ops = model.l_ops().expect("log-variance net present");
            let mut head_input = input.clone();
            head_input.input_cross_cov = None;
            let out = propagate_layers(head_input, &ops, layout, model.scheme, false)?;
            // log-normal mean correction: E[exp(u)] = exp(μ + s/2)
            let half = T::from_f64(0.5);
            Ok((0..out.belief.state_dim())
                .map(|i| (out.belief.state_mean[i] + half * out.belief.state_cov[(i, i)]).exp())
                .collect())
        }
    }
}

/// One-step moment map on the augmented state: propagates `(x, w)` through
/// the transition networks and applies the scheme's weight-block rule.
pub fn augmented_step<T: Real>(
    belief: &AugmentedBelief<T>,
    model: &ProDssmModel<T>,
) -> Result<AugmentedBelief<T>> {
    let dx = model.state_dim();
    if belief.state_dim() != dx {
        return Err(Error::dims("belief state", dx, belief.state_dim()));
    }
    if belief.weight_dim() != model.weight_dim() {
        return Err(Error::dims("belief weights", model.weight_dim(), belief.weight_dim()));
    }
    let layout = model.weight_layout();
    let residual = model.f_spec.residual;
    let input = belief.layer_belief(residual);
    let noise = expected_transition_variance(model, &input, &layout)?;
    let f_out = propagate_layers(input, &model.f_ops(), &layout, model.scheme, false)?.belief;

    let (mean, mut cov, swc) = if residual {
        let cross = f_out
            .input_cross_cov
            .as_ref()
            .expect("residual pass tracks the input cross-covariance");
        let mean = add_vec(&belief.state_mean, &f_out.state_mean);
        let cov = belief
            .state_cov
            .add(&f_out.state_cov)
            .add(cross)
            .add(&cross.transpose());
        let swc = match (&belief.state_weight_cov, &f_out.state_weight_cov) {
            (Some(a), Some(b)) => Some(a.add(b)),
            (None, Some(b)) => Some(b.clone()),
            (Some(a), None) => Some(a.clone()),
            (None, None) => None,
        };
        (mean, cov, swc)
    } else {
        (f_out.state_mean, f_out.state_cov, f_out.state_weight_cov)
    };

    for i in 0..dx {
        cov[(i, i)] = cov[(i, i)] + noise[i];
    }
    let cov = repair_psd(&cov, JITTER_MAX)?;

    Ok(match model.scheme {
        Scheme::Local => AugmentedBelief {
            state_mean: mean,
            state_cov: cov,
            weight_mean: model.weights.mean.clone(),
            weight_cov: WeightCov::Diagonal(model.weights.var()),
            state_weight_cov: None,
        },
        Scheme::Global => AugmentedBelief {
            state_mean: mean,
            state_cov: cov,
            weight_mean: belief.weight_mean.clone(),
            weight_cov: belief.weight_cov.clone(),
            state_weight_cov: swc,
        },
    })
}

/// Emission moments and cross-covariances against the augmented state.
///
/// The y-block comes from a moment pass through `g` (deterministic
/// parameters); the cross block applies the composed expected Jacobian to
/// `[Σ^x, Σ^xw]`.
#[derive(Clone, Debug)]
pub struct EmissionJoint<T> {
    pub y_mean: Vec<T>,
    /// Includes the emission noise `diag(r)`.
    pub y_cov: Matrix<T>,
    /// `Cov[x, y]`, state rows × observation columns.
    pub xy_cov: Matrix<T>,
    /// `Cov[w, y]`; `None` under the local scheme where it is structurally
    /// zero.
    pub wy_cov: Option<Matrix<T>>,
}

impl<T: Real> EmissionJoint<T> {
    /// Dense joint blocks over `(z, y)`.
    pub fn into_joint_blocks(self, belief: &AugmentedBelief<T>) -> JointBlocks<T> {
        let dx = belief.state_dim();
        let dw = belief.weight_dim();
        let dy = self.y_mean.len();
        let cov_ab = Matrix::from_fn(dx + dw, dy, |i, j| {
            if i < dx {
                self.xy_cov[(i, j)]
            } else {
                match &self.wy_cov {
                    Some(c) => c[(i - dx, j)],
                    None => T::zero(),
                }
            }
        });
        JointBlocks {
            mean_a: belief.mean_z(),
            mean_b: self.y_mean,
            cov_aa: belief.cov_z(),
            cov_bb: self.y_cov,
            cov_ab,
        }
    }
}

pub fn emission_moments<T: Real>(
    belief: &AugmentedBelief<T>,
    model: &ProDssmModel<T>,
) -> Result<EmissionJoint<T>> {
    let dx = model.state_dim();
    if belief.state_dim() != dx {
        return Err(Error::dims("belief state", dx, belief.state_dim()));
    }
    let g_layout = model.g_layout();
    let g_dim = model.g_spec.num_weights();
    let g_input = LayerBelief {
        state_mean: belief.state_mean.clone(),
        state_cov: belief.state_cov.clone(),
        weight_mean: model.g_params.clone(),
        weight_cov: WeightCov::Diagonal(vec![T::zero(); g_dim]),
        state_weight_cov: None,
        input_cross_cov: if model.g_spec.residual {
            Some(belief.state_cov.clone())
        } else {
            None
        },
        weight_input_cross: None,
    };
    let out = propagate_layers(
        g_input,
        &model.g_spec.ops(0),
        &g_layout,
        Scheme::Local,
        true,
    )?;
    let mut jacobian = out.jacobian.expect("jacobian requested");
    let (mut y_mean, mut y_cov) = (out.belief.state_mean, out.belief.state_cov);
    if model.g_spec.residual {
        let cross = out
            .belief
            .input_cross_cov
            .as_ref()
            .expect("residual pass tracks the input cross-covariance");
        y_mean = add_vec(&belief.state_mean, &y_mean);
        y_cov = belief
            .state_cov
            .add(&y_cov)
            .add(cross)
            .add(&cross.transpose());
        jacobian = jacobian.add(&Matrix::identity(dx));
    }
    let r = model.r_diag();
    for i in 0..y_cov.rows() {
        y_cov[(i, i)] = y_cov[(i, i)] + r[i];
    }
    let y_cov = y_cov.symmetrized();
    let xy_cov = belief.state_cov.matmul(&jacobian.transpose());
    let wy_cov = belief
        .state_weight_cov
        .as_ref()
        .map(|swc| swc.transpose().matmul(&jacobian.transpose()));
    Ok(EmissionJoint {
        y_mean,
        y_cov,
        xy_cov,
        wy_cov,
    })
}

/// Deterministic forward pass through a layer stack with concrete weights.
pub fn forward_point(
    input: &[f64],
    ops: &[LayerOp],
    layout: &WeightLayout,
    weights: &[f64],
    residual: bool,
) -> Vec<f64> {
    let mut x = input.to_vec();
    for op in ops {
        match op {
            LayerOp::Affine(idx) => {
                let slot = *layout.slot(*idx).expect("slot in range");
                let mut out = Vec::with_capacity(slot.rows);
                for i in 0..slot.rows {
                    let mut acc = weights[slot.b_index(i)];
                    for (m, &xm) in x.iter().enumerate() {
                        acc += weights[slot.a_index(i, m)] * xm;
                    }
                    out.push(acc);
                }
                x = out;
            }
            LayerOp::Relu => {
                for v in &mut x {
                    *v = v.max(0.0);
                }
            }
        }
    }
    if residual {
        add_vec(input, &x)
    } else {
        x
    }
}

/// Time-indexed observations, plus the true latents when the trajectory came
/// from simulation. Entry `t` holds `(x_{t+1}, y_{t+1})` counted from the
/// initial state.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub latents: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

fn sample_vec(rng: &mut ChaCha8Rng, mean: &[f64], var: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(var)
        .map(|(&m, &v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

impl ProDssmModel<f64> {
    fn sample_weights(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        sample_vec(rng, &self.weights.mean, &self.weights.var())
    }

    /// Point-evaluated transition mean and variance at concrete weights.
    pub fn transition_point(&self, x: &[f64], w: &[f64], layout: &WeightLayout) -> (Vec<f64>, Vec<f64>) {
        let mean = forward_point(x, &self.f_ops(), layout, w, self.f_spec.residual);
        let var = match &self.variance_model {
            VarianceModel::ConstantDiag(lv) => lv.iter().map(|v| v.exp()).collect(),
            VarianceModel::LogVarNet(_) => {
                let ops = self.l_ops().expect("log-variance net present");
                forward_point(x, &ops, layout, w, false)
                    .into_iter()
                    .map(f64::exp)
                    .collect()
            }
        };
        (mean, var)
    }

    /// Point-evaluated emission mean.
    pub fn emission_point(&self, x: &[f64]) -> Vec<f64> {
        forward_point(
            x,
            &self.g_spec.ops(0),
            &self.g_layout(),
            &self.g_params,
            self.g_spec.residual,
        )
    }

    /// Ancestral sampling for `steps` transitions. Weights are redrawn every
    /// step under the local scheme and drawn once under the global scheme.
    pub fn simulate(&self, steps: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = self.weight_layout();
        let init_var: Vec<f64> = self.init_log_var.iter().map(|v| v.exp()).collect();
        let mut x = sample_vec(&mut rng, &self.init_mean, &init_var);
        let global_w = match self.scheme {
            Scheme::Global => Some(self.sample_weights(&mut rng)),
            Scheme::Local => None,
        };
        let r = self.r_diag();
        let mut latents = Vec::with_capacity(steps);
        let mut observations = Vec::with_capacity(steps);
        for _ in 0..steps {
            let w = match &global_w {
                Some(w) => w.clone(),
                None => self.sample_weights(&mut rng),
            };
            let (mean, var) = self.transition_point(&x, &w, &layout);
            x = sample_vec(&mut rng, &mean, &var);
            let y = sample_vec(&mut rng, &self.emission_point(&x), &r);
            latents.push(x.clone());
            observations.push(y);
        }
        Trajectory {
            observations,
            latents: Some(latents),
        }
    }
}

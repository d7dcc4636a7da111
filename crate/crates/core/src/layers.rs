//! Closed-form output moments of single network layers under Gaussian input
//! beliefs.
//!
//! Two weight regimes are supported. Under `Local`, weights are independent
//! of the state and of each other, and the affine pass reduces to the cheap
//! mean-matrix products. Under `Global`, states and weights are jointly
//! Gaussian and the affine pass evaluates the exact product moments of
//! correlated normal variables, assembling the required 4×4 sub-covariances
//! on the fly instead of materializing the joint.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::real::Real;

/// Weight-propagation scheme: resample every step vs. one draw per trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Local,
    Global,
}

/// Covariance over the flattened weight vector. Starts diagonal; under the
/// global scheme a Kalman update densifies it.
#[derive(Clone, Debug)]
pub enum WeightCov<T> {
    Diagonal(Vec<T>),
    Dense(Matrix<T>),
}

impl<T: Real> WeightCov<T> {
    pub fn dim(&self) -> usize {
        match self {
            WeightCov::Diagonal(v) => v.len(),
            WeightCov::Dense(m) => m.rows(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        match self {
            WeightCov::Diagonal(v) => {
                if i == j {
                    v[i]
                } else {
                    T::zero()
                }
            }
            WeightCov::Dense(m) => m[(i, j)],
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        match self {
            WeightCov::Diagonal(v) => v.clone(),
            WeightCov::Dense(m) => m.diagonal(),
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        match self {
            WeightCov::Diagonal(v) => Matrix::diag(v),
            WeightCov::Dense(m) => m.clone(),
        }
    }
}

/// Joint Gaussian belief over a layer's state block and the full flattened
/// weight vector, plus the cross-covariance against the network input that
/// residual connections need.
#[derive(Clone, Debug)]
pub struct LayerBelief<T> {
    pub state_mean: Vec<T>,
    pub state_cov: Matrix<T>,
    pub weight_mean: Vec<T>,
    pub weight_cov: WeightCov<T>,
    /// `Cov[x^l, w]`, state rows × weight columns. `None` encodes the
    /// structural zero of the local scheme.
    pub state_weight_cov: Option<Matrix<T>>,
    /// `Cov[x^l, x^0]`, carried only when a residual connection needs it.
    pub input_cross_cov: Option<Matrix<T>>,
    /// `Cov[w, x^0]`, fixed along a pass; lets affine layers update the
    /// input cross-covariance exactly when weights correlate with the input.
    pub weight_input_cross: Option<Matrix<T>>,
}

impl<T: Real> LayerBelief<T> {
    pub fn state_dim(&self) -> usize {
        self.state_mean.len()
    }

    pub fn weight_dim(&self) -> usize {
        self.weight_mean.len()
    }

    /// Full covariance over `(state, weights)`, for invariant checks.
    pub fn assemble_joint_cov(&self) -> Matrix<T> {
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
}

/// Placement of one affine layer's parameters inside the flattened weight
/// vector: the matrix rows first (row-major), then the bias.
#[derive(Clone, Copy, Debug)]
pub struct AffineSlot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl AffineSlot {
    #[inline]
    pub fn a_index(&self, i: usize, m: usize) -> usize {
        self.offset + i * self.cols + m
    }

    #[inline]
    pub fn b_index(&self, i: usize) -> usize {
        self.offset + self.rows * self.cols + i
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Maps a sequence of affine layer shapes `(out, in)` onto disjoint slots of
/// the flattened weight vector.
#[derive(Clone, Debug)]
pub struct WeightLayout {
    slots: Vec<AffineSlot>,
    total: usize,
}

impl WeightLayout {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        let mut slots = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for &(rows, cols) in shapes {
            let slot = AffineSlot { offset, rows, cols };
            offset += slot.len();
            slots.push(slot);
        }
        WeightLayout {
            slots,
            total: offset,
        }
    }

    pub fn slot(&self, index: usize) -> Result<&AffineSlot> {
        self.slots
            .get(index)
            .ok_or_else(|| Error::LayoutOutOfBounds(format!("affine slot {index}")))
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Offsets must tile `[0, total)` with no gaps or overlaps.
    pub fn validate(&self) -> Result<()> {
        let mut expected = 0;
        for (k, s) in self.slots.iter().enumerate() {
            if s.offset != expected {
                return Err(Error::LayoutOutOfBounds(format!(
                    "slot {k} starts at {} instead of {expected}",
                    s.offset
                )));
            }
            expected += s.len();
        }
        if expected != self.total {
            return Err(Error::LayoutOutOfBounds(format!(
                "slots end at {expected}, total is {}",
                self.total
            )));
        }
        Ok(())
    }
}

/// `E[a·x] = Cov[a, x] + E[a]E[x]` for jointly Gaussian `a, x`.
#[inline]
pub fn product_mean<T: Real>(m_a: T, m_x: T, cov_ax: T) -> T {
    cov_ax + m_a * m_x
}

/// `Cov[a·x, a'·x']` for jointly Gaussian `(a, x, a', x')` with the given
/// mean 4-vector and 4×4 covariance, via Isserlis' theorem.
pub fn product_cov<T: Real>(mean: &[T; 4], cov: &Matrix<T>) -> T {
    assert_eq!((cov.rows(), cov.cols()), (4, 4));
    product_cov_parts(
        cov[(0, 2)],
        cov[(1, 3)],
        cov[(0, 3)],
        cov[(1, 2)],
        mean[0],
        mean[1],
        mean[2],
        mean[3],
    )
}

/// Same as [`product_cov`] with the four relevant covariance entries passed
/// directly: `caa = Cov[a,a']`, `cxx = Cov[x,x']`, `cax = Cov[a,x']`,
/// `cxa = Cov[x,a']`.
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn product_cov_parts<T: Real>(caa: T, cxx: T, cax: T, cxa: T, ma: T, mx: T, ma2: T, mx2: T) -> T {
    caa * cxx + caa * mx * mx2 + cxx * ma * ma2 + cax * cxa + cax * mx * ma2 + cxa * ma * mx2
}

/// `Cov[a·x, w] = Cov[a, w]·E[x] + Cov[x, w]·E[a]`.
#[inline]
pub fn product_cross_cov<T: Real>(m_a: T, m_x: T, cov_aw: T, cov_xw: T) -> T {
    cov_aw * m_x + cov_xw * m_a
}

fn swc_entry<T: Real>(swc: &Option<Matrix<T>>, state: usize, weight: usize) -> T {
    match swc {
        Some(c) => c[(state, weight)],
        None => T::zero(),
    }
}

/// Moments of `A x + b` where `(A, b) ⊂ w` live in the given layout slot.
///
/// Weight moments pass through unchanged; the input cross-covariance is
/// pushed through the expected transformation matrix.
pub fn affine_forward<T: Real>(
    input: &LayerBelief<T>,
    layout: &WeightLayout,
    layer_index: usize,
    scheme: Scheme,
) -> Result<LayerBelief<T>> {
    let slot = *layout.slot(layer_index)?;
    let d_in = input.state_dim();
    let d_out = slot.rows;
    let d_w = input.weight_dim();
    if slot.cols != d_in {
        return Err(Error::dims("affine input", slot.cols, d_in));
    }
    if layout.total() > d_w {
        return Err(Error::LayoutOutOfBounds(format!(
            "layout needs {} weights, belief has {d_w}",
            layout.total()
        )));
    }
    let w = &input.weight_mean;
    let a_mean = Matrix::from_fn(d_out, d_in, |i, m| w[slot.a_index(i, m)]);
    let b_mean: Vec<T> = (0..d_out).map(|i| w[slot.b_index(i)]).collect();

    match scheme {
        Scheme::Local => {
            debug_assert!(input.state_weight_cov.is_none());
            let var = match &input.weight_cov {
                WeightCov::Diagonal(v) => v,
                WeightCov::Dense(_) => {
                    return Err(Error::DimensionMismatch(
                        "local scheme requires a diagonal weight covariance".into(),
                    ))
                }
            };
            let mut mean = a_mean.matvec(&input.state_mean);
            for i in 0..d_out {
                mean[i] = mean[i] + b_mean[i];
            }
            let mut cov = a_mean.matmul(&input.state_cov).matmul(&a_mean.transpose());
            for i in 0..d_out {
                let mut extra = var[slot.b_index(i)];
                for m in 0..d_in {
                    let second_moment =
                        input.state_cov[(m, m)] + input.state_mean[m] * input.state_mean[m];
                    extra = extra + var[slot.a_index(i, m)] * second_moment;
                }
                cov[(i, i)] = cov[(i, i)] + extra;
            }
            Ok(LayerBelief {
                state_mean: mean,
                state_cov: cov,
                weight_mean: input.weight_mean.clone(),
                weight_cov: input.weight_cov.clone(),
                state_weight_cov: None,
                input_cross_cov: input
                    .input_cross_cov
                    .as_ref()
                    .map(|c| a_mean.matmul(c)),
                weight_input_cross: input.weight_input_cross.clone(),
            })
        }
        Scheme::Global => {
            let wc = &input.weight_cov;
            let swc = &input.state_weight_cov;
            let mut mean = Vec::with_capacity(d_out);
            for i in 0..d_out {
                let mut acc = b_mean[i];
                for m in 0..d_in {
                    acc = acc
                        + product_mean(
                            a_mean[(i, m)],
                            input.state_mean[m],
                            swc_entry(swc, m, slot.a_index(i, m)),
                        );
                }
                mean.push(acc);
            }

            let mut cov = Matrix::zeros(d_out, d_out);
            for i in 0..d_out {
                for j in 0..=i {
                    let mut acc = wc.get(slot.b_index(i), slot.b_index(j));
                    for m in 0..d_in {
                        let ai = slot.a_index(i, m);
                        // bias-product cross terms, both orders
                        acc = acc
                            + product_cross_cov(
                                a_mean[(j, m)],
                                input.state_mean[m],
                                wc.get(slot.a_index(j, m), slot.b_index(i)),
                                swc_entry(swc, m, slot.b_index(i)),
                            )
                            + product_cross_cov(
                                a_mean[(i, m)],
                                input.state_mean[m],
                                wc.get(ai, slot.b_index(j)),
                                swc_entry(swc, m, slot.b_index(j)),
                            );
                        for n in 0..d_in {
                            let aj = slot.a_index(j, n);
                            acc = acc
                                + product_cov_parts(
                                    wc.get(ai, aj),
                                    input.state_cov[(m, n)],
                                    swc_entry(swc, n, ai),
                                    swc_entry(swc, m, aj),
                                    a_mean[(i, m)],
                                    input.state_mean[m],
                                    a_mean[(j, n)],
                                    input.state_mean[n],
                                );
                        }
                    }
                    cov[(i, j)] = acc;
                    cov[(j, i)] = acc;
                }
            }

            let mut out_swc = Matrix::zeros(d_out, d_w);
            for i in 0..d_out {
                for k in 0..d_w {
                    let mut acc = wc.get(slot.b_index(i), k);
                    for m in 0..d_in {
                        acc = acc
                            + product_cross_cov(
                                a_mean[(i, m)],
                                input.state_mean[m],
                                wc.get(slot.a_index(i, m), k),
                                swc_entry(swc, m, k),
                            );
                    }
                    out_swc[(i, k)] = acc;
                }
            }

            // exact affine update of Cov[x^{l+1}, x^0]: the expected-matrix
            // product plus the weight-input coupling terms
            let input_cross_cov = input.input_cross_cov.as_ref().map(|c| {
                let mut out = a_mean.matmul(c);
                if let Some(wx0) = &input.weight_input_cross {
                    for i in 0..d_out {
                        for j in 0..out.cols() {
                            let mut acc = wx0[(slot.b_index(i), j)];
                            for m in 0..d_in {
                                acc = acc
                                    + wx0[(slot.a_index(i, m), j)] * input.state_mean[m];
                            }
                            out[(i, j)] = out[(i, j)] + acc;
                        }
                    }
                }
                out
            });

            Ok(LayerBelief {
                state_mean: mean,
                state_cov: cov,
                weight_mean: input.weight_mean.clone(),
                weight_cov: input.weight_cov.clone(),
                state_weight_cov: Some(out_swc),
                input_cross_cov,
                weight_input_cross: input.weight_input_cross.clone(),
            })
        }
    }
}

/// Variance below which a ReLU input is treated as deterministic.
const RELU_SIGMA_FLOOR: f64 = 1e-12;

/// Per-dimension gate `Φ(m_i/σ_i)`, the expected Heaviside / expected ReLU
/// Jacobian diagonal. Falls back to a hard step for degenerate variance.
fn relu_gates<T: Real>(mean: &[T], cov: &Matrix<T>) -> Result<Vec<T>> {
    let mut gates = Vec::with_capacity(mean.len());
    for (i, &m) in mean.iter().enumerate() {
        let v = cov[(i, i)];
        if v.value() < -1e-12 {
            return Err(Error::NegativeVariance);
        }
        if v.value() < RELU_SIGMA_FLOOR * RELU_SIGMA_FLOOR {
            gates.push(if m.value() > 0.0 { T::one() } else { T::zero() });
        } else {
            gates.push((m / v.sqrt()).norm_cdf());
        }
    }
    Ok(gates)
}

/// Moments of `max(0, x)` applied elementwise. Diagonal entries use the exact
/// rectified-Gaussian moments; off-diagonal entries and all cross-covariances
/// use the expected-Jacobian (Stein) linearization.
pub fn relu_forward<T: Real>(input: &LayerBelief<T>) -> Result<LayerBelief<T>> {
    let d = input.state_dim();
    let gates = relu_gates(&input.state_mean, &input.state_cov)?;
    let mut mean = Vec::with_capacity(d);
    let mut var = Vec::with_capacity(d);
    for i in 0..d {
        let m = input.state_mean[i];
        let v = input.state_cov[(i, i)];
        if v.value() < RELU_SIGMA_FLOOR * RELU_SIGMA_FLOOR {
            let mu = m * gates[i];
            mean.push(mu);
            var.push(T::zero());
        } else {
            let sigma = v.sqrt();
            let alpha = m / sigma;
            let cdf = gates[i];
            let pdf = alpha.norm_pdf();
            // clamp: analytically nonnegative, but the deep tail cancels
            let mu = (m * cdf + sigma * pdf).max(T::zero());
            let second = (m * m + v) * cdf + m * sigma * pdf;
            mean.push(mu);
            var.push((second - mu * mu).max(T::zero()));
        }
    }
    let mut cov = Matrix::from_fn(d, d, |i, j| {
        if i == j {
            var[i]
        } else {
            gates[i] * input.state_cov[(i, j)] * gates[j]
        }
    });
    // enforce exact symmetry (construction already is, this is belt)
    cov = cov.symmetrized();

    let scale_rows = |m: &Matrix<T>| {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| gates[i] * m[(i, j)])
    };
    Ok(LayerBelief {
        state_mean: mean,
        state_cov: cov,
        weight_mean: input.weight_mean.clone(),
        weight_cov: input.weight_cov.clone(),
        state_weight_cov: input.state_weight_cov.as_ref().map(&scale_rows),
        input_cross_cov: input.input_cross_cov.as_ref().map(&scale_rows),
        weight_input_cross: input.weight_input_cross.clone(),
    })
}

/// One network layer as seen by the moment propagator.
#[derive(Clone, Copy, Debug)]
pub enum LayerOp {
    /// Affine transform whose parameters live in the given layout slot.
    Affine(usize),
    Relu,
}

/// Expected Jacobian of a single layer at the given input belief: `E[A]` for
/// affine layers, `diag(Φ(m_i/σ_i))` for ReLU.
pub fn expected_jacobian<T: Real>(
    layer: LayerOp,
    input: &LayerBelief<T>,
    layout: &WeightLayout,
) -> Result<Matrix<T>> {
    match layer {
        LayerOp::Affine(idx) => {
            let slot = *layout.slot(idx)?;
            if slot.cols != input.state_dim() {
                return Err(Error::dims("jacobian input", slot.cols, input.state_dim()));
            }
            let w = &input.weight_mean;
            Ok(Matrix::from_fn(slot.rows, slot.cols, |i, m| {
                w[slot.a_index(i, m)]
            }))
        }
        LayerOp::Relu => {
            let gates = relu_gates(&input.state_mean, &input.state_cov)?;
            Ok(Matrix::diag(&gates))
        }
    }
}

/// Output of a full moment pass through a layer stack.
pub struct Propagation<T> {
    pub belief: LayerBelief<T>,
    /// Product of per-layer expected Jacobians (output dim × input dim),
    /// present when requested.
    pub jacobian: Option<Matrix<T>>,
}

/// Propagates a belief through a stack of layers, optionally accumulating the
/// composed expected Jacobian.
pub fn propagate_layers<T: Real>(
    input: LayerBelief<T>,
    ops: &[LayerOp],
    layout: &WeightLayout,
    scheme: Scheme,
    want_jacobian: bool,
) -> Result<Propagation<T>> {
    let mut jacobian = if want_jacobian {
        Some(Matrix::identity(input.state_dim()))
    } else {
        None
    };
    let mut belief = input;
    for &op in ops {
        if let Some(j) = jacobian.as_mut() {
            *j = expected_jacobian(op, &belief, layout)?.matmul(j);
        }
        belief = match op {
            LayerOp::Affine(idx) => affine_forward(&belief, layout, idx, scheme)?,
            LayerOp::Relu => relu_forward(&belief)?,
        };
    }
    Ok(Propagation { belief, jacobian })
}

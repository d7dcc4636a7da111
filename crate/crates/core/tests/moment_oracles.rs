//! Monte-Carlo oracles for the product moments and the layer/step moment
//! propagation, plus the symbolic linear-Gaussian closure checks.

mod common;

use common::*;
use prodssm_core::layers::{
    affine_forward, expected_jacobian, relu_forward, LayerBelief, LayerOp, Scheme, WeightCov,
    WeightLayout,
};
use prodssm_core::linalg::Matrix;
use prodssm_core::model::{
    augmented_step, emission_moments, forward_point, NetworkSpec, ProDssmModel, VarianceModel,
    WeightDistribution,
};
use prodssm_core::{product_cov, product_cross_cov, product_mean};
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn product_mean_matches_mc() {
    // a ~ N(0.5, 0.04), x ~ N(−1, 0.25), Cov = −0.05 → E[ax] = −0.55
    let expected = product_mean(0.5, -1.0, -0.05);
    assert!((expected + 0.55).abs() < 1e-12);
    let sampler = MvnSampler::new(&[0.5, -1.0], &[0.04, -0.05, -0.05, 0.25]);
    let mut r = rng(101);
    let est = batch_estimate(
        &mut r,
        10_000_000,
        100,
        |r| sampler.draw(r),
        |s| sample_mean(s, |z| z[0] * z[1]),
    );
    assert_within_se(expected, est.value, est.se, 3.0, "product_mean");
}

#[test]
fn product_cov_matches_mc_same_entry() {
    // Var[a·x] with m_a=1, m_x=2, Σ_aa=0.25, Σ_xx=0.09, Σ_ax=0.1 → 1.5225
    let mean = [1.0, 2.0, 1.0, 2.0];
    let cov = Matrix::from_rows(vec![
        vec![0.25, 0.1, 0.25, 0.1],
        vec![0.1, 0.09, 0.1, 0.09],
        vec![0.25, 0.1, 0.25, 0.1],
        vec![0.1, 0.09, 0.1, 0.09],
    ]);
    let expected = product_cov(&mean, &cov);
    let sampler = MvnSampler::new(&[1.0, 2.0], &[0.25, 0.1, 0.1, 0.09]);
    let mut r = rng(202);
    let est = batch_estimate(
        &mut r,
        10_000_000,
        100,
        |r| sampler.draw(r),
        |s| sample_cov(s, |z| z[0] * z[1], |z| z[0] * z[1]),
    );
    assert_within_se(expected, est.value, est.se, 3.0, "product_cov");
}

#[test]
fn product_cov_matches_mc_cross_entries() {
    // fully correlated 4-tuple (a, x, a', x')
    let mean = [0.4, -0.7, 1.1, 0.6];
    let cov_rows = vec![
        vec![0.30, 0.05, 0.08, -0.02],
        vec![0.05, 0.25, -0.03, 0.06],
        vec![0.08, -0.03, 0.40, 0.04],
        vec![-0.02, 0.06, 0.04, 0.20],
    ];
    let cov = Matrix::from_rows(cov_rows.clone());
    let expected = product_cov(&mean, &cov);
    let flat: Vec<f64> = cov_rows.into_iter().flatten().collect();
    let sampler = MvnSampler::new(&mean, &flat);
    let mut r = rng(203);
    let est = batch_estimate(
        &mut r,
        10_000_000,
        100,
        |r| sampler.draw(r),
        |s| sample_cov(s, |z| z[0] * z[1], |z| z[2] * z[3]),
    );
    assert_within_se(expected, est.value, est.se, 3.0, "product_cov cross");
}

#[test]
fn product_cross_cov_matches_mc() {
    // Cov[a·x, w] with m_a=1, m_x=2, Cov[a,w]=0.1, Cov[x,w]=−0.05 → 0.15
    let expected = product_cross_cov(1.0, 2.0, 0.1, -0.05);
    assert!((expected - 0.15).abs() < 1e-12);
    let cov = [
        0.20, 0.02, 0.10, //
        0.02, 0.30, -0.05, //
        0.10, -0.05, 0.40,
    ];
    let sampler = MvnSampler::new(&[1.0, 2.0, 0.0], &cov);
    let mut r = rng(304);
    let est = batch_estimate(
        &mut r,
        10_000_000,
        100,
        |r| sampler.draw(r),
        |s| sample_cov(s, |z| z[0] * z[1], |z| z[2]),
    );
    assert_within_se(expected, est.value, est.se, 3.0, "product_cross_cov");
}

fn local_layer_belief() -> (LayerBelief<f64>, WeightLayout) {
    let layout = WeightLayout::new(&[(2, 2)]);
    let belief = LayerBelief {
        state_mean: vec![0.4, -0.9],
        state_cov: Matrix::from_rows(vec![vec![0.20, 0.05], vec![0.05, 0.30]]),
        weight_mean: vec![0.8, -0.5, 0.3, 1.1, 0.2, -0.4],
        weight_cov: WeightCov::Diagonal(vec![0.04, 0.02, 0.05, 0.03, 0.01, 0.02]),
        state_weight_cov: None,
        input_cross_cov: None,
        weight_input_cross: None,
    };
    (belief, layout)
}

#[test]
fn affine_local_matches_mc() {
    let (belief, layout) = local_layer_belief();
    let out = affine_forward(&belief, &layout, 0, Scheme::Local).unwrap();
    let x_sampler = MvnSampler::new(&belief.state_mean, &[0.20, 0.05, 0.05, 0.30]);
    let w_var = belief.weight_cov.diagonal();
    let mut r = rng(55);
    let n = 1_000_000;
    let batches = 100;
    // draw (x, w) jointly; emit the 2 outputs
    let draw = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let x = x_sampler.draw(r);
        let w: Vec<f64> = belief
            .weight_mean
            .iter()
            .zip(&w_var)
            .map(|(&m, &v)| m + v.sqrt() * r.sample::<f64, _>(StandardNormal))
            .collect();
        vec![
            w[0] * x[0] + w[1] * x[1] + w[4],
            w[2] * x[0] + w[3] * x[1] + w[5],
        ]
    };
    for i in 0..2 {
        let mut r2 = r.clone();
        let est = batch_estimate(&mut r2, n, batches, draw, |s| sample_mean(s, |y| y[i]));
        assert_within_se(out.state_mean[i], est.value, est.se, 3.0, "affine local mean");
        for j in 0..2 {
            let mut r3 = r.clone();
            let est = batch_estimate(&mut r3, n, batches, draw, |s| {
                sample_cov(s, |y| y[i], |y| y[j])
            });
            assert_within_se(out.state_cov[(i, j)], est.value, est.se, 3.0, "affine local cov");
        }
    }
    let _ = &mut r;
}

#[test]
fn affine_global_matches_mc_including_cross_cov() {
    // construct a PSD joint over (x: 2, w: 6) via x = M w + e
    let layout = WeightLayout::new(&[(2, 2)]);
    let w_mean = vec![0.8, -0.5, 0.3, 1.1, 0.2, -0.4];
    let w_var = vec![0.04, 0.02, 0.05, 0.03, 0.01, 0.02];
    let m_rows = [
        [0.5, -0.3, 0.2, 0.0, 0.4, -0.1],
        [-0.2, 0.4, 0.0, 0.3, -0.1, 0.5],
    ];
    let e_var = [0.05, 0.08];
    let x_mean = [0.4, -0.9];

    // implied moments
    let mut swc = Matrix::zeros(2, 6);
    for i in 0..2 {
        for k in 0..6 {
            swc[(i, k)] = m_rows[i][k] * w_var[k];
        }
    }
    let mut x_cov = Matrix::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = if i == j { e_var[i] } else { 0.0 };
            for k in 0..6 {
                acc += m_rows[i][k] * m_rows[j][k] * w_var[k];
            }
            x_cov[(i, j)] = acc;
        }
    }
    let belief = LayerBelief {
        state_mean: x_mean.to_vec(),
        state_cov: x_cov,
        weight_mean: w_mean.clone(),
        weight_cov: WeightCov::Diagonal(w_var.clone()),
        state_weight_cov: Some(swc),
        input_cross_cov: None,
        weight_input_cross: None,
    };
    let out = affine_forward(&belief, &layout, 0, Scheme::Global).unwrap();

    let draw = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let w: Vec<f64> = w_mean
            .iter()
            .zip(&w_var)
            .map(|(&m, &v)| m + v.sqrt() * r.sample::<f64, _>(StandardNormal))
            .collect();
        let mut out = Vec::with_capacity(8);
        for i in 0..2 {
            let mut x = x_mean[i] + e_var[i].sqrt() * r.sample::<f64, _>(StandardNormal);
            for k in 0..6 {
                x += m_rows[i][k] * (w[k] - w_mean[k]);
            }
            out.push(x);
        }
        out.extend(w);
        out
    };
    // outputs of the affine layer from a raw draw
    let y = |z: &[f64], i: usize| -> f64 {
        let (x, w) = z.split_at(2);
        match i {
            0 => w[0] * x[0] + w[1] * x[1] + w[4],
            _ => w[2] * x[0] + w[3] * x[1] + w[5],
        }
    };
    let n = 1_000_000;
    let mut r = rng(66);
    for i in 0..2 {
        let mut rr = r.clone();
        let est = batch_estimate(&mut rr, n, 100, draw, |s| sample_mean(s, |z| y(z, i)));
        assert_within_se(out.state_mean[i], est.value, est.se, 3.0, "affine global mean");
        for j in 0..2 {
            let mut rr = r.clone();
            let est = batch_estimate(&mut rr, n, 100, draw, |s| {
                sample_cov(s, |z| y(z, i), |z| y(z, j))
            });
            assert_within_se(out.state_cov[(i, j)], est.value, est.se, 3.0, "affine global cov");
        }
        // cross-covariance against every weight coordinate
        let out_swc = out.state_weight_cov.as_ref().unwrap();
        for k in 0..6 {
            let mut rr = r.clone();
            let est = batch_estimate(&mut rr, n, 100, draw, |s| {
                sample_cov(s, |z| y(z, i), |z| z[2 + k])
            });
            assert_within_se(out_swc[(i, k)], est.value, est.se, 3.0, "affine global swc");
        }
    }
    let _ = &mut r;
}

#[test]
fn relu_moments_match_mc() {
    // x ~ N(1, 0.25)
    let belief = LayerBelief {
        state_mean: vec![1.0],
        state_cov: Matrix::from_rows(vec![vec![0.25]]),
        weight_mean: vec![],
        weight_cov: WeightCov::Diagonal(vec![]),
        state_weight_cov: None,
        input_cross_cov: None,
        weight_input_cross: None,
    };
    let out = relu_forward(&belief).unwrap();
    let mut r = rng(77);
    let n = 10_000_000;
    let draw = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        vec![1.0 + 0.5 * r.sample::<f64, _>(StandardNormal)]
    };
    let est_mean = batch_estimate(&mut r, n, 100, draw, |s| {
        sample_mean(s, |z| z[0].max(0.0))
    });
    assert_within_se(out.state_mean[0], est_mean.value, est_mean.se, 3.0, "relu mean");
    let est_var = batch_estimate(&mut r, n, 100, draw, |s| {
        sample_cov(s, |z| z[0].max(0.0), |z| z[0].max(0.0))
    });
    assert_within_se(out.state_cov[(0, 0)], est_var.value, est_var.se, 3.0, "relu var");
}

#[test]
fn expected_jacobian_stack_approximates_stein_cross_cov() {
    // deterministic 3→3 affine-ReLU-affine stack at small input variance
    let spec = NetworkSpec::mlp(3, &[3], 3);
    let layout = WeightLayout::new(&spec.affine_shapes());
    let mut r = rng(88);
    let params: Vec<f64> = (0..spec.num_weights())
        .map(|_| 0.7 * r.sample::<f64, _>(StandardNormal))
        .collect();
    let x_mean = vec![0.3, -0.2, 0.5];
    let x_cov = Matrix::identity(3).scale(0.01);

    // composed expected Jacobian from the moment pass
    let mut belief = LayerBelief {
        state_mean: x_mean.clone(),
        state_cov: x_cov.clone(),
        weight_mean: params.clone(),
        weight_cov: WeightCov::Diagonal(vec![0.0; params.len()]),
        state_weight_cov: None,
        input_cross_cov: None,
        weight_input_cross: None,
    };
    let ops = spec.ops(0);
    let mut jac = Matrix::identity(3);
    for &op in &ops {
        jac = expected_jacobian(op, &belief, &layout).unwrap().matmul(&jac);
        belief = match op {
            LayerOp::Affine(idx) => affine_forward(&belief, &layout, idx, Scheme::Local).unwrap(),
            LayerOp::Relu => relu_forward(&belief).unwrap(),
        };
    }
    let stein = jac.matmul(&x_cov);

    // MC Cov[g(x), x]
    let flat: Vec<f64> = (0..9)
        .map(|k| if k % 4 == 0 { 0.01 } else { 0.0 })
        .collect();
    let sampler = MvnSampler::new(&x_mean, &flat);
    let n = 1_000_000;
    let mut mc = Matrix::<f64>::zeros(3, 3);
    let mut g_mean = vec![0.0; 3];
    let mut x_acc = vec![0.0; 3];
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sampler.draw(&mut r);
        let g = forward_point(&x, &ops, &layout, &params, false);
        for i in 0..3 {
            g_mean[i] += g[i];
            x_acc[i] += x[i];
        }
        draws.push((g, x));
    }
    for v in g_mean.iter_mut().chain(x_acc.iter_mut()) {
        *v /= n as f64;
    }
    for (g, x) in &draws {
        for i in 0..3 {
            for j in 0..3 {
                mc[(i, j)] += (g[i] - g_mean[i]) * (x[j] - x_acc[j]);
            }
        }
    }
    mc = mc.scale(1.0 / (n as f64 - 1.0));

    let diff = stein.sub(&mc).frobenius_norm_value();
    let scale = mc.frobenius_norm_value();
    assert!(
        diff <= 0.10 * scale,
        "relative Frobenius error {} exceeds 10%",
        diff / scale
    );
}

fn width8_local_model() -> ProDssmModel<f64> {
    let f_spec = NetworkSpec::mlp(1, &[8], 1);
    let d_w = f_spec.num_weights();
    let mut r = rng(1234);
    ProDssmModel {
        f_spec,
        variance_model: VarianceModel::ConstantDiag(vec![(0.01f64).ln()]),
        g_spec: NetworkSpec::mlp(1, &[], 1),
        g_params: vec![1.0, 0.0],
        log_r: vec![(0.05f64).ln()],
        init_mean: vec![0.4],
        init_log_var: vec![(0.01f64).ln()],
        weights: WeightDistribution {
            mean: (0..d_w).map(|_| 0.4 * r.sample::<f64, _>(StandardNormal)).collect(),
            log_var: vec![(1e-3f64).ln(); d_w],
        },
        scheme: Scheme::Local,
    }
}

#[test]
fn augmented_step_local_matches_mc() {
    let model = width8_local_model();
    let belief = model.prior_belief();
    let next = augmented_step(&belief, &model).unwrap();
    let layout = model.weight_layout();
    let w_var = model.weights.var();
    let draw = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let x0 = 0.4 + (0.01f64).sqrt() * r.sample::<f64, _>(StandardNormal);
        let w: Vec<f64> = model
            .weights
            .mean
            .iter()
            .zip(&w_var)
            .map(|(&m, &v)| m + v.sqrt() * r.sample::<f64, _>(StandardNormal))
            .collect();
        let (mean, var) = model.transition_point(&[x0], &w, &layout);
        vec![mean[0] + var[0].sqrt() * r.sample::<f64, _>(StandardNormal)]
    };
    let n = 1_000_000;
    let mut r = rng(99);
    let est_mean = batch_estimate(&mut r, n, 100, draw, |s| sample_mean(s, |z| z[0]));
    assert_within_se(next.state_mean[0], est_mean.value, est_mean.se, 3.0, "step mean");
    let est_var = batch_estimate(&mut r, n, 100, draw, |s| sample_cov(s, |z| z[0], |z| z[0]));
    assert_within_se(next.state_cov[(0, 0)], est_var.value, est_var.se, 3.0, "step var");
}

#[test]
fn global_rollout_spreads_more_than_local() {
    // a positive-mean scalar map amplifies a shared weight draw over steps
    let f_spec = NetworkSpec::mlp(1, &[], 1);
    let base = ProDssmModel {
        f_spec,
        variance_model: VarianceModel::ConstantDiag(vec![(1e-4f64).ln()]),
        g_spec: NetworkSpec::mlp(1, &[], 1),
        g_params: vec![1.0, 0.0],
        log_r: vec![(0.05f64).ln()],
        init_mean: vec![1.0],
        init_log_var: vec![(1e-4f64).ln()],
        weights: WeightDistribution {
            mean: vec![1.2, 0.3],
            log_var: vec![(0.05f64).ln(), (0.02f64).ln()],
        },
        scheme: Scheme::Local,
    };
    let mut global = base.clone();
    global.scheme = Scheme::Global;

    let local_step2 = {
        let b1 = augmented_step(&base.prior_belief(), &base).unwrap();
        augmented_step(&b1, &base).unwrap()
    };
    let global_step2 = {
        let b1 = augmented_step(&global.prior_belief(), &global).unwrap();
        augmented_step(&b1, &global).unwrap()
    };
    assert!(
        global_step2.state_cov[(0, 0)] > local_step2.state_cov[(0, 0)],
        "global two-step variance {} should exceed local {}",
        global_step2.state_cov[(0, 0)],
        local_step2.state_cov[(0, 0)]
    );

    // MC confirms both deterministic two-step variances
    for (model, det) in [(&base, &local_step2), (&global, &global_step2)] {
        let layout = model.weight_layout();
        let w_var = model.weights.var();
        let draw = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let mut x = vec![1.0 + (1e-4f64).sqrt() * r.sample::<f64, _>(StandardNormal)];
            let mut w: Vec<f64> = model
                .weights
                .mean
                .iter()
                .zip(&w_var)
                .map(|(&m, &v)| m + v.sqrt() * r.sample::<f64, _>(StandardNormal))
                .collect();
            for step in 0..2 {
                if step > 0 && model.scheme == Scheme::Local {
                    w = model
                        .weights
                        .mean
                        .iter()
                        .zip(&w_var)
                        .map(|(&m, &v)| m + v.sqrt() * r.sample::<f64, _>(StandardNormal))
                        .collect();
                }
                let (mean, var) = model.transition_point(&x, &w, &layout);
                x = vec![mean[0] + var[0].sqrt() * r.sample::<f64, _>(StandardNormal)];
            }
            x
        };
        let mut r = rng(111);
        let est = batch_estimate(&mut r, 400_000, 100, draw, |s| {
            sample_cov(s, |z| z[0], |z| z[0])
        });
        assert_within_se(det.state_cov[(0, 0)], est.value, est.se, 3.5, "two-step var");
    }
}

#[test]
fn emission_moments_match_mc_for_relu_net() {
    // 2-D state, one-hidden-layer ReLU emission with deterministic params
    let g_spec = NetworkSpec::mlp(2, &[8], 1);
    let g_layout = WeightLayout::new(&g_spec.affine_shapes());
    let mut r = rng(314);
    let g_params: Vec<f64> = (0..g_spec.num_weights())
        .map(|_| 0.6 * r.sample::<f64, _>(StandardNormal))
        .collect();
    let model = ProDssmModel {
        f_spec: NetworkSpec::mlp(2, &[], 2),
        variance_model: VarianceModel::ConstantDiag(vec![(0.01f64).ln(); 2]),
        g_spec: g_spec.clone(),
        g_params: g_params.clone(),
        log_r: vec![(0.04f64).ln()],
        init_mean: vec![0.2, -0.4],
        init_log_var: vec![(0.05f64).ln(), (0.08f64).ln()],
        weights: WeightDistribution {
            mean: vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            log_var: vec![f64::NEG_INFINITY; 6],
        },
        scheme: Scheme::Local,
    };
    let belief = model.prior_belief();
    let em = emission_moments(&belief, &model).unwrap();

    let ops = g_spec.ops(0);
    let sampler = MvnSampler::new(&[0.2, -0.4], &[0.05, 0.0, 0.0, 0.08]);
    let draw = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let x = sampler.draw(r);
        let y = forward_point(&x, &ops, &g_layout, &g_params, false);
        vec![x[0], x[1], y[0]]
    };
    let n = 1_000_000;
    let mut r = rng(3141);
    let est_mean = batch_estimate(&mut r, n, 100, draw, |s| sample_mean(s, |z| z[2]));
    assert_within_se(em.y_mean[0], est_mean.value, est_mean.se, 3.0, "emission mean");
    let est_var = batch_estimate(&mut r, n, 100, draw, |s| sample_cov(s, |z| z[2], |z| z[2]));
    // subtract the emission noise our Σ^y includes
    assert_within_se(
        em.y_cov[(0, 0)] - 0.04,
        est_var.value,
        est_var.se,
        3.0,
        "emission var",
    );
    for i in 0..2 {
        let est_cross = batch_estimate(&mut r, n, 100, draw, |s| {
            sample_cov(s, |z| z[i], |z| z[2])
        });
        assert_within_se(em.xy_cov[(i, 0)], est_cross.value, est_cross.se, 3.0, "emission cross");
    }
}

#[test]
fn simulate_agrees_with_augmented_step_moments() {
    // empirical one-step transition moments from ancestral sampling match the
    // deterministic map within 3 SE
    let mut model = width8_local_model();
    model.init_log_var = vec![f64::NEG_INFINITY]; // fixed x_0
    model.log_r = vec![f64::NEG_INFINITY];
    let next = augmented_step(&model.prior_belief(), &model).unwrap();
    let n = 100_000;
    let mut firsts: Vec<f64> = Vec::with_capacity(n);
    for seed in 0..n {
        let t = model.simulate(1, seed as u64);
        firsts.push(t.latents.as_ref().unwrap()[0][0]);
    }
    let mean = firsts.iter().sum::<f64>() / n as f64;
    let var = firsts.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    let se_mean = (var / n as f64).sqrt();
    assert_within_se(next.state_mean[0], mean, se_mean, 3.0, "simulate mean");
    // SE of the sample variance ≈ var·sqrt(2/(n−1))
    let se_var = var * (2.0 / (n as f64 - 1.0)).sqrt();
    assert_within_se(next.state_cov[(0, 0)], var, se_var, 3.0, "simulate var");
}

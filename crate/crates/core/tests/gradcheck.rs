//! Adjoint gradients against central finite differences across random
//! models, both objectives, both schemes.

use prodssm_core::layers::Scheme;
use prodssm_core::synth::{random_model, RandomModelConfig};
use prodssm_core::train::{gradient, pack, GradientMode, ObjectiveKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Max relative error between gradients, measured coordinate-wise against
/// the larger of the two magnitudes and an absolute floor.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let floor = 1e-6
        + 1e-3
            * a.iter()
                .chain(b)
                .map(|g| g.abs())
                .fold(0.0f64, f64::max)
            * 1e-3;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn check_model(seed: u64, scheme: Scheme, regression: bool) -> f64 {
    let cfg = RandomModelConfig {
        state_dim: 1 + (seed as usize % 2),
        obs_dim: 1,
        f_hidden: vec![3 + (seed as usize % 3)],
        scheme,
        variance_net_width: if seed % 3 == 0 { Some(3) } else { None },
        residual: seed % 4 == 0,
        ..RandomModelConfig::default()
    };
    let model = random_model(&cfg, seed);
    let objective = if regression {
        let mut r = ChaCha8Rng::seed_from_u64(seed + 999);
        let n = 4;
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..cfg.state_dim).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![r.gen_range(-1.0..1.0)])
            .collect();
        ObjectiveKind::Regression {
            inputs,
            targets,
            depth: 2,
        }
    } else {
        ObjectiveKind::Ssm {
            data: vec![model.simulate(5, seed + 1)],
        }
    };
    let params = pack(&model);
    let (v_ad, g_ad) = gradient(&model, &params, &objective, GradientMode::Adjoint).unwrap();
    let (v_fd, g_fd) =
        gradient(&model, &params, &objective, GradientMode::FiniteDifference).unwrap();
    assert!((v_ad - v_fd).abs() < 1e-10 * (1.0 + v_ad.abs()));
    max_rel_err(&g_ad, &g_fd)
}

#[test]
fn adjoint_matches_finite_differences_everywhere() {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for seed in 0..5u64 {
        for scheme in [Scheme::Local, Scheme::Global] {
            for regression in [false, true] {
                let err = check_model(seed, scheme, regression);
                assert!(
                    err <= 1e-3,
                    "gradient mismatch {err} (seed {seed}, {scheme:?}, regression={regression})"
                );
                worst = worst.max(err);
                count += 1;
            }
        }
    }
    assert_eq!(count, 20);
    eprintln!("checked {count} models, worst relative error {worst:.2e}");
}

#[test]
fn quadratic_objective_gradient_is_exact() {
    // ½‖θ‖² has gradient θ; run it through both modes via a model whose
    // objective reduces to the point-parameter prior
    use prodssm_core::tape;
    let theta = [0.3, -1.2, 0.7];
    let (v, g) = tape::record::<_, std::convert::Infallible>(&theta, |x| {
        let mut acc = x[0] * x[0];
        for t in &x[1..] {
            acc = acc + *t * *t;
        }
        Ok(acc * prodssm_core::tape::Var::from_f64(0.5))
    })
    .unwrap();
    use prodssm_core::real::Real;
    assert!((v - 0.5 * theta.iter().map(|t| t * t).sum::<f64>()).abs() < 1e-14);
    for (gi, ti) in g.iter().zip(&theta) {
        assert!((gi - ti).abs() < 1e-14);
    }
}

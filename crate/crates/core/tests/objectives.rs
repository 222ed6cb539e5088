use pvi_core::families::DiagGaussian;
use pvi_core::gradients::finite_difference_gradient;
use pvi_core::models::{categorical_model, generate_normal_data, normal_location_model, Dataset};
use pvi_core::regularizers::{posterior_kl_surrogate, prior_kl};
use pvi_core::scores::{crps_objective, log_score_objective, quadratic_score_objective, McBatch};
use pvi_core::Family;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn normal_crps(mu: f64, s: f64, y: f64) -> f64 {
    let z = (y - mu) / s;
    let n = Normal::standard();
    s * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
}

fn toy_phi(mu: f64, sigma: f64) -> Vec<f64> {
    Family::GaussianDiag { dim: 1 }
        .gaussian_params(&[mu], &[sigma.ln()])
        .unwrap()
        .into_values()
}

#[test]
fn log_score_approaches_closed_form() {
    let f = Family::GaussianDiag { dim: 1 };
    let phi = toy_phi(0.3, 0.7);
    let data = Dataset::from_scalars(vec![-1.0, 0.5, 2.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = McBatch::for_likelihood(&f, 200_000, &mut rng).unwrap();
    let v = log_score_objective(&normal_location_model(), &f, &phi, &data, &batch).unwrap();
    let pred = Normal::new(0.3, (1.0f64 + 0.49).sqrt()).unwrap();
    let exact: f64 = [-1.0, 0.5, 2.0].iter().map(|y| pred.ln_pdf(*y)).sum::<f64>() / 3.0;
    assert!((v.value - exact).abs() < 5e-3, "{} vs {exact}", v.value);
}

#[test]
fn crps_approaches_closed_form() {
    let f = Family::GaussianDiag { dim: 1 };
    let phi = toy_phi(-0.2, 1.3);
    let data = Dataset::from_scalars(vec![1.0, -2.5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = normal_location_model();
    let batch = McBatch::for_simulation(&f, &model, 200_000, &mut rng).unwrap();
    let v = crps_objective(&model, &f, &phi, &data, &batch).unwrap();
    let s = (1.0f64 + 1.69).sqrt();
    let exact = -(normal_crps(-0.2, s, 1.0) + normal_crps(-0.2, s, -2.5)) / 2.0;
    assert!((v.value - exact).abs() < 1e-2, "{} vs {exact}", v.value);
}

#[test]
fn crps_error_decays_at_root_m() {
    let f = Family::GaussianDiag { dim: 1 };
    let model = normal_location_model();
    let phi = toy_phi(0.0, 1.0);
    let data = Dataset::from_scalars(vec![0.7]).unwrap();
    let exact = -normal_crps(0.0, 2f64.sqrt(), 0.7);
    let sizes = [10usize, 40, 160, 640];
    let rmse: Vec<f64> = sizes
        .iter()
        .map(|&m| {
            let mut sq = 0.0;
            for r in 0..400u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(12);
                rng.set_stream(r);
                let batch = McBatch::for_simulation(&f, &model, m, &mut rng).unwrap();
                let v = crps_objective(&model, &f, &phi, &data, &batch).unwrap().value;
                sq += (v - exact).powi(2);
            }
            (sq / 400.0).sqrt()
        })
        .collect();
    let xs: Vec<f64> = sizes.iter().map(|m| (*m as f64).ln()).collect();
    let ys: Vec<f64> = rmse.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() < 0.1, "slope {slope}, rmse {rmse:?}");
}

#[test]
fn quadratic_at_a_point_mass() {
    let model = categorical_model(3).unwrap();
    let f = Family::GaussianDiag { dim: 3 };
    let theta = [0.5, -1.0, 0.2];
    let phi = f.gaussian_params(&theta, &[-30.0; 3]).unwrap().into_values();
    let data = Dataset::from_scalars(vec![1.0, 3.0, 3.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = McBatch::for_likelihood(&f, 7, &mut rng).unwrap();
    let v = quadratic_score_objective(&model, &f, &phi, &data, &batch).unwrap();
    let z: f64 = theta.iter().map(|t: &f64| t.exp()).sum();
    let p: Vec<f64> = theta.iter().map(|t| t.exp() / z).collect();
    let norm: f64 = p.iter().map(|q| q * q).sum();
    let exact = ((2.0 * p[0] - norm) + 2.0 * (2.0 * p[2] - norm)) / 3.0;
    assert!((v.value - exact).abs() < 1e-10, "{} vs {exact}", v.value);
}

#[test]
fn negative_elbo_at_exact_posterior_is_evidence() {
    let f = Family::GaussianDiag { dim: 1 };
    let model = normal_location_model();
    let data = Dataset::from_scalars(vec![0.0]).unwrap();
    let phi = toy_phi(0.0, 0.5f64.sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<Vec<f64>> = (0..8).map(|_| f.draw_base(&mut rng)).collect();
    let kl = posterior_kl_surrogate(&f, &phi, &model, &data, &draws, 1.0).unwrap();
    let evidence = 0.5 * (4.0 * std::f64::consts::PI).ln();
    assert!((kl.value - evidence).abs() < 1e-12, "{} vs {evidence}", kl.value);
    assert!(kl.std_error < 1e-12);
    let draws: Vec<Vec<f64>> = (0..20_000).map(|_| f.draw_base(&mut rng)).collect();
    let kl = posterior_kl_surrogate(&f, &phi, &model, &data, &draws, 1.0).unwrap();
    assert!(kl.grad.iter().all(|g| g.abs() < 0.05), "{:?}", kl.grad);
}

#[test]
fn regularizer_gradients_match_finite_differences() {
    let model = normal_location_model();
    let data = generate_normal_data(12, 1.5, 4).unwrap();
    let families = [
        Family::GaussianDiag { dim: 1 },
        Family::GaussianDense { dim: 1 },
        Family::Spline1D { knots: 6, bound: 5.0 },
    ];
    for (k, f) in families.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + k as u64);
        let draws: Vec<Vec<f64>> = (0..16).map(|_| f.draw_base(&mut rng)).collect();
        let mut phi = f.init_params().into_values();
        for (j, v) in phi.iter_mut().enumerate() {
            *v += 0.1 * (j as f64 + 1.0).sin();
        }
        let kl = posterior_kl_surrogate(f, &phi, &model, &data, &draws, 1.5).unwrap();
        let fd = finite_difference_gradient(
            |p| Ok(posterior_kl_surrogate(f, p, &model, &data, &draws, 1.5)?.value),
            &phi,
            1e-5,
        )
        .unwrap();
        for (a, b) in kl.grad.iter().zip(&fd.grad) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1.0), "{f:?}: {a} vs {b}");
        }
        let prior = DiagGaussian::isotropic(1, 0.0, 1.0).unwrap();
        let pk = prior_kl(f, &phi, &prior, &draws).unwrap();
        let fd = finite_difference_gradient(|p| Ok(prior_kl(f, p, &prior, &draws)?.value), &phi, 1e-5).unwrap();
        for (a, b) in pk.grad.iter().zip(&fd.grad) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0), "{f:?}: {a} vs {b}");
        }
    }
}

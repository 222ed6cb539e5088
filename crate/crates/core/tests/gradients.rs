use pvi_core::gradcheck::{fd_check, normal_toy_gradient, replication_check, run_gradcheck, FdCheck, GradcheckSpec};
use pvi_core::gradients::{estimate_gradient, EstimatorKind};
use pvi_core::models::{
    binomial_logit_model, categorical_model, generate_misspec_regression, generate_normal_data, generate_sum_of_squares_data,
    generate_voting_data, linear_observation_simulator, linear_regression_model, normal_location_model,
    sum_of_squares_simulator, voting_cells, BetaPopulation, Dataset, MisspecGrid, Model, VotingLevel, VotingTruth,
};
use pvi_core::scores::{McBatch, ScoreKind};
use pvi_core::Family;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spline() -> Family {
    Family::Spline1D { knots: 8, bound: 5.0 }
}

fn normal_data() -> Dataset {
    generate_normal_data(20, 2.0, 11).unwrap()
}

fn regression() -> (Model, Dataset) {
    let grid = MisspecGrid::standard_normal(3, 4, 0.3, 5).unwrap();
    let g = generate_misspec_regression(20, 3, &grid, 6).unwrap();
    (linear_regression_model(3, 1.0).unwrap(), g.data)
}

fn voting(level: VotingLevel, states: usize, ethnicities: usize) -> (Model, Dataset) {
    let truth = VotingTruth::random(states, ethnicities, 0.5, 3);
    let cells = voting_cells(states, ethnicities, 2, 30);
    (binomial_logit_model(level, states, ethnicities).unwrap(), generate_voting_data(&truth, &cells, 4).unwrap())
}

fn categorical() -> (Model, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y = (0..20).map(|_| rng.random_range(1..=3) as f64).collect();
    (categorical_model(3).unwrap(), Dataset::from_scalars(y).unwrap())
}

fn check(estimator: EstimatorKind, score: ScoreKind, model: &Model, family: &Family, data: &Dataset) -> FdCheck {
    let r = fd_check(estimator, score, model, family, data, 50, 20, 17, false).unwrap();
    assert!(
        r.passed,
        "{} / {} / {:?}: max relative error {:e}, per coordinate {:?}",
        estimator.name(),
        model.name,
        family,
        r.max_rel_error,
        r.per_coordinate
    );
    r
}

#[test]
fn log_reparam_matches_finite_differences() {
    let e = EstimatorKind::LogReparam;
    check(e, ScoreKind::Log, &normal_location_model(), &Family::GaussianDiag { dim: 1 }, &normal_data());
    check(e, ScoreKind::Log, &normal_location_model(), &spline(), &normal_data());
    let (m, d) = regression();
    check(e, ScoreKind::Log, &m, &Family::GaussianDense { dim: 3 }, &d);
    let (m, d) = voting(VotingLevel::SharedSlope, 3, 2);
    check(e, ScoreKind::Log, &m, &Family::GaussianDiag { dim: 6 }, &d);
}

#[test]
fn rejection_surrogate_matches_finite_differences() {
    let e = EstimatorKind::LogRejection;
    check(e, ScoreKind::Log, &normal_location_model(), &Family::GaussianDiag { dim: 1 }, &normal_data());
    check(e, ScoreKind::Log, &normal_location_model(), &spline(), &normal_data());
    let (m, d) = categorical();
    check(e, ScoreKind::Log, &m, &Family::GaussianDense { dim: 3 }, &d);
    let (m, d) = voting(VotingLevel::StateEthnicity, 3, 2);
    check(e, ScoreKind::Log, &m, &Family::GaussianDiag { dim: 5 }, &d);
}

#[test]
fn quadratic_matches_finite_differences() {
    let e = EstimatorKind::Quadratic;
    let (m, d) = categorical();
    check(e, ScoreKind::Quadratic, &m, &Family::GaussianDiag { dim: 3 }, &d);
    check(e, ScoreKind::Quadratic, &m, &Family::GaussianDense { dim: 3 }, &d);
    let (m, d) = voting(VotingLevel::StateSlope, 2, 2);
    check(e, ScoreKind::Quadratic, &m, &Family::GaussianDiag { dim: 6 }, &d);
    let (m, d) = voting(VotingLevel::StateOnly, 1, 1);
    check(e, ScoreKind::Quadratic, &m, &spline(), &d);
}

#[test]
fn crps_matches_finite_differences() {
    let e = EstimatorKind::CrpsPathwise;
    check(e, ScoreKind::Crps, &normal_location_model(), &Family::GaussianDiag { dim: 1 }, &normal_data());
    check(e, ScoreKind::Crps, &normal_location_model(), &spline(), &normal_data());
    let (m, d) = regression();
    check(e, ScoreKind::Crps, &m, &Family::GaussianDense { dim: 3 }, &d);
    let g = generate_sum_of_squares_data(20, 5, &BetaPopulation::bimodal(), 9).unwrap();
    check(e, ScoreKind::Crps, &sum_of_squares_simulator(5, 1).unwrap(), &spline(), &g.data);
}

#[test]
fn energy_matches_finite_differences() {
    let model = linear_observation_simulator(3, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = (0..15).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let data = Dataset::new(y, None, None).unwrap();
    check(EstimatorKind::CrpsPathwise, ScoreKind::Energy, &model, &Family::GaussianDense { dim: 2 }, &data);
    check(EstimatorKind::CrpsPathwise, ScoreKind::Energy, &model, &Family::GaussianDiag { dim: 2 }, &data);
}

#[test]
fn corrupted_gradient_is_caught() {
    let spec = GradcheckSpec {
        corrupt_gradient: true,
        replications: 50,
        ..Default::default()
    };
    let family = Family::GaussianDiag { dim: 1 };
    let phi = family.init_params().into_values();
    let r = run_gradcheck(
        EstimatorKind::LogReparam,
        ScoreKind::Log,
        &normal_location_model(),
        &family,
        &phi,
        &normal_data(),
        &spec,
        1,
    )
    .unwrap();
    assert!(!r.passed);
    assert_eq!(r.fd.offending, vec![0]);
}

fn toy() -> (Model, Family, Vec<f64>, Dataset) {
    let f = Family::GaussianDiag { dim: 1 };
    let phi = f.gaussian_params(&[0.0], &[0.0]).unwrap().into_values();
    (normal_location_model(), f, phi, Dataset::from_scalars(vec![1.0]).unwrap())
}

#[test]
fn toy_oracle_values() {
    let (_, _, phi, data) = toy();
    let g = normal_toy_gradient(ScoreKind::Log, &phi, &data).unwrap();
    assert!((g[0] - 0.5).abs() < 1e-15);
    assert!((g[1] - (-0.25)).abs() < 1e-15);
    let g = normal_toy_gradient(ScoreKind::Crps, &phi, &data).unwrap();
    let z = 1.0 / 2f64.sqrt();
    let phi_cdf = 0.5 * (1.0 + statrs::function::erf::erf(z / 2f64.sqrt()));
    assert!((g[0] - (2.0 * phi_cdf - 1.0)).abs() < 1e-12);
}

#[test]
fn rejection_is_unbiased() {
    let (model, f, phi, data) = toy();
    for m in [1, 10, 100] {
        let r = replication_check(EstimatorKind::LogRejection, ScoreKind::Log, &model, &f, &phi, &data, m, 2000, 40 + m as u64, false)
            .unwrap();
        assert!(r.passed, "M = {m}: mean {:?} se {:?} analytic {:?}", r.mean, r.std_error, r.analytic);
        assert!((r.analytic[0] - 0.5).abs() < 1e-15);
    }
}

#[test]
fn crps_is_unbiased() {
    let (model, f, phi, data) = toy();
    for m in [10, 100] {
        let r = replication_check(EstimatorKind::CrpsPathwise, ScoreKind::Crps, &model, &f, &phi, &data, m, 1000, 70 + m as u64, false)
            .unwrap();
        assert!(r.passed, "M = {m}: mean {:?} se {:?} analytic {:?}", r.mean, r.std_error, r.analytic);
    }
}

#[test]
fn log_reparam_bias_shrinks_with_m() {
    let (model, f, phi, _) = toy();
    let data = Dataset::from_scalars(vec![4.0]).unwrap();
    let exact = normal_toy_gradient(ScoreKind::Log, &phi, &data).unwrap();
    let bias = |m: usize| {
        let mut total = 0.0;
        for r in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            rng.set_stream(r);
            let batch = McBatch::for_likelihood(&f, m, &mut rng).unwrap();
            total += estimate_gradient(EstimatorKind::LogReparam, &model, &f, &phi, &data, &batch).unwrap().grad[0];
        }
        (total / 200.0 - exact[0]).abs()
    };
    let (small, large) = (bias(100), bias(10_000));
    assert!(large < small, "bias at M=1e4 {large} vs M=1e2 {small}");
}

#[test]
fn rejection_reports_acceptance() {
    let (model, f, phi, data) = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = McBatch::for_likelihood(&f, 4000, &mut rng).unwrap();
    let g = estimate_gradient(EstimatorKind::LogRejection, &model, &f, &phi, &data, &batch).unwrap();
    // acceptance probability is p(y) / bound = N(1; 0, sqrt 2) * sqrt(2 pi)
    let expected = (-0.25f64).exp() / 2f64.sqrt();
    assert!((g.accept_rate().unwrap() - expected).abs() < 0.03, "{:?}", g.accept_rate());
}

#[test]
fn gradcheck_passes_on_toy() {
    let (model, f, phi, data) = toy();
    let spec = GradcheckSpec {
        replications: 300,
        ..Default::default()
    };
    let r = run_gradcheck(EstimatorKind::LogRejection, ScoreKind::Log, &model, &f, &phi, &data, &spec, 5).unwrap();
    assert!(r.passed, "{r:?}");
    assert_eq!(r.replications.len(), 3);
}

//! Gradient verification: frozen-batch finite-difference agreement and
//! replication unbiasedness against closed-form Gaussian gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PviError, Result};
use crate::families::Family;
use crate::gradients::{estimate_gradient, finite_difference_gradient, rejection_surrogate, rejection_weights, EstimatorKind};
use crate::models::{Dataset, Model};
use crate::scores::{score_objective, simulate, McBatch, ScoreKind};

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Orientation of every `|s - y|` and `|s_m - s_{m+M}|` kink, for scalar outcomes.
fn kink_signs(model: &Model, family: &Family, phi: &[f64], data: &Dataset, batch: &McBatch) -> Result<Vec<bool>> {
    let (_, sims) = simulate(model, family, phi, data, batch)?;
    let mut signs = Vec::new();
    for d in data.iter() {
        let s = sims.for_datum(d.index);
        let m = s.len() / 2;
        for (k, v) in s.iter().enumerate() {
            signs.push(v[0] > d.y[0]);
            if k < m {
                signs.push(v[0] > s[k + m][0]);
            }
        }
    }
    Ok(signs)
}

/// Whether some kink flips inside the finite-difference stencil.
fn straddles_tie(model: &Model, family: &Family, phi: &[f64], data: &Dataset, batch: &McBatch, h: f64) -> Result<bool> {
    if data.outcome_dim() != 1 {
        return Ok(false);
    }
    let center = kink_signs(model, family, phi, data, batch)?;
    let mut probe = phi.to_vec();
    for k in 0..phi.len() {
        for delta in [h, -h] {
            probe[k] = phi[k] + delta;
            if kink_signs(model, family, &probe, data, batch)? != center {
                return Ok(true);
            }
        }
        probe[k] = phi[k];
    }
    Ok(false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdCheck {
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    /// Worst relative error per coordinate across trials.
    pub per_coordinate: Vec<f64>,
    /// Coordinates over tolerance.
    pub offending: Vec<usize>,
    pub passed: bool,
}

pub fn default_tolerance(estimator: EstimatorKind) -> f64 {
    match estimator {
        EstimatorKind::CrpsPathwise => 1e-3,
        _ => 1e-4,
    }
}

fn default_step(estimator: EstimatorKind) -> f64 {
    match estimator {
        EstimatorKind::CrpsPathwise => 1e-4,
        _ => 1e-5,
    }
}

/// A random parameter vector near the family's initialization.
pub fn random_phi<R: Rng>(family: &Family, rng: &mut R) -> Vec<f64> {
    let mut phi = family.init_params().into_values();
    for v in phi.iter_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    phi
}

fn corrupt(grad: &mut [f64]) {
    grad[0] += 1e-2 * (1.0 + grad[0].abs());
}

/// Compares `estimator` against central differences of its own objective on
/// the same frozen batch, over `trials` random parameter vectors. CRPS
/// batches with a sign tie inside the stencil are redrawn.
#[allow(clippy::too_many_arguments)]
pub fn fd_check(
    estimator: EstimatorKind,
    score: ScoreKind,
    model: &Model,
    family: &Family,
    data: &Dataset,
    mc_size: usize,
    trials: usize,
    seed: u64,
    corrupt_gradient: bool,
) -> Result<FdCheck> {
    estimator.check(score, model, data)?;
    score.check(model, data)?;
    let tolerance = default_tolerance(estimator);
    let h = default_step(estimator);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_coordinate = vec![0.0f64; family.param_dim()];
    for _ in 0..trials {
        let phi = random_phi(family, &mut rng);
        let mut batch = McBatch::for_score(score, family, model, mc_size, &mut rng)?;
        if estimator == EstimatorKind::CrpsPathwise {
            let mut redraws = 0;
            while straddles_tie(model, family, &phi, data, &batch, h)? {
                redraws += 1;
                if redraws > 100 {
                    return Err(PviError::Numerical("could not draw a CRPS batch away from sign ties".into()));
                }
                batch = McBatch::for_score(score, family, model, mc_size, &mut rng)?;
            }
        }
        let fd = if estimator == EstimatorKind::LogRejection {
            let w = rejection_weights(model, family, &phi, data, &batch)?;
            if w.kept == 0 {
                continue;
            }
            finite_difference_gradient(|p| rejection_surrogate(family, p, &w), &phi, h)?
        } else {
            finite_difference_gradient(|p| Ok(score_objective(score, model, family, p, data, &batch)?.value), &phi, h)?
        };
        let mut est = estimate_gradient(estimator, model, family, &phi, data, &batch)?;
        if corrupt_gradient {
            corrupt(&mut est.grad);
        }
        for (k, (a, b)) in est.grad.iter().zip(&fd.grad).enumerate() {
            per_coordinate[k] = per_coordinate[k].max(relative_error(*a, *b));
        }
    }
    let max_rel_error = per_coordinate.iter().cloned().fold(0.0, f64::max);
    let offending: Vec<usize> = (0..per_coordinate.len()).filter(|k| per_coordinate[*k] > tolerance).collect();
    Ok(FdCheck {
        trials,
        step: h,
        tolerance,
        max_rel_error,
        passed: offending.is_empty(),
        per_coordinate,
        offending,
    })
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Exact gradient of the log or CRPS score on the normal location model with a
/// one-dimensional Gaussian family, where the predictive is
/// `N(mu, sqrt(1 + sigma^2))`. Coordinates are `(mu, log sigma)`.
pub fn normal_toy_gradient(score: ScoreKind, phi: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    let (mu, sigma) = (phi[0], phi[1].exp());
    let s2 = 1.0 + sigma * sigma;
    let s = s2.sqrt();
    let mut g = [0.0; 2];
    let ys = data
        .scalar_outcomes()
        .ok_or_else(|| PviError::Config("normal toy oracle needs scalar outcomes".into()))?;
    for y in &ys {
        match score {
            ScoreKind::Log => {
                let r = y - mu;
                g[0] += r / s2;
                g[1] += (-0.5 / s2 + r * r / (2.0 * s2 * s2)) * 2.0 * sigma * sigma;
            }
            ScoreKind::Crps | ScoreKind::Energy => {
                let z = (y - mu) / s;
                g[0] += 2.0 * std_normal_cdf(z) - 1.0;
                let d_s = -(2.0 * std_normal_pdf(z) - 1.0 / std::f64::consts::PI.sqrt());
                g[1] += d_s * sigma * sigma / s;
            }
            ScoreKind::Quadratic => {
                return Err(PviError::Config("no closed-form quadratic oracle on the normal toy".into()));
            }
        }
    }
    let n = ys.len() as f64;
    Ok(g.iter().map(|v| v / n).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationCheck {
    pub mc_size: usize,
    pub replications: usize,
    /// Replications whose estimate was undefined (every datum dropped).
    pub undefined: usize,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub analytic: Vec<f64>,
    /// Largest `|mean - analytic| / std_error`.
    pub max_z: f64,
    pub passed: bool,
}

/// Mean of `replications` independent estimates (each on its own RNG stream
/// of a generator seeded with `seed`) against the analytic gradient; passes
/// when every coordinate is within 3 standard errors.
#[allow(clippy::too_many_arguments)]
pub fn replication_check(
    estimator: EstimatorKind,
    score: ScoreKind,
    model: &Model,
    family: &Family,
    phi: &[f64],
    data: &Dataset,
    mc_size: usize,
    replications: usize,
    seed: u64,
    corrupt_gradient: bool,
) -> Result<ReplicationCheck> {
    if model.name != "normal_location" || *family != (Family::GaussianDiag { dim: 1 }) {
        return Err(PviError::Config(
            "replication checks need the normal location model with a gaussian_diag family of dimension 1".into(),
        ));
    }
    if replications < 2 {
        return Err(PviError::Config("replication checks need at least 2 replications".into()));
    }
    let analytic = normal_toy_gradient(score, phi, data)?;
    let dim = phi.len();
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut defined = 0usize;
    for r in 0..replications {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let batch = McBatch::for_score(score, family, model, mc_size, &mut rng)?;
        let mut est = estimate_gradient(estimator, model, family, phi, data, &batch)?;
        if !est.is_finite() {
            continue;
        }
        if corrupt_gradient {
            corrupt(&mut est.grad);
        }
        defined += 1;
        for k in 0..dim {
            sum[k] += est.grad[k];
            sum_sq[k] += est.grad[k] * est.grad[k];
        }
    }
    if defined < 2 {
        return Err(PviError::Numerical("fewer than 2 replications produced an estimate".into()));
    }
    let n = defined as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_error: Vec<f64> = (0..dim)
        .map(|k| ((sum_sq[k] / n - mean[k] * mean[k]).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    let max_z = (0..dim)
        .map(|k| {
            let diff = (mean[k] - analytic[k]).abs();
            if std_error[k] > 0.0 {
                diff / std_error[k]
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    Ok(ReplicationCheck {
        mc_size,
        replications,
        undefined: replications - defined,
        mean,
        std_error,
        analytic,
        max_z,
        passed: max_z <= 3.0,
    })
}

/// Monte Carlo sizes the replication check uses by default.
pub fn default_replication_sizes(estimator: EstimatorKind) -> Vec<usize> {
    match estimator {
        EstimatorKind::LogRejection => vec![1, 10, 100],
        EstimatorKind::CrpsPathwise => vec![10, 100],
        _ => Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub estimator: EstimatorKind,
    pub score: ScoreKind,
    pub fd: FdCheck,
    pub replications: Vec<ReplicationCheck>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSpec {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_fd_mc")]
    pub mc_size: usize,
    /// Replication Monte Carlo sizes; empty means the estimator's defaults.
    #[serde(default)]
    pub replication_sizes: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Perturbs every estimate; used to confirm the checks can fail.
    #[serde(default)]
    pub corrupt_gradient: bool,
}

fn default_trials() -> usize {
    20
}

fn default_fd_mc() -> usize {
    50
}

fn default_replications() -> usize {
    500
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        GradcheckSpec {
            trials: default_trials(),
            mc_size: default_fd_mc(),
            replication_sizes: Vec::new(),
            replications: default_replications(),
            corrupt_gradient: false,
        }
    }
}

#[allow(clippy::too_many_arguments)]
/// Finite-difference check, plus replication checks at `phi` when the model
/// and family admit the closed-form oracle.
pub fn run_gradcheck(
    estimator: EstimatorKind,
    score: ScoreKind,
    model: &Model,
    family: &Family,
    phi: &[f64],
    data: &Dataset,
    spec: &GradcheckSpec,
    seed: u64,
) -> Result<GradcheckReport> {
    if spec.trials == 0 || spec.mc_size == 0 {
        return Err(PviError::Config("gradcheck needs trials >= 1 and mc_size >= 1".into()));
    }
    let fd = fd_check(estimator, score, model, family, data, spec.mc_size, spec.trials, seed, spec.corrupt_gradient)?;
    let oracle = model.name == "normal_location"
        && *family == (Family::GaussianDiag { dim: 1 })
        && score != ScoreKind::Quadratic;
    let sizes = if spec.replication_sizes.is_empty() {
        default_replication_sizes(estimator)
    } else {
        spec.replication_sizes.clone()
    };
    let mut replications = Vec::new();
    if oracle {
        for (k, m) in sizes.into_iter().enumerate() {
            replications.push(replication_check(
                estimator,
                score,
                model,
                family,
                phi,
                data,
                m,
                spec.replications,
                seed.wrapping_add(1 + k as u64),
                spec.corrupt_gradient,
            )?);
        }
    }
    let passed = fd.passed && replications.iter().all(|r| r.passed);
    Ok(GradcheckReport {
        estimator,
        score,
        fd,
        replications,
        passed,
    })
}

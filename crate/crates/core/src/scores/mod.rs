//! Monte Carlo estimates of the empirical scoring-rule objectives.
//!
//! Every objective is a per-datum average, higher is better, and is a pure
//! function of `(phi, data, batch)`. One [`McBatch`] of base draws is shared by
//! all data within an evaluation.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, contract, PviError, Result};
use crate::families::Family;
use crate::models::{Dataset, Datum, Likelihood, Model, SortedOutcomes};

/// The scoring rule an objective is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Log,
    /// Brier score over the model's discrete outcome support.
    Quadratic,
    Crps,
    /// CRPS with the Euclidean distance, for vector outcomes.
    Energy,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 4] = [ScoreKind::Log, ScoreKind::Quadratic, ScoreKind::Crps, ScoreKind::Energy];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Log => "log",
            ScoreKind::Quadratic => "quadratic",
            ScoreKind::Crps => "crps",
            ScoreKind::Energy => "energy",
        }
    }

    /// Whether the score needs simulated outcomes rather than a likelihood.
    pub fn needs_simulator(self) -> bool {
        matches!(self, ScoreKind::Crps | ScoreKind::Energy)
    }

    /// Checks that `model` and `data` support this score.
    pub fn check(self, model: &Model, data: &Dataset) -> Result<()> {
        match self {
            ScoreKind::Log => {
                model.likelihood()?;
            }
            ScoreKind::Quadratic => {
                let l = model.likelihood()?;
                if l.outcome_support(&data.datum(0)).is_none() {
                    return Err(PviError::Config(format!(
                        "quadratic score needs a discrete outcome model, '{}' is continuous",
                        model.name
                    )));
                }
            }
            ScoreKind::Crps => {
                let s = model.simulator()?;
                if s.output_dim() != 1 {
                    return Err(PviError::Config("crps needs scalar outcomes; use the energy score".into()));
                }
            }
            ScoreKind::Energy => {
                model.simulator()?;
            }
        }
        model.check_data(data)
    }
}

/// Frozen Monte Carlo randomness for one evaluation.
///
/// Likelihood batches carry `M` base draws and `M` uniforms (for the rejection
/// estimator). Simulation batches carry `2M` base draws and `2M` simulator
/// noise records; draws `m` and `m + M` form the pairs of the CRPS spread term.
#[derive(Clone, Debug, PartialEq)]
pub struct McBatch {
    pub base: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
    pub uniforms: Vec<f64>,
}

impl McBatch {
    pub fn for_likelihood<R: RngCore>(family: &Family, m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(PviError::Config("Monte Carlo size must be at least 1".into()));
        }
        let base = (0..m).map(|_| family.draw_base(rng)).collect();
        let uniforms = (0..m).map(|_| rand::Rng::random::<f64>(rng)).collect();
        Ok(McBatch {
            base,
            noise: Vec::new(),
            uniforms,
        })
    }

    pub fn for_simulation<R: RngCore>(family: &Family, model: &Model, m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(PviError::Config("Monte Carlo size must be at least 1".into()));
        }
        let sim = model.simulator()?;
        let mut base = Vec::with_capacity(2 * m);
        let mut noise = Vec::with_capacity(2 * m);
        for _ in 0..2 * m {
            base.push(family.draw_base(rng));
            noise.push(sim.draw_noise(rng));
        }
        Ok(McBatch {
            base,
            noise,
            uniforms: Vec::new(),
        })
    }

    /// The batch shape `kind` needs.
    pub fn for_score<R: RngCore>(kind: ScoreKind, family: &Family, model: &Model, m: usize, rng: &mut R) -> Result<Self> {
        if kind.needs_simulator() {
            Self::for_simulation(family, model, m, rng)
        } else {
            Self::for_likelihood(family, m, rng)
        }
    }

    /// `M`: the number of draws for likelihood batches, half of them for
    /// simulation batches.
    pub fn mc_size(&self) -> usize {
        if self.is_simulation() {
            self.base.len() / 2
        } else {
            self.base.len()
        }
    }

    pub fn is_simulation(&self) -> bool {
        !self.noise.is_empty()
    }

    pub(crate) fn check(&self, family: &Family) -> Result<()> {
        if self.base.is_empty() {
            return contract("empty Monte Carlo batch");
        }
        for u in &self.base {
            check_dim("base noise", u.len(), family.latent_dim())?;
        }
        if self.is_simulation() && (self.noise.len() != self.base.len() || !self.base.len().is_multiple_of(2)) {
            return contract("simulation batches need 2M paired base and noise draws");
        }
        Ok(())
    }
}

/// An objective value with its per-datum terms.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreEval {
    /// Mean of `terms`; `-inf` when any datum is flagged.
    pub value: f64,
    pub terms: Vec<f64>,
    /// Data whose likelihood underflowed at every draw.
    pub flagged: Vec<usize>,
}

impl ScoreEval {
    fn from_terms(terms: Vec<f64>) -> Self {
        let flagged: Vec<usize> = terms
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == f64::NEG_INFINITY)
            .map(|(i, _)| i)
            .collect();
        let value = if flagged.is_empty() {
            terms.iter().sum::<f64>() / terms.len() as f64
        } else {
            f64::NEG_INFINITY
        };
        ScoreEval { value, terms, flagged }
    }
}

pub(crate) fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (s / values.len() as f64).ln()
}

fn check_common(family: &Family, phi: &[f64], model: &Model, batch: &McBatch) -> Result<()> {
    family.check_phi(phi)?;
    batch.check(family)?;
    check_dim("family latent dimension", family.latent_dim(), model.theta_dim())
}

pub(crate) fn checked_loglik(l: &dyn Likelihood, theta: &[f64], d: &Datum<'_>) -> Result<f64> {
    let v = l.loglik(theta, d);
    if v.is_nan() || v == f64::INFINITY {
        return Err(PviError::Numerical(format!("log-likelihood {v} at datum {}", d.index)));
    }
    Ok(v)
}

/// `(1/n) sum_i log((1/M) sum_j p(y_i | T_phi(u_j)))`, evaluated with log-sum-exp.
pub fn log_score_objective(model: &Model, family: &Family, phi: &[f64], data: &Dataset, batch: &McBatch) -> Result<ScoreEval> {
    check_common(family, phi, model, batch)?;
    let l = model.likelihood()?;
    let thetas = family.sample_batch(phi, &batch.base);
    let mut lp = vec![0.0; thetas.len()];
    let mut terms = Vec::with_capacity(data.len());
    for d in data.iter() {
        for (v, t) in lp.iter_mut().zip(&thetas) {
            *v = checked_loglik(l, t, &d)?;
        }
        terms.push(log_mean_exp(&lp));
    }
    Ok(ScoreEval::from_terms(terms))
}

/// Predictive masses over the support of one datum:
/// `(support, f[c][j] = p(c | theta_j))`.
pub(crate) fn support_masses(l: &dyn Likelihood, thetas: &[Vec<f64>], d: &Datum<'_>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let support = l
        .outcome_support(d)
        .ok_or_else(|| PviError::Config("quadratic score needs a discrete outcome model".into()))?;
    let mut f = Vec::with_capacity(support.len());
    for c in &support {
        let y = [*c];
        let dc = d.with_outcome(&y);
        let row = thetas
            .iter()
            .map(|t| checked_loglik(l, t, &dc).map(f64::exp))
            .collect::<Result<Vec<_>>>()?;
        f.push(row);
    }
    Ok((support, f))
}

pub(crate) fn support_index(support: &[f64], y: f64, index: usize) -> Result<usize> {
    support
        .iter()
        .position(|c| *c == y)
        .ok_or_else(|| PviError::Data(format!("datum {index}: outcome {y} outside the model's support")))
}

/// Whether every datum shares the same predictive (no covariates, no trial counts).
pub(crate) fn shared_predictive(data: &Dataset) -> bool {
    data.covariates().is_none() && data.trial_counts().is_none()
}

/// `(1/n) sum_i [2 P_i(y_i) - sum_c P_i(c)^2]` with `P_i(c) = (1/M) sum_j p(c | theta_j)`.
pub fn quadratic_score_objective(
    model: &Model,
    family: &Family,
    phi: &[f64],
    data: &Dataset,
    batch: &McBatch,
) -> Result<ScoreEval> {
    check_common(family, phi, model, batch)?;
    let l = model.likelihood()?;
    let thetas = family.sample_batch(phi, &batch.base);
    let m = thetas.len() as f64;
    let mut shared: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut terms = Vec::with_capacity(data.len());
    for d in data.iter() {
        l.check_datum(&d)?;
        let (support, p) = match &shared {
            Some(s) => s.clone(),
            None => {
                let (support, f) = support_masses(l, &thetas, &d)?;
                let p: Vec<f64> = f.iter().map(|row| row.iter().sum::<f64>() / m).collect();
                if shared_predictive(data) {
                    shared = Some((support.clone(), p.clone()));
                }
                (support, p)
            }
        };
        let k = support_index(&support, d.y[0], d.index)?;
        terms.push(2.0 * p[k] - p.iter().map(|v| v * v).sum::<f64>());
    }
    Ok(ScoreEval::from_terms(terms))
}

/// Simulated outcomes for a simulation batch.
pub(crate) enum Sims {
    /// One set of `2M` simulations shared by every datum.
    Shared(Vec<Vec<f64>>),
    /// `2M` simulations per datum, driven by that datum's covariates.
    PerDatum(Vec<Vec<Vec<f64>>>),
}

impl Sims {
    pub fn for_datum(&self, i: usize) -> &[Vec<f64>] {
        match self {
            Sims::Shared(s) => s,
            Sims::PerDatum(s) => &s[i],
        }
    }
}

pub(crate) fn simulate(
    model: &Model,
    family: &Family,
    phi: &[f64],
    data: &Dataset,
    batch: &McBatch,
) -> Result<(Vec<Vec<f64>>, Sims)> {
    check_common(family, phi, model, batch)?;
    if !batch.is_simulation() {
        return contract("simulation scores need a simulation batch of 2M draws");
    }
    let sim = model.simulator()?;
    if data.outcome_dim() != sim.output_dim() {
        return Err(PviError::Data(format!(
            "outcome dimension {} but simulator produces {}",
            data.outcome_dim(),
            sim.output_dim()
        )));
    }
    let thetas = family.sample_batch(phi, &batch.base);
    let run = |x: &[f64]| -> Result<Vec<Vec<f64>>> {
        thetas
            .iter()
            .zip(&batch.noise)
            .map(|(t, e)| {
                let mut out = vec![0.0; sim.output_dim()];
                sim.simulate(t, x, e, &mut out);
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(PviError::Numerical("simulator produced a non-finite outcome".into()));
                }
                Ok(out)
            })
            .collect()
    };
    let sims = if sim.uses_covariates() {
        Sims::PerDatum(data.iter().map(|d| run(d.x)).collect::<Result<Vec<_>>>()?)
    } else {
        Sims::Shared(run(&[])?)
    };
    Ok((thetas, sims))
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        (a[0] - b[0]).abs()
    } else {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

/// `(1/2)(1/M) sum_{m<M} d(s_m, s_{m+M})`.
pub(crate) fn spread_term(sims: &[Vec<f64>]) -> f64 {
    let m = sims.len() / 2;
    let s: f64 = (0..m).map(|k| distance(&sims[k], &sims[k + m])).sum();
    0.5 * s / m as f64
}

fn kernel_terms(kind: ScoreKind, model: &Model, family: &Family, phi: &[f64], data: &Dataset, batch: &McBatch) -> Result<ScoreEval> {
    let (_, sims) = simulate(model, family, phi, data, batch)?;
    if kind == ScoreKind::Crps && data.outcome_dim() != 1 {
        return Err(PviError::Config("crps needs scalar outcomes; use the energy score".into()));
    }
    let terms = match &sims {
        Sims::Shared(s) if data.outcome_dim() == 1 => {
            let two_m = s.len() as f64;
            let spread = spread_term(s);
            let sorted = SortedOutcomes::new(s.iter().map(|v| v[0]).collect());
            data.iter()
                .map(|d| -sorted.abs_dev_sum(d.y[0]) / two_m + spread)
                .collect()
        }
        _ => {
            let shared_spread = match &sims {
                Sims::Shared(s) => Some(spread_term(s)),
                Sims::PerDatum(_) => None,
            };
            data.iter()
                .map(|d| {
                    let s = sims.for_datum(d.index);
                    let near: f64 = s.iter().map(|v| distance(v, d.y)).sum::<f64>() / s.len() as f64;
                    -near + shared_spread.unwrap_or_else(|| spread_term(s))
                })
                .collect()
        }
    };
    Ok(ScoreEval::from_terms(terms))
}

/// Negative CRPS: `-(1/n) sum_i (1/2M) sum_m |s_m - y_i| + (1/2)(1/M) sum_{m<M} |s_m - s_{m+M}|`.
pub fn crps_objective(model: &Model, family: &Family, phi: &[f64], data: &Dataset, batch: &McBatch) -> Result<ScoreEval> {
    kernel_terms(ScoreKind::Crps, model, family, phi, data, batch)
}

/// Negative energy score: the CRPS estimator with Euclidean distances.
pub fn energy_objective(model: &Model, family: &Family, phi: &[f64], data: &Dataset, batch: &McBatch) -> Result<ScoreEval> {
    kernel_terms(ScoreKind::Energy, model, family, phi, data, batch)
}

pub fn score_objective(
    kind: ScoreKind,
    model: &Model,
    family: &Family,
    phi: &[f64],
    data: &Dataset,
    batch: &McBatch,
) -> Result<ScoreEval> {
    match kind {
        ScoreKind::Log => log_score_objective(model, family, phi, data, batch),
        ScoreKind::Quadratic => quadratic_score_objective(model, family, phi, data, batch),
        ScoreKind::Crps => crps_objective(model, family, phi, data, batch),
        ScoreKind::Energy => energy_objective(model, family, phi, data, batch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{categorical_model, linear_observation_simulator, normal_location_model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(mean: f64, std: f64) -> (Family, Vec<f64>) {
        let f = Family::GaussianDiag { dim: 1 };
        let phi = f.gaussian_params(&[mean], &[std.ln()]).unwrap().into_values();
        (f, phi)
    }

    #[test]
    fn point_mass_log_score_is_the_loglik() {
        let model = normal_location_model();
        let (f, phi) = gauss(0.7, 1e-12);
        let data = Dataset::from_scalars(vec![0.0, 1.5, -2.0]).unwrap();
        let batch = McBatch::for_likelihood(&f, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let e = log_score_objective(&model, &f, &phi, &data, &batch).unwrap();
        let l = model.likelihood().unwrap();
        let expect: f64 = data.iter().map(|d| l.loglik(&[0.7], &d)).sum::<f64>() / 3.0;
        assert!((e.value - expect).abs() < 1e-9);
    }

    #[test]
    fn log_score_convolution_oracle() {
        let model = normal_location_model();
        let (f, phi) = gauss(0.0, 3f64.sqrt());
        let data = Dataset::from_scalars(vec![0.0]).unwrap();
        let batch = McBatch::for_likelihood(&f, 100_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let e = log_score_objective(&model, &f, &phi, &data, &batch).unwrap();
        let oracle = -0.5 * (2.0 * std::f64::consts::PI * 4.0).ln();
        assert!((e.value - oracle).abs() < 0.01, "{} vs {oracle}", e.value);
    }

    /// `y | theta ~ Uniform(theta - 1, theta + 1)`: exact zeros off the box.
    #[derive(Debug)]
    struct Boxcar;

    impl Likelihood for Boxcar {
        fn theta_dim(&self) -> usize {
            1
        }
        fn loglik(&self, theta: &[f64], d: &Datum<'_>) -> f64 {
            if (d.y[0] - theta[0]).abs() <= 1.0 {
                0.5f64.ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        fn loglik_grad(&self, theta: &[f64], d: &Datum<'_>, grad: &mut [f64]) -> f64 {
            grad[0] = 0.0;
            self.loglik(theta, d)
        }
    }

    #[test]
    fn log_score_permutation_invariant_and_underflow_flag() {
        let prior = crate::families::DiagGaussian::isotropic(1, 0.0, 1.0).unwrap();
        let model = Model::new("boxcar", vec!["theta".into()], prior, Some(std::sync::Arc::new(Boxcar)), None).unwrap();
        let (f, phi) = gauss(0.0, 1.0);
        let data = Dataset::from_scalars(vec![0.3, 50.0]).unwrap();
        let mut batch = McBatch::for_likelihood(&f, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let a = log_score_objective(&model, &f, &phi, &data, &batch).unwrap();
        assert_eq!(a.value, f64::NEG_INFINITY);
        assert_eq!(a.flagged, vec![1]);
        assert!(a.terms[0].is_finite());
        batch.base.reverse();
        let b = log_score_objective(&model, &f, &phi, &data, &batch).unwrap();
        assert!((a.terms[0] - b.terms[0]).abs() < 1e-12);

        let smooth = normal_location_model();
        let one = Dataset::from_scalars(vec![0.3, 1.7]).unwrap();
        let a = log_score_objective(&smooth, &f, &phi, &one, &batch).unwrap();
        batch.base.rotate_left(7);
        let b = log_score_objective(&smooth, &f, &phi, &one, &batch).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn quadratic_uniform_and_deterministic_predictives() {
        let model = categorical_model(4).unwrap();
        let f = Family::GaussianDiag { dim: 4 };
        let flat = f.gaussian_params(&[0.0; 4], &[-40.0; 4]).unwrap().into_values();
        let data = Dataset::from_scalars(vec![1.0, 3.0, 4.0]).unwrap();
        let batch = McBatch::for_likelihood(&f, 5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let e = quadratic_score_objective(&model, &f, &flat, &data, &batch).unwrap();
        assert!((e.value - 0.25).abs() < 1e-12);
        let sharp = f.gaussian_params(&[0.0, 0.0, 800.0, 0.0], &[-40.0; 4]).unwrap().into_values();
        let d3 = Dataset::from_scalars(vec![3.0]).unwrap();
        let e = quadratic_score_objective(&model, &f, &sharp, &d3, &batch).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crps_point_mass_and_gaussian_oracle() {
        let model = normal_location_model();
        let data = Dataset::from_scalars(vec![2.5]).unwrap();
        // theta ~ N(0, ~0) and y_sim = theta + eps: zero the noise for a point mass
        let (f, phi) = gauss(0.4, 1e-12);
        let mut batch = McBatch::for_simulation(&f, &model, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        batch.noise.iter_mut().for_each(|e| e[0] = 0.0);
        let e = crps_objective(&model, &f, &phi, &data, &batch).unwrap();
        assert!((e.value + 2.1).abs() < 1e-9);

        // predictive N(0, 1): theta point mass at 0, unit noise
        let (f, phi) = gauss(0.0, 1e-12);
        let zero = Dataset::from_scalars(vec![0.0]).unwrap();
        let batch = McBatch::for_simulation(&f, &model, 100_000, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let e = crps_objective(&model, &f, &phi, &zero, &batch).unwrap();
        let oracle = -((2.0 / std::f64::consts::PI).sqrt() - 1.0 / std::f64::consts::PI.sqrt());
        assert!((e.value - oracle).abs() < 0.005, "{} vs {oracle}", e.value);
    }

    #[test]
    fn crps_pair_swap_symmetry() {
        let model = normal_location_model();
        let (f, phi) = gauss(0.2, 0.8);
        let data = Dataset::from_scalars(vec![0.0, 1.0, -0.4]).unwrap();
        let mut batch = McBatch::for_simulation(&f, &model, 16, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let a = crps_objective(&model, &f, &phi, &data, &batch).unwrap();
        batch.base.swap(3, 19);
        batch.noise.swap(3, 19);
        let b = crps_objective(&model, &f, &phi, &data, &batch).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn energy_matches_crps_in_one_dimension() {
        let model = normal_location_model();
        let (f, phi) = gauss(0.2, 0.8);
        let data = Dataset::from_scalars(vec![0.0, 1.0]).unwrap();
        let batch = McBatch::for_simulation(&f, &model, 16, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let a = crps_objective(&model, &f, &phi, &data, &batch).unwrap();
        let b = energy_objective(&model, &f, &phi, &data, &batch).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn energy_rejects_mismatched_outcomes() {
        let model = linear_observation_simulator(3, 1).unwrap();
        let f = Family::GaussianDiag { dim: 1 };
        let phi = f.init_params().into_values();
        let data = Dataset::from_scalars(vec![0.0]).unwrap();
        let batch = McBatch::for_simulation(&f, &model, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(energy_objective(&model, &f, &phi, &data, &batch).is_err());
        assert!(crps_objective(&model, &f, &phi, &data, &batch).is_err());
    }
}

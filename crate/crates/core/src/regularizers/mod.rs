//! KL regularizers and the VI/PVI mixing rules.
//!
//! Two mixing modes exist. `Additive` maximizes `score - lambda * r(phi)` with
//! `lambda >= 0`. `Interpolate` maximizes `lambda * score + (1 - lambda) * ELBO / n`
//! with `lambda` in `[0, 1]`, so `lambda = 1` is pure PVI and `lambda = 0` is
//! classical VI.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, contract, PviError, Result};
use crate::families::{DiagGaussian, Family, KlEstimate};
use crate::models::{Dataset, Model};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    None,
    PriorKl,
    /// Negative ELBO, which differs from `KL(q || p(theta | y))` by the
    /// constant `log p(y)`.
    PosteriorKl,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    #[default]
    Additive,
    Interpolate,
}

fn default_mc_size() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSpec {
    #[serde(default)]
    pub kind: RegularizerKind,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub mode: MixMode,
    /// Draws for Monte Carlo KL and ELBO terms.
    #[serde(default = "default_mc_size")]
    pub mc_size: usize,
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec {
            kind: RegularizerKind::None,
            lambda: 0.0,
            mode: MixMode::Additive,
            mc_size: default_mc_size(),
        }
    }
}

impl RegularizerSpec {
    pub fn validate(&self, model: &Model) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(PviError::Config(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if self.mc_size == 0 {
            return Err(PviError::Config("regularizer mc_size must be at least 1".into()));
        }
        match self.mode {
            MixMode::Interpolate => {
                if self.lambda > 1.0 {
                    return Err(PviError::Config(format!(
                        "interpolation needs lambda in [0, 1], got {}",
                        self.lambda
                    )));
                }
                if self.kind != RegularizerKind::PosteriorKl {
                    return Err(PviError::Config("interpolation mixes PVI with the ELBO; set kind = posterior_kl".into()));
                }
            }
            MixMode::Additive => {}
        }
        if self.kind == RegularizerKind::PosteriorKl && !model.has_likelihood() {
            return Err(PviError::Config(format!(
                "regularizer 'posterior_kl' needs an explicit likelihood, model '{}' is simulator-only",
                model.name
            )));
        }
        Ok(())
    }

    /// Whether the score term carries weight.
    pub fn uses_score(&self) -> bool {
        !(self.mode == MixMode::Interpolate && self.lambda == 0.0)
    }

    /// Whether the regularizer term carries weight.
    pub fn uses_regularizer(&self) -> bool {
        match self.mode {
            MixMode::Additive => self.kind != RegularizerKind::None && self.lambda > 0.0,
            MixMode::Interpolate => self.lambda < 1.0,
        }
    }
}

/// `KL(q_phi || prior)`.
pub fn prior_kl(family: &Family, phi: &[f64], prior: &DiagGaussian, draws: &[Vec<f64>]) -> Result<KlEstimate> {
    family.kl_to_gaussian_prior(phi, prior, draws)
}

/// Negative ELBO `E_q[log q(theta) - log prior(theta) - scale * sum_i log p(y_i | theta)]`
/// over reparameterized base draws. `loglik_scale` rescales a minibatch sum to
/// the full data size.
pub fn posterior_kl_surrogate(
    family: &Family,
    phi: &[f64],
    model: &Model,
    data: &Dataset,
    draws: &[Vec<f64>],
    loglik_scale: f64,
) -> Result<KlEstimate> {
    family.check_phi(phi)?;
    check_dim("prior", model.prior.dim(), family.latent_dim())?;
    if draws.is_empty() {
        return contract("negative ELBO needs at least one Monte Carlo draw");
    }
    let l = model.likelihood().map_err(|_| {
        PviError::Config(format!(
            "regularizer 'posterior_kl' needs an explicit likelihood, model '{}' is simulator-only",
            model.name
        ))
    })?;
    let dim = family.latent_dim();
    let count = draws.len() as f64;
    let mut grad = vec![0.0; family.param_dim()];
    let mut cot = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut theta = vec![0.0; dim];
    let mut values = Vec::with_capacity(draws.len());
    for u in draws {
        check_dim("base noise", u.len(), dim)?;
        family.sample_into(phi, u, &mut theta);
        let mut v = family.log_density_at_draw(phi, u) - model.prior.log_density(&theta);
        cot.fill(0.0);
        model.prior.add_grad(&theta, -1.0, &mut cot);
        let mut ll = 0.0;
        for d in data.iter() {
            ll += l.loglik_grad(&theta, &d, &mut g);
            for (c, gv) in cot.iter_mut().zip(&g) {
                *c -= loglik_scale * gv;
            }
        }
        v -= loglik_scale * ll;
        if !v.is_finite() {
            return Err(PviError::Numerical("non-finite negative ELBO term".into()));
        }
        values.push(v);
        for c in cot.iter_mut() {
            *c /= count;
        }
        family.accumulate_grad_log_det(phi, u, -1.0 / count, &mut grad);
        family.accumulate_jvp(phi, u, &cot, &mut grad);
    }
    let mean = values.iter().sum::<f64>() / count;
    let std_error = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0);
        (var / count).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(KlEstimate {
        value: mean,
        grad,
        std_error,
    })
}

/// `lambda * pvi + (1 - lambda) * vi`.
pub fn combined_objective(lambda: f64, pvi: f64, vi: f64) -> Result<f64> {
    check_unit(lambda)?;
    Ok(lambda * pvi + (1.0 - lambda) * vi)
}

/// Coordinatewise `lambda * pvi + (1 - lambda) * vi`.
pub fn combine_gradients(lambda: f64, pvi: &[f64], vi: &[f64]) -> Result<Vec<f64>> {
    check_unit(lambda)?;
    check_dim("gradient", vi.len(), pvi.len())?;
    Ok(pvi.iter().zip(vi).map(|(p, v)| lambda * p + (1.0 - lambda) * v).collect())
}

/// `score - lambda * r`.
pub fn additive_objective(lambda: f64, score: f64, reg: f64) -> Result<f64> {
    check_nonneg(lambda)?;
    Ok(score - lambda * reg)
}

/// Coordinatewise `score - lambda * r`.
pub fn additive_gradient(lambda: f64, score: &[f64], reg: &[f64]) -> Result<Vec<f64>> {
    check_nonneg(lambda)?;
    check_dim("gradient", reg.len(), score.len())?;
    Ok(score.iter().zip(reg).map(|(s, r)| s - lambda * r).collect())
}

fn check_unit(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(PviError::Config(format!("interpolation needs lambda in [0, 1], got {lambda}")));
    }
    Ok(())
}

fn check_nonneg(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(PviError::Config(format!("lambda {lambda} must be finite and >= 0")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{normal_location_model, sum_of_squares_simulator};

    #[test]
    fn prior_kl_examples() {
        let f = Family::GaussianDiag { dim: 1 };
        let prior = DiagGaussian::isotropic(1, 0.0, 1.0).unwrap();
        let at_prior = f.init_params();
        let kl = prior_kl(&f, &at_prior, &prior, &[]).unwrap();
        assert_eq!(kl.value, 0.0);
        assert!(kl.grad.iter().all(|g| *g == 0.0));
        let shifted = f.gaussian_params(&[1.0], &[0.0]).unwrap();
        let kl = prior_kl(&f, &shifted, &prior, &[]).unwrap();
        assert!((kl.value - 0.5).abs() < 1e-15);
        assert!((kl.grad[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mixing_endpoints() {
        assert_eq!(combined_objective(1.0, 3.0, -7.0).unwrap(), 3.0);
        assert_eq!(combined_objective(0.0, 3.0, -7.0).unwrap(), -7.0);
        assert_eq!(combined_objective(0.5, 3.0, -7.0).unwrap(), -2.0);
        assert!(combined_objective(1.5, 0.0, 0.0).is_err());
        assert!(additive_objective(-1.0, 0.0, 0.0).is_err());
        assert_eq!(additive_objective(2.0, 1.0, 0.25).unwrap(), 0.5);
        assert_eq!(combine_gradients(0.25, &[4.0, 0.0], &[0.0, 8.0]).unwrap(), vec![1.0, 6.0]);
    }

    #[test]
    fn posterior_kl_needs_likelihood() {
        let model = sum_of_squares_simulator(3, 1).unwrap();
        let spec = RegularizerSpec {
            kind: RegularizerKind::PosteriorKl,
            lambda: 1.0,
            ..Default::default()
        };
        assert!(matches!(spec.validate(&model), Err(PviError::Config(_))));
        let f = Family::GaussianDiag { dim: 1 };
        let data = Dataset::from_scalars(vec![1.0]).unwrap();
        let r = posterior_kl_surrogate(&f, &f.init_params(), &model, &data, &[vec![0.0]], 1.0);
        assert!(matches!(r, Err(PviError::Config(_))));
    }

    #[test]
    fn interpolation_requires_posterior_kind() {
        let model = normal_location_model();
        let spec = RegularizerSpec {
            kind: RegularizerKind::PriorKl,
            lambda: 0.5,
            mode: MixMode::Interpolate,
            mc_size: 4,
        };
        assert!(spec.validate(&model).is_err());
    }
}

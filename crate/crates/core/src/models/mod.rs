//! Statistical models and synthetic data generators.
//!
//! A [`Model`] carries a diagonal Gaussian prior plus an explicit likelihood,
//! a differentiable simulator, or both. Explicit likelihoods feed the log and
//! quadratic scores; simulators feed CRPS and the energy score.

mod builtin;
mod data;
mod generate;

use std::fmt::Debug;
use std::sync::Arc;

use rand::RngCore;

use crate::error::{PviError, Result};
use crate::families::DiagGaussian;

pub use builtin::{
    binomial_logit_model, categorical_model, linear_observation_simulator, linear_regression_model,
    normal_location_model, sum_of_squares_simulator, BinomialLogit, Categorical, LinearObservation,
    LinearRegression, NormalLocation, SumOfSquares, VotingLevel,
};
pub(crate) use data::SortedOutcomes;
pub use data::{Dataset, Datum};
pub use generate::{
    generate_misspec_regression, generate_normal_data, generate_sum_of_squares_data, generate_voting_data,
    voting_cells, BetaPopulation, Generated, MisspecGrid, MixtureComponent, VotingCell, VotingTruth,
};

/// An explicit likelihood `p(y | theta, x)`.
pub trait Likelihood: Debug + Send + Sync {
    fn theta_dim(&self) -> usize;

    /// `log p(datum.y | theta, datum.x)`.
    fn loglik(&self, theta: &[f64], datum: &Datum<'_>) -> f64;

    /// Writes `d loglik / d theta` into `grad` and returns `loglik`.
    fn loglik_grad(&self, theta: &[f64], datum: &Datum<'_>, grad: &mut [f64]) -> f64;

    /// `log C` with `sup_theta p(datum.y | theta) <= C`, when known.
    fn log_bound(&self, _datum: &Datum<'_>) -> Option<f64> {
        None
    }

    /// Every outcome value the model can produce for this datum, for
    /// discrete models.
    fn outcome_support(&self, _datum: &Datum<'_>) -> Option<Vec<f64>> {
        None
    }

    /// Checks that a datum is in the model's domain.
    fn check_datum(&self, _datum: &Datum<'_>) -> Result<()> {
        Ok(())
    }
}

/// A differentiable simulator `y = f(theta, x, eps)`.
pub trait Simulator: Debug + Send + Sync {
    fn theta_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    /// Whether simulations depend on the datum's covariates.
    fn uses_covariates(&self) -> bool {
        false
    }

    fn draw_noise(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Deterministic in `(theta, x, eps)`.
    fn simulate(&self, theta: &[f64], x: &[f64], eps: &[f64], out: &mut [f64]);

    /// Adds `cotangent^T d f / d theta` into `grad`.
    fn simulate_vjp(&self, theta: &[f64], x: &[f64], eps: &[f64], cotangent: &[f64], grad: &mut [f64]);
}

/// A model: prior, parameter names and its evaluation routes.
#[derive(Clone, Debug)]
pub struct Model {
    pub name: String,
    pub param_names: Vec<String>,
    pub prior: DiagGaussian,
    likelihood: Option<Arc<dyn Likelihood>>,
    simulator: Option<Arc<dyn Simulator>>,
}

impl Model {
    pub fn new(
        name: impl Into<String>,
        param_names: Vec<String>,
        prior: DiagGaussian,
        likelihood: Option<Arc<dyn Likelihood>>,
        simulator: Option<Arc<dyn Simulator>>,
    ) -> Result<Self> {
        let dim = param_names.len();
        if prior.dim() != dim {
            return Err(PviError::Config("prior dimension differs from parameter count".into()));
        }
        if likelihood.is_none() && simulator.is_none() {
            return Err(PviError::Config("a model needs a likelihood or a simulator".into()));
        }
        if likelihood.as_ref().is_some_and(|l| l.theta_dim() != dim)
            || simulator.as_ref().is_some_and(|s| s.theta_dim() != dim)
        {
            return Err(PviError::Config("component dimension differs from parameter count".into()));
        }
        Ok(Model {
            name: name.into(),
            param_names,
            prior,
            likelihood,
            simulator,
        })
    }

    pub fn theta_dim(&self) -> usize {
        self.param_names.len()
    }

    pub fn likelihood(&self) -> Result<&dyn Likelihood> {
        self.likelihood
            .as_deref()
            .ok_or_else(|| PviError::Config(format!("model '{}' has no explicit likelihood", self.name)))
    }

    pub fn simulator(&self) -> Result<&dyn Simulator> {
        self.simulator
            .as_deref()
            .ok_or_else(|| PviError::Config(format!("model '{}' has no simulator", self.name)))
    }

    pub fn has_likelihood(&self) -> bool {
        self.likelihood.is_some()
    }

    pub fn has_simulator(&self) -> bool {
        self.simulator.is_some()
    }

    /// Drops the simulator, leaving an explicit-only model.
    pub fn without_simulator(mut self) -> Self {
        self.simulator = None;
        self
    }

    /// Checks every datum against the model's components.
    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if let Some(l) = &self.likelihood {
            for d in data.iter() {
                l.check_datum(&d)?;
            }
        }
        if let Some(s) = &self.simulator {
            if data.outcome_dim() != s.output_dim() {
                return Err(PviError::Data(format!(
                    "outcome dimension {} but simulator produces {}",
                    data.outcome_dim(),
                    s.output_dim()
                )));
            }
        }
        Ok(())
    }
}

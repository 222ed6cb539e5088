use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{Datum, Likelihood, Model, Simulator};
use crate::error::{PviError, Result};
use crate::families::DiagGaussian;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn normals(rng: &mut dyn RngCore, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}[{i}]")).collect()
}

/// `y | theta ~ N(theta, 1)`; also simulates `y = theta + eps`.
#[derive(Debug, Clone, Copy)]
pub struct NormalLocation;

impl Likelihood for NormalLocation {
    fn theta_dim(&self) -> usize {
        1
    }

    fn loglik(&self, theta: &[f64], datum: &Datum<'_>) -> f64 {
        let r = datum.y[0] - theta[0];
        -0.5 * r * r - HALF_LN_2PI
    }

    fn loglik_grad(&self, theta: &[f64], datum: &Datum<'_>, grad: &mut [f64]) -> f64 {
        let r = datum.y[0] - theta[0];
        grad[0] = r;
        -0.5 * r * r - HALF_LN_2PI
    }

    fn log_bound(&self, _datum: &Datum<'_>) -> Option<f64> {
        Some(-HALF_LN_2PI)
    }
}

impl Simulator for NormalLocation {
    fn theta_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn draw_noise(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        normals(rng, 1)
    }

    fn simulate(&self, theta: &[f64], _x: &[f64], eps: &[f64], out: &mut [f64]) {
        out[0] = theta[0] + eps[0];
    }

    fn simulate_vjp(&self, _theta: &[f64], _x: &[f64], _eps: &[f64], cot: &[f64], grad: &mut [f64]) {
        grad[0] += cot[0];
    }
}

pub fn normal_location_model() -> Model {
    let l = Arc::new(NormalLocation);
    Model::new(
        "normal_location",
        vec!["theta".into()],
        DiagGaussian::isotropic(1, 0.0, 1.0).expect("valid prior"),
        Some(l.clone()),
        Some(l),
    )
    .expect("consistent model")
}

/// `y = x^T beta + sigma * eps` with a fixed noise scale.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    pub dim: usize,
    pub sigma: f64,
}

impl LinearRegression {
    fn mean(&self, beta: &[f64], x: &[f64]) -> f64 {
        beta.iter().zip(x).map(|(b, x)| b * x).sum()
    }
}

impl Likelihood for LinearRegression {
    fn theta_dim(&self) -> usize {
        self.dim
    }

    fn loglik(&self, theta: &[f64], datum: &Datum<'_>) -> f64 {
        let z = (datum.y[0] - self.mean(theta, datum.x)) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - HALF_LN_2PI
    }

    fn loglik_grad(&self, theta: &[f64], datum: &Datum<'_>, grad: &mut [f64]) -> f64 {
        let r = datum.y[0] - self.mean(theta, datum.x);
        let s2 = self.sigma * self.sigma;
        for (g, x) in grad.iter_mut().zip(datum.x) {
            *g = x * r / s2;
        }
        -0.5 * r * r / s2 - self.sigma.ln() - HALF_LN_2PI
    }

    fn log_bound(&self, _datum: &Datum<'_>) -> Option<f64> {
        Some(-self.sigma.ln() - HALF_LN_2PI)
    }

    fn check_datum(&self, datum: &Datum<'_>) -> Result<()> {
        if datum.x.len() != self.dim {
            return Err(PviError::Data(format!(
                "datum {} has {} covariates, model expects {}",
                datum.index,
                datum.x.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

impl Simulator for LinearRegression {
    fn theta_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn uses_covariates(&self) -> bool {
        true
    }

    fn draw_noise(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        normals(rng, 1)
    }

    fn simulate(&self, theta: &[f64], x: &[f64], eps: &[f64], out: &mut [f64]) {
        out[0] = self.mean(theta, x) + self.sigma * eps[0];
    }

    fn simulate_vjp(&self, _theta: &[f64], x: &[f64], _eps: &[f64], cot: &[f64], grad: &mut [f64]) {
        for (g, x) in grad.iter_mut().zip(x) {
            *g += cot[0] * x;
        }
    }
}

pub fn linear_regression_model(dim: usize, sigma: f64) -> Result<Model> {
    if dim == 0 || !(sigma > 0.0) {
        return Err(PviError::Config("regression needs dim >= 1 and sigma > 0".into()));
    }
    let m = Arc::new(LinearRegression { dim, sigma });
    Model::new(
        "linear_regression",
        names("beta", dim),
        DiagGaussian::isotropic(dim, 0.0, 1.0)?,
        Some(m.clone()),
        Some(m),
    )
}

/// Nesting levels of the binomial turnout model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotingLevel {
    /// `beta1[state]`
    StateOnly,
    /// `beta1[state] + beta2[ethnicity]`
    StateEthnicity,
    /// `beta1[state] + beta2[ethnicity] + beta3 * x`
    SharedSlope,
    /// `beta1[state] + beta2[ethnicity] + beta3[state] * x`
    StateSlope,
}

/// Binomial cells with a logit link. Covariates are `(state, ethnicity, income)`.
#[derive(Debug, Clone)]
pub struct BinomialLogit {
    pub level: VotingLevel,
    pub states: usize,
    pub ethnicities: usize,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

impl BinomialLogit {
    pub fn param_count(&self) -> usize {
        let (s, e) = (self.states, self.ethnicities);
        match self.level {
            VotingLevel::StateOnly => s,
            VotingLevel::StateEthnicity => s + e,
            VotingLevel::SharedSlope => s + e + 1,
            VotingLevel::StateSlope => 2 * s + e,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = names("state", self.states);
        if self.level != VotingLevel::StateOnly {
            n.extend(names("ethnicity", self.ethnicities));
        }
        match self.level {
            VotingLevel::SharedSlope => n.push("slope".into()),
            VotingLevel::StateSlope => n.extend(names("slope", self.states)),
            _ => {}
        }
        n
    }

    fn cell(&self, x: &[f64]) -> (usize, usize, f64) {
        (x[0] as usize, x[1] as usize, x[2])
    }

    /// Linear predictor and the indices (with coefficients) it depends on.
    fn linear_predictor(&self, theta: &[f64], x: &[f64]) -> (f64, [(usize, f64); 3], usize) {
        let (s, e, inc) = self.cell(x);
        let mut terms = [(s, 1.0), (0, 0.0), (0, 0.0)];
        let mut used = 1;
        if self.level != VotingLevel::StateOnly {
            terms[1] = (self.states + e, 1.0);
            used = 2;
        }
        match self.level {
            VotingLevel::SharedSlope => {
                terms[2] = (self.states + self.ethnicities, inc);
                used = 3;
            }
            VotingLevel::StateSlope => {
                terms[2] = (self.states + self.ethnicities + s, inc);
                used = 3;
            }
            _ => {}
        }
        let eta = terms[..used].iter().map(|(i, c)| theta[*i] * c).sum();
        (eta, terms, used)
    }

    fn trials(datum: &Datum<'_>) -> u64 {
        datum.trials.unwrap_or(1)
    }
}

impl Likelihood for BinomialLogit {
    fn theta_dim(&self) -> usize {
        self.param_count()
    }

    fn loglik(&self, theta: &[f64], datum: &Datum<'_>) -> f64 {
        let (eta, _, _) = self.linear_predictor(theta, datum.x);
        let n = Self::trials(datum);
        let y = datum.y[0];
        ln_choose(n, y as u64) + y * eta - n as f64 * softplus(eta)
    }

    fn loglik_grad(&self, theta: &[f64], datum: &Datum<'_>, grad: &mut [f64]) -> f64 {
        let (eta, terms, used) = self.linear_predictor(theta, datum.x);
        let n = Self::trials(datum);
        let y = datum.y[0];
        let d_eta = y - n as f64 * sigmoid(eta);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (i, c) in &terms[..used] {
            grad[*i] += d_eta * c;
        }
        ln_choose(n, y as u64) + y * eta - n as f64 * softplus(eta)
    }

    fn log_bound(&self, datum: &Datum<'_>) -> Option<f64> {
        // mass at y is maximal at p = y / N
        let n = Self::trials(datum);
        let y = datum.y[0];
        let nf = n as f64;
        let p = y / nf;
        let mut b = ln_choose(n, y as u64);
        if y > 0.0 {
            b += y * p.ln();
        }
        if y < nf {
            b += (nf - y) * (1.0 - p).ln();
        }
        Some(b)
    }

    fn outcome_support(&self, datum: &Datum<'_>) -> Option<Vec<f64>> {
        Some((0..=Self::trials(datum)).map(|k| k as f64).collect())
    }

    fn check_datum(&self, datum: &Datum<'_>) -> Result<()> {
        let bad = |msg: String| Err(PviError::Data(format!("datum {}: {msg}", datum.index)));
        if datum.x.len() != 3 {
            return bad("binomial cells need covariates (state, ethnicity, income)".into());
        }
        let (s, e) = (datum.x[0], datum.x[1]);
        if s < 0.0 || s.fract() != 0.0 || s as usize >= self.states {
            return bad(format!("state index {s} out of range 0..{}", self.states));
        }
        if e < 0.0 || e.fract() != 0.0 || e as usize >= self.ethnicities {
            return bad(format!("ethnicity index {e} out of range 0..{}", self.ethnicities));
        }
        let y = datum.y[0];
        if y < 0.0 || y.fract() != 0.0 || y > Self::trials(datum) as f64 {
            return bad(format!("count {y} outside 0..={}", Self::trials(datum)));
        }
        Ok(())
    }
}

pub fn binomial_logit_model(level: VotingLevel, states: usize, ethnicities: usize) -> Result<Model> {
    if states == 0 || ethnicities == 0 {
        return Err(PviError::Config("need at least one state and ethnicity".into()));
    }
    let m = BinomialLogit {
        level,
        states,
        ethnicities,
    };
    let names = m.param_names();
    let dim = names.len();
    Model::new(
        "binomial_logit",
        names,
        DiagGaussian::isotropic(dim, 0.0, 10.0)?,
        Some(Arc::new(m)),
        None,
    )
}

/// Categorical outcomes `1..=I` with softmax probabilities over `theta`.
#[derive(Debug, Clone)]
pub struct Categorical {
    pub categories: usize,
}

impl Categorical {
    fn log_softmax(theta: &[f64]) -> Vec<f64> {
        let max = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + theta.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        theta.iter().map(|t| t - lse).collect()
    }

    fn index(&self, y: f64) -> usize {
        y as usize - 1
    }
}

impl Likelihood for Categorical {
    fn theta_dim(&self) -> usize {
        self.categories
    }

    fn loglik(&self, theta: &[f64], datum: &Datum<'_>) -> f64 {
        Self::log_softmax(theta)[self.index(datum.y[0])]
    }

    fn loglik_grad(&self, theta: &[f64], datum: &Datum<'_>, grad: &mut [f64]) -> f64 {
        let ls = Self::log_softmax(theta);
        let c = self.index(datum.y[0]);
        for (k, g) in grad.iter_mut().enumerate() {
            *g = if k == c { 1.0 } else { 0.0 } - ls[k].exp();
        }
        ls[c]
    }

    fn log_bound(&self, _datum: &Datum<'_>) -> Option<f64> {
        Some(0.0)
    }

    fn outcome_support(&self, _datum: &Datum<'_>) -> Option<Vec<f64>> {
        Some((1..=self.categories).map(|c| c as f64).collect())
    }

    fn check_datum(&self, datum: &Datum<'_>) -> Result<()> {
        let y = datum.y[0];
        if y < 1.0 || y.fract() != 0.0 || y as usize > self.categories {
            return Err(PviError::Data(format!(
                "datum {}: outcome {y} outside 1..={}",
                datum.index, self.categories
            )));
        }
        Ok(())
    }
}

pub fn categorical_model(categories: usize) -> Result<Model> {
    if categories < 2 {
        return Err(PviError::Config("categorical model needs at least 2 categories".into()));
    }
    Model::new(
        "categorical",
        names("logit", categories),
        DiagGaussian::isotropic(categories, 0.0, 1.0)?,
        Some(Arc::new(Categorical { categories })),
        None,
    )
}

/// Observes only `||X beta + eps||^2`, with `X` (m x d) and `eps` (m) drawn
/// inside the noise record. Noise layout: `X` row-major, then `eps`.
#[derive(Debug, Clone)]
pub struct SumOfSquares {
    pub rows: usize,
    pub dim: usize,
}

impl SumOfSquares {
    fn residuals(&self, theta: &[f64], eps: &[f64]) -> Vec<f64> {
        let (m, d) = (self.rows, self.dim);
        let (x, e) = eps.split_at(m * d);
        (0..m)
            .map(|r| (0..d).map(|k| x[r * d + k] * theta[k]).sum::<f64>() + e[r])
            .collect()
    }
}

impl Simulator for SumOfSquares {
    fn theta_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn draw_noise(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        normals(rng, self.rows * (self.dim + 1))
    }

    fn simulate(&self, theta: &[f64], _x: &[f64], eps: &[f64], out: &mut [f64]) {
        out[0] = self.residuals(theta, eps).iter().map(|r| r * r).sum();
    }

    fn simulate_vjp(&self, theta: &[f64], _x: &[f64], eps: &[f64], cot: &[f64], grad: &mut [f64]) {
        let d = self.dim;
        let r = self.residuals(theta, eps);
        for (row, res) in r.iter().enumerate() {
            for k in 0..d {
                grad[k] += cot[0] * 2.0 * res * eps[row * d + k];
            }
        }
    }
}

pub fn sum_of_squares_simulator(rows: usize, dim: usize) -> Result<Model> {
    if rows == 0 || dim == 0 {
        return Err(PviError::Config("sum-of-squares simulator needs m >= 1 and d >= 1".into()));
    }
    Model::new(
        "sum_of_squares",
        names("beta", dim),
        DiagGaussian::isotropic(dim, 0.0, 1.0)?,
        None,
        Some(Arc::new(SumOfSquares { rows, dim })),
    )
}

/// Full observation vector `X beta + eps` (m outputs), `X` drawn in the noise.
#[derive(Debug, Clone)]
pub struct LinearObservation {
    pub rows: usize,
    pub dim: usize,
}

impl Simulator for LinearObservation {
    fn theta_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.rows
    }

    fn draw_noise(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        normals(rng, self.rows * (self.dim + 1))
    }

    fn simulate(&self, theta: &[f64], _x: &[f64], eps: &[f64], out: &mut [f64]) {
        let inner = SumOfSquares {
            rows: self.rows,
            dim: self.dim,
        };
        out.copy_from_slice(&inner.residuals(theta, eps));
    }

    fn simulate_vjp(&self, _theta: &[f64], _x: &[f64], eps: &[f64], cot: &[f64], grad: &mut [f64]) {
        let d = self.dim;
        for (row, c) in cot.iter().enumerate() {
            for k in 0..d {
                grad[k] += c * eps[row * d + k];
            }
        }
    }
}

pub fn linear_observation_simulator(rows: usize, dim: usize) -> Result<Model> {
    if rows == 0 || dim == 0 {
        return Err(PviError::Config("linear observation simulator needs m >= 1 and d >= 1".into()));
    }
    Model::new(
        "linear_observation",
        names("beta", dim),
        DiagGaussian::isotropic(dim, 0.0, 1.0)?,
        None,
        Some(Arc::new(LinearObservation { rows, dim })),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Dataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn datum<'a>(y: &'a [f64], x: &'a [f64], trials: Option<u64>) -> Datum<'a> {
        Datum {
            index: 0,
            y,
            x,
            trials,
        }
    }

    fn fd_check(l: &dyn Likelihood, theta: &[f64], d: &Datum<'_>, tol: f64) {
        let mut g = vec![0.0; theta.len()];
        l.loglik_grad(theta, d, &mut g);
        let h = 1e-5;
        for k in 0..theta.len() {
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[k] += h;
            m[k] -= h;
            let fd = (l.loglik(&p, d) - l.loglik(&m, d)) / (2.0 * h);
            let denom = fd.abs().max(g[k].abs()).max(1e-6);
            assert!((fd - g[k]).abs() / denom < tol, "coord {k}: fd {fd} vs {}", g[k]);
        }
    }

    fn sim_fd_check(s: &dyn Simulator, theta: &[f64], x: &[f64], eps: &[f64]) {
        let out_dim = s.output_dim();
        let cot: Vec<f64> = (0..out_dim).map(|i| 0.3 + i as f64 * 0.1).collect();
        let mut g = vec![0.0; theta.len()];
        s.simulate_vjp(theta, x, eps, &cot, &mut g);
        let h = 1e-5;
        let eval = |t: &[f64]| {
            let mut out = vec![0.0; out_dim];
            s.simulate(t, x, eps, &mut out);
            out.iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>()
        };
        for k in 0..theta.len() {
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[k] += h;
            m[k] -= h;
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            let denom = fd.abs().max(g[k].abs()).max(1e-6);
            assert!((fd - g[k]).abs() / denom < 1e-4, "coord {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn normal_location_examples() {
        let m = normal_location_model();
        let l = m.likelihood().unwrap();
        assert!((l.loglik(&[0.0], &datum(&[0.0], &[], None)) + HALF_LN_2PI).abs() < 1e-15);
        let mut g = [0.0];
        l.loglik_grad(&[0.0], &datum(&[1.0], &[], None), &mut g);
        assert_eq!(g[0], 1.0);
        assert!((l.log_bound(&datum(&[0.0], &[], None)).unwrap().exp() - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn binomial_half_mass() {
        let m = binomial_logit_model(VotingLevel::StateSlope, 2, 2).unwrap();
        let l = m.likelihood().unwrap();
        let theta = vec![0.0; m.theta_dim()];
        let lp = l.loglik(&theta, &datum(&[1.0], &[1.0, 0.0, 1.0], Some(2)));
        assert!((lp - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn binomial_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for level in [
            VotingLevel::StateOnly,
            VotingLevel::StateEthnicity,
            VotingLevel::SharedSlope,
            VotingLevel::StateSlope,
        ] {
            let m = binomial_logit_model(level, 3, 2).unwrap();
            let l = m.likelihood().unwrap();
            for _ in 0..20 {
                let theta: Vec<f64> = (0..m.theta_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
                let x = [rng.random_range(0..3) as f64, rng.random_range(0..2) as f64, rng.random_range(-1.0..1.0)];
                let y = [rng.random_range(0..=7) as f64];
                fd_check(l, &theta, &datum(&y, &x, Some(7)), 1e-5);
            }
            let zero = vec![0.0; m.theta_dim()];
            fd_check(l, &zero, &datum(&[3.0], &[1.0, 1.0, 1.0], Some(5)), 1e-5);
        }
    }

    #[test]
    fn binomial_bound_holds() {
        let m = binomial_logit_model(VotingLevel::SharedSlope, 2, 2).unwrap();
        let l = m.likelihood().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let theta: Vec<f64> = (0..m.theta_dim()).map(|_| rng.random_range(-4.0..4.0)).collect();
            let trials = rng.random_range(1..30u64);
            let y = [rng.random_range(0..=trials) as f64];
            let x = [rng.random_range(0..2) as f64, rng.random_range(0..2) as f64, rng.random_range(-1.0..1.0)];
            let d = datum(&y, &x, Some(trials));
            assert!(l.loglik(&theta, &d) <= l.log_bound(&d).unwrap() + 1e-12);
        }
    }

    #[test]
    fn binomial_rejects_out_of_range_indices() {
        let m = binomial_logit_model(VotingLevel::StateOnly, 2, 2).unwrap();
        let d = Dataset::new(vec![vec![1.0]], Some(vec![vec![5.0, 0.0, 0.0]]), Some(vec![3])).unwrap();
        assert!(m.check_data(&d).is_err());
    }

    #[test]
    fn regression_examples() {
        let m = linear_regression_model(3, 1.0).unwrap();
        let l = m.likelihood().unwrap();
        let d = datum(&[0.0], &[0.4, -2.0, 1.0], None);
        assert!((l.loglik(&[0.0; 3], &d) + HALF_LN_2PI).abs() < 1e-15);
        fd_check(l, &[0.2, 0.1, -0.7], &datum(&[1.3], &[0.4, -2.0, 1.0], None), 1e-6);
        let s = m.simulator().unwrap();
        sim_fd_check(s, &[0.2, 0.1, -0.7], &[0.4, -2.0, 1.0], &[0.3]);
    }

    #[test]
    fn categorical_gradient_and_support() {
        let m = categorical_model(3).unwrap();
        let l = m.likelihood().unwrap();
        fd_check(l, &[0.3, -1.0, 0.8], &datum(&[2.0], &[], None), 1e-6);
        assert_eq!(l.outcome_support(&datum(&[1.0], &[], None)).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn sum_of_squares_examples() {
        let m = sum_of_squares_simulator(4, 2).unwrap();
        let s = m.simulator().unwrap();
        let mut out = [1.0];
        s.simulate(&[0.0, 0.0], &[], &[0.0; 12], &mut out);
        assert_eq!(out[0], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let eps = s.draw_noise(&mut rng);
            let theta = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            sim_fd_check(s, &theta, &[], &eps);
            let mut a = [0.0];
            let mut b = [0.0];
            s.simulate(&theta, &[], &eps, &mut a);
            s.simulate(&theta, &[], &eps, &mut b);
            assert_eq!(a[0].to_bits(), b[0].to_bits());
        }
    }

    #[test]
    fn linear_observation_vjp() {
        let m = linear_observation_simulator(3, 2).unwrap();
        let s = m.simulator().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let eps = s.draw_noise(&mut rng);
        sim_fd_check(s, &[0.5, -1.0], &[], &eps);
    }
}

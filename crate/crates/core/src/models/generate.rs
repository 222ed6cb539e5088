//! Synthetic data generators. Every generator owns a `ChaCha8Rng` seeded from
//! its `seed` argument, so output is bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{PviError, Result};

/// A dataset together with the per-datum parameters that produced it.
#[derive(Clone, Debug)]
pub struct Generated {
    pub data: Dataset,
    pub latent: Vec<Vec<f64>>,
}

pub fn generate_normal_data(n: usize, sigma_true: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !(sigma_true > 0.0) || !sigma_true.is_finite() {
        return Err(PviError::Config("normal data needs n >= 1 and sigma_true > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = (0..n).map(|_| sigma_true * rng.sample::<f64, _>(StandardNormal)).collect();
    Dataset::from_scalars(y)
}

/// Per-datum coefficients `(1 - alpha) beta_0 + alpha beta_j`, `j` uniform on `1..=g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisspecGrid {
    pub alpha: f64,
    pub base: Vec<f64>,
    pub groups: Vec<Vec<f64>>,
}

impl MisspecGrid {
    pub fn new(alpha: f64, base: Vec<f64>, groups: Vec<Vec<f64>>) -> Result<Self> {
        let grid = MisspecGrid { alpha, base, groups };
        grid.validate()?;
        Ok(grid)
    }

    /// Base and group coefficients with IID standard normal entries.
    pub fn standard_normal(dim: usize, groups: usize, alpha: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>();
        let base = draw();
        let groups = (0..groups).map(|_| draw()).collect();
        Self::new(alpha, base, groups)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PviError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.groups.is_empty() {
            return Err(PviError::Config("misspecification grid needs g >= 1 groups".into()));
        }
        let d = self.base.len();
        if d == 0 || self.groups.iter().any(|g| g.len() != d) {
            return Err(PviError::Config("grid coefficient vectors must share a nonzero length".into()));
        }
        if self.base.iter().chain(self.groups.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(PviError::Config("grid coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// The interpolated coefficient vector of group `j` (0-based).
    pub fn coefficients(&self, j: usize) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.groups[j])
            .map(|(b0, bj)| (1.0 - self.alpha) * b0 + self.alpha * bj)
            .collect()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.coefficients(rng.random_range(0..self.groups.len()))
    }
}

pub fn generate_misspec_regression(n: usize, dim: usize, grid: &MisspecGrid, seed: u64) -> Result<Generated> {
    grid.validate()?;
    if n == 0 || grid.dim() != dim {
        return Err(PviError::Config(format!(
            "misspec regression needs n >= 1 and grid dimension {dim}, got {}",
            grid.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let beta = grid.draw(&mut rng);
        let x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let eps: f64 = rng.sample(StandardNormal);
        y.push(vec![x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + eps]);
        xs.push(x);
        latent.push(beta);
    }
    Ok(Generated {
        data: Dataset::new(y, Some(xs), None)?,
        latent,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// Population of per-datum coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaPopulation {
    /// Isotropic Gaussian mixture.
    Mixture { components: Vec<MixtureComponent> },
    Grid(MisspecGrid),
}

impl BetaPopulation {
    /// Equal-weight mixture of `N(1, 0.25^2)` and `N(3, 0.25^2)` in one dimension.
    pub fn bimodal() -> Self {
        let c = |m: f64| MixtureComponent {
            weight: 0.5,
            mean: vec![m],
            std: 0.25,
        };
        BetaPopulation::Mixture {
            components: vec![c(1.0), c(3.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BetaPopulation::Grid(g) => g.validate(),
            BetaPopulation::Mixture { components } => {
                let Some(first) = components.first() else {
                    return Err(PviError::Config("mixture needs at least one component".into()));
                };
                let d = first.mean.len();
                for c in components {
                    if c.mean.len() != d || d == 0 {
                        return Err(PviError::Config("mixture means must share a nonzero length".into()));
                    }
                    if !(c.weight > 0.0) || !(c.std >= 0.0) || c.mean.iter().any(|m| !m.is_finite()) {
                        return Err(PviError::Config("mixture weights must be positive and stds nonnegative".into()));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BetaPopulation::Grid(g) => g.dim(),
            BetaPopulation::Mixture { components } => components[0].mean.len(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            BetaPopulation::Grid(g) => g.draw(rng),
            BetaPopulation::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut pick = rng.random::<f64>() * total;
                let mut chosen = &components[components.len() - 1];
                for c in components {
                    if pick < c.weight {
                        chosen = c;
                        break;
                    }
                    pick -= c.weight;
                }
                chosen
                    .mean
                    .iter()
                    .map(|m| m + chosen.std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        }
    }

    /// `count` independent draws from the population.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count).map(|_| self.draw(&mut rng)).collect())
    }
}

/// Observations `||X beta_i + eps||^2` with per-datum `beta_i` from `population`.
pub fn generate_sum_of_squares_data(
    n: usize,
    rows: usize,
    population: &BetaPopulation,
    seed: u64,
) -> Result<Generated> {
    population.validate()?;
    if n == 0 || rows == 0 {
        return Err(PviError::Config("sum-of-squares data needs n >= 1 and m >= 1".into()));
    }
    let d = population.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let beta = population.draw(&mut rng);
        let mut total = 0.0;
        for _ in 0..rows {
            let mut r = 0.0;
            for b in &beta {
                r += rng.sample::<f64, _>(StandardNormal) * b;
            }
            r += rng.sample::<f64, _>(StandardNormal);
            total += r * r;
        }
        y.push(total);
        latent.push(beta);
    }
    debug_assert!(latent.iter().all(|b| b.len() == d));
    Ok(Generated {
        data: Dataset::from_scalars(y)?,
        latent,
    })
}

/// Coefficient tables of the binomial turnout truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VotingTruth {
    pub state_intercepts: Vec<f64>,
    pub ethnicity_effects: Vec<f64>,
    pub state_slopes: Vec<f64>,
}

impl VotingTruth {
    pub fn zeros(states: usize, ethnicities: usize) -> Self {
        VotingTruth {
            state_intercepts: vec![0.0; states],
            ethnicity_effects: vec![0.0; ethnicities],
            state_slopes: vec![0.0; states],
        }
    }

    /// IID normal coefficients: intercepts `N(0, 0.5^2)`, ethnicity effects
    /// `N(0, 0.5^2)`, slopes `N(0, slope_spread^2)`.
    pub fn random(states: usize, ethnicities: usize, slope_spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |s: f64, k: usize| (0..k).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
        VotingTruth {
            state_intercepts: draw(0.5, states),
            ethnicity_effects: draw(0.5, ethnicities),
            state_slopes: draw(slope_spread, states),
        }
    }

    pub fn states(&self) -> usize {
        self.state_intercepts.len()
    }

    pub fn ethnicities(&self) -> usize {
        self.ethnicity_effects.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states() == 0 || self.ethnicities() == 0 || self.state_slopes.len() != self.states() {
            return Err(PviError::Config(
                "voting truth needs nonempty tables with one slope per state".into(),
            ));
        }
        Ok(())
    }

    pub fn probability(&self, cell: &VotingCell) -> f64 {
        let eta = self.state_intercepts[cell.state]
            + self.ethnicity_effects[cell.ethnicity]
            + self.state_slopes[cell.state] * cell.income;
        1.0 / (1.0 + (-eta).exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VotingCell {
    pub state: usize,
    pub ethnicity: usize,
    pub income: f64,
    pub trials: u64,
}

/// Every `(state, ethnicity, income)` combination, with `income_levels`
/// equally spaced levels centered on zero in `[-1, 1]`.
pub fn voting_cells(states: usize, ethnicities: usize, income_levels: usize, trials: u64) -> Vec<VotingCell> {
    let level = |l: usize| {
        if income_levels <= 1 {
            0.0
        } else {
            -1.0 + 2.0 * l as f64 / (income_levels - 1) as f64
        }
    };
    let mut cells = Vec::with_capacity(states * ethnicities * income_levels);
    for state in 0..states {
        for ethnicity in 0..ethnicities {
            for l in 0..income_levels {
                cells.push(VotingCell {
                    state,
                    ethnicity,
                    income: level(l),
                    trials,
                });
            }
        }
    }
    cells
}

pub fn generate_voting_data(truth: &VotingTruth, cells: &[VotingCell], seed: u64) -> Result<Dataset> {
    truth.validate()?;
    if cells.is_empty() {
        return Err(PviError::Config("voting data needs at least one cell".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(cells.len());
    let mut x = Vec::with_capacity(cells.len());
    let mut counts = Vec::with_capacity(cells.len());
    for c in cells {
        if c.state >= truth.states() || c.ethnicity >= truth.ethnicities() {
            return Err(PviError::Config(format!(
                "cell ({}, {}) outside the coefficient tables",
                c.state, c.ethnicity
            )));
        }
        let p = truth.probability(c);
        let draw = Binomial::new(c.trials, p).map_err(|e| PviError::Numerical(e.to_string()))?;
        y.push(vec![draw.sample(&mut rng) as f64]);
        x.push(vec![c.state as f64, c.ethnicity as f64, c.income]);
        counts.push(c.trials);
    }
    Dataset::new(y, Some(x), Some(counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_std(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, var.sqrt())
    }

    #[test]
    fn normal_data_is_reproducible_and_calibrated() {
        let a = generate_normal_data(5, 2.0, 7).unwrap();
        let b = generate_normal_data(5, 2.0, 7).unwrap();
        assert_eq!(a, b);
        let big = generate_normal_data(100_000, 2.0, 1).unwrap().scalar_outcomes().unwrap();
        assert!((mean_std(&big).1 - 2.0).abs() < 0.03);
        let unit = generate_normal_data(100_000, 1.0, 2).unwrap().scalar_outcomes().unwrap();
        assert!(mean_std(&unit).0.abs() < 0.02);
        assert!(generate_normal_data(0, 1.0, 0).is_err());
        assert!(generate_normal_data(3, 0.0, 0).is_err());
    }

    #[test]
    fn misspec_endpoints_and_mixing() {
        let g0 = MisspecGrid::standard_normal(3, 2, 0.0, 5).unwrap();
        let gen = generate_misspec_regression(200, 3, &g0, 1).unwrap();
        assert!(gen.latent.iter().all(|b| *b == g0.base));

        let g1 = MisspecGrid::standard_normal(3, 2, 1.0, 5).unwrap();
        let gen = generate_misspec_regression(10_000, 3, &g1, 2).unwrap();
        let first = gen.latent.iter().filter(|b| **b == g1.groups[0]).count();
        let second = gen.latent.iter().filter(|b| **b == g1.groups[1]).count();
        assert_eq!(first + second, 10_000);
        assert!((first as f64 / 10_000.0 - 0.5).abs() < 0.02);

        let again = generate_misspec_regression(10_000, 3, &g1, 2).unwrap();
        assert_eq!(gen.data, again.data);
        assert!(MisspecGrid::new(1.5, vec![0.0], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn voting_rates_and_monotonicity() {
        let truth = VotingTruth::zeros(2, 2);
        let cells = voting_cells(2, 2, 3, 1_000_000);
        let d = generate_voting_data(&truth, &cells, 3).unwrap();
        for (y, n) in d.outcomes().iter().zip(d.trial_counts().unwrap()) {
            assert!((y[0] / *n as f64 - 0.5).abs() < 0.002);
        }
        assert_eq!(d, generate_voting_data(&truth, &cells, 3).unwrap());

        let mut t = VotingTruth::zeros(3, 1);
        t.state_intercepts = vec![-1.0, 0.0, 1.0];
        let cells = voting_cells(3, 1, 1, 1_000_000);
        let d = generate_voting_data(&t, &cells, 4).unwrap();
        let y: Vec<f64> = d.outcomes().iter().map(|y| y[0]).collect();
        assert!(y[0] < y[1] && y[1] < y[2]);
    }

    #[test]
    fn sum_of_squares_draws() {
        let pop = BetaPopulation::bimodal();
        let gen = generate_sum_of_squares_data(2000, 20, &pop, 9).unwrap();
        assert_eq!(gen.data, generate_sum_of_squares_data(2000, 20, &pop, 9).unwrap().data);
        // E ||X beta + eps||^2 = m (beta^2 + 1)
        let y = gen.data.scalar_outcomes().unwrap();
        let expected: f64 = gen.latent.iter().map(|b| 20.0 * (b[0] * b[0] + 1.0)).sum::<f64>() / 2000.0;
        let (m, _) = mean_std(&y);
        assert!((m - expected).abs() / expected < 0.05);
        let near = gen.latent.iter().filter(|b| (b[0] - 1.0).abs() < 1.0).count();
        assert!((near as f64 / 2000.0 - 0.5).abs() < 0.05);
    }
}

//! Whole experiments from one JSON config: data generation or ingestion, a
//! fit, held-out evaluation, gradient checks and parameter sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{heldout_scores, heterogeneity_report, two_sample_ks, HeterogeneityReport, Reference, ScoreTable};
use crate::error::{check_dim, PviError, Result};
use crate::families::Family;
use crate::gradcheck::{run_gradcheck, GradcheckReport, GradcheckSpec};
use crate::models::{
    binomial_logit_model, categorical_model, generate_misspec_regression, generate_normal_data, generate_sum_of_squares_data,
    generate_voting_data, linear_observation_simulator, linear_regression_model, normal_location_model,
    sum_of_squares_simulator, voting_cells, BetaPopulation, Dataset, MisspecGrid, Model, VotingLevel, VotingTruth,
};
use crate::optimizer::{run_pvi, RunSpec, RunTrace};
use crate::regularizers::{MixMode, RegularizerKind, RegularizerSpec};
use crate::scores::ScoreKind;

/// SplitMix64 of `seed` mixed with `stream`; used to give data generation,
/// evaluation and checks their own seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
const CHECK_STREAM: u64 = 4;
const MOMENT_STREAM: u64 = 5;
const TRUTH_STREAM: u64 = 6;
const REFERENCE_STREAM: u64 = 7;

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelKind {
    NormalLocation,
    LinearRegression {
        dim: usize,
        #[serde(default = "one")]
        sigma: f64,
    },
    BinomialLogit {
        level: VotingLevel,
        states: usize,
        ethnicities: usize,
    },
    Categorical {
        categories: usize,
    },
    SumOfSquares {
        rows: usize,
        dim: usize,
    },
    LinearObservation {
        rows: usize,
        dim: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    /// Drops the simulator so only the explicit likelihood is available.
    #[serde(default)]
    pub explicit_only: bool,
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model> {
        let model = match &self.kind {
            ModelKind::NormalLocation => normal_location_model(),
            ModelKind::LinearRegression { dim, sigma } => linear_regression_model(*dim, *sigma)?,
            ModelKind::BinomialLogit {
                level,
                states,
                ethnicities,
            } => binomial_logit_model(*level, *states, *ethnicities)?,
            ModelKind::Categorical { categories } => categorical_model(*categories)?,
            ModelKind::SumOfSquares { rows, dim } => sum_of_squares_simulator(*rows, *dim)?,
            ModelKind::LinearObservation { rows, dim } => linear_observation_simulator(*rows, *dim)?,
        };
        if self.explicit_only {
            if !model.has_likelihood() {
                return Err(PviError::Config(format!("model '{}' has no explicit likelihood to keep", model.name)));
            }
            return Ok(model.without_simulator());
        }
        Ok(model)
    }
}

fn default_population() -> BetaPopulation {
    BetaPopulation::bimodal()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// `y ~ N(0, sigma_true^2)`.
    Normal { n: usize, sigma_true: f64 },
    /// Per-datum coefficients from a standard-normal grid with `groups` members.
    MisspecRegression {
        n: usize,
        dim: usize,
        groups: usize,
        alpha: f64,
        #[serde(default)]
        grid_seed: u64,
    },
    SumOfSquares {
        n: usize,
        rows: usize,
        #[serde(default = "default_population")]
        population: BetaPopulation,
    },
    /// Every (state, ethnicity, income level) cell with `trials` voters.
    Voting {
        states: usize,
        ethnicities: usize,
        income_levels: usize,
        trials: u64,
        slope_spread: f64,
        #[serde(default)]
        truth_seed: u64,
    },
    Csv { path: PathBuf },
}

impl DataSpec {
    /// Draws `n` data (the spec's own `n` when `None`).
    pub fn generate(&self, n: Option<usize>, seed: u64) -> Result<Dataset> {
        match self {
            DataSpec::Normal { n: n0, sigma_true } => generate_normal_data(n.unwrap_or(*n0), *sigma_true, seed),
            DataSpec::MisspecRegression {
                n: n0,
                dim,
                groups,
                alpha,
                grid_seed,
            } => {
                let grid = MisspecGrid::standard_normal(*dim, *groups, *alpha, *grid_seed)?;
                Ok(generate_misspec_regression(n.unwrap_or(*n0), *dim, &grid, seed)?.data)
            }
            DataSpec::SumOfSquares { n: n0, rows, population } => {
                Ok(generate_sum_of_squares_data(n.unwrap_or(*n0), *rows, population, seed)?.data)
            }
            DataSpec::Voting {
                states,
                ethnicities,
                income_levels,
                trials,
                slope_spread,
                truth_seed,
            } => {
                if n.is_some() {
                    return Err(PviError::Config("voting data size is fixed by its cells".into()));
                }
                let truth = VotingTruth::random(*states, *ethnicities, *slope_spread, *truth_seed);
                generate_voting_data(&truth, &voting_cells(*states, *ethnicities, *income_levels, *trials), seed)
            }
            DataSpec::Csv { path } => {
                if n.is_some() {
                    return Err(PviError::Config("CSV data cannot be resized or regenerated".into()));
                }
                Dataset::load_csv(path)
            }
        }
    }

    fn set_n(&mut self, value: usize) -> Result<()> {
        match self {
            DataSpec::Normal { n, .. } | DataSpec::MisspecRegression { n, .. } | DataSpec::SumOfSquares { n, .. } => {
                *n = value;
                Ok(())
            }
            _ => Err(PviError::Config("sweep axis 'n' needs generated normal, regression or sum-of-squares data".into())),
        }
    }

    fn set_alpha(&mut self, value: f64) -> Result<()> {
        match self {
            DataSpec::MisspecRegression { alpha, .. } => {
                *alpha = value;
                Ok(())
            }
            _ => Err(PviError::Config("sweep axis 'alpha' needs misspec_regression data".into())),
        }
    }

    fn set_sigma_true(&mut self, value: f64) -> Result<()> {
        match self {
            DataSpec::Normal { sigma_true, .. } => {
                *sigma_true = value;
                Ok(())
            }
            _ => Err(PviError::Config("sweep axis 'sigma_true' needs normal data".into())),
        }
    }

    /// The coefficient population, when it is one-dimensional and known.
    pub fn scalar_population(&self) -> Option<&BetaPopulation> {
        match self {
            DataSpec::SumOfSquares { population, .. } if population.dim() == 1 => Some(population),
            _ => None,
        }
    }
}

fn default_eval_mc() -> usize {
    10_000
}

fn default_threshold() -> f64 {
    crate::diagnostics::DEFAULT_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(default = "default_eval_mc")]
    pub mc_size: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Saved parameters of a reference fit. Without one, the reference is the
    /// exact posterior on the normal model and a classical VI fit otherwise.
    #[serde(default)]
    pub reference_phi: Option<PathBuf>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            mc_size: default_eval_mc(),
            threshold: default_threshold(),
            reference_phi: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub sigma_true: Vec<f64>,
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub data: DataSpec,
    /// Size of a held-out set drawn from the same generator.
    #[serde(default)]
    pub test_n: Option<usize>,
    /// Fixes the training data across seeds when set.
    #[serde(default)]
    pub data_seed: Option<u64>,
    pub family: Family,
    pub run: RunSpec,
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub gradcheck: GradcheckSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

/// Everything a fit needs, built and validated from a config.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub model: Model,
    pub family: Family,
    pub data: Dataset,
    pub test: Option<Dataset>,
    pub init: Vec<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PviError::Config(format!("invalid config: {e}")))
    }

    /// Reads a config; a relative CSV path resolves against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PviError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSpec::Csv { path: p } = &mut cfg.data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut cfg.eval.reference_phi {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Builds the model and data and checks the whole combination.
    pub fn prepare(&self) -> Result<Prepared> {
        let model = self.model.build()?;
        self.family.validate()?;
        let data = self.data.generate(None, derive_seed(self.data_seed(), TRAIN_STREAM))?;
        self.run.validate(&model, &self.family, &data)?;
        let test = match self.test_n {
            Some(0) => return Err(PviError::Config("test_n must be at least 1".into())),
            Some(n) => Some(self.data.generate(Some(n), derive_seed(self.data_seed(), TEST_STREAM))?),
            None => None,
        };
        let init = match &self.init {
            Some(v) => {
                check_dim("init", v.len(), self.family.param_dim())?;
                self.family.check_phi(v)?;
                v.clone()
            }
            None => self.family.init_params().into_values(),
        };
        if self.eval.mc_size == 0 {
            return Err(PviError::Config("eval mc_size must be at least 1".into()));
        }
        Ok(Prepared {
            model,
            family: self.family.clone(),
            data,
            test,
            init,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.prepare().map(|_| ())
    }
}

/// Parameters saved by a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiFile {
    pub family: Family,
    pub iter: usize,
    pub phi: Vec<f64>,
}

impl PhiFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fixed-key run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub model: String,
    pub score: ScoreKind,
    pub estimator: String,
    pub n_train: usize,
    pub n_test: Option<usize>,
    pub iterations: usize,
    pub flagged_iterations: usize,
    pub failed: bool,
    /// Objective averaged over the last logged window.
    pub final_objective: Option<f64>,
    pub param_names: Vec<String>,
    /// Final parameters by segment.
    pub final_phi: BTreeMap<String, Vec<f64>>,
    pub final_mean: Vec<f64>,
    pub final_std: Vec<f64>,
    /// KS distance between folded `|theta|` draws and the true coefficient population.
    pub ks_to_truth: Option<f64>,
    pub heldout: Option<ScoreTable>,
    pub config: RunConfig,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub data: Dataset,
    pub trace: RunTrace,
    pub summary: Summary,
}

const MOMENT_DRAWS: usize = 10_000;

/// KS distance between folded draws from `q_phi` and from the population.
pub fn folded_ks(family: &Family, phi: &[f64], population: &BetaPopulation, draws: usize, seed: u64) -> Result<f64> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(derive_seed(seed, MOMENT_STREAM));
    let q: Vec<f64> = family.sample_many(phi, draws, &mut rng)?.iter().map(|t| t[0].abs()).collect();
    let truth: Vec<f64> = population
        .sample(draws, derive_seed(seed, TRUTH_STREAM))?
        .iter()
        .map(|b| b[0].abs())
        .collect();
    two_sample_ks(&q, &truth)
}

/// Fits the configured model and summarizes the result.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    let p = cfg.prepare()?;
    let trace = run_pvi(&p.model, &p.family, &p.data, &cfg.run, &p.init, cfg.seed)?;
    let phi = &trace.final_phi;
    let (final_mean, final_std) = p.family.marginal_moments(phi, MOMENT_DRAWS, derive_seed(cfg.seed, MOMENT_STREAM))?;
    let values = p.family.params_from(phi.clone())?;
    let final_phi = values
        .layout()
        .iter()
        .map(|s| (s.name.clone(), phi[s.range()].to_vec()))
        .collect();
    let ks_to_truth = match cfg.data.scalar_population() {
        Some(pop) if p.family.latent_dim() == 1 => Some(folded_ks(&p.family, phi, pop, MOMENT_DRAWS, cfg.seed)?),
        _ => None,
    };
    let heldout = match &p.test {
        Some(t) => Some(heldout_scores(&p.model, &p.family, phi, t, cfg.eval.mc_size, derive_seed(cfg.seed, EVAL_STREAM))?),
        None => None,
    };
    let summary = Summary {
        seed: cfg.seed,
        model: p.model.name.clone(),
        score: cfg.run.score,
        estimator: cfg.run.estimator().name().to_string(),
        n_train: p.data.len(),
        n_test: p.test.as_ref().map(|t| t.len()),
        iterations: trace.iterations,
        flagged_iterations: trace.flagged_iterations,
        failed: trace.failed,
        final_objective: trace.records.last().map(|r| r.objective).filter(|v| v.is_finite()),
        param_names: p.model.param_names.clone(),
        final_phi,
        final_mean,
        final_std,
        ks_to_truth,
        heldout,
        config: cfg.clone(),
    };
    Ok(RunOutcome {
        data: p.data,
        trace,
        summary,
    })
}

pub fn summary_json(summary: &Summary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

/// Writes `data.csv`, `trace.csv`, `summary.json`, `phi.json` and `snapshots.json` into `dir`.
pub fn write_run_outputs(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    outcome.data.save_csv(&dir.join("data.csv"))?;
    outcome.trace.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
    fs::write(dir.join("summary.json"), summary_json(&outcome.summary))?;
    let phi = PhiFile {
        family: outcome.summary.config.family.clone(),
        iter: outcome.trace.iterations,
        phi: outcome.trace.final_phi.clone(),
    };
    fs::write(dir.join("phi.json"), serde_json::to_string_pretty(&phi)? + "\n")?;
    let snapshots: Vec<PhiFile> = outcome
        .trace
        .snapshots
        .iter()
        .map(|s| PhiFile {
            family: phi.family.clone(),
            iter: s.iter,
            phi: s.phi.clone(),
        })
        .collect();
    fs::write(dir.join("snapshots.json"), serde_json::to_string_pretty(&snapshots)? + "\n")?;
    Ok(())
}

/// Finite-difference and replication checks of the configured estimator at the
/// initial parameters, on at most the first 200 training data.
pub fn gradcheck(cfg: &RunConfig) -> Result<GradcheckReport> {
    let p = cfg.prepare()?;
    let keep: Vec<usize> = (0..p.data.len().min(200)).collect();
    let data = p.data.subset(&keep);
    run_gradcheck(
        cfg.run.estimator(),
        cfg.run.score,
        &p.model,
        &p.family,
        &p.init,
        &data,
        &cfg.gradcheck,
        derive_seed(cfg.seed, CHECK_STREAM),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// What the heterogeneity ratios are relative to.
    pub reference: String,
    pub scores: ScoreTable,
    pub heterogeneity: HeterogeneityReport,
}

/// Classical VI: the interpolated objective at `lambda = 0`.
pub fn vi_spec(run: &RunSpec) -> RunSpec {
    RunSpec {
        regularizer: RegularizerSpec {
            kind: RegularizerKind::PosteriorKl,
            lambda: 0.0,
            mode: MixMode::Interpolate,
            mc_size: run.regularizer.mc_size,
        },
        ..run.clone()
    }
}

/// Held-out scores of `phi` on `test` and its heterogeneity report against
/// the configured reference.
pub fn evaluate(cfg: &RunConfig, phi: &[f64], test: &Dataset) -> Result<EvalReport> {
    let p = cfg.prepare()?;
    check_dim("phi", phi.len(), p.family.param_dim())?;
    p.family.check_phi(phi)?;
    let seed = derive_seed(cfg.seed, EVAL_STREAM);
    let scores = heldout_scores(&p.model, &p.family, phi, test, cfg.eval.mc_size, seed)?;
    let names = &p.model.param_names;
    let (reference, heterogeneity) = if let Some(path) = &cfg.eval.reference_phi {
        let r = PhiFile::load(path)?;
        check_dim("reference phi", r.phi.len(), r.family.param_dim())?;
        let rep = heterogeneity_report(
            &p.family,
            phi,
            Reference::Variational {
                family: &r.family,
                phi: &r.phi,
            },
            names,
            cfg.eval.threshold,
            seed,
        )?;
        (format!("saved fit {}", path.display()), rep)
    } else if p.model.name == "normal_location" {
        let exact = [1.0 / (p.data.len() as f64 + 1.0).sqrt()];
        let rep = heterogeneity_report(&p.family, phi, Reference::Analytic(&exact), names, cfg.eval.threshold, seed)?;
        ("exact posterior".to_string(), rep)
    } else {
        if !p.model.has_likelihood() {
            return Err(PviError::Config(
                "a simulator-only model needs eval.reference_phi for heterogeneity ratios".into(),
            ));
        }
        let vi = vi_spec(&cfg.run);
        let trace = run_pvi(&p.model, &p.family, &p.data, &vi, &p.init, derive_seed(cfg.seed, REFERENCE_STREAM))?;
        let rep = heterogeneity_report(
            &p.family,
            phi,
            Reference::Variational {
                family: &p.family,
                phi: &trace.final_phi,
            },
            names,
            cfg.eval.threshold,
            seed,
        )?;
        ("classical VI fit".to_string(), rep)
    };
    Ok(EvalReport {
        reference,
        scores,
        heterogeneity,
    })
}

/// One cell of a sweep's cross product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub sigma_true: Option<f64>,
    pub n: Option<usize>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: u64,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().map(|v| Some(*v)).collect()
    }
}

/// Expands the sweep axes (outermost first: sigma_true, n, alpha, lambda,
/// seeds) into per-cell configs. Fails if an axis does not apply.
pub fn sweep_cells(cfg: &RunConfig) -> Result<Vec<(SweepCell, RunConfig)>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| PviError::Config("config declares no sweep axes".into()))?;
    if !sweep.lambda.is_empty() && cfg.run.regularizer.kind == RegularizerKind::None {
        return Err(PviError::Config("sweep axis 'lambda' needs a regularizer kind".into()));
    }
    let seeds = if sweep.seeds.is_empty() { vec![cfg.seed] } else { sweep.seeds.clone() };
    let mut cells = Vec::new();
    for s in axis(&sweep.sigma_true) {
        for n in axis(&sweep.n) {
            for a in axis(&sweep.alpha) {
                for l in axis(&sweep.lambda) {
                    for &seed in &seeds {
                        let mut c = cfg.clone();
                        c.sweep = None;
                        c.seed = seed;
                        if let Some(v) = s {
                            c.data.set_sigma_true(v)?;
                        }
                        if let Some(v) = n {
                            c.data.set_n(v)?;
                        }
                        if let Some(v) = a {
                            c.data.set_alpha(v)?;
                        }
                        if let Some(v) = l {
                            c.run.regularizer.lambda = v;
                        }
                        let cell = SweepCell {
                            index: cells.len(),
                            sigma_true: s,
                            n,
                            alpha: a,
                            lambda: l,
                            seed,
                        };
                        cells.push((cell, c));
                    }
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub outcome: std::result::Result<Summary, String>,
}

/// Runs every cell on a pool of `jobs` threads; rows come back in cell order.
pub fn run_sweep(cfg: &RunConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    let cells = sweep_cells(cfg)?;
    for (_, c) in &cells {
        c.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PviError::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| {
        cells
            .into_par_iter()
            .map(|(cell, c)| SweepRow {
                cell,
                outcome: execute(&c).map(|o| o.summary).map_err(|e| e.to_string()),
            })
            .collect()
    }))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per cell; `status` is `ok`, `failed` (too many flagged
/// iterations) or `error`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let dim = rows
        .iter()
        .find_map(|r| r.outcome.as_ref().ok().map(|s| s.final_mean.len()))
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["cell", "sigma_true", "n", "alpha", "lambda", "seed", "status", "flagged_iterations", "final_objective"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim).map(|k| format!("mean_{k}")));
    header.extend((0..dim).map(|k| format!("std_{k}")));
    header.push("ks_to_truth".into());
    header.extend(ScoreKind::ALL.iter().map(|k| format!("heldout_{}", k.name())));
    header.push("error".into());
    w.write_record(&header)?;
    for r in rows {
        let c = &r.cell;
        let mut rec = vec![
            c.index.to_string(),
            opt(c.sigma_true),
            opt(c.n),
            opt(c.alpha),
            opt(c.lambda),
            c.seed.to_string(),
        ];
        match &r.outcome {
            Ok(s) => {
                rec.push(if s.failed { "failed" } else { "ok" }.into());
                rec.push(s.flagged_iterations.to_string());
                rec.push(opt(s.final_objective));
                rec.extend(s.final_mean.iter().map(|v| v.to_string()));
                rec.extend(s.final_std.iter().map(|v| v.to_string()));
                rec.push(opt(s.ks_to_truth));
                for k in ScoreKind::ALL {
                    rec.push(opt(s.heldout.as_ref().and_then(|h| h.get(k)).map(|row| row.mean)));
                }
                rec.push(String::new());
            }
            Err(e) => {
                rec.push("error".into());
                rec.extend(std::iter::repeat_n(String::new(), 2 + 2 * dim + 1 + ScoreKind::ALL.len()));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Whether any cell errored or failed.
pub fn sweep_failed(rows: &[SweepRow]) -> bool {
    rows.iter().any(|r| r.outcome.as_ref().map(|s| s.failed).unwrap_or(true))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{
        "model": {"name": "normal_location"},
        "data": {"source": "normal", "n": 100, "sigma_true": 2.0},
        "family": {"kind": "gaussian_diag", "dim": 1},
        "run": {
            "score": "log",
            "optimizer": {"schedule": {"kind": "constant", "lr": 0.01}, "iterations": 200, "mc_size": 20, "log_stride": 50}
        },
        "seed": 3
    }"#;

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::from_json(TOY).unwrap();
        cfg.validate().unwrap();
        let again = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn incompatible_pair_is_named() {
        let mut cfg = RunConfig::from_json(TOY).unwrap();
        cfg.model.explicit_only = true;
        cfg.run.score = ScoreKind::Crps;
        let e = cfg.validate().unwrap_err();
        assert!(matches!(e, PviError::Config(_)));
        let msg = e.to_string();
        assert!(msg.contains("crps") && msg.contains("normal_location"), "{msg}");
    }

    #[test]
    fn sweep_expands_cross_product() {
        let mut cfg = RunConfig::from_json(TOY).unwrap();
        cfg.sweep = Some(SweepSpec {
            n: vec![10, 20],
            seeds: vec![1, 2],
            ..Default::default()
        });
        let cells = sweep_cells(&cfg).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[3].0.n, Some(20));
        assert_eq!(cells[3].0.seed, 2);
        cfg.sweep = Some(SweepSpec {
            alpha: vec![0.5],
            ..Default::default()
        });
        assert!(sweep_cells(&cfg).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(0, 1));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }
}

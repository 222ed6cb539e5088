//! Stochastic-gradient ascent on the regularized score objective.

use std::io::{Read, Write};

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PviError, Result};
use crate::families::Family;
use crate::gradients::{estimate_gradient, EstimatorKind};
use crate::models::{Dataset, Model};
use crate::regularizers::{posterior_kl_surrogate, prior_kl, MixMode, RegularizerKind, RegularizerSpec};
use crate::scores::{McBatch, ScoreKind};

fn default_decay() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    Rmsprop {
        #[serde(default = "default_decay")]
        decay: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl Default for Algorithm {
    fn default() -> Self {
        Algorithm::Rmsprop {
            decay: default_decay(),
            eps: default_eps(),
        }
    }
}

impl Algorithm {
    pub fn adam() -> Self {
        Algorithm::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Algorithm::Rmsprop { decay, eps } => (0.0..1.0).contains(&decay) && eps > 0.0,
            Algorithm::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if !ok {
            return Err(PviError::Config("optimizer decay rates must lie in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Learning-rate schedules. Iterations are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant {
        lr: f64,
    },
    /// `lr` before `at_iteration`, `lr * factor` from then on.
    StepDecay {
        lr: f64,
        factor: f64,
        at_iteration: usize,
    },
    /// Linear ramp `peak * t / warmup` to the peak, then cosine annealing
    /// from `peak` down to `floor` at `total`.
    WarmupCosine {
        peak_lr: f64,
        floor_lr: f64,
        warmup_iters: usize,
        total_iters: usize,
    },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PviError::Config(m.to_string()));
        match *self {
            Schedule::Constant { lr } if !(lr > 0.0 && lr.is_finite()) => bad("lr must be positive"),
            Schedule::StepDecay { lr, factor, .. } if !(lr > 0.0 && factor > 0.0 && lr.is_finite()) => {
                bad("step decay needs lr > 0 and factor > 0")
            }
            Schedule::WarmupCosine {
                peak_lr,
                floor_lr,
                warmup_iters,
                total_iters,
            } => {
                if !(peak_lr > 0.0 && floor_lr > 0.0 && peak_lr.is_finite()) {
                    bad("warmup-cosine needs positive peak and floor rates")
                } else if warmup_iters >= total_iters {
                    bad("warmup_iters must be below total_iters")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// The learning rate at iteration `t`.
pub fn lr_at(schedule: &Schedule, t: usize) -> Result<f64> {
    Ok(match *schedule {
        Schedule::Constant { lr } => lr,
        Schedule::StepDecay { lr, factor, at_iteration } => {
            if t < at_iteration {
                lr
            } else {
                lr * factor
            }
        }
        Schedule::WarmupCosine {
            peak_lr,
            floor_lr,
            warmup_iters,
            total_iters,
        } => {
            if t > total_iters {
                return Err(PviError::Contract(format!("iteration {t} beyond schedule end {total_iters}")));
            }
            if t < warmup_iters {
                peak_lr * t as f64 / warmup_iters as f64
            } else {
                let progress = (t - warmup_iters) as f64 / (total_iters - warmup_iters) as f64;
                floor_lr + (peak_lr - floor_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    })
}

/// Moment buffers of the adaptive optimizers.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(algorithm: Algorithm, dim: usize) -> Self {
        OptimizerState {
            algorithm,
            first: vec![0.0; dim],
            second: vec![0.0; dim],
            steps: 0,
        }
    }

    /// One ascent step with whichever algorithm the state was built for.
    pub fn step(&mut self, phi: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        match self.algorithm {
            Algorithm::Rmsprop { .. } => rmsprop_step(self, phi, grad, lr),
            Algorithm::Adam { .. } => adam_step(self, phi, grad, lr),
        }
    }
}

fn check_step(state: &OptimizerState, phi: &[f64], grad: &[f64]) -> Result<()> {
    check_dim("gradient", grad.len(), state.second.len())?;
    check_dim("phi", phi.len(), state.second.len())?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(PviError::Numerical("non-finite gradient".into()));
    }
    Ok(())
}

/// `v <- decay v + (1 - decay) g^2; phi <- phi + lr g / (sqrt(v) + eps)`.
pub fn rmsprop_step(state: &mut OptimizerState, phi: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    check_step(state, phi, grad)?;
    let Algorithm::Rmsprop { decay, eps } = state.algorithm else {
        return Err(PviError::Contract("rmsprop_step on a non-RMSProp state".into()));
    };
    for k in 0..grad.len() {
        let v = decay * state.second[k] + (1.0 - decay) * grad[k] * grad[k];
        state.second[k] = v;
        phi[k] += lr * grad[k] / (v.sqrt() + eps);
    }
    state.steps += 1;
    Ok(())
}

/// Bias-corrected Adam, ascent direction.
pub fn adam_step(state: &mut OptimizerState, phi: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    check_step(state, phi, grad)?;
    let Algorithm::Adam { beta1, beta2, eps } = state.algorithm else {
        return Err(PviError::Contract("adam_step on a non-Adam state".into()));
    };
    state.steps += 1;
    let t = state.steps as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for k in 0..grad.len() {
        state.first[k] = beta1 * state.first[k] + (1.0 - beta1) * grad[k];
        state.second[k] = beta2 * state.second[k] + (1.0 - beta2) * grad[k] * grad[k];
        let m = state.first[k] / c1;
        let v = state.second[k] / c2;
        phi[k] += lr * m / (v.sqrt() + eps);
    }
    Ok(())
}

pub fn global_norm(grad: &[f64]) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(grad);
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

fn default_log_stride() -> usize {
    100
}
fn default_snapshot_stride() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default)]
    pub algorithm: Algorithm,
    pub schedule: Schedule,
    #[serde(default)]
    pub clip_global_norm: Option<f64>,
    pub iterations: usize,
    /// Monte Carlo size `M` of the score estimator.
    pub mc_size: usize,
    /// Data per iteration; the full data when absent.
    #[serde(default)]
    pub minibatch: Option<usize>,
    #[serde(default = "default_log_stride")]
    pub log_stride: usize,
    #[serde(default = "default_snapshot_stride")]
    pub snapshot_stride: usize,
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        self.algorithm.validate()?;
        self.schedule.validate()?;
        let bad = |m: &str| Err(PviError::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.mc_size == 0 {
            return bad("mc_size must be at least 1");
        }
        if self.log_stride == 0 || self.snapshot_stride == 0 {
            return bad("log and snapshot strides must be at least 1");
        }
        if self.minibatch == Some(0) {
            return bad("minibatch must be at least 1");
        }
        if let Some(c) = self.clip_global_norm {
            if !(c > 0.0) {
                return bad("clip_global_norm must be positive");
            }
        }
        if let Schedule::WarmupCosine { total_iters, .. } = self.schedule {
            if self.iterations > total_iters + 1 {
                return bad("iterations run past the end of the warmup-cosine schedule");
            }
        }
        Ok(())
    }
}

/// What to optimize and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub score: ScoreKind,
    /// Defaults to the score's natural estimator.
    #[serde(default)]
    pub estimator: Option<EstimatorKind>,
    #[serde(default)]
    pub regularizer: RegularizerSpec,
    pub optimizer: OptimizerSpec,
}

impl RunSpec {
    pub fn estimator(&self) -> EstimatorKind {
        self.estimator.unwrap_or_else(|| EstimatorKind::default_for(self.score))
    }

    /// Checks the whole (model, family, score, estimator, regularizer) combination.
    pub fn validate(&self, model: &Model, family: &Family, data: &Dataset) -> Result<()> {
        family.validate()?;
        if family.latent_dim() != model.theta_dim() {
            return Err(PviError::Config(format!(
                "family has latent dimension {}, model '{}' has {} parameters",
                family.latent_dim(),
                model.name,
                model.theta_dim()
            )));
        }
        self.optimizer.validate()?;
        self.regularizer.validate(model)?;
        if self.regularizer.uses_score() {
            self.score.check(model, data).map_err(|e| match e {
                PviError::Config(m) => {
                    PviError::Config(format!("score '{}' with model '{}': {m}", self.score.name(), model.name))
                }
                other => other,
            })?;
            if self.estimator() == EstimatorKind::FiniteDiff {
                return Err(PviError::Config("finite differences are a test oracle, not a training estimator".into()));
            }
            self.estimator().check(self.score, model, data)?;
        } else {
            model.check_data(data)?;
        }
        Ok(())
    }
}

/// One logged row, aggregated over the `log_stride` iterations ending at `iter`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Mean combined objective over the window's finite values.
    pub objective: f64,
    pub regularizer: f64,
    /// Mean pre-clip gradient norm.
    pub grad_norm: f64,
    pub lr: f64,
    pub accept_rate: Option<f64>,
    /// Data dropped by the estimator, summed over the window.
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iter: usize,
    pub phi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub snapshots: Vec<Snapshot>,
    pub final_phi: Vec<f64>,
    pub iterations: usize,
    /// Iterations whose step was skipped for a non-finite gradient.
    pub flagged_iterations: usize,
    /// More than half of the iterations were flagged.
    pub failed: bool,
}

impl RunTrace {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.records.is_empty() {
            w.write_record(["iter", "objective", "regularizer", "grad_norm", "lr", "accept_rate", "dropped"])?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Vec<TraceRecord>> {
        let mut r = csv::Reader::from_reader(reader);
        r.deserialize().map(|rec| rec.map_err(PviError::from)).collect()
    }
}

#[derive(Default)]
struct Window {
    objective: f64,
    objective_count: usize,
    regularizer: f64,
    regularizer_count: usize,
    grad_norm: f64,
    grad_count: usize,
    accept: f64,
    accept_count: usize,
    dropped: usize,
}

impl Window {
    fn record(&self, iter: usize, lr: f64) -> TraceRecord {
        let mean = |s: f64, c: usize| if c > 0 { s / c as f64 } else { f64::NAN };
        TraceRecord {
            iter,
            objective: mean(self.objective, self.objective_count),
            regularizer: if self.regularizer_count > 0 {
                self.regularizer / self.regularizer_count as f64
            } else {
                0.0
            },
            grad_norm: mean(self.grad_norm, self.grad_count),
            lr,
            accept_rate: (self.accept_count > 0).then(|| self.accept / self.accept_count as f64),
            dropped: self.dropped,
        }
    }
}

/// One iteration's combined objective and gradient.
struct Step {
    objective: f64,
    regularizer: Option<f64>,
    grad: Vec<f64>,
    accept_rate: Option<f64>,
    dropped: usize,
}

fn iteration(
    model: &Model,
    family: &Family,
    data: &Dataset,
    spec: &RunSpec,
    phi: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Step> {
    let n_total = data.len();
    let sub;
    let batch_data = match spec.optimizer.minibatch {
        Some(b) if b < n_total => {
            let idx = sample_indices(rng, n_total, b).into_vec();
            sub = data.subset(&idx);
            &sub
        }
        _ => data,
    };
    let reg = &spec.regularizer;
    let mut grad = vec![0.0; family.param_dim()];
    let mut objective = 0.0;
    let mut accept_rate = None;
    let mut dropped = 0;

    let score_weight = match reg.mode {
        MixMode::Additive => 1.0,
        MixMode::Interpolate => reg.lambda,
    };
    if reg.uses_score() {
        let batch = McBatch::for_score(spec.score, family, model, spec.optimizer.mc_size, rng)?;
        let est = estimate_gradient(spec.estimator(), model, family, phi, batch_data, &batch)?;
        objective += score_weight * est.value;
        for (g, v) in grad.iter_mut().zip(&est.grad) {
            *g += score_weight * v;
        }
        accept_rate = est.accept_rate();
        dropped = est.dropped_data.unwrap_or(0);
    }

    let mut regularizer = None;
    if reg.uses_regularizer() {
        let draws: Vec<Vec<f64>> = (0..reg.mc_size).map(|_| family.draw_base(rng)).collect();
        let kl = match reg.kind {
            RegularizerKind::PriorKl => prior_kl(family, phi, &model.prior, &draws)?,
            RegularizerKind::PosteriorKl => {
                let scale = n_total as f64 / batch_data.len() as f64;
                posterior_kl_surrogate(family, phi, model, batch_data, &draws, scale)?
            }
            RegularizerKind::None => unreachable!("uses_regularizer excludes kind none"),
        };
        let weight = match reg.mode {
            MixMode::Additive => -reg.lambda,
            // (1 - lambda) * ELBO / n with ELBO = -kl
            MixMode::Interpolate => -(1.0 - reg.lambda) / n_total as f64,
        };
        objective += weight * kl.value;
        for (g, v) in grad.iter_mut().zip(&kl.grad) {
            *g += weight * v;
        }
        regularizer = Some(kl.value);
    }
    Ok(Step {
        objective,
        regularizer,
        grad,
        accept_rate,
        dropped,
    })
}

/// Runs stochastic-gradient ascent from `init` with a `ChaCha8Rng` seeded by `seed`.
///
/// Iterations with a non-finite gradient skip their step and are counted in
/// `flagged_iterations`; the trace is marked failed when more than half are.
/// Errors other than non-finite values abort the run.
pub fn run_pvi(model: &Model, family: &Family, data: &Dataset, spec: &RunSpec, init: &[f64], seed: u64) -> Result<RunTrace> {
    spec.validate(model, family, data)?;
    family.check_phi(init)?;
    let opt = &spec.optimizer;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = init.to_vec();
    let mut state = OptimizerState::new(opt.algorithm, phi.len());
    let mut records = Vec::with_capacity(opt.iterations / opt.log_stride);
    let mut snapshots = Vec::new();
    let mut window = Window::default();
    let mut flagged = 0;

    for t in 0..opt.iterations {
        let lr = lr_at(&opt.schedule, t)?;
        let step = match iteration(model, family, data, spec, &phi, &mut rng) {
            Ok(s) => Some(s),
            Err(PviError::Numerical(_)) => None,
            Err(e) => return Err(e),
        };
        match step {
            Some(mut s) if s.grad.iter().all(|g| g.is_finite()) => {
                let norm = match opt.clip_global_norm {
                    Some(c) => clip_global_norm(&mut s.grad, c),
                    None => global_norm(&s.grad),
                };
                let before = phi.clone();
                state.step(&mut phi, &s.grad, lr)?;
                if phi.iter().any(|v| !v.is_finite()) {
                    phi = before;
                    flagged += 1;
                } else {
                    window.grad_norm += norm;
                    window.grad_count += 1;
                }
                if s.objective.is_finite() {
                    window.objective += s.objective;
                    window.objective_count += 1;
                }
                if let Some(r) = s.regularizer.filter(|r| r.is_finite()) {
                    window.regularizer += r;
                    window.regularizer_count += 1;
                }
                if let Some(a) = s.accept_rate {
                    window.accept += a;
                    window.accept_count += 1;
                }
                window.dropped += s.dropped;
            }
            other => {
                flagged += 1;
                if let Some(s) = other {
                    window.dropped += s.dropped;
                }
            }
        }
        if (t + 1) % opt.log_stride == 0 {
            records.push(window.record(t + 1, lr));
            window = Window::default();
        }
        if (t + 1) % opt.snapshot_stride == 0 {
            snapshots.push(Snapshot {
                iter: t + 1,
                phi: phi.clone(),
            });
        }
    }
    Ok(RunTrace {
        records,
        snapshots,
        final_phi: phi,
        iterations: opt.iterations,
        flagged_iterations: flagged,
        failed: 2 * flagged > opt.iterations,
    })
}

//! Gradient estimators for the score objectives, plus a finite-difference oracle.
//!
//! Pathwise estimators accumulate one theta-cotangent per draw and pull it
//! back through the family with a single jvp per draw.

use serde::{Deserialize, Serialize};

use crate::error::{contract, PviError, Result};
use crate::families::Family;
use crate::models::{Dataset, Model};
use crate::scores::{
    checked_loglik, log_mean_exp, shared_predictive, simulate, spread_term, support_index, support_masses,
    McBatch, ScoreKind, Sims,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    LogReparam,
    LogRejection,
    Quadratic,
    /// Pathwise CRPS gradient; with vector outcomes, the energy-score gradient.
    CrpsPathwise,
    FiniteDiff,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::LogReparam => "log_reparam",
            EstimatorKind::LogRejection => "log_rejection",
            EstimatorKind::Quadratic => "quadratic",
            EstimatorKind::CrpsPathwise => "crps_pathwise",
            EstimatorKind::FiniteDiff => "finite_diff",
        }
    }

    /// The natural estimator for a score.
    pub fn default_for(kind: ScoreKind) -> Self {
        match kind {
            ScoreKind::Log => EstimatorKind::LogReparam,
            ScoreKind::Quadratic => EstimatorKind::Quadratic,
            ScoreKind::Crps | ScoreKind::Energy => EstimatorKind::CrpsPathwise,
        }
    }

    /// Checks the estimator against the score it estimates and the model.
    pub fn check(self, kind: ScoreKind, model: &Model, data: &Dataset) -> Result<()> {
        let ok = matches!(
            (self, kind),
            (EstimatorKind::LogReparam | EstimatorKind::LogRejection, ScoreKind::Log)
                | (EstimatorKind::Quadratic, ScoreKind::Quadratic)
                | (EstimatorKind::CrpsPathwise, ScoreKind::Crps | ScoreKind::Energy)
        );
        if !ok {
            return Err(PviError::Config(format!(
                "estimator '{}' does not estimate the '{}' score",
                self.name(),
                kind.name()
            )));
        }
        if self == EstimatorKind::LogRejection {
            let l = model.likelihood()?;
            if data.iter().any(|d| l.log_bound(&d).is_none()) {
                return Err(PviError::Config(format!(
                    "estimator 'log_rejection' needs a likelihood bound, model '{}' has none",
                    model.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub estimator: EstimatorKind,
    pub mc_size: usize,
    /// Per-datum acceptance counts (rejection estimator).
    pub accepted: Option<Vec<usize>>,
    /// Data excluded from the average.
    pub dropped_data: Option<usize>,
    /// The objective on the same batch, averaged over the data that were kept.
    pub value: f64,
}

impl GradientEstimate {
    fn new(grad: Vec<f64>, estimator: EstimatorKind, mc_size: usize, value: f64) -> Self {
        GradientEstimate {
            grad,
            estimator,
            mc_size,
            accepted: None,
            dropped_data: None,
            value,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grad.iter().all(|g| g.is_finite())
    }

    /// Fraction of accepted draws over all (datum, draw) pairs.
    pub fn accept_rate(&self) -> Option<f64> {
        self.accepted
            .as_ref()
            .map(|a| a.iter().sum::<usize>() as f64 / (a.len() * self.mc_size) as f64)
    }
}

fn zeros(rows: usize, cols: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; cols]; rows]
}

fn pull_back(family: &Family, phi: &[f64], batch: &McBatch, cots: &[Vec<f64>]) -> Vec<f64> {
    let mut grad = vec![0.0; family.param_dim()];
    family.accumulate_jvp_batch(phi, &batch.base, cots, &mut grad);
    grad
}

fn likelihood_batch(family: &Family, phi: &[f64], model: &Model, batch: &McBatch) -> Result<()> {
    family.check_phi(phi)?;
    batch.check(family)?;
    if batch.is_simulation() {
        return contract("likelihood estimators need a likelihood batch");
    }
    crate::error::check_dim("family latent dimension", family.latent_dim(), model.theta_dim())
}

/// Self-normalized pathwise gradient of the log score:
/// per datum `sum_j w_j dT/dphi^T grad_theta log p(y_i | theta_j)` with
/// `w = softmax_j(log p(y_i | theta_j))`, averaged over data.
pub fn grad_log_reparam(model: &Model, family: &Family, phi: &[f64], data: &Dataset, batch: &McBatch) -> Result<GradientEstimate> {
    likelihood_batch(family, phi, model, batch)?;
    let l = model.likelihood()?;
    let thetas = family.sample_batch(phi, &batch.base);
    let (m, dim) = (thetas.len(), family.latent_dim());
    let mut cots = zeros(m, dim);
    let mut lp = vec![0.0; m];
    let mut g = zeros(m, dim);
    let mut kept = 0usize;
    let mut value = 0.0;
    for d in data.iter() {
        for j in 0..m {
            lp[j] = l.loglik_grad(&thetas[j], &d, &mut g[j]);
            if lp[j].is_nan() || lp[j] == f64::INFINITY {
                return Err(PviError::Numerical(format!("log-likelihood {} at datum {}", lp[j], d.index)));
            }
        }
        let term = log_mean_exp(&lp);
        if term == f64::NEG_INFINITY {
            continue;
        }
        kept += 1;
        value += term;
        let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = lp.iter().map(|v| (v - max).exp()).sum();
        for j in 0..m {
            let w = (lp[j] - max).exp() / z;
            if w == 0.0 {
                continue;
            }
            for k in 0..dim {
                cots[j][k] += w * g[j][k];
            }
        }
    }
    let dropped = data.len() - kept;
    let scale = 1.0 / kept as f64;
    for c in cots.iter_mut().flatten() {
        *c *= scale;
    }
    let grad = if kept == 0 {
        vec![f64::NAN; family.param_dim()]
    } else {
        pull_back(family, phi, batch, &cots)
    };
    let mut est = GradientEstimate::new(grad, EstimatorKind::LogReparam, m, value * scale);
    est.dropped_data = Some(dropped);
    Ok(est)
}

/// Acceptance pattern of the rejection estimator on a frozen batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RejectionWeights {
    pub thetas: Vec<Vec<f64>>,
    /// `a_j = sum_i accept_ij / (accepted_i * kept)`: the weight of draw j.
    pub weights: Vec<f64>,
    pub accepted: Vec<usize>,
    pub kept: usize,
    /// Log score on the same batch, averaged over data with a finite term.
    pub value: f64,
}

/// Draw `j` is accepted for datum `i` when `t_j < p(y_i | theta_j) / C_i`.
pub fn rejection_weights(model: &Model, family: &Family, phi: &[f64], data: &Dataset, batch: &McBatch) -> Result<RejectionWeights> {
    likelihood_batch(family, phi, model, batch)?;
    let l = model.likelihood()?;
    if batch.uniforms.len() != batch.base.len() {
        return contract("rejection estimator needs one uniform per base draw");
    }
    let thetas = family.sample_batch(phi, &batch.base);
    let m = thetas.len();
    let log_t: Vec<f64> = batch.uniforms.iter().map(|t| t.ln()).collect();
    let mut weights = vec![0.0; m];
    let mut accepted = Vec::with_capacity(data.len());
    let mut hits = Vec::with_capacity(m);
    let mut lp = vec![0.0; m];
    let mut value = 0.0;
    let mut finite = 0usize;
    for d in data.iter() {
        let log_c = l.log_bound(&d).ok_or_else(|| {
            PviError::Config(format!("estimator 'log_rejection' needs a likelihood bound, model '{}' has none", model.name))
        })?;
        hits.clear();
        for j in 0..m {
            lp[j] = checked_loglik(l, &thetas[j], &d)?;
            if lp[j] > log_c + 1e-9 * log_c.abs().max(1.0) {
                return Err(PviError::BoundViolated {
                    datum: d.index,
                    likelihood: lp[j].exp(),
                    bound: log_c.exp(),
                });
            }
            if log_t[j] < lp[j] - log_c {
                hits.push(j);
            }
        }
        let term = log_mean_exp(&lp);
        if term > f64::NEG_INFINITY {
            value += term;
            finite += 1;
        }
        accepted.push(hits.len());
        for &j in &hits {
            weights[j] += 1.0 / hits.len() as f64;
        }
    }
    let kept = accepted.iter().filter(|a| **a > 0).count();
    if kept > 0 {
        weights.iter_mut().for_each(|w| *w /= kept as f64);
    }
    Ok(RejectionWeights {
        thetas,
        weights,
        accepted,
        kept,
        value: if finite > 0 { value / finite as f64 } else { f64::NEG_INFINITY },
    })
}

/// The frozen-batch objective whose gradient the rejection estimator returns:
/// `sum_j a_j log q_phi(theta_j)` with draws and acceptances held fixed.
pub fn rejection_surrogate(family: &Family, phi: &[f64], weights: &RejectionWeights) -> Result<f64> {
    let mut s = 0.0;
    for (t, w) in weights.thetas.iter().zip(&weights.weights) {
        if *w != 0.0 {
            s += w * family.log_density(phi, t)?;
        }
    }
    Ok(s)
}

/// Rejection-sampling gradient of the log score: per datum, the mean of
/// `d log q_phi(theta_j) / dphi` over accepted draws. Data without an
/// accepted draw are dropped; with every datum dropped the gradient is NaN.
pub fn grad_log_rejection(model: &Model, family: &Family, phi: &[f64], data: &Dataset, batch: &McBatch) -> Result<GradientEstimate> {
    let w = rejection_weights(model, family, phi, data, batch)?;
    let mut grad = vec![0.0; family.param_dim()];
    if w.kept == 0 {
        grad.fill(f64::NAN);
    } else {
        for (t, a) in w.thetas.iter().zip(&w.weights) {
            if *a == 0.0 {
                continue;
            }
            let s = family.grad_logq_wrt_phi(phi, t)?;
            for (g, v) in grad.iter_mut().zip(&s) {
                *g += a * v;
            }
        }
    }
    let mut est = GradientEstimate::new(grad, EstimatorKind::LogRejection, w.thetas.len(), w.value);
    est.dropped_data = Some(data.len() - w.kept);
    est.accepted = Some(w.accepted);
    Ok(est)
}

/// Pathwise gradient of the quadratic score: per datum
/// `(1/M) sum_j [2 df(theta_j, y_i) - 2 sum_c P(c) df(theta_j, c)]`.
pub fn grad_quadratic(model: &Model, family: &Family, phi: &[f64], data: &Dataset, batch: &McBatch) -> Result<GradientEstimate> {
    likelihood_batch(family, phi, model, batch)?;
    let l = model.likelihood()?;
    let thetas = family.sample_batch(phi, &batch.base);
    let (m, dim) = (thetas.len(), family.latent_dim());
    let n = data.len() as f64;
    let mut cots = zeros(m, dim);
    let mut value = 0.0;
    let mut g = vec![0.0; dim];

    // With a shared predictive the pieces are computed once and the data
    // enter only through their empirical outcome frequencies.
    let shared = shared_predictive(data);
    if shared {
        let d0 = data.datum(0);
        let (support, f) = support_masses(l, &thetas, &d0)?;
        let mut freq = vec![0.0; support.len()];
        for d in data.iter() {
            l.check_datum(&d)?;
            freq[support_index(&support, d.y[0], d.index)?] += 1.0 / n;
        }
        accumulate_quadratic(l, &thetas, &d0, &support, &f, &freq, &mut cots, &mut value, &mut g)?;
    } else {
        for d in data.iter() {
            l.check_datum(&d)?;
            let (support, f) = support_masses(l, &thetas, &d)?;
            let mut freq = vec![0.0; support.len()];
            freq[support_index(&support, d.y[0], d.index)?] = 1.0 / n;
            accumulate_quadratic(l, &thetas, &d, &support, &f, &freq, &mut cots, &mut value, &mut g)?;
        }
    }
    let grad = pull_back(family, phi, batch, &cots);
    Ok(GradientEstimate::new(grad, EstimatorKind::Quadratic, m, value))
}

/// Adds one datum group's contribution. `freq[c]` is the data weight on
/// outcome `c` (total weight `w = sum_c freq[c]`); the group's score is
/// `sum_c freq[c] 2 P(c) - w sum_c P(c)^2`.
#[allow(clippy::too_many_arguments)]
fn accumulate_quadratic(
    l: &dyn crate::models::Likelihood,
    thetas: &[Vec<f64>],
    d: &crate::models::Datum<'_>,
    support: &[f64],
    f: &[Vec<f64>],
    freq: &[f64],
    cots: &mut [Vec<f64>],
    value: &mut f64,
    g: &mut [f64],
) -> Result<()> {
    let m = thetas.len() as f64;
    let w: f64 = freq.iter().sum();
    let p: Vec<f64> = f.iter().map(|row| row.iter().sum::<f64>() / m).collect();
    *value += freq.iter().zip(&p).map(|(q, pc)| 2.0 * q * pc).sum::<f64>() - w * p.iter().map(|v| v * v).sum::<f64>();
    for (k, c) in support.iter().enumerate() {
        let coef = (2.0 * freq[k] - 2.0 * w * p[k]) / m;
        if coef == 0.0 {
            continue;
        }
        let y = [*c];
        let dc = d.with_outcome(&y);
        for (j, t) in thetas.iter().enumerate() {
            let fjc = f[k][j];
            if fjc == 0.0 {
                continue;
            }
            l.loglik_grad(t, &dc, g);
            for (cot, gv) in cots[j].iter_mut().zip(g.iter()) {
                *cot += coef * fjc * gv;
            }
        }
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `d dist(a, b) / da`: `sign(a - b)` for scalars, the unit vector otherwise.
/// Ties contribute zero.
fn dist_grad(a: &[f64], b: &[f64], out: &mut [f64]) {
    if a.len() == 1 {
        out[0] = sign(a[0] - b[0]);
        return;
    }
    let norm = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = if norm > 0.0 { (x - y) / norm } else { 0.0 };
    }
}

/// Pathwise gradient of the negative CRPS (or energy score) objective:
/// `-(1/n) sum_i (1/2M) sum_m s'(y_m - y_i) g_m + (1/2M) sum_{m<M} s'(y_m - y_{m+M}) (g_m - g_{m+M})`.
pub fn grad_crps(model: &Model, family: &Family, phi: &[f64], data: &Dataset, batch: &McBatch) -> Result<GradientEstimate> {
    let (thetas, sims) = simulate(model, family, phi, data, batch)?;
    let sim = model.simulator()?;
    let two_m = thetas.len();
    let m = two_m / 2;
    let out_dim = sim.output_dim();
    let n = data.len() as f64;
    let mut cots = zeros(two_m, family.latent_dim());
    let mut sim_cot = zeros(two_m, out_dim);
    let mut unit = vec![0.0; out_dim];
    let mut value = 0.0;

    // d/ds_m of (1/2)(1/M) sum_k dist(s_k, s_{k+M}), scaled by `w`
    let add_spread = |s: &[Vec<f64>], w: f64, sim_cot: &mut [Vec<f64>], unit: &mut [f64]| {
        for k in 0..m {
            dist_grad(&s[k], &s[k + m], unit);
            for o in 0..out_dim {
                let v = w * unit[o] / (2.0 * m as f64);
                sim_cot[k][o] += v;
                sim_cot[k + m][o] -= v;
            }
        }
    };

    match &sims {
        Sims::Shared(s) => {
            value += spread_term(s);
            add_spread(s, 1.0, &mut sim_cot, &mut unit);
            let sorted = (out_dim == 1).then(|| data.sorted_outcomes()).flatten();
            if let Some(sorted) = sorted {
                let mut near = 0.0;
                for (k, sk) in s.iter().enumerate() {
                    near += sorted.abs_dev_sum(sk[0]);
                    let (below, above) = sorted.counts(sk[0]);
                    sim_cot[k][0] -= (below as f64 - above as f64) / (two_m as f64 * n);
                }
                value -= near / (two_m as f64 * n);
            } else {
                for d in data.iter() {
                    for (k, sk) in s.iter().enumerate() {
                        value -= crate::scores::distance(sk, d.y) / (two_m as f64 * n);
                        dist_grad(sk, d.y, &mut unit);
                        for o in 0..out_dim {
                            sim_cot[k][o] -= unit[o] / (two_m as f64 * n);
                        }
                    }
                }
            }
            for k in 0..two_m {
                sim.simulate_vjp(&thetas[k], &[], &batch.noise[k], &sim_cot[k], &mut cots[k]);
            }
        }
        Sims::PerDatum(all) => {
            for d in data.iter() {
                let s = &all[d.index];
                sim_cot.iter_mut().flatten().for_each(|v| *v = 0.0);
                value += spread_term(s) / n;
                add_spread(s, 1.0 / n, &mut sim_cot, &mut unit);
                for (k, sk) in s.iter().enumerate() {
                    value -= crate::scores::distance(sk, d.y) / (two_m as f64 * n);
                    dist_grad(sk, d.y, &mut unit);
                    for o in 0..out_dim {
                        sim_cot[k][o] -= unit[o] / (two_m as f64 * n);
                    }
                }
                for k in 0..two_m {
                    sim.simulate_vjp(&thetas[k], d.x, &batch.noise[k], &sim_cot[k], &mut cots[k]);
                }
            }
        }
    }
    let grad = pull_back(family, phi, batch, &cots);
    Ok(GradientEstimate::new(grad, EstimatorKind::CrpsPathwise, m, value))
}

/// Central differences `(f(phi + h e_k) - f(phi - h e_k)) / 2h` per coordinate.
pub fn finite_difference_gradient<F>(mut f: F, phi: &[f64], h: f64) -> Result<GradientEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return contract("finite-difference step must be positive");
    }
    let mut probe = phi.to_vec();
    let mut grad = Vec::with_capacity(phi.len());
    for k in 0..phi.len() {
        probe[k] = phi[k] + h;
        let up = f(&probe)?;
        probe[k] = phi[k] - h;
        let down = f(&probe)?;
        probe[k] = phi[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(PviError::Numerical(format!("non-finite objective probing coordinate {k}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    let value = f(phi)?;
    Ok(GradientEstimate::new(grad, EstimatorKind::FiniteDiff, 0, value))
}

/// Runs `estimator` on a frozen batch.
pub fn estimate_gradient(
    estimator: EstimatorKind,
    model: &Model,
    family: &Family,
    phi: &[f64],
    data: &Dataset,
    batch: &McBatch,
) -> Result<GradientEstimate> {
    match estimator {
        EstimatorKind::LogReparam => grad_log_reparam(model, family, phi, data, batch),
        EstimatorKind::LogRejection => grad_log_rejection(model, family, phi, data, batch),
        EstimatorKind::Quadratic => grad_quadratic(model, family, phi, data, batch),
        EstimatorKind::CrpsPathwise => grad_crps(model, family, phi, data, batch),
        EstimatorKind::FiniteDiff => contract("finite differences need an objective closure"),
    }
}

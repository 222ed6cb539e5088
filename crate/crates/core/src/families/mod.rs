//! Variational families `q_phi(theta)` with reparameterized sampling.
//!
//! Every family draws its base noise `u` from a standard normal and maps it
//! through a differentiable transform `theta = T_phi(u)`:
//!
//! * [`Family::GaussianDiag`]: `mu + sigma * u`, with `phi = (mu, log sigma)`.
//! * [`Family::GaussianDense`]: `mu + L u`, with `L` lower triangular. The
//!   unconstrained block stores the strict lower triangle as is and the
//!   diagonal as `log L_ii`.
//! * [`Family::Spline1D`]: a one-dimensional monotone rational-quadratic
//!   spline on `[-B, B]` with identity tails.
//!
//! Parameters live in an unconstrained [`ParamVector`] so plain gradient
//! ascent can move them freely.

mod dual;
mod spline;

use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, contract, PviError, Result};
use spline::RqSpline;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub const DEFAULT_SPLINE_BOUND: f64 = 10.0;

fn default_bound() -> f64 {
    DEFAULT_SPLINE_BOUND
}

/// A named block of a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Flat unconstrained variational parameter with a named layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<Segment>) -> Result<Self> {
        let mut covered = 0;
        for seg in &layout {
            if seg.start != covered {
                return contract(format!("segment '{}' does not tile the vector", seg.name));
            }
            covered += seg.len;
        }
        check_dim("parameter layout", values.len(), covered)?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return contract(format!("parameter entry {i} is not finite"));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.iter().find(|s| s.name == name)?.range();
        Some(&mut self.values[range])
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Diagonal Gaussian prior `N(mean, diag(scale^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        check_dim("prior scale", scale.len(), mean.len())?;
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(PviError::Config("prior scales must be positive".into()));
        }
        Ok(DiagGaussian { mean, scale })
    }

    pub fn isotropic(dim: usize, mean: f64, scale: f64) -> Result<Self> {
        Self::new(vec![mean; dim], vec![scale; dim])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((t, m), s)| {
                let z = (t - m) / s;
                -0.5 * z * z - s.ln() - 0.5 * LN_2PI
            })
            .sum()
    }

    /// Adds `scale * d log p / d theta` to `out`.
    pub fn add_grad(&self, theta: &[f64], scale: f64, out: &mut [f64]) {
        for k in 0..theta.len() {
            out[k] -= scale * (theta[k] - self.mean[k]) / (self.scale[k] * self.scale[k]);
        }
    }
}

/// KL estimate with its φ-gradient. `std_error` is zero for closed forms.
#[derive(Clone, Debug)]
pub struct KlEstimate {
    pub value: f64,
    pub grad: Vec<f64>,
    pub std_error: f64,
}

/// A variational family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    GaussianDiag {
        dim: usize,
    },
    GaussianDense {
        dim: usize,
    },
    #[serde(rename = "spline1d")]
    Spline1D {
        knots: usize,
        #[serde(default = "default_bound")]
        bound: f64,
    },
}

/// Alias kept for readability at call sites that talk about the kind of family.
pub type FamilyKind = Family;

fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl Family {
    /// Validates the family's own parameters.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Family::GaussianDiag { dim } | Family::GaussianDense { dim } if dim == 0 => {
                Err(PviError::Config("family dimension must be at least 1".into()))
            }
            Family::Spline1D { knots, bound } => {
                if knots < 2 {
                    return Err(PviError::Config("spline needs at least 2 bins".into()));
                }
                if (knots as f64) * spline::MIN_BIN_WIDTH >= 1.0 {
                    return Err(PviError::Config("too many spline bins".into()));
                }
                if !(bound > 0.0) || !bound.is_finite() {
                    return Err(PviError::Config("spline bound must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Dimension of theta (and of the base noise).
    pub fn latent_dim(&self) -> usize {
        match *self {
            Family::GaussianDiag { dim } | Family::GaussianDense { dim } => dim,
            Family::Spline1D { .. } => 1,
        }
    }

    pub fn param_dim(&self) -> usize {
        match *self {
            Family::GaussianDiag { dim } => 2 * dim,
            Family::GaussianDense { dim } => dim + dim * (dim + 1) / 2,
            Family::Spline1D { knots, .. } => spline::param_count(knots),
        }
    }

    pub fn layout(&self) -> Vec<Segment> {
        let seg = |name: &str, start, len| Segment {
            name: name.to_string(),
            start,
            len,
        };
        match *self {
            Family::GaussianDiag { dim } => vec![seg("mean", 0, dim), seg("log_scale", dim, dim)],
            Family::GaussianDense { dim } => {
                vec![seg("mean", 0, dim), seg("cholesky", dim, dim * (dim + 1) / 2)]
            }
            Family::Spline1D { knots, .. } => vec![
                seg("widths", 0, knots),
                seg("heights", knots, knots),
                seg("derivatives", 2 * knots, knots - 1),
            ],
        }
    }

    /// Standard initialization: zero mean and unit scale for Gaussians, the
    /// identity map for the spline (so `q` starts at its standard normal base).
    pub fn init_params(&self) -> ParamVector {
        let values = match *self {
            Family::GaussianDiag { dim } | Family::GaussianDense { dim } => {
                vec![0.0; self.param_dim().max(dim)]
            }
            Family::Spline1D { knots, .. } => spline::identity_raw(knots),
        };
        ParamVector {
            values,
            layout: self.layout(),
        }
    }

    /// Gaussian families only: parameters with the given mean and per-axis log-scale.
    pub fn gaussian_params(&self, mean: &[f64], log_scale: &[f64]) -> Result<ParamVector> {
        let d = self.latent_dim();
        check_dim("mean", mean.len(), d)?;
        check_dim("log scale", log_scale.len(), d)?;
        let mut values = vec![0.0; self.param_dim()];
        match *self {
            Family::GaussianDiag { dim } => {
                values[..dim].copy_from_slice(mean);
                values[dim..].copy_from_slice(log_scale);
            }
            Family::GaussianDense { dim } => {
                values[..dim].copy_from_slice(mean);
                for i in 0..dim {
                    values[dim + tri_index(i, i)] = log_scale[i];
                }
            }
            Family::Spline1D { .. } => {
                return contract("gaussian_params called on a spline family");
            }
        }
        ParamVector::new(values, self.layout())
    }

    /// Wraps raw values in this family's layout.
    pub fn params_from(&self, values: Vec<f64>) -> Result<ParamVector> {
        ParamVector::new(values, self.layout())
    }

    pub(crate) fn check_phi(&self, phi: &[f64]) -> Result<()> {
        check_dim("phi", phi.len(), self.param_dim())?;
        if phi.iter().any(|v| !v.is_finite()) {
            return contract("phi has non-finite entries");
        }
        Ok(())
    }

    pub fn draw_base<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.latent_dim())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn spline(&self, phi: &[f64]) -> RqSpline {
        match *self {
            Family::Spline1D { knots, bound } => RqSpline::new(phi, knots, bound),
            _ => unreachable!("spline() on a Gaussian family"),
        }
    }

    /// `theta = T_phi(u)`.
    pub fn sample_reparam(&self, phi: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_phi(phi)?;
        check_dim("base noise", u.len(), self.latent_dim())?;
        let mut theta = vec![0.0; self.latent_dim()];
        self.sample_into(phi, u, &mut theta);
        Ok(theta)
    }

    /// Unchecked `T_phi(u)` for hot loops.
    pub(crate) fn sample_into(&self, phi: &[f64], u: &[f64], theta: &mut [f64]) {
        match *self {
            Family::GaussianDiag { dim } => {
                for k in 0..dim {
                    theta[k] = phi[k] + phi[dim + k].exp() * u[k];
                }
            }
            Family::GaussianDense { dim } => {
                let chol = &phi[dim..];
                for i in 0..dim {
                    let mut acc = phi[i] + chol[tri_index(i, i)].exp() * u[i];
                    for j in 0..i {
                        acc += chol[tri_index(i, j)] * u[j];
                    }
                    theta[i] = acc;
                }
            }
            Family::Spline1D { .. } => {
                theta[0] = self.spline(phi).forward(u[0]).0;
            }
        }
    }

    /// Draws `count` samples from `q_phi` with a fresh base noise each.
    pub fn sample_many<R: Rng + ?Sized>(&self, phi: &[f64], count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        self.check_phi(phi)?;
        let d = self.latent_dim();
        let spline = matches!(self, Family::Spline1D { .. }).then(|| self.spline(phi));
        Ok((0..count)
            .map(|_| {
                let u = self.draw_base(rng);
                match &spline {
                    Some(s) => vec![s.forward(u[0]).0],
                    None => {
                        let mut t = vec![0.0; d];
                        self.sample_into(phi, &u, &mut t);
                        t
                    }
                }
            })
            .collect())
    }

    /// `log q_phi(theta)`.
    pub fn log_density(&self, phi: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_phi(phi)?;
        check_dim("theta", theta.len(), self.latent_dim())?;
        Ok(match *self {
            Family::GaussianDiag { dim } => (0..dim)
                .map(|k| {
                    let ls = phi[dim + k];
                    let z = (theta[k] - phi[k]) * (-ls).exp();
                    -0.5 * z * z - ls - 0.5 * LN_2PI
                })
                .sum(),
            Family::GaussianDense { dim } => {
                let z = self.dense_whiten(phi, theta);
                let logdet: f64 = (0..dim).map(|i| phi[dim + tri_index(i, i)]).sum();
                -0.5 * z.iter().map(|v| v * v).sum::<f64>() - logdet - 0.5 * dim as f64 * LN_2PI
            }
            Family::Spline1D { .. } => {
                let s = self.spline(phi);
                let u = s.inverse(theta[0]);
                let (_, logdet) = s.forward(u);
                -0.5 * u * u - 0.5 * LN_2PI - logdet
            }
        })
    }

    /// `z = L^{-1} (theta - mu)` by forward substitution.
    fn dense_whiten(&self, phi: &[f64], theta: &[f64]) -> Vec<f64> {
        let dim = self.latent_dim();
        let chol = &phi[dim..];
        let mut z = vec![0.0; dim];
        for i in 0..dim {
            let mut acc = theta[i] - phi[i];
            for j in 0..i {
                acc -= chol[tri_index(i, j)] * z[j];
            }
            z[i] = acc / chol[tri_index(i, i)].exp();
        }
        z
    }

    /// `cotangent^T dT_phi(u)/dphi`.
    pub fn pathwise_jvp(&self, phi: &[f64], u: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_phi(phi)?;
        check_dim("base noise", u.len(), self.latent_dim())?;
        check_dim("cotangent", cotangent.len(), self.latent_dim())?;
        let mut out = vec![0.0; self.param_dim()];
        self.accumulate_jvp(phi, u, cotangent, &mut out);
        Ok(out)
    }

    /// Unchecked, accumulating form of [`Family::pathwise_jvp`].
    pub(crate) fn accumulate_jvp(&self, phi: &[f64], u: &[f64], cot: &[f64], out: &mut [f64]) {
        match *self {
            Family::GaussianDiag { dim } => {
                for k in 0..dim {
                    out[k] += cot[k];
                    out[dim + k] += cot[k] * phi[dim + k].exp() * u[k];
                }
            }
            Family::GaussianDense { dim } => {
                let chol = &phi[dim..];
                for i in 0..dim {
                    out[i] += cot[i];
                    for j in 0..i {
                        out[dim + tri_index(i, j)] += cot[i] * u[j];
                    }
                    let t = tri_index(i, i);
                    out[dim + t] += cot[i] * u[i] * chol[t].exp();
                }
            }
            Family::Spline1D { .. } => {
                if cot[0] == 0.0 {
                    return;
                }
                let s = self.spline(phi);
                if let Some((k, theta, _)) = s.local(u[0]) {
                    s.chain(k, &theta.d, cot[0], out);
                }
            }
        }
    }

    /// Batched jvp: `sum_j T_phi(u_j)` pulled back with cotangents `cots[j]`.
    /// Builds the spline once per call.
    pub(crate) fn accumulate_jvp_batch(&self, phi: &[f64], us: &[Vec<f64>], cots: &[Vec<f64>], out: &mut [f64]) {
        if let Family::Spline1D { .. } = self {
            let s = self.spline(phi);
            for (u, c) in us.iter().zip(cots) {
                if c[0] == 0.0 {
                    continue;
                }
                if let Some((k, theta, _)) = s.local(u[0]) {
                    s.chain(k, &theta.d, c[0], out);
                }
            }
        } else {
            for (u, c) in us.iter().zip(cots) {
                self.accumulate_jvp(phi, u, c, out);
            }
        }
    }

    /// Batched `T_phi(u_j)`; builds the spline once.
    pub(crate) fn sample_batch(&self, phi: &[f64], us: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if let Family::Spline1D { .. } = self {
            let s = self.spline(phi);
            us.iter().map(|u| vec![s.forward(u[0]).0]).collect()
        } else {
            us.iter()
                .map(|u| {
                    let mut t = vec![0.0; self.latent_dim()];
                    self.sample_into(phi, u, &mut t);
                    t
                })
                .collect()
        }
    }

    /// Score function `d log q_phi(theta) / dphi` with theta held fixed.
    pub fn grad_logq_wrt_phi(&self, phi: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.check_phi(phi)?;
        check_dim("theta", theta.len(), self.latent_dim())?;
        let mut out = vec![0.0; self.param_dim()];
        match *self {
            Family::GaussianDiag { dim } => {
                for k in 0..dim {
                    let inv_var = (-2.0 * phi[dim + k]).exp();
                    let r = theta[k] - phi[k];
                    out[k] = r * inv_var;
                    out[dim + k] = r * r * inv_var - 1.0;
                }
            }
            Family::GaussianDense { dim } => {
                let chol = &phi[dim..];
                let z = self.dense_whiten(phi, theta);
                // w = L^{-T} z by back substitution
                let mut w = vec![0.0; dim];
                for i in (0..dim).rev() {
                    let mut acc = z[i];
                    for j in i + 1..dim {
                        acc -= chol[tri_index(j, i)] * w[j];
                    }
                    w[i] = acc / chol[tri_index(i, i)].exp();
                }
                for i in 0..dim {
                    out[i] = w[i];
                    for j in 0..i {
                        out[dim + tri_index(i, j)] = w[i] * z[j];
                    }
                    let t = tri_index(i, i);
                    out[dim + t] = w[i] * z[i] * chol[t].exp() - 1.0;
                }
            }
            Family::Spline1D { .. } => {
                let s = self.spline(phi);
                let u = s.inverse(theta[0]);
                if let Some((k, t, ld)) = s.local(u) {
                    // log q(theta) = log N(u(phi)) - log T'(u(phi)), with
                    // du/dphi = -(dT/dphi) / T'(u) at fixed theta.
                    let iu = RqSpline::du_index();
                    let slope = ld.v.exp();
                    let dlogq_du = -u - ld.d[iu];
                    s.chain(k, &t.d, -dlogq_du / slope, &mut out);
                    s.chain(k, &ld.d, -1.0, &mut out);
                }
            }
        }
        Ok(out)
    }

    /// `log |det dT_phi(u)/du|`.
    pub fn log_det_jacobian(&self, phi: &[f64], u: &[f64]) -> f64 {
        match *self {
            Family::GaussianDiag { dim } => phi[dim..].iter().sum(),
            Family::GaussianDense { dim } => (0..dim).map(|i| phi[dim + tri_index(i, i)]).sum(),
            Family::Spline1D { .. } => self.spline(phi).forward(u[0]).1,
        }
    }

    /// Adds `scale * d log|det J| / dphi` at fixed `u` to `out`.
    pub(crate) fn accumulate_grad_log_det(&self, phi: &[f64], u: &[f64], scale: f64, out: &mut [f64]) {
        match *self {
            Family::GaussianDiag { dim } => out[dim..].iter_mut().for_each(|g| *g += scale),
            Family::GaussianDense { dim } => {
                for i in 0..dim {
                    out[dim + tri_index(i, i)] += scale;
                }
            }
            Family::Spline1D { .. } => {
                let s = self.spline(phi);
                if let Some((k, _, ld)) = s.local(u[0]) {
                    s.chain(k, &ld.d, scale, out);
                }
            }
        }
    }

    /// `log q_phi(T_phi(u))`, the density at a reparameterized draw.
    pub fn log_density_at_draw(&self, phi: &[f64], u: &[f64]) -> f64 {
        let base: f64 = u.iter().map(|v| -0.5 * v * v - 0.5 * LN_2PI).sum();
        base - self.log_det_jacobian(phi, u)
    }

    /// `KL(q_phi || prior)`: closed form for Gaussian families; for the spline a
    /// reparameterized Monte Carlo estimate over the supplied base draws.
    pub fn kl_to_gaussian_prior(&self, phi: &[f64], prior: &DiagGaussian, mc_draws: &[Vec<f64>]) -> Result<KlEstimate> {
        self.check_phi(phi)?;
        check_dim("prior", prior.dim(), self.latent_dim())?;
        if prior.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(PviError::Config("prior scale must be positive".into()));
        }
        let mut grad = vec![0.0; self.param_dim()];
        match *self {
            Family::GaussianDiag { dim } => {
                let mut value = 0.0;
                for k in 0..dim {
                    let (m, s) = (prior.mean[k], prior.scale[k]);
                    let ls = phi[dim + k];
                    let var = (2.0 * ls).exp();
                    let diff = phi[k] - m;
                    value += s.ln() - ls + (var + diff * diff) / (2.0 * s * s) - 0.5;
                    grad[k] = diff / (s * s);
                    grad[dim + k] = var / (s * s) - 1.0;
                }
                Ok(KlEstimate {
                    value,
                    grad,
                    std_error: 0.0,
                })
            }
            Family::GaussianDense { dim } => {
                let chol = &phi[dim..];
                let mut value = 0.0;
                for i in 0..dim {
                    let (m, s) = (prior.mean[i], prior.scale[i]);
                    let s2 = s * s;
                    let diff = phi[i] - m;
                    value += diff * diff / s2 + 2.0 * s.ln() - 1.0;
                    grad[i] = diff / s2;
                    for j in 0..i {
                        let l = chol[tri_index(i, j)];
                        value += l * l / s2;
                        grad[dim + tri_index(i, j)] = l / s2;
                    }
                    let t = tri_index(i, i);
                    let lii2 = (2.0 * chol[t]).exp();
                    value += lii2 / s2 - 2.0 * chol[t];
                    grad[dim + t] = lii2 / s2 - 1.0;
                }
                Ok(KlEstimate {
                    value: 0.5 * value,
                    grad,
                    std_error: 0.0,
                })
            }
            Family::Spline1D { .. } => {
                if mc_draws.is_empty() {
                    return contract("spline KL needs at least one Monte Carlo draw");
                }
                let s = self.spline(phi);
                let count = mc_draws.len() as f64;
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for u in mc_draws {
                    check_dim("base noise", u.len(), 1)?;
                    let (theta, logdet) = s.forward(u[0]);
                    let term = -0.5 * u[0] * u[0] - 0.5 * LN_2PI - logdet - prior.log_density(&[theta]);
                    sum += term;
                    sum_sq += term * term;
                    if let Some((k, t, ld)) = s.local(u[0]) {
                        s.chain(k, &ld.d, -1.0 / count, &mut grad);
                        let dlogp = -(theta - prior.mean[0]) / (prior.scale[0] * prior.scale[0]);
                        s.chain(k, &t.d, -dlogp / count, &mut grad);
                    } else {
                        // identity tail: theta = u, no phi dependence
                    }
                }
                let mean = sum / count;
                let var = (sum_sq / count - mean * mean).max(0.0);
                let std_error = if mc_draws.len() > 1 {
                    (var / (count - 1.0)).sqrt()
                } else {
                    f64::INFINITY
                };
                Ok(KlEstimate {
                    value: mean,
                    grad,
                    std_error,
                })
            }
        }
    }

    /// Analytic marginal means and standard deviations for Gaussian families.
    pub fn gaussian_moments(&self, phi: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        match *self {
            Family::GaussianDiag { dim } => Some((
                phi[..dim].to_vec(),
                phi[dim..].iter().map(|l| l.exp()).collect(),
            )),
            Family::GaussianDense { dim } => {
                let chol = &phi[dim..];
                let std = (0..dim)
                    .map(|i| {
                        let mut v = (2.0 * chol[tri_index(i, i)]).exp();
                        for j in 0..i {
                            v += chol[tri_index(i, j)].powi(2);
                        }
                        v.sqrt()
                    })
                    .collect();
                Some((phi[..dim].to_vec(), std))
            }
            Family::Spline1D { .. } => None,
        }
    }

    /// Marginal means and standard deviations: analytic for Gaussians,
    /// otherwise from `draws` samples of a generator seeded with `seed`.
    pub fn marginal_moments(&self, phi: &[f64], draws: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_phi(phi)?;
        if let Some(m) = self.gaussian_moments(phi) {
            return Ok(m);
        }
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples = self.sample_many(phi, draws.max(2), &mut rng)?;
        let d = self.latent_dim();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in &samples {
            for k in 0..d {
                mean[k] += s[k] / n;
            }
        }
        let mut var = vec![0.0; d];
        for s in &samples {
            for k in 0..d {
                var[k] += (s[k] - mean[k]).powi(2) / (n - 1.0);
            }
        }
        Ok((mean, var.into_iter().map(f64::sqrt).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag1() -> Family {
        Family::GaussianDiag { dim: 1 }
    }

    fn spline() -> Family {
        Family::Spline1D { knots: 8, bound: 10.0 }
    }

    #[test]
    fn diag_sample_examples() {
        let f = diag1();
        let phi = f.gaussian_params(&[0.0], &[0.0]).unwrap();
        assert_eq!(f.sample_reparam(&phi, &[0.5]).unwrap(), vec![0.5]);
        let phi = f.gaussian_params(&[1.0], &[2f64.ln()]).unwrap();
        let t = f.sample_reparam(&phi, &[1.0]).unwrap();
        assert!((t[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn spline_identity_sample() {
        let f = spline();
        let phi = f.init_params();
        let t = f.sample_reparam(&phi, &[0.3]).unwrap();
        assert!((t[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let f = diag1();
        let phi = f.init_params();
        assert!(matches!(f.sample_reparam(&phi, &[0.1, 0.2]), Err(PviError::Contract(_))));
        assert!(matches!(f.sample_reparam(&[0.0], &[0.1]), Err(PviError::Contract(_))));
    }

    #[test]
    fn non_finite_phi_rejected() {
        let f = diag1();
        assert!(matches!(
            f.log_density(&[f64::NAN, 0.0], &[0.0]),
            Err(PviError::Contract(_))
        ));
    }

    #[test]
    fn log_density_examples() {
        let f = diag1();
        let lp = f.log_density(&f.init_params(), &[0.0]).unwrap();
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-12);
        let g = Family::GaussianDense { dim: 2 };
        let lp = g.log_density(&g.init_params(), &[0.0, 0.0]).unwrap();
        assert!((lp + LN_2PI).abs() < 1e-12);
        // identity spline: standard normal density
        let s = spline();
        let lp = s.log_density(&s.init_params(), &[0.3]).unwrap();
        assert!((lp - (-0.5 * 0.09 - 0.5 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn jvp_examples() {
        let f = diag1();
        let phi = f.init_params();
        assert_eq!(f.pathwise_jvp(&phi, &[0.5], &[1.0]).unwrap(), vec![1.0, 0.5]);
        assert_eq!(f.pathwise_jvp(&phi, &[0.5], &[0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn score_function_examples() {
        let f = diag1();
        let phi = f.init_params();
        let g = f.grad_logq_wrt_phi(&phi, &[1.0]).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-14 && g[1].abs() < 1e-14);
        let g = f.grad_logq_wrt_phi(&phi, &[0.0]).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn kl_examples() {
        let f = diag1();
        let prior = DiagGaussian::isotropic(1, 0.0, 1.0).unwrap();
        let kl = f.kl_to_gaussian_prior(&f.init_params(), &prior, &[]).unwrap();
        assert_eq!(kl.value, 0.0);
        let phi = f.gaussian_params(&[1.0], &[0.0]).unwrap();
        let kl = f.kl_to_gaussian_prior(&phi, &prior, &[]).unwrap();
        assert!((kl.value - 0.5).abs() < 1e-14);
        assert!((kl.grad[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kl_rejects_bad_prior_scale() {
        let f = diag1();
        let prior = DiagGaussian {
            mean: vec![0.0],
            scale: vec![0.0],
        };
        assert!(f.kl_to_gaussian_prior(&f.init_params(), &prior, &[]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn dense_kl_matches_diag_kl_when_diagonal() {
        let diag = Family::GaussianDiag { dim: 3 };
        let dense = Family::GaussianDense { dim: 3 };
        let mean = [0.3, -1.0, 2.0];
        let ls = [0.2, -0.4, 0.1];
        let prior = DiagGaussian::new(vec![0.1, 0.0, -0.5], vec![1.5, 0.7, 2.0]).unwrap();
        let a = diag
            .kl_to_gaussian_prior(&diag.gaussian_params(&mean, &ls).unwrap(), &prior, &[])
            .unwrap();
        let b = dense
            .kl_to_gaussian_prior(&dense.gaussian_params(&mean, &ls).unwrap(), &prior, &[])
            .unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn spline_kl_to_its_base_is_zero_in_mean() {
        let f = spline();
        let prior = DiagGaussian::isotropic(1, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<Vec<f64>> = (0..1000).map(|_| f.draw_base(&mut rng)).collect();
        let kl = f.kl_to_gaussian_prior(&f.init_params(), &prior, &draws).unwrap();
        assert!(kl.value.abs() < 1e-10);
    }

    #[test]
    fn layout_tiles_vector() {
        for f in [
            Family::GaussianDiag { dim: 3 },
            Family::GaussianDense { dim: 4 },
            Family::Spline1D { knots: 32, bound: 10.0 },
        ] {
            let p = f.init_params();
            assert_eq!(p.len(), f.param_dim());
            let covered: usize = p.layout().iter().map(|s| s.len).sum();
            assert_eq!(covered, p.len());
        }
    }

    #[test]
    fn param_vector_rejects_bad_layout() {
        let seg = Segment {
            name: "a".into(),
            start: 1,
            len: 1,
        };
        assert!(ParamVector::new(vec![0.0], vec![seg]).is_err());
    }

    #[test]
    fn family_serde_names() {
        let f: Family = serde_json::from_str(r#"{"kind":"spline1d","knots":32}"#).unwrap();
        assert_eq!(f, Family::Spline1D { knots: 32, bound: 10.0 });
        let f: Family = serde_json::from_str(r#"{"kind":"gaussian_dense","dim":2}"#).unwrap();
        assert_eq!(f, Family::GaussianDense { dim: 2 });
    }
}

//! Monotone rational-quadratic spline on `[-B, B]` with identity tails.
//!
//! Raw parameter layout (K bins): `K` width logits, `K` height logits and
//! `K - 1` interior derivative pre-activations. Widths and heights go through
//! a softmax with a floor, interior derivatives through a softplus with a
//! floor, and the boundary derivatives are pinned to 1 so the map joins the
//! identity tails with a continuous slope.

use super::dual::Dual;

pub(crate) const MIN_BIN_WIDTH: f64 = 1e-3;
pub(crate) const MIN_BIN_HEIGHT: f64 = 1e-3;
pub(crate) const MIN_DERIVATIVE: f64 = 1e-3;

// Local variables of one bin: left knot x, bin width, left knot y, bin
// height, left derivative, right derivative, input.
const LX: usize = 0;
const LW: usize = 1;
const LY: usize = 2;
const LH: usize = 3;
const LD0: usize = 4;
const LD1: usize = 5;
const LU: usize = 6;

pub(crate) type Local = Dual<7>;

pub(crate) fn param_count(bins: usize) -> usize {
    3 * bins - 1
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Raw parameters that make the spline the identity map.
pub(crate) fn identity_raw(bins: usize) -> Vec<f64> {
    let target = 1.0 - MIN_DERIVATIVE;
    // inverse softplus
    let c = target.exp_m1().ln();
    let mut raw = vec![0.0; 2 * bins];
    raw.extend(std::iter::repeat_n(c, bins - 1));
    raw
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[derive(Clone, Debug)]
pub(crate) struct RqSpline {
    bins: usize,
    bound: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
    widths: Vec<f64>,
    heights: Vec<f64>,
    derivs: Vec<f64>,
    soft_w: Vec<f64>,
    soft_h: Vec<f64>,
    deriv_slope: Vec<f64>,
}

impl RqSpline {
    pub fn new(raw: &[f64], bins: usize, bound: f64) -> Self {
        debug_assert_eq!(raw.len(), param_count(bins));
        let soft_w = softmax(&raw[..bins]);
        let soft_h = softmax(&raw[bins..2 * bins]);
        let span = 2.0 * bound;
        let kw = 1.0 - bins as f64 * MIN_BIN_WIDTH;
        let kh = 1.0 - bins as f64 * MIN_BIN_HEIGHT;
        let widths: Vec<f64> = soft_w.iter().map(|s| span * (MIN_BIN_WIDTH + kw * s)).collect();
        let heights: Vec<f64> = soft_h.iter().map(|s| span * (MIN_BIN_HEIGHT + kh * s)).collect();
        let mut xs = Vec::with_capacity(bins + 1);
        let mut ys = Vec::with_capacity(bins + 1);
        let (mut x, mut y) = (-bound, -bound);
        for k in 0..bins {
            xs.push(x);
            ys.push(y);
            x += widths[k];
            y += heights[k];
        }
        xs.push(bound);
        ys.push(bound);
        let interior = &raw[2 * bins..];
        let mut derivs = Vec::with_capacity(bins + 1);
        derivs.push(1.0);
        derivs.extend(interior.iter().map(|c| MIN_DERIVATIVE + softplus(*c)));
        derivs.push(1.0);
        let deriv_slope = interior.iter().map(|c| sigmoid(*c)).collect();
        RqSpline {
            bins,
            bound,
            xs,
            ys,
            widths,
            heights,
            derivs,
            soft_w,
            soft_h,
            deriv_slope,
        }
    }

    fn inside(&self, v: f64) -> bool {
        v >= -self.bound && v <= self.bound
    }

    fn bin_of(knots: &[f64], v: f64) -> usize {
        let bins = knots.len() - 1;
        // knots are strictly increasing
        let idx = knots.partition_point(|k| *k <= v);
        idx.saturating_sub(1).min(bins - 1)
    }

    fn eval_bin(&self, k: usize, u: f64) -> (Local, Local) {
        let x = Local::var(self.xs[k], LX);
        let w = Local::var(self.widths[k], LW);
        let y = Local::var(self.ys[k], LY);
        let h = Local::var(self.heights[k], LH);
        let d0 = Local::var(self.derivs[k], LD0);
        let d1 = Local::var(self.derivs[k + 1], LD1);
        let u = Local::var(u, LU);
        let xi = (u - x) / w;
        let s = h / w;
        let one_m = 1.0 - xi;
        let t = xi * one_m;
        let num = h * (s * xi * xi + d0 * t);
        let den = s + (d1 + d0 - s * 2.0) * t;
        let theta = y + num / den;
        let slope_num = s * s * (d1 * xi * xi + s * t * 2.0 + d0 * one_m * one_m);
        let logdet = (slope_num / (den * den)).ln();
        (theta, logdet)
    }

    /// `(T(u), log T'(u))`.
    pub fn forward(&self, u: f64) -> (f64, f64) {
        if !self.inside(u) {
            return (u, 0.0);
        }
        let k = Self::bin_of(&self.xs, u);
        let (w, h) = (self.widths[k], self.heights[k]);
        let (d0, d1) = (self.derivs[k], self.derivs[k + 1]);
        let xi = (u - self.xs[k]) / w;
        let s = h / w;
        let one_m = 1.0 - xi;
        let t = xi * one_m;
        let den = s + (d1 + d0 - 2.0 * s) * t;
        let theta = self.ys[k] + h * (s * xi * xi + d0 * t) / den;
        let slope = s * s * (d1 * xi * xi + 2.0 * s * t + d0 * one_m * one_m) / (den * den);
        (theta, slope.ln())
    }

    pub fn inverse(&self, theta: f64) -> f64 {
        if !self.inside(theta) {
            return theta;
        }
        let k = Self::bin_of(&self.ys, theta);
        let (w, h) = (self.widths[k], self.heights[k]);
        let (d0, d1) = (self.derivs[k], self.derivs[k + 1]);
        let s = h / w;
        let dy = theta - self.ys[k];
        let a = h * (s - d0) + dy * (d1 + d0 - 2.0 * s);
        let b = h * d0 - dy * (d1 + d0 - 2.0 * s);
        let c = -s * dy;
        let disc = (b * b - 4.0 * a * c).max(0.0);
        let xi = (2.0 * c) / (-b - disc.sqrt());
        self.xs[k] + xi.clamp(0.0, 1.0) * w
    }

    /// Local partials of `T(u)` and `log T'(u)`, or `None` in the identity tails.
    pub fn local(&self, u: f64) -> Option<(usize, Local, Local)> {
        if !self.inside(u) {
            return None;
        }
        let k = Self::bin_of(&self.xs, u);
        let (theta, logdet) = self.eval_bin(k, u);
        Some((k, theta, logdet))
    }

    /// Adds `scale * dQ/dphi` to `out`, where `local` holds the partials of a
    /// quantity Q with respect to the bin variables of bin `k`.
    pub fn chain(&self, k: usize, local: &[f64; 7], scale: f64, out: &mut [f64]) {
        let bins = self.bins;
        let span = 2.0 * self.bound;
        let kw = span * (1.0 - bins as f64 * MIN_BIN_WIDTH);
        let kh = span * (1.0 - bins as f64 * MIN_BIN_HEIGHT);

        // Widths: knots left of bin k shift x_k, bin k itself sets the width.
        let gx = local[LX];
        let gw = local[LW];
        let gy = local[LY];
        let gh = local[LH];
        let below_w: f64 = self.soft_w[..k].iter().sum();
        let below_h: f64 = self.soft_h[..k].iter().sum();
        let mean_w = gx * below_w + gw * self.soft_w[k];
        let mean_h = gy * below_h + gh * self.soft_h[k];
        for j in 0..bins {
            let gwj = if j < k {
                gx
            } else if j == k {
                gw
            } else {
                0.0
            };
            let ghj = if j < k {
                gy
            } else if j == k {
                gh
            } else {
                0.0
            };
            out[j] += scale * kw * self.soft_w[j] * (gwj - mean_w);
            out[bins + j] += scale * kh * self.soft_h[j] * (ghj - mean_h);
        }
        let off = 2 * bins;
        if k >= 1 {
            out[off + k - 1] += scale * local[LD0] * self.deriv_slope[k - 1];
        }
        if k < bins - 1 {
            out[off + k] += scale * local[LD1] * self.deriv_slope[k];
        }
    }

    pub fn du_index() -> usize {
        LU
    }
}

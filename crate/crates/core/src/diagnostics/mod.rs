//! Post-fit diagnostics: two-sample KS distances, heterogeneity detection and
//! held-out score tables.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PviError, Result};
use crate::families::Family;
use crate::models::{Dataset, Model};
use crate::scores::{score_objective, McBatch, ScoreKind};

/// `sup_x |F_a(x) - F_b(x)|` over the pooled sample points.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(PviError::Contract("KS distance needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(PviError::Contract("KS distance needs samples without NaN".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

pub const DEFAULT_THRESHOLD: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityEntry {
    pub name: String,
    pub pvi_std: f64,
    pub reference_std: f64,
    /// `pvi_std / reference_std`; `+inf` when the reference is zero.
    pub ratio: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub threshold: f64,
    pub entries: Vec<HeterogeneityEntry>,
}

impl HeterogeneityReport {
    pub fn flagged(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| e.flagged).map(|e| e.name.as_str()).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What PVI spreads are compared against.
#[derive(Clone, Copy, Debug)]
pub enum Reference<'a> {
    /// A second fit (usually classical VI).
    Variational { family: &'a Family, phi: &'a [f64] },
    /// Known posterior standard deviations.
    Analytic(&'a [f64]),
}

/// Marginal standard deviations: analytic for Gaussian families, otherwise
/// the empirical std of `draws` samples.
pub fn marginal_stds(family: &Family, phi: &[f64], draws: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(family.marginal_moments(phi, draws, seed)?.1)
}

/// Flags parameters whose PVI spread exceeds `threshold` times the reference spread.
pub fn heterogeneity_report(
    family: &Family,
    phi_pvi: &[f64],
    reference: Reference<'_>,
    names: &[String],
    threshold: f64,
    seed: u64,
) -> Result<HeterogeneityReport> {
    if !(threshold > 0.0) {
        return Err(PviError::Config("heterogeneity threshold must be positive".into()));
    }
    let pvi = marginal_stds(family, phi_pvi, 10_000, seed)?;
    let reference = match reference {
        Reference::Variational { family, phi } => marginal_stds(family, phi, 10_000, seed)?,
        Reference::Analytic(s) => s.to_vec(),
    };
    check_dim("reference stds", reference.len(), pvi.len())?;
    check_dim("parameter names", names.len(), pvi.len())?;
    let entries = names
        .iter()
        .zip(pvi.iter().zip(&reference))
        .map(|(name, (&p, &r))| {
            let ratio = if r > 0.0 { p / r } else { f64::INFINITY };
            HeterogeneityEntry {
                name: name.clone(),
                pvi_std: p,
                reference_std: r,
                ratio,
                flagged: ratio > threshold,
            }
        })
        .collect();
    Ok(HeterogeneityReport { threshold, entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub score: ScoreKind,
    /// Mean per-datum score, oriented higher-is-better (CRPS and energy rows
    /// hold the negated score).
    pub mean: f64,
    /// Standard error of the mean across test data.
    pub std_error: f64,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub mc_size: usize,
    pub seed: u64,
    pub rows: Vec<ScoreRow>,
    /// Scores that do not apply to the model, with the reason.
    pub skipped: Vec<(ScoreKind, String)>,
}

impl ScoreTable {
    pub fn get(&self, kind: ScoreKind) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.score == kind)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates every applicable score on `test` with `mc_size` draws. Each score
/// gets its own batch from a `ChaCha8Rng` seeded with `seed`.
pub fn heldout_scores(model: &Model, family: &Family, phi: &[f64], test: &Dataset, mc_size: usize, seed: u64) -> Result<ScoreTable> {
    family.check_phi(phi)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for kind in ScoreKind::ALL {
        if let Err(e) = kind.check(model, test) {
            skipped.push((kind, e.to_string()));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = McBatch::for_score(kind, family, model, mc_size, &mut rng)?;
        let eval = score_objective(kind, model, family, phi, test, &batch)?;
        let n = eval.terms.len() as f64;
        let var = if eval.terms.len() > 1 {
            eval.terms.iter().map(|t| (t - eval.value).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        rows.push(ScoreRow {
            score: kind,
            mean: eval.value,
            std_error: (var / n).sqrt(),
            n_test: eval.terms.len(),
        });
    }
    Ok(ScoreTable {
        mc_size,
        seed,
        rows,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_examples() {
        assert_eq!(two_sample_ks(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(two_sample_ks(&[1.0, 2.0], &[5.0, 6.0, 7.0]).unwrap(), 1.0);
        let d = two_sample_ks(&[1.0, 2.0, 3.0], &[1.5, 2.5]).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
        assert!(two_sample_ks(&[], &[1.0]).is_err());
    }

    #[test]
    fn equal_spreads_raise_no_flags() {
        let f = Family::GaussianDiag { dim: 2 };
        let phi = f.gaussian_params(&[0.0, 1.0], &[-1.0, 0.5]).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let r = heterogeneity_report(&f, &phi, Reference::Variational { family: &f, phi: &phi }, &names, 3.0, 0).unwrap();
        assert!(r.flagged().is_empty());
        assert!(r.entries.iter().all(|e| (e.ratio - 1.0).abs() < 1e-15));
        let r = heterogeneity_report(&f, &phi, Reference::Analytic(&[0.0, 1.0]), &names, 3.0, 0).unwrap();
        assert_eq!(r.entries[0].ratio, f64::INFINITY);
        assert_eq!(r.flagged(), vec!["a"]);
    }
}

//! Datasets and their CSV form.
//!
//! CSV layout: a header row and one datum per row. Outcome columns come first
//! (`y` for scalars, `y1..ym` for vectors, `y,N` for binomial cells),
//! followed by covariate columns `x1..xd`.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{PviError, Result};

/// Observed data, conditionally IID given covariates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    outcomes: Vec<Vec<f64>>,
    covariates: Option<Vec<Vec<f64>>>,
    trial_counts: Option<Vec<u64>>,
    #[serde(skip)]
    sorted: OnceLock<Option<Arc<SortedOutcomes>>>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.outcomes == other.outcomes
            && self.covariates == other.covariates
            && self.trial_counts == other.trial_counts
    }
}

/// One datum borrowed from a [`Dataset`].
#[derive(Clone, Copy, Debug)]
pub struct Datum<'a> {
    pub index: usize,
    pub y: &'a [f64],
    pub x: &'a [f64],
    pub trials: Option<u64>,
}

impl<'a> Datum<'a> {
    /// The same datum with a different outcome.
    pub fn with_outcome<'b>(&self, y: &'b [f64]) -> Datum<'b>
    where
        'a: 'b,
    {
        Datum { y, ..*self }
    }
}

/// Sorted scalar outcomes with prefix sums, for `O(log n)` sums of `|s - y_i|`.
#[derive(Clone, Debug)]
pub(crate) struct SortedOutcomes {
    pub sorted: Vec<f64>,
    pub prefix: Vec<f64>,
}

impl SortedOutcomes {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| a.total_cmp(b));
        let mut prefix = Vec::with_capacity(values.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for v in &values {
            acc += v;
            prefix.push(acc);
        }
        SortedOutcomes { sorted: values, prefix }
    }

    /// `(#{v < s}, #{v > s})`.
    pub fn counts(&self, s: f64) -> (usize, usize) {
        let below = self.sorted.partition_point(|v| *v < s);
        let not_above = self.sorted.partition_point(|v| *v <= s);
        (below, self.sorted.len() - not_above)
    }

    /// `sum_i |s - v_i|`.
    pub fn abs_dev_sum(&self, s: f64) -> f64 {
        let n = self.sorted.len();
        let k = self.sorted.partition_point(|v| *v < s);
        let total = self.prefix[n];
        let below = self.prefix[k];
        (s * k as f64 - below) + ((total - below) - s * (n - k) as f64)
    }
}

impl Dataset {
    pub fn new(
        outcomes: Vec<Vec<f64>>,
        covariates: Option<Vec<Vec<f64>>>,
        trial_counts: Option<Vec<u64>>,
    ) -> Result<Self> {
        let n = outcomes.len();
        if n == 0 {
            return Err(PviError::Data("dataset must contain at least one datum".into()));
        }
        let dim = outcomes[0].len();
        if dim == 0 || outcomes.iter().any(|y| y.len() != dim) {
            return Err(PviError::Data("outcomes must share a nonzero dimension".into()));
        }
        if outcomes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PviError::Data("outcomes must be finite".into()));
        }
        if let Some(x) = &covariates {
            if x.len() != n {
                return Err(PviError::Data(format!("{} covariate rows for {n} outcomes", x.len())));
            }
            let d = x[0].len();
            if x.iter().any(|row| row.len() != d) {
                return Err(PviError::Data("covariate rows differ in length".into()));
            }
        }
        if let Some(counts) = &trial_counts {
            if counts.len() != n {
                return Err(PviError::Data(format!("{} trial counts for {n} outcomes", counts.len())));
            }
            if dim != 1 {
                return Err(PviError::Data("binomial cells need scalar outcomes".into()));
            }
            for (i, (y, big_n)) in outcomes.iter().zip(counts).enumerate() {
                let y = y[0];
                if y < 0.0 || y > *big_n as f64 || y.fract() != 0.0 {
                    return Err(PviError::Data(format!("datum {i}: count {y} outside 0..={big_n}")));
                }
            }
        }
        Ok(Dataset {
            outcomes,
            covariates,
            trial_counts,
            sorted: OnceLock::new(),
        })
    }

    /// Scalar outcomes without covariates.
    pub fn from_scalars(values: Vec<f64>) -> Result<Self> {
        Self::new(values.into_iter().map(|v| vec![v]).collect(), None, None)
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn outcome_dim(&self) -> usize {
        self.outcomes[0].len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariates.as_ref().map_or(0, |x| x[0].len())
    }

    pub fn outcomes(&self) -> &[Vec<f64>] {
        &self.outcomes
    }

    pub fn covariates(&self) -> Option<&[Vec<f64>]> {
        self.covariates.as_deref()
    }

    pub fn trial_counts(&self) -> Option<&[u64]> {
        self.trial_counts.as_deref()
    }

    pub fn datum(&self, i: usize) -> Datum<'_> {
        Datum {
            index: i,
            y: &self.outcomes[i],
            x: self.covariates.as_ref().map_or(&[][..], |x| &x[i]),
            trials: self.trial_counts.as_ref().map(|c| c[i]),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Datum<'_>> {
        (0..self.len()).map(move |i| self.datum(i))
    }

    /// Scalar outcomes as a flat vector, when the outcome dimension is 1.
    pub fn scalar_outcomes(&self) -> Option<Vec<f64>> {
        (self.outcome_dim() == 1).then(|| self.outcomes.iter().map(|y| y[0]).collect())
    }

    /// Sorted scalar outcomes, built on first use.
    pub(crate) fn sorted_outcomes(&self) -> Option<&SortedOutcomes> {
        self.sorted
            .get_or_init(|| self.scalar_outcomes().map(|v| Arc::new(SortedOutcomes::new(v))))
            .as_deref()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            outcomes: indices.iter().map(|&i| self.outcomes[i].clone()).collect(),
            covariates: self
                .covariates
                .as_ref()
                .map(|x| indices.iter().map(|&i| x[i].clone()).collect()),
            trial_counts: self
                .trial_counts
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            sorted: OnceLock::new(),
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h = Vec::new();
        if self.outcome_dim() == 1 {
            h.push("y".to_string());
        } else {
            h.extend((1..=self.outcome_dim()).map(|k| format!("y{k}")));
        }
        if self.trial_counts.is_some() {
            h.push("N".to_string());
        }
        h.extend((1..=self.covariate_dim()).map(|k| format!("x{k}")));
        h
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header())?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.outcomes[i].iter().map(|v| v.to_string()).collect();
            if let Some(c) = &self.trial_counts {
                row.push(c[i].to_string());
            }
            if let Some(x) = &self.covariates {
                row.extend(x[i].iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut y_cols = Vec::new();
        let mut x_cols = Vec::new();
        let mut n_col = None;
        for (c, name) in header.iter().enumerate() {
            match name.as_str() {
                "y" => y_cols.push((1, c)),
                "N" => n_col = Some(c),
                _ => {
                    let parse = |prefix: &str| {
                        name.strip_prefix(prefix)
                            .and_then(|k| k.parse::<usize>().ok())
                            .filter(|k| *k >= 1)
                    };
                    if let Some(k) = parse("y") {
                        y_cols.push((k, c));
                    } else if let Some(k) = parse("x") {
                        x_cols.push((k, c));
                    } else {
                        return Err(PviError::Data(format!("unknown column '{name}'")));
                    }
                }
            }
        }
        if y_cols.is_empty() {
            return Err(PviError::Data("missing outcome column".into()));
        }
        y_cols.sort();
        x_cols.sort();
        let mut outcomes = Vec::new();
        let mut covariates = Vec::new();
        let mut counts = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| PviError::Data(format!("row {}: bad value in column {}", line + 1, header[c])))
            };
            outcomes.push(y_cols.iter().map(|(_, c)| field(*c)).collect::<Result<Vec<_>>>()?);
            if !x_cols.is_empty() {
                covariates.push(x_cols.iter().map(|(_, c)| field(*c)).collect::<Result<Vec<_>>>()?);
            }
            if let Some(c) = n_col {
                let v = field(c)?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(PviError::Data(format!("row {}: bad trial count {v}", line + 1)));
                }
                counts.push(v as u64);
            }
        }
        Dataset::new(
            outcomes,
            (!x_cols.is_empty()).then_some(covariates),
            n_col.map(|_| counts),
        )
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| PviError::Io(format!("{}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_misaligned_lists() {
        assert!(Dataset::new(vec![vec![1.0], vec![2.0]], Some(vec![vec![0.0]]), None).is_err());
        assert!(Dataset::new(vec![], None, None).is_err());
        assert!(Dataset::new(vec![vec![3.0]], None, Some(vec![2])).is_err());
        assert!(Dataset::new(vec![vec![1.5]], None, Some(vec![2])).is_err());
    }

    #[test]
    fn binomial_csv_round_trip() {
        let d = Dataset::new(
            vec![vec![3.0], vec![0.0]],
            Some(vec![vec![0.0, 1.0, -1.0], vec![2.0, 0.0, 1.0]]),
            Some(vec![10, 4]),
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,N,x1,x2,x3\n"));
        assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), d);
    }

    #[test]
    fn unknown_column_is_an_error() {
        assert!(Dataset::read_csv("y,z\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn sorted_outcome_sums_match_brute_force() {
        let v = vec![3.0, -1.0, 0.5, 0.5, 7.0, 2.0];
        let s = SortedOutcomes::new(v.clone());
        for probe in [-3.0, 0.5, 1.0, 2.0, 10.0] {
            let brute: f64 = v.iter().map(|y| (probe - y).abs()).sum();
            assert!((s.abs_dev_sum(probe) - brute).abs() < 1e-12);
            let less = v.iter().filter(|y| **y < probe).count();
            let more = v.iter().filter(|y| **y > probe).count();
            assert_eq!(s.counts(probe), (less, more));
        }
    }
}

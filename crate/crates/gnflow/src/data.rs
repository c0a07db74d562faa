//! Datasets: feature matrix, targets, CSV ingestion, and standardization.
//!
//! A dataset is an n×d feature matrix plus a length-n target vector. The
//! experiment protocol standardizes features per column to mean 0 and
//! standard deviation 1 using the *population* convention (divide by n),
//! matching the usual StandardScaler behavior. Subsampling is seeded and
//! without replacement so a config file pins the exact rows used.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-feature affine transform that was applied to the columns of `x`:
/// `x_std[:, j] = (x_raw[:, j] - means[j]) / scales[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

/// An n×d feature matrix with targets, optionally standardized.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    standardization: Option<Standardization>,
}

/// A column whose population standard deviation falls below this threshold
/// (relative to its mean magnitude) carries no information and is rejected
/// rather than divided by a rounding artifact.
const ZERO_VARIANCE_TOL: f64 = 1e-12;

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Data(format!(
                "dataset must have at least one row and one feature, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if y.len() != x.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix has {} rows but target vector has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset entries".into()));
        }
        Ok(Self {
            x,
            y,
            standardization: None,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of features.
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Standardizes every feature column to mean 0 and population standard
    /// deviation 1. Targets are left untouched. Columns with (numerically)
    /// zero variance are rejected.
    pub fn standardize(mut self) -> Result<Self> {
        let n = self.n() as f64;
        let mut means = Vec::with_capacity(self.d());
        let mut scales = Vec::with_capacity(self.d());
        for j in 0..self.d() {
            let col = self.x.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let scale = var.sqrt();
            if scale <= ZERO_VARIANCE_TOL * mean.abs().max(1.0) {
                return Err(Error::Data(format!(
                    "feature column {j} has zero variance and cannot be standardized"
                )));
            }
            means.push(mean);
            scales.push(scale);
        }
        for j in 0..self.d() {
            let (mean, scale) = (means[j], scales[j]);
            for i in 0..self.x.nrows() {
                self.x[(i, j)] = (self.x[(i, j)] - mean) / scale;
            }
        }
        self.standardization = Some(Standardization { means, scales });
        Ok(self)
    }

    /// Selects `n_subset` rows without replacement, deterministically for a
    /// fixed seed. The selected indices are sorted so row order is stable.
    pub fn subsample(&self, n_subset: usize, seed: u64) -> Result<Self> {
        if n_subset == 0 {
            return Err(Error::Data("subset size must be at least 1".into()));
        }
        if n_subset > self.n() {
            return Err(Error::Data(format!(
                "requested subset of {} rows but only {} are available",
                n_subset,
                self.n()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, self.n(), n_subset).into_vec();
        idx.sort_unstable();
        let x = DMatrix::from_fn(n_subset, self.d(), |i, j| self.x[(idx[i], j)]);
        let y = DVector::from_fn(n_subset, |i, _| self.y[idx[i]]);
        Ok(Self {
            x,
            y,
            standardization: self.standardization.clone(),
        })
    }

    /// Parses a CSV with a header row. The named target column becomes `y`;
    /// every other column must be numeric and becomes a feature. No
    /// standardization or subsampling is applied here.
    pub fn from_csv_reader<R: Read>(reader: R, target_column: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
            .clone();
        let target_idx = headers
            .iter()
            .position(|h| h == target_column)
            .ok_or_else(|| {
                Error::Data(format!(
                    "target column {target_column:?} not found in header {:?}",
                    headers.iter().collect::<Vec<_>>()
                ))
            })?;
        let d = headers.len().saturating_sub(1);
        if d == 0 {
            return Err(Error::Data(
                "CSV must have at least one feature column besides the target".into(),
            ));
        }

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut targets: Vec<f64> = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Data(format!("CSV parse error: {e}")))?;
            if record.len() != headers.len() {
                return Err(Error::Data(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    record.len(),
                    headers.len()
                )));
            }
            let mut feats = Vec::with_capacity(d);
            for (col, field) in record.iter().enumerate() {
                let value: f64 = field.parse().map_err(|_| {
                    Error::Data(format!(
                        "non-numeric cell {field:?} in row {}, column {:?}",
                        line + 2,
                        &headers[col]
                    ))
                })?;
                if !value.is_finite() {
                    return Err(Error::Data(format!(
                        "non-finite cell in row {}, column {:?}",
                        line + 2,
                        &headers[col]
                    )));
                }
                if col == target_idx {
                    targets.push(value);
                } else {
                    feats.push(value);
                }
            }
            rows.push(feats);
        }
        if rows.is_empty() {
            return Err(Error::Data("CSV contains no data rows".into()));
        }
        let n = rows.len();
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let y = DVector::from_vec(targets);
        Dataset::new(x, y)
    }

    pub fn from_csv_str(text: &str, target_column: &str) -> Result<Self> {
        Self::from_csv_reader(text.as_bytes(), target_column)
    }

    /// Full ingestion path: read the file, subsample rows (seeded, without
    /// replacement, `None` keeps all rows), then standardize features.
    pub fn load_csv<P: AsRef<Path>>(
        path: P,
        target_column: &str,
        n_subset: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::Data(format!(
                "cannot open CSV file {:?}: {e}",
                path.as_ref().display()
            ))
        })?;
        let full = Self::from_csv_reader(std::io::BufReader::new(file), target_column)?;
        let sampled = match n_subset {
            Some(k) => full.subsample(k, seed)?,
            None => full,
        };
        sampled.standardize()
    }
}

//! Datasets and step-size schedules.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature matrix and response vector. When `has_intercept` is set the last
/// feature column is identically one.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    response: DVector<f64>,
    has_intercept: bool,
}

impl Dataset {
    /// Validates and wraps `features` (n x d) and `response` (length n),
    /// appending a column of ones when `add_intercept` is set.
    pub fn new(
        features: DMatrix<f64>,
        response: DVector<f64>,
        add_intercept: bool,
    ) -> Result<Self> {
        if features.nrows() != response.len() {
            return Err(Error::DimensionMismatch(format!(
                "features have {} rows but response has length {}",
                features.nrows(),
                response.len()
            )));
        }
        if features.nrows() == 0 {
            return Err(Error::EmptyInput("dataset has no rows"));
        }
        if features.ncols() == 0 && !add_intercept {
            return Err(Error::EmptyInput("dataset has no feature columns"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("features"));
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("response"));
        }
        let features = if add_intercept {
            let d = features.ncols();
            features.insert_column(d, 1.0)
        } else {
            features
        };
        Ok(Self {
            features,
            response,
            has_intercept: add_intercept,
        })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    /// Number of coefficients (p, or p + 1 with an intercept).
    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Feature vector of row `i` as a column vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    /// The dataset with row `i` removed.
    pub fn without_row(&self, i: usize) -> Dataset {
        Dataset {
            features: self.features.clone().remove_row(i),
            response: self.response.clone().remove_row(i),
            has_intercept: self.has_intercept,
        }
    }

    /// Features and response without row `i` as raw matrices; unlike
    /// [`Dataset::without_row`] this allows an empty result.
    pub(crate) fn drop_row_raw(&self, i: usize) -> (DMatrix<f64>, DVector<f64>) {
        (
            self.features.clone().remove_row(i),
            self.response.clone().remove_row(i),
        )
    }

    /// Same features with a different response vector.
    pub fn with_response(&self, response: DVector<f64>) -> Result<Dataset> {
        if response.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "response length {} != n = {}",
                response.len(),
                self.n()
            )));
        }
        Ok(Dataset {
            features: self.features.clone(),
            response,
            has_intercept: self.has_intercept,
        })
    }

    /// Reads a dataset from CSV. Every column except the response column is a
    /// feature. See [`CsvLayout`].
    pub fn from_csv<R: Read>(reader: R, layout: &CsvLayout) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(layout.has_header)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let response_idx = match (&layout.response_column, layout.has_header) {
            (Some(name), true) => {
                let headers = rdr.headers()?;
                Some(headers.iter().position(|h| h == name).ok_or_else(|| {
                    Error::Csv(format!("response column '{name}' not found in header"))
                })?)
            }
            (Some(_), false) => {
                return Err(Error::Csv(
                    "a named response column needs a header row".to_string(),
                ))
            }
            (None, _) => None,
        };
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parsed = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|_| {
                        Error::Csv(format!("record {}: cannot parse '{field}'", line + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != parsed.len() {
                    return Err(Error::Csv(format!(
                        "record {} has {} fields, expected {}",
                        line + 1,
                        parsed.len(),
                        first.len()
                    )));
                }
            }
            rows.push(parsed);
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput("csv has no records"));
        }
        let width = rows[0].len();
        if width < 2 && !layout.add_intercept {
            return Err(Error::Csv(
                "need at least one feature and one response column".into(),
            ));
        }
        let target = response_idx.unwrap_or(width - 1);
        let n = rows.len();
        let features = DMatrix::from_fn(n, width - 1, |i, j| {
            let col = if j < target { j } else { j + 1 };
            rows[i][col]
        });
        let response = DVector::from_fn(n, |i, _| rows[i][target]);
        Dataset::new(features, response, layout.add_intercept)
    }

    /// Writes features then response (`x1..xd,y`), header included.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = crate::io::csv_writer(writer);
        let mut header: Vec<String> = (1..=self.d()).map(|j| format!("x{j}")).collect();
        header.push("y".to_string());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.response[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How a CSV file maps onto a [`Dataset`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvLayout {
    pub has_header: bool,
    /// Header name of the response column; the last column when absent.
    pub response_column: Option<String>,
    pub add_intercept: bool,
}

impl Default for CsvLayout {
    fn default() -> Self {
        Self {
            has_header: true,
            response_column: None,
            add_intercept: false,
        }
    }
}

/// Step sizes delta_0, ..., delta_{K-1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    deltas: Vec<f64>,
}

impl StepSchedule {
    /// Requires at least one step, all strictly positive and finite.
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::InvalidArgument(
                "step schedule needs K >= 1 steps".into(),
            ));
        }
        if let Some(bad) = deltas.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "step sizes must be positive and finite, got {bad}"
            )));
        }
        Ok(Self { deltas })
    }

    pub fn constant(delta: f64, steps: usize) -> Result<Self> {
        Self::new(vec![delta; steps])
    }

    /// `steps` zero-length steps: every iterate stays at the initialization.
    /// Only useful as a null-model baseline.
    pub fn frozen(steps: usize) -> Self {
        Self {
            deltas: vec![0.0; steps.max(1)],
        }
    }

    pub(crate) fn new_unchecked(deltas: Vec<f64>) -> Self {
        Self { deltas }
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    /// Number of steps K.
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Total step length, sum of all deltas.
    pub fn total(&self) -> f64 {
        self.deltas.iter().sum()
    }

    /// Constant step size if every delta is equal.
    pub fn constant_step(&self) -> Option<f64> {
        let first = self.deltas[0];
        self.deltas.iter().all(|&d| d == first).then_some(first)
    }

    /// The first `k` steps (k is clamped to at least one).
    pub fn truncated(&self, k: usize) -> StepSchedule {
        let k = k.clamp(1, self.len());
        StepSchedule {
            deltas: self.deltas[..k].to_vec(),
        }
    }
}

//! Synthetic two-class Gaussian datasets and effect-size statistics.
//!
//! Negative samples are drawn from `N(0, I_m)`. Positive samples share the
//! identity covariance and differ only in the means of the first `l` features.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Positive)
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Matrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }
}

/// Feature matrix plus binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<Label>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<Label>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(pos) = features.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite feature at row {}, column {}",
                pos / features.cols().max(1),
                pos % features.cols().max(1)
            )));
        }
        let ds = Self { features, labels };
        let (neg, pos) = ds.class_counts();
        if neg == 0 || pos == 0 {
            return Err(invalid("both classes must be non-empty"));
        }
        Ok(ds)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// (negative, positive) counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| l.is_positive()).count();
        (self.labels.len() - pos, pos)
    }

    pub fn class_indices(&self, label: Label) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    /// Sub-dataset holding `rows` in the given order. Callers guarantee both
    /// classes survive.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let cols = self.features.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(self.features.row(r));
        }
        Dataset {
            features: Matrix {
                rows: rows.len(),
                cols,
                data,
            },
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

/// Full parameterization of a synthetic scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Negative-class count; the positive class has `round(gamma_db * n_per_class)`.
    pub n_per_class: usize,
    pub m: usize,
    pub l: usize,
    pub d_effect: f64,
    pub gamma_db: f64,
    pub gamma_d: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn balanced(n_per_class: usize, m: usize, l: usize, d_effect: f64) -> Self {
        Self {
            n_per_class,
            m,
            l,
            d_effect,
            gamma_db: 1.0,
            gamma_d: 1.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_gamma_db(mut self, gamma_db: f64) -> Self {
        self.gamma_db = gamma_db;
        self
    }

    pub fn with_gamma_d(mut self, gamma_d: f64) -> Self {
        self.gamma_d = gamma_d;
        self
    }

    pub fn n_negative(&self) -> usize {
        self.n_per_class
    }

    pub fn n_positive(&self) -> usize {
        (self.gamma_db * self.n_per_class as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(invalid("n_per_class must be positive"));
        }
        if self.m == 0 {
            return Err(invalid("m must be positive"));
        }
        if self.l > self.m {
            return Err(invalid(format!("l = {} exceeds m = {}", self.l, self.m)));
        }
        if !(self.d_effect.is_finite() && self.d_effect >= 0.0) {
            return Err(invalid("d_effect must be a finite non-negative number"));
        }
        if !(self.gamma_db.is_finite() && self.gamma_db >= 1.0) {
            return Err(invalid("gamma_db must be >= 1"));
        }
        if !(self.gamma_d.is_finite() && self.gamma_d >= 1.0) {
            return Err(invalid("gamma_d must be >= 1"));
        }
        if self.gamma_d != 1.0 && self.l != 2 {
            return Err(invalid(
                "gamma_d != 1 is only defined for exactly two discriminative features",
            ));
        }
        Ok(())
    }

    pub fn effect_profile(&self) -> EffectProfile {
        let mut per_feature_d = vec![0.0; self.m];
        for (j, d) in per_feature_d.iter_mut().enumerate().take(self.l) {
            *d = if j == 1 {
                self.gamma_d * self.d_effect
            } else {
                self.d_effect
            };
        }
        EffectProfile { per_feature_d }
    }
}

/// Population Cohen's D per feature.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectProfile {
    pub per_feature_d: Vec<f64>,
}

/// Draws a dataset: negatives first, then positives.
pub fn gen_gaussian_dataset(spec: &DatasetSpec, stream: &mut Stream) -> Result<Dataset> {
    spec.validate()?;
    let means = spec.effect_profile().per_feature_d;
    let n_neg = spec.n_negative();
    let n_pos = spec.n_positive();
    let m = spec.m;

    let mut data = Vec::with_capacity((n_neg + n_pos) * m);
    let mut labels = Vec::with_capacity(n_neg + n_pos);
    for _ in 0..n_neg {
        data.extend((0..m).map(|_| stream.standard_normal()));
        labels.push(Label::Negative);
    }
    for _ in 0..n_pos {
        data.extend(means.iter().map(|mu| mu + stream.standard_normal()));
        labels.push(Label::Positive);
    }
    let features = Matrix::new(n_neg + n_pos, m, data)?;
    Dataset::new(features, labels)
}

/// Convenience wrapper seeding the stream from `spec.seed`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    gen_gaussian_dataset(spec, &mut Stream::from_seed(spec.seed))
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, ss)
}

/// Mean difference over pooled standard deviation; sign follows `pos - neg`.
pub fn cohens_d(values_pos: &[f64], values_neg: &[f64]) -> Result<f64> {
    if values_pos.len() < 2 || values_neg.len() < 2 {
        return Err(invalid("each group needs at least two values"));
    }
    let (mp, ssp) = mean_var(values_pos);
    let (mn, ssn) = mean_var(values_neg);
    let dof = (values_pos.len() + values_neg.len() - 2) as f64;
    let pooled = ((ssp + ssn) / dof).sqrt();
    if !(pooled > 0.0) {
        return Err(Error::Degenerate("pooled variance is zero".into()));
    }
    Ok((mp - mn) / pooled)
}

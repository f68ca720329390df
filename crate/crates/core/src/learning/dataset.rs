use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported learning tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LinearRegression,
    BinaryLogistic,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-regression" | "linear_regression" => Ok(TaskKind::LinearRegression),
            "binary-logistic" | "binary_logistic" => Ok(TaskKind::BinaryLogistic),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::LinearRegression => f.write_str("linear_regression"),
            TaskKind::BinaryLogistic => f.write_str("binary_logistic"),
        }
    }
}

/// A client's local data.
///
/// For logistic tasks labels are 0.0 or 1.0 and the class is the label. For
/// regression the "class" used by histograms and label-skew partitioning is
/// the sign bucket of the target: 0 for `y < 0`, 1 for `y >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    task: TaskKind,
    n_features: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    class_histogram: BTreeMap<u32, usize>,
}

impl Dataset {
    pub fn new(
        task: TaskKind,
        n_features: usize,
        features: Vec<Vec<f64>>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::Config("datasets need at least one feature".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Config(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        for (i, row) in features.iter().enumerate() {
            if row.len() != n_features {
                return Err(Error::Shape { expected: n_features, actual: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite feature in row {i}")));
            }
        }
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite label".into()));
        }
        if task == TaskKind::BinaryLogistic && labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Config("logistic labels must be 0 or 1".into()));
        }
        let mut class_histogram = BTreeMap::new();
        for &y in &labels {
            *class_histogram.entry(class_of(task, y)).or_insert(0) += 1;
        }
        Ok(Self { task, n_features, features, labels, class_histogram })
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Parameter dimension of a model for this data (features plus bias).
    pub fn model_dim(&self) -> usize {
        self.n_features + 1
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn class_histogram(&self) -> &BTreeMap<u32, usize> {
        &self.class_histogram
    }

    pub fn class_at(&self, i: usize) -> u32 {
        class_of(self.task, self.labels[i])
    }

    /// Distance between the feature centroids of class 1 and class 0, or
    /// `None` when either class is absent.
    pub fn class_centroid_distance(&self) -> Option<f64> {
        let mut sums = [vec![0.0; self.n_features], vec![0.0; self.n_features]];
        let mut counts = [0usize; 2];
        for (row, &y) in self.features.iter().zip(&self.labels) {
            let c = class_of(self.task, y).min(1) as usize;
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(row) {
                *s += v;
            }
        }
        if counts[0] == 0 || counts[1] == 0 {
            return None;
        }
        let d2: f64 = (0..self.n_features)
            .map(|j| {
                let diff = sums[1][j] / counts[1] as f64 - sums[0][j] / counts[0] as f64;
                diff * diff
            })
            .sum();
        Some(d2.sqrt())
    }

    /// Per-feature population standard deviation.
    pub fn feature_std(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        if self.is_empty() {
            return vec![0.0; self.n_features];
        }
        (0..self.n_features)
            .map(|j| {
                let mean = self.features.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = self.features.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                var.sqrt()
            })
            .collect()
    }

    /// Concatenate datasets of the same task and width.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut iter = parts.into_iter().peekable();
        let first = iter
            .peek()
            .ok_or_else(|| Error::Config("cannot concatenate zero datasets".into()))?;
        let (task, width) = (first.task, first.n_features);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for d in iter {
            if d.task != task {
                return Err(Error::Config("cannot concatenate datasets of different tasks".into()));
            }
            if d.n_features != width {
                return Err(Error::Shape { expected: width, actual: d.n_features });
            }
            features.extend(d.features.iter().cloned());
            labels.extend_from_slice(&d.labels);
        }
        Dataset::new(task, width, features, labels)
    }
}

pub(crate) fn class_of(task: TaskKind, y: f64) -> u32 {
    match task {
        TaskKind::BinaryLogistic => y as u32,
        TaskKind::LinearRegression => u32::from(y >= 0.0),
    }
}

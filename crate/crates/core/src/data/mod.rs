//! Datasets: CSV ingestion, stratified splitting, metrics and the bundled
//! synthetic generators.

mod csv_io;
mod metrics;
mod split;
pub mod synthetic;

pub use csv_io::{load_csv, parse_csv, write_csv};
pub use metrics::{auc_binary, metric_accuracy, metric_auc};
pub use split::stratified_split;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Feature matrix with dense integer labels in `0..num_classes()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Original label value of each class index.
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, feature_names: Vec<String>, class_names: Vec<String>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                what: "label count",
                expected: x.rows(),
                actual: y.len(),
            });
        }
        if feature_names.len() != x.cols() {
            return Err(Error::DimensionMismatch {
                what: "feature names",
                expected: x.cols(),
                actual: feature_names.len(),
            });
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= class_names.len()) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: class_names.len(),
            });
        }
        if !x.is_finite() {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(Self {
            x,
            y,
            feature_names,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    /// Rows in the given order; class names are kept as-is.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Re-indexes labels against `classes` (e.g. the classes a model was
    /// trained on). Fails if a label is not among them.
    pub fn with_classes(&self, classes: &[String]) -> Result<Dataset> {
        let map = self
            .class_names
            .iter()
            .map(|name| {
                classes.iter().position(|c| c == name).ok_or_else(|| {
                    Error::Data(format!("label '{name}' is not one of the model classes {classes:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            x: self.x.clone(),
            y: self.y.iter().map(|&c| map[c]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: classes.to_vec(),
        })
    }
}

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CENTER_MOMENTUM: f64 = 0.1;

/// Running class centers for the center-pulling term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCenters {
    pub centers: Array2<f64>,
    pub momentum: f64,
    pub counts_seen: Vec<usize>,
}

impl ClassCenters {
    /// Zero-initialized centers, `num_classes x dim`.
    pub fn new(num_classes: usize, dim: usize, momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::invalid(format!("center momentum {momentum} outside (0, 1]")));
        }
        Ok(Self {
            centers: Array2::zeros((num_classes, dim)),
            momentum,
            counts_seen: vec![0; num_classes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn seen(&self, class: usize) -> bool {
        self.counts_seen[class] > 0
    }

    /// `c <- (1 - m) c + m * mean(features of class c)` for every class in
    /// the batch; absent classes are untouched.
    pub fn update(&mut self, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
        if features.nrows() != labels.len() {
            return Err(Error::shape("features and labels differ in length"));
        }
        if features.ncols() != self.dim() {
            return Err(Error::shape(format!(
                "features have dim {}, centers {}",
                features.ncols(),
                self.dim()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("center update features".into()));
        }
        let c = self.num_classes();
        let mut sums = Array2::<f64>::zeros((c, self.dim()));
        let mut counts = vec![0usize; c];
        for (row, &y) in features.outer_iter().zip(labels) {
            if y >= c {
                return Err(Error::invalid(format!("label {y} out of range")));
            }
            let mut s = sums.row_mut(y);
            s += &row;
            counts[y] += 1;
        }
        let m = self.momentum;
        for y in 0..c {
            if counts[y] == 0 {
                continue;
            }
            let mean = sums.row(y).mapv(|v| v / counts[y] as f64);
            let mut center = self.centers.row_mut(y);
            center.zip_mut_with(&mean, |ctr, &mu| *ctr = (1.0 - m) * *ctr + m * mu);
            self.counts_seen[y] += counts[y];
        }
        Ok(())
    }

    /// Functional form of [`ClassCenters::update`].
    pub fn updated(&self, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Self> {
        let mut next = self.clone();
        next.update(features, labels)?;
        Ok(next)
    }
}

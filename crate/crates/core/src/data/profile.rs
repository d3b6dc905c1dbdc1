use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class training counts with their normalized priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    counts: Vec<usize>,
    priors: Vec<f64>,
    imbalance_ratio: f64,
}

impl ClassProfile {
    pub fn from_counts(counts: Vec<usize>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::invalid("a class profile needs at least two classes"));
        }
        if counts.contains(&0) {
            return Err(Error::invalid("every class needs at least one sample"));
        }
        let priors = compute_prior(&counts)?;
        let max = *counts.iter().max().expect("nonempty");
        let min = *counts.iter().min().expect("nonempty");
        Ok(Self {
            imbalance_ratio: max as f64 / min as f64,
            counts,
            priors,
        })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn imbalance_ratio(&self) -> f64 {
        self.imbalance_ratio
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Class indices sorted by descending count; ties keep index order.
    pub fn classes_by_frequency(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.counts.len()).collect();
        order.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]).then(a.cmp(&b)));
        order
    }
}

/// Exponential long-tail profile: `n_j = round(n_max * ir^(-j / (C - 1)))`.
pub fn make_longtail_profile(
    num_classes: usize,
    n_max: usize,
    imbalance_ratio: f64,
) -> Result<ClassProfile> {
    if num_classes < 2 {
        return Err(Error::invalid("num_classes must be >= 2"));
    }
    if n_max < 1 {
        return Err(Error::invalid("n_max must be >= 1"));
    }
    if !(imbalance_ratio >= 1.0) || !imbalance_ratio.is_finite() {
        return Err(Error::invalid("imbalance ratio must be a finite value >= 1"));
    }
    let last = (num_classes - 1) as f64;
    let counts: Vec<usize> = (0..num_classes)
        .map(|j| {
            let n = n_max as f64 * imbalance_ratio.powf(-(j as f64) / last);
            n.round() as usize
        })
        .collect();
    if let Some(j) = counts.iter().position(|&n| n < 1) {
        return Err(Error::invalid(format!(
            "class {j} rounds to zero samples (n_max={n_max}, ir={imbalance_ratio})"
        )));
    }
    ClassProfile::from_counts(counts)
}

/// `n_c / N` for every class.
pub fn compute_prior(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::Empty("class counts".into()));
    }
    if counts.contains(&0) {
        return Err(Error::invalid("class counts must be positive"));
    }
    let total: usize = counts.iter().sum();
    Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn cifar10_lt_ir100() {
        let p = make_longtail_profile(10, 5000, 100.0).unwrap();
        assert_eq!(p.counts()[0], 5000);
        assert_eq!(p.counts()[9], 50);
        assert_relative_eq!(p.imbalance_ratio(), 100.0);
        assert!(p.counts().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn balanced_and_two_class() {
        let p = make_longtail_profile(10, 100, 1.0).unwrap();
        assert!(p.counts().iter().all(|&n| n == 100));
        let p = make_longtail_profile(2, 100, 4.0).unwrap();
        assert_eq!(p.counts(), &[100, 25]);
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(make_longtail_profile(10, 10, 100.0).is_err());
        assert!(make_longtail_profile(1, 10, 1.0).is_err());
        assert!(make_longtail_profile(3, 10, 0.5).is_err());
    }

    #[test]
    fn prior_examples() {
        assert_eq!(compute_prior(&[50, 50]).unwrap(), vec![0.5, 0.5]);
        let p = compute_prior(&[5000, 50]).unwrap();
        assert_eq!(p[0], 5000.0 / 5050.0);
        assert_eq!(p[1], 50.0 / 5050.0);
        assert_eq!(compute_prior(&[1, 1, 2]).unwrap(), vec![0.25, 0.25, 0.5]);
        assert!(compute_prior(&[]).is_err());
    }

    proptest! {
        #[test]
        fn priors_sum_to_one(counts in prop::collection::vec(1usize..10_000, 2..50)) {
            let p = ClassProfile::from_counts(counts.clone()).unwrap();
            let s: f64 = p.priors().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            let max = *counts.iter().max().unwrap() as f64;
            let min = *counts.iter().min().unwrap() as f64;
            prop_assert_eq!(p.imbalance_ratio(), max / min);
        }
    }
}

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ClassProfile;
use crate::error::{Error, Result};

/// Infinite stream of sample indices whose class marginal is proportional to
/// `1 / n_c`, uniform within each class, drawn with replacement.
#[derive(Debug, Clone)]
pub struct AntiLongTailSampler {
    members: Vec<Vec<usize>>,
    classes: WeightedIndex<f64>,
    probabilities: Vec<f64>,
    rng: ChaCha8Rng,
}

impl AntiLongTailSampler {
    /// Sampler over a dataset laid out contiguously by class, i.e. class `c`
    /// occupies indices `offset_c .. offset_c + counts[c]`.
    pub fn new(profile: &ClassProfile, seed: u64) -> Self {
        let mut offset = 0;
        let members = profile
            .counts()
            .iter()
            .map(|&n| {
                let m: Vec<usize> = (offset..offset + n).collect();
                offset += n;
                m
            })
            .collect();
        Self::from_members(members, seed).expect("profile counts are positive")
    }

    /// Sampler over an arbitrary labelled dataset.
    pub fn from_labels(labels: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        let mut members = vec![Vec::new(); num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::invalid(format!("label {y} out of range")));
            }
            members[y].push(i);
        }
        Self::from_members(members, seed)
    }

    fn from_members(members: Vec<Vec<usize>>, seed: u64) -> Result<Self> {
        if members.iter().any(Vec::is_empty) {
            return Err(Error::invalid("every class needs at least one sample"));
        }
        let inverse: Vec<f64> = members.iter().map(|m| 1.0 / m.len() as f64).collect();
        let total: f64 = inverse.iter().sum();
        let probabilities = inverse.iter().map(|w| w / total).collect();
        let classes = WeightedIndex::new(&inverse).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self {
            members,
            classes,
            probabilities,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Class-draw probabilities.
    pub fn class_probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn next_index(&mut self) -> usize {
        let c = self.classes.sample(&mut self.rng);
        let m = &self.members[c];
        m[self.rng.random_range(0..m.len())]
    }

    pub fn take_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size).map(|_| self.next_index()).collect()
    }
}

impl Iterator for AntiLongTailSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.next_index())
    }
}

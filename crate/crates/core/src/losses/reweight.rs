use ndarray::Array2;

use crate::moe::ExpertAssignment;

/// Per-sample, per-expert weights `g(k, i)` of the classification loss.
pub trait ExpertReweighting {
    /// `B x K` weights for samples with the given primary labels.
    fn weights(&self, assignment: &ExpertAssignment, primary_labels: &[usize]) -> Array2<f64>;
}

/// Surrogate weighting: the global expert weighs every sample by 1; a local
/// expert weighs samples of its own group by 1 and all others by
/// `out_of_group`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMembership {
    pub out_of_group: f64,
}

impl ExpertReweighting for GroupMembership {
    fn weights(&self, assignment: &ExpertAssignment, primary_labels: &[usize]) -> Array2<f64> {
        let k_global = assignment.global_index();
        Array2::from_shape_fn((primary_labels.len(), assignment.num_experts()), |(i, k)| {
            if k == k_global || assignment.covers(k, primary_labels[i]) {
                1.0
            } else {
                self.out_of_group
            }
        })
    }
}

/// `g = 1` everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct Uniform;

impl ExpertReweighting for Uniform {
    fn weights(&self, assignment: &ExpertAssignment, primary_labels: &[usize]) -> Array2<f64> {
        Array2::ones((primary_labels.len(), assignment.num_experts()))
    }
}

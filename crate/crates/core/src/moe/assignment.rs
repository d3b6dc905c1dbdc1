use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::ClassProfile;
use crate::error::{Error, Result};

/// Class groups handled by each expert. The last expert is the global one and
/// covers every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertAssignment {
    groups: Vec<Vec<usize>>,
    num_classes: usize,
    /// Log-scale applied to the global expert's prior.
    pub tau: f64,
}

pub const DEFAULT_GLOBAL_TAU: f64 = 1.0;

impl ExpertAssignment {
    pub fn num_experts(&self) -> usize {
        self.groups.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn global_index(&self) -> usize {
        self.groups.len() - 1
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, expert: usize) -> &[usize] {
        &self.groups[expert]
    }

    pub fn covers(&self, expert: usize, class: usize) -> bool {
        self.groups[expert].contains(&class)
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

/// Splits classes, ordered by descending training count, into `num_local`
/// contiguous near-equal groups (earlier groups take the remainder) and
/// appends the global expert.
pub fn assign_experts(profile: &ClassProfile, num_local: usize) -> Result<ExpertAssignment> {
    let c = profile.num_classes();
    if num_local == 0 {
        return Err(Error::invalid("need at least one local expert"));
    }
    if num_local > c {
        return Err(Error::invalid(format!(
            "{num_local} local experts for {c} classes"
        )));
    }
    let order = profile.classes_by_frequency();
    let (base, extra) = (c / num_local, c % num_local);
    let mut groups = Vec::with_capacity(num_local + 1);
    let mut start = 0;
    for k in 0..num_local {
        let size = base + usize::from(k < extra);
        let mut g = order[start..start + size].to_vec();
        g.sort_unstable();
        groups.push(g);
        start += size;
    }
    groups.push((0..c).collect());
    Ok(ExpertAssignment {
        groups,
        num_classes: c,
        tau: DEFAULT_GLOBAL_TAU,
    })
}

/// Per-expert priors, `K x C`.
///
/// Local expert `k`: the class prior inside its group and the largest prior
/// outside it. Global expert: `e^tau` times the class prior.
pub fn expert_prior(priors: &[f64], assignment: &ExpertAssignment) -> Result<Array2<f64>> {
    let c = assignment.num_classes();
    if priors.len() != c {
        return Err(Error::shape(format!("{} priors for {c} classes", priors.len())));
    }
    if priors.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::invalid("priors must be positive and finite"));
    }
    let max = priors.iter().copied().fold(f64::MIN, f64::max);
    let k_global = assignment.global_index();
    let scale = assignment.tau.exp();
    let mut out = Array2::zeros((assignment.num_experts(), c));
    for k in 0..assignment.num_experts() {
        for j in 0..c {
            out[[k, j]] = if k == k_global {
                scale * priors[j]
            } else if assignment.covers(k, j) {
                priors[j]
            } else {
                max
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_longtail_profile;

    #[test]
    fn three_expert_layout() {
        let p = make_longtail_profile(10, 500, 10.0).unwrap();
        let a = assign_experts(&p, 2).unwrap();
        assert_eq!(a.num_experts(), 3);
        assert_eq!(a.group(0), &[0, 1, 2, 3, 4]);
        assert_eq!(a.group(1), &[5, 6, 7, 8, 9]);
        assert_eq!(a.group(2), &(0..10).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn boundary_layouts() {
        let p = ClassProfile::from_counts(vec![10, 3]).unwrap();
        let a = assign_experts(&p, 1).unwrap();
        assert_eq!(a.groups(), &[vec![0, 1], vec![0, 1]]);

        let p = make_longtail_profile(10, 500, 10.0).unwrap();
        let a = assign_experts(&p, 10).unwrap();
        assert_eq!(a.num_experts(), 11);
        for k in 0..10 {
            assert_eq!(a.group(k), &[k]);
        }
        assert!(assign_experts(&p, 11).is_err());
        assert!(assign_experts(&p, 0).is_err());
    }

    #[test]
    fn groups_follow_frequency_not_index() {
        let p = ClassProfile::from_counts(vec![1, 50, 5, 20]).unwrap();
        let a = assign_experts(&p, 2).unwrap();
        assert_eq!(a.group(0), &[1, 3]);
        assert_eq!(a.group(1), &[0, 2]);
    }

    fn four_class(tau: f64) -> ExpertAssignment {
        ExpertAssignment {
            groups: vec![vec![0, 1], vec![2, 3], vec![0, 1, 2, 3]],
            num_classes: 4,
            tau,
        }
    }

    #[test]
    fn local_prior_uses_max_outside_group() {
        let pri = expert_prior(&[0.4, 0.3, 0.2, 0.1], &four_class(0.0)).unwrap();
        assert_eq!(pri.row(1).to_vec(), vec![0.4, 0.4, 0.2, 0.1]);
        assert_eq!(pri.row(2).to_vec(), vec![0.4, 0.3, 0.2, 0.1]);
    }

    #[test]
    fn global_prior_scales_by_exp_tau() {
        let a = ExpertAssignment {
            groups: vec![vec![0, 1], vec![0, 1]],
            num_classes: 2,
            tau: 1.0,
        };
        let pri = expert_prior(&[0.5, 0.5], &a).unwrap();
        let e = std::f64::consts::E;
        assert_eq!(pri.row(1).to_vec(), vec![0.5 * e, 0.5 * e]);
    }

    #[test]
    fn out_of_group_margins_are_equal_and_largest() {
        let priors = [0.4, 0.3, 0.2, 0.1];
        let pri = expert_prior(&priors, &four_class(1.0)).unwrap();
        let margins: Vec<f64> = pri.row(1).iter().map(|p| p.ln()).collect();
        assert_eq!(margins[0], margins[1]);
        assert_eq!(margins[0], 0.4f64.ln());
        assert!(margins.iter().all(|&m| m <= margins[0]));
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::FeatureSource;

/// What the energy score is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyInput {
    /// Each expert's logits.
    #[default]
    Logits,
    /// Each expert's feature vector.
    Feature,
}

/// Hyperparameters and ablation switches of the loss system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Temperature of the energy score.
    pub tau_energy: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub eps0: f64,
    pub eps1: f64,
    /// Weight of the boundary-center term in the total.
    pub lambda0: f64,
    /// Weight of the consistency term in the total.
    pub lambda1: f64,
    /// Mixed and anti-long-tailed samples enter the classification loss.
    pub nod_enabled: bool,
    /// Per-sample energy rescaling of the prior margins.
    pub aala_enabled: bool,
    pub cbcl_enabled: bool,
    pub rcl_enabled: bool,
    /// Floor applied to probabilities before any log.
    pub prob_floor: f64,
    pub energy_input: EnergyInput,
    /// Expert re-weighting for samples outside a local expert's group.
    pub out_of_group_weight: f64,
    pub feature_source: FeatureSource,
    /// Include mixed samples in the center term with lam-weighted distances
    /// to both source centers.
    pub dec_include_mixed: bool,
    /// Treat the dual-entropy weight as a constant during backprop.
    pub detach_dec_weight: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_energy: 1.0,
            gamma0: 1.0,
            gamma1: 1.0,
            eps0: 0.0,
            eps1: 1e-6,
            lambda0: 0.5,
            lambda1: 1.0,
            nod_enabled: true,
            aala_enabled: true,
            cbcl_enabled: true,
            rcl_enabled: true,
            prob_floor: 1e-8,
            energy_input: EnergyInput::Logits,
            out_of_group_weight: 0.1,
            feature_source: FeatureSource::Global,
            dec_include_mixed: false,
            detach_dec_weight: true,
        }
    }
}

impl LossConfig {
    /// Static logit-adjusted cross-entropy on ID data only.
    pub fn baseline() -> Self {
        Self {
            nod_enabled: false,
            aala_enabled: false,
            cbcl_enabled: false,
            rcl_enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: &str| Err(Error::Config(format!("loss.{field}: {why}")));
        if !(self.tau_energy > 0.0) {
            return fail("tau_energy", "must be > 0");
        }
        if !(self.eps1 > 0.0) {
            return fail("eps1", "must be > 0");
        }
        if !(self.gamma0 > 0.0) {
            return fail("gamma0", "must be > 0");
        }
        if !(self.gamma1 > 0.0) {
            return fail("gamma1", "must be > 0");
        }
        if !(self.lambda0 >= 0.0) {
            return fail("lambda0", "must be >= 0");
        }
        if !(self.lambda1 >= 0.0) {
            return fail("lambda1", "must be >= 0");
        }
        if !(self.prob_floor > 0.0 && self.prob_floor <= 1e-3) {
            return fail("prob_floor", "must lie in (0, 1e-3]");
        }
        if !(self.out_of_group_weight >= 0.0) {
            return fail("out_of_group_weight", "must be >= 0");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        LossConfig::default().validate().unwrap();
        LossConfig::baseline().validate().unwrap();
    }

    #[test]
    fn invalid_fields_named() {
        let c = LossConfig {
            prob_floor: 0.1,
            ..LossConfig::default()
        };
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("prob_floor"), "{err}");
        let c = LossConfig {
            tau_energy: 0.0,
            ..LossConfig::default()
        };
        assert!(c.validate().is_err());
    }
}

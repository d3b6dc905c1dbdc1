//! Training objective: recalibrated logit adjustment, boundary-center
//! contrastive terms, view consistency and their weighted sum.

mod config;
mod consistency;
mod contrastive;
mod logit_adjust;
mod reweight;
mod total;

pub use config::{EnergyInput, LossConfig};
pub use consistency::{rcl, rcl_loss};
pub use contrastive::{
    cbcl, cbcl_loss, dec_distance, dec_distance_value, dual_entropy, dual_entropy_weight,
    vbl_distance, vbl_distance_value, CenterEntry, EXP_CLAMP,
};
pub use logit_adjust::{
    aala_factor, aala_factors, adjusted_log_probs, adjusted_softmax, cls_loss, cls_loss_value,
    energy, energy_score, margins, recalibrated_margins, soft_cross_entropy, ClsTerms,
};
pub use reweight::{ExpertReweighting, GroupMembership, Uniform};
pub use total::{
    cls_rows, nod_loss, stack_inputs, total_loss, BatchRows, ClsRows, LossBreakdown, LossContext,
};

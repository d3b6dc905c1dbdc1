//! Multi-expert backbone: expert class groups, per-expert priors, the
//! network itself and running class centers.

mod assignment;
mod backbone;
mod centers;

pub use assignment::{assign_experts, expert_prior, ExpertAssignment, DEFAULT_GLOBAL_TAU};
pub use backbone::{
    Backbone, BackboneState, EncoderSpec, ExpertEnsembleOutput, FeatureSource, ForwardPass,
    ModelSpec, Parameters,
};
pub use centers::{ClassCenters, DEFAULT_CENTER_MOMENTUM};

pub mod expert;
pub mod features;
pub mod grounding;
pub mod policy;
pub mod resolve;

pub use expert::{expert_act, expert_rollout, guide_action, ExpertPolicy, RecallExpert};
pub use features::{embed, FeatureExtractor, FeatureVector, FEATURE_DIM};
pub use grounding::{ground, Grounding};
pub use policy::{act, ActDecision, ActMode, BackboneParams};
pub use resolve::resolve_action;

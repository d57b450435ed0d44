pub mod bc;
pub mod offline;
pub mod online;

pub use bc::{collect_bc_dataset, train_backbone, BcConfig, BcSample};
pub use offline::{
    balance_dataset, collect_expert_dataset, gate_accuracy, train_offline, train_offline_with, CollectConfig,
    LabeledSample, OfflineConfig, OfflineStats,
};
pub use online::{
    bandit_run, reinforce_gradients, rollout_online, train_online, BanditHead, CurvePoint, OnlineConfig,
    OnlineResult, PolicyStep, RolloutConfig, Trajectory,
};

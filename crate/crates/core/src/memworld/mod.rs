pub mod action;
pub mod catalog;
pub mod env;
pub mod observation;
pub mod planner;
pub mod task;
pub mod types;

pub use action::{Action, ActionSpace};
pub use env::{Env, StepResult};
pub use observation::{CellView, Observation, VisibleCell};
pub use task::{generate_task, generate_task_with, GenParams, SuitePreset};
pub use types::{EpisodeConfig, Facing, GoalSpec, GridState, Instruction, Pos, Quantifier, Subset};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memworld::action::{Action, ActionSpace};
use crate::memworld::catalog::{OBJECTS, RECEPTACLES};
use crate::memworld::observation::Observation;
use crate::memworld::types::{EpisodeConfig, GridState, Occupant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub action_valid: bool,
    pub task_success: bool,
    pub episode_over: bool,
    /// Sparse reward: 1 only on the step that completes the goal.
    pub reward: f64,
}

/// One running episode. Cheap to clone, which is how applicability is probed.
#[derive(Debug, Clone)]
pub struct Env {
    config: EpisodeConfig,
    state: GridState,
    last_valid: bool,
    over: bool,
    success: bool,
}

impl Env {
    pub fn reset(config: &EpisodeConfig) -> (Env, Observation) {
        let env = Env {
            config: config.clone(),
            state: config.initial_state(),
            last_valid: true,
            over: false,
            success: false,
        };
        let obs = env.observe();
        (env, obs)
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn is_over(&self) -> bool {
        self.over
    }

    pub fn succeeded(&self) -> bool {
        self.success
    }

    pub fn action_space(&self) -> &'static ActionSpace {
        ActionSpace::standard()
    }

    pub fn observe(&self) -> Observation {
        Observation::capture(&self.state, self.config.view_radius, self.last_valid)
    }

    /// Whether `action` would change the state if executed now.
    pub fn is_applicable(&self, action: Action) -> bool {
        applicable(&self.state, action)
    }

    /// Ids of all currently applicable actions, ascending.
    pub fn valid_actions(&self) -> Vec<usize> {
        let space = self.action_space();
        (0..space.len())
            .filter(|&id| space.action(id).is_some_and(|a| self.is_applicable(a)))
            .collect()
    }

    pub fn step(&mut self, action_id: usize) -> Result<StepResult> {
        if self.over {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let action = self
            .action_space()
            .action(action_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown action id {action_id}")))?;
        self.state.step_count += 1;
        let valid = applicable(&self.state, action);
        if valid {
            apply(&mut self.state, action);
        }
        self.last_valid = valid;

        let goal = &self.config.instruction.goal;
        let mut reward = 0.0;
        if self.state.goal_satisfied(goal) {
            self.success = true;
            self.over = true;
            reward = 1.0;
        } else if action == Action::Done {
            self.over = true;
        }
        if self.state.step_count >= self.state.max_steps {
            self.over = true;
        }
        Ok(StepResult {
            observation: self.observe(),
            action_valid: valid,
            task_success: self.success,
            episode_over: self.over,
            reward,
        })
    }
}

pub fn applicable(state: &GridState, action: Action) -> bool {
    let front = state.front();
    match action {
        Action::MoveForward => state.is_free(front),
        Action::TurnLeft | Action::TurnRight | Action::Done => true,
        Action::PickUp(k) => {
            state.carried().is_none()
                && matches!(state.occupant(front), Occupant::Object(o) if o.kind == OBJECTS[k].0)
        }
        Action::PlaceOn(r) => {
            state.carried().is_some()
                && matches!(state.occupant(front), Occupant::Receptacle(rec) if rec.kind == RECEPTACLES[r])
        }
    }
}

/// Apply an applicable action.
fn apply(state: &mut GridState, action: Action) {
    let front = state.front();
    match action {
        Action::MoveForward => {
            state.agent_pos = front;
            let p = state.agent_pos;
            if let Some(o) = state.objects.iter_mut().find(|o| o.carried) {
                o.pos = p;
            }
        }
        Action::TurnLeft => state.agent_facing = state.agent_facing.left(),
        Action::TurnRight => state.agent_facing = state.agent_facing.right(),
        Action::PickUp(_) => {
            let p = state.agent_pos;
            if let Some(o) = state.objects.iter_mut().find(|o| o.is_loose() && o.pos == front) {
                o.carried = true;
                o.pos = p;
            }
        }
        Action::PlaceOn(r) => {
            if let Some(o) = state.objects.iter_mut().find(|o| o.carried) {
                o.carried = false;
                o.pos = front;
                o.on = Some(RECEPTACLES[r].to_string());
            }
        }
        Action::Done => {}
    }
}

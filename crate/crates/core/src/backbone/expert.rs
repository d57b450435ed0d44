//! Full-state scripted expert: shortest-path navigation interleaved with
//! pick-up and place-on.

use crate::backbone::features::{guidance, Belief, G_FACING, G_MOVE};
use crate::backbone::grounding::{ground, Grounding};
use crate::error::{Error, Result};
use crate::memworld::action::{Action, ActionSpace};
use crate::memworld::catalog::{object_index, receptacle_index};
use crate::memworld::env::Env;
use crate::memworld::planner::{plan_to_face, Pose};
use crate::memworld::observation::{CellView, Observation};
use crate::memworld::types::{EpisodeConfig, GridState, Instruction, Pos};

/// Stateless planner with privileged access to the full grid.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertPolicy;

impl ExpertPolicy {
    pub fn act(&self, state: &GridState, instr: &Instruction) -> Result<usize> {
        expert_act(state, instr)
    }
}

fn nav_plan(state: &GridState, target: Pos) -> Option<Vec<Action>> {
    let start = Pose {
        pos: state.agent_pos,
        facing: state.agent_facing,
    };
    plan_to_face(state.width, state.height, start, |p| state.is_free(p), |p| p == target)
}

/// Pick the shortest plan among `targets`; ties go to the earlier entry.
fn best_plan<T: Copy>(state: &GridState, targets: impl Iterator<Item = (T, Pos)>) -> Option<(T, Vec<Action>)> {
    let mut best: Option<(T, Vec<Action>)> = None;
    for (tag, pos) in targets {
        if let Some(plan) = nav_plan(state, pos) {
            if best.as_ref().is_none_or(|(_, b)| plan.len() < b.len()) {
                best = Some((tag, plan));
            }
        }
    }
    best
}

/// Next action of a shortest plan toward the current subgoal.
pub fn expert_act(state: &GridState, instr: &Instruction) -> Result<usize> {
    let space = ActionSpace::standard();
    let id = |a: Action| space.id_of(a).expect("standard action");
    let goal = &instr.goal;
    if state.goal_satisfied(goal) {
        return Ok(id(Action::Done));
    }

    if let Some(carried) = state.carried() {
        let relevant = state.eligible_targets(goal).any(|o| o.id == carried.id);
        let (rec_kind, plan) = if relevant {
            let rec = state
                .receptacle(&goal.receptacle)
                .ok_or_else(|| Error::Planner(format!("no {} in the room", goal.receptacle)))?;
            let plan = nav_plan(state, rec.pos)
                .ok_or_else(|| Error::Planner(format!("{} unreachable", goal.receptacle)))?;
            (rec.kind.as_str(), plan)
        } else {
            // Holding something irrelevant: set it down on the nearest receptacle.
            best_plan(state, state.receptacles.iter().map(|r| (r.kind.as_str(), r.pos)))
                .ok_or_else(|| Error::Planner("no reachable receptacle".into()))?
        };
        return Ok(match plan.first() {
            Some(a) => id(*a),
            None => id(Action::PlaceOn(receptacle_index(rec_kind).expect("known receptacle"))),
        });
    }

    let remaining = state
        .eligible_targets(goal)
        .filter(|o| o.is_loose())
        .map(|o| ((o.kind.as_str(), o.id), o.pos));
    let ((kind, _), plan) =
        best_plan(state, remaining).ok_or_else(|| Error::Planner("no reachable target instance".into()))?;
    Ok(match plan.first() {
        Some(a) => id(*a),
        None => id(Action::PickUp(object_index(kind).expect("known object"))),
    })
}

/// Roll the expert out from reset; returns `(success, steps taken)`.
pub fn expert_rollout(config: &EpisodeConfig) -> Result<(bool, u32)> {
    let (mut env, _) = Env::reset(config);
    while !env.is_over() {
        let a = match expert_act(env.state(), &config.instruction) {
            Ok(a) => a,
            Err(Error::Planner(_)) => return Ok((false, env.state().step_count)),
            Err(e) => return Err(e),
        };
        env.step(a)?;
    }
    Ok((env.succeeded(), env.state().step_count))
}

/// Demonstrator that only knows what it has seen, but never forgets any of
/// it. Acts on subgoal guidance computed from its full observation history.
#[derive(Debug, Clone)]
pub struct RecallExpert {
    grounding: Grounding,
    belief: Option<Belief>,
}

impl RecallExpert {
    pub fn new(instruction_text: &str) -> Self {
        RecallExpert {
            grounding: ground(instruction_text),
            belief: None,
        }
    }

    /// Absorb `obs` and return the next action id.
    pub fn act(&mut self, obs: &Observation) -> usize {
        let belief = self.belief.get_or_insert_with(|| Belief::new(obs.width, obs.height));
        belief.absorb(obs);
        let pose = Pose {
            pos: obs.agent_pos,
            facing: obs.facing,
        };
        let guide = guidance(belief, &self.grounding, pose, obs.carrying.as_deref());
        guide_action(&guide, obs)
    }
}

/// Turn a guidance block into a concrete action for the current view.
pub fn guide_action(guide: &[f64], obs: &Observation) -> usize {
    let space = ActionSpace::standard();
    let id = |a: Action| space.id_of(a).expect("standard action");
    if guide[G_FACING] > 0.5 {
        let front = obs.agent_pos.step(obs.facing);
        match obs.cell(front) {
            Some(CellView::Object { kind }) => {
                if let Some(i) = object_index(kind) {
                    return id(Action::PickUp(i));
                }
            }
            Some(CellView::Receptacle { kind, .. }) => {
                if let Some(i) = receptacle_index(kind) {
                    return id(Action::PlaceOn(i));
                }
            }
            _ => {}
        }
    }
    let moves = &guide[G_MOVE..G_MOVE + 3];
    match moves.iter().position(|v| *v > 0.5) {
        Some(0) => id(Action::MoveForward),
        Some(1) => id(Action::TurnLeft),
        Some(_) => id(Action::TurnRight),
        None => id(Action::Done),
    }
}

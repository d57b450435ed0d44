//! Breadth-first search over agent poses.

use std::collections::VecDeque;

use crate::memworld::action::Action;
use crate::memworld::types::{Facing, Pos};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pose {
    pub pos: Pos,
    pub facing: Facing,
}

const NAV: [Action; 3] = [Action::MoveForward, Action::TurnLeft, Action::TurnRight];

/// Shortest sequence of move/turn actions after which the cell in front of
/// the agent satisfies `target`. `passable` decides which cells can be
/// entered; it is only queried for in-bounds cells. Ties resolve in the order
/// forward, left, right.
pub fn plan_to_face<P, T>(width: i32, height: i32, start: Pose, passable: P, target: T) -> Option<Vec<Action>>
where
    P: Fn(Pos) -> bool,
    T: Fn(Pos) -> bool,
{
    let in_bounds = |p: Pos| p.x >= 0 && p.y >= 0 && p.x < width && p.y < height;
    let index = |pose: Pose| ((pose.pos.y * width + pose.pos.x) as usize) * 4 + pose.facing.index();
    let n = (width * height) as usize * 4;
    if !in_bounds(start.pos) {
        return None;
    }
    let mut parent: Vec<Option<(usize, Action)>> = vec![None; n];
    let mut seen = vec![false; n];
    let mut poses = vec![None; n];
    let mut queue = VecDeque::new();
    let s = index(start);
    seen[s] = true;
    poses[s] = Some(start);
    queue.push_back(start);
    while let Some(pose) = queue.pop_front() {
        let front = pose.pos.step(pose.facing);
        if in_bounds(front) && target(front) {
            let mut path = Vec::new();
            let mut cur = index(pose);
            while let Some((prev, a)) = parent[cur] {
                path.push(a);
                cur = prev;
            }
            path.reverse();
            return Some(path);
        }
        for a in NAV {
            let next = match a {
                Action::MoveForward => {
                    if !in_bounds(front) || !passable(front) {
                        continue;
                    }
                    Pose { pos: front, facing: pose.facing }
                }
                Action::TurnLeft => Pose { pos: pose.pos, facing: pose.facing.left() },
                Action::TurnRight => Pose { pos: pose.pos, facing: pose.facing.right() },
                _ => unreachable!(),
            };
            let ni = index(next);
            if !seen[ni] {
                seen[ni] = true;
                poses[ni] = Some(next);
                parent[ni] = Some((index(pose), a));
                queue.push_back(next);
            }
        }
    }
    None
}

//! Fixed feature extractor shared by the action head and the gate.
//!
//! Layout (128 dims):
//! - view block `[0, 64)`: hashed bag of visible type names, front-cell
//!   type, blocked flag, instruction-mentioned name in view, view-only
//!   subgoal guidance, last-action-failed flag;
//! - instruction block `[64, 96)`: hashed, normalised bag of words;
//! - carried block `[96, 104)`;
//! - digest block `[104, 128)`: summary of the retrieved context, all zero
//!   when the context is empty.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::backbone::grounding::{ground, tokenize, Grounding};
use crate::memory::Context;
use crate::memworld::action::Action;
use crate::memworld::catalog::{object_index, receptacle_index, CONDITION_RECEPTACLE, OBJECTS, RECEPTACLES};
use crate::memworld::observation::{CellView, Observation};
use crate::memworld::planner::{plan_to_face, Pose};
use crate::memworld::types::{Instruction, Pos};

pub const FEATURE_DIM: usize = 128;
pub const BAG_DIM: usize = 32;
pub const GUIDE_DIM: usize = 10;

pub const VIEW: Range<usize> = 0..64;
pub const NAME_BAG: Range<usize> = 0..32;
pub const FRONT_KIND: Range<usize> = 32..51;
pub const FRONT_BLOCKED: usize = 51;
pub const MENTIONED_VISIBLE: usize = 52;
pub const VIEW_GUIDE: Range<usize> = 53..63;
/// The previous action was rejected by the environment.
pub const LAST_FAILED: usize = 63;
pub const INSTRUCTION: Range<usize> = 64..96;
pub const CARRIED: Range<usize> = 96..104;
pub const DIGEST: Range<usize> = 104..128;
pub const DIGEST_COUNT: usize = 104;
/// Fraction of visible cells the retrieved context did not already show.
pub const DIGEST_NEW: usize = 105;
pub const DIGEST_GUIDE: Range<usize> = 106..116;
pub const DIGEST_OPEN: usize = 116;
pub const DIGEST_CLOSED: usize = 117;
pub const DIGEST_MEAN_GUIDE: Range<usize> = 118..128;

// Offsets inside a guidance sub-block.
pub const G_FETCH: usize = 0;
pub const G_DELIVER: usize = 1;
pub const G_DROP: usize = 2;
pub const G_CHECK: usize = 3;
pub const G_KNOWN: usize = 4;
pub const G_FACING: usize = 5;
pub const G_MOVE: usize = 6;
pub const G_DIST: usize = 9;

const NAME_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector(vec![0.0; FEATURE_DIM])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn block(&self, r: Range<usize>) -> &[f64] {
        self.0.get(r).unwrap_or(&[])
    }

    pub fn name_bag(&self) -> &[f64] {
        self.block(NAME_BAG)
    }

    pub fn view_guide(&self) -> &[f64] {
        self.block(VIEW_GUIDE)
    }
}

pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn bucket(token: &str, n: usize) -> usize {
    (fnv1a(token) % n as u64) as usize
}

/// Hashed bag of words, L2-normalised.
pub fn instruction_vector(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; BAG_DIM];
    for t in tokenize(text) {
        v[bucket(&t, BAG_DIM)] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// What the agent believes about the room: last seen content per cell.
#[derive(Debug, Clone)]
pub struct Belief {
    width: i32,
    height: i32,
    cells: Vec<Option<CellView>>,
}

impl Belief {
    pub fn new(width: i32, height: i32) -> Self {
        Belief {
            width,
            height,
            cells: vec![None; (width.max(0) * height.max(0)) as usize],
        }
    }

    fn idx(&self, p: Pos) -> Option<usize> {
        (p.x >= 0 && p.y >= 0 && p.x < self.width && p.y < self.height).then(|| (p.y * self.width + p.x) as usize)
    }

    pub fn absorb(&mut self, obs: &Observation) {
        for c in &obs.visible_cells {
            if let Some(i) = self.idx(c.pos) {
                self.cells[i] = Some(c.content.clone());
            }
        }
    }

    pub fn get(&self, p: Pos) -> Option<&CellView> {
        self.idx(p).and_then(|i| self.cells[i].as_ref())
    }

    /// Door state of the condition receptacle, if it has been seen.
    pub fn flag(&self) -> Option<bool> {
        self.cells.iter().flatten().find_map(|c| match c {
            CellView::Receptacle { kind, open, .. } if kind == CONDITION_RECEPTACLE => *open,
            _ => None,
        })
    }

    fn positions(&self) -> impl Iterator<Item = (Pos, &CellView)> + '_ {
        self.cells.iter().enumerate().filter_map(|(i, c)| {
            let i = i as i32;
            c.as_ref().map(|c| (Pos::new(i % self.width, i / self.width), c))
        })
    }
}

fn is_receptacle(c: &CellView, want: Option<&str>) -> bool {
    matches!(c, CellView::Receptacle { kind, .. } if want.is_none_or(|w| w == kind))
}

/// Subgoal guidance computed from a belief map.
pub fn guidance(belief: &Belief, g: &Grounding, pose: Pose, carrying: Option<&str>) -> [f64; GUIDE_DIM] {
    let mut out = [0.0; GUIDE_DIM];
    let flag = belief.flag();
    let need_check = g.is_conditional() && flag.is_none();
    let active = g.active_kind(flag);

    let mut targets: Vec<Pos> = Vec::new();
    if need_check {
        out[G_CHECK] = 1.0;
    } else if let Some(c) = carrying {
        let (slot, want) = if Some(c) == active {
            (G_DELIVER, g.receptacle.as_deref())
        } else {
            (G_DROP, None)
        };
        out[slot] = 1.0;
        targets.extend(belief.positions().filter(|(_, v)| is_receptacle(v, want)).map(|(p, _)| p));
    } else {
        out[G_FETCH] = 1.0;
        if let Some(k) = active {
            targets.extend(
                belief
                    .positions()
                    .filter(|(p, v)| {
                        matches!(v, CellView::Object { kind } if kind == k)
                            && g.near.as_deref().is_none_or(|near| {
                                neighbours(*p).any(|q| belief.get(q).is_some_and(|c| is_receptacle(c, Some(near))))
                            })
                    })
                    .map(|(p, _)| p),
            );
        }
    }

    let passable = |p: Pos| belief.get(p).is_none_or(|c| !c.blocks());
    let plan = if targets.is_empty() {
        None
    } else {
        plan_to_face(belief.width, belief.height, pose, passable, |p| targets.contains(&p))
    };
    let plan = match plan {
        Some(p) => {
            out[G_KNOWN] = 1.0;
            Some(p)
        }
        None => plan_to_face(belief.width, belief.height, pose, passable, |p| belief.get(p).is_none()),
    };
    if let Some(p) = plan {
        match p.first() {
            None => out[G_FACING] = out[G_KNOWN],
            Some(Action::MoveForward) => out[G_MOVE] = 1.0,
            Some(Action::TurnLeft) => out[G_MOVE + 1] = 1.0,
            Some(_) => out[G_MOVE + 2] = 1.0,
        }
        out[G_DIST] = p.len() as f64 / (belief.width + belief.height).max(1) as f64;
    }
    out
}

fn neighbours(p: Pos) -> impl Iterator<Item = Pos> {
    (-1..=1).flat_map(move |dy| (-1..=1).map(move |dx| Pos::new(p.x + dx, p.y + dy))).filter(move |q| *q != p)
}

/// Per-episode extractor: grounds the instruction once.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    grounding: Grounding,
    instr: Vec<f64>,
    mentioned: Vec<String>,
}

impl FeatureExtractor {
    pub fn new(instruction_text: &str) -> Self {
        let grounding = ground(instruction_text);
        let mentioned = [&grounding.object, &grounding.otherwise, &grounding.receptacle, &grounding.near]
            .into_iter()
            .flatten()
            .cloned()
            .chain(grounding.condition_receptacle().map(String::from))
            .collect();
        FeatureExtractor {
            grounding,
            instr: instruction_vector(instruction_text),
            mentioned,
        }
    }

    pub fn grounding(&self) -> &Grounding {
        &self.grounding
    }

    /// Instruction block, also the retrieval query.
    pub fn instruction_feature(&self) -> &[f64] {
        &self.instr
    }

    pub fn embed(&self, obs: &Observation, ctx: &Context<'_>) -> FeatureVector {
        let mut f = vec![0.0; FEATURE_DIM];
        let pose = Pose {
            pos: obs.agent_pos,
            facing: obs.facing,
        };

        for name in obs.visible_names() {
            f[NAME_BAG.start + bucket(name, BAG_DIM)] += NAME_SCALE;
        }
        let front = obs.agent_pos.step(obs.facing);
        match obs.cell(front) {
            Some(CellView::Object { kind }) => {
                if let Some(i) = object_index(kind) {
                    f[FRONT_KIND.start + i] = 1.0;
                }
                f[FRONT_BLOCKED] = 1.0;
            }
            Some(CellView::Receptacle { kind, .. }) => {
                if let Some(i) = receptacle_index(kind) {
                    f[FRONT_KIND.start + OBJECTS.len() + i] = 1.0;
                }
                f[FRONT_BLOCKED] = 1.0;
            }
            Some(CellView::Wall) | None => f[FRONT_BLOCKED] = 1.0,
            Some(CellView::Empty) => {}
        }
        debug_assert_eq!(FRONT_KIND.len(), OBJECTS.len() + RECEPTACLES.len());
        if obs.visible_names().any(|n| self.mentioned.iter().any(|m| m == n)) {
            f[MENTIONED_VISIBLE] = 1.0;
        }
        let carrying = obs.carrying.as_deref();
        let mut view_belief = Belief::new(obs.width, obs.height);
        view_belief.absorb(obs);
        f[VIEW_GUIDE].copy_from_slice(&guidance(&view_belief, &self.grounding, pose, carrying));
        if !obs.last_action_valid {
            f[LAST_FAILED] = 1.0;
        }

        f[INSTRUCTION].copy_from_slice(&self.instr);

        if let Some(c) = carrying {
            f[CARRIED.start] = 1.0;
            f[CARRIED.start + 1 + bucket(c, 6)] = 1.0;
            if self.grounding.mentions(c) {
                f[CARRIED.start + 7] = 1.0;
            }
        }

        if !ctx.is_empty() {
            let n = ctx.len() as f64;
            f[DIGEST_COUNT] = n / 8.0;
            let mut belief = Belief::new(obs.width, obs.height);
            for e in &ctx.selected {
                belief.absorb(&e.observation);
            }
            let fresh = obs.visible_cells.iter().filter(|c| belief.get(c.pos) != Some(&c.content)).count();
            f[DIGEST_NEW] = fresh as f64 / obs.visible_cells.len().max(1) as f64;
            belief.absorb(obs);
            f[DIGEST_GUIDE].copy_from_slice(&guidance(&belief, &self.grounding, pose, carrying));
            match belief.flag() {
                Some(true) => f[DIGEST_OPEN] = 1.0,
                Some(false) => f[DIGEST_CLOSED] = 1.0,
                None => {}
            }
            for e in &ctx.selected {
                for (k, v) in e.feature.view_guide().iter().enumerate() {
                    f[DIGEST_MEAN_GUIDE.start + k] += v / n;
                }
            }
        }
        FeatureVector(f)
    }
}

/// One-shot embedding; grounds the instruction on every call.
pub fn embed(obs: &Observation, instruction: &Instruction, ctx: &Context<'_>) -> FeatureVector {
    FeatureExtractor::new(&instruction.text).embed(obs, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{MemoryEntry, MemoryStore};
    use crate::memworld::env::Env;
    use crate::memworld::task::generate_task;
    use crate::memworld::types::Subset;

    fn differing(a: &FeatureVector, b: &FeatureVector) -> Vec<usize> {
        (0..FEATURE_DIM).filter(|&i| a.0[i] != b.0[i]).collect()
    }

    #[test]
    fn layout_is_contiguous() {
        assert_eq!(VIEW.end, INSTRUCTION.start);
        assert_eq!(INSTRUCTION.end, CARRIED.start);
        assert_eq!(CARRIED.end, DIGEST.start);
        assert_eq!(DIGEST.end, FEATURE_DIM);
        assert_eq!(DIGEST_MEAN_GUIDE.end, DIGEST.end);
        assert_eq!((VIEW.len(), INSTRUCTION.len(), CARRIED.len(), DIGEST.len()), (64, 32, 8, 24));
    }

    #[test]
    fn fnv1a_reference_values() {
        assert_eq!(fnv1a(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a("foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_context_zero_digest_and_purity() {
        let cfg = generate_task(Subset::Long, 2).unwrap();
        let (_, obs) = Env::reset(&cfg);
        let fx = FeatureExtractor::new(&cfg.instruction.text);
        let a = fx.embed(&obs, &Context::empty());
        let b = embed(&obs, &cfg.instruction, &Context::empty());
        assert_eq!(a, b);
        assert_eq!(a.len(), FEATURE_DIM);
        assert!(a.block(DIGEST).iter().all(|v| *v == 0.0));
        assert!(a.0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn one_word_instruction_change_touches_only_the_bag() {
        let cfg = generate_task(Subset::Complex, 8).unwrap();
        let (_, obs) = Env::reset(&cfg);
        let text = cfg.instruction.text.clone();
        let noise = ["hallway", "afternoon", "window", "cat"].into_iter().find(|w| text.contains(w)).unwrap();
        let other = text.replacen(noise, "pantry", 1);
        let a = FeatureExtractor::new(&text).embed(&obs, &Context::empty());
        let b = FeatureExtractor::new(&other).embed(&obs, &Context::empty());
        let d = differing(&a, &b);
        assert!(!d.is_empty());
        assert!(d.iter().all(|i| INSTRUCTION.contains(i)), "{d:?}");
    }

    #[test]
    fn context_changes_only_the_digest() {
        let cfg = generate_task(Subset::Long, 5).unwrap();
        let (mut env, obs0) = Env::reset(&cfg);
        let fx = FeatureExtractor::new(&cfg.instruction.text);
        let mut store = MemoryStore::new();
        let mut obs = obs0;
        for k in 0..6 {
            let f = fx.embed(&obs, &Context::empty());
            store
                .maybe_insert(
                    MemoryEntry {
                        step_index: obs.step_index,
                        obs_summary: obs.state_summary.clone(),
                        observation: obs.clone(),
                        feature: f,
                        action_id: 0,
                        action_name: "move-forward".into(),
                    },
                    true,
                )
                .unwrap();
            obs = env.step(if k % 2 == 0 { 0 } else { 1 }).unwrap().observation;
        }
        let bare = fx.embed(&obs, &Context::empty());
        let full = fx.embed(&obs, &store.retrieve(fx.instruction_feature(), crate::memory::ContextBudget(6)));
        let d = differing(&bare, &full);
        assert!(d.contains(&DIGEST_COUNT));
        assert!(d.iter().all(|i| DIGEST.contains(i)), "{d:?}");
        assert_eq!(full.0[DIGEST_COUNT], 6.0 / 8.0);
    }
}

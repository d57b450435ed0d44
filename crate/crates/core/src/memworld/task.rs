//! Seeded task generator for the five instruction families.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::expert::expert_rollout;
use crate::error::{Error, Result};
use crate::memworld::catalog::{article, descriptor_of, same_category, CONDITION_FLAG, CONDITION_RECEPTACLE, OBJECTS, RECEPTACLES};
use crate::memworld::types::*;
use crate::nn::rng::{derive_seed, Rng};

pub const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SuitePreset {
    #[default]
    Standard,
    /// Larger rooms, longer travel between the things that matter.
    NavHeavy,
    /// Smaller, cluttered rooms with more objects to interact with.
    ManipHeavy,
}

impl SuitePreset {
    pub fn parse(s: &str) -> Option<SuitePreset> {
        match s {
            "standard" => Some(SuitePreset::Standard),
            "nav-heavy" => Some(SuitePreset::NavHeavy),
            "manip-heavy" => Some(SuitePreset::ManipHeavy),
            _ => None,
        }
    }

    pub fn params(self) -> GenParams {
        match self {
            SuitePreset::Standard => GenParams::default(),
            SuitePreset::NavHeavy => GenParams {
                width: 11,
                height: 11,
                max_steps: 40,
                walls: (4, 10),
                distractors: (1, 3),
                extra_receptacles: (1, 2),
                min_spread: 4,
                ..GenParams::default()
            },
            SuitePreset::ManipHeavy => GenParams {
                width: 7,
                height: 7,
                walls: (0, 2),
                distractors: (4, 6),
                extra_receptacles: (2, 3),
                min_spread: 2,
                ..GenParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenParams {
    pub width: i32,
    pub height: i32,
    pub view_radius: i32,
    pub max_steps: u32,
    /// Inclusive range of interior wall cells.
    pub walls: (usize, usize),
    pub distractors: (usize, usize),
    pub extra_receptacles: (usize, usize),
    /// Minimum Chebyshev separation between the things a task needs the
    /// agent to remember (condition receptacle vs. targets, Long instances).
    pub min_spread: i32,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            width: 9,
            height: 9,
            view_radius: 2,
            max_steps: 40,
            walls: (2, 6),
            distractors: (2, 4),
            extra_receptacles: (1, 2),
            min_spread: 3,
        }
    }
}

const IRRELEVANT: &[&str] = &[
    "The hallway lights are dim today.",
    "It is a quiet afternoon in the house.",
    "Someone left the window slightly open.",
    "Try not to disturb the cat sleeping nearby.",
];

pub fn generate_task(subset: Subset, seed: u64) -> Result<EpisodeConfig> {
    generate_task_with(subset, seed, &GenParams::default())
}

pub fn generate_task_with(subset: Subset, seed: u64, params: &GenParams) -> Result<EpisodeConfig> {
    let mut rng = Rng::new(derive_seed(seed, subset as u64 + 1));
    for _ in 0..MAX_ATTEMPTS {
        if let Some(cfg) = attempt(subset, seed, params, &mut rng) {
            let (ok, _) = expert_rollout(&cfg)?;
            if ok {
                return Ok(cfg);
            }
        }
    }
    Err(Error::Generator {
        subset: subset.name().into(),
        seed,
        attempts: MAX_ATTEMPTS,
    })
}

struct Layout<'a> {
    params: &'a GenParams,
    taken: Vec<Pos>,
    walls: Vec<Pos>,
    receptacles: Vec<Receptacle>,
    objects: Vec<ObjectSpec>,
}

impl<'a> Layout<'a> {
    fn new(params: &'a GenParams) -> Self {
        Self {
            params,
            taken: Vec::new(),
            walls: Vec::new(),
            receptacles: Vec::new(),
            objects: Vec::new(),
        }
    }

    fn random_free(&mut self, rng: &mut Rng, ok: impl Fn(Pos) -> bool) -> Option<Pos> {
        let free: Vec<Pos> = (0..self.params.height)
            .flat_map(|y| (0..self.params.width).map(move |x| Pos::new(x, y)))
            .filter(|p| !self.taken.contains(p) && ok(*p))
            .collect();
        let p = *rng.choose(&free)?;
        self.taken.push(p);
        Some(p)
    }

    fn add_receptacle(&mut self, kind: &str, rng: &mut Rng) -> Option<Pos> {
        let p = self.random_free(rng, |_| true)?;
        self.receptacles.push(Receptacle { kind: kind.into(), pos: p });
        Some(p)
    }

    fn add_object(&mut self, kind: &str, rng: &mut Rng, ok: impl Fn(Pos) -> bool) -> Option<u32> {
        let p = self.random_free(rng, ok)?;
        let id = self.objects.len() as u32;
        self.objects.push(ObjectSpec { id, kind: kind.into(), pos: p });
        Some(id)
    }
}

fn pick_kinds<'k>(rng: &mut Rng, pool: &[&'k str], n: usize) -> Vec<&'k str> {
    let mut v = pool.to_vec();
    rng.shuffle(&mut v);
    v.truncate(n);
    v
}

fn range(rng: &mut Rng, (lo, hi): (usize, usize)) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn attempt(subset: Subset, seed: u64, params: &GenParams, rng: &mut Rng) -> Option<EpisodeConfig> {
    let mut lay = Layout::new(params);
    let (w, h) = (params.width, params.height);
    for _ in 0..range(rng, params.walls) {
        let p = lay.random_free(rng, |p| p.x > 0 && p.y > 0 && p.x < w - 1 && p.y < h - 1)?;
        lay.walls.push(p);
    }

    let all_objects: Vec<&str> = OBJECTS.iter().map(|o| o.0).collect();
    let goal_pool: Vec<&str> = RECEPTACLES.iter().copied().filter(|r| *r != CONDITION_RECEPTACLE).collect();
    let goal_rec = *rng.choose(&goal_pool)?;
    lay.add_receptacle(goal_rec, rng)?;

    let mut flags = BTreeMap::new();
    let spread = params.min_spread;
    let mut used_kinds: Vec<&str> = Vec::new();

    let (text, goal) = match subset {
        Subset::Base => {
            let kind = *rng.choose(&all_objects)?;
            used_kinds.push(kind);
            for _ in 0..1 + rng.below(2) {
                lay.add_object(kind, rng, |_| true)?;
            }
            (
                format!("Move one of the {kind} items to the indicated {goal_rec}."),
                GoalSpec {
                    object: kind.into(),
                    receptacle: goal_rec.into(),
                    quantifier: Quantifier::One,
                    condition: None,
                    relation: None,
                    reference: None,
                },
            )
        }
        Subset::Common => {
            let kind = *rng.choose(&all_objects)?;
            used_kinds.push(kind);
            lay.add_object(kind, rng, |_| true)?;
            for d in pick_kinds(rng, &same_category(kind), 2) {
                used_kinds.push(d);
                lay.add_object(d, rng, |_| true)?;
            }
            let desc = descriptor_of(kind)?;
            (
                format!("Find the {desc} and put it on the {goal_rec}."),
                GoalSpec {
                    object: kind.into(),
                    receptacle: goal_rec.into(),
                    quantifier: Quantifier::One,
                    condition: None,
                    relation: None,
                    reference: Some(desc.into()),
                },
            )
        }
        Subset::Complex => {
            let open = rng.bernoulli(0.5);
            flags.insert(CONDITION_FLAG.to_string(), open);
            let fridge = lay.add_receptacle(CONDITION_RECEPTACLE, rng)?;
            let pair = pick_kinds(rng, &all_objects, 2);
            let (a, b) = (pair[0], pair[1]);
            used_kinds.extend([a, b]);
            lay.add_object(a, rng, |p| p.chebyshev(fridge) >= spread)?;
            lay.add_object(b, rng, |p| p.chebyshev(fridge) >= spread)?;
            let core = format!(
                "When you find the fridge door open, go ahead and move {} {a} to the {goal_rec}; otherwise, transport {} {b} to the {goal_rec}.",
                article(a),
                article(b)
            );
            let noise = IRRELEVANT[rng.below(IRRELEVANT.len())];
            let text = if rng.bernoulli(0.5) {
                format!("{noise} {core}")
            } else {
                format!("{core} {noise}")
            };
            (
                text,
                GoalSpec {
                    object: a.into(),
                    receptacle: goal_rec.into(),
                    quantifier: Quantifier::One,
                    condition: Some(Condition {
                        flag: CONDITION_FLAG.into(),
                        receptacle: CONDITION_RECEPTACLE.into(),
                        otherwise: b.into(),
                    }),
                    relation: None,
                    reference: None,
                },
            )
        }
        Subset::Spatial => {
            let anchor_pool: Vec<&str> = RECEPTACLES
                .iter()
                .copied()
                .filter(|r| *r != goal_rec && *r != CONDITION_RECEPTACLE)
                .collect();
            let anchor = *rng.choose(&anchor_pool)?;
            let apos = lay.add_receptacle(anchor, rng)?;
            let kind = *rng.choose(&all_objects)?;
            used_kinds.push(kind);
            let near = lay.add_object(kind, rng, |p| p.chebyshev(apos) == 1)?;
            lay.add_object(kind, rng, |p| p.chebyshev(apos) >= spread)?;
            (
                format!("Move the {kind} next to the {anchor} to the {goal_rec}."),
                GoalSpec {
                    object: kind.into(),
                    receptacle: goal_rec.into(),
                    quantifier: Quantifier::One,
                    condition: None,
                    relation: Some(Relation {
                        near: anchor.into(),
                        instance: near,
                    }),
                    reference: None,
                },
            )
        }
        Subset::Long => {
            let kind = *rng.choose(&all_objects)?;
            used_kinds.push(kind);
            let k = 2 + rng.below(2);
            let mut placed: Vec<Pos> = Vec::new();
            for _ in 0..k {
                let ps = placed.clone();
                let id = lay.add_object(kind, rng, |p| ps.iter().all(|q| q.chebyshev(p) >= spread))?;
                placed.push(lay.objects[id as usize].pos);
            }
            (
                format!("Move all of the {kind} items to the {goal_rec}."),
                GoalSpec {
                    object: kind.into(),
                    receptacle: goal_rec.into(),
                    quantifier: Quantifier::All,
                    condition: None,
                    relation: None,
                    reference: None,
                },
            )
        }
    };

    // Extra receptacles and distractor objects.
    let have: Vec<String> = lay.receptacles.iter().map(|r| r.kind.clone()).collect();
    let extra_pool: Vec<&str> = RECEPTACLES
        .iter()
        .copied()
        .filter(|r| !have.iter().any(|h| h == r) && (subset == Subset::Complex || *r != CONDITION_RECEPTACLE))
        .collect();
    let n_extra = range(rng, params.extra_receptacles);
    for r in pick_kinds(rng, &extra_pool, n_extra) {
        lay.add_receptacle(r, rng)?;
    }
    let distractor_pool: Vec<&str> = all_objects.iter().copied().filter(|k| !used_kinds.contains(k)).collect();
    let n_distractors = range(rng, params.distractors);
    for _ in 0..n_distractors {
        let kind = *rng.choose(&distractor_pool)?;
        lay.add_object(kind, rng, |_| true)?;
    }

    let agent_pos = lay.random_free(rng, |_| true)?;
    let agent_facing = Facing::ALL[rng.below(4)];

    let instruction = Instruction {
        text,
        subset,
        goal,
    };
    debug_assert!(instruction.is_consistent());
    Some(EpisodeConfig {
        width: w,
        height: h,
        view_radius: params.view_radius,
        max_steps: params.max_steps,
        walls: lay.walls,
        agent_pos,
        agent_facing,
        objects: lay.objects,
        receptacles: lay.receptacles,
        flags,
        instruction,
        seed,
    })
}

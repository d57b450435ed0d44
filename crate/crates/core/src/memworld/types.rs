use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn chebyshev(self, other: Pos) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn step(self, f: Facing) -> Pos {
        let (dx, dy) = f.delta();
        Pos::new(self.x + dx, self.y + dy)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facing {
    North,
    East,
    South,
    West,
}

impl Facing {
    pub const ALL: [Facing; 4] = [Facing::North, Facing::East, Facing::South, Facing::West];

    /// Grid delta; `y` grows southwards.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Facing::North => (0, -1),
            Facing::East => (1, 0),
            Facing::South => (0, 1),
            Facing::West => (-1, 0),
        }
    }

    pub fn left(self) -> Facing {
        Facing::ALL[(self.index() + 3) % 4]
    }

    pub fn right(self) -> Facing {
        Facing::ALL[(self.index() + 1) % 4]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        ['N', 'E', 'S', 'W'][self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Base,
    Common,
    Complex,
    Spatial,
    Long,
}

impl Subset {
    pub const ALL: [Subset; 5] = [
        Subset::Base,
        Subset::Common,
        Subset::Complex,
        Subset::Spatial,
        Subset::Long,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Base => "base",
            Subset::Common => "common",
            Subset::Complex => "complex",
            Subset::Spatial => "spatial",
            Subset::Long => "long",
        }
    }

    pub fn parse(s: &str) -> Option<Subset> {
        Subset::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: u32,
    pub kind: String,
    pub pos: Pos,
    #[serde(default)]
    pub carried: bool,
    /// Receptacle kind the object rests on, once placed.
    #[serde(default)]
    pub on: Option<String>,
}

impl ObjectInstance {
    pub fn is_loose(&self) -> bool {
        !self.carried && self.on.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receptacle {
    pub kind: String,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantifier {
    One,
    All,
}

/// "When the flag holds, the target is `GoalSpec::object`; otherwise `otherwise`."
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub flag: String,
    pub receptacle: String,
    pub otherwise: String,
}

/// Target instance disambiguated by adjacency to a receptacle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub near: String,
    pub instance: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub object: String,
    pub receptacle: String,
    pub quantifier: Quantifier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    /// Commonsense phrase standing in for the object name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl GoalSpec {
    /// Target kind given the current flags.
    pub fn active_kind<'a>(&'a self, flags: &BTreeMap<String, bool>) -> &'a str {
        match &self.condition {
            Some(c) if !flags.get(&c.flag).copied().unwrap_or(false) => &c.otherwise,
            _ => &self.object,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub subset: Subset,
    pub goal: GoalSpec,
}

impl Instruction {
    /// Subset/goal consistency: `All` only for Long, conditions only for
    /// Complex, relations only for Spatial, references only for Common.
    pub fn is_consistent(&self) -> bool {
        let g = &self.goal;
        (g.quantifier == Quantifier::All) == (self.subset == Subset::Long)
            && g.condition.is_some() == (self.subset == Subset::Complex)
            && g.relation.is_some() == (self.subset == Subset::Spatial)
            && g.reference.is_some() == (self.subset == Subset::Common)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridState {
    pub width: i32,
    pub height: i32,
    pub agent_pos: Pos,
    pub agent_facing: Facing,
    pub objects: Vec<ObjectInstance>,
    pub receptacles: Vec<Receptacle>,
    pub walls: Vec<Pos>,
    pub flags: BTreeMap<String, bool>,
    pub step_count: u32,
    pub max_steps: u32,
}

/// What occupies a cell, as far as movement is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupant<'a> {
    Free,
    OutOfBounds,
    Wall,
    Receptacle(&'a Receptacle),
    Object(&'a ObjectInstance),
}

impl GridState {
    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width && p.y < self.height
    }

    pub fn occupant(&self, p: Pos) -> Occupant<'_> {
        if !self.in_bounds(p) {
            return Occupant::OutOfBounds;
        }
        if self.walls.contains(&p) {
            return Occupant::Wall;
        }
        if let Some(r) = self.receptacles.iter().find(|r| r.pos == p) {
            return Occupant::Receptacle(r);
        }
        if let Some(o) = self.objects.iter().find(|o| o.is_loose() && o.pos == p) {
            return Occupant::Object(o);
        }
        Occupant::Free
    }

    pub fn is_free(&self, p: Pos) -> bool {
        matches!(self.occupant(p), Occupant::Free)
    }

    pub fn carried(&self) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.carried)
    }

    pub fn front(&self) -> Pos {
        self.agent_pos.step(self.agent_facing)
    }

    pub fn receptacle(&self, kind: &str) -> Option<&Receptacle> {
        self.receptacles.iter().find(|r| r.kind == kind)
    }

    /// Instances that count toward the goal (kind and, for spatial goals, identity).
    pub fn eligible_targets<'a>(&'a self, goal: &'a GoalSpec) -> impl Iterator<Item = &'a ObjectInstance> + 'a {
        let kind = goal.active_kind(&self.flags);
        self.objects.iter().filter(move |o| {
            o.kind == kind && goal.relation.as_ref().is_none_or(|r| r.instance == o.id)
        })
    }

    /// Number of eligible instances resting on the goal receptacle.
    pub fn placed_count(&self, goal: &GoalSpec) -> usize {
        self.eligible_targets(goal)
            .filter(|o| o.on.as_deref() == Some(goal.receptacle.as_str()))
            .count()
    }

    pub fn goal_satisfied(&self, goal: &GoalSpec) -> bool {
        let total = self.eligible_targets(goal).count();
        let placed = self.placed_count(goal);
        match goal.quantifier {
            Quantifier::One => placed >= 1,
            Quantifier::All => total > 0 && placed == total,
        }
    }

    /// Structural invariants: positions in bounds, at most one carried
    /// object, step budget respected.
    pub fn check_invariants(&self) -> bool {
        let positions_ok = self.in_bounds(self.agent_pos)
            && self.objects.iter().all(|o| self.in_bounds(o.pos))
            && self.receptacles.iter().all(|r| self.in_bounds(r.pos))
            && self.walls.iter().all(|w| self.in_bounds(*w));
        positions_ok
            && self.objects.iter().filter(|o| o.carried).count() <= 1
            && self.step_count <= self.max_steps
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub kind: String,
    pub pos: Pos,
}

/// Everything needed to reset an episode; one line of a task file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub width: i32,
    pub height: i32,
    pub view_radius: i32,
    pub max_steps: u32,
    pub walls: Vec<Pos>,
    pub agent_pos: Pos,
    pub agent_facing: Facing,
    pub objects: Vec<ObjectSpec>,
    pub receptacles: Vec<Receptacle>,
    pub flags: BTreeMap<String, bool>,
    pub instruction: Instruction,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn initial_state(&self) -> GridState {
        GridState {
            width: self.width,
            height: self.height,
            agent_pos: self.agent_pos,
            agent_facing: self.agent_facing,
            objects: self
                .objects
                .iter()
                .map(|o| ObjectInstance {
                    id: o.id,
                    kind: o.kind.clone(),
                    pos: o.pos,
                    carried: false,
                    on: None,
                })
                .collect(),
            receptacles: self.receptacles.clone(),
            walls: self.walls.clone(),
            flags: self.flags.clone(),
            step_count: 0,
            max_steps: self.max_steps,
        }
    }
}

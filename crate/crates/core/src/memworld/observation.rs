use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::memworld::types::{Facing, GridState, Pos};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CellView {
    Empty,
    Wall,
    Object {
        kind: String,
    },
    Receptacle {
        kind: String,
        holding: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        open: Option<bool>,
    },
}

impl CellView {
    pub fn blocks(&self) -> bool {
        !matches!(self, CellView::Empty)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VisibleCell {
    pub pos: Pos,
    pub content: CellView,
}

/// The agent's partial view: every in-bounds cell within Chebyshev radius
/// `view_radius`, plus proprioception and last-action feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step_index: u32,
    pub width: i32,
    pub height: i32,
    pub agent_pos: Pos,
    pub facing: Facing,
    pub carrying: Option<String>,
    pub last_action_valid: bool,
    pub visible_cells: Vec<VisibleCell>,
    pub state_summary: String,
}

impl Observation {
    pub fn capture(state: &GridState, view_radius: i32, last_action_valid: bool) -> Self {
        let mut cells = Vec::new();
        let c = state.agent_pos;
        for y in (c.y - view_radius)..=(c.y + view_radius) {
            for x in (c.x - view_radius)..=(c.x + view_radius) {
                let p = Pos::new(x, y);
                if !state.in_bounds(p) {
                    continue;
                }
                cells.push(VisibleCell {
                    pos: p,
                    content: cell_view(state, p),
                });
            }
        }
        let carrying = state.carried().map(|o| o.kind.clone());
        let summary = summarize(state.agent_pos, state.agent_facing, carrying.as_deref(), last_action_valid, &cells);
        Observation {
            step_index: state.step_count,
            width: state.width,
            height: state.height,
            agent_pos: state.agent_pos,
            facing: state.agent_facing,
            carrying,
            last_action_valid,
            visible_cells: cells,
            state_summary: summary,
        }
    }

    pub fn cell(&self, p: Pos) -> Option<&CellView> {
        self.visible_cells.iter().find(|c| c.pos == p).map(|c| &c.content)
    }

    /// Every type name in view, objects on receptacles included.
    pub fn visible_names(&self) -> impl Iterator<Item = &str> {
        self.visible_cells.iter().flat_map(|c| -> Box<dyn Iterator<Item = &str>> {
            match &c.content {
                CellView::Object { kind } => Box::new(std::iter::once(kind.as_str())),
                CellView::Receptacle { kind, holding, .. } => {
                    Box::new(std::iter::once(kind.as_str()).chain(holding.iter().map(String::as_str)))
                }
                _ => Box::new(std::iter::empty()),
            }
        })
    }
}

fn cell_view(state: &GridState, p: Pos) -> CellView {
    if state.walls.contains(&p) {
        return CellView::Wall;
    }
    if let Some(r) = state.receptacles.iter().find(|r| r.pos == p) {
        let mut holding: Vec<String> = state
            .objects
            .iter()
            .filter(|o| o.on.as_deref() == Some(r.kind.as_str()))
            .map(|o| o.kind.clone())
            .collect();
        holding.sort();
        let open = (r.kind == crate::memworld::catalog::CONDITION_RECEPTACLE)
            .then(|| state.flags.get(crate::memworld::catalog::CONDITION_FLAG).copied().unwrap_or(false));
        return CellView::Receptacle {
            kind: r.kind.clone(),
            holding,
            open,
        };
    }
    if let Some(o) = state.objects.iter().find(|o| o.is_loose() && o.pos == p) {
        return CellView::Object { kind: o.kind.clone() };
    }
    CellView::Empty
}

/// Deterministic text rendering of a view (the reflection string kept in memory).
pub fn summarize(
    pos: Pos,
    facing: Facing,
    carrying: Option<&str>,
    last_action_valid: bool,
    cells: &[VisibleCell],
) -> String {
    let mut s = format!(
        "at {pos} facing {} carrying {} last {};",
        facing.letter(),
        carrying.unwrap_or("nothing"),
        if last_action_valid { "ok" } else { "failed" }
    );
    for c in cells {
        match &c.content {
            CellView::Empty => {}
            CellView::Wall => {
                let _ = write!(s, " wall{}", c.pos);
            }
            CellView::Object { kind } => {
                let _ = write!(s, " {kind}{}", c.pos);
            }
            CellView::Receptacle { kind, holding, open } => {
                let _ = write!(s, " {kind}");
                if let Some(o) = open {
                    s.push_str(if *o { "{open}" } else { "{closed}" });
                }
                if !holding.is_empty() {
                    let _ = write!(s, "[{}]", holding.join(","));
                }
                let _ = write!(s, "{}", c.pos);
            }
        }
    }
    s
}

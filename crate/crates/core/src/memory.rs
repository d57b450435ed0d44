//! Bounded episodic memory: gate-controlled insertion and relevance retrieval.

use serde::{Deserialize, Serialize};

use crate::backbone::features::FeatureVector;
use crate::error::{Error, Result};
use crate::memworld::observation::Observation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub step_index: u32,
    pub obs_summary: String,
    pub observation: Observation,
    pub feature: FeatureVector,
    pub action_id: usize,
    pub action_name: String,
}

/// Per-episode store, ordered by ascending step index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    entries: Vec<MemoryEntry>,
}

/// Maximum number of entries assembled into a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBudget(pub usize);

impl Default for ContextBudget {
    fn default() -> Self {
        ContextBudget(6)
    }
}

impl ContextBudget {
    pub const UNBOUNDED: ContextBudget = ContextBudget(usize::MAX);
}

/// Entries selected for the current step, in chronological order.
#[derive(Debug, Clone, Default)]
pub struct Context<'a> {
    pub selected: Vec<&'a MemoryEntry>,
}

impl<'a> Context<'a> {
    pub fn empty() -> Self {
        Context { selected: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn step_indices(&self) -> Vec<u32> {
        self.selected.iter().map(|e| e.step_index).collect()
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Append `entry` when `keep` is set; otherwise leave the store untouched.
    pub fn maybe_insert(&mut self, entry: MemoryEntry, keep: bool) -> Result<()> {
        if !keep {
            return Ok(());
        }
        if let Some(last) = self.entries.last() {
            if entry.step_index <= last.step_index {
                return Err(Error::Usage(format!(
                    "step index {} not after last stored step {}",
                    entry.step_index, last.step_index
                )));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Top-`h` entries by relevance to the instruction, chronological.
    pub fn retrieve(&self, instr_feature: &[f64], h: ContextBudget) -> Context<'_> {
        retrieve(self, instr_feature, h)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Relevance of an entry: cosine between its view name-bag and the
/// instruction bag (the two share one hashed vocabulary).
pub fn relevance(entry: &MemoryEntry, instr_feature: &[f64]) -> f64 {
    cosine(entry.feature.name_bag(), instr_feature)
}

/// Score every entry, keep the best `h` (ties to the later step), return
/// them in ascending step order.
pub fn retrieve<'a>(store: &'a MemoryStore, instr_feature: &[f64], h: ContextBudget) -> Context<'a> {
    if h.0 == 0 || store.is_empty() {
        return Context::empty();
    }
    let mut scored: Vec<(f64, &MemoryEntry)> = store
        .entries
        .iter()
        .map(|e| (relevance(e, instr_feature), e))
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.1.step_index.cmp(&a.1.step_index))
    });
    scored.truncate(h.0);
    let mut selected: Vec<&MemoryEntry> = scored.into_iter().map(|(_, e)| e).collect();
    selected.sort_by_key(|e| e.step_index);
    Context { selected }
}

/// Percentage of steps whose observation was kept (complete memory = 100).
pub fn kept_fraction(store: &MemoryStore, total_steps: usize) -> Result<f64> {
    kept_percentage(store.len(), total_steps)
}

pub fn kept_percentage(kept: usize, total_steps: usize) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("kept fraction undefined for zero steps".into()));
    }
    if kept > total_steps {
        return Err(Error::InvalidArgument(format!("{kept} kept out of {total_steps} steps")));
    }
    Ok(100.0 * kept as f64 / total_steps as f64)
}

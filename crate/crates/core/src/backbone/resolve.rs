//! Mapping free-form action text onto the menu.

use crate::error::{Error, Result};
use crate::memworld::action::ActionSpace;

const STOPWORDS: &[&str] = &["the", "a", "an", "of", "to", "on", "up", "in"];
pub const MIN_OVERLAP: f64 = 0.5;

fn content_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Fraction of the query's content tokens present in `name`.
pub fn overlap(query: &str, name: &str) -> f64 {
    let q = content_tokens(query);
    if q.is_empty() {
        return 0.0;
    }
    let n = content_tokens(name);
    q.iter().filter(|t| n.contains(t)).count() as f64 / q.len() as f64
}

/// Exact (case-insensitive) name match first, else the best token overlap
/// of at least [`MIN_OVERLAP`], ties to the lowest id. Any id the caller
/// may have parsed alongside the text plays no part.
pub fn resolve_action(query: &str, space: &ActionSpace) -> Result<usize> {
    let trimmed = query.trim();
    if let Some((id, _)) = space.iter().find(|(_, n)| n.eq_ignore_ascii_case(trimmed)) {
        return Ok(id);
    }
    let mut best: Option<(usize, f64)> = None;
    for (id, name) in space.iter() {
        let s = overlap(trimmed, name);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    match best {
        Some((id, s)) if s >= MIN_OVERLAP => Ok(id),
        _ => Err(Error::UnresolvedAction(query.to_string())),
    }
}

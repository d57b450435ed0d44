//! Instruction parsing into target kinds and receptacles. Works on the text
//! only; the structured goal is never consulted by the agent.

use crate::memworld::catalog::{CONDITION_FLAG, CONDITION_RECEPTACLE, OBJECTS, RECEPTACLES};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Grounding {
    /// Target kind (the "if open" branch for conditional instructions).
    pub object: Option<String>,
    pub receptacle: Option<String>,
    pub all: bool,
    /// Fallback target when the condition receptacle is closed.
    pub otherwise: Option<String>,
    /// Receptacle the target must be adjacent to.
    pub near: Option<String>,
}

impl Grounding {
    pub fn is_conditional(&self) -> bool {
        self.otherwise.is_some()
    }

    pub fn condition_receptacle(&self) -> Option<&'static str> {
        self.is_conditional().then_some(CONDITION_RECEPTACLE)
    }

    pub fn condition_flag(&self) -> Option<&'static str> {
        self.is_conditional().then_some(CONDITION_FLAG)
    }

    /// Target kind given what is known about the condition flag.
    pub fn active_kind(&self, flag: Option<bool>) -> Option<&str> {
        match (&self.otherwise, flag) {
            (None, _) => self.object.as_deref(),
            (Some(_), Some(true)) => self.object.as_deref(),
            (Some(o), Some(false)) => Some(o.as_str()),
            (Some(_), None) => None,
        }
    }

    pub fn mentions(&self, kind: &str) -> bool {
        self.object.as_deref() == Some(kind) || self.otherwise.as_deref() == Some(kind)
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect()
}

fn first_object(tokens: &[String]) -> Option<String> {
    tokens
        .iter()
        .find(|t| OBJECTS.iter().any(|(n, _, _)| n == t))
        .cloned()
}

fn receptacles_in(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| RECEPTACLES.contains(&t.as_str()))
        .cloned()
        .collect()
}

fn find_seq(tokens: &[String], pat: &[&str]) -> Option<usize> {
    tokens
        .windows(pat.len())
        .position(|w| w.iter().zip(pat).all(|(a, b)| a == b))
}

pub fn ground(text: &str) -> Grounding {
    let lower = text.to_ascii_lowercase();
    let tokens = tokenize(text);
    let mut g = Grounding {
        all: find_seq(&tokens, &["all", "of", "the"]).is_some(),
        ..Grounding::default()
    };

    let door = find_seq(&tokens, &[CONDITION_RECEPTACLE, "door", "open"]);
    let otherwise = tokens.iter().position(|t| t == "otherwise");
    if let (Some(d), Some(o)) = (door, otherwise) {
        if d < o {
            g.object = first_object(&tokens[d + 3..o]);
            g.otherwise = first_object(&tokens[o + 1..]);
            g.receptacle = receptacles_in(&tokens[d + 3..]).into_iter().find(|r| r != CONDITION_RECEPTACLE);
            return g;
        }
    }

    if let Some(n) = find_seq(&tokens, &["next", "to", "the"]) {
        g.object = first_object(&tokens[..n]);
        g.near = receptacles_in(&tokens[n + 3..]).into_iter().next();
        g.receptacle = receptacles_in(&tokens[n + 3..]).into_iter().nth(1);
        return g;
    }

    g.receptacle = receptacles_in(&tokens).into_iter().last();
    // Descriptors are checked before names; none of them contains a name.
    g.object = OBJECTS
        .iter()
        .find(|(_, _, d)| lower.contains(d))
        .map(|(n, _, _)| n.to_string())
        .or_else(|| first_object(&tokens));
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memworld::task::generate_task;
    use crate::memworld::types::Subset;

    fn check(text: &str, object: &str, rec: &str) -> Grounding {
        let g = ground(text);
        assert_eq!(g.object.as_deref(), Some(object), "{text}");
        assert_eq!(g.receptacle.as_deref(), Some(rec), "{text}");
        g
    }

    #[test]
    fn templates() {
        check("Move one of the mug items to the indicated sofa.", "mug", "sofa");
        check("Find the crisp red fruit and put it on the shelf.", "apple", "shelf");
        let g = check("Move all of the fork items to the bed.", "fork", "bed");
        assert!(g.all);
        let g = check("Move the pear next to the table to the sink.", "pear", "sink");
        assert_eq!(g.near.as_deref(), Some("table"));
        let g = check(
            "Someone left the window slightly open. When you find the fridge door open, go ahead and move an apple to the counter; otherwise, transport a knife to the counter.",
            "apple",
            "counter",
        );
        assert_eq!(g.otherwise.as_deref(), Some("knife"));
        assert_eq!(g.active_kind(Some(false)), Some("knife"));
        assert_eq!(g.active_kind(None), None);
    }

    #[test]
    fn generated_instructions_ground_to_their_goal() {
        for subset in Subset::ALL {
            for seed in 0..20 {
                let cfg = generate_task(subset, seed).unwrap();
                let goal = &cfg.instruction.goal;
                let g = ground(&cfg.instruction.text);
                assert_eq!(g.object.as_deref(), Some(goal.object.as_str()));
                assert_eq!(g.receptacle.as_deref(), Some(goal.receptacle.as_str()));
                assert_eq!(g.otherwise, goal.condition.as_ref().map(|c| c.otherwise.clone()));
                assert_eq!(g.near, goal.relation.as_ref().map(|r| r.near.clone()));
                assert_eq!(g.all, subset == Subset::Long);
            }
        }
    }
}

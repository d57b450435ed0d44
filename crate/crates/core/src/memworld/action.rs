use std::sync::OnceLock;

use crate::memworld::catalog::{OBJECTS, RECEPTACLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    MoveForward,
    TurnLeft,
    TurnRight,
    /// Index into [`OBJECTS`].
    PickUp(usize),
    /// Index into [`RECEPTACLES`].
    PlaceOn(usize),
    Done,
}

impl Action {
    pub fn name(self) -> String {
        match self {
            Action::MoveForward => "move-forward".into(),
            Action::TurnLeft => "turn-left".into(),
            Action::TurnRight => "turn-right".into(),
            Action::PickUp(k) => format!("pick up the {}", OBJECTS[k].0),
            Action::PlaceOn(r) => format!("place on the {}", RECEPTACLES[r]),
            Action::Done => "done".into(),
        }
    }
}

/// Ordered `(id, name)` menu. Ids are contiguous from zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    names: Vec<String>,
    actions: Vec<Option<Action>>,
}

impl ActionSpace {
    /// The simulator's menu: moves, turns, one pick-up per object type, one
    /// place-on per receptacle type, done.
    pub fn standard() -> &'static ActionSpace {
        static SPACE: OnceLock<ActionSpace> = OnceLock::new();
        SPACE.get_or_init(|| {
            let mut acts = vec![Action::MoveForward, Action::TurnLeft, Action::TurnRight];
            acts.extend((0..OBJECTS.len()).map(Action::PickUp));
            acts.extend((0..RECEPTACLES.len()).map(Action::PlaceOn));
            acts.push(Action::Done);
            ActionSpace {
                names: acts.iter().map(|a| a.name()).collect(),
                actions: acts.into_iter().map(Some).collect(),
            }
        })
    }

    /// A bare name menu with no simulator semantics (used for decoding).
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Option<ActionSpace> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return None;
        }
        let n = names.len();
        Some(ActionSpace {
            names,
            actions: vec![None; n],
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn action(&self, id: usize) -> Option<Action> {
        self.actions.get(id).copied().flatten()
    }

    pub fn id_of(&self, action: Action) -> Option<usize> {
        self.actions.iter().position(|a| *a == Some(action))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.names.iter().enumerate().map(|(i, n)| (i, n.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_space_is_contiguous_and_unique() {
        let s = ActionSpace::standard();
        assert_eq!(s.len(), 3 + OBJECTS.len() + RECEPTACLES.len() + 1);
        let mut names = s.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), s.len());
        for (id, _) in s.iter() {
            let a = s.action(id).unwrap();
            assert_eq!(s.id_of(a), Some(id));
        }
        assert_eq!(s.name(0), Some("move-forward"));
        assert_eq!(s.name(s.len() - 1), Some("done"));
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(ActionSpace::from_names(&["a", "b", "a"]).is_none());
    }
}

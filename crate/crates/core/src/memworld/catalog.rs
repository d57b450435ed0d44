//! Object and receptacle vocabulary.

/// (type name, category, descriptor used by commonsense references)
pub const OBJECTS: &[(&str, &str, &str)] = &[
    ("pear", "fruit", "teardrop-shaped fruit"),
    ("apple", "fruit", "crisp red fruit"),
    ("banana", "fruit", "long yellow fruit"),
    ("plate", "dish", "flat dinner dish"),
    ("bowl", "dish", "deep cereal dish"),
    ("mug", "dish", "handled coffee cup"),
    ("hammer", "tool", "nail-driving tool"),
    ("wrench", "tool", "bolt-turning tool"),
    ("screwdriver", "tool", "screw-turning tool"),
    ("spoon", "utensil", "soup-eating utensil"),
    ("knife", "utensil", "bread-cutting utensil"),
    ("fork", "utensil", "pronged eating utensil"),
];

pub const RECEPTACLES: &[&str] = &["sofa", "table", "counter", "sink", "fridge", "bed", "shelf"];

/// Receptacle whose door state drives conditional instructions.
pub const CONDITION_RECEPTACLE: &str = "fridge";
pub const CONDITION_FLAG: &str = "fridge_open";

pub fn object_index(name: &str) -> Option<usize> {
    OBJECTS.iter().position(|(n, _, _)| *n == name)
}

pub fn receptacle_index(name: &str) -> Option<usize> {
    RECEPTACLES.iter().position(|n| *n == name)
}

pub fn category_of(name: &str) -> Option<&'static str> {
    OBJECTS.iter().find(|(n, _, _)| *n == name).map(|(_, c, _)| *c)
}

pub fn descriptor_of(name: &str) -> Option<&'static str> {
    OBJECTS.iter().find(|(n, _, _)| *n == name).map(|(_, _, d)| *d)
}

pub fn kind_for_descriptor(desc: &str) -> Option<&'static str> {
    OBJECTS.iter().find(|(_, _, d)| *d == desc).map(|(n, _, _)| *n)
}

pub fn same_category(name: &str) -> Vec<&'static str> {
    match category_of(name) {
        Some(cat) => OBJECTS
            .iter()
            .filter(|(n, c, _)| *c == cat && *n != name)
            .map(|(n, _, _)| *n)
            .collect(),
        None => Vec::new(),
    }
}

pub fn article(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

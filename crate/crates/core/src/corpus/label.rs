use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A canonical, human-readable relation name such as `person city of birth`.
///
/// Canonical form: lowercase, `_`, `:` and `/` mapped to spaces, whitespace
/// collapsed. TACRED-style abbreviations are expanded (`per` and `org`
/// prefixes, `stateorprovince(s)`), so `per:stateorprovince_of_birth` and
/// `person state or province of birth` are the same label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationLabel(String);

impl RelationLabel {
    pub fn new(raw: &str) -> Self {
        RelationLabel(canonicalize(raw))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn canonicalize(raw: &str) -> String {
    let lowered = raw.to_lowercase().replace(['_', ':', '/'], " ");
    let mut words: Vec<&str> = Vec::new();
    for (i, token) in lowered.split_whitespace().enumerate() {
        match token {
            "per" if i == 0 => words.push("person"),
            "org" if i == 0 => words.push("organization"),
            "stateorprovince" => words.extend(["state", "or", "province"]),
            "stateorprovinces" => words.extend(["state", "or", "provinces"]),
            other => words.push(other),
        }
    }
    words.join(" ")
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RelationLabel {
    fn from(raw: &str) -> Self {
        RelationLabel::new(raw)
    }
}

impl Serialize for RelationLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for RelationLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Ok(RelationLabel::new(&raw))
    }
}

//! Instruction rendering and response parsing.
//!
//! A simple instruction is the task description followed by the prediction
//! block. A contrastive instruction inserts a positive-demonstration block and
//! a negative-demonstration block between the two, in that order; an empty
//! demonstration list drops its block. Blocks are joined with `\n`.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{canonicalize, RelationLabel, Sample};
use crate::error::{Error, Result};
use crate::splitter::HardCaseRecord;

pub const TASK_DESCRIPTION: &str = "Now you need to complete the relation extraction task, which is to give you a sentence, two entities in the sentence, and some predefined relations lists. You need to tell me what relation exists between these two entities.";

const PREDICTION_PREFIX: &str = "Now given the sentence: “";
const PREDICTION_ENTITIES: &str = "”, what is the relation between “";
const PREDICTION_AND: &str = "” and “";
const PREDICTION_LIST: &str = "”? Please select from these relations: [";
const PREDICTION_SUFFIX: &str = "], and strictly return the answer in the following JSON format:{“relation”:xxx}.";

const POSITIVE_OPEN: &str = "Here are some examples with similar relations that may be helpful to you: [";
const NEGATIVE_OPEN: &str = "Before this, you have made these mistakes: [";
const NEGATIVE_CLOSE: &str = "], please try to avoid repeating these mistakes.";

const BLOCK_SEPARATOR: &str = "\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionKind {
    Simple,
    Contrastive,
}

impl InstructionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InstructionKind::Simple => "simple",
            InstructionKind::Contrastive => "contrastive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "simple" => Some(InstructionKind::Simple),
            "contrastive" => Some(InstructionKind::Contrastive),
            _ => None,
        }
    }
}

/// A rendered prompt plus the bookkeeping needed to train on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub kind: InstructionKind,
    pub text: String,
    pub target: RelationLabel,
    pub sample_id: String,
    pub relation_list: Vec<RelationLabel>,
}

/// Positive demonstrations: easy-memory samples of the most similar earlier
/// relation, with the analyst's description of how it differs from the
/// current relation (omitted when `difference` is `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveDemos<'a> {
    pub similar_relation: &'a RelationLabel,
    pub samples: &'a [Sample],
    pub difference: Option<&'a str>,
}

/// Negative demonstrations: earlier hard cases. With `with_analysis` false the
/// error reason and answer analysis are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeDemos<'a> {
    pub records: &'a [HardCaseRecord],
    pub with_analysis: bool,
}

fn join_relations(relations: &[RelationLabel]) -> String {
    relations
        .iter()
        .map(RelationLabel::as_str)
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn prediction_block(sample: &Sample, relations: &[RelationLabel]) -> String {
    format!(
        "{PREDICTION_PREFIX}{}{PREDICTION_ENTITIES}{}{PREDICTION_AND}{}{PREDICTION_LIST}{}{PREDICTION_SUFFIX}",
        sample.sentence,
        sample.head.text,
        sample.tail.text,
        join_relations(relations)
    )
}

pub fn positive_block(demos: &PositiveDemos<'_>, relation: &RelationLabel) -> String {
    let examples: Vec<String> = demos
        .samples
        .iter()
        .map(|s| {
            format!(
                "sentence: “{}”, the correct relation between “{}” and “{}” is “{}”.",
                s.sentence, s.head.text, s.tail.text, demos.similar_relation
            )
        })
        .collect();
    let mut block = format!("{POSITIVE_OPEN}{}].", examples.join(" "));
    if let Some(difference) = demos.difference {
        block.push_str(&format!(
            " Please note that the relation “{}” and the relation “{}” are very similar, and their difference lies in “{}”. Please pay attention to discrimination.",
            demos.similar_relation, relation, difference
        ));
    }
    block
}

pub fn negative_block(demos: &NegativeDemos<'_>) -> String {
    let examples: Vec<String> = demos
        .records
        .iter()
        .map(|r| {
            let mut text = format!(
                "sentence: “{}”, the correct relation between “{}” and “{}” is “{}”, but your prediction is “{}”.",
                r.sample.sentence, r.sample.head.text, r.sample.tail.text, r.sample.relation, r.wrong_prediction
            );
            if demos.with_analysis {
                text.push_str(&format!(
                    " This is the reason for the error: “{}”. The reason for the correct answer is: “{}”.",
                    r.error_reason, r.answer_analysis
                ));
            }
            text
        })
        .collect();
    format!("{NEGATIVE_OPEN}{}{NEGATIVE_CLOSE}", examples.join(" "))
}

fn check_target(sample: &Sample, relations: &[RelationLabel]) -> Result<()> {
    if relations.is_empty() {
        return Err(Error::Instruction("relation list is empty".into()));
    }
    if !relations.contains(&sample.relation) {
        return Err(Error::Instruction(format!(
            "relation '{}' of sample '{}' is not in the relation list",
            sample.relation, sample.id
        )));
    }
    Ok(())
}

pub fn build_simple(sample: &Sample, relations: &[RelationLabel]) -> Result<InstructionRecord> {
    check_target(sample, relations)?;
    let text = [TASK_DESCRIPTION.to_string(), prediction_block(sample, relations)].join(BLOCK_SEPARATOR);
    Ok(InstructionRecord {
        kind: InstructionKind::Simple,
        text,
        target: sample.relation.clone(),
        sample_id: sample.id.clone(),
        relation_list: relations.to_vec(),
    })
}

pub fn build_contrastive(
    record: &HardCaseRecord,
    positives: Option<&PositiveDemos<'_>>,
    negatives: Option<&NegativeDemos<'_>>,
    relations: &[RelationLabel],
) -> Result<InstructionRecord> {
    let sample = &record.sample;
    check_target(sample, relations)?;
    let positives = positives.filter(|p| !p.samples.is_empty());
    let negatives = negatives.filter(|n| !n.records.is_empty());
    if positives.is_none() && negatives.is_none() {
        return Err(Error::Instruction(format!(
            "no demonstrations for '{}'; use build_simple",
            sample.id
        )));
    }
    let mut blocks = vec![TASK_DESCRIPTION.to_string()];
    if let Some(p) = positives {
        blocks.push(positive_block(p, &sample.relation));
    }
    if let Some(n) = negatives {
        blocks.push(negative_block(n));
    }
    blocks.push(prediction_block(sample, relations));
    Ok(InstructionRecord {
        kind: InstructionKind::Contrastive,
        text: blocks.join(BLOCK_SEPARATOR),
        target: sample.relation.clone(),
        sample_id: sample.id.clone(),
        relation_list: relations.to_vec(),
    })
}

/// The question part of a rendered instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub sentence: String,
    pub head: String,
    pub tail: String,
    pub candidates: Vec<RelationLabel>,
}

/// Recover the query sentence, entities and candidate list from the last
/// prediction block of an instruction.
pub fn parse_query(text: &str) -> Option<Query> {
    let start = text.rfind(PREDICTION_PREFIX)? + PREDICTION_PREFIX.len();
    let rest = &text[start..];
    let (sentence, rest) = rest.split_once(PREDICTION_ENTITIES)?;
    let (head, rest) = rest.split_once(PREDICTION_AND)?;
    let (tail, rest) = rest.split_once(PREDICTION_LIST)?;
    let (list, _) = rest.split_once(PREDICTION_SUFFIX)?;
    let candidates = list
        .split(", ")
        .filter(|s| !s.is_empty())
        .map(RelationLabel::new)
        .collect();
    Some(Query {
        sentence: sentence.to_string(),
        head: head.to_string(),
        tail: tail.to_string(),
        candidates,
    })
}

/// A parsed model answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prediction {
    Relation(RelationLabel),
    Unparseable,
}

impl Prediction {
    pub fn relation(&self) -> Option<&RelationLabel> {
        match self {
            Prediction::Relation(r) => Some(r),
            Prediction::Unparseable => None,
        }
    }

    pub fn is(&self, relation: &RelationLabel) -> bool {
        self.relation() == Some(relation)
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Relation(r) => write!(f, "{r}"),
            Prediction::Unparseable => f.write_str("unparseable"),
        }
    }
}

impl Serialize for Prediction {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Prediction::Relation(r) => serializer.serialize_some(r.as_str()),
            Prediction::Unparseable => serializer.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Ok(match Option::<String>::deserialize(deserializer)? {
            Some(r) => Prediction::Relation(RelationLabel::new(&r)),
            None => Prediction::Unparseable,
        })
    }
}

fn straighten_quotes(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '“' | '”' | '„' | '″' => '"',
            '‘' | '’' | '′' => '\'',
            other => other,
        })
        .collect()
}

fn strict_field(text: &str, key: &str) -> Option<String> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(obj))) = stream.next() {
            match obj.get(key) {
                Some(Value::String(s)) => return Some(s.clone()),
                Some(Value::Null) | None => {}
                Some(other) => return Some(other.to_string()),
            }
        }
    }
    None
}

/// Pull the value of `key` out of the first object that carries it. Tries
/// strict JSON (as given, then with curly quotes straightened), then a
/// lenient scan that tolerates bare values.
pub(crate) fn extract_field(text: &str, key: &str) -> Option<String> {
    strict_json_field(text, key).or_else(|| lenient_fields(text, &[key]).and_then(|mut v| v.pop()))
}

/// Strict JSON only, as given or with curly quotes straightened.
pub(crate) fn strict_json_field(text: &str, key: &str) -> Option<String> {
    strict_field(text, key).or_else(|| strict_field(&straighten_quotes(text), key))
}

const OPEN_QUOTES: [char; 2] = ['"', '“'];
const CLOSE_QUOTES: [char; 2] = ['"', '”'];

/// Lenient extraction of several keys from one brace-delimited object, where
/// values may be bare text running up to the next key or the closing brace.
/// Keys may be written with straight, curly or no quotes.
pub(crate) fn lenient_fields(text: &str, keys: &[&str]) -> Option<Vec<String>> {
    let open = text.find('{')?;
    let body = &text[open + 1..];
    let body = &body[..body.rfind('}').unwrap_or(body.len())];
    let mut located: Vec<(usize, usize, usize)> = Vec::new();
    for (k, key) in keys.iter().enumerate() {
        let (pos, len) = [format!("\"{key}\""), format!("“{key}”"), key.to_string()]
            .iter()
            .find_map(|variant| body.find(variant.as_str()).map(|p| (p, variant.len())))?;
        let after = &body[pos + len..];
        let colon = after.find(':')?;
        if !after[..colon].trim().is_empty() {
            return None;
        }
        located.push((pos, pos + len + colon + 1, k));
    }
    located.sort();
    let mut values = vec![String::new(); keys.len()];
    for (i, &(_, value_start, k)) in located.iter().enumerate() {
        let value_end = located.get(i + 1).map_or(body.len(), |next| next.0);
        let raw = body[value_start..value_end].trim();
        let raw = raw.strip_suffix(',').unwrap_or(raw).trim();
        let raw = match raw.strip_prefix(OPEN_QUOTES) {
            Some(inner) => inner.strip_suffix(CLOSE_QUOTES).unwrap_or(inner),
            None => raw,
        };
        values[k] = raw.trim().to_string();
    }
    Some(values)
}

fn word_normalize(text: &str) -> String {
    let spaced: String = canonicalize(text)
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parse a model answer against the candidate list.
///
/// Exact canonical match on the `relation` field wins; otherwise the unique
/// candidate mentioned in the answer (nested mentions collapse to the longest),
/// otherwise the unique candidate containing the answer.
pub fn parse_prediction(response: &str, candidates: &[RelationLabel]) -> Prediction {
    let field = extract_field(response, "relation");
    if let Some(value) = &field {
        let canonical = RelationLabel::new(value);
        if let Some(hit) = candidates.iter().find(|c| **c == canonical) {
            return Prediction::Relation(hit.clone());
        }
    }
    let haystack = word_normalize(field.as_deref().unwrap_or(response));
    if haystack.is_empty() {
        return Prediction::Unparseable;
    }
    let padded = format!(" {haystack} ");
    let names: Vec<(String, &RelationLabel)> = candidates
        .iter()
        .map(|c| (word_normalize(c.as_str()), c))
        .filter(|(n, _)| !n.is_empty())
        .collect();

    let mentioned: Vec<&(String, &RelationLabel)> = names
        .iter()
        .filter(|(n, _)| padded.contains(&format!(" {n} ")))
        .collect();
    let outermost: Vec<&&(String, &RelationLabel)> = mentioned
        .iter()
        .filter(|(n, _)| {
            !mentioned
                .iter()
                .any(|(other, _)| other.len() > n.len() && format!(" {other} ").contains(&format!(" {n} ")))
        })
        .collect();
    if let [(_, only)] = outermost.as_slice() {
        return Prediction::Relation((*only).clone());
    }
    if outermost.is_empty() {
        let containing: Vec<&&RelationLabel> = names
            .iter()
            .filter(|(n, _)| format!(" {n} ").contains(&padded))
            .map(|(_, c)| c)
            .collect();
        if let [only] = containing.as_slice() {
            return Prediction::Relation((**only).clone());
        }
    }
    Prediction::Unparseable
}

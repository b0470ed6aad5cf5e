//! Backends with fixed answering rules, for tests and oracles.

use std::collections::HashMap;

use super::{answer_json, ModelBackend, TrainBatchItem, TrainParams, TrainSummary};
use crate::corpus::{RelationLabel, Sample};
use crate::error::{Error, Result};
use crate::instructions::parse_query;

#[derive(Debug, Clone)]
enum Rule {
    /// Answer the gold relation of the matching sample.
    Oracle(HashMap<(String, String, String), RelationLabel>),
    FirstCandidate,
    Relation(RelationLabel),
    Raw(String),
}

/// A backend whose answers follow a fixed rule and ignore training.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    rule: Rule,
    pub infer_calls: usize,
    pub train_calls: Vec<usize>,
}

impl ScriptedBackend {
    fn with(rule: Rule) -> Self {
        ScriptedBackend {
            rule,
            infer_calls: 0,
            train_calls: Vec::new(),
        }
    }

    /// Always right on the given samples; unknown questions get an
    /// unparseable reply.
    pub fn oracle(samples: &[Sample]) -> Self {
        let gold = samples
            .iter()
            .map(|s| {
                (
                    (s.sentence.clone(), s.head.text.clone(), s.tail.text.clone()),
                    s.relation.clone(),
                )
            })
            .collect();
        Self::with(Rule::Oracle(gold))
    }

    pub fn first_candidate() -> Self {
        Self::with(Rule::FirstCandidate)
    }

    /// Always answers `relation`, whether or not it is a candidate.
    pub fn fixed_relation(relation: RelationLabel) -> Self {
        Self::with(Rule::Relation(relation))
    }

    /// Always replies with `text` verbatim.
    pub fn fixed(text: &str) -> Self {
        Self::with(Rule::Raw(text.to_string()))
    }
}

impl ModelBackend for ScriptedBackend {
    fn identity(&self) -> String {
        match &self.rule {
            Rule::Oracle(_) => "scripted-oracle".into(),
            Rule::FirstCandidate => "scripted-first".into(),
            Rule::Relation(r) => format!("scripted-fixed-{r}"),
            Rule::Raw(_) => "scripted-raw".into(),
        }
    }

    fn infer(&mut self, instruction_text: &str) -> Result<String> {
        self.infer_calls += 1;
        let query = parse_query(instruction_text);
        Ok(match (&self.rule, query) {
            (Rule::Raw(text), _) => text.clone(),
            (Rule::Relation(r), _) => answer_json(r),
            (Rule::FirstCandidate, Some(q)) if !q.candidates.is_empty() => answer_json(&q.candidates[0]),
            (Rule::Oracle(gold), Some(q)) => match gold.get(&(q.sentence, q.head, q.tail)) {
                Some(r) => answer_json(r),
                None => "unknown".into(),
            },
            _ => "unknown".into(),
        })
    }

    fn train(&mut self, batch: &[TrainBatchItem], params: &TrainParams) -> Result<TrainSummary> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        self.train_calls.push(batch.len());
        Ok(TrainSummary {
            items_seen: batch.len() as u64 * u64::from(params.epochs),
            loss: 0.0,
        })
    }

    fn checkpoint(&mut self) -> Result<String> {
        Ok("scripted".into())
    }

    fn restore(&mut self, _checkpoint_id: &str) -> Result<()> {
        Ok(())
    }
}

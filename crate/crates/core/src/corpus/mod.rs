//! Dataset loading, per-relation caps and task-sequence construction.

mod label;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};

pub use label::{canonicalize, RelationLabel};

/// An entity mention. Offsets, when present, are character offsets into the
/// sentence with an exclusive end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
}

impl EntitySpan {
    pub fn new(text: impl Into<String>) -> Self {
        EntitySpan {
            text: text.into(),
            start: None,
            end: None,
        }
    }
}

/// One labeled relation-extraction instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub sentence: String,
    pub head: EntitySpan,
    pub tail: EntitySpan,
    pub relation: RelationLabel,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        sentence: impl Into<String>,
        head: impl Into<String>,
        tail: impl Into<String>,
        relation: impl AsRef<str>,
    ) -> Self {
        Sample {
            id: id.into(),
            sentence: sentence.into(),
            head: EntitySpan::new(head),
            tail: EntitySpan::new(tail),
            relation: RelationLabel::new(relation.as_ref()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidSample {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.relation.is_empty() {
            return Err(invalid("empty relation".into()));
        }
        if self.sentence.trim().is_empty() {
            return Err(invalid("empty sentence".into()));
        }
        for (role, span) in [("head", &self.head), ("tail", &self.tail)] {
            if span.text.is_empty() {
                return Err(invalid(format!("empty {role} entity")));
            }
            match (span.start, span.end) {
                (Some(start), Some(end)) => {
                    let slice: String = self
                        .sentence
                        .chars()
                        .skip(start)
                        .take(end.saturating_sub(start))
                        .collect();
                    if end <= start || slice != span.text {
                        return Err(invalid(format!(
                            "{role} offsets {start}..{end} select '{slice}', expected '{}'",
                            span.text
                        )));
                    }
                }
                (None, None) => {}
                _ => return Err(invalid(format!("{role} has only one of start/end"))),
            }
        }
        Ok(())
    }
}

/// Input flavour. Both share the line-record schema; TACRED-like input
/// additionally drops `no_relation` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    TacredLike,
    FewrelLike,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tacred-like" | "tacred" => Ok(DatasetFormat::TacredLike),
            "fewrel-like" | "fewrel" => Ok(DatasetFormat::FewrelLike),
            other => Err(Error::InvalidArgument(format!("unknown dataset format '{other}'"))),
        }
    }
}

const NO_RELATION: &str = "no relation";

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, format)
}

/// Parse newline-delimited records. Blank lines are skipped; any bad record
/// rejects the whole input.
pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    let mut index = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_record(line, index, lineno + 1)?;
        index += 1;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::DuplicateId(sample.id));
        }
        if format == DatasetFormat::TacredLike && sample.relation.as_str() == NO_RELATION {
            continue;
        }
        samples.push(sample);
    }
    Ok(samples)
}

fn parse_record(line: &str, index: usize, lineno: usize) -> Result<Sample> {
    let fail = |message: String| Error::Parse {
        index,
        line: lineno,
        message,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| fail("record is not an object".into()))?;

    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(fail("missing field 'id'".into())),
    };
    let sentence = match (obj.get("sentence"), obj.get("tokens")) {
        (Some(Value::String(s)), _) => s.clone(),
        (_, Some(Value::Array(tokens))) => {
            let words: Option<Vec<&str>> = tokens.iter().map(Value::as_str).collect();
            words
                .ok_or_else(|| fail("'tokens' must be a list of strings".into()))?
                .join(" ")
        }
        _ => return Err(fail("missing field 'sentence' (or 'tokens')".into())),
    };
    let entity = |role: &str| -> Result<EntitySpan> {
        let raw = obj
            .get(role)
            .ok_or_else(|| fail(format!("missing field '{role}'")))?;
        serde_json::from_value::<EntitySpan>(raw.clone())
            .map_err(|e| fail(format!("field '{role}': {e}")))
    };
    let head = entity("head")?;
    let tail = entity("tail")?;
    let relation = obj
        .get("relation")
        .and_then(Value::as_str)
        .ok_or_else(|| fail("missing field 'relation'".into()))?;

    let sample = Sample {
        id,
        sentence,
        head,
        tail,
        relation: RelationLabel::new(relation),
    };
    sample.validate().map_err(|e| fail(e.to_string()))?;
    Ok(sample)
}

/// Serialize samples in the normalized record schema, one per line.
pub fn write_dataset(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for sample in samples {
        let line = serde_json::to_string(sample)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn relation_set(samples: &[Sample]) -> BTreeSet<RelationLabel> {
    samples.iter().map(|s| s.relation.clone()).collect()
}

/// Train/test pools after per-relation capping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CappedSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Cap each relation at `train_cap` training and `test_cap` test samples.
///
/// Samples of a relation are ordered by a key derived from
/// `(seed, relation, id)`; the test split is the prefix, the train split
/// follows. A relation smaller than `train_cap + test_cap` is split in
/// proportion to the caps (at least one test sample when it has two or more).
/// Because the order is keyed per sample, re-capping the output is a no-op.
pub fn cap_per_relation(
    samples: &[Sample],
    train_cap: usize,
    test_cap: usize,
    seed: u64,
) -> Result<CappedSplit> {
    if train_cap == 0 || test_cap == 0 {
        return Err(Error::InvalidArgument("caps must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to cap".into()));
    }
    let mut groups: BTreeMap<&RelationLabel, Vec<(u64, &Sample)>> = BTreeMap::new();
    for sample in samples {
        let key = derive_seed(
            seed,
            &["cap".into(), sample.relation.as_str().into(), sample.id.as_str().into()],
        );
        groups.entry(&sample.relation).or_default().push((key, sample));
    }

    let mut split = CappedSplit {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (_, mut members) in groups {
        members.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
        let n = members.len();
        let test_n = if n >= train_cap + test_cap {
            test_cap
        } else {
            let proportional = n * test_cap / (train_cap + test_cap);
            let floor = usize::from(n >= 2);
            proportional.max(floor).min(test_cap)
        };
        let train_n = train_cap.min(n - test_n);
        split
            .test
            .extend(members[..test_n].iter().map(|(_, s)| (*s).clone()));
        split
            .train
            .extend(members[test_n..test_n + train_n].iter().map(|(_, s)| (*s).clone()));
    }
    Ok(split)
}

/// A random partition of relations into ordered tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPartition {
    pub sequence_index: usize,
    pub seed: u64,
    pub tasks: Vec<Vec<RelationLabel>>,
}

/// Build `num_sequences` random partitions of `relations` into `num_tasks`
/// tasks. When the count does not divide evenly the earliest tasks get one
/// extra relation.
pub fn build_task_sequences(
    relations: &BTreeSet<RelationLabel>,
    num_tasks: usize,
    num_sequences: usize,
    seed: u64,
) -> Result<Vec<TaskPartition>> {
    if num_tasks == 0 || num_sequences == 0 {
        return Err(Error::InvalidArgument(
            "num_tasks and num_sequences must be positive".into(),
        ));
    }
    if num_tasks > relations.len() {
        return Err(Error::InvalidArgument(format!(
            "{num_tasks} tasks requested but only {} relations",
            relations.len()
        )));
    }
    let base = relations.len() / num_tasks;
    let extra = relations.len() % num_tasks;

    Ok((0..num_sequences)
        .map(|sequence_index| {
            let sequence_seed = derive_seed(seed, &["sequence".into(), sequence_index.into()]);
            let mut order: Vec<RelationLabel> = relations.iter().cloned().collect();
            order.shuffle(&mut rng_for(sequence_seed, &["partition".into()]));
            let mut rest = order.as_slice();
            let tasks = (0..num_tasks)
                .map(|t| {
                    let size = base + usize::from(t < extra);
                    let (head, tail) = rest.split_at(size);
                    rest = tail;
                    let mut task = head.to_vec();
                    task.sort();
                    task
                })
                .collect();
            TaskPartition {
                sequence_index,
                seed: sequence_seed,
                tasks,
            }
        })
        .collect())
}

/// One task of a sequence: its relations and their train/test samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// 1-based.
    pub index: usize,
    pub relations: Vec<RelationLabel>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub sequence_index: usize,
    pub seed: u64,
    pub tasks: Vec<TaskSpec>,
}

impl TaskSequence {
    /// Distribute capped samples over the tasks of a partition.
    pub fn populate(partition: &TaskPartition, split: &CappedSplit) -> Result<Self> {
        let mut task_of: BTreeMap<&RelationLabel, usize> = BTreeMap::new();
        for (t, rels) in partition.tasks.iter().enumerate() {
            for r in rels {
                if task_of.insert(r, t).is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "relation '{r}' appears in more than one task"
                    )));
                }
            }
        }
        let mut tasks: Vec<TaskSpec> = partition
            .tasks
            .iter()
            .enumerate()
            .map(|(t, rels)| TaskSpec {
                index: t + 1,
                relations: rels.clone(),
                train: Vec::new(),
                test: Vec::new(),
            })
            .collect();
        for (pool, is_train) in [(&split.train, true), (&split.test, false)] {
            for sample in pool {
                let t = *task_of.get(&sample.relation).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "sample '{}' has relation '{}' outside the partition",
                        sample.id, sample.relation
                    ))
                })?;
                if is_train {
                    tasks[t].train.push(sample.clone());
                } else {
                    tasks[t].test.push(sample.clone());
                }
            }
        }
        Ok(TaskSequence {
            sequence_index: partition.sequence_index,
            seed: partition.seed,
            tasks,
        })
    }

    pub fn manifest(&self) -> SequenceManifest {
        SequenceManifest {
            sequence_index: self.sequence_index,
            seed: self.seed,
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskManifest {
                    index: t.index,
                    relations: t.relations.clone(),
                    train_ids: t.train.iter().map(|s| s.id.clone()).collect(),
                    test_ids: t.test.iter().map(|s| s.id.clone()).collect(),
                })
                .collect(),
        }
    }

    /// Rebuild a sequence exactly from a manifest and the sample pool it was
    /// drawn from.
    pub fn from_manifest(manifest: &SequenceManifest, samples: &[Sample]) -> Result<Self> {
        let by_id: BTreeMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
        let fetch = |ids: &[String]| -> Result<Vec<Sample>> {
            ids.iter()
                .map(|id| {
                    by_id.get(id.as_str()).map(|s| (*s).clone()).ok_or_else(|| {
                        Error::InvalidArgument(format!("manifest references unknown sample '{id}'"))
                    })
                })
                .collect()
        };
        let tasks = manifest
            .tasks
            .iter()
            .map(|t| {
                Ok(TaskSpec {
                    index: t.index,
                    relations: t.relations.clone(),
                    train: fetch(&t.train_ids)?,
                    test: fetch(&t.test_ids)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskSequence {
            sequence_index: manifest.sequence_index,
            seed: manifest.seed,
            tasks,
        })
    }
}

/// Exact-replay record of a task sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub sequence_index: usize,
    pub seed: u64,
    pub tasks: Vec<TaskManifest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub index: usize,
    pub relations: Vec<RelationLabel>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

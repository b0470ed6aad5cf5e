//! Relation prototypes and cosine top-k demonstration retrieval.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{RelationLabel, Sample};
use crate::embed::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::splitter::HardCaseRecord;

pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_slices(a.values(), b.values())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPrototype {
    pub relation: RelationLabel,
    pub vector: Embedding,
    pub support_count: usize,
}

/// Mean sentence embedding of `samples`, which must all carry `relation`.
pub fn relation_prototype(
    relation: &RelationLabel,
    samples: &[Sample],
    embedder: &dyn Embedder,
) -> Result<RelationPrototype> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("no samples for prototype of '{relation}'")));
    }
    if let Some(s) = samples.iter().find(|s| &s.relation != relation) {
        return Err(Error::InvalidArgument(format!(
            "sample {} has relation '{}', not '{relation}'",
            s.id, s.relation
        )));
    }
    let texts: Vec<&str> = samples.iter().map(|s| s.sentence.as_str()).collect();
    let vectors = embedder.embed_many(&texts)?;
    Ok(RelationPrototype {
        relation: relation.clone(),
        vector: mean_vector(&vectors)?,
        support_count: samples.len(),
    })
}

pub fn mean_vector(vectors: &[Embedding]) -> Result<Embedding> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of no vectors".into()))?;
    let mut sum = vec![0.0; first.dim()];
    for v in vectors {
        if v.dim() != sum.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                actual: v.dim(),
            });
        }
        sum.iter_mut().zip(v.values()).for_each(|(s, x)| *s += x);
    }
    let n = vectors.len() as f64;
    Ok(Embedding(sum.into_iter().map(|s| s / n).collect()))
}

/// The previously learned relation whose prototype is closest to `relation`'s.
/// Ties go to the smaller relation name.
pub fn most_similar_relation(
    relation: &RelationLabel,
    previous: &[RelationLabel],
    prototypes: &BTreeMap<RelationLabel, RelationPrototype>,
) -> Result<RelationLabel> {
    if previous.contains(relation) {
        return Err(Error::InvalidArgument(format!(
            "'{relation}' is among the previous relations"
        )));
    }
    let lookup = |r: &RelationLabel| {
        prototypes
            .get(r)
            .ok_or_else(|| Error::InvalidArgument(format!("no prototype for '{r}'")))
    };
    let target = lookup(relation)?;
    let mut best: Option<(f64, &RelationLabel)> = None;
    for candidate in previous {
        let score = cosine(&target.vector, &lookup(candidate)?.vector)?;
        let better = match best {
            None => true,
            Some((b, name)) => score > b || (score == b && candidate < name),
        };
        if better {
            best = Some((score, candidate));
        }
    }
    best.map(|(_, r)| r.clone())
        .ok_or_else(|| Error::InvalidArgument(format!("no previous relations to compare '{relation}' with")))
}

/// Indices of the `k` best scores, descending, ties by `ids` ascending.
pub fn rank_top_k(scores: &[f64], ids: &[&str], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a].cmp(ids[b]))
    });
    order.truncate(k);
    order
}

fn require_k(k: usize, what: &str) -> Result<()> {
    if k == 0 {
        Err(Error::InvalidArgument(format!("{what} must be at least 1")))
    } else {
        Ok(())
    }
}

fn top_k_by_text<'a, T>(
    query: &str,
    pool: &'a [T],
    text: impl Fn(&T) -> &str,
    id: impl Fn(&T) -> &str,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<&'a T>> {
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    let q = embedder.embed(query)?;
    let texts: Vec<&str> = pool.iter().map(&text).collect();
    let scores = embedder
        .embed_many(&texts)?
        .iter()
        .map(|v| cosine(&q, v))
        .collect::<Result<Vec<f64>>>()?;
    let ids: Vec<&str> = pool.iter().map(&id).collect();
    Ok(rank_top_k(&scores, &ids, k).into_iter().map(|i| &pool[i]).collect())
}

/// Positive demonstrations: the `k_p` samples of the similar relation's easy
/// memory closest to the hard sample's sentence.
pub fn retrieve_positive(
    hard: &Sample,
    easy_memory_of_rs: &[Sample],
    k_p: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<Sample>> {
    require_k(k_p, "k_p")?;
    let top = top_k_by_text(
        &hard.sentence,
        easy_memory_of_rs,
        |s| s.sentence.as_str(),
        |s| s.id.as_str(),
        k_p,
        embedder,
    )?;
    Ok(top.into_iter().cloned().collect())
}

/// Negative demonstrations: the `k_n` earlier hard cases whose error reasons
/// read most like this one's.
pub fn retrieve_negative(
    record: &HardCaseRecord,
    hard_memory_union: &[HardCaseRecord],
    k_n: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<HardCaseRecord>> {
    require_k(k_n, "k_n")?;
    if record.error_reason.trim().is_empty() {
        return Err(Error::InvalidArgument(format!(
            "hard case {} has no error reason",
            record.sample.id
        )));
    }
    let top = top_k_by_text(
        &record.error_reason,
        hard_memory_union,
        |r| r.error_reason.as_str(),
        |r| r.sample.id.as_str(),
        k_n,
        embedder,
    )?;
    Ok(top.into_iter().cloned().collect())
}

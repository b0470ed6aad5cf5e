//! Two-part per-relation memory and k-means exemplar selection.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{RelationLabel, Sample};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::splitter::HardCaseRecord;

const MAX_ITERATIONS: usize = 100;
const SHIFT_TOLERANCE: f64 = 1e-6;

/// Something that can be stored in memory: it has an id and a text to embed.
pub trait MemoryItem: Clone {
    fn item_id(&self) -> &str;
    fn item_text(&self) -> &str;
}

impl MemoryItem for Sample {
    fn item_id(&self) -> &str {
        &self.id
    }

    fn item_text(&self) -> &str {
        &self.sentence
    }
}

impl MemoryItem for HardCaseRecord {
    fn item_id(&self) -> &str {
        &self.sample.id
    }

    fn item_text(&self) -> &str {
        &self.sample.sentence
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Result of a k-means run: final centroids (the means of their clusters)
/// and each point's cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, &["kmeans-init".into()]);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total <= 0.0 {
            // Every point coincides with a centroid already.
            centroids.len() % points.len()
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.push(points[next].clone());
    }
    centroids
}

fn recompute(points: &[Vec<f64>], assignment: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        sums[c].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
    // Reseed empty clusters at the point farthest from its own centroid.
    for c in 0..k {
        if counts[c] == 0 {
            let far = (0..points.len())
                .map(|i| (sq_dist(&points[i], &centroids[assignment[i]]), i))
                .fold((f64::NEG_INFINITY, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
                .1;
            centroids[c] = points[far].clone();
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding on squared Euclidean distance.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} clusters for {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: p.len(),
        });
    }
    let mut centroids = plus_plus_init(points, k, seed);
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest_centroid(p, &centroids)).collect();
    for _ in 0..MAX_ITERATIONS {
        let before = centroids.clone();
        recompute(points, &assignment, &mut centroids);
        assignment = points.iter().map(|p| nearest_centroid(p, &centroids)).collect();
        let shift = before
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    // Report centroids as the exact means of the final assignment.
    recompute(points, &assignment, &mut centroids);
    Ok(Clustering { centroids, assignment })
}

/// Indices of the selected points: per cluster, the member nearest its
/// centroid (ties by smallest id). A cluster whose pick is taken falls back
/// to the nearest unchosen point overall.
pub fn select_indices(points: &[Vec<f64>], ids: &[&str], m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::InvalidArgument("memory size must be at least 1".into()));
    }
    if points.len() <= m {
        return Ok((0..points.len()).collect());
    }
    let clustering = kmeans(points, m, seed)?;
    let mut chosen = BTreeSet::new();
    for (c, centroid) in clustering.centroids.iter().enumerate() {
        let mut ranked: Vec<(bool, f64, usize)> = (0..points.len())
            .map(|i| (clustering.assignment[i] != c, sq_dist(&points[i], centroid), i))
            .collect();
        ranked.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then_with(|| ids[a.2].cmp(ids[b.2]))
        });
        if let Some(&(_, _, i)) = ranked.iter().find(|(_, _, i)| !chosen.contains(i)) {
            chosen.insert(i);
        }
    }
    Ok(chosen.into_iter().collect())
}

/// Pick up to `m` representatives of `items` by k-means over their
/// embeddings, returned sorted by id.
pub fn select_memory_kmeans<T: MemoryItem>(
    items: &[T],
    m: usize,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<Vec<T>> {
    if m == 0 {
        return Err(Error::InvalidArgument("memory size must be at least 1".into()));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = items.iter().find(|it| !seen.insert(it.item_id())) {
        return Err(Error::DuplicateId(dup.item_id().to_string()));
    }
    let picked: Vec<usize> = if items.len() <= m {
        (0..items.len()).collect()
    } else {
        let texts: Vec<&str> = items.iter().map(MemoryItem::item_text).collect();
        let points: Vec<Vec<f64>> = embedder.embed_many(&texts)?.into_iter().map(|e| e.0).collect();
        let ids: Vec<&str> = items.iter().map(MemoryItem::item_id).collect();
        select_indices(&points, &ids, m, seed)?
    };
    let mut out: Vec<T> = picked.into_iter().map(|i| items[i].clone()).collect();
    out.sort_by(|a, b| a.item_id().cmp(b.item_id()));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DualMemoryStore {
    pub m: usize,
    pub easy: BTreeMap<RelationLabel, Vec<Sample>>,
    pub hard: BTreeMap<RelationLabel, Vec<HardCaseRecord>>,
    pub task_of: BTreeMap<RelationLabel, usize>,
}

impl DualMemoryStore {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("memory size must be at least 1".into()));
        }
        Ok(DualMemoryStore {
            m,
            ..Default::default()
        })
    }

    pub fn contains(&self, relation: &RelationLabel) -> bool {
        self.task_of.contains_key(relation)
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationLabel> {
        self.task_of.keys()
    }

    /// Store a relation's two parts. Each relation is stored exactly once.
    pub fn insert(
        &mut self,
        relation: &RelationLabel,
        task_index: usize,
        easy: Vec<Sample>,
        hard: Vec<HardCaseRecord>,
    ) -> Result<()> {
        if self.contains(relation) {
            return Err(Error::DuplicateRelation(relation.to_string()));
        }
        for (part, len) in [("easy", easy.len()), ("hard", hard.len())] {
            if len > self.m {
                return Err(Error::InvalidArgument(format!(
                    "{part} memory for '{relation}' holds {len} items, more than m = {}",
                    self.m
                )));
            }
        }
        let ids = easy.iter().map(|s| (&s.relation, &s.id)).chain(hard.iter().map(|h| (&h.sample.relation, &h.sample.id)));
        for (r, id) in ids {
            if r != relation {
                return Err(Error::InvalidArgument(format!("memory item {id} belongs to '{r}', not '{relation}'")));
            }
        }
        for part in [easy.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), hard.iter().map(|h| h.sample.id.as_str()).collect()] {
            let mut seen = BTreeSet::new();
            if let Some(dup) = part.iter().find(|id| !seen.insert(**id)) {
                return Err(Error::DuplicateId(dup.to_string()));
            }
        }
        self.easy.insert(relation.clone(), easy);
        self.hard.insert(relation.clone(), hard);
        self.task_of.insert(relation.clone(), task_index);
        Ok(())
    }

    fn ordered_relations(&self) -> Vec<&RelationLabel> {
        let mut rels: Vec<&RelationLabel> = self.task_of.keys().collect();
        rels.sort_by_key(|r| (self.task_of[*r], *r));
        rels
    }

    /// Unions of both parts over all stored relations, ordered by
    /// (task, relation, id).
    pub fn all_memory(&self) -> (Vec<Sample>, Vec<HardCaseRecord>) {
        let mut easy = Vec::new();
        let mut hard = Vec::new();
        for r in self.ordered_relations() {
            let mut e = self.easy[r].clone();
            e.sort_by(|a, b| a.id.cmp(&b.id));
            easy.extend(e);
            let mut h = self.hard[r].clone();
            h.sort_by(|a, b| a.sample.id.cmp(&b.sample.id));
            hard.extend(h);
        }
        (easy, hard)
    }

    /// Hard memory of relations learned strictly before `task_index`.
    pub fn hard_before(&self, task_index: usize) -> Vec<HardCaseRecord> {
        let (_, hard) = self.all_memory();
        hard.into_iter()
            .filter(|h| self.task_of[&h.sample.relation] < task_index)
            .collect()
    }
}

//! Deterministic prototype classifier standing in for a fine-tuned LM.
//!
//! Simulation semantics (not a model of any real network):
//!
//! * Each trained relation has a prototype vector and a recency strength in
//!   `[0, 1]`. A candidate scores `cos(x, prototype) + strength_weight *
//!   strength`, where `x` is the hashed embedding of the query sentence.
//! * A candidate without a prototype scores `cos(x, embed(name)) +
//!   zero_shot_bias`, a crude reading of the relation name. With
//!   `zero_shot_bias = None` such candidates score negative infinity and an
//!   all-unseen list answers its first candidate.
//! * Training an item pulls the target prototype toward `x` by `pull_rate`
//!   (a first mention initializes it at `x`), pulls its strength toward 1 by
//!   the same rate and decays every other strength by `strength_decay`.
//!   Contrastive items also push the recorded wrong relation away:
//!   `p_wrong -= push_rate * (x - p_wrong)`, then rescale `p_wrong` to its
//!   previous norm.
//!
//! Strength decay is what makes old relations fade without replay. Item order
//! is a seeded shuffle per epoch. The `learning_rate` train parameter is
//! accepted and ignored.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{answer_json, ModelBackend, TrainBatchItem, TrainParams, TrainSummary};
use crate::corpus::RelationLabel;
use crate::embed::{Embedder, HashingEmbedder};
use crate::error::{Error, Result};
use crate::instructions::{parse_query, InstructionKind};
use crate::retrieval::cosine_slices;
use crate::seed::{rng_for, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dim: usize,
    pub pull_rate: f64,
    pub push_rate: f64,
    pub strength_decay: f64,
    /// Weight of the recency strength in a candidate's score.
    pub strength_weight: f64,
    pub zero_shot_bias: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dim: 512,
            pull_rate: 0.1,
            push_rate: 0.1,
            strength_decay: 0.002,
            strength_weight: 0.3,
            zero_shot_bias: Some(0.9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimState {
    pub prototypes: BTreeMap<RelationLabel, Vec<f64>>,
    pub strengths: BTreeMap<RelationLabel, f64>,
}

#[derive(Debug, Clone)]
pub struct SimBackend {
    config: SimConfig,
    embedder: HashingEmbedder,
    memo: HashMap<String, Vec<f64>>,
    state: SimState,
    checkpoints: BTreeMap<String, SimState>,
}

impl SimBackend {
    pub fn new(config: SimConfig) -> Self {
        let embedder = HashingEmbedder::new(config.dim);
        SimBackend {
            config,
            embedder,
            memo: HashMap::new(),
            state: SimState::default(),
            checkpoints: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn prototype(&self, relation: &RelationLabel) -> Option<&[f64]> {
        self.state.prototypes.get(relation).map(Vec::as_slice)
    }

    fn embed(&mut self, text: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.memo.get(text) {
            return Ok(v.clone());
        }
        let v = self.embedder.embed(text)?.0;
        self.memo.insert(text.to_string(), v.clone());
        Ok(v)
    }

    fn score(&mut self, x: &[f64], relation: &RelationLabel) -> Result<f64> {
        if let Some(p) = self.state.prototypes.get(relation) {
            if p.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: p.len(),
                    actual: x.len(),
                });
            }
            let strength = self.state.strengths.get(relation).copied().unwrap_or(0.0);
            return Ok(cosine_slices(x, p).unwrap_or(0.0) + self.config.strength_weight * strength);
        }
        match self.config.zero_shot_bias {
            Some(bias) => {
                let name = self.embed(relation.as_str())?;
                Ok(cosine_slices(x, &name).unwrap_or(0.0) + bias)
            }
            None => Ok(f64::NEG_INFINITY),
        }
    }

    /// The relation the simulator would answer, or `None` when the text holds
    /// no recognizable question.
    pub fn predict(&mut self, instruction_text: &str) -> Result<Option<RelationLabel>> {
        let Some(query) = parse_query(instruction_text) else {
            return Ok(None);
        };
        if query.candidates.is_empty() {
            return Ok(None);
        }
        let x = self.embed(&query.sentence)?;
        let mut best: Option<(f64, &RelationLabel)> = None;
        for candidate in &query.candidates {
            let s = self.score(&x, candidate)?;
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, candidate));
            }
        }
        Ok(best.map(|(_, r)| r.clone()))
    }

    fn update(&mut self, x: &[f64], item: &TrainBatchItem) -> Result<f64> {
        let rate = self.config.pull_rate;
        let target = &item.target;
        let loss = match self.state.prototypes.get_mut(target) {
            Some(p) => {
                if p.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: p.len(),
                        actual: x.len(),
                    });
                }
                let loss = 1.0 - cosine_slices(x, p).unwrap_or(0.0);
                p.iter_mut().zip(x).for_each(|(pi, xi)| *pi += rate * (xi - *pi));
                loss
            }
            None => {
                self.state.prototypes.insert(target.clone(), x.to_vec());
                1.0
            }
        };
        let keep = 1.0 - self.config.strength_decay;
        for (relation, strength) in self.state.strengths.iter_mut() {
            if relation != target {
                *strength *= keep;
            }
        }
        let strength = self.state.strengths.entry(target.clone()).or_insert(0.0);
        *strength += rate * (1.0 - *strength);

        if item.weight_hint == InstructionKind::Contrastive {
            if let Some(wrong) = item.wrong_relation.as_ref().filter(|w| *w != target) {
                if let Some(p) = self.state.prototypes.get_mut(wrong) {
                    let push = self.config.push_rate;
                    let before = norm(p);
                    p.iter_mut().zip(x).for_each(|(pi, xi)| *pi -= push * (xi - *pi));
                    // Keep the magnitude so later pulls are not drowned out.
                    let after = norm(p);
                    if after > 0.0 {
                        p.iter_mut().for_each(|pi| *pi *= before / after);
                    }
                }
            }
        }
        Ok(loss)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl ModelBackend for SimBackend {
    fn identity(&self) -> String {
        format!("sim-{}", self.embedder.provider_id())
    }

    fn infer(&mut self, instruction_text: &str) -> Result<String> {
        Ok(match self.predict(instruction_text)? {
            Some(relation) => answer_json(&relation),
            None => "I could not find a question to answer.".to_string(),
        })
    }

    fn train(&mut self, batch: &[TrainBatchItem], params: &TrainParams) -> Result<TrainSummary> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        let queries = batch
            .iter()
            .map(|item| {
                let q = parse_query(&item.instruction_text).ok_or_else(|| {
                    Error::Backend(format!("no question in training item for '{}'", item.target))
                })?;
                self.embed(&q.sentence)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut seen = 0u64;
        let mut last_loss = 0.0;
        for epoch in 0..params.epochs.max(1) {
            order.shuffle(&mut rng_for(params.seed, &["sim-epoch".into(), u64::from(epoch).into()]));
            let mut total = 0.0;
            for &i in &order {
                total += self.update(&queries[i], &batch[i])?;
                seen += 1;
            }
            last_loss = total / batch.len() as f64;
        }
        Ok(TrainSummary {
            items_seen: seen,
            loss: last_loss,
        })
    }

    fn checkpoint(&mut self) -> Result<String> {
        let bytes = serde_json::to_vec(&self.state)?;
        let id = format!("sim-{}", &sha256_hex(&bytes)[..16]);
        self.checkpoints.insert(id.clone(), self.state.clone());
        Ok(id)
    }

    fn restore(&mut self, checkpoint_id: &str) -> Result<()> {
        let state = self
            .checkpoints
            .get(checkpoint_id)
            .ok_or_else(|| Error::Backend(format!("unknown checkpoint '{checkpoint_id}'")))?;
        self.state = state.clone();
        Ok(())
    }
}

//! The continual loop: per task, split, annotate, retrieve, build
//! instructions, train, select memory, replay and evaluate.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyst::AnalystClient;
use crate::backend::{ModelBackend, TrainBatchItem, TrainParams, TrainSummary};
use crate::config::RunConfig;
use crate::corpus::{cap_per_relation, relation_set, RelationLabel, Sample, TaskSequence, TaskSpec};
use crate::corpus::build_task_sequences;
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_seen, Evaluation, RunReport};
use crate::instructions::{build_contrastive, build_simple, InstructionKind, NegativeDemos, PositiveDemos};
use crate::memory::{select_memory_kmeans, DualMemoryStore};
use crate::retrieval::{most_similar_relation, relation_prototype, retrieve_negative, retrieve_positive, RelationPrototype};
use crate::seed::{derive_seed, rng_for};
use crate::splitter::{annotate_hard_case, classify_task_data, HardCaseRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseItem {
    pub sample_id: String,
    pub kind: InstructionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub items: Vec<PhaseItem>,
    pub summary: TrainSummary,
}

impl PhaseLog {
    pub fn count(&self, kind: InstructionKind) -> usize {
        self.items.iter().filter(|i| i.kind == kind).count()
    }
}

/// Demonstrations chosen for one hard case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveLog {
    pub sample_id: String,
    pub similar_relation: RelationLabel,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub difference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemoryManifest {
    pub easy: Vec<String>,
    pub hard: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLog {
    pub task_index: usize,
    pub relations: Vec<RelationLabel>,
    pub seen_relations: Vec<RelationLabel>,
    pub train_size: usize,
    pub easy_count: usize,
    pub hard_count: usize,
    pub unparseable_count: usize,
    pub contrastive: Vec<ContrastiveLog>,
    pub phase1: PhaseLog,
    pub phase2: Option<PhaseLog>,
    /// Memory of every stored relation after this task.
    pub memory: BTreeMap<RelationLabel, MemoryManifest>,
    pub evaluation: Evaluation,
    /// Accuracy on each task's test data so far, in task order.
    pub origin_accuracies: Vec<f64>,
    pub checkpoint: String,
}

/// Everything carried from one task to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub sequence_index: usize,
    pub seed: u64,
    pub store: DualMemoryStore,
    pub prototypes: BTreeMap<RelationLabel, RelationPrototype>,
    /// Seen relations in learning order: by task, then name.
    pub seen: Vec<RelationLabel>,
    pub tests_by_task: Vec<Vec<Sample>>,
    pub relations_by_task: Vec<Vec<RelationLabel>>,
    pub logs: Vec<TaskLog>,
}

pub struct Pipeline<'a> {
    config: &'a RunConfig,
    backend: &'a mut dyn ModelBackend,
    analyst: &'a AnalystClient,
    embedder: &'a dyn Embedder,
    state: PipelineState,
}

fn shuffled<T>(mut items: Vec<T>, seed: u64) -> Vec<T> {
    items.shuffle(&mut rng_for(seed, &[]));
    items
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: &'a RunConfig,
        sequence_index: usize,
        seed: u64,
        backend: &'a mut dyn ModelBackend,
        analyst: &'a AnalystClient,
        embedder: &'a dyn Embedder,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            backend,
            analyst,
            embedder,
            state: PipelineState {
                sequence_index,
                seed,
                store: DualMemoryStore::new(config.memory_size)?,
                prototypes: BTreeMap::new(),
                seen: Vec::new(),
                tests_by_task: Vec::new(),
                relations_by_task: Vec::new(),
                logs: Vec::new(),
            },
        })
    }

    /// Continue from a saved state, e.g. after restoring the backend to the
    /// checkpoint of the last completed task.
    pub fn resume(
        config: &'a RunConfig,
        state: PipelineState,
        backend: &'a mut dyn ModelBackend,
        analyst: &'a AnalystClient,
        embedder: &'a dyn Embedder,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            backend,
            analyst,
            embedder,
            state,
        })
    }

    pub fn state(&self) -> &PipelineState {
        &self.state
    }

    pub fn into_state(self) -> PipelineState {
        self.state
    }

    fn train_params(&self, phase: &str, task_index: usize) -> TrainParams {
        TrainParams {
            epochs: self.config.epochs_per_phase,
            learning_rate: self.config.learning_rate,
            batch_size: self.config.batch_size,
            seed: derive_seed(self.state.seed, &["train".into(), phase.into(), task_index.into()]),
        }
    }

    pub fn run_task(&mut self, task: &TaskSpec) -> Result<&TaskLog> {
        let k = task.index;
        if k != self.state.logs.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "task {k} out of order; expected task {}",
                self.state.logs.len() + 1
            )));
        }
        if task.train.is_empty() || task.test.is_empty() {
            return Err(Error::InvalidArgument(format!("task {k} has empty train or test data")));
        }
        let new_relations: BTreeSet<RelationLabel> = task.relations.iter().cloned().collect();
        if let Some(r) = self.state.seen.iter().find(|r| new_relations.contains(*r)) {
            return Err(Error::DuplicateRelation(r.to_string()));
        }
        if let Some(s) = task.train.iter().chain(&task.test).find(|s| !new_relations.contains(&s.relation)) {
            return Err(Error::InvalidSample {
                id: s.id.clone(),
                message: format!("relation '{}' is not part of task {k}", s.relation),
            });
        }
        let previous: Vec<RelationLabel> = self.state.seen.clone();
        let mut seen = previous.clone();
        seen.extend(new_relations.iter().cloned());
        let flags = self.config.ablation;
        let seed = self.state.seed;

        // (1) easy/hard split against the model as it stands.
        let (easy, hard_pairs) = if flags.no_hard_split {
            (task.train.clone(), Vec::new())
        } else {
            let c = classify_task_data(&task.train, &seen, &mut *self.backend)?;
            (c.easy, c.hard)
        };
        let unparseable_count = hard_pairs.iter().filter(|(_, p)| p.relation().is_none()).count();

        // (2) analyst explanations of each mistake.
        let hard: Vec<HardCaseRecord> = hard_pairs
            .iter()
            .map(|(s, wrong)| annotate_hard_case(s, wrong, self.analyst, k))
            .collect::<Result<_>>()?;

        // Prototypes over the full training data, frozen from here on.
        for r in &new_relations {
            let members: Vec<Sample> = task.train.iter().filter(|s| &s.relation == r).cloned().collect();
            if members.is_empty() {
                return Err(Error::InvalidArgument(format!("relation '{r}' has no training data in task {k}")));
            }
            let proto = relation_prototype(r, &members, self.embedder)?;
            self.state.prototypes.insert(r.clone(), proto);
        }

        // (3) demonstrations and contrastive instructions for hard cases.
        let mut contrastive_items = Vec::new();
        let mut contrastive_log = Vec::new();
        if k > 1 {
            let earlier_hard = self.state.store.hard_before(k);
            let mut similar_cache: BTreeMap<RelationLabel, RelationLabel> = BTreeMap::new();
            for record in &hard {
                let r = &record.sample.relation;
                let r_s = match similar_cache.get(r) {
                    Some(r_s) => r_s.clone(),
                    None => {
                        let r_s = most_similar_relation(r, &previous, &self.state.prototypes)?;
                        similar_cache.insert(r.clone(), r_s.clone());
                        r_s
                    }
                };
                let positives = if flags.no_positive {
                    Vec::new()
                } else {
                    let pool = self.state.store.easy.get(&r_s).map(Vec::as_slice).unwrap_or(&[]);
                    retrieve_positive(&record.sample, pool, self.config.k_p, self.embedder)?
                };
                let negatives = if flags.no_negative {
                    Vec::new()
                } else {
                    retrieve_negative(record, &earlier_hard, self.config.k_n, self.embedder)?
                };
                if positives.is_empty() && negatives.is_empty() {
                    continue;
                }
                let difference = if flags.no_p_r || positives.is_empty() {
                    None
                } else {
                    Some(self.relation_difference(r, &r_s, &easy, &task.train)?)
                };
                let pos = PositiveDemos {
                    similar_relation: &r_s,
                    samples: &positives,
                    difference: difference.as_deref(),
                };
                let neg = NegativeDemos {
                    records: &negatives,
                    with_analysis: !flags.no_n_r,
                };
                let instruction = build_contrastive(record, Some(&pos), Some(&neg), &seen)?;
                contrastive_items.push(TrainBatchItem::from_instruction(
                    &instruction,
                    record.wrong_prediction.relation().cloned(),
                )?);
                contrastive_log.push(ContrastiveLog {
                    sample_id: record.sample.id.clone(),
                    similar_relation: r_s,
                    positives: positives.iter().map(|s| s.id.clone()).collect(),
                    negatives: negatives.iter().map(|h| h.sample.id.clone()).collect(),
                    difference,
                });
            }
        }

        // (4) phase 1: simple instructions for all of D_k plus contrastive ones.
        let mut phase1: Vec<(PhaseItem, TrainBatchItem)> = Vec::new();
        for sample in &task.train {
            let item = TrainBatchItem::simple(&build_simple(sample, &seen)?)?;
            phase1.push((
                PhaseItem {
                    sample_id: sample.id.clone(),
                    kind: InstructionKind::Simple,
                },
                item,
            ));
        }
        for (log, item) in contrastive_log.iter().zip(contrastive_items) {
            phase1.push((
                PhaseItem {
                    sample_id: log.sample_id.clone(),
                    kind: InstructionKind::Contrastive,
                },
                item,
            ));
        }
        let phase1 = shuffled(phase1, derive_seed(seed, &["phase1-order".into(), k.into()]));
        let params = self.train_params("phase1", k);
        let (phase1_items, batch): (Vec<PhaseItem>, Vec<TrainBatchItem>) = phase1.into_iter().unzip();
        let summary = self.backend.train(&batch, &params)?;
        let phase1 = PhaseLog {
            items: phase1_items,
            summary,
        };

        // (5) memory selection per new relation.
        for r in &new_relations {
            let easy_r: Vec<Sample> = easy.iter().filter(|s| &s.relation == r).cloned().collect();
            let hard_r: Vec<HardCaseRecord> = hard.iter().filter(|h| &h.sample.relation == r).cloned().collect();
            let m = self.config.memory_size;
            let easy_seed = derive_seed(seed, &["memory".into(), "easy".into(), r.as_str().into()]);
            let hard_seed = derive_seed(seed, &["memory".into(), "hard".into(), r.as_str().into()]);
            let easy_sel = select_memory_kmeans(&easy_r, m, self.embedder, easy_seed)?;
            let hard_sel = select_memory_kmeans(&hard_r, m, self.embedder, hard_seed)?;
            self.state.store.insert(r, k, easy_sel, hard_sel)?;
        }

        // (6) phase 2: replay all memory as simple instructions.
        let phase2 = if flags.no_replay {
            None
        } else {
            let (easy_mem, hard_mem) = self.state.store.all_memory();
            let mut items = Vec::new();
            for sample in easy_mem.iter().chain(hard_mem.iter().map(|h| &h.sample)) {
                let item = TrainBatchItem::simple(&build_simple(sample, &seen)?)?;
                items.push((
                    PhaseItem {
                        sample_id: sample.id.clone(),
                        kind: InstructionKind::Simple,
                    },
                    item,
                ));
            }
            let items = shuffled(items, derive_seed(seed, &["phase2-order".into(), k.into()]));
            let params = self.train_params("phase2", k);
            let (phase_items, batch): (Vec<PhaseItem>, Vec<TrainBatchItem>) = items.into_iter().unzip();
            let summary = self.backend.train(&batch, &params)?;
            Some(PhaseLog {
                items: phase_items,
                summary,
            })
        };

        // (7) evaluation on every seen test set.
        self.state.seen = seen.clone();
        self.state.tests_by_task.push(task.test.clone());
        self.state.relations_by_task.push(new_relations.iter().cloned().collect());
        let all_tests: Vec<Sample> = self.state.tests_by_task.concat();
        let evaluation = evaluate_seen(&mut *self.backend, &all_tests, &seen)?;
        let origin_accuracies = self
            .state
            .relations_by_task
            .iter()
            .map(|rels| evaluation.accuracy_over(rels))
            .collect();
        let checkpoint = self.backend.checkpoint()?;
        self.analyst.persist()?;

        let memory = self
            .state
            .store
            .relations()
            .map(|r| {
                (
                    r.clone(),
                    MemoryManifest {
                        easy: self.state.store.easy[r].iter().map(|s| s.id.clone()).collect(),
                        hard: self.state.store.hard[r].iter().map(|h| h.sample.id.clone()).collect(),
                    },
                )
            })
            .collect();
        log::info!(
            "sequence {} task {k}: {} easy, {} hard, {} contrastive, accuracy {:.4}",
            self.state.sequence_index,
            easy.len(),
            hard.len(),
            contrastive_log.len(),
            evaluation.accuracy
        );
        self.state.logs.push(TaskLog {
            task_index: k,
            relations: new_relations.into_iter().collect(),
            seen_relations: seen,
            train_size: task.train.len(),
            easy_count: easy.len(),
            hard_count: hard.len(),
            unparseable_count,
            contrastive: contrastive_log,
            phase1,
            phase2,
            memory,
            evaluation,
            origin_accuracies,
            checkpoint,
        });
        Ok(self.state.logs.last().expect("log just pushed"))
    }

    /// The analyst's difference clause for `(r, r_s)`, shown one seeded-random
    /// example of each relation.
    fn relation_difference(
        &self,
        r: &RelationLabel,
        r_s: &RelationLabel,
        easy: &[Sample],
        train: &[Sample],
    ) -> Result<String> {
        let seed = self.state.seed;
        let pick = |pool: &[&Sample], tag: &str| -> Result<Sample> {
            pick_example(pool, seed, tag, r, r_s)
        };
        let easy_r: Vec<&Sample> = easy.iter().filter(|s| &s.relation == r).collect();
        let pool_r = if easy_r.is_empty() {
            train.iter().filter(|s| &s.relation == r).collect()
        } else {
            easy_r
        };
        let example_r = pick(&pool_r, r.as_str())?;
        let pool_rs: Vec<&Sample> = self.state.store.easy.get(r_s).map(|v| v.iter().collect()).unwrap_or_default();
        let example_rs = pick(&pool_rs, r_s.as_str())?;
        Ok(self.analyst.gen_relation_contrast(r, r_s, &example_r, &example_rs)?.difference)
    }
}

fn pick_example(pool: &[&Sample], seed: u64, tag: &str, r: &RelationLabel, r_s: &RelationLabel) -> Result<Sample> {
    let mut rng = rng_for(seed, &["p_r-example".into(), tag.into(), r.as_str().into(), r_s.as_str().into()]);
    pool.choose(&mut rng)
        .map(|s| (*s).clone())
        .ok_or_else(|| Error::InvalidArgument(format!("no example available for '{tag}'")))
}

/// Run every task of `sequence` in order. Errors carry the sequence, task and
/// the checkpoint of the last completed task.
pub fn run_sequence(
    config: &RunConfig,
    variant: &str,
    sequence: &TaskSequence,
    backend: &mut dyn ModelBackend,
    analyst: &AnalystClient,
    embedder: &dyn Embedder,
) -> Result<RunReport> {
    let backend_id = backend.identity();
    let mut pipeline = Pipeline::new(config, sequence.sequence_index, sequence.seed, backend, analyst, embedder)?;
    for task in &sequence.tasks {
        if let Err(source) = pipeline.run_task(task) {
            return Err(Error::Task {
                sequence: sequence.sequence_index,
                task: task.index,
                checkpoint: pipeline.state().logs.last().map(|l| l.checkpoint.clone()),
                source: Box::new(source),
            });
        }
    }
    let state = pipeline.into_state();
    Ok(RunReport {
        variant: variant.to_string(),
        sequence_index: sequence.sequence_index,
        sequence_seed: sequence.seed,
        backend: backend_id,
        accuracies: state.logs.iter().map(|l| l.evaluation.accuracy).collect(),
        origin_accuracies: state.logs.iter().map(|l| l.origin_accuracies.clone()).collect(),
        tasks: state.logs,
        config: config.clone(),
    })
}

/// Cap the corpus and build the configured task sequences.
pub fn prepare_sequences(config: &RunConfig, samples: &[Sample]) -> Result<Vec<TaskSequence>> {
    config.validate()?;
    let split = cap_per_relation(samples, config.train_cap, config.test_cap, config.seed)?;
    let relations = relation_set(&split.train);
    let partitions = build_task_sequences(&relations, config.num_tasks, config.num_sequences, config.seed)?;
    partitions
        .iter()
        .map(|p| TaskSequence::populate(p, &split))
        .collect()
}

/// Apply `run_one` to every sequence, in parallel when configured. Results
/// keep sequence order.
pub fn run_all<T, F>(config: &RunConfig, sequences: &[TaskSequence], run_one: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&TaskSequence) -> Result<T> + Sync,
{
    if config.parallel {
        sequences.par_iter().map(&run_one).collect()
    } else {
        sequences.iter().map(run_one).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedBackend, SimBackend};
    use crate::corpus::synthetic::{generate, SyntheticConfig};
    use crate::embed::{CachedEmbedder, HashingEmbedder};

    fn toy_config() -> RunConfig {
        RunConfig {
            num_tasks: 3,
            num_sequences: 1,
            parallel: false,
            ..RunConfig::default()
        }
    }

    fn toy_sequence(config: &RunConfig) -> TaskSequence {
        let samples: Vec<Sample> = generate(&SyntheticConfig {
            samples_per_relation: 30,
            ..SyntheticConfig::default()
        })
        .into_iter()
        .filter(|s| s.id.as_str() < "syn-06")
        .collect();
        prepare_sequences(config, &samples).unwrap().remove(0)
    }

    #[test]
    fn oracle_backend_never_makes_hard_cases() {
        let config = toy_config();
        let seq = toy_sequence(&config);
        let all: Vec<Sample> = seq.tasks.iter().flat_map(|t| t.train.iter().chain(&t.test).cloned()).collect();
        let mut backend = ScriptedBackend::oracle(&all);
        let analyst = AnalystClient::fallback();
        let embedder = HashingEmbedder::new(64);
        let report = run_sequence(&config, "full", &seq, &mut backend, &analyst, &embedder).unwrap();
        for (log, task) in report.tasks.iter().zip(&seq.tasks) {
            assert_eq!(log.hard_count, 0);
            assert_eq!(log.phase1.items.len(), task.train.len());
            assert!(log.memory.values().all(|m| m.hard.is_empty()));
        }
        assert_eq!(report.accuracies, vec![1.0; 3]);
    }

    #[test]
    fn failure_reports_task_and_checkpoint() {
        let config = toy_config();
        let mut seq = toy_sequence(&config);
        seq.tasks[1].train.clear();
        let mut backend = SimBackend::new(config.sim.clone());
        let analyst = AnalystClient::fallback();
        let embedder = CachedEmbedder::in_memory(HashingEmbedder::new(64));
        match run_sequence(&config, "full", &seq, &mut backend, &analyst, &embedder) {
            Err(Error::Task { task, checkpoint, .. }) => {
                assert_eq!(task, 2);
                assert!(checkpoint.unwrap().starts_with("sim-"));
            }
            other => panic!("expected a task error, got {other:?}"),
        }
    }
}

//! Accuracy on seen relations, run reports and cross-sequence aggregates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backend::ModelBackend;
use crate::config::{RunConfig, StdKind};
use crate::corpus::{RelationLabel, Sample};
use crate::error::{Error, Result};
use crate::instructions::{build_simple, parse_prediction, Prediction};
use crate::orchestrator::TaskLog;
use crate::seed::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, other: Tally) {
        self.correct += other.correct;
        self.total += other.total;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub tally: Tally,
    pub per_relation: BTreeMap<RelationLabel, Tally>,
}

impl Evaluation {
    /// Accuracy restricted to the test samples of `relations`.
    pub fn accuracy_over<'a>(&self, relations: impl IntoIterator<Item = &'a RelationLabel>) -> f64 {
        let mut tally = Tally::default();
        for r in relations {
            if let Some(t) = self.per_relation.get(r) {
                tally.add(*t);
            }
        }
        tally.accuracy()
    }
}

/// Score the backend on every seen test sample with simple instructions over
/// the seen relation list. Unparseable answers count as wrong.
pub fn evaluate_seen(
    backend: &mut dyn ModelBackend,
    seen_tests: &[Sample],
    seen_relations: &[RelationLabel],
) -> Result<Evaluation> {
    if seen_tests.is_empty() {
        return Err(Error::InvalidArgument("no test samples to evaluate".into()));
    }
    let mut per_relation: BTreeMap<RelationLabel, Tally> = BTreeMap::new();
    let mut tally = Tally::default();
    for sample in seen_tests {
        let instruction = build_simple(sample, seen_relations)?;
        let response = backend.infer(&instruction.text)?;
        let prediction = parse_prediction(&response, seen_relations);
        if prediction == Prediction::Unparseable {
            log::debug!("unparseable answer on test sample {}", sample.id);
        }
        let hit = Tally {
            correct: usize::from(prediction.is(&sample.relation)),
            total: 1,
        };
        tally.add(hit);
        per_relation.entry(sample.relation.clone()).or_default().add(hit);
    }
    Ok(Evaluation {
        accuracy: tally.accuracy(),
        tally,
        per_relation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Name of the configuration variant, e.g. `full` or an ablation.
    pub variant: String,
    pub sequence_index: usize,
    pub sequence_seed: u64,
    pub backend: String,
    /// Accuracy on all seen relations after each task.
    pub accuracies: Vec<f64>,
    /// `origin_accuracies[k][j]`: after task `k + 1`, accuracy on the test
    /// data of task `j + 1`.
    pub origin_accuracies: Vec<Vec<f64>>,
    pub tasks: Vec<TaskLog>,
    pub config: RunConfig,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    /// Accuracy on the first task's test data after the last task.
    pub fn first_task_final_accuracy(&self) -> Option<f64> {
        self.origin_accuracies.last().and_then(|row| row.first()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: String,
    pub runs: usize,
    pub std_kind: StdKind,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Element-wise mean and standard deviation of the accuracy vectors.
pub fn aggregate_runs(reports: &[RunReport], std_kind: StdKind) -> Result<Aggregate> {
    let rows: Vec<&[f64]> = reports.iter().map(|r| r.accuracies.as_slice()).collect();
    let (mean, std) = mean_std(&rows, std_kind)?;
    Ok(Aggregate {
        variant: reports[0].variant.clone(),
        runs: reports.len(),
        std_kind,
        mean,
        std,
    })
}

pub fn mean_std(rows: &[&[f64]], std_kind: StdKind) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidArgument("no runs to aggregate".into()))?;
    if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
        return Err(Error::InvalidArgument(format!(
            "runs disagree on the number of tasks ({} vs {})",
            first.len(),
            bad.len()
        )));
    }
    let n = rows.len() as f64;
    let mut mean = Vec::with_capacity(first.len());
    let mut std = Vec::with_capacity(first.len());
    for k in 0..first.len() {
        let m = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let ss: f64 = rows.iter().map(|r| (r[k] - m).powi(2)).sum();
        let denom = match std_kind {
            StdKind::Sample if rows.len() > 1 => n - 1.0,
            StdKind::Sample => 1.0,
            StdKind::Population => n,
        };
        mean.push(m);
        std.push((ss / denom).sqrt());
    }
    Ok((mean, std))
}

/// Accuracy matrix as CSV: one row per sequence, one column per task.
pub fn accuracy_csv(reports: &[RunReport]) -> String {
    let width = reports.iter().map(|r| r.accuracies.len()).max().unwrap_or(0);
    let mut out = String::from("variant,sequence");
    for k in 1..=width {
        let _ = write!(out, ",T{k}");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{},{}", r.variant, r.sequence_index);
        for a in &r.accuracies {
            let _ = write!(out, ",{a:.6}");
        }
        out.push('\n');
    }
    out
}

/// Plain-text table, one row per variant, cells `mean±std` in percent.
pub fn render_table(aggregates: &[Aggregate]) -> String {
    let width = aggregates.iter().map(|a| a.mean.len()).max().unwrap_or(0);
    let name_w = aggregates.iter().map(|a| a.variant.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<name_w$}", "Method");
    for k in 1..=width {
        let _ = write!(out, " | {:>11}", format!("T{k}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(out.len() - 1));
    out.push('\n');
    for a in aggregates {
        let _ = write!(out, "{:<name_w$}", a.variant);
        for (m, s) in a.mean.iter().zip(&a.std) {
            let _ = write!(out, " | {:>11}", format!("{:.1}±{:.1}", m * 100.0, s * 100.0));
        }
        out.push('\n');
    }
    if let Some(a) = aggregates.first() {
        let kind = match a.std_kind {
            StdKind::Sample => "sample",
            StdKind::Population => "population",
        };
        let _ = writeln!(out, "(accuracy % on all seen relations; {} runs; {kind} standard deviation)", a.runs);
    }
    out
}

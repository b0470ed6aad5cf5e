//! Easy/hard classification of a new task's training data and hard-case
//! annotation.

use serde::{Deserialize, Serialize};

use crate::analyst::AnalystClient;
use crate::backend::ModelBackend;
use crate::corpus::{RelationLabel, Sample};
use crate::error::{Error, Result};
use crate::instructions::{build_simple, parse_prediction, Prediction};

/// Where an analyst text came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Remote,
    Fallback,
}

/// A sample the model got wrong before learning its task, with the analyst's
/// explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardCaseRecord {
    pub sample: Sample,
    pub wrong_prediction: Prediction,
    pub error_reason: String,
    pub answer_analysis: String,
    pub task_index: usize,
    pub provenance: Provenance,
}

/// One recorded classification query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationResponse {
    pub sample_id: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Classification {
    pub easy: Vec<Sample>,
    pub hard: Vec<(Sample, Prediction)>,
    pub responses: Vec<ClassificationResponse>,
}

/// Classify with an arbitrary responder. Each sample is rendered as a simple
/// instruction over `seen_relations`, answered, parsed and compared with its
/// gold label; unparseable answers count as hard.
pub fn classify_with<F>(train: &[Sample], seen_relations: &[RelationLabel], mut respond: F) -> Result<Classification>
where
    F: FnMut(&Sample, &str) -> Result<String>,
{
    let mut out = Classification::default();
    for sample in train {
        let instruction = build_simple(sample, seen_relations)?;
        let response = respond(sample, &instruction.text)?;
        let prediction = parse_prediction(&response, seen_relations);
        if prediction == Prediction::Unparseable {
            log::warn!("unparseable response for sample {}: {response:?}", sample.id);
        }
        out.responses.push(ClassificationResponse {
            sample_id: sample.id.clone(),
            response,
        });
        if prediction.is(&sample.relation) {
            out.easy.push(sample.clone());
        } else {
            out.hard.push((sample.clone(), prediction));
        }
    }
    Ok(out)
}

pub fn classify_task_data(
    train: &[Sample],
    seen_relations: &[RelationLabel],
    backend: &mut dyn ModelBackend,
) -> Result<Classification> {
    classify_with(train, seen_relations, |_, text| backend.infer(text))
}

/// Re-derive a classification from previously recorded responses.
pub fn classify_from_responses(
    train: &[Sample],
    seen_relations: &[RelationLabel],
    responses: &[ClassificationResponse],
) -> Result<Classification> {
    let mut recorded = responses.iter();
    classify_with(train, seen_relations, |sample, _| {
        recorded
            .next()
            .filter(|r| r.sample_id == sample.id)
            .map(|r| r.response.clone())
            .ok_or_else(|| Error::ReplayMiss(format!("no recorded response for sample {}", sample.id)))
    })
}

pub fn annotate_hard_case(
    sample: &Sample,
    wrong: &Prediction,
    analyst: &AnalystClient,
    task_index: usize,
) -> Result<HardCaseRecord> {
    if wrong.is(&sample.relation) {
        return Err(Error::InvalidArgument(format!(
            "sample {} was predicted correctly; it is not a hard case",
            sample.id
        )));
    }
    let analysis = analyst.gen_error_analysis(sample, wrong)?;
    Ok(HardCaseRecord {
        sample: sample.clone(),
        wrong_prediction: wrong.clone(),
        error_reason: analysis.error_reason,
        answer_analysis: analysis.answer_analysis,
        task_index,
        provenance: analysis.provenance,
    })
}

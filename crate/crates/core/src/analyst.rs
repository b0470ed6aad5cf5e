//! Client for the external analyst model that explains relation differences
//! and prediction errors.
//!
//! Three modes: `remote` sends prompts to `/analyze` and falls back to fixed
//! templates when the answer is malformed or the call fails; `fallback` only
//! uses the templates; `replay` answers strictly from the cache and errors on
//! a miss. Every answer is cached and the cache can be persisted.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::backend::protocol::{decode, AnalyzeRequest, AnalyzeResponse, Endpoint, Transport, WireRequest};
use crate::corpus::{RelationLabel, Sample};
use crate::error::{Error, Result};
use crate::instructions::{extract_field, lenient_fields, strict_json_field, Prediction};
use crate::splitter::Provenance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalystMode {
    Remote,
    Fallback,
    Replay,
}

impl std::str::FromStr for AnalystMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remote" => Ok(AnalystMode::Remote),
            "fallback" => Ok(AnalystMode::Fallback),
            "replay" => Ok(AnalystMode::Replay),
            other => Err(Error::InvalidArgument(format!("unknown analyst mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationContrast {
    pub difference: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorAnalysis {
    pub error_reason: String,
    pub answer_analysis: String,
    pub provenance: Provenance,
}

/// Persistent answer cache. Relation contrasts are keyed by `r|r_s`, error
/// analyses by sample id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalystCache {
    pub relation_contrast: BTreeMap<String, RelationContrast>,
    pub error_analysis: BTreeMap<String, ErrorAnalysis>,
}

impl AnalystCache {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn contrast_key(r: &RelationLabel, r_s: &RelationLabel) -> String {
    format!("{r}|{r_s}")
}

pub fn render_relation_contrast_prompt(
    r: &RelationLabel,
    example_r: &Sample,
    r_s: &RelationLabel,
    example_rs: &Sample,
) -> String {
    format!(
        "I am doing a relation extraction task. Now I have two very similar relations for you. Please tell me the difference between them in one sentence. For the first sentence: “{}”, the relation between “{}” and “{}” is “{r}”; For the second sentence: “{}”, the relation between “{}” and “{}” is “{r_s}”; Now please tell me the difference between “{r}” and “{r_s}” in one sentence. Please return the answer in JSON format as follows: {{“difference”: xxx}}.",
        example_r.sentence,
        example_r.head.text,
        example_r.tail.text,
        example_rs.sentence,
        example_rs.head.text,
        example_rs.tail.text,
    )
}

pub fn render_error_analysis_prompt(sample: &Sample, wrong: &Prediction) -> String {
    format!(
        "For this sentence: “{}”, the correct relation between ‘{}’ and ‘{}’ should be ‘{}’, but it is predicted to be ‘{wrong}’. Please analyze the reason for the error in one sentence and provide an analysis of the correct answer in one sentence. Please return the answer in JSON format as follows:{{“error_reason”: xxx, “correct_answer_analysis”: xxx}}.",
        sample.sentence, sample.head.text, sample.tail.text, sample.relation
    )
}

pub fn fallback_contrast(r: &RelationLabel, r_s: &RelationLabel) -> String {
    format!("'{r}' and '{r_s}' differ in the granularity or type of the linked entities.")
}

pub fn fallback_error_analysis(gold: &RelationLabel, wrong: &Prediction) -> (String, String) {
    (
        format!("The model predicted '{wrong}' instead of '{gold}'."),
        format!("The correct relation is '{gold}' because the sentence states it directly."),
    )
}

pub fn parse_contrast_response(response: &str) -> Option<String> {
    extract_field(response, "difference").filter(|d| !d.trim().is_empty())
}

pub fn parse_error_analysis_response(response: &str) -> Option<(String, String)> {
    let strict = strict_json_field(response, "error_reason")
        .zip(strict_json_field(response, "correct_answer_analysis"));
    let (reason, analysis) = strict.or_else(|| {
        lenient_fields(response, &["error_reason", "correct_answer_analysis"])
            .map(|mut v| (v.remove(0), v.remove(0)))
    })?;
    (!reason.trim().is_empty() && !analysis.trim().is_empty()).then_some((reason, analysis))
}

pub struct AnalystClient {
    mode: AnalystMode,
    transport: Option<Arc<dyn Transport>>,
    cache: Mutex<AnalystCache>,
    cache_path: Option<PathBuf>,
    network_calls: AtomicUsize,
}

impl AnalystClient {
    pub fn fallback() -> Self {
        AnalystClient {
            mode: AnalystMode::Fallback,
            transport: None,
            cache: Mutex::new(AnalystCache::default()),
            cache_path: None,
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn remote(transport: Arc<dyn Transport>) -> Self {
        AnalystClient {
            mode: AnalystMode::Remote,
            transport: Some(transport),
            ..AnalystClient::fallback()
        }
    }

    pub fn replay(cache: AnalystCache) -> Self {
        AnalystClient {
            mode: AnalystMode::Replay,
            cache: Mutex::new(cache),
            ..AnalystClient::fallback()
        }
    }

    /// Persist the cache to `path` on every [`AnalystClient::persist`].
    /// Existing entries at `path` are loaded first.
    pub fn with_cache_file(mut self, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if path.exists() {
            let loaded = AnalystCache::load(&path)?;
            let cache = self.cache.get_mut().unwrap_or_else(|p| p.into_inner());
            cache.relation_contrast.extend(loaded.relation_contrast);
            cache.error_analysis.extend(loaded.error_analysis);
        }
        self.cache_path = Some(path);
        Ok(self)
    }

    pub fn mode(&self) -> AnalystMode {
        self.mode
    }

    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> AnalystCache {
        self.cache.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn persist(&self) -> Result<()> {
        match &self.cache_path {
            Some(path) => self.snapshot().save(path),
            None => Ok(()),
        }
    }

    fn ask(&self, prompt: String) -> Option<String> {
        let transport = self.transport.as_ref()?;
        self.network_calls.fetch_add(1, Ordering::Relaxed);
        let body = WireRequest::Analyze(AnalyzeRequest { prompt_text: prompt }).to_body().ok()?;
        match transport
            .post(Endpoint::Analyze, &body)
            .and_then(|v| decode::<AnalyzeResponse>(Endpoint::Analyze, v))
        {
            Ok(resp) => Some(resp.response_text),
            Err(e) => {
                log::warn!("analyst call failed, using fallback: {e}");
                None
            }
        }
    }

    /// The one-sentence difference between relation `r` and the similar
    /// earlier relation `r_s`, shown with one example of each.
    pub fn gen_relation_contrast(
        &self,
        r: &RelationLabel,
        r_s: &RelationLabel,
        example_r: &Sample,
        example_rs: &Sample,
    ) -> Result<RelationContrast> {
        if example_r.relation != *r || example_rs.relation != *r_s {
            return Err(Error::InvalidArgument(
                "contrast examples must belong to their relations".into(),
            ));
        }
        let key = contrast_key(r, r_s);
        if let Some(hit) = self
            .cache
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .relation_contrast
            .get(&key)
        {
            return Ok(hit.clone());
        }
        let answer = match self.mode {
            AnalystMode::Replay => {
                return Err(Error::ReplayMiss(format!(
                    "no cached relation contrast for '{key}'; rerun with analyst mode remote or fallback"
                )))
            }
            AnalystMode::Fallback => None,
            AnalystMode::Remote => self
                .ask(render_relation_contrast_prompt(r, example_r, r_s, example_rs))
                .and_then(|resp| {
                    let parsed = parse_contrast_response(&resp);
                    if parsed.is_none() {
                        log::warn!("malformed contrast response for '{key}': {resp:?}");
                    }
                    parsed
                }),
        };
        let contrast = match answer {
            Some(difference) => RelationContrast {
                difference,
                provenance: Provenance::Remote,
            },
            None => RelationContrast {
                difference: fallback_contrast(r, r_s),
                provenance: Provenance::Fallback,
            },
        };
        self.cache
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .relation_contrast
            .insert(key, contrast.clone());
        Ok(contrast)
    }

    /// Why the model chose `wrong` for `sample`, and why the gold relation is
    /// right.
    pub fn gen_error_analysis(&self, sample: &Sample, wrong: &Prediction) -> Result<ErrorAnalysis> {
        if let Some(hit) = self
            .cache
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .error_analysis
            .get(&sample.id)
        {
            return Ok(hit.clone());
        }
        let answer = match self.mode {
            AnalystMode::Replay => {
                return Err(Error::ReplayMiss(format!(
                    "no cached error analysis for sample '{}'; rerun with analyst mode remote or fallback",
                    sample.id
                )))
            }
            AnalystMode::Fallback => None,
            AnalystMode::Remote => self
                .ask(render_error_analysis_prompt(sample, wrong))
                .and_then(|resp| {
                    let parsed = parse_error_analysis_response(&resp);
                    if parsed.is_none() {
                        log::warn!("malformed error analysis for '{}': {resp:?}", sample.id);
                    }
                    parsed
                }),
        };
        let analysis = match answer {
            Some((error_reason, answer_analysis)) => ErrorAnalysis {
                error_reason,
                answer_analysis,
                provenance: Provenance::Remote,
            },
            None => {
                let (error_reason, answer_analysis) = fallback_error_analysis(&sample.relation, wrong);
                ErrorAnalysis {
                    error_reason,
                    answer_analysis,
                    provenance: Provenance::Fallback,
                }
            }
        };
        self.cache
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .error_analysis
            .insert(sample.id.clone(), analysis.clone());
        Ok(analysis)
    }
}

//! Recording and replaying backend traffic.
//!
//! A [`RecordingBackend`] logs every call as the wire request's hash plus the
//! wire response. A [`ReplayBackend`] answers from such a log, checking that
//! calls arrive in the same order with the same requests.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::protocol::{
    decode, CheckpointRequest, CheckpointResponse, Endpoint, InferRequest, InferResponse, RestoreRequest,
    RestoreResponse, TrainResponse, WireRequest,
};
use super::remote::train_request;
use super::{ModelBackend, TrainBatchItem, TrainParams, TrainSummary};
use crate::error::{Error, Result};
use crate::seed::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendCall {
    pub endpoint: String,
    pub request_sha256: String,
    pub response: Value,
}

fn fingerprint(request: &WireRequest) -> Result<(Endpoint, String)> {
    let body = request.to_body()?;
    Ok((request.endpoint(), sha256_hex(body.to_string().as_bytes())))
}

pub struct RecordingBackend<B> {
    inner: B,
    log: Vec<BackendCall>,
}

impl<B: ModelBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend { inner, log: Vec::new() }
    }

    pub fn log(&self) -> &[BackendCall] {
        &self.log
    }

    pub fn into_parts(self) -> (B, Vec<BackendCall>) {
        (self.inner, self.log)
    }

    fn record(&mut self, request: &WireRequest, response: Value) -> Result<()> {
        let (endpoint, request_sha256) = fingerprint(request)?;
        self.log.push(BackendCall {
            endpoint: endpoint.path().to_string(),
            request_sha256,
            response,
        });
        Ok(())
    }
}

impl<B: ModelBackend> ModelBackend for RecordingBackend<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn infer(&mut self, instruction_text: &str) -> Result<String> {
        let response_text = self.inner.infer(instruction_text)?;
        let request = WireRequest::Infer(InferRequest {
            instruction_text: instruction_text.to_string(),
        });
        self.record(&request, serde_json::to_value(InferResponse { response_text: response_text.clone() })?)?;
        Ok(response_text)
    }

    fn train(&mut self, batch: &[TrainBatchItem], params: &TrainParams) -> Result<TrainSummary> {
        let summary = self.inner.train(batch, params)?;
        let request = WireRequest::Train(train_request(batch, params));
        let response = TrainResponse {
            items_seen: summary.items_seen,
            loss: summary.loss,
        };
        self.record(&request, serde_json::to_value(response)?)?;
        Ok(summary)
    }

    fn checkpoint(&mut self) -> Result<String> {
        let checkpoint_id = self.inner.checkpoint()?;
        let response = CheckpointResponse {
            checkpoint_id: checkpoint_id.clone(),
        };
        self.record(&WireRequest::Checkpoint(CheckpointRequest {}), serde_json::to_value(response)?)?;
        Ok(checkpoint_id)
    }

    fn restore(&mut self, checkpoint_id: &str) -> Result<()> {
        self.inner.restore(checkpoint_id)?;
        let request = WireRequest::Restore(RestoreRequest {
            checkpoint_id: checkpoint_id.to_string(),
        });
        self.record(&request, serde_json::to_value(RestoreResponse {})?)
    }
}

pub struct ReplayBackend {
    identity: String,
    calls: VecDeque<BackendCall>,
}

impl ReplayBackend {
    pub fn new(identity: impl Into<String>, calls: Vec<BackendCall>) -> Self {
        ReplayBackend {
            identity: identity.into(),
            calls: calls.into(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.calls.len()
    }

    fn next(&mut self, request: &WireRequest) -> Result<Value> {
        let (endpoint, hash) = fingerprint(request)?;
        let call = self
            .calls
            .pop_front()
            .ok_or_else(|| Error::ReplayMiss(format!("log exhausted at {}", endpoint.path())))?;
        if call.endpoint != endpoint.path() || call.request_sha256 != hash {
            return Err(Error::ReplayMiss(format!(
                "expected {} {}, got {} {}",
                call.endpoint,
                &call.request_sha256[..12.min(call.request_sha256.len())],
                endpoint.path(),
                &hash[..12]
            )));
        }
        Ok(call.response)
    }
}

impl ModelBackend for ReplayBackend {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn infer(&mut self, instruction_text: &str) -> Result<String> {
        let request = WireRequest::Infer(InferRequest {
            instruction_text: instruction_text.to_string(),
        });
        let resp: InferResponse = decode(Endpoint::Infer, self.next(&request)?)?;
        Ok(resp.response_text)
    }

    fn train(&mut self, batch: &[TrainBatchItem], params: &TrainParams) -> Result<TrainSummary> {
        let request = WireRequest::Train(train_request(batch, params));
        let resp: TrainResponse = decode(Endpoint::Train, self.next(&request)?)?;
        Ok(TrainSummary {
            items_seen: resp.items_seen,
            loss: resp.loss,
        })
    }

    fn checkpoint(&mut self) -> Result<String> {
        let resp: CheckpointResponse = decode(
            Endpoint::Checkpoint,
            self.next(&WireRequest::Checkpoint(CheckpointRequest {}))?,
        )?;
        Ok(resp.checkpoint_id)
    }

    fn restore(&mut self, checkpoint_id: &str) -> Result<()> {
        let request = WireRequest::Restore(RestoreRequest {
            checkpoint_id: checkpoint_id.to_string(),
        });
        self.next(&request).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted::ScriptedBackend;
    use crate::corpus::{RelationLabel, Sample};
    use crate::instructions::build_simple;

    #[test]
    fn replay_reproduces_and_detects_divergence() {
        let rels = vec![RelationLabel::new("a"), RelationLabel::new("b")];
        let s = Sample::new("1", "hello there", "h", "t", "b");
        let text = build_simple(&s, &rels).unwrap().text;
        let mut rec = RecordingBackend::new(ScriptedBackend::first_candidate());
        let first = rec.infer(&text).unwrap();
        let ckpt = rec.checkpoint().unwrap();
        let (_, log) = rec.into_parts();

        let mut replay = ReplayBackend::new("replay", log.clone());
        assert_eq!(replay.infer(&text).unwrap(), first);
        assert_eq!(replay.checkpoint().unwrap(), ckpt);
        assert_eq!(replay.remaining(), 0);
        assert!(replay.infer(&text).is_err());

        let mut diverged = ReplayBackend::new("replay", log);
        assert!(matches!(diverged.infer("something else"), Err(Error::ReplayMiss(_))));
    }
}

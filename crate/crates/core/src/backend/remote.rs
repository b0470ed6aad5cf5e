use std::sync::Arc;

use super::protocol::{
    decode, CheckpointRequest, CheckpointResponse, InferRequest, InferResponse, RestoreRequest,
    TrainRequest, TrainResponse, Transport, WireRequest, WireTrainItem,
};
use super::{ModelBackend, TrainBatchItem, TrainParams, TrainSummary};
use crate::error::Result;

/// Backend living in the training service, reached over the wire protocol.
pub struct RemoteBackend {
    transport: Arc<dyn Transport>,
    identity: String,
}

impl RemoteBackend {
    pub fn new(transport: Arc<dyn Transport>, identity: impl Into<String>) -> Self {
        RemoteBackend {
            transport,
            identity: identity.into(),
        }
    }

    fn call<T: serde::de::DeserializeOwned>(&self, request: WireRequest) -> Result<T> {
        let endpoint = request.endpoint();
        let body = self.transport.post(endpoint, &request.to_body()?)?;
        decode(endpoint, body)
    }
}

pub fn train_request(batch: &[TrainBatchItem], params: &TrainParams) -> TrainRequest {
    TrainRequest {
        items: batch
            .iter()
            .map(|item| WireTrainItem {
                instruction_text: item.instruction_text.clone(),
                target: item.target.to_string(),
                weight_hint: item.weight_hint.as_str().to_string(),
                wrong_relation: item.wrong_relation.as_ref().map(|r| r.to_string()),
            })
            .collect(),
        epochs: params.epochs,
        learning_rate: params.learning_rate,
        batch_size: params.batch_size,
        seed: params.seed,
    }
}

impl ModelBackend for RemoteBackend {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn infer(&mut self, instruction_text: &str) -> Result<String> {
        let resp: InferResponse = self.call(WireRequest::Infer(InferRequest {
            instruction_text: instruction_text.to_string(),
        }))?;
        Ok(resp.response_text)
    }

    fn train(&mut self, batch: &[TrainBatchItem], params: &TrainParams) -> Result<TrainSummary> {
        let resp: TrainResponse = self.call(WireRequest::Train(train_request(batch, params)))?;
        Ok(TrainSummary {
            items_seen: resp.items_seen,
            loss: resp.loss,
        })
    }

    fn checkpoint(&mut self) -> Result<String> {
        let resp: CheckpointResponse = self.call(WireRequest::Checkpoint(CheckpointRequest {}))?;
        Ok(resp.checkpoint_id)
    }

    fn restore(&mut self, checkpoint_id: &str) -> Result<()> {
        let _: serde_json::Value = self.call(WireRequest::Restore(RestoreRequest {
            checkpoint_id: checkpoint_id.to_string(),
        }))?;
        Ok(())
    }
}

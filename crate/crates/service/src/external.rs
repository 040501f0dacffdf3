//! Blocking HTTP client for an external question generator. The endpoint
//! receives the serialized prompt as JSON and answers `{"text": ...}`.

use std::time::Duration;

use anamnesis_core::nlg::{ExternalError, ExternalGenerator, ExternalRequest, ExternalResponse};

pub struct HttpGenerator {
    client: reqwest::blocking::Client,
    endpoint: String,
}

impl HttpGenerator {
    /// Must be called outside an async runtime.
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, ExternalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ExternalError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
        })
    }
}

impl ExternalGenerator for HttpGenerator {
    fn generate(&self, request: &ExternalRequest) -> Result<ExternalResponse, ExternalError> {
        let response = self.client.post(&self.endpoint).json(request).send().map_err(|e| {
            if e.is_timeout() {
                ExternalError::Timeout
            } else {
                ExternalError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(ExternalError::Protocol(format!("status {status}")));
        }
        response
            .json::<ExternalResponse>()
            .map_err(|e| ExternalError::Protocol(e.to_string()))
    }
}

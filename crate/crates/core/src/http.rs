//! Blocking JSON-over-HTTP helper shared by the chat and embedding clients.

use std::time::Duration;

use serde_json::Value;
use ureq::Agent;

use crate::error::{Error, Result};

#[derive(Clone)]
pub(crate) struct JsonClient {
    agent: Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl JsonClient {
    pub(crate) fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        JsonClient {
            agent,
            endpoint: endpoint.into(),
            api_key,
        }
    }

    pub(crate) fn api_key(&self) -> Option<String> {
        self.api_key.clone()
    }

    pub(crate) fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub(crate) fn post(&self, body: &Value) -> Result<Value> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Error::Transport(format!("{}: {e}", self.endpoint)))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(format!("{}: {e}", self.endpoint)))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(Error::Transport(format!("{}: HTTP {status}: {snippet}", self.endpoint)));
        }
        serde_json::from_str(&text).map_err(|e| Error::Transport(format!("{}: malformed JSON response: {e}", self.endpoint)))
    }
}

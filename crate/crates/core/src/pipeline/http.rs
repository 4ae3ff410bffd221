use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::client::{ChatClient, ChatMessage, ChatRequest, TransportError};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "ALAB_API_KEY";

/// Posts `{model, messages}` to a chat endpoint and reads `{content}` back.
pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct Body<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct Reply {
    content: String,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            endpoint: endpoint.into(),
            api_key,
            http,
        })
    }

    /// Reads the credential from the environment; a missing key is allowed
    /// for endpoints that need none.
    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Result<Self> {
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok(), timeout)
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, TransportError> {
        let mut req = self.http.post(&self.endpoint).json(&Body {
            model: &request.model,
            messages: &request.messages,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::retryable(format!("request {}: {e}", request.id)))?;
        let status = resp.status();
        if !status.is_success() {
            let msg = format!("request {}: HTTP {status}", request.id);
            let retry = status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408;
            return Err(TransportError { message: msg, retryable: retry });
        }
        resp.json::<Reply>()
            .map(|r| r.content)
            .map_err(|e| TransportError::fatal(format!("request {}: bad response body: {e}", request.id)))
    }
}

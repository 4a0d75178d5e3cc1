use std::time::Duration;

use serde_json::json;

use crate::error::{Error, Result};
use crate::http::JsonClient;

/// A chat-completion backend. Implementations must tolerate concurrent calls.
pub trait ChatClient: Send + Sync {
    fn complete(&self, system_prompt: &str, user_prompt: &str) -> Result<String>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, system_prompt: &str, user_prompt: &str) -> Result<String> {
        (**self).complete(system_prompt, user_prompt)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, system_prompt: &str, user_prompt: &str) -> Result<String> {
        (**self).complete(system_prompt, user_prompt)
    }
}

/// Speaks the common chat-completions schema:
/// `{"model", "messages": [{"role", "content"}], "temperature"}` in,
/// `{"choices": [{"message": {"content"}}]}` out.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    client: JsonClient,
    model: String,
    temperature: f64,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        HttpChatClient {
            client: JsonClient::new(endpoint, api_key, Duration::from_secs(120)),
            model: model.into(),
            temperature: 0.0,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.client = JsonClient::new(self.client.endpoint().to_string(), self.client.api_key(), timeout);
        self
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, system_prompt: &str, user_prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_prompt},
            ],
        });
        let resp = self.client.post(&body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Transport(format!("{}: response has no choices[0].message.content", self.client.endpoint())))
    }
}

/// Returns the user prompt unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoChat;

impl ChatClient for EchoChat {
    fn complete(&self, _system: &str, user: &str) -> Result<String> {
        Ok(user.to_string())
    }
}

/// Always returns the same reply.
#[derive(Debug, Clone)]
pub struct FixedChat(pub String);

impl ChatClient for FixedChat {
    fn complete(&self, _system: &str, _user: &str) -> Result<String> {
        Ok(self.0.clone())
    }
}

/// Delegates to a closure.
pub struct FnChat<F>(pub F);

impl<F> ChatClient for FnChat<F>
where
    F: Fn(&str, &str) -> Result<String> + Send + Sync,
{
    fn complete(&self, system: &str, user: &str) -> Result<String> {
        (self.0)(system, user)
    }
}

/// No model configured; every call fails with a transport error.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineChat;

impl ChatClient for OfflineChat {
    fn complete(&self, _system: &str, _user: &str) -> Result<String> {
        Err(Error::Transport("chat client is offline".into()))
    }
}

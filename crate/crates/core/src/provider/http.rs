//! OpenAI-compatible chat-completions and embeddings client.
//!
//! Transient failures (timeouts, 429, 5xx) are retried with capped
//! exponential backoff; a configurable semaphore bounds concurrent
//! in-flight requests across threads.

use super::{ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, Purpose, TokenLedger};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Base URL up to but excluding `/chat/completions`, e.g.
    /// `https://api.openai.com/v1`.
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_concurrent_requests: usize,
    pub embedding_dimension: usize,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            chat_model: "gpt-4o".to_string(),
            embedding_model: "text-embedding-3-small".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            timeout_secs: 120,
            max_retries: 3,
            max_concurrent_requests: 8,
            embedding_dimension: 1536,
        }
    }
}

/// Counting semaphore over std primitives (the client is blocking).
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    ledger: Arc<TokenLedger>,
    semaphore: Semaphore,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Serialize)]
struct EmbeddingBody<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingReply {
    data: Vec<EmbeddingDatum>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig, ledger: Arc<TokenLedger>) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            Error::Config(format!(
                "environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Provider(format!("failed to build HTTP client: {e}")))?;
        let semaphore = Semaphore::new(config.max_concurrent_requests);
        Ok(Self {
            config,
            api_key,
            client,
            ledger,
            semaphore,
        })
    }

    /// POST with retries. Retries transport errors, 429 and 5xx; anything
    /// else is surfaced immediately.
    fn post_json<B: Serialize>(&self, url: &str, body: &B) -> Result<String> {
        let _permit = self.semaphore.acquire();
        let mut backoff = Duration::from_millis(250);
        let attempts = self.config.max_retries.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff = (backoff * 2).min(Duration::from_secs(4));
            }
            let sent = self
                .client
                .post(url)
                .bearer_auth(&self.api_key)
                .json(body)
                .send();
            match sent {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .text()
                            .map_err(|e| Error::Provider(format!("failed to read body: {e}")));
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    let body = resp.text().unwrap_or_default();
                    last_error = format!("HTTP {status}: {}", truncate(&body, 200));
                    if !retryable {
                        return Err(Error::Provider(last_error));
                    }
                }
                Err(e) => {
                    last_error = format!("transport error: {e}");
                }
            }
            log::warn!("provider call failed (attempt {}): {last_error}", attempt + 1);
        }
        Err(Error::Provider(format!(
            "exhausted {attempts} attempts: {last_error}"
        )))
    }
}

fn truncate(s: &str, limit: usize) -> &str {
    match s.char_indices().nth(limit) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

impl ChatProvider for HttpProvider {
    fn chat_complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        if req.messages.is_empty() {
            return Err(Error::Contract("chat request has no messages".into()));
        }
        let messages: Vec<WireMessage> = req
            .messages
            .iter()
            .map(|m| WireMessage {
                role: match m.role {
                    super::Role::System => "system",
                    super::Role::User => "user",
                    super::Role::Assistant => "assistant",
                },
                content: &m.text,
            })
            .collect();
        let body = ChatBody {
            model: &self.config.chat_model,
            messages,
            temperature: req.temperature,
            top_p: req.top_p,
            max_tokens: req.max_tokens,
        };
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let raw = self.post_json(&url, &body)?;
        let reply: ChatReply = serde_json::from_str(&raw)
            .map_err(|e| Error::Protocol(format!("malformed chat reply: {e}")))?;
        let text = reply
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| Error::Protocol("chat reply has no choices".into()))?;
        let usage = reply.usage.unwrap_or_default();
        self.ledger
            .record(req.purpose, usage.prompt_tokens, usage.completion_tokens);
        Ok(ChatResponse {
            text,
            input_tokens: usage.prompt_tokens,
            output_tokens: usage.completion_tokens,
        })
    }
}

impl EmbeddingProvider for HttpProvider {
    fn embed(&self, text: &str, purpose: Purpose) -> Result<Vec<f32>> {
        if text.is_empty() {
            return Err(Error::Contract("embedding text is empty".into()));
        }
        let body = EmbeddingBody {
            model: &self.config.embedding_model,
            input: text,
        };
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let raw = self.post_json(&url, &body)?;
        let reply: EmbeddingReply = serde_json::from_str(&raw)
            .map_err(|e| Error::Protocol(format!("malformed embedding reply: {e}")))?;
        let datum = reply
            .data
            .into_iter()
            .next()
            .ok_or_else(|| Error::Protocol("embedding reply has no data".into()))?;
        let usage = reply.usage.unwrap_or_default();
        self.ledger
            .record(purpose, usage.prompt_tokens, usage.completion_tokens);
        Ok(datum.embedding)
    }

    fn dimension(&self) -> usize {
        self.config.embedding_dimension
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::ChatMessage;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Minimal canned-response HTTP server for exercising the client.
    /// Returns the base url, a join handle, and the captured request texts.
    fn serve(
        responses: Vec<(u16, String)>,
    ) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut captured = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 16384];
                let n = stream.read(&mut buf).unwrap_or(0);
                captured.push(String::from_utf8_lossy(&buf[..n]).into_owned());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            captured
        });
        (format!("http://{addr}"), handle)
    }

    fn provider_for(base_url: String, ledger: Arc<TokenLedger>) -> HttpProvider {
        std::env::set_var("RMCTS_TEST_KEY", "k");
        let config = HttpProviderConfig {
            base_url,
            api_key_env: "RMCTS_TEST_KEY".to_string(),
            timeout_secs: 5,
            max_retries: 3,
            ..HttpProviderConfig::default()
        };
        HttpProvider::new(config, ledger).unwrap()
    }

    #[test]
    fn parses_reply_records_usage_and_passes_sampling_params() {
        let body = r#"{"choices":[{"message":{"content":"```click [5]```"}}],"usage":{"prompt_tokens":42,"completion_tokens":7}}"#;
        let (url, handle) = serve(vec![(200, body.to_string())]);
        let ledger = TokenLedger::new();
        let p = provider_for(url, ledger.clone());
        let req = ChatRequest::new(Purpose::Policy, vec![ChatMessage::user("hi")]);
        let resp = p.chat_complete(&req).unwrap();
        assert_eq!(resp.text, "```click [5]```");
        assert_eq!(resp.input_tokens, 42);
        assert_eq!(ledger.totals().output_tokens, 7);
        let captured = handle.join().unwrap();
        // sampling parameters travel verbatim in the request body
        assert!(captured[0].contains("\"temperature\":1.0"), "{}", captured[0]);
        assert!(captured[0].contains("\"top_p\":0.95"), "{}", captured[0]);
        assert!(captured[0].contains("authorization: Bearer k") || captured[0].contains("Authorization: Bearer k"));
    }

    #[test]
    fn retries_transient_failures_then_succeeds() {
        let ok = r#"{"choices":[{"message":{"content":"ok"}}],"usage":{"prompt_tokens":1,"completion_tokens":1}}"#;
        let (url, handle) = serve(vec![
            (500, "{}".to_string()),
            (429, "{}".to_string()),
            (200, ok.to_string()),
        ]);
        let p = provider_for(url, TokenLedger::new());
        let req = ChatRequest::new(Purpose::Value, vec![ChatMessage::user("hi")]);
        assert_eq!(p.chat_complete(&req).unwrap().text, "ok");
        handle.join().unwrap();
    }

    #[test]
    fn exhausted_retries_is_a_provider_error() {
        let (url, handle) = serve(vec![
            (500, "{}".to_string()),
            (500, "{}".to_string()),
            (500, "{}".to_string()),
        ]);
        let p = provider_for(url, TokenLedger::new());
        let req = ChatRequest::new(Purpose::Value, vec![ChatMessage::user("hi")]);
        match p.chat_complete(&req) {
            Err(Error::Provider(msg)) => assert!(msg.contains("exhausted"), "{msg}"),
            other => panic!("expected provider error, got {other:?}"),
        }
        handle.join().unwrap();
    }

    #[test]
    fn malformed_body_is_a_protocol_error() {
        let (url, handle) = serve(vec![(200, "not json".to_string())]);
        let p = provider_for(url, TokenLedger::new());
        let req = ChatRequest::new(Purpose::Value, vec![ChatMessage::user("hi")]);
        assert!(matches!(p.chat_complete(&req), Err(Error::Protocol(_))));
        handle.join().unwrap();
    }
}

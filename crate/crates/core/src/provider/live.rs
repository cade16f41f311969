//! Generic chat-completion adapter.
//!
//! Sends one request per chunk to `endpoint` with a bearer token taken from
//! `YC_PROVIDER_TOKEN` and expects `choices[0].message.content` to hold a
//! [`ProviderOutput`] document. Replies that fail to parse are retried twice.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use crate::ingest::Chunk;

use super::{AnalysisProvider, ProviderConfig, ProviderError, ProviderOutput, Task};

pub const TOKEN_ENV: &str = "YC_PROVIDER_TOKEN";

const MAX_ATTEMPTS: u32 = 3;

pub const EXTRACTION_SYSTEM_PROMPT: &str = "\
You analyze short-video content for a family screening tool. You receive a \
transcript aligned to keyframes. Reply with a single JSON object and nothing \
else, using exactly these fields:
{
  \"keywords\": [{\"name\": string, \"score\": integer -2..2}],
  \"risks\": [{\"category\": string, \"level\": string, \"rationale\": string}],
  \"age_band\": string,
  \"appropriateness\": [{\"category\": string, \"value\": integer, \"rationale\": string}],
  \"summary\": string
}
Keyword scores rate how much of the keyword's content the video contains: \
-2 very low, -1 low, 0 medium, 1 high, 2 very high. Use only the risk \
categories, level names, age bands and appropriateness categories defined \
in the guidelines you are given.";

/// Counting gate limiting concurrent requests.
struct InFlight {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.current.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        InFlightGuard { gate: self }
    }
}

struct InFlightGuard<'a> {
    gate: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.gate.current.lock().unwrap() -= 1;
        self.gate.freed.notify_one();
    }
}

pub struct LiveProvider {
    endpoint: String,
    model: String,
    token: Option<String>,
    timeout: Duration,
    gate: InFlight,
}

impl LiveProvider {
    pub fn new(cfg: &ProviderConfig) -> Result<Self, ProviderError> {
        let endpoint = cfg.endpoint.clone().ok_or_else(|| {
            ProviderError::InvalidConfig("live provider requires endpoint".into())
        })?;
        let model = cfg.model_name.clone().ok_or_else(|| {
            ProviderError::InvalidConfig("live provider requires model_name".into())
        })?;
        Ok(Self {
            endpoint,
            model,
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            timeout: Duration::from_millis(cfg.request_timeout_ms),
            gate: InFlight {
                max: cfg.max_in_flight.max(1),
                current: Mutex::new(0),
                freed: Condvar::new(),
            },
        })
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    fn request_body(&self, chunk: &Chunk, task: Task<'_>) -> Value {
        let mut user = String::new();
        match task {
            Task::Extract => user.push_str(
                "Task: extract keyword features only. Leave risks and appropriateness empty and \
                 set age_band to an empty string.\n\n",
            ),
            Task::Censor { context, .. } => {
                user.push_str("Task: assess risk and appropriateness under these guidelines.\n\n");
                user.push_str(context);
                user.push_str("\n\n");
            }
        }
        user.push_str("Transcript:\n");
        user.push_str(&chunk.annotated_transcript());
        json!({
            "model": self.model,
            "temperature": 0,
            "response_format": { "type": "json_object" },
            "messages": [
                { "role": "system", "content": EXTRACTION_SYSTEM_PROMPT },
                { "role": "user", "content": user },
            ],
        })
    }

    fn reply_text(body: &Value) -> Result<&str, String> {
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

impl AnalysisProvider for LiveProvider {
    fn id(&self) -> String {
        format!("live:{}", self.model)
    }

    fn analyze_chunk(
        &self,
        chunk: &Chunk,
        task: Task<'_>,
    ) -> Result<ProviderOutput, ProviderError> {
        let _slot = self.gate.acquire();
        // A blocking client owns its own runtime; build it on the calling
        // thread so it is never dropped inside an async context.
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| ProviderError::ProviderUnavailable(e.to_string()))?;
        let body = self.request_body(chunk, task);

        let mut last_error = String::new();
        for _attempt in 0..MAX_ATTEMPTS {
            let mut req = client.post(&self.endpoint).json(&body);
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            let resp = req
                .send()
                .map_err(|e| ProviderError::ProviderUnavailable(e.to_string()))?;
            let status = resp.status();
            if !status.is_success() {
                return Err(ProviderError::ProviderUnavailable(format!("HTTP {status}")));
            }
            let text = resp
                .text()
                .map_err(|e| ProviderError::ProviderUnavailable(e.to_string()))?;
            let parsed = serde_json::from_str::<Value>(&text)
                .map_err(|e| e.to_string())
                .and_then(|v| Self::reply_text(&v).and_then(ProviderOutput::parse));
            match parsed {
                Ok(output) => return Ok(output),
                Err(e) => last_error = e,
            }
        }
        Err(ProviderError::MalformedProviderOutput {
            attempts: MAX_ATTEMPTS,
            message: last_error,
        })
    }
}

//! Chat-completions client with bounded concurrency and exponential backoff.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{Provider, ProviderConfig, ProviderError};

/// Counting gate limiting concurrent requests.
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            limit,
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpProvider {
    agent: Agent,
    endpoint: String,
    model: String,
    auth_token: Option<String>,
    temperature: f64,
    max_retries: u32,
    initial_backoff: Duration,
    gate: Gate,
}

enum Failure {
    Retryable(String),
    Fatal(ProviderError),
}

impl HttpProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| ProviderError::Config("http backend needs an endpoint".into()))?;
        let model = config
            .model
            .clone()
            .ok_or_else(|| ProviderError::Config("http backend needs a model name".into()))?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            model,
            auth_token: config.auth_token.clone(),
            temperature: config.temperature,
            max_retries: config.max_retries,
            initial_backoff: Duration::from_millis(config.initial_backoff_ms),
            gate: Gate::new(config.max_in_flight.max(1)),
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, Failure> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.auth_token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(ProviderError::Http { status, body }));
        }
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Retryable(format!("reading response: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Failure::Fatal(ProviderError::BadResponse("missing choices[0].message.content".into())))
    }
}

impl Provider for HttpProvider {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        let body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": self.temperature,
        });
        let _permit = self.gate.acquire();
        let mut backoff = self.initial_backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(message)) => {
                    if attempts > self.max_retries {
                        return Err(ProviderError::ProviderUnavailable { attempts, message });
                    }
                    log::warn!("request attempt {attempts} failed ({message}); retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
}

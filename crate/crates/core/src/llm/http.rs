use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendConfig, BackendError, ChatBackend, ChatMessage};

/// OpenAI-style chat-completions client with exponential backoff.
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Ok(HttpBackend { config, agent, api_key })
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let endpoint = self.config.endpoint.as_deref().expect("validated");
        let mut request = self.agent.post(endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|e| Attempt::Retry(BackendError::Network(e.to_string()), None))?;
        let status = response.status().as_u16();
        if status == 429 {
            let wait = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(Attempt::Retry(BackendError::RateLimited, wait));
        }
        let text = response.body_mut().read_to_string().map_err(|e| Attempt::Retry(BackendError::Network(e.to_string()), None))?;
        if status >= 500 {
            return Err(Attempt::Retry(BackendError::Network(format!("HTTP {status}: {text}")), None));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(BackendError::Network(format!("HTTP {status}: {text}"))));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| Attempt::Fatal(BackendError::MalformedResponse(e.to_string())))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Attempt::Fatal(BackendError::MalformedResponse("no choices[0].message.content".into())))
    }
}

enum Attempt {
    Retry(BackendError, Option<Duration>),
    Fatal(BackendError),
}

impl ChatBackend for HttpBackend {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        });
        let mut delay = Duration::from_millis(self.config.backoff_base_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e, wait)) => {
                    if attempt >= self.config.max_retries {
                        return Err(e);
                    }
                    std::thread::sleep(wait.unwrap_or(delay));
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

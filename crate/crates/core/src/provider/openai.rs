use std::time::Duration;

use serde_json::{json, Value};

use super::{CompletionProvider, EmbeddingProvider, ProviderError};

const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

fn client(timeout: Duration) -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ProviderError::Request(e.to_string()))
}

fn post(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: &str,
    body: &Value,
) -> Result<Value, ProviderError> {
    let resp = client
        .post(url)
        .bearer_auth(api_key)
        .json(body)
        .send()
        .map_err(|e| ProviderError::Request(e.to_string()))?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| ProviderError::Request(e.to_string()))?;
    if !status.is_success() {
        let snippet: String = text.chars().take(300).collect();
        return Err(ProviderError::Request(format!("HTTP {status}: {snippet}")));
    }
    serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))
}

/// Chat-completions client for OpenAI-compatible endpoints.
pub struct OpenAiCompletion {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
    model: String,
    temperature: f64,
}

impl OpenAiCompletion {
    pub fn new(
        base_url: Option<&str>,
        api_key: String,
        model: impl Into<String>,
        temperature: f64,
    ) -> Result<Self, ProviderError> {
        Ok(Self {
            client: client(Duration::from_secs(120))?,
            base_url: base_url.unwrap_or(DEFAULT_BASE_URL).trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            temperature,
        })
    }
}

impl CompletionProvider for OpenAiCompletion {
    fn model_tag(&self) -> String {
        format!("openai:{}", self.model)
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let v = post(&self.client, &format!("{}/chat/completions", self.base_url), &self.api_key, &body)?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))
    }
}

/// Embeddings client for OpenAI-compatible endpoints.
pub struct OpenAiEmbedding {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
    model: String,
    dimension: usize,
}

impl OpenAiEmbedding {
    pub fn new(
        base_url: Option<&str>,
        api_key: String,
        model: impl Into<String>,
        dimension: usize,
    ) -> Result<Self, ProviderError> {
        Ok(Self {
            client: client(Duration::from_secs(60))?,
            base_url: base_url.unwrap_or(DEFAULT_BASE_URL).trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            dimension,
        })
    }
}

impl EmbeddingProvider for OpenAiEmbedding {
    fn provider_tag(&self) -> String {
        format!("openai:{}:d{}", self.model, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let body = json!({"model": self.model, "input": text});
        let v = post(&self.client, &format!("{}/embeddings", self.base_url), &self.api_key, &body)?;
        let values = v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| ProviderError::Malformed("missing data[0].embedding".into()))?;
        values
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| ProviderError::Malformed("non-numeric embedding value".into()))
            })
            .collect()
    }
}

//! Generation and embedding clients. The engine only passes prompts through
//! and reads back text.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::QaPair;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::rag::prompt::GenerationParams;
use crate::seed;

pub trait GenerationClient: Send + Sync {
    fn generate(&self, prompt: &str, params: GenerationParams) -> Result<String>;
}

pub trait EmbeddingClient: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding>;
}

/// Adapter for closures, handy for scripted replies.
pub struct FnClient<F>(pub F);

impl<F> GenerationClient for FnClient<F>
where
    F: Fn(&str, GenerationParams) -> Result<String> + Send + Sync,
{
    fn generate(&self, prompt: &str, params: GenerationParams) -> Result<String> {
        (self.0)(prompt, params)
    }
}

/// Answers every prompt with the gold answer of the QA pair whose question it
/// contains (the longest such question wins).
pub struct GoldEchoClient {
    pairs: Vec<(String, String)>,
}

impl GoldEchoClient {
    pub fn new(pairs: &[QaPair]) -> Self {
        let mut pairs: Vec<(String, String)> = pairs
            .iter()
            .map(|p| (format!("Question: {}", p.question), p.answer.clone()))
            .collect();
        pairs.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Self { pairs }
    }
}

impl GenerationClient for GoldEchoClient {
    fn generate(&self, prompt: &str, _: GenerationParams) -> Result<String> {
        self.pairs
            .iter()
            .find(|(q, _)| prompt.contains(q.as_str()))
            .map(|(_, a)| a.clone())
            .ok_or_else(|| Error::Client {
                stage: "generate".into(),
                message: "prompt matches no known question".into(),
            })
    }
}

/// Offline text embedder: signed feature hashing of lowercased words and
/// character trigrams, L2-normalised.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        Ok(Self { dim })
    }

    fn add(&self, v: &mut [f64], feature: &str) {
        let h = seed::derive(0, &[feature]);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % self.dim as u64) as usize] += sign;
    }
}

impl EmbeddingClient for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut v = vec![0.0; self.dim];
        let lowered = text.to_lowercase();
        for word in lowered.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            self.add(&mut v, &format!("w:{word}"));
            let chars: Vec<char> = format!(" {word} ").chars().collect();
            for tri in chars.windows(3) {
                self.add(&mut v, &format!("c:{}", tri.iter().collect::<String>()));
            }
        }
        Ok(Embedding::new(v)?.normalized())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    /// Completions endpoint of an OpenAI-compatible server.
    pub endpoint: String,
    pub model: String,
    pub timeout_ms: u64,
    pub retries: u32,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub parallelism: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/completions".into(),
            model: String::new(),
            timeout_ms: 60_000,
            retries: 2,
            api_key_env: None,
            parallelism: 4,
        }
    }
}

/// Blocking client for `POST {endpoint}` with a completions-style body.
pub struct HttpGenerationClient {
    config: ClientConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpGenerationClient {
    pub fn new(config: ClientConfig) -> Result<Self> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| Error::Client {
                stage: "setup".into(),
                message: format!("environment variable {var} is not set"),
            })?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        Ok(Self { config, api_key, agent })
    }

    fn request(&self, prompt: &str, params: GenerationParams) -> std::result::Result<String, String> {
        let body = serde_json::json!({
            "model": self.config.model,
            "prompt": prompt,
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let value: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        value["choices"][0]["text"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| format!("response has no choices[0].text: {value}"))
    }
}

impl GenerationClient for HttpGenerationClient {
    fn generate(&self, prompt: &str, params: GenerationParams) -> Result<String> {
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            match self.request(prompt, params) {
                Ok(text) => return Ok(text),
                Err(e) => last = e,
            }
        }
        Err(Error::Client {
            stage: "generate".into(),
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_embedder_is_deterministic_and_normalised() {
        let e = HashingEmbedder::new(64).unwrap();
        let a = e.embed("Lionel Messi was born in Rosario").unwrap();
        assert_eq!(a, e.embed("Lionel Messi was born in Rosario").unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let near = e.embed("Where was Lionel Messi born?").unwrap().dot(&a).unwrap();
        let far = e.embed("quarterly tax filing").unwrap().dot(&a).unwrap();
        assert!(near > far);
        assert_eq!(e.embed("").unwrap(), Embedding::zeros(64));
        assert!(HashingEmbedder::new(0).is_err());
    }

    #[test]
    fn unreachable_endpoint_is_a_client_error() {
        let c = HttpGenerationClient::new(ClientConfig {
            endpoint: "http://127.0.0.1:9/v1/completions".into(),
            timeout_ms: 500,
            retries: 0,
            ..Default::default()
        })
        .unwrap();
        let r = c.generate("hi", crate::rag::prompt::ANSWER_PARAMS);
        assert!(matches!(r, Err(Error::Client { .. })));
    }
}

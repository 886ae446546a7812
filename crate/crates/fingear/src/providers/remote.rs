//! JSON-over-HTTP provider client.
//!
//! Wire contract, one route per capability:
//!
//! ```text
//! POST <endpoint>/<capability>
//! body:     {"inputs": [...], "params": {...}}
//! response: {"outputs": [...]}
//! ```
//!
//! Capabilities: `embed`, `summarize`, `generate_questions`, `score_pair`,
//! `judge_relevancy`, `read_answer`. Any non-200 status, transport failure,
//! or malformed body maps to [`Error::ProviderUnavailable`]. Requests are
//! idempotent and retried up to the configured count.

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::error::{Error, Result};

use super::{EmbeddingVector, Provider, ProviderConfig, SpaceTag};

#[derive(Debug, Clone)]
pub struct RemoteProvider {
    endpoint: String,
    model_name: String,
    retries: u32,
    api_key: Option<String>,
    agent: ureq::Agent,
    dimension: usize,
}

impl RemoteProvider {
    pub fn new(cfg: &ProviderConfig, api_key: Option<String>) -> Result<Self> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config("remote provider requires an endpoint".into()))?;
        let agent = ureq::AgentBuilder::new()
            .timeout(cfg.timeout())
            .build();
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model_name: cfg.model_name.clone(),
            retries: cfg.retries,
            api_key,
            agent,
            dimension: cfg.dimension,
        })
    }

    fn call<T: DeserializeOwned>(&self, capability: &str, inputs: Value, params: Value) -> Result<Vec<T>> {
        let url = format!("{}/{}", self.endpoint, capability);
        let body = json!({ "inputs": inputs, "params": params });
        let mut last_err = String::new();
        for _ in 0..=self.retries {
            let mut req = self.agent.post(&url).set("content-type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.set("authorization", &format!("Bearer {key}"));
            }
            match req.send_string(&body.to_string()) {
                Ok(resp) => {
                    let parsed: std::result::Result<Value, _> = resp.into_json();
                    match parsed {
                        Ok(v) => {
                            let outputs = v.get("outputs").cloned().ok_or_else(|| {
                                Error::ProviderUnavailable(format!(
                                    "{capability}: response missing `outputs`"
                                ))
                            })?;
                            return serde_json::from_value(outputs).map_err(|e| {
                                Error::ProviderUnavailable(format!(
                                    "{capability}: bad outputs payload: {e}"
                                ))
                            });
                        }
                        Err(e) => last_err = format!("invalid JSON response: {e}"),
                    }
                }
                Err(ureq::Error::Status(code, _)) => last_err = format!("HTTP {code}"),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::ProviderUnavailable(format!("{capability} at {url}: {last_err}")))
    }

    fn base_params(&self) -> Value {
        json!({ "model": self.model_name })
    }
}

impl Provider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn embed_texts(&self, texts: &[String], space: SpaceTag) -> Result<Vec<EmbeddingVector>> {
        let mut params = self.base_params();
        params["space"] = json!(space.as_str());
        params["dimension"] = json!(self.dimension);
        let raw: Vec<Vec<f32>> = self.call("embed", json!(texts), params)?;
        if raw.len() != texts.len() {
            return Err(Error::ProviderUnavailable(format!(
                "embed: expected {} vectors, got {}",
                texts.len(),
                raw.len()
            )));
        }
        raw.into_iter()
            .map(|values| {
                if values.len() != self.dimension {
                    return Err(Error::DimensionMismatch {
                        expected: self.dimension,
                        got: values.len(),
                    });
                }
                // Normalize defensively so downstream cosine math holds.
                let norm = values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                let values = if norm > 0.0 {
                    values.iter().map(|v| (*v as f64 / norm) as f32).collect()
                } else {
                    values
                };
                Ok(EmbeddingVector {
                    values,
                    space_tag: space,
                })
            })
            .collect()
    }

    fn summarize(&self, text: &str, template: &str) -> Result<String> {
        let mut params = self.base_params();
        params["template"] = json!(template);
        let out: Vec<String> = self.call("summarize", json!([text]), params)?;
        out.into_iter()
            .next()
            .ok_or_else(|| Error::ProviderUnavailable("summarize: empty outputs".into()))
    }

    fn generate_questions(&self, summary: &str, n: usize) -> Result<Vec<String>> {
        let mut params = self.base_params();
        params["num_questions"] = json!(n);
        let out: Vec<String> = self.call("generate_questions", json!([summary]), params)?;
        if out.len() != n {
            return Err(Error::ProviderUnavailable(format!(
                "generate_questions: expected {n} questions, got {}",
                out.len()
            )));
        }
        Ok(out)
    }

    fn score_pair(&self, query: &str, passage: &str) -> Result<f64> {
        let out: Vec<f64> = self.call(
            "score_pair",
            json!([[query, passage]]),
            self.base_params(),
        )?;
        out.into_iter()
            .next()
            .ok_or_else(|| Error::ProviderUnavailable("score_pair: empty outputs".into()))
    }

    fn judge_relevancy(&self, query: &str, passages: &[String]) -> Result<f64> {
        let mut params = self.base_params();
        params["query"] = json!(query);
        let out: Vec<f64> = self.call("judge_relevancy", json!(passages), params)?;
        out.into_iter()
            .next()
            .map(|v| v.clamp(0.0, 1.0))
            .ok_or_else(|| Error::ProviderUnavailable("judge_relevancy: empty outputs".into()))
    }

    fn read_answer(&self, query: &str, passages: &[String]) -> Result<String> {
        let mut params = self.base_params();
        params["query"] = json!(query);
        let out: Vec<String> = self.call("read_answer", json!(passages), params)?;
        out.into_iter()
            .next()
            .ok_or_else(|| Error::ProviderUnavailable("read_answer: empty outputs".into()))
    }
}

//! HTTP clients for externally hosted models.
//!
//! Every endpoint takes and returns JSON over a blocking POST:
//!
//! | client               | request body                          | response body             |
//! |----------------------|---------------------------------------|---------------------------|
//! | [`HttpEmbedder`]     | `{"texts": [..]}`                     | `{"embeddings": [[..]]}`  |
//! | [`HttpExtractor`]    | the `SourceRecord`                    | `{"triples": [..]}`       |
//! | [`HttpCaptioner`]    | `{"image_base64": ".."}`              | `{"caption": ".."}`       |
//! | [`HttpCompletion`]   | `{"context": "..", "question": ".."}` | `{"text": ".."}`          |
//! | [`HttpJudge`]        | `{"question", "gold", "answer"}`      | `{"score": 1..=5}`        |

use std::time::Duration;

use base64::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::eval::Scorer;
use crate::extract::caption::{CaptionClient, CaptionError, ImageInput};
use crate::extract::{ExtractError, Extractor, SourceRecord, Triple};
use crate::retrieval::CompletionClient;
use crate::vector::{EmbedError, Embedder};

const TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone)]
struct Endpoint {
    url: String,
    client: reqwest::blocking::Client,
}

impl Endpoint {
    fn new(url: impl Into<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(TIMEOUT)
            .build()
            .expect("http client");
        Endpoint { url: url.into(), client }
    }

    fn post<B: Serialize + ?Sized, R: DeserializeOwned>(&self, body: &B) -> Result<R, String> {
        let resp = self.client.post(&self.url).json(body).send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("{} answered {status}", self.url));
        }
        resp.json::<R>().map_err(|e| format!("bad response from {}: {e}", self.url))
    }
}

pub struct HttpEmbedder {
    endpoint: Endpoint,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, dimension: usize) -> Self {
        HttpEmbedder { endpoint: Endpoint::new(url), dimension }
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        #[derive(Deserialize)]
        struct Out {
            embeddings: Vec<Vec<f32>>,
        }
        let out: Out = self
            .endpoint
            .post(&serde_json::json!({ "texts": texts }))
            .map_err(EmbedError::Provider)?;
        if out.embeddings.len() != texts.len() {
            return Err(EmbedError::Provider(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                out.embeddings.len()
            )));
        }
        Ok(out.embeddings)
    }
}

pub struct HttpExtractor {
    endpoint: Endpoint,
}

impl HttpExtractor {
    pub fn new(url: impl Into<String>) -> Self {
        HttpExtractor { endpoint: Endpoint::new(url) }
    }
}

impl Extractor for HttpExtractor {
    fn extract(&self, record: &SourceRecord) -> Result<Vec<Triple>, ExtractError> {
        #[derive(Deserialize)]
        struct Out {
            triples: Vec<Triple>,
        }
        let out: Out = self.endpoint.post(record).map_err(ExtractError::Extractor)?;
        Ok(out.triples)
    }
}

pub struct HttpCaptioner {
    endpoint: Endpoint,
}

impl HttpCaptioner {
    pub fn new(url: impl Into<String>) -> Self {
        HttpCaptioner { endpoint: Endpoint::new(url) }
    }
}

impl CaptionClient for HttpCaptioner {
    fn caption(&self, image: &ImageInput<'_>) -> Result<String, CaptionError> {
        #[derive(Deserialize)]
        struct Out {
            caption: String,
        }
        let body = serde_json::json!({ "image_base64": BASE64_STANDARD.encode(image.bytes) });
        let out: Out = self.endpoint.post(&body).map_err(CaptionError::ClientFailure)?;
        Ok(out.caption)
    }
}

pub struct HttpCompletion {
    endpoint: Endpoint,
}

impl HttpCompletion {
    pub fn new(url: impl Into<String>) -> Self {
        HttpCompletion { endpoint: Endpoint::new(url) }
    }
}

impl CompletionClient for HttpCompletion {
    fn complete(&self, context: &str, question: &str) -> Result<String, String> {
        #[derive(Deserialize)]
        struct Out {
            text: String,
        }
        let out: Out = self.endpoint.post(&serde_json::json!({ "context": context, "question": question }))?;
        Ok(out.text)
    }
}

pub struct HttpJudge {
    endpoint: Endpoint,
}

impl HttpJudge {
    pub fn new(url: impl Into<String>) -> Self {
        HttpJudge { endpoint: Endpoint::new(url) }
    }
}

impl Scorer for HttpJudge {
    fn score(&self, question: &str, gold: &[String], answer: &str) -> Result<u8, String> {
        #[derive(Deserialize)]
        struct Out {
            score: i64,
        }
        let body = serde_json::json!({ "question": question, "gold": gold, "answer": answer });
        let out: Out = self.endpoint.post(&body)?;
        match out.score {
            s @ 1..=5 => Ok(s as u8),
            s => Err(format!("judge score {s} is outside 1..=5")),
        }
    }
}

#[cfg(test)]
mod tests;

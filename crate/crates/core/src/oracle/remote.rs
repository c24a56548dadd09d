// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::OracleBackend;
use crate::augment::SubstitutionProvider;
use crate::error::{Error, Result};
use crate::model::{NeuronRef, Token};

/// Minimal JSON-over-HTTP client for the model backend.
#[derive(Debug, Clone)]
pub(crate) struct HttpClient {
    base: String,
    agent: ureq::Agent,
}

pub(crate) enum HttpFailure {
    Status(u16),
    Other(String),
}

impl From<HttpFailure> for Error {
    fn from(f: HttpFailure) -> Error {
        match f {
            HttpFailure::Status(code) => Error::Transport(format!("backend returned HTTP {code}")),
            HttpFailure::Other(msg) => Error::Transport(msg),
        }
    }
}

impl HttpClient {
    pub(crate) fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpClient {
            base: base_url.trim_end_matches('/').to_owned(),
            agent,
        }
    }

    pub(crate) fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> std::result::Result<Resp, HttpFailure> {
        let url = format!("{}{}", self.base, path);
        let mut response = self.agent.post(&url).send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => HttpFailure::Status(code),
            other => HttpFailure::Other(format!("POST {url}: {other}")),
        })?;
        response
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| HttpFailure::Other(format!("POST {url}: malformed response: {e}")))
    }
}

#[derive(Serialize)]
struct ActivationsRequest<'a> {
    layer: u32,
    index: u32,
    tokens: &'a [Token],
}

#[derive(Deserialize)]
struct ActivationsResponse {
    activations: Vec<f64>,
}

#[derive(Deserialize)]
struct MaskTokenResponse {
    token: String,
}

type CacheKey = (NeuronRef, Vec<Token>);

/// Oracle backed by the HTTP model service.
///
/// Responses are cached per (neuron, token sequence) for the lifetime of the
/// client, so repeated prune-loop queries hit the network once.
#[derive(Debug)]
pub struct RemoteOracle {
    http: HttpClient,
    mask: Token,
    cache: Mutex<HashMap<CacheKey, Vec<f64>>>,
}

impl RemoteOracle {
    /// Connects and fetches the backend's mask token.
    pub fn connect(base_url: &str) -> Result<Self> {
        let http = HttpClient::new(base_url);
        let resp: MaskTokenResponse = http.post("/v1/mask_token", &serde_json::json!({}))?;
        let mask = Token::new(resp.token)
            .map_err(|_| Error::Transport("backend declared an empty mask token".into()))?;
        Ok(RemoteOracle {
            http,
            mask,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }
}

impl OracleBackend for RemoteOracle {
    fn mask_token(&self) -> &Token {
        &self.mask
    }

    fn activations(&self, neuron: NeuronRef, tokens: &[Token]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Usage("activation query needs at least one token".into()));
        }
        let key = (neuron, tokens.to_vec());
        if let Some(hit) = self.cache.lock().ok().and_then(|c| c.get(&key).cloned()) {
            return Ok(hit);
        }
        let req = ActivationsRequest {
            layer: neuron.layer,
            index: neuron.index,
            tokens,
        };
        let resp: ActivationsResponse =
            self.http.post("/v1/activations", &req).map_err(|f| match f {
                HttpFailure::Status(404) => Error::NeuronNotFound {
                    layer: neuron.layer,
                    index: neuron.index,
                },
                other => other.into(),
            })?;
        if resp.activations.len() != tokens.len() {
            return Err(Error::Transport(format!(
                "backend returned {} activations for {} tokens",
                resp.activations.len(),
                tokens.len()
            )));
        }
        if resp.activations.iter().any(|a| !a.is_finite()) {
            return Err(Error::Transport("backend returned a non-finite activation".into()));
        }
        if let Ok(mut cache) = self.cache.lock() {
            cache.insert(key, resp.activations.clone());
        }
        Ok(resp.activations)
    }
}

#[derive(Serialize)]
struct SubstitutesRequest<'a> {
    tokens: &'a [Token],
    position: usize,
    top_n: usize,
}

#[derive(Deserialize)]
struct Candidate {
    token: String,
    prob: f64,
}

#[derive(Deserialize)]
struct SubstitutesResponse {
    candidates: Vec<Candidate>,
}

/// Substitution provider backed by the HTTP masked-LM endpoint.
#[derive(Debug, Clone)]
pub struct RemoteSubstitutes {
    http: HttpClient,
}

impl RemoteSubstitutes {
    pub fn new(base_url: &str) -> Self {
        RemoteSubstitutes {
            http: HttpClient::new(base_url),
        }
    }
}

impl SubstitutionProvider for RemoteSubstitutes {
    fn candidates(&self, tokens: &[Token], position: usize, top_n: usize) -> Result<Vec<(Token, f64)>> {
        let req = SubstitutesRequest {
            tokens,
            position,
            top_n,
        };
        let resp: SubstitutesResponse = self.http.post("/v1/substitutes", &req).map_err(|f| match f {
            HttpFailure::Status(422) => Error::Usage(format!(
                "position {position} out of range for {} tokens",
                tokens.len()
            )),
            other => other.into(),
        })?;
        Ok(resp
            .candidates
            .into_iter()
            .filter_map(|c| Token::new(c.token).ok().map(|t| (t, c.prob)))
            .collect())
    }
}

//! Entailment scoring of (premise, hypothesis) pairs.
//!
//! Scorers are chosen by URI: `lexical:` selects the embedded token-overlap
//! baseline, `http://host/score` or `https://host/score` a remote service
//! speaking the JSON protocol
//!
//! ```text
//! POST /score  {"items":[{"premise":"...","hypothesis":"..."}]}
//! 200          {"scores":[0.93, ...]}
//! 4xx/5xx      {"error":"..."}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{Label, TdmTriple};
use crate::doctaet::DocTaetFeature;
use crate::text::normalize_ws;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_RETRIES: u32 = 3;
pub const DEFAULT_POOL: usize = 4;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("score request has no items")]
    EmptyRequest,
    #[error("transport failure talking to {url}: {message}")]
    Transport { url: String, message: String },
    #[error("scorer returned status {status}: {message}")]
    Server { status: u16, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("unsupported scorer URI {0:?} (expected `lexical:` or http(s)://host/score)")]
    InvalidUri(String),
}

impl ScoreError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ScoreError::Transport { .. } => true,
            ScoreError::Server { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
#[error("scoring paper {paper_id}: {source}")]
pub struct PredictError {
    pub paper_id: String,
    #[source]
    pub source: ScoreError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub premise: String,
    pub hypothesis: String,
}

impl ScoreItem {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        Self {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

/// A non-empty, ordered batch of pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScoreRequest {
    items: Vec<ScoreItem>,
}

impl ScoreRequest {
    pub fn new(items: Vec<ScoreItem>) -> Result<Self, ScoreError> {
        if items.is_empty() {
            return Err(ScoreError::EmptyRequest);
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[ScoreItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl<'de> Deserialize<'de> for ScoreRequest {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            items: Vec<ScoreItem>,
        }
        let raw = Raw::deserialize(de)?;
        ScoreRequest::new(raw.items).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Scores each item of a request in order, one value in `[0, 1]` per item.
///
/// Implementations must be pure with respect to their underlying model and
/// safe to call from several threads.
pub trait Scorer: Send + Sync {
    fn score(&self, request: &ScoreRequest) -> Result<Vec<f64>, ScoreError>;
}

/// `task : dataset : metric`, each field whitespace-normalized.
pub fn render_hypothesis(triple: &TdmTriple) -> String {
    format!(
        "{} : {} : {}",
        normalize_ws(triple.task()),
        normalize_ws(triple.dataset()),
        normalize_ws(triple.metric())
    )
}

/// Case-folded alphanumeric word set used by the lexical baseline.
fn word_set(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token-overlap baseline: the fraction of distinct hypothesis words that
/// also occur in the premise. Words are maximal alphanumeric runs, compared
/// case-insensitively, so the ` : ` separators never count.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl LexicalScorer {
    pub fn overlap(premise: &str, hypothesis: &str) -> f64 {
        let hyp = word_set(hypothesis);
        if hyp.is_empty() {
            return 0.0;
        }
        let prem = word_set(premise);
        let hit = hyp.iter().filter(|w| prem.contains(*w)).count();
        hit as f64 / hyp.len() as f64
    }
}

impl Scorer for LexicalScorer {
    fn score(&self, request: &ScoreRequest) -> Result<Vec<f64>, ScoreError> {
        Ok(request
            .items()
            .iter()
            .map(|i| Self::overlap(&i.premise, &i.hypothesis))
            .collect())
    }
}

/// Client for a remote `/score` endpoint.
///
/// Requests larger than `batch_size` are split and the batches fanned out
/// over at most `pool` concurrent connections; results are reassembled in
/// request order. Transport failures and 5xx/429 responses are retried up
/// to `retries` times with exponential backoff starting at `backoff`.
#[derive(Debug)]
pub struct RemoteScorer {
    url: String,
    agent: ureq::Agent,
    pub batch_size: usize,
    pub retries: u32,
    pub backoff: Duration,
    pub pool: usize,
}

impl RemoteScorer {
    pub fn new(url: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
            batch_size: DEFAULT_BATCH_SIZE,
            retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(200),
            pool: DEFAULT_POOL,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn post_once(&self, items: &[ScoreItem]) -> Result<Vec<f64>, ScoreError> {
        #[derive(Serialize)]
        struct Body<'a> {
            items: &'a [ScoreItem],
        }
        let transport = |e: ureq::Error| ScoreError::Transport {
            url: self.url.clone(),
            message: e.to_string(),
        };
        let body = serde_json::to_vec(&Body { items })
            .map_err(|e| ScoreError::Protocol(format!("cannot encode request: {e}")))?;
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json")
            .send(&body[..])
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        if status != 200 {
            let message = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            return Err(ScoreError::Server { status, message });
        }
        let parsed: ScoreResponse = serde_json::from_str(&text)
            .map_err(|e| ScoreError::Protocol(format!("bad response body: {e}")))?;
        validate_scores(&parsed.scores, items.len())?;
        Ok(parsed.scores)
    }

    fn post_with_retry(&self, items: &[ScoreItem]) -> Result<Vec<f64>, ScoreError> {
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.post_once(items) {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    log::warn!("scorer call failed ({e}); retry {} of {}", attempt + 1, self.retries);
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Checks a backend's scores against the protocol contract.
pub fn validate_scores(scores: &[f64], expected: usize) -> Result<(), ScoreError> {
    if scores.len() != expected {
        return Err(ScoreError::Protocol(format!(
            "expected {expected} scores, got {}",
            scores.len()
        )));
    }
    if let Some((i, s)) = scores
        .iter()
        .enumerate()
        .find(|(_, s)| !(s.is_finite() && (0.0..=1.0).contains(*s)))
    {
        return Err(ScoreError::Protocol(format!("score {s} at index {i} is outside [0, 1]")));
    }
    Ok(())
}

impl Scorer for RemoteScorer {
    fn score(&self, request: &ScoreRequest) -> Result<Vec<f64>, ScoreError> {
        let chunks: Vec<&[ScoreItem]> = request.items().chunks(self.batch_size.max(1)).collect();
        if chunks.len() == 1 {
            return self.post_with_retry(chunks[0]);
        }
        let results: Vec<Mutex<Option<Result<Vec<f64>, ScoreError>>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.pool.clamp(1, chunks.len());
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= chunks.len() {
                        break;
                    }
                    let r = self.post_with_retry(chunks[i]);
                    let failed = r.is_err();
                    *results[i].lock().unwrap() = Some(r);
                    if failed {
                        // stop handing out further batches
                        next.store(chunks.len(), Ordering::SeqCst);
                    }
                });
            }
        });
        let mut scores = Vec::with_capacity(request.len());
        for slot in results {
            match slot.into_inner().unwrap() {
                Some(Ok(batch)) => scores.extend(batch),
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }
        validate_scores(&scores, request.len())?;
        Ok(scores)
    }
}

pub fn scorer_from_uri(uri: &str) -> Result<Box<dyn Scorer>, ScoreError> {
    let uri = uri.trim();
    if uri == "lexical:" || uri == "lexical" {
        return Ok(Box::new(LexicalScorer));
    }
    if uri.starts_with("http://") || uri.starts_with("https://") {
        return Ok(Box::new(RemoteScorer::new(uri)));
    }
    Err(ScoreError::InvalidUri(uri.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaperPrediction {
    pub paper_id: String,
    pub predicted: BTreeSet<Label>,
    pub scores: BTreeMap<TdmTriple, f64>,
}

/// Labels scoring strictly above `threshold`, or `{unknown}` if none do.
pub fn decide(scores: &BTreeMap<TdmTriple, f64>, threshold: f64) -> BTreeSet<Label> {
    let picked: BTreeSet<Label> = scores
        .iter()
        .filter(|(_, s)| **s > threshold)
        .map(|(t, _)| Label::Tdm(t.clone()))
        .collect();
    if picked.is_empty() {
        BTreeSet::from([Label::Unknown])
    } else {
        picked
    }
}

/// Scores every candidate against the paper's combined feature.
pub fn predict_paper(
    paper_id: &str,
    feature: &DocTaetFeature,
    candidates: &[TdmTriple],
    threshold: f64,
    scorer: &dyn Scorer,
    batch_size: usize,
) -> Result<PaperPrediction, PredictError> {
    let wrap = |source| PredictError {
        paper_id: paper_id.to_string(),
        source,
    };
    if candidates.is_empty() {
        return Err(wrap(ScoreError::EmptyRequest));
    }
    let mut scores = BTreeMap::new();
    for chunk in candidates.chunks(batch_size.max(1)) {
        let items = chunk
            .iter()
            .map(|t| ScoreItem::new(feature.combined.as_str(), render_hypothesis(t)))
            .collect();
        let request = ScoreRequest::new(items).map_err(wrap)?;
        let batch = scorer.score(&request).map_err(wrap)?;
        validate_scores(&batch, chunk.len()).map_err(wrap)?;
        scores.extend(chunk.iter().cloned().zip(batch));
    }
    Ok(PaperPrediction {
        paper_id: paper_id.to_string(),
        predicted: decide(&scores, threshold),
        scores,
    })
}

#[derive(Serialize, Deserialize)]
struct ScoredTriple {
    #[serde(flatten)]
    triple: TdmTriple,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    paper_id: String,
    predicted: BTreeSet<Label>,
    scores: Vec<ScoredTriple>,
}

impl Serialize for PaperPrediction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PredictionRecord {
            paper_id: self.paper_id.clone(),
            predicted: self.predicted.clone(),
            scores: self
                .scores
                .iter()
                .map(|(t, &score)| ScoredTriple {
                    triple: t.clone(),
                    score,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PaperPrediction {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let r = PredictionRecord::deserialize(de)?;
        if r.predicted.is_empty() {
            return Err(serde::de::Error::custom("prediction has an empty label set"));
        }
        Ok(Self {
            paper_id: r.paper_id,
            predicted: r.predicted,
            scores: r.scores.into_iter().map(|s| (s.triple, s.score)).collect(),
        })
    }
}

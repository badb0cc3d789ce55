//! Object-phrase similarity: TF-IDF cosine multiplied by an embedding
//! cosine, thresholded at 0.5.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{read_json, ConfigError};

pub const SIMILARITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("embedding backend unavailable: {0}")]
    Unavailable(String),
}

/// Synonym sets; every member maps to the set's first word.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    sets: Vec<Vec<String>>,
    #[serde(skip)]
    index: HashMap<String, String>,
}

impl Lexicon {
    pub fn new(sets: Vec<Vec<String>>) -> Self {
        let mut lex = Lexicon {
            sets,
            index: HashMap::new(),
        };
        lex.reindex();
        lex
    }

    fn reindex(&mut self) {
        self.index.clear();
        for set in &self.sets {
            let Some(head) = set.first() else { continue };
            let head = head.to_lowercase();
            for word in set {
                self.index.insert(word.to_lowercase(), head.clone());
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut lex: Lexicon = read_json(path)?;
        lex.reindex();
        Ok(lex)
    }

    pub fn sets(&self) -> &[Vec<String>] {
        &self.sets
    }

    /// Canonical form of one lowercase token. Words outside the lexicon
    /// lose a regular plural `s`.
    pub fn canonical_token(&self, token: &str) -> String {
        if let Some(head) = self.index.get(token) {
            return head.clone();
        }
        let stem = token.len() > 3
            && token.ends_with('s')
            && !token.ends_with("ss")
            && !token.ends_with("us")
            && !token.ends_with("is");
        if stem {
            let trimmed = &token[..token.len() - 1];
            return self.index.get(trimmed).cloned().unwrap_or_else(|| trimmed.to_string());
        }
        token.to_string()
    }

    pub fn tokens(&self, text: &str) -> Vec<String> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| self.canonical_token(t))
            .collect()
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        let sets: &[&[&str]] = &[
            &["person", "persons", "people", "human", "humans"],
            &["man", "men"],
            &["woman", "women"],
            &["child", "children", "kid", "kids"],
            &["picture", "pictures", "image", "images", "photo", "photos", "photograph"],
            &["mouse", "mice"],
            &["goose", "geese"],
            &["foot", "feet"],
            &["tooth", "teeth"],
            &["bicycle", "bicycles", "bike", "bikes"],
            &["car", "cars", "automobile", "automobiles"],
        ];
        Lexicon::new(
            sets.iter()
                .map(|s| s.iter().map(|w| w.to_string()).collect())
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Embedding {
    Sparse(BTreeMap<String, f64>),
    Dense(Vec<f64>),
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, BackendError>;

    fn name(&self) -> &str;
}

/// Offline provider: unigram and bigram counts over canonicalized tokens.
#[derive(Clone, Debug, Default)]
pub struct CountEmbedding {
    lexicon: Lexicon,
}

impl CountEmbedding {
    pub fn new(lexicon: Lexicon) -> Self {
        CountEmbedding { lexicon }
    }
}

impl EmbeddingProvider for CountEmbedding {
    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        let tokens = self.lexicon.tokens(text);
        let mut v = BTreeMap::new();
        for t in &tokens {
            *v.entry(t.clone()).or_insert(0.0) += 1.0;
        }
        for w in tokens.windows(2) {
            *v.entry(format!("{} {}", w[0], w[1])).or_insert(0.0) += 1.0;
        }
        Ok(Embedding::Sparse(v))
    }

    fn name(&self) -> &str {
        "count-ngram"
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RemoteEmbeddingConfig {
    /// Endpoint accepting `{"model", "input"}` and answering
    /// `{"data": [{"embedding": [...]}]}`.
    pub url: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "EMBEDDING_API_KEY".into()
}

fn default_timeout() -> u64 {
    30
}

/// Embeddings from an HTTP endpoint. Results are cached per text.
pub struct RemoteEmbedding {
    config: RemoteEmbeddingConfig,
    agent: ureq::Agent,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl RemoteEmbedding {
    pub fn new(config: RemoteEmbeddingConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        RemoteEmbedding {
            config,
            agent,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl EmbeddingProvider for RemoteEmbedding {
    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if let Some(v) = self.cache.lock().expect("cache poisoned").get(text) {
            return Ok(Embedding::Dense(v.clone()));
        }
        let mut req = self.agent.post(&self.config.url);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::json!({ "model": self.config.model, "input": text });
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let parsed: EmbeddingResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let v = parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| BackendError::Unavailable("empty embedding response".into()))?;
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(text.to_string(), v.clone());
        Ok(Embedding::Dense(v))
    }

    fn name(&self) -> &str {
        "remote"
    }
}

/// Cosine similarity clamped to [0, 1]. Symmetric bit-for-bit: the dot
/// product runs over keys in sorted order.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    if a == b {
        return if is_zero(a) { 0.0 } else { 1.0 };
    }
    let (dot, na, nb) = match (a, b) {
        (Embedding::Sparse(a), Embedding::Sparse(b)) => {
            let dot: f64 = a
                .iter()
                .filter_map(|(k, x)| b.get(k).map(|y| x * y))
                .sum();
            (dot, norm(a.values()), norm(b.values()))
        }
        (Embedding::Dense(a), Embedding::Dense(b)) if a.len() == b.len() => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (dot, norm(a.iter()), norm(b.iter()))
        }
        _ => return 0.0,
    };
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

fn is_zero(e: &Embedding) -> bool {
    match e {
        Embedding::Sparse(m) => m.values().all(|v| *v == 0.0),
        Embedding::Dense(v) => v.iter().all(|x| *x == 0.0),
    }
}

fn norm<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    values.map(|v| v * v).sum::<f64>().sqrt()
}

/// TF-IDF cosine over the two-document corpus `{a, b}`, with smoothed idf
/// `ln((1 + N) / (1 + df)) + 1` so shared terms keep a positive weight.
pub fn tfidf_cosine(a: &[String], b: &[String]) -> f64 {
    let tf = |tokens: &[String]| {
        let mut m: BTreeMap<String, f64> = BTreeMap::new();
        for t in tokens {
            *m.entry(t.clone()).or_insert(0.0) += 1.0;
        }
        m
    };
    let (ta, tb) = (tf(a), tf(b));
    let idf = |term: &str| {
        let df = ta.contains_key(term) as u32 + tb.contains_key(term) as u32;
        ((1.0 + 2.0) / (1.0 + df as f64)).ln() + 1.0
    };
    let weigh = |m: &BTreeMap<String, f64>| {
        m.iter()
            .map(|(k, v)| (k.clone(), v * idf(k)))
            .collect::<BTreeMap<_, _>>()
    };
    cosine(&Embedding::Sparse(weigh(&ta)), &Embedding::Sparse(weigh(&tb)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub lexical_score: f64,
    pub semantic_score: f64,
    pub combined: f64,
    pub equivalent: bool,
    /// Set when the embedding backend failed and only the lexical score
    /// was used; `semantic_score` is then 1.
    pub degraded: bool,
}

/// Decides whether two object phrases name the same thing.
#[derive(Clone)]
pub struct PhraseMatcher {
    lexicon: Lexicon,
    provider: Arc<dyn EmbeddingProvider>,
    threshold: f64,
    cache: Arc<Mutex<HashMap<(String, String), SimilarityReport>>>,
}

impl std::fmt::Debug for PhraseMatcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhraseMatcher")
            .field("provider", &self.provider.name())
            .field("threshold", &self.threshold)
            .finish()
    }
}

impl Default for PhraseMatcher {
    fn default() -> Self {
        let lexicon = Lexicon::default();
        PhraseMatcher::new(lexicon.clone(), Arc::new(CountEmbedding::new(lexicon)))
    }
}

impl PhraseMatcher {
    pub fn new(lexicon: Lexicon, provider: Arc<dyn EmbeddingProvider>) -> Self {
        PhraseMatcher {
            lexicon,
            provider,
            threshold: SIMILARITY_THRESHOLD,
            cache: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    /// Default offline provider over a custom lexicon.
    pub fn with_lexicon(lexicon: Lexicon) -> Self {
        PhraseMatcher::new(lexicon.clone(), Arc::new(CountEmbedding::new(lexicon)))
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Full hybrid score. Fails only when the embedding backend does.
    pub fn sentence_similarity(&self, a: &str, b: &str) -> Result<SimilarityReport, BackendError> {
        let lexical = self.lexical(a, b);
        let ea = self.provider.embed(a)?;
        let eb = self.provider.embed(b)?;
        let semantic = if a == b { 1.0 } else { cosine(&ea, &eb) };
        let combined = lexical * semantic;
        Ok(SimilarityReport {
            lexical_score: lexical,
            semantic_score: semantic,
            combined,
            equivalent: combined >= self.threshold,
            degraded: false,
        })
    }

    fn lexical(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        let (ta, tb) = (self.lexicon.tokens(a), self.lexicon.tokens(b));
        if ta.is_empty() || tb.is_empty() {
            let same = a.trim().eq_ignore_ascii_case(b.trim());
            return if same { 1.0 } else { 0.0 };
        }
        tfidf_cosine(&ta, &tb)
    }

    /// Like [`sentence_similarity`](Self::sentence_similarity) but degrades
    /// to the lexical score when the backend is down. Cached.
    pub fn similarity(&self, a: &str, b: &str) -> SimilarityReport {
        let key = if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        if let Some(r) = self.cache.lock().expect("cache poisoned").get(&key) {
            return *r;
        }
        let report = match self.sentence_similarity(&key.0, &key.1) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{e}; falling back to lexical similarity");
                let lexical = self.lexical(&key.0, &key.1);
                return SimilarityReport {
                    lexical_score: lexical,
                    semantic_score: 1.0,
                    combined: lexical,
                    equivalent: lexical >= self.threshold,
                    degraded: true,
                };
            }
        };
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(key, report);
        report
    }

    pub fn same_object(&self, a: &str, b: &str) -> bool {
        self.similarity(a, b).equivalent
    }
}

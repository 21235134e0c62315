//! Enrichment providers: summaries, price tags, categories, captions and
//! embeddings, behind one request/response protocol with a persistent cache.
//!
//! [`stub::StubProvider`] answers every request in-process and
//! deterministically; [`remote::RemoteProvider`] forwards the same requests
//! to an HTTP endpoint. [`Enricher`] layers caching and the degrade-on-failure
//! policies on top of either.

pub mod cache;
pub mod remote;
pub mod stub;

use base64::Engine;
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use cache::{cache_key, cached_call, Cache};

use crate::error::{Error, Result};

pub const TEXT_EMBEDDING_DIM: usize = 384;
pub const IMAGE_EMBEDDING_DIM: usize = 2048;
pub const MAX_CATEGORIES: usize = 11;
pub const SUMMARY_SENTENCES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceTag {
    Cheap,
    Fair,
    Overpriced,
    None,
}

impl PriceTag {
    pub const ALL: [PriceTag; 4] = [PriceTag::Cheap, PriceTag::Fair, PriceTag::Overpriced, PriceTag::None];

    pub fn index(self) -> usize {
        match self {
            PriceTag::Cheap => 0,
            PriceTag::Fair => 1,
            PriceTag::Overpriced => 2,
            PriceTag::None => 3,
        }
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut out = [0.0; 4];
        out[self.index()] = 1.0;
        out
    }
}

/// At most [`MAX_CATEGORIES`] distinct, nonempty names in provider order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryList {
    names: Vec<String>,
}

impl CategoryList {
    /// Drops blanks and duplicates, then truncates to the first eleven.
    /// The flag reports whether truncation happened.
    pub fn from_names<I, S>(names: I) -> (Self, bool)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for name in names {
            let name = name.into().trim().to_string();
            if !name.is_empty() && !out.contains(&name) {
                out.push(name);
            }
        }
        let truncated = out.len() > MAX_CATEGORIES;
        out.truncate(MAX_CATEGORIES);
        (Self { names: out }, truncated)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    User,
    Business,
}

/// One enrichment request. Serializes as the wire envelope
/// `{"provider": <op>, "payload": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", content = "payload", rename_all = "snake_case")]
pub enum Request {
    Summarize { reviews: Vec<String>, subject: Subject },
    PriceTag { reviews: Vec<String> },
    Categories { reviews: Vec<String> },
    Caption { image_ref: String },
    EmbedText { text: String },
    EmbedImage { image_ref: String },
}

impl Request {
    pub fn op_name(&self) -> &'static str {
        match self {
            Request::Summarize { .. } => "summarize",
            Request::PriceTag { .. } => "price_tag",
            Request::Categories { .. } => "categories",
            Request::Caption { .. } => "caption",
            Request::EmbedText { .. } => "embed_text",
            Request::EmbedImage { .. } => "embed_image",
        }
    }

    /// Order-normalized form: review lists are sorted so that requests over
    /// the same multiset of reviews are identical.
    pub fn canonical(&self) -> Request {
        let sorted = |reviews: &Vec<String>| {
            let mut r = reviews.clone();
            r.sort();
            r
        };
        match self {
            Request::Summarize { reviews, subject } => Request::Summarize {
                reviews: sorted(reviews),
                subject: *subject,
            },
            Request::PriceTag { reviews } => Request::PriceTag { reviews: sorted(reviews) },
            Request::Categories { reviews } => Request::Categories { reviews: sorted(reviews) },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Summary(String),
    PriceTag(PriceTag),
    Categories(Vec<String>),
    Caption(String),
    Embedding(Vec<f64>),
}

impl Response {
    /// Wire representation of the `value` field.
    pub fn to_value(&self) -> Value {
        match self {
            Response::Summary(s) | Response::Caption(s) => Value::String(s.clone()),
            Response::PriceTag(tag) => serde_json::to_value(tag).expect("enum serializes"),
            Response::Categories(names) => serde_json::to_value(names).expect("strings serialize"),
            Response::Embedding(v) => serde_json::to_value(v).expect("floats serialize"),
        }
    }

    /// Parses a wire `value` for the given request, checking embedding widths.
    pub fn from_value(request: &Request, value: Value) -> Result<Response> {
        let bad = |what: &str| Error::Protocol(format!("{}: {what}", request.op_name()));
        Ok(match request {
            Request::Summarize { .. } => Response::Summary(
                value.as_str().ok_or_else(|| bad("expected string"))?.to_string(),
            ),
            Request::Caption { .. } => Response::Caption(
                value.as_str().ok_or_else(|| bad("expected string"))?.to_string(),
            ),
            Request::PriceTag { .. } => Response::PriceTag(
                serde_json::from_value(value).map_err(|e| bad(&e.to_string()))?,
            ),
            Request::Categories { .. } => Response::Categories(
                serde_json::from_value(value).map_err(|e| bad(&e.to_string()))?,
            ),
            Request::EmbedText { .. } | Request::EmbedImage { .. } => {
                let v: Vec<f64> = serde_json::from_value(value).map_err(|e| bad(&e.to_string()))?;
                Response::Embedding(v)
            }
        })
        .and_then(|r| r.check_dims(request))
    }

    fn check_dims(self, request: &Request) -> Result<Response> {
        let expected = match request {
            Request::EmbedText { .. } => TEXT_EMBEDDING_DIM,
            Request::EmbedImage { .. } => IMAGE_EMBEDDING_DIM,
            _ => return Ok(self),
        };
        match &self {
            Response::Embedding(v) if v.len() == expected => Ok(self),
            Response::Embedding(v) => Err(Error::Protocol(format!(
                "{} returned {} components, expected {expected}",
                request.op_name(),
                v.len()
            ))),
            _ => Err(Error::Protocol(format!("{} returned a non-vector", request.op_name()))),
        }
    }

    /// Compact cache form; embeddings are stored as base64 little-endian f64
    /// so cached vectors are bit-exact.
    pub fn to_cache_value(&self) -> Value {
        match self {
            Response::Embedding(v) => {
                let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
                Value::String(base64::engine::general_purpose::STANDARD.encode(bytes))
            }
            other => other.to_value(),
        }
    }

    pub fn from_cache_value(request: &Request, value: Value) -> Result<Response> {
        match request {
            Request::EmbedText { .. } | Request::EmbedImage { .. } => {
                let encoded = value
                    .as_str()
                    .ok_or_else(|| Error::Format("cached embedding is not a string".into()))?;
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(encoded)
                    .map_err(|e| Error::Format(format!("cached embedding: {e}")))?;
                if bytes.len() % 8 != 0 {
                    return Err(Error::Format("cached embedding has a partial float".into()));
                }
                let v = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect();
                Response::Embedding(v).check_dims(request)
            }
            _ => Response::from_value(request, value),
        }
    }
}

/// Anything that can answer enrichment requests.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn call(&self, request: &Request) -> Result<Response>;
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn call(&self, request: &Request) -> Result<Response> {
        (**self).call(request)
    }
}

fn unexpected(request: &Request, response: &Response) -> Error {
    Error::Protocol(format!(
        "{} answered with mismatched response {response:?}",
        request.op_name()
    ))
}

/// Typed access to a provider through the cache, with the degrade policies
/// for price tags, categories and captions.
pub struct Enricher {
    provider: Box<dyn Provider>,
    cache: Cache,
    fanout: usize,
}

impl Enricher {
    pub fn new(provider: Box<dyn Provider>, cache: Cache) -> Self {
        Self {
            provider,
            cache,
            fanout: 1,
        }
    }

    /// In-process stubs with an in-memory cache.
    pub fn offline() -> Self {
        Self::new(Box::new(stub::StubProvider), Cache::in_memory())
    }

    /// Maximum number of concurrent provider calls in [`Enricher::warm`].
    pub fn with_fanout(mut self, fanout: usize) -> Self {
        self.fanout = fanout.max(1);
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    pub fn call(&self, request: &Request) -> Result<Response> {
        cached_call(self.provider.as_ref(), &self.cache, request)
    }

    /// Issues every request through the cache with bounded parallelism.
    /// Returns the number of requests that failed.
    pub fn warm(&self, requests: &[Request]) -> Result<usize> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.fanout)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let outcomes: Vec<Result<()>> = pool.install(|| {
            requests
                .par_iter()
                .map(|request| match self.call(request) {
                    Ok(_) => Ok(()),
                    Err(e) if e.is_provider() => {
                        warn!("{} request failed during warm-up: {e}", request.op_name());
                        Err(e)
                    }
                    Err(e) => Err(e),
                })
                .collect()
        });
        let mut failed = 0;
        for outcome in outcomes {
            match outcome {
                Ok(()) => {}
                Err(e) if e.is_provider() => failed += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(failed)
    }

    pub fn summarize_reviews(&self, reviews: &[String], subject: Subject) -> Result<Summary> {
        if reviews.is_empty() {
            return Err(Error::EmptyInput("no reviews to summarize".into()));
        }
        let request = Request::Summarize {
            reviews: reviews.to_vec(),
            subject,
        };
        match self.call(&request)? {
            Response::Summary(text) => Ok(Summary { text }),
            other => Err(unexpected(&request, &other)),
        }
    }

    /// Provider failures degrade to [`PriceTag::None`].
    pub fn extract_price_tag(&self, reviews: &[String]) -> Result<PriceTag> {
        let request = Request::PriceTag {
            reviews: reviews.to_vec(),
        };
        match self.call(&request) {
            Ok(Response::PriceTag(tag)) => Ok(tag),
            Ok(other) => {
                warn!("price tag degraded to none: {}", unexpected(&request, &other));
                Ok(PriceTag::None)
            }
            Err(e) if e.is_provider() => {
                warn!("price tag degraded to none: {e}");
                Ok(PriceTag::None)
            }
            Err(e) => Err(e),
        }
    }

    /// Provider failures degrade to an empty list; more than eleven names are
    /// truncated with a warning.
    pub fn extract_categories(&self, reviews: &[String]) -> Result<CategoryList> {
        let request = Request::Categories {
            reviews: reviews.to_vec(),
        };
        match self.call(&request) {
            Ok(Response::Categories(names)) => {
                let (list, truncated) = CategoryList::from_names(names);
                if truncated {
                    warn!("provider returned more than {MAX_CATEGORIES} categories; keeping the first {MAX_CATEGORIES}");
                }
                Ok(list)
            }
            Ok(other) => {
                warn!("categories degraded to empty: {}", unexpected(&request, &other));
                Ok(CategoryList::default())
            }
            Err(e) if e.is_provider() => {
                warn!("categories degraded to empty: {e}");
                Ok(CategoryList::default())
            }
            Err(e) => Err(e),
        }
    }

    /// Provider failures degrade to an empty caption.
    pub fn caption_image(&self, image_ref: &str) -> Result<String> {
        if image_ref.is_empty() {
            return Err(Error::Precondition("empty image ref".into()));
        }
        let request = Request::Caption {
            image_ref: image_ref.to_string(),
        };
        match self.call(&request) {
            Ok(Response::Caption(text)) => Ok(text),
            Ok(other) => {
                warn!("caption degraded to empty: {}", unexpected(&request, &other));
                Ok(String::new())
            }
            Err(e) if e.is_provider() => {
                warn!("caption for {image_ref} degraded to empty: {e}");
                Ok(String::new())
            }
            Err(e) => Err(e),
        }
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let request = Request::EmbedText { text: text.to_string() };
        match self.call(&request)? {
            Response::Embedding(v) => Ok(v),
            other => Err(unexpected(&request, &other)),
        }
    }

    pub fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>> {
        if image_ref.is_empty() {
            return Err(Error::Precondition("empty image ref".into()));
        }
        let request = Request::EmbedImage {
            image_ref: image_ref.to_string(),
        };
        match self.call(&request)? {
            Response::Embedding(v) => Ok(v),
            other => Err(unexpected(&request, &other)),
        }
    }
}

//! Review corpora: ingestion, train/test splitting and label binarization.

mod synthetic;

pub use synthetic::{generate_synthetic, SyntheticConfig};

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single user review of a business.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub review_id: String,
    pub user_id: String,
    pub business_id: String,
    pub rating: u8,
    pub text: String,
    #[serde(default)]
    pub image_refs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewCorpus {
    pub reviews: Vec<Review>,
    /// review_id -> split tag. Empty until [`split_corpus`] runs.
    pub split: BTreeMap<String, Split>,
}

impl ReviewCorpus {
    /// Builds an unsplit corpus, rejecting duplicate ids and invalid ratings.
    pub fn new(reviews: Vec<Review>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(reviews.len());
        for review in &reviews {
            binarize_label(review.rating)?;
            if !seen.insert(review.review_id.as_str()) {
                return Err(Error::DuplicateId(review.review_id.clone()));
            }
        }
        Ok(Self {
            reviews,
            split: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    pub fn split_of(&self, review_id: &str) -> Option<Split> {
        self.split.get(review_id).copied()
    }

    /// Every review carries exactly one tag.
    pub fn is_split(&self) -> bool {
        !self.reviews.is_empty()
            && self.split.len() == self.reviews.len()
            && self.reviews.iter().all(|r| self.split.contains_key(&r.review_id))
    }

    /// Indices (in corpus order) of reviews carrying `split`.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.reviews
            .iter()
            .enumerate()
            .filter(|(_, r)| self.split_of(&r.review_id) == Some(split))
            .map(|(i, _)| i)
            .collect()
    }

    /// A copy without the review at `index`; split tags of the others are kept.
    pub fn without(&self, index: usize) -> Self {
        let mut out = self.clone();
        let removed = out.reviews.remove(index);
        out.split.remove(&removed.review_id);
        out
    }

    /// Writes the corpus as line-delimited JSON records.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for review in &self.reviews {
            serde_json::to_writer(&mut out, review)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Applies a previously persisted split map.
    pub fn with_split(mut self, split: BTreeMap<String, Split>) -> Result<Self> {
        for review in &self.reviews {
            if !split.contains_key(&review.review_id) {
                return Err(Error::Config(format!(
                    "split map has no tag for review `{}`",
                    review.review_id
                )));
            }
        }
        if split.len() != self.reviews.len() {
            return Err(Error::Config(
                "split map references reviews missing from the corpus".into(),
            ));
        }
        self.split = split;
        Ok(self)
    }
}

/// Parses one review per line. Blank lines are skipped.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<ReviewCorpus> {
    let mut reviews = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let review: Review = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !(1..=5).contains(&review.rating) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("rating {} outside 1..=5", review.rating),
            });
        }
        if !seen.insert(review.review_id.clone()) {
            return Err(Error::DuplicateId(review.review_id));
        }
        reviews.push(review);
    }
    Ok(ReviewCorpus {
        reviews,
        split: BTreeMap::new(),
    })
}

/// Tags `round(test_fraction * N)` reviews as test via a seeded shuffle.
pub fn split_corpus(corpus: &ReviewCorpus, test_fraction: f64, seed: u64) -> Result<ReviewCorpus> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty corpus".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n = corpus.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut split = BTreeMap::new();
    for (rank, &idx) in order.iter().enumerate() {
        let tag = if rank < n_test { Split::Test } else { Split::Train };
        split.insert(corpus.reviews[idx].review_id.clone(), tag);
    }
    Ok(ReviewCorpus {
        reviews: corpus.reviews.clone(),
        split,
    })
}

/// Positive class is a 4- or 5-star rating.
pub fn binarize_label(rating: u8) -> Result<u8> {
    match rating {
        1..=3 => Ok(0),
        4 | 5 => Ok(1),
        other => Err(Error::Precondition(format!("rating {other} outside 1..=5"))),
    }
}

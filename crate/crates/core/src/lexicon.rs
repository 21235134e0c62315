//! Shipped vocabularies and the planted-keyword scheme shared by the
//! synthetic generator and the in-process providers.

use std::collections::HashMap;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::data::Split;

pub const CATEGORY_FIXTURE: &str = include_str!("../fixtures/categories.txt");
pub const CAPTION_FIXTURE: &str = include_str!("../fixtures/captions.txt");

/// Number of real category names; index `CATEGORY_COUNT` is padding.
pub const CATEGORY_COUNT: usize = 179;

pub const POSITIVE_SENTIMENT: &[&str] = &["delicious", "amazing", "wonderful", "excellent", "fantastic"];
pub const NEGATIVE_SENTIMENT: &[&str] = &["terrible", "awful", "bland", "disappointing", "horrible"];

pub const CHEAP_WORDS: &[&str] = &["cheap", "affordable"];
pub const FAIR_WORDS: &[&str] = &["fair", "reasonable"];
pub const OVERPRICED_WORDS: &[&str] = &["overpriced", "expensive"];

/// Categories the synthetic generator assigns as a business's main cuisine.
/// Each has dish captions in the caption fixture.
pub const PLANTED_CUISINES: &[&str] = &[
    "sushi", "pizza", "ramen", "tacos", "burgers", "curry", "barbecue", "pho",
];

/// Neutral words for filler sentences. Disjoint from every planted keyword
/// and category name (checked in tests).
pub const FILLER_WORDS: &[&str] = &[
    "we", "went", "there", "on", "a", "sunday", "with", "friends", "the", "parking",
    "was", "across", "street", "our", "waiter", "named", "table", "near", "window", "music",
    "played", "quietly", "ordered", "drinks", "after", "work", "my", "cousin", "recommended",
    "this", "place", "last", "year", "line", "moved", "quickly", "they", "have", "outdoor",
    "seating", "summer", "walls", "are", "painted", "blue", "came", "back", "twice", "since",
    "it", "sits", "between", "shoe", "store", "and", "bank", "menu", "has", "photos", "of",
    "every", "dish", "reservation", "for", "six", "people", "arrived", "late", "because", "traffic",
    "kids", "liked", "crayons", "staff", "wore", "black", "shirts", "lighting", "dim", "evening",
    "lunch", "rush", "started", "noon", "booth", "corner", "took", "long", "walk", "afterwards",
    "restroom", "downstairs", "door", "sticks", "sometimes", "tv", "showed", "football", "game", "owner",
    "greeted", "us", "at", "entrance", "napkins", "were", "paper", "glasses", "tall", "plates",
    "square", "celebrated", "birthday", "here", "neighborhood", "is", "busy", "weekends", "parked", "garage",
    "ceiling", "fans", "spun", "slowly", "radio", "station", "changed", "host", "seated", "right",
    "away", "windows", "face", "river", "pictures", "old", "city", "hang", "by", "lane", "tuesday",
    "visited", "during", "trip", "road", "construction", "outside", "bus", "stop", "nearby", "chairs",
];

fn categories_cell() -> &'static (Vec<String>, HashMap<String, usize>) {
    static CELL: OnceLock<(Vec<String>, HashMap<String, usize>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let names: Vec<String> = CATEGORY_FIXTURE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        (names, index)
    })
}

/// The fixed category vocabulary in file order.
#[derive(Debug, Clone, Copy)]
pub struct CategoryVocabulary;

impl CategoryVocabulary {
    pub fn names(&self) -> &'static [String] {
        &categories_cell().0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        categories_cell().1.get(name).copied()
    }

    pub fn name_of(&self, index: usize) -> Option<&'static str> {
        categories_cell().0.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        categories_cell().0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hex SHA-256 of the shipped fixture, recorded in model headers.
    pub fn hash(&self) -> String {
        sha256_hex(CATEGORY_FIXTURE.as_bytes())
    }
}

pub fn caption_templates() -> &'static [String] {
    static CELL: OnceLock<Vec<String>> = OnceLock::new();
    CELL.get_or_init(|| {
        CAPTION_FIXTURE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect()
    })
}

/// Price-keyword votes in tie-break order: cheap, fair, overpriced.
pub fn price_bucket(token: &str) -> Option<usize> {
    if CHEAP_WORDS.contains(&token) {
        Some(0)
    } else if FAIR_WORDS.contains(&token) {
        Some(1)
    } else if OVERPRICED_WORDS.contains(&token) {
        Some(2)
    } else {
        None
    }
}

/// Whether `token` belongs to the planted keyword scheme (sentiment, price
/// or category names).
pub fn is_planted(token: &str) -> bool {
    POSITIVE_SENTIMENT.contains(&token)
        || NEGATIVE_SENTIMENT.contains(&token)
        || price_bucket(token).is_some()
        || CategoryVocabulary.index_of(token).is_some()
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Splits text into sentences, keeping terminal punctuation attached.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() && s.chars().any(char::is_alphanumeric) {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() && tail.chars().any(char::is_alphanumeric) {
        out.push(tail);
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First eight bytes of SHA-256(`domain` ‖ 0 ‖ `data`) as an integer.
pub fn keyed_hash(domain: &str, data: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(data.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Stable lowercase name used in file names and reports.
pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

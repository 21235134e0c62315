//! Seeded synthetic review corpora with planted, label-correlated keywords.
//!
//! Every business has a main cuisine, a price tier and a latent quality;
//! every user has a favourite cuisine and visits it more often. A review is
//! positive when the taste match, the quality and a noise term rank it in
//! the top `positive_fraction` of all reviews. Informative sentences name
//! the cuisine, a sentiment word that follows the review's label and a
//! price word. Images are picked so that most captions show the cuisine in
//! a state that reflects the business quality.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Review, ReviewCorpus};
use crate::error::{Error, Result};
use crate::lexicon::{
    self, CHEAP_WORDS, FAIR_WORDS, FILLER_WORDS, NEGATIVE_SENTIMENT, OVERPRICED_WORDS,
    PLANTED_CUISINES, POSITIVE_SENTIMENT,
};
use crate::providers::stub::stub_caption;

const FAVOURITE_VISIT_RATE: f64 = 0.5;
const TASTE_WEIGHT: f64 = 1.5;
const QUALITY_WEIGHT: f64 = 1.0;
const OVERPRICED_PENALTY: f64 = 0.3;
const SCORE_NOISE_SD: f64 = 0.6;
const CAPTION_SIGNAL_RATE: f64 = 0.75;
const MAX_REF_ATTEMPTS: u32 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_businesses: usize,
    pub n_reviews: usize,
    pub positive_fraction: f64,
    pub informative_sentence_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 100,
            n_businesses: 50,
            n_reviews: 1000,
            positive_fraction: 0.9,
            informative_sentence_rate: 0.3,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_businesses == 0 || self.n_reviews == 0 {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        if self.n_reviews < self.n_users || self.n_reviews < self.n_businesses {
            return Err(Error::Config(
                "n_reviews must be at least n_users and n_businesses".into(),
            ));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Config(format!(
                "positive_fraction {} outside (0, 1)",
                self.positive_fraction
            )));
        }
        // A rate of exactly zero is accepted: it yields a corpus with no
        // planted keywords at all.
        if !(0.0..1.0).contains(&self.informative_sentence_rate) {
            return Err(Error::Config(format!(
                "informative_sentence_rate {} outside [0, 1)",
                self.informative_sentence_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PriceTier {
    Cheap,
    Fair,
    Overpriced,
}

impl PriceTier {
    fn words(self) -> &'static [&'static str] {
        match self {
            PriceTier::Cheap => CHEAP_WORDS,
            PriceTier::Fair => FAIR_WORDS,
            PriceTier::Overpriced => OVERPRICED_WORDS,
        }
    }
}

struct Business {
    cuisine: &'static str,
    price: PriceTier,
    quality: f64,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<ReviewCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let businesses: Vec<Business> = (0..config.n_businesses)
        .map(|_| {
            let cuisine = *PLANTED_CUISINES.choose(&mut rng).expect("non-empty");
            let price = [PriceTier::Cheap, PriceTier::Fair, PriceTier::Overpriced][rng.random_range(0..3)];
            let quality: f64 = StandardNormal.sample(&mut rng);
            Business {
                cuisine,
                price,
                quality,
            }
        })
        .collect();
    let favourites: Vec<&'static str> = (0..config.n_users)
        .map(|_| *PLANTED_CUISINES.choose(&mut rng).expect("non-empty"))
        .collect();

    let mut user_order: Vec<usize> = (0..config.n_users).collect();
    user_order.shuffle(&mut rng);
    let mut business_order: Vec<usize> = (0..config.n_businesses).collect();
    business_order.shuffle(&mut rng);

    let mut pairs = Vec::with_capacity(config.n_reviews);
    let mut scores = Vec::with_capacity(config.n_reviews);
    for i in 0..config.n_reviews {
        let user = if i < config.n_users {
            user_order[i]
        } else {
            rng.random_range(0..config.n_users)
        };
        let business = if i < config.n_businesses {
            business_order[i]
        } else if rng.random_bool(FAVOURITE_VISIT_RATE) {
            let matching: Vec<usize> = (0..config.n_businesses)
                .filter(|&b| businesses[b].cuisine == favourites[user])
                .collect();
            match matching.choose(&mut rng) {
                Some(&b) => b,
                None => rng.random_range(0..config.n_businesses),
            }
        } else {
            rng.random_range(0..config.n_businesses)
        };
        let biz = &businesses[business];
        let noise: f64 = StandardNormal.sample(&mut rng);
        let mut score = QUALITY_WEIGHT * biz.quality + SCORE_NOISE_SD * noise;
        if biz.cuisine == favourites[user] {
            score += TASTE_WEIGHT;
        }
        if biz.price == PriceTier::Overpriced {
            score -= OVERPRICED_PENALTY;
        }
        pairs.push((user, business));
        scores.push(score);
    }

    let n_positive = (config.positive_fraction * config.n_reviews as f64).round() as usize;
    let mut ranked: Vec<usize> = (0..config.n_reviews).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut labels = vec![0u8; config.n_reviews];
    for &i in &ranked[..n_positive] {
        labels[i] = 1;
    }

    let mut reviews = Vec::with_capacity(config.n_reviews);
    for (i, &(user, business)) in pairs.iter().enumerate() {
        let label = labels[i];
        let biz = &businesses[business];
        let review_id = format!("r{i:05}");
        let rating = if label == 1 {
            rng.random_range(4..=5)
        } else {
            rng.random_range(1..=3)
        };

        let mut sentences: Vec<String> = (0..rng.random_range(3..=6))
            .map(|_| filler_sentence(&mut rng))
            .collect();
        if config.informative_sentence_rate > 0.0
            && rng.random_bool(config.informative_sentence_rate)
        {
            let sentiment = if label == 1 {
                POSITIVE_SENTIMENT
            } else {
                NEGATIVE_SENTIMENT
            };
            let sentence = format!(
                "The {} was {} and {}.",
                biz.cuisine,
                sentiment.choose(&mut rng).expect("non-empty"),
                biz.price.words().choose(&mut rng).expect("non-empty"),
            );
            let at = rng.random_range(0..=sentences.len());
            sentences.insert(at, sentence);
        }

        let n_images = match rng.random::<f64>() {
            x if x < 0.5 => 0,
            x if x < 0.85 => 1,
            _ => 2,
        };
        let mut image_refs = Vec::with_capacity(n_images);
        for k in 0..n_images {
            let image_ref = if rng.random_bool(CAPTION_SIGNAL_RATE) {
                planted_image_ref(&review_id, k, biz)?
            } else {
                format!("img-{review_id}-{k}-{}", rng.random::<u32>())
            };
            image_refs.push(image_ref);
        }

        reviews.push(Review {
            review_id,
            user_id: format!("u{user:04}"),
            business_id: format!("b{business:04}"),
            rating,
            text: sentences.join(" "),
            image_refs,
        });
    }

    ReviewCorpus::new(reviews)
}

fn filler_sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(5..=10);
    let words: Vec<&str> = (0..n)
        .map(|_| *FILLER_WORDS.choose(rng).expect("non-empty"))
        .collect();
    let mut sentence = words.join(" ");
    if let Some(first) = sentence.get(..1) {
        let upper = first.to_uppercase();
        sentence.replace_range(..1, &upper);
    }
    sentence.push('.');
    sentence
}

/// Finds an image ref whose stub caption shows the business cuisine looking
/// appetizing (quality above zero) or unappetizing.
fn planted_image_ref(review_id: &str, k: usize, biz: &Business) -> Result<String> {
    let appetizing = biz.quality > 0.0;
    for nonce in 0..MAX_REF_ATTEMPTS {
        let candidate = format!("img-{review_id}-{k}-{nonce}");
        let tokens = lexicon::tokenize(stub_caption(&candidate));
        let shows_cuisine = tokens.iter().any(|t| t == biz.cuisine);
        let looks_good = tokens.iter().any(|t| t == "fresh" || t == "steaming");
        if shows_cuisine && looks_good == appetizing {
            return Ok(candidate);
        }
    }
    Err(Error::Degenerate(format!(
        "no caption for cuisine {} within {MAX_REF_ATTEMPTS} refs",
        biz.cuisine
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::binarize_label;
    use crate::lexicon::is_planted;

    fn small(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_users: 30,
            n_businesses: 20,
            n_reviews: 300,
            positive_fraction: 0.9,
            informative_sentence_rate: 0.3,
            seed,
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate_synthetic(&small(42)).unwrap().write_jsonl(&mut a).unwrap();
        generate_synthetic(&small(42)).unwrap().write_jsonl(&mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        generate_synthetic(&small(43)).unwrap().write_jsonl(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn positive_fraction_within_tolerance() {
        let config = SyntheticConfig {
            n_reviews: 1000,
            ..SyntheticConfig::default()
        };
        let corpus = generate_synthetic(&config).unwrap();
        assert_eq!(corpus.len(), 1000);
        let positives = corpus
            .reviews
            .iter()
            .filter(|r| binarize_label(r.rating).unwrap() == 1)
            .count();
        assert!((880..=920).contains(&positives), "{positives}");
    }

    #[test]
    fn zero_rate_plants_nothing() {
        let config = SyntheticConfig {
            informative_sentence_rate: 0.0,
            ..small(5)
        };
        let corpus = generate_synthetic(&config).unwrap();
        for review in &corpus.reviews {
            for token in lexicon::tokenize(&review.text) {
                assert!(!is_planted(&token), "{token} planted in {}", review.review_id);
            }
        }
    }

    #[test]
    fn every_entity_is_reviewed() {
        let corpus = generate_synthetic(&small(9)).unwrap();
        let users: std::collections::HashSet<_> = corpus.reviews.iter().map(|r| &r.user_id).collect();
        let businesses: std::collections::HashSet<_> =
            corpus.reviews.iter().map(|r| &r.business_id).collect();
        assert_eq!(users.len(), 30);
        assert_eq!(businesses.len(), 20);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            SyntheticConfig { n_users: 0, ..small(1) },
            SyntheticConfig { n_reviews: 10, ..small(1) },
            SyntheticConfig { positive_fraction: 1.0, ..small(1) },
            SyntheticConfig { informative_sentence_rate: 1.0, ..small(1) },
        ];
        for config in bad {
            assert!(matches!(generate_synthetic(&config), Err(Error::Config(_))));
        }
    }
}

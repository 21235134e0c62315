//! Deterministic in-process providers. Each answer is a pure function of the
//! request and the shipped vocabularies.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Provider, Request, Response, PriceTag, Subject, IMAGE_EMBEDDING_DIM, SUMMARY_SENTENCES, TEXT_EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::lexicon::{self, caption_templates, is_planted, keyed_hash, price_bucket, CategoryVocabulary};

#[derive(Debug, Clone, Copy, Default)]
pub struct StubProvider;

impl Provider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn call(&self, request: &Request) -> Result<Response> {
        Ok(match request {
            Request::Summarize { reviews, subject } => Response::Summary(summarize(reviews, *subject)?),
            Request::PriceTag { reviews } => Response::PriceTag(price_tag(reviews)),
            Request::Categories { reviews } => Response::Categories(categories(reviews)),
            Request::Caption { image_ref } => {
                if image_ref.is_empty() {
                    return Err(Error::Precondition("empty image ref".into()));
                }
                Response::Caption(stub_caption(image_ref).to_string())
            }
            Request::EmbedText { text } => Response::Embedding(embed_text(text)),
            Request::EmbedImage { image_ref } => {
                if image_ref.is_empty() {
                    return Err(Error::Precondition("empty image ref".into()));
                }
                Response::Embedding(embed_image(image_ref))
            }
        })
    }
}

/// Extractive summary: the [`SUMMARY_SENTENCES`] sentences with the highest
/// planted-keyword score, in their original order. A sentence scores the sum,
/// over its planted tokens, of how often that token occurs across all input
/// sentences; ties go to the earlier sentence.
pub fn summarize(reviews: &[String], _subject: Subject) -> Result<String> {
    if reviews.is_empty() {
        return Err(Error::EmptyInput("no reviews to summarize".into()));
    }
    let sentences: Vec<&str> = reviews.iter().flat_map(|r| lexicon::sentences(r)).collect();
    let planted: Vec<Vec<String>> = sentences
        .iter()
        .map(|s| lexicon::tokenize(s).into_iter().filter(|t| is_planted(t)).collect())
        .collect();
    let mut frequency: HashMap<&str, usize> = HashMap::new();
    for tokens in &planted {
        for t in tokens {
            *frequency.entry(t.as_str()).or_default() += 1;
        }
    }
    let scores: Vec<usize> = planted
        .iter()
        .map(|tokens| tokens.iter().map(|t| frequency[t.as_str()]).sum())
        .collect();

    let mut ranked: Vec<usize> = (0..sentences.len()).collect();
    ranked.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = ranked.into_iter().take(SUMMARY_SENTENCES).collect();
    chosen.sort_unstable();
    Ok(chosen.iter().map(|&i| sentences[i]).collect::<Vec<_>>().join(" "))
}

/// Keyword vote; ties resolve cheap, then fair, then overpriced.
pub fn price_tag(reviews: &[String]) -> PriceTag {
    let mut votes = [0usize; 3];
    for review in reviews {
        for token in lexicon::tokenize(review) {
            if let Some(bucket) = price_bucket(&token) {
                votes[bucket] += 1;
            }
        }
    }
    let best = votes.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return PriceTag::None;
    }
    let winner = votes.iter().position(|&v| v == best).expect("max exists");
    PriceTag::ALL[winner]
}

/// Vocabulary names in order of first appearance. Not truncated here; the
/// caller enforces the length cap.
pub fn categories(reviews: &[String]) -> Vec<String> {
    let vocab = CategoryVocabulary;
    let mut found: Vec<String> = Vec::new();
    for review in reviews {
        for token in lexicon::tokenize(review) {
            if vocab.index_of(&token).is_some() && !found.contains(&token) {
                found.push(token);
            }
        }
    }
    found
}

/// Caption template selected by a keyed hash of the image ref.
pub fn stub_caption(image_ref: &str) -> &'static str {
    let templates = caption_templates();
    let index = (keyed_hash("caption", image_ref) % templates.len() as u64) as usize;
    &templates[index]
}

/// Hashed bag of tokens, L2-normalized; the zero vector for token-free text.
pub fn embed_text(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; TEXT_EMBEDDING_DIM];
    for token in lexicon::tokenize(text) {
        let bucket = (keyed_hash("token", &token) % TEXT_EMBEDDING_DIM as u64) as usize;
        v[bucket] += 1.0;
    }
    normalize(&mut v);
    v
}

/// Unit vector drawn from a generator seeded by a keyed hash of the ref.
pub fn embed_image(image_ref: &str) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(keyed_hash("image", image_ref));
    let mut v: Vec<f64> = (0..IMAGE_EMBEDDING_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_sentence_summary_is_verbatim() {
        let s = summarize(&texts(&["Great food."]), Subject::User).unwrap();
        assert_eq!(s, "Great food.");
    }

    /// Independent scorer: counts every planted token occurrence by scanning
    /// all sentences for each candidate, then picks the top three by brute
    /// force over all three-element subsets.
    fn brute_force_summary(reviews: &[String]) -> Vec<String> {
        let sentences: Vec<String> = reviews
            .iter()
            .flat_map(|r| lexicon::sentences(r).into_iter().map(str::to_string))
            .collect();
        let score = |s: &String| -> usize {
            lexicon::tokenize(s)
                .iter()
                .filter(|t| is_planted(t))
                .map(|t| {
                    sentences
                        .iter()
                        .map(|o| lexicon::tokenize(o).iter().filter(|u| *u == t).count())
                        .sum::<usize>()
                })
                .sum()
        };
        let scores: Vec<usize> = sentences.iter().map(score).collect();
        let n = sentences.len();
        let mut best: Option<(usize, Vec<usize>)> = None;
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    let total = scores[a] + scores[b] + scores[c];
                    let better = match &best {
                        None => true,
                        // lexicographically smaller index set wins ties
                        Some((t, _)) => total > *t,
                    };
                    if better {
                        best = Some((total, vec![a, b, c]));
                    }
                }
            }
        }
        best.map(|(_, idx)| idx.into_iter().map(|i| sentences[i].clone()).collect())
            .unwrap_or_default()
    }

    #[test]
    fn repeated_keyword_sentence_is_extracted() {
        let reviews = texts(&[
            "We parked in the garage. The sushi was delicious and cheap.",
            "Music played quietly. The owner greeted us.",
            "Kids liked crayons. The sushi was delicious and affordable. Long walk afterwards.",
            "The pizza was bland.",
        ]);
        let summary = summarize(&reviews, Subject::Business).unwrap();
        assert!(summary.contains("The sushi was delicious and cheap."));
        assert!(summary.contains("The sushi was delicious and affordable."));
        let oracle = brute_force_summary(&reviews);
        assert_eq!(summary, oracle.join(" "));
    }

    #[test]
    fn price_votes_and_ties() {
        assert_eq!(price_tag(&texts(&["great food, very cheap"])), PriceTag::Cheap);
        assert_eq!(price_tag(&texts(&["lovely patio"])), PriceTag::None);
        assert_eq!(price_tag(&texts(&["cheap", "expensive"])), PriceTag::Cheap);
        assert_eq!(price_tag(&texts(&["fair", "overpriced", "expensive"])), PriceTag::Overpriced);
        assert_eq!(price_tag(&[]), PriceTag::None);
    }

    #[test]
    fn category_hits_in_order() {
        assert_eq!(categories(&texts(&["best sushi in town"])), vec!["sushi"]);
        assert!(categories(&texts(&["nothing here"])).is_empty());
        let names = CategoryVocabulary.names();
        let text = names[20..32].join(" and ");
        let found = categories(&[text]);
        assert_eq!(found.len(), 12);
        assert_eq!(found[0], names[20]);
    }

    #[test]
    fn captions_are_deterministic_templates() {
        assert_eq!(stub_caption("img-1"), stub_caption("img-1"));
        let templates = caption_templates();
        for r in ["img-1", "img-2", "photo/abc"] {
            assert!(templates.iter().any(|t| t == stub_caption(r)));
        }
        assert!(StubProvider.call(&Request::Caption { image_ref: String::new() }).is_err());
    }

    #[test]
    fn text_embedding_contract() {
        assert_eq!(embed_text("the sushi"), embed_text("the sushi"));
        let empty = embed_text("");
        assert_eq!(empty.len(), TEXT_EMBEDDING_DIM);
        assert!(empty.iter().all(|&x| x == 0.0));
        for text in ["a", "The sushi was delicious and cheap.", "x y z x y z"] {
            let v = embed_text(text);
            assert_eq!(v.len(), TEXT_EMBEDDING_DIM);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn image_embedding_contract() {
        let a = embed_image("img-9");
        assert_eq!(a.len(), IMAGE_EMBEDDING_DIM);
        assert_eq!(a, embed_image("img-9"));
        assert_ne!(a, embed_image("img-10"));
        assert!(StubProvider.call(&Request::EmbedImage { image_ref: String::new() }).is_err());
    }
}

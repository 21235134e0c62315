//! Per-review model inputs: leave-one-out dense aggregates, padded category
//! indices, and raw embedding bundles that the reducers compress to 32-d.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{binarize_label, Review, ReviewCorpus, Split};
use crate::error::{Error, Result};
use crate::lexicon::{CategoryVocabulary, CATEGORY_COUNT};
use crate::providers::{CategoryList, Enricher, PriceTag, Subject, IMAGE_EMBEDDING_DIM, MAX_CATEGORIES, TEXT_EMBEDDING_DIM};
use crate::reducer::Reducer;

pub const REDUCED_DIM: usize = 32;
pub const CATEGORY_SLOTS: usize = MAX_CATEGORIES;
pub const PADDING_INDEX: usize = CATEGORY_COUNT;
pub const CATEGORY_TABLE_ROWS: usize = CATEGORY_COUNT + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    Proposed,
    ProposedText,
    ProposedImage,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Proposed, Variant::ProposedText, Variant::ProposedImage];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Proposed => "proposed",
            Variant::ProposedText => "proposed-text",
            Variant::ProposedImage => "proposed-image",
        }
    }

    /// Embedding paths, one reducer and one reduced operand each.
    pub fn paths(self) -> &'static [EmbeddingPath] {
        match self {
            Variant::Baseline => &[EmbeddingPath::Baseline],
            Variant::Proposed => &[EmbeddingPath::Text, EmbeddingPath::Image],
            Variant::ProposedText => &[EmbeddingPath::Text],
            Variant::ProposedImage => &[EmbeddingPath::Image],
        }
    }

    /// Price tag and category features come from the enrichment providers.
    pub fn is_enriched(self) -> bool {
        self != Variant::Baseline
    }

    pub fn dense_dim(self) -> usize {
        if self.is_enriched() {
            7
        } else {
            3
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingPath {
    /// Averaged user text, business text and image embeddings.
    Baseline,
    /// User and business summary embeddings.
    Text,
    /// Pooled caption embeddings.
    Image,
}

impl EmbeddingPath {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingPath::Baseline => "baseline",
            EmbeddingPath::Text => "text",
            EmbeddingPath::Image => "image",
        }
    }

    pub fn in_dim(self) -> usize {
        match self {
            EmbeddingPath::Baseline => 2 * TEXT_EMBEDDING_DIM + IMAGE_EMBEDDING_DIM,
            EmbeddingPath::Text => 2 * TEXT_EMBEDDING_DIM,
            EmbeddingPath::Image => TEXT_EMBEDDING_DIM,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        [EmbeddingPath::Baseline, EmbeddingPath::Text, EmbeddingPath::Image]
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Format(format!("unknown embedding path '{name}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseFeatures {
    pub business_review_count: f64,
    pub user_avg_rating: f64,
    pub business_avg_rating: f64,
    /// Present for enriched variants only.
    pub price: Option<PriceTag>,
    /// The user had no other reviews; `user_avg_rating` is the global mean.
    pub user_missing: bool,
    pub business_missing: bool,
}

impl DenseFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.business_review_count, self.user_avg_rating, self.business_avg_rating];
        if let Some(price) = self.price {
            v.extend(price.one_hot());
        }
        v
    }
}

/// Exactly [`CATEGORY_SLOTS`] indices, real entries first, padded with
/// [`PADDING_INDEX`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryIndices(pub [usize; CATEGORY_SLOTS]);

impl CategoryIndices {
    pub fn padding() -> Self {
        Self([PADDING_INDEX; CATEGORY_SLOTS])
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied().filter(|&i| i != PADDING_INDEX)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&bad) = self.0.iter().find(|&&i| i > PADDING_INDEX) {
            return Err(Error::Shape(format!("category index {bad} exceeds {PADDING_INDEX}")));
        }
        let first_pad = self.0.iter().position(|&i| i == PADDING_INDEX).unwrap_or(CATEGORY_SLOTS);
        if self.0[first_pad..].iter().any(|&i| i != PADDING_INDEX) {
            return Err(Error::Shape("category padding precedes a real index".into()));
        }
        Ok(())
    }

    /// Names of the non-padding entries.
    pub fn decode(&self, vocab: &CategoryVocabulary) -> Vec<String> {
        self.active()
            .filter_map(|i| vocab.name_of(i).map(str::to_string))
            .collect()
    }
}

/// Vocabulary indices in list order, right-padded to [`CATEGORY_SLOTS`].
/// Unknown names are dropped with a warning.
pub fn encode_categories(list: &CategoryList, vocab: &CategoryVocabulary) -> Result<CategoryIndices> {
    if list.len() > CATEGORY_SLOTS {
        return Err(Error::Shape(format!(
            "{} categories exceed the {CATEGORY_SLOTS} slots",
            list.len()
        )));
    }
    let mut out = CategoryIndices::padding();
    let mut slot = 0;
    for name in list.names() {
        match vocab.index_of(name) {
            Some(i) => {
                out.0[slot] = i;
                slot += 1;
            }
            None => warn!("dropping category '{name}' missing from the vocabulary"),
        }
    }
    Ok(out)
}

/// Component-wise mean.
pub fn average_pool<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::EmptyInput("nothing to pool".into()))?
        .as_ref();
    let mut sum = first.to_vec();
    for v in &vectors[1..] {
        let v = v.as_ref();
        if v.len() != sum.len() {
            return Err(Error::Shape(format!("cannot pool lengths {} and {}", sum.len(), v.len())));
        }
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
    }
    let n = vectors.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedVector {
    pub name: String,
    pub values: Vec<f64>,
}

/// Raw (unreduced) embedding vectors, grouped by reducer path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBundle {
    pub parts: Vec<(EmbeddingPath, NamedVector)>,
}

impl EmbeddingBundle {
    /// Concatenation of the parts belonging to `path`, in order.
    pub fn path_input(&self, path: EmbeddingPath) -> Vec<f64> {
        self.parts
            .iter()
            .filter(|(p, _)| *p == path)
            .flat_map(|(_, v)| v.values.iter().copied())
            .collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.parts.iter().map(|(_, v)| v.name.as_str()).collect()
    }
}

/// Everything about one review before dimension reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExample {
    pub review_id: String,
    pub split: Split,
    pub label: u8,
    pub dense: DenseFeatures,
    pub categories: CategoryIndices,
    pub embeddings: EmbeddingBundle,
}

/// One model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub review_id: String,
    pub dense: Vec<f64>,
    pub categories: CategoryIndices,
    pub reduced: Vec<Vec<f64>>,
    pub label: u8,
}

/// Leave-one-out views of the train split plus memoized provider outputs.
pub struct FeatureContext<'a> {
    corpus: &'a ReviewCorpus,
    enricher: &'a Enricher,
    variant: Variant,
    train: Vec<usize>,
    by_user: HashMap<&'a str, Vec<usize>>,
    by_business: HashMap<&'a str, Vec<usize>>,
    text_embeddings: HashMap<usize, Vec<f64>>,
    image_embeddings: HashMap<&'a str, Vec<f64>>,
    caption_embeddings: HashMap<&'a str, Vec<f64>>,
}

impl<'a> FeatureContext<'a> {
    /// Indexes the train split and precomputes the per-review and per-image
    /// embeddings `variant` needs.
    pub fn new(corpus: &'a ReviewCorpus, enricher: &'a Enricher, variant: Variant) -> Result<Self> {
        if !corpus.is_split() {
            return Err(Error::Precondition("corpus has no train/test split".into()));
        }
        let train = corpus.indices(Split::Train);
        let mut by_user: HashMap<&str, Vec<usize>> = HashMap::new();
        let mut by_business: HashMap<&str, Vec<usize>> = HashMap::new();
        for &i in &train {
            let r = &corpus.reviews[i];
            by_user.entry(r.user_id.as_str()).or_default().push(i);
            by_business.entry(r.business_id.as_str()).or_default().push(i);
        }
        let mut refs: Vec<&str> = train
            .iter()
            .flat_map(|&i| corpus.reviews[i].image_refs.iter().map(String::as_str))
            .filter(|r| !r.is_empty())
            .collect();
        refs.sort_unstable();
        refs.dedup();

        let paths = variant.paths();
        let text_embeddings = if paths.contains(&EmbeddingPath::Baseline) {
            train
                .par_iter()
                .map(|&i| Ok((i, enricher.embed_text(&corpus.reviews[i].text)?)))
                .collect::<Result<HashMap<_, _>>>()?
        } else {
            HashMap::new()
        };
        let image_embeddings = if paths.contains(&EmbeddingPath::Baseline) {
            refs.par_iter()
                .map(|&r| Ok((r, enricher.embed_image(r)?)))
                .collect::<Result<HashMap<_, _>>>()?
        } else {
            HashMap::new()
        };
        let caption_embeddings = if paths.contains(&EmbeddingPath::Image) {
            refs.par_iter()
                .map(|&r| {
                    let caption = enricher.caption_image(r)?;
                    Ok((r, enricher.embed_text(&caption)?))
                })
                .collect::<Result<HashMap<_, _>>>()?
        } else {
            HashMap::new()
        };
        Ok(Self {
            corpus,
            enricher,
            variant,
            train,
            by_user,
            by_business,
            text_embeddings,
            image_embeddings,
            caption_embeddings,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Train reviews in `group` other than `review` itself, in corpus order.
    fn others(&self, group: Option<&Vec<usize>>, review: &Review) -> Vec<usize> {
        group
            .map(|g| {
                g.iter()
                    .copied()
                    .filter(|&j| self.corpus.reviews[j].review_id != review.review_id)
                    .collect()
            })
            .unwrap_or_default()
    }

    fn user_sources(&self, review: &Review) -> Vec<usize> {
        self.others(self.by_user.get(review.user_id.as_str()), review)
    }

    fn business_sources(&self, review: &Review) -> Vec<usize> {
        self.others(self.by_business.get(review.business_id.as_str()), review)
    }

    fn mean_rating(&self, indices: impl Iterator<Item = usize>) -> Option<f64> {
        let (sum, n) = indices.fold((0.0, 0usize), |(s, n), j| (s + self.corpus.reviews[j].rating as f64, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    fn global_mean(&self, review: &Review) -> Result<f64> {
        self.mean_rating(
            self.train
                .iter()
                .copied()
                .filter(|&j| self.corpus.reviews[j].review_id != review.review_id),
        )
        .ok_or_else(|| Error::Degenerate("train split has no other reviews".into()))
    }

    fn texts(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&j| self.corpus.reviews[j].text.clone()).collect()
    }

    fn images(&self, indices: &[usize]) -> Vec<&'a str> {
        let corpus: &'a ReviewCorpus = self.corpus;
        indices
            .iter()
            .flat_map(|&j| corpus.reviews[j].image_refs.iter().map(String::as_str))
            .filter(|r| !r.is_empty())
            .collect()
    }

    /// Aggregates over the user's and business's other train reviews. Test
    /// reviews are never in the train groups, so they see the whole split.
    pub fn build_dense(&self, review: &Review) -> Result<DenseFeatures> {
        let users = self.user_sources(review);
        let businesses = self.business_sources(review);
        let user_avg = self.mean_rating(users.iter().copied());
        let business_avg = self.mean_rating(businesses.iter().copied());
        let fallback = if user_avg.is_none() || business_avg.is_none() {
            Some(self.global_mean(review)?)
        } else {
            None
        };
        let price = if self.variant.is_enriched() {
            Some(self.enricher.extract_price_tag(&self.texts(&businesses))?)
        } else {
            None
        };
        Ok(DenseFeatures {
            business_review_count: businesses.len() as f64,
            user_avg_rating: user_avg.or(fallback).expect("fallback computed"),
            business_avg_rating: business_avg.or(fallback).expect("fallback computed"),
            price,
            user_missing: user_avg.is_none(),
            business_missing: business_avg.is_none(),
        })
    }

    pub fn build_categories(&self, review: &Review) -> Result<CategoryIndices> {
        if !self.variant.is_enriched() {
            return Ok(CategoryIndices::padding());
        }
        let texts = self.texts(&self.business_sources(review));
        let list = self.enricher.extract_categories(&texts)?;
        encode_categories(&list, &CategoryVocabulary)
    }

    fn summary_embedding(&self, sources: &[usize], subject: Subject) -> Result<Vec<f64>> {
        if sources.is_empty() {
            return Ok(vec![0.0; TEXT_EMBEDDING_DIM]);
        }
        let summary = self.enricher.summarize_reviews(&self.texts(sources), subject)?;
        self.enricher.embed_text(&summary.text)
    }

    fn pooled(&self, vectors: Vec<&Vec<f64>>, dim: usize, what: &str, review: &Review) -> Result<Vec<f64>> {
        if vectors.is_empty() {
            debug!("no {what} sources for review {}", review.review_id);
            return Ok(vec![0.0; dim]);
        }
        average_pool(&vectors)
    }

    fn memo<K: std::hash::Hash + Eq + fmt::Debug>(map: &HashMap<K, Vec<f64>>, key: K) -> Result<&Vec<f64>> {
        map.get(&key)
            .ok_or_else(|| Error::Precondition(format!("no precomputed embedding for {key:?}")))
    }

    pub fn build_embeddings(&self, review: &Review) -> Result<EmbeddingBundle> {
        let users = self.user_sources(review);
        let businesses = self.business_sources(review);
        let mut parts = Vec::new();
        for &path in self.variant.paths() {
            match path {
                EmbeddingPath::Baseline => {
                    let user_vecs = users
                        .iter()
                        .map(|&j| Self::memo(&self.text_embeddings, j))
                        .collect::<Result<Vec<_>>>()?;
                    let business_vecs = businesses
                        .iter()
                        .map(|&j| Self::memo(&self.text_embeddings, j))
                        .collect::<Result<Vec<_>>>()?;
                    let image_vecs = self
                        .images(&businesses)
                        .into_iter()
                        .map(|r| Self::memo(&self.image_embeddings, r))
                        .collect::<Result<Vec<_>>>()?;
                    parts.push((path, named("user_text", self.pooled(user_vecs, TEXT_EMBEDDING_DIM, "user text", review)?)));
                    parts.push((path, named("business_text", self.pooled(business_vecs, TEXT_EMBEDDING_DIM, "business text", review)?)));
                    parts.push((path, named("image", self.pooled(image_vecs, IMAGE_EMBEDDING_DIM, "image", review)?)));
                }
                EmbeddingPath::Text => {
                    let mut concat = self.summary_embedding(&users, Subject::User)?;
                    concat.extend(self.summary_embedding(&businesses, Subject::Business)?);
                    parts.push((path, named("text_summary_concat", concat)));
                }
                EmbeddingPath::Image => {
                    let caption_vecs = self
                        .images(&businesses)
                        .into_iter()
                        .map(|r| Self::memo(&self.caption_embeddings, r))
                        .collect::<Result<Vec<_>>>()?;
                    parts.push((path, named("caption_pooled", self.pooled(caption_vecs, TEXT_EMBEDDING_DIM, "caption", review)?)));
                }
            }
        }
        Ok(EmbeddingBundle { parts })
    }

    pub fn build_raw(&self, review: &Review, split: Split) -> Result<RawExample> {
        Ok(RawExample {
            review_id: review.review_id.clone(),
            split,
            label: binarize_label(review.rating)?,
            dense: self.build_dense(review)?,
            categories: self.build_categories(review)?,
            embeddings: self.build_embeddings(review)?,
        })
    }

    /// Raw examples for every review of the corpus, in corpus order.
    pub fn build_all(&self) -> Result<Vec<RawExample>> {
        self.corpus
            .reviews
            .par_iter()
            .map(|r| {
                let split = self
                    .corpus
                    .split_of(&r.review_id)
                    .ok_or_else(|| Error::Precondition(format!("review {} has no split", r.review_id)))?;
                self.build_raw(r, split)
            })
            .collect()
    }
}

fn named(name: &str, values: Vec<f64>) -> NamedVector {
    NamedVector {
        name: name.to_string(),
        values,
    }
}

/// Applies one trained reducer per embedding path.
pub fn assemble_examples(raw: &[RawExample], variant: Variant, reducers: &[Reducer]) -> Result<Vec<Example>> {
    let paths = variant.paths();
    if reducers.len() != paths.len() || reducers.iter().zip(paths).any(|(r, p)| r.path() != *p) {
        return Err(Error::Shape(format!(
            "variant {variant} needs reducers for {:?}",
            paths.iter().map(|p| p.name()).collect::<Vec<_>>()
        )));
    }
    raw.par_iter()
        .map(|r| {
            let reduced = reducers
                .iter()
                .map(|m| m.reduce_vector(&r.embeddings.path_input(m.path())))
                .collect::<Result<Vec<_>>>()?;
            Ok(Example {
                review_id: r.review_id.clone(),
                dense: r.dense.to_vec(),
                categories: r.categories,
                reduced,
                label: r.label,
            })
        })
        .collect()
}

pub fn write_examples<W: Write>(examples: &[Example], mut out: W) -> Result<()> {
    for e in examples {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_examples<R: BufRead>(reader: R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_corpus, SyntheticConfig};
    use std::collections::BTreeMap;

    fn review(id: &str, user: &str, business: &str, rating: u8, text: &str, images: &[&str]) -> Review {
        Review {
            review_id: id.into(),
            user_id: user.into(),
            business_id: business.into(),
            rating,
            text: text.into(),
            image_refs: images.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn toy() -> ReviewCorpus {
        let reviews = vec![
            review("r1", "u1", "b1", 5, "The sushi was delicious and cheap.", &["i1"]),
            review("r2", "u1", "b2", 1, "The pizza was awful and expensive.", &[]),
            review("r3", "u2", "b1", 4, "Nice sushi.", &["i2", "i3"]),
            review("r4", "u3", "b1", 2, "Slow service.", &[]),
            review("r5", "u9", "b1", 3, "Test review about sushi.", &["i4"]),
        ];
        let split: BTreeMap<String, Split> = [
            ("r1", Split::Train),
            ("r2", Split::Train),
            ("r3", Split::Train),
            ("r4", Split::Train),
            ("r5", Split::Test),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        ReviewCorpus::new(reviews).unwrap().with_split(split).unwrap()
    }

    #[test]
    fn leave_one_out_dense() {
        let corpus = toy();
        let enricher = Enricher::offline();
        let ctx = FeatureContext::new(&corpus, &enricher, Variant::Baseline).unwrap();
        let d = ctx.build_dense(&corpus.reviews[0]).unwrap();
        assert_eq!(d.user_avg_rating, 1.0);
        assert_eq!(d.business_review_count, 2.0);
        assert_eq!(d.business_avg_rating, 3.0);
        assert!(!d.user_missing);
        assert_eq!(d.to_vec().len(), 3);

        // u2 has no other reviews: global train mean without r3 = (5+1+2)/3
        let d3 = ctx.build_dense(&corpus.reviews[2]).unwrap();
        assert!(d3.user_missing);
        assert_eq!(d3.user_avg_rating, 8.0 / 3.0);

        // test review sees the whole train split
        let d5 = ctx.build_dense(&corpus.reviews[4]).unwrap();
        assert_eq!(d5.business_review_count, 3.0);
        assert_eq!(d5.business_avg_rating, 11.0 / 3.0);
        assert!(d5.user_missing);
        assert_eq!(d5.user_avg_rating, 3.0);
    }

    #[test]
    fn enriched_dense_has_price_one_hot() {
        let corpus = toy();
        let enricher = Enricher::offline();
        let ctx = FeatureContext::new(&corpus, &enricher, Variant::Proposed).unwrap();
        let d = ctx.build_dense(&corpus.reviews[2]).unwrap();
        assert_eq!(d.price, Some(PriceTag::Cheap));
        let v = d.to_vec();
        assert_eq!(v.len(), 7);
        assert_eq!(v[3..].iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn category_encoding() {
        let vocab = CategoryVocabulary;
        let (sushi, _) = CategoryList::from_names(["sushi"]);
        let idx = encode_categories(&sushi, &vocab).unwrap();
        assert_eq!(idx.0, [7, 179, 179, 179, 179, 179, 179, 179, 179, 179, 179]);
        assert_eq!(encode_categories(&CategoryList::default(), &vocab).unwrap(), CategoryIndices::padding());
        let names: Vec<&str> = vocab.names()[..11].iter().map(String::as_str).collect();
        let (full, _) = CategoryList::from_names(names.clone());
        let enc = encode_categories(&full, &vocab).unwrap();
        assert!(enc.active().count() == 11);
        assert_eq!(enc.decode(&vocab), names);
        enc.validate().unwrap();
        let mut bad = CategoryIndices::padding();
        bad.0[3] = 5;
        assert!(bad.validate().is_err());
        bad.0[3] = 180;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pooling() {
        assert_eq!(average_pool(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap(), vec![2.0, 2.0]);
        assert_eq!(average_pool(&vec![vec![0.5, 2.0]; 4]).unwrap(), vec![0.5, 2.0]);
        assert!(average_pool::<Vec<f64>>(&[]).is_err());
        assert!(average_pool(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn bundle_dimensions() {
        let corpus = toy();
        let enricher = Enricher::offline();
        for variant in Variant::ALL {
            let ctx = FeatureContext::new(&corpus, &enricher, variant).unwrap();
            for r in &corpus.reviews {
                let b = ctx.build_embeddings(r).unwrap();
                for &path in variant.paths() {
                    assert_eq!(b.path_input(path).len(), path.in_dim());
                }
            }
        }
        let ctx = FeatureContext::new(&corpus, &enricher, Variant::Baseline).unwrap();
        // r2: business b2 has no other reviews, user u1 has only r1
        let b = ctx.build_embeddings(&corpus.reviews[1]).unwrap();
        assert_eq!(b.names(), vec!["user_text", "business_text", "image"]);
        assert_eq!(b.parts[0].1.values, enricher.embed_text(&corpus.reviews[0].text).unwrap());
        assert!(b.parts[2].1.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn parallel_build_matches_sequential() {
        let cfg = SyntheticConfig {
            n_users: 20,
            n_businesses: 10,
            n_reviews: 120,
            ..SyntheticConfig::default()
        };
        let corpus = split_corpus(&generate_synthetic(&cfg).unwrap(), 0.2, 1).unwrap();
        let enricher = Enricher::offline();
        let ctx = FeatureContext::new(&corpus, &enricher, Variant::Proposed).unwrap();
        let all = ctx.build_all().unwrap();
        for (r, raw) in corpus.reviews.iter().zip(&all) {
            let split = corpus.split_of(&r.review_id).unwrap();
            assert_eq!(&ctx.build_raw(r, split).unwrap(), raw);
        }
    }

    #[test]
    fn example_dump_round_trips() {
        let e = Example {
            review_id: "r".into(),
            dense: vec![0.1, 1.0 / 3.0, 4.5],
            categories: CategoryIndices::padding(),
            reduced: vec![vec![std::f64::consts::PI; REDUCED_DIM]],
            label: 1,
        };
        let mut buf = Vec::new();
        write_examples(std::slice::from_ref(&e), &mut buf).unwrap();
        assert_eq!(read_examples(&buf[..]).unwrap(), vec![e]);
    }
}

//! End-to-end orchestration: raw features per variant, validation carving,
//! reducer training, example assembly and the repeated training grid.

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{ReviewCorpus, Split};
use crate::error::{Error, Result};
use crate::features::{assemble_examples, Example, FeatureContext, RawExample, Variant};
use crate::providers::Enricher;
use crate::ranker::Ranker;
use crate::reducer::{train_reducer, Reducer, ReducerConfig};
use crate::train::{evaluate, train_loop, ClassWeights, Grid, LossScheme, RunRecord, TrainConfig};

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// Raw (pre-reduction) features of every review for one variant.
pub fn build_raw(corpus: &ReviewCorpus, enricher: &Enricher, variant: Variant) -> Result<Vec<RawExample>> {
    if !corpus.is_split() {
        return Err(Error::Precondition("corpus has no train/test split".into()));
    }
    FeatureContext::new(corpus, enricher, variant)?.build_all()
}

/// Seeded split of the train rows into (fit, validation) positions of `raw`.
/// The validation part holds `round(fraction * n_train)` rows, at least one,
/// and never the whole train split.
pub fn carve_validation(raw: &[RawExample], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} outside (0, 1)")));
    }
    let mut train: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].split == Split::Train).collect();
    if train.len() < 2 {
        return Err(Error::EmptyInput("need at least two train reviews to carve validation".into()));
    }
    train.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((fraction * train.len() as f64).round() as usize).clamp(1, train.len() - 1);
    let mut validation = train.split_off(train.len() - n_val);
    train.sort_unstable();
    validation.sort_unstable();
    Ok((train, validation))
}

/// Examples for one (variant, scheme), with the reducers used to build them.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub variant: Variant,
    pub scheme: LossScheme,
    pub fit: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub reducers: Vec<Reducer>,
}

impl PreparedData {
    /// Class weights from the rows the ranker is fitted on.
    pub fn weights(&self) -> Result<ClassWeights> {
        let labels: Vec<u8> = self.fit.iter().map(|e| e.label).collect();
        ClassWeights::from_labels(&labels, self.scheme)
    }
}

fn reducer_config(config: &TrainConfig) -> ReducerConfig {
    ReducerConfig {
        epochs: config.reducer_epochs,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        scheme: config.scheme,
        reduction: config.reduction,
        seed: config.seed,
    }
}

/// Trains one reducer per embedding path on the fit rows, then assembles
/// fit, validation and test examples with them.
pub fn prepare(raw: &[RawExample], config: &TrainConfig) -> Result<PreparedData> {
    config.validate()?;
    let variant = config.variant;
    let (fit_idx, val_idx) = carve_validation(raw, config.validation_fraction, config.seed)?;
    let labels: Vec<u8> = fit_idx.iter().map(|&i| raw[i].label).collect();
    let reducers = variant
        .paths()
        .iter()
        .map(|&path| {
            let width = path.in_dim();
            let mut inputs = Array2::zeros((fit_idx.len(), width));
            for (row, &i) in fit_idx.iter().enumerate() {
                let values = raw[i].embeddings.path_input(path);
                if values.len() != width {
                    return Err(Error::Shape(format!("{} input has {} values, expected {width}", path.name(), values.len())));
                }
                inputs.row_mut(row).assign(&ndarray::ArrayView1::from(&values));
            }
            train_reducer(path, inputs.view(), &labels, &reducer_config(config))
        })
        .collect::<Result<Vec<_>>>()?;

    let pick = |idx: &[usize]| -> Vec<RawExample> { idx.iter().map(|&i| raw[i].clone()).collect() };
    let test: Vec<RawExample> = raw.iter().filter(|r| r.split == Split::Test).cloned().collect();
    Ok(PreparedData {
        variant,
        scheme: config.scheme,
        fit: assemble_examples(&pick(&fit_idx), variant, &reducers)?,
        validation: assemble_examples(&pick(&val_idx), variant, &reducers)?,
        test: assemble_examples(&test, variant, &reducers)?,
        reducers,
    })
}

/// A finished run together with its best-epoch parameters.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub record: RunRecord,
    pub ranker: Ranker,
}

/// Trains one configuration on prepared data and fills in test metrics.
pub fn run_one(data: &PreparedData, config: &TrainConfig, repeat: usize) -> Result<TrainedRun> {
    if config.variant != data.variant || config.scheme != data.scheme {
        return Err(Error::Config(format!(
            "config {} / {} does not match prepared data {} / {}",
            config.variant, config.scheme, data.variant, data.scheme
        )));
    }
    let (ranker, mut record) = train_loop(config, &data.fit, &data.validation)?;
    record.repeat = repeat;
    if !data.test.is_empty() {
        record.test = Some(evaluate(&ranker, &data.test, &data.weights()?)?);
    }
    Ok(TrainedRun { record, ranker })
}

/// Every cell of `grid`, `grid.repeats` times with seeds `base.seed + r`.
/// Features and reducers are built once per (variant, scheme) from the base
/// seed; runs execute in parallel and come back in grid order.
pub fn run_grid(grid: &Grid, corpus: &ReviewCorpus, enricher: &Enricher, base: &TrainConfig) -> Result<Vec<TrainedRun>> {
    grid.validate()?;
    let mut runs = Vec::with_capacity(grid.len());
    for &variant in &grid.variants {
        let raw = build_raw(corpus, enricher, variant)?;
        for &scheme in &grid.schemes {
            let data = prepare(
                &raw,
                &TrainConfig {
                    variant,
                    scheme,
                    ..base.clone()
                },
            )?;
            let jobs: Vec<(usize, TrainConfig)> = grid
                .configs(base)
                .into_iter()
                .filter(|(_, c)| c.variant == variant && c.scheme == scheme)
                .collect();
            info!("{variant} / {scheme}: {} runs", jobs.len());
            let done = jobs
                .par_iter()
                .map(|(repeat, config)| run_one(&data, config, *repeat))
                .collect::<Result<Vec<_>>>()?;
            runs.extend(done);
        }
    }
    Ok(runs)
}

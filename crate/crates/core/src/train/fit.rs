use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, ClassWeights, EarlyStopping, LossScheme, Metrics, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::features::{Example, Variant};
use crate::nn::Mode;
use crate::ranker::Ranker;

/// How per-example losses in a mini-batch combine into the SGD objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        })
    }
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::Config(format!("unknown batch reduction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub scheme: LossScheme,
    pub dropout: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub repeats: usize,
    pub batch_size: usize,
    pub reduction: Reduction,
    /// Share of the train split held out for early stopping.
    pub validation_fraction: f64,
    pub reducer_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Proposed,
            scheme: LossScheme::Basic,
            dropout: 0.1,
            learning_rate: 0.01,
            max_epochs: 300,
            patience: 50,
            repeats: 5,
            batch_size: 64,
            reduction: Reduction::Sum,
            validation_fraction: 0.1,
            reducer_epochs: crate::reducer::REDUCER_EPOCHS,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.patience == 0 || self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be positive and below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub validation: Metrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub repeat: usize,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    /// Metrics of the returned (best-epoch) parameters.
    pub train: Metrics,
    pub validation: Metrics,
    pub test: Option<Metrics>,
    pub wall_time_ms: u64,
}

/// Wall time is excluded.
impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.repeat == other.repeat
            && self.history == other.history
            && self.best_epoch == other.best_epoch
            && self.stopped_epoch == other.stopped_epoch
            && self.train == other.train
            && self.validation == other.validation
            && self.test == other.test
    }
}

fn labels(examples: &[Example]) -> Vec<u8> {
    examples.iter().map(|e| e.label).collect()
}

pub fn evaluate(ranker: &Ranker, examples: &[Example], weights: &ClassWeights) -> Result<Metrics> {
    let probs = ranker.predict(examples)?;
    compute_metrics(&probs, &labels(examples), weights, DEFAULT_THRESHOLD)
}

/// Shuffled mini-batch SGD with early stopping on validation fp rate.
/// Returns the parameters of the best epoch.
pub fn train_loop(config: &TrainConfig, train: &[Example], validation: &[Example]) -> Result<(Ranker, RunRecord)> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyInput("training needs train and validation examples".into()));
    }
    let train_labels = labels(train);
    let positives = train_labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::Degenerate("train split holds a single class".into()));
    }
    let started = Instant::now();
    let weights = ClassWeights::from_labels(&train_labels, config.scheme)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ranker = Ranker::new(config.variant, rng.random())?;
    let mut best = ranker.clone();
    let mut stopper = EarlyStopping::new(config.patience, config.max_epochs)?;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    loop {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let mode = Mode::Train {
                dropout: config.dropout,
                seed: rng.random(),
            };
            let (_, grads) = ranker.loss_gradients(&batch, &weights, config.reduction, mode)?;
            ranker.sgd_step(&grads, config.learning_rate)?;
        }
        if !ranker.is_finite() {
            return Err(Error::NonFinite(format!("ranker diverged in epoch {}", stopper.epoch() + 1)));
        }
        let metrics = evaluate(&ranker, validation, &weights)?;
        let seen = stopper.observe(metrics.fp_rate);
        debug!(
            "epoch {} validation fp {:.4} acc {:.4}{}",
            stopper.epoch(),
            metrics.fp_rate,
            metrics.accuracy,
            if seen.improved { " *" } else { "" }
        );
        history.push(EpochStats {
            epoch: stopper.epoch(),
            validation: metrics,
        });
        if seen.improved {
            best = ranker.clone();
        }
        if seen.stop {
            break;
        }
    }

    let record = RunRecord {
        config: config.clone(),
        repeat: 0,
        best_epoch: stopper.best_epoch(),
        stopped_epoch: stopper.epoch(),
        train: evaluate(&best, train, &weights)?,
        validation: evaluate(&best, validation, &weights)?,
        history,
        test: None,
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    info!(
        "{} {} dropout {} seed {}: best epoch {} of {}, validation fp {:.4}",
        config.variant, config.scheme, config.dropout, config.seed, record.best_epoch, record.stopped_epoch, record.validation.fp_rate
    );
    Ok((best, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{CategoryIndices, REDUCED_DIM};

    /// Linearly separable toy data: the label is the sign of the first dense
    /// feature, with a 3:1 class ratio.
    fn toy(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = u8::from(i % 4 != 0);
                let x: f64 = rng.random_range(0.2..1.0) * if label == 1 { 1.0 } else { -1.0 };
                Example {
                    review_id: format!("t{i}"),
                    dense: vec![x, rng.random_range(-1.0..1.0), 0.0],
                    categories: CategoryIndices::padding(),
                    reduced: vec![(0..REDUCED_DIM).map(|_| rng.random_range(-0.1..0.1)).collect()],
                    label,
                }
            })
            .collect()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            variant: Variant::Baseline,
            max_epochs: 40,
            patience: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_and_is_deterministic() {
        let train = toy(200, 1);
        let validation = toy(60, 2);
        let (ranker, a) = train_loop(&config(), &train, &validation).unwrap();
        let (_, b) = train_loop(&config(), &train, &validation).unwrap();
        assert_eq!(a, b);
        assert!(a.stopped_epoch <= 40);
        assert!(a.train.accuracy > 0.9, "{:?}", a.train);
        // checkpoint contract
        let again = evaluate(&ranker, &validation, &ClassWeights::from_labels(&labels(&train), LossScheme::Basic).unwrap()).unwrap();
        assert_eq!(again.fp_rate, a.history[a.best_epoch - 1].validation.fp_rate);
    }

    #[test]
    fn rejects_single_class() {
        let mut train = toy(20, 1);
        train.iter_mut().for_each(|e| e.label = 1);
        let err = train_loop(&config(), &train, &toy(8, 2)).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { dropout: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { patience: 300, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { repeats: 0, ..TrainConfig::default() }.validate().is_err());
    }
}

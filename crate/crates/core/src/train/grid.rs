use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LossScheme, RunRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::features::Variant;

/// Variants × loss schemes × dropout rates, each cell run `repeats` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub variants: Vec<Variant>,
    pub schemes: Vec<LossScheme>,
    pub dropouts: Vec<f64>,
    pub repeats: usize,
}

impl Grid {
    pub const DROPOUTS: [f64; 3] = [0.1, 0.3, 0.5];

    /// All four variants, both weighted schemes, the three dropout rates.
    pub fn full(repeats: usize) -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            schemes: vec![LossScheme::Basic, LossScheme::SqrtRoot],
            dropouts: Self::DROPOUTS.to_vec(),
            repeats,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.schemes.is_empty() || self.dropouts.is_empty() {
            return Err(Error::Config("grid has an empty axis".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        Ok(())
    }

    /// One config per run, in variant, scheme, dropout, repeat order. Repeat
    /// `r` uses seed `base.seed + r`.
    pub fn configs(&self, base: &TrainConfig) -> Vec<(usize, TrainConfig)> {
        let mut out = Vec::new();
        for &variant in &self.variants {
            for &scheme in &self.schemes {
                for &dropout in &self.dropouts {
                    for r in 0..self.repeats {
                        out.push((
                            r,
                            TrainConfig {
                                variant,
                                scheme,
                                dropout,
                                repeats: self.repeats,
                                seed: base.seed.wrapping_add(r as u64),
                                ..base.clone()
                            },
                        ));
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.variants.len() * self.schemes.len() * self.dropouts.len() * self.repeats
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// One grid cell: the run with the lowest validation fp rate, plus spread
/// over all its repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub variant: Variant,
    pub scheme: LossScheme,
    pub dropout: f64,
    pub runs: usize,
    pub best: RunRecord,
    pub train_fp_rate: MeanStd,
    pub train_accuracy: MeanStd,
    pub test_fp_rate: Option<MeanStd>,
    pub test_accuracy: Option<MeanStd>,
}

type CellKey = (Variant, LossScheme, u64);

/// Groups records by (variant, scheme, dropout). Ties on validation fp rate
/// go to the lower repeat index.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<CellSummary>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no run records".into()));
    }
    let mut cells: BTreeMap<CellKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.config.variant, r.config.scheme, r.config.dropout.to_bits()))
            .or_default()
            .push(r);
    }
    let mut out = Vec::with_capacity(cells.len());
    for ((variant, scheme, dropout), runs) in cells {
        let best = runs
            .iter()
            .min_by(|a, b| {
                a.validation
                    .fp_rate
                    .total_cmp(&b.validation.fp_rate)
                    .then(a.repeat.cmp(&b.repeat))
            })
            .expect("cell has runs");
        let collect = |f: &dyn Fn(&RunRecord) -> f64| runs.iter().map(|r| f(r)).collect::<Vec<_>>();
        let tests: Option<Vec<_>> = runs.iter().map(|r| r.test).collect();
        out.push(CellSummary {
            variant,
            scheme,
            dropout: f64::from_bits(dropout),
            runs: runs.len(),
            best: (*best).clone(),
            train_fp_rate: MeanStd::of(&collect(&|r| r.train.fp_rate)),
            train_accuracy: MeanStd::of(&collect(&|r| r.train.accuracy)),
            test_fp_rate: tests.as_ref().map(|t| MeanStd::of(&t.iter().map(|m| m.fp_rate).collect::<Vec<_>>())),
            test_accuracy: tests.as_ref().map(|t| MeanStd::of(&t.iter().map(|m| m.accuracy).collect::<Vec<_>>())),
        });
    }
    Ok(out)
}

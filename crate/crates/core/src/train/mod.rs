//! Class-weighted cross-entropy, evaluation metrics, early stopping, and the
//! training loop and grid runner built on them.

mod fit;
mod grid;

pub use fit::{evaluate, train_loop, EpochStats, Reduction, RunRecord, TrainConfig};
pub use grid::{aggregate, CellSummary, Grid, MeanStd};


use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossScheme {
    Basic,
    #[serde(rename = "sqrt")]
    SqrtRoot,
    Unweighted,
}

impl LossScheme {
    pub const ALL: [LossScheme; 3] = [LossScheme::Basic, LossScheme::SqrtRoot, LossScheme::Unweighted];

    pub fn name(self) -> &'static str {
        match self {
            LossScheme::Basic => "basic",
            LossScheme::SqrtRoot => "sqrt",
            LossScheme::Unweighted => "unweighted",
        }
    }
}

impl fmt::Display for LossScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Ok(LossScheme::Basic),
            "sqrt" | "sqrtroot" | "sqrt-root" | "square-root" => Ok(LossScheme::SqrtRoot),
            "unweighted" | "none" => Ok(LossScheme::Unweighted),
            other => Err(Error::Config(format!("unknown loss scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w0: f64,
    pub w1: f64,
    pub scheme: LossScheme,
}

impl ClassWeights {
    pub fn unweighted() -> Self {
        Self {
            w0: 1.0,
            w1: 1.0,
            scheme: LossScheme::Unweighted,
        }
    }

    /// Weights from the label counts of `labels`.
    pub fn from_labels(labels: &[u8], scheme: LossScheme) -> Result<Self> {
        let n1 = labels.iter().filter(|&&l| l == 1).count();
        class_weights(labels.len() - n1, n1, scheme)
    }

    pub fn for_label(&self, label: u8) -> f64 {
        if label == 1 {
            self.w1
        } else {
            self.w0
        }
    }
}

/// `Basic`: `w_l = 1 - n_l / N`. `SqrtRoot`: the square root of that.
/// `Unweighted`: both one.
pub fn class_weights(n0: usize, n1: usize, scheme: LossScheme) -> Result<ClassWeights> {
    let total = n0 + n1;
    if total == 0 {
        return Err(Error::EmptyInput("class weights need at least one example".into()));
    }
    let basic = |n: usize| 1.0 - n as f64 / total as f64;
    let (w0, w1) = match scheme {
        LossScheme::Basic => (basic(n0), basic(n1)),
        LossScheme::SqrtRoot => (basic(n0).sqrt(), basic(n1).sqrt()),
        LossScheme::Unweighted => (1.0, 1.0),
    };
    Ok(ClassWeights { w0, w1, scheme })
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Precondition(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// `-w_y [y ln p + (1 - y) ln(1 - p)]` with `p` clamped away from 0 and 1.
pub fn weighted_bce(p: f64, label: u8, weights: &ClassWeights) -> Result<f64> {
    check_probability(p)?;
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let w = weights.for_label(label);
    Ok(if label == 1 { -w * p.ln() } else { -w * (1.0 - p).ln() })
}

/// `d weighted_bce / d p`; zero where the clamp makes the loss flat.
pub fn weighted_bce_grad(p: f64, label: u8, weights: &ClassWeights) -> Result<f64> {
    check_probability(p)?;
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return Ok(0.0);
    }
    let w = weights.for_label(label);
    Ok(if label == 1 { -w / p } else { w / (1.0 - p) })
}

/// `weighted_bce(sigmoid(a)) - weighted_bce(sigmoid(b))` from the logits
/// `a`, `b` and their separately computed difference `d = a - b`, without
/// subtracting two nearly equal losses. Falls back to the direct difference
/// when either probability hits the clamp.
pub fn weighted_bce_logit_difference(a: f64, b: f64, d: f64, label: u8, weights: &ClassWeights) -> Result<f64> {
    let (pa, pb) = (crate::nn::sigmoid(a), crate::nn::sigmoid(b));
    let inside = |p: f64| (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
    if !inside(pa) || !inside(pb) {
        return Ok(weighted_bce(pa, label, weights)? - weighted_bce(pb, label, weights)?);
    }
    // label 1: softplus(-z); label 0: softplus(z)
    let (y, delta) = if label == 1 { (-b, -d) } else { (b, d) };
    Ok(weights.for_label(label) * softplus_step(y, delta))
}

/// `softplus(y + delta) - softplus(y) = ln(1 + sigmoid(y) * expm1(delta))`.
fn softplus_step(y: f64, delta: f64) -> f64 {
    (crate::nn::sigmoid(y) * delta.exp_m1()).ln_1p()
}

/// Gradient of the batch loss with respect to each output probability, as an
/// n×1 column ready for backpropagation.
pub fn output_gradient(probs: ArrayView1<f64>, labels: &[u8], weights: &ClassWeights, reduction: Reduction) -> Result<Array2<f64>> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} outputs for {} labels", probs.len(), labels.len())));
    }
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / labels.len().max(1) as f64,
    };
    let mut g = Array2::zeros((labels.len(), 1));
    for (i, (&p, &y)) in probs.iter().zip(labels).enumerate() {
        g[[i, 0]] = scale * weighted_bce_grad(p, y, weights)?;
    }
    Ok(g)
}

/// Summed weighted BCE over a single-output network, usable with
/// [`crate::nn::grad_check`].
#[derive(Debug, Clone)]
pub struct WeightedBceObjective {
    pub labels: Vec<u8>,
    pub weights: ClassWeights,
}

impl crate::nn::Objective for WeightedBceObjective {
    fn loss(&self, outputs: ndarray::ArrayView2<f64>) -> Result<f64> {
        if outputs.ncols() != 1 || outputs.nrows() != self.labels.len() {
            return Err(Error::Shape(format!("{:?} outputs for {} labels", outputs.dim(), self.labels.len())));
        }
        let mut total = 0.0;
        for (&p, &y) in outputs.column(0).iter().zip(&self.labels) {
            total += weighted_bce(p, y, &self.weights)?;
        }
        Ok(total)
    }

    fn gradient(&self, outputs: ndarray::ArrayView2<f64>) -> Result<Array2<f64>> {
        if outputs.ncols() != 1 {
            return Err(Error::Shape(format!("{} output columns, expected 1", outputs.ncols())));
        }
        output_gradient(outputs.column(0), &self.labels, &self.weights, Reduction::Sum)
    }

    fn loss_difference(&self, pair: &crate::nn::OutputPair) -> Result<f64> {
        let z = &pair.logits;
        let mut total = 0.0;
        for (i, &y) in self.labels.iter().enumerate() {
            total += weighted_bce_logit_difference(z.plus[[i, 0]], z.minus[[i, 0]], z.diff[[i, 0]], y, &self.weights)?;
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub fp_rate: f64,
    pub loss_sum: f64,
    pub loss_mean: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Metrics {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Confusion counts with `p >= threshold` predicted positive, plus weighted
/// loss aggregates.
pub fn compute_metrics(predictions: &[f64], labels: &[u8], weights: &ClassWeights, threshold: f64) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to score".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    let mut loss_sum = 0.0;
    for (&p, &y) in predictions.iter().zip(labels) {
        loss_sum += weighted_bce(p, y, weights)?;
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = predictions.len();
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / n as f64,
        fp_rate: if fp + tn == 0 { 0.0 } else { fp as f64 / (fp + tn) as f64 },
        loss_sum,
        loss_mean: loss_sum / n as f64,
        tp,
        fp,
        tn,
        fn_,
    })
}

/// Patience-based stopping on a metric where lower is better. Only strict
/// improvements of the running best reset the counter.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    max_epochs: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize) -> Result<Self> {
        if patience == 0 || patience >= max_epochs {
            return Err(Error::Config(format!(
                "patience {patience} must be positive and below max_epochs {max_epochs}"
            )));
        }
        Ok(Self {
            patience,
            max_epochs,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        })
    }

    /// Records the next epoch's value (epochs count from 1).
    pub fn observe(&mut self, value: f64) -> Observation {
        self.epoch += 1;
        let improved = value < self.best;
        if improved {
            self.best = value;
            self.best_epoch = self.epoch;
        }
        let stop = self.epoch >= self.max_epochs || self.epoch - self.best_epoch >= self.patience;
        Observation { improved, stop }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// The epoch at which training on `history` stops.
pub fn stopped_epoch(history: &[f64], patience: usize, max_epochs: usize) -> Result<usize> {
    let mut stopper = EarlyStopping::new(patience, max_epochs)?;
    for &value in history {
        if stopper.observe(value).stop {
            return Ok(stopper.epoch());
        }
    }
    Err(Error::Precondition(format!(
        "history of {} epochs ends before a stopping decision",
        history.len()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_difference_matches_direct() {
        let w = ClassWeights { w0: 0.8, w1: 0.2, scheme: LossScheme::Basic };
        for &(a, b) in &[(0.3, -0.4), (2.0, 1.9), (-5.0, 3.0), (40.0, 39.0)] {
            for label in [0u8, 1] {
                let direct = weighted_bce(crate::nn::sigmoid(a), label, &w).unwrap()
                    - weighted_bce(crate::nn::sigmoid(b), label, &w).unwrap();
                let d = weighted_bce_logit_difference(a, b, a - b, label, &w).unwrap();
                assert!((d - direct).abs() < 1e-9, "{a} {b} {label}: {d} vs {direct}");
            }
        }
    }

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn weight_examples() {
        let b = class_weights(100, 900, LossScheme::Basic).unwrap();
        assert_abs_diff_eq!(b.w0, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(b.w1, 0.1, epsilon = 1e-12);
        let s = class_weights(100, 900, LossScheme::SqrtRoot).unwrap();
        assert_abs_diff_eq!(s.w0, 0.948_683_298_050_513_8, epsilon = 1e-12);
        assert_abs_diff_eq!(s.w1, 0.316_227_766_016_837_94, epsilon = 1e-12);
        let even = class_weights(500, 500, LossScheme::Basic).unwrap();
        assert_eq!((even.w0, even.w1), (0.5, 0.5));
        assert!(class_weights(0, 0, LossScheme::Basic).is_err());
        let u = class_weights(3, 7, LossScheme::Unweighted).unwrap();
        assert_eq!((u.w0, u.w1), (1.0, 1.0));
    }

    #[test]
    fn bce_examples() {
        let ones = ClassWeights::unweighted();
        assert_abs_diff_eq!(weighted_bce(0.5, 1, &ones).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        let w = ClassWeights {
            w0: 0.9,
            w1: 0.1,
            scheme: LossScheme::Basic,
        };
        assert_abs_diff_eq!(weighted_bce(0.5, 1, &w).unwrap(), 0.069_314_718_055_994_53, epsilon = 1e-15);
        assert!(weighted_bce(1.0 - 1e-15, 1, &ones).unwrap() < 1e-11);
        assert!(weighted_bce(1.0, 0, &ones).unwrap().is_finite());
        assert!(weighted_bce(1.5, 0, &ones).is_err());
        assert!(weighted_bce(f64::NAN, 0, &ones).is_err());
    }

    #[test]
    fn bce_gradient_matches_difference() {
        let w = ClassWeights {
            w0: 0.7,
            w1: 0.3,
            scheme: LossScheme::Basic,
        };
        for &p in &[0.1, 0.4, 0.8] {
            for y in [0u8, 1] {
                let h = 1e-6;
                let numeric = (weighted_bce(p + h, y, &w).unwrap() - weighted_bce(p - h, y, &w).unwrap()) / (2.0 * h);
                assert_abs_diff_eq!(weighted_bce_grad(p, y, &w).unwrap(), numeric, epsilon = 1e-6);
            }
        }
        assert_eq!(weighted_bce_grad(1.0, 0, &w).unwrap(), 0.0);
    }

    #[test]
    fn metrics_examples() {
        let ones = ClassWeights::unweighted();
        let m = compute_metrics(&[0.9, 0.9, 0.1, 0.1], &[1, 0, 0, 0], &ones, 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (1, 1, 2, 0));
        assert_eq!(m.accuracy, 0.75);
        assert_abs_diff_eq!(m.fp_rate, 1.0 / 3.0, epsilon = 1e-15);
        let all_pos = compute_metrics(&[0.9; 3], &[1; 3], &ones, 0.5).unwrap();
        assert_eq!(all_pos.fp_rate, 0.0);
        assert!(compute_metrics(&[], &[], &ones, 0.5).is_err());
        assert!(compute_metrics(&[0.5], &[1, 0], &ones, 0.5).is_err());
        let at = compute_metrics(&[0.5], &[0], &ones, 0.5).unwrap();
        assert_eq!(at.fp, 1);
    }

    fn flat_from(epoch: usize, len: usize) -> Vec<f64> {
        (1..=len).map(|e| 1.0 / e.min(epoch) as f64).collect()
    }

    #[test]
    fn stopping_examples() {
        assert_eq!(stopped_epoch(&flat_from(10, 300), 50, 300).unwrap(), 60);
        let improving: Vec<f64> = (1..=300).map(|e| 1.0 / e as f64).collect();
        assert_eq!(stopped_epoch(&improving, 50, 300).unwrap(), 300);
        let mut boundary = flat_from(10, 300);
        boundary[59] = 0.0;
        assert_eq!(stopped_epoch(&boundary, 50, 300).unwrap(), 110);
        assert!(stopped_epoch(&[0.5; 10], 50, 300).is_err());
        assert!(EarlyStopping::new(300, 300).is_err());
    }

    #[test]
    fn ties_do_not_reset_patience() {
        let mut h = vec![0.5; 300];
        h[0] = 0.4;
        assert_eq!(stopped_epoch(&h, 50, 300).unwrap(), 51);
    }

    proptest! {
        #[test]
        fn weight_properties(n0 in 1usize..100_000, n1 in 1usize..100_000) {
            let b = class_weights(n0, n1, LossScheme::Basic).unwrap();
            let s = class_weights(n0, n1, LossScheme::SqrtRoot).unwrap();
            for w in [b.w0, b.w1, s.w0, s.w1] {
                prop_assert!(w > 0.0 && w < 1.0);
            }
            prop_assert!(s.w0 >= b.w0 && s.w1 >= b.w1);
            if n0 > n1 {
                prop_assert!(b.w0 < b.w1 && s.w0 < s.w1);
            } else if n1 > n0 {
                prop_assert!(b.w1 < b.w0 && s.w1 < s.w0);
            }
        }

        #[test]
        fn stopped_epoch_is_bounded(history in proptest::collection::vec(0.0f64..1.0, 300)) {
            let e = stopped_epoch(&history, 50, 300).unwrap();
            prop_assert!((51..=300).contains(&e));
        }
    }
}

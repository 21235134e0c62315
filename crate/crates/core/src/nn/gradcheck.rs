//! Central-difference verification of analytic gradients.

use ndarray::{Array2, ArrayView2};

use super::{Activation, Dense, Mlp, Mode};
use crate::error::{Error, Result};

/// A parameter set that can be viewed as one flat vector.
pub trait FlatParams {
    fn flatten(&self) -> Vec<f64>;
    fn assign(&mut self, values: &[f64]) -> Result<()>;
}

/// One quantity evaluated at two parameter settings, with the difference
/// `plus - minus` carried separately so it keeps full relative precision
/// when the two evaluations nearly coincide.
#[derive(Debug, Clone)]
pub struct Secant {
    pub plus: Array2<f64>,
    pub minus: Array2<f64>,
    pub diff: Array2<f64>,
}

impl Secant {
    /// The same value on both sides.
    pub fn fixed(value: Array2<f64>) -> Self {
        Self {
            diff: Array2::zeros(value.raw_dim()),
            minus: value.clone(),
            plus: value,
        }
    }

    pub fn nrows(&self) -> usize {
        self.plus.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.plus.ncols()
    }

    pub fn midpoint(&self) -> Array2<f64> {
        (&self.plus + &self.minus) * 0.5
    }

    /// Elementwise activation of both sides.
    pub fn activate(&self, activation: Activation) -> Secant {
        activation_secant(activation, self)
    }
}

/// Pre-activation difference of a dense layer, using
/// `W+ x+ - W- x- = (W+ - W-) x_mid + W_mid (x+ - x-)`.
fn dense_secant(plus: &Dense, minus: &Dense, x: &Secant) -> Secant {
    let same_layer = plus.weight == minus.weight && plus.bias == minus.bias;
    let same_input = x.diff.iter().all(|&d| d == 0.0);
    let z_plus = x.plus.dot(&plus.weight.t()) + &plus.bias;
    if same_layer && same_input {
        return Secant::fixed(z_plus);
    }
    let z_minus = x.minus.dot(&minus.weight.t()) + &minus.bias;
    let diff = if same_layer {
        x.diff.dot(&plus.weight.t())
    } else {
        let dw = &plus.weight - &minus.weight;
        let db = &plus.bias - &minus.bias;
        let mut d = x.midpoint().dot(&dw.t()) + &db;
        if !same_input {
            let w_mid = (&plus.weight + &minus.weight) * 0.5;
            d += &x.diff.dot(&w_mid.t());
        }
        d
    };
    Secant {
        plus: z_plus,
        minus: z_minus,
        diff,
    }
}

fn activation_secant(activation: Activation, z: &Secant) -> Secant {
    let plus = z.plus.mapv(|v| activation.apply(v));
    let minus = z.minus.mapv(|v| activation.apply(v));
    let mut diff = Array2::zeros(z.plus.raw_dim());
    ndarray::Zip::from(&mut diff)
        .and(&z.plus)
        .and(&z.minus)
        .and(&z.diff)
        .for_each(|d, &a, &b, &dz| {
            *d = match activation {
                Activation::Identity => dz,
                Activation::Relu if a > 0.0 && b > 0.0 => dz,
                Activation::Relu if a <= 0.0 && b <= 0.0 => 0.0,
                Activation::Relu => a.max(0.0) - b.max(0.0),
                // sigmoid(z) = (1 + tanh(z / 2)) / 2 and
                // tanh x - tanh y = sinh(x - y) / (cosh x cosh y)
                Activation::Sigmoid => 0.5 * (0.5 * dz).sinh() / ((0.5 * a).cosh() * (0.5 * b).cosh()),
            };
        });
    Secant { plus, minus, diff }
}

impl Mlp {
    /// Eval-mode forward pass of two networks with identical shapes, returning
    /// the final layer's pre-activations (logits) for both.
    pub fn secant_forward(plus: &Mlp, minus: &Mlp, input: &Secant) -> Result<Secant> {
        if plus.dims() != minus.dims() || plus.layers.iter().zip(&minus.layers).any(|(a, b)| a.activation != b.activation) {
            return Err(Error::Shape("secant networks differ in architecture".into()));
        }
        if input.ncols() != plus.in_dim() {
            return Err(Error::Shape(format!("input width {} but network expects {}", input.ncols(), plus.in_dim())));
        }
        let last = plus.layers.len() - 1;
        let mut x = dense_secant(&plus.layers[0], &minus.layers[0], input);
        for i in 1..=last {
            let a = x.activate(plus.layers[i - 1].activation);
            x = dense_secant(&plus.layers[i], &minus.layers[i], &a);
        }
        Ok(x)
    }
}

/// Network outputs at both sides of a perturbation, with their logits.
#[derive(Debug, Clone)]
pub struct OutputPair {
    pub plus: Array2<f64>,
    pub minus: Array2<f64>,
    pub logits: Secant,
}

/// Scalar loss over a batch of network outputs.
pub trait Objective {
    fn loss(&self, outputs: ArrayView2<f64>) -> Result<f64>;
    fn gradient(&self, outputs: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// `loss(plus) - loss(minus)`. Objectives may override this with a form
    /// computed from the logit difference.
    fn loss_difference(&self, pair: &OutputPair) -> Result<f64> {
        Ok(self.loss(pair.plus.view())? - self.loss(pair.minus.view())?)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Largest relative error between `analytic` and the central difference
/// `delta(p + eps e_i, p - eps e_i) / 2 eps` over every coordinate `i` of
/// `params`, where `delta` returns the loss difference between its two
/// parameter settings.
pub fn central_difference_error<P, D>(params: &P, analytic: &[f64], eps: f64, mut delta: D) -> Result<f64>
where
    P: FlatParams + Clone,
    D: FnMut(&P, &P) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Precondition(format!("epsilon {eps} must be positive")));
    }
    let base = params.flatten();
    if base.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            base.len()
        )));
    }
    let mut plus = params.clone();
    let mut minus = params.clone();
    let mut values = base.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        values[i] = base[i] + eps;
        plus.assign(&values)?;
        values[i] = base[i] - eps;
        minus.assign(&values)?;
        values[i] = base[i];
        let diff = delta(&plus, &minus)?;
        if !diff.is_finite() {
            return Err(Error::NonFinite(format!("loss difference {diff} during gradient check")));
        }
        worst = worst.max(relative_error(analytic[i], diff / (2.0 * eps)));
    }
    Ok(worst)
}

/// [`central_difference_error`] for a plain scalar loss.
pub fn finite_difference_error<P, F>(params: &P, analytic: &[f64], eps: f64, mut loss: F) -> Result<f64>
where
    P: FlatParams + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    central_difference_error(params, analytic, eps, |plus, minus| {
        let (a, b) = (loss(plus)?, loss(minus)?);
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite(format!("loss {a} / {b} during gradient check")));
        }
        Ok(a - b)
    })
}

/// Compares backpropagated gradients of `objective` (evaluated on the
/// network's Eval-mode outputs) against central differences.
pub fn grad_check(mlp: &Mlp, objective: &dyn Objective, inputs: ArrayView2<f64>, eps: f64) -> Result<f64> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Precondition(format!("epsilon {eps} must be positive")));
    }
    let (out, trace) = mlp.forward(inputs, Mode::Eval)?;
    let l = objective.loss(out.view())?;
    if !l.is_finite() {
        return Err(Error::NonFinite(format!("loss {l} at the base point")));
    }
    let g = objective.gradient(out.view())?;
    let (grads, _) = mlp.backward(&trace, g.view())?;
    let input = Secant::fixed(inputs.to_owned());
    let last = mlp.layers.last().expect("at least one layer").activation;
    central_difference_error(mlp, &grads.flatten(), eps, |plus, minus| {
        let logits = Mlp::secant_forward(plus, minus, &input)?;
        let pair = OutputPair {
            plus: logits.plus.mapv(|v| last.apply(v)),
            minus: logits.minus.mapv(|v| last.apply(v)),
            logits,
        };
        objective.loss_difference(&pair)
    })
}

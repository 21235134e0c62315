//! Small deterministic multilayer perceptrons in double precision:
//! batched forward/backward passes, inverted dropout, plain SGD and a
//! central-difference gradient checker.

mod gradcheck;

pub use gradcheck::{central_difference_error, finite_difference_error, grad_check, relative_error, FlatParams, Objective, OutputPair, Secant};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

const MLP_MAGIC: &[u8; 8] = b"MMRMLP01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Sigmoid),
            2 => Ok(Activation::Identity),
            t => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One fully connected layer: `activation(W x + b)` with `W` stored out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Inverted dropout on every hidden activation, masks drawn from `seed`.
    Train { dropout: f64, seed: u64 },
    Eval,
}

/// Values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    act: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    out: Vec<Array2<f64>>,
}

impl ForwardTrace {
    /// Post-dropout output of layer `index` (batch × width).
    pub fn layer_output(&self, index: usize) -> &Array2<f64> {
        &self.out[index]
    }

    /// Pre-activation of layer `index` (batch × width).
    pub fn pre_activation(&self, index: usize) -> &Array2<f64> {
        &self.pre[index]
    }

    pub fn num_layers(&self) -> usize {
        self.pre.len()
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weight: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weight: mlp.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            bias: mlp.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weight.iter().all(|w| w.iter().all(|&x| x == 0.0))
            && self.bias.iter().all(|b| b.iter().all(|&x| x == 0.0))
    }
}

fn check_dims(dims: &[usize], activations: &[Activation]) -> Result<()> {
    if dims.len() < 2 || activations.len() != dims.len() - 1 {
        return Err(Error::Shape(format!(
            "{} layer widths need {} activations, got {}",
            dims.len(),
            dims.len().saturating_sub(1),
            activations.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Shape("layer width 0".into()));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases.
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        check_dims(dims, activations)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-a..a));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers, seed })
    }

    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        check_dims(dims, activations)?;
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Dense {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
                activation,
            })
            .collect();
        Ok(Self { layers, seed: 0 })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(Dense::out_dim));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Batched forward pass over the rows of `input`.
    pub fn forward(&self, input: ArrayView2<f64>, mode: Mode) -> Result<(Array2<f64>, ForwardTrace)> {
        if input.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input width {} but first layer expects {}",
                input.ncols(),
                self.in_dim()
            )));
        }
        let (dropout, mut rng) = match mode {
            Mode::Train { dropout, seed } => {
                if !(0.0..1.0).contains(&dropout) {
                    return Err(Error::Precondition(format!("dropout rate {dropout} outside [0, 1)")));
                }
                (dropout, Some(ChaCha8Rng::seed_from_u64(seed)))
            }
            Mode::Eval => (0.0, None),
        };
        let n_layers = self.layers.len();
        let mut trace = ForwardTrace {
            input: input.to_owned(),
            pre: Vec::with_capacity(n_layers),
            act: Vec::with_capacity(n_layers),
            masks: Vec::with_capacity(n_layers),
            out: Vec::with_capacity(n_layers),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { &trace.input } else { &trace.out[i - 1] };
            let mut z = x.dot(&layer.weight.t());
            z += &layer.bias;
            let a = z.mapv(|v| layer.activation.apply(v));
            let hidden = i + 1 < n_layers;
            let mask = match rng.as_mut() {
                Some(rng) if hidden && dropout > 0.0 => {
                    let keep = 1.0 - dropout;
                    let scale = 1.0 / keep;
                    Some(Array2::from_shape_fn(a.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            0.0
                        }
                    }))
                }
                _ => None,
            };
            let out = match &mask {
                Some(m) => &a * m,
                None => a.clone(),
            };
            trace.pre.push(z);
            trace.act.push(a);
            trace.masks.push(mask);
            trace.out.push(out);
        }
        let output = trace.out.last().expect("at least one layer").clone();
        Ok((output, trace))
    }

    /// Forward pass for a single input vector.
    pub fn forward_one(&self, input: &[f64], mode: Mode) -> Result<(Vec<f64>, ForwardTrace)> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let (out, trace) = self.forward(view, mode)?;
        Ok((out.row(0).to_vec(), trace))
    }

    /// Reverse-mode gradients of a scalar loss given `d loss / d output`
    /// (batch × out). Returns parameter gradients (summed over the batch)
    /// and the gradient with respect to the input rows.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if trace.num_layers() != self.layers.len() {
            return Err(Error::Shape(format!(
                "trace has {} layers, network has {}",
                trace.num_layers(),
                self.layers.len()
            )));
        }
        for (layer, z) in self.layers.iter().zip(&trace.pre) {
            if z.ncols() != layer.out_dim() {
                return Err(Error::Shape("trace does not match network widths".into()));
            }
        }
        if grad_output.dim() != trace.out.last().expect("at least one layer").dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_output.dim(),
                trace.out.last().map(|o| o.dim())
            )));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut upstream = grad_output.to_owned();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if let Some(mask) = &trace.masks[i] {
                upstream *= mask;
            }
            let mut dz = upstream;
            ndarray::Zip::from(&mut dz)
                .and(&trace.pre[i])
                .and(&trace.act[i])
                .for_each(|g, &z, &a| *g *= layer.activation.derivative(z, a));
            let x = if i == 0 { &trace.input } else { &trace.out[i - 1] };
            grads.weight[i] = dz.t().dot(x);
            grads.bias[i] = dz.sum_axis(Axis(0));
            upstream = dz.dot(&layer.weight);
        }
        Ok((grads, upstream))
    }

    /// `p <- p - learning_rate * g` for every parameter.
    pub fn sgd_step(&mut self, grads: &MlpGrads, learning_rate: f64) -> Result<()> {
        if learning_rate.is_nan() || learning_rate <= 0.0 {
            return Err(Error::Precondition(format!("learning rate {learning_rate} must be positive")));
        }
        if grads.weight.len() != self.layers.len() || grads.bias.len() != self.layers.len() {
            return Err(Error::Shape("gradient layer count mismatch".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if grads.weight[i].dim() != layer.weight.dim() || grads.bias[i].dim() != layer.bias.dim() {
                return Err(Error::Shape(format!("gradient shape mismatch at layer {i}")));
            }
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.weight.scaled_add(-learning_rate, &grads.weight[i]);
            layer.bias.scaled_add(-learning_rate, &grads.bias[i]);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Versioned binary form: magic, seed, layer count, then per layer the
    /// out/in widths, activation tag, row-major weights and bias.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_to(&mut w);
        w.finish()
    }

    pub(crate) fn write_to(&self, w: &mut ByteWriter) {
        w.bytes(MLP_MAGIC);
        w.u64(self.seed);
        w.u32(self.layers.len() as u32);
        for layer in &self.layers {
            w.u32(layer.out_dim() as u32);
            w.u32(layer.in_dim() as u32);
            w.u8(layer.activation.tag());
            w.f64s(layer.weight.iter());
            w.f64s(layer.bias.iter());
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let mlp = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(mlp)
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect(MLP_MAGIC)?;
        let seed = r.u64()?;
        let n_layers = r.u32()? as usize;
        if n_layers == 0 {
            return Err(Error::Format("network without layers".into()));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let out = r.u32()? as usize;
            let inp = r.u32()? as usize;
            let activation = Activation::from_tag(r.u8()?)?;
            let weight = Array2::from_shape_vec((out, inp), r.f64s(out * inp)?)
                .map_err(|e| Error::Format(e.to_string()))?;
            let bias = Array1::from_vec(r.f64s(out)?);
            layers.push(Dense {
                weight,
                bias,
                activation,
            });
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Format("layer widths do not chain".into()));
            }
        }
        Ok(Self { layers, seed })
    }
}

impl FlatParams for Mlp {
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    fn assign(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut it = values.iter();
        for layer in &mut self.layers {
            layer.weight.iter_mut().for_each(|w| *w = *it.next().expect("length checked"));
            layer.bias.iter_mut().for_each(|b| *b = *it.next().expect("length checked"));
        }
        Ok(())
    }
}

impl MlpGrads {
    /// Same layout as [`FlatParams::flatten`] on the matching network.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn relu_net(seed: u64) -> Mlp {
        Mlp::new(&[4, 6, 3], &[Activation::Relu, Activation::Sigmoid], seed).unwrap()
    }

    #[test]
    fn zero_network_outputs_half() {
        let mlp = Mlp::zeros(&[3, 5, 2], &[Activation::Relu, Activation::Sigmoid]).unwrap();
        let (out, _) = mlp.forward_one(&[1.0, -2.0, 3.0], Mode::Eval).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_layer_is_identity() {
        let mut mlp = Mlp::zeros(&[3, 3], &[Activation::Identity]).unwrap();
        mlp.layers[0].weight = Array2::eye(3);
        let x = [0.3, -1.5, 2.0];
        let (out, _) = mlp.forward_one(&x, Mode::Eval).unwrap();
        assert_eq!(out, x.to_vec());
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let mlp = relu_net(3);
        let x = array![[0.1, 0.2, -0.3, 0.4], [1.0, -1.0, 0.5, 0.0]];
        let (eval, _) = mlp.forward(x.view(), Mode::Eval).unwrap();
        let (train, _) = mlp.forward(x.view(), Mode::Train { dropout: 0.0, seed: 9 }).unwrap();
        assert_eq!(eval, train);
    }

    #[test]
    fn forward_is_deterministic() {
        let mlp = relu_net(3);
        let x = array![[0.1, 0.2, -0.3, 0.4]];
        let mode = Mode::Train { dropout: 0.5, seed: 11 };
        let (a, _) = mlp.forward(x.view(), mode).unwrap();
        let (b, _) = mlp.forward(x.view(), mode).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors() {
        let mlp = relu_net(1);
        assert!(matches!(mlp.forward_one(&[1.0, 2.0], Mode::Eval), Err(Error::Shape(_))));
        let (_, trace) = mlp.forward_one(&[1.0, 2.0, 3.0, 4.0], Mode::Eval).unwrap();
        let bad = Array2::zeros((1, 2));
        assert!(matches!(mlp.backward(&trace, bad.view()), Err(Error::Shape(_))));
        let other = Mlp::new(&[4, 3], &[Activation::Sigmoid], 1).unwrap();
        let g = Array2::zeros((1, 3));
        assert!(matches!(other.backward(&trace, g.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn bias_gradient_of_identity_is_upstream() {
        let mut mlp = Mlp::zeros(&[2, 2], &[Activation::Identity]).unwrap();
        mlp.layers[0].weight = Array2::eye(2);
        let (_, trace) = mlp.forward_one(&[3.0, 4.0], Mode::Eval).unwrap();
        let g = array![[0.25, -2.0]];
        let (grads, dx) = mlp.backward(&trace, g.view()).unwrap();
        assert_eq!(grads.bias[0], array![0.25, -2.0]);
        assert_eq!(dx, g);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mlp = relu_net(5);
        let (_, trace) = mlp.forward_one(&[0.5, 0.1, 0.2, 0.9], Mode::Train { dropout: 0.3, seed: 2 }).unwrap();
        let (grads, _) = mlp.backward(&trace, Array2::zeros((1, 3)).view()).unwrap();
        assert!(grads.is_zero());
    }

    #[test]
    fn sgd_arithmetic() {
        let mut mlp = Mlp::zeros(&[1, 1], &[Activation::Identity]).unwrap();
        mlp.layers[0].weight[[0, 0]] = 1.0;
        let mut grads = MlpGrads::zeros_like(&mlp);
        mlp.sgd_step(&grads, 0.5).unwrap();
        assert_eq!(mlp.layers[0].weight[[0, 0]], 1.0);
        grads.weight[0][[0, 0]] = 0.25;
        mlp.sgd_step(&grads, 1.0).unwrap();
        assert_eq!(mlp.layers[0].weight[[0, 0]], 0.75);
        assert!(mlp.sgd_step(&grads, 0.0).is_err());
        let wrong = MlpGrads::zeros_like(&relu_net(1));
        assert!(matches!(mlp.sgd_step(&wrong, 0.1), Err(Error::Shape(_))));
    }

    #[test]
    fn two_half_steps_equal_one_step() {
        let base = relu_net(8);
        let (_, trace) = base.forward_one(&[0.5, -0.1, 0.2, 0.9], Mode::Eval).unwrap();
        let (grads, _) = base.backward(&trace, array![[1.0, -0.5, 0.3]].view()).unwrap();
        let mut once = base.clone();
        once.sgd_step(&grads, 0.5).unwrap();
        let mut twice = base.clone();
        twice.sgd_step(&grads, 0.25).unwrap();
        twice.sgd_step(&grads, 0.25).unwrap();
        for (a, b) in once.flatten().iter().zip(twice.flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        let mlp = relu_net(4);
        let x = array![[0.5, 0.5, 0.5, 0.5]];
        let (_, trace) = mlp.forward(x.view(), Mode::Train { dropout: 0.5, seed: 1 }).unwrap();
        let mask = trace.masks[0].as_ref().unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        assert!(trace.masks[1].is_none());
    }

    #[test]
    fn inverted_dropout_matches_eval_in_expectation() {
        // Hidden identity layer followed by a linear readout: the output is
        // linear in the mask, so its mean over masks is the Eval output.
        let mut mlp = Mlp::new(&[3, 8, 1], &[Activation::Identity, Activation::Identity], 21).unwrap();
        mlp.layers[1].bias[0] = 0.1;
        let x = [0.7, -0.2, 0.4];
        let (eval, _) = mlp.forward_one(&x, Mode::Eval).unwrap();
        let p = 0.3;
        let n = 20_000;
        let samples: Vec<f64> = (0..n)
            .map(|s| mlp.forward_one(&x, Mode::Train { dropout: p, seed: s }).unwrap().0[0])
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sigma = (var / n as f64).sqrt();
        assert!((mean - eval[0]).abs() < 3.0 * sigma, "mean {mean} eval {} sigma {sigma}", eval[0]);
    }

    #[test]
    fn serialization_is_bit_exact() {
        let mlp = relu_net(77);
        let bytes = mlp.to_bytes();
        let back = Mlp::from_bytes(&bytes).unwrap();
        assert_eq!(back, mlp);
        assert_eq!(back.to_bytes(), bytes);
        assert!(Mlp::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Mlp::from_bytes(&extra).is_err());
    }

    #[test]
    fn glorot_bounds() {
        let mlp = Mlp::new(&[10, 20], &[Activation::Relu], 1).unwrap();
        let a = (6.0f64 / 30.0).sqrt();
        assert!(mlp.layers[0].weight.iter().all(|w| w.abs() < a));
        assert!(mlp.layers[0].bias.iter().all(|&b| b == 0.0));
    }
}

//! Upstream dimension reduction: an MLP trained to predict the review label
//! from a raw embedding concatenation. Its 32-unit hidden layer, read in
//! Eval mode, is the reduced representation.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::features::{EmbeddingPath, REDUCED_DIM};
use crate::lexicon::sha256_hex;
use crate::nn::{Activation, Mlp, Mode};
use crate::train::{output_gradient, ClassWeights, LossScheme, Reduction};

pub const REDUCER_HIDDEN: usize = 128;
/// Index of the layer whose output is the reduced vector.
pub const BOTTLENECK_LAYER: usize = 1;
pub const REDUCER_EPOCHS: usize = 100;

const REDUCER_MAGIC: &[u8; 8] = b"MMRRED01";
const ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Relu, Activation::Sigmoid];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducerConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub scheme: LossScheme,
    pub reduction: Reduction,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reducer {
    path: EmbeddingPath,
    mlp: Mlp,
}

impl Reducer {
    fn dims(path: EmbeddingPath) -> [usize; 4] {
        [path.in_dim(), REDUCER_HIDDEN, REDUCED_DIM, 1]
    }

    pub fn new(path: EmbeddingPath, seed: u64) -> Result<Self> {
        Ok(Self {
            path,
            mlp: Mlp::new(&Self::dims(path), &ACTIVATIONS, seed)?,
        })
    }

    pub fn zeros(path: EmbeddingPath) -> Result<Self> {
        Ok(Self {
            path,
            mlp: Mlp::zeros(&Self::dims(path), &ACTIVATIONS)?,
        })
    }

    pub fn path(&self) -> EmbeddingPath {
        self.path
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn seed(&self) -> u64 {
        self.mlp.seed
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Bottleneck activations for a batch of inputs.
    pub fn reduce(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (_, trace) = self.mlp.forward(inputs, Mode::Eval)?;
        Ok(trace.layer_output(BOTTLENECK_LAYER).clone())
    }

    pub fn reduce_vector(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "{} reducer expects {} inputs, got {}",
                self.path.name(),
                self.in_dim(),
                input.len()
            )));
        }
        let (_, trace) = self.mlp.forward_one(input, Mode::Eval)?;
        Ok(trace.layer_output(BOTTLENECK_LAYER).row(0).to_vec())
    }

    /// Output-layer probabilities.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Vec<f64>> {
        let (out, _) = self.mlp.forward(inputs, Mode::Eval)?;
        Ok(out.column(0).to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(REDUCER_MAGIC);
        w.str(self.path.name());
        w.u32(self.in_dim() as u32);
        w.u64(self.seed());
        self.mlp.write_to(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect(REDUCER_MAGIC)?;
        let path = EmbeddingPath::from_name(&r.str()?)?;
        let in_dim = r.u32()? as usize;
        let seed = r.u64()?;
        let mlp = Mlp::read_from(&mut r)?;
        r.finish()?;
        if mlp.dims() != Self::dims(path) || in_dim != path.in_dim() || mlp.seed != seed {
            return Err(Error::Format(format!("reducer header does not match its {} network", path.name())));
        }
        if mlp.layers.iter().map(|l| l.activation).ne(ACTIVATIONS) {
            return Err(Error::Format("unexpected reducer activations".into()));
        }
        Ok(Self { path, mlp })
    }

    /// Hex SHA-256 of the serialized model.
    pub fn hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

/// Fits a reducer for `path` with shuffled mini-batch SGD on weighted
/// cross-entropy for a fixed number of epochs.
pub fn train_reducer(path: EmbeddingPath, inputs: ArrayView2<f64>, labels: &[u8], config: &ReducerConfig) -> Result<Reducer> {
    if inputs.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} inputs for {} labels", inputs.nrows(), labels.len())));
    }
    if inputs.ncols() != path.in_dim() {
        return Err(Error::Shape(format!(
            "{} reducer expects width {}, got {}",
            path.name(),
            path.in_dim(),
            inputs.ncols()
        )));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Degenerate("reducer training needs both labels".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let weights = ClassWeights::from_labels(labels, config.scheme)?;
    let mut reducer = Reducer::new(path, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let x = inputs.select(Axis(0), batch);
            let y: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let (out, trace) = reducer.mlp.forward(x.view(), Mode::Eval)?;
            let g = output_gradient(out.column(0), &y, &weights, config.reduction)?;
            let (grads, _) = reducer.mlp.backward(&trace, g.view())?;
            reducer.mlp.sgd_step(&grads, config.learning_rate)?;
        }
    }
    if !reducer.mlp.is_finite() {
        return Err(Error::NonFinite(format!("{} reducer diverged", path.name())));
    }
    Ok(reducer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn config(seed: u64) -> ReducerConfig {
        ReducerConfig {
            epochs: REDUCER_EPOCHS,
            learning_rate: 0.01,
            batch_size: 64,
            scheme: LossScheme::Basic,
            reduction: Reduction::Sum,
            seed,
        }
    }

    /// Two tight blobs in the image-path space (noise 0.05 per coordinate),
    /// centers at +/- 1.5 along a random unit direction.
    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = EmbeddingPath::Image.in_dim();
        let mut direction: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|x| *x /= norm);
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = Array2::from_shape_fn((n, dim), |(i, j)| {
            let sign = if labels[i] == 1 { 1.0 } else { -1.0 };
            let noise: f64 = StandardNormal.sample(&mut rng);
            sign * 1.5 * direction[j] + noise * 0.05
        });
        (x, labels)
    }

    /// Closed-form check that the blobs are linearly separable: projecting
    /// on the difference of class means splits them perfectly.
    fn separable_by_mean_difference(x: &Array2<f64>, labels: &[u8]) -> bool {
        let mean = |label: u8| {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
            x.select(Axis(0), &rows).mean_axis(Axis(0)).unwrap()
        };
        let w = &mean(1) - &mean(0);
        let scores = x.dot(&w);
        let threshold = (mean(1).dot(&w) + mean(0).dot(&w)) / 2.0;
        scores.iter().zip(labels).all(|(&s, &l)| (s > threshold) == (l == 1))
    }

    #[test]
    fn learns_separable_blobs() {
        let (x, labels) = blobs(200, 5);
        assert!(separable_by_mean_difference(&x, &labels));
        let reducer = train_reducer(EmbeddingPath::Image, x.view(), &labels, &config(3)).unwrap();
        let p = reducer.predict(x.view()).unwrap();
        let correct = p.iter().zip(&labels).filter(|(&p, &l)| (p >= 0.5) == (l == 1)).count();
        assert!(correct as f64 / 200.0 >= 0.95, "accuracy {}", correct as f64 / 200.0);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let (x, labels) = blobs(60, 1);
        let cfg = ReducerConfig { epochs: 3, ..config(9) };
        let a = train_reducer(EmbeddingPath::Image, x.view(), &labels, &cfg).unwrap();
        let b = train_reducer(EmbeddingPath::Image, x.view(), &labels, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let back = Reducer::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.hash(), a.hash());
        let v = x.row(0).to_vec();
        assert_eq!(back.reduce_vector(&v).unwrap(), a.reduce_vector(&v).unwrap());
    }

    #[test]
    fn gradients_match_differences() {
        // reducer layout with a narrow input so the check stays fast
        let mut mlp = Mlp::new(&[24, 16, REDUCED_DIM, 1], &ACTIVATIONS, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for layer in &mut mlp.layers {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        let x = Array2::from_shape_fn((4, 24), |_| rng.random_range(-1.0..1.0));
        let labels = vec![0, 1, 0, 0];
        let objective = crate::train::WeightedBceObjective {
            weights: ClassWeights::from_labels(&labels, LossScheme::Basic).unwrap(),
            labels,
        };
        let err = crate::nn::grad_check(&mlp, &objective, x.view(), 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn contracts() {
        let z = Reducer::zeros(EmbeddingPath::Baseline).unwrap();
        assert_eq!(z.in_dim(), 2816);
        let out = z.reduce_vector(&vec![0.3; 2816]).unwrap();
        assert_eq!(out, vec![0.0; REDUCED_DIM]);
        assert!(matches!(z.reduce_vector(&[1.0; 10]), Err(Error::Shape(_))));
        let x = Array2::zeros((4, 384));
        let err = train_reducer(EmbeddingPath::Image, x.view(), &[1, 1, 1, 1], &config(1)).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
        let err = train_reducer(EmbeddingPath::Text, x.view(), &[1, 0, 1, 0], &config(1)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}

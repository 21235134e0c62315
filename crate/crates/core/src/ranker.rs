//! DLRM-style scorer. Dense features pass a bottom MLP, categories are
//! sum-pooled from an embedding table, and together with the reduced
//! embedding vectors they meet in a pairwise dot-product interaction whose
//! output (plus the raw operands) feeds a top MLP ending in a sigmoid.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::features::{Example, Variant, CATEGORY_TABLE_ROWS, PADDING_INDEX, REDUCED_DIM};
use crate::lexicon::CategoryVocabulary;
use crate::nn::{central_difference_error, Activation, FlatParams, ForwardTrace, Mlp, MlpGrads, Mode, Secant};
use crate::train::{output_gradient, ClassWeights, Reduction};

pub const BOTTOM_HIDDEN: usize = 64;
pub const TOP_HIDDEN: usize = 64;
/// Width of every interaction operand.
pub const OPERAND_DIM: usize = REDUCED_DIM;

const RANKER_MAGIC: &[u8; 8] = b"MMRRNK01";
const BOTTOM_ACTS: [Activation; 2] = [Activation::Relu, Activation::Relu];
const TOP_ACTS: [Activation; 2] = [Activation::Relu, Activation::Sigmoid];
const PREDICT_CHUNK: usize = 512;

/// Bottom output, then the category vector for enriched variants, then one
/// operand per reduced embedding.
pub fn operand_count(variant: Variant) -> usize {
    1 + usize::from(variant.is_enriched()) + variant.paths().len()
}

pub fn interaction_dim(n: usize) -> usize {
    n * (n - 1) / 2
}

pub fn top_input_dim(variant: Variant) -> usize {
    let n = operand_count(variant);
    n * OPERAND_DIM + interaction_dim(n)
}

/// All pairwise dot products `(i, j)`, `i < j`, in lexicographic order.
pub fn interact<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>> {
    if vectors.len() < 2 {
        return Err(Error::Shape(format!("interaction needs two operands, got {}", vectors.len())));
    }
    let width = vectors[0].as_ref().len();
    if vectors.iter().any(|v| v.as_ref().len() != width) {
        return Err(Error::Shape("interaction operands differ in length".into()));
    }
    let mut out = Vec::with_capacity(interaction_dim(vectors.len()));
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            out.push(dot(vectors[i].as_ref(), vectors[j].as_ref()));
        }
    }
    Ok(out)
}

fn pool_rows(table: &Array2<f64>, indices: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; OPERAND_DIM];
    for &i in indices {
        if i > PADDING_INDEX {
            return Err(Error::Shape(format!("category index {i} exceeds {PADDING_INDEX}")));
        }
        if i != PADDING_INDEX {
            out.iter_mut().zip(table.row(i)).for_each(|(o, t)| *o += t);
        }
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranker {
    variant: Variant,
    pub bottom: Mlp,
    /// `CATEGORY_TABLE_ROWS × OPERAND_DIM`; the padding row stays zero.
    pub table: Array2<f64>,
    pub top: Mlp,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerGrads {
    pub bottom: MlpGrads,
    pub table: Array2<f64>,
    pub top: MlpGrads,
}

impl RankerGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.bottom.flatten();
        out.extend(self.table.iter());
        out.extend(self.top.flatten());
        out
    }
}

/// Intermediate values from [`Ranker::forward`].
#[derive(Debug, Clone)]
pub struct RankerTrace {
    bottom: ForwardTrace,
    top: ForwardTrace,
    operands: Vec<Array2<f64>>,
    categories: Vec<Vec<usize>>,
}

impl Ranker {
    pub fn new(variant: Variant, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bottom_seed = rng.random();
        let top_seed = rng.random();
        let bottom = Mlp::new(&[variant.dense_dim(), BOTTOM_HIDDEN, OPERAND_DIM], &BOTTOM_ACTS, bottom_seed)?;
        let top = Mlp::new(&[top_input_dim(variant), TOP_HIDDEN, 1], &TOP_ACTS, top_seed)?;
        let a = (6.0 / (CATEGORY_TABLE_ROWS + OPERAND_DIM) as f64).sqrt();
        let mut table = Array2::from_shape_fn((CATEGORY_TABLE_ROWS, OPERAND_DIM), |_| rng.random_range(-a..a));
        table.row_mut(PADDING_INDEX).fill(0.0);
        Ok(Self {
            variant,
            bottom,
            table,
            top,
            seed,
        })
    }

    pub fn zeros(variant: Variant) -> Result<Self> {
        Ok(Self {
            variant,
            bottom: Mlp::zeros(&[variant.dense_dim(), BOTTOM_HIDDEN, OPERAND_DIM], &BOTTOM_ACTS)?,
            table: Array2::zeros((CATEGORY_TABLE_ROWS, OPERAND_DIM)),
            top: Mlp::zeros(&[top_input_dim(variant), TOP_HIDDEN, 1], &TOP_ACTS)?,
            seed: 0,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn operand_count(&self) -> usize {
        operand_count(self.variant)
    }

    /// Sum of the table rows for the non-padding indices.
    pub fn lookup_categories(&self, indices: &[usize]) -> Result<Vec<f64>> {
        pool_rows(&self.table, indices)
    }

    fn check_example(&self, e: &Example) -> Result<()> {
        if e.dense.len() != self.variant.dense_dim() {
            return Err(Error::Shape(format!(
                "{}: {} dense features, {} expects {}",
                e.review_id,
                e.dense.len(),
                self.variant,
                self.variant.dense_dim()
            )));
        }
        if e.reduced.len() != self.variant.paths().len() || e.reduced.iter().any(|r| r.len() != OPERAND_DIM) {
            return Err(Error::Shape(format!(
                "{}: {} expects {} reduced vectors of width {OPERAND_DIM}",
                e.review_id,
                self.variant,
                self.variant.paths().len()
            )));
        }
        e.categories.validate()
    }

    fn sub_modes(mode: Mode) -> (Mode, Mode) {
        match mode {
            Mode::Eval => (Mode::Eval, Mode::Eval),
            Mode::Train { dropout, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (
                    Mode::Train { dropout, seed: rng.random() },
                    Mode::Train { dropout, seed: rng.random() },
                )
            }
        }
    }

    /// Probabilities for a batch, with the trace for [`Ranker::backward`].
    pub fn forward(&self, batch: &[&Example], mode: Mode) -> Result<(Vec<f64>, RankerTrace)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        for e in batch {
            self.check_example(e)?;
        }
        let n = batch.len();
        let (bottom_mode, top_mode) = Self::sub_modes(mode);
        let dense = Array2::from_shape_fn((n, self.variant.dense_dim()), |(b, k)| batch[b].dense[k]);
        let (bottom_out, bottom_trace) = self.bottom.forward(dense.view(), bottom_mode)?;

        let mut operands = vec![bottom_out];
        let categories: Vec<Vec<usize>> = batch.iter().map(|e| e.categories.active().collect()).collect();
        if self.variant.is_enriched() {
            let mut pooled = Array2::zeros((n, OPERAND_DIM));
            for (b, active) in categories.iter().enumerate() {
                let row = self.lookup_categories(active)?;
                pooled.row_mut(b).assign(&ndarray::ArrayView1::from(&row));
            }
            operands.push(pooled);
        }
        for k in 0..self.variant.paths().len() {
            operands.push(Array2::from_shape_fn((n, OPERAND_DIM), |(b, j)| batch[b].reduced[k][j]));
        }
        debug_assert_eq!(operands.len(), self.operand_count());

        let top_input = self.top_input(&operands);
        let (out, top_trace) = self.top.forward(top_input.view(), top_mode)?;
        let probs = out.column(0).to_vec();
        Ok((
            probs,
            RankerTrace {
                bottom: bottom_trace,
                top: top_trace,
                operands,
                categories,
            },
        ))
    }

    fn top_input(&self, operands: &[Array2<f64>]) -> Array2<f64> {
        let n_ops = operands.len();
        let batch = operands[0].nrows();
        let mut x = Array2::zeros((batch, top_input_dim(self.variant)));
        for (k, op) in operands.iter().enumerate() {
            x.slice_mut(s![.., k * OPERAND_DIM..(k + 1) * OPERAND_DIM]).assign(op);
        }
        let mut col = n_ops * OPERAND_DIM;
        for i in 0..n_ops {
            for j in i + 1..n_ops {
                let dots = (&operands[i] * &operands[j]).sum_axis(Axis(1));
                x.column_mut(col).assign(&dots);
                col += 1;
            }
        }
        x
    }

    /// Parameter gradients given `d loss / d probability` per example.
    pub fn backward(&self, trace: &RankerTrace, grad_probs: ArrayView2<f64>) -> Result<RankerGrads> {
        if trace.operands.len() != self.operand_count() {
            return Err(Error::Shape(format!(
                "trace has {} operands, {} expects {}",
                trace.operands.len(),
                self.variant,
                self.operand_count()
            )));
        }
        let (top_grads, d_input) = self.top.backward(&trace.top, grad_probs)?;
        let n_ops = trace.operands.len();
        let mut d_ops: Vec<Array2<f64>> = (0..n_ops)
            .map(|k| d_input.slice(s![.., k * OPERAND_DIM..(k + 1) * OPERAND_DIM]).to_owned())
            .collect();
        let mut col = n_ops * OPERAND_DIM;
        for i in 0..n_ops {
            for j in i + 1..n_ops {
                let g = d_input.column(col).insert_axis(Axis(1)).to_owned();
                d_ops[i] += &(&trace.operands[j] * &g);
                d_ops[j] += &(&trace.operands[i] * &g);
                col += 1;
            }
        }
        let (bottom_grads, _) = self.bottom.backward(&trace.bottom, d_ops[0].view())?;
        let mut table = Array2::zeros(self.table.raw_dim());
        if self.variant.is_enriched() {
            for (b, active) in trace.categories.iter().enumerate() {
                for &i in active {
                    let mut row = table.row_mut(i);
                    row += &d_ops[1].row(b);
                }
            }
        }
        table.row_mut(PADDING_INDEX).fill(0.0);
        Ok(RankerGrads {
            bottom: bottom_grads,
            table,
            top: top_grads,
        })
    }

    /// Gradients of the weighted cross-entropy of `batch`.
    pub fn loss_gradients(
        &self,
        batch: &[&Example],
        weights: &ClassWeights,
        reduction: Reduction,
        mode: Mode,
    ) -> Result<(Vec<f64>, RankerGrads)> {
        let (probs, trace) = self.forward(batch, mode)?;
        let labels: Vec<u8> = batch.iter().map(|e| e.label).collect();
        let g = output_gradient(ndarray::ArrayView1::from(&probs), &labels, weights, reduction)?;
        let grads = self.backward(&trace, g.view())?;
        Ok((probs, grads))
    }

    pub fn sgd_step(&mut self, grads: &RankerGrads, learning_rate: f64) -> Result<()> {
        if grads.table.dim() != self.table.dim() {
            return Err(Error::Shape("category table gradient shape mismatch".into()));
        }
        self.bottom.sgd_step(&grads.bottom, learning_rate)?;
        self.top.sgd_step(&grads.top, learning_rate)?;
        self.table.scaled_add(-learning_rate, &grads.table);
        self.table.row_mut(PADDING_INDEX).fill(0.0);
        Ok(())
    }

    /// Eval-mode probabilities in input order.
    pub fn predict(&self, examples: &[Example]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(PREDICT_CHUNK) {
            let refs: Vec<&Example> = chunk.iter().collect();
            out.extend(self.forward(&refs, Mode::Eval)?.0);
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.bottom.is_finite() && self.top.is_finite() && self.table.iter().all(|x| x.is_finite())
    }

    pub fn padding_row_is_zero(&self) -> bool {
        self.table.row(PADDING_INDEX).iter().all(|&x| x == 0.0)
    }

    /// Header (variant, dense width, seed, vocabulary hash), then the bottom
    /// network, the category table and the top network.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(RANKER_MAGIC);
        w.str(self.variant.name());
        w.u32(self.variant.dense_dim() as u32);
        w.u64(self.seed);
        w.str(&CategoryVocabulary.hash());
        self.bottom.write_to(&mut w);
        w.u32(self.table.nrows() as u32);
        w.u32(self.table.ncols() as u32);
        w.f64s(self.table.iter());
        self.top.write_to(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect(RANKER_MAGIC)?;
        let variant: Variant = r.str()?.parse().map_err(|e: Error| Error::Format(e.to_string()))?;
        let dense_dim = r.u32()? as usize;
        let seed = r.u64()?;
        let vocab = r.str()?;
        if vocab != CategoryVocabulary.hash() {
            return Err(Error::Format("model was trained with a different category vocabulary".into()));
        }
        let bottom = Mlp::read_from(&mut r)?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let table = Array2::from_shape_vec((rows, cols), r.f64s(rows * cols)?).map_err(|e| Error::Format(e.to_string()))?;
        let top = Mlp::read_from(&mut r)?;
        r.finish()?;
        let expected = Self::zeros(variant)?;
        if dense_dim != variant.dense_dim()
            || bottom.dims() != expected.bottom.dims()
            || top.dims() != expected.top.dims()
            || table.dim() != expected.table.dim()
        {
            return Err(Error::Format(format!("ranker dimensions do not match variant {variant}")));
        }
        Ok(Self {
            variant,
            bottom,
            table,
            top,
            seed,
        })
    }
}

impl FlatParams for Ranker {
    fn flatten(&self) -> Vec<f64> {
        let mut out = self.bottom.flatten();
        out.extend(self.table.iter());
        out.extend(self.top.flatten());
        out
    }

    fn assign(&mut self, values: &[f64]) -> Result<()> {
        let nb = self.bottom.num_params();
        let nt = self.table.len();
        if values.len() != nb + nt + self.top.num_params() {
            return Err(Error::Shape("parameter count mismatch".into()));
        }
        self.bottom.assign(&values[..nb])?;
        self.table.iter_mut().zip(&values[nb..nb + nt]).for_each(|(t, v)| *t = *v);
        self.top.assign(&values[nb + nt..])
    }
}

/// Eval-mode logits of two rankers with the same variant, with their
/// difference carried through every stage.
fn secant_logits(plus: &Ranker, minus: &Ranker, batch: &[&Example]) -> Result<Secant> {
    let variant = plus.variant;
    if minus.variant != variant {
        return Err(Error::Shape("secant rankers differ in variant".into()));
    }
    for e in batch {
        plus.check_example(e)?;
    }
    let n = batch.len();
    let dense = Array2::from_shape_fn((n, variant.dense_dim()), |(b, k)| batch[b].dense[k]);
    let bottom_act = plus.bottom.layers.last().expect("bottom layers").activation;
    let mut operands = vec![Mlp::secant_forward(&plus.bottom, &minus.bottom, &Secant::fixed(dense))?.activate(bottom_act)];
    if variant.is_enriched() {
        let table_diff = &plus.table - &minus.table;
        let mut pooled = [(); 3].map(|_| Array2::zeros((n, OPERAND_DIM)));
        for (b, e) in batch.iter().enumerate() {
            let active: Vec<usize> = e.categories.active().collect();
            for (out, table) in pooled.iter_mut().zip([&plus.table, &minus.table, &table_diff]) {
                out.row_mut(b).assign(&ndarray::ArrayView1::from(&pool_rows(table, &active)?));
            }
        }
        let [p, m, d] = pooled;
        operands.push(Secant { plus: p, minus: m, diff: d });
    }
    for k in 0..variant.paths().len() {
        operands.push(Secant::fixed(Array2::from_shape_fn((n, OPERAND_DIM), |(b, j)| batch[b].reduced[k][j])));
    }

    let plus_ops: Vec<Array2<f64>> = operands.iter().map(|o| o.plus.clone()).collect();
    let minus_ops: Vec<Array2<f64>> = operands.iter().map(|o| o.minus.clone()).collect();
    let mut diff = Array2::zeros((n, top_input_dim(variant)));
    for (k, op) in operands.iter().enumerate() {
        diff.slice_mut(s![.., k * OPERAND_DIM..(k + 1) * OPERAND_DIM]).assign(&op.diff);
    }
    // (u v)+ - (u v)- = du v_mid + u_mid dv
    let mids: Vec<Array2<f64>> = operands.iter().map(Secant::midpoint).collect();
    let mut col = operands.len() * OPERAND_DIM;
    for i in 0..operands.len() {
        for j in i + 1..operands.len() {
            let d = (&operands[i].diff * &mids[j] + &mids[i] * &operands[j].diff).sum_axis(Axis(1));
            diff.column_mut(col).assign(&d);
            col += 1;
        }
    }
    let top_input = Secant {
        plus: plus.top_input(&plus_ops),
        minus: minus.top_input(&minus_ops),
        diff,
    };
    Mlp::secant_forward(&plus.top, &minus.top, &top_input)
}

/// Largest relative error between backpropagated and central-difference
/// gradients of the summed weighted loss over `examples` (Eval mode).
pub fn ranker_grad_check(ranker: &Ranker, examples: &[Example], weights: &ClassWeights, eps: f64) -> Result<f64> {
    let batch: Vec<&Example> = examples.iter().collect();
    let (_, grads) = ranker.loss_gradients(&batch, weights, Reduction::Sum, Mode::Eval)?;
    central_difference_error(ranker, &grads.flatten(), eps, |plus, minus| {
        let logits = secant_logits(plus, minus, &batch)?;
        let mut diff = 0.0;
        for (b, e) in batch.iter().enumerate() {
            let (a, m, d) = (logits.plus[[b, 0]], logits.minus[[b, 0]], logits.diff[[b, 0]]);
            diff += crate::train::weighted_bce_logit_difference(a, m, d, e.label, weights)?;
        }
        Ok(diff)
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::CategoryIndices;
    use crate::train::LossScheme;
    use rand::Rng;

    pub(crate) fn random_example(variant: Variant, seed: u64) -> Example {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut categories = CategoryIndices::padding();
        let k = rng.random_range(0..4);
        for slot in 0..k {
            categories.0[slot] = rng.random_range(0..PADDING_INDEX);
        }
        Example {
            review_id: format!("r{seed}"),
            dense: (0..variant.dense_dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            categories,
            reduced: (0..variant.paths().len())
                .map(|_| (0..OPERAND_DIM).map(|_| rng.random_range(-0.5..0.5)).collect())
                .collect(),
            label: rng.random_range(0..2),
        }
    }

    #[test]
    fn interaction_examples() {
        assert_eq!(interact(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![0.0]);
        assert_eq!(interact(&[vec![1.0; 3], vec![2.0; 3], vec![3.0; 3]]).unwrap().len(), 3);
        let v = vec![1.0, 2.0, 2.0];
        assert_eq!(interact(&[v.clone(), v]).unwrap(), vec![9.0]);
        assert!(interact(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(interact(&[vec![1.0]]).is_err());
    }

    #[test]
    fn operand_counts() {
        assert_eq!(operand_count(Variant::Baseline), 2);
        assert_eq!(interaction_dim(operand_count(Variant::Baseline)), 1);
        assert_eq!(operand_count(Variant::Proposed), 4);
        assert_eq!(interaction_dim(operand_count(Variant::Proposed)), 6);
        assert_eq!(operand_count(Variant::ProposedText), 3);
        assert_eq!(operand_count(Variant::ProposedImage), 3);
        assert_eq!(top_input_dim(Variant::Proposed), 4 * 32 + 6);
    }

    #[test]
    fn category_lookup() {
        let r = Ranker::new(Variant::Proposed, 3).unwrap();
        assert_eq!(r.table.nrows(), 180);
        assert!(r.padding_row_is_zero());
        assert_eq!(r.lookup_categories(&[PADDING_INDEX; 11]).unwrap(), vec![0.0; 32]);
        assert_eq!(r.lookup_categories(&[4, 179, 179]).unwrap(), r.table.row(4).to_vec());
        let both = r.lookup_categories(&[4, 9]).unwrap();
        let expected: Vec<f64> = r.table.row(4).iter().zip(r.table.row(9)).map(|(a, b)| a + b).collect();
        assert_eq!(both, expected);
        assert!(r.lookup_categories(&[180]).is_err());
    }

    #[test]
    fn zero_model_predicts_half() {
        for variant in Variant::ALL {
            let r = Ranker::zeros(variant).unwrap();
            let e = random_example(variant, 1);
            assert_eq!(r.predict(&[e]).unwrap(), vec![0.5]);
        }
    }

    #[test]
    fn gradients_match_differences() {
        let weights = class_weights_for_test();
        for variant in Variant::ALL {
            for seed in 0..3 {
                let mut ranker = Ranker::new(variant, seed).unwrap();
                perturb_biases(&mut ranker, seed);
                let examples: Vec<Example> = (0..5).map(|i| random_example(variant, seed * 10 + i)).collect();
                let err = ranker_grad_check(&ranker, &examples, &weights, 1e-5).unwrap();
                assert!(err < 1e-4, "{variant} seed {seed}: {err}");
            }
        }
    }

    fn class_weights_for_test() -> ClassWeights {
        crate::train::class_weights(100, 900, LossScheme::Basic).unwrap()
    }

    pub(crate) fn perturb_biases(ranker: &mut Ranker, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for layer in ranker.bottom.layers.iter_mut().chain(ranker.top.layers.iter_mut()) {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
    }

    #[test]
    fn padding_row_stays_zero() {
        let weights = class_weights_for_test();
        let mut ranker = Ranker::new(Variant::Proposed, 2).unwrap();
        let mut examples: Vec<Example> = (0..8).map(|i| random_example(Variant::Proposed, i)).collect();
        examples[0].categories = CategoryIndices::padding();
        for step in 0..20 {
            let batch: Vec<&Example> = examples.iter().collect();
            let mode = Mode::Train { dropout: 0.3, seed: step };
            let (_, grads) = ranker.loss_gradients(&batch, &weights, Reduction::Sum, mode).unwrap();
            assert!(grads.table.row(PADDING_INDEX).iter().all(|&g| g == 0.0));
            ranker.sgd_step(&grads, 0.05).unwrap();
        }
        assert!(ranker.padding_row_is_zero());
    }

    #[test]
    fn saturated_correct_prediction_has_no_gradient() {
        let weights = class_weights_for_test();
        let mut ranker = Ranker::zeros(Variant::Baseline).unwrap();
        ranker.top.layers[1].bias[0] = 40.0;
        let mut e = random_example(Variant::Baseline, 5);
        e.label = 1;
        let (p, grads) = ranker.loss_gradients(&[&e], &weights, Reduction::Sum, Mode::Eval).unwrap();
        assert!(p[0] > 1.0 - 1e-12);
        assert!(grads.flatten().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn shape_errors() {
        let ranker = Ranker::new(Variant::Proposed, 1).unwrap();
        let base = random_example(Variant::Baseline, 1);
        assert!(matches!(ranker.predict(&[base]), Err(Error::Shape(_))));
        let (_, trace) = Ranker::new(Variant::Baseline, 1)
            .unwrap()
            .forward(&[&random_example(Variant::Baseline, 2)], Mode::Eval)
            .unwrap();
        let g = Array2::zeros((1, 1));
        assert!(matches!(ranker.backward(&trace, g.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn serialization_round_trips() {
        let ranker = Ranker::new(Variant::ProposedText, 42).unwrap();
        let bytes = ranker.to_bytes();
        let back = Ranker::from_bytes(&bytes).unwrap();
        assert_eq!(back, ranker);
        assert_eq!(back.to_bytes(), bytes);
        assert!(Ranker::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn outputs_in_open_interval() {
        let ranker = Ranker::new(Variant::Proposed, 7).unwrap();
        let examples: Vec<Example> = (0..50).map(|i| random_example(Variant::Proposed, i)).collect();
        for p in ranker.predict(&examples).unwrap() {
            assert!(p > 0.0 && p < 1.0);
        }
    }
}

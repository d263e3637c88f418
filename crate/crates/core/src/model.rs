//! Desk-scale classifiers: logistic regression and a one-hidden-layer MLP.
//!
//! Models are plain parameter containers; all arithmetic goes through a
//! [`Tape`], so the numeric forward pass and every training path share one
//! implementation. Per-example gradients are produced by replaying the
//! backward pass one example at a time.

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::tape::{NodeId, Tape};
use crate::tensor::{ParamVector, Tensor};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Logistic,
    Mlp { hidden: usize },
}

/// Parameters of a classifier mapping feature rows to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    kind: ModelKind,
    input_dim: usize,
    classes: usize,
    tensors: Vec<Tensor>,
}

/// Per-example negative log-likelihoods of one batch.
#[derive(Debug, Clone)]
pub struct LossBatch {
    values: Vec<f64>,
    mean: f64,
}

impl LossBatch {
    fn new(values: Vec<f64>) -> Self {
        // Log-softmax can round a perfectly confident prediction to a loss a
        // few ulps below zero; pin those at 0.
        let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        LossBatch { values, mean }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }
}

/// A model whose parameters are leaves on some tape.
pub struct BoundModel {
    kind: ModelKind,
    classes: usize,
    pub param_nodes: Vec<NodeId>,
}

impl BoundModel {
    /// Class logits for a feature matrix node.
    pub fn logits(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self.kind {
            ModelKind::Logistic => {
                let z = tape.matmul(x, self.param_nodes[0])?;
                tape.add_row(z, self.param_nodes[1])
            }
            ModelKind::Mlp { .. } => {
                let z1 = tape.matmul(x, self.param_nodes[0])?;
                let z1 = tape.add_row(z1, self.param_nodes[1])?;
                let h = tape.tanh(z1)?;
                let z2 = tape.matmul(h, self.param_nodes[2])?;
                tape.add_row(z2, self.param_nodes[3])
            }
        }
    }

    /// Per-example negative log-likelihood column for a feature matrix node.
    pub fn nll_node(&self, tape: &mut Tape, x: NodeId, labels: &[usize]) -> Result<NodeId> {
        let logits = self.logits(tape, x)?;
        nll_vector_node(tape, logits, labels, self.classes)
    }
}

/// Per-example NLL column [n,1] from a logits node, via a constant one-hot.
pub fn nll_vector_node(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
    classes: usize,
) -> Result<NodeId> {
    let onehot = tape.constant(Tensor::one_hot(labels, classes)?)?;
    let lsm = tape.log_softmax_rows(logits)?;
    let picked = tape.mul(lsm, onehot)?;
    let rs = tape.row_sum(picked)?;
    tape.neg(rs)
}

/// Mean of a column vector as `sum(v) / n`, the shared loss reduction.
pub fn mean_scalar_node(tape: &mut Tape, v: NodeId) -> Result<NodeId> {
    let n = tape.value(v).len();
    if n == 0 {
        return Err(Error::Contract("mean of an empty loss vector".into()));
    }
    let s = tape.sum(v)?;
    tape.scale(s, 1.0 / n as f64)
}

fn shapes_for(kind: ModelKind, input_dim: usize, classes: usize) -> Vec<Vec<usize>> {
    match kind {
        ModelKind::Logistic => vec![vec![input_dim, classes], vec![1, classes]],
        ModelKind::Mlp { hidden } => vec![
            vec![input_dim, hidden],
            vec![1, hidden],
            vec![hidden, classes],
            vec![1, classes],
        ],
    }
}

impl ClassifierParams {
    /// Uniform initialization in [-0.1, 0.1], deterministic in the seed.
    pub fn init(kind: ModelKind, input_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        Self::check_dims(kind, input_dim, classes)?;
        let mut rng = rng::rng_for(seed, tag::INIT);
        let tensors = shapes_for(kind, input_dim, classes)
            .into_iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.1..=0.1)).collect();
                Tensor::new(shape, values)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassifierParams {
            kind,
            input_dim,
            classes,
            tensors,
        })
    }

    /// All-zero parameters (uniform predictions).
    pub fn zeros(kind: ModelKind, input_dim: usize, classes: usize) -> Result<Self> {
        Self::check_dims(kind, input_dim, classes)?;
        let tensors = shapes_for(kind, input_dim, classes)
            .into_iter()
            .map(Tensor::zeros)
            .collect();
        Ok(ClassifierParams {
            kind,
            input_dim,
            classes,
            tensors,
        })
    }

    fn check_dims(kind: ModelKind, input_dim: usize, classes: usize) -> Result<()> {
        if classes < 2 {
            return Err(Error::Config(format!(
                "classifier needs at least 2 classes, got {classes}"
            )));
        }
        if input_dim == 0 {
            return Err(Error::Config("classifier input dimension is zero".into()));
        }
        if let ModelKind::Mlp { hidden } = kind {
            if hidden == 0 {
                return Err(Error::Config("mlp hidden width is zero".into()));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_vector(&self) -> ParamVector {
        ParamVector::flatten(&self.tensors)
    }

    /// Rebuild parameters from a flat vector with matching layout.
    pub fn with_vector(&self, v: &ParamVector) -> Result<Self> {
        if v.dim() != self.param_count() {
            return Err(Error::Contract(format!(
                "parameter vector has dimension {}, model needs {}",
                v.dim(),
                self.param_count()
            )));
        }
        let tensors = v.unflatten();
        Ok(ClassifierParams {
            kind: self.kind,
            input_dim: self.input_dim,
            classes: self.classes,
            tensors,
        })
    }

    /// Insert the parameters as differentiable leaves on a tape.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundModel> {
        let param_nodes = self
            .tensors
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundModel {
            kind: self.kind,
            classes: self.classes,
            param_nodes,
        })
    }

    /// Insert the parameters as constants (no gradient through them).
    pub fn bind_constant(&self, tape: &mut Tape) -> Result<BoundModel> {
        let param_nodes = self
            .tensors
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundModel {
            kind: self.kind,
            classes: self.classes,
            param_nodes,
        })
    }

    fn check_features(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_dim {
            return Err(Error::Shape {
                op: "forward_logits",
                expected: format!("[_, {}]", self.input_dim),
                actual: format!("{:?}", x.shape()),
            });
        }
        Ok(())
    }

    /// Unnormalized class scores for a feature batch.
    pub fn forward_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_features(x)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let bound = self.bind_constant(&mut tape)?;
        let logits = bound.logits(&mut tape, xv)?;
        Ok(tape.value(logits).clone())
    }

    /// Mean NLL over a batch.
    pub fn mean_nll(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        self.check_features(x)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let bound = self.bind_constant(&mut tape)?;
        let nll = bound.nll_node(&mut tape, xv, labels)?;
        let loss = mean_scalar_node(&mut tape, nll)?;
        tape.item(loss)
    }

    /// Mean NLL and its gradient over a batch.
    pub fn grad_mean_nll(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, ParamVector)> {
        self.check_features(x)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let bound = self.bind(&mut tape)?;
        let nll = bound.nll_node(&mut tape, xv, labels)?;
        let loss = mean_scalar_node(&mut tape, nll)?;
        let value = tape.item(loss)?;
        let grads = tape.grad_tensors(loss, &bound.param_nodes)?;
        Ok((value, ParamVector::flatten(&grads)))
    }

    /// Gradient of each example's own NLL, one flat vector per example.
    ///
    /// Computed by replaying the backward pass per example rather than by
    /// batched vectorization. With the `parallel` feature the replays run on
    /// the rayon pool; results are collected in example order either way.
    pub fn per_example_grads(&self, x: &Tensor, labels: &[usize]) -> Result<Vec<ParamVector>> {
        self.check_features(x)?;
        if labels.len() != x.rows() || labels.is_empty() {
            return Err(Error::Contract(format!(
                "per_example_grads: {} rows but {} labels",
                x.rows(),
                labels.len()
            )));
        }
        let one = |i: usize| -> Result<ParamVector> {
            let row = Tensor::matrix(1, self.input_dim, x.row(i).to_vec())?;
            let mut tape = Tape::new();
            let xv = tape.constant(row)?;
            let bound = self.bind(&mut tape)?;
            let nll = bound.nll_node(&mut tape, xv, &labels[i..=i])?;
            let loss = mean_scalar_node(&mut tape, nll)?;
            let grads = tape.grad_tensors(loss, &bound.param_nodes)?;
            Ok(ParamVector::flatten(&grads))
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..x.rows()).into_par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..x.rows()).map(one).collect()
        }
    }

    /// Sequential per-example gradients regardless of feature flags.
    pub fn per_example_grads_seq(&self, x: &Tensor, labels: &[usize]) -> Result<Vec<ParamVector>> {
        self.check_features(x)?;
        (0..x.rows())
            .map(|i| {
                let row = Tensor::matrix(1, self.input_dim, x.row(i).to_vec())?;
                let mut tape = Tape::new();
                let xv = tape.constant(row)?;
                let bound = self.bind(&mut tape)?;
                let nll = bound.nll_node(&mut tape, xv, &labels[i..=i])?;
                let loss = mean_scalar_node(&mut tape, nll)?;
                let grads = tape.grad_tensors(loss, &bound.param_nodes)?;
                Ok(ParamVector::flatten(&grads))
            })
            .collect()
    }

    /// Fraction of argmax predictions matching the labels, ties broken
    /// toward the lowest class index.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::Contract("accuracy of an empty batch".into()));
        }
        let logits = self.forward_logits(x)?;
        let mut correct = 0usize;
        for (i, &y) in labels.iter().enumerate() {
            if argmax_lowest(logits.row(i)) == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len() as f64)
    }
}

/// Index of the maximum entry; the lowest index wins ties.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Per-example NLL from a logits batch.
pub fn nll_per_example(logits: &Tensor, labels: &[usize]) -> Result<LossBatch> {
    let classes = logits.cols();
    if labels.len() != logits.rows() || labels.is_empty() {
        return Err(Error::Contract(format!(
            "nll_per_example: {} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Data(format!(
                "example {i}: label {y} out of range for {classes} classes"
            )));
        }
    }
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone())?;
    let nll = nll_vector_node(&mut tape, l, labels, classes)?;
    Ok(LossBatch::new(tape.value(nll).values().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn xy(rows: Vec<Vec<f64>>) -> Tensor {
        let n = rows.len();
        let d = rows[0].len();
        Tensor::matrix(n, d, rows.into_iter().flatten().collect()).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let m = ClassifierParams::zeros(ModelKind::Logistic, 3, 2).unwrap();
        let logits = m.forward_logits(&xy(vec![vec![1.0, -2.0, 0.5]])).unwrap();
        assert_eq!(logits.values(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_output_layer_mlp_is_uniform() {
        let mut m = ClassifierParams::init(ModelKind::Mlp { hidden: 4 }, 3, 5, 9).unwrap();
        let v = m.to_vector();
        let mut vals = v.values().to_vec();
        // zero the output layer (last hidden*classes + classes entries)
        let tail = 4 * 5 + 5;
        let n = vals.len();
        for x in &mut vals[n - tail..] {
            *x = 0.0;
        }
        m = m
            .with_vector(&ParamVector::from_values(vals, v.shapes().to_vec()).unwrap())
            .unwrap();
        let logits = m.forward_logits(&xy(vec![vec![0.3, -0.7, 1.1]])).unwrap();
        let batch = nll_per_example(&logits, &[2]).unwrap();
        assert_abs_diff_eq!(batch.values()[0], (5.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn single_linear_unit_sigmoid() {
        // w = [1, -1], b = 0, x = [2, 1]: the logit difference is 1, so
        // p(class 0) = 1 / (1 + e^-1) ~= 0.7311.
        let m = ClassifierParams::zeros(ModelKind::Logistic, 2, 2).unwrap();
        let v = m.to_vector();
        // W is [2,2] row-major: class scores are x.W; put [1,-1] in column 0.
        let vals = vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0];
        let m = m
            .with_vector(&ParamVector::from_values(vals, v.shapes().to_vec()).unwrap())
            .unwrap();
        let logits = m.forward_logits(&xy(vec![vec![2.0, 1.0]])).unwrap();
        assert_abs_diff_eq!(logits.values()[0] - logits.values()[1], 1.0, epsilon = 1e-12);
        let p = 1.0 / (1.0 + (-1.0f64).exp());
        let batch = nll_per_example(&logits, &[0]).unwrap();
        assert_abs_diff_eq!(batch.values()[0], -p.ln(), epsilon = 1e-12);
    }

    #[test]
    fn uniform_logits_losses() {
        let logits = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let b = nll_per_example(&logits, &[0, 1]).unwrap();
        for &v in b.values() {
            assert_abs_diff_eq!(v, (2.0f64).ln(), epsilon = 1e-12);
        }
        let logits5 = Tensor::matrix(1, 5, vec![0.0; 5]).unwrap();
        let b5 = nll_per_example(&logits5, &[3]).unwrap();
        assert_abs_diff_eq!(b5.values()[0], (5.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let logits = Tensor::matrix(1, 2, vec![10.0, -10.0]).unwrap();
        let b = nll_per_example(&logits, &[0]).unwrap();
        assert!(b.values()[0] < 2.1e-9, "{}", b.values()[0]);
        assert!(b.values()[0] >= 0.0);
    }

    #[test]
    fn out_of_range_label_names_example() {
        let logits = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let err = nll_per_example(&logits, &[0, 5]).unwrap_err();
        assert!(err.to_string().contains("example 1"), "{err}");
    }

    #[test]
    fn nll_invariant_to_constant_logit_shift() {
        let logits = Tensor::matrix(1, 3, vec![0.3, -1.2, 0.5]).unwrap();
        let shifted = Tensor::matrix(1, 3, vec![100.3, 98.8, 100.5]).unwrap();
        let a = nll_per_example(&logits, &[2]).unwrap();
        let b = nll_per_example(&shifted, &[2]).unwrap();
        assert_abs_diff_eq!(a.values()[0], b.values()[0], epsilon = 1e-10);
    }

    #[test]
    fn singleton_batch_grad_matches_mean_grad() {
        let m = ClassifierParams::init(ModelKind::Logistic, 2, 2, 3).unwrap();
        let x = xy(vec![vec![0.4, -1.0]]);
        let per = m.per_example_grads(&x, &[1]).unwrap();
        let (_, g) = m.grad_mean_nll(&x, &[1]).unwrap();
        assert_eq!(per.len(), 1);
        for (a, b) in per[0].values().iter().zip(g.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn duplicated_example_gives_identical_grads() {
        let m = ClassifierParams::init(ModelKind::Mlp { hidden: 3 }, 2, 2, 5).unwrap();
        let x = xy(vec![vec![0.4, -1.0], vec![0.4, -1.0]]);
        let per = m.per_example_grads(&x, &[1, 1]).unwrap();
        assert_eq!(per[0].values(), per[1].values());
    }

    #[test]
    fn uniform_weighted_sum_matches_mean_gradient() {
        let m = ClassifierParams::init(ModelKind::Mlp { hidden: 4 }, 3, 3, 11).unwrap();
        let x = xy(vec![
            vec![0.4, -1.0, 0.2],
            vec![1.4, 0.3, -0.6],
            vec![-0.2, 0.8, 1.0],
        ]);
        let y = [0, 2, 1];
        let per = m.per_example_grads(&x, &y).unwrap();
        let (_, g) = m.grad_mean_nll(&x, &y).unwrap();
        let mut acc = per[0].zeros_like();
        for p in &per {
            acc = acc.axpy(1.0 / 3.0, p);
        }
        for (a, b) in acc.values().iter().zip(g.values()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn random_weighted_sum_matches_weighted_loss_gradient() {
        let m = ClassifierParams::init(ModelKind::Logistic, 2, 3, 17).unwrap();
        let x = xy(vec![vec![0.4, -1.0], vec![1.4, 0.3], vec![-0.2, 0.8]]);
        let y = [0, 2, 1];
        let w = [0.6, 0.1, 0.3];
        let per = m.per_example_grads(&x, &y).unwrap();
        let mut combo = per[0].zeros_like();
        for (wi, p) in w.iter().zip(&per) {
            combo = combo.axpy(*wi, p);
        }
        // weighted loss gradient via a tape
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone()).unwrap();
        let bound = m.bind(&mut tape).unwrap();
        let nll = bound.nll_node(&mut tape, xv, &y).unwrap();
        let wt = tape
            .constant(Tensor::matrix(3, 1, w.to_vec()).unwrap())
            .unwrap();
        let weighted = tape.mul(nll, wt).unwrap();
        let loss = tape.sum(weighted).unwrap();
        let grads = tape.grad_tensors(loss, &bound.param_nodes).unwrap();
        let gv = ParamVector::flatten(&grads);
        for (a, b) in combo.values().iter().zip(gv.values()) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn accuracy_ties_break_to_lowest_class() {
        let m = ClassifierParams::zeros(ModelKind::Logistic, 2, 2).unwrap();
        let x = xy(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0], vec![1.0, 1.0]]);
        // zero params: every prediction is class 0
        let acc = m.accuracy(&x, &[0, 1, 0, 1]).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn accuracy_hand_case() {
        let m = ClassifierParams::zeros(ModelKind::Logistic, 2, 2).unwrap();
        let v = m.to_vector();
        // W maps feature 0 to class 0 score, feature 1 to class 1 score.
        let vals = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let m = m
            .with_vector(&ParamVector::from_values(vals, v.shapes().to_vec()).unwrap())
            .unwrap();
        let x = xy(vec![
            vec![2.0, 0.0],
            vec![0.0, 2.0],
            vec![3.0, 1.0],
            vec![1.0, 3.0],
        ]);
        let acc = m.accuracy(&x, &[0, 1, 0, 0]).unwrap();
        assert_eq!(acc, 0.75);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = ClassifierParams::init(ModelKind::Mlp { hidden: 5 }, 4, 6, 23).unwrap();
        let x = xy(vec![vec![0.1, -0.9, 1.7, 0.3], vec![2.0, 0.0, -1.0, 0.4]]);
        let logits = m.forward_logits(&x).unwrap();
        let mut tape = Tape::new();
        let l = tape.constant(logits).unwrap();
        let s = tape.softmax_rows(l).unwrap();
        let sv = tape.value(s);
        for i in 0..2 {
            let row_sum: f64 = sv.row(i).iter().sum();
            assert_abs_diff_eq!(row_sum, 1.0, epsilon = 1e-12);
        }
    }
}

//! Datasets, synthetic generators, subsampling protocols and batching.
//!
//! All constructors are pure functions of their seeds; datasets are
//! immutable after construction.

mod io;

pub use io::{load_external, ExternalFormat};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::HashMap;

/// Feature storage: dense real rows, or integer token sequences that are
/// one-hot encoded on the way into a model.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Real { dim: usize, values: Vec<f64> },
    Tokens { len: usize, vocab: usize, values: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Features,
    labels: Vec<usize>,
    ids: Vec<u64>,
    classes: usize,
    by_id: HashMap<u64, usize>,
}

/// Disjoint train/validation/test partition.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(features: Features, labels: Vec<usize>, ids: Vec<u64>, classes: usize) -> Result<Self> {
        let n = labels.len();
        if ids.len() != n {
            return Err(Error::Data(format!("{n} labels but {} ids", ids.len())));
        }
        match &features {
            Features::Real { dim, values } => {
                if values.len() != n * dim {
                    return Err(Error::Data(format!(
                        "feature matrix has {} values, expected {}",
                        values.len(),
                        n * dim
                    )));
                }
                if !values.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite { op: "Dataset::new" });
                }
            }
            Features::Tokens { len, vocab, values } => {
                if values.len() != n * len {
                    return Err(Error::Data(format!(
                        "token matrix has {} entries, expected {}",
                        values.len(),
                        n * len
                    )));
                }
                if let Some(&bad) = values.iter().find(|&&t| t as usize >= *vocab) {
                    return Err(Error::Data(format!(
                        "token {bad} out of range for vocabulary {vocab}"
                    )));
                }
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut by_id = HashMap::with_capacity(n);
        for (i, &id) in ids.iter().enumerate() {
            if by_id.insert(id, i).is_some() {
                return Err(Error::Data(format!("duplicate example id {id}")));
            }
        }
        Ok(Dataset {
            features,
            labels,
            ids,
            classes,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn is_token_task(&self) -> bool {
        matches!(self.features, Features::Tokens { .. })
    }

    /// Feature dimension as consumed by models (token rows are flattened
    /// one-hot, so `len * vocab`).
    pub fn model_dim(&self) -> usize {
        match &self.features {
            Features::Real { dim, .. } => *dim,
            Features::Tokens { len, vocab, .. } => len * vocab,
        }
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn label_of(&self, id: u64) -> Option<usize> {
        self.index_of(id).map(|i| self.labels[i])
    }

    /// Token sequence of one example (token tasks only).
    pub fn tokens_at(&self, idx: usize) -> Option<&[u32]> {
        match &self.features {
            Features::Tokens { len, values, .. } => Some(&values[idx * len..(idx + 1) * len]),
            Features::Real { .. } => None,
        }
    }

    /// Real-valued feature row of one example as stored.
    pub fn raw_row(&self, idx: usize) -> Option<&[f64]> {
        match &self.features {
            Features::Real { dim, values } => Some(&values[idx * dim..(idx + 1) * dim]),
            Features::Tokens { .. } => None,
        }
    }

    /// Model-ready feature row (one-hot encoded for token tasks).
    pub fn model_row(&self, idx: usize) -> Vec<f64> {
        match &self.features {
            Features::Real { dim, values } => values[idx * dim..(idx + 1) * dim].to_vec(),
            Features::Tokens { len, vocab, values } => {
                let mut row = vec![0.0; len * vocab];
                for (p, &t) in values[idx * len..(idx + 1) * len].iter().enumerate() {
                    row[p * vocab + t as usize] = 1.0;
                }
                row
            }
        }
    }

    /// Model-ready feature matrix for a list of ids.
    pub fn feature_matrix(&self, ids: &[u64]) -> Result<Tensor> {
        let d = self.model_dim();
        let mut values = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let idx = self
                .index_of(id)
                .ok_or_else(|| Error::Contract(format!("unknown example id {id}")))?;
            values.extend_from_slice(&self.model_row(idx));
        }
        Tensor::matrix(ids.len(), d, values)
    }

    pub fn labels_for(&self, ids: &[u64]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&id| {
                self.label_of(id)
                    .ok_or_else(|| Error::Contract(format!("unknown example id {id}")))
            })
            .collect()
    }

    /// The whole dataset as one (features, labels) pair in stored order.
    pub fn full_matrix(&self) -> Result<(Tensor, Vec<usize>)> {
        let x = self.feature_matrix(&self.ids)?;
        Ok((x, self.labels.clone()))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    fn take(&self, indices: &[usize]) -> Result<Dataset> {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let ids: Vec<u64> = indices.iter().map(|&i| self.ids[i]).collect();
        let features = match &self.features {
            Features::Real { dim, values } => {
                let mut out = Vec::with_capacity(indices.len() * dim);
                for &i in indices {
                    out.extend_from_slice(&values[i * dim..(i + 1) * dim]);
                }
                Features::Real {
                    dim: *dim,
                    values: out,
                }
            }
            Features::Tokens { len, vocab, values } => {
                let mut out = Vec::with_capacity(indices.len() * len);
                for &i in indices {
                    out.extend_from_slice(&values[i * len..(i + 1) * len]);
                }
                Features::Tokens {
                    len: *len,
                    vocab: *vocab,
                    values: out,
                }
            }
        };
        Dataset::new(features, labels, ids, self.classes)
    }
}

/// Gaussian point clouds, one blob per class.
///
/// Class `c` gets exactly `per_class_counts[c]` points drawn around
/// `means[c]` with isotropic deviation `stddev` (zero is allowed and puts
/// every point exactly on its mean).
pub fn gen_blobs(
    seed: u64,
    per_class_counts: &[usize],
    means: &[Vec<f64>],
    stddev: f64,
) -> Result<Dataset> {
    let classes = per_class_counts.len();
    if classes < 2 {
        return Err(Error::Config(format!(
            "blob generator needs at least 2 classes, got {classes}"
        )));
    }
    if means.len() != classes {
        return Err(Error::Config(format!(
            "{classes} class counts but {} means",
            means.len()
        )));
    }
    let dim = means[0].len();
    if dim == 0 || means.iter().any(|m| m.len() != dim) {
        return Err(Error::Config("blob means must share a nonzero dimension".into()));
    }
    if stddev < 0.0 {
        return Err(Error::Config(format!("negative stddev {stddev}")));
    }
    let mut rng = rng::rng_for(seed, tag::DATA);
    let n: usize = per_class_counts.iter().sum();
    let mut values = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, &count) in per_class_counts.iter().enumerate() {
        for _ in 0..count {
            for &mu in &means[c] {
                let z: f64 = rng.sample(StandardNormal);
                values.push(mu + stddev * z);
            }
            labels.push(c);
        }
    }
    let ids = (0..n as u64).collect();
    Dataset::new(Features::Real { dim, values }, labels, ids, classes)
}

/// Default blob means: class `c` at `4 * stddev * c` along the first axis.
pub fn default_blob_means(classes: usize, dim: usize, stddev: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut m = vec![0.0; dim];
            m[0] = 4.0 * stddev * c as f64;
            m
        })
        .collect()
}

/// The token set that decides labels for a seed's token task.
pub fn token_task_positive_set(seed: u64, vocab: usize) -> Vec<u32> {
    let mut rng = rng::rng_for2(seed, tag::DATA, 0xF0);
    let mut all: Vec<u32> = (0..vocab as u32).collect();
    all.shuffle(&mut rng);
    let mut set: Vec<u32> = all[..vocab / 4].to_vec();
    set.sort_unstable();
    set
}

/// Synthetic binary token task with an explicit, checkable label rule.
///
/// A designated positive set P holds a quarter of the vocabulary (fixed by
/// the seed). Class-1 sequences contain exactly one forced token from P at a
/// random position with the rest drawn uniformly outside P; class-0
/// sequences are drawn entirely outside P. The label of any sequence is
/// therefore recomputable: class 1 iff it contains a token from P.
pub fn gen_token_task(
    seed: u64,
    vocab: usize,
    seq_len: usize,
    per_class_counts: &[usize],
) -> Result<Dataset> {
    if vocab < 4 {
        return Err(Error::Config(format!("token task needs vocab >= 4, got {vocab}")));
    }
    if seq_len < 2 {
        return Err(Error::Config(format!(
            "token task needs sequence length >= 2, got {seq_len}"
        )));
    }
    if per_class_counts.len() != 2 {
        return Err(Error::Config(format!(
            "token task is binary, got {} class counts",
            per_class_counts.len()
        )));
    }
    if per_class_counts.contains(&0) {
        return Err(Error::Config("token task needs examples in every class".into()));
    }
    let positive = token_task_positive_set(seed, vocab);
    let negative: Vec<u32> = (0..vocab as u32).filter(|t| !positive.contains(t)).collect();
    let mut rng = rng::rng_for2(seed, tag::DATA, 0xF1);
    let n: usize = per_class_counts.iter().sum();
    let mut values = Vec::with_capacity(n * seq_len);
    let mut labels = Vec::with_capacity(n);
    for (c, &count) in per_class_counts.iter().enumerate() {
        for _ in 0..count {
            let mut row: Vec<u32> = (0..seq_len)
                .map(|_| negative[rng.gen_range(0..negative.len())])
                .collect();
            if c == 1 {
                let pos = rng.gen_range(0..seq_len);
                row[pos] = positive[rng.gen_range(0..positive.len())];
            }
            values.extend_from_slice(&row);
            labels.push(c);
        }
    }
    let ids = (0..n as u64).collect();
    Dataset::new(
        Features::Tokens {
            len: seq_len,
            vocab,
            values,
        },
        labels,
        ids,
        2,
    )
}

/// Recompute a token-task label from the rule.
pub fn token_task_label(tokens: &[u32], positive: &[u32]) -> usize {
    usize::from(tokens.iter().any(|t| positive.contains(t)))
}

fn stratified_indices(
    d: &Dataset,
    seed: u64,
    requests: &[(usize, usize, usize)], // (train, val, test) per class
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); d.classes()];
    for (i, &y) in d.labels().iter().enumerate() {
        per_class[y].push(i);
    }
    // Report every deficit, not just the first.
    let mut deficits = Vec::new();
    for (c, &(tr, va, te)) in requests.iter().enumerate() {
        let need = tr + va + te;
        let have = per_class[c].len();
        if have < need {
            deficits.push(format!("class {c}: need {need}, have {have} (short {})", need - have));
        }
    }
    if !deficits.is_empty() {
        return Err(Error::Data(format!(
            "insufficient examples for split: {}",
            deficits.join("; ")
        )));
    }
    let mut rng = rng::rng_for(seed, tag::SPLIT);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (c, pool) in per_class.iter_mut().enumerate() {
        pool.shuffle(&mut rng);
        let (tr, va, te) = requests[c];
        train.extend_from_slice(&pool[..tr]);
        val.extend_from_slice(&pool[tr..tr + va]);
        test.extend_from_slice(&pool[tr + va..tr + va + te]);
    }
    Ok((train, val, test))
}

/// Stratified low-data split: the same per-class train/val/test counts for
/// every class, disjoint by construction, deterministic in the seed.
pub fn subsample_low_data(
    d: &Dataset,
    seed: u64,
    n_train_per_class: usize,
    n_val_per_class: usize,
    n_test_per_class: usize,
) -> Result<Splits> {
    let requests: Vec<_> = (0..d.classes())
        .map(|_| (n_train_per_class, n_val_per_class, n_test_per_class))
        .collect();
    let (train, val, test) = stratified_indices(d, seed, &requests)?;
    Ok(Splits {
        train: d.take(&train)?,
        validation: d.take(&val)?,
        test: d.take(&test)?,
    })
}

/// Binary class-imbalance split: `minority_count` examples of class 0
/// against `majority_count` of class 1, a balanced validation set of
/// `n_val_per_class`, and a balanced test set.
pub fn subsample_imbalanced(
    d: &Dataset,
    seed: u64,
    minority_count: usize,
    majority_count: usize,
    n_val_per_class: usize,
    n_test_per_class: usize,
) -> Result<Splits> {
    if d.classes() != 2 {
        return Err(Error::Config(format!(
            "imbalance protocol needs a binary source, got {} classes",
            d.classes()
        )));
    }
    if minority_count == 0 || majority_count == 0 {
        return Err(Error::Config("imbalance protocol needs nonzero class counts".into()));
    }
    let requests = vec![
        (minority_count, n_val_per_class, n_test_per_class),
        (majority_count, n_val_per_class, n_test_per_class),
    ];
    let (train, val, test) = stratified_indices(d, seed, &requests)?;
    Ok(Splits {
        train: d.take(&train)?,
        validation: d.take(&val)?,
        test: d.take(&test)?,
    })
}

/// Minibatch id schedule: each epoch is one seeded permutation of all train
/// ids, chopped into batches (the last may be short). The permutation is a
/// pure function of `(seed, epoch)`.
pub fn minibatches(d: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<u64>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut ids: Vec<u64> = d.ids().to_vec();
    let mut rng = rng::rng_for2(seed, tag::BATCH, epoch);
    ids.shuffle(&mut rng);
    ids.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Epoch-indexed batch schedule over one dataset.
#[derive(Debug, Clone)]
pub struct BatchIter {
    batch_size: usize,
    seed: u64,
}

impl BatchIter {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        BatchIter { batch_size, seed }
    }

    pub fn epoch(&self, d: &Dataset, epoch: u64) -> Vec<Vec<u64>> {
        minibatches(d, self.batch_size, self.seed, epoch)
    }
}

/// Merge two datasets (used for the train+validation baseline).
pub fn merge(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    if a.classes() != b.classes() {
        return Err(Error::Data("merging datasets with different class counts".into()));
    }
    let features = match (a.features(), b.features()) {
        (
            Features::Real { dim: da, values: va },
            Features::Real { dim: db, values: vb },
        ) if da == db => {
            let mut values = va.clone();
            values.extend_from_slice(vb);
            Features::Real { dim: *da, values }
        }
        (
            Features::Tokens { len: la, vocab: ca, values: va },
            Features::Tokens { len: lb, vocab: cb, values: vb },
        ) if la == lb && ca == cb => {
            let mut values = va.clone();
            values.extend_from_slice(vb);
            Features::Tokens {
                len: *la,
                vocab: *ca,
                values,
            }
        }
        _ => return Err(Error::Data("merging datasets with incompatible features".into())),
    };
    let mut labels = a.labels().to_vec();
    labels.extend_from_slice(b.labels());
    let mut ids = a.ids().to_vec();
    ids.extend_from_slice(b.ids());
    Dataset::new(features, labels, ids, a.classes())
}

//! Parameterized data rewards: which samples enter the model update, and
//! with what strength.
//!
//! Three parameterizations are supported. The exact-match delta variant
//! recovers plain maximum-likelihood training; the weight variant keeps one
//! real-valued parameter per training example and converts the parameters of
//! a minibatch into normalized step coefficients; the augment variant scores
//! provenance-tagged augmented samples and delegates its parameters to
//! [`crate::augment`].

use crate::augment::AugmentParams;
use crate::data::{Dataset, Features};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

/// How a batch of stored weight parameters becomes step coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Coefficients proportional to `exp(stored)`.
    Softmax,
    /// Coefficients proportional to `max(stored, 1e-8)`; stored values act
    /// as the weights themselves rather than their logs.
    Linear,
}

const LINEAR_FLOOR: f64 = 1e-8;

/// One learnable weight per training example id.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    weights: BTreeMap<u64, f64>,
    mode: Normalization,
    frozen: bool,
}

impl WeightTable {
    /// All-zero weights: batch coefficients start exactly uniform, so
    /// training starts identical to the unweighted baseline.
    pub fn zeros(ids: impl IntoIterator<Item = u64>, mode: Normalization) -> Self {
        WeightTable {
            weights: ids.into_iter().map(|id| (id, 0.0)).collect(),
            mode,
            frozen: false,
        }
    }

    pub fn from_entries(
        entries: impl IntoIterator<Item = (u64, f64)>,
        mode: Normalization,
        frozen: bool,
    ) -> Result<Self> {
        let weights: BTreeMap<u64, f64> = entries.into_iter().collect();
        if let Some((id, _)) = weights.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite weight for example {id}")));
        }
        Ok(WeightTable {
            weights,
            mode,
            frozen,
        })
    }

    pub fn mode(&self) -> Normalization {
        self.mode
    }

    /// Frozen tables are never updated by the trainer.
    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<f64> {
        self.weights.get(&id).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.weights.iter().map(|(&id, &w)| (id, w))
    }

    /// Normalized step coefficients for one minibatch.
    ///
    /// Softmax mode takes the softmax over the batch's stored values (with
    /// max subtraction, so equal values give exactly 1/n); linear mode
    /// normalizes `max(stored, 1e-8)` to sum to one.
    pub fn batch_coefficients(&self, batch_ids: &[u64]) -> Result<Vec<f64>> {
        if batch_ids.is_empty() {
            return Err(Error::Contract("batch_coefficients of an empty batch".into()));
        }
        let mut phi = Vec::with_capacity(batch_ids.len());
        for &id in batch_ids {
            match self.weights.get(&id) {
                Some(&w) => phi.push(w),
                None => {
                    return Err(Error::Contract(format!(
                        "weight table has no entry for example id {id}"
                    )))
                }
            }
        }
        let coeffs = match self.mode {
            Normalization::Softmax => {
                let mx = phi.iter().cloned().fold(f64::MIN, f64::max);
                let exps: Vec<f64> = phi.iter().map(|w| (w - mx).exp()).collect();
                let total: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / total).collect::<Vec<f64>>()
            }
            Normalization::Linear => {
                let floored: Vec<f64> = phi.iter().map(|&w| w.max(LINEAR_FLOOR)).collect();
                let total: f64 = floored.iter().sum();
                floored.into_iter().map(|w| w / total).collect()
            }
        };
        Ok(coeffs)
    }

    /// Decay-and-add update for the weights of one batch:
    /// `w <- decay * w + g`. Ids outside the batch are untouched.
    pub fn apply_update(&mut self, batch_ids: &[u64], grads: &[f64], decay: f64) -> Result<()> {
        if grads.len() != batch_ids.len() {
            return Err(Error::Contract(format!(
                "{} batch ids but {} weight gradients",
                batch_ids.len(),
                grads.len()
            )));
        }
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::Contract(format!("decay {decay} outside [0, 1]")));
        }
        if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite weight gradient {bad}; aborting the update"
            )));
        }
        for (&id, &g) in batch_ids.iter().zip(grads) {
            match self.weights.get_mut(&id) {
                Some(w) => *w = decay * *w + g,
                None => {
                    return Err(Error::Contract(format!(
                        "weight table has no entry for example id {id}"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Mean/std/min/max of the stored values.
    pub fn summary(&self) -> (f64, f64, f64, f64) {
        let n = self.weights.len().max(1) as f64;
        let mean = self.weights.values().sum::<f64>() / n;
        let var = self
            .weights
            .values()
            .map(|w| (w - mean) * (w - mean))
            .sum::<f64>()
            / n;
        let min = self.weights.values().cloned().fold(f64::INFINITY, f64::min);
        let max = self.weights.values().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mean, var.sqrt(), min, max)
    }

    /// Two-column `id<TAB>weight` dump for post-hoc analysis.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (id, w) in &self.weights {
            writeln!(f, "{id}\t{w}")?;
        }
        Ok(())
    }

    pub fn read_tsv(path: &Path, mode: Normalization) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            let location = format!("{}:{}", path.display(), i + 1);
            let mut parts = line.split('\t');
            let id: u64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse {
                    location: location.clone(),
                    message: "expected an integer id".into(),
                })?;
            let w: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse {
                    location,
                    message: "expected a float weight".into(),
                })?;
            entries.push((id, w));
        }
        WeightTable::from_entries(entries, mode, false)
    }
}

/// The data-reward parameterization in force for a training run.
#[derive(Debug, Clone)]
pub enum DataReward {
    /// Exact-match reward: training reduces to plain maximum likelihood.
    Delta,
    /// Per-example weights.
    Weight(WeightTable),
    /// Learnable augmentation; samples drawn from the augmenter carry unit
    /// reward when they keep their source label.
    Augment(AugmentParams),
}

impl DataReward {
    pub fn variant_name(&self) -> &'static str {
        match self {
            DataReward::Delta => "delta",
            DataReward::Weight(_) => "weight",
            DataReward::Augment(_) => "augment",
        }
    }
}

/// A sample presented to [`reward_value`].
#[derive(Debug, Clone)]
pub enum RewardQuery<'a> {
    /// A literal (features, label) pair.
    Real { features: &'a [f64], label: usize },
    /// A literal token sequence with label.
    Tokens { tokens: &'a [u32], label: usize },
    /// A sample produced by the augmenter from a source training example.
    Augmented { source_id: u64, label: usize },
}

/// Reward of a sample, with "outside the support" kept out of arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardValue {
    Supported(f64),
    /// The sample is outside the reward's support (the conceptual -inf
    /// branch). Never materialized as a float.
    Unsupported,
}

fn find_exact_match(train: &Dataset, query: &RewardQuery) -> Option<u64> {
    match (query, train.features()) {
        (RewardQuery::Real { features, label }, Features::Real { .. }) => {
            (0..train.len()).find_map(|i| {
                let row = train.raw_row(i)?;
                let same = row.len() == features.len()
                    && row
                        .iter()
                        .zip(*features)
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                (same && train.labels()[i] == *label).then(|| train.ids()[i])
            })
        }
        (RewardQuery::Tokens { tokens, label }, Features::Tokens { .. }) => {
            (0..train.len()).find_map(|i| {
                let row = train.tokens_at(i)?;
                (row == *tokens && train.labels()[i] == *label).then(|| train.ids()[i])
            })
        }
        _ => None,
    }
}

/// Evaluate a data reward on one sample against a training set.
///
/// Delta: 1 on exact training pairs. Weight: the stored weight of the
/// matched example. Augment: 1 when a provenance-tagged sample keeps the
/// label of its source example. Everything else is unsupported.
pub fn reward_value(reward: &DataReward, query: &RewardQuery, train: &Dataset) -> RewardValue {
    match reward {
        DataReward::Delta => match find_exact_match(train, query) {
            Some(_) => RewardValue::Supported(1.0),
            None => RewardValue::Unsupported,
        },
        DataReward::Weight(table) => match find_exact_match(train, query) {
            Some(id) => match table.get(id) {
                Some(w) => RewardValue::Supported(w),
                None => RewardValue::Unsupported,
            },
            None => RewardValue::Unsupported,
        },
        DataReward::Augment(_) => match query {
            RewardQuery::Augmented { source_id, label } => match train.label_of(*source_id) {
                Some(y) if y == *label => RewardValue::Supported(1.0),
                _ => RewardValue::Unsupported,
            },
            _ => RewardValue::Unsupported,
        },
    }
}

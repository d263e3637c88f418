//! Learnable augmentation functions producing differentiable samples.
//!
//! Two variants:
//!
//! - a continuous perturbation network for real-valued features: a small
//!   tanh MLP maps (x, one-hot label) to a bounded additive perturbation,
//!   with its output layer zero-initialized so augmentation starts as the
//!   identity map;
//! - a discrete token-substitution table for token tasks: per label, a
//!   full source-token -> replacement-token logit table, sampled through a
//!   gumbel-softmax relaxation so the classifier can consume soft rows and
//!   gradients reach the table.

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::tape::{NodeId, Tape};
use crate::tensor::{ParamVector, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Relaxation and multiplicity settings for augmented training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelConfig {
    /// Softmax temperature at epoch 0. Lower is sharper.
    pub temperature: f64,
    /// Multiplicative temperature decay per epoch.
    pub anneal: f64,
    /// Temperature floor; annealing never goes below this.
    pub floor: f64,
    /// Token positions substituted per augmented sample.
    pub substitutions: usize,
    /// Augmented samples generated per original example.
    pub samples_per_original: usize,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        GumbelConfig {
            temperature: 1.0,
            anneal: 0.7,
            floor: 0.1,
            substitutions: 1,
            samples_per_original: 2,
        }
    }
}

impl GumbelConfig {
    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "gumbel temperature must be positive, got {}",
                self.temperature
            )));
        }
        let floor_ok = self.floor > 0.0;
        let anneal_ok = self.anneal > 0.0 && self.anneal <= 1.0;
        if !floor_ok || !anneal_ok {
            return Err(Error::Config(format!(
                "gumbel anneal {} / floor {} outside (0,1] / (0,inf)",
                self.anneal, self.floor
            )));
        }
        if self.substitutions > seq_len {
            return Err(Error::Config(format!(
                "{} substitutions exceed sequence length {seq_len}",
                self.substitutions
            )));
        }
        Ok(())
    }

    /// Annealed temperature for an epoch, clipped at the floor.
    pub fn temperature_at(&self, epoch: usize) -> f64 {
        (self.temperature * self.anneal.powi(epoch as i32)).max(self.floor)
    }
}

/// Continuous perturbation network: (x, one-hot y) -> bounded delta.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousAugment {
    input_dim: usize,
    classes: usize,
    hidden: usize,
    /// Sup-norm bound on the perturbation.
    pub bound: f64,
    /// Scale of the seeded exploration noise added before clipping.
    pub noise_sigma: f64,
    tensors: Vec<Tensor>, // W1 [d+C, h], b1 [1, h], W2 [h, d], b2 [1, d]
}

impl ContinuousAugment {
    /// Hidden layer uniform in [-0.1, 0.1]; output layer zero, so the
    /// perturbation starts at exactly zero.
    pub fn init(
        input_dim: usize,
        classes: usize,
        hidden: usize,
        bound: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || classes < 2 || hidden == 0 {
            return Err(Error::Config(
                "continuous augmenter needs input_dim > 0, classes >= 2, hidden > 0".into(),
            ));
        }
        if bound < 0.0 || noise_sigma < 0.0 {
            return Err(Error::Config("bound and noise sigma must be non-negative".into()));
        }
        let mut rng = rng::rng_for2(seed, tag::INIT, 0xA0);
        let inp = input_dim + classes;
        let w1: Vec<f64> = (0..inp * hidden).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        let b1: Vec<f64> = (0..hidden).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        Ok(ContinuousAugment {
            input_dim,
            classes,
            hidden,
            bound,
            noise_sigma,
            tensors: vec![
                Tensor::matrix(inp, hidden, w1)?,
                Tensor::matrix(1, hidden, b1)?,
                Tensor::zeros(vec![hidden, input_dim]),
                Tensor::zeros(vec![1, input_dim]),
            ],
        })
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

    /// Build the augmented batch on a tape: parameters become leaves and the
    /// result depends on them differentiably.
    ///
    /// `x_star` is [n, d], `noise` a standard-normal [n, d] draw; the output
    /// node is `x_star + clamp(net(x_star, y) + sigma * noise, +-bound)`.
    pub fn build_batch(
        &self,
        tape: &mut Tape,
        x_star: &Tensor,
        labels: &[usize],
        noise: &Tensor,
    ) -> Result<(Vec<NodeId>, NodeId)> {
        let n = x_star.rows();
        if x_star.cols() != self.input_dim || labels.len() != n {
            return Err(Error::Shape {
                op: "augment_continuous",
                expected: format!("[{n}, {}] features with {n} labels", self.input_dim),
                actual: format!("{:?} with {} labels", x_star.shape(), labels.len()),
            });
        }
        if noise.shape() != x_star.shape() {
            return Err(Error::Shape {
                op: "augment_continuous",
                expected: format!("noise of shape {:?}", x_star.shape()),
                actual: format!("{:?}", noise.shape()),
            });
        }
        // net input [n, d + C]: features next to the one-hot label block.
        let mut net_in = Vec::with_capacity(n * (self.input_dim + self.classes));
        for i in 0..n {
            net_in.extend_from_slice(x_star.row(i));
            let mut onehot = vec![0.0; self.classes];
            if labels[i] >= self.classes {
                return Err(Error::Data(format!(
                    "example {i}: label {} out of range for {} classes",
                    labels[i], self.classes
                )));
            }
            onehot[labels[i]] = 1.0;
            net_in.extend_from_slice(&onehot);
        }
        let net_in = tape.constant(Tensor::matrix(n, self.input_dim + self.classes, net_in)?)?;
        let params: Vec<NodeId> = self
            .tensors
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let z1 = tape.matmul(net_in, params[0])?;
        let z1 = tape.add_row(z1, params[1])?;
        let h = tape.tanh(z1)?;
        let z2 = tape.matmul(h, params[2])?;
        let delta = tape.add_row(z2, params[3])?;
        let scaled_noise: Vec<f64> = noise.values().iter().map(|v| v * self.noise_sigma).collect();
        let noise_c = tape.constant(Tensor::new(noise.shape().to_vec(), scaled_noise)?)?;
        let jittered = tape.add(delta, noise_c)?;
        let clipped = tape.clamp(jittered, -self.bound, self.bound)?;
        let x_base = tape.constant(x_star.clone())?;
        let x_tilde = tape.add(x_base, clipped)?;
        Ok((params, x_tilde))
    }
}

/// Per-label token substitution table with gumbel-softmax sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAugment {
    classes: usize,
    vocab: usize,
    /// [classes * vocab, vocab]: row `y * vocab + t` is the replacement
    /// logit row for source token `t` under label `y`.
    logits: Tensor,
}

impl TokenAugment {
    /// Zero logits: every substitution starts exactly uniform.
    pub fn init(classes: usize, vocab: usize) -> Result<Self> {
        if classes < 2 || vocab < 2 {
            return Err(Error::Config(
                "token augmenter needs classes >= 2 and vocab >= 2".into(),
            ));
        }
        Ok(TokenAugment {
            classes,
            vocab,
            logits: Tensor::zeros(vec![classes * vocab, vocab]),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    /// Replacement logit row for (label, source token).
    pub fn logit_row(&self, label: usize, token: u32) -> &[f64] {
        self.logits.row(label * self.vocab + token as usize)
    }

    /// Insert the table as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<NodeId> {
        tape.param(self.logits.clone())
    }

    /// Build the relaxed [L, V] sample for one sequence on a tape.
    ///
    /// Non-selected positions are exact one-hot rows of the original tokens;
    /// each selected position j becomes
    /// `softmax((logits[y][tokens[j]] + noise[j]) / tau)`.
    #[allow(clippy::too_many_arguments)]
    pub fn build_relaxed(
        &self,
        tape: &mut Tape,
        table_node: NodeId,
        tokens: &[u32],
        label: usize,
        positions: &[usize],
        noise: &Tensor,
        tau: f64,
    ) -> Result<NodeId> {
        let len = tokens.len();
        if label >= self.classes {
            return Err(Error::Data(format!(
                "label {label} out of range for {} classes",
                self.classes
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.vocab) {
            return Err(Error::Data(format!(
                "token {bad} out of range for vocabulary {}",
                self.vocab
            )));
        }
        for (i, &p) in positions.iter().enumerate() {
            if p >= len {
                return Err(Error::Contract(format!(
                    "substitution position {p} out of range for length {len}"
                )));
            }
            if positions[..i].contains(&p) {
                return Err(Error::Contract(format!("duplicate substitution position {p}")));
            }
        }
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        if noise.shape() != [positions.len(), self.vocab] {
            return Err(Error::Shape {
                op: "augment_discrete_relaxed",
                expected: format!("[{}, {}] noise", positions.len(), self.vocab),
                actual: format!("{:?}", noise.shape()),
            });
        }

        // One-hot base with the selected rows zeroed out.
        let mut base = vec![0.0; len * self.vocab];
        for (p, &t) in tokens.iter().enumerate() {
            if !positions.contains(&p) {
                base[p * self.vocab + t as usize] = 1.0;
            }
        }
        let base = tape.constant(Tensor::matrix(len, self.vocab, base)?)?;
        if positions.is_empty() {
            return Ok(base);
        }

        let rows: Vec<usize> = positions
            .iter()
            .map(|&p| label * self.vocab + tokens[p] as usize)
            .collect();
        let gathered = tape.gather_rows(table_node, rows)?;
        let noise_c = tape.constant(noise.clone())?;
        let noisy = tape.add(gathered, noise_c)?;
        let scaled = tape.scale(noisy, 1.0 / tau)?;
        let soft = tape.softmax_rows(scaled)?;
        let placed = tape.scatter_add_rows(soft, positions.to_vec(), len)?;
        tape.add(base, placed)
    }
}

/// Augmentation parameters: exactly one variant is active.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmentParams {
    Continuous(ContinuousAugment),
    Token(TokenAugment),
}

impl AugmentParams {
    pub fn variant_name(&self) -> &'static str {
        match self {
            AugmentParams::Continuous(_) => "continuous",
            AugmentParams::Token(_) => "token",
        }
    }

    pub fn to_vector(&self) -> ParamVector {
        match self {
            AugmentParams::Continuous(c) => ParamVector::flatten(&c.tensors),
            AugmentParams::Token(t) => ParamVector::flatten(std::slice::from_ref(&t.logits)),
        }
    }

    pub fn with_vector(&self, v: &ParamVector) -> Result<Self> {
        let current = self.to_vector();
        if v.dim() != current.dim() {
            return Err(Error::Contract(format!(
                "augmenter parameter vector has dimension {}, expected {}",
                v.dim(),
                current.dim()
            )));
        }
        match self {
            AugmentParams::Continuous(c) => {
                let mut out = c.clone();
                out.tensors = v.unflatten();
                Ok(AugmentParams::Continuous(out))
            }
            AugmentParams::Token(t) => {
                let mut out = t.clone();
                out.logits = v.unflatten().pop().expect("one tensor");
                Ok(AugmentParams::Token(out))
            }
        }
    }

    /// Mean and max absolute parameter value, for progress summaries.
    pub fn magnitude_summary(&self) -> (f64, f64) {
        let v = self.to_vector();
        let n = v.dim().max(1) as f64;
        let mean = v.values().iter().map(|x| x.abs()).sum::<f64>() / n;
        let max = v.values().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        (mean, max)
    }
}

/// Standard Gumbel(0, 1) noise matrix.
pub fn sample_gumbel(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().max(1e-300);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::new(vec![rows, cols], values).expect("gumbel noise is finite")
}

/// Per-row argmax of a relaxed matrix, lowest index on ties.
pub fn harden(relaxed: &Tensor) -> Vec<u32> {
    (0..relaxed.rows())
        .map(|i| crate::model::argmax_lowest(relaxed.row(i)) as u32)
        .collect()
}

/// One-shot numeric evaluation of the continuous augmenter.
pub fn augment_continuous(
    p: &ContinuousAugment,
    x: &[f64],
    label: usize,
    noise: &[f64],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let xs = Tensor::matrix(1, x.len(), x.to_vec())?;
    let nz = Tensor::matrix(1, noise.len(), noise.to_vec())?;
    let (_, x_tilde) = p.build_batch(&mut tape, &xs, &[label], &nz)?;
    Ok(tape.value(x_tilde).values().to_vec())
}

/// One-shot numeric evaluation of the relaxed token substitution.
pub fn augment_discrete_relaxed(
    p: &TokenAugment,
    tokens: &[u32],
    label: usize,
    positions: &[usize],
    noise: &Tensor,
    tau: f64,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let table = p.bind(&mut tape)?;
    let relaxed = p.build_relaxed(&mut tape, table, tokens, label, positions, noise, tau)?;
    Ok(tape.value(relaxed).clone())
}

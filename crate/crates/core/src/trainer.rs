//! Alternating training of a classifier and its data manipulation.
//!
//! Each minibatch iteration computes a meta-gradient for the manipulation
//! parameters through a one-step lookahead — take a plain gradient step on
//! the batch under the current manipulation, then measure the validation
//! loss gradient at the looked-ahead parameters — updates the manipulation,
//! and finally takes the real model step under the refreshed manipulation
//! (the phi-first order; the theta-first order swaps the last two stages).
//!
//! The weight variant has a closed-form meta-gradient through the softmax
//! over batch weights. The augment variant backpropagates through the
//! recorded step tape, either exactly (gradient-of-gradient) or with a
//! symmetric finite difference along the validation gradient.

use crate::augment::{sample_gumbel, AugmentParams, GumbelConfig};
use crate::data::{minibatches, Dataset, Splits};
use crate::error::{Error, Result};
use crate::model::{mean_scalar_node, nll_vector_node, ClassifierParams, ModelKind};
use crate::reward::{DataReward, Normalization, WeightTable};
use crate::rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::{ParamVector, Tensor};
use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};

/// How augmentation meta-gradients are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaMode {
    /// Differentiate through the recorded step tape (gradient-of-gradient).
    Analytic,
    /// Replace the inner gradient dot product with a symmetric finite
    /// difference along the validation gradient; first-order autodiff only.
    HvpFd,
}

/// Within-iteration ordering of the manipulation and model updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOrder {
    /// Meta-gradient and manipulation update first; the model step then uses
    /// fresh manipulation parameters.
    PhiFirst,
    /// Model step first with the current manipulation.
    ThetaFirst,
}

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub theta_lr: f64,
    pub phi_lr: f64,
    /// Lookahead step size; defaults to `theta_lr` so the lookahead matches
    /// the real update rule.
    pub lookahead_lr: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Manipulation updates per model step.
    pub phi_steps: usize,
    pub meta_mode: MetaMode,
    pub hvp_delta: f64,
    pub order: StepOrder,
    /// Decay factor applied to a batch's weights before adding the scaled
    /// meta-gradient.
    pub weight_decay: f64,
    /// Abort when a batch loss exceeds this or turns non-finite.
    pub divergence_limit: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            theta_lr: 0.1,
            phi_lr: 0.1,
            lookahead_lr: None,
            batch_size: 16,
            epochs: 5,
            phi_steps: 1,
            meta_mode: MetaMode::Analytic,
            hvp_delta: crate::hvp::DEFAULT_HVP_DELTA,
            order: StepOrder::PhiFirst,
            weight_decay: 0.1,
            divergence_limit: 1e6,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta_lr.is_nan() || self.theta_lr <= 0.0 {
            return Err(Error::Config(format!("theta_lr must be positive, got {}", self.theta_lr)));
        }
        if self.phi_lr.is_nan() || self.phi_lr < 0.0 {
            // zero freezes the manipulation, which is a supported variant
            return Err(Error::Config(format!("phi_lr must be non-negative, got {}", self.phi_lr)));
        }
        if let Some(lr) = self.lookahead_lr {
            if lr.is_nan() || lr <= 0.0 {
                return Err(Error::Config(format!("lookahead_lr must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 || self.phi_steps == 0 {
            return Err(Error::Config(
                "batch_size, epochs and phi_steps must be at least 1".into(),
            ));
        }
        let delta_ok = self.hvp_delta > 0.0;
        let limit_ok = self.divergence_limit > 0.0;
        if !delta_ok || !limit_ok {
            return Err(Error::Config("hvp_delta and divergence_limit must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.weight_decay) {
            return Err(Error::Config(format!(
                "weight_decay {} outside [0, 1]",
                self.weight_decay
            )));
        }
        Ok(())
    }

    pub fn lookahead(&self) -> f64 {
        self.lookahead_lr.unwrap_or(self.theta_lr)
    }
}

/// Manipulation state digest for progress reports.
#[derive(Debug, Clone, PartialEq)]
pub enum ManipSummary {
    None,
    Weight { mean: f64, std: f64, min: f64, max: f64 },
    Augment { mean_abs: f64, max_abs: f64 },
}

/// One per-epoch progress record.
#[derive(Debug, Clone)]
pub struct StepReport {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Global model steps completed so far.
    pub step: usize,
    /// Mean over the epoch's batches of the batch NLL at the pre-step
    /// parameters (original examples only).
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub manip: ManipSummary,
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Parameters at the best-validation checkpoint.
    pub params: ClassifierParams,
    /// Parameters at the end of the final epoch.
    pub last_params: ClassifierParams,
    /// Final manipulation state.
    pub reward: DataReward,
    pub reports: Vec<StepReport>,
    /// 1-based epoch of the checkpoint in `params`.
    pub selected_epoch: usize,
}

// --- single steps ----------------------------------------------------------

/// Plain gradient step on the mean batch NLL.
pub fn baseline_mle_step(
    model: &ClassifierParams,
    x: &Tensor,
    labels: &[usize],
    lr: f64,
) -> Result<ClassifierParams> {
    let (_, g) = model.grad_mean_nll(x, labels)?;
    model.with_vector(&model.to_vector().axpy(-lr, &g))
}

/// Gradient step on the coefficient-weighted sum of per-example losses.
pub fn weighted_theta_step(
    model: &ClassifierParams,
    x: &Tensor,
    labels: &[usize],
    batch_ids: &[u64],
    table: &WeightTable,
    lr: f64,
) -> Result<ClassifierParams> {
    let grads = model.per_example_grads(x, labels)?;
    weighted_theta_step_with(model, &grads, batch_ids, table, lr)
}

fn combine(grads: &[ParamVector], coeffs: &[f64]) -> ParamVector {
    let mut acc = grads[0].zeros_like();
    for (c, g) in coeffs.iter().zip(grads) {
        acc = acc.axpy(*c, g);
    }
    acc
}

/// As [`weighted_theta_step`], reusing already-computed per-example grads.
pub fn weighted_theta_step_with(
    model: &ClassifierParams,
    grads: &[ParamVector],
    batch_ids: &[u64],
    table: &WeightTable,
    lr: f64,
) -> Result<ClassifierParams> {
    let coeffs = table.batch_coefficients(batch_ids)?;
    if grads.len() != batch_ids.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} batch ids",
            grads.len(),
            batch_ids.len()
        )));
    }
    let step = combine(grads, &coeffs);
    model.with_vector(&model.to_vector().axpy(-lr, &step))
}

/// Closed-form meta-gradient of the validation log-likelihood with respect
/// to the batch's weight parameters, through a one-step lookahead.
///
/// With coefficients `c = softmax(phi_batch)`, per-example gradients `g_i`,
/// lookahead `theta~ = theta - lr_look * sum_i c_i g_i` and
/// `v = grad mean-validation-NLL at theta~`, entry j is
/// `lr_look * c_j * (g_j.v - sum_i c_i g_i.v)`. Positive entries mean
/// raising that weight lowers the validation loss.
#[allow(clippy::too_many_arguments)]
pub fn meta_grad_weighting(
    model: &ClassifierParams,
    x: &Tensor,
    labels: &[usize],
    batch_ids: &[u64],
    table: &WeightTable,
    val_x: &Tensor,
    val_labels: &[usize],
    lookahead_lr: f64,
) -> Result<Vec<f64>> {
    let grads = model.per_example_grads(x, labels)?;
    meta_grad_weighting_with(model, &grads, batch_ids, table, val_x, val_labels, lookahead_lr)
}

/// As [`meta_grad_weighting`], reusing already-computed per-example grads.
pub fn meta_grad_weighting_with(
    model: &ClassifierParams,
    grads: &[ParamVector],
    batch_ids: &[u64],
    table: &WeightTable,
    val_x: &Tensor,
    val_labels: &[usize],
    lookahead_lr: f64,
) -> Result<Vec<f64>> {
    if val_labels.is_empty() {
        return Err(Error::Config("meta-gradient needs a nonempty validation set".into()));
    }
    let coeffs = table.batch_coefficients(batch_ids)?;
    let step = combine(grads, &coeffs);
    let lookahead = model.with_vector(&model.to_vector().axpy(-lookahead_lr, &step))?;
    let (_, v) = lookahead.grad_mean_nll(val_x, val_labels)?;
    let dots: Vec<f64> = grads.iter().map(|g| g.dot(&v)).collect();
    let avg: f64 = coeffs.iter().zip(&dots).map(|(c, d)| c * d).sum();
    Ok(coeffs
        .iter()
        .zip(&dots)
        .map(|(c, d)| lookahead_lr * c * (d - avg))
        .collect())
}

// --- augmentation plumbing --------------------------------------------------

/// Frozen randomness for one batch's augmented samples, so the lookahead,
/// the meta-gradient and the real step all see identical samples.
#[derive(Debug, Clone)]
pub struct AugPlan {
    /// Source batch index of each augmented sample.
    pub rep_indices: Vec<usize>,
    /// Standard-normal noise rows for the continuous variant, [m*B, d].
    cont_noise: Option<Tensor>,
    /// Per augmented sample: substitution positions and gumbel noise [k, V].
    token_noise: Option<Vec<(Vec<usize>, Tensor)>>,
    /// Relaxation temperature for this epoch.
    pub tau: f64,
}

/// Draw the augmentation randomness for one (epoch, step) batch.
pub fn make_aug_plan(
    aug: &AugmentParams,
    gumbel: &GumbelConfig,
    train: &Dataset,
    batch_ids: &[u64],
    epoch: usize,
    step: usize,
    seed: u64,
) -> Result<AugPlan> {
    let m = gumbel.samples_per_original;
    let mut rng = rng::rng_for2(
        seed,
        rng::tag::AUGMENT,
        (epoch as u64).wrapping_mul(1_000_003).wrapping_add(step as u64),
    );
    let rep_indices: Vec<usize> = (0..batch_ids.len()).flat_map(|i| vec![i; m]).collect();
    let tau = gumbel.temperature_at(epoch);
    match aug {
        AugmentParams::Continuous(c) => {
            let d = c.input_dim();
            let values: Vec<f64> = (0..rep_indices.len() * d)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            Ok(AugPlan {
                rep_indices: rep_indices.clone(),
                cont_noise: Some(Tensor::matrix(rep_indices.len(), d, values)?),
                token_noise: None,
                tau,
            })
        }
        AugmentParams::Token(t) => {
            let seq_len = match train.features() {
                crate::data::Features::Tokens { len, .. } => *len,
                _ => {
                    return Err(Error::Config(
                        "token augmentation needs a token dataset".into(),
                    ))
                }
            };
            gumbel.validate(seq_len)?;
            let k = gumbel.substitutions;
            let noise = rep_indices
                .iter()
                .map(|_| {
                    let positions = sample_indices(&mut rng, seq_len, k).into_vec();
                    let g = sample_gumbel(&mut rng, k, t.vocab());
                    (positions, g)
                })
                .collect();
            Ok(AugPlan {
                rep_indices,
                cont_noise: None,
                token_noise: Some(noise),
                tau,
            })
        }
    }
}

/// Assemble the union (originals + augmented) feature node on a tape.
///
/// Returns the augmenter's parameter leaves, the union feature node and the
/// union labels. Without augmentation the union is just the originals,
/// built through the same path.
fn build_union_features(
    tape: &mut Tape,
    train: &Dataset,
    batch_ids: &[u64],
    aug: Option<(&AugmentParams, &AugPlan)>,
) -> Result<(Vec<NodeId>, NodeId, Vec<usize>)> {
    let x_orig = train.feature_matrix(batch_ids)?;
    let y_orig = train.labels_for(batch_ids)?;
    let x_orig_node = tape.constant(x_orig.clone())?;
    let Some((aug, plan)) = aug else {
        let x_union = tape.concat_rows(&[x_orig_node])?;
        return Ok((vec![], x_union, y_orig));
    };
    if plan.rep_indices.is_empty() {
        let x_union = tape.concat_rows(&[x_orig_node])?;
        return Ok((vec![], x_union, y_orig));
    }
    match aug {
        AugmentParams::Continuous(c) => {
            let d = c.input_dim();
            let mut rep_vals = Vec::with_capacity(plan.rep_indices.len() * d);
            let mut rep_labels = Vec::with_capacity(plan.rep_indices.len());
            for &i in &plan.rep_indices {
                rep_vals.extend_from_slice(x_orig.row(i));
                rep_labels.push(y_orig[i]);
            }
            let x_star = Tensor::matrix(plan.rep_indices.len(), d, rep_vals)?;
            let noise = plan
                .cont_noise
                .as_ref()
                .ok_or_else(|| Error::Contract("plan lacks continuous noise".into()))?;
            let (anodes, x_tilde) = c.build_batch(tape, &x_star, &rep_labels, noise)?;
            let x_union = tape.concat_rows(&[x_orig_node, x_tilde])?;
            let mut labels = y_orig;
            labels.extend_from_slice(&rep_labels);
            Ok((anodes, x_union, labels))
        }
        AugmentParams::Token(t) => {
            let table = t.bind(tape)?;
            let noise = plan
                .token_noise
                .as_ref()
                .ok_or_else(|| Error::Contract("plan lacks token noise".into()))?;
            let mut parts = vec![x_orig_node];
            let mut labels = y_orig.clone();
            for (r, &src) in plan.rep_indices.iter().enumerate() {
                let idx = train
                    .index_of(batch_ids[src])
                    .ok_or_else(|| Error::Contract(format!("unknown id {}", batch_ids[src])))?;
                let tokens = train
                    .tokens_at(idx)
                    .ok_or_else(|| Error::Config("token augmentation on non-token data".into()))?;
                let (positions, g) = &noise[r];
                let relaxed =
                    t.build_relaxed(tape, table, tokens, y_orig[src], positions, g, plan.tau)?;
                let flat_dim = tape.value(relaxed).len();
                let flat = tape.reshape(relaxed, vec![1, flat_dim])?;
                parts.push(flat);
                labels.push(y_orig[src]);
            }
            let x_union = tape.concat_rows(&parts)?;
            Ok((vec![table], x_union, labels))
        }
    }
}

/// The recorded state of one augmented step, kept for meta-differentiation.
pub struct AugTape {
    tape: Option<Tape>,
    theta_nodes: Vec<NodeId>,
    aug_nodes: Vec<NodeId>,
    loss: NodeId,
    /// Gradient of the union loss with respect to the model parameters.
    pub grad_theta: ParamVector,
    /// Union loss value at the pre-step parameters.
    pub loss_value: f64,
}

/// Model step on the union of the batch and its augmented samples.
///
/// The returned [`AugTape`] records how the step depended on the augmenter
/// parameters; pass `retain_tape = true` to keep the full tape for the
/// analytic meta-gradient.
pub fn augmented_theta_step(
    model: &ClassifierParams,
    train: &Dataset,
    batch_ids: &[u64],
    aug: &AugmentParams,
    plan: &AugPlan,
    lr: f64,
    retain_tape: bool,
) -> Result<(ClassifierParams, AugTape)> {
    let mut tape = Tape::new();
    let (aug_nodes, x_union, labels) = build_union_features(&mut tape, train, batch_ids, Some((aug, plan)))?;
    let bound = model.bind(&mut tape)?;
    let logits = bound.logits(&mut tape, x_union)?;
    let nll = nll_vector_node(&mut tape, logits, &labels, model.classes())?;
    let loss = mean_scalar_node(&mut tape, nll)?;
    let loss_value = tape.item(loss)?;
    let grads = tape.grad_tensors(loss, &bound.param_nodes)?;
    let grad_theta = ParamVector::flatten(&grads);
    let stepped = model.with_vector(&model.to_vector().axpy(-lr, &grad_theta))?;
    Ok((
        stepped,
        AugTape {
            tape: retain_tape.then_some(tape),
            theta_nodes: bound.param_nodes,
            aug_nodes,
            loss,
            grad_theta,
            loss_value,
        },
    ))
}

/// Meta-gradient of the validation log-likelihood with respect to the
/// augmenter parameters, through the one-step lookahead recorded in
/// `aug_tape`.
///
/// Let `u` be the gradient of the mean validation NLL at the lookahead
/// parameters. The analytic mode differentiates the scalar
/// `s = grad_theta(union loss) . u` through the retained tape; the hvp_fd
/// mode differentiates the symmetric difference
/// `(loss(theta + eps u) - loss(theta - eps u)) / (2 eps)` instead, which
/// needs first-order autodiff only. Either way the result is scaled by the
/// lookahead rate; positive entries mean raising that parameter lowers the
/// validation loss.
#[allow(clippy::too_many_arguments)]
pub fn meta_grad_augmentation(
    model: &ClassifierParams,
    train: &Dataset,
    batch_ids: &[u64],
    aug: &AugmentParams,
    plan: &AugPlan,
    val_x: &Tensor,
    val_labels: &[usize],
    mode: MetaMode,
    lookahead_lr: f64,
    hvp_delta: f64,
    aug_tape: &mut AugTape,
) -> Result<ParamVector> {
    if val_labels.is_empty() {
        return Err(Error::Config("meta-gradient needs a nonempty validation set".into()));
    }
    let lookahead = model.with_vector(
        &model
            .to_vector()
            .axpy(-lookahead_lr, &aug_tape.grad_theta),
    )?;
    let (_, u) = lookahead.grad_mean_nll(val_x, val_labels)?;
    match mode {
        MetaMode::Analytic => {
            let tape = aug_tape.tape.as_mut().ok_or_else(|| {
                Error::Unsupported(
                    "analytic augmentation meta-gradient needs the retained step tape; \
                     rerun the step with retain_tape or use the hvp_fd mode"
                        .into(),
                )
            })?;
            if aug_tape.aug_nodes.is_empty() {
                return Ok(aug.to_vector().zeros_like());
            }
            let grad_nodes = tape.grad(aug_tape.loss, &aug_tape.theta_nodes)?;
            let u_tensors = u.unflatten();
            let mut s: Option<NodeId> = None;
            for (gn, ut) in grad_nodes.iter().zip(&u_tensors) {
                let uc = tape.constant(ut.clone())?;
                let d = tape.dot(*gn, uc)?;
                s = Some(match s {
                    None => d,
                    Some(prev) => tape.add(prev, d)?,
                });
            }
            let s = s.ok_or_else(|| Error::Contract("model has no parameters".into()))?;
            let metas = tape.grad_tensors(s, &aug_tape.aug_nodes)?;
            Ok(ParamVector::flatten(&metas).scale(lookahead_lr))
        }
        MetaMode::HvpFd => {
            let eps = hvp_delta / u.norm().max(1e-12);
            let plus = model.with_vector(&model.to_vector().axpy(eps, &u))?;
            let minus = model.with_vector(&model.to_vector().axpy(-eps, &u))?;
            let mut tape = Tape::new();
            let (aug_nodes, x_union, labels) =
                build_union_features(&mut tape, train, batch_ids, Some((aug, plan)))?;
            if aug_nodes.is_empty() {
                return Ok(aug.to_vector().zeros_like());
            }
            let bp = plus.bind_constant(&mut tape)?;
            let logits_p = bp.logits(&mut tape, x_union)?;
            let nll_p = nll_vector_node(&mut tape, logits_p, &labels, model.classes())?;
            let loss_p = mean_scalar_node(&mut tape, nll_p)?;
            let bm = minus.bind_constant(&mut tape)?;
            let logits_m = bm.logits(&mut tape, x_union)?;
            let nll_m = nll_vector_node(&mut tape, logits_m, &labels, model.classes())?;
            let loss_m = mean_scalar_node(&mut tape, nll_m)?;
            let diff = tape.sub(loss_p, loss_m)?;
            let s = tape.scale(diff, 1.0 / (2.0 * eps))?;
            let metas = tape.grad_tensors(s, &aug_nodes)?;
            Ok(ParamVector::flatten(&metas).scale(lookahead_lr))
        }
    }
}

/// Meta-gradients for one manipulation update.
#[derive(Debug, Clone)]
pub enum MetaGrads {
    /// Per-batch-id ascent directions for the weight table.
    Weight(Vec<f64>),
    /// Flat ascent direction over the augmenter parameters.
    Augment(ParamVector),
}

/// Apply one manipulation update.
///
/// Weight variant: decay-and-add with gradients scaled by `phi_lr`.
/// Augment variant: plain gradient ascent with rate `phi_lr`.
pub fn phi_step(
    reward: &mut DataReward,
    batch_ids: &[u64],
    meta: &MetaGrads,
    phi_lr: f64,
    decay: f64,
) -> Result<()> {
    match (reward, meta) {
        (DataReward::Weight(table), MetaGrads::Weight(grads)) => {
            let scaled: Vec<f64> = grads.iter().map(|g| phi_lr * g).collect();
            table.apply_update(batch_ids, &scaled, decay)
        }
        (DataReward::Augment(aug), MetaGrads::Augment(grads)) => {
            *aug = aug.with_vector(&aug.to_vector().axpy(phi_lr, grads))?;
            Ok(())
        }
        (reward, meta) => Err(Error::Contract(format!(
            "meta-gradient variant {} does not match reward variant {}",
            match meta {
                MetaGrads::Weight(_) => "weight",
                MetaGrads::Augment(_) => "augment",
            },
            reward.variant_name()
        ))),
    }
}

// --- baselines ---------------------------------------------------------------

/// Frozen inverse-class-frequency weights: stored value `ln(1 / count(class))`
/// makes softmax batch coefficients proportional to inverse class frequency.
pub fn baseline_proportion_weights(train: &Dataset) -> WeightTable {
    let counts = train.class_counts();
    let entries = train
        .ids()
        .iter()
        .zip(train.labels())
        .map(|(&id, &y)| (id, -(counts[y] as f64).ln()));
    WeightTable::from_entries(entries, Normalization::Softmax, true)
        .expect("finite log counts")
}

/// Re-estimated weighting step: score each example by the alignment of its
/// gradient with the validation gradient after a uniform lookahead, rectify
/// at zero, normalize (uniform when everything is non-positive), then take
/// the weighted step. No state persists between calls.
pub fn baseline_ren_step(
    model: &ClassifierParams,
    x: &Tensor,
    labels: &[usize],
    val_x: &Tensor,
    val_labels: &[usize],
    theta_lr: f64,
    lookahead_lr: f64,
) -> Result<ClassifierParams> {
    let grads = model.per_example_grads(x, labels)?;
    let n = grads.len();
    let mean_g = combine(&grads, &vec![1.0 / n as f64; n]);
    let lookahead = model.with_vector(&model.to_vector().axpy(-lookahead_lr, &mean_g))?;
    let (_, v) = lookahead.grad_mean_nll(val_x, val_labels)?;
    let influences: Vec<f64> = grads.iter().map(|g| g.dot(&v)).collect();
    let weights = ren_weights(&influences);
    let step = combine(&grads, &weights);
    model.with_vector(&model.to_vector().axpy(-theta_lr, &step))
}

/// Rectify-then-normalize, uniform when all influences are non-positive.
pub fn ren_weights(influences: &[f64]) -> Vec<f64> {
    let rectified: Vec<f64> = influences.iter().map(|&a| a.max(0.0)).collect();
    let total: f64 = rectified.iter().sum();
    if total > 0.0 {
        rectified.into_iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / influences.len() as f64; influences.len()]
    }
}

// --- the joint loop ------------------------------------------------------------

fn manip_summary(reward: &DataReward) -> ManipSummary {
    match reward {
        DataReward::Delta => ManipSummary::None,
        DataReward::Weight(t) => {
            let (mean, std, min, max) = t.summary();
            ManipSummary::Weight { mean, std, min, max }
        }
        DataReward::Augment(a) => {
            let (mean_abs, max_abs) = a.magnitude_summary();
            ManipSummary::Augment { mean_abs, max_abs }
        }
    }
}

/// Joint training of the model and its data manipulation.
///
/// Runs a fixed epoch budget of alternating minibatch updates, reports once
/// per epoch, and keeps the parameters of the best-validation epoch
/// (accuracy first, loss as tiebreak, earliest on exact ties).
pub fn train_joint(
    config: &TrainerConfig,
    kind: ModelKind,
    splits: &Splits,
    reward: DataReward,
) -> Result<TrainRun> {
    train_joint_with(config, kind, splits, reward, |_, _| {})
}

/// [`train_joint`] with a per-epoch observer for metric collection.
pub fn train_joint_with<F>(
    config: &TrainerConfig,
    kind: ModelKind,
    splits: &Splits,
    mut reward: DataReward,
    mut observer: F,
) -> Result<TrainRun>
where
    F: FnMut(&ClassifierParams, &StepReport),
{
    config.validate()?;
    let gumbel = GumbelConfig::default();
    train_joint_inner(config, &gumbel, kind, splits, &mut reward, &mut observer)
}

/// [`train_joint`] with explicit augmentation settings.
pub fn train_joint_augmented<F>(
    config: &TrainerConfig,
    gumbel: &GumbelConfig,
    kind: ModelKind,
    splits: &Splits,
    mut reward: DataReward,
    mut observer: F,
) -> Result<TrainRun>
where
    F: FnMut(&ClassifierParams, &StepReport),
{
    config.validate()?;
    train_joint_inner(config, gumbel, kind, splits, &mut reward, &mut observer)
}

fn train_joint_inner(
    config: &TrainerConfig,
    gumbel: &GumbelConfig,
    kind: ModelKind,
    splits: &Splits,
    reward: &mut DataReward,
    observer: &mut dyn FnMut(&ClassifierParams, &StepReport),
) -> Result<TrainRun> {
    let train = &splits.train;
    if train.is_empty() || splits.validation.is_empty() {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    let mut model = ClassifierParams::init(kind, train.model_dim(), train.classes(), config.seed)?;
    let (val_x, val_y) = splits.validation.full_matrix()?;
    let lookahead_lr = config.lookahead();

    let mut reports = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, ClassifierParams, usize)> = None;
    let mut global_step = 0usize;

    for epoch in 0..config.epochs {
        let batches = minibatches(train, config.batch_size, config.seed, epoch as u64);
        let mut epoch_loss = 0.0;
        for (step, batch_ids) in batches.iter().enumerate() {
            let x = train.feature_matrix(batch_ids)?;
            let y = train.labels_for(batch_ids)?;
            let batch_loss = model.mean_nll(&x, &y)?;
            if !batch_loss.is_finite() || batch_loss > config.divergence_limit {
                return Err(diverged(epoch, global_step, batch_loss, &reports));
            }
            epoch_loss += batch_loss;

            match reward {
                DataReward::Delta => {
                    model = baseline_mle_step(&model, &x, &y, config.theta_lr)?;
                }
                DataReward::Weight(table) => {
                    let grads = model.per_example_grads(&x, &y)?;
                    let mut theta_first_model = None;
                    if config.order == StepOrder::ThetaFirst {
                        theta_first_model = Some(weighted_theta_step_with(
                            &model,
                            &grads,
                            batch_ids,
                            table,
                            config.theta_lr,
                        )?);
                    }
                    if !table.frozen() {
                        if config.phi_lr != 0.0 {
                            for _ in 0..config.phi_steps {
                                let meta = meta_grad_weighting_with(
                                    &model,
                                    &grads,
                                    batch_ids,
                                    table,
                                    &val_x,
                                    &val_y,
                                    lookahead_lr,
                                )?;
                                let scaled: Vec<f64> =
                                    meta.iter().map(|g| config.phi_lr * g).collect();
                                table.apply_update(batch_ids, &scaled, config.weight_decay)?;
                            }
                        } else {
                            // frozen-rate variant: the decay still applies
                            table.apply_update(
                                batch_ids,
                                &vec![0.0; batch_ids.len()],
                                config.weight_decay,
                            )?;
                        }
                    }
                    model = match theta_first_model {
                        Some(m) => m,
                        None => weighted_theta_step_with(
                            &model,
                            &grads,
                            batch_ids,
                            table,
                            config.theta_lr,
                        )?,
                    };
                }
                DataReward::Augment(aug) => {
                    let plan =
                        make_aug_plan(aug, gumbel, train, batch_ids, epoch, step, config.seed)?;
                    let learned = config.phi_lr != 0.0;
                    match config.order {
                        StepOrder::PhiFirst => {
                            if learned {
                                for _ in 0..config.phi_steps {
                                    let retain = config.meta_mode == MetaMode::Analytic;
                                    let (_, mut tape) = augmented_theta_step(
                                        &model,
                                        train,
                                        batch_ids,
                                        aug,
                                        &plan,
                                        lookahead_lr,
                                        retain,
                                    )?;
                                    let meta = meta_grad_augmentation(
                                        &model, train, batch_ids, aug, &plan, &val_x, &val_y,
                                        config.meta_mode, lookahead_lr, config.hvp_delta,
                                        &mut tape,
                                    )?;
                                    *aug = aug.with_vector(
                                        &aug.to_vector().axpy(config.phi_lr, &meta),
                                    )?;
                                }
                            }
                            let (stepped, _) = augmented_theta_step(
                                &model, train, batch_ids, aug, &plan, config.theta_lr, false,
                            )?;
                            model = stepped;
                        }
                        StepOrder::ThetaFirst => {
                            let retain = learned && config.meta_mode == MetaMode::Analytic;
                            let (stepped, mut tape) = augmented_theta_step(
                                &model, train, batch_ids, aug, &plan, config.theta_lr, retain,
                            )?;
                            if learned {
                                let meta = meta_grad_augmentation(
                                    &model, train, batch_ids, aug, &plan, &val_x, &val_y,
                                    config.meta_mode, lookahead_lr, config.hvp_delta, &mut tape,
                                )?;
                                *aug = aug
                                    .with_vector(&aug.to_vector().axpy(config.phi_lr, &meta))?;
                            }
                            model = stepped;
                        }
                    }
                }
            }
            global_step += 1;
        }

        let val_loss = model.mean_nll(&val_x, &val_y)?;
        let val_accuracy = model.accuracy(&val_x, &val_y)?;
        if !val_loss.is_finite() || val_loss > config.divergence_limit {
            return Err(diverged(epoch, global_step, val_loss, &reports));
        }
        let report = StepReport {
            epoch: epoch + 1,
            step: global_step,
            train_loss: epoch_loss / batches.len() as f64,
            val_loss,
            val_accuracy,
            manip: manip_summary(reward),
        };
        observer(&model, &report);
        let improves = match &best {
            None => true,
            Some((acc, loss, _, _)) => {
                val_accuracy > *acc || (val_accuracy == *acc && val_loss < *loss)
            }
        };
        if improves {
            best = Some((val_accuracy, val_loss, model.clone(), epoch + 1));
        }
        reports.push(report);
    }

    let (_, _, best_params, selected_epoch) = best.expect("at least one epoch ran");
    Ok(TrainRun {
        params: best_params,
        last_params: model,
        reward: reward.clone(),
        reports,
        selected_epoch,
    })
}

fn diverged(epoch: usize, step: usize, loss: f64, reports: &[StepReport]) -> Error {
    let last = reports
        .last()
        .map(|r| {
            format!(
                "last valid report: epoch {} val_loss {:.6} val_accuracy {:.4}",
                r.epoch, r.val_loss, r.val_accuracy
            )
        })
        .unwrap_or_else(|| "no completed epoch".into());
    Error::Diverged {
        epoch: epoch + 1,
        step,
        detail: format!("loss {loss}; {last}"),
    }
}

/// Training loop for the re-estimated weighting baseline.
pub fn train_ren<F>(
    config: &TrainerConfig,
    kind: ModelKind,
    splits: &Splits,
    mut observer: F,
) -> Result<TrainRun>
where
    F: FnMut(&ClassifierParams, &StepReport),
{
    config.validate()?;
    let train = &splits.train;
    let mut model = ClassifierParams::init(kind, train.model_dim(), train.classes(), config.seed)?;
    let (val_x, val_y) = splits.validation.full_matrix()?;
    let mut reports = Vec::new();
    let mut best: Option<(f64, f64, ClassifierParams, usize)> = None;
    let mut global_step = 0usize;
    for epoch in 0..config.epochs {
        let batches = minibatches(train, config.batch_size, config.seed, epoch as u64);
        let mut epoch_loss = 0.0;
        for batch_ids in &batches {
            let x = train.feature_matrix(batch_ids)?;
            let y = train.labels_for(batch_ids)?;
            let batch_loss = model.mean_nll(&x, &y)?;
            if !batch_loss.is_finite() || batch_loss > config.divergence_limit {
                return Err(diverged(epoch, global_step, batch_loss, &reports));
            }
            epoch_loss += batch_loss;
            model = baseline_ren_step(
                &model,
                &x,
                &y,
                &val_x,
                &val_y,
                config.theta_lr,
                config.lookahead(),
            )?;
            global_step += 1;
        }
        let val_loss = model.mean_nll(&val_x, &val_y)?;
        let val_accuracy = model.accuracy(&val_x, &val_y)?;
        let report = StepReport {
            epoch: epoch + 1,
            step: global_step,
            train_loss: epoch_loss / batches.len() as f64,
            val_loss,
            val_accuracy,
            manip: ManipSummary::None,
        };
        observer(&model, &report);
        let improves = match &best {
            None => true,
            Some((acc, loss, _, _)) => {
                val_accuracy > *acc || (val_accuracy == *acc && val_loss < *loss)
            }
        };
        if improves {
            best = Some((val_accuracy, val_loss, model.clone(), epoch + 1));
        }
        reports.push(report);
    }
    let (_, _, best_params, selected_epoch) = best.expect("at least one epoch ran");
    Ok(TrainRun {
        params: best_params,
        last_params: model,
        reward: DataReward::Delta,
        reports,
        selected_epoch,
    })
}

/// Mean softmax coefficient per class over the mixed batches of a probe
/// epoch (batches containing a single class are skipped).
pub fn weight_class_coefficient_means(
    table: &WeightTable,
    train: &Dataset,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; train.classes()];
    let mut counts = vec![0usize; train.classes()];
    for batch_ids in minibatches(train, batch_size, seed, 0) {
        let labels = train.labels_for(&batch_ids)?;
        let first = labels[0];
        if labels.iter().all(|&y| y == first) {
            continue;
        }
        let coeffs = table.batch_coefficients(&batch_ids)?;
        for (c, y) in coeffs.iter().zip(&labels) {
            sums[*y] += c;
            counts[*y] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect())
}

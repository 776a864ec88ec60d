//! Training: Adam with bias correction, the epoch loop over sampled bags,
//! and slide-level inference by majority vote over bag predictions.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::MilModel;
use crate::synth::{sample_bags, SlideDataset, Split};

fn default_learning_rate() -> f64 {
    1e-4
}
fn default_bag_size() -> usize {
    32
}
fn default_batch_size() -> usize {
    16
}
fn default_epochs() -> usize {
    20
}
fn default_bags_per_slide() -> usize {
    4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_seed() -> u64 {
    42
}
fn default_patience() -> usize {
    5
}
fn default_val_bags() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_bag_size")]
    pub bag_size: usize,
    /// Bags per optimizer step.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Fresh bags sampled from each training slide per epoch.
    #[serde(default = "default_bags_per_slide")]
    pub bags_per_slide: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Early-stop patience on validation accuracy, in epochs.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Bags per slide for validation-accuracy majority votes.
    #[serde(default = "default_val_bags")]
    pub val_bags: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 && self.epochs > 0 && self.learning_rate != 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.bag_size < 1 || self.bags_per_slide < 1 || self.val_bags < 1 {
            return Err(Error::Config(
                "bag_size, bags_per_slide and val_bags must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0,1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn for_model(model: &MilModel) -> Self {
        let shapes: Vec<Vec<usize>> = model
            .named_params()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        AdamState {
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Tensor],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dimension(
            "adam_step param/grad/state counts",
            &[params.len()],
            &[grads.len()],
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (((name, param), grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if param.shape() != grad.shape() {
            return Err(Error::dimension(name.as_str(), param.shape(), grad.shape()));
        }
        for i in 0..param.numel() {
            let g = grad.data()[i];
            let mi = config.beta1 * m.data()[i] + (1.0 - config.beta1) * g;
            let vi = config.beta2 * v.data()[i] + (1.0 - config.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            param.data_mut()[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

/// Mean cross-entropy loss и gradient over one batch of bags. Gradients
/// are reduced in bag order — an explicit serial reduction.
pub fn batch_loss_and_grads(
    model: &MilModel,
    bags: &[(Tensor, usize)],
    context: &str,
) -> Result<(f64, Vec<Tensor>)> {
    let mut grads: Vec<Tensor> = model
        .named_params()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let mut loss_sum = 0.0;
    let scale = 1.0 / bags.len() as f64;
    for (instances, label) in bags {
        let mut tape = Tape::new();
        let fwd = model
            .forward_on_tape(&mut tape, instances, None)
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Divergence(format!("{msg} at {context}")),
                other => other,
            })?;
        let loss = tape.cross_entropy(fwd.logits, *label)?;
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss at {context}")));
        }
        loss_sum += loss_value;
        tape.backward(loss)?;
        for (acc, var) in grads.iter_mut().zip(&fwd.params) {
            if let Some(g) = tape.grad(*var) {
                for (a, gv) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += gv * scale;
                }
            }
        }
    }
    Ok((loss_sum * scale, grads))
}

/// Train in place; returns the per-epoch history. Deterministic under the
/// config seed. Parameters are restored to the best validation epoch.
pub fn train(model: &mut MilModel, dataset: &SlideDataset, config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    if dataset.splits.train.is_empty() || dataset.splits.val.is_empty() {
        return Err(Error::Config("dataset must provide train and val splits".into()));
    }
    let mut state = AdamState::for_model(model);
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut best_params: Vec<Tensor> = model.named_params().iter().map(|(_, t)| (*t).clone()).collect();
    let mut epochs_without_improvement = 0usize;

    for epoch in 0..config.epochs {
        let epoch_seed = config
            .seed
            .wrapping_add((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut bags: Vec<(Tensor, usize)> = Vec::new();
        for &slide_id in &dataset.splits.train {
            let slide = dataset.slide(slide_id)?;
            let size = config.bag_size.min(slide.num_instances());
            for bag in sample_bags(slide, size, config.bags_per_slide, epoch_seed)? {
                bags.push((bag.instances, bag.label));
            }
        }
        let mut order_rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        bags.shuffle(&mut order_rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, batch) in bags.chunks(config.batch_size).enumerate() {
            let context = format!("epoch {epoch}, step {step}");
            let (loss, grads) = batch_loss_and_grads(model, batch, &context)?;
            loss_sum += loss;
            batches += 1;
            let mut params = model.named_params_mut();
            adam_step(&mut params, &grads, &mut state, config)?;
        }
        let train_loss = loss_sum / batches.max(1) as f64;

        let val_accuracy = split_accuracy(model, dataset, Split::Val, config.bag_size, config.val_bags, config.seed)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_accuracy,
        });

        // Ties prefer the later epoch: the longer-trained model wins when
        // validation accuracy plateaus.
        if val_accuracy >= history.best_val_accuracy {
            if val_accuracy > history.best_val_accuracy {
                epochs_without_improvement = 0;
            } else {
                epochs_without_improvement += 1;
            }
            history.best_val_accuracy = val_accuracy;
            history.best_epoch = epoch;
            best_params = model.named_params().iter().map(|(_, t)| (*t).clone()).collect();
        } else {
            epochs_without_improvement += 1;
        }
        if epochs_without_improvement > config.patience {
            history.stopped_early = true;
            break;
        }
    }

    if config.epochs > 0 {
        for ((_, param), best) in model.named_params_mut().into_iter().zip(best_params) {
            *param = best;
        }
    }
    if history.best_val_accuracy == f64::NEG_INFINITY {
        history.best_val_accuracy = 0.0;
    }
    Ok(history)
}

#[derive(Debug, Clone, Serialize)]
pub struct SlideInference {
    pub label: usize,
    /// Vote share of the winning class.
    pub probability: f64,
    pub votes: Vec<usize>,
    /// Per-class vote share, used as the class assignment score.
    pub class_scores: Vec<f64>,
}

/// Majority vote over per-bag argmax predictions. Ties break toward the
/// larger summed winning-class logit, then the lower class index.
pub fn majority_vote(bag_logits: &[Tensor], num_classes: usize) -> SlideInference {
    let mut votes = vec![0usize; num_classes];
    let mut winner_logit_sum = vec![0.0f64; num_classes];
    for logits in bag_logits {
        let mut best = 0usize;
        for c in 1..num_classes {
            if logits.data()[c] > logits.data()[best] {
                best = c;
            }
        }
        votes[best] += 1;
        winner_logit_sum[best] += logits.data()[best];
    }
    let top = *votes.iter().max().expect("non-empty vote vector");
    let mut winner = usize::MAX;
    for c in 0..num_classes {
        if votes[c] != top {
            continue;
        }
        if winner == usize::MAX || winner_logit_sum[c] > winner_logit_sum[winner] {
            winner = c;
        }
    }
    let n = bag_logits.len();
    SlideInference {
        label: winner,
        probability: votes[winner] as f64 / n as f64,
        class_scores: votes.iter().map(|&v| v as f64 / n as f64).collect(),
        votes,
    }
}

/// Sample bags from a slide and majority-vote the per-bag predictions.
pub fn infer_slide(
    model: &MilModel,
    slide: &crate::synth::Slide,
    bag_size: usize,
    num_bags: usize,
    seed: u64,
) -> Result<SlideInference> {
    if num_bags < 1 {
        return Err(Error::Config("num_bags must be >= 1".into()));
    }
    let size = bag_size.min(slide.num_instances());
    let bags = sample_bags(slide, size, num_bags, seed)?;
    let mut logits = Vec::with_capacity(bags.len());
    for bag in &bags {
        logits.push(model.forward(&bag.instances)?.logits);
    }
    Ok(majority_vote(&logits, model.config.num_classes))
}

/// Fraction of split slides whose majority-vote label matches the truth.
pub fn split_accuracy(
    model: &MilModel,
    dataset: &SlideDataset,
    split: Split,
    bag_size: usize,
    num_bags: usize,
    seed: u64,
) -> Result<f64> {
    let ids = dataset.split_ids(split);
    if ids.is_empty() {
        return Err(Error::Config("empty split".into()));
    }
    let mut correct = 0usize;
    for &id in ids {
        let slide = dataset.slide(id)?;
        if infer_slide(model, slide, bag_size, num_bags, seed)?.label == slide.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ids.len() as f64)
}

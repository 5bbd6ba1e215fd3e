use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{CnnModel, InputNorm};
use crate::attacks::ObservedSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient added to the gradient as `λ w`.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Outputs at or above this probability flag a line as outaged.
    pub threshold: f64,
    /// Fit a per-feature standardization on the training set when the
    /// model does not carry one yet.
    pub standardize_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            threshold: 0.5,
            standardize_inputs: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("epsilon must be positive and weight decay non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss (without the L2 term) per epoch.
    pub loss_curve: Vec<f64>,
}

/// Packs the selected samples into contiguous input and label buffers.
pub fn gather(samples: &[ObservedSample], idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let m = samples.first().map_or(0, |s| s.z_obs.len());
    let l = samples.first().map_or(0, |s| s.y.len());
    let mut inputs = Vec::with_capacity(idx.len() * m);
    let mut labels = Vec::with_capacity(idx.len() * l);
    for &i in idx {
        inputs.extend_from_slice(&samples[i].z_obs);
        labels.extend(samples[i].y.iter().map(|&v| f64::from(v)));
    }
    (inputs, labels)
}

pub(crate) fn check_samples(model: &CnnModel, samples: &[ObservedSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    for s in samples {
        if s.z_obs.len() != model.arch.input_len || s.y.len() != model.arch.outputs {
            return Err(Error::ShapeMismatch(format!(
                "sample has {} inputs / {} labels, model expects {} / {}",
                s.z_obs.len(),
                s.y.len(),
                model.arch.input_len,
                model.arch.outputs
            )));
        }
    }
    Ok(())
}

/// Mini-batch Adam on mean BCE with seeded shuffling.
pub fn train(model: &mut CnnModel, samples: &[ObservedSample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_samples(model, samples)?;
    if cfg.standardize_inputs && model.input_norm.is_none() {
        let norm = InputNorm::fit(samples.iter().map(|s| s.z_obs.as_slice()))?;
        model.set_input_norm(Some(norm))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(&model.params);
    let adam = cfg.adam();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (inputs, labels) = gather(samples, chunk);
            let (loss, grads) =
                model.loss_and_gradient(&inputs, &labels, chunk.len(), cfg.weight_decay)?;
            if !loss.is_finite() {
                return Err(Error::Numerical("training loss diverged".into()));
            }
            total += loss * chunk.len() as f64;
            adam_step(&mut model.params, &grads, &mut state, &adam);
        }
        loss_curve.push(total / samples.len() as f64);
    }
    Ok(TrainReport { loss_curve })
}

/// Output probabilities for every sample, `samples.len() x outputs`.
pub fn predict(model: &CnnModel, samples: &[ObservedSample]) -> Result<Vec<Vec<f64>>> {
    check_samples(model, samples)?;
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(128) {
        let (inputs, _) = gather(samples, chunk);
        let probs = model.forward(&inputs, chunk.len())?;
        out.extend(probs.chunks_exact(model.arch.outputs).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Mean BCE over a sample set.
pub fn dataset_loss(model: &CnnModel, samples: &[ObservedSample]) -> Result<f64> {
    let probs = predict(model, samples)?;
    let flat: Vec<f64> = probs.into_iter().flatten().collect();
    let (_, labels) = gather(samples, &(0..samples.len()).collect::<Vec<_>>());
    super::model::bce_loss(&flat, &labels)
}

//! First-order MAML pre-training over a family of topology tasks, and
//! fine-tuning from the learned initialization.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::ObservedSample;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::neuralnet::{
    adam_step, gather, train, AdamConfig, AdamState, Architecture, Checkpoint, CnnModel, InputNorm,
    ParamSet, TrainConfig, TrainReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub inner_lr: f64,
    pub outer_lr: f64,
    /// Plain gradient steps on the support set per task. Zero reduces the
    /// outer step to multi-task training on the query sets.
    pub inner_steps: usize,
    pub meta_batch_size: usize,
    pub support_size: usize,
    pub query_size: usize,
    pub outer_iterations: usize,
    /// Only the first-order approximation is implemented.
    pub first_order: bool,
    pub seed: u64,
    /// Fit a per-feature standardization on the pooled task samples; it is
    /// inherited by every model fine-tuned from the initialization.
    pub standardize_inputs: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_lr: 1e-2,
            outer_lr: 1e-3,
            inner_steps: 5,
            meta_batch_size: 5,
            support_size: 200,
            query_size: 800,
            outer_iterations: 2000,
            first_order: true,
            seed: 0,
            standardize_inputs: true,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.first_order {
            return Err(Error::InvalidConfig(
                "second-order MAML is not supported; set first_order = true".into(),
            ));
        }
        for (name, v) in [("inner_lr", self.inner_lr), ("outer_lr", self.outer_lr)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if self.meta_batch_size == 0 || self.support_size == 0 || self.query_size == 0 {
            return Err(Error::InvalidConfig(
                "meta_batch_size, support_size and query_size must be positive".into(),
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.outer_lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Where a meta-learned initialization came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaProvenance {
    pub config: MetaConfig,
    pub task_family_fingerprint: String,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaInit {
    pub model: CnnModel,
    pub provenance: MetaProvenance,
    /// Mean post-adaptation query loss per outer iteration.
    pub meta_loss_curve: Vec<f64>,
}

impl MetaInit {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model, None, Some(self.provenance.config.seed));
        ck.meta = Some(self.provenance.clone());
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let provenance = ck
            .meta
            .clone()
            .ok_or_else(|| Error::SchemaMismatch("checkpoint carries no meta provenance".into()))?;
        Ok(Self {
            model: ck.to_model()?,
            provenance,
            meta_loss_curve: Vec::new(),
        })
    }
}

/// One task's support and query batches, packed for the network.
#[derive(Debug, Clone)]
pub struct Episode {
    pub support: (Vec<f64>, Vec<f64>, usize),
    pub query: (Vec<f64>, Vec<f64>, usize),
}

impl Episode {
    pub fn new(samples: &[ObservedSample], support: &[usize], query: &[usize]) -> Self {
        let (si, sl) = gather(samples, support);
        let (qi, ql) = gather(samples, query);
        Self {
            support: (si, sl, support.len()),
            query: (qi, ql, query.len()),
        }
    }
}

/// Adapts `model` to the support set with `inner_steps` plain gradient steps.
pub fn adapt(model: &CnnModel, support: &(Vec<f64>, Vec<f64>, usize), cfg: &MetaConfig) -> Result<CnnModel> {
    let mut adapted = model.clone();
    for _ in 0..cfg.inner_steps {
        let (_, g) = adapted.loss_and_gradient(&support.0, &support.1, support.2, 0.0)?;
        adapted.params.add_scaled(-cfg.inner_lr, &g);
    }
    Ok(adapted)
}

/// First-order meta-gradient: the mean over episodes of the query-loss
/// gradient evaluated at the adapted parameters. Returns the mean query loss
/// too.
pub fn meta_gradient(model: &CnnModel, episodes: &[Episode], cfg: &MetaConfig) -> Result<(f64, ParamSet)> {
    if episodes.is_empty() {
        return Err(Error::InsufficientTaskData("no episodes".into()));
    }
    let mut total = model.params.zeros_like();
    let mut loss = 0.0;
    let w = 1.0 / episodes.len() as f64;
    for ep in episodes {
        let adapted = adapt(model, &ep.support, cfg)?;
        let (l, g) = adapted.loss_and_gradient(&ep.query.0, &ep.query.1, ep.query.2, 0.0)?;
        loss += w * l;
        total.add_scaled(w, &g);
    }
    Ok((loss, total))
}

pub fn task_family_fingerprint(tasks: &[Dataset]) -> String {
    let mut h = Sha256::new();
    for t in tasks {
        h.update(t.manifest.grid_fingerprint.as_bytes());
        h.update(t.manifest.creation_seed.to_le_bytes());
        h.update((t.samples.len() as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Meta-trains an initialization for `arch` on the task family. Each outer
/// iteration draws `meta_batch_size` distinct tasks and disjoint random
/// support/query subsets within each.
pub fn maml_pretrain(tasks: &[Dataset], arch: Architecture, cfg: &MetaConfig) -> Result<MetaInit> {
    cfg.validate()?;
    if tasks.len() < 2 {
        return Err(Error::InsufficientTaskData(format!(
            "need at least 2 tasks, got {}",
            tasks.len()
        )));
    }
    let need = cfg.support_size + cfg.query_size;
    for (i, t) in tasks.iter().enumerate() {
        if t.samples.len() < need {
            return Err(Error::InsufficientTaskData(format!(
                "task {i} has {} samples, support + query needs {need}",
                t.samples.len()
            )));
        }
        crate::neuralnet::check_samples(&CnnModel::zeros(arch.clone())?, &t.samples[..1])?;
    }
    let mut model = CnnModel::new(arch, cfg.seed)?;
    if cfg.standardize_inputs {
        let rows = tasks.iter().flat_map(|t| t.samples.iter().map(|s| s.z_obs.as_slice()));
        model.set_input_norm(Some(InputNorm::fit(rows)?))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(&model.params);
    let adam = cfg.adam();
    let batch = cfg.meta_batch_size.min(tasks.len());
    let mut curve = Vec::with_capacity(cfg.outer_iterations);
    for _ in 0..cfg.outer_iterations {
        let episodes: Vec<Episode> = sample(&mut rng, tasks.len(), batch)
            .into_iter()
            .map(|ti| {
                let t = &tasks[ti].samples;
                let idx = sample(&mut rng, t.len(), need).into_vec();
                Episode::new(t, &idx[..cfg.support_size], &idx[cfg.support_size..])
            })
            .collect();
        let (loss, grad) = meta_gradient(&model, &episodes, cfg)?;
        if !loss.is_finite() {
            return Err(Error::Numerical("meta loss diverged".into()));
        }
        curve.push(loss);
        adam_step(&mut model.params, &grad, &mut state, &adam);
    }
    Ok(MetaInit {
        model,
        provenance: MetaProvenance {
            config: cfg.clone(),
            task_family_fingerprint: task_family_fingerprint(tasks),
            n_tasks: tasks.len(),
        },
        meta_loss_curve: curve,
    })
}

/// Standard training starting from the meta-learned weights.
pub fn fine_tune(init: &MetaInit, data: &[ObservedSample], cfg: &TrainConfig) -> Result<(CnnModel, TrainReport)> {
    let mut model = init.model.clone();
    let report = train(&mut model, data, cfg)?;
    Ok((model, report))
}

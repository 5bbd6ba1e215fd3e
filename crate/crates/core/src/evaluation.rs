//! Micro-averaged precision/recall and the three-approach, three-variant
//! localization experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{ObservedSample, Variant};
use crate::case_model::GridCase;
use crate::datagen::{generate_dataset, generate_meta_tasks, AttackMix, GenConfig};
use crate::error::{Error, Result};
use crate::meta::{fine_tune, maml_pretrain, MetaConfig, MetaInit};
use crate::mtd::{apply_mtd, place_dfacts, select_perturbation, DfactsPlan, SelectedPerturbation};
use crate::neuralnet::{predict, train, Architecture, CnnModel, TrainConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Percent.
    pub recall: f64,
    /// Percent; 0 with `precision_degenerate` when nothing was predicted.
    pub precision: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    pub totals: LineCounts,
    pub per_line: Vec<LineCounts>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (100.0 * num as f64 / den as f64, false)
    }
}

/// Thresholds `predictions` (`p >= threshold` is positive) and tallies
/// TP/FP/FN over every (sample, line) pair.
pub fn metrics(predictions: &[Vec<f64>], labels: &[Vec<u8>], threshold: f64) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let width = labels.first().map_or(0, Vec::len);
    let mut per_line = vec![LineCounts::default(); width];
    for (p, y) in predictions.iter().zip(labels) {
        if p.len() != width || y.len() != width {
            return Err(Error::ShapeMismatch("ragged prediction or label rows".into()));
        }
        for ((c, &p), &y) in per_line.iter_mut().zip(p).zip(y) {
            match (p >= threshold, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    let totals = per_line.iter().fold(LineCounts::default(), |a, c| LineCounts {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        fn_: a.fn_ + c.fn_,
        tn: a.tn + c.tn,
    });
    let (recall, recall_degenerate) = ratio(totals.tp, totals.tp + totals.fn_);
    let (precision, precision_degenerate) = ratio(totals.tp, totals.tp + totals.fp);
    Ok(Metrics {
        recall,
        precision,
        precision_degenerate,
        recall_degenerate,
        totals,
        per_line,
    })
}

pub fn evaluate_model(model: &CnnModel, test: &[ObservedSample], threshold: f64) -> Result<Metrics> {
    let preds = predict(model, test)?;
    let labels: Vec<Vec<u8>> = test.iter().map(|s| s.y.clone()).collect();
    metrics(&preds, &labels, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Approach {
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "cnn+mtd")]
    CnnMtd,
    #[serde(rename = "cnn+maml+mtd")]
    CnnMamlMtd,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Cnn, Approach::CnnMtd, Approach::CnnMamlMtd];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Cnn => "cnn",
            Approach::CnnMtd => "cnn+mtd",
            Approach::CnnMamlMtd => "cnn+maml+mtd",
        }
    }
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown approach {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtdSettings {
    /// Relative reactance perturbation bound.
    pub eta: f64,
    pub n_candidates: usize,
    /// Explicit D-FACTS lines; spanning-tree placement when absent.
    pub dfacts_lines: Option<Vec<usize>>,
}

impl Default for MtdSettings {
    fn default() -> Self {
        Self {
            eta: 0.2,
            n_candidates: 200,
            dfacts_lines: None,
        }
    }
}

impl MtdSettings {
    pub fn plan(&self, grid: &GridCase) -> Result<DfactsPlan> {
        match &self.dfacts_lines {
            Some(lines) => DfactsPlan::from_dfacts_lines(grid, lines),
            None => place_dfacts(grid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    /// Template for noise, load, outage and distortion settings. Sample
    /// counts, seeds, variant mix and MTD flag are set per run.
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub fine_tune: TrainConfig,
    pub meta: MetaConfig,
    pub mtd: MtdSettings,
    pub n_topologies: usize,
    pub n_per_topology: usize,
    pub reactance_range: (f64, f64),
    /// Variant weights of the meta-training task family.
    pub task_mix: AttackMix,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_train: 10_000,
            n_test: 1_000,
            seeds: (0..5).collect(),
            gen: GenConfig::default(),
            train: TrainConfig::default(),
            fine_tune: TrainConfig::default(),
            meta: MetaConfig::default(),
            mtd: MtdSettings::default(),
            n_topologies: 100,
            n_per_topology: 1_000,
            reactance_range: (0.8, 1.2),
            task_mix: AttackMix {
                partial: 1.0,
                extra: 1.0,
                full: 1.0,
            },
        }
    }
}

impl ExperimentConfig {
    /// Reduced sizes for smoke runs.
    pub fn fast() -> Self {
        Self {
            n_train: 1_000,
            n_test: 300,
            seeds: vec![0],
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            fine_tune: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            meta: MetaConfig {
                support_size: 16,
                query_size: 32,
                inner_steps: 1,
                meta_batch_size: 2,
                outer_iterations: 10,
                ..MetaConfig::default()
            },
            mtd: MtdSettings {
                n_candidates: 20,
                ..MtdSettings::default()
            },
            n_topologies: 4,
            n_per_topology: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 || self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "n_train, n_test and seeds must be non-empty".into(),
            ));
        }
        self.gen.validate()?;
        self.train.validate()?;
        self.fine_tune.validate()?;
        self.meta.validate()?;
        if self.n_per_topology < self.meta.support_size + self.meta.query_size {
            return Err(Error::InvalidConfig(
                "n_per_topology is smaller than support + query".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic sub-seed for one pipeline stage.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// The defender's reactance perturbation for a given seed.
pub fn mtd_selection(case: &GridCase, settings: &MtdSettings, seed: u64) -> Result<SelectedPerturbation> {
    let plan = settings.plan(case)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mtd"));
    select_perturbation(case, &plan, settings.eta, settings.n_candidates, &mut rng)
}

/// The grid after the defender's MTD for a given seed.
pub fn mtd_grid(case: &GridCase, settings: &MtdSettings, seed: u64) -> Result<GridCase> {
    apply_mtd(case, &mtd_selection(case, settings, seed)?.perturbation)
}

fn data(
    view: &GridCase,
    truth: &GridCase,
    cfg: &ExperimentConfig,
    variant: Variant,
    n: usize,
    seed: u64,
) -> Result<Vec<ObservedSample>> {
    let gen = GenConfig {
        n_samples: n,
        attack_mix: AttackMix::only(variant),
        mtd_active: view.reactances() != truth.reactances(),
        master_seed: seed,
        ..cfg.gen.clone()
    };
    Ok(generate_dataset(view, truth, &gen)?.samples)
}

/// Meta-learned initializations keyed by seed, shared across variants.
pub type MetaCache = BTreeMap<u64, MetaInit>;

pub fn meta_init(case: &GridCase, cfg: &ExperimentConfig, seed: u64) -> Result<MetaInit> {
    let gen = GenConfig {
        attack_mix: cfg.task_mix,
        mtd_active: true,
        ..cfg.gen.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "tasks"));
    let tasks = generate_meta_tasks(
        case,
        cfg.n_topologies,
        cfg.n_per_topology,
        cfg.reactance_range,
        &gen,
        &mut rng,
    )?;
    let meta = MetaConfig {
        seed: derive_seed(seed, "meta"),
        ..cfg.meta.clone()
    };
    maml_pretrain(&tasks, arch_for(case), &meta)
}

pub fn arch_for(case: &GridCase) -> Architecture {
    Architecture::table1(case.n_measurements(), case.n_branches())
}

fn seeded(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(seed, "shuffle"),
        ..cfg.clone()
    }
}

/// One (approach, variant) cell for one seed.
pub fn run_single(
    case: &GridCase,
    approach: Approach,
    variant: Variant,
    cfg: &ExperimentConfig,
    seed: u64,
    cache: &mut MetaCache,
) -> Result<Metrics> {
    let tag = variant.name();
    let (truth, train_tag, test_tag) = match approach {
        Approach::Cnn => (case.clone(), format!("train/{tag}"), format!("test/{tag}")),
        _ => (
            mtd_grid(case, &cfg.mtd, seed)?,
            format!("train-mtd/{tag}"),
            format!("test-mtd/{tag}"),
        ),
    };
    let train_set = data(case, &truth, cfg, variant, cfg.n_train, derive_seed(seed, &train_tag))?;
    let test_set = data(case, &truth, cfg, variant, cfg.n_test, derive_seed(seed, &test_tag))?;
    let (model, threshold) = match approach {
        Approach::Cnn | Approach::CnnMtd => {
            let mut model = CnnModel::new(arch_for(case), derive_seed(seed, "init"))?;
            train(&mut model, &train_set, &seeded(&cfg.train, seed))?;
            (model, cfg.train.threshold)
        }
        Approach::CnnMamlMtd => {
            if !cache.contains_key(&seed) {
                cache.insert(seed, meta_init(case, cfg, seed)?);
            }
            let (model, _) = fine_tune(&cache[&seed], &train_set, &seeded(&cfg.fine_tune, seed))?;
            (model, cfg.fine_tune.threshold)
        }
    };
    evaluate_model(&model, &test_set, threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub approach: Approach,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub runs: Vec<Metrics>,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub precision_mean: f64,
    pub precision_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CellReport {
    pub fn new(approach: Approach, variant: Variant, seeds: Vec<u64>, runs: Vec<Metrics>) -> Self {
        let (recall_mean, recall_std) = mean_std(&runs.iter().map(|m| m.recall).collect::<Vec<_>>());
        let (precision_mean, precision_std) =
            mean_std(&runs.iter().map(|m| m.precision).collect::<Vec<_>>());
        Self {
            approach,
            variant,
            seeds,
            runs,
            recall_mean,
            recall_std,
            precision_mean,
            precision_std,
        }
    }
}

pub fn run_experiment_with(
    case: &GridCase,
    approach: Approach,
    variant: Variant,
    cfg: &ExperimentConfig,
    cache: &mut MetaCache,
) -> Result<CellReport> {
    cfg.validate()?;
    let runs = cfg
        .seeds
        .iter()
        .map(|&s| run_single(case, approach, variant, cfg, s, cache))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellReport::new(approach, variant, cfg.seeds.clone(), runs))
}

pub fn run_experiment(
    case: &GridCase,
    approach: Approach,
    variant: Variant,
    cfg: &ExperimentConfig,
) -> Result<CellReport> {
    run_experiment_with(case, approach, variant, cfg, &mut MetaCache::new())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub grid_fingerprint: String,
    /// Ordered by (approach, variant).
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    pub fn new(case: &GridCase, config: ExperimentConfig, mut cells: Vec<CellReport>) -> Self {
        cells.sort_by_key(|c| (c.approach, c.variant));
        Self {
            config,
            grid_fingerprint: case.fingerprint(),
            cells,
        }
    }

    pub fn cell(&self, approach: Approach, variant: Variant) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.approach == approach && c.variant == variant)
    }

    /// Approaches as rows, variants as column groups.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<14}", "approach");
        for v in Variant::ALL {
            let _ = write!(out, " | {:>7} {:>8}", format!("{}:R", short(v)), format!("{}:P", short(v)));
        }
        out.push('\n');
        out.push_str(&"-".repeat(out.len() - 1));
        out.push('\n');
        for a in Approach::ALL {
            let _ = write!(out, "{:<14}", a.name());
            for v in Variant::ALL {
                match self.cell(a, v) {
                    Some(c) => {
                        let _ = write!(out, " | {:>7.2} {:>8.2}", c.recall_mean, c.precision_mean);
                    }
                    None => {
                        let _ = write!(out, " | {:>7} {:>8}", "-", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn short(v: Variant) -> &'static str {
    match v {
        Variant::Partial => "P",
        Variant::Extra => "E",
        Variant::Full => "F",
    }
}

/// All nine cells.
pub fn reproduce_table2(case: &GridCase, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut cache = MetaCache::new();
    let mut cells = Vec::new();
    for a in Approach::ALL {
        for v in Variant::ALL {
            cells.push(run_experiment_with(case, a, v, cfg, &mut cache)?);
        }
    }
    Ok(ExperimentReport::new(case, cfg.clone(), cells))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEfficiency {
    pub seeds: Vec<u64>,
    pub topology_fingerprints: Vec<String>,
    pub meta_recall: Vec<f64>,
    pub random_recall: Vec<f64>,
}

impl SampleEfficiency {
    pub fn mean_gain(&self) -> f64 {
        mean_std(&self.meta_recall).0 - mean_std(&self.random_recall).0
    }
}

/// Fine-tunes a meta-learned and a randomly initialized network on the same
/// small budget on a held-out topology (one per seed) attacked by an
/// adversary who still believes the base grid.
pub fn sample_efficiency(
    case: &GridCase,
    cfg: &ExperimentConfig,
    variant: Variant,
    n_samples: usize,
    budget: &TrainConfig,
    cache: &mut MetaCache,
) -> Result<SampleEfficiency> {
    cfg.validate()?;
    let mut out = SampleEfficiency {
        seeds: cfg.seeds.clone(),
        topology_fingerprints: Vec::new(),
        meta_recall: Vec::new(),
        random_recall: Vec::new(),
    };
    for &seed in &cfg.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "held-out"));
        let gen = GenConfig {
            mtd_active: true,
            ..cfg.gen.clone()
        };
        let held = generate_meta_tasks(case, 1, 1, cfg.reactance_range, &gen, &mut rng)?;
        let truth = held[0].manifest.grid.clone();
        out.topology_fingerprints.push(truth.fingerprint());
        let small = data(case, &truth, cfg, variant, n_samples, derive_seed(seed, "few-shot"))?;
        let test = data(case, &truth, cfg, variant, cfg.n_test, derive_seed(seed, "few-shot-test"))?;
        if !cache.contains_key(&seed) {
            cache.insert(seed, meta_init(case, cfg, seed)?);
        }
        let tcfg = seeded(budget, seed);
        let (tuned, _) = fine_tune(&cache[&seed], &small, &tcfg)?;
        out.meta_recall.push(evaluate_model(&tuned, &test, budget.threshold)?.recall);
        let mut scratch = CnnModel::new(arch_for(case), derive_seed(seed, "init"))?;
        train(&mut scratch, &small, &tcfg)?;
        out.random_recall.push(evaluate_model(&scratch, &test, budget.threshold)?.recall);
    }
    Ok(out)
}

//! Labeled dataset generation, meta-learning task families and the CSV +
//! JSON-manifest dataset format.
//!
//! A dataset saved at `dir/name` is two files:
//!
//! * `dir/name.csv` with header `z_1..z_m,y_1..y_L` and one row per sample;
//! * `dir/name.json`, the [`Manifest`]: generator config, the grid the data
//!   was measured on and its fingerprint, SHA-256 of the CSV bytes and the
//!   row count.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{observe, AttackScenario, DistortionConfig, ObservedSample, SampleMeta, Variant};
use crate::case_model::GridCase;
use crate::error::{Error, Result};
use crate::powerflow::{apply_outage, InjectionVector};

pub const DATASET_FORMAT: &str = "ccpa-dataset/1";
const MAX_RESAMPLES: usize = 1000;

/// Relative weights of the attack variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackMix {
    pub partial: f64,
    pub extra: f64,
    pub full: f64,
}

impl AttackMix {
    pub fn only(variant: Variant) -> Self {
        let mut mix = Self {
            partial: 0.0,
            extra: 0.0,
            full: 0.0,
        };
        *mix.weight_mut(variant) = 1.0;
        mix
    }

    fn weight_mut(&mut self, v: Variant) -> &mut f64 {
        match v {
            Variant::Partial => &mut self.partial,
            Variant::Extra => &mut self.extra,
            Variant::Full => &mut self.full,
        }
    }

    fn weights(&self) -> [f64; 3] {
        [self.partial, self.extra, self.full]
    }

    /// The variant if the mix has exactly one positive weight.
    pub fn single(&self) -> Option<Variant> {
        let active: Vec<Variant> = Variant::ALL
            .into_iter()
            .zip(self.weights())
            .filter(|(_, w)| *w > 0.0)
            .map(|(v, _)| v)
            .collect();
        (active.len() == 1).then(|| active[0])
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Variant {
        if let Some(v) = self.single() {
            return v;
        }
        let w = self.weights();
        let mut u = rng.random_range(0.0..w.iter().sum::<f64>());
        for (v, w) in Variant::ALL.into_iter().zip(w) {
            if u < w {
                return v;
            }
            u -= w;
        }
        Variant::Full
    }
}

impl Default for AttackMix {
    fn default() -> Self {
        Self::only(Variant::Partial)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_samples: usize,
    pub attack_mix: AttackMix,
    /// Outage count is uniform in `1..=max_outage`.
    pub max_outage: usize,
    /// Per-bus load multipliers are uniform in this range.
    pub load_range: (f64, f64),
    pub noise: bool,
    /// Uniform measurement noise standard deviation (p.u.).
    pub sigma: f64,
    pub mtd_active: bool,
    pub master_seed: u64,
    pub distortion: DistortionConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            attack_mix: AttackMix::default(),
            max_outage: 2,
            load_range: (0.8, 1.2),
            noise: true,
            sigma: 0.01,
            mtd_active: false,
            master_seed: 0,
            distortion: DistortionConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.attack_mix.weights();
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig(
                "attack mix weights must be non-negative with a positive sum".into(),
            ));
        }
        if self.max_outage == 0 {
            return Err(Error::InvalidConfig("max_outage must be at least 1".into()));
        }
        let (lo, hi) = self.load_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::InvalidConfig(format!("invalid load range {:?}", self.load_range)));
        }
        if self.noise && !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid noise sigma {}", self.sigma)));
        }
        self.distortion.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config: GenConfig,
    /// The grid in operation when the data was measured.
    pub grid: GridCase,
    pub grid_fingerprint: String,
    pub attacker_fingerprint: String,
    pub topology_id: Option<u64>,
    pub creation_seed: u64,
    /// Branches excluded from outage sampling because they are bridges.
    pub bridges: Vec<usize>,
    pub n_rows: usize,
    pub n_measurements: usize,
    pub n_lines: usize,
    /// Per-row variants, recorded only for mixed-variant datasets.
    pub row_variants: Option<Vec<Variant>>,
    /// SHA-256 of the CSV file, set when saved.
    pub data_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ObservedSample>,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-sample generator: stream `index` of a ChaCha8 keyed by the master seed.
pub fn sample_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn draw_outage<R: Rng + ?Sized>(
    grid: &GridCase,
    candidates: &[usize],
    max_outage: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::ExhaustedResampling(0));
    }
    let k_max = max_outage.min(candidates.len());
    for _ in 0..MAX_RESAMPLES {
        let k = rng.random_range(1..=k_max);
        let mut lines: Vec<usize> = sample(rng, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        lines.sort_unstable();
        if grid.is_connected_without(&lines) {
            return Ok(lines);
        }
    }
    Err(Error::ExhaustedResampling(MAX_RESAMPLES))
}

/// Generates `cfg.n_samples` observations of CCPAs on `true_grid` built by an
/// attacker who knows `attacker_view`.
pub fn generate_dataset(
    attacker_view: &GridCase,
    true_grid: &GridCase,
    cfg: &GenConfig,
) -> Result<Dataset> {
    generate_with_topology(attacker_view, true_grid, cfg, None)
}

fn generate_with_topology(
    attacker_view: &GridCase,
    true_grid: &GridCase,
    cfg: &GenConfig,
    topology_id: Option<u64>,
) -> Result<Dataset> {
    cfg.validate()?;
    let same = attacker_view.reactances() == true_grid.reactances();
    if !cfg.mtd_active && !same {
        return Err(Error::InvalidConfig(
            "attacker view differs from the true grid but mtd_active is off".into(),
        ));
    }
    if attacker_view.n_buses() != true_grid.n_buses()
        || attacker_view.n_branches() != true_grid.n_branches()
    {
        return Err(Error::ShapeMismatch("attacker view and true grid differ in size".into()));
    }
    let bridges = true_grid.bridges();
    let candidates: Vec<usize> = true_grid
        .branches
        .iter()
        .filter(|b| b.in_service && !bridges.contains(&b.index))
        .map(|b| b.index)
        .collect();
    let sigma = vec![cfg.sigma; true_grid.n_measurements()];
    let noise = cfg.noise.then_some(sigma.as_slice());

    let mut samples = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let mut rng = sample_rng(cfg.master_seed, i as u64);
        let scale: Vec<f64> = (0..true_grid.n_buses())
            .map(|_| rng.random_range(cfg.load_range.0..=cfg.load_range.1))
            .collect();
        let loads = InjectionVector::scaled(true_grid, &scale);
        let variant = cfg.attack_mix.sample(&mut rng);
        let outage = draw_outage(true_grid, &candidates, cfg.max_outage, &mut rng)?;
        let scenario = AttackScenario::sampled(
            attacker_view.clone(),
            outage,
            variant,
            &cfg.distortion,
            &mut rng,
        )?;
        let mut obs = observe(true_grid, &scenario, &loads, noise, &mut rng)?;
        obs.meta = SampleMeta {
            variant,
            mtd_active: cfg.mtd_active,
            seed: i as u64,
        };
        samples.push(obs);
    }

    let row_variants = cfg
        .attack_mix
        .single()
        .is_none()
        .then(|| samples.iter().map(|s| s.meta.variant).collect());
    Ok(Dataset {
        manifest: Manifest {
            format: DATASET_FORMAT.to_string(),
            config: cfg.clone(),
            grid: true_grid.clone(),
            grid_fingerprint: true_grid.fingerprint(),
            attacker_fingerprint: attacker_view.fingerprint(),
            topology_id,
            creation_seed: cfg.master_seed,
            bridges,
            n_rows: samples.len(),
            n_measurements: true_grid.n_measurements(),
            n_lines: true_grid.n_branches(),
            row_variants,
            data_sha256: None,
        },
        samples,
    })
}

/// One dataset per random topology. Each topology scales every reactance by an
/// independent factor uniform in `reactance_range`. With `cfg.mtd_active`
/// the attacker keeps the base grid as its (stale) view; otherwise it knows
/// the task topology.
pub fn generate_meta_tasks<R: Rng + ?Sized>(
    grid: &GridCase,
    n_topologies: usize,
    n_per_topology: usize,
    reactance_range: (f64, f64),
    cfg: &GenConfig,
    rng: &mut R,
) -> Result<Vec<Dataset>> {
    let (lo, hi) = reactance_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "invalid reactance range {reactance_range:?}"
        )));
    }
    let mut tasks = Vec::with_capacity(n_topologies);
    for t in 0..n_topologies {
        let x: Vec<f64> = grid
            .reactances()
            .iter()
            .map(|x| x * rng.random_range(lo..=hi))
            .collect();
        let topology = grid.with_reactances(&x)?;
        let task_cfg = GenConfig {
            n_samples: n_per_topology,
            master_seed: rng.next_u64(),
            ..cfg.clone()
        };
        let view = if cfg.mtd_active { grid } else { &topology };
        tasks.push(generate_with_topology(view, &topology, &task_cfg, Some(t as u64))?);
    }
    Ok(tasks)
}

fn companion_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("csv"), path.with_extension("json"))
}

fn csv_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let m = ds.manifest.n_measurements;
    let l = ds.manifest.n_lines;
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (1..=m)
        .map(|i| format!("z_{i}"))
        .chain((1..=l).map(|i| format!("y_{i}")))
        .collect();
    w.write_record(&header)?;
    for s in &ds.samples {
        let row: Vec<String> = s
            .z_obs
            .iter()
            .map(|v| v.to_string())
            .chain(s.y.iter().map(|v| v.to_string()))
            .collect();
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::SchemaMismatch(format!("csv buffer: {e}")))
}

/// Writes `path.csv` and `path.json`; returns the manifest as written.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<Manifest> {
    let (csv_path, json_path) = companion_paths(path);
    let bytes = csv_bytes(ds)?;
    let mut manifest = ds.manifest.clone();
    manifest.n_rows = ds.samples.len();
    manifest.data_sha256 = Some(hex::encode(Sha256::digest(&bytes)));
    std::fs::write(&csv_path, &bytes).map_err(|e| Error::io(&csv_path, e))?;
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(manifest)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (csv_path, json_path) = companion_paths(path);
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::SchemaMismatch(e.to_string()))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::SchemaMismatch(format!(
            "unsupported dataset format {:?}",
            manifest.format
        )));
    }
    if manifest.grid.fingerprint() != manifest.grid_fingerprint {
        return Err(Error::HashMismatch(
            "manifest grid does not match its fingerprint".into(),
        ));
    }
    let bytes = std::fs::read(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    if manifest.data_sha256.as_deref() != Some(digest.as_str()) {
        return Err(Error::HashMismatch(format!(
            "{} does not match the manifest checksum",
            csv_path.display()
        )));
    }

    let (m, l) = (manifest.n_measurements, manifest.n_lines);
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let header = reader.headers()?.clone();
    let expect: Vec<String> = (1..=m)
        .map(|i| format!("z_{i}"))
        .chain((1..=l).map(|i| format!("y_{i}")))
        .collect();
    if header.iter().ne(expect.iter().map(String::as_str)) {
        return Err(Error::SchemaMismatch("unexpected CSV header".into()));
    }
    let single = manifest.config.attack_mix.single();
    let mut samples = Vec::with_capacity(manifest.n_rows);
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::SchemaMismatch(format!("row {}: {what}", i + 1));
        let z_obs = record
            .iter()
            .take(m)
            .map(|v| v.parse::<f64>().map_err(|_| bad("bad measurement")))
            .collect::<Result<Vec<_>>>()?;
        let y = record
            .iter()
            .skip(m)
            .map(|v| match v {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                _ => Err(bad("label must be 0 or 1")),
            })
            .collect::<Result<Vec<_>>>()?;
        let variant = match (&manifest.row_variants, single) {
            (Some(rows), _) => *rows.get(i).ok_or_else(|| bad("missing row variant"))?,
            (None, Some(v)) => v,
            (None, None) => return Err(bad("mixed dataset without row variants")),
        };
        samples.push(ObservedSample {
            z_obs,
            y,
            meta: SampleMeta {
                variant,
                mtd_active: manifest.config.mtd_active,
                seed: i as u64,
            },
        });
    }
    if samples.len() != manifest.n_rows {
        return Err(Error::SchemaMismatch(format!(
            "manifest declares {} rows, CSV has {}",
            manifest.n_rows,
            samples.len()
        )));
    }
    Ok(Dataset { samples, manifest })
}

/// Every outage set actually drawn must leave the true grid connected.
pub fn outage_sets(ds: &Dataset) -> Vec<Vec<usize>> {
    ds.samples
        .iter()
        .map(|s| {
            s.y.iter()
                .enumerate()
                .filter(|(_, &v)| v == 1)
                .map(|(i, _)| i + 1)
                .collect()
        })
        .collect()
}

/// Checks the dataset's outage sets against its grid.
pub fn verify_outages(ds: &Dataset) -> Result<()> {
    for lines in outage_sets(ds) {
        apply_outage(&ds.manifest.grid, &lines)?;
    }
    Ok(())
}

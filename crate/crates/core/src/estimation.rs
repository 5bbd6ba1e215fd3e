//! Weighted least-squares state estimation and residual-based bad data
//! detection.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::case_model::{GridCase, MeasurementModel};
use crate::error::{Error, Result};
use crate::powerflow::{add_noise, solve_dc, InjectionVector};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub theta_hat: DVector<f64>,
    pub residual: DVector<f64>,
    pub residual_norm: f64,
}

/// Precomputed estimator `theta_hat = (Hᵀ W H)⁻¹ Hᵀ W z` for repeated use on
/// one measurement model.
#[derive(Debug, Clone)]
pub struct WlsEstimator {
    h: DMatrix<f64>,
    /// `(Hᵀ W H)⁻¹ Hᵀ W`, n x m.
    gain: DMatrix<f64>,
}

impl WlsEstimator {
    pub fn new(model: &MeasurementModel) -> Result<Self> {
        let h = &model.h;
        let mut hw = h.transpose();
        for (col, w) in model.weights.iter().enumerate() {
            hw.column_mut(col).scale_mut(*w);
        }
        let normal = &hw * h;
        let chol = normal.cholesky().ok_or(Error::RankDeficient)?;
        // a Cholesky factor that succeeds on a near-singular gain matrix is
        // still useless; check the conditioning through its diagonal
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
        if lo <= hi * 1e-7 {
            return Err(Error::RankDeficient);
        }
        let gain = chol.solve(&hw);
        Ok(Self {
            h: h.clone(),
            gain,
        })
    }

    pub fn estimate(&self, z: &DVector<f64>) -> Result<EstimationResult> {
        if z.len() != self.h.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "measurement vector has length {}, model expects {}",
                z.len(),
                self.h.nrows()
            )));
        }
        let theta_hat = &self.gain * z;
        let residual = z - &self.h * &theta_hat;
        let residual_norm = residual.norm();
        Ok(EstimationResult {
            theta_hat,
            residual,
            residual_norm,
        })
    }
}

pub fn estimate(model: &MeasurementModel, z: &DVector<f64>) -> Result<EstimationResult> {
    WlsEstimator::new(model)?.estimate(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Empirical quantile of simulated clean residual norms.
    Empirical,
    /// Chi-square quantile; valid for uniform noise only.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BddConfig {
    pub tau: f64,
    pub alpha: f64,
    pub mode: CalibrationMode,
}

impl BddConfig {
    pub fn new(tau: f64, alpha: f64, mode: CalibrationMode) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
        }
        check_alpha(alpha)?;
        Ok(Self { tau, alpha, mode })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

pub const MIN_CALIBRATION_SAMPLES: usize = 1000;

/// Sets `tau` to the empirical `1 - alpha` quantile of residual norms of
/// clean noisy measurements, with bus loads scaled uniformly in `load_range`.
pub fn calibrate_threshold<R: Rng + ?Sized>(
    grid: &GridCase,
    model: &MeasurementModel,
    alpha: f64,
    n_samples: usize,
    load_range: (f64, f64),
    rng: &mut R,
) -> Result<BddConfig> {
    check_alpha(alpha)?;
    if n_samples < MIN_CALIBRATION_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {n_samples}"
        )));
    }
    let est = WlsEstimator::new(model)?;
    let mut norms = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let scale: Vec<f64> = (0..grid.n_buses())
            .map(|_| rng.random_range(load_range.0..=load_range.1))
            .collect();
        let state = solve_dc(grid, &InjectionVector::scaled(grid, &scale))?;
        let mut z = &model.h * &state.theta;
        add_noise(&mut z, model.sigma.as_slice(), rng);
        norms.push(est.estimate(&z)?.residual_norm);
    }
    let tau = empirical_quantile(&mut norms, 1.0 - alpha);
    Ok(BddConfig {
        tau,
        alpha,
        mode: CalibrationMode::Empirical,
    })
}

/// `tau = sigma * sqrt(chi2_{m-n}^{-1}(1 - alpha))` for uniform noise `sigma`.
pub fn analytic_threshold(model: &MeasurementModel, alpha: f64) -> Result<BddConfig> {
    check_alpha(alpha)?;
    let s0 = model.sigma[0];
    if model.sigma.iter().any(|s| (s - s0).abs() > 1e-15 * s0) {
        return Err(Error::InvalidConfig(
            "analytic threshold requires uniform noise".into(),
        ));
    }
    let dof = (model.n_measurements() - model.n_states()) as f64;
    let q = chi_square_quantile(1.0 - alpha, dof);
    Ok(BddConfig {
        tau: s0 * q.sqrt(),
        alpha,
        mode: CalibrationMode::Analytic,
    })
}

fn chi_square_quantile(p: f64, dof: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(dof).expect("positive dof").inverse_cdf(p)
}

/// Value at sorted position `ceil(q n) - 1`.
fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    values[idx]
}

pub fn detect(result: &EstimationResult, cfg: &BddConfig) -> bool {
    result.residual_norm >= cfg.tau
}

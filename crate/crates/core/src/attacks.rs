//! Coordinated cyber-physical attack construction.
//!
//! The attacker holds a snapshot of the grid (`attacker_view`) and computes
//! every attack term from it with noiseless quantities. The defender observes
//! the true post-outage measurements of the grid actually in operation, which
//! differs from the attacker's snapshot once reactances have been perturbed.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::case_model::{measurement_matrix, GridCase};
use crate::error::{Error, Result};
use crate::powerflow::{add_noise, apply_outage, solve_dc, InjectionVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Hides only the `ΔH θ_p` part of the outage signature.
    Partial,
    /// Partial masking plus a stealthy state distortion `H c`.
    Extra,
    /// Restores the pre-outage measurements entirely.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Partial, Variant::Extra, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Partial => "partial",
            Variant::Extra => "extra",
            Variant::Full => "full",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "partial" | "p" => Ok(Variant::Partial),
            "extra" | "e" => Ok(Variant::Extra),
            "full" | "f" => Ok(Variant::Full),
            other => Err(Error::InvalidConfig(format!("unknown attack variant {other:?}"))),
        }
    }
}

/// Sampling law for the extra-CCPA state distortion `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionConfig {
    /// Support size is uniform in `1..=max_support` buses.
    pub max_support: usize,
    /// Entries on the support are uniform in `[-magnitude, magnitude]` rad.
    pub magnitude: f64,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        Self {
            max_support: 4,
            magnitude: 0.1,
        }
    }
}

impl DistortionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_support == 0 || !(self.magnitude.is_finite() && self.magnitude >= 0.0) {
            return Err(Error::InvalidConfig(format!("invalid distortion config {self:?}")));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n_states: usize, rng: &mut R) -> DVector<f64> {
        let k = rng.random_range(1..=self.max_support.min(n_states));
        let mut c = DVector::zeros(n_states);
        for i in sample(rng, n_states, k) {
            c[i] = if self.magnitude > 0.0 {
                rng.random_range(-self.magnitude..=self.magnitude)
            } else {
                0.0
            };
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    /// Physically disconnected branches, 1-based, sorted.
    pub outage_lines: Vec<usize>,
    pub variant: Variant,
    /// State distortion, present iff `variant == Extra`.
    pub c: Option<Vec<f64>>,
    pub attacker_view: GridCase,
}

impl AttackScenario {
    pub fn new(
        attacker_view: GridCase,
        outage_lines: Vec<usize>,
        variant: Variant,
        c: Option<DVector<f64>>,
    ) -> Result<Self> {
        let mut outage_lines = outage_lines;
        outage_lines.sort_unstable();
        let scenario = Self {
            outage_lines,
            variant,
            c: c.map(|c| c.as_slice().to_vec()),
            attacker_view,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Scenario with `c` drawn from `dist` when the variant needs one.
    pub fn sampled<R: Rng + ?Sized>(
        attacker_view: GridCase,
        outage_lines: Vec<usize>,
        variant: Variant,
        dist: &DistortionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let c = (variant == Variant::Extra).then(|| dist.sample(attacker_view.n_states(), rng));
        Self::new(attacker_view, outage_lines, variant, c)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.variant, &self.c) {
            (Variant::Extra, Some(c)) if c.len() == self.attacker_view.n_states() => {}
            (Variant::Extra, Some(c)) => {
                return Err(Error::ShapeMismatch(format!(
                    "distortion has length {}, expected {}",
                    c.len(),
                    self.attacker_view.n_states()
                )))
            }
            (Variant::Extra, None) => {
                return Err(Error::InvalidConfig("extra CCPA requires a distortion vector".into()))
            }
            (_, Some(_)) => {
                return Err(Error::InvalidConfig(format!(
                    "{} CCPA takes no distortion vector",
                    self.variant
                )))
            }
            (_, None) => {}
        }
        apply_outage(&self.attacker_view, &self.outage_lines).map(|_| ())
    }

    pub fn distortion(&self) -> Option<DVector<f64>> {
        self.c.as_ref().map(|c| DVector::from_column_slice(c))
    }

    /// Outage label: `y_l = 1` iff branch `l` is disconnected.
    pub fn label(&self, n_branches: usize) -> Vec<u8> {
        let mut y = vec![0u8; n_branches];
        for &l in &self.outage_lines {
            y[l - 1] = 1;
        }
        y
    }
}

/// Noiseless pre- and post-outage quantities of one grid under fixed loads.
#[derive(Debug, Clone)]
pub struct OutageResponse {
    pub theta: DVector<f64>,
    pub theta_p: DVector<f64>,
    pub h: nalgebra::DMatrix<f64>,
    pub h_p: nalgebra::DMatrix<f64>,
}

impl OutageResponse {
    pub fn compute(grid: &GridCase, outage: &[usize], loads: &InjectionVector) -> Result<Self> {
        let outaged = apply_outage(grid, outage)?;
        Ok(Self {
            theta: solve_dc(grid, loads)?.theta,
            theta_p: solve_dc(&outaged, loads)?.theta,
            h: measurement_matrix(grid),
            h_p: measurement_matrix(&outaged),
        })
    }

    /// Pre-outage measurements `z = H θ`.
    pub fn z(&self) -> DVector<f64> {
        &self.h * &self.theta
    }

    /// Post-outage measurements `z_p = H_p θ_p`.
    pub fn z_p(&self) -> DVector<f64> {
        &self.h_p * &self.theta_p
    }

    /// `ΔH θ_p = (H_p - H) θ_p`.
    pub fn delta_h_theta_p(&self) -> DVector<f64> {
        (&self.h_p - &self.h) * &self.theta_p
    }
}

/// Post-outage measurements `z_p` and angles `θ_p` of the grid in operation.
pub fn post_physical_measurements(
    defender_grid: &GridCase,
    outage: &[usize],
    loads: &InjectionVector,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let outaged = apply_outage(defender_grid, outage)?;
    let theta_p = solve_dc(&outaged, loads)?.theta;
    Ok((measurement_matrix(&outaged) * &theta_p, theta_p))
}

/// `a_c = -ΔH θ_p`, computed on the attacker's view.
pub fn build_partial(scenario: &AttackScenario, loads: &InjectionVector) -> Result<DVector<f64>> {
    let view = OutageResponse::compute(&scenario.attacker_view, &scenario.outage_lines, loads)?;
    Ok(-view.delta_h_theta_p())
}

/// `a = -ΔH θ_p + H c`, computed on the attacker's view.
pub fn build_extra(scenario: &AttackScenario, loads: &InjectionVector) -> Result<DVector<f64>> {
    let c = scenario
        .distortion()
        .ok_or_else(|| Error::InvalidConfig("extra CCPA requires a distortion vector".into()))?;
    let view = OutageResponse::compute(&scenario.attacker_view, &scenario.outage_lines, loads)?;
    Ok(-view.delta_h_theta_p() + &view.h * c)
}

/// `a_full = z - z_p`, both recomputed by the attacker on its view.
pub fn build_full(scenario: &AttackScenario, loads: &InjectionVector) -> Result<DVector<f64>> {
    let view = OutageResponse::compute(&scenario.attacker_view, &scenario.outage_lines, loads)?;
    Ok(view.z() - view.z_p())
}

pub fn build_attack(scenario: &AttackScenario, loads: &InjectionVector) -> Result<DVector<f64>> {
    match scenario.variant {
        Variant::Partial => build_partial(scenario, loads),
        Variant::Extra => build_extra(scenario, loads),
        Variant::Full => build_full(scenario, loads),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub variant: Variant,
    pub mtd_active: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSample {
    pub z_obs: Vec<f64>,
    pub y: Vec<u8>,
    pub meta: SampleMeta,
}

/// Defender-side observation: true post-outage measurements of `true_grid`,
/// plus the attack vector built from the stale view, plus optional sensor
/// noise with per-channel standard deviation `noise`.
///
/// `meta.seed` is left at zero for the caller to fill in.
pub fn observe<R: Rng + ?Sized>(
    true_grid: &GridCase,
    scenario: &AttackScenario,
    loads: &InjectionVector,
    noise: Option<&[f64]>,
    rng: &mut R,
) -> Result<ObservedSample> {
    if true_grid.n_branches() != scenario.attacker_view.n_branches()
        || true_grid.n_buses() != scenario.attacker_view.n_buses()
    {
        return Err(Error::ShapeMismatch(
            "attacker view and true grid differ in size".into(),
        ));
    }
    let (z_p, _) = post_physical_measurements(true_grid, &scenario.outage_lines, loads)?;
    let mut z_obs = z_p + build_attack(scenario, loads)?;
    if let Some(sigma) = noise {
        if sigma.len() != z_obs.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} noise levels, got {}",
                z_obs.len(),
                sigma.len()
            )));
        }
        add_noise(&mut z_obs, sigma, rng);
    }
    Ok(ObservedSample {
        z_obs: z_obs.as_slice().to_vec(),
        y: scenario.label(true_grid.n_branches()),
        meta: SampleMeta {
            variant: scenario.variant,
            mtd_active: true_grid.reactances() != scenario.attacker_view.reactances(),
            seed: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::fixtures::triangle;
    use crate::case_model::{build_measurement_model, ieee14, Sigma};
    use crate::estimation::WlsEstimator;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loads(grid: &GridCase, seed: u64) -> InjectionVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale: Vec<f64> = (0..grid.n_buses()).map(|_| rng.random_range(0.8..1.2)).collect();
        InjectionVector::scaled(grid, &scale)
    }

    fn perturbed(grid: &GridCase, seed: u64) -> GridCase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = grid.reactances().iter().map(|x| x * rng.random_range(0.8..1.2)).collect();
        grid.with_reactances(&x).unwrap()
    }

    #[test]
    fn empty_outage_changes_nothing() {
        let grid = ieee14();
        let inj = loads(&grid, 1);
        let (z_p, theta_p) = post_physical_measurements(&grid, &[], &inj).unwrap();
        let st = solve_dc(&grid, &inj).unwrap();
        assert_eq!(theta_p, st.theta);
        assert!((z_p - measurement_matrix(&grid) * &st.theta).amax() < 1e-15);
        let sc = AttackScenario::new(grid.clone(), vec![], Variant::Partial, None).unwrap();
        assert_eq!(build_partial(&sc, &inj).unwrap().amax(), 0.0);
    }

    #[test]
    fn triangle_outage_gives_radial_flow() {
        // Unit load at bus 2, slack at bus 1. Drop branch 1 (1-2): power
        // flows 1 -> 3 -> 2, so theta3 = -x13, theta2 = -(x13 + x23).
        // Branch 2 is oriented 2 -> 3 and carries the unit flow backwards.
        let grid = triangle([0.1, 0.2, 0.3]);
        let inj = InjectionVector::base(&grid);
        let (z_p, theta_p) = post_physical_measurements(&grid, &[1], &inj).unwrap();
        assert!((theta_p[0] + 0.5).abs() < 1e-12);
        assert!((theta_p[1] + 0.3).abs() < 1e-12);
        let expect_flows = [0.0, -1.0, 1.0];
        for l in 0..3 {
            assert!((z_p[3 + l] - expect_flows[l]).abs() < 1e-12);
        }
        assert!((z_p[0] - 1.0).abs() < 1e-12 && (z_p[1] + 1.0).abs() < 1e-12 && z_p[2].abs() < 1e-12);
    }

    #[test]
    fn outage_decomposition_identity() {
        // z_p = z + H Δθ + ΔH θ_p for every admissible single outage
        let grid = ieee14();
        let inj = loads(&grid, 2);
        for l in 1..=20 {
            if l == 14 {
                continue;
            }
            let r = OutageResponse::compute(&grid, &[l], &inj).unwrap();
            let rhs = r.z() + &r.h * (&r.theta_p - &r.theta) + r.delta_h_theta_p();
            assert!((r.z_p() - rhs).amax() < 1e-9, "line {l}");
        }
    }

    #[test]
    fn delta_h_touches_only_outaged_rows() {
        let grid = ieee14();
        let r = OutageResponse::compute(&grid, &[3, 7], &InjectionVector::base(&grid)).unwrap();
        let dh = &r.h_p - &r.h;
        let (f3, t3) = grid.branch_endpoints()[2];
        let (f7, t7) = grid.branch_endpoints()[6];
        let buses = [f3, t3, f7, t7];
        for row in 0..54 {
            let touched = match row {
                r if r < 14 => buses.contains(&r),
                r if r < 34 => r - 14 == 2 || r - 14 == 6,
                r => r - 34 == 2 || r - 34 == 6,
            };
            if !touched {
                assert_eq!(dh.row(row).amax(), 0.0, "row {row}");
            } else {
                assert!(dh.row(row).amax() > 0.0, "row {row}");
            }
        }
    }

    #[test]
    fn partial_attack_is_sparse_and_stealthy() {
        let grid = ieee14();
        let inj = loads(&grid, 3);
        let sc = AttackScenario::new(grid.clone(), vec![5, 12], Variant::Partial, None).unwrap();
        let a = build_partial(&sc, &inj).unwrap();
        let nonzero = a.iter().filter(|v| **v != 0.0).count();
        assert!(nonzero > 0 && nonzero <= 4 + 4);
        let obs = observe(&grid, &sc, &inj, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = OutageResponse::compute(&grid, &[5, 12], &inj).unwrap();
        let expect = r.z() + &r.h * (&r.theta_p - &r.theta);
        assert!((DVector::from_vec(obs.z_obs.clone()) - expect).amax() < 1e-9);
        let model = build_measurement_model(&grid, &Sigma::default()).unwrap();
        let est = WlsEstimator::new(&model).unwrap();
        assert!(est.estimate(&DVector::from_vec(obs.z_obs)).unwrap().residual_norm < 1e-9);
        assert_eq!(obs.y.iter().map(|&v| v as usize).sum::<usize>(), 2);
        assert_eq!((obs.y[4], obs.y[11]), (1, 1));
        assert!(!obs.meta.mtd_active);
    }

    #[test]
    fn extra_attack_reduces_to_partial_and_shifts_estimate() {
        let grid = ieee14();
        let inj = loads(&grid, 4);
        let zero = AttackScenario::new(grid.clone(), vec![6], Variant::Extra, Some(DVector::zeros(13))).unwrap();
        let partial = AttackScenario::new(grid.clone(), vec![6], Variant::Partial, None).unwrap();
        assert_eq!(build_extra(&zero, &inj).unwrap(), build_partial(&partial, &inj).unwrap());

        let sc = AttackScenario::sampled(grid.clone(), vec![6], Variant::Extra, &DistortionConfig::default(), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let c = sc.distortion().unwrap();
        let support = c.iter().filter(|v| **v != 0.0).count();
        assert!((1..=4).contains(&support));
        assert!(c.amax() <= 0.1);

        let obs = observe(&grid, &sc, &inj, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let model = build_measurement_model(&grid, &Sigma::default()).unwrap();
        let est = WlsEstimator::new(&model).unwrap().estimate(&DVector::from_vec(obs.z_obs)).unwrap();
        assert!(est.residual_norm < 1e-9);
        let r = OutageResponse::compute(&grid, &[6], &inj).unwrap();
        assert!((est.theta_hat - (&r.theta_p + &c)).amax() < 1e-9);
    }

    #[test]
    fn full_attack_collapses_without_mtd() {
        let grid = ieee14();
        let inj = loads(&grid, 5);
        let sc = AttackScenario::new(grid.clone(), vec![1, 9], Variant::Full, None).unwrap();
        let obs = observe(&grid, &sc, &inj, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let z = measurement_matrix(&grid) * solve_dc(&grid, &inj).unwrap().theta;
        assert!((DVector::from_vec(obs.z_obs) - z).amax() < 1e-12);
    }

    #[test]
    fn full_attack_under_mtd_matches_substitution() {
        let base = ieee14();
        let moved = perturbed(&base, 6);
        let inj = loads(&base, 6);
        let sc = AttackScenario::new(base.clone(), vec![4], Variant::Full, None).unwrap();
        let obs = observe(&moved, &sc, &inj, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(obs.meta.mtd_active);
        let stale = OutageResponse::compute(&base, &[4], &inj).unwrap();
        let real = OutageResponse::compute(&moved, &[4], &inj).unwrap();
        let expect = real.z_p() + stale.z() - stale.z_p();
        assert!((DVector::from_vec(obs.z_obs) - expect).amax() < 1e-12);
    }

    #[test]
    fn extra_attack_under_mtd_expands_term_by_term() {
        let base = ieee14();
        let moved = perturbed(&base, 7);
        let inj = loads(&base, 7);
        let sc = AttackScenario::sampled(base.clone(), vec![2, 16], Variant::Extra, &DistortionConfig::default(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let obs = observe(&moved, &sc, &inj, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let stale = OutageResponse::compute(&base, &[2, 16], &inj).unwrap();
        let real = OutageResponse::compute(&moved, &[2, 16], &inj).unwrap();
        let c = sc.distortion().unwrap();
        let expect = real.z()
            + (&real.h * (&real.theta_p - &real.theta) + &stale.h * c)
            + (real.delta_h_theta_p() - stale.delta_h_theta_p());
        assert!((DVector::from_vec(obs.z_obs) - expect).amax() < 1e-9);
    }

    #[test]
    fn scenario_field_rules() {
        let grid = ieee14();
        assert!(AttackScenario::new(grid.clone(), vec![1], Variant::Extra, None).is_err());
        assert!(AttackScenario::new(grid.clone(), vec![1], Variant::Full, Some(DVector::zeros(13))).is_err());
        assert!(AttackScenario::new(grid.clone(), vec![1], Variant::Extra, Some(DVector::zeros(3))).is_err());
        assert!(matches!(
            AttackScenario::new(grid, vec![14], Variant::Partial, None),
            Err(Error::IslandingOutage(_))
        ));
    }

    #[test]
    fn noise_is_added_once_on_the_defender_side() {
        let grid = ieee14();
        let inj = loads(&grid, 9);
        let sc = AttackScenario::new(grid.clone(), vec![3], Variant::Full, None).unwrap();
        let clean = observe(&grid, &sc, &inj, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let noisy = observe(&grid, &sc, &inj, Some(&[0.01; 54]), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let again = observe(&grid, &sc, &inj, Some(&[0.01; 54]), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(noisy, again);
        let diff: f64 = clean.z_obs.iter().zip(&noisy.z_obs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 0.0 && diff < 0.1);
    }

    #[test]
    fn scenario_json_roundtrip() {
        let sc = AttackScenario::sampled(ieee14(), vec![3, 1], Variant::Extra, &DistortionConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(sc.outage_lines, vec![1, 3]);
        let text = serde_json::to_string(&sc).unwrap();
        let back: AttackScenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sc);
    }
}

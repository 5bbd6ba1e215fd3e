//! DC power flow, measurement synthesis and physical line outages.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::case_model::{build_incidence, GridCase, MeasurementModel};
use crate::error::{Error, Result};

const BALANCE_TOL: f64 = 1e-9;
const SOLVE_TOL: f64 = 1e-10;

/// Net bus injections `P_i = G_i - L_i` in p.u., ordered like `GridCase::buses`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector(pub DVector<f64>);

impl InjectionVector {
    /// Injections at base loads with the slack absorbing any imbalance.
    pub fn base(grid: &GridCase) -> Self {
        Self::scaled(grid, &vec![1.0; grid.n_buses()])
    }

    /// Injections with each bus load multiplied by `scale[i]`; scheduled
    /// generation stays fixed except at the slack, which balances the system.
    pub fn scaled(grid: &GridCase, scale: &[f64]) -> Self {
        assert_eq!(scale.len(), grid.n_buses(), "one load scale per bus");
        let gen = grid.generation();
        let mut p: DVector<f64> = DVector::from_iterator(
            grid.n_buses(),
            grid.buses
                .iter()
                .zip(&gen)
                .zip(scale)
                .map(|((b, g), s)| g - b.load_p * s),
        );
        let slack = grid.slack_position();
        let rest: f64 = p.iter().enumerate().filter(|(i, _)| *i != slack).map(|(_, v)| v).sum();
        p[slack] = -rest;
        InjectionVector(p)
    }

    pub fn imbalance(&self) -> f64 {
        self.0.sum()
    }
}

/// Bus voltage angles (radians) with the slack angle removed.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub theta: DVector<f64>,
    pub slack: usize,
}

impl StateVector {
    /// All `N` angles, slack included at zero.
    pub fn full_angles(&self) -> DVector<f64> {
        let n = self.theta.len() + 1;
        let mut full = DVector::zeros(n);
        let mut k = 0;
        for i in 0..n {
            if i != self.slack {
                full[i] = self.theta[k];
                k += 1;
            }
        }
        full
    }
}

/// Reduced nodal susceptance matrix `A D Aᵀ`.
pub fn reduced_susceptance(grid: &GridCase) -> DMatrix<f64> {
    let inc = build_incidence(grid);
    let mut scaled = inc.reduced.clone();
    for (col, br) in grid.branches.iter().enumerate() {
        let b = if br.in_service { 1.0 / br.reactance } else { 0.0 };
        scaled.column_mut(col).scale_mut(b);
    }
    scaled * inc.reduced.transpose()
}

/// Solves `A D Aᵀ theta = P_reduced`.
pub fn solve_dc(grid: &GridCase, inj: &InjectionVector) -> Result<StateVector> {
    if !grid.is_connected() {
        return Err(Error::SingularSystem);
    }
    if inj.0.len() != grid.n_buses() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} injections, got {}",
            grid.n_buses(),
            inj.0.len()
        )));
    }
    let scale = inj.0.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let imbalance = inj.imbalance();
    if imbalance.abs() > BALANCE_TOL * scale {
        return Err(Error::UnbalancedInjections(imbalance));
    }
    let slack = grid.slack_position();
    let b = reduced_susceptance(grid);
    let rhs = inj.0.clone().remove_row(slack);
    let chol = b.clone().cholesky().ok_or(Error::SingularSystem)?;
    let theta = chol.solve(&rhs);
    let residual = (&b * &theta - &rhs).norm();
    if residual > SOLVE_TOL * rhs.norm().max(1.0) || !theta.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!(
            "DC solve residual {residual:.3e} exceeds tolerance"
        )));
    }
    Ok(StateVector { theta, slack })
}

/// `z = H theta`, plus independent Gaussian noise with the model's per-channel
/// standard deviations when `noisy`.
pub fn measure<R: Rng + ?Sized>(
    model: &MeasurementModel,
    state: &StateVector,
    rng: &mut R,
    noisy: bool,
) -> DVector<f64> {
    let mut z = &model.h * &state.theta;
    if noisy {
        add_noise(&mut z, model.sigma.as_slice(), rng);
    }
    z
}

pub fn add_noise<R: Rng + ?Sized>(z: &mut DVector<f64>, sigma: &[f64], rng: &mut R) {
    for (v, s) in z.iter_mut().zip(sigma) {
        let e: f64 = StandardNormal.sample(rng);
        *v += s * e;
    }
}

/// Takes the listed branches (1-based) out of service.
///
/// Every branch must exist and currently be in service; the result must stay
/// connected.
pub fn apply_outage(grid: &GridCase, lines: &[usize]) -> Result<GridCase> {
    let mut out = grid.clone();
    for (k, &idx) in lines.iter().enumerate() {
        if lines[..k].contains(&idx) {
            return Err(Error::InvalidOutage(idx));
        }
        match idx.checked_sub(1).and_then(|i| out.branches.get_mut(i)) {
            Some(br) if br.in_service => br.in_service = false,
            _ => return Err(Error::InvalidOutage(idx)),
        }
    }
    if !out.is_connected() {
        let mut sorted = lines.to_vec();
        sorted.sort_unstable();
        return Err(Error::IslandingOutage(sorted));
    }
    Ok(out)
}

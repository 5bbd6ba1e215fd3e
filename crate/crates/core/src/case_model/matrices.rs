use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::GridCase;
use crate::error::{Error, Result};

/// Branch-bus incidence matrices.
///
/// Column `l` of `full` carries `+1` at the from-bus and `-1` at the to-bus of
/// branch `l + 1`. Out-of-service branches keep their column but it is all
/// zero. `reduced` drops the slack row.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidencePair {
    pub full: DMatrix<f64>,
    pub reduced: DMatrix<f64>,
    /// Bus position (in `GridCase::buses`) of each reduced row.
    pub reduced_rows: Vec<usize>,
    /// 1-based branch index of each column.
    pub columns: Vec<usize>,
}

pub fn build_incidence(grid: &GridCase) -> IncidencePair {
    let n = grid.n_buses();
    let l = grid.n_branches();
    let slack = grid.slack_position();
    let mut full = DMatrix::zeros(n, l);
    for (col, ((f, t), br)) in grid.branch_endpoints().into_iter().zip(&grid.branches).enumerate() {
        if br.in_service {
            full[(f, col)] = 1.0;
            full[(t, col)] = -1.0;
        }
    }
    let reduced_rows: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let reduced = full.clone().remove_row(slack);
    IncidencePair {
        full,
        reduced,
        reduced_rows,
        columns: grid.branches.iter().map(|b| b.index).collect(),
    }
}

/// One measurement channel of `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    /// Net injection at the bus in this position.
    Injection(usize),
    /// Flow from-bus to to-bus on the branch with this 1-based index.
    Flow(usize),
    /// Negated flow on the branch with this 1-based index.
    ReverseFlow(usize),
}

/// Per-channel measurement noise standard deviation (p.u.).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma {
    Uniform(f64),
    PerChannel(Vec<f64>),
}

impl Default for Sigma {
    fn default() -> Self {
        Sigma::Uniform(0.01)
    }
}

impl Sigma {
    pub fn resolve(&self, m: usize) -> Result<Vec<f64>> {
        let values = match self {
            Sigma::Uniform(s) => vec![*s; m],
            Sigma::PerChannel(v) => {
                if v.len() != m {
                    return Err(Error::ShapeMismatch(format!(
                        "expected {m} noise levels, got {}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if let Some(bad) = values.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "noise std must be positive, got {bad}"
            )));
        }
        Ok(values)
    }
}

/// Linear DC measurement model `z = H theta + e`.
///
/// Rows are ordered `[P (all N buses); F (L branches); -F (L branches)]`, so
/// `m = N + 2L`. The injection block is `A_full D A_reducedᵀ`, which is exact
/// because the slack angle is pinned at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub h: DMatrix<f64>,
    /// Diagonal of `W`, i.e. `sigma_i^-2`.
    pub weights: DVector<f64>,
    pub sigma: DVector<f64>,
    /// Diagonal of `D`: `1/x_l` for in-service branches, `0` otherwise.
    pub susceptance: DVector<f64>,
    pub n_buses: usize,
    pub n_branches: usize,
}

impl MeasurementModel {
    pub fn n_measurements(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.h.ncols()
    }

    pub fn channel(&self, row: usize) -> Channel {
        let (n, l) = (self.n_buses, self.n_branches);
        match row {
            r if r < n => Channel::Injection(r),
            r if r < n + l => Channel::Flow(r - n + 1),
            r => Channel::ReverseFlow(r - n - l + 1),
        }
    }

    pub fn channels(&self) -> Vec<Channel> {
        (0..self.n_measurements()).map(|r| self.channel(r)).collect()
    }
}

/// Builds `H` alone. Out-of-service branches produce all-zero flow rows.
pub fn measurement_matrix(grid: &GridCase) -> DMatrix<f64> {
    let inc = build_incidence(grid);
    let (n, l) = (grid.n_buses(), grid.n_branches());
    let d = susceptances(grid);
    // D A_reducedᵀ : L x (N-1)
    let mut flow = inc.reduced.transpose();
    for (row, &b) in d.iter().enumerate() {
        flow.row_mut(row).scale_mut(b);
    }
    let injection = &inc.full * &flow;
    let mut h = DMatrix::zeros(n + 2 * l, n - 1);
    h.view_mut((0, 0), (n, n - 1)).copy_from(&injection);
    h.view_mut((n, 0), (l, n - 1)).copy_from(&flow);
    h.view_mut((n + l, 0), (l, n - 1)).copy_from(&(-flow));
    h
}

fn susceptances(grid: &GridCase) -> DVector<f64> {
    DVector::from_iterator(
        grid.n_branches(),
        grid.branches
            .iter()
            .map(|b| if b.in_service { 1.0 / b.reactance } else { 0.0 }),
    )
}

pub fn build_measurement_model(grid: &GridCase, sigma: &Sigma) -> Result<MeasurementModel> {
    if !grid.is_connected() {
        return Err(Error::SingularTopology);
    }
    let m = grid.n_measurements();
    let sigma = DVector::from_vec(sigma.resolve(m)?);
    Ok(MeasurementModel {
        h: measurement_matrix(grid),
        weights: sigma.map(|s| s.powi(-2)),
        sigma,
        susceptance: susceptances(grid),
        n_buses: grid.n_buses(),
        n_branches: grid.n_branches(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::fixtures::{triangle, two_bus};
    use crate::case_model::ieee14;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    #[test]
    fn two_bus_incidence() {
        let inc = build_incidence(&two_bus(1.0));
        assert_eq!(inc.full, dmatrix![1.0; -1.0]);
        assert_eq!(inc.reduced, dmatrix![-1.0]);
        assert_eq!(inc.reduced_rows, vec![1]);
    }

    #[test]
    fn triangle_incidence_and_susceptance_by_hand() {
        let grid = triangle([0.1, 0.2, 0.3]);
        let inc = build_incidence(&grid);
        // branches: 1->2, 2->3, 1->3
        let full = dmatrix![
            1.0, 0.0, 1.0;
            -1.0, 1.0, 0.0;
            0.0, -1.0, -1.0
        ];
        assert_eq!(inc.full, full);
        assert_eq!(inc.reduced, dmatrix![-1.0, 1.0, 0.0; 0.0, -1.0, -1.0]);
        for c in 0..3 {
            assert_eq!(inc.full.column(c).sum(), 0.0);
        }
        let model = build_measurement_model(&grid, &Sigma::default()).unwrap();
        let expect = [10.0, 5.0, 1.0 / 0.3];
        for (got, want) in model.susceptance.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ieee14_shapes() {
        let grid = ieee14();
        let inc = build_incidence(&grid);
        assert_eq!(inc.reduced.shape(), (13, 20));
        let model = build_measurement_model(&grid, &Sigma::default()).unwrap();
        assert_eq!(model.h.shape(), (54, 13));
        assert_eq!(model.h.rank(1e-9), 13);
        assert_eq!(model.channel(0), Channel::Injection(0));
        assert_eq!(model.channel(14), Channel::Flow(1));
        assert_eq!(model.channel(34), Channel::ReverseFlow(1));
        assert_eq!(model.channel(53), Channel::ReverseFlow(20));
    }

    #[test]
    fn two_bus_noiseless_measurements() {
        let model = build_measurement_model(&two_bus(1.0), &Sigma::default()).unwrap();
        // F = (theta_1 - theta_2) / x with the slack angle at zero
        let z = &model.h * DVector::from_vec(vec![-1.0]);
        assert_eq!(z.as_slice(), &[1.0, -1.0, 1.0, -1.0]);
        let z = &model.h * DVector::from_vec(vec![1.0]);
        assert_eq!(z.as_slice(), &[-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn triangle_flows_match_angle_differences() {
        let grid = triangle([0.1, 0.2, 0.3]);
        let model = build_measurement_model(&grid, &Sigma::default()).unwrap();
        let theta = DVector::from_vec(vec![0.37, -0.21]);
        let z = &model.h * &theta;
        let full = [0.0, 0.37, -0.21];
        for (l, (f, t)) in grid.branch_endpoints().into_iter().enumerate() {
            let flow = (full[f] - full[t]) / grid.branches[l].reactance;
            assert!((z[3 + l] - flow).abs() < 1e-12);
            assert!((z[6 + l] + flow).abs() < 1e-12);
        }
    }

    #[test]
    fn per_channel_sigma_is_validated() {
        let grid = two_bus(1.0);
        assert!(build_measurement_model(&grid, &Sigma::PerChannel(vec![0.1; 3])).is_err());
        assert!(build_measurement_model(&grid, &Sigma::Uniform(0.0)).is_err());
        let model = build_measurement_model(&grid, &Sigma::PerChannel(vec![0.5; 4])).unwrap();
        assert_eq!(model.weights[0], 4.0);
    }

    proptest! {
        #[test]
        fn injection_rows_balance_and_flows_follow_angles(
            theta in proptest::collection::vec(-1.0f64..1.0, 13)
        ) {
            let grid = ieee14();
            let h = measurement_matrix(&grid);
            let theta = DVector::from_vec(theta);
            let z = &h * &theta;
            let injections: f64 = z.rows(0, 14).sum();
            prop_assert!(injections.abs() < 1e-9);
            let mut full = vec![0.0];
            full.extend(theta.iter());
            for (l, (f, t)) in grid.branch_endpoints().into_iter().enumerate() {
                let flow = (full[f] - full[t]) / grid.branches[l].reactance;
                prop_assert!((z[14 + l] - flow).abs() < 1e-9);
            }
        }
    }
}

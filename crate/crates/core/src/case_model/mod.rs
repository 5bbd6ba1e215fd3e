//! Grid case representation, case-file parsing and the network matrices of
//! the DC measurement model.

mod matpower;
mod matrices;
mod native;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use matrices::{
    build_incidence, build_measurement_model, measurement_matrix, Channel, IncidencePair,
    MeasurementModel, Sigma,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub is_slack: bool,
    /// Active load in p.u.
    pub load_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// 1-based branch number, as used in every external interface.
    pub index: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series reactance in p.u.
    pub reactance: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    /// Scheduled active generation in p.u.
    pub gen_p: f64,
}

/// A validated DC grid case. All power quantities are in p.u. on `base_mva`.
///
/// Constructed through [`GridCase::new`] or [`parse_case`], both of which
/// enforce: one slack bus, positive finite reactances, no dangling or
/// self-loop branches and a connected in-service network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub gens: Vec<Generator>,
}

impl GridCase {
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        gens: Vec<Generator>,
    ) -> Result<Self> {
        let grid = Self {
            base_mva,
            buses,
            branches,
            gens,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Checks every structural invariant of the case.
    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return Err(Error::MalformedCase(format!(
                "baseMVA must be positive, got {}",
                self.base_mva
            )));
        }
        if self.buses.is_empty() {
            return Err(Error::MalformedCase("case has no buses".into()));
        }
        let mut seen = HashMap::new();
        for (pos, bus) in self.buses.iter().enumerate() {
            if seen.insert(bus.id, pos).is_some() {
                return Err(Error::MalformedCase(format!("duplicate bus id {}", bus.id)));
            }
            if !bus.load_p.is_finite() {
                return Err(Error::MalformedCase(format!("bus {} load is not finite", bus.id)));
            }
        }
        match self.buses.iter().filter(|b| b.is_slack).count() {
            0 => return Err(Error::NoSlack),
            1 => {}
            n => return Err(Error::MultipleSlack(n)),
        }
        for (pos, br) in self.branches.iter().enumerate() {
            if br.index != pos + 1 {
                return Err(Error::MalformedCase(format!(
                    "branch at position {} carries index {}, expected {}",
                    pos,
                    br.index,
                    pos + 1
                )));
            }
            if !(br.reactance.is_finite() && br.reactance > 0.0) {
                return Err(Error::NonpositiveReactance {
                    branch: br.index,
                    x: br.reactance,
                });
            }
            for bus in [br.from_bus, br.to_bus] {
                if !seen.contains_key(&bus) {
                    return Err(Error::DanglingBusReference {
                        branch: br.index,
                        bus,
                    });
                }
            }
            if br.from_bus == br.to_bus {
                return Err(Error::DanglingBusReference {
                    branch: br.index,
                    bus: br.to_bus,
                });
            }
        }
        for gen in &self.gens {
            if !seen.contains_key(&gen.bus) {
                return Err(Error::MalformedCase(format!(
                    "generator references unknown bus {}",
                    gen.bus
                )));
            }
            if !gen.gen_p.is_finite() {
                return Err(Error::MalformedCase("generator output is not finite".into()));
            }
        }
        if !self.is_connected() {
            return Err(Error::DisconnectedGrid);
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn n_active_branches(&self) -> usize {
        self.branches.iter().filter(|b| b.in_service).count()
    }

    /// Number of measurement channels, `N + 2L`.
    pub fn n_measurements(&self) -> usize {
        self.n_buses() + 2 * self.n_branches()
    }

    /// Number of state variables, `N - 1`.
    pub fn n_states(&self) -> usize {
        self.n_buses() - 1
    }

    pub fn slack_position(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.is_slack)
            .expect("validated grid has a slack bus")
    }

    /// Position of a bus id in `buses`.
    pub fn bus_position(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn branch(&self, index: usize) -> Option<&Branch> {
        index.checked_sub(1).and_then(|i| self.branches.get(i))
    }

    /// Branch endpoints as bus positions.
    pub fn branch_endpoints(&self) -> Vec<(usize, usize)> {
        let pos = self.position_map();
        self.branches
            .iter()
            .map(|b| (pos[&b.from_bus], pos[&b.to_bus]))
            .collect()
    }

    pub(crate) fn position_map(&self) -> HashMap<usize, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(pos, b)| (b.id, pos))
            .collect()
    }

    pub fn reactances(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.reactance).collect()
    }

    /// Bus loads in p.u., ordered like `buses`.
    pub fn loads(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.load_p).collect()
    }

    /// Scheduled generation per bus in p.u., ordered like `buses`.
    pub fn generation(&self) -> Vec<f64> {
        let pos = self.position_map();
        let mut gen = vec![0.0; self.n_buses()];
        for g in &self.gens {
            gen[pos[&g.bus]] += g.gen_p;
        }
        gen
    }

    pub fn is_connected(&self) -> bool {
        self.is_connected_without(&[])
    }

    /// Connectivity of the in-service graph with the listed branches (1-based)
    /// additionally removed.
    pub fn is_connected_without(&self, removed: &[usize]) -> bool {
        let n = self.n_buses();
        let pos = self.position_map();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            if !br.in_service || removed.contains(&br.index) {
                continue;
            }
            let (Some(&f), Some(&t)) = (pos.get(&br.from_bus), pos.get(&br.to_bus)) else {
                continue;
            };
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut visited = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !visited[v] {
                    visited[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == n
    }

    /// In-service branches whose individual removal islands the grid.
    pub fn bridges(&self) -> Vec<usize> {
        self.branches
            .iter()
            .filter(|b| b.in_service && !self.is_connected_without(&[b.index]))
            .map(|b| b.index)
            .collect()
    }

    /// SHA-256 over the canonical native serialization.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("grid serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Serializes to the native JSON case format.
    pub fn to_native(&self) -> String {
        native::to_native(self)
    }

    /// Copy of this grid with branch reactances replaced.
    pub fn with_reactances(&self, reactances: &[f64]) -> Result<Self> {
        if reactances.len() != self.n_branches() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} reactances, got {}",
                self.n_branches(),
                reactances.len()
            )));
        }
        let mut grid = self.clone();
        for (br, &x) in grid.branches.iter_mut().zip(reactances) {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::NonpositiveReactance {
                    branch: br.index,
                    x,
                });
            }
            br.reactance = x;
        }
        Ok(grid)
    }
}

/// Parses either a MATPOWER case (`.m` text) or the native JSON case format.
pub fn parse_case(text: &str) -> Result<GridCase> {
    let grid = if text.trim_start().starts_with('{') {
        native::from_native(text)?
    } else {
        matpower::parse_matpower(text)?
    };
    grid.validate()?;
    Ok(grid)
}

/// The IEEE 14-bus MATPOWER case bundled with the crate.
pub const IEEE14_MATPOWER: &str = include_str!("../../data/case14.m");

pub fn ieee14() -> GridCase {
    parse_case(IEEE14_MATPOWER).expect("bundled IEEE-14 case parses")
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn two_bus(x: f64) -> GridCase {
        GridCase::new(
            100.0,
            vec![
                Bus { id: 1, is_slack: true, load_p: 0.0 },
                Bus { id: 2, is_slack: false, load_p: 1.0 },
            ],
            vec![Branch { index: 1, from_bus: 1, to_bus: 2, reactance: x, in_service: true }],
            vec![Generator { bus: 1, gen_p: 1.0 }],
        )
        .unwrap()
    }

    pub fn triangle(x: [f64; 3]) -> GridCase {
        GridCase::new(
            100.0,
            vec![
                Bus { id: 1, is_slack: true, load_p: 0.0 },
                Bus { id: 2, is_slack: false, load_p: 1.0 },
                Bus { id: 3, is_slack: false, load_p: 0.0 },
            ],
            vec![
                Branch { index: 1, from_bus: 1, to_bus: 2, reactance: x[0], in_service: true },
                Branch { index: 2, from_bus: 2, to_bus: 3, reactance: x[1], in_service: true },
                Branch { index: 3, from_bus: 1, to_bus: 3, reactance: x[2], in_service: true },
            ],
            vec![Generator { bus: 1, gen_p: 1.0 }],
        )
        .unwrap()
    }
}

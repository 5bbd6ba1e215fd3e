//! Moving target defense: D-FACTS placement on the complement of a spanning
//! tree, reactance perturbations and the smallest principal angle metric.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SVD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::case_model::{measurement_matrix, GridCase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfactsPlan {
    /// Branches (1-based) carrying D-FACTS devices.
    pub dfacts_lines: Vec<usize>,
    /// Branches (1-based) of the spanning tree.
    pub spanning_tree: Vec<usize>,
}

impl DfactsPlan {
    /// Plan from an explicit device set; the rest of the in-service branches
    /// must form a spanning tree.
    pub fn from_dfacts_lines(grid: &GridCase, lines: &[usize]) -> Result<Self> {
        let mut dfacts_lines = lines.to_vec();
        dfacts_lines.sort_unstable();
        dfacts_lines.dedup();
        for &l in &dfacts_lines {
            if !grid.branch(l).is_some_and(|b| b.in_service) {
                return Err(Error::InvalidConfig(format!(
                    "D-FACTS branch {l} is not an in-service branch"
                )));
            }
        }
        let spanning_tree: Vec<usize> = grid
            .branches
            .iter()
            .filter(|b| b.in_service && !dfacts_lines.contains(&b.index))
            .map(|b| b.index)
            .collect();
        let plan = Self {
            dfacts_lines,
            spanning_tree,
        };
        plan.check(grid)?;
        Ok(plan)
    }

    /// Verifies partition, cardinality and that the tree spans without cycles.
    pub fn check(&self, grid: &GridCase) -> Result<()> {
        let n = grid.n_buses();
        let mut all: Vec<usize> = self
            .dfacts_lines
            .iter()
            .chain(&self.spanning_tree)
            .copied()
            .collect();
        all.sort_unstable();
        let active: Vec<usize> = grid
            .branches
            .iter()
            .filter(|b| b.in_service)
            .map(|b| b.index)
            .collect();
        if all != active {
            return Err(Error::InvalidConfig(
                "D-FACTS set and spanning tree must partition the in-service branches".into(),
            ));
        }
        if self.spanning_tree.len() != n - 1 {
            return Err(Error::InvalidConfig(format!(
                "spanning tree has {} branches, expected {}",
                self.spanning_tree.len(),
                n - 1
            )));
        }
        let ends = grid.branch_endpoints();
        let mut uf = UnionFind::new(n);
        for &l in &self.spanning_tree {
            let (f, t) = ends[l - 1];
            if !uf.union(f, t) {
                return Err(Error::InvalidConfig(format!(
                    "branch {l} closes a cycle in the spanning tree"
                )));
            }
        }
        Ok(())
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Minimum spanning tree on reactance weights (Kruskal, ties broken by
/// branch index); D-FACTS go on every other in-service branch.
pub fn place_dfacts(grid: &GridCase) -> Result<DfactsPlan> {
    if !grid.is_connected() {
        return Err(Error::DisconnectedGrid);
    }
    let ends = grid.branch_endpoints();
    let mut order: Vec<usize> = (0..grid.n_branches())
        .filter(|&i| grid.branches[i].in_service)
        .collect();
    order.sort_by(|&a, &b| {
        grid.branches[a]
            .reactance
            .total_cmp(&grid.branches[b].reactance)
            .then(a.cmp(&b))
    });
    let mut uf = UnionFind::new(grid.n_buses());
    let mut spanning_tree = Vec::with_capacity(grid.n_buses() - 1);
    let mut dfacts_lines = Vec::new();
    for i in order {
        let (f, t) = ends[i];
        if uf.union(f, t) {
            spanning_tree.push(i + 1);
        } else {
            dfacts_lines.push(i + 1);
        }
    }
    spanning_tree.sort_unstable();
    dfacts_lines.sort_unstable();
    Ok(DfactsPlan {
        dfacts_lines,
        spanning_tree,
    })
}

const RANK_TOL: f64 = 1e-10;

fn orthonormal_basis(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = SVD::new(h.clone(), true, false);
    let smax = svd.singular_values.max();
    if h.ncols() == 0 || smax == 0.0 || svd.singular_values.min() <= RANK_TOL * smax {
        return Err(Error::RankDeficient);
    }
    Ok(svd.u.expect("left singular vectors requested"))
}

/// Smallest principal angle between the column spaces of `h` and `h_prime`.
///
/// `cos γ` is the largest singular value of `Q1ᵀ Q2` for orthonormal bases
/// `Q1`, `Q2`. Near zero, where `acos` loses precision, the angle is taken
/// from the sine side: the smallest singular value of `(I - Q1 Q1ᵀ) Q2`.
pub fn spa(h: &DMatrix<f64>, h_prime: &DMatrix<f64>) -> Result<f64> {
    if h.shape() != h_prime.shape() {
        return Err(Error::ShapeMismatch(format!(
            "SPA needs equal shapes, got {:?} and {:?}",
            h.shape(),
            h_prime.shape()
        )));
    }
    let q1 = orthonormal_basis(h)?;
    let q2 = orthonormal_basis(h_prime)?;
    let cross = q1.transpose() * &q2;
    let cos = cross.singular_values().max().min(1.0);
    if cos * cos < 0.5 {
        return Ok(cos.acos());
    }
    let residual = &q2 - &q1 * &cross;
    let sin = residual.singular_values().min().clamp(0.0, 1.0);
    Ok(sin.asin())
}

/// Projection distance between the column spaces: the sum of squared sines
/// of all principal angles, `n - ||Q1ᵀ Q2||_F^2`.
pub fn subspace_distance(h: &DMatrix<f64>, h_prime: &DMatrix<f64>) -> Result<f64> {
    if h.shape() != h_prime.shape() {
        return Err(Error::ShapeMismatch(format!(
            "subspace distance needs equal shapes, got {:?} and {:?}",
            h.shape(),
            h_prime.shape()
        )));
    }
    let q1 = orthonormal_basis(h)?;
    let q2 = orthonormal_basis(h_prime)?;
    let cross = q1.transpose() * &q2;
    Ok((q1.ncols() as f64 - cross.norm_squared()).max(0.0))
}

/// SPA values below this are treated as zero when ranking candidates.
pub const SPA_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Reactance change per D-FACTS branch (1-based index to p.u.).
    pub delta_x: BTreeMap<usize, f64>,
    /// Maximum relative magnitude, `|Δx_l| <= eta x_l`.
    pub eta: f64,
}

impl Perturbation {
    pub fn zero(plan: &DfactsPlan, eta: f64) -> Self {
        Self {
            delta_x: plan.dfacts_lines.iter().map(|&l| (l, 0.0)).collect(),
            eta,
        }
    }

    pub fn validate(&self, grid: &GridCase, plan: &DfactsPlan) -> Result<()> {
        for (&l, &dx) in &self.delta_x {
            if !plan.dfacts_lines.contains(&l) {
                return Err(Error::InvalidConfig(format!(
                    "branch {l} has no D-FACTS device"
                )));
            }
            let x = grid
                .branch(l)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown branch {l}")))?
                .reactance;
            if !dx.is_finite() || dx.abs() > self.eta * x * (1.0 + 1e-12) {
                return Err(Error::InvalidConfig(format!(
                    "perturbation {dx} on branch {l} exceeds eta = {}",
                    self.eta
                )));
            }
            if x + dx <= 0.0 {
                return Err(Error::NonpositiveReactance { branch: l, x: x + dx });
            }
        }
        Ok(())
    }
}

pub fn apply_mtd(grid: &GridCase, perturbation: &Perturbation) -> Result<GridCase> {
    let mut x = grid.reactances();
    for (&l, &dx) in &perturbation.delta_x {
        let slot = x
            .get_mut(l.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown branch {l}")))?;
        *slot += dx;
    }
    grid.with_reactances(&x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedPerturbation {
    pub perturbation: Perturbation,
    /// Achieved smallest principal angle (radians).
    pub gamma: f64,
    /// Achieved projection distance, the tie-breaker.
    pub distance: f64,
    pub candidate: usize,
    pub candidate_gammas: Vec<f64>,
    pub candidate_distances: Vec<f64>,
}

/// Random search: draws `n_candidates` perturbations uniform in
/// `±eta x_l` on the D-FACTS branches and keeps the one with the largest SPA.
/// SPAs within [`SPA_TIE_TOL`] of each other tie; ties go to the larger
/// [`subspace_distance`], then to the first index. If some nonzero angle
/// vector drives no flow through any D-FACTS line, its measurements are the
/// same before and after MTD, the column spaces intersect and the SPA is zero
/// for every candidate; the distance then decides. This always happens when
/// fewer than N - 1 lines carry devices, e.g. IEEE-14 with 7.
pub fn select_perturbation<R: Rng + ?Sized>(
    grid: &GridCase,
    plan: &DfactsPlan,
    eta: f64,
    n_candidates: usize,
    rng: &mut R,
) -> Result<SelectedPerturbation> {
    if n_candidates == 0 {
        return Err(Error::InvalidConfig("need at least one candidate".into()));
    }
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidConfig(format!("eta must be in [0, 1), got {eta}")));
    }
    let h = measurement_matrix(grid);
    let mut best: Option<(usize, f64, f64, Perturbation)> = None;
    let mut gammas = Vec::with_capacity(n_candidates);
    let mut distances = Vec::with_capacity(n_candidates);
    for k in 0..n_candidates {
        let delta_x: BTreeMap<usize, f64> = plan
            .dfacts_lines
            .iter()
            .map(|&l| {
                let x = grid.branches[l - 1].reactance;
                let u: f64 = if eta > 0.0 { rng.random_range(-1.0..=1.0) } else { 0.0 };
                (l, u * eta * x)
            })
            .collect();
        let p = Perturbation { delta_x, eta };
        let h_prime = measurement_matrix(&apply_mtd(grid, &p)?);
        let gamma = spa(&h, &h_prime)?;
        let dist = subspace_distance(&h, &h_prime)?;
        gammas.push(gamma);
        distances.push(dist);
        let better = match &best {
            None => true,
            Some((_, g, d, _)) => {
                if (gamma - g).abs() > SPA_TIE_TOL {
                    gamma > *g
                } else {
                    dist > *d
                }
            }
        };
        if better {
            best = Some((k, gamma, dist, p));
        }
    }
    let (candidate, gamma, distance, perturbation) = best.expect("at least one candidate");
    Ok(SelectedPerturbation {
        perturbation,
        gamma,
        distance,
        candidate,
        candidate_gammas: gammas,
        candidate_distances: distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::fixtures::triangle;
    use crate::case_model::{ieee14, Branch, Bus, Generator};
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ieee14_plan_has_seven_devices() {
        let grid = ieee14();
        let plan = place_dfacts(&grid).unwrap();
        assert_eq!(plan.dfacts_lines.len(), 7);
        assert_eq!(plan.spanning_tree.len(), 13);
        plan.check(&grid).unwrap();
    }

    #[test]
    fn explicit_device_set_is_accepted() {
        let grid = ieee14();
        let plan = DfactsPlan::from_dfacts_lines(&grid, &[1, 3, 5, 8, 9, 18, 19]).unwrap();
        assert_eq!(plan.spanning_tree.len(), 13);
        // removing a tree branch instead leaves a cycle in the remainder
        assert!(DfactsPlan::from_dfacts_lines(&grid, &[1, 3, 5, 8, 9, 18, 14]).is_err());
        assert!(DfactsPlan::from_dfacts_lines(&grid, &[1, 3]).is_err());
    }

    #[test]
    fn triangle_puts_device_on_largest_reactance() {
        let plan = place_dfacts(&triangle([0.1, 0.3, 0.2])).unwrap();
        assert_eq!(plan.dfacts_lines, vec![2]);
        // equal weights: the highest index loses the tie
        let plan = place_dfacts(&triangle([0.2, 0.2, 0.2])).unwrap();
        assert_eq!(plan.dfacts_lines, vec![3]);
    }

    #[test]
    fn tree_grid_has_no_devices() {
        let grid = GridCase::new(
            100.0,
            (1..=4).map(|id| Bus { id, is_slack: id == 1, load_p: 0.1 }).collect(),
            vec![
                Branch { index: 1, from_bus: 1, to_bus: 2, reactance: 0.1, in_service: true },
                Branch { index: 2, from_bus: 2, to_bus: 3, reactance: 0.1, in_service: true },
                Branch { index: 3, from_bus: 2, to_bus: 4, reactance: 0.1, in_service: true },
            ],
            vec![Generator { bus: 1, gen_p: 0.3 }],
        )
        .unwrap();
        assert!(place_dfacts(&grid).unwrap().dfacts_lines.is_empty());
    }

    #[test]
    fn spa_of_same_subspace_is_zero() {
        let h = measurement_matrix(&ieee14());
        assert!(spa(&h, &h).unwrap().abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(13, 13, |i, j| if i == j { 3.0 } else { rng.random_range(-1.0..1.0) });
        assert!(spa(&h, &(&h * m)).unwrap().abs() < 1e-9);
    }

    #[test]
    fn spa_two_planes_by_hand() {
        // span{e1, e2} vs span{e1, cos(a) e2 + sin(a) e3}: principal angles
        // are 0 and a, so the smallest is 0. Tilting both basis vectors out
        // of the plane gives a smallest angle of min(a, b).
        let (a, b) = (0.3f64, 0.7f64);
        let h = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0; 0.0, 0.0];
        let hp = dmatrix![1.0, 0.0; 0.0, a.cos(); 0.0, a.sin(); 0.0, 0.0];
        assert!(spa(&h, &hp).unwrap().abs() < 1e-12);
        let hp = dmatrix![
            b.cos(), 0.0;
            0.0, a.cos();
            0.0, a.sin();
            b.sin(), 0.0
        ];
        assert!((spa(&h, &hp).unwrap() - a).abs() < 1e-9);
        let orth = dmatrix![0.0, 0.0; 0.0, 0.0; 1.0, 0.0; 0.0, 1.0];
        assert!((spa(&h, &orth).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn spa_rejects_rank_deficient_input() {
        let h = dmatrix![1.0, 2.0; 2.0, 4.0; 0.0, 0.0];
        let g = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0];
        assert!(matches!(spa(&h, &g), Err(Error::RankDeficient)));
        assert!(matches!(spa(&g, &dmatrix![1.0; 0.0; 0.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let grid = ieee14();
        let plan = place_dfacts(&grid).unwrap();
        assert_eq!(apply_mtd(&grid, &Perturbation::zero(&plan, 0.2)).unwrap(), grid);
        let sel = select_perturbation(&grid, &plan, 0.0, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(sel.gamma.abs() < 1e-12);
    }

    #[test]
    fn perturbation_changes_only_touched_rows() {
        let grid = ieee14();
        let plan = place_dfacts(&grid).unwrap();
        let sel = select_perturbation(&grid, &plan, 0.2, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        sel.perturbation.validate(&grid, &plan).unwrap();
        let moved = apply_mtd(&grid, &sel.perturbation).unwrap();
        for (&l, &dx) in &sel.perturbation.delta_x {
            assert_eq!(moved.branches[l - 1].reactance, grid.branches[l - 1].reactance + dx);
        }
        let dh = measurement_matrix(&moved) - measurement_matrix(&grid);
        let ends = grid.branch_endpoints();
        let lines = &plan.dfacts_lines;
        for row in 0..54 {
            let touched = match row {
                r if r < 14 => lines.iter().any(|&l| ends[l - 1].0 == r || ends[l - 1].1 == r),
                r if r < 34 => lines.contains(&(r - 14 + 1)),
                r => lines.contains(&(r - 34 + 1)),
            };
            if !touched {
                assert_eq!(dh.row(row).amax(), 0.0, "row {row}");
            }
        }
    }

    #[test]
    fn selection_is_an_argmax() {
        // K5 with a path as spanning tree: the D-FACTS lines touch every bus,
        // so only the zero angle vector keeps them all flow-free and the SPA
        // is strictly positive
        let grid = complete_grid(5);
        let plan = place_dfacts(&grid).unwrap();
        let sel = select_perturbation(&grid, &plan, 0.2, 50, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert!(sel.gamma > 1e-3);
        assert!(sel.candidate_gammas.iter().all(|&g| g <= sel.gamma));
        assert_eq!(sel.candidate_gammas[sel.candidate], sel.gamma);
    }

    #[test]
    fn ieee14_spa_is_structurally_zero_and_distance_decides() {
        let grid = ieee14();
        let plan = place_dfacts(&grid).unwrap();
        let sel = select_perturbation(&grid, &plan, 0.2, 50, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        // 7 D-FACTS lines cannot constrain 13 angles: some nonzero angle
        // vector leaves all of them without flow and is measured identically
        // before and after
        assert!(sel.candidate_gammas.iter().all(|&g| g < SPA_TIE_TOL));
        assert!(sel.distance > 0.0);
        assert!(sel.candidate_distances.iter().all(|&d| d <= sel.distance));
        assert_eq!(sel.candidate_distances[sel.candidate], sel.distance);
    }

    #[test]
    fn subspace_distance_basics() {
        let h = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0];
        let g = dmatrix![1.0, 0.0; 0.0, 0.0; 0.0, 1.0];
        assert!(subspace_distance(&h, &h).unwrap().abs() < 1e-12);
        assert!((subspace_distance(&h, &g).unwrap() - 1.0).abs() < 1e-12);
        assert!(subspace_distance(&h, &dmatrix![1.0; 0.0; 0.0]).is_err());
    }

    fn complete_grid(n: usize) -> GridCase {
        let mut branches = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                branches.push(Branch {
                    index: branches.len() + 1,
                    from_bus: a + 1,
                    to_bus: b + 1,
                    reactance: if b == a + 1 { 0.1 } else { 0.2 + 0.01 * branches.len() as f64 },
                    in_service: true,
                });
            }
        }
        GridCase::new(
            100.0,
            (0..n).map(|i| Bus { id: i + 1, is_slack: i == 0, load_p: 0.1 }).collect(),
            branches,
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn invalid_perturbations_are_rejected() {
        let grid = ieee14();
        let plan = place_dfacts(&grid).unwrap();
        let tree_line = plan.spanning_tree[0];
        let p = Perturbation { delta_x: BTreeMap::from([(tree_line, 0.0)]), eta: 0.2 };
        assert!(p.validate(&grid, &plan).is_err());
        let l = plan.dfacts_lines[0];
        let x = grid.branches[l - 1].reactance;
        let p = Perturbation { delta_x: BTreeMap::from([(l, 0.5 * x)]), eta: 0.2 };
        assert!(p.validate(&grid, &plan).is_err());
        let p = Perturbation { delta_x: BTreeMap::from([(l, -x)]), eta: 1.0 };
        assert!(matches!(apply_mtd(&grid, &p), Err(Error::NonpositiveReactance { .. })));
    }

    fn random_connected_grid(n: usize, extra: &[(usize, usize)], weights: &[f64]) -> GridCase {
        // random tree via parent links, then extra chords
        let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (extra[i % extra.len()].0 % i, i)).collect();
        for &(a, b) in extra {
            let (a, b) = (a % n, b % n);
            if a != b {
                edges.push((a, b));
            }
        }
        GridCase::new(
            100.0,
            (0..n).map(|i| Bus { id: i + 1, is_slack: i == 0, load_p: 0.1 }).collect(),
            edges
                .iter()
                .enumerate()
                .map(|(k, &(a, b))| Branch {
                    index: k + 1,
                    from_bus: a + 1,
                    to_bus: b + 1,
                    reactance: weights[k % weights.len()],
                    in_service: true,
                })
                .collect(),
            vec![],
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn plan_invariants_on_random_grids(
            n in 2usize..12,
            extra in proptest::collection::vec((0usize..50, 0usize..50), 1..15),
            weights in proptest::collection::vec(0.01f64..1.0, 1..10),
        ) {
            let grid = random_connected_grid(n, &extra, &weights);
            let plan = place_dfacts(&grid).unwrap();
            prop_assert!(plan.check(&grid).is_ok());
            prop_assert_eq!(plan.dfacts_lines.len(), grid.n_branches() - (n - 1));
        }

        #[test]
        fn spa_symmetric_bounded_and_scale_invariant(
            seed in 0u64..1000,
            scales in proptest::collection::vec(0.1f64..10.0, 13),
        ) {
            let grid = ieee14();
            let plan = place_dfacts(&grid).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sel = select_perturbation(&grid, &plan, 0.2, 1, &mut rng).unwrap();
            let h = measurement_matrix(&grid);
            let hp = measurement_matrix(&apply_mtd(&grid, &sel.perturbation).unwrap());
            let g = spa(&h, &hp).unwrap();
            prop_assert!((0.0..=std::f64::consts::FRAC_PI_2).contains(&g));
            prop_assert!((g - spa(&hp, &h).unwrap()).abs() < 1e-10);
            let mut scaled = hp.clone();
            for (j, s) in scales.iter().enumerate() {
                scaled.column_mut(j).scale_mut(*s);
            }
            prop_assert!((g - spa(&h, &scaled).unwrap()).abs() < 1e-10);
        }
    }
}

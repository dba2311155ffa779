//! First-level representation: discretely observed functions become
//! coefficient vectors over a shared kernel basis built on the pooled
//! time grid, with inner products and squared distances between the
//! represented functions.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::GcvDenominator;
use crate::error::{Error, Result};
use crate::kernels::{ridge_solve, KernelSpec};

/// n subjects x p nodes of functions observed on per-subject time grids.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    n: usize,
    p: usize,
    grids: Vec<Vec<f64>>,
    /// values[a][i][b] = observation of node i for subject a at grids[a][b]
    values: Vec<Vec<Vec<f64>>>,
}

impl FunctionalDataset {
    /// Validates grid monotonicity and shape consistency.
    pub fn new(grids: Vec<Vec<f64>>, values: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = grids.len();
        if n == 0 {
            return Err(Error::validation("dataset has no subjects"));
        }
        if values.len() != n {
            return Err(Error::validation(format!(
                "{} grids but {} subject value blocks",
                n,
                values.len()
            )));
        }
        let p = values[0].len();
        if p == 0 {
            return Err(Error::validation("dataset has no nodes"));
        }
        for (a, grid) in grids.iter().enumerate() {
            if grid.len() < 2 {
                return Err(Error::validation(format!(
                    "subject {}: needs at least 2 time points, got {}",
                    a + 1,
                    grid.len()
                )));
            }
            if grid.iter().any(|t| !t.is_finite()) {
                return Err(Error::validation(format!("subject {}: non-finite time", a + 1)));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::validation(format!(
                    "subject {}: time grid must be strictly increasing",
                    a + 1
                )));
            }
            if values[a].len() != p {
                return Err(Error::validation(format!(
                    "subject {}: expected {} nodes, got {}",
                    a + 1,
                    p,
                    values[a].len()
                )));
            }
            for (i, row) in values[a].iter().enumerate() {
                if row.len() != grid.len() {
                    return Err(Error::validation(format!(
                        "subject {} node {}: {} values for {} time points",
                        a + 1,
                        i + 1,
                        row.len(),
                        grid.len()
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation(format!(
                        "subject {} node {}: non-finite value",
                        a + 1,
                        i + 1
                    )));
                }
            }
        }
        Ok(FunctionalDataset { n, p, grids, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn grid(&self, subject: usize) -> &[f64] {
        &self.grids[subject]
    }

    pub fn grids(&self) -> &[Vec<f64>] {
        &self.grids
    }

    pub fn values(&self, subject: usize, node: usize) -> &[f64] {
        &self.values[subject][node]
    }
}

/// Pooled time grid, per-subject index sets into it, and the basis Gram.
#[derive(Debug, Clone)]
pub struct BasisGrid {
    pooled: Vec<f64>,
    index_sets: Vec<Vec<usize>>,
    gram: DMatrix<f64>,
    kernel: KernelSpec,
}

impl BasisGrid {
    pub fn pooled_times(&self) -> &[f64] {
        &self.pooled
    }

    pub fn index_set(&self, subject: usize) -> &[usize] {
        &self.index_sets[subject]
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.pooled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.is_empty()
    }

    /// The local basis Gram over one subject's observation times.
    pub fn local_gram(&self, subject: usize) -> DMatrix<f64> {
        let set = &self.index_sets[subject];
        DMatrix::from_fn(set.len(), set.len(), |r, c| self.gram[(set[r], set[c])])
    }

    #[cfg(test)]
    pub(crate) fn from_parts(
        pooled: Vec<f64>,
        index_sets: Vec<Vec<usize>>,
        gram: DMatrix<f64>,
        kernel: KernelSpec,
    ) -> Self {
        BasisGrid { pooled, index_sets, gram, kernel }
    }
}

/// Pool all observation times, deduplicate exactly, and tabulate the basis
/// kernel on the pooled grid.
pub fn build_basis(dataset: &FunctionalDataset, kernel: &KernelSpec) -> Result<BasisGrid> {
    kernel.validate()?;
    let mut pooled: Vec<f64> = dataset.grids().iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let n_basis = pooled.len();

    let mut index_sets = Vec::with_capacity(dataset.n());
    for a in 0..dataset.n() {
        let set: Vec<usize> = dataset
            .grid(a)
            .iter()
            .map(|t| {
                pooled
                    .binary_search_by(|u| u.total_cmp(t))
                    .expect("observation time missing from pooled grid")
            })
            .collect();
        index_sets.push(set);
    }

    let mut gram = DMatrix::zeros(n_basis, n_basis);
    for c in 0..n_basis {
        for d in c..n_basis {
            let v = kernel.eval_time_pair(pooled[c], pooled[d])?;
            gram[(c, d)] = v;
            gram[(d, c)] = v;
        }
    }
    Ok(BasisGrid { pooled, index_sets, gram, kernel: *kernel })
}

/// Per-node coefficient matrices over the shared basis; row a of
/// `per_node[i]` is the coordinate of subject a's node-i function, supported
/// on that subject's index set.
#[derive(Debug, Clone)]
pub struct CoordinateSet {
    per_node: Vec<DMatrix<f64>>,
    eta: f64,
}

impl CoordinateSet {
    /// n x N coefficient matrix for one node.
    pub fn node(&self, node: usize) -> &DMatrix<f64> {
        &self.per_node[node]
    }

    pub fn p(&self) -> usize {
        self.per_node.len()
    }

    pub fn n(&self) -> usize {
        self.per_node.first().map_or(0, |m| m.nrows())
    }

    pub fn ridge_eta(&self) -> f64 {
        self.eta
    }
}

/// Ridge-fit the basis coefficients of every (subject, node) function.
pub fn fit_coordinates(
    dataset: &FunctionalDataset,
    basis: &BasisGrid,
    eta: f64,
) -> Result<CoordinateSet> {
    if !(eta > 0.0) {
        return Err(Error::validation(format!("eta must be positive, got {eta}")));
    }
    if basis.index_sets.len() != dataset.n() {
        return Err(Error::validation("basis was built for a different dataset"));
    }
    let n = dataset.n();
    let p = dataset.p();
    let n_basis = basis.len();

    // Local solve per subject: (tau(S_a, S_a) + eta I)^{-1} applied to all p
    // value vectors at once.
    let solved: Vec<DMatrix<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let local = basis.local_gram(a);
            let m_a = local.nrows();
            let mut rhs = DMatrix::zeros(m_a, p);
            for i in 0..p {
                for (b, &v) in dataset.values(a, i).iter().enumerate() {
                    rhs[(b, i)] = v;
                }
            }
            ridge_solve(&local, eta, &rhs)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_node = vec![DMatrix::zeros(n, n_basis); p];
    for (a, sol) in solved.iter().enumerate() {
        let set = basis.index_set(a);
        for i in 0..p {
            for (b, &c) in set.iter().enumerate() {
                per_node[i][(a, c)] = sol[(b, i)];
            }
        }
    }
    Ok(CoordinateSet { per_node, eta })
}

/// Pairwise squared RKHS distances between subjects for a single node.
pub fn node_sq_distances(coords: &CoordinateSet, basis: &BasisGrid, node: usize) -> DMatrix<f64> {
    let c = coords.node(node);
    let n = c.nrows();
    // inner products via the basis Gram: P = C G C^T
    let prods = c * (basis.gram() * c.transpose());
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in (a + 1)..n {
            let d = (prods[(a, a)] + prods[(b, b)] - 2.0 * prods[(a, b)]).max(0.0);
            out[(a, b)] = d;
            out[(b, a)] = d;
        }
    }
    out
}

/// Sum of per-node squared distances over a node set (direct-sum geometry).
///
/// `node_set` holds 0-based node indices.
pub fn pairwise_sq_distances(
    coords: &CoordinateSet,
    basis: &BasisGrid,
    node_set: &[usize],
) -> Result<DMatrix<f64>> {
    if node_set.is_empty() {
        return Err(Error::validation("node set must be nonempty"));
    }
    let p = coords.p();
    if let Some(&bad) = node_set.iter().find(|&&i| i >= p) {
        return Err(Error::validation(format!("node index {bad} out of range (p = {p})")));
    }
    let n = coords.n();
    let mut total = DMatrix::zeros(n, n);
    for &i in node_set {
        total += node_sq_distances(coords, basis, i);
    }
    Ok(total)
}

/// GCV selection of the first-level ridge eta over a grid.
///
/// Numerator: squared residual of the kernel smoother per (subject, node);
/// denominator: m^{-1} tr(I - A) per subject, squared when the config says so.
pub fn gcv_eta(
    dataset: &FunctionalDataset,
    basis: &BasisGrid,
    grid: &[f64],
    denominator: GcvDenominator,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::validation("eta grid must be nonempty"));
    }
    let n = dataset.n();
    let p = dataset.p();
    let scores: Vec<Option<f64>> = grid
        .par_iter()
        .map(|&eta| {
            if !(eta > 0.0) {
                return None;
            }
            let mut total = 0.0;
            for a in 0..n {
                let local = basis.local_gram(a);
                let m_a = local.nrows();
                // A = K (K + eta I)^{-1}, symmetric since K and the resolvent commute
                let smoother = match ridge_solve(&local, eta, &local) {
                    Ok(s) => s,
                    Err(_) => return None,
                };
                let trace_part = (m_a as f64 - smoother.trace()) / m_a as f64;
                let den = match denominator {
                    GcvDenominator::PaperVerbatim => trace_part,
                    GcvDenominator::Squared => trace_part * trace_part,
                };
                if !(den > 0.0) || !den.is_finite() {
                    return None;
                }
                for i in 0..p {
                    let x = nalgebra::DVector::from_column_slice(dataset.values(a, i));
                    let fitted = &smoother * &x;
                    let num: f64 = (&x - fitted).norm_squared();
                    total += num / den;
                }
            }
            total.is_finite().then_some(total)
        })
        .collect();

    let best = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match best {
        Some((i, _)) => Ok(grid[i]),
        None => Err(Error::tuning("GCV(eta): no grid value produced a finite score")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;

    fn two_subject_dataset() -> FunctionalDataset {
        FunctionalDataset::new(
            vec![vec![0.1, 0.5], vec![0.5, 0.9]],
            vec![
                vec![vec![1.0, 2.0]],
                vec![vec![0.5, -1.0]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn basis_pools_and_dedups_times() {
        let ds = two_subject_dataset();
        let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
        assert_eq!(basis.pooled_times(), &[0.1, 0.5, 0.9]);
        assert_eq!(basis.index_set(0), &[0, 1]);
        assert_eq!(basis.index_set(1), &[1, 2]);
    }

    #[test]
    fn balanced_grids_share_index_sets() {
        let grid: Vec<f64> = (1..=10).map(|b| b as f64 / 10.0).collect();
        let values = vec![vec![vec![0.0; 10]; 2]; 3];
        let ds = FunctionalDataset::new(vec![grid.clone(); 3], values).unwrap();
        let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
        assert_eq!(basis.len(), 10);
        for a in 0..3 {
            assert_eq!(basis.index_set(a), (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn duplicate_times_rejected() {
        let r = FunctionalDataset::new(
            vec![vec![0.1, 0.1]],
            vec![vec![vec![1.0, 2.0]]],
        );
        assert!(r.is_err());
    }

    #[test]
    fn zero_values_give_zero_coordinates() {
        let grid: Vec<f64> = (1..=5).map(|b| b as f64 / 5.0).collect();
        let ds =
            FunctionalDataset::new(vec![grid.clone(); 2], vec![vec![vec![0.0; 5]; 3]; 2]).unwrap();
        let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
        let coords = fit_coordinates(&ds, &basis, 0.01).unwrap();
        for i in 0..3 {
            assert!(coords.node(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn coordinates_are_linear_in_values() {
        let grid: Vec<f64> = (1..=6).map(|b| b as f64 / 6.0).collect();
        let x: Vec<f64> = grid.iter().map(|t| t.sin()).collect();
        let y: Vec<f64> = grid.iter().map(|t| t * t).collect();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let ds = FunctionalDataset::new(
            vec![grid.clone()],
            vec![vec![x, y, combo]],
        )
        .unwrap();
        let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
        let coords = fit_coordinates(&ds, &basis, 0.3).unwrap();
        for c in 0..basis.len() {
            let lhs = coords.node(2)[(0, c)];
            let rhs = 2.0 * coords.node(0)[(0, c)] - 0.5 * coords.node(1)[(0, c)];
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn large_eta_shrinks_coordinates() {
        let grid: Vec<f64> = (1..=5).map(|b| b as f64 / 5.0).collect();
        let vals: Vec<f64> = grid.iter().map(|t| 1.0 + t).collect();
        let ds = FunctionalDataset::new(vec![grid], vec![vec![vals]]).unwrap();
        let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
        let small = fit_coordinates(&ds, &basis, 1e-6).unwrap();
        let large = fit_coordinates(&ds, &basis, 1e6).unwrap();
        let norm = |c: &CoordinateSet| c.node(0).row(0).norm();
        assert!(norm(&large) < 1e-6 * norm(&small));
    }

    #[test]
    fn scalar_ridge_solve_matches_hand_computation() {
        // one observation at u = 1 with value 3 under the Brownian kernel:
        // (tau(1,1) + eta)^{-1} * 3 -> 3 as eta -> 0
        let local = DMatrix::from_element(1, 1, 1.0);
        let rhs = DMatrix::from_element(1, 1, 3.0);
        let sol = ridge_solve(&local, 1e-12, &rhs).unwrap();
        assert!((sol[(0, 0)] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn distances_zero_for_identical_subjects() {
        let grid: Vec<f64> = (1..=4).map(|b| b as f64 / 4.0).collect();
        let vals = vec![0.4, -0.2, 1.0, 0.3];
        let ds = FunctionalDataset::new(
            vec![grid.clone(), grid.clone()],
            vec![vec![vals.clone()], vec![vals]],
        )
        .unwrap();
        let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
        let coords = fit_coordinates(&ds, &basis, 0.1).unwrap();
        let d2 = pairwise_sq_distances(&coords, &basis, &[0]).unwrap();
        assert_eq!(d2[(0, 0)], 0.0);
        assert!(d2[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn unit_vector_distance_under_identity_gram() {
        // coordinates e1 and e2 with basis gram I: squared distance 2
        let mut c = DMatrix::zeros(2, 2);
        c[(0, 0)] = 1.0;
        c[(1, 1)] = 1.0;
        let coords = CoordinateSet { per_node: vec![c], eta: 1.0 };
        let basis = BasisGrid::from_parts(
            vec![0.25, 0.75],
            vec![vec![0, 1], vec![0, 1]],
            DMatrix::identity(2, 2),
            KernelSpec { family: KernelFamily::GaussianRbf, bandwidth: 1.0 },
        );
        let d2 = pairwise_sq_distances(&coords, &basis, &[0]).unwrap();
        assert!((d2[(0, 1)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn distances_add_over_disjoint_node_sets() {
        let grid: Vec<f64> = (1..=5).map(|b| b as f64 / 5.0).collect();
        let mk = |s: f64| -> Vec<f64> { grid.iter().map(|t| (s * t).cos()).collect() };
        let ds = FunctionalDataset::new(
            vec![grid.clone(), grid.clone()],
            vec![
                vec![mk(1.0), mk(2.0), mk(3.0)],
                vec![mk(4.0), mk(5.0), mk(6.0)],
            ],
        )
        .unwrap();
        let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
        let coords = fit_coordinates(&ds, &basis, 0.05).unwrap();
        let all = pairwise_sq_distances(&coords, &basis, &[0, 1, 2]).unwrap();
        let part1 = pairwise_sq_distances(&coords, &basis, &[0, 2]).unwrap();
        let part2 = pairwise_sq_distances(&coords, &basis, &[1]).unwrap();
        assert!(((&part1 + &part2) - all).abs().max() < 1e-12);
    }

    #[test]
    fn gcv_eta_prefers_small_ridge_on_representable_data() {
        let grid: Vec<f64> = (1..=8).map(|b| b as f64 / 8.0).collect();
        // data generated in the Brownian span: x = tau(., 0.5) evaluated on the grid
        let vals: Vec<f64> = grid.iter().map(|&t| t.min(0.5)).collect();
        let ds = FunctionalDataset::new(vec![grid], vec![vec![vals]]).unwrap();
        let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
        let grid_eta = [1e-4, 1e-2, 1.0, 1e2];
        let best = gcv_eta(&ds, &basis, &grid_eta, GcvDenominator::PaperVerbatim).unwrap();
        assert_eq!(best, 1e-4);
    }

    #[test]
    fn gcv_eta_single_grid_value() {
        let ds = two_subject_dataset();
        let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
        let best = gcv_eta(&ds, &basis, &[0.37], GcvDenominator::PaperVerbatim).unwrap();
        assert_eq!(best, 0.37);
    }

    #[test]
    fn smoother_residual_shrinks_as_eta_decreases() {
        let grid: Vec<f64> = (1..=10).map(|b| b as f64 / 10.0).collect();
        let vals: Vec<f64> = grid.iter().map(|t| (3.0 * t).sin() + t).collect();
        let ds = FunctionalDataset::new(vec![grid], vec![vec![vals.clone()]]).unwrap();
        let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
        let local = basis.local_gram(0);
        let x = DMatrix::from_fn(10, 1, |r, _| vals[r]);
        let mut last = f64::INFINITY;
        for eta in [10.0, 1.0, 0.1, 0.01, 0.001] {
            let fitted = &local * crate::kernels::ridge_solve(&local, eta, &x).unwrap();
            let resid = (&x - fitted).norm();
            assert!(resid < last, "residual not decreasing at eta {eta}");
            last = resid;
        }
    }

    #[test]
    fn distances_embed_as_a_psd_gram() {
        // classical-scaling check: -1/2 Qn D Qn must be PSD for distances
        // that come from an inner-product space
        let grid: Vec<f64> = (1..=6).map(|b| b as f64 / 6.0).collect();
        let n = 8;
        let values: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|a| {
                (0..2)
                    .map(|i| {
                        grid.iter()
                            .map(|t| ((a + 1) as f64 * t + i as f64).sin())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let ds = FunctionalDataset::new(vec![grid; n], values).unwrap();
        let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
        let coords = fit_coordinates(&ds, &basis, 0.05).unwrap();
        let d2 = pairwise_sq_distances(&coords, &basis, &[0, 1]).unwrap();
        let implied = crate::kernels::center_matrix(&(-0.5 * d2));
        let eigs = implied.symmetric_eigenvalues();
        let max = eigs.iter().fold(0.0_f64, |a, &b| a.max(b));
        assert!(eigs.iter().all(|&l| l >= -1e-8 * max.max(1e-300)));
    }
}

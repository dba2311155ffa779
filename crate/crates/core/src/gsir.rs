//! Per-pair nonlinear sufficient dimension reduction: second-level Gram
//! matrices over the node groups (i, j) and its complement, the regularized
//! eigenproblem, and the sufficient-predictor matrix it yields.

use nalgebra::DMatrix;

use crate::config::{DimensionRule, GcvDenominator};
use crate::error::{Error, Result};
use crate::funcrep::{pairwise_sq_distances, BasisGrid, CoordinateSet};
use crate::kernels::{
    frobenius_norm, gram_from_sq_distances, ridge_inverse, ridge_solve, sym_eigen_desc,
    BandwidthRule, GramMatrix, KernelChoice,
};

/// Centered Gram matrices for one node pair: over the pair's own nodes and
/// over the complement group.
#[derive(Debug, Clone)]
pub struct PairGrams {
    /// 0-based (i, j) with i < j.
    pub pair: (usize, usize),
    pub g_pair: GramMatrix,
    pub g_rest: GramMatrix,
    /// Bandwidths actually used (pair group, rest group).
    pub bandwidths: (f64, f64),
}

impl PairGrams {
    pub fn n(&self) -> usize {
        self.g_pair.n()
    }
}

/// Build both Gram matrices from precomputed squared-distance matrices.
pub fn pair_grams_from_sq_distances(
    pair: (usize, usize),
    d2_pair: &DMatrix<f64>,
    d2_rest: &DMatrix<f64>,
    kernel: &KernelChoice,
    rule: BandwidthRule,
) -> Result<PairGrams> {
    let spec_pair = kernel.resolve(d2_pair, rule)?;
    let spec_rest = kernel.resolve(d2_rest, rule)?;
    let g_pair = gram_from_sq_distances(&spec_pair, d2_pair)?;
    let g_rest = gram_from_sq_distances(&spec_rest, d2_rest)?;
    Ok(PairGrams { pair, g_pair, g_rest, bandwidths: (spec_pair.bandwidth, spec_rest.bandwidth) })
}

/// Build the second-level Gram matrices for a node pair (0-based, i < j).
pub fn build_pair_grams(
    coords: &CoordinateSet,
    basis: &BasisGrid,
    pair: (usize, usize),
    kernel: &KernelChoice,
    rule: BandwidthRule,
) -> Result<PairGrams> {
    let p = coords.p();
    let (i, j) = pair;
    if p < 3 {
        return Err(Error::validation(format!(
            "pair complement is empty: need p >= 3 nodes, got {p}"
        )));
    }
    if i >= j || j >= p {
        return Err(Error::validation(format!(
            "invalid pair ({}, {}) for p = {p}",
            i + 1,
            j + 1
        )));
    }
    let rest: Vec<usize> = (0..p).filter(|k| *k != i && *k != j).collect();
    let d2_pair = pairwise_sq_distances(coords, basis, &[i, j])?;
    let d2_rest = pairwise_sq_distances(coords, basis, &rest)?;
    pair_grams_from_sq_distances(pair, &d2_pair, &d2_rest, kernel, rule)
        .map_err(|e| e.with_context(format!("pair ({}, {})", i + 1, j + 1)))
}

/// The estimated sufficient predictors for one pair: row a holds the values
/// of the leading eigenfunctions at subject a.
#[derive(Debug, Clone)]
pub struct SufficientPredictors {
    pub pair: (usize, usize),
    /// n x d matrix of predictor values.
    pub u: DMatrix<f64>,
    /// Top-d eigenvalues, nonnegative and nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// The absolute ridge used, after the lambda_max reparameterization.
    pub epsilon_abs: f64,
}

fn gsir_matrix(grams: &PairGrams, epsilon_rel: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    if !(epsilon_rel > 0.0) {
        return Err(Error::validation(format!(
            "epsilon must be positive, got {epsilon_rel}"
        )));
    }
    let lambda = grams.g_rest.lambda_max();
    if lambda <= 1e-300 {
        return Err(Error::degenerate(
            "conditioning Gram matrix is zero; subjects are indistinguishable",
        ));
    }
    let eps = epsilon_rel * lambda;
    let rinv = ridge_inverse(grams.g_rest.centered(), eps)?;
    // A = (G- + eps I)^{-1} G-
    let a = &rinv * grams.g_rest.centered();
    let m = &a * grams.g_pair.centered() * a.transpose();
    let mut m_sym = m.clone();
    let n = m_sym.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m_sym[(r, c)] = v;
            m_sym[(c, r)] = v;
        }
    }
    Ok((m_sym, rinv, eps))
}

/// Solve the pair's regularized eigenproblem and evaluate the top-d
/// eigenfunctions at the sample points.
pub fn solve_gsir(grams: &PairGrams, d: usize, epsilon_rel: f64) -> Result<SufficientPredictors> {
    let n = grams.n();
    if d == 0 || d > n - 1 {
        return Err(Error::validation(format!(
            "predictor dimension d = {d} must lie in 1..= n-1 = {}",
            n - 1
        )));
    }
    let (m, rinv, eps) = gsir_matrix(grams, epsilon_rel)?;
    let (values, vectors) = sym_eigen_desc(&m)?;
    finish_solve(grams, d, values, vectors, rinv, eps)
}

/// As [`solve_gsir`], resolving the dimension from the spectrum when the
/// rule asks for an eigenvalue share.
pub fn solve_gsir_with_rule(
    grams: &PairGrams,
    rule: &DimensionRule,
    epsilon_rel: f64,
) -> Result<SufficientPredictors> {
    let n = grams.n();
    let (i, j) = grams.pair;
    if let Some(d) = rule.fixed_for_pair(i, j) {
        return solve_gsir(grams, d, epsilon_rel);
    }
    let share = match rule {
        DimensionRule::EigenvalueShare { share } => *share,
        _ => unreachable!("fixed rules handled above"),
    };
    let (m, rinv, eps) = gsir_matrix(grams, epsilon_rel)?;
    let (values, vectors) = sym_eigen_desc(&m)?;
    let trace: f64 = values.iter().map(|&l| l.max(0.0)).sum();
    let mut d = 1;
    let mut partial = 0.0;
    for (k, &l) in values.iter().enumerate() {
        partial += l.max(0.0);
        if partial >= share * trace || k + 1 >= n - 1 {
            d = k + 1;
            break;
        }
    }
    finish_solve(grams, d.min(n - 1).max(1), values, vectors, rinv, eps)
}

fn finish_solve(
    grams: &PairGrams,
    d: usize,
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    rinv: DMatrix<f64>,
    eps: f64,
) -> Result<SufficientPredictors> {
    let n = grams.n();
    let top = DMatrix::from_fn(n, d, |r, c| vectors[(r, c)]);
    // coefficients of the eigenfunctions, then evaluation at the sample
    let coefs = &rinv * top;
    let u = grams.g_rest.centered() * coefs;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite predictor values"));
    }
    let eigenvalues: Vec<f64> = values.iter().take(d).map(|&l| l.max(0.0)).collect();
    Ok(SufficientPredictors { pair: grams.pair, u, eigenvalues, epsilon_abs: eps })
}

/// Per-pair GCV(epsilon) contributions over a grid; `None` marks a grid value
/// whose criterion was not finite for this pair.
pub fn gcv_epsilon_contrib(
    grams: &PairGrams,
    grid: &[f64],
    denominator: GcvDenominator,
) -> Vec<Option<f64>> {
    let n = grams.n();
    let g_rest = grams.g_rest.centered();
    let g_pair = grams.g_pair.centered();
    let lambda = grams.g_rest.lambda_max();
    grid.iter()
        .map(|&eps_rel| {
            if !(eps_rel > 0.0) || lambda <= 1e-300 {
                return None;
            }
            let ridge = eps_rel * lambda;
            let solved_pair = ridge_solve(g_rest, ridge, g_pair).ok()?;
            let fitted = g_rest * solved_pair;
            let num = {
                let r = g_pair - fitted;
                let f = frobenius_norm(&r);
                f * f
            };
            let solved_self = ridge_solve(g_rest, ridge, g_rest).ok()?;
            let trace_part = (n as f64 - solved_self.trace()) / n as f64;
            let den = match denominator {
                GcvDenominator::PaperVerbatim => trace_part,
                GcvDenominator::Squared => trace_part * trace_part,
            };
            let v = num / den;
            (den > 0.0 && v.is_finite()).then_some(v)
        })
        .collect()
}

/// Global GCV selection of the relative epsilon across all pairs.
pub fn gcv_epsilon(
    all_grams: &[PairGrams],
    grid: &[f64],
    denominator: GcvDenominator,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::validation("epsilon grid must be nonempty"));
    }
    if all_grams.is_empty() {
        return Err(Error::validation("no pair Gram matrices supplied"));
    }
    let per_pair: Vec<Vec<Option<f64>>> = all_grams
        .iter()
        .map(|g| gcv_epsilon_contrib(g, grid, denominator))
        .collect();
    argmin_summed(grid, &per_pair, "GCV(epsilon)")
}

/// Sum per-pair grid contributions and pick the first finite minimum.
pub(crate) fn argmin_summed(
    grid: &[f64],
    per_pair: &[Vec<Option<f64>>],
    what: &str,
) -> Result<f64> {
    let mut best: Option<(usize, f64)> = None;
    for (gi, _) in grid.iter().enumerate() {
        let mut total = 0.0;
        let mut ok = true;
        for contrib in per_pair {
            match contrib[gi] {
                Some(v) => total += v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && total.is_finite() && best.map_or(true, |(_, b)| total < b) {
            best = Some((gi, total));
        }
    }
    match best {
        Some((gi, _)) => Ok(grid[gi]),
        None => Err(Error::tuning(format!("{what}: no grid value produced a finite score"))),
    }
}

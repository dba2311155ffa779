//! Third-level hybrid Gram matrices over (function, predictor) pairs, the
//! coordinate of the estimated conditional covariance operator, and its
//! Hilbert-Schmidt norm via the Gram-weighted Frobenius identity.

use nalgebra::DMatrix;

use crate::config::GcvDenominator;
use crate::error::{Error, Result};
use crate::funcrep::{node_sq_distances, BasisGrid, CoordinateSet};
use crate::gsir::{PairGrams, SufficientPredictors};
use crate::kernels::{
    frobenius_norm, gram_from_sq_distances, psd_sqrt_and_pinv_sqrt, ridge_solve, BandwidthRule,
    GramMatrix, KernelChoice, KernelSpec,
};

/// Gram matrices of the product kernels on (X^i, U), (X^j, U), and of the
/// predictor kernel on U alone.
#[derive(Debug, Clone)]
pub struct HybridGrams {
    /// 0-based (i, j) with i < j.
    pub pair: (usize, usize),
    pub h_i: GramMatrix,
    pub h_j: GramMatrix,
    pub h_u: GramMatrix,
    /// Bandwidths actually used (node i, node j, predictors).
    pub bandwidths: (f64, f64, f64),
    /// Predictor dimension behind `h_u`.
    pub d_used: usize,
}

/// One pair's conditional-dependence score.
#[derive(Debug, Clone, PartialEq)]
pub struct CccoScore {
    /// 0-based (i, j) with i < j.
    pub pair: (usize, usize),
    pub hs_norm: f64,
    /// The same statistic with the roles of i and j swapped, when requested.
    pub hs_swapped: Option<f64>,
    /// Absolute ridge used in the conditioning term.
    pub delta_abs: f64,
    pub d_used: usize,
}

/// Squared Euclidean distances between predictor rows, optionally after
/// scaling each column to unit variance.
pub fn predictor_sq_distances(u: &DMatrix<f64>, standardize: bool) -> DMatrix<f64> {
    let n = u.nrows();
    let d = u.ncols();
    let mut scaled = u.clone();
    if standardize {
        for c in 0..d {
            let col = u.column(c);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            if sd > 1e-300 {
                for r in 0..n {
                    scaled[(r, c)] /= sd;
                }
            }
        }
    }
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in (a + 1)..n {
            let mut s = 0.0;
            for c in 0..d {
                let diff = scaled[(a, c)] - scaled[(b, c)];
                s += diff * diff;
            }
            out[(a, b)] = s;
            out[(b, a)] = s;
        }
    }
    out
}

/// Resolve an auto kernel, treating all-zero distances as a unit bandwidth:
/// the kernel is constant there for any bandwidth.
fn resolve_lenient(
    choice: &KernelChoice,
    d2: &DMatrix<f64>,
    rule: BandwidthRule,
) -> Result<KernelSpec> {
    match choice.resolve(d2, rule) {
        Ok(spec) => Ok(spec),
        Err(Error::DegenerateData(_)) => match choice {
            KernelChoice::Auto { auto } => Ok(KernelSpec { family: *auto, bandwidth: 1.0 }),
            KernelChoice::Fixed(spec) => Ok(*spec),
        },
        Err(e) => Err(e),
    }
}

/// The predictor Gram alone (the conditioning block of the hybrid triple).
pub fn predictor_gram(
    predictors: &SufficientPredictors,
    kernel: &KernelChoice,
    rule: BandwidthRule,
    standardize: bool,
) -> Result<(GramMatrix, f64)> {
    let d2_u = predictor_sq_distances(&predictors.u, standardize);
    let spec = resolve_lenient(kernel, &d2_u, rule)?;
    Ok((gram_from_sq_distances(&spec, &d2_u)?, spec.bandwidth))
}

/// Build the three hybrid Grams from precomputed node distance matrices.
pub fn hybrid_grams_from_sq_distances(
    d2_i: &DMatrix<f64>,
    d2_j: &DMatrix<f64>,
    predictors: &SufficientPredictors,
    kernel: &KernelChoice,
    rule: BandwidthRule,
    standardize: bool,
) -> Result<HybridGrams> {
    let n = predictors.u.nrows();
    if d2_i.nrows() != n || d2_j.nrows() != n {
        return Err(Error::validation(format!(
            "distance matrices are {}x{} and {}x{} but predictors have {} rows",
            d2_i.nrows(),
            d2_i.ncols(),
            d2_j.nrows(),
            d2_j.ncols(),
            n
        )));
    }
    let d2_u = predictor_sq_distances(&predictors.u, standardize);
    let spec_u = resolve_lenient(kernel, &d2_u, rule)?;
    let spec_i = resolve_lenient(kernel, d2_i, rule)?;
    let spec_j = resolve_lenient(kernel, d2_j, rule)?;

    let k_u = gram_from_sq_distances(&spec_u, &d2_u)?;
    let raw_u = k_u.raw();

    // product kernels: elementwise product of the function kernel and the
    // predictor kernel
    let product = |spec: &KernelSpec, d2: &DMatrix<f64>| -> Result<GramMatrix> {
        let mut raw = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = spec.eval_sq_dist(d2[(a, b)].max(0.0))? * raw_u[(a, b)];
                raw[(a, b)] = v;
                raw[(b, a)] = v;
            }
        }
        GramMatrix::from_raw(raw)
    };
    let h_i = product(&spec_i, d2_i)?;
    let h_j = product(&spec_j, d2_j)?;

    Ok(HybridGrams {
        pair: predictors.pair,
        h_i,
        h_j,
        h_u: k_u,
        bandwidths: (spec_i.bandwidth, spec_j.bandwidth, spec_u.bandwidth),
        d_used: predictors.u.ncols(),
    })
}

/// Build the hybrid Grams for a pair from first-level coordinates.
pub fn build_hybrid_grams(
    coords: &CoordinateSet,
    basis: &BasisGrid,
    predictors: &SufficientPredictors,
    kernel: &KernelChoice,
    rule: BandwidthRule,
    standardize: bool,
) -> Result<HybridGrams> {
    let (i, j) = predictors.pair;
    if coords.n() != predictors.u.nrows() {
        return Err(Error::validation("coordinate set and predictors disagree on n"));
    }
    let d2_i = node_sq_distances(coords, basis, i);
    let d2_j = node_sq_distances(coords, basis, j);
    hybrid_grams_from_sq_distances(&d2_i, &d2_j, predictors, kernel, rule, standardize)
        .map_err(|e| e.with_context(format!("pair ({}, {})", i + 1, j + 1)))
}

/// Coordinate of the estimated conditional covariance operator:
/// H_j - H_u (H_u + delta I)^{-1} H_j with delta = delta_rel * lambda_max(H_u).
pub fn ccco_coordinate(h: &HybridGrams, delta_rel: f64) -> Result<DMatrix<f64>> {
    coordinate_parts(h.h_u.centered(), h.h_j.centered(), delta_rel, h.h_u.lambda_max())
        .map(|(c, _)| c)
}

fn coordinate_parts(
    h_u: &DMatrix<f64>,
    h_target: &DMatrix<f64>,
    delta_rel: f64,
    lambda_u: f64,
) -> Result<(DMatrix<f64>, f64)> {
    if !(delta_rel > 0.0) {
        return Err(Error::validation(format!("delta must be positive, got {delta_rel}")));
    }
    if lambda_u <= 1e-300 {
        // no conditioning information: the correction term vanishes
        return Ok((h_target.clone(), 0.0));
    }
    let delta = delta_rel * lambda_u;
    let solved = ridge_solve(h_u, delta, h_target)?;
    Ok((h_target - h_u * solved, delta))
}

/// Hilbert-Schmidt norm of the operator with the given coordinate:
/// the Frobenius norm of H_i^{1/2} C H_j^{+1/2}.
pub fn hs_norm(h: &HybridGrams, coordinate: &DMatrix<f64>) -> Result<f64> {
    hs_norm_parts(h.h_i.centered(), h.h_j.centered(), coordinate)
}

/// Matrix-level form of [`hs_norm`]: `g_out` weights the output space and
/// `g_in` the input space of the coordinate.
pub fn hs_norm_parts(
    g_out: &DMatrix<f64>,
    g_in: &DMatrix<f64>,
    coordinate: &DMatrix<f64>,
) -> Result<f64> {
    let (sqrt_out, _) = psd_sqrt_and_pinv_sqrt(g_out)?;
    let (_, pinv_in) = psd_sqrt_and_pinv_sqrt(g_in)?;
    let prod = &sqrt_out * coordinate * pinv_in;
    let norm = frobenius_norm(&prod);
    if !norm.is_finite() {
        return Err(Error::numerical(format!(
            "non-finite HS norm (lambda_max out {:.3e}, in {:.3e})",
            g_out.symmetric_eigenvalues().iter().fold(0.0_f64, |m, &v| m.max(v)),
            g_in.symmetric_eigenvalues().iter().fold(0.0_f64, |m, &v| m.max(v)),
        )));
    }
    Ok(norm)
}

/// Score one pair, optionally also computing the role-swapped statistic.
pub fn score_pair(h: &HybridGrams, delta_rel: f64, with_swap: bool) -> Result<CccoScore> {
    let lambda_u = h.h_u.lambda_max();
    let (coord, delta_abs) =
        coordinate_parts(h.h_u.centered(), h.h_j.centered(), delta_rel, lambda_u)?;
    let (sqrt_i, pinv_i) = psd_sqrt_and_pinv_sqrt(h.h_i.centered())?;
    let (sqrt_j, pinv_j) = psd_sqrt_and_pinv_sqrt(h.h_j.centered())?;
    let hs = frobenius_norm(&(&sqrt_i * &coord * &pinv_j));
    if !hs.is_finite() {
        return Err(Error::numerical(format!(
            "non-finite HS norm for pair ({}, {}) (lambda_max H_i {:.3e}, H_j {:.3e}, H_u {:.3e})",
            h.pair.0 + 1,
            h.pair.1 + 1,
            h.h_i.lambda_max(),
            h.h_j.lambda_max(),
            lambda_u,
        )));
    }
    let hs_swapped = if with_swap {
        let (coord_sw, _) =
            coordinate_parts(h.h_u.centered(), h.h_i.centered(), delta_rel, lambda_u)?;
        let v = frobenius_norm(&(&sqrt_j * &coord_sw * &pinv_i));
        if !v.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite swapped HS norm for pair ({}, {})",
                h.pair.0 + 1,
                h.pair.1 + 1
            )));
        }
        Some(v)
    } else {
        None
    };
    Ok(CccoScore { pair: h.pair, hs_norm: hs, hs_swapped, delta_abs, d_used: h.d_used })
}

/// Per-pair GCV(delta) contributions over a grid; the criterion regresses the
/// pair Gram on the predictor Gram.
pub fn gcv_delta_contrib(
    h_u: &GramMatrix,
    g_pair: &GramMatrix,
    grid: &[f64],
    denominator: GcvDenominator,
) -> Vec<Option<f64>> {
    let n = h_u.n();
    let hu = h_u.centered();
    let gp = g_pair.centered();
    let lambda = h_u.lambda_max();
    grid.iter()
        .map(|&delta_rel| {
            if !(delta_rel > 0.0) || lambda <= 1e-300 {
                return None;
            }
            let ridge = delta_rel * lambda;
            let solved_pair = ridge_solve(hu, ridge, gp).ok()?;
            let fitted = hu * solved_pair;
            let num = {
                let f = frobenius_norm(&(gp - fitted));
                f * f
            };
            let solved_self = ridge_solve(hu, ridge, hu).ok()?;
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

/// Global GCV selection of the relative delta across all pairs.
pub fn gcv_delta(
    hybrids: &[HybridGrams],
    pair_grams: &[PairGrams],
    grid: &[f64],
    denominator: GcvDenominator,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::validation("delta grid must be nonempty"));
    }
    if hybrids.len() != pair_grams.len() || hybrids.is_empty() {
        return Err(Error::validation("hybrid and pair Gram collections must match"));
    }
    let per_pair: Vec<Vec<Option<f64>>> = hybrids
        .iter()
        .zip(pair_grams)
        .map(|(h, g)| gcv_delta_contrib(&h.h_u, &g.g_pair, grid, denominator))
        .collect();
    crate::gsir::argmin_summed(grid, &per_pair, "GCV(delta)")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_predictors(n: usize, d: usize, seed: u64) -> SufficientPredictors {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut u = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        for c in 0..d {
            let mean = u.column(c).sum() / n as f64;
            for r in 0..n {
                u[(r, c)] -= mean;
            }
        }
        SufficientPredictors { pair: (0, 1), u, eigenvalues: vec![1.0; d], epsilon_abs: 0.1 }
    }

    fn random_sq_dists(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        let pts: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        DMatrix::from_fn(n, n, |a, b| (pts[a] - pts[b]) * (pts[a] - pts[b]))
    }

    #[test]
    fn constant_predictors_reduce_h_i_to_node_kernel() {
        let n = 6;
        let predictors = SufficientPredictors {
            pair: (0, 1),
            u: DMatrix::from_element(n, 2, 0.7),
            eigenvalues: vec![1.0, 0.5],
            epsilon_abs: 0.1,
        };
        let d2 = random_sq_dists(n, 1);
        let h = hybrid_grams_from_sq_distances(
            &d2,
            &d2,
            &predictors,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
            true,
        )
        .unwrap();
        assert!(h.h_u.raw().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        let spec = KernelSpec { family: crate::kernels::KernelFamily::GaussianRbf, bandwidth: h.bandwidths.0 };
        let expected = gram_from_sq_distances(&spec, &d2).unwrap();
        assert!((h.h_i.raw() - expected.raw()).abs().max() < 1e-14);
    }

    #[test]
    fn identical_node_functions_reduce_h_i_to_predictor_kernel() {
        let n = 6;
        let predictors = random_predictors(n, 2, 2);
        let zeros = DMatrix::zeros(n, n);
        let d2_j = random_sq_dists(n, 3);
        let h = hybrid_grams_from_sq_distances(
            &zeros,
            &d2_j,
            &predictors,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
            false,
        )
        .unwrap();
        assert!((h.h_i.raw() - h.h_u.raw()).abs().max() < 1e-14);
    }

    #[test]
    fn product_gram_is_psd() {
        let n = 10;
        let predictors = random_predictors(n, 3, 4);
        let h = hybrid_grams_from_sq_distances(
            &random_sq_dists(n, 5),
            &random_sq_dists(n, 6),
            &predictors,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
            true,
        )
        .unwrap();
        for m in [h.h_i.raw(), h.h_j.raw(), h.h_u.raw()] {
            let eig = m.symmetric_eigenvalues();
            let max = eig.iter().fold(0.0_f64, |a, &b| a.max(b));
            assert!(eig.iter().all(|&l| l >= -1e-10 * max), "not PSD");
        }
    }

    #[test]
    fn zero_conditioning_gram_returns_target() {
        let n = 5;
        let predictors = SufficientPredictors {
            pair: (0, 1),
            u: DMatrix::zeros(n, 2),
            eigenvalues: vec![0.0, 0.0],
            epsilon_abs: 0.1,
        };
        let d2_j = random_sq_dists(n, 7);
        let h = hybrid_grams_from_sq_distances(
            &random_sq_dists(n, 8),
            &d2_j,
            &predictors,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
            true,
        )
        .unwrap();
        // H_u raw is all ones, so centered H_u = 0: no conditioning correction
        let coord = ccco_coordinate(&h, 0.01).unwrap();
        assert!((coord - h.h_j.centered()).abs().max() < 1e-12);
    }

    #[test]
    fn huge_delta_washes_out_the_correction() {
        let n = 8;
        let predictors = random_predictors(n, 2, 9);
        let h = hybrid_grams_from_sq_distances(
            &random_sq_dists(n, 10),
            &random_sq_dists(n, 11),
            &predictors,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
            true,
        )
        .unwrap();
        let coord = ccco_coordinate(&h, 1e12).unwrap();
        assert!((coord - h.h_j.centered()).abs().max() < 1e-8 * h.h_j.lambda_max());
    }

    #[test]
    fn ridge_correction_identity_holds() {
        // G - G (G + dI)^{-1} G = d G (G + dI)^{-1}
        let n = 7;
        let predictors = random_predictors(n, 2, 12);
        let d2 = random_sq_dists(n, 13);
        let h = hybrid_grams_from_sq_distances(
            &d2,
            &d2,
            &predictors,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
            true,
        )
        .unwrap();
        let g = h.h_u.centered();
        let delta = 0.05 * h.h_u.lambda_max();
        let lhs = g - g * ridge_solve(g, delta, g).unwrap();
        let rhs = ridge_solve(g, delta, g).unwrap() * delta;
        assert!((lhs - rhs).abs().max() < 1e-8 * h.h_u.lambda_max());
    }

    #[test]
    fn zero_coordinate_scores_zero() {
        let n = 6;
        let predictors = random_predictors(n, 2, 14);
        let h = hybrid_grams_from_sq_distances(
            &random_sq_dists(n, 15),
            &random_sq_dists(n, 16),
            &predictors,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
            true,
        )
        .unwrap();
        assert_eq!(hs_norm(&h, &DMatrix::zeros(n, n)).unwrap(), 0.0);
    }

    #[test]
    fn frobenius_of_diagonal_under_identity_grams() {
        let mut coord = DMatrix::zeros(5, 5);
        coord[(0, 0)] = 3.0;
        coord[(1, 1)] = 4.0;
        let id = DMatrix::identity(5, 5);
        let hs = hs_norm_parts(&id, &id, &coord).unwrap();
        assert!((hs - 5.0).abs() < 1e-12);
    }

    #[test]
    fn swap_diagnostic_is_computed() {
        let n = 9;
        let predictors = random_predictors(n, 2, 17);
        let h = hybrid_grams_from_sq_distances(
            &random_sq_dists(n, 18),
            &random_sq_dists(n, 19),
            &predictors,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
            true,
        )
        .unwrap();
        let score = score_pair(&h, 0.01, true).unwrap();
        assert!(score.hs_norm >= 0.0);
        let sw = score.hs_swapped.unwrap();
        assert!(sw >= 0.0 && sw.is_finite());
        // the two orientations agree on order of magnitude for generic data
        assert!(sw < 100.0 * score.hs_norm + 1.0);
    }

    #[test]
    fn hs_invariant_under_subject_permutation() {
        let n = 8;
        let predictors = random_predictors(n, 2, 20);
        let d2i = random_sq_dists(n, 21);
        let d2j = random_sq_dists(n, 22);
        let h = hybrid_grams_from_sq_distances(
            &d2i,
            &d2j,
            &predictors,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
            true,
        )
        .unwrap();
        let coord = ccco_coordinate(&h, 0.01).unwrap();
        let base = hs_norm(&h, &coord).unwrap();

        let perm: Vec<usize> = (0..n).map(|a| (a + 5) % n).collect();
        let pm = |m: &DMatrix<f64>| DMatrix::from_fn(n, n, |r, c| m[(perm[r], perm[c])]);
        let mut pu = DMatrix::zeros(n, 2);
        for r in 0..n {
            for c in 0..2 {
                pu[(r, c)] = predictors.u[(perm[r], c)];
            }
        }
        let ppred = SufficientPredictors {
            pair: (0, 1),
            u: pu,
            eigenvalues: predictors.eigenvalues.clone(),
            epsilon_abs: predictors.epsilon_abs,
        };
        let hp = hybrid_grams_from_sq_distances(
            &pm(&d2i),
            &pm(&d2j),
            &ppred,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
            true,
        )
        .unwrap();
        let coord_p = ccco_coordinate(&hp, 0.01).unwrap();
        let permuted = hs_norm(&hp, &coord_p).unwrap();
        assert!((base - permuted).abs() < 1e-8 * (1.0 + base));
    }

    #[test]
    fn dependent_pairs_score_above_independent_pairs() {
        // Monte Carlo separation at n = 200: scoring (X, Y) with Y a noisy
        // function of X dominates scoring an independent Y, for the same
        // independent conditioning predictors
        let n = 200;
        let mut gaps = Vec::new();
        for seed in 0..20u64 {
            let mut rng = StdRng::seed_from_u64(3000 + seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y_ind: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y_dep: Vec<f64> =
                x.iter().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect();
            let predictors = random_predictors(n, 2, 9000 + seed);
            let d2 = |pts: &[f64]| {
                DMatrix::from_fn(n, n, |a, b| (pts[a] - pts[b]) * (pts[a] - pts[b]))
            };
            let score = |y: &[f64]| {
                let h = hybrid_grams_from_sq_distances(
                    &d2(&x),
                    &d2(y),
                    &predictors,
                    &KernelChoice::default(),
                    BandwidthRule::InverseMedian,
                    true,
                )
                .unwrap();
                score_pair(&h, 0.01, false).unwrap().hs_norm
            };
            gaps.push(score(&y_dep) - score(&y_ind));
        }
        gaps.sort_by(f64::total_cmp);
        let median = gaps[gaps.len() / 2];
        assert!(median > 0.0, "median dependent-minus-independent gap {median}");
    }

    #[test]
    fn gcv_delta_single_grid_value() {
        let n = 8;
        let predictors = random_predictors(n, 2, 23);
        let d2i = random_sq_dists(n, 24);
        let d2j = random_sq_dists(n, 25);
        let h = hybrid_grams_from_sq_distances(
            &d2i,
            &d2j,
            &predictors,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
            true,
        )
        .unwrap();
        let g = crate::gsir::pair_grams_from_sq_distances(
            (0, 1),
            &(&d2i + &d2j),
            &d2i,
            &KernelChoice::default(),
            BandwidthRule::InverseMedian,
        )
        .unwrap();
        assert_eq!(
            gcv_delta(&[h], &[g], &[0.02], GcvDenominator::PaperVerbatim).unwrap(),
            0.02
        );
        let _ = DVector::<f64>::zeros(1);
    }
}

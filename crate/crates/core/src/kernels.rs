//! Positive kernels, Gram matrices, double centering, bandwidth heuristics,
//! and the regularized / pseudo-inverse matrix primitives shared by the
//! rest of the pipeline.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff below which `psd_pinv_sqrt` treats a mode as zero.
pub const DEFAULT_PINV_REL_TOL: f64 = 1e-9;

/// Eigenvalues below `-1e-6 * lambda_max` mean the input is not a roundoff-PSD matrix.
const INDEFINITE_REL_TOL: f64 = 1e-6;

// =============================================================================
// Kernel specification
// =============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// min(u1, u2) on nonnegative scalars; no bandwidth.
    BrownianMotion,
    /// exp(-gamma * d^2)
    GaussianRbf,
    /// exp(-gamma * d)
    LaplacianRbf,
}

/// A positive kernel together with its bandwidth (ignored for Brownian motion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
}

fn default_bandwidth() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn brownian() -> Self {
        KernelSpec { family: KernelFamily::BrownianMotion, bandwidth: 1.0 }
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if bandwidth <= 0.0 || !bandwidth.is_finite() {
            return Err(Error::validation(format!(
                "gaussian kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec { family: KernelFamily::GaussianRbf, bandwidth })
    }

    pub fn laplacian(bandwidth: f64) -> Result<Self> {
        if bandwidth <= 0.0 || !bandwidth.is_finite() {
            return Err(Error::validation(format!(
                "laplacian kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec { family: KernelFamily::LaplacianRbf, bandwidth })
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::BrownianMotion => Ok(()),
            _ if self.bandwidth > 0.0 && self.bandwidth.is_finite() => Ok(()),
            _ => Err(Error::validation(format!(
                "RBF kernel requires a positive finite bandwidth, got {}",
                self.bandwidth
            ))),
        }
    }

    /// Kernel value from a squared distance in the underlying space.
    ///
    /// Only defined for the radial families; the Brownian motion kernel is not
    /// a function of distance and goes through [`KernelSpec::eval_time_pair`].
    pub fn eval_sq_dist(&self, sq_dist: f64) -> Result<f64> {
        if sq_dist < 0.0 {
            return Err(Error::validation(format!(
                "squared distance must be nonnegative, got {sq_dist}"
            )));
        }
        match self.family {
            KernelFamily::GaussianRbf => Ok((-self.bandwidth * sq_dist).exp()),
            KernelFamily::LaplacianRbf => Ok((-self.bandwidth * sq_dist.sqrt()).exp()),
            KernelFamily::BrownianMotion => Err(Error::validation(
                "brownian motion kernel is evaluated on time points, not distances",
            )),
        }
    }

    /// Kernel value on a pair of scalar time points.
    pub fn eval_time_pair(&self, u1: f64, u2: f64) -> Result<f64> {
        match self.family {
            KernelFamily::BrownianMotion => {
                if u1 < 0.0 || u2 < 0.0 {
                    return Err(Error::validation(format!(
                        "brownian motion kernel requires nonnegative time points, got ({u1}, {u2})"
                    )));
                }
                Ok(u1.min(u2))
            }
            _ => self.eval_sq_dist((u1 - u2) * (u1 - u2)),
        }
    }
}

/// A kernel that is either fully specified or auto-tuned from the pairwise
/// distances it will be applied to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelChoice {
    /// `{"auto": "gaussian_rbf"}`
    Auto { auto: KernelFamily },
    /// `{"family": "gaussian_rbf", "bandwidth": 2.0}`
    Fixed(KernelSpec),
}

impl Default for KernelChoice {
    fn default() -> Self {
        KernelChoice::Auto { auto: KernelFamily::GaussianRbf }
    }
}

impl KernelChoice {
    /// Resolve to a concrete spec, computing the bandwidth from the given
    /// squared distances when auto.
    pub fn resolve(&self, sq_dists: &DMatrix<f64>, rule: BandwidthRule) -> Result<KernelSpec> {
        match self {
            KernelChoice::Fixed(spec) => {
                spec.validate()?;
                if spec.family == KernelFamily::BrownianMotion {
                    return Err(Error::validation(
                        "brownian motion kernel cannot be applied to Hilbert-space distances",
                    ));
                }
                Ok(*spec)
            }
            KernelChoice::Auto { auto } => {
                if *auto == KernelFamily::BrownianMotion {
                    return Err(Error::validation(
                        "brownian motion kernel has no bandwidth to auto-tune",
                    ));
                }
                let gamma = auto_bandwidth(sq_dists, rule)?;
                Ok(KernelSpec { family: *auto, bandwidth: gamma })
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelChoice::Fixed(spec) => spec.validate(),
            KernelChoice::Auto { auto } => {
                if *auto == KernelFamily::BrownianMotion {
                    Err(Error::validation(
                        "brownian motion kernel has no bandwidth to auto-tune",
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }
}

// =============================================================================
// Bandwidth heuristics
// =============================================================================

/// Rule mapping a matrix of pairwise squared distances to an RBF bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// gamma = 1 / median of the strictly positive squared distances.
    /// Robust to the heavy-tailed node functions that the structural models
    /// produce; the default.
    #[default]
    InverseMedian,
    /// gamma = C(n,2) / sum of squared distances; the mean-based heuristic.
    InverseMean,
    /// gamma = C(n,2)^2 / sum of squared distances, exactly as printed.
    /// At n >= 100 this drives every RBF Gram toward the identity; kept
    /// selectable for fidelity experiments.
    PaperVerbatim,
}

/// Bandwidth from pairwise squared distances under the given rule.
///
/// Errors with [`Error::DegenerateData`] when every off-diagonal distance is
/// zero (the bandwidth is undefined on constant samples).
pub fn auto_bandwidth(sq_dists: &DMatrix<f64>, rule: BandwidthRule) -> Result<f64> {
    let n = sq_dists.nrows();
    if n < 2 || sq_dists.ncols() != n {
        return Err(Error::validation(format!(
            "need a square matrix with n >= 2 rows, got {}x{}",
            sq_dists.nrows(),
            sq_dists.ncols()
        )));
    }
    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            upper.push(sq_dists[(a, b)]);
        }
    }
    let sum: f64 = upper.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return Err(Error::degenerate(
            "all pairwise distances are zero; bandwidth undefined",
        ));
    }
    let pairs = upper.len() as f64;
    let gamma = match rule {
        BandwidthRule::InverseMean => pairs / sum,
        BandwidthRule::PaperVerbatim => pairs * pairs / sum,
        BandwidthRule::InverseMedian => {
            let mut pos: Vec<f64> = upper.iter().copied().filter(|&d| d > 0.0).collect();
            pos.sort_by(f64::total_cmp);
            let med = if pos.len() % 2 == 1 {
                pos[pos.len() / 2]
            } else {
                0.5 * (pos[pos.len() / 2 - 1] + pos[pos.len() / 2])
            };
            1.0 / med
        }
    };
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::numerical(format!("non-finite bandwidth {gamma}")));
    }
    Ok(gamma)
}

// =============================================================================
// Gram matrices
// =============================================================================

/// An n x n kernel matrix plus its double-centered version Qn K Qn.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    raw: DMatrix<f64>,
    centered: DMatrix<f64>,
    lambda_max: OnceLock<f64>,
}

impl GramMatrix {
    /// Wrap a raw kernel matrix, validating symmetry and centering it.
    pub fn from_raw(raw: DMatrix<f64>) -> Result<Self> {
        let n = raw.nrows();
        if raw.ncols() != n || n == 0 {
            return Err(Error::validation(format!(
                "gram matrix must be square and nonempty, got {}x{}",
                raw.nrows(),
                raw.ncols()
            )));
        }
        let scale = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        for a in 0..n {
            for b in (a + 1)..n {
                if (raw[(a, b)] - raw[(b, a)]).abs() > 1e-8 * scale {
                    return Err(Error::validation(format!(
                        "gram matrix is asymmetric at ({a}, {b})"
                    )));
                }
            }
        }
        let centered = center_matrix(&raw);
        Ok(GramMatrix { raw, centered, lambda_max: OnceLock::new() })
    }

    pub fn n(&self) -> usize {
        self.raw.nrows()
    }

    pub fn raw(&self) -> &DMatrix<f64> {
        &self.raw
    }

    /// Qn K Qn; every row and column sums to zero.
    pub fn centered(&self) -> &DMatrix<f64> {
        &self.centered
    }

    /// Largest eigenvalue of the centered matrix, clipped at zero. Cached.
    pub fn lambda_max(&self) -> f64 {
        *self.lambda_max.get_or_init(|| {
            self.centered
                .symmetric_eigenvalues()
                .iter()
                .fold(0.0_f64, |m, &v| m.max(v))
        })
    }
}

/// Assemble a [`GramMatrix`] by mapping a squared-distance matrix through an
/// RBF kernel.
pub fn gram_from_sq_distances(spec: &KernelSpec, sq_dists: &DMatrix<f64>) -> Result<GramMatrix> {
    spec.validate()?;
    let n = sq_dists.nrows();
    if sq_dists.ncols() != n || n == 0 {
        return Err(Error::validation(format!(
            "squared-distance matrix must be square and nonempty, got {}x{}",
            sq_dists.nrows(),
            sq_dists.ncols()
        )));
    }
    let scale = sq_dists.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut raw = DMatrix::zeros(n, n);
    for a in 0..n {
        if sq_dists[(a, a)].abs() > 1e-10 * scale || sq_dists[(a, a)] < 0.0 {
            return Err(Error::validation(format!(
                "squared-distance matrix must have a zero diagonal, got {} at ({a}, {a})",
                sq_dists[(a, a)]
            )));
        }
        raw[(a, a)] = spec.eval_sq_dist(0.0)?;
        for b in (a + 1)..n {
            let d = sq_dists[(a, b)];
            let dt = sq_dists[(b, a)];
            if (d - dt).abs() > 1e-8 * scale {
                return Err(Error::validation(format!(
                    "squared-distance matrix is asymmetric at ({a}, {b})"
                )));
            }
            if d < -1e-10 * scale {
                return Err(Error::validation(format!(
                    "negative squared distance {d} at ({a}, {b})"
                )));
            }
            let v = spec.eval_sq_dist(d.max(0.0))?;
            raw[(a, b)] = v;
            raw[(b, a)] = v;
        }
    }
    GramMatrix::from_raw(raw)
}

/// Double centering: K - row means - column means + grand mean.
///
/// Equals Qn K Qn for Qn = I - 1 1^T / n, and is exactly symmetric for
/// symmetric input.
pub fn center_matrix(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let mut means = vec![0.0; n];
    for a in 0..n {
        means[a] = k.row(a).sum() / n as f64;
    }
    let grand: f64 = means.iter().sum::<f64>() / n as f64;
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            out[(a, b)] = k[(a, b)] - means[a] - means[b] + grand;
        }
    }
    out
}

// =============================================================================
// Symmetric matrix primitives
// =============================================================================

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and a deterministic sign convention: in each eigenvector
/// the entry of largest magnitude (first such index on ties) is positive.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::validation("eigendecomposition requires a square matrix"));
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite eigenvalue"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        let mut best = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                pivot = i;
            }
        }
        let flip = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, dst)] = flip * col[i];
        }
    }
    Ok((values, vectors))
}

fn check_square_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n || n == 0 {
        return Err(Error::validation(format!(
            "{what} requires a square nonempty matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().fold(0.0_f64, |mx, v| mx.max(v.abs())).max(1e-300);
    for a in 0..n {
        for b in (a + 1)..n {
            if (m[(a, b)] - m[(b, a)]).abs() > 1e-8 * scale {
                return Err(Error::validation(format!("{what}: matrix asymmetric at ({a}, {b})")));
            }
        }
    }
    Ok(())
}

/// (M + ridge I)^{-1} for a symmetric PSD matrix, via Cholesky with a
/// symmetric-eigendecomposition fallback.
pub fn ridge_inverse(m: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    check_square_symmetric(m, "ridge_inverse")?;
    if !(ridge.is_finite() && ridge > 0.0) {
        return Err(Error::validation(format!("ridge must be positive, got {ridge}")));
    }
    let n = m.nrows();
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] += ridge;
    }
    let inv = match shifted.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => {
            let (values, vectors) = sym_eigen_desc(m)?;
            if values.iter().any(|&l| l + ridge <= 0.0) {
                return Err(Error::numerical(
                    "matrix too indefinite for the requested ridge",
                ));
            }
            let scaled = DMatrix::from_fn(n, n, |r, c| vectors[(r, c)] / (values[c] + ridge));
            &scaled * vectors.transpose()
        }
    };
    Ok(symmetrize(inv))
}

/// Solve (M + ridge I) X = B for symmetric PSD M.
pub fn ridge_solve(m: &DMatrix<f64>, ridge: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !(ridge.is_finite() && ridge > 0.0) {
        return Err(Error::validation(format!("ridge must be positive, got {ridge}")));
    }
    if b.nrows() != m.nrows() {
        return Err(Error::validation("ridge_solve: shape mismatch"));
    }
    let n = m.nrows();
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] += ridge;
    }
    match shifted.clone().cholesky() {
        Some(chol) => Ok(chol.solve(b)),
        None => Ok(ridge_inverse(m, ridge)? * b),
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m;
    for a in 0..n {
        for b in (a + 1)..n {
            let v = 0.5 * (out[(a, b)] + out[(b, a)]);
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_square_symmetric(m, what)?;
    let (values, vectors) = sym_eigen_desc(m)?;
    let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);
    if let Some(&min) = values.last() {
        if min < -INDEFINITE_REL_TOL * lambda_max.max(1e-300) {
            return Err(Error::validation(format!(
                "{what}: matrix is strongly indefinite (min eigenvalue {min:.3e}, max {lambda_max:.3e})"
            )));
        }
    }
    Ok((values, vectors))
}

/// Symmetric PSD square root; negative roundoff eigenvalues are clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = psd_eigen(m, "psd_sqrt")?;
    let n = m.nrows();
    let scaled = DMatrix::from_fn(n, n, |r, c| vectors[(r, c)] * values[c].max(0.0).sqrt());
    Ok(symmetrize(&scaled * vectors.transpose()))
}

/// (M^+)^{1/2}: eigenvalues at or below `rel_tol * lambda_max` map to zero,
/// the rest to lambda^{-1/2}.
pub fn psd_pinv_sqrt(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = psd_eigen(m, "psd_pinv_sqrt")?;
    let n = m.nrows();
    let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);
    let cut = rel_tol * lambda_max;
    let scaled = DMatrix::from_fn(n, n, |r, c| {
        let l = values[c];
        if l > cut && l > 0.0 {
            vectors[(r, c)] / l.sqrt()
        } else {
            0.0
        }
    });
    Ok(symmetrize(&scaled * vectors.transpose()))
}

/// Both psd_sqrt and psd_pinv_sqrt (at the default cutoff) from a single
/// eigendecomposition.
pub fn psd_sqrt_and_pinv_sqrt(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (values, vectors) = psd_eigen(m, "psd_sqrt_and_pinv_sqrt")?;
    let n = m.nrows();
    let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);
    let cut = DEFAULT_PINV_REL_TOL * lambda_max;
    let sqrt_scaled = DMatrix::from_fn(n, n, |r, c| vectors[(r, c)] * values[c].max(0.0).sqrt());
    let pinv_scaled = DMatrix::from_fn(n, n, |r, c| {
        let l = values[c];
        if l > cut && l > 0.0 {
            vectors[(r, c)] / l.sqrt()
        } else {
            0.0
        }
    });
    let vt = vectors.transpose();
    Ok((symmetrize(&sqrt_scaled * &vt), symmetrize(&pinv_scaled * &vt)))
}

pub fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Column-wise helper used by eigenproblem consumers.
pub fn columns_to_vectors(m: &DMatrix<f64>, count: usize) -> Vec<DVector<f64>> {
    (0..count).map(|k| m.column(k).into_owned()).collect()
}

// =============================================================================
// Tests
// =============================================================================

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn gaussian_at_zero_distance_is_one() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert_eq!(k.eval_sq_dist(0.0).unwrap(), 1.0);
    }

    #[test]
    fn brownian_is_min_of_time_points() {
        let k = KernelSpec::brownian();
        assert_eq!(k.eval_time_pair(0.3, 0.7).unwrap(), 0.3);
        assert_eq!(k.eval_time_pair(0.7, 0.3).unwrap(), 0.3);
        assert!(k.eval_time_pair(-0.1, 0.5).is_err());
    }

    #[test]
    fn gaussian_matches_direct_evaluation() {
        let k = KernelSpec::gaussian(2.0).unwrap();
        let v = k.eval_sq_dist(0.5).unwrap();
        assert!((v - (-1.0_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn negative_squared_distance_is_domain_error() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert!(k.eval_sq_dist(-0.1).is_err());
    }

    #[test]
    fn zero_distances_give_constant_gram_that_centers_to_zero() {
        let k = KernelSpec::gaussian(3.7).unwrap();
        let g = gram_from_sq_distances(&k, &DMatrix::zeros(2, 2)).unwrap();
        assert!(g.raw().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(g.centered().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn gram_from_line_points() {
        // points {0, 1, 2}: squared distances 1, 4, 1
        let d2 = dm(3, 3, &[0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0]);
        let k = KernelSpec::gaussian(1.0).unwrap();
        let g = gram_from_sq_distances(&k, &d2).unwrap();
        assert!((g.raw()[(0, 2)] - (-4.0_f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_distances_rejected() {
        let d2 = dm(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert!(gram_from_sq_distances(&k, &d2).is_err());
    }

    #[test]
    fn centered_rows_sum_to_zero() {
        let d2 = dm(4, 4, &[
            0.0, 1.0, 2.0, 0.5,
            1.0, 0.0, 1.3, 2.2,
            2.0, 1.3, 0.0, 0.7,
            0.5, 2.2, 0.7, 0.0,
        ]);
        let g = gram_from_sq_distances(&KernelSpec::gaussian(0.8).unwrap(), &d2).unwrap();
        for a in 0..4 {
            assert!(g.centered().row(a).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn bandwidth_single_pair() {
        let d2 = dm(2, 2, &[0.0, 4.0, 4.0, 0.0]);
        assert_eq!(auto_bandwidth(&d2, BandwidthRule::InverseMean).unwrap(), 0.25);
        assert_eq!(auto_bandwidth(&d2, BandwidthRule::PaperVerbatim).unwrap(), 0.25);
        assert_eq!(auto_bandwidth(&d2, BandwidthRule::InverseMedian).unwrap(), 0.25);
    }

    #[test]
    fn bandwidth_three_points() {
        let d2 = dm(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 2.0, 1.0, 2.0, 0.0]);
        assert_eq!(auto_bandwidth(&d2, BandwidthRule::InverseMean).unwrap(), 0.75);
        // paper rule squares the pair count
        assert_eq!(auto_bandwidth(&d2, BandwidthRule::PaperVerbatim).unwrap(), 2.25);
        assert_eq!(auto_bandwidth(&d2, BandwidthRule::InverseMedian).unwrap(), 1.0);
    }

    #[test]
    fn bandwidth_degenerate_when_all_zero() {
        let d2 = DMatrix::zeros(3, 3);
        assert!(matches!(
            auto_bandwidth(&d2, BandwidthRule::InverseMean),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn ridge_inverse_of_zero_matrix() {
        let inv = ridge_inverse(&DMatrix::zeros(2, 2), 2.0).unwrap();
        assert!((inv - DMatrix::from_diagonal_element(2, 2, 0.5)).abs().max() < 1e-14);
    }

    #[test]
    fn ridge_inverse_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let inv = ridge_inverse(&m, 1.0).unwrap();
        assert!((inv[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((inv[(1, 1)] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn ridge_inverse_is_a_true_inverse() {
        let b = dm(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.8, 0.3, 0.1, 0.3, 1.2]);
        let m = &b * b.transpose();
        let r = 0.37;
        let inv = ridge_inverse(&m, r).unwrap();
        let mut shifted = m.clone();
        for i in 0..3 {
            shifted[(i, i)] += r;
        }
        let prod = &shifted * &inv;
        assert!((prod - DMatrix::identity(3, 3)).abs().max() < 1e-8);
    }

    #[test]
    fn psd_sqrt_and_pinv_sqrt_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.0]));
        let s = psd_sqrt(&m).unwrap();
        assert!((s[(0, 0)] - 2.0).abs() < 1e-12 && s[(1, 1)].abs() < 1e-12);
        let p = psd_pinv_sqrt(&m, DEFAULT_PINV_REL_TOL).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-12 && p[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn psd_sqrt_identity() {
        let m = DMatrix::identity(4, 4);
        assert!((psd_sqrt(&m).unwrap() - &m).abs().max() < 1e-12);
        assert!((psd_pinv_sqrt(&m, DEFAULT_PINV_REL_TOL).unwrap() - &m).abs().max() < 1e-12);
    }

    #[test]
    fn pinv_sqrt_rank_one_projection() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let m = &v * v.transpose();
        let p = psd_pinv_sqrt(&m, DEFAULT_PINV_REL_TOL).unwrap();
        // P M P should be the projection onto span(v)
        let proj = &p * &m * &p;
        let expected = &v * v.transpose() / v.norm_squared();
        assert!((proj - expected).abs().max() < 1e-10);
    }

    #[test]
    fn strongly_indefinite_rejected() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(psd_sqrt(&m).is_err());
    }

    #[test]
    fn psd_sqrt_squared_reconstructs_the_input() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.random_range(2..10);
            let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let mut m = &b * b.transpose();
            for i in 0..n {
                m[(i, i)] += 0.05; // keeps the condition number moderate
            }
            let s = psd_sqrt(&m).unwrap();
            let rec = &s * &s;
            let rel = frobenius_norm(&(rec - &m)) / frobenius_norm(&m);
            assert!(rel <= 1e-7, "reconstruction error {rel}");
        }
    }

    #[test]
    fn ridge_inverse_shrinks_with_larger_ridge() {
        let b = dm(4, 4, &[
            0.9, 0.1, 0.0, 0.3,
            0.1, 1.1, 0.2, 0.0,
            0.0, 0.2, 0.7, 0.4,
            0.3, 0.0, 0.4, 1.3,
        ]);
        let m = &b * b.transpose();
        let spectral = |x: &DMatrix<f64>| {
            x.symmetric_eigenvalues().iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
        };
        let mut last = f64::INFINITY;
        for ridge in [0.01, 0.1, 1.0, 10.0] {
            let norm = spectral(&ridge_inverse(&m, ridge).unwrap());
            assert!(norm < last, "spectral norm not monotone at ridge {ridge}");
            last = norm;
        }
    }

    #[test]
    fn eigen_desc_is_sorted_and_sign_fixed() {
        let m = dm(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.5]);
        let (values, vectors) = sym_eigen_desc(&m).unwrap();
        assert!(values.windows(2).all(|w| w[0] >= w[1]));
        for c in 0..3 {
            let col = vectors.column(c);
            let pivot = (0..3).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap();
            assert!(col[pivot] > 0.0);
            // reconstructs M
        }
        let lam = DMatrix::from_diagonal(&DVector::from_vec(values));
        let rec = &vectors * lam * vectors.transpose();
        assert!((rec - m).abs().max() < 1e-10);
    }
}

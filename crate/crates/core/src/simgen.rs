//! Synthetic data generators: structural-equation models over random
//! functions, a banded-precision Gaussian model, and their ground-truth
//! edge sets under the moralization rule (drop arrow directions, join
//! parents of a common child).

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcrep::FunctionalDataset;

/// RNG stream reserved for dataset-level draws (the unbalanced grid pool).
const POOL_STREAM: u64 = u64::MAX;

const NOISE_TERMS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelId {
    I,
    II,
    III,
    IV,
    IPrime,
    IDoublePrime,
    ITriplePrime,
    IiiPrime,
    IiiDoublePrime,
    IiiTriplePrime,
    IvPrime,
    IvDoublePrime,
    IvTriplePrime,
}

impl ModelId {
    pub fn p(&self) -> usize {
        match self {
            ModelId::I | ModelId::III | ModelId::IV => 5,
            ModelId::II => 10,
            ModelId::IPrime | ModelId::IiiPrime | ModelId::IvPrime => 20,
            ModelId::IDoublePrime | ModelId::IiiDoublePrime | ModelId::IvDoublePrime => 30,
            ModelId::ITriplePrime | ModelId::IiiTriplePrime | ModelId::IvTriplePrime => 40,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(
            self,
            ModelId::IV | ModelId::IvPrime | ModelId::IvDoublePrime | ModelId::IvTriplePrime
        )
    }

    /// Accepts roman numerals with prime marks, e.g. `I`, `III'`, `IV'''`;
    /// `p` may stand in for a prime mark (`Ip`, `IVppp`).
    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().replace('\u{2032}', "'");
        let lower = norm.to_ascii_lowercase();
        let (base, marks) = match lower.find(|c| c == '\'' || c == 'p') {
            Some(idx) => lower.split_at(idx),
            None => (lower.as_str(), ""),
        };
        let primes = marks.chars().filter(|&c| c == '\'' || c == 'p').count();
        if !marks.chars().all(|c| c == '\'' || c == 'p') {
            return Err(Error::validation(format!("unknown model id '{s}'")));
        }
        match (base, primes) {
            ("i", 0) => Ok(ModelId::I),
            ("ii", 0) => Ok(ModelId::II),
            ("iii", 0) => Ok(ModelId::III),
            ("iv", 0) => Ok(ModelId::IV),
            ("i", 1) => Ok(ModelId::IPrime),
            ("i", 2) => Ok(ModelId::IDoublePrime),
            ("i", 3) => Ok(ModelId::ITriplePrime),
            ("iii", 1) => Ok(ModelId::IiiPrime),
            ("iii", 2) => Ok(ModelId::IiiDoublePrime),
            ("iii", 3) => Ok(ModelId::IiiTriplePrime),
            ("iv", 1) => Ok(ModelId::IvPrime),
            ("iv", 2) => Ok(ModelId::IvDoublePrime),
            ("iv", 3) => Ok(ModelId::IvTriplePrime),
            _ => Err(Error::validation(format!("unknown model id '{s}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::I => "I",
            ModelId::II => "II",
            ModelId::III => "III",
            ModelId::IV => "IV",
            ModelId::IPrime => "I'",
            ModelId::IDoublePrime => "I''",
            ModelId::ITriplePrime => "I'''",
            ModelId::IiiPrime => "III'",
            ModelId::IiiDoublePrime => "III''",
            ModelId::IiiTriplePrime => "III'''",
            ModelId::IvPrime => "IV'",
            ModelId::IvDoublePrime => "IV''",
            ModelId::IvTriplePrime => "IV'''",
        }
    }
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    #[default]
    Balanced,
    Unbalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelId,
    pub n: usize,
    #[serde(default)]
    pub grid_mode: GridMode,
    /// Observation points per subject.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_m() -> usize {
    10
}

/// The true undirected edge set of a model, 0-based pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub p: usize,
    pub edges: BTreeSet<(usize, usize)>,
}

// =============================================================================
// Structural equations
// =============================================================================

#[derive(Debug, Clone, Copy)]
enum Func {
    /// (a + b |x|)^k
    AbsAffinePow { a: f64, b: f64, k: i32 },
    /// c x^k
    PolyPow { c: f64, k: i32 },
    CosPi,
    SinPi,
    Exp,
    ExpAbs,
}

impl Func {
    fn eval(&self, x: f64) -> f64 {
        match *self {
            Func::AbsAffinePow { a, b, k } => (a + b * x.abs()).powi(k),
            Func::PolyPow { c, k } => c * x.powi(k),
            Func::CosPi => (std::f64::consts::PI * x).cos(),
            Func::SinPi => (std::f64::consts::PI * x).sin(),
            Func::Exp => x.exp(),
            Func::ExpAbs => x.abs().exp(),
        }
    }
}

/// One derived node: how its values combine parent values with its own noise.
#[derive(Debug, Clone, Copy)]
enum NodeEq {
    /// X = f(X_parent) + eps
    Add { node: usize, parent: usize, f: Func },
    /// X = f(X_parent) * eps
    Mul { node: usize, parent: usize, f: Func },
    /// X = f1(X_p1) + f2(X_p2) + eps
    AddTwo { node: usize, p1: usize, f1: Func, p2: usize, f2: Func },
}

impl NodeEq {
    fn node(&self) -> usize {
        match *self {
            NodeEq::Add { node, .. } | NodeEq::Mul { node, .. } | NodeEq::AddTwo { node, .. } => {
                node
            }
        }
    }

    fn parents(&self) -> Vec<usize> {
        match *self {
            NodeEq::Add { parent, .. } | NodeEq::Mul { parent, .. } => vec![parent],
            NodeEq::AddTwo { p1, p2, .. } => vec![p1, p2],
        }
    }

    fn eval(&self, parent_values: &[f64], eps: f64) -> f64 {
        match *self {
            NodeEq::Add { f, .. } => f.eval(parent_values[0]) + eps,
            NodeEq::Mul { f, .. } => f.eval(parent_values[0]) * eps,
            NodeEq::AddTwo { f1, f2, .. } => {
                f1.eval(parent_values[0]) + f2.eval(parent_values[1]) + eps
            }
        }
    }
}

/// Derived-node equations in evaluation order (parents always come earlier
/// or are pure noise). Node indices are 0-based.
fn equations(model: ModelId) -> Vec<NodeEq> {
    use Func::*;
    use NodeEq::*;
    let model_i = vec![
        Add { node: 1, parent: 0, f: AbsAffinePow { a: 0.5, b: 1.0, k: 2 } },
        Add { node: 3, parent: 1, f: CosPi },
        Add { node: 4, parent: 2, f: PolyPow { c: 5.0, k: 2 } },
    ];
    let model_i_prime = [
        model_i.clone(),
        vec![
            Add { node: 12, parent: 16, f: AbsAffinePow { a: 0.5, b: 1.0, k: 3 } },
            Add { node: 15, parent: 18, f: Exp },
            Add { node: 17, parent: 11, f: SinPi },
        ],
    ]
    .concat();
    let model_i_double = [
        model_i_prime.clone(),
        vec![
            Add { node: 20, parent: 25, f: PolyPow { c: 1.0, k: 2 } },
            Add { node: 23, parent: 22, f: CosPi },
            Add { node: 26, parent: 21, f: AbsAffinePow { a: 0.5, b: 1.0, k: 2 } },
            Add { node: 28, parent: 22, f: Exp },
        ],
    ]
    .concat();
    let model_i_triple = [
        model_i_double.clone(),
        vec![
            Add { node: 34, parent: 30, f: PolyPow { c: 1.0, k: 2 } },
            Add { node: 37, parent: 36, f: CosPi },
        ],
    ]
    .concat();

    let model_iii = vec![
        Mul { node: 2, parent: 0, f: SinPi },
        Mul { node: 3, parent: 1, f: AbsAffinePow { a: 1.0, b: 0.5, k: 3 } },
        Mul { node: 4, parent: 1, f: PolyPow { c: 3.0, k: 2 } },
    ];
    let model_iii_prime = [
        model_iii.clone(),
        vec![
            Mul { node: 9, parent: 6, f: ExpAbs },
            Mul { node: 13, parent: 8, f: AbsAffinePow { a: 0.3, b: 1.0, k: 2 } },
            Mul { node: 14, parent: 7, f: AbsAffinePow { a: 0.5, b: 1.0, k: 2 } },
            Mul { node: 17, parent: 10, f: PolyPow { c: 3.0, k: 3 } },
        ],
    ]
    .concat();
    let model_iii_double = [
        model_iii_prime.clone(),
        vec![
            Mul { node: 19, parent: 23, f: ExpAbs },
            Mul { node: 21, parent: 18, f: AbsAffinePow { a: 0.5, b: 1.0, k: 2 } },
            Mul { node: 25, parent: 28, f: PolyPow { c: 3.0, k: 3 } },
            Mul { node: 26, parent: 21, f: CosPi },
        ],
    ]
    .concat();
    let model_iii_triple = [
        model_iii_double.clone(),
        vec![
            Mul { node: 31, parent: 37, f: PolyPow { c: 3.0, k: 2 } },
            Mul { node: 38, parent: 34, f: AbsAffinePow { a: 1.0, b: 1.0, k: 2 } },
        ],
    ]
    .concat();

    match model {
        ModelId::I => model_i,
        ModelId::IPrime => model_i_prime,
        ModelId::IDoublePrime => model_i_double,
        ModelId::ITriplePrime => model_i_triple,
        ModelId::II => vec![
            Add { node: 2, parent: 0, f: Exp },
            AddTwo { node: 4, p1: 1, f1: PolyPow { c: 1.0, k: 2 }, p2: 3, f2: Exp },
            Add { node: 5, parent: 3, f: AbsAffinePow { a: 0.5, b: 1.0, k: 2 } },
            Add { node: 7, parent: 6, f: CosPi },
            Add { node: 9, parent: 2, f: PolyPow { c: 5.0, k: 3 } },
        ],
        ModelId::III => model_iii,
        ModelId::IiiPrime => model_iii_prime,
        ModelId::IiiDoublePrime => model_iii_double,
        ModelId::IiiTriplePrime => model_iii_triple,
        _ => vec![],
    }
}

/// Undirected edges from the structural equations: parent-child links plus
/// joins between parents of a common child.
fn derive_truth(p: usize, eqs: &[NodeEq]) -> GroundTruth {
    let mut edges = BTreeSet::new();
    for eq in eqs {
        let child = eq.node();
        let parents = eq.parents();
        for &pa in &parents {
            edges.insert((pa.min(child), pa.max(child)));
        }
        for a in 0..parents.len() {
            for b in (a + 1)..parents.len() {
                let (x, y) = (parents[a], parents[b]);
                edges.insert((x.min(y), x.max(y)));
            }
        }
    }
    GroundTruth { p, edges }
}

fn gaussian_truth(p: usize) -> GroundTruth {
    let mut edges = BTreeSet::new();
    for i in 0..p {
        for j in (i + 1)..p {
            if j - i <= 2 {
                edges.insert((i, j));
            }
        }
    }
    GroundTruth { p, edges }
}

/// The true edge set of a model.
pub fn ground_truth(model: ModelId) -> GroundTruth {
    let p = model.p();
    if model.is_gaussian() {
        gaussian_truth(p)
    } else {
        derive_truth(p, &equations(model))
    }
}

// =============================================================================
// Noise paths and grids
// =============================================================================

/// Random rough paths t -> sum_j xi_j min(t, t_j) with fresh standard normal
/// xi and uniform knots per path, evaluated at `eval_times`.
pub fn gen_noise_paths<R: Rng>(rng: &mut R, count: usize, eval_times: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let xi: Vec<f64> = (0..NOISE_TERMS).map(|_| StandardNormal.sample(rng)).collect();
        let knots: Vec<f64> = (0..NOISE_TERMS).map(|_| rng.random_range(0.0..1.0)).collect();
        let path: Vec<f64> = eval_times
            .iter()
            .map(|&t| xi.iter().zip(&knots).map(|(x, &k)| x * t.min(k)).sum())
            .collect();
        out.push(path);
    }
    out
}

fn balanced_grid(m: usize) -> Vec<f64> {
    (1..=m).map(|b| b as f64 / m as f64).collect()
}

fn subject_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn make_grids(spec: &ModelSpec) -> Result<Vec<Vec<f64>>> {
    if spec.m < 2 {
        return Err(Error::validation("need at least 2 observation points per subject"));
    }
    let force_balanced = spec.model.is_gaussian();
    match (spec.grid_mode, force_balanced) {
        (GridMode::Balanced, _) | (_, true) => Ok(vec![balanced_grid(spec.m); spec.n]),
        (GridMode::Unbalanced, false) => {
            if spec.m > 100 {
                return Err(Error::validation(
                    "unbalanced grids draw from a pool of 100 points; m must be <= 100",
                ));
            }
            let mut pool_rng = subject_rng(spec.seed, POOL_STREAM);
            let pool: Vec<f64> = (0..100).map(|_| pool_rng.random_range(0.0..1.0)).collect();
            let grids = (0..spec.n)
                .map(|a| {
                    let mut rng = subject_rng(spec.seed, a as u64);
                    let chosen = rand::seq::index::sample(&mut rng, 100, spec.m);
                    let mut grid: Vec<f64> = chosen.iter().map(|idx| pool[idx]).collect();
                    grid.sort_by(f64::total_cmp);
                    grid
                })
                .collect();
            Ok(grids)
        }
    }
}

// =============================================================================
// Model IV precision structure
// =============================================================================

/// The banded block precision matrix: I5 on the diagonal blocks, 0.5 I5 at
/// offset one, 0.3 I5 at offset two.
pub fn model_iv_theta(p: usize) -> DMatrix<f64> {
    let s = 5;
    let mut theta = DMatrix::zeros(s * p, s * p);
    for i in 0..p {
        for j in 0..p {
            let w = match i.abs_diff(j) {
                0 => 1.0,
                1 => 0.5,
                2 => 0.3,
                _ => 0.0,
            };
            if w != 0.0 {
                for k in 0..s {
                    theta[(s * i + k, s * j + k)] = w;
                }
            }
        }
    }
    theta
}

fn theta_factor(p: usize) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    model_iv_theta(p).cholesky().ok_or_else(|| {
        Error::degenerate(format!(
            "precision matrix is not positive definite at p = {p}; cannot sample"
        ))
    })
}

/// Draw `count` score vectors xi with covariance Theta^{-1}; rows are draws.
pub fn sample_model_iv_xi(p: usize, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    let chol = theta_factor(p)?;
    let dim = 5 * p;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, dim);
    for r in 0..count {
        let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let xi = solve_upper(chol.l_dirty(), &z)?;
        for c in 0..dim {
            out[(r, c)] = xi[c];
        }
    }
    Ok(out)
}

/// Solve L^T x = z for lower-triangular L, so that Cov(x) = (L L^T)^{-1}.
fn solve_upper(l: &DMatrix<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let n = l.nrows();
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = z[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * x[j];
        }
        let d = l[(i, i)];
        if d.abs() <= 1e-300 {
            return Err(Error::numerical("singular Cholesky factor"));
        }
        x[i] = s / d;
    }
    Ok(x)
}

fn fourier_basis(t: f64) -> [f64; 5] {
    use std::f64::consts::PI;
    let r2 = std::f64::consts::SQRT_2;
    [
        1.0,
        r2 * (2.0 * PI * t).sin(),
        r2 * (2.0 * PI * t).cos(),
        r2 * (4.0 * PI * t).sin(),
        r2 * (4.0 * PI * t).cos(),
    ]
}

// =============================================================================
// Generation
// =============================================================================

/// Generate a dataset plus its ground truth. Bit-reproducible for a fixed
/// spec; subjects draw from per-subject RNG streams.
pub fn gen_model(spec: &ModelSpec) -> Result<(FunctionalDataset, GroundTruth)> {
    if spec.n == 0 {
        return Err(Error::validation("need at least one subject"));
    }
    let p = spec.model.p();
    let grids = make_grids(spec)?;
    let truth = ground_truth(spec.model);

    let values: Vec<Vec<Vec<f64>>> = if spec.model.is_gaussian() {
        let chol = theta_factor(p)?;
        let dim = 5 * p;
        (0..spec.n)
            .map(|a| {
                let mut rng = subject_rng(spec.seed, a as u64);
                let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
                let xi = solve_upper(chol.l_dirty(), &z)?;
                let grid = &grids[a];
                let subject: Vec<Vec<f64>> = (0..p)
                    .map(|i| {
                        grid.iter()
                            .map(|&t| {
                                let basis = fourier_basis(t);
                                (0..5).map(|k| xi[5 * i + k] * basis[k]).sum()
                            })
                            .collect()
                    })
                    .collect();
                Ok(subject)
            })
            .collect::<Result<_>>()?
    } else {
        let eqs = equations(spec.model);
        (0..spec.n)
            .map(|a| {
                let mut rng = subject_rng(spec.seed, a as u64);
                let grid = &grids[a];
                let eps = gen_noise_paths(&mut rng, p, grid);
                let mut subject: Vec<Vec<f64>> = eps.clone();
                for eq in &eqs {
                    let node = eq.node();
                    let parents = eq.parents();
                    for b in 0..grid.len() {
                        let pv: Vec<f64> = parents.iter().map(|&q| subject[q][b]).collect();
                        subject[node][b] = eq.eval(&pv, eps[node][b]);
                    }
                }
                subject
            })
            .collect()
    };

    let dataset = FunctionalDataset::new(grids, values)?;
    Ok((dataset, truth))
}

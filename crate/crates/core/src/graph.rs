//! The two-step pipeline over all node pairs: sufficient dimension reduction,
//! conditional-covariance scoring, threshold selection, and ROC evaluation.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccco::{
    gcv_delta_contrib, hybrid_grams_from_sq_distances, predictor_gram, score_pair, CccoScore,
};
use crate::config::{PipelineConfig, Tuning};
use crate::error::{Error, Result};
use crate::funcrep::{build_basis, fit_coordinates, gcv_eta, node_sq_distances, FunctionalDataset};
use crate::gsir::{
    argmin_summed, gcv_epsilon_contrib, pair_grams_from_sq_distances, solve_gsir_with_rule,
    PairGrams,
};
use crate::kernels::{frobenius_norm, ridge_solve, GramMatrix, KernelChoice, KernelSpec};

/// Bandwidths and dimensions resolved for one pair, recorded for
/// reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairBandwidths {
    /// 1-based node indices.
    pub i: usize,
    pub j: usize,
    pub pair_group: f64,
    pub rest_group: f64,
    pub node_i: f64,
    pub node_j: f64,
    pub predictors: f64,
    pub d_used: usize,
}

/// Every tuning decision the fit resolved, kept alongside the scores.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TuningRecord {
    pub eta: f64,
    pub epsilon_rel: f64,
    pub delta_rel: f64,
    pub rho: f64,
    pub level1_kernel: KernelSpec,
    pub bandwidths: Vec<PairBandwidths>,
    /// Largest relative discrepancy between the two score orientations,
    /// when the swap diagnostic ran.
    pub swap_max_rel_discrepancy: Option<f64>,
}

/// The fitted graph: all pair scores, the threshold, and the edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGraph {
    pub p: usize,
    /// One score per unordered pair, in lexicographic order of 0-based (i, j).
    pub scores: Vec<CccoScore>,
    pub threshold: f64,
    /// Pairs with score strictly above the threshold (0-based).
    pub edges: Vec<(usize, usize)>,
    pub tuning: TuningRecord,
}

impl ScoredGraph {
    pub fn score(&self, i: usize, j: usize) -> Option<f64> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.scores.iter().find(|s| s.pair == key).map(|s| s.hs_norm)
    }

    /// The edge set that a different threshold would produce.
    pub fn edges_at(&self, rho: f64) -> Vec<(usize, usize)> {
        self.scores.iter().filter(|s| s.hs_norm > rho).map(|s| s.pair).collect()
    }
}

fn all_pairs(p: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in (i + 1)..p {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Squared distances for the complement group, from cached per-node matrices.
fn rest_distances(
    total: &DMatrix<f64>,
    d_i: &DMatrix<f64>,
    d_j: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = total.nrows();
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in (a + 1)..n {
            let v = (total[(a, b)] - d_i[(a, b)] - d_j[(a, b)]).max(0.0);
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

struct PairInputs<'a> {
    node_d2: &'a [DMatrix<f64>],
    total_d2: &'a DMatrix<f64>,
    config: &'a PipelineConfig,
}

impl PairInputs<'_> {
    fn grams(&self, pair: (usize, usize)) -> Result<PairGrams> {
        let (i, j) = pair;
        let d2_pair = &self.node_d2[i] + &self.node_d2[j];
        let d2_rest = rest_distances(self.total_d2, &self.node_d2[i], &self.node_d2[j]);
        pair_grams_from_sq_distances(
            pair,
            &d2_pair,
            &d2_rest,
            &self.config.level2_kernel,
            self.config.bandwidth_rule,
        )
        .map_err(|e| e.with_context(format!("pair ({}, {})", i + 1, j + 1)))
    }
}

/// Run the full pipeline on a dataset.
pub fn fit(dataset: &FunctionalDataset, config: &PipelineConfig) -> Result<ScoredGraph> {
    config.validate()?;
    if dataset.p() < 3 {
        return Err(Error::validation(format!(
            "need at least 3 nodes for conditional scoring, got {}",
            dataset.p()
        )));
    }
    if dataset.n() < 10 {
        return Err(Error::validation(format!(
            "need at least 10 subjects, got {}",
            dataset.n()
        )));
    }
    match config.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
            pool.install(|| fit_inner(dataset, config))
        }
        None => fit_inner(dataset, config),
    }
}

fn fit_inner(dataset: &FunctionalDataset, config: &PipelineConfig) -> Result<ScoredGraph> {
    let p = dataset.p();
    let basis = build_basis(dataset, &config.level1_kernel)?;

    let eta = match &config.eta {
        Tuning::Fixed(v) => *v,
        Tuning::Gcv { gcv } => gcv_eta(dataset, &basis, gcv, config.gcv_denominator)?,
    };
    let coords = fit_coordinates(dataset, &basis, eta)?;

    let node_d2: Vec<DMatrix<f64>> = (0..p)
        .into_par_iter()
        .map(|i| node_sq_distances(&coords, &basis, i))
        .collect();
    let mut total_d2 = DMatrix::zeros(dataset.n(), dataset.n());
    for d in &node_d2 {
        total_d2 += d;
    }

    let inputs = PairInputs { node_d2: &node_d2, total_d2: &total_d2, config };
    let pairs = all_pairs(p);

    let epsilon_rel = match &config.epsilon {
        Tuning::Fixed(v) => *v,
        Tuning::Gcv { gcv } => {
            let contribs: Vec<Vec<Option<f64>>> = pairs
                .par_iter()
                .map(|&pair| {
                    let grams = inputs.grams(pair)?;
                    Ok(gcv_epsilon_contrib(&grams, gcv, config.gcv_denominator))
                })
                .collect::<Result<_>>()?;
            argmin_summed(gcv, &contribs, "GCV(epsilon)")?
        }
    };

    let delta_rel = match &config.delta {
        Tuning::Fixed(v) => *v,
        Tuning::Gcv { gcv } => {
            let contribs: Vec<Vec<Option<f64>>> = pairs
                .par_iter()
                .map(|&pair| {
                    let grams = inputs.grams(pair)?;
                    let predictors = solve_gsir_with_rule(&grams, &config.d, epsilon_rel)
                        .map_err(|e| {
                            e.with_context(format!("pair ({}, {})", pair.0 + 1, pair.1 + 1))
                        })?;
                    let (h_u, _) = predictor_gram(
                        &predictors,
                        &config.level3_kernel,
                        config.bandwidth_rule,
                        config.standardize_predictors,
                    )?;
                    Ok(gcv_delta_contrib(&h_u, &grams.g_pair, gcv, config.gcv_denominator))
                })
                .collect::<Result<_>>()?;
            argmin_summed(gcv, &contribs, "GCV(delta)")?
        }
    };

    let scored: Vec<(CccoScore, PairBandwidths)> = pairs
        .par_iter()
        .map(|&pair| {
            let (i, j) = pair;
            let ctx = || format!("pair ({}, {})", i + 1, j + 1);
            let grams = inputs.grams(pair)?;
            let predictors = solve_gsir_with_rule(&grams, &config.d, epsilon_rel)
                .map_err(|e| e.with_context(ctx()))?;
            let hybrids = hybrid_grams_from_sq_distances(
                &node_d2[i],
                &node_d2[j],
                &predictors,
                &config.level3_kernel,
                config.bandwidth_rule,
                config.standardize_predictors,
            )
            .map_err(|e| e.with_context(ctx()))?;
            let score = score_pair(&hybrids, delta_rel, config.swap_diagnostic)
                .map_err(|e| e.with_context(ctx()))?;
            let bw = PairBandwidths {
                i: i + 1,
                j: j + 1,
                pair_group: grams.bandwidths.0,
                rest_group: grams.bandwidths.1,
                node_i: hybrids.bandwidths.0,
                node_j: hybrids.bandwidths.1,
                predictors: hybrids.bandwidths.2,
                d_used: hybrids.d_used,
            };
            Ok((score, bw))
        })
        .collect::<Result<_>>()?;

    let (scores, bandwidths): (Vec<CccoScore>, Vec<PairBandwidths>) = scored.into_iter().unzip();

    let swap_max_rel_discrepancy = if config.swap_diagnostic {
        let mut worst = 0.0_f64;
        for s in &scores {
            if let Some(sw) = s.hs_swapped {
                let rel = (s.hs_norm - sw).abs() / s.hs_norm.max(sw).max(1e-300);
                worst = worst.max(rel);
            }
        }
        log::debug!("max relative i<->j score discrepancy: {worst:.3e}");
        Some(worst)
    } else {
        None
    };

    let rho = match &config.rho {
        Tuning::Fixed(v) => *v,
        Tuning::Gcv { gcv } => gcv_rho(&node_d2, &scores, epsilon_rel, gcv, config)?,
    };

    let edges: Vec<(usize, usize)> =
        scores.iter().filter(|s| s.hs_norm > rho).map(|s| s.pair).collect();

    Ok(ScoredGraph {
        p,
        scores,
        threshold: rho,
        edges,
        tuning: TuningRecord {
            eta,
            epsilon_rel,
            delta_rel,
            rho,
            level1_kernel: config.level1_kernel,
            bandwidths,
            swap_max_rel_discrepancy,
        },
    })
}

// =============================================================================
// Threshold selection
// =============================================================================

/// Per-node Grams for the neighborhood regression in GCV(rho).
fn node_grams(
    node_d2: &[DMatrix<f64>],
    kernel: &KernelChoice,
    config: &PipelineConfig,
) -> Result<Vec<GramMatrix>> {
    node_d2
        .par_iter()
        .enumerate()
        .map(|(i, d2)| {
            let spec = match kernel.resolve(d2, config.bandwidth_rule) {
                Ok(s) => s,
                Err(Error::DegenerateData(_)) => match kernel {
                    KernelChoice::Auto { auto } => KernelSpec { family: *auto, bandwidth: 1.0 },
                    KernelChoice::Fixed(s) => *s,
                },
                Err(e) => return Err(e.with_context(format!("node {}", i + 1))),
            };
            crate::kernels::gram_from_sq_distances(&spec, d2)
        })
        .collect()
}

/// GCV scores over the threshold grid; `None` marks non-finite entries.
pub fn gcv_rho_scores(
    node_d2: &[DMatrix<f64>],
    scores: &[CccoScore],
    epsilon_rel: f64,
    grid: &[f64],
    config: &PipelineConfig,
) -> Result<(Vec<Option<f64>>, bool)> {
    if grid.is_empty() {
        return Err(Error::validation("rho grid must be nonempty"));
    }
    let p = node_d2.len();
    let n = node_d2.first().map_or(0, |m| m.nrows());
    let grams = node_grams(node_d2, &config.level2_kernel, config)?;
    let baselines: Vec<f64> = grams.iter().map(|g| frobenius_norm(g.centered())).collect();

    let mut any_nonempty = false;
    let mut out = Vec::with_capacity(grid.len());
    for &rho in grid {
        let mut total = 0.0;
        let mut ok = true;
        for i in 0..p {
            let neighbors: Vec<usize> = scores
                .iter()
                .filter(|s| s.hs_norm > rho && (s.pair.0 == i || s.pair.1 == i))
                .map(|s| if s.pair.0 == i { s.pair.1 } else { s.pair.0 })
                .collect();
            if neighbors.is_empty() {
                // no regression fit: the full norm of the node Gram remains
                total += baselines[i];
                continue;
            }
            let mut d2_n = DMatrix::zeros(n, n);
            for &j in &neighbors {
                d2_n += &node_d2[j];
            }
            let g_n = match config.level2_kernel.resolve(&d2_n, config.bandwidth_rule) {
                Ok(spec) => crate::kernels::gram_from_sq_distances(&spec, &d2_n)?,
                Err(Error::DegenerateData(_)) => {
                    total += baselines[i];
                    continue;
                }
                Err(e) => return Err(e),
            };
            let lambda = g_n.lambda_max();
            if lambda <= 1e-300 {
                total += baselines[i];
                continue;
            }
            any_nonempty = true;
            let ridge = epsilon_rel * lambda;
            let solved = ridge_solve(g_n.centered(), ridge, grams[i].centered())?;
            let fitted = g_n.centered() * solved;
            let num = frobenius_norm(&(grams[i].centered() - fitted));
            let solved_self = ridge_solve(g_n.centered(), ridge, g_n.centered())?;
            let den = (n as f64 - solved_self.trace()) / n as f64;
            if !(den > 0.0) || !num.is_finite() {
                ok = false;
                break;
            }
            total += num / den;
        }
        out.push((ok && total.is_finite()).then_some(total));
    }
    Ok((out, any_nonempty))
}

/// Select the edge threshold by the neighborhood-regression GCV.
///
/// When every candidate threshold leaves every node without neighbors, the
/// largest grid value is returned with a warning.
pub fn gcv_rho(
    node_d2: &[DMatrix<f64>],
    scores: &[CccoScore],
    epsilon_rel: f64,
    grid: &[f64],
    config: &PipelineConfig,
) -> Result<f64> {
    let (values, any_nonempty) = gcv_rho_scores(node_d2, scores, epsilon_rel, grid, config)?;
    if !any_nonempty {
        let largest = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log::warn!(
            "GCV(rho): every candidate threshold produces an empty graph; returning {largest}"
        );
        return Ok(largest);
    }
    let best = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match best {
        Some((i, _)) => Ok(grid[i]),
        None => Err(Error::tuning("GCV(rho): no grid value produced a finite score")),
    }
}

// =============================================================================
// ROC / AUC
// =============================================================================

/// Graph edge-set comparison, for contrasting two fitted graphs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphDiff {
    /// 1-based pairs present only in the first graph.
    pub only_a: Vec<(usize, usize)>,
    pub only_b: Vec<(usize, usize)>,
    pub common: Vec<(usize, usize)>,
}

pub fn diff_edges(a: &ScoredGraph, b: &ScoredGraph) -> Result<GraphDiff> {
    if a.p != b.p {
        return Err(Error::validation(format!(
            "graphs disagree on node count: {} vs {}",
            a.p, b.p
        )));
    }
    let ea: BTreeSet<(usize, usize)> = a.edges.iter().copied().collect();
    let eb: BTreeSet<(usize, usize)> = b.edges.iter().copied().collect();
    let up = |s: &(usize, usize)| (s.0 + 1, s.1 + 1);
    Ok(GraphDiff {
        only_a: ea.difference(&eb).map(up).collect(),
        only_b: eb.difference(&ea).map(up).collect(),
        common: ea.intersection(&eb).map(up).collect(),
    })
}

/// ROC staircase over all distinct score thresholds (plus the extremes).
///
/// `score_map` holds 0-based pairs; `true_edges` must be a nonempty proper
/// subset of the scored pairs.
pub fn roc_points(
    score_map: &[((usize, usize), f64)],
    true_edges: &BTreeSet<(usize, usize)>,
) -> Result<Vec<(f64, f64)>> {
    if score_map.is_empty() {
        return Err(Error::validation("empty score map"));
    }
    let scored: BTreeSet<(usize, usize)> = score_map.iter().map(|(k, _)| *k).collect();
    if scored.len() != score_map.len() {
        return Err(Error::validation("duplicate pair in score map"));
    }
    for e in true_edges {
        if !scored.contains(e) {
            return Err(Error::validation(format!(
                "true edge ({}, {}) has no score",
                e.0 + 1,
                e.1 + 1
            )));
        }
    }
    let positives = true_edges.len();
    let negatives = score_map.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::degenerate(
            "ROC undefined: the true edge set is empty or covers every pair",
        ));
    }

    let mut ranked: Vec<(f64, bool)> = score_map
        .iter()
        .map(|(k, v)| (*v, true_edges.contains(k)))
        .collect();
    if ranked.iter().any(|(v, _)| !v.is_finite()) {
        return Err(Error::numerical("non-finite score in ROC input"));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut idx = 0;
    while idx < ranked.len() {
        let value = ranked[idx].0;
        while idx < ranked.len() && ranked[idx].0 == value {
            if ranked[idx].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    Ok(points)
}

/// Trapezoidal area under an ROC staircase.
pub fn auc(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let (x1, y1) = w[0];
        let (x2, y2) = w[1];
        area += (x2 - x1) * (y1 + y2) * 0.5;
    }
    area
}

/// Convenience: AUC of a score map against a ground-truth edge set.
pub fn auc_of_scores(
    score_map: &[((usize, usize), f64)],
    true_edges: &BTreeSet<(usize, usize)>,
) -> Result<f64> {
    Ok(auc(&roc_points(score_map, true_edges)?))
}

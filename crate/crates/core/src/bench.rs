//! Replicated-experiment harness: generate, fit, score against ground truth,
//! and aggregate AUC across replicates with optional reference bands.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Tuning};
use crate::error::{Error, Result};
use crate::graph::{auc_of_scores, fit};
use crate::simgen::{gen_model, ModelSpec};

/// How tuning parameters behave across replicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TuningProtocol {
    /// Resolve tuning on every replicate independently.
    #[default]
    PerReplicate,
    /// Resolve tuning on the first ten replicates, then freeze the averages
    /// of eta, epsilon, and delta for the rest.
    FreezeAfter10,
}

/// Expected AUC from a published table, as mean(sd).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub mean_auc: f64,
    pub sd: f64,
}

impl Reference {
    /// Acceptance band: mean +- (3 sd + 0.03 implementation margin).
    pub fn band(&self) -> (f64, f64) {
        let half = 3.0 * self.sd + 0.03;
        (self.mean_auc - half, self.mean_auc + half)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub model: ModelSpec,
    pub replicates: usize,
    #[serde(default)]
    pub reference: Option<Reference>,
    #[serde(default)]
    pub tuning_protocol: TuningProtocol,
    #[serde(default)]
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub eta: f64,
    pub epsilon_rel: f64,
    pub delta_rel: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub auc: Option<f64>,
    pub tuning: Option<TuningSummary>,
    pub error: Option<String>,
}

/// Averaged eta/epsilon/delta from the tuning replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenParams {
    pub eta: f64,
    pub epsilon_rel: f64,
    pub delta_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: String,
    pub n: usize,
    pub grid_mode: String,
    pub replicate_count: usize,
    pub replicates: Vec<ReplicateResult>,
    pub mean_auc: Option<f64>,
    pub sd_auc: Option<f64>,
    pub reference: Option<Reference>,
    pub band: Option<(f64, f64)>,
    pub pass: Option<bool>,
    /// False when any replicate failed.
    pub complete: bool,
    pub frozen: Option<FrozenParams>,
}

fn run_replicate(plan: &ExperimentPlan, config: &PipelineConfig, r: usize) -> ReplicateResult {
    let seed = plan.model.seed.wrapping_add(r as u64);
    let spec = ModelSpec { seed, ..plan.model };
    let outcome = (|| -> Result<(f64, TuningSummary)> {
        let (dataset, truth) = gen_model(&spec)?;
        let graph = fit(&dataset, config)?;
        let scores: Vec<((usize, usize), f64)> =
            graph.scores.iter().map(|s| (s.pair, s.hs_norm)).collect();
        let auc = auc_of_scores(&scores, &truth.edges)?;
        Ok((
            auc,
            TuningSummary {
                eta: graph.tuning.eta,
                epsilon_rel: graph.tuning.epsilon_rel,
                delta_rel: graph.tuning.delta_rel,
                rho: graph.tuning.rho,
            },
        ))
    })();
    match outcome {
        Ok((auc, tuning)) => ReplicateResult {
            replicate: r,
            seed,
            auc: Some(auc),
            tuning: Some(tuning),
            error: None,
        },
        Err(e) => {
            log::warn!("replicate {r} failed: {e}");
            ReplicateResult { replicate: r, seed, auc: None, tuning: None, error: Some(e.to_string()) }
        }
    }
}

/// Run the plan. Replicate failures are recorded, not fatal; the report is
/// marked incomplete when any occurred.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    if plan.replicates == 0 {
        return Err(Error::validation("need at least one replicate"));
    }
    plan.config.validate()?;

    let mut results: Vec<ReplicateResult>;
    let mut frozen = None;
    match plan.tuning_protocol {
        TuningProtocol::PerReplicate => {
            results = (0..plan.replicates)
                .into_par_iter()
                .map(|r| run_replicate(plan, &plan.config, r))
                .collect();
        }
        TuningProtocol::FreezeAfter10 => {
            let head = plan.replicates.min(10);
            results = (0..head)
                .into_par_iter()
                .map(|r| run_replicate(plan, &plan.config, r))
                .collect();
            let tuned: Vec<&TuningSummary> =
                results.iter().filter_map(|r| r.tuning.as_ref()).collect();
            if plan.replicates > head {
                if tuned.is_empty() {
                    return Err(Error::tuning(
                        "freeze_after_10: every tuning replicate failed",
                    ));
                }
                let k = tuned.len() as f64;
                let params = FrozenParams {
                    eta: tuned.iter().map(|t| t.eta).sum::<f64>() / k,
                    epsilon_rel: tuned.iter().map(|t| t.epsilon_rel).sum::<f64>() / k,
                    delta_rel: tuned.iter().map(|t| t.delta_rel).sum::<f64>() / k,
                };
                frozen = Some(params);
                let fixed = PipelineConfig {
                    eta: Tuning::Fixed(params.eta),
                    epsilon: Tuning::Fixed(params.epsilon_rel),
                    delta: Tuning::Fixed(params.delta_rel),
                    ..plan.config.clone()
                };
                let tail: Vec<ReplicateResult> = (head..plan.replicates)
                    .into_par_iter()
                    .map(|r| run_replicate(plan, &fixed, r))
                    .collect();
                results.extend(tail);
            }
        }
    }

    let aucs: Vec<f64> = results.iter().filter_map(|r| r.auc).collect();
    let complete = aucs.len() == plan.replicates;
    let (mean_auc, sd_auc) = if aucs.is_empty() {
        (None, None)
    } else {
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        let sd = if aucs.len() >= 2 {
            let ss: f64 = aucs.iter().map(|a| (a - mean) * (a - mean)).sum();
            Some((ss / (aucs.len() - 1) as f64).sqrt())
        } else {
            Some(0.0)
        };
        (Some(mean), sd)
    };
    let band = plan.reference.map(|r| r.band());
    let pass = match (mean_auc, band) {
        (Some(m), Some((lo, hi))) => Some(m >= lo && m <= hi),
        _ => None,
    };

    Ok(ExperimentReport {
        model: plan.model.model.to_string(),
        n: plan.model.n,
        grid_mode: format!("{:?}", plan.model.grid_mode).to_lowercase(),
        replicate_count: plan.replicates,
        replicates: results,
        mean_auc,
        sd_auc,
        reference: plan.reference,
        band,
        pass,
        complete,
        frozen,
    })
}

/// One-line-per-criterion style summary for stdout.
pub fn format_summary(report: &ExperimentReport) -> String {
    let mean = report.mean_auc.map_or("n/a".to_string(), |m| format!("{m:.4}"));
    let sd = report.sd_auc.map_or("n/a".to_string(), |s| format!("{s:.4}"));
    let verdict = match report.pass {
        Some(true) => " PASS",
        Some(false) => " FAIL",
        None => "",
    };
    let band = report
        .band
        .map_or(String::new(), |(lo, hi)| format!(" band [{lo:.3}, {hi:.3}]"));
    format!(
        "model {} n={} {}: mean AUC {mean} (sd {sd}) over {} replicates{band}{verdict}",
        report.model, report.n, report.grid_mode, report.replicate_count
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{GridMode, ModelId};

    fn tiny_plan(replicates: usize) -> ExperimentPlan {
        ExperimentPlan {
            model: ModelSpec {
                model: ModelId::III,
                n: 24,
                grid_mode: GridMode::Balanced,
                m: 10,
                seed: 400,
            },
            replicates,
            reference: None,
            tuning_protocol: TuningProtocol::PerReplicate,
            config: PipelineConfig { threads: Some(2), ..PipelineConfig::default() },
        }
    }

    #[test]
    fn experiment_produces_auc_per_replicate() {
        let report = run_experiment(&tiny_plan(3)).unwrap();
        assert_eq!(report.replicates.len(), 3);
        assert!(report.complete);
        for r in &report.replicates {
            let auc = r.auc.unwrap();
            assert!((0.0..=1.0).contains(&auc));
        }
        assert!(report.mean_auc.is_some());
    }

    #[test]
    fn reference_band_uses_three_sd_plus_margin() {
        let r = Reference { mean_auc: 0.97, sd: 0.01 };
        let (lo, hi) = r.band();
        assert!((lo - 0.91).abs() < 1e-12);
        assert!((hi - 1.03).abs() < 1e-12);
    }

    #[test]
    fn replicate_seeds_are_distinct_and_deterministic() {
        let report1 = run_experiment(&tiny_plan(2)).unwrap();
        let report2 = run_experiment(&tiny_plan(2)).unwrap();
        assert_eq!(report1, report2);
        assert_ne!(report1.replicates[0].seed, report1.replicates[1].seed);
        assert_ne!(
            report1.replicates[0].auc.unwrap(),
            report1.replicates[1].auc.unwrap()
        );
    }
}

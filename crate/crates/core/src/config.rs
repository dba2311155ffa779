//! Pipeline configuration: kernel choices, bandwidth and dimension rules,
//! and the tuning-parameter grids or fixed values.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{BandwidthRule, KernelChoice, KernelSpec};

/// Denominator convention for the GCV criteria.
///
/// `PaperVerbatim` uses the trace factor as printed (unsquared); `Squared`
/// is the conventional GCV denominator. The verbatim criterion is monotone
/// in the ridge on these problems, so it selects the smallest grid value;
/// the squared variant has an interior minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GcvDenominator {
    #[default]
    PaperVerbatim,
    Squared,
}

/// A tuning parameter: either fixed or selected by GCV over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tuning {
    Fixed(f64),
    Gcv { gcv: Vec<f64> },
}

impl Tuning {
    pub fn fixed(v: f64) -> Self {
        Tuning::Fixed(v)
    }

    pub fn gcv(grid: Vec<f64>) -> Self {
        Tuning::Gcv { gcv: grid }
    }

    fn validate(&self, name: &str, allow_any_fixed: bool) -> Result<()> {
        match self {
            Tuning::Fixed(v) => {
                if !v.is_finite() || (!allow_any_fixed && *v <= 0.0) {
                    return Err(Error::validation(format!(
                        "{name}: fixed value must be positive and finite, got {v}"
                    )));
                }
            }
            Tuning::Gcv { gcv } => {
                if gcv.is_empty() {
                    return Err(Error::validation(format!("{name}: tuning grid is empty")));
                }
                if gcv.iter().any(|v| !v.is_finite() || (!allow_any_fixed && *v <= 0.0)) {
                    return Err(Error::validation(format!(
                        "{name}: tuning grid entries must be positive and finite"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The regularization grid {3 * 10^b : b = 0..5}.
pub fn default_reg_grid() -> Vec<f64> {
    (0..=5).map(|b| 3.0 * 10f64.powi(b)).collect()
}

/// The same grid extended downward, {3 * 10^b : b = -6..5}; useful when the
/// squared-denominator GCV is in play.
pub fn extended_reg_grid() -> Vec<f64> {
    (-6..=5).map(|b| 3.0 * 10f64.powi(b)).collect()
}

/// Threshold grid {k * 10^-2 : k = 1..7}.
pub fn default_rho_grid() -> Vec<f64> {
    (1..=7).map(|k| k as f64 * 1e-2).collect()
}

/// How many sufficient-predictor directions to keep per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimensionRule {
    /// The same d for every pair.
    Fixed(usize),
    /// Smallest d whose eigenvalue sum reaches `share` of the spectrum trace.
    EigenvalueShare { share: f64 },
    /// Per-pair overrides keyed as "i-j" with 1-based i < j.
    PerPair { default: usize, pairs: BTreeMap<String, usize> },
}

impl DimensionRule {
    /// Resolve the dimension for a pair (0-based indices).
    pub fn fixed_for_pair(&self, i: usize, j: usize) -> Option<usize> {
        match self {
            DimensionRule::Fixed(d) => Some(*d),
            DimensionRule::EigenvalueShare { .. } => None,
            DimensionRule::PerPair { default, pairs } => {
                let key = format!("{}-{}", i + 1, j + 1);
                Some(*pairs.get(&key).unwrap_or(default))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DimensionRule::Fixed(d) => {
                if *d == 0 {
                    return Err(Error::validation("predictor dimension must be at least 1"));
                }
            }
            DimensionRule::EigenvalueShare { share } => {
                if !(*share > 0.0 && *share <= 1.0) {
                    return Err(Error::validation(format!(
                        "eigenvalue share must lie in (0, 1], got {share}"
                    )));
                }
            }
            DimensionRule::PerPair { default, pairs } => {
                if *default == 0 || pairs.values().any(|&d| d == 0) {
                    return Err(Error::validation("predictor dimensions must be at least 1"));
                }
                for key in pairs.keys() {
                    let ok = key
                        .split_once('-')
                        .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
                        .map(|(a, b)| a >= 1 && b > a)
                        .unwrap_or(false);
                    if !ok {
                        return Err(Error::validation(format!(
                            "pair key '{key}' is not of the form 'i-j' with 1 <= i < j"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::brownian()
    }
}

/// Full pipeline configuration. Every field has a default, so a config file
/// only needs the fields it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Kernel for the first-level (time-domain) basis.
    pub level1_kernel: KernelSpec,
    /// Kernel for the second-level Grams over node groups.
    pub level2_kernel: KernelChoice,
    /// Kernel for the third-level hybrid Grams.
    pub level3_kernel: KernelChoice,
    /// Bandwidth heuristic for all auto-tuned RBF kernels.
    pub bandwidth_rule: BandwidthRule,
    /// Denominator convention shared by GCV(eta), GCV(epsilon), GCV(delta).
    pub gcv_denominator: GcvDenominator,
    /// Sufficient-predictor dimension rule.
    pub d: DimensionRule,
    /// Standardize predictor columns to unit variance before the
    /// third-level kernels.
    pub standardize_predictors: bool,
    /// Also compute each pair's score with the roles of i and j swapped and
    /// log the discrepancy.
    pub swap_diagnostic: bool,
    /// First-level ridge.
    pub eta: Tuning,
    /// Second-level ridge, relative to lambda_max of the conditioning Gram.
    pub epsilon: Tuning,
    /// Third-level ridge, relative to lambda_max of the predictor Gram.
    pub delta: Tuning,
    /// Edge threshold on the conditional-covariance scores.
    pub rho: Tuning,
    /// Worker threads; `None` uses all available parallelism.
    pub threads: Option<usize>,
    /// Recorded in outputs; the fit itself is deterministic.
    pub seed: u64,
    /// Output directory for commands that write artifacts.
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            level1_kernel: KernelSpec::brownian(),
            level2_kernel: KernelChoice::default(),
            level3_kernel: KernelChoice::default(),
            bandwidth_rule: BandwidthRule::InverseMedian,
            gcv_denominator: GcvDenominator::PaperVerbatim,
            d: DimensionRule::Fixed(2),
            standardize_predictors: true,
            swap_diagnostic: true,
            eta: Tuning::Fixed(0.03),
            epsilon: Tuning::Fixed(0.03),
            delta: Tuning::Fixed(0.01),
            rho: Tuning::Gcv { gcv: default_rho_grid() },
            threads: None,
            seed: 0,
            out_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.level1_kernel.validate()?;
        self.level2_kernel.validate()?;
        self.level3_kernel.validate()?;
        self.d.validate()?;
        self.eta.validate("eta", false)?;
        self.epsilon.validate("epsilon", false)?;
        self.delta.validate("delta", false)?;
        self.rho.validate("rho", true)?;
        if self.threads == Some(0) {
            return Err(Error::validation("threads must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = PipelineConfig {
            eta: Tuning::gcv(default_reg_grid()),
            d: DimensionRule::EigenvalueShare { share: 0.9 },
            threads: Some(4),
            ..PipelineConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"delta": 0.05}"#).unwrap();
        assert_eq!(cfg.delta, Tuning::Fixed(0.05));
        assert_eq!(cfg.epsilon, Tuning::Fixed(0.03));
        assert_eq!(cfg.bandwidth_rule, BandwidthRule::InverseMedian);
    }

    #[test]
    fn gcv_tuning_parses_from_object() {
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"epsilon": {"gcv": [3.0, 30.0]}}"#).unwrap();
        assert_eq!(cfg.epsilon, Tuning::gcv(vec![3.0, 30.0]));
    }

    #[test]
    fn empty_grid_rejected() {
        let cfg = PipelineConfig { eta: Tuning::gcv(vec![]), ..PipelineConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn per_pair_dimension_lookup() {
        let mut pairs = BTreeMap::new();
        pairs.insert("1-3".to_string(), 4usize);
        let rule = DimensionRule::PerPair { default: 2, pairs };
        assert_eq!(rule.fixed_for_pair(0, 2), Some(4));
        assert_eq!(rule.fixed_for_pair(1, 2), Some(2));
    }
}

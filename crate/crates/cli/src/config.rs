use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use mosafe_core::dsm::DsmConfig;
use mosafe_core::fault_tree::FaultTree;
use mosafe_core::risk::RiskSpec;
use mosafe_core::scenario::{EtaSignal, ScenarioParams};
use mosafe_core::severity::ImpactSeverityBounds;
use mosafe_core::wpp::DetectorBound;
use mosafe_core::{CountPattern, SequenceSpec};

/// One analysis run. Every block is optional; commands complain about the
/// blocks they need.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "ScenarioParams::running_example")]
    pub scenario: ScenarioParams,
    #[serde(default)]
    pub severity_bounds: ImpactSeverityBounds,
    /// Bisection tolerance for UBI durations, in seconds.
    #[serde(default = "default_tol")]
    pub tau_tolerance: f64,
    #[serde(default)]
    pub injection: Option<InjectionBlock>,
    #[serde(default)]
    pub dsm: Option<DsmConfig>,
    #[serde(default)]
    pub wpp: WppBlock,
    #[serde(default)]
    pub fault_tree: Option<FaultTreeBlock>,
    #[serde(default)]
    pub risk: Option<RiskSpec>,
    #[serde(default)]
    pub monte_carlo: Option<McBlock>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_tol() -> f64 {
    mosafe_core::severity::DEFAULT_TAU_TOL
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InjectionBlock {
    /// UBI steps as a sequence literal or a pattern to sample from.
    #[serde(default)]
    pub ubi: Option<SequenceSpec>,
    #[serde(default)]
    pub eta_braking: EtaSignal,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WppBlock {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub exhaustive: bool,
    #[serde(default = "default_c")]
    pub c: u32,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    #[serde(default)]
    pub detector_bound: DetectorBound,
}

impl Default for WppBlock {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            exhaustive: false,
            c: default_c(),
            r_max: default_r_max(),
            detector_bound: DetectorBound::default(),
        }
    }
}

fn default_trials() -> usize {
    1000
}

fn default_c() -> u32 {
    3
}

fn default_r_max() -> f64 {
    200.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultTreeBlock {
    /// Inline tree.
    #[serde(default)]
    pub tree: Option<FaultTree>,
    /// Tree file, relative to the config file.
    #[serde(default)]
    pub tree_file: Option<PathBuf>,
    /// Build the hazardous-braking tree for this braking reduction instead.
    #[serde(default)]
    pub eta_a_max: Option<f64>,
    #[serde(default)]
    pub hazardous_fn: Option<CountPattern>,
    #[serde(default)]
    pub leaf_probs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub trials: u64,
    /// Detector miss threshold for the binomial comparison; defaults to the
    /// computed contact threshold.
    #[serde(default)]
    pub k_min: Option<u32>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub trajectory_csv: Option<PathBuf>,
    #[serde(default)]
    pub dot: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Parses a config, naming the offending field on error.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("field `{path}`: {}", e.into_inner())
        })?;
        cfg.scenario.validate().context("field `scenario`")?;
        Ok(cfg)
    }

    pub fn require_seed(&self, what: &str) -> Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None => bail!("field `seed` is required for {what}"),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::parse("{}").unwrap();
        assert_eq!(c.scenario, ScenarioParams::running_example());
        assert_eq!(c.wpp.trials, 1000);
        assert!(c.seed.is_none());
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::parse(r#"{"scenario": {"v_init": "fast"}}"#).unwrap_err();
        assert!(format!("{e:#}").contains("scenario.v_init"), "{e:#}");
        let e = RunConfig::parse(r#"{"injection": {"ubi": "{1..3}"}}"#).unwrap_err();
        let msg = format!("{e:#}");
        assert!(
            msg.contains("injection.ubi") && msg.contains("count(kmin,kmax,nmax)"),
            "{msg}"
        );
        let e = RunConfig::parse(r#"{"bogus": 1}"#).unwrap_err();
        assert!(format!("{e:#}").contains("bogus"));
    }
}

//! Risk arithmetic: exposure products, occurrence-rate bounds for detector
//! error patterns, aggregation against acceptance criteria, and Monte Carlo
//! crash-probability estimates over the detailed model.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsm::{frame_rng, simulate_dsm_run, DsmConfig, DsmError};
use crate::scenario::{derive_geometry, ScenarioParams};
use crate::severity::{ImpactSeverityBounds, SeverityClass};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("{name} must lie in [0, 1], got {value}")]
    Probability { name: &'static str, value: f64 },
    #[error("rate must be finite and >= 0, got {0}")]
    NegativeRate(f64),
    #[error("unit mismatch: {0} vs {1}")]
    UnitMismatch(ExposureUnit, ExposureUnit),
    #[error("k_min={k_min} exceeds n_max={n_max}")]
    Bounds { k_min: u32, n_max: u32 },
    #[error("at least one trial is required")]
    NoTrials,
    #[error(transparent)]
    Dsm(#[from] DsmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureUnit {
    PerKm,
    PerHour,
    PerEvent,
}

impl fmt::Display for ExposureUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExposureUnit::PerKm => "per km",
            ExposureUnit::PerHour => "per h",
            ExposureUnit::PerEvent => "per event",
        })
    }
}

/// Occurrence rate tagged with its exposure unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rate {
    pub value: f64,
    pub unit: ExposureUnit,
}

impl Rate {
    pub fn new(value: f64, unit: ExposureUnit) -> Result<Self, RiskError> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(RiskError::NegativeRate(value));
        }
        Ok(Self { value, unit })
    }

    pub fn checked_add(self, other: Rate) -> Result<Rate, RiskError> {
        if self.unit != other.unit {
            return Err(RiskError::UnitMismatch(self.unit, other.unit));
        }
        Ok(Rate {
            value: self.value + other.value,
            unit: self.unit,
        })
    }

    fn validate(&self) -> Result<(), RiskError> {
        Rate::new(self.value, self.unit).map(|_| ())
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e} {}", self.value, self.unit)
    }
}

/// Scenario-condition quadrant: relevant to the element's inputs, to the
/// hazardous behavior, both, or neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    /// Input-relevant only.
    Q1,
    /// Input-relevant and HB-sensitive.
    Q2,
    /// HB-sensitive only.
    Q3,
    Q4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioCondition {
    pub id: String,
    pub quadrant: Quadrant,
    pub occurrence_rate: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceCriterion {
    pub severity: String,
    pub max_rate: Rate,
}

fn check_prob(name: &'static str, value: f64) -> Result<(), RiskError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(RiskError::Probability { name, value })
    }
}

/// Probability of the hazardous behavior: `P(HB | HBSC) * P(HBSC)`.
pub fn hazard_prob(p_hb_given_hbsc: f64, p_hbsc: f64) -> Result<f64, RiskError> {
    check_prob("p_hb_given_hbsc", p_hb_given_hbsc)?;
    check_prob("p_hbsc", p_hbsc)?;
    Ok(p_hb_given_hbsc * p_hbsc)
}

/// Probability of `k_min` or more misses in `n_max` independent frames that
/// each miss with probability `p_fn` (binomial upper tail, in log space).
pub fn hep_rate_bound(p_fn: f64, n_max: u32, k_min: u32) -> Result<f64, RiskError> {
    check_prob("p_fn", p_fn)?;
    if k_min > n_max {
        return Err(RiskError::Bounds { k_min, n_max });
    }
    if k_min == 0 {
        return Ok(1.0);
    }
    if p_fn == 0.0 {
        return Ok(0.0);
    }
    if p_fn == 1.0 {
        return Ok(1.0);
    }
    let n = f64::from(n_max);
    let (lp, lq) = (p_fn.ln(), (-p_fn).ln_1p());
    let mut log_c = 0.0;
    let mut terms = Vec::with_capacity((n_max - k_min + 1) as usize);
    for j in 0..=n_max {
        if j >= k_min {
            let jf = f64::from(j);
            terms.push(log_c + jf * lp + (n - jf) * lq);
        }
        log_c += (n - f64::from(j)).ln() - (f64::from(j) + 1.0).ln();
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    Ok((m + sum.ln()).exp().min(1.0))
}

/// `P(pattern | condition) * lambda(condition)`, keeping the unit.
pub fn pattern_occurrence_rate(p_pattern_given_cond: f64, lambda_cond: Rate) -> Result<Rate, RiskError> {
    check_prob("p_pattern_given_cond", p_pattern_given_cond)?;
    lambda_cond.validate()?;
    Ok(Rate {
        value: p_pattern_given_cond * lambda_cond.value,
        unit: lambda_cond.unit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRate {
    pub id: String,
    /// Pattern probability given the partition's condition, when derived.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_pattern: Option<f64>,
    pub rate: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub severity: String,
    pub max_rate: Rate,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub partitions: Vec<PartitionRate>,
    pub residual: Rate,
    pub aggregate: Rate,
    pub criteria: Vec<CriterionResult>,
}

impl RiskReport {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }
}

/// Sums the residual and partition rates and checks each criterion.
pub fn aggregate_and_check(
    partition_rates: &[PartitionRate],
    residual: Rate,
    criteria: &[AcceptanceCriterion],
) -> Result<RiskReport, RiskError> {
    residual.validate()?;
    let mut aggregate = residual;
    for p in partition_rates {
        p.rate.validate()?;
        aggregate = aggregate.checked_add(p.rate)?;
    }
    let criteria = criteria
        .iter()
        .map(|c| {
            c.max_rate.validate()?;
            if c.max_rate.unit != aggregate.unit {
                return Err(RiskError::UnitMismatch(aggregate.unit, c.max_rate.unit));
            }
            Ok(CriterionResult {
                severity: c.severity.clone(),
                max_rate: c.max_rate,
                pass: aggregate.value <= c.max_rate.value,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(RiskReport {
        partitions: partition_rates.to_vec(),
        residual,
        aggregate,
        criteria,
    })
}

/// One input-relevant condition partition: its detector miss probability and
/// exposure rate, and the miss pattern that is hazardous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrant: Option<Quadrant>,
    pub p_fn: f64,
    pub n_max: u32,
    pub k_min: u32,
    pub exposure: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSpec {
    pub partitions: Vec<PartitionSpec>,
    pub residual: Rate,
    pub criteria: Vec<AcceptanceCriterion>,
}

impl RiskSpec {
    pub fn evaluate(&self) -> Result<RiskReport, RiskError> {
        let rates = self
            .partitions
            .iter()
            .map(|p| {
                let prob = hep_rate_bound(p.p_fn, p.n_max, p.k_min)?;
                Ok(PartitionRate {
                    id: p.id.clone(),
                    p_pattern: Some(prob),
                    rate: pattern_occurrence_rate(prob, p.exposure)?,
                })
            })
            .collect::<Result<Vec<_>, RiskError>>()?;
        aggregate_and_check(&rates, self.residual, &self.criteria)
    }
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub count: u64,
    pub estimate: f64,
    pub ci95: (f64, f64),
}

impl Proportion {
    pub fn new(count: u64, trials: u64) -> Self {
        Self {
            count,
            estimate: if trials == 0 { 0.0 } else { count as f64 / trials as f64 },
            ci95: wilson_interval(count, trials, Z95),
        }
    }

    /// Binomial standard error of the estimate.
    pub fn std_error(&self, trials: u64) -> f64 {
        (self.estimate * (1.0 - self.estimate) / trials as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub trials: u64,
    pub crash: Proportion,
    /// Crashes of exactly class S0, S1, S2, S3.
    pub per_class: [Proportion; 4],
}

/// Repeats the detailed model `trials` times with independent detector draws
/// and tallies crashes by severity class.
pub fn monte_carlo_crash_prob(
    params: &ScenarioParams,
    dsm_config: &DsmConfig,
    severity_bounds: &ImpactSeverityBounds,
    trials: u64,
    seed: u64,
) -> Result<McEstimate, RiskError> {
    monte_carlo_with_progress(params, dsm_config, severity_bounds, trials, seed, |_| {})
}

/// As [`monte_carlo_crash_prob`], calling `progress(done)` after each batch.
pub fn monte_carlo_with_progress(
    params: &ScenarioParams,
    dsm_config: &DsmConfig,
    severity_bounds: &ImpactSeverityBounds,
    trials: u64,
    seed: u64,
    mut progress: impl FnMut(u64),
) -> Result<McEstimate, RiskError> {
    if trials == 0 {
        return Err(RiskError::NoTrials);
    }
    let g = derive_geometry(params).map_err(DsmError::from)?;
    let cfg = DsmConfig {
        seed,
        ..dsm_config.clone()
    };
    cfg.validate(&g)?;
    const BATCH: u64 = 10_000;
    let mut tally = [0u64; 5];
    let mut start = 0;
    while start < trials {
        let end = (start + BATCH).min(trials);
        let part = (start..end)
            .into_par_iter()
            .map(|run| {
                let traj = simulate_dsm_run(params, &g, &cfg, run, false)?;
                let mut t = [0u64; 5];
                if let Some(class) = severity_bounds.classify(traj.outcome.v_impact) {
                    t[0] = 1;
                    t[1 + class.index()] = 1;
                }
                Ok(t)
            })
            .try_reduce(|| [0u64; 5], |a, b| Ok(std::array::from_fn(|i| a[i] + b[i])))
            .map_err(|e: DsmError| RiskError::from(e))?;
        for i in 0..5 {
            tally[i] += part[i];
        }
        start = end;
        progress(start);
    }
    Ok(McEstimate {
        trials,
        crash: Proportion::new(tally[0], trials),
        per_class: std::array::from_fn(|i| Proportion::new(tally[1 + i], trials)),
    })
}

/// Monte Carlo frequency of `k_min` or more misses in `n_max` Bernoulli frames.
pub fn binomial_tail_monte_carlo(
    p_fn: f64,
    n_max: u32,
    k_min: u32,
    trials: u64,
    seed: u64,
) -> Result<Proportion, RiskError> {
    check_prob("p_fn", p_fn)?;
    if trials == 0 {
        return Err(RiskError::NoTrials);
    }
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|run| {
            let mut rng = frame_rng(seed, run, 0);
            let misses = (0..n_max).filter(|_| rng.random::<f64>() < p_fn).count() as u32;
            u64::from(misses >= k_min)
        })
        .sum();
    Ok(Proportion::new(hits, trials))
}

/// Severity classes in report order.
pub fn class_labels() -> [(SeverityClass, &'static str); 4] {
    [
        (SeverityClass::S0, "S0"),
        (SeverityClass::S1, "S1"),
        (SeverityClass::S2, "S2"),
        (SeverityClass::S3, "S3"),
    ]
}

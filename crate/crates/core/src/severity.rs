//! Severity analysis: shortest braking interruptions that reach a given impact
//! speed, the resulting duration table, and the UBI count patterns per
//! severity range.
//!
//! Searches run over continuous interruption intervals `[t0, t0 + tau)`. For a
//! fixed duration the worst start time is found with a coarse grid followed by
//! golden-section refinement around the best grid points, scoring a run by its
//! impact speed on collision and by the negated closest gap otherwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterns::{CountPattern, ErrorSequence, PatternError};
use crate::scenario::{
    derive_geometry, simulate, simulate_interval, EtaSignal, InjectionSpec, ScenarioError, ScenarioGeometry,
    ScenarioParams, Trajectory,
};

pub const DEFAULT_TAU_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeverityError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("impact speed {v_target} m/s is not reachable (max {v_reachable} m/s)")]
    Infeasible { v_target: f64, v_reachable: f64 },
    #[error("invalid severity bounds: {0}")]
    InvalidBounds(String),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
}

/// Upper impact-speed bounds of classes S0, S1 and S2; S3 runs up to `v_cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactSeverityBounds {
    pub v_s0: f64,
    pub v_s1: f64,
    pub v_s2: f64,
    pub v_cap: f64,
}

impl Default for ImpactSeverityBounds {
    fn default() -> Self {
        Self {
            v_s0: 5.3,
            v_s1: 7.8,
            v_s2: 10.3,
            v_cap: 15.0,
        }
    }
}

impl ImpactSeverityBounds {
    pub fn validate(&self) -> Result<(), SeverityError> {
        let ok = 0.0 < self.v_s0 && self.v_s0 < self.v_s1 && self.v_s1 < self.v_s2 && self.v_s2 < self.v_cap;
        if ok && self.v_cap.is_finite() {
            Ok(())
        } else {
            Err(SeverityError::InvalidBounds(format!(
                "need 0 < v_s0 < v_s1 < v_s2 < v_cap, got ({}, {}, {}, {})",
                self.v_s0, self.v_s1, self.v_s2, self.v_cap
            )))
        }
    }

    /// Severity class of an impact; `None` when there is no collision.
    pub fn classify(&self, v_impact: Option<f64>) -> Option<SeverityClass> {
        let v = v_impact?;
        Some(if v <= self.v_s0 {
            SeverityClass::S0
        } else if v <= self.v_s1 {
            SeverityClass::S1
        } else if v <= self.v_s2 {
            SeverityClass::S2
        } else {
            SeverityClass::S3
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeverityClass {
    S0,
    S1,
    S2,
    S3,
}

impl SeverityClass {
    pub const ALL: [SeverityClass; 4] = [
        SeverityClass::S0,
        SeverityClass::S1,
        SeverityClass::S2,
        SeverityClass::S3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Tuning of the worst-start search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub grid_points: usize,
    pub refine_candidates: usize,
    pub start_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid_points: 50,
            refine_candidates: 3,
            start_tol: 1e-3,
        }
    }
}

/// Worst placement of one interruption of a given duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub start: f64,
    pub duration: f64,
    /// `v_impact` on collision, else minus the closest gap.
    pub score: f64,
    pub v_impact: Option<f64>,
}

fn score(traj: &Trajectory) -> f64 {
    match traj.outcome.v_impact {
        Some(v) if traj.outcome.collided => v,
        _ => -traj.min_gap,
    }
}

fn evaluate(params: &ScenarioParams, g: &ScenarioGeometry, start: f64, tau: f64) -> Result<WorstCase, ScenarioError> {
    let traj = simulate_interval(params, g, start, tau, &EtaSignal::Zero)?;
    Ok(WorstCase {
        start,
        duration: tau,
        score: score(&traj),
        v_impact: traj.outcome.v_impact,
    })
}

/// Finds the start time in `[0, t_max - tau]` that maximizes the score of a
/// single interruption of length `tau`.
pub fn worst_case_start(
    params: &ScenarioParams,
    geometry: &ScenarioGeometry,
    tau: f64,
    opts: &SearchOptions,
) -> Result<WorstCase, ScenarioError> {
    let span = (geometry.t_max - tau).max(0.0);
    let n = opts.grid_points.max(2);
    let spacing = span / (n - 1) as f64;
    let grid: Vec<WorstCase> = (0..n)
        .into_par_iter()
        .map(|i| evaluate(params, geometry, spacing * i as f64, tau))
        .collect::<Result<_, _>>()?;
    if span == 0.0 {
        return Ok(grid[0]);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| grid[b].score.total_cmp(&grid[a].score).then(a.cmp(&b)));
    let refined: Vec<WorstCase> = order
        .iter()
        .take(opts.refine_candidates)
        .map(|&i| {
            let lo = (grid[i].start - spacing).max(0.0);
            let hi = (grid[i].start + spacing).min(span);
            golden_max(params, geometry, tau, lo, hi, opts.start_tol)
        })
        .collect::<Result<_, _>>()?;

    let mut best = grid[order[0]];
    for cand in refined {
        if cand.score > best.score {
            best = cand;
        }
    }
    Ok(best)
}

fn golden_max(
    params: &ScenarioParams,
    g: &ScenarioGeometry,
    tau: f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<WorstCase, ScenarioError> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = evaluate(params, g, x1, tau)?;
    let mut f2 = evaluate(params, g, x2, tau)?;
    let mut best = if f2.score > f1.score { f2 } else { f1 };
    while hi - lo > tol {
        if f1.score >= f2.score {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = evaluate(params, g, x1, tau)?;
            if f1.score > best.score {
                best = f1;
            }
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = evaluate(params, g, x2, tau)?;
            if f2.score > best.score {
                best = f2;
            }
        }
    }
    Ok(best)
}

/// Shortest single-interruption duration whose worst placement reaches an
/// impact speed of `v_target` (`0` means first contact), found by bisection.
pub fn min_ubi_duration(v_target: f64, params: &ScenarioParams, tol: f64) -> Result<f64, SeverityError> {
    min_ubi_duration_with(v_target, params, tol, &SearchOptions::default()).map(|w| w.duration)
}

/// As [`min_ubi_duration`], returning the worst placement found at the
/// returned duration.
pub fn min_ubi_duration_with(
    v_target: f64,
    params: &ScenarioParams,
    tol: f64,
    opts: &SearchOptions,
) -> Result<WorstCase, SeverityError> {
    if !(tol > 0.0) {
        return Err(SeverityError::InvalidTolerance(tol));
    }
    let g = derive_geometry(params)?;
    if !(v_target >= 0.0) || v_target > params.v_max {
        return Err(SeverityError::Infeasible {
            v_target,
            v_reachable: params.v_max,
        });
    }
    let reaches = |w: &WorstCase| w.v_impact.is_some() && w.score >= v_target;

    let mut hi = g.t_max;
    let mut hi_case = worst_case_start(params, &g, hi, opts)?;
    if !reaches(&hi_case) {
        return Err(SeverityError::Infeasible {
            v_target,
            v_reachable: hi_case.v_impact.unwrap_or(0.0),
        });
    }
    let mut lo = 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let case = worst_case_start(params, &g, mid, opts)?;
        if reaches(&case) {
            hi = mid;
            hi_case = case;
        } else {
            lo = mid;
        }
    }
    Ok(hi_case)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityTauTable {
    pub tau_contact: f64,
    pub tau_s0: f64,
    pub tau_s1: f64,
    pub tau_s2: f64,
    pub tau_max: f64,
    pub k_contact: u32,
    pub k_s0: u32,
    pub k_s1: u32,
    pub k_s2: u32,
}

pub fn severity_tau_table(
    params: &ScenarioParams,
    bounds: &ImpactSeverityBounds,
    tol: f64,
) -> Result<SeverityTauTable, SeverityError> {
    bounds.validate()?;
    let g = derive_geometry(params)?;
    let tau = |v| min_ubi_duration(v, params, tol);
    let (tau_contact, tau_s0, tau_s1, tau_s2) = (tau(0.0)?, tau(bounds.v_s0)?, tau(bounds.v_s1)?, tau(bounds.v_s2)?);
    let k = |t: f64| params.step_index(t);
    Ok(SeverityTauTable {
        tau_contact,
        tau_s0,
        tau_s1,
        tau_s2,
        tau_max: g.s_pov / params.v_max,
        k_contact: k(tau_contact),
        k_s0: k(tau_s0),
        k_s1: k(tau_s1),
        k_s2: k(tau_s2),
    })
}

/// UBI count patterns by the crash severity they can cause.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityPatternTable {
    pub p_nocrash: CountPattern,
    pub p_s0_3: CountPattern,
    pub p_s1_3: CountPattern,
    pub p_s2_3: CountPattern,
    pub p_s3: CountPattern,
}

impl SeverityPatternTable {
    /// Crash rows (label, pattern), least to most severe.
    pub fn crash_rows(&self) -> [(&'static str, CountPattern); 4] {
        [
            ("S0..3", self.p_s0_3),
            ("S1..3", self.p_s1_3),
            ("S2..3", self.p_s2_3),
            ("S3", self.p_s3),
        ]
    }
}

pub fn severity_patterns(tt: &SeverityTauTable, n_max: u32) -> Result<SeverityPatternTable, PatternError> {
    let at_least = |k: u32| CountPattern::at_least(k.min(n_max), n_max);
    Ok(SeverityPatternTable {
        p_nocrash: CountPattern::new(0, tt.k_contact.saturating_sub(1).min(n_max), n_max)?,
        p_s0_3: at_least(tt.k_contact)?,
        p_s1_3: at_least(tt.k_s0 + 1)?,
        p_s2_3: at_least(tt.k_s1 + 1)?,
        p_s3: at_least(tt.k_s2 + 1)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceResult {
    pub v_multi: Option<f64>,
    pub v_single_max: Option<f64>,
    pub ok: bool,
}

/// Compares the impact of `rho` with the worst single interruption of the same
/// total duration.
pub fn dominance_check(rho: &ErrorSequence, params: &ScenarioParams) -> Result<DominanceResult, SeverityError> {
    let g = derive_geometry(params)?;
    let multi = simulate(params, &InjectionSpec::ubi(rho.clone()))?;
    let v_multi = multi.outcome.v_impact;
    if v_multi.is_none() {
        return Ok(DominanceResult {
            v_multi,
            v_single_max: None,
            ok: true,
        });
    }
    let tau = rho.len() as f64 * params.delta_t;
    let opts = SearchOptions {
        grid_points: (g.n_max as usize + 1).max(50),
        ..SearchOptions::default()
    };
    let single = worst_case_start(params, &g, tau, &opts)?;
    let ok = matches!((single.v_impact, v_multi), (Some(s), Some(m)) if s >= m - 1e-6);
    Ok(DominanceResult {
        v_multi,
        v_single_max: single.v_impact,
        ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ScenarioParams {
        ScenarioParams::running_example()
    }

    /// Closed-form worst case for the running example while the optimal
    /// interruption still ends before the standstill gap is used up:
    /// v^2 = 144 tau^2 / 7 - 80.
    fn v_unconstrained(tau: f64) -> f64 {
        (144.0 * tau * tau / 7.0 - 80.0).max(0.0).sqrt()
    }

    #[test]
    fn contact_duration_matches_closed_form() {
        let tau = min_ubi_duration(0.0, &p(), 1e-3).unwrap();
        let exact = (80.0f64 * 7.0 / 144.0).sqrt();
        assert!((tau - exact).abs() < 2e-3, "{tau} vs {exact}");
    }

    #[test]
    fn worst_case_follows_closed_form() {
        let g = derive_geometry(&p()).unwrap();
        for tau in [2.0, 2.1, 2.2] {
            let w = worst_case_start(&p(), &g, tau, &SearchOptions::default()).unwrap();
            assert!(
                (w.v_impact.unwrap() - v_unconstrained(tau)).abs() < 0.02,
                "tau={tau} {w:?}"
            );
        }
    }

    #[test]
    fn infeasible_targets() {
        assert!(matches!(
            min_ubi_duration(16.0, &p(), 1e-3),
            Err(SeverityError::Infeasible { .. })
        ));
        assert!(matches!(
            min_ubi_duration(-1.0, &p(), 1e-3),
            Err(SeverityError::Infeasible { .. })
        ));
        assert!(matches!(
            min_ubi_duration(1.0, &p(), 0.0),
            Err(SeverityError::InvalidTolerance(_))
        ));
    }

    #[test]
    fn monotone_in_target() {
        let taus: Vec<f64> = [0.0, 3.0, 6.0, 9.0]
            .iter()
            .map(|&v| min_ubi_duration(v, &p(), 1e-3).unwrap())
            .collect();
        assert!(taus.windows(2).all(|w| w[0] < w[1]), "{taus:?}");
    }

    #[test]
    fn bounds_validation_and_classes() {
        assert!(ImpactSeverityBounds::default().validate().is_ok());
        let bad = ImpactSeverityBounds {
            v_s1: 5.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let b = ImpactSeverityBounds::default();
        assert_eq!(b.classify(None), None);
        assert_eq!(b.classify(Some(0.0)), Some(SeverityClass::S0));
        assert_eq!(b.classify(Some(5.3)), Some(SeverityClass::S0));
        assert_eq!(b.classify(Some(6.0)), Some(SeverityClass::S1));
        assert_eq!(b.classify(Some(10.0)), Some(SeverityClass::S2));
        assert_eq!(b.classify(Some(12.0)), Some(SeverityClass::S3));
    }

    #[test]
    fn patterns_from_table() {
        let tt = SeverityTauTable {
            tau_contact: 1.97,
            tau_s0: 2.29,
            tau_s1: 2.76,
            tau_s2: 3.57,
            tau_max: 7.83,
            k_contact: 19,
            k_s0: 22,
            k_s1: 27,
            k_s2: 35,
        };
        let spt = severity_patterns(&tt, 150).unwrap();
        assert_eq!(spt.p_nocrash.to_string(), "count(0,18,150)");
        assert_eq!(spt.p_s0_3.to_string(), "count(19,150,150)");
        assert_eq!(spt.p_s1_3.to_string(), "count(23,150,150)");
        assert_eq!(spt.p_s2_3.to_string(), "count(28,150,150)");
        assert_eq!(spt.p_s3.to_string(), "count(36,150,150)");
        let rows = spt.crash_rows();
        for w in rows.windows(2) {
            assert!(w[1].1.is_subset(&w[0].1).unwrap());
        }
    }

    #[test]
    fn dominance_trivial_for_empty() {
        let r = dominance_check(&ErrorSequence::empty(150), &p()).unwrap();
        assert!(r.ok && r.v_multi.is_none());
    }
}

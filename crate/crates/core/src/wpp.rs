//! Weakest-precondition patterns: mapping UBI patterns back through the
//! policy (identity) and the tracker (over-approximation) to tracker and
//! detector false-negative patterns, with simulation-based verification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsm::{simulate_dsm_run, ConfigKind, DetectorModel, DsmConfig, DsmError};
use crate::patterns::{CountPattern, ErrorSequence, Pattern};
use crate::scenario::{derive_geometry, ScenarioParams, Trajectory};
use crate::severity::{ImpactSeverityBounds, SeverityClass, SeverityPatternTable, SeverityTauTable};

/// Tracker-output errors cause exactly the braking interruptions they replace.
pub fn wpp_policy(ubi: &CountPattern) -> CountPattern {
    *ubi
}

/// Detector-output pattern covering every detector sequence that can produce
/// a tracker sequence in `tracker`: the tracker never adds misses, so at least
/// `k_min` detector misses are needed.
pub fn wpp_tracker_overapprox(tracker: &CountPattern) -> CountPattern {
    CountPattern::at_least(tracker.k_min(), tracker.n_max()).expect("k_min <= n_max holds for a valid pattern")
}

/// Lower bound used for the detector column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetectorBound {
    /// Same `k_min` as the UBI pattern (k_contact, k_S0+1, k_S1+1, k_S2+1).
    #[default]
    FromUbi,
    /// Unshifted thresholds (k_contact, k_S0, k_S1, k_S2).
    Unshifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HepRow {
    pub label: String,
    /// Least severe class the row covers.
    pub min_class: SeverityClass,
    pub ubi_pattern: CountPattern,
    pub tracker_pattern: CountPattern,
    pub detector_pattern: CountPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct HepTable {
    pub rows: Vec<HepRow>,
}

impl HepTable {
    pub fn from_rows(rows: &[(&str, SeverityClass, CountPattern)]) -> Self {
        let rows = rows
            .iter()
            .map(|&(label, min_class, ubi)| {
                let tracker = wpp_policy(&ubi);
                HepRow {
                    label: label.to_string(),
                    min_class,
                    ubi_pattern: ubi,
                    tracker_pattern: tracker,
                    detector_pattern: wpp_tracker_overapprox(&tracker),
                }
            })
            .collect();
        Self { rows }
    }
}

pub fn build_hep_table(spt: &SeverityPatternTable) -> HepTable {
    let classes = SeverityClass::ALL;
    let rows: Vec<_> = spt
        .crash_rows()
        .iter()
        .zip(classes)
        .map(|(&(label, p), class)| (label, class, p))
        .collect();
    HepTable::from_rows(&rows)
}

/// As [`build_hep_table`], with the detector lower bound chosen by `bound`.
pub fn build_hep_table_with(spt: &SeverityPatternTable, tt: &SeverityTauTable, bound: DetectorBound) -> HepTable {
    let mut table = build_hep_table(spt);
    if bound == DetectorBound::Unshifted {
        let ks = [tt.k_contact, tt.k_s0, tt.k_s1, tt.k_s2];
        for (row, k) in table.rows.iter_mut().zip(ks) {
            let n = row.detector_pattern.n_max();
            row.detector_pattern = CountPattern::at_least(k.min(n), n).expect("bounded by n_max");
        }
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WppVerifyOptions {
    pub trials: usize,
    pub seed: u64,
    /// Enumerate every sequence instead of sampling (horizons up to 16).
    pub exhaustive: bool,
    pub r_max: f64,
    pub c: u32,
    pub bounds: ImpactSeverityBounds,
    /// Least severe class guarded by the pattern, for the soundness check.
    pub min_class: SeverityClass,
    /// Detector lower bound checked for soundness; defaults to the pattern's `k_min`.
    pub detector_k_min: Option<u32>,
}

impl Default for WppVerifyOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            exhaustive: false,
            r_max: 200.0,
            c: 3,
            bounds: ImpactSeverityBounds::default(),
            min_class: SeverityClass::S0,
            detector_k_min: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityViolation {
    pub rho: ErrorSequence,
    pub max_accel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundnessViolation {
    pub rho: ErrorSequence,
    pub detector_misses: usize,
    pub v_impact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WppReport {
    pub pattern: CountPattern,
    pub identity_checked: usize,
    pub max_accel_diff: f64,
    pub identity_violations: Vec<IdentityViolation>,
    pub soundness_checked: usize,
    pub soundness_violations: Vec<SoundnessViolation>,
}

impl WppReport {
    pub fn ok(&self) -> bool {
        self.identity_violations.is_empty() && self.soundness_violations.is_empty()
    }
}

/// Largest pointwise acceleration difference between two runs; infinite when
/// they differ in length.
pub fn accel_trace_diff(a: &Trajectory, b: &Trajectory) -> f64 {
    if a.samples.len() != b.samples.len() {
        return f64::INFINITY;
    }
    a.samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| (x.a - y.a).abs())
        .fold(0.0, f64::max)
}

const IDENTITY_TOL: f64 = 1e-9;

/// Checks the identity claim on sequences from `pattern` and the detector
/// over-approximation on sequences from the whole horizon.
pub fn verify_wpp(
    params: &ScenarioParams,
    pattern: &CountPattern,
    opts: &WppVerifyOptions,
) -> Result<WppReport, DsmError> {
    let g = derive_geometry(params)?;
    let n = pattern.n_max();
    if n != g.n_max {
        return Err(DsmError::InvalidConfig(format!(
            "pattern horizon {n} does not match the scenario's {} steps",
            g.n_max
        )));
    }
    let detector = DetectorModel {
        r_max: opts.r_max,
        p_fn: 0.0,
        sigma_d: 0.0,
    };
    let run = |kind, rho: &ErrorSequence| {
        let cfg = DsmConfig::new(kind, Some(rho.clone()), detector, opts.c);
        simulate_dsm_run(params, &g, &cfg, 0, true)
    };

    let (in_pattern, anywhere) = if opts.exhaustive {
        let all = enumerate(n);
        let members = all
            .iter()
            .filter(|r| pattern.contains(r).unwrap_or(false))
            .cloned()
            .collect();
        (members, all)
    } else {
        let full = Pattern::Count(CountPattern::at_least(0, n)?);
        (
            Pattern::Count(*pattern).sample(opts.seed, opts.trials),
            full.sample(opts.seed.wrapping_add(1), opts.trials),
        )
    };

    let diffs: Vec<(f64, &ErrorSequence)> = in_pattern
        .par_iter()
        .map(|rho| {
            Ok((
                accel_trace_diff(&run(ConfigKind::Pa, rho)?, &run(ConfigKind::PtildeD, rho)?),
                rho,
            ))
        })
        .collect::<Result<_, DsmError>>()?;
    let max_accel_diff = diffs.iter().map(|d| d.0).fold(0.0, f64::max);
    let identity_violations = diffs
        .iter()
        .filter(|(d, _)| !(*d <= IDENTITY_TOL))
        .map(|(d, rho)| IdentityViolation {
            rho: (*rho).clone(),
            max_accel_diff: *d,
        })
        .collect();

    let k_min = opts.detector_k_min.unwrap_or(pattern.k_min()) as usize;
    let outcomes: Vec<Option<SoundnessViolation>> = anywhere
        .par_iter()
        .map(|rho| {
            let traj = run(ConfigKind::PhatD, rho)?;
            let class = opts.bounds.classify(traj.outcome.v_impact);
            Ok(match (class, traj.outcome.v_impact) {
                (Some(c), Some(v)) if c >= opts.min_class && rho.len() < k_min => Some(SoundnessViolation {
                    rho: rho.clone(),
                    detector_misses: rho.len(),
                    v_impact: v,
                }),
                _ => None,
            })
        })
        .collect::<Result<_, DsmError>>()?;

    Ok(WppReport {
        pattern: *pattern,
        identity_checked: in_pattern.len(),
        max_accel_diff,
        identity_violations,
        soundness_checked: anywhere.len(),
        soundness_violations: outcomes.into_iter().flatten().collect(),
    })
}

fn enumerate(n: u32) -> Vec<ErrorSequence> {
    assert!(n <= 16, "exhaustive enumeration is limited to 16 steps");
    (0u32..1 << n)
        .map(|mask| ErrorSequence::new((0..n).filter(|i| mask >> i & 1 == 1), n).expect("steps below n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsm::tracker_fn_sequence;

    fn cp(a: u32, b: u32, n: u32) -> CountPattern {
        CountPattern::new(a, b, n).unwrap()
    }

    #[test]
    fn policy_is_identity() {
        for p in [cp(19, 150, 150), cp(0, 0, 150), cp(36, 150, 150)] {
            assert_eq!(wpp_policy(&p), p);
        }
    }

    #[test]
    fn tracker_overapprox_lifts_k_max() {
        assert_eq!(wpp_tracker_overapprox(&cp(19, 150, 150)), cp(19, 150, 150));
        assert_eq!(wpp_tracker_overapprox(&cp(23, 80, 150)), cp(23, 150, 150));
        assert_eq!(wpp_tracker_overapprox(&cp(0, 0, 150)), cp(0, 150, 150));
    }

    #[test]
    fn empty_table() {
        assert!(HepTable::from_rows(&[]).rows.is_empty());
    }

    #[test]
    fn table_columns() {
        let spt = SeverityPatternTable {
            p_nocrash: cp(0, 18, 150),
            p_s0_3: cp(19, 150, 150),
            p_s1_3: cp(23, 150, 150),
            p_s2_3: cp(28, 150, 150),
            p_s3: cp(36, 150, 150),
        };
        let t = build_hep_table(&spt);
        assert_eq!(t.rows.len(), 4);
        for r in &t.rows {
            assert_eq!(r.tracker_pattern, r.ubi_pattern);
            assert_eq!(r.detector_pattern.k_min(), r.ubi_pattern.k_min());
        }
        assert_eq!(t.rows[3].detector_pattern, cp(36, 150, 150));

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
        let lit = build_hep_table_with(&spt, &tt, DetectorBound::Unshifted);
        let ks: Vec<u32> = lit.rows.iter().map(|r| r.detector_pattern.k_min()).collect();
        assert_eq!(ks, [19, 22, 27, 35]);
    }

    /// Detector sequences with fewer misses than `k` never yield a tracker
    /// sequence with `k` or more misses.
    #[test]
    fn tracker_overapprox_exhaustive() {
        let n = 8;
        for c in 0..=3 {
            for mask in 0u32..1 << n {
                let det: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                let out = tracker_fn_sequence(&det, c);
                let k_in = det.iter().filter(|&&b| b).count();
                let k_out = out.iter().filter(|&&b| b).count();
                assert!(k_out <= k_in);
                for k_min in 0..=n as usize {
                    let p = wpp_tracker_overapprox(&cp(k_min as u32, n, n));
                    if k_out >= k_min {
                        assert!(k_in >= p.k_min() as usize);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_sequence_matches_nominal() {
        let params = ScenarioParams::running_example();
        let opts = WppVerifyOptions {
            trials: 4,
            ..Default::default()
        };
        let rep = verify_wpp(&params, &cp(0, 0, 150), &opts).unwrap();
        assert!(rep.ok());
        assert_eq!(rep.max_accel_diff, 0.0);
    }

    #[test]
    fn horizon_mismatch_is_an_error() {
        let params = ScenarioParams::running_example();
        assert!(verify_wpp(&params, &cp(0, 8, 8), &WppVerifyOptions::default()).is_err());
    }
}

//! Detailed scenario model: a range-limited detector with false negatives, a
//! keep-alive tracker, an odometry speed estimate, and the four injection
//! configurations used to relate tracker and detector errors to braking
//! interruptions.
//!
//! Detector and tracker run once per step at `t = k * delta_t`. Between
//! frames the tracker output is held: while the track is alive the policy
//! sees the continuous ground-truth gap, otherwise it sees `r_max`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterns::{ErrorSequence, PatternError, SequenceSpec};
use crate::scenario::{
    integrate, max_acc, policy, policy_with_inputs, Controller, RunOptions, ScenarioError, ScenarioGeometry,
    ScenarioParams, Trajectory, VehicleState,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DsmError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("tracker history must hold c+1={expected} values, got {got}")]
    HistoryLength { expected: usize, got: usize },
    #[error("invalid dsm configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub r_max: f64,
    pub p_fn: f64,
    #[serde(default)]
    pub sigma_d: f64,
}

impl DetectorModel {
    pub fn validate(&self) -> Result<(), DsmError> {
        if !(self.r_max.is_finite() && self.r_max > 0.0) {
            return Err(DsmError::InvalidConfig(format!(
                "r_max must be positive, got {}",
                self.r_max
            )));
        }
        if !(0.0..=1.0).contains(&self.p_fn) {
            return Err(DsmError::InvalidConfig(format!(
                "p_fn must lie in [0, 1], got {}",
                self.p_fn
            )));
        }
        if !(self.sigma_d.is_finite() && self.sigma_d >= 0.0) {
            return Err(DsmError::InvalidConfig(format!(
                "sigma_d must be >= 0, got {}",
                self.sigma_d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    pub c: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OdometryModel {
    #[serde(default)]
    pub eta_speed: f64,
}

/// Where the model is instrumented and what is injected there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfigKind {
    /// Full stochastic detector, tracker and odometry chain; no injection.
    #[serde(rename = "C_DSM")]
    Dsm,
    /// Ground truth into the policy, braking interruptions at its output.
    #[serde(rename = "C_Pa")]
    Pa,
    /// Ground truth, with the tracker output forced to `r_max` at injected steps.
    #[serde(rename = "C_Ptilde_d")]
    PtildeD,
    /// Deterministic detector with false negatives at injected steps, feeding
    /// the real tracker.
    #[serde(rename = "C_Phat_d")]
    PhatD,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsmConfig {
    pub kind: ConfigKind,
    #[serde(default)]
    pub injected: Option<SequenceSpec>,
    pub detector: DetectorModel,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub odometry: OdometryModel,
    #[serde(default)]
    pub seed: u64,
}

impl DsmConfig {
    pub fn new(kind: ConfigKind, injected: Option<ErrorSequence>, detector: DetectorModel, c: u32) -> Self {
        Self {
            kind,
            injected: injected.map(SequenceSpec::Sequence),
            detector,
            tracker: TrackerConfig { c },
            odometry: OdometryModel::default(),
            seed: 0,
        }
    }

    pub fn validate(&self, geometry: &ScenarioGeometry) -> Result<(), DsmError> {
        self.detector.validate()?;
        if !(0.0..1.0).contains(&self.odometry.eta_speed) {
            return Err(DsmError::InvalidConfig(format!(
                "eta_speed must lie in [0, 1), got {}",
                self.odometry.eta_speed
            )));
        }
        match (&self.injected, self.kind) {
            (Some(_), ConfigKind::Dsm) => Err(DsmError::InvalidConfig("C_DSM takes no injection".into())),
            (Some(spec), _) if spec.n_max() != geometry.n_max => Err(DsmError::InvalidConfig(format!(
                "injection horizon {} does not match the scenario's {} steps",
                spec.n_max(),
                geometry.n_max
            ))),
            _ => Ok(()),
        }
    }

    /// The injected sequence (patterns are sampled with `seed`).
    pub fn injected_sequence(&self, n_max: u32) -> ErrorSequence {
        match &self.injected {
            Some(spec) => spec.resolve(self.seed),
            None => ErrorSequence::empty(n_max),
        }
    }
}

/// Ground-truth gap as seen within sensor range.
pub fn range_limit(d: f64, r_max: f64) -> f64 {
    if d < 0.0 {
        0.0
    } else if d < r_max {
        d
    } else {
        r_max
    }
}

/// One detector frame: `r_max` on a false negative, else the noisy gap.
pub fn detector_sample<R: Rng + ?Sized>(d_bar: f64, model: &DetectorModel, rng: &mut R) -> f64 {
    if rng.random::<f64>() < model.p_fn {
        return model.r_max;
    }
    let noise = if model.sigma_d > 0.0 {
        Normal::new(0.0, model.sigma_d).map_or(0.0, |n| n.sample(rng))
    } else {
        0.0
    };
    (d_bar + noise).clamp(0.0, model.r_max)
}

/// Keep-alive tracker: the track is dropped when the whole window of the last
/// `c + 1` detector outputs (oldest first) is `r_max`.
pub fn tracker_step(history: &[f64], d_bar: f64, r_max: f64, cfg: &TrackerConfig) -> Result<f64, DsmError> {
    let expected = cfg.c as usize + 1;
    if history.len() != expected {
        return Err(DsmError::HistoryLength {
            expected,
            got: history.len(),
        });
    }
    Ok(if history.iter().all(|&h| h >= r_max) {
        r_max
    } else {
        d_bar
    })
}

/// Tracker false negatives produced by a detector false-negative sequence,
/// with frames before the first one counting as false negatives.
pub fn tracker_fn_sequence(detector_fn: &[bool], c: u32) -> Vec<bool> {
    let w = c as usize + 1;
    let mut run = w - 1; // padding frames before k = 0
    detector_fn
        .iter()
        .map(|&miss| {
            run = if miss { run + 1 } else { 0 };
            run >= w
        })
        .collect()
}

/// Per-frame generator keyed by `(seed, run, frame)`, independent of the order
/// in which runs or frames are evaluated.
pub fn frame_rng(seed: u64, run: u64, frame: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng.set_word_pos(u128::from(frame) << 8);
    rng
}

struct DsmController<'a> {
    params: &'a ScenarioParams,
    cfg: &'a DsmConfig,
    rho: ErrorSequence,
    run: u64,
    history: Vec<f64>,
    head: usize,
    tracked: bool,
}

impl DsmController<'_> {
    fn push(&mut self, d_hat: f64) {
        self.history[self.head] = d_hat;
        self.head = (self.head + 1) % self.history.len();
        self.tracked = self.history.iter().any(|&h| h < self.cfg.detector.r_max);
    }
}

impl Controller for DsmController<'_> {
    fn begin_step(&mut self, k: u32, _state: &VehicleState, d: f64) {
        let r_max = self.cfg.detector.r_max;
        let d_bar = range_limit(d, r_max);
        match self.cfg.kind {
            ConfigKind::Dsm => {
                let mut rng = frame_rng(self.cfg.seed, self.run, k);
                let d_hat = detector_sample(d_bar, &self.cfg.detector, &mut rng);
                self.push(d_hat);
            }
            ConfigKind::PhatD => {
                let d_hat = if self.rho.contains(k) { r_max } else { d_bar };
                self.push(d_hat);
            }
            ConfigKind::PtildeD => self.tracked = !self.rho.contains(k),
            ConfigKind::Pa => {}
        }
    }

    fn accel(&mut self, _t: f64, k: u32, state: &VehicleState, d: f64) -> f64 {
        let r_max = self.cfg.detector.r_max;
        match self.cfg.kind {
            ConfigKind::Pa => {
                if self.rho.contains(k) {
                    max_acc(state.s_dot, self.params)
                } else {
                    policy(d, state.s_dot, self.params)
                }
            }
            ConfigKind::PtildeD => {
                let d_tilde = if self.tracked { d } else { r_max };
                policy(d_tilde, state.s_dot, self.params)
            }
            ConfigKind::Dsm | ConfigKind::PhatD => {
                let d_tilde = if self.tracked { range_limit(d, r_max) } else { r_max };
                let v_hat = (1.0 - self.cfg.odometry.eta_speed) * state.s_dot;
                policy_with_inputs(d_tilde, state.s_dot, v_hat, 1.0, self.params)
            }
        }
    }

    fn quiescent(&self, k: u32) -> bool {
        match self.cfg.kind {
            ConfigKind::Dsm => self.cfg.detector.p_fn == 0.0 && self.cfg.detector.sigma_d == 0.0,
            _ => self.rho.last().is_none_or(|last| last < k),
        }
    }
}

/// Runs one configuration of the detailed model.
pub fn simulate_dsm(
    params: &ScenarioParams,
    geometry: &ScenarioGeometry,
    config: &DsmConfig,
) -> Result<Trajectory, DsmError> {
    simulate_dsm_run(params, geometry, config, 0, true)
}

/// As [`simulate_dsm`] for Monte Carlo run `run`; detector draws are keyed by
/// `(config.seed, run, frame)`.
pub fn simulate_dsm_run(
    params: &ScenarioParams,
    geometry: &ScenarioGeometry,
    config: &DsmConfig,
    run: u64,
    record: bool,
) -> Result<Trajectory, DsmError> {
    config.validate(geometry)?;
    // Injected patterns are re-sampled per run.
    let rho = match &config.injected {
        Some(spec) => spec.resolve(config.seed.wrapping_add(run)),
        None => ErrorSequence::empty(geometry.n_max),
    };
    let r_max = config.detector.r_max;
    let mut ctl = DsmController {
        params,
        cfg: config,
        rho,
        run,
        history: vec![r_max; config.tracker.c as usize + 1],
        head: 0,
        tracked: false,
    };
    Ok(integrate(params, geometry, &mut ctl, RunOptions { record })?)
}

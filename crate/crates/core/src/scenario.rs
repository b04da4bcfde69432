//! High-level scenario model: a subject vehicle braking for a stopped vehicle
//! ahead, with braking interruptions (UBI) and braking reductions (UIB)
//! injected into the driving policy.
//!
//! The closed loop is integrated with a zero-order hold of the commanded
//! acceleration over sub-steps of `delta_t / substeps_per_step`, using exact
//! constant-acceleration kinematics inside each sub-step. A sub-step is split
//! whenever the speed reaches zero or `v_max`, the gap reaches zero, or the
//! controller reports a switching edge, so the piecewise-constant policy is
//! integrated without overshooting any of those events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterns::ErrorSequence;

/// Relative slack when comparing the required braking against `a_b_min`.
/// Rounding along the nominal braking parabola must not flip the policy into
/// its acceleration branch.
pub const POLICY_REL_TOL: f64 = 1e-6;

/// Gaps within this distance of `delta_s_stand` count as the standstill region.
pub const STANDSTILL_DIST_TOL: f64 = 1e-6;

const STEP_EPS: f64 = 1e-9;
const MAX_PIECES_PER_SUBSTEP: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid scenario parameter: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid injection: {0}")]
    InvalidInjection(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("simulation did not terminate before t={t_cap:.3} s")]
    Diverged { t_cap: f64 },
}

/// Kinematic and policy constants of one approach scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub v_init: f64,
    pub v_max: f64,
    pub a_b_min: f64,
    pub a_b_max: f64,
    pub a_max: f64,
    pub delta_s_stand: f64,
    pub delta_t: f64,
    #[serde(default = "default_substeps")]
    pub substeps_per_step: u32,
}

fn default_substeps() -> u32 {
    10
}

impl ScenarioParams {
    /// The running example: 15 m/s approach, comfortable braking at 1 m/s²,
    /// 8 m/s² braking capacity, 5 m standstill gap, 0.1 s steps.
    pub fn running_example() -> Self {
        Self {
            v_init: 15.0,
            v_max: 15.0,
            a_b_min: 1.0,
            a_b_max: 8.0,
            a_max: 1.0,
            delta_s_stand: 5.0,
            delta_t: 0.1,
            substeps_per_step: 10,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            ("v_max", self.v_max),
            ("a_b_min", self.a_b_min),
            ("a_b_max", self.a_b_max),
            ("a_max", self.a_max),
            ("delta_s_stand", self.delta_s_stand),
            ("delta_t", self.delta_t),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ScenarioError::InvalidParams(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if !(self.v_init.is_finite() && self.v_init >= 0.0) {
            return Err(ScenarioError::InvalidParams(format!(
                "v_init must be >= 0, got {}",
                self.v_init
            )));
        }
        if self.a_b_min > self.a_b_max {
            return Err(ScenarioError::InvalidParams("a_b_min must not exceed a_b_max".into()));
        }
        if self.v_init > self.v_max {
            return Err(ScenarioError::InvalidParams("v_init must not exceed v_max".into()));
        }
        if self.substeps_per_step == 0 {
            return Err(ScenarioError::InvalidParams("substeps_per_step must be >= 1".into()));
        }
        Ok(())
    }

    pub fn substep(&self) -> f64 {
        self.delta_t / f64::from(self.substeps_per_step)
    }

    /// `k(t) = floor(t / delta_t)`.
    pub fn step_index(&self, t: f64) -> u32 {
        step_index(t, self.delta_t)
    }
}

/// `floor(t / dt)`, robust to representation error in `t` and `dt`.
pub fn step_index(t: f64, dt: f64) -> u32 {
    (t / dt + STEP_EPS).floor().max(0.0) as u32
}

/// Positions and horizon implied by the scenario constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGeometry {
    pub s_stop: f64,
    pub s_pov: f64,
    pub t_max: f64,
    pub n_max: u32,
}

pub fn derive_geometry(params: &ScenarioParams) -> Result<ScenarioGeometry, ScenarioError> {
    if params.a_b_min == 0.0 {
        return Err(ScenarioError::InvalidParams("a_b_min must be non-zero".into()));
    }
    params.validate()?;
    let s_stop = params.v_init * params.v_init / (2.0 * params.a_b_min);
    let t_max = params.v_init / params.a_b_min;
    let n_max = (t_max / params.delta_t - STEP_EPS).ceil().max(0.0) as u32;
    Ok(ScenarioGeometry {
        s_stop,
        s_pov: s_stop + params.delta_s_stand,
        t_max,
        n_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub s: f64,
    pub s_dot: f64,
    pub t: f64,
}

/// Braking needed to stop `delta_s_stand` short of the obstacle.
pub fn required_braking(d: f64, s_dot: f64, delta_s_stand: f64) -> Result<f64, ScenarioError> {
    if d <= delta_s_stand {
        return Err(ScenarioError::Domain(format!(
            "required braking undefined for d={d} <= delta_s_stand={delta_s_stand}"
        )));
    }
    Ok(s_dot * s_dot / (2.0 * (d - delta_s_stand)))
}

/// The driving policy: commanded acceleration (negative = braking).
pub fn policy(d: f64, s_dot: f64, params: &ScenarioParams) -> f64 {
    policy_with_inputs(d, s_dot, s_dot, 1.0, params)
}

/// Policy with an odometry speed estimate feeding the required-braking term
/// and a multiplicative scale applied to it (`1 - eta` for UIB injection).
/// The `v_max` and standstill tests use the true speed.
pub fn policy_with_inputs(d: f64, s_dot: f64, speed_estimate: f64, req_scale: f64, params: &ScenarioParams) -> f64 {
    if d <= params.delta_s_stand + STANDSTILL_DIST_TOL {
        return if s_dot <= 0.0 { 0.0 } else { -params.a_b_max };
    }
    let a_req = speed_estimate * speed_estimate / (2.0 * (d - params.delta_s_stand)) * req_scale;
    if a_req < params.a_b_min * (1.0 - POLICY_REL_TOL) {
        if s_dot >= params.v_max {
            0.0
        } else {
            params.a_max
        }
    } else if a_req < params.a_b_max {
        -a_req
    } else {
        // a_req == a_b_max is unassigned by the case split; it goes here.
        -params.a_b_max
    }
}

/// Acceleration injected during a braking interruption.
pub fn max_acc(s_dot: f64, params: &ScenarioParams) -> f64 {
    if s_dot < params.v_max {
        params.a_max
    } else {
        0.0
    }
}

/// Returns `h` when the step containing `t` is in `rho`, else `h_prime`.
pub fn injection_switch(t: f64, h: f64, h_prime: f64, rho: &ErrorSequence, delta_t: f64) -> f64 {
    if rho.contains(step_index(t, delta_t)) {
        h
    } else {
        h_prime
    }
}

/// Relative reduction of the required braking, piecewise constant per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EtaSignal {
    #[default]
    Zero,
    Constant(f64),
    /// One value per step; steps past the end use 0.
    PerStep(Vec<f64>),
}

impl EtaSignal {
    pub fn at_step(&self, k: u32) -> f64 {
        match self {
            EtaSignal::Zero => 0.0,
            EtaSignal::Constant(v) => *v,
            EtaSignal::PerStep(values) => values.get(k as usize).copied().unwrap_or(0.0),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            EtaSignal::Zero => 0.0,
            EtaSignal::Constant(v) => *v,
            EtaSignal::PerStep(values) => values.iter().copied().fold(0.0, f64::max),
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        let valid = match self {
            EtaSignal::Zero => true,
            EtaSignal::Constant(v) => ok(*v),
            EtaSignal::PerStep(values) => values.iter().all(|&v| ok(v)),
        };
        if valid {
            Ok(())
        } else {
            Err(ScenarioError::InvalidInjection("eta values must lie in [0, 1]".into()))
        }
    }
}

/// Hazardous behavior injected into one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub ubi_steps: ErrorSequence,
    #[serde(default)]
    pub eta_braking: EtaSignal,
}

impl InjectionSpec {
    pub fn none(n_max: u32) -> Self {
        Self {
            ubi_steps: ErrorSequence::empty(n_max),
            eta_braking: EtaSignal::Zero,
        }
    }

    pub fn ubi(ubi_steps: ErrorSequence) -> Self {
        Self {
            ubi_steps,
            eta_braking: EtaSignal::Zero,
        }
    }

    pub fn uib(n_max: u32, eta: f64) -> Self {
        Self {
            ubi_steps: ErrorSequence::empty(n_max),
            eta_braking: EtaSignal::Constant(eta),
        }
    }

    pub fn validate(&self, geometry: &ScenarioGeometry) -> Result<(), ScenarioError> {
        if let Some(last) = self.ubi_steps.last() {
            if last >= geometry.n_max {
                return Err(ScenarioError::InvalidInjection(format!(
                    "UBI step {last} is outside the horizon of {} steps",
                    geometry.n_max
                )));
            }
        }
        self.eta_braking.validate()
    }
}

/// One sub-step sample: time, position, speed, applied acceleration, gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub a: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrashOutcome {
    pub collided: bool,
    pub v_impact: Option<f64>,
    pub t_c: Option<f64>,
}

impl CrashOutcome {
    pub fn no_crash() -> Self {
        Self {
            collided: false,
            v_impact: None,
            t_c: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub outcome: CrashOutcome,
    pub final_overshoot: f64,
    /// Smallest gap to the obstacle over the run (0 on collision).
    pub min_gap: f64,
}

impl Trajectory {
    pub fn accelerations(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.a)
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

/// Crash check over a sampled trajectory: first crossing of `d <= 0`, with
/// time and speed linearly interpolated inside the crossing interval.
pub fn crash_check(samples: &[Sample], s_pov: f64) -> Result<CrashOutcome, ScenarioError> {
    let first = samples.first().ok_or(ScenarioError::EmptyTrajectory)?;
    let gap = |x: &Sample| s_pov - x.s;
    if gap(first) <= 0.0 {
        return Ok(CrashOutcome {
            collided: true,
            v_impact: Some(first.v),
            t_c: Some(first.t),
        });
    }
    for pair in samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (da, db) = (gap(a), gap(b));
        if db <= 0.0 {
            let frac = da / (da - db);
            return Ok(CrashOutcome {
                collided: true,
                v_impact: Some(a.v + frac * (b.v - a.v)),
                t_c: Some(a.t + frac * (b.t - a.t)),
            });
        }
    }
    Ok(CrashOutcome::no_crash())
}

/// Commanded-acceleration source driving [`integrate`].
pub(crate) trait Controller {
    /// Called once at the start of every step, before its first sub-step.
    fn begin_step(&mut self, _k: u32, _state: &VehicleState, _d: f64) {}

    /// Applied acceleration at time `t` (within step `k`) for `state`.
    fn accel(&mut self, t: f64, k: u32, state: &VehicleState, d: f64) -> f64;

    /// A switching time strictly inside `(t, t_end)`, if any.
    fn next_edge(&self, _t: f64, _t_end: f64) -> Option<f64> {
        None
    }

    /// True when nothing injected can happen at or after step `k`.
    fn quiescent(&self, k: u32) -> bool;
}

pub(crate) struct RunOptions {
    pub record: bool,
}

/// Integrates the closed loop from `(s=0, s_dot=v_init)`.
pub(crate) fn integrate<C: Controller>(
    params: &ScenarioParams,
    geometry: &ScenarioGeometry,
    controller: &mut C,
    opts: RunOptions,
) -> Result<Trajectory, ScenarioError> {
    let h = params.substep();
    let sub = params.substeps_per_step;
    let t_cap = (2.0 * geometry.t_max).max(params.delta_t);
    let s_pov = geometry.s_pov;

    let mut s = 0.0_f64;
    let mut v = params.v_init;
    let mut max_s = 0.0_f64;
    let mut min_gap = s_pov;
    let mut samples = Vec::new();

    let finish = |samples: Vec<Sample>, outcome: CrashOutcome, max_s: f64, min_gap: f64| Trajectory {
        samples,
        outcome,
        final_overshoot: (max_s - geometry.s_stop).max(0.0),
        min_gap,
    };

    let mut i: u64 = 0;
    loop {
        let t = i as f64 * h;
        if t > t_cap {
            return Err(ScenarioError::Diverged { t_cap });
        }
        let k = (i / u64::from(sub)) as u32;
        if i % u64::from(sub) == 0 {
            controller.begin_step(k, &VehicleState { s, s_dot: v, t }, s_pov - s);
        }
        let t_end = (i + 1) as f64 * h;
        let mut tau = t;
        for piece in 0..MAX_PIECES_PER_SUBSTEP {
            let d = s_pov - s;
            let state = VehicleState { s, s_dot: v, t: tau };
            let mut a = controller.accel(tau, k, &state, d);
            if v <= 0.0 && a < 0.0 {
                a = 0.0;
            }
            if piece == 0 {
                if opts.record {
                    samples.push(Sample { t, s, v, a, d });
                }
                if v <= 0.0 && a <= 0.0 && (controller.quiescent(k) || t >= geometry.t_max - STEP_EPS) {
                    return Ok(finish(samples, CrashOutcome::no_crash(), max_s, min_gap));
                }
            }

            let mut dt = t_end - tau;
            if let Some(edge) = controller.next_edge(tau, t_end) {
                dt = dt.min(edge - tau);
            }
            let mut clamp_speed = None;
            if a > 0.0 && v < params.v_max {
                let to_cap = (params.v_max - v) / a;
                if to_cap <= dt {
                    dt = to_cap;
                    clamp_speed = Some(params.v_max);
                }
            } else if a < 0.0 {
                let to_stop = v / -a;
                if to_stop <= dt {
                    dt = to_stop;
                    clamp_speed = Some(0.0);
                }
            }

            let travel = v * dt + 0.5 * a * dt * dt;
            if travel >= d {
                // Gap closes inside this piece: exact constant-acceleration root.
                let disc = (v * v + 2.0 * a * d).max(0.0);
                let tc = if a == 0.0 { d / v } else { 2.0 * d / (v + disc.sqrt()) };
                let v_c = (v + a * tc).max(0.0);
                let t_c = tau + tc;
                max_s = max_s.max(s_pov);
                if opts.record {
                    samples.push(Sample {
                        t: t_c,
                        s: s_pov,
                        v: v_c,
                        a,
                        d: 0.0,
                    });
                }
                let outcome = CrashOutcome {
                    collided: true,
                    v_impact: Some(v_c),
                    t_c: Some(t_c),
                };
                return Ok(finish(samples, outcome, max_s, 0.0));
            }

            s += travel;
            v = clamp_speed.unwrap_or_else(|| (v + a * dt).clamp(0.0, f64::MAX));
            max_s = max_s.max(s);
            min_gap = min_gap.min(s_pov - s);
            tau += dt;
            if tau >= t_end - 1e-12 {
                break;
            }
        }
        i += 1;
    }
}

/// UBI schedule for the high-level model.
#[derive(Debug, Clone, Copy)]
pub(crate) enum UbiSchedule<'a> {
    Steps(&'a ErrorSequence),
    /// Continuous interval `[start, end)` in seconds.
    Interval {
        start: f64,
        end: f64,
    },
}

pub(crate) struct HlsmController<'a> {
    pub params: &'a ScenarioParams,
    pub ubi: UbiSchedule<'a>,
    pub eta: &'a EtaSignal,
}

impl Controller for HlsmController<'_> {
    fn accel(&mut self, t: f64, k: u32, state: &VehicleState, d: f64) -> f64 {
        let interrupted = match self.ubi {
            UbiSchedule::Steps(rho) => rho.contains(k),
            UbiSchedule::Interval { start, end } => start <= t && t < end,
        };
        if interrupted {
            max_acc(state.s_dot, self.params)
        } else {
            let scale = 1.0 - self.eta.at_step(k);
            policy_with_inputs(d, state.s_dot, state.s_dot, scale, self.params)
        }
    }

    fn next_edge(&self, t: f64, t_end: f64) -> Option<f64> {
        match self.ubi {
            UbiSchedule::Steps(_) => None,
            UbiSchedule::Interval { start, end } => [start, end].into_iter().find(|&e| e > t && e < t_end),
        }
    }

    fn quiescent(&self, k: u32) -> bool {
        match self.ubi {
            UbiSchedule::Steps(rho) => rho.last().is_none_or(|last| last < k),
            UbiSchedule::Interval { end, .. } => f64::from(k) * self.params.delta_t >= end,
        }
    }
}

/// Runs the high-level model with `injection` and returns the full trajectory.
pub fn simulate(params: &ScenarioParams, injection: &InjectionSpec) -> Result<Trajectory, ScenarioError> {
    let geometry = derive_geometry(params)?;
    injection.validate(&geometry)?;
    let mut ctl = HlsmController {
        params,
        ubi: UbiSchedule::Steps(&injection.ubi_steps),
        eta: &injection.eta_braking,
    };
    integrate(params, &geometry, &mut ctl, RunOptions { record: true })
}

/// Runs one continuous UBI interval `[start, start + duration)` without
/// recording samples.
pub fn simulate_interval(
    params: &ScenarioParams,
    geometry: &ScenarioGeometry,
    start: f64,
    duration: f64,
    eta: &EtaSignal,
) -> Result<Trajectory, ScenarioError> {
    let mut ctl = HlsmController {
        params,
        ubi: UbiSchedule::Interval {
            start,
            end: start + duration,
        },
        eta,
    };
    integrate(params, geometry, &mut ctl, RunOptions { record: false })
}

//! Text exports for trajectories and crash outcomes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::scenario::Trajectory;

/// Formats `x` with `digits` significant digits, `%g` style.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{exp}", trim_zeros(mant))
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `t,s,v,a,d` rows, one per recorded sample.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,s,v,a,d\n");
    for x in &traj.samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_sig(x.t, 6),
            fmt_sig(x.s, 6),
            fmt_sig(x.v, 6),
            fmt_sig(x.a, 6),
            fmt_sig(x.d, 6)
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeRecord {
    pub collided: bool,
    pub v_impact: Option<f64>,
    pub t_c: Option<f64>,
    pub overshoot: f64,
}

impl From<&Trajectory> for OutcomeRecord {
    fn from(t: &Trajectory) -> Self {
        Self {
            collided: t.outcome.collided,
            v_impact: t.outcome.v_impact,
            t_c: t.outcome.t_c,
            overshoot: t.final_overshoot,
        }
    }
}

pub fn outcome_json(traj: &Trajectory) -> String {
    serde_json::to_string_pretty(&OutcomeRecord::from(traj)).expect("outcome serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{simulate, InjectionSpec, ScenarioParams};

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.0, 6), "0");
        assert_eq!(fmt_sig(-0.0, 6), "0");
        assert_eq!(fmt_sig(112.5, 6), "112.5");
        assert_eq!(fmt_sig(1.0 / 3.0, 6), "0.333333");
        assert_eq!(fmt_sig(-8.0, 6), "-8");
        assert_eq!(fmt_sig(9.999_999, 6), "10");
        assert_eq!(fmt_sig(1234567.0, 6), "1.23457e6");
        assert_eq!(fmt_sig(0.000_012_345_67, 6), "1.23457e-5");
        assert_eq!(fmt_sig(0.000_123_4, 6), "0.0001234");
    }

    #[test]
    fn csv_and_json() {
        let t = simulate(&ScenarioParams::running_example(), &InjectionSpec::none(150)).unwrap();
        let csv = trajectory_csv(&t);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,s,v,a,d"));
        assert_eq!(lines.next(), Some("0,0,15,-1,117.5"));
        assert_eq!(csv.lines().count(), t.samples.len() + 1);
        let v: serde_json::Value = serde_json::from_str(&outcome_json(&t)).unwrap();
        assert_eq!(v["collided"], false);
        assert!(v["v_impact"].is_null() && v["t_c"].is_null());
    }
}

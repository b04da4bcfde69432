//! Error sequences and the pattern forms used to specify classes of them.
//!
//! An [`ErrorSequence`] is a finite set of discrete time-step indices below a
//! horizon `n_max`: the steps at which an error (or hazardous behavior) is
//! injected. Patterns describe sets of such sequences:
//!
//! * [`CountPattern`]: between `k_min` and `k_max` erroneous steps anywhere
//!   within the horizon.
//! * [`ConsecutivePattern`]: a single run of consecutive erroneous steps whose
//!   length lies in `k_min..=k_max`, optionally anchored at step 0.
//! * [`MagnitudePattern`]: continuous error signals bounded by `eta_hat`.
//!
//! Text syntax (used by configs and the CLI):
//!
//! ```text
//! count(19,150,150)
//! consec(5,5,150,anchored)
//! {26..45,66..87}@150
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PATTERN_SYNTAX_HELP: &str =
    "expected `count(kmin,kmax,nmax)`, `consec(kmin,kmax,nmax[,anchored])` or `{a..b,c,...}@nmax`";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PatternError {
    #[error("step {step} is outside the horizon of {n_max} steps")]
    StepOutOfHorizon { step: u32, n_max: u32 },
    #[error("invalid bounds k_min={k_min}, k_max={k_max}, n_max={n_max} (need k_min <= k_max <= n_max)")]
    InvalidBounds { k_min: u32, k_max: u32, n_max: u32 },
    #[error("horizon mismatch: pattern has n_max={pattern}, sequence has n_max={sequence}")]
    HorizonMismatch { pattern: u32, sequence: u32 },
    #[error("invalid magnitude bound {0} (need 0 < eta_hat <= 1)")]
    InvalidMagnitude(f64),
    #[error("horizon {0} exceeds the supported maximum of {MAX_HORIZON} steps")]
    HorizonTooLarge(u32),
    #[error("cannot parse `{input}`: {reason}; {PATTERN_SYNTAX_HELP}")]
    Syntax { input: String, reason: String },
}

/// Largest horizon accepted from text input.
pub const MAX_HORIZON: u32 = 100_000;

/// Sorted set of erroneous time steps within a horizon of `n_max` steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ErrorSequence {
    steps: Vec<u32>,
    n_max: u32,
}

impl ErrorSequence {
    pub fn new(steps: impl IntoIterator<Item = u32>, n_max: u32) -> Result<Self, PatternError> {
        let set: BTreeSet<u32> = steps.into_iter().collect();
        if let Some(&step) = set.iter().next_back() {
            if step >= n_max {
                return Err(PatternError::StepOutOfHorizon { step, n_max });
            }
        }
        Ok(Self {
            steps: set.into_iter().collect(),
            n_max,
        })
    }

    pub fn empty(n_max: u32) -> Self {
        Self {
            steps: Vec::new(),
            n_max,
        }
    }

    /// Builds a sequence from inclusive runs, e.g. `[(26, 45), (66, 87)]`.
    pub fn from_runs(runs: &[(u32, u32)], n_max: u32) -> Result<Self, PatternError> {
        let mut steps = Vec::new();
        for &(lo, hi) in runs {
            if lo > hi {
                return Err(PatternError::Syntax {
                    input: format!("{lo}..{hi}"),
                    reason: "run start exceeds run end".into(),
                });
            }
            steps.extend(lo..=hi);
        }
        Self::new(steps, n_max)
    }

    /// The full horizon `{0..n_max-1}`.
    pub fn full(n_max: u32) -> Self {
        Self {
            steps: (0..n_max).collect(),
            n_max,
        }
    }

    pub fn steps(&self) -> &[u32] {
        &self.steps
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn contains(&self, step: u32) -> bool {
        self.steps.binary_search(&step).is_ok()
    }

    pub fn last(&self) -> Option<u32> {
        self.steps.last().copied()
    }

    /// Maximal runs of consecutive steps as inclusive `(start, end)` pairs.
    pub fn runs(&self) -> Vec<(u32, u32)> {
        let mut runs: Vec<(u32, u32)> = Vec::new();
        for &k in &self.steps {
            match runs.last_mut() {
                Some((_, end)) if *end + 1 == k => *end = k,
                _ => runs.push((k, k)),
            }
        }
        runs
    }

    /// Same steps, different horizon.
    pub fn with_horizon(&self, n_max: u32) -> Result<Self, PatternError> {
        Self::new(self.steps.iter().copied(), n_max)
    }
}

impl fmt::Display for ErrorSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (lo, hi)) in self.runs().into_iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            if lo == hi {
                write!(f, "{lo}")?;
            } else {
                write!(f, "{lo}..{hi}")?;
            }
        }
        write!(f, "}}@{}", self.n_max)
    }
}

impl FromStr for ErrorSequence {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = |reason: &str| PatternError::Syntax {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let t = s.trim();
        let (body, horizon) = t.rsplit_once('@').ok_or_else(|| syntax("missing `@nmax`"))?;
        let n_max = parse_count(horizon).ok_or_else(|| syntax("horizon is not a count"))?;
        if n_max > MAX_HORIZON {
            return Err(PatternError::HorizonTooLarge(n_max));
        }
        let inner = body
            .trim()
            .strip_prefix('{')
            .and_then(|b| b.strip_suffix('}'))
            .ok_or_else(|| syntax("sequence must be enclosed in braces"))?;
        let mut runs = Vec::new();
        for item in inner.split(',') {
            let item = item.trim();
            if item.is_empty() {
                if inner.trim().is_empty() {
                    break;
                }
                return Err(syntax("empty element"));
            }
            let (lo, hi) = match item.split_once("..") {
                Some((a, b)) => (
                    parse_count(a).ok_or_else(|| syntax("bad run start"))?,
                    parse_count(b).ok_or_else(|| syntax("bad run end"))?,
                ),
                None => {
                    let k = parse_count(item).ok_or_else(|| syntax("bad step index"))?;
                    (k, k)
                }
            };
            if lo > hi {
                return Err(syntax("run start exceeds run end"));
            }
            if hi >= n_max {
                return Err(PatternError::StepOutOfHorizon { step: hi, n_max });
            }
            runs.push((lo, hi));
        }
        Self::from_runs(&runs, n_max)
    }
}

impl TryFrom<String> for ErrorSequence {
    type Error = PatternError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<ErrorSequence> for String {
    fn from(value: ErrorSequence) -> Self {
        value.to_string()
    }
}

fn parse_count(s: &str) -> Option<u32> {
    let s = s.trim();
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn check_bounds(k_min: u32, k_max: u32, n_max: u32) -> Result<(), PatternError> {
    if k_min <= k_max && k_max <= n_max {
        Ok(())
    } else {
        Err(PatternError::InvalidBounds { k_min, k_max, n_max })
    }
}

fn check_horizon(pattern: u32, rho: &ErrorSequence) -> Result<(), PatternError> {
    if pattern == rho.n_max() {
        Ok(())
    } else {
        Err(PatternError::HorizonMismatch {
            pattern,
            sequence: rho.n_max(),
        })
    }
}

/// All sequences with `k_min <= |rho| <= k_max` within `n_max` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawBounds", into = "RawBounds")]
pub struct CountPattern {
    k_min: u32,
    k_max: u32,
    n_max: u32,
}

#[derive(Serialize, Deserialize)]
struct RawBounds {
    k_min: u32,
    k_max: u32,
    n_max: u32,
}

impl TryFrom<RawBounds> for CountPattern {
    type Error = PatternError;

    fn try_from(raw: RawBounds) -> Result<Self, Self::Error> {
        CountPattern::new(raw.k_min, raw.k_max, raw.n_max)
    }
}

impl From<CountPattern> for RawBounds {
    fn from(p: CountPattern) -> Self {
        RawBounds {
            k_min: p.k_min,
            k_max: p.k_max,
            n_max: p.n_max,
        }
    }
}

impl CountPattern {
    pub fn new(k_min: u32, k_max: u32, n_max: u32) -> Result<Self, PatternError> {
        check_bounds(k_min, k_max, n_max)?;
        Ok(Self { k_min, k_max, n_max })
    }

    /// `k_min` or more steps, i.e. `count(k_min, n_max, n_max)`.
    pub fn at_least(k_min: u32, n_max: u32) -> Result<Self, PatternError> {
        Self::new(k_min, n_max, n_max)
    }

    pub fn k_min(&self) -> u32 {
        self.k_min
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn contains(&self, rho: &ErrorSequence) -> Result<bool, PatternError> {
        check_horizon(self.n_max, rho)?;
        let n = rho.len() as u64;
        Ok(u64::from(self.k_min) <= n && n <= u64::from(self.k_max))
    }

    /// Number of member sequences: sum of C(n_max, j) for j in k_min..=k_max.
    pub fn cardinality(&self) -> BigUint {
        let n = self.n_max;
        let mut total = BigUint::from(0u32);
        let mut binom = BigUint::from(1u32);
        for j in 0..=self.k_max {
            if j >= self.k_min {
                total += &binom;
            }
            binom = binom * (n - j) / (j + 1);
        }
        total
    }

    /// Set inclusion `self ⊆ other`.
    pub fn is_subset(&self, other: &CountPattern) -> Result<bool, PatternError> {
        if self.n_max != other.n_max {
            return Err(PatternError::HorizonMismatch {
                pattern: other.n_max,
                sequence: self.n_max,
            });
        }
        Ok(self.k_min >= other.k_min && self.k_max <= other.k_max)
    }
}

impl fmt::Display for CountPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "count({},{},{})", self.k_min, self.k_max, self.n_max)
    }
}

/// A single run of `k_min..=k_max` consecutive steps, optionally starting at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConsecutivePattern {
    k_min: u32,
    k_max: u32,
    n_max: u32,
    anchored_at_start: bool,
}

impl ConsecutivePattern {
    pub fn new(k_min: u32, k_max: u32, n_max: u32, anchored_at_start: bool) -> Result<Self, PatternError> {
        check_bounds(k_min, k_max, n_max)?;
        Ok(Self {
            k_min,
            k_max,
            n_max,
            anchored_at_start,
        })
    }

    pub fn k_min(&self) -> u32 {
        self.k_min
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn anchored_at_start(&self) -> bool {
        self.anchored_at_start
    }

    pub fn contains(&self, rho: &ErrorSequence) -> Result<bool, PatternError> {
        check_horizon(self.n_max, rho)?;
        let runs = rho.runs();
        let (start, len) = match runs.as_slice() {
            [] => return Ok(self.k_min == 0),
            [(lo, hi)] => (*lo, hi - lo + 1),
            _ => return Ok(false),
        };
        if self.anchored_at_start && start != 0 {
            return Ok(false);
        }
        Ok(self.k_min <= len && len <= self.k_max)
    }

    pub fn cardinality(&self) -> BigUint {
        let mut total = BigUint::from(0u32);
        for len in self.k_min..=self.k_max {
            let placements = if len == 0 || self.anchored_at_start {
                1
            } else {
                self.n_max - len + 1
            };
            total += placements;
        }
        total
    }

    /// The count pattern with the same bounds; always a superset.
    pub fn as_count(&self) -> CountPattern {
        CountPattern {
            k_min: self.k_min,
            k_max: self.k_max,
            n_max: self.n_max,
        }
    }
}

impl fmt::Display for ConsecutivePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "consec({},{},{}", self.k_min, self.k_max, self.n_max)?;
        if self.anchored_at_start {
            f.write_str(",anchored")?;
        }
        f.write_str(")")
    }
}

/// Error signals over `[0, t_max]` with values in `[0, eta_hat]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnitudePattern {
    eta_hat: f64,
    t_max: f64,
}

impl MagnitudePattern {
    pub fn new(eta_hat: f64, t_max: f64) -> Result<Self, PatternError> {
        if eta_hat > 0.0 && eta_hat <= 1.0 {
            Ok(Self { eta_hat, t_max })
        } else {
            Err(PatternError::InvalidMagnitude(eta_hat))
        }
    }

    pub fn eta_hat(&self) -> f64 {
        self.eta_hat
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Whether a signal sampled at grid points stays within the bound.
    pub fn contains_samples(&self, samples: &[f64]) -> bool {
        samples.iter().all(|&v| (0.0..=self.eta_hat).contains(&v))
    }
}

/// Discrete-step pattern in either form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Pattern {
    Count(CountPattern),
    Consecutive(ConsecutivePattern),
}

impl Pattern {
    pub fn n_max(&self) -> u32 {
        match self {
            Pattern::Count(p) => p.n_max,
            Pattern::Consecutive(p) => p.n_max,
        }
    }

    pub fn contains(&self, rho: &ErrorSequence) -> Result<bool, PatternError> {
        match self {
            Pattern::Count(p) => p.contains(rho),
            Pattern::Consecutive(p) => p.contains(rho),
        }
    }

    pub fn cardinality(&self) -> BigUint {
        match self {
            Pattern::Count(p) => p.cardinality(),
            Pattern::Consecutive(p) => p.cardinality(),
        }
    }

    /// Deterministic draws: the size is uniform over `k_min..=k_max`, then the
    /// steps are uniform among the sequences of that size in the pattern.
    pub fn sample(&self, seed: u64, count: usize) -> Vec<ErrorSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample_one(&mut rng)).collect()
    }

    fn sample_one<R: Rng>(&self, rng: &mut R) -> ErrorSequence {
        match *self {
            Pattern::Count(p) => {
                let size = rng.random_range(p.k_min..=p.k_max);
                let mut steps: Vec<u32> = index::sample(rng, p.n_max as usize, size as usize)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                steps.sort_unstable();
                ErrorSequence { steps, n_max: p.n_max }
            }
            Pattern::Consecutive(p) => {
                let size = rng.random_range(p.k_min..=p.k_max);
                let start = if p.anchored_at_start || size == 0 {
                    0
                } else {
                    rng.random_range(0..=p.n_max - size)
                };
                ErrorSequence {
                    steps: (start..start + size).collect(),
                    n_max: p.n_max,
                }
            }
        }
    }
}

impl From<CountPattern> for Pattern {
    fn from(p: CountPattern) -> Self {
        Pattern::Count(p)
    }
}

impl From<ConsecutivePattern> for Pattern {
    fn from(p: ConsecutivePattern) -> Self {
        Pattern::Consecutive(p)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Count(p) => p.fmt(f),
            Pattern::Consecutive(p) => p.fmt(f),
        }
    }
}

impl FromStr for Pattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = |reason: &str| PatternError::Syntax {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let t = s.trim();
        let open = t.find('(').ok_or_else(|| syntax("missing `(`"))?;
        let name = t[..open].trim();
        let args = t[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| syntax("missing closing `)`"))?;
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        let counts = |parts: &[&str]| -> Result<(u32, u32, u32), PatternError> {
            let mut it = parts.iter().map(|p| parse_count(p));
            match (it.next(), it.next(), it.next()) {
                (Some(Some(_)), Some(Some(_)), Some(Some(c))) if c > MAX_HORIZON => {
                    Err(PatternError::HorizonTooLarge(c))
                }
                (Some(Some(a)), Some(Some(b)), Some(Some(c))) => Ok((a, b, c)),
                _ => Err(syntax("bounds must be non-negative integers")),
            }
        };
        match name {
            "count" => {
                if parts.len() != 3 {
                    return Err(syntax("count takes exactly 3 arguments"));
                }
                let (a, b, c) = counts(&parts)?;
                Ok(Pattern::Count(CountPattern::new(a, b, c)?))
            }
            "consec" => {
                let anchored = match parts.len() {
                    3 => false,
                    4 if parts[3] == "anchored" => true,
                    4 => return Err(syntax("fourth argument must be `anchored`")),
                    _ => return Err(syntax("consec takes 3 or 4 arguments")),
                };
                let (a, b, c) = counts(&parts[..3])?;
                Ok(Pattern::Consecutive(ConsecutivePattern::new(a, b, c, anchored)?))
            }
            _ => Err(syntax("unknown pattern kind")),
        }
    }
}

impl TryFrom<String> for Pattern {
    type Error = PatternError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Pattern> for String {
    fn from(value: Pattern) -> Self {
        value.to_string()
    }
}

/// Either a concrete sequence or a pattern to sample one from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SequenceSpec {
    Sequence(ErrorSequence),
    Pattern(Pattern),
}

impl SequenceSpec {
    /// Resolves to a concrete sequence; patterns are sampled with `seed`.
    pub fn resolve(&self, seed: u64) -> ErrorSequence {
        match self {
            SequenceSpec::Sequence(s) => s.clone(),
            SequenceSpec::Pattern(p) => p.sample(seed, 1).remove(0),
        }
    }

    pub fn n_max(&self) -> u32 {
        match self {
            SequenceSpec::Sequence(s) => s.n_max(),
            SequenceSpec::Pattern(p) => p.n_max(),
        }
    }
}

impl FromStr for SequenceSpec {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim_start().starts_with('{') {
            s.parse().map(SequenceSpec::Sequence)
        } else {
            s.parse().map(SequenceSpec::Pattern)
        }
    }
}

impl fmt::Display for SequenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceSpec::Sequence(s) => s.fmt(f),
            SequenceSpec::Pattern(p) => p.fmt(f),
        }
    }
}

impl TryFrom<String> for SequenceSpec {
    type Error = PatternError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<SequenceSpec> for String {
    fn from(value: SequenceSpec) -> Self {
        value.to_string()
    }
}

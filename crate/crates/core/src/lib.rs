//! Model-based safety analysis of a braking scenario: hazardous-behavior
//! injection, severity patterns, a detailed perception model, fault trees and
//! a residual-risk budget.

pub mod dsm;
pub mod export;
pub mod fault_tree;
pub mod patterns;
pub mod risk;
pub mod scenario;
pub mod severity;
pub mod wpp;

pub use patterns::{CountPattern, ErrorSequence, Pattern, PatternError, SequenceSpec};
pub use scenario::{ScenarioError, ScenarioGeometry, ScenarioParams, Trajectory};

/// Any error raised by the library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Severity(#[from] severity::SeverityError),
    #[error(transparent)]
    Dsm(#[from] dsm::DsmError),
    #[error(transparent)]
    FaultTree(#[from] fault_tree::FtError),
    #[error(transparent)]
    Risk(#[from] risk::RiskError),
}

//! Cloud security situation-awareness toolkit.
//!
//! Models an enterprise's virtual infrastructure as a two-layer HARM
//! (upper layer: reachability attack graph over VMs; lower layer: per-VM
//! OR-gate attack tree of vulnerabilities), computes risk-based security
//! metrics over all attacker-to-target paths, evaluates defensive
//! responses (VM live-migration and vulnerability patching) by exhaustive
//! what-if analysis, and ships the selected strategy to a simulated cloud
//! provider over an authenticated, encrypted TCP protocol.

pub mod cloud;
pub mod harm;
pub mod metrics;
pub mod protocol;
pub mod scenario;
pub mod strategy;

pub use cloud::{CloudError, CloudState, Host};
pub use harm::{
    AttackPath, AttackTree, EdgeKind, HarmError, HarmGraph, NodeId, PathLimits, VmNode,
    Vulnerability,
};
pub use metrics::{MetricsError, MetricsReport};
pub use scenario::{Scenario, ScenarioError, TopologyDecl};
pub use strategy::{
    ComparisonTable, EvalOptions, EvaluationRun, Strategy, StrategyError, StrategyEvaluation,
};

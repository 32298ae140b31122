//! Situation-comprehension metrics over a HARM: Cloud Risk (sum of
//! per-path risk over every attacker-to-target path), Return on Attack
//! (the same aggregation with each node's risk divided by its effective
//! attack cost), and the mean attack path length.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::harm::{
    enumerate_attack_paths, vm_risk, AttackPath, HarmError, HarmGraph, PathLimits, VmNode,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("path references unresolved node `{0}`")]
    UnresolvedNode(String),
    #[error(transparent)]
    Harm(#[from] HarmError),
}

/// Risk of one path: sum of vm_risk over every node except the attacker.
/// The target contributes its own attack-tree severity.
pub fn path_risk(path: &AttackPath, vms: &BTreeMap<String, VmNode>) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    for node in path.risk_nodes() {
        let id = node
            .vm_id()
            .ok_or_else(|| MetricsError::UnresolvedNode(node.label().to_string()))?;
        let vm = vms
            .get(id)
            .ok_or_else(|| MetricsError::UnresolvedNode(id.to_string()))?;
        total += vm_risk(vm);
    }
    Ok(total)
}

fn path_roa(path: &AttackPath, vms: &BTreeMap<String, VmNode>) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    for node in path.risk_nodes() {
        let id = node
            .vm_id()
            .ok_or_else(|| MetricsError::UnresolvedNode(node.label().to_string()))?;
        let vm = vms
            .get(id)
            .ok_or_else(|| MetricsError::UnresolvedNode(id.to_string()))?;
        if let Some(v) = vm.attack_tree.effective_vulnerability() {
            total += v.severity() / v.attack_cost;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRiskEntry {
    pub path: Vec<String>,
    pub path_risk: f64,
}

/// The three radar metrics plus the per-path breakdown behind them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub cloud_risk: f64,
    pub roa: f64,
    pub mapl: f64,
    pub path_count: usize,
    pub per_path: Vec<PathRiskEntry>,
}

impl MetricsReport {
    /// CSV row `cr,roa,mapl,path_count`, values rounded to 3 decimals.
    pub fn to_csv(&self) -> String {
        format!(
            "cr,roa,mapl,path_count\n{},{},{},{}\n",
            fmt3(self.cloud_risk),
            fmt3(self.roa),
            fmt3(self.mapl),
            self.path_count
        )
    }

    /// JSON document with decimals rounded to 3 places.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "cloud_risk": round3(self.cloud_risk),
            "roa": round3(self.roa),
            "mapl": round3(self.mapl),
            "path_count": self.path_count,
            "per_path": self.per_path.iter().map(|p| serde_json::json!({
                "path": p.path,
                "path_risk": round3(p.path_risk),
            })).collect::<Vec<_>>(),
        })
    }
}

/// Rounds to 3 decimal places; reports apply this on output only.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Fixed-point display used by CSV exports: locale-independent, no
/// scientific notation, trailing zeros trimmed.
pub fn fmt3(x: f64) -> String {
    let s = format!("{:.3}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Enumerates paths once and computes all metrics over the same set.
pub fn analyze(graph: &HarmGraph, limits: &PathLimits) -> Result<MetricsReport, MetricsError> {
    let paths = enumerate_attack_paths(graph, limits)?;
    let mut per_path = Vec::with_capacity(paths.len());
    let mut cr = 0.0;
    let mut roa = 0.0;
    let mut length_sum = 0usize;
    for path in &paths {
        let risk = path_risk(path, graph.vms())?;
        cr += risk;
        roa += path_roa(path, graph.vms())?;
        length_sum += path.length();
        per_path.push(PathRiskEntry {
            path: path.nodes().iter().map(|n| n.label().to_string()).collect(),
            path_risk: risk,
        });
    }
    let mapl = if paths.is_empty() {
        0.0
    } else {
        length_sum as f64 / paths.len() as f64
    };
    Ok(MetricsReport {
        cloud_risk: cr,
        roa,
        mapl,
        path_count: paths.len(),
        per_path,
    })
}

/// Total cloud risk: Σ over attack paths of Σ over path nodes of E x I.
pub fn cloud_risk(graph: &HarmGraph, limits: &PathLimits) -> Result<f64, MetricsError> {
    Ok(analyze(graph, limits)?.cloud_risk)
}

/// Attacker-benefit aggregate: cloud risk with each node term divided by
/// the attack cost of that node's effective vulnerability.
pub fn return_on_attack(graph: &HarmGraph, limits: &PathLimits) -> Result<f64, MetricsError> {
    Ok(analyze(graph, limits)?.roa)
}

/// Mean attack path length; 0 when no path exists.
pub fn mapl(graph: &HarmGraph, limits: &PathLimits) -> Result<f64, MetricsError> {
    Ok(analyze(graph, limits)?.mapl)
}

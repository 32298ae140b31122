//! Scenario file ingestion: the JSON document that stands in for the
//! provider inventory APIs and vulnerability scan reports.
//!
//! Top-level keys: `hosts` (id, capacity), `vms`, `edges` (from, to),
//! `target` (id, host_id), `ep_code`. Vulnerability entries default
//! `attack_cost` to 1.0 and `patchable` to true when absent.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudError, CloudState, Host};
use crate::harm::{AttackTree, VmNode, Vulnerability};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostDecl {
    pub id: String,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmDecl {
    pub vm_id: String,
    pub display_name: String,
    pub os_label: String,
    pub tenant: String,
    pub host_id: String,
    pub internet_facing: bool,
    #[serde(default)]
    pub vulnerabilities: Vec<Vulnerability>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeDecl {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDecl {
    pub id: String,
    pub host_id: String,
}

/// Raw scenario document, 1:1 with the file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub hosts: Vec<HostDecl>,
    pub vms: Vec<VmDecl>,
    #[serde(default)]
    pub edges: Vec<EdgeDecl>,
    pub target: TargetDecl,
    pub ep_code: String,
}

/// The declared virtual network, kept separate from placement so that
/// migrations have a well-defined graph impact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopologyDecl {
    pub edges: Vec<EdgeDecl>,
}

impl TopologyDecl {
    pub fn new(edges: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            edges: edges
                .into_iter()
                .map(|(from, to)| EdgeDecl { from, to })
                .collect(),
        }
    }
}

/// A validated scenario: cloud ground truth plus the network declaration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub cloud: CloudState,
    pub topology: TopologyDecl,
    pub ep_code: String,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario `{path}` at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invalid scenario: {0}")]
    Cloud(#[from] CloudError),
}

impl Scenario {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_decl(file)
    }

    pub fn from_decl(file: ScenarioFile) -> Result<Self, ScenarioError> {
        for vm in &file.vms {
            for v in &vm.vulnerabilities {
                validate_vulnerability(&vm.vm_id, v)?;
            }
        }
        let target = &file.target;
        if let Some(vm) = file.vms.iter().find(|vm| vm.vm_id == target.id) {
            if vm.host_id != target.host_id {
                return Err(ScenarioError::Invalid(format!(
                    "target `{}` declares host `{}` but the vm entry places it on `{}`",
                    target.id, target.host_id, vm.host_id
                )));
            }
        } else {
            return Err(ScenarioError::Invalid(format!(
                "target `{}` has no matching vm entry",
                target.id
            )));
        }

        let hosts = file
            .hosts
            .iter()
            .map(|h| Host {
                host_id: h.id.clone(),
                capacity: h.capacity,
            })
            .collect();
        let vms = file
            .vms
            .iter()
            .map(|vm| VmNode {
                vm_id: vm.vm_id.clone(),
                display_name: vm.display_name.clone(),
                os_label: vm.os_label.clone(),
                tenant: vm.tenant.clone(),
                host_id: vm.host_id.clone(),
                internet_facing: vm.internet_facing,
                attack_tree: AttackTree::new(vm.vulnerabilities.clone()),
            })
            .collect();
        let cloud = CloudState::new(hosts, vms, target.id.clone())?;

        for edge in &file.edges {
            if !cloud.vms().contains_key(&edge.from) {
                return Err(ScenarioError::Invalid(format!(
                    "edge references unknown vm `{}`",
                    edge.from
                )));
            }
            if !cloud.vms().contains_key(&edge.to) {
                return Err(ScenarioError::Invalid(format!(
                    "edge references unknown vm `{}`",
                    edge.to
                )));
            }
        }

        Ok(Self {
            cloud,
            topology: TopologyDecl { edges: file.edges },
            ep_code: file.ep_code,
        })
    }

    /// The defending enterprise: tenant of the target VM.
    pub fn own_tenant(&self) -> &str {
        &self.cloud.vms()[self.cloud.target_id()].tenant
    }
}

fn validate_vulnerability(vm_id: &str, v: &Vulnerability) -> Result<(), ScenarioError> {
    let bad = |what: &str| {
        Err(ScenarioError::Invalid(format!(
            "vm `{vm_id}` vulnerability `{}`: {what}",
            v.cve_id
        )))
    };
    if !(0.0..=10.0).contains(&v.base_score) {
        return bad("base_score must be in [0,10]");
    }
    if !(v.exploitability >= 0.0 && v.exploitability.is_finite()) {
        return bad("exploitability must be a finite value >= 0");
    }
    if !(0.0..=10.0).contains(&v.impact) {
        return bad("impact must be in [0,10]");
    }
    if !(v.attack_cost > 0.0 && v.attack_cost.is_finite()) {
        return bad("attack_cost must be > 0");
    }
    if !v.severity().is_finite() {
        return bad("severity overflows");
    }
    Ok(())
}

/// Serializes cloud state back into the scenario schema, for audit dumps.
pub fn dump_state(cloud: &CloudState, topology: &TopologyDecl, ep_code: &str) -> ScenarioFile {
    let hosts = cloud
        .hosts()
        .values()
        .map(|h| HostDecl {
            id: h.host_id.clone(),
            capacity: h.capacity,
        })
        .collect();
    let vms = cloud
        .vms()
        .values()
        .map(|vm| VmDecl {
            vm_id: vm.vm_id.clone(),
            display_name: vm.display_name.clone(),
            os_label: vm.os_label.clone(),
            tenant: vm.tenant.clone(),
            host_id: vm.host_id.clone(),
            internet_facing: vm.internet_facing,
            vulnerabilities: vm.attack_tree.leaves.clone(),
        })
        .collect();
    ScenarioFile {
        hosts,
        vms,
        edges: topology.edges.clone(),
        target: TargetDecl {
            id: cloud.target_id().to_string(),
            host_id: cloud.vms()[cloud.target_id()].host_id.clone(),
        },
        ep_code: ep_code.to_string(),
    }
}

/// Enrollment table used by the provider server: ep_code -> tenant.
pub fn load_enrollment(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

//! Cloud-provider state: hosts, capacities, VM placement, and the two
//! response actions. Stands in for the real provider APIs.
//!
//! Actions are persistent: they return a new state and leave the input
//! untouched, so what-if evaluation never needs rollback.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harm::VmNode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Host {
    pub host_id: String,
    pub capacity: u32,
}

/// Snapshot of the provider's ground truth. `placement` and each
/// `VmNode::host_id` are kept consistent at all times.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudState {
    hosts: BTreeMap<String, Host>,
    placement: BTreeMap<String, String>,
    vms: BTreeMap<String, VmNode>,
    target_id: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("unknown vm `{0}`")]
    UnknownVm(String),
    #[error("unknown host `{0}`")]
    UnknownHost(String),
    #[error("vm `{vm_id}` already placed on `{host_id}`")]
    NoOpMigration { vm_id: String, host_id: String },
    #[error("host `{host_id}` is at capacity ({capacity})")]
    CapacityExceeded { host_id: String, capacity: u32 },
    #[error("vm `{vm_id}` has no vulnerability `{cve_id}`")]
    UnknownVulnerability { vm_id: String, cve_id: String },
    #[error("vulnerability `{cve_id}` on vm `{vm_id}` is not patchable")]
    NotPatchable { vm_id: String, cve_id: String },
    #[error("duplicate vm_id `{0}`")]
    DuplicateVmId(String),
    #[error("duplicate host_id `{0}`")]
    DuplicateHostId(String),
    #[error("target `{0}` not found among vms")]
    MissingTarget(String),
}

impl CloudState {
    pub fn new(hosts: Vec<Host>, vms: Vec<VmNode>, target_id: String) -> Result<Self, CloudError> {
        let mut host_map = BTreeMap::new();
        for h in hosts {
            if host_map.insert(h.host_id.clone(), h.clone()).is_some() {
                return Err(CloudError::DuplicateHostId(h.host_id));
            }
        }
        let mut vm_map = BTreeMap::new();
        let mut placement = BTreeMap::new();
        for vm in vms {
            if !host_map.contains_key(&vm.host_id) {
                return Err(CloudError::UnknownHost(vm.host_id));
            }
            placement.insert(vm.vm_id.clone(), vm.host_id.clone());
            if vm_map.insert(vm.vm_id.clone(), vm.clone()).is_some() {
                return Err(CloudError::DuplicateVmId(vm.vm_id));
            }
        }
        if !vm_map.contains_key(&target_id) {
            return Err(CloudError::MissingTarget(target_id));
        }
        let state = Self {
            hosts: host_map,
            placement,
            vms: vm_map,
            target_id,
        };
        for host in state.hosts.values() {
            let count = state.host_occupancy(&host.host_id);
            if count > host.capacity as usize {
                return Err(CloudError::CapacityExceeded {
                    host_id: host.host_id.clone(),
                    capacity: host.capacity,
                });
            }
        }
        Ok(state)
    }

    pub fn hosts(&self) -> &BTreeMap<String, Host> {
        &self.hosts
    }

    pub fn placement(&self) -> &BTreeMap<String, String> {
        &self.placement
    }

    pub fn vms(&self) -> &BTreeMap<String, VmNode> {
        &self.vms
    }

    pub fn target_id(&self) -> &str {
        &self.target_id
    }

    pub fn host_occupancy(&self, host_id: &str) -> usize {
        self.placement
            .values()
            .filter(|h| h.as_str() == host_id)
            .count()
    }

    pub fn host_has_room(&self, host_id: &str) -> bool {
        self.hosts
            .get(host_id)
            .is_some_and(|h| self.host_occupancy(host_id) < h.capacity as usize)
    }

    /// Live-migrates a VM to another host, returning the resulting state.
    pub fn apply_migration(&self, vm_id: &str, dest_host: &str) -> Result<Self, CloudError> {
        let vm = self
            .vms
            .get(vm_id)
            .ok_or_else(|| CloudError::UnknownVm(vm_id.to_string()))?;
        let dest = self
            .hosts
            .get(dest_host)
            .ok_or_else(|| CloudError::UnknownHost(dest_host.to_string()))?;
        if vm.host_id == dest_host {
            return Err(CloudError::NoOpMigration {
                vm_id: vm_id.to_string(),
                host_id: dest_host.to_string(),
            });
        }
        if self.host_occupancy(dest_host) >= dest.capacity as usize {
            return Err(CloudError::CapacityExceeded {
                host_id: dest_host.to_string(),
                capacity: dest.capacity,
            });
        }
        let mut next = self.clone();
        next.placement
            .insert(vm_id.to_string(), dest_host.to_string());
        next.vms.get_mut(vm_id).expect("vm present").host_id = dest_host.to_string();
        Ok(next)
    }

    /// Removes one vulnerability from a VM's attack tree, returning the
    /// resulting state. Placement is untouched.
    pub fn apply_patch(&self, vm_id: &str, cve_id: &str) -> Result<Self, CloudError> {
        let vm = self
            .vms
            .get(vm_id)
            .ok_or_else(|| CloudError::UnknownVm(vm_id.to_string()))?;
        let vuln = vm
            .attack_tree
            .leaves
            .iter()
            .find(|v| v.cve_id == cve_id)
            .ok_or_else(|| CloudError::UnknownVulnerability {
                vm_id: vm_id.to_string(),
                cve_id: cve_id.to_string(),
            })?;
        if !vuln.patchable {
            return Err(CloudError::NotPatchable {
                vm_id: vm_id.to_string(),
                cve_id: cve_id.to_string(),
            });
        }
        let mut next = self.clone();
        next.vms
            .get_mut(vm_id)
            .expect("vm present")
            .attack_tree
            .leaves
            .retain(|v| v.cve_id != cve_id);
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harm::{vm_risk, AttackTree, Vulnerability};

    fn vuln(cve: &str, e: f64, i: f64, patchable: bool) -> Vulnerability {
        Vulnerability {
            cve_id: cve.to_string(),
            base_score: 7.0,
            exploitability: e,
            impact: i,
            attack_cost: 1.0,
            patchable,
        }
    }

    fn vm(id: &str, host: &str, vulns: Vec<Vulnerability>) -> VmNode {
        VmNode {
            vm_id: id.to_string(),
            display_name: id.to_uppercase(),
            os_label: "windows10".to_string(),
            tenant: "t1".to_string(),
            host_id: host.to_string(),
            internet_facing: false,
            attack_tree: AttackTree::new(vulns),
        }
    }

    fn sample() -> CloudState {
        CloudState::new(
            vec![
                Host {
                    host_id: "h1".into(),
                    capacity: 2,
                },
                Host {
                    host_id: "h2".into(),
                    capacity: 1,
                },
                Host {
                    host_id: "h3".into(),
                    capacity: 1,
                },
            ],
            vec![
                vm(
                    "w1",
                    "h1",
                    vec![
                        vuln("CVE-2018-8490", 0.17, 6.0, true),
                        vuln("CVE-2018-8484", 0.18, 5.9, true),
                    ],
                ),
                vm("db", "h2", vec![vuln("CVE-2018-15126", 0.22, 5.9, true)]),
            ],
            "db".into(),
        )
        .unwrap()
    }

    #[test]
    fn migration_moves_exactly_one_vm() {
        let state = sample();
        let moved = state.apply_migration("w1", "h3").unwrap();
        assert_eq!(moved.placement()["w1"], "h3");
        assert_eq!(moved.vms()["w1"].host_id, "h3");
        assert_eq!(moved.host_occupancy("h1"), 0);
        assert_eq!(moved.host_occupancy("h3"), 1);
        // prior snapshot untouched
        assert_eq!(state.placement()["w1"], "h1");
        assert_eq!(moved.placement()["db"], "h2");
    }

    #[test]
    fn migration_to_full_host_fails() {
        let state = sample();
        assert_eq!(
            state.apply_migration("w1", "h2"),
            Err(CloudError::CapacityExceeded {
                host_id: "h2".into(),
                capacity: 1
            })
        );
    }

    #[test]
    fn migration_error_paths() {
        let state = sample();
        assert_eq!(
            state.apply_migration("nope", "h3"),
            Err(CloudError::UnknownVm("nope".into()))
        );
        assert_eq!(
            state.apply_migration("w1", "h9"),
            Err(CloudError::UnknownHost("h9".into()))
        );
        assert_eq!(
            state.apply_migration("w1", "h1"),
            Err(CloudError::NoOpMigration {
                vm_id: "w1".into(),
                host_id: "h1".into()
            })
        );
    }

    #[test]
    fn patch_removes_or_gate_winner_and_falls_back() {
        let state = sample();
        // effective is CVE-2018-8484 at 1.062; after patching it the
        // remaining CVE-2018-8490 yields 6 x 0.17 = 1.02
        let patched = state.apply_patch("w1", "CVE-2018-8484").unwrap();
        assert!((vm_risk(&patched.vms()["w1"]) - 1.02).abs() < 1e-9);
        assert!((vm_risk(&state.vms()["w1"]) - 1.062).abs() < 1e-9);
    }

    #[test]
    fn patching_only_vulnerability_makes_vm_unexploitable() {
        let state = sample();
        let patched = state.apply_patch("db", "CVE-2018-15126").unwrap();
        assert_eq!(vm_risk(&patched.vms()["db"]), 0.0);
        assert!(patched.vms()["db"].attack_tree.is_empty());
    }

    #[test]
    fn unpatchable_vulnerability_is_rejected() {
        let state = CloudState::new(
            vec![Host {
                host_id: "h1".into(),
                capacity: 2,
            }],
            vec![
                vm("w1", "h1", vec![vuln("CVE-X", 0.2, 5.0, false)]),
                vm("db", "h1", vec![]),
            ],
            "db".into(),
        )
        .unwrap();
        assert_eq!(
            state.apply_patch("w1", "CVE-X"),
            Err(CloudError::NotPatchable {
                vm_id: "w1".into(),
                cve_id: "CVE-X".into()
            })
        );
        assert_eq!(
            state.apply_patch("w1", "CVE-Y"),
            Err(CloudError::UnknownVulnerability {
                vm_id: "w1".into(),
                cve_id: "CVE-Y".into()
            })
        );
    }

    #[test]
    fn patch_preserves_placement_and_migration_preserves_trees() {
        let state = sample();
        let patched = state.apply_patch("w1", "CVE-2018-8484").unwrap();
        assert_eq!(patched.placement(), state.placement());
        let moved = state.apply_migration("w1", "h3").unwrap();
        for (id, vm) in state.vms() {
            assert_eq!(vm.attack_tree, moved.vms()[id].attack_tree);
        }
        assert_eq!(moved.vms().len(), state.vms().len());
    }

    #[test]
    fn constructor_rejects_over_capacity_and_duplicates() {
        let err = CloudState::new(
            vec![Host {
                host_id: "h1".into(),
                capacity: 1,
            }],
            vec![vm("a", "h1", vec![]), vm("db", "h1", vec![])],
            "db".into(),
        );
        assert_eq!(
            err,
            Err(CloudError::CapacityExceeded {
                host_id: "h1".into(),
                capacity: 1
            })
        );
        let err = CloudState::new(
            vec![Host {
                host_id: "h1".into(),
                capacity: 4,
            }],
            vec![
                vm("a", "h1", vec![]),
                vm("a", "h1", vec![]),
                vm("db", "h1", vec![]),
            ],
            "db".into(),
        );
        assert_eq!(err, Err(CloudError::DuplicateVmId("a".into())));
    }
}

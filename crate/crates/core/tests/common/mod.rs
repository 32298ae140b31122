//! Shared test machinery: a seeded random-scenario generator and an
//! independent brute-force oracle for paths, metrics, and strategy
//! selection. The oracle deliberately reimplements enumeration (recursive
//! DFS over the edge set), severity folding, candidate enumeration, and
//! argmin tie-breaking so it cannot inherit a bug from the library path.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use harmmtd_core::cloud::{CloudState, Host};
use harmmtd_core::harm::{
    AttackTree, EdgeKind, HarmGraph, NodeId, PathLimits, VmNode, Vulnerability,
};
use harmmtd_core::scenario::TopologyDecl;
use harmmtd_core::strategy::Strategy;

// ---------------------------------------------------------------------------
// Random scenario generation
// ---------------------------------------------------------------------------

pub struct TestScenario {
    pub cloud: CloudState,
    pub topology: TopologyDecl,
}

/// Random scenario within the oracle-equivalence envelope: at most 7 VMs,
/// 3 hosts, 3 vulnerabilities per VM. Capacities are derived from the
/// generated placement so every scenario is valid, with uneven headroom
/// so some migrations are infeasible.
pub fn random_scenario(rng: &mut impl Rng) -> TestScenario {
    let n_hosts = rng.gen_range(1..=3);
    let n_vms = rng.gen_range(2..=7);
    let n_tenants = rng.gen_range(1..=3);

    let host_ids: Vec<String> = (1..=n_hosts).map(|i| format!("h{i}")).collect();
    let mut occupancy: BTreeMap<String, u32> = host_ids.iter().map(|h| (h.clone(), 0)).collect();

    let mut vms = Vec::new();
    for i in 0..n_vms {
        let host = host_ids[rng.gen_range(0..host_ids.len())].clone();
        *occupancy.get_mut(&host).unwrap() += 1;
        let n_vulns = rng.gen_range(0..=3);
        let vulns = (0..n_vulns)
            .map(|j| Vulnerability {
                cve_id: format!("CVE-9999-{:02}{:02}", i, j),
                base_score: rng.gen_range(0.0..=10.0),
                exploitability: rng.gen_range(0.0..=0.5),
                impact: rng.gen_range(0.0..=10.0),
                attack_cost: rng.gen_range(0.5..=3.0),
                patchable: rng.gen_bool(0.7),
            })
            .collect();
        vms.push(VmNode {
            vm_id: format!("vm{i:02}"),
            display_name: format!("VM {i}"),
            os_label: if rng.gen_bool(0.5) {
                "ubuntu"
            } else {
                "windows10"
            }
            .to_string(),
            tenant: format!("t{}", rng.gen_range(1..=n_tenants)),
            host_id: host,
            internet_facing: rng.gen_bool(0.5),
            attack_tree: AttackTree::new(vulns),
        });
    }
    let target_idx = rng.gen_range(0..vms.len());
    let target_id = vms[target_idx].vm_id.clone();
    // The target belongs to the defending tenant; pin it to t1 so the
    // evaluation always has a well-defined owner.
    vms[target_idx].tenant = "t1".to_string();

    let hosts = host_ids
        .iter()
        .map(|h| Host {
            host_id: h.clone(),
            capacity: occupancy[h] + rng.gen_range(0..=2),
        })
        .collect();

    let mut edges = Vec::new();
    for a in 0..n_vms {
        for b in 0..n_vms {
            if a == b || vms[a].vm_id == target_id {
                continue;
            }
            if rng.gen_bool(0.3) {
                edges.push((vms[a].vm_id.clone(), vms[b].vm_id.clone()));
            }
        }
    }

    TestScenario {
        cloud: CloudState::new(hosts, vms, target_id).expect("generated state is valid"),
        topology: TopologyDecl::new(edges),
    }
}

// ---------------------------------------------------------------------------
// Independent path / metrics oracle
// ---------------------------------------------------------------------------

/// Max severity over leaves, ties to the smallest cve_id, reimplemented
/// by linear scan.
pub fn oracle_severity(vm: &VmNode) -> f64 {
    let mut best: Option<&Vulnerability> = None;
    for v in &vm.attack_tree.leaves {
        let replace = match best {
            None => true,
            Some(b) => {
                let (sv, sb) = (v.exploitability * v.impact, b.exploitability * b.impact);
                sv > sb || (sv == sb && v.cve_id < b.cve_id)
            }
        };
        if replace {
            best = Some(v);
        }
    }
    best.map(|v| v.exploitability * v.impact).unwrap_or(0.0)
}

fn oracle_adjacency(graph: &HarmGraph) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for e in graph.edges() {
        adj.entry(e.from.clone()).or_default().insert(e.to.clone());
    }
    adj
}

/// All simple attacker-to-target paths by recursive DFS over the edge
/// set, honoring the depth bound, sorted at the end.
pub fn oracle_paths(graph: &HarmGraph, limits: &PathLimits) -> Vec<Vec<NodeId>> {
    let adj = oracle_adjacency(graph);
    let target = graph.target_node();
    let mut found = Vec::new();
    let mut trail = vec![NodeId::Attacker];

    fn recurse(
        node: &NodeId,
        target: &NodeId,
        adj: &BTreeMap<NodeId, BTreeSet<NodeId>>,
        graph: &HarmGraph,
        limits: &PathLimits,
        trail: &mut Vec<NodeId>,
        found: &mut Vec<Vec<NodeId>>,
    ) {
        let Some(nexts) = adj.get(node) else { return };
        for next in nexts {
            if trail.contains(next) {
                continue;
            }
            if trail.len() > limits.max_depth {
                // trail.len() - 1 non-attacker nodes so far; adding one
                // more would exceed the bound
                continue;
            }
            if next == target {
                let mut path = trail.clone();
                path.push(next.clone());
                found.push(path);
                continue;
            }
            let traversable = next
                .vm_id()
                .and_then(|id| graph.vms().get(id))
                .is_some_and(|vm| !vm.attack_tree.leaves.is_empty());
            if !traversable {
                continue;
            }
            trail.push(next.clone());
            recurse(next, target, adj, graph, limits, trail, found);
            trail.pop();
        }
    }

    recurse(
        &NodeId::Attacker,
        &target,
        &adj,
        graph,
        limits,
        &mut trail,
        &mut found,
    );
    found.sort();
    found
}

pub struct OracleMetrics {
    pub cloud_risk: f64,
    pub mapl: f64,
    pub path_count: usize,
}

pub fn oracle_metrics(graph: &HarmGraph, limits: &PathLimits) -> OracleMetrics {
    let paths = oracle_paths(graph, limits);
    let mut cr = 0.0;
    let mut lengths = 0usize;
    for path in &paths {
        // per-path subtotal first: cloud risk is defined as the sum of
        // per-path risks, and exact comparison needs that associativity
        let mut path_risk = 0.0;
        for node in &path[1..] {
            let vm = &graph.vms()[node.vm_id().expect("non-attacker node")];
            path_risk += oracle_severity(vm);
        }
        cr += path_risk;
        lengths += path.len() - 1;
    }
    OracleMetrics {
        cloud_risk: cr,
        mapl: if paths.is_empty() {
            0.0
        } else {
            lengths as f64 / paths.len() as f64
        },
        path_count: paths.len(),
    }
}

// ---------------------------------------------------------------------------
// Independent strategy-selection oracle
// ---------------------------------------------------------------------------

/// Rebuilds a cloud state with one VM moved, bypassing `apply_migration`.
pub fn rebuilt_with_migration(cloud: &CloudState, vm_id: &str, dest: &str) -> CloudState {
    let hosts = cloud.hosts().values().cloned().collect();
    let vms = cloud
        .vms()
        .values()
        .cloned()
        .map(|mut vm| {
            if vm.vm_id == vm_id {
                vm.host_id = dest.to_string();
            }
            vm
        })
        .collect();
    CloudState::new(hosts, vms, cloud.target_id().to_string()).expect("valid migration")
}

/// Rebuilds a cloud state with one vulnerability removed.
pub fn rebuilt_with_patch(cloud: &CloudState, vm_id: &str, cve_id: &str) -> CloudState {
    let hosts = cloud.hosts().values().cloned().collect();
    let vms = cloud
        .vms()
        .values()
        .cloned()
        .map(|mut vm| {
            if vm.vm_id == vm_id {
                vm.attack_tree.leaves.retain(|v| v.cve_id != cve_id);
            }
            vm
        })
        .collect();
    CloudState::new(hosts, vms, cloud.target_id().to_string()).expect("valid patch")
}

fn oracle_rank(strategy: &Strategy) -> (u8, String, String) {
    match strategy {
        Strategy::LiveMigrate { vm_id, dest_host } => (0, vm_id.clone(), dest_host.clone()),
        Strategy::Patch { vm_id, cve_id } => (1, vm_id.clone(), cve_id.clone()),
    }
}

/// Brute-force argmin over every feasible (VM, host) migration and every
/// per-VM effective-patchable (VM, CVE) candidate for the defending
/// tenant, with projected risk computed by the oracle DFS.
pub fn oracle_best_strategy(
    cloud: &CloudState,
    topology: &TopologyDecl,
    limits: &PathLimits,
    derive_coresidency: bool,
) -> Option<(Strategy, f64)> {
    let own_tenant = cloud.vms()[cloud.target_id()].tenant.clone();
    let mut best: Option<(Strategy, f64)> = None;

    let mut offer = |strategy: Strategy, state: CloudState| {
        let graph = harmmtd_core::harm::build_harm(&state, topology, derive_coresidency)
            .expect("candidate graph builds");
        let projected = oracle_metrics(&graph, limits).cloud_risk;
        let replace = match &best {
            None => true,
            Some((cur, cur_cr)) => {
                projected < *cur_cr
                    || (projected == *cur_cr && oracle_rank(&strategy) < oracle_rank(cur))
            }
        };
        if replace {
            best = Some((strategy, projected));
        }
    };

    for (vm_id, vm) in cloud.vms() {
        if vm.tenant != own_tenant {
            continue;
        }
        for (host_id, host) in cloud.hosts() {
            if host_id == &vm.host_id || cloud.host_occupancy(host_id) >= host.capacity as usize {
                continue;
            }
            offer(
                Strategy::LiveMigrate {
                    vm_id: vm_id.clone(),
                    dest_host: host_id.clone(),
                },
                rebuilt_with_migration(cloud, vm_id, host_id),
            );
        }
        // highest-severity patchable leaf, smallest cve_id on ties
        let mut pick: Option<&Vulnerability> = None;
        for v in vm.attack_tree.leaves.iter().filter(|v| v.patchable) {
            let replace = match pick {
                None => true,
                Some(b) => {
                    let (sv, sb) = (v.exploitability * v.impact, b.exploitability * b.impact);
                    sv > sb || (sv == sb && v.cve_id < b.cve_id)
                }
            };
            if replace {
                pick = Some(v);
            }
        }
        if let Some(v) = pick {
            offer(
                Strategy::Patch {
                    vm_id: vm_id.clone(),
                    cve_id: v.cve_id.clone(),
                },
                rebuilt_with_patch(cloud, vm_id, &v.cve_id),
            );
        }
    }
    best
}

/// Declared plus internet-entry edges: everything a migration must not
/// touch.
pub fn non_coresidency_edges(graph: &HarmGraph) -> BTreeSet<(NodeId, NodeId, EdgeKind)> {
    graph
        .edges()
        .iter()
        .filter(|e| e.kind != EdgeKind::CoResidency)
        .map(|e| (e.from.clone(), e.to.clone(), e.kind))
        .collect()
}

//! Two-layer HARM: an upper-layer reachability graph over VMs and a
//! lower-layer OR-gate attack tree of vulnerabilities per VM.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::CloudState;
use crate::scenario::TopologyDecl;

/// A CVE record as extracted from a vulnerability scan report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vulnerability {
    pub cve_id: String,
    /// CVSS base score, stored for reporting; not used by the risk rule.
    pub base_score: f64,
    pub exploitability: f64,
    pub impact: f64,
    #[serde(default = "default_attack_cost")]
    pub attack_cost: f64,
    #[serde(default = "default_patchable")]
    pub patchable: bool,
}

fn default_attack_cost() -> f64 {
    1.0
}

fn default_patchable() -> bool {
    true
}

impl Vulnerability {
    /// Severity of exploiting this vulnerability: exploitability x impact.
    pub fn severity(&self) -> f64 {
        self.exploitability * self.impact
    }
}

/// Single OR-gate over the vulnerabilities of one VM. Any one leaf
/// suffices to exploit the VM; the highest-severity leaf drives the risk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackTree {
    pub leaves: Vec<Vulnerability>,
}

impl AttackTree {
    pub fn new(leaves: Vec<Vulnerability>) -> Self {
        Self { leaves }
    }

    /// The OR-gate winner: maximum severity, ties broken by the
    /// lexicographically smallest cve_id. `None` for a vulnerability-free
    /// VM, which is treated as unexploitable.
    pub fn effective_vulnerability(&self) -> Option<&Vulnerability> {
        self.leaves.iter().fold(None, |best, v| match best {
            None => Some(v),
            Some(b) => {
                if v.severity() > b.severity()
                    || (v.severity() == b.severity() && v.cve_id < b.cve_id)
                {
                    Some(v)
                } else {
                    Some(b)
                }
            }
        })
    }

    /// Severity of the effective vulnerability; 0 when there are no leaves.
    pub fn severity(&self) -> f64 {
        self.effective_vulnerability()
            .map(Vulnerability::severity)
            .unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

/// One VM of the modeled infrastructure, carrying its lower-layer tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmNode {
    pub vm_id: String,
    pub display_name: String,
    pub os_label: String,
    pub tenant: String,
    pub host_id: String,
    pub internet_facing: bool,
    pub attack_tree: AttackTree,
}

/// Risk of exploiting a VM: severity of its OR-gate winner (E x I).
pub fn vm_risk(vm: &VmNode) -> f64 {
    vm.attack_tree.severity()
}

/// Node of the upper-layer graph. The derived ordering (Attacker, then
/// VMs by id, then Target) fixes the deterministic path order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Attacker,
    Vm(String),
    Target(String),
}

impl NodeId {
    /// The VM id behind this node, if any (targets are VMs too).
    pub fn vm_id(&self) -> Option<&str> {
        match self {
            NodeId::Attacker => None,
            NodeId::Vm(id) | NodeId::Target(id) => Some(id),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            NodeId::Attacker => "attacker",
            NodeId::Vm(id) | NodeId::Target(id) => id,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How an edge got into the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// Copied verbatim from the scenario's virtual-network declaration.
    Declared,
    /// Attacker -> VM, derived from the internet_facing flag.
    InternetEntry,
    /// Derived from placement: different tenants sharing a host.
    CoResidency,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

/// Upper layer of the HARM plus the per-VM lower layers it references.
/// Immutable after construction; rebuild after any cloud-state change.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmGraph {
    target_id: String,
    vms: BTreeMap<String, VmNode>,
    edges: BTreeSet<Edge>,
    /// Merged adjacency (provenance erased), children sorted. Parallel
    /// edges of different kinds collapse to one traversal edge.
    adjacency: BTreeMap<NodeId, Vec<NodeId>>,
}

impl HarmGraph {
    pub fn target_id(&self) -> &str {
        &self.target_id
    }

    pub fn target_node(&self) -> NodeId {
        NodeId::Target(self.target_id.clone())
    }

    pub fn vms(&self) -> &BTreeMap<String, VmNode> {
        &self.vms
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn edges_of_kind(&self, kind: EdgeKind) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    pub fn successors(&self, node: &NodeId) -> &[NodeId] {
        self.adjacency.get(node).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// One cycle-free attacker-to-target path through the upper layer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttackPath {
    nodes: Vec<NodeId>,
}

impl AttackPath {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    /// Exploited nodes on the path: everything except the attacker, the
    /// target included. This is the |ap| used by the mean-path-length metric.
    pub fn length(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    /// Nodes excluding the attacker, in order.
    pub fn risk_nodes(&self) -> &[NodeId] {
        &self.nodes[1..]
    }
}

/// Bounds on simple-path enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLimits {
    /// Maximum path length (nodes excluding the attacker).
    pub max_depth: usize,
    /// Enumeration aborts with `PathExplosion` past this many paths.
    pub max_paths: usize,
}

impl Default for PathLimits {
    fn default() -> Self {
        Self {
            max_depth: 12,
            max_paths: 100_000,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HarmError {
    #[error("edge references unknown vm `{0}`")]
    DanglingVmReference(String),
    #[error("target `{0}` not found among vms")]
    MissingTarget(String),
    #[error("duplicate vm_id `{0}`")]
    DuplicateVmId(String),
    #[error("self-loop edge on `{0}`")]
    SelfLoopEdge(String),
    #[error("edge out of target `{0}`")]
    EdgeFromTarget(String),
    #[error("path enumeration exceeded {limit} paths; tighten limits or reduce the scenario")]
    PathExplosion { limit: usize },
    #[error("invalid path limits: max_depth and max_paths must be >= 1")]
    InvalidLimits,
}

/// Builds the upper layer from cloud state plus the declared virtual
/// network. Declared edges are copied verbatim; internet-entry edges are
/// derived from the per-VM flag; co-residency edges (when enabled) are
/// derived from placement, both directions, for every cross-tenant pair
/// sharing a host. Edges out of the target are never produced.
pub fn build_harm(
    cloud: &CloudState,
    topology: &TopologyDecl,
    derive_coresidency: bool,
) -> Result<HarmGraph, HarmError> {
    let target_id = cloud.target_id().to_string();
    if !cloud.vms().contains_key(&target_id) {
        return Err(HarmError::MissingTarget(target_id));
    }

    let node_of = |id: &str| -> NodeId {
        if id == target_id {
            NodeId::Target(id.to_string())
        } else {
            NodeId::Vm(id.to_string())
        }
    };

    let mut edges = BTreeSet::new();

    for decl in &topology.edges {
        if !cloud.vms().contains_key(&decl.from) {
            return Err(HarmError::DanglingVmReference(decl.from.clone()));
        }
        if !cloud.vms().contains_key(&decl.to) {
            return Err(HarmError::DanglingVmReference(decl.to.clone()));
        }
        if decl.from == decl.to {
            return Err(HarmError::SelfLoopEdge(decl.from.clone()));
        }
        if decl.from == target_id {
            return Err(HarmError::EdgeFromTarget(decl.from.clone()));
        }
        edges.insert(Edge {
            from: node_of(&decl.from),
            to: node_of(&decl.to),
            kind: EdgeKind::Declared,
        });
    }

    for (vm_id, vm) in cloud.vms() {
        if vm.internet_facing {
            edges.insert(Edge {
                from: NodeId::Attacker,
                to: node_of(vm_id),
                kind: EdgeKind::InternetEntry,
            });
        }
    }

    if derive_coresidency {
        let vms: Vec<&VmNode> = cloud.vms().values().collect();
        for (i, a) in vms.iter().enumerate() {
            for b in vms.iter().skip(i + 1) {
                if a.host_id != b.host_id || a.tenant == b.tenant {
                    continue;
                }
                if a.vm_id != target_id {
                    edges.insert(Edge {
                        from: node_of(&a.vm_id),
                        to: node_of(&b.vm_id),
                        kind: EdgeKind::CoResidency,
                    });
                }
                if b.vm_id != target_id {
                    edges.insert(Edge {
                        from: node_of(&b.vm_id),
                        to: node_of(&a.vm_id),
                        kind: EdgeKind::CoResidency,
                    });
                }
            }
        }
    }

    let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for e in &edges {
        adjacency
            .entry(e.from.clone())
            .or_default()
            .insert(e.to.clone());
    }
    let adjacency = adjacency
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().collect()))
        .collect();

    Ok(HarmGraph {
        target_id,
        vms: cloud.vms().clone(),
        edges,
        adjacency,
    })
}

/// Enumerates all simple attacker-to-target paths, in lexicographic order
/// of node sequence. VMs with empty attack trees are unexploitable and
/// skipped as intermediates; the target itself is always reachable.
/// Paths longer than `limits.max_depth` are not explored; exceeding
/// `limits.max_paths` is an error, never a silent truncation.
pub fn enumerate_attack_paths(
    graph: &HarmGraph,
    limits: &PathLimits,
) -> Result<Vec<AttackPath>, HarmError> {
    if limits.max_depth == 0 || limits.max_paths == 0 {
        return Err(HarmError::InvalidLimits);
    }

    let target = graph.target_node();
    let mut paths = Vec::new();
    let mut current: Vec<NodeId> = vec![NodeId::Attacker];
    let mut on_path: BTreeSet<NodeId> = current.iter().cloned().collect();
    // Stack of per-level cursors into the sorted successor lists.
    let mut cursors: Vec<usize> = vec![0];

    while let Some(depth) = cursors.len().checked_sub(1) {
        let node = current[depth].clone();
        let succs = graph.successors(&node);
        let cursor = &mut cursors[depth];

        if *cursor >= succs.len() {
            cursors.pop();
            on_path.remove(&current.pop().expect("stack in sync"));
            continue;
        }

        let next = succs[*cursor].clone();
        *cursor += 1;

        // depth == non-attacker nodes on the current partial path.
        if depth + 1 > limits.max_depth || on_path.contains(&next) {
            continue;
        }

        if next == target {
            if paths.len() == limits.max_paths {
                return Err(HarmError::PathExplosion {
                    limit: limits.max_paths,
                });
            }
            let mut nodes = current.clone();
            nodes.push(next);
            paths.push(AttackPath { nodes });
            continue;
        }

        let exploitable = match next.vm_id() {
            Some(id) => graph
                .vms
                .get(id)
                .is_some_and(|vm| !vm.attack_tree.is_empty()),
            None => false,
        };
        if !exploitable {
            continue;
        }

        on_path.insert(next.clone());
        current.push(next);
        cursors.push(0);
    }

    // Sorted-adjacency DFS already emits lexicographically; keep the
    // contract explicit regardless of traversal details.
    paths.sort();
    Ok(paths)
}

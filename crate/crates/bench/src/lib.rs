//! Scenario builders shared by the benchmark targets.

use std::path::PathBuf;

use harmmtd_core::cloud::{CloudState, Host};
use harmmtd_core::harm::{AttackTree, VmNode, Vulnerability};
use harmmtd_core::scenario::{Scenario, TopologyDecl};

pub fn bundled(name: &str) -> Scenario {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.json"));
    Scenario::from_file(path).expect("bundled scenario loads")
}

fn stock_vuln(i: usize) -> Vulnerability {
    Vulnerability {
        cve_id: format!("CVE-2018-{:04}", 8000 + i),
        base_score: 7.0,
        exploitability: 0.18 + 0.01 * (i % 5) as f64,
        impact: 5.9,
        attack_cost: 1.5,
        patchable: true,
    }
}

/// Layered mesh: `depth` layers of `width` VMs, fully connected layer to
/// layer, every first-layer VM internet-facing, a database behind the
/// last layer. Simple path count is width^depth.
pub fn layered_mesh(width: usize, depth: usize) -> (CloudState, TopologyDecl) {
    let mut vms = Vec::new();
    let mut edges = Vec::new();
    let hosts = vec![Host {
        host_id: "h1".into(),
        capacity: (width * depth + 1) as u32,
    }];

    let vm_id = |layer: usize, i: usize| format!("l{layer}-vm{i}");
    for layer in 0..depth {
        for i in 0..width {
            vms.push(VmNode {
                vm_id: vm_id(layer, i),
                display_name: format!("Layer {layer} VM {i}"),
                os_label: "ubuntu".into(),
                tenant: "EP1".into(),
                host_id: "h1".into(),
                internet_facing: layer == 0,
                attack_tree: AttackTree::new(vec![stock_vuln(layer * width + i)]),
            });
            if layer + 1 < depth {
                for j in 0..width {
                    edges.push((vm_id(layer, i), vm_id(layer + 1, j)));
                }
            } else {
                edges.push((vm_id(layer, i), "db".to_string()));
            }
        }
    }
    vms.push(VmNode {
        vm_id: "db".into(),
        display_name: "Database".into(),
        os_label: "ubuntu".into(),
        tenant: "EP1".into(),
        host_id: "h1".into(),
        internet_facing: false,
        attack_tree: AttackTree::new(vec![stock_vuln(97)]),
    });

    let cloud = CloudState::new(hosts, vms, "db".into()).expect("mesh state is valid");
    (cloud, TopologyDecl::new(edges))
}

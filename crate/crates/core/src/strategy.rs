//! Situation projection: exhaustive what-if evaluation of live-migration
//! and patching responses, argmin selection over projected cloud risk,
//! and the comparison/radar exports behind the operator reports.
//!
//! Every candidate is evaluated on a persistent copy of the cloud state:
//! migrate or patch, rebuild the HARM, recompute metrics. The baseline
//! state is never touched, so the projection for the selected strategy
//! is exactly what re-analysis reports after real deployment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudError, CloudState};
use crate::harm::{build_harm, HarmError, PathLimits, Vulnerability};
use crate::metrics::{analyze, fmt3, round3, MetricsError, MetricsReport};
use crate::scenario::TopologyDecl;

/// A concrete response the enterprise can request from the provider.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    LiveMigrate { vm_id: String, dest_host: String },
    Patch { vm_id: String, cve_id: String },
}

impl Strategy {
    pub fn vm_id(&self) -> &str {
        match self {
            Strategy::LiveMigrate { vm_id, .. } | Strategy::Patch { vm_id, .. } => vm_id,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Strategy::LiveMigrate { vm_id, dest_host } => {
                format!("vm-lm {vm_id} -> {dest_host}")
            }
            Strategy::Patch { vm_id, cve_id } => format!("patch {vm_id} {cve_id}"),
        }
    }

    /// Tie-break rank: migration preferred, then vm_id, then detail.
    fn rank(&self) -> (u8, &str, &str) {
        match self {
            Strategy::LiveMigrate { vm_id, dest_host } => (0, vm_id, dest_host),
            Strategy::Patch { vm_id, cve_id } => (1, vm_id, cve_id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub limits: PathLimits,
    pub derive_coresidency: bool,
    pub include_patching: bool,
    /// Acceptable-risk ceiling; selection fails when no candidate
    /// projects at or below it.
    pub threshold: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            limits: PathLimits::default(),
            derive_coresidency: true,
            include_patching: true,
            threshold: None,
        }
    }
}

/// One evaluated candidate and its projected posture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyEvaluation {
    pub strategy: Strategy,
    pub baseline_cr: f64,
    pub projected_cr: f64,
    /// 100 x (projected - baseline) / baseline; negative means the
    /// strategy reduces risk.
    pub delta_pct: f64,
    pub projected_roa: f64,
    pub projected_mapl: f64,
}

/// Candidate that could not be evaluated (path explosion on its graph).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedCandidate {
    pub strategy: Strategy,
    pub reason: String,
}

/// Result of one evaluation round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRun {
    pub baseline: MetricsReport,
    pub evaluations: Vec<StrategyEvaluation>,
    pub failed: Vec<FailedCandidate>,
}

impl EvaluationRun {
    /// True when the baseline has no attack path: nothing to defend.
    pub fn no_threat(&self) -> bool {
        self.baseline.path_count == 0
    }
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("no evaluations to select from")]
    EmptyEvaluationSet,
    #[error("no candidate reaches the risk threshold {threshold} (best projected {best})")]
    ThresholdUnreachable { threshold: f64, best: f64 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Harm(#[from] HarmError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

fn delta_pct(baseline: f64, projected: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * (projected - baseline) / baseline
    } else if projected == 0.0 {
        // degenerate zero-risk baseline: nothing to reduce
        0.0
    } else {
        100.0
    }
}

/// The highest-severity patchable leaf, ties broken by smallest cve_id:
/// the one vulnerability a patching round removes.
pub fn effective_patchable(leaves: &[Vulnerability]) -> Option<&Vulnerability> {
    leaves
        .iter()
        .filter(|v| v.patchable)
        .fold(None, |best: Option<&Vulnerability>, v| match best {
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

/// Evaluates every candidate response for the defending tenant: each VM
/// against every feasible destination host, plus (optionally) one patch
/// of the VM's highest-severity patchable vulnerability. Only VMs of the
/// target's tenant are considered, since those are the only strategies
/// the provider will authorize.
pub fn evaluate_all(
    cloud: &CloudState,
    topology: &TopologyDecl,
    opts: &EvalOptions,
) -> Result<EvaluationRun, StrategyError> {
    let baseline_graph = build_harm(cloud, topology, opts.derive_coresidency)?;
    let baseline = analyze(&baseline_graph, &opts.limits)?;

    let mut run = EvaluationRun {
        baseline,
        evaluations: Vec::new(),
        failed: Vec::new(),
    };
    if run.no_threat() {
        return Ok(run);
    }

    let own_tenant = cloud.vms()[cloud.target_id()].tenant.clone();
    let baseline_cr = run.baseline.cloud_risk;

    let consider = |strategy: Strategy,
                    what_if: Result<CloudState, CloudError>,
                    run: &mut EvaluationRun|
     -> Result<(), StrategyError> {
        let state = what_if?;
        let graph = build_harm(&state, topology, opts.derive_coresidency)?;
        match analyze(&graph, &opts.limits) {
            Ok(report) => {
                run.evaluations.push(StrategyEvaluation {
                    strategy,
                    baseline_cr,
                    projected_cr: report.cloud_risk,
                    delta_pct: delta_pct(baseline_cr, report.cloud_risk),
                    projected_roa: report.roa,
                    projected_mapl: report.mapl,
                });
            }
            Err(MetricsError::Harm(HarmError::PathExplosion { limit })) => {
                run.failed.push(FailedCandidate {
                    strategy,
                    reason: format!("path enumeration exceeded {limit} paths"),
                });
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    };

    for (vm_id, vm) in cloud.vms() {
        if vm.tenant != own_tenant {
            continue;
        }
        for (host_id, host) in cloud.hosts() {
            if host_id == &vm.host_id || cloud.host_occupancy(host_id) >= host.capacity as usize {
                continue;
            }
            let strategy = Strategy::LiveMigrate {
                vm_id: vm_id.clone(),
                dest_host: host_id.clone(),
            };
            consider(strategy, cloud.apply_migration(vm_id, host_id), &mut run)?;
        }
        if opts.include_patching {
            if let Some(v) = effective_patchable(&vm.attack_tree.leaves) {
                let strategy = Strategy::Patch {
                    vm_id: vm_id.clone(),
                    cve_id: v.cve_id.clone(),
                };
                consider(strategy, cloud.apply_patch(vm_id, &v.cve_id), &mut run)?;
            }
        }
    }

    // BTreeMap iteration already yields a stable order; normalize anyway
    // so a future parallel fan-out cannot change the selection.
    run.evaluations
        .sort_by(|a, b| a.strategy.rank().cmp(&b.strategy.rank()));
    Ok(run)
}

/// Argmin over projected cloud risk. Ties prefer live migration, then
/// the smallest vm_id, then the smallest destination host / CVE.
pub fn select_strategy(
    evaluations: &[StrategyEvaluation],
) -> Result<&StrategyEvaluation, StrategyError> {
    evaluations
        .iter()
        .min_by(|a, b| {
            a.projected_cr
                .total_cmp(&b.projected_cr)
                .then_with(|| a.strategy.rank().cmp(&b.strategy.rank()))
        })
        .ok_or(StrategyError::EmptyEvaluationSet)
}

/// Selection with the optional acceptable-risk ceiling enforced.
pub fn select_with_threshold(
    evaluations: &[StrategyEvaluation],
    threshold: Option<f64>,
) -> Result<&StrategyEvaluation, StrategyError> {
    let best = select_strategy(evaluations)?;
    if let Some(limit) = threshold {
        if best.projected_cr > limit {
            return Err(StrategyError::ThresholdUnreachable {
                threshold: limit,
                best: best.projected_cr,
            });
        }
    }
    Ok(best)
}

/// One row of the per-VM comparison: the best patching and best
/// migration deltas, with the overall winner marked.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub vm_id: String,
    pub patch_delta_pct: Option<f64>,
    pub vmlm_delta_pct: Option<f64>,
    /// `"vm-lm"` or `"patch"` on the selected row, empty elsewhere.
    pub selected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("vm_id,patch_delta_pct,vmlm_delta_pct,selected\n");
        for row in &self.rows {
            let patch = row.patch_delta_pct.map(fmt3).unwrap_or_default();
            let vmlm = row.vmlm_delta_pct.map(fmt3).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.vm_id, patch, vmlm, row.selected
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "rows": self.rows.iter().map(|r| serde_json::json!({
                "vm_id": r.vm_id,
                "patch_delta_pct": r.patch_delta_pct.map(round3),
                "vmlm_delta_pct": r.vmlm_delta_pct.map(round3),
                "selected": r.selected,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Builds the per-VM comparison from an evaluation round. Rows appear in
/// vm_id order; exactly one row carries the selected marker when any
/// evaluation exists.
pub fn comparison_report(run: &EvaluationRun) -> ComparisonTable {
    let selected = select_strategy(&run.evaluations).ok();
    let mut rows: Vec<ComparisonRow> = Vec::new();
    let mut vm_ids: Vec<&str> = run.evaluations.iter().map(|e| e.strategy.vm_id()).collect();
    vm_ids.sort_unstable();
    vm_ids.dedup();

    for vm_id in vm_ids {
        let best_of = |want_migration: bool| {
            run.evaluations
                .iter()
                .filter(|e| {
                    e.strategy.vm_id() == vm_id
                        && matches!(e.strategy, Strategy::LiveMigrate { .. }) == want_migration
                })
                .map(|e| e.delta_pct)
                .min_by(f64::total_cmp)
        };
        let marker = match selected {
            Some(sel) if sel.strategy.vm_id() == vm_id => match sel.strategy {
                Strategy::LiveMigrate { .. } => "vm-lm".to_string(),
                Strategy::Patch { .. } => "patch".to_string(),
            },
            _ => String::new(),
        };
        rows.push(ComparisonRow {
            vm_id: vm_id.to_string(),
            patch_delta_pct: best_of(false),
            vmlm_delta_pct: best_of(true),
            selected: marker,
        });
    }
    ComparisonTable { rows }
}

/// Radar-chart data: baseline posture against every evaluated strategy.
pub fn radar_export(run: &EvaluationRun) -> serde_json::Value {
    serde_json::json!({
        "baseline": {
            "cr": round3(run.baseline.cloud_risk),
            "roa": round3(run.baseline.roa),
            "mapl": round3(run.baseline.mapl),
        },
        "per_strategy": run.evaluations.iter().map(|e| serde_json::json!({
            "strategy": e.strategy,
            "cr": round3(e.projected_cr),
            "roa": round3(e.projected_roa),
            "mapl": round3(e.projected_mapl),
            "delta_pct": round3(e.delta_pct),
        })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Host;
    use crate::harm::{AttackTree, VmNode};

    fn vuln(cve: &str, e: f64, i: f64) -> Vulnerability {
        Vulnerability {
            cve_id: cve.to_string(),
            base_score: 7.0,
            exploitability: e,
            impact: i,
            attack_cost: 1.0,
            patchable: true,
        }
    }

    fn vm(id: &str, tenant: &str, host: &str, facing: bool, vulns: Vec<Vulnerability>) -> VmNode {
        VmNode {
            vm_id: id.to_string(),
            display_name: id.to_uppercase(),
            os_label: "linux".to_string(),
            tenant: tenant.to_string(),
            host_id: host.to_string(),
            internet_facing: facing,
            attack_tree: AttackTree::new(vulns),
        }
    }

    fn eval(strategy: Strategy, projected: f64) -> StrategyEvaluation {
        StrategyEvaluation {
            strategy,
            baseline_cr: 10.0,
            projected_cr: projected,
            delta_pct: delta_pct(10.0, projected),
            projected_roa: 0.0,
            projected_mapl: 0.0,
        }
    }

    fn lm(vm: &str, host: &str) -> Strategy {
        Strategy::LiveMigrate {
            vm_id: vm.into(),
            dest_host: host.into(),
        }
    }

    fn patch(vm: &str, cve: &str) -> Strategy {
        Strategy::Patch {
            vm_id: vm.into(),
            cve_id: cve.into(),
        }
    }

    /// Victim co-resident with a foreign relay that leads to the target;
    /// migrating the victim severs the only cross-tenant detour.
    fn coresident_scenario() -> (CloudState, TopologyDecl) {
        let cloud = CloudState::new(
            vec![
                Host {
                    host_id: "h1".into(),
                    capacity: 4,
                },
                Host {
                    host_id: "h2".into(),
                    capacity: 4,
                },
                Host {
                    host_id: "h3".into(),
                    capacity: 4,
                },
            ],
            vec![
                vm("victim", "EP1", "h1", true, vec![vuln("CVE-A", 0.2, 5.0)]),
                vm("relay", "EP2", "h1", false, vec![vuln("CVE-B", 0.2, 5.0)]),
                vm("db", "EP1", "h2", false, vec![vuln("CVE-C", 0.2, 5.0)]),
                vm("spy", "EP2", "h2", false, vec![vuln("CVE-D", 0.2, 5.0)]),
            ],
            "db".into(),
        )
        .unwrap();
        // declared: victim -> db; relay -> spy (foreign network)
        let topo = TopologyDecl::new(vec![
            ("victim".to_string(), "db".to_string()),
            ("relay".to_string(), "spy".to_string()),
        ]);
        (cloud, topo)
    }

    #[test]
    fn argmin_selects_lowest_projected_cr() {
        let evals = vec![
            eval(lm("a", "h1"), 5.0),
            eval(lm("b", "h1"), 3.2),
            eval(lm("c", "h1"), 4.1),
        ];
        let best = select_strategy(&evals).unwrap();
        assert_eq!(best.projected_cr, 3.2);
        assert_eq!(best.strategy.vm_id(), "b");
    }

    #[test]
    fn tie_prefers_live_migration_then_ids() {
        let evals = vec![eval(patch("a", "CVE-1"), 3.2), eval(lm("b", "h2"), 3.2)];
        assert_eq!(select_strategy(&evals).unwrap().strategy, lm("b", "h2"));

        let evals = vec![
            eval(lm("b", "h2"), 3.2),
            eval(lm("a", "h9"), 3.2),
            eval(lm("a", "h2"), 3.2),
        ];
        assert_eq!(select_strategy(&evals).unwrap().strategy, lm("a", "h2"));
    }

    #[test]
    fn empty_evaluation_set_is_an_error() {
        assert!(matches!(
            select_strategy(&[]),
            Err(StrategyError::EmptyEvaluationSet)
        ));
    }

    #[test]
    fn threshold_unreachable_when_best_exceeds_it() {
        let evals = vec![eval(lm("a", "h1"), 5.0)];
        assert!(select_with_threshold(&evals, Some(6.0)).is_ok());
        assert!(matches!(
            select_with_threshold(&evals, Some(0.0)),
            Err(StrategyError::ThresholdUnreachable { .. })
        ));
    }

    #[test]
    fn migration_breaking_coresidency_reduces_projected_cr() {
        let (cloud, topo) = coresident_scenario();
        let run = evaluate_all(&cloud, &topo, &EvalOptions::default()).unwrap();
        let best = run
            .evaluations
            .iter()
            .find(|e| e.strategy == lm("victim", "h3"))
            .expect("victim migration evaluated");
        assert!(best.projected_cr < best.baseline_cr);
        assert!(best.delta_pct < 0.0);
    }

    #[test]
    fn evaluate_all_skips_foreign_vms_and_full_hosts() {
        let (cloud, topo) = coresident_scenario();
        let run = evaluate_all(&cloud, &topo, &EvalOptions::default()).unwrap();
        assert!(run
            .evaluations
            .iter()
            .all(|e| e.strategy.vm_id() == "victim" || e.strategy.vm_id() == "db"));
    }

    #[test]
    fn evaluate_all_leaves_baseline_untouched() {
        let (cloud, topo) = coresident_scenario();
        let before = cloud.clone();
        let _ = evaluate_all(&cloud, &topo, &EvalOptions::default()).unwrap();
        assert_eq!(cloud, before);
    }

    #[test]
    fn patch_candidate_targets_highest_severity_patchable() {
        let mut leaves = vec![vuln("CVE-LOW", 0.1, 2.0), vuln("CVE-HIGH", 0.3, 6.0)];
        assert_eq!(effective_patchable(&leaves).unwrap().cve_id, "CVE-HIGH");
        leaves[1].patchable = false;
        assert_eq!(effective_patchable(&leaves).unwrap().cve_id, "CVE-LOW");
        leaves[0].patchable = false;
        assert!(effective_patchable(&leaves).is_none());
    }

    #[test]
    fn projection_equals_reality_for_selected_strategy() {
        let (cloud, topo) = coresident_scenario();
        let opts = EvalOptions::default();
        let run = evaluate_all(&cloud, &topo, &opts).unwrap();
        let best = select_strategy(&run.evaluations).unwrap();
        let deployed = match &best.strategy {
            Strategy::LiveMigrate { vm_id, dest_host } => {
                cloud.apply_migration(vm_id, dest_host).unwrap()
            }
            Strategy::Patch { vm_id, cve_id } => cloud.apply_patch(vm_id, cve_id).unwrap(),
        };
        let graph = build_harm(&deployed, &topo, opts.derive_coresidency).unwrap();
        let after = analyze(&graph, &opts.limits).unwrap();
        assert_eq!(after.cloud_risk, best.projected_cr);
    }

    #[test]
    fn delta_pct_recomputes_from_cr_pair() {
        let (cloud, topo) = coresident_scenario();
        let run = evaluate_all(&cloud, &topo, &EvalOptions::default()).unwrap();
        for e in &run.evaluations {
            let expect = 100.0 * (e.projected_cr - e.baseline_cr) / e.baseline_cr;
            assert!((e.delta_pct - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn no_threat_round_has_no_candidates() {
        let cloud = CloudState::new(
            vec![Host {
                host_id: "h1".into(),
                capacity: 4,
            }],
            vec![
                vm("a", "EP1", "h1", false, vec![vuln("CVE-A", 0.2, 5.0)]),
                vm("db", "EP1", "h1", false, vec![]),
            ],
            "db".into(),
        )
        .unwrap();
        let run = evaluate_all(&cloud, &TopologyDecl::default(), &EvalOptions::default()).unwrap();
        assert!(run.no_threat());
        assert!(run.evaluations.is_empty());
    }

    #[test]
    fn comparison_table_shapes() {
        assert!(comparison_report(&EvaluationRun {
            baseline: MetricsReport {
                cloud_risk: 0.0,
                roa: 0.0,
                mapl: 0.0,
                path_count: 0,
                per_path: vec![],
            },
            evaluations: vec![],
            failed: vec![],
        })
        .rows
        .is_empty());

        let run = EvaluationRun {
            baseline: MetricsReport {
                cloud_risk: 10.0,
                roa: 0.0,
                mapl: 0.0,
                path_count: 1,
                per_path: vec![],
            },
            evaluations: vec![eval(lm("a", "h2"), 9.0)],
            failed: vec![],
        };
        let table = comparison_report(&run);
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].selected, "vm-lm");
        assert_eq!(table.rows[0].vmlm_delta_pct, Some(-10.0));
        assert_eq!(table.rows[0].patch_delta_pct, None);
        assert!(table.to_csv().contains("a,,-10,vm-lm"));
    }
}

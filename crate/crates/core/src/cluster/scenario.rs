//! Scenario files: a TOML description of a cluster and a list of steps.
//!
//! ```toml
//! seed = 7
//! layout = "evenodd4"
//! file = "hello"
//!
//! [params]
//! n = 64
//! ell = 10
//!
//! [[steps]]
//! action = "audit"
//! node = 1
//! rounds = 5
//!
//! [[steps]]
//! action = "fault"
//! node = 2
//! kind = "corrupt_symbol"
//! block = 0
//! position = 3
//! delta = 1
//! ```
//!
//! Node numbers are 1-based, as an operator would write them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{spawn_cluster, Cluster, ClusterError, FaultDescriptor, LayoutChoice, NodeSnapshot};
use crate::blocks::SystemParams;
use crate::dynamics::{self, AppendPlacement};
use crate::repair::RepairMode;

/// Parameter overrides. Unset fields come from the four-node EVENODD preset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub nodes: Option<usize>,
    pub blocks_per_node: Option<usize>,
    pub helpers: Option<usize>,
    pub repair_blocks: Option<usize>,
    pub ell: Option<usize>,
    pub lambda: Option<usize>,
}

impl ParamSpec {
    pub fn resolve(&self) -> SystemParams {
        let mut p = SystemParams::evenodd4(self.n.unwrap_or(64), self.ell.unwrap_or(10));
        p.m = self.m.unwrap_or(p.m);
        p.nodes = self.nodes.unwrap_or(p.nodes);
        p.blocks_per_node = self.blocks_per_node.unwrap_or(p.blocks_per_node);
        p.helpers = self.helpers.unwrap_or(p.helpers);
        p.repair_blocks = self.repair_blocks.unwrap_or(p.repair_blocks);
        p.lambda = self.lambda.unwrap_or(p.lambda);
        p
    }
}

fn default_rounds() -> usize {
    1
}

fn default_repetitions() -> usize {
    15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Step {
    /// `rounds` audit rounds of `count` blocks (default: all of the node's blocks).
    Audit {
        node: usize,
        count: Option<usize>,
        #[serde(default = "default_rounds")]
        rounds: usize,
        /// Expected verdict for every round, if the scenario asserts one.
        expect: Option<bool>,
    },
    Fault {
        node: usize,
        #[serde(flatten)]
        fault: FaultDescriptor,
    },
    /// Remembers the node's current store for a later `replay`.
    Snapshot {
        node: usize,
    },
    /// Makes the node answer from its last snapshot.
    Replay {
        node: usize,
    },
    ClearFaults {
        node: usize,
    },
    Repair {
        node: usize,
        mode: RepairMode,
    },
    Extract {
        node: usize,
        #[serde(default = "default_repetitions")]
        repetitions: usize,
    },
    Append {
        payload: String,
    },
    Update {
        block: usize,
        payload: String,
    },
    /// Decodes from the listed nodes and compares with the expected file.
    Decode {
        nodes: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_layout")]
    pub layout: LayoutChoice,
    /// File contents; when absent, `file_len` random bytes are used.
    pub file: Option<String>,
    pub file_len: Option<usize>,
    #[serde(default)]
    pub params: ParamSpec,
    #[serde(default)]
    pub steps: Vec<Step>,
}

fn default_layout() -> LayoutChoice {
    LayoutChoice::Evenodd4
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ClusterError> {
        toml::from_str(text).map_err(|e| ClusterError::Scenario(e.to_string()))
    }

    pub fn file_bytes(&self) -> Vec<u8> {
        match (&self.file, self.file_len) {
            (Some(s), _) => s.as_bytes().to_vec(),
            (None, len) => {
                let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ 0x66696c65);
                (0..len.unwrap_or(256)).map(|_| rng.gen()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: usize,
    pub action: String,
    /// False when an audit was rejected, an expectation failed or the step errored.
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub outcomes: Vec<StepOutcome>,
    pub audits_accepted: usize,
    pub audits_rejected: usize,
    /// Steps whose `expect` did not hold, or that errored.
    pub failures: usize,
    pub fingerprint: String,
}

fn node_index(cluster: &Cluster, node: usize) -> Result<usize, ClusterError> {
    if node == 0 || node > cluster.node_count() {
        return Err(ClusterError::UnknownNode(node));
    }
    Ok(node - 1)
}

/// Runs every step; returns the report and the finished cluster.
pub fn run_scenario(scenario: &Scenario) -> Result<(ScenarioReport, Cluster), ClusterError> {
    let params = scenario.params.resolve();
    let mut file = scenario.file_bytes();
    let mut cluster = spawn_cluster(params, scenario.layout, &file, scenario.seed)?;
    let mut snapshots: Vec<Option<NodeSnapshot>> = vec![None; cluster.node_count()];
    let mut report = ScenarioReport {
        outcomes: Vec::new(),
        audits_accepted: 0,
        audits_rejected: 0,
        failures: 0,
        fingerprint: String::new(),
    };

    for (i, step) in scenario.steps.iter().enumerate() {
        let action = serde_json::to_value(step)
            .ok()
            .and_then(|v| v.get("action").and_then(|a| a.as_str().map(str::to_owned)))
            .unwrap_or_default();
        let result: Result<(bool, String), ClusterError> = (|| match step {
            Step::Audit {
                node,
                count,
                rounds,
                expect,
            } => {
                let node = node_index(&cluster, *node)?;
                let count = count.unwrap_or(cluster.user.manifest.blocks_at(node));
                let mut accepted = 0;
                for _ in 0..*rounds {
                    if cluster.run_audit_round(node, count)?.accepted {
                        accepted += 1;
                    }
                }
                report.audits_accepted += accepted;
                report.audits_rejected += rounds - accepted;
                let ok = match expect {
                    Some(true) => accepted == *rounds,
                    Some(false) => accepted == 0,
                    None => accepted == *rounds,
                };
                Ok((ok, format!("{accepted}/{rounds} accepted")))
            }
            Step::Fault { node, fault } => {
                let node = node_index(&cluster, *node)?;
                cluster.inject_fault(node, fault.clone())?;
                Ok((true, "injected".into()))
            }
            Step::Snapshot { node } => {
                let node = node_index(&cluster, *node)?;
                snapshots[node] = Some(cluster.snapshot(node)?);
                Ok((true, format!("epoch {}", cluster.nodes[node].epoch)))
            }
            Step::Replay { node } => {
                let node = node_index(&cluster, *node)?;
                let snapshot = snapshots[node]
                    .clone()
                    .ok_or_else(|| ClusterError::Scenario(format!("no snapshot of node {}", node + 1)))?;
                cluster.inject_fault(node, FaultDescriptor::ReplayOld { snapshot })?;
                Ok((true, "replaying".into()))
            }
            Step::ClearFaults { node } => {
                let node = node_index(&cluster, *node)?;
                cluster.clear_faults(node)?;
                Ok((true, "cleared".into()))
            }
            Step::Repair { node, mode } => {
                let node = node_index(&cluster, *node)?;
                let r = cluster.fail_and_repair(node, *mode)?;
                let helpers: Vec<usize> = r.plan.helpers.iter().map(|h| h + 1).collect();
                Ok((
                    r.post_audit_accepted,
                    format!(
                        "helpers {helpers:?}, user data bytes {}, post-repair audit {}",
                        r.user_data_block_bytes,
                        if r.post_audit_accepted { "accepted" } else { "rejected" }
                    ),
                ))
            }
            Step::Extract { node, repetitions } => {
                let node = node_index(&cluster, *node)?;
                match cluster.extract(node, *repetitions) {
                    Ok(x) => {
                        let stored: Vec<_> = cluster.nodes[node].store.blocks().collect();
                        let exact =
                            stored.len() == x.blocks.len() && stored.iter().zip(&x.blocks).all(|(s, b)| *s == Some(b));
                        Ok((exact, format!("{} blocks, {} queries", x.blocks.len(), x.queries)))
                    }
                    Err(ClusterError::Extract(e)) => Ok((false, e.to_string())),
                    Err(e) => Err(e),
                }
            }
            Step::Append { payload } => {
                let placement = AppendPlacement::replicate(&cluster.user.manifest);
                let r = dynamics::append_block(&mut cluster, payload.as_bytes(), &placement).map_err(Box::new)?;
                file.extend(payload.as_bytes());
                Ok((true, format!("source {}", r.source + 1)))
            }
            Step::Update { block, payload } => {
                if *block == 0 {
                    return Err(ClusterError::Scenario("blocks are numbered from 1".into()));
                }
                dynamics::update_block(&mut cluster, block - 1, payload.as_bytes()).map_err(Box::new)?;
                Ok((true, "updated".into()))
            }
            Step::Decode { nodes } => {
                let idx = nodes
                    .iter()
                    .map(|&n| node_index(&cluster, n))
                    .collect::<Result<Vec<_>, _>>()?;
                match cluster.decode_from(&idx) {
                    Ok(bytes) => Ok((true, format!("{} bytes", bytes.len()))),
                    Err(e) => Ok((false, e.to_string())),
                }
            }
        })();
        let (ok, detail) = match result {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            report.failures += 1;
        }
        report.outcomes.push(StepOutcome {
            step: i + 1,
            action,
            ok,
            detail,
        });
    }
    report.fingerprint = cluster.fingerprint();
    Ok((report, cluster))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
seed = 3
file = "the quick brown fox jumps over the lazy dog"

[params]
n = 32
ell = 4

[[steps]]
action = "audit"
node = 1
rounds = 3

[[steps]]
action = "fault"
node = 2
kind = "corrupt_symbol"
block = 0
position = 1
delta = 7

[[steps]]
action = "audit"
node = 2
count = 2
expect = false

[[steps]]
action = "repair"
node = 2
mode = "exact"

[[steps]]
action = "decode"
nodes = [1, 2]
"#;

    #[test]
    fn parses_and_runs() {
        let s = Scenario::from_toml(TEXT).unwrap();
        assert_eq!(s.steps.len(), 5);
        let (report, _) = run_scenario(&s).unwrap();
        assert_eq!(report.failures, 0, "{:#?}", report.outcomes);
        assert_eq!(report.audits_accepted, 3);
        assert_eq!(report.audits_rejected, 1);
    }

    #[test]
    fn same_seed_same_fingerprint() {
        let s = Scenario::from_toml(TEXT).unwrap();
        let a = run_scenario(&s).unwrap().0.fingerprint;
        let b = run_scenario(&s).unwrap().0.fingerprint;
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_action_rejected() {
        assert!(Scenario::from_toml("[[steps]]\naction = \"explode\"\n").is_err());
    }
}

//! In-process simulation of the user, the auditor and the storage nodes.
//!
//! Parties exchange serialized messages; every message is recorded in a
//! [`ByteLedger`] and a [`Transcript`]. Keys are handed out through
//! role-checked accessors, so node state never contains `k_v` and auditor
//! state never contains `k_e`.

mod ledger;
pub mod scenario;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use ledger::{ByteLedger, Category, Party, Record, Transcript, CATEGORIES};

use crate::audit::{self, AuditError, Challenge, KeyMaterial, MissingBlockPolicy, NodeStore, Proof, Role, StoredBlock};
use crate::blocks::{decode_file, BlockError, CodeLayout, CodedBlock, FileManifest, SystemParams};
use crate::dynamics::DynamicsError;
use crate::extractor::{extract_node, ChallengeOracle, ExtractError, Extraction, ExtractorKeys};
use crate::field::{Gf256, SymbolVector};
use crate::ncrypt::AuxiliaryElements;
use crate::prf::PrfKey;
use crate::repair::{self, RepairError, RepairMessage, RepairMode, RepairPlan};
use crate::spacemac::SpaceMac;

pub const DEFAULT_FILE_ID: &str = "ncaudit-file";

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("invalid fault: {0}")]
    InvalidFault(String),
    #[error("layout does not fit the parameters: {0}")]
    Layout(String),
    #[error("post-repair audit of node {0} was rejected")]
    PostRepairAudit(usize),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error(transparent)]
    Dynamics(#[from] Box<DynamicsError>),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("scenario: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutChoice {
    Evenodd4,
    RandomFunctional,
}

/// A copy of a node's store taken at some repair epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSnapshot {
    pub epoch: u64,
    pub store: NodeStore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultDescriptor {
    /// Adds `delta` to one stored symbol.
    CorruptSymbol { block: usize, position: usize, delta: u8 },
    /// The node discards a block and answers with random data in its place.
    DeleteBlock { index: usize },
    /// The node answers from an old copy of its store.
    #[serde(skip)]
    ReplayOld { snapshot: NodeSnapshot },
    /// Each response is replaced by random bytes with this probability.
    LieProbability { epsilon: f64 },
}

/// A storage node: its store plus whatever misbehavior has been injected.
#[derive(Debug, Clone)]
pub struct StorageNode {
    pub(crate) store: NodeStore,
    pub(crate) replay: Option<NodeStore>,
    pub(crate) lie: f64,
    pub(crate) epoch: u64,
    rng: ChaCha20Rng,
}

impl StorageNode {
    fn new(store: NodeStore, seed: u64) -> Self {
        StorageNode {
            store,
            replay: None,
            lie: 0.0,
            epoch: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn store(&self) -> &NodeStore {
        &self.store
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Answers a serialized challenge with a serialized proof.
    fn respond(&mut self, chal_bytes: &[u8], params: &SystemParams) -> Result<Vec<u8>, AuditError> {
        let chal = Challenge::from_bytes(chal_bytes)?;
        if self.lie > 0.0 && self.rng.gen_bool(self.lie.min(1.0)) {
            let mut junk = vec![0u8; Proof::wire_len(params)];
            self.rng.fill(&mut junk[..]);
            return Ok(junk);
        }
        let store = self.replay.as_ref().unwrap_or(&self.store);
        let proof = audit::gen_proof(store, &chal, MissingBlockPolicy::SubstituteRandom, &mut self.rng)?;
        Ok(proof.to_bytes())
    }
}

pub(crate) struct UserState {
    pub keys: KeyMaterial,
    pub manifest: FileManifest,
    pub aux: AuxiliaryElements,
}

pub(crate) struct TpaState {
    pub k_v: PrfKey,
    pub manifest: FileManifest,
    pub mac: SpaceMac,
}

/// Result of one audit round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRound {
    pub node: usize,
    pub accepted: bool,
    pub challenge: Challenge,
    pub proof_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairReport {
    pub plan: RepairPlan,
    /// Data-block bytes the user sent or received during the repair.
    pub user_data_block_bytes: u64,
    pub post_audit_accepted: bool,
}

pub struct Cluster {
    pub(crate) params: SystemParams,
    pub(crate) rng: ChaCha20Rng,
    pub(crate) user: UserState,
    pub(crate) tpa: TpaState,
    pub(crate) nodes: Vec<StorageNode>,
    pub(crate) ledger: ByteLedger,
    pub(crate) transcript: Transcript,
}

/// Builds and distributes a file over a fresh cluster, deterministically
/// under `seed`.
pub fn spawn_cluster(
    params: SystemParams,
    layout: LayoutChoice,
    file: &[u8],
    seed: u64,
) -> Result<Cluster, ClusterError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let code = match layout {
        LayoutChoice::Evenodd4 => {
            let expected = SystemParams::evenodd4(params.n, params.ell);
            let shape = |p: &SystemParams| (p.m, p.nodes, p.blocks_per_node, p.helpers, p.repair_blocks);
            if shape(&params) != shape(&expected) {
                return Err(ClusterError::Layout("evenodd4 requires m=4, N=4, M=2, P=3, Q=1".into()));
            }
            CodeLayout::evenodd4()
        }
        LayoutChoice::RandomFunctional => CodeLayout::random_functional(&params, &mut rng)?,
    };
    spawn_with_layout(params, &code, file, DEFAULT_FILE_ID, &mut rng)
}

/// As [`spawn_cluster`] with an explicit layout and file id.
pub fn spawn_with_layout(
    params: SystemParams,
    layout: &CodeLayout,
    file: &[u8],
    file_id: &str,
    rng: &mut ChaCha20Rng,
) -> Result<Cluster, ClusterError> {
    let keys = audit::keygen(&params, rng)?;
    let setup = audit::setup_file(file, file_id, &params, &keys, layout, rng)?;
    let k_v = keys.verification_key(Role::Tpa)?.clone();
    let mac = SpaceMac::new(&k_v, file_id, params.ell);
    let mut cluster = Cluster {
        params,
        rng: ChaCha20Rng::seed_from_u64(rng.gen()),
        tpa: TpaState {
            k_v,
            manifest: setup.manifest.clone(),
            mac,
        },
        user: UserState {
            keys,
            manifest: setup.manifest.clone(),
            aux: setup.aux.clone(),
        },
        nodes: Vec::with_capacity(setup.nodes.len()),
        ledger: ByteLedger::default(),
        transcript: Transcript::default(),
    };

    for (i, store) in setup.nodes.into_iter().enumerate() {
        let to = Party::Node(i);
        let mut blocks = Vec::new();
        let mut tags = Vec::new();
        for s in store.slots.iter().flatten() {
            blocks.extend(s.block.to_bytes());
            tags.extend(s.tag.to_bytes());
        }
        cluster.send("setup_blocks", Party::User, to, Category::DataBlock, &blocks);
        cluster.send("setup_tags", Party::User, to, Category::Tag, &tags);
        cluster.send_json("setup_aux", Party::User, to, &store.aux);
        let k_e = cluster.user.keys.encryption_key(Role::Node)?.clone();
        cluster.send("setup_key", Party::User, to, Category::Control, k_e.as_bytes());
        let seed = cluster.rng.gen();
        cluster.nodes.push(StorageNode::new(store, seed));
    }
    let coeffs = coefficient_bytes(&cluster.tpa.manifest.node_coeffs);
    cluster.send(
        "setup_coefficients",
        Party::User,
        Party::Tpa,
        Category::Coefficient,
        &coeffs,
    );
    let k_v = cluster.tpa.k_v.as_bytes().to_vec();
    cluster.send("setup_key", Party::User, Party::Tpa, Category::Control, &k_v);
    Ok(cluster)
}

pub(crate) fn coefficient_bytes(rows: &[Vec<SymbolVector>]) -> Vec<u8> {
    rows.iter().flatten().flat_map(|r| r.to_bytes()).collect()
}

impl Cluster {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> Option<&StorageNode> {
        self.nodes.get(i)
    }

    pub fn ledger(&self) -> &ByteLedger {
        &self.ledger
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    /// The auditor's copy of the manifest.
    pub fn tpa_manifest(&self) -> &FileManifest {
        &self.tpa.manifest
    }

    /// The user's copy of the manifest.
    pub fn user_manifest(&self) -> &FileManifest {
        &self.user.manifest
    }

    pub fn file_id(&self) -> &str {
        &self.user.manifest.file_id
    }

    /// The verification key as seen by `party`; nodes are refused.
    pub fn verification_key(&self, party: Party) -> Result<&PrfKey, ClusterError> {
        Ok(self.user.keys.verification_key(party.role())?)
    }

    /// The encryption key as seen by `party`; the auditor is refused.
    pub fn encryption_key(&self, party: Party) -> Result<&PrfKey, ClusterError> {
        Ok(self.user.keys.encryption_key(party.role())?)
    }

    pub fn keys_for_user(&self) -> &KeyMaterial {
        &self.user.keys
    }

    pub fn aux(&self) -> &AuxiliaryElements {
        &self.user.aux
    }

    pub(crate) fn send(&mut self, kind: &str, from: Party, to: Party, category: Category, payload: &[u8]) {
        self.ledger.record(from, to, category, payload.len());
        self.transcript.message(kind, from, to, category, payload);
    }

    pub(crate) fn send_json<T: Serialize>(&mut self, kind: &str, from: Party, to: Party, value: &T) {
        let bytes = serde_json::to_vec(value).expect("control message serializes");
        self.send(kind, from, to, Category::Control, &bytes);
    }

    pub(crate) fn event(&mut self, kind: &str, detail: serde_json::Value) {
        self.transcript.event(kind, detail);
    }

    fn check_node(&self, node: usize) -> Result<(), ClusterError> {
        if node >= self.nodes.len() {
            return Err(ClusterError::UnknownNode(node));
        }
        Ok(())
    }

    /// Sends a challenge from `from` to `node` and returns the raw proof bytes.
    pub(crate) fn query(&mut self, from: Party, node: usize, chal: &Challenge) -> Result<Vec<u8>, ClusterError> {
        let bytes = chal.to_bytes();
        self.send("challenge", from, Party::Node(node), Category::Control, &bytes);
        let params = self.params;
        let proof = self.nodes[node].respond(&bytes, &params)?;
        self.send("proof", Party::Node(node), from, Category::Proof, &proof);
        Ok(proof)
    }

    /// One challenge–response–verify round against `node` with `count` blocks.
    pub fn run_audit_round(&mut self, node: usize, count: usize) -> Result<AuditRound, ClusterError> {
        self.check_node(node)?;
        let chal = audit::gen_challenge(&self.tpa.manifest, node, count, &mut self.rng)?;
        let proof_bytes = self.query(Party::Tpa, node, &chal)?;
        let accepted = match Proof::from_bytes(&proof_bytes, &self.params) {
            Ok(proof) => audit::verify_proof_adjusted(
                &self.tpa.mac,
                &self.tpa.manifest,
                node,
                &chal,
                &proof,
                &self.tpa.manifest.deltas,
            )?,
            Err(_) => false,
        };
        self.event("verdict", json!({"node": node + 1, "accepted": accepted}));
        Ok(AuditRound {
            node,
            accepted,
            challenge: chal,
            proof_bytes: proof_bytes.len(),
        })
    }

    pub fn snapshot(&self, node: usize) -> Result<NodeSnapshot, ClusterError> {
        self.check_node(node)?;
        Ok(NodeSnapshot {
            epoch: self.nodes[node].epoch,
            store: self.nodes[node].store.clone(),
        })
    }

    pub fn inject_fault(&mut self, node: usize, fault: FaultDescriptor) -> Result<(), ClusterError> {
        self.check_node(node)?;
        let n = &mut self.nodes[node];
        match &fault {
            FaultDescriptor::CorruptSymbol { block, position, delta } => {
                if *delta == 0 {
                    return Err(ClusterError::InvalidFault("corruption delta must be non-zero".into()));
                }
                let held = n.store.len();
                let entry = n
                    .store
                    .get_mut(*block)
                    .ok_or_else(|| ClusterError::InvalidFault(format!("block {block} of {held} not stored")))?;
                let len = entry.block.symbols().len();
                if *position >= len {
                    return Err(ClusterError::InvalidFault(format!(
                        "position {position} beyond {len} symbols"
                    )));
                }
                entry.block.symbols_mut()[*position] += Gf256(*delta);
            }
            FaultDescriptor::DeleteBlock { index } => {
                if *index >= n.store.len() {
                    return Err(ClusterError::InvalidFault(format!("block {index} not stored")));
                }
                n.store.slots[*index] = None;
            }
            FaultDescriptor::ReplayOld { snapshot } => {
                if snapshot.epoch >= n.epoch {
                    return Err(ClusterError::InvalidFault(
                        "replay snapshot must predate the node's last repair".into(),
                    ));
                }
                n.replay = Some(snapshot.store.clone());
            }
            FaultDescriptor::LieProbability { epsilon } => {
                if !(0.0..=1.0).contains(epsilon) {
                    return Err(ClusterError::InvalidFault(format!("epsilon {epsilon} outside [0, 1]")));
                }
                n.lie = *epsilon;
            }
        }
        let kind = match fault {
            FaultDescriptor::CorruptSymbol { .. } => "corrupt_symbol",
            FaultDescriptor::DeleteBlock { .. } => "delete_block",
            FaultDescriptor::ReplayOld { .. } => "replay_old",
            FaultDescriptor::LieProbability { .. } => "lie_probability",
        };
        self.event("fault", json!({"node": node + 1, "kind": kind}));
        Ok(())
    }

    /// Clears behavioral faults (replay, lying) on a node.
    pub fn clear_faults(&mut self, node: usize) -> Result<(), ClusterError> {
        self.check_node(node)?;
        self.nodes[node].replay = None;
        self.nodes[node].lie = 0.0;
        Ok(())
    }

    /// Drops `node`, rebuilds it from helpers, refreshes both manifests and
    /// audits the new node.
    pub fn fail_and_repair(&mut self, node: usize, mode: RepairMode) -> Result<RepairReport, ClusterError> {
        self.check_node(node)?;
        let user_before = self.ledger.traffic(Party::User, Category::DataBlock);
        let old_len = self.nodes[node].store.len();
        self.nodes[node].store.slots = vec![None; old_len];
        self.nodes[node].replay = None;
        self.nodes[node].lie = 0.0;
        self.event("node_failed", json!({"node": node + 1}));

        let plan = match mode {
            RepairMode::Exact => repair::plan_exact_repair(&self.user.manifest, node)?,
            RepairMode::Functional => repair::plan_functional_repair(&self.user.manifest, node, &mut self.rng)?,
        };
        let ell = self.params.ell;
        let target = Party::Node(node);
        let mut received = Vec::new();
        for (hi, (&h, gamma)) in plan.helpers.iter().zip(&plan.gamma).enumerate() {
            self.send_json("repair_gamma", Party::User, Party::Node(h), gamma);
            let blocks = repair::make_repair_blocks(&self.nodes[h].store, gamma)?;
            for (j, (block, tag)) in blocks.into_iter().enumerate() {
                let msg = RepairMessage {
                    helper: h as u32,
                    j: j as u32,
                    block,
                    tag,
                };
                let bytes = msg.to_bytes();
                self.send("repair_block", Party::Node(h), target, Category::DataBlock, &bytes);
                let msg = RepairMessage::from_bytes(&bytes, ell)?;
                debug_assert_eq!(msg.helper as usize, plan.helpers[hi]);
                received.push((msg.block, msg.tag));
            }
        }
        let aux = self.nodes[plan.helpers[0]].store.aux.clone();
        self.send_json("repair_aux", Party::Node(plan.helpers[0]), target, &aux);
        self.send_json("repair_theta", Party::User, target, &plan.theta);
        let k_e = self.user.keys.encryption_key(Role::Node)?.clone();
        self.send("repair_key", Party::User, target, Category::Control, k_e.as_bytes());

        let rebuilt = repair::reconstruct_node(&received, &plan.theta)?;
        let new_coeffs: Vec<SymbolVector> = rebuilt.iter().map(|(b, _)| b.coeffs()).collect();
        let store = NodeStore {
            slots: rebuilt
                .into_iter()
                .map(|(block, tag)| Some(StoredBlock { block, tag }))
                .collect(),
            aux,
            k_e,
        };
        self.nodes[node].store = store;
        self.nodes[node].epoch += 1;

        self.send(
            "new_coefficients",
            target,
            Party::User,
            Category::Coefficient,
            &coefficient_bytes(std::slice::from_ref(&new_coeffs)),
        );
        repair::refresh_manifest(&mut self.user.manifest, &plan, &new_coeffs)?;
        self.send(
            "new_coefficients",
            Party::User,
            Party::Tpa,
            Category::Coefficient,
            &coefficient_bytes(std::slice::from_ref(&new_coeffs)),
        );
        repair::refresh_manifest(&mut self.tpa.manifest, &plan, &new_coeffs)?;
        self.event(
            "repaired",
            json!({"node": node + 1, "helpers": plan.helpers.iter().map(|h| h + 1).collect::<Vec<_>>(), "mode": format!("{mode:?}")}),
        );

        let user_data_block_bytes = self.ledger.traffic(Party::User, Category::DataBlock) - user_before;
        let count = self.nodes[node].store.len();
        let post = self.run_audit_round(node, count)?;
        Ok(RepairReport {
            plan,
            user_data_block_bytes,
            post_audit_accepted: post.accepted,
        })
    }

    /// Decodes the file from the given nodes' current stores, user-side.
    /// This downloads data and is only meant for tests and operator tooling.
    pub fn decode_from(&self, nodes: &[usize]) -> Result<Vec<u8>, ClusterError> {
        let blocks: Vec<&CodedBlock> = nodes
            .iter()
            .flat_map(|&i| self.nodes[i].store.blocks().flatten())
            .collect();
        Ok(decode_file(&blocks, &self.user.manifest)?)
    }

    /// Checks every stored tag under `k_v`; a test-harness view.
    pub fn node_tags_valid(&self, node: usize) -> Result<bool, ClusterError> {
        let mac = &self.tpa.mac;
        let store = &self.nodes[node].store;
        let deltas = &self.tpa.manifest.deltas;
        for s in store.slots.iter().flatten() {
            let mut tag = s.tag.clone();
            let coeffs = s.block.coeffs();
            for d in deltas {
                if let Some(w) = coeffs.as_slice().get(d.source) {
                    tag.axpy(*w, &d.delta)
                        .map_err(|e| ClusterError::Scenario(e.to_string()))?;
                }
            }
            if !mac
                .verify(&s.block, &tag)
                .map_err(|e| ClusterError::Scenario(e.to_string()))?
            {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// A stable digest of all party state, for determinism checks.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        bytes.extend(self.user.manifest.to_text().into_bytes());
        bytes.extend(self.tpa.manifest.to_text().into_bytes());
        for n in &self.nodes {
            bytes.extend(serde_json::to_vec(&n.store).expect("store serializes"));
        }
        bytes.extend(self.transcript.to_json_lines().into_bytes());
        ledger::digest(&bytes)
    }

    /// An oracle that sends the user's challenges to `node`.
    pub fn oracle(&mut self, node: usize) -> NodeOracle<'_> {
        NodeOracle { cluster: self, node }
    }

    /// Runs the extractor against `node` through the user's audit channel.
    pub fn extract(&mut self, node: usize, repetitions: usize) -> Result<Extraction, ClusterError> {
        self.check_node(node)?;
        let manifest = self.user.manifest.clone();
        let mac = SpaceMac::new(
            self.user.keys.verification_key(Role::User)?,
            &manifest.file_id,
            self.params.ell,
        );
        let k_e = self.user.keys.encryption_key(Role::User)?.clone();
        let aux = self.user.aux.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(self.rng.gen());
        let keys = ExtractorKeys {
            mac: &mac,
            k_e: &k_e,
            aux: &aux,
        };
        let result = extract_node(&mut self.oracle(node), &manifest, node, keys, repetitions, &mut rng);
        self.event(
            "extract",
            json!({"node": node + 1, "repetitions": repetitions, "ok": result.is_ok()}),
        );
        Ok(result?)
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}

/// Routes extractor challenges from the user to one node through the ledger.
pub struct NodeOracle<'a> {
    cluster: &'a mut Cluster,
    node: usize,
}

impl ChallengeOracle for NodeOracle<'_> {
    fn respond(&mut self, chal: &Challenge) -> Option<Proof> {
        let bytes = self.cluster.query(Party::User, self.node, chal).ok()?;
        Proof::from_bytes(&bytes, &self.cluster.params).ok()
    }
}

impl std::fmt::Debug for Cluster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cluster")
            .field("file_id", &self.user.manifest.file_id)
            .field("nodes", &self.nodes.len())
            .field("fingerprint", &self.fingerprint())
            .finish()
    }
}

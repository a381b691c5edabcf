//! A deployment directory: one JSON file per party, so each command reads
//! only what its role may see.
//!
//! ```text
//! manifest.json   coefficients, parameters, update deltas (user and auditor)
//! keys.json       k_v and k_e (user only)
//! tpa.json        k_v (auditor)
//! aux.json        auxiliary elements (user copy)
//! node-<i>.json   blocks, tags, auxiliary elements and k_e of node i
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ncaudit_core::audit::{self, Challenge, KeyMaterial, MissingBlockPolicy, NodeStore, Proof, Role, StoredBlock};
use ncaudit_core::blocks::{CodeLayout, CodedBlock, FileManifest, SystemParams};
use ncaudit_core::cluster::scenario::{run_scenario, Scenario, ScenarioReport};
use ncaudit_core::cluster::LayoutChoice;
use ncaudit_core::extractor::{extract_node, ExtractError, ExtractorKeys};
use ncaudit_core::field::{Gf256, SymbolVector};
use ncaudit_core::ncrypt::AuxiliaryElements;
use ncaudit_core::prf::PrfKey;
use ncaudit_core::repair::{self, RepairMode};
use ncaudit_core::spacemac::SpaceMac;

use crate::CliError;

const MANIFEST: &str = "manifest.json";
const KEYS: &str = "keys.json";
const TPA: &str = "tpa.json";
const AUX: &str = "aux.json";

fn node_file(node: usize) -> String {
    format!("node-{}.json", node + 1)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("state serializes");
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TpaFile {
    k_v: PrfKey,
}

/// Converts a 1-based node number from the command line.
pub fn node_arg(manifest: &FileManifest, node: usize) -> Result<usize, CliError> {
    if node == 0 || node > manifest.node_coeffs.len() {
        return Err(CliError::Usage(format!(
            "node {node} out of range 1..={}",
            manifest.node_coeffs.len()
        )));
    }
    Ok(node - 1)
}

pub struct Deployment {
    pub dir: PathBuf,
}

impl Deployment {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CliError> {
        let dir = dir.into();
        if !dir.join(MANIFEST).is_file() {
            return Err(CliError::Usage(format!(
                "{} is not a deployment directory",
                dir.display()
            )));
        }
        Ok(Deployment { dir })
    }

    pub fn manifest(&self) -> Result<FileManifest, CliError> {
        read_json(&self.dir.join(MANIFEST))
    }

    pub fn save_manifest(&self, m: &FileManifest) -> Result<(), CliError> {
        write_json(&self.dir.join(MANIFEST), m)
    }

    pub fn keys(&self) -> Result<KeyMaterial, CliError> {
        read_json(&self.dir.join(KEYS))
    }

    pub fn tpa_key(&self) -> Result<PrfKey, CliError> {
        Ok(read_json::<TpaFile>(&self.dir.join(TPA))?.k_v)
    }

    pub fn aux(&self) -> Result<AuxiliaryElements, CliError> {
        read_json(&self.dir.join(AUX))
    }

    pub fn node(&self, node: usize) -> Result<NodeStore, CliError> {
        read_json(&self.dir.join(node_file(node)))
    }

    pub fn save_node(&self, node: usize, store: &NodeStore) -> Result<(), CliError> {
        write_json(&self.dir.join(node_file(node)), store)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetupOptions {
    pub file: PathBuf,
    pub m: usize,
    pub n: usize,
    pub nodes: usize,
    pub blocks_per_node: Option<usize>,
    pub helpers: Option<usize>,
    pub repair_blocks: Option<usize>,
    pub layout: LayoutChoice,
    pub ell: usize,
    pub lambda: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl SetupOptions {
    /// Parameters implied by the options. Random layouts default to tolerating
    /// two node failures and to one repair block per helper where possible.
    pub fn params(&self) -> Result<SystemParams, CliError> {
        let params = match self.layout {
            LayoutChoice::Evenodd4 => {
                if self.m != 4 || self.nodes != 4 {
                    return Err(CliError::Usage("the evenodd4 layout needs --m 4 --nodes 4".into()));
                }
                SystemParams {
                    lambda: self.lambda,
                    ..SystemParams::evenodd4(self.n, self.ell)
                }
            }
            LayoutChoice::RandomFunctional => {
                let blocks = self
                    .blocks_per_node
                    .unwrap_or_else(|| self.m.div_ceil(self.nodes.saturating_sub(2).max(1)));
                let helpers = self.helpers.unwrap_or(self.nodes.saturating_sub(1).max(1));
                SystemParams {
                    m: self.m,
                    nodes: self.nodes,
                    blocks_per_node: blocks,
                    helpers,
                    repair_blocks: self.repair_blocks.unwrap_or(blocks.div_ceil(helpers)),
                    lambda: self.lambda,
                    ..SystemParams::evenodd4(self.n, self.ell)
                }
            }
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetupSummary {
    pub file_id: String,
    pub file_len: u64,
    pub params: SystemParams,
    pub files: Vec<String>,
}

/// Encodes a file, tags it and writes a deployment directory.
pub fn setup(opts: &SetupOptions) -> Result<SetupSummary, CliError> {
    let params = opts.params()?;
    let data = fs::read(&opts.file).map_err(|source| CliError::Io {
        path: opts.file.clone(),
        source,
    })?;
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let layout = match opts.layout {
        LayoutChoice::Evenodd4 => CodeLayout::evenodd4(),
        LayoutChoice::RandomFunctional => CodeLayout::random_functional(&params, &mut rng)?,
    };
    let file_id = opts
        .file
        .file_name()
        .map_or_else(|| "file".to_owned(), |s| s.to_string_lossy().into_owned());
    let keys = audit::keygen(&params, &mut rng)?;
    let setup = audit::setup_file(&data, &file_id, &params, &keys, &layout, &mut rng)?;

    fs::create_dir_all(&opts.out).map_err(|source| CliError::Io {
        path: opts.out.clone(),
        source,
    })?;
    let dep = Deployment { dir: opts.out.clone() };
    dep.save_manifest(&setup.manifest)?;
    write_json(&dep.dir.join(KEYS), &keys)?;
    write_json(
        &dep.dir.join(TPA),
        &TpaFile {
            k_v: keys.verification_key(Role::Tpa)?.clone(),
        },
    )?;
    write_json(&dep.dir.join(AUX), &setup.aux)?;
    let mut files = vec![MANIFEST.to_owned(), KEYS.to_owned(), TPA.to_owned(), AUX.to_owned()];
    for (i, store) in setup.nodes.iter().enumerate() {
        dep.save_node(i, store)?;
        files.push(node_file(i));
    }
    Ok(SetupSummary {
        file_id,
        file_len: setup.manifest.file_len,
        params,
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub node: usize,
    pub accepted: bool,
    pub prove_ms: f64,
    pub verify_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub node: usize,
    pub count: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub rounds: Vec<RoundRecord>,
}

/// Default challenge size: 300 blocks, or every block when the node holds fewer.
pub const DEFAULT_CHALLENGE: usize = 300;

/// Audits one node for `rounds` rounds. Challenges and proofs cross the
/// wire encoding in both directions.
pub fn audit_node(
    dep: &Deployment,
    node: usize,
    count: Option<usize>,
    rounds: usize,
    seed: u64,
) -> Result<AuditSummary, CliError> {
    let manifest = dep.manifest()?;
    let idx = node_arg(&manifest, node)?;
    let held = manifest.blocks_at(idx);
    let count = count.unwrap_or(DEFAULT_CHALLENGE.min(held));
    if count == 0 || count > held {
        return Err(CliError::Usage(format!("--count must be in 1..={held}")));
    }
    let mac = SpaceMac::new(&dep.tpa_key()?, &manifest.file_id, manifest.params.ell);
    let store = dep.node(idx)?;
    let mut tpa_rng = ChaCha20Rng::seed_from_u64(seed);
    let mut node_rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
    let mut summary = AuditSummary {
        node,
        count,
        accepted: 0,
        rejected: 0,
        rounds: Vec::with_capacity(rounds),
    };
    for round in 1..=rounds {
        let chal = audit::gen_challenge(&manifest, idx, count, &mut tpa_rng)?;
        let start = Instant::now();
        let received = Challenge::from_bytes(&chal.to_bytes())?;
        let proof = audit::gen_proof(&store, &received, MissingBlockPolicy::SubstituteRandom, &mut node_rng)?;
        let bytes = proof.to_bytes();
        let prove_ms = start.elapsed().as_secs_f64() * 1e3;
        let start = Instant::now();
        let accepted = match Proof::from_bytes(&bytes, &manifest.params) {
            Ok(p) => audit::verify_proof_adjusted(&mac, &manifest, idx, &chal, &p, &manifest.deltas)?,
            Err(_) => false,
        };
        let verify_ms = start.elapsed().as_secs_f64() * 1e3;
        if accepted {
            summary.accepted += 1;
        } else {
            summary.rejected += 1;
        }
        summary.rounds.push(RoundRecord {
            round,
            node,
            accepted,
            prove_ms,
            verify_ms,
        });
    }
    Ok(summary)
}

/// Damages node state on disk: adds `delta` to one symbol, or drops the block.
/// `node` and `block` count from 1; `position` is a symbol offset from 0.
pub fn corrupt(
    dep: &Deployment,
    node: usize,
    block: usize,
    position: usize,
    delta: u8,
    delete: bool,
) -> Result<(), CliError> {
    let manifest = dep.manifest()?;
    let idx = node_arg(&manifest, node)?;
    let mut store = dep.node(idx)?;
    if block == 0 || block > store.len() {
        return Err(CliError::Usage(format!(
            "block {block} out of range 1..={}",
            store.len()
        )));
    }
    if delete {
        store.slots[block - 1] = None;
    } else {
        if delta == 0 {
            return Err(CliError::Usage("--delta must be nonzero".into()));
        }
        let entry = store.slots[block - 1]
            .as_mut()
            .ok_or_else(|| CliError::Usage(format!("block {block} is already missing")))?;
        let symbols = entry.block.symbols_mut();
        if position >= symbols.len() {
            return Err(CliError::Usage(format!(
                "position {position} out of range 0..{}",
                symbols.len()
            )));
        }
        symbols[position] += Gf256(delta);
    }
    dep.save_node(idx, &store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairSummary {
    pub node: usize,
    pub mode: RepairMode,
    pub helpers: Vec<usize>,
    /// Bytes of repair blocks and tags sent by helpers to the new node.
    pub helper_bytes: usize,
    /// Data-block bytes the user sent or received during repair.
    pub user_data_block_bytes: usize,
    pub post_audit_accepted: bool,
}

/// Rebuilds `node` from helper nodes and refreshes the manifest.
pub fn repair_node(dep: &Deployment, node: usize, mode: RepairMode, seed: u64) -> Result<RepairSummary, CliError> {
    let mut manifest = dep.manifest()?;
    let idx = node_arg(&manifest, node)?;
    let keys = dep.keys()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let plan = match mode {
        RepairMode::Exact => repair::plan_exact_repair(&manifest, idx)?,
        RepairMode::Functional => repair::plan_functional_repair(&manifest, idx, &mut rng)?,
    };
    let mut received = Vec::new();
    let mut helper_bytes = 0;
    let mut aux = None;
    for (&h, gamma) in plan.helpers.iter().zip(&plan.gamma) {
        let store = dep.node(h)?;
        for (j, (block, tag)) in repair::make_repair_blocks(&store, gamma)?.into_iter().enumerate() {
            let msg = repair::RepairMessage {
                helper: h as u32,
                j: j as u32,
                block,
                tag,
            };
            let bytes = msg.to_bytes();
            helper_bytes += bytes.len();
            let msg = repair::RepairMessage::from_bytes(&bytes, manifest.params.ell)?;
            received.push((msg.block, msg.tag));
        }
        aux.get_or_insert(store.aux);
    }
    let rebuilt = repair::reconstruct_node(&received, &plan.theta)?;
    let new_coeffs: Vec<SymbolVector> = rebuilt.iter().map(|(b, _)| b.coeffs()).collect();
    let store = NodeStore {
        slots: rebuilt
            .into_iter()
            .map(|(block, tag)| Some(StoredBlock { block, tag }))
            .collect(),
        aux: aux.unwrap_or(dep.aux()?),
        k_e: keys.encryption_key(Role::Node)?.clone(),
    };
    dep.save_node(idx, &store)?;
    repair::refresh_manifest(&mut manifest, &plan, &new_coeffs)?;
    dep.save_manifest(&manifest)?;

    let post = audit_node(dep, node, None, 1, rng.gen())?;
    Ok(RepairSummary {
        node,
        mode,
        helpers: plan.helpers.iter().map(|h| h + 1).collect(),
        helper_bytes,
        user_data_block_bytes: 0,
        post_audit_accepted: post.rejected == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub node: usize,
    pub ok: bool,
    pub error: Option<String>,
    pub blocks: usize,
    pub queries: usize,
    pub equations_failed: usize,
    /// Whether the recovered blocks equal the node's file (operator check).
    pub matches_stored: Option<bool>,
}

/// Runs the extractor against a node that lies with probability `lie`.
/// Recovered blocks are written to `out` when given.
pub fn extract(
    dep: &Deployment,
    node: usize,
    repetitions: usize,
    lie: f64,
    seed: u64,
    out: Option<&Path>,
) -> Result<ExtractSummary, CliError> {
    if !(0.0..=1.0).contains(&lie) {
        return Err(CliError::Usage(format!("--lie {lie} outside [0, 1]")));
    }
    let manifest = dep.manifest()?;
    let idx = node_arg(&manifest, node)?;
    let keys = dep.keys()?;
    let aux = dep.aux()?;
    let mac = SpaceMac::new(
        keys.verification_key(Role::User)?,
        &manifest.file_id,
        manifest.params.ell,
    );
    let store = dep.node(idx)?;
    let params = manifest.params;
    let mut node_rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
    let mut oracle = |chal: &Challenge| -> Option<Proof> {
        let bytes = if node_rng.gen_bool(lie) {
            (0..Proof::wire_len(&params)).map(|_| node_rng.gen()).collect()
        } else {
            audit::gen_proof(&store, chal, MissingBlockPolicy::SubstituteRandom, &mut node_rng)
                .ok()?
                .to_bytes()
        };
        Proof::from_bytes(&bytes, &params).ok()
    };
    let ekeys = ExtractorKeys {
        mac: &mac,
        k_e: keys.encryption_key(Role::User)?,
        aux: &aux,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    match extract_node(&mut oracle, &manifest, idx, ekeys, repetitions, &mut rng) {
        Ok(x) => {
            if let Some(path) = out {
                write_json(path, &x.blocks)?;
            }
            let stored: Vec<Option<&CodedBlock>> = store.blocks().collect();
            let matches = stored.len() == x.blocks.len() && stored.iter().zip(&x.blocks).all(|(s, b)| *s == Some(b));
            Ok(ExtractSummary {
                node,
                ok: true,
                error: None,
                blocks: x.blocks.len(),
                queries: x.queries,
                equations_failed: x.equations_failed,
                matches_stored: Some(matches),
            })
        }
        Err(e @ (ExtractError::NoMajority { .. } | ExtractError::FreshAuditMismatch | ExtractError::RankCollapse)) => {
            Ok(ExtractSummary {
                node,
                ok: false,
                error: Some(e.to_string()),
                blocks: 0,
                queries: 0,
                equations_failed: 0,
                matches_stored: None,
            })
        }
        Err(ExtractError::NoRepetitions) => Err(CliError::Usage("--repetitions must be at least 1".into())),
        Err(e) => Err(e.into()),
    }
}

/// Runs a scenario file; writes the transcript as JSON lines when asked.
pub fn simulate(path: &Path, transcript: Option<&Path>) -> Result<ScenarioReport, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    let scenario = Scenario::from_toml(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    let (report, cluster) = run_scenario(&scenario)?;
    if let Some(t) = transcript {
        fs::write(t, cluster.transcript().to_json_lines()).map_err(|source| CliError::Io { path: t.into(), source })?;
    }
    Ok(report)
}

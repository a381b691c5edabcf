//! Appending, updating, inserting and deleting source blocks after setup.
//!
//! Appends extend every coefficient vector by one coordinate; tags of blocks
//! that do not involve the new source are unchanged because the extra
//! coordinate is zero. Updates leave node tags alone: the auditor instead
//! keeps a running tag difference per source block and folds it into
//! verification. Neither operation makes the user download a data block.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::audit::{self, AuditError, Challenge, Proof, Role, StoredBlock};
use crate::blocks::{subsets_of_size, BlockError, CodedBlock, FileManifest};
use crate::cluster::{coefficient_bytes, Category, Cluster, Party};
use crate::field::{linalg, Gf256, SymbolVector};
use crate::spacemac::{combine_tag_list, MacError, SpaceMac, TagVector};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("placement lists {got} nodes, cluster has {nodes}")]
    PlacementNodes { got: usize, nodes: usize },
    #[error("placement row for node {node} has width {got}, expected {expected}")]
    PlacementWidth { node: usize, got: usize, expected: usize },
    #[error("node {0} cannot assemble its placement from the other nodes' blocks")]
    PlacementUnreachable(usize),
    #[error("payload of {len} bytes exceeds the {cap}-byte block payload")]
    PayloadTooLarge { len: usize, cap: usize },
    #[error("source block {0} does not exist")]
    UnknownSource(usize),
    #[error("source block {0} has been deleted")]
    Deleted(usize),
    #[error("logical position {pos} outside 0..={len}")]
    PositionOutOfRange { pos: usize, len: usize },
    #[error("logical position {0} is already deleted")]
    AlreadyDeleted(usize),
    #[error("no set of stored blocks expresses source block {0}")]
    NotExpressible(usize),
    #[error("node {node} is missing block {block}")]
    MissingBlock { node: usize, block: usize },
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

/// A logical position in the file and the source block stored there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingSlot {
    pub physical: u32,
    #[serde(default)]
    pub deleted: bool,
}

/// Logical block order over physical source indices. Deleted positions stay
/// in place as tombstones so positions are stable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMapping {
    slots: Vec<MappingSlot>,
}

impl IndexMapping {
    pub fn identity(m: usize) -> Self {
        IndexMapping {
            slots: (0..m as u32)
                .map(|physical| MappingSlot {
                    physical,
                    deleted: false,
                })
                .collect(),
        }
    }

    /// Number of logical positions, tombstones included.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, pos: usize) -> Option<MappingSlot> {
        self.slots.get(pos).copied()
    }

    /// Physical indices of live positions, in logical order.
    pub fn live(&self) -> impl Iterator<Item = u32> + '_ {
        self.slots.iter().filter(|s| !s.deleted).map(|s| s.physical)
    }

    pub fn is_physical_deleted(&self, physical: usize) -> bool {
        self.slots.iter().any(|s| s.deleted && s.physical as usize == physical)
    }

    pub fn insert(&mut self, pos: usize, physical: u32) -> Result<(), DynamicsError> {
        if pos > self.slots.len() {
            return Err(DynamicsError::PositionOutOfRange {
                pos,
                len: self.slots.len(),
            });
        }
        self.slots.insert(
            pos,
            MappingSlot {
                physical,
                deleted: false,
            },
        );
        Ok(())
    }

    pub fn push(&mut self, physical: u32) {
        self.slots.push(MappingSlot {
            physical,
            deleted: false,
        });
    }

    /// Marks `pos` deleted and returns its physical index.
    pub fn tombstone(&mut self, pos: usize) -> Result<u32, DynamicsError> {
        let len = self.slots.len();
        let slot = self
            .slots
            .get_mut(pos)
            .ok_or(DynamicsError::PositionOutOfRange { pos, len })?;
        if slot.deleted {
            return Err(DynamicsError::AlreadyDeleted(pos));
        }
        slot.deleted = true;
        Ok(slot.physical)
    }

    fn remove_physical(&mut self, physical: u32) {
        self.slots.retain(|s| s.physical != physical);
    }
}

/// The running tag difference for one source block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateDelta {
    pub source: usize,
    pub delta: TagVector,
}

/// Adds `delta` into the log entry for its source (creating it if needed).
pub fn record_delta(log: &mut Vec<UpdateDelta>, delta: &UpdateDelta) -> Result<(), DynamicsError> {
    match log.iter_mut().find(|d| d.source == delta.source) {
        Some(d) => d.delta = d.delta.plus(&delta.delta)?,
        None => log.push(delta.clone()),
    }
    Ok(())
}

/// The adjusted verification: stored tags plus `Σ_j aug(e)_j δ_j`.
pub fn verify_with_deltas(
    mac: &SpaceMac,
    manifest: &FileManifest,
    deltas: &[UpdateDelta],
    node: usize,
    chal: &Challenge,
    proof: &Proof,
) -> Result<bool, DynamicsError> {
    Ok(audit::verify_proof_adjusted(mac, manifest, node, chal, proof, deltas)?)
}

/// Coefficient rows (over `m + 1` sources) each node should hold after an append.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppendPlacement {
    pub rows: Vec<Vec<SymbolVector>>,
}

impl AppendPlacement {
    /// Existing rows extended with a zero; the new block is stored nowhere.
    pub fn untouched(manifest: &FileManifest) -> Self {
        AppendPlacement {
            rows: manifest
                .node_coeffs
                .iter()
                .map(|rows| rows.iter().map(extend_zero).collect())
                .collect(),
        }
    }

    /// Every node keeps its blocks and also stores the new block.
    pub fn replicate(manifest: &FileManifest) -> Self {
        let width = width_of(manifest) + 1;
        let mut p = Self::untouched(manifest);
        for rows in &mut p.rows {
            rows.push(SymbolVector::unit(width, width - 1));
        }
        p
    }

    /// The four-node EVENODD layout extended by a fifth source:
    /// `b1, b2 | b3, b4, b5 | b1+b3, b2+b4, b5 | b3, b1+b4, b2+b5`.
    pub fn evenodd4_fifth_block() -> Self {
        let r = |bits: [u8; 5]| SymbolVector::from_bytes(&bits);
        AppendPlacement {
            rows: vec![
                vec![r([1, 0, 0, 0, 0]), r([0, 1, 0, 0, 0])],
                vec![r([0, 0, 1, 0, 0]), r([0, 0, 0, 1, 0]), r([0, 0, 0, 0, 1])],
                vec![r([1, 0, 1, 0, 0]), r([0, 1, 0, 1, 0]), r([0, 0, 0, 0, 1])],
                vec![r([0, 0, 1, 0, 0]), r([1, 0, 0, 1, 0]), r([0, 1, 0, 0, 1])],
            ],
        }
    }
}

fn extend_zero(v: &SymbolVector) -> SymbolVector {
    let mut v = v.clone();
    v.extend_zeros(1);
    v
}

fn width_of(manifest: &FileManifest) -> usize {
    manifest
        .node_coeffs
        .iter()
        .flatten()
        .next()
        .map_or(manifest.params.m, |r| r.len())
}

/// What an append produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppendReport {
    /// Physical index of the new source block.
    pub source: usize,
    pub tag: TagVector,
    /// For each node, the nodes it fetched blocks from.
    pub fetched_from: Vec<Vec<usize>>,
}

fn user_mac(cluster: &Cluster) -> Result<SpaceMac, DynamicsError> {
    let k_v = cluster.user.keys.verification_key(Role::User)?;
    Ok(SpaceMac::new(k_v, &cluster.user.manifest.file_id, cluster.params.ell))
}

fn new_source_block(
    cluster: &mut Cluster,
    payload: &[u8],
    index: usize,
    width: usize,
) -> Result<CodedBlock, DynamicsError> {
    let cap = cluster.params.payload_len();
    if payload.len() > cap {
        return Err(DynamicsError::PayloadTooLarge {
            len: payload.len(),
            cap,
        });
    }
    let mut data = SymbolVector::from_bytes(payload).into_inner();
    data.resize(cap, Gf256::ZERO);
    let padding = [Gf256(cluster.rng.gen()), Gf256(cluster.rng.gen())];
    Ok(CodedBlock::source(&data, padding, index, width))
}

fn complete_slots(cluster: &Cluster, node: usize) -> Result<Vec<&StoredBlock>, DynamicsError> {
    cluster.nodes[node]
        .store
        .slots
        .iter()
        .enumerate()
        .map(|(b, s)| s.as_ref().ok_or(DynamicsError::MissingBlock { node, block: b }))
        .collect()
}

fn block_message(entries: &[StoredBlock]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in entries {
        out.extend(e.block.to_bytes());
        out.extend(e.tag.to_bytes());
    }
    out
}

/// Appends a new source block holding `payload` and reshapes node contents to
/// `placement`. Nodes assemble new blocks from their own blocks, blocks
/// fetched from other nodes, and the new block sent by the user.
pub fn append_block(
    cluster: &mut Cluster,
    payload: &[u8],
    placement: &AppendPlacement,
) -> Result<AppendReport, DynamicsError> {
    let nodes = cluster.nodes.len();
    if placement.rows.len() != nodes {
        return Err(DynamicsError::PlacementNodes {
            got: placement.rows.len(),
            nodes,
        });
    }
    let m = width_of(&cluster.user.manifest);
    for (node, rows) in placement.rows.iter().enumerate() {
        if let Some(r) = rows.iter().find(|r| r.len() != m + 1) {
            return Err(DynamicsError::PlacementWidth {
                node,
                got: r.len(),
                expected: m + 1,
            });
        }
    }

    let b_star = new_source_block(cluster, payload, m, m + 1)?;
    let t_star = user_mac(cluster)?.mac(&b_star)?;
    let star_entry = StoredBlock {
        block: b_star.clone(),
        tag: t_star.clone(),
    };

    // Work out, per node, which other nodes must send their blocks.
    let mut fetch_plan = Vec::with_capacity(nodes);
    for (node, targets) in placement.rows.iter().enumerate() {
        let old = &cluster.user.manifest.node_coeffs[node];
        let changed = targets.len() != old.len() || targets.iter().zip(old).any(|(t, o)| *t != extend_zero(o));
        if !changed {
            fetch_plan.push(None);
            continue;
        }
        let old_parts: Vec<SymbolVector> = targets
            .iter()
            .map(|t| t.as_slice()[..m].iter().copied().collect())
            .collect();
        let mut avail = old.clone();
        let mut sources = Vec::new();
        for other in (0..nodes).filter(|&o| o != node) {
            if linalg::spans(&avail, &old_parts) || avail.is_empty() && old_parts.iter().all(|p| p.is_zero()) {
                break;
            }
            let theirs = &cluster.user.manifest.node_coeffs[other];
            let mut grown = avail.clone();
            grown.extend(theirs.iter().cloned());
            if linalg::rank(&grown) > linalg::rank(&avail) {
                avail = grown;
                sources.push(other);
            }
        }
        let covered = old_parts.iter().all(|p| p.is_zero()) || linalg::spans(&avail, &old_parts);
        if !covered {
            return Err(DynamicsError::PlacementUnreachable(node));
        }
        fetch_plan.push(Some(sources));
    }

    let mut new_stores = Vec::with_capacity(nodes);
    let mut fetched_from = Vec::with_capacity(nodes);
    for (node, plan) in fetch_plan.iter().enumerate() {
        let targets = &placement.rows[node];
        cluster.send_json(
            "append_instruction",
            Party::User,
            Party::Node(node),
            &json!({"rows": targets}),
        );
        let Some(sources) = plan else {
            let mut slots = cluster.nodes[node].store.slots.clone();
            for s in slots.iter_mut().flatten() {
                s.block.extend_coeffs(1);
            }
            new_stores.push(slots);
            fetched_from.push(Vec::new());
            continue;
        };
        let mut avail: Vec<StoredBlock> = complete_slots(cluster, node)?.into_iter().cloned().collect();
        for &other in sources {
            let theirs: Vec<StoredBlock> = complete_slots(cluster, other)?.into_iter().cloned().collect();
            cluster.send(
                "append_fetch",
                Party::Node(other),
                Party::Node(node),
                Category::DataBlock,
                &block_message(&theirs),
            );
            avail.extend(theirs);
        }
        if targets.iter().any(|t| !t[m].is_zero()) {
            cluster.send(
                "append_block",
                Party::User,
                Party::Node(node),
                Category::DataBlock,
                &b_star.to_bytes(),
            );
            cluster.send(
                "append_tag",
                Party::User,
                Party::Node(node),
                Category::Tag,
                &t_star.to_bytes(),
            );
        }
        for e in &mut avail {
            e.block.extend_coeffs(1);
        }
        let avail_rows: Vec<SymbolVector> = avail.iter().map(|e| e.block.coeffs()).collect();
        let old_rows = &cluster.user.manifest.node_coeffs[node];
        let mut slots = Vec::with_capacity(targets.len());
        for (k, target) in targets.iter().enumerate() {
            // Untouched rows keep their block and tag as they are.
            if let Some(pos) = old_rows.iter().position(|o| extend_zero(o) == *target) {
                if k < old_rows.len() || pos < avail.len() {
                    slots.push(Some(avail[pos].clone()));
                    continue;
                }
            }
            let mut old_part = target.clone();
            old_part[m] = Gf256::ZERO;
            let weights = if old_part.is_zero() {
                SymbolVector::zeros(avail.len())
            } else {
                linalg::express_in_rows(&avail_rows, &old_part).ok_or(DynamicsError::PlacementUnreachable(node))?
            };
            let mut entries: Vec<&StoredBlock> = avail.iter().collect();
            let mut alphas = weights.into_inner();
            entries.push(&star_entry);
            alphas.push(target[m]);
            let blocks: Vec<&CodedBlock> = entries.iter().map(|e| &e.block).collect();
            let tags: Vec<&TagVector> = entries.iter().map(|e| &e.tag).collect();
            let block = crate::blocks::combine_blocks(&blocks, &alphas)?;
            let tag = combine_tag_list(&tags, &alphas)?;
            slots.push(Some(StoredBlock { block, tag }));
        }
        new_stores.push(slots);
        fetched_from.push(sources.clone());
    }
    for (node, slots) in new_stores.into_iter().enumerate() {
        cluster.nodes[node].store.slots = slots;
    }

    let cap = cluster.params.payload_len();
    for manifest in [&mut cluster.user.manifest, &mut cluster.tpa.manifest] {
        manifest.node_coeffs = placement.rows.clone();
        manifest.params.m = m + 1;
        manifest.payload_lens.push(payload.len().min(cap) as u32);
        manifest.mapping.push(m as u32);
        manifest.file_len += payload.len() as u64;
    }
    cluster.params.m = m + 1;
    let coeffs = coefficient_bytes(&placement.rows);
    cluster.send(
        "append_coefficients",
        Party::User,
        Party::Tpa,
        Category::Coefficient,
        &coeffs,
    );
    cluster.event("append", json!({"source": m + 1}));
    Ok(AppendReport {
        source: m,
        tag: t_star,
        fetched_from,
    })
}

/// Lexicographically first set of nodes whose blocks express source `j`,
/// with the weights on each (node, block) pair.
fn expressing_set(manifest: &FileManifest, j: usize) -> Option<Vec<(usize, usize, Gf256)>> {
    let width = width_of(manifest);
    let target = SymbolVector::unit(width, j);
    let nodes = manifest.node_coeffs.len();
    for size in 1..=nodes {
        for set in subsets_of_size(nodes, size) {
            let index: Vec<(usize, usize)> = set
                .iter()
                .flat_map(|&n| (0..manifest.node_coeffs[n].len()).map(move |b| (n, b)))
                .collect();
            let rows: Vec<SymbolVector> = index.iter().map(|&(n, b)| manifest.node_coeffs[n][b].clone()).collect();
            if let Some(w) = linalg::express_in_rows(&rows, &target) {
                return Some(
                    index
                        .into_iter()
                        .zip(w.iter())
                        .filter(|(_, w)| !w.is_zero())
                        .map(|((n, b), w)| (n, b, *w))
                        .collect(),
                );
            }
        }
    }
    None
}

/// Replaces source block `j` with `payload`. `stale` lists nodes that ignore
/// the data patch (for fault experiments); pass `&[]` normally.
pub fn update_block_with(
    cluster: &mut Cluster,
    j: usize,
    payload: &[u8],
    stale: &[usize],
) -> Result<UpdateDelta, DynamicsError> {
    let width = width_of(&cluster.user.manifest);
    if j >= width {
        return Err(DynamicsError::UnknownSource(j));
    }
    if cluster.user.manifest.mapping.is_physical_deleted(j) {
        return Err(DynamicsError::Deleted(j));
    }
    let set = expressing_set(&cluster.user.manifest, j).ok_or(DynamicsError::NotExpressible(j))?;

    // The user learns t_{b_j} from tags alone.
    let mut tag_bj = TagVector::zeros(cluster.params.ell);
    for &(n, b, w) in &set {
        let stored = cluster.nodes[n]
            .store
            .get(b)
            .ok_or(DynamicsError::MissingBlock { node: n, block: b })?
            .tag
            .clone();
        cluster.send(
            "update_tag_download",
            Party::Node(n),
            Party::User,
            Category::Tag,
            &stored.to_bytes(),
        );
        tag_bj.axpy(w, &stored)?;
    }
    if let Some(d) = cluster.user.manifest.deltas.iter().find(|d| d.source == j) {
        tag_bj = tag_bj.plus(&d.delta)?;
    }
    let new_block = new_source_block(cluster, payload, j, width)?;
    let new_tag = user_mac(cluster)?.mac(&new_block)?;
    let delta = UpdateDelta {
        source: j,
        delta: new_tag.plus(&tag_bj)?,
    };

    // A coordinator node rebuilds the old b_j from its peers' blocks.
    let coordinator = set[0].0;
    cluster.send_json(
        "update_weights",
        Party::User,
        Party::Node(coordinator),
        &set.iter().map(|&(n, b, w)| (n, b, w.0)).collect::<Vec<_>>(),
    );
    let mut old_data = SymbolVector::zeros(cluster.params.n);
    for &(n, b, w) in &set {
        let entry = cluster.nodes[n]
            .store
            .get(b)
            .ok_or(DynamicsError::MissingBlock { node: n, block: b })?
            .clone();
        if n != coordinator {
            let mut msg = entry.block.to_bytes();
            msg.extend(entry.tag.to_bytes());
            cluster.send(
                "update_fetch",
                Party::Node(n),
                Party::Node(coordinator),
                Category::DataBlock,
                &msg,
            );
        }
        crate::field::axpy(old_data.as_mut_slice(), w, entry.block.data());
    }

    let affected: Vec<usize> = (0..cluster.nodes.len())
        .filter(|&n| cluster.user.manifest.node_coeffs[n].iter().any(|r| !r[j].is_zero()))
        .collect();
    let mut diff: SymbolVector = new_block.data().iter().copied().collect();
    diff.add_assign(&old_data).expect("both n symbols");
    for &n in &affected {
        cluster.send(
            "update_block",
            Party::User,
            Party::Node(n),
            Category::DataBlock,
            &new_block.to_bytes(),
        );
        if n != coordinator {
            cluster.send(
                "update_old_block",
                Party::Node(coordinator),
                Party::Node(n),
                Category::DataBlock,
                &old_data.to_bytes(),
            );
        }
        if stale.contains(&n) {
            continue;
        }
        for s in cluster.nodes[n].store.slots.iter_mut().flatten() {
            let c = s.block.coeffs()[j];
            if !c.is_zero() {
                crate::field::axpy(s.block.data_mut(), c, diff.as_slice());
            }
        }
    }

    let mut msg = (j as u32).to_be_bytes().to_vec();
    msg.extend(delta.delta.to_bytes());
    cluster.send("update_delta", Party::User, Party::Tpa, Category::Tag, &msg);
    record_delta(&mut cluster.user.manifest.deltas, &delta)?;
    record_delta(&mut cluster.tpa.manifest.deltas, &delta)?;
    let cap = cluster.params.payload_len();
    cluster.user.manifest.payload_lens[j] = payload.len().min(cap) as u32;
    cluster.event(
        "update",
        json!({"source": j + 1, "nodes": affected.iter().map(|n| n + 1).collect::<Vec<_>>()}),
    );
    Ok(delta)
}

pub fn update_block(cluster: &mut Cluster, j: usize, payload: &[u8]) -> Result<UpdateDelta, DynamicsError> {
    update_block_with(cluster, j, payload, &[])
}

/// Appends `payload` (replicated to every node) and maps it to `logical_pos`.
pub fn insert_block(cluster: &mut Cluster, logical_pos: usize, payload: &[u8]) -> Result<AppendReport, DynamicsError> {
    let len = cluster.user.manifest.mapping.len();
    if logical_pos > len {
        return Err(DynamicsError::PositionOutOfRange { pos: logical_pos, len });
    }
    let placement = AppendPlacement::replicate(&cluster.user.manifest);
    let report = append_block(cluster, payload, &placement)?;
    let mapping = &mut cluster.user.manifest.mapping;
    mapping.remove_physical(report.source as u32);
    mapping.insert(logical_pos, report.source as u32)?;
    Ok(report)
}

/// Overwrites the block at `logical_pos` with zero data and tombstones it.
pub fn delete_block(cluster: &mut Cluster, logical_pos: usize) -> Result<UpdateDelta, DynamicsError> {
    let mapping = &cluster.user.manifest.mapping;
    let slot = mapping.slot(logical_pos).ok_or(DynamicsError::PositionOutOfRange {
        pos: logical_pos,
        len: mapping.len(),
    })?;
    if slot.deleted {
        return Err(DynamicsError::AlreadyDeleted(logical_pos));
    }
    let delta = update_block(cluster, slot.physical as usize, &[])?;
    cluster.user.manifest.mapping.tombstone(logical_pos)?;
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_insert_and_tombstone() {
        let mut m = IndexMapping::identity(3);
        m.insert(0, 3).unwrap();
        assert_eq!(m.live().collect::<Vec<_>>(), vec![3, 0, 1, 2]);
        assert_eq!(m.tombstone(2).unwrap(), 1);
        assert!(matches!(m.tombstone(2), Err(DynamicsError::AlreadyDeleted(2))));
        assert_eq!(m.live().collect::<Vec<_>>(), vec![3, 0, 2]);
        assert!(m.is_physical_deleted(1));
        assert!(m.insert(9, 4).is_err());
    }

    #[test]
    fn deltas_accumulate() {
        let mut log = Vec::new();
        let a = UpdateDelta {
            source: 2,
            delta: TagVector::from_bytes(&[1, 2]),
        };
        let b = UpdateDelta {
            source: 2,
            delta: TagVector::from_bytes(&[3, 2]),
        };
        record_delta(&mut log, &a).unwrap();
        record_delta(&mut log, &b).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].delta.to_bytes(), vec![2, 0]);
    }

    #[test]
    fn fifth_block_placement_shape() {
        let p = AppendPlacement::evenodd4_fifth_block();
        assert_eq!(p.rows.iter().map(|r| r.len()).collect::<Vec<_>>(), vec![2, 3, 3, 3]);
        let all: Vec<SymbolVector> = p.rows.iter().flatten().cloned().collect();
        assert_eq!(linalg::rank(&all), 5);
        for pair in subsets_of_size(4, 2) {
            let rows: Vec<SymbolVector> = pair.iter().flat_map(|&i| p.rows[i].iter().cloned()).collect();
            assert_eq!(linalg::rank(&rows), 5, "pair {pair:?}");
        }
    }
}

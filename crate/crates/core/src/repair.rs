//! Rebuilding a failed node from helper nodes.
//!
//! The user plans the repair from the manifest's coefficients alone: each
//! helper `i` sends `Q` repair blocks `g_{i,j} = Σ_k γ_{i,j,k} e_{i,k}`, and
//! the new node forms `h_k = Σ_{i,j} θ_{i,j,k} g_{i,j}`. Tags follow the same
//! combinations, so nobody but the user and auditor ever touches `k_v`, and
//! the user never downloads a data block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{NodeStore, StoredBlock};
use crate::blocks::{combine_blocks, subsets_of_size, BlockError, CodedBlock, FileManifest};
use crate::field::linalg;
use crate::field::SymbolVector;
use crate::spacemac::{combine_tag_list, MacError, TagVector};
use crate::wire::{put_u32, Reader, WireError};

/// Random draws tried per helper set when searching for an exact plan.
const EXACT_SEARCH_DRAWS: usize = 64;
/// Random draws for a functional plan before giving up.
pub const FUNCTIONAL_MAX_DRAWS: usize = 64;
/// Above this many nodes the functional reliability check only tests global rank.
const SUBSET_CHECK_MAX_NODES: usize = 12;

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("need {needed} helpers but only {available} other nodes exist")]
    NotEnoughHelpers { needed: usize, available: usize },
    #[error("no choice of {helpers} helpers sending {per_helper} blocks each can rebuild node {node}")]
    Unsatisfiable {
        node: usize,
        helpers: usize,
        per_helper: usize,
    },
    #[error("could not preserve decodability after {0} draws")]
    ReliabilityLost(usize),
    #[error("helper store is missing block {0}")]
    IncompleteStore(usize),
    #[error("plan dimensions do not match: {0}")]
    Dimension(String),
    #[error("new coefficients differ from the plan's prediction for block {0}")]
    CoefficientMismatch(usize),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairMode {
    Exact,
    Functional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairPlan {
    pub failed_node: usize,
    pub helpers: Vec<usize>,
    /// `gamma[i][j]` has one weight per block held by `helpers[i]`.
    pub gamma: Vec<Vec<SymbolVector>>,
    /// `theta[k]` has `P·Q` weights, helper-major.
    pub theta: Vec<SymbolVector>,
    pub expected_new_coeffs: Vec<SymbolVector>,
    /// Random draws consumed before the plan was accepted.
    pub draws: usize,
}

impl RepairPlan {
    pub fn per_helper(&self) -> usize {
        self.gamma.first().map_or(0, |g| g.len())
    }

    /// Coefficients of the repair blocks, in helper-major order.
    pub fn repair_coeffs(&self, manifest: &FileManifest) -> Vec<SymbolVector> {
        let width = coeff_width(manifest);
        self.helpers
            .iter()
            .zip(&self.gamma)
            .flat_map(|(&h, rows)| {
                rows.iter()
                    .map(move |g| linalg::combine_rows(&manifest.node_coeffs[h], g, width))
            })
            .collect()
    }

    /// `aug(h_k)` predicted from γ, θ and the manifest.
    pub fn predict(&self, manifest: &FileManifest) -> Vec<SymbolVector> {
        let g = self.repair_coeffs(manifest);
        let width = coeff_width(manifest);
        self.theta.iter().map(|t| linalg::combine_rows(&g, t, width)).collect()
    }
}

fn coeff_width(manifest: &FileManifest) -> usize {
    manifest
        .node_coeffs
        .iter()
        .flatten()
        .next()
        .map_or(manifest.params.m, |r| r.len())
}

fn survivors(manifest: &FileManifest, failed: usize) -> Result<Vec<usize>, RepairError> {
    if failed >= manifest.node_coeffs.len() {
        return Err(RepairError::UnknownNode(failed));
    }
    let others: Vec<usize> = (0..manifest.node_coeffs.len()).filter(|&i| i != failed).collect();
    let needed = manifest.params.helpers;
    if others.len() < needed || needed == 0 {
        return Err(RepairError::NotEnoughHelpers {
            needed: needed.max(1),
            available: others.len(),
        });
    }
    Ok(others)
}

/// Plans a repair that recreates the failed node's coefficients exactly.
pub fn plan_exact_repair(manifest: &FileManifest, failed: usize) -> Result<RepairPlan, RepairError> {
    let others = survivors(manifest, failed)?;
    let (p, q) = (manifest.params.helpers, manifest.params.repair_blocks);
    let targets = &manifest.node_coeffs[failed];
    let width = coeff_width(manifest);
    let mut rng = ChaCha8Rng::seed_from_u64(failed as u64);

    for subset in subsets_of_size(others.len(), p) {
        let helpers: Vec<usize> = subset.iter().map(|&i| others[i]).collect();
        let rows: Vec<SymbolVector> = helpers
            .iter()
            .flat_map(|&h| manifest.node_coeffs[h].iter().cloned())
            .collect();
        if !linalg::spans(&rows, targets) {
            continue;
        }
        if let Some(plan) = direct_copy_plan(manifest, failed, &helpers, q) {
            return Ok(plan);
        }
        for draw in 1..=EXACT_SEARCH_DRAWS {
            if let Some(plan) = intersection_plan(manifest, failed, &helpers, q, width, &mut rng) {
                return Ok(RepairPlan { draws: draw, ..plan });
            }
        }
    }
    Err(RepairError::Unsatisfiable {
        node: failed,
        helpers: p,
        per_helper: q,
    })
}

/// Every target row is a row some helper already stores.
fn direct_copy_plan(manifest: &FileManifest, failed: usize, helpers: &[usize], q: usize) -> Option<RepairPlan> {
    let targets = &manifest.node_coeffs[failed];
    // used[hi] lists the blocks helper hi copies; slots[k] = (hi, j) for target k.
    fn assign(
        k: usize,
        targets: &[SymbolVector],
        rows: &[&Vec<SymbolVector>],
        used: &mut Vec<Vec<usize>>,
        slots: &mut Vec<(usize, usize)>,
        q: usize,
    ) -> bool {
        if k == targets.len() {
            return true;
        }
        for hi in 0..rows.len() {
            if used[hi].len() >= q {
                continue;
            }
            for (bi, row) in rows[hi].iter().enumerate() {
                if row == &targets[k] && !used[hi].contains(&bi) {
                    slots.push((hi, used[hi].len()));
                    used[hi].push(bi);
                    if assign(k + 1, targets, rows, used, slots, q) {
                        return true;
                    }
                    used[hi].pop();
                    slots.pop();
                }
            }
        }
        false
    }
    let rows: Vec<&Vec<SymbolVector>> = helpers.iter().map(|&h| &manifest.node_coeffs[h]).collect();
    let mut used = vec![Vec::new(); helpers.len()];
    let mut slots = Vec::with_capacity(targets.len());
    if !assign(0, targets, &rows, &mut used, &mut slots, q) {
        return None;
    }
    let gamma: Vec<Vec<SymbolVector>> = rows
        .iter()
        .zip(&used)
        .map(|(held, picks)| {
            (0..q)
                .map(|j| {
                    picks.get(j).map_or_else(
                        || SymbolVector::zeros(held.len()),
                        |&b| SymbolVector::unit(held.len(), b),
                    )
                })
                .collect()
        })
        .collect();
    let pq = helpers.len() * q;
    let theta = slots
        .iter()
        .map(|&(hi, j)| SymbolVector::unit(pq, hi * q + j))
        .collect();
    finalize(manifest, failed, helpers, gamma, theta, 0)
}

/// Picks repair blocks inside `W = span(T) + random extension`, intersected
/// with each helper's span.
fn intersection_plan(
    manifest: &FileManifest,
    failed: usize,
    helpers: &[usize],
    q: usize,
    width: usize,
    rng: &mut ChaCha8Rng,
) -> Option<RepairPlan> {
    let targets = &manifest.node_coeffs[failed];
    let pq = helpers.len() * q;
    let mut w = linalg::row_basis(targets);
    while w.len() < pq.min(width) {
        let v = SymbolVector::random(width, rng);
        let mut next = w.clone();
        next.push(v);
        if linalg::rank(&next) > w.len() {
            w = next;
        }
    }
    let mut gamma = Vec::with_capacity(helpers.len());
    let mut g_rows = Vec::with_capacity(pq);
    for &h in helpers {
        let own = &manifest.node_coeffs[h];
        let inter = linalg::intersect(own, &w, width);
        let mut picks = Vec::with_capacity(q);
        for _ in 0..q {
            let g = if inter.is_empty() {
                SymbolVector::zeros(width)
            } else if inter.len() <= q && picks.len() < inter.len() {
                inter[picks.len()].clone()
            } else {
                let weights = SymbolVector::random(inter.len(), rng);
                linalg::combine_rows(&inter, &weights, width)
            };
            let weights = linalg::express_in_rows(own, &g)?;
            g_rows.push(g.clone());
            picks.push(weights);
        }
        gamma.push(picks);
    }
    let theta: Vec<SymbolVector> = targets
        .iter()
        .map(|t| linalg::express_in_rows(&g_rows, t))
        .collect::<Option<_>>()?;
    finalize(manifest, failed, helpers, gamma, theta, 0)
}

fn finalize(
    manifest: &FileManifest,
    failed: usize,
    helpers: &[usize],
    gamma: Vec<Vec<SymbolVector>>,
    theta: Vec<SymbolVector>,
    draws: usize,
) -> Option<RepairPlan> {
    let mut plan = RepairPlan {
        failed_node: failed,
        helpers: helpers.to_vec(),
        gamma,
        theta,
        expected_new_coeffs: Vec::new(),
        draws,
    };
    plan.expected_new_coeffs = plan.predict(manifest);
    (plan.expected_new_coeffs == manifest.node_coeffs[failed]).then_some(plan)
}

/// Plans a repair with random coefficients, redrawn until every node set
/// that could decode the file before still can.
pub fn plan_functional_repair<R: Rng + ?Sized>(
    manifest: &FileManifest,
    failed: usize,
    rng: &mut R,
) -> Result<RepairPlan, RepairError> {
    let others = survivors(manifest, failed)?;
    let (p, q) = (manifest.params.helpers, manifest.params.repair_blocks);
    let m = coeff_width(manifest);
    let new_blocks = manifest.node_coeffs[failed].len();
    let nodes = manifest.node_coeffs.len();
    let decodable_before: Vec<Vec<usize>> = if nodes <= SUBSET_CHECK_MAX_NODES {
        (1..=nodes)
            .flat_map(|k| subsets_of_size(nodes, k))
            .filter(|s| s.contains(&failed) && manifest.rank_of(s) == m)
            .collect()
    } else {
        Vec::new()
    };

    for draw in 1..=FUNCTIONAL_MAX_DRAWS {
        let mut pick = rand::seq::index::sample(rng, others.len(), p).into_vec();
        pick.sort_unstable();
        let helpers: Vec<usize> = pick.into_iter().map(|i| others[i]).collect();
        let gamma: Vec<Vec<SymbolVector>> = helpers
            .iter()
            .map(|&h| {
                let held = manifest.node_coeffs[h].len();
                (0..q).map(|_| SymbolVector::random(held, rng)).collect()
            })
            .collect();
        let theta: Vec<SymbolVector> = (0..new_blocks).map(|_| SymbolVector::random(p * q, rng)).collect();
        let mut plan = RepairPlan {
            failed_node: failed,
            helpers,
            gamma,
            theta,
            expected_new_coeffs: Vec::new(),
            draws: draw,
        };
        plan.expected_new_coeffs = plan.predict(manifest);

        let mut trial = manifest.clone();
        trial.node_coeffs[failed] = plan.expected_new_coeffs.clone();
        let all: Vec<usize> = (0..nodes).collect();
        let keeps = trial.rank_of(&all) == m && decodable_before.iter().all(|s| trial.rank_of(s) == m);
        if keeps {
            return Ok(plan);
        }
    }
    Err(RepairError::ReliabilityLost(FUNCTIONAL_MAX_DRAWS))
}

/// `(g_{i,j}, tag)` for each γ row, built by linear combination only.
pub fn make_repair_blocks(
    store: &NodeStore,
    gamma: &[SymbolVector],
) -> Result<Vec<(CodedBlock, TagVector)>, RepairError> {
    let entries: Vec<&StoredBlock> = store
        .slots
        .iter()
        .enumerate()
        .map(|(i, s)| s.as_ref().ok_or(RepairError::IncompleteStore(i)))
        .collect::<Result<_, _>>()?;
    let blocks: Vec<&CodedBlock> = entries.iter().map(|s| &s.block).collect();
    let tags: Vec<&TagVector> = entries.iter().map(|s| &s.tag).collect();
    gamma
        .iter()
        .map(|g| {
            if g.len() != blocks.len() {
                return Err(RepairError::Dimension(format!(
                    "gamma row has {} weights for {} blocks",
                    g.len(),
                    blocks.len()
                )));
            }
            Ok((
                combine_blocks(&blocks, g.as_slice())?,
                combine_tag_list(&tags, g.as_slice())?,
            ))
        })
        .collect()
}

/// `(h_k, tag)` for each θ row.
pub fn reconstruct_node(
    repair: &[(CodedBlock, TagVector)],
    theta: &[SymbolVector],
) -> Result<Vec<(CodedBlock, TagVector)>, RepairError> {
    let blocks: Vec<&CodedBlock> = repair.iter().map(|(b, _)| b).collect();
    let tags: Vec<&TagVector> = repair.iter().map(|(_, t)| t).collect();
    theta
        .iter()
        .map(|t| {
            if t.len() != blocks.len() {
                return Err(RepairError::Dimension(format!(
                    "theta row has {} weights for {} repair blocks",
                    t.len(),
                    blocks.len()
                )));
            }
            Ok((
                combine_blocks(&blocks, t.as_slice())?,
                combine_tag_list(&tags, t.as_slice())?,
            ))
        })
        .collect()
}

/// Replaces the failed node's coefficient rows, provided they match the plan.
pub fn refresh_manifest(
    manifest: &mut FileManifest,
    plan: &RepairPlan,
    new_coeffs: &[SymbolVector],
) -> Result<(), RepairError> {
    if new_coeffs.len() != plan.expected_new_coeffs.len() {
        return Err(RepairError::Dimension(format!(
            "{} rows, plan predicts {}",
            new_coeffs.len(),
            plan.expected_new_coeffs.len()
        )));
    }
    if let Some(k) = new_coeffs
        .iter()
        .zip(&plan.expected_new_coeffs)
        .position(|(a, b)| a != b)
    {
        return Err(RepairError::CoefficientMismatch(k));
    }
    let row = manifest
        .node_coeffs
        .get_mut(plan.failed_node)
        .ok_or(RepairError::UnknownNode(plan.failed_node))?;
    *row = new_coeffs.to_vec();
    Ok(())
}

/// A helper's repair block with its tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairMessage {
    pub helper: u32,
    pub j: u32,
    pub block: CodedBlock,
    pub tag: TagVector,
}

impl RepairMessage {
    /// `u32be(helper) ‖ u32be(j) ‖ block bytes ‖ ℓ tag bytes`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_u32(&mut out, self.helper);
        put_u32(&mut out, self.j);
        out.extend(self.block.to_bytes());
        out.extend(self.tag.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], ell: usize) -> Result<Self, RepairError> {
        let mut r = Reader::new(bytes);
        let helper = r.u32()?;
        let j = r.u32()?;
        let block = CodedBlock::read(&mut r)?;
        let tag = TagVector::from_bytes(r.take(ell)?);
        r.finish()?;
        Ok(RepairMessage { helper, j, block, tag })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{CodeLayout, SystemParams};
    use crate::field::Gf256;

    fn evenodd_manifest() -> FileManifest {
        FileManifest::new("f", SystemParams::evenodd4(8, 1), 10, &CodeLayout::evenodd4())
    }

    #[test]
    fn exact_plan_for_node_four_uses_first_three() {
        let m = evenodd_manifest();
        let plan = plan_exact_repair(&m, 3).unwrap();
        assert_eq!(plan.helpers, vec![0, 1, 2]);
        assert_eq!(plan.gamma.len(), 3);
        assert!(plan.gamma.iter().all(|g| g.len() == 1 && g[0].len() == 2));
        assert_eq!(plan.theta.len(), 2);
        assert!(plan.theta.iter().all(|t| t.len() == 3));
        assert_eq!(plan.expected_new_coeffs, m.node_coeffs[3]);
    }

    #[test]
    fn every_evenodd_node_is_exactly_repairable() {
        let m = evenodd_manifest();
        for node in 0..4 {
            let plan = plan_exact_repair(&m, node).unwrap();
            assert_eq!(plan.predict(&m), m.node_coeffs[node]);
        }
    }

    #[test]
    fn raw_sources_copied_directly() {
        let mut p = SystemParams::evenodd4(8, 1);
        p.repair_blocks = 2;
        p.helpers = 1;
        let mut layout = CodeLayout::evenodd4();
        layout.rows.push(layout.rows[0].clone());
        p.nodes = 5;
        let m = FileManifest::new("f", p, 10, &layout);
        let plan = plan_exact_repair(&m, 0).unwrap();
        assert_eq!(plan.draws, 0);
        assert_eq!(plan.helpers, vec![4]);
        assert_eq!(plan.gamma[0], vec![SymbolVector::unit(2, 0), SymbolVector::unit(2, 1)]);
    }

    #[test]
    fn single_node_system_cannot_repair() {
        let p = SystemParams {
            nodes: 1,
            blocks_per_node: 4,
            helpers: 1,
            ..SystemParams::evenodd4(8, 1)
        };
        let layout = CodeLayout {
            rows: vec![(0..4).map(|i| SymbolVector::unit(4, i)).collect()],
        };
        let m = FileManifest::new("f", p, 10, &layout);
        assert!(matches!(
            plan_exact_repair(&m, 0),
            Err(RepairError::NotEnoughHelpers { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            plan_functional_repair(&m, 0, &mut rng),
            Err(RepairError::NotEnoughHelpers { .. })
        ));
    }

    #[test]
    fn refresh_refuses_mismatch() {
        let mut m = evenodd_manifest();
        let plan = plan_exact_repair(&m, 2).unwrap();
        let mut wrong = plan.expected_new_coeffs.clone();
        wrong[1][0] += Gf256::ONE;
        assert!(matches!(
            refresh_manifest(&mut m, &plan, &wrong),
            Err(RepairError::CoefficientMismatch(1))
        ));
        let before = m.clone();
        refresh_manifest(&mut m, &plan, &plan.expected_new_coeffs).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn functional_plan_keeps_pairs_decodable() {
        let m = evenodd_manifest();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for failed in 0..4 {
            let plan = plan_functional_repair(&m, failed, &mut rng).unwrap();
            let mut after = m.clone();
            refresh_manifest(&mut after, &plan, &plan.expected_new_coeffs.clone()).unwrap();
            for pair in subsets_of_size(4, 2) {
                assert_eq!(after.rank_of(&pair), 4, "pair {pair:?}");
            }
        }
    }

    #[test]
    fn repair_message_round_trip() {
        let msg = RepairMessage {
            helper: 2,
            j: 0,
            block: CodedBlock::from_parts(&[Gf256(1); 4], &[Gf256(2); 2]),
            tag: TagVector::from_bytes(&[3, 4]),
        };
        let bytes = msg.to_bytes();
        assert_eq!(&bytes[..8], &[0, 0, 0, 2, 0, 0, 0, 0]);
        assert_eq!(RepairMessage::from_bytes(&bytes, 2).unwrap(), msg);
        assert!(RepairMessage::from_bytes(&bytes, 3).is_err());
    }
}

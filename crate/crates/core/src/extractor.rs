//! Recovers a node's stored blocks from audit responses alone.
//!
//! For each random coefficient vector `α` over the node's `M` blocks the
//! extractor sends `R` challenges `c·α` with random nonzero `c`, decrypts
//! each response, scales it by `c^{-1}` and takes a strict majority over the
//! resulting data vectors. Once `M` independent equations are known the
//! blocks follow by elimination. A node answering correctly with probability
//! above one half is outvoted; otherwise extraction reports failure.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::audit::{self, AuditError, Challenge, Proof};
use crate::blocks::{CodedBlock, FileManifest};
use crate::field::{linalg, FieldError, Gf256, SymbolVector};
use crate::ncrypt::{self, AuxiliaryElements, CryptError};
use crate::prf::PrfKey;
use crate::spacemac::SpaceMac;

/// Anything that answers audit challenges for one node.
pub trait ChallengeOracle {
    /// `None` when the response could not be parsed.
    fn respond(&mut self, chal: &Challenge) -> Option<Proof>;
}

impl<F: FnMut(&Challenge) -> Option<Proof>> ChallengeOracle for F {
    fn respond(&mut self, chal: &Challenge) -> Option<Proof> {
        self(chal)
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("node {0} is not in the manifest")]
    UnknownNode(usize),
    #[error("at least one repetition is required")]
    NoRepetitions,
    #[error("only {found} of {needed} equations reached a verified majority after {attempts} attempts")]
    NoMajority {
        found: usize,
        needed: usize,
        attempts: usize,
    },
    #[error("recovered blocks disagree with a fresh audit")]
    FreshAuditMismatch,
    #[error("recovered equations are rank deficient")]
    RankCollapse,
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Crypt(#[from] CryptError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// What the user needs to run the extractor: the verifying MAC, the
/// decryption key and the auxiliary elements.
#[derive(Debug, Clone, Copy)]
pub struct ExtractorKeys<'a> {
    pub mac: &'a SpaceMac,
    pub k_e: &'a PrfKey,
    pub aux: &'a AuxiliaryElements,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    /// The node's blocks, in storage order.
    pub blocks: Vec<CodedBlock>,
    /// Coefficient vectors tried, including ones that failed to reach a majority.
    pub equations_tried: usize,
    /// Equations that failed to reach a verified majority.
    pub equations_failed: usize,
    pub queries: usize,
}

struct Ctx<'a, O: ?Sized> {
    oracle: &'a mut O,
    manifest: &'a FileManifest,
    node: usize,
    keys: ExtractorKeys<'a>,
    repetitions: usize,
    queries: usize,
}

impl<O: ChallengeOracle + ?Sized> Ctx<'_, O> {
    /// Majority data vector (first n symbols) for `Σ α_i e_i`, or `None`.
    fn majority<R: Rng + ?Sized>(
        &mut self,
        alpha: &[Gf256],
        rng: &mut R,
    ) -> Result<Option<SymbolVector>, ExtractError> {
        let base = Challenge::new(
            self.manifest.file_id.clone(),
            alpha.iter().enumerate().map(|(i, &a)| (i, a)).collect(),
        )?;
        let mut votes: HashMap<Vec<u8>, (usize, Challenge, Proof)> = HashMap::new();
        for _ in 0..self.repetitions {
            let c = Gf256(rng.gen_range(1..=255));
            let chal = base.scaled(c);
            self.queries += 1;
            let Some(proof) = self.oracle.respond(&chal) else {
                continue;
            };
            let Ok(e_bar) = ncrypt::dec(self.keys.k_e, &proof.ciphertext, self.keys.aux) else {
                continue;
            };
            let c_inv = c.inv().expect("c is nonzero");
            let mut data = e_bar.into_inner();
            data.extend(proof.pad);
            let data = SymbolVector::from(data).scaled(c_inv);
            let entry = votes.entry(data.to_bytes()).or_insert((0, chal, proof));
            entry.0 += 1;
        }
        let Some((key, (count, chal, proof))) = votes.into_iter().max_by_key(|(_, v)| v.0) else {
            return Ok(None);
        };
        if 2 * count <= self.repetitions {
            return Ok(None);
        }
        // The winning answer must also carry a valid tag.
        let ok = audit::verify_proof_adjusted(
            self.keys.mac,
            self.manifest,
            self.node,
            &chal,
            &proof,
            &self.manifest.deltas,
        )?;
        Ok(ok.then(|| SymbolVector::from_bytes(&key)))
    }
}

/// Runs the extractor against `oracle`, which answers for `node`.
pub fn extract_node<O, R>(
    oracle: &mut O,
    manifest: &FileManifest,
    node: usize,
    keys: ExtractorKeys<'_>,
    repetitions: usize,
    rng: &mut R,
) -> Result<Extraction, ExtractError>
where
    O: ChallengeOracle + ?Sized,
    R: Rng + ?Sized,
{
    let coeffs = manifest.node_coeffs.get(node).ok_or(ExtractError::UnknownNode(node))?;
    if repetitions == 0 {
        return Err(ExtractError::NoRepetitions);
    }
    let m_blocks = coeffs.len();
    let budget = 4 * m_blocks + 8;
    let mut ctx = Ctx {
        oracle,
        manifest,
        node,
        keys,
        repetitions,
        queries: 0,
    };

    let mut alphas: Vec<SymbolVector> = Vec::with_capacity(m_blocks);
    let mut rhs: Vec<SymbolVector> = Vec::with_capacity(m_blocks);
    let mut tried = 0;
    let mut failed = 0;
    while alphas.len() < m_blocks {
        if tried == budget {
            return Err(ExtractError::NoMajority {
                found: alphas.len(),
                needed: m_blocks,
                attempts: tried,
            });
        }
        let alpha = SymbolVector::random(m_blocks, rng);
        let mut grown = alphas.clone();
        grown.push(alpha.clone());
        if linalg::rank(&grown) <= alphas.len() {
            continue;
        }
        tried += 1;
        match ctx.majority(alpha.as_slice(), rng)? {
            Some(d) => {
                alphas.push(alpha);
                rhs.push(d);
            }
            None => failed += 1,
        }
    }

    let data = match linalg::gaussian_solve(&alphas, &rhs)? {
        linalg::Solution::Unique(rows) => rows,
        _ => return Err(ExtractError::RankCollapse),
    };
    let blocks: Vec<CodedBlock> = data
        .iter()
        .zip(coeffs)
        .map(|(d, c)| CodedBlock::from_parts(d.as_slice(), c.as_slice()))
        .collect();

    // One more equation, predicted from the recovered blocks. An inconclusive
    // vote is retried from the same budget; a verified disagreement is fatal.
    loop {
        let alpha = SymbolVector::random(m_blocks, rng);
        if alpha.is_zero() {
            continue;
        }
        let mut predicted = SymbolVector::zeros(manifest.params.n);
        for (a, d) in alpha.iter().zip(&data) {
            predicted.axpy(*a, d)?;
        }
        if tried == budget {
            return Err(ExtractError::NoMajority {
                found: alphas.len(),
                needed: m_blocks + 1,
                attempts: tried,
            });
        }
        tried += 1;
        match ctx.majority(alpha.as_slice(), rng)? {
            Some(d) if d == predicted => break,
            Some(_) => return Err(ExtractError::FreshAuditMismatch),
            None => failed += 1,
        }
    }

    Ok(Extraction {
        blocks,
        equations_tried: tried,
        equations_failed: failed,
        queries: ctx.queries,
    })
}

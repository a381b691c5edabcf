//! The audit protocol: key generation, file setup, challenges, proofs and
//! their verification.
//!
//! Roles: the user holds both keys, the auditor holds `k_v` and the manifest's
//! coefficients, storage nodes hold `k_e`, their blocks and tags, and the
//! auxiliary elements.

use std::collections::BTreeSet;

use rand::{seq::index, CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{
    combine_blocks, make_source_blocks, BlockError, CodeLayout, CodedBlock, FileManifest, SystemParams,
};
use crate::cost::{self, Phase};
use crate::dynamics::UpdateDelta;
use crate::field::{Gf256, SymbolVector};
use crate::ncrypt::{self, AuxiliaryElements, Ciphertext, CryptError, MaskPrecomputation};
use crate::prf::{PrfError, PrfKey, PrfMode};
use crate::spacemac::{combine_tag_list, MacError, SpaceMac, TagVector};
use crate::wire::{put_prefixed, put_u32, Reader, WireError};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("{role:?} may not hold the {key} key")]
    KeyScope { role: Role, key: &'static str },
    #[error("challenge size {count} outside 1..={max}")]
    ChallengeSize { count: usize, max: usize },
    #[error("challenge index {index} is not stored (node holds {held})")]
    MissingBlock { index: usize, held: usize },
    #[error("challenge repeats index {0}")]
    DuplicateIndex(usize),
    #[error("challenge is for file {got:?}, expected {expected:?}")]
    WrongFile { expected: String, got: String },
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("malformed proof: {0}")]
    Malformed(String),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Crypt(#[from] CryptError),
    #[error(transparent)]
    Prf(#[from] PrfError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    User,
    Tpa,
    Node,
}

/// The user's two keys. Access goes through role-checked accessors so that a
/// node never obtains `k_v` and the auditor never obtains `k_e`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyMaterial {
    k_v: PrfKey,
    k_e: PrfKey,
}

impl KeyMaterial {
    pub fn new(k_v: PrfKey, k_e: PrfKey) -> Self {
        KeyMaterial { k_v, k_e }
    }

    pub fn verification_key(&self, role: Role) -> Result<&PrfKey, AuditError> {
        match role {
            Role::User | Role::Tpa => Ok(&self.k_v),
            Role::Node => Err(AuditError::KeyScope {
                role,
                key: "verification",
            }),
        }
    }

    pub fn encryption_key(&self, role: Role) -> Result<&PrfKey, AuditError> {
        match role {
            Role::User | Role::Node => Ok(&self.k_e),
            Role::Tpa => Err(AuditError::KeyScope {
                role,
                key: "encryption",
            }),
        }
    }
}

/// Two independent `λ`-bit keys. The PRF mode follows the environment.
pub fn keygen<R: RngCore + CryptoRng + ?Sized>(params: &SystemParams, rng: &mut R) -> Result<KeyMaterial, AuditError> {
    keygen_with_mode(params, PrfMode::from_env(), rng)
}

pub fn keygen_with_mode<R: RngCore + CryptoRng + ?Sized>(
    params: &SystemParams,
    mode: PrfMode,
    rng: &mut R,
) -> Result<KeyMaterial, AuditError> {
    let k_v = PrfKey::generate(params.lambda, mode, rng)?;
    let k_e = PrfKey::generate(params.lambda, mode, rng)?;
    Ok(KeyMaterial { k_v, k_e })
}

/// A block and its tag as kept by a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredBlock {
    pub block: CodedBlock,
    pub tag: TagVector,
}

/// Everything a storage node holds for one file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStore {
    /// `None` marks a block the node has lost or discarded.
    pub slots: Vec<Option<StoredBlock>>,
    pub aux: AuxiliaryElements,
    pub k_e: PrfKey,
}

impl NodeStore {
    pub fn new(blocks: Vec<CodedBlock>, tags: Vec<TagVector>, aux: AuxiliaryElements, k_e: PrfKey) -> Self {
        let slots = blocks
            .into_iter()
            .zip(tags)
            .map(|(block, tag)| Some(StoredBlock { block, tag }))
            .collect();
        NodeStore { slots, aux, k_e }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&StoredBlock> {
        self.slots.get(i)?.as_ref()
    }

    pub fn get_mut(&mut self, i: usize) -> Option<&mut StoredBlock> {
        self.slots.get_mut(i)?.as_mut()
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    pub fn blocks(&self) -> impl Iterator<Item = Option<&CodedBlock>> {
        self.slots.iter().map(|s| s.as_ref().map(|s| &s.block))
    }
}

/// What [`setup_file`] produces: the manifest, each node's payload, and the
/// auditor's view.
#[derive(Debug, Clone)]
pub struct FileSetup {
    pub manifest: FileManifest,
    pub nodes: Vec<NodeStore>,
    pub aux: AuxiliaryElements,
}

/// `Σ α_i t_{b_i}`.
pub fn taggen(coeffs: &SymbolVector, source_tags: &[TagVector]) -> Result<TagVector, AuditError> {
    let refs: Vec<&TagVector> = source_tags.iter().collect();
    Ok(combine_tag_list(&refs, coeffs.as_slice())?)
}

/// Splits, tags and encodes `file` for the given layout. Source blocks are
/// tagged with the MAC; encoded blocks get their tags through [`taggen`].
pub fn setup_file<R: Rng + ?Sized>(
    file: &[u8],
    file_id: &str,
    params: &SystemParams,
    keys: &KeyMaterial,
    layout: &CodeLayout,
    rng: &mut R,
) -> Result<FileSetup, AuditError> {
    params.validate()?;
    layout.validate(params)?;
    let k_v = keys.verification_key(Role::User)?;
    let k_e = keys.encryption_key(Role::User)?;
    let (sources, file_len) = make_source_blocks(file, params, rng)?;
    let mac = SpaceMac::new(k_v, file_id, params.ell);
    let source_tags: Vec<TagVector> = sources.iter().map(|b| mac.mac(b)).collect::<Result<_, _>>()?;
    let aux = ncrypt::setup(k_e, &mac, params.n)?;
    let src: Vec<&CodedBlock> = sources.iter().collect();
    let nodes = layout
        .rows
        .iter()
        .map(|rows| {
            let blocks = rows
                .iter()
                .map(|r| combine_blocks(&src, r.as_slice()))
                .collect::<Result<Vec<_>, _>>()?;
            let tags = rows
                .iter()
                .map(|r| taggen(r, &source_tags))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(NodeStore::new(blocks, tags, aux.clone(), k_e.clone()))
        })
        .collect::<Result<Vec<_>, AuditError>>()?;
    Ok(FileSetup {
        manifest: FileManifest::new(file_id, *params, file_len, layout),
        nodes,
        aux,
    })
}

/// `{(i, α_i)}` with distinct 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    pub file_id: String,
    pub entries: Vec<(usize, Gf256)>,
}

impl Challenge {
    pub fn new(file_id: impl Into<String>, entries: Vec<(usize, Gf256)>) -> Result<Self, AuditError> {
        let chal = Challenge {
            file_id: file_id.into(),
            entries,
        };
        chal.validate()?;
        Ok(chal)
    }

    pub fn validate(&self) -> Result<(), AuditError> {
        if self.entries.is_empty() {
            return Err(AuditError::ChallengeSize {
                count: 0,
                max: usize::MAX,
            });
        }
        let mut seen = BTreeSet::new();
        for (i, _) in &self.entries {
            if !seen.insert(*i) {
                return Err(AuditError::DuplicateIndex(*i));
            }
        }
        Ok(())
    }

    /// `c · α` for every entry.
    pub fn scaled(&self, c: Gf256) -> Challenge {
        Challenge {
            file_id: self.file_id.clone(),
            entries: self.entries.iter().map(|(i, a)| (*i, *a * c)).collect(),
        }
    }

    /// `u32be(len) ‖ file_id ‖ u32be(count) ‖ (u32be(index) ‖ α)*`, indices 1-based.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.file_id.len() + 5 * self.entries.len());
        put_prefixed(&mut out, self.file_id.as_bytes());
        put_u32(&mut out, self.entries.len() as u32);
        for (i, a) in &self.entries {
            put_u32(&mut out, *i as u32 + 1);
            out.push(a.0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AuditError> {
        let mut r = Reader::new(bytes);
        let file_id =
            String::from_utf8(r.prefixed()?.to_vec()).map_err(|_| WireError::Invalid("file id is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(bytes.len() / 5));
        for _ in 0..count {
            let i = r.u32()?;
            if i == 0 {
                return Err(WireError::Invalid("challenge index 0".into()).into());
            }
            entries.push((i as usize - 1, Gf256(r.u8()?)));
        }
        r.finish()?;
        Challenge::new(file_id, entries)
    }
}

/// Picks `count` distinct blocks of `node` with uniform nonzero coefficients.
pub fn gen_challenge<R: Rng + ?Sized>(
    manifest: &FileManifest,
    node: usize,
    count: usize,
    rng: &mut R,
) -> Result<Challenge, AuditError> {
    let held = manifest
        .node_coeffs
        .get(node)
        .ok_or(AuditError::UnknownNode(node))?
        .len();
    if count == 0 || count > held {
        return Err(AuditError::ChallengeSize { count, max: held });
    }
    let mut picked = index::sample(rng, held, count).into_vec();
    picked.sort_unstable();
    // A zero coefficient would leave its index unaudited, so draw from F_q \ {0}.
    let entries = picked.into_iter().map(|i| (i, Gf256(rng.gen_range(1..=255)))).collect();
    Ok(Challenge {
        file_id: manifest.file_id.clone(),
        entries,
    })
}

/// `(⟨c̄, (nonce, p)⟩, e^(n−1), e^(n), t)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proof {
    pub ciphertext: Ciphertext,
    pub pad: [Gf256; 2],
    pub tag: TagVector,
}

impl Proof {
    /// Ciphertext bytes ‖ 2 padding bytes ‖ ℓ tag bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.ciphertext.to_bytes();
        out.extend([self.pad[0].0, self.pad[1].0]);
        out.extend(self.tag.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], params: &SystemParams) -> Result<Self, AuditError> {
        let mut r = Reader::new(bytes);
        let ciphertext = Ciphertext::read(&mut r, params.n, params.nonce_len(), params.ell)?;
        let pad = [Gf256(r.u8()?), Gf256(r.u8()?)];
        let tag = TagVector::from_bytes(r.take(params.ell)?);
        r.finish()?;
        Ok(Proof { ciphertext, pad, tag })
    }

    /// Serialized size: `(n − 2) + λ/8 + 2 + 2ℓ`.
    pub fn wire_len(params: &SystemParams) -> usize {
        params.n - 2 + params.nonce_len() + 2 + 2 * params.ell
    }
}

/// How a node answers a challenge on a block it no longer has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MissingBlockPolicy {
    #[default]
    Strict,
    /// Use a uniformly random block and tag in its place.
    SubstituteRandom,
}

/// The aggregated data vector (`n` symbols) and tag for a challenge.
pub fn aggregate<R: Rng + ?Sized>(
    store: &NodeStore,
    chal: &Challenge,
    policy: MissingBlockPolicy,
    rng: &mut R,
) -> Result<(SymbolVector, TagVector), AuditError> {
    let n = store.aux.n;
    let ell = store.aux.ell();
    let mut data = SymbolVector::zeros(n);
    let mut tag = TagVector::zeros(ell);
    for &(i, alpha) in &chal.entries {
        let substitute;
        let entry = match (store.get(i), policy) {
            (Some(s), _) => s,
            (None, MissingBlockPolicy::SubstituteRandom) => {
                let m = store.slots.iter().flatten().next().map_or(0, |s| s.block.m());
                substitute = StoredBlock {
                    block: CodedBlock::random(n, m, rng),
                    tag: TagVector::from_symbols(SymbolVector::random(ell, rng)),
                };
                &substitute
            }
            (None, MissingBlockPolicy::Strict) => {
                return Err(AuditError::MissingBlock {
                    index: i,
                    held: store.len(),
                })
            }
        };
        {
            let _p = cost::phase(Phase::BlockAggregation);
            crate::field::axpy(data.as_mut_slice(), alpha, entry.block.data());
        }
        let _p = cost::phase(Phase::TagAggregation);
        tag.axpy(alpha, &entry.tag)?;
    }
    Ok((data, tag))
}

fn finish_proof(data: SymbolVector, tag: TagVector, mask: &MaskPrecomputation) -> Result<Proof, AuditError> {
    let n = data.len();
    let ciphertext = mask.apply(&data.as_slice()[..n - 2])?;
    Ok(Proof {
        ciphertext,
        pad: [data[n - 2], data[n - 1]],
        tag,
    })
}

/// Aggregates the challenged blocks and masks the result under a fresh nonce.
pub fn gen_proof<R: RngCore + CryptoRng + ?Sized>(
    store: &NodeStore,
    chal: &Challenge,
    policy: MissingBlockPolicy,
    rng: &mut R,
) -> Result<Proof, AuditError> {
    chal.validate()?;
    let (data, tag) = aggregate(store, chal, policy, rng)?;
    let mask = MaskPrecomputation::new(&store.k_e, &store.aux, rng)?;
    finish_proof(data, tag, &mask)
}

/// As [`gen_proof`], with a mask prepared beforehand.
pub fn gen_proof_precomputed<R: Rng + ?Sized>(
    store: &NodeStore,
    chal: &Challenge,
    mask: &MaskPrecomputation,
    policy: MissingBlockPolicy,
    rng: &mut R,
) -> Result<Proof, AuditError> {
    chal.validate()?;
    let (data, tag) = aggregate(store, chal, policy, rng)?;
    finish_proof(data, tag, mask)
}

/// `aug(e) = Σ α_i aug(e_i)` from the manifest.
pub fn aggregate_coeffs(manifest: &FileManifest, node: usize, chal: &Challenge) -> Result<SymbolVector, AuditError> {
    let rows = manifest.node_coeffs.get(node).ok_or(AuditError::UnknownNode(node))?;
    let m = rows.first().map_or(manifest.params.m, |r| r.len());
    let _p = cost::phase(Phase::CoefficientAggregation);
    let mut aug = SymbolVector::zeros(m);
    for &(i, alpha) in &chal.entries {
        let row = rows.get(i).ok_or(AuditError::MissingBlock {
            index: i,
            held: rows.len(),
        })?;
        aug.axpy(alpha, row).map_err(|e| AuditError::Malformed(e.to_string()))?;
    }
    Ok(aug)
}

/// Accepts iff `(c̄ | pad | aug(e))` verifies against `t + p` in every key index.
pub fn verify_proof(
    mac: &SpaceMac,
    manifest: &FileManifest,
    node: usize,
    chal: &Challenge,
    proof: &Proof,
) -> Result<bool, AuditError> {
    verify_proof_adjusted(mac, manifest, node, chal, proof, &[])
}

/// [`verify_proof`] with the stored tags corrected by `t += Σ_j aug(e)_j δ_j`.
pub fn verify_proof_adjusted(
    mac: &SpaceMac,
    manifest: &FileManifest,
    node: usize,
    chal: &Challenge,
    proof: &Proof,
    deltas: &[UpdateDelta],
) -> Result<bool, AuditError> {
    if chal.file_id != manifest.file_id {
        return Err(AuditError::WrongFile {
            expected: manifest.file_id.clone(),
            got: chal.file_id.clone(),
        });
    }
    chal.validate()?;
    let n = manifest.params.n;
    let ell = mac.ell();
    if proof.ciphertext.c_bar.len() != n - 2 || proof.ciphertext.p.ell() != ell || proof.tag.ell() != ell {
        return Err(AuditError::Malformed(format!(
            "c_bar {}, p {}, t {}; expected {}, {ell}, {ell}",
            proof.ciphertext.c_bar.len(),
            proof.ciphertext.p.ell(),
            proof.tag.ell(),
            n - 2
        )));
    }
    let aug = aggregate_coeffs(manifest, node, chal)?;
    let mut expected = proof.tag.plus(&proof.ciphertext.p)?;
    for d in deltas {
        let weight = aug.as_slice().get(d.source).copied().unwrap_or(Gf256::ZERO);
        if !weight.is_zero() {
            expected.axpy(weight, &d.delta)?;
        }
    }
    let c = SymbolVector::concat(&[proof.ciphertext.c_bar.as_slice(), &proof.pad, aug.as_slice()]);
    let _p = cost::phase(Phase::MacVerify);
    Ok(mac.verify_symbols(c.as_slice(), &expected)?)
}

//! Source and coded blocks, the coefficient layout of a deployment, and the
//! file manifest the user and auditor keep.
//!
//! A block is a vector of `n + m` symbols: `n − 2` payload symbols, two random
//! padding symbols, then `m` coding coefficients that record which combination
//! of source blocks it is.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{IndexMapping, UpdateDelta};
use crate::field::linalg::{self, Solution};
use crate::field::{FieldError, Gf256, SymbolVector, FIELD_SIZE};
use crate::wire::{put_u32, Reader, WireError};

pub const BLOCK_MAGIC: &[u8; 4] = b"NCAB";
pub const BLOCK_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("file of {len} bytes does not fit in {m} blocks of {cap} bytes")]
    FileTooLarge { len: usize, m: usize, cap: usize },
    #[error("block dimension mismatch: expected n={n}, m={m}; got n={got_n}, m={got_m}")]
    Dimension {
        n: usize,
        m: usize,
        got_n: usize,
        got_m: usize,
    },
    #[error("need one coefficient per block: {blocks} blocks, {alphas} coefficients")]
    CoefficientCount { blocks: usize, alphas: usize },
    #[error("blocks span only rank {rank} of {m}; file is undecodable")]
    Undecodable { rank: usize, m: usize },
    #[error("blocks are mutually inconsistent (corrupted data)")]
    Inconsistent,
    #[error("layout does not match parameters: {0}")]
    Layout(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Deployment parameters. `q` is always 256.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemParams {
    pub q: u32,
    /// Symbols per block before augmentation, including the two padding symbols.
    pub n: usize,
    /// Number of source blocks.
    pub m: usize,
    /// Number of storage nodes (N).
    pub nodes: usize,
    /// Coded blocks per node (M).
    pub blocks_per_node: usize,
    /// Helper nodes contacted during repair (P).
    pub helpers: usize,
    /// Repair blocks sent by each helper (Q).
    pub repair_blocks: usize,
    /// Number of parallel tags (ℓ).
    pub ell: usize,
    /// Key and nonce length in bits.
    pub lambda: usize,
}

impl SystemParams {
    /// The four-node EVENODD example: m=4, N=4, M=2, P=3, Q=1.
    pub fn evenodd4(n: usize, ell: usize) -> Self {
        SystemParams {
            q: FIELD_SIZE as u32,
            n,
            m: 4,
            nodes: 4,
            blocks_per_node: 2,
            helpers: 3,
            repair_blocks: 1,
            ell,
            lambda: 128,
        }
    }

    pub fn validate(&self) -> Result<(), BlockError> {
        let bad = |msg: String| Err(BlockError::Params(msg));
        if self.q as usize != FIELD_SIZE {
            return bad(format!("q must be 256, got {}", self.q));
        }
        if self.n < 4 {
            return bad(format!("n must be at least 4, got {}", self.n));
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.ell == 0 {
            return bad("ell must be at least 1".into());
        }
        if self.nodes == 0 || self.blocks_per_node == 0 {
            return bad("need at least one node holding one block".into());
        }
        if self.nodes * self.blocks_per_node < self.m {
            return bad(format!(
                "N*M = {} cannot hold m = {} source dimensions",
                self.nodes * self.blocks_per_node,
                self.m
            ));
        }
        if !self.lambda.is_multiple_of(8) || !(80..=128).contains(&self.lambda) {
            return bad(format!(
                "lambda must be a multiple of 8 in [80, 128], got {}",
                self.lambda
            ));
        }
        Ok(())
    }

    /// Payload bytes per block.
    pub fn payload_len(&self) -> usize {
        self.n - 2
    }

    pub fn nonce_len(&self) -> usize {
        self.lambda / 8
    }
}

/// A vector in F_q^{n+m}. Source blocks carry a unit coefficient vector.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodedBlock {
    n: usize,
    symbols: SymbolVector,
}

impl std::fmt::Debug for CodedBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CodedBlock")
            .field("n", &self.n)
            .field("coeffs", &self.coeffs())
            .finish_non_exhaustive()
    }
}

impl CodedBlock {
    pub fn from_parts(data: &[Gf256], coeffs: &[Gf256]) -> Self {
        CodedBlock {
            n: data.len(),
            symbols: SymbolVector::concat(&[data, coeffs]),
        }
    }

    pub fn from_symbols(n: usize, symbols: SymbolVector) -> Self {
        assert!(symbols.len() >= n, "block shorter than its data segment");
        CodedBlock { n, symbols }
    }

    pub fn zero(n: usize, m: usize) -> Self {
        CodedBlock {
            n,
            symbols: SymbolVector::zeros(n + m),
        }
    }

    /// Source block `index` (0-based) of `m`: payload, padding, unit coefficients.
    pub fn source(payload: &[Gf256], padding: [Gf256; 2], index: usize, m: usize) -> Self {
        let mut data = payload.to_vec();
        data.extend_from_slice(&padding);
        let coeffs = SymbolVector::unit(m, index);
        Self::from_parts(&data, coeffs.as_slice())
    }

    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Self {
        CodedBlock {
            n,
            symbols: SymbolVector::random(n + m, rng),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.symbols.len() - self.n
    }

    /// The full `n + m` vector.
    pub fn symbols(&self) -> &SymbolVector {
        &self.symbols
    }

    pub fn symbols_mut(&mut self) -> &mut SymbolVector {
        &mut self.symbols
    }

    /// The first `n` symbols (payload and padding).
    pub fn data(&self) -> &[Gf256] {
        &self.symbols.as_slice()[..self.n]
    }

    pub fn data_mut(&mut self) -> &mut [Gf256] {
        let n = self.n;
        &mut self.symbols.as_mut_slice()[..n]
    }

    /// The first `n − 2` symbols.
    pub fn payload(&self) -> &[Gf256] {
        &self.symbols.as_slice()[..self.n - 2]
    }

    pub fn padding(&self) -> [Gf256; 2] {
        [self.symbols[self.n - 2], self.symbols[self.n - 1]]
    }

    /// The augmentation: the last `m` symbols.
    pub fn coeffs(&self) -> SymbolVector {
        self.symbols.as_slice()[self.n..].iter().copied().collect()
    }

    /// Appends zero coefficient coordinates (a new source block was added).
    pub fn extend_coeffs(&mut self, extra: usize) {
        self.symbols.extend_zeros(extra);
    }

    fn check_dims(&self, other: &CodedBlock) -> Result<(), BlockError> {
        if self.n != other.n || self.m() != other.m() {
            return Err(BlockError::Dimension {
                n: self.n,
                m: self.m(),
                got_n: other.n,
                got_m: other.m(),
            });
        }
        Ok(())
    }

    /// `NCAB ‖ version ‖ u32be(n) ‖ u32be(m) ‖ symbols`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.symbols.len());
        out.extend_from_slice(BLOCK_MAGIC);
        out.push(BLOCK_VERSION);
        put_u32(&mut out, self.n as u32);
        put_u32(&mut out, self.m() as u32);
        out.extend_from_slice(&self.symbols.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BlockError> {
        let mut r = Reader::new(bytes);
        let block = Self::read(&mut r)?;
        r.finish()?;
        Ok(block)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, BlockError> {
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &magic != BLOCK_MAGIC {
            return Err(WireError::BadMagic(magic).into());
        }
        let version = r.u8()?;
        if version != BLOCK_VERSION {
            return Err(WireError::BadVersion(version).into());
        }
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        let symbols = SymbolVector::from_bytes(r.take(n + m)?);
        Ok(CodedBlock { n, symbols })
    }
}

/// Splits `file` into `m` source blocks with random padding.
/// Returns the blocks and the original file length.
pub fn make_source_blocks<R: Rng + ?Sized>(
    file: &[u8],
    params: &SystemParams,
    rng: &mut R,
) -> Result<(Vec<CodedBlock>, u64), BlockError> {
    params.validate()?;
    let cap = params.payload_len();
    if file.len() > params.m * cap {
        return Err(BlockError::FileTooLarge {
            len: file.len(),
            m: params.m,
            cap,
        });
    }
    let blocks = (0..params.m)
        .map(|i| {
            let start = (i * cap).min(file.len());
            let end = ((i + 1) * cap).min(file.len());
            let mut payload = SymbolVector::from_bytes(&file[start..end]).into_inner();
            payload.resize(cap, Gf256::ZERO);
            let padding = [Gf256(rng.gen()), Gf256(rng.gen())];
            CodedBlock::source(&payload, padding, i, params.m)
        })
        .collect();
    Ok((blocks, file.len() as u64))
}

/// Payload length of each source block for a file of `file_len` bytes.
pub fn payload_lengths(file_len: u64, params: &SystemParams) -> Vec<u32> {
    let cap = params.payload_len() as u64;
    (0..params.m as u64)
        .map(|i| file_len.saturating_sub(i * cap).min(cap) as u32)
        .collect()
}

/// `Σ α_i · block_i` over all `n + m` coordinates.
pub fn combine_blocks(blocks: &[&CodedBlock], alphas: &[Gf256]) -> Result<CodedBlock, BlockError> {
    if blocks.len() != alphas.len() {
        return Err(BlockError::CoefficientCount {
            blocks: blocks.len(),
            alphas: alphas.len(),
        });
    }
    let first = blocks
        .first()
        .ok_or(BlockError::CoefficientCount { blocks: 0, alphas: 0 })?;
    let mut out = CodedBlock::zero(first.n, first.m());
    for (b, a) in blocks.iter().zip(alphas) {
        first.check_dims(b)?;
        out.symbols.axpy(*a, &b.symbols)?;
    }
    Ok(out)
}

/// Recovers the `m` source blocks from coded blocks whose coefficients span F_q^m.
pub fn decode_sources(blocks: &[&CodedBlock], m: usize) -> Result<Vec<CodedBlock>, BlockError> {
    let Some(first) = blocks.first() else {
        return Err(BlockError::Undecodable { rank: 0, m });
    };
    let n = first.n;
    for b in blocks {
        if b.m() != m || b.n != n {
            return Err(BlockError::Dimension {
                n,
                m,
                got_n: b.n,
                got_m: b.m(),
            });
        }
    }
    let a: Vec<SymbolVector> = blocks.iter().map(|b| b.coeffs()).collect();
    let d: Vec<SymbolVector> = blocks.iter().map(|b| b.data().iter().copied().collect()).collect();
    match linalg::gaussian_solve(&a, &d)? {
        Solution::Unique(x) => Ok(x
            .iter()
            .enumerate()
            .map(|(i, data)| CodedBlock::from_parts(data.as_slice(), SymbolVector::unit(m, i).as_slice()))
            .collect()),
        Solution::RankDeficient { rank, .. } => Err(BlockError::Undecodable { rank, m }),
        Solution::Inconsistent { rank } if rank < m => Err(BlockError::Undecodable { rank, m }),
        Solution::Inconsistent { .. } => Err(BlockError::Inconsistent),
    }
}

/// Reassembles the file bytes from coded blocks, following the manifest's
/// logical block order and payload lengths.
pub fn decode_file(blocks: &[&CodedBlock], manifest: &FileManifest) -> Result<Vec<u8>, BlockError> {
    let sources = decode_sources(blocks, manifest.params.m)?;
    let mut out = Vec::with_capacity(manifest.file_len as usize);
    for physical in manifest.mapping.live() {
        let len = manifest.payload_lens[physical as usize] as usize;
        out.extend(sources[physical as usize].payload()[..len].iter().map(|s| s.0));
    }
    Ok(out)
}

/// Per-node coefficient rows of a coding scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeLayout {
    pub rows: Vec<Vec<SymbolVector>>,
}

impl CodeLayout {
    /// The four-node EVENODD layout:
    /// `b1, b2 | b3, b4 | b1+b3, b2+b4 | b2+b3, b1+b2+b4`.
    pub fn evenodd4() -> Self {
        let r = |bits: [u8; 4]| SymbolVector::from_bytes(&bits);
        CodeLayout {
            rows: vec![
                vec![r([1, 0, 0, 0]), r([0, 1, 0, 0])],
                vec![r([0, 0, 1, 0]), r([0, 0, 0, 1])],
                vec![r([1, 0, 1, 0]), r([0, 1, 0, 1])],
                vec![r([0, 1, 1, 0]), r([1, 1, 0, 1])],
            ],
        }
    }

    /// Random coefficients, redrawn until every set of `ceil(m / M)` nodes
    /// spans F_q^m (or, past the retry budget, until all nodes together do).
    pub fn random_functional<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> Result<Self, BlockError> {
        params.validate()?;
        let k = params.m.div_ceil(params.blocks_per_node);
        for attempt in 0..64 {
            let rows: Vec<Vec<SymbolVector>> = (0..params.nodes)
                .map(|_| {
                    (0..params.blocks_per_node)
                        .map(|_| SymbolVector::random(params.m, rng))
                        .collect()
                })
                .collect();
            let layout = CodeLayout { rows };
            let ok = if attempt < 48 && params.nodes <= 16 {
                subsets_of_size(params.nodes, k).all(|s| layout.rank_of(&s) == params.m)
            } else {
                layout.rank_of(&(0..params.nodes).collect::<Vec<_>>()) == params.m
            };
            if ok {
                return Ok(layout);
            }
        }
        Err(BlockError::Layout("could not draw a decodable random layout".into()))
    }

    pub fn validate(&self, params: &SystemParams) -> Result<(), BlockError> {
        if self.rows.len() != params.nodes {
            return Err(BlockError::Layout(format!(
                "{} nodes in layout, {} in params",
                self.rows.len(),
                params.nodes
            )));
        }
        for (i, node) in self.rows.iter().enumerate() {
            if node.len() != params.blocks_per_node {
                return Err(BlockError::Layout(format!("node {i} holds {} blocks", node.len())));
            }
            if node.iter().any(|r| r.len() != params.m) {
                return Err(BlockError::Layout(format!("node {i} has a row of wrong length")));
            }
        }
        Ok(())
    }

    pub fn rank_of(&self, nodes: &[usize]) -> usize {
        let rows: Vec<SymbolVector> = nodes.iter().flat_map(|&i| self.rows[i].iter().cloned()).collect();
        linalg::rank(&rows)
    }
}

/// All `k`-element subsets of `0..n` in lexicographic order.
pub fn subsets_of_size(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut state: Option<Vec<usize>> = if k <= n { Some((0..k).collect()) } else { None };
    std::iter::from_fn(move || {
        let current = state.clone()?;
        // advance
        let mut next = current.clone();
        let mut i = k;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if next[i] < n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        state = if advanced { Some(next) } else { None };
        Some(current)
    })
}

/// What the user and the auditor retain about a stored file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileManifest {
    pub file_id: String,
    pub params: SystemParams,
    /// Original file length, used to strip zero fill.
    pub file_len: u64,
    /// `node_coeffs[node][k]` is `aug(e_k)` for block `k` of `node`.
    pub node_coeffs: Vec<Vec<SymbolVector>>,
    /// Payload bytes carried by each source block.
    pub payload_lens: Vec<u32>,
    pub mapping: IndexMapping,
    #[serde(default)]
    pub deltas: Vec<UpdateDelta>,
}

impl FileManifest {
    pub fn new(file_id: impl Into<String>, params: SystemParams, file_len: u64, layout: &CodeLayout) -> Self {
        FileManifest {
            file_id: file_id.into(),
            params,
            file_len,
            node_coeffs: layout.rows.clone(),
            payload_lens: payload_lengths(file_len, &params),
            mapping: IndexMapping::identity(params.m),
            deltas: Vec::new(),
        }
    }

    pub fn coeffs(&self, node: usize, block: usize) -> Option<&SymbolVector> {
        self.node_coeffs.get(node)?.get(block)
    }

    pub fn blocks_at(&self, node: usize) -> usize {
        self.node_coeffs.get(node).map_or(0, |b| b.len())
    }

    /// Number of coefficient symbols held (N·M·m for a fresh manifest).
    pub fn coefficient_symbols(&self) -> usize {
        self.node_coeffs.iter().flatten().map(|r| r.len()).sum()
    }

    pub fn rank_of(&self, nodes: &[usize]) -> usize {
        let rows: Vec<SymbolVector> = nodes
            .iter()
            .flat_map(|&i| self.node_coeffs[i].iter().cloned())
            .collect();
        linalg::rank(&rows)
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, BlockError> {
        serde_json::from_str(text).map_err(|e| BlockError::Wire(WireError::Invalid(e.to_string())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(n: usize, m: usize) -> SystemParams {
        SystemParams {
            q: 256,
            n,
            m,
            nodes: m,
            blocks_per_node: 1,
            helpers: 1,
            repair_blocks: 1,
            ell: 1,
            lambda: 128,
        }
    }

    fn manifest_for(p: SystemParams, len: u64) -> FileManifest {
        let layout = CodeLayout {
            rows: (0..p.m).map(|i| vec![SymbolVector::unit(p.m, i)]).collect(),
        };
        FileManifest::new("f", p, len, &layout)
    }

    #[test]
    fn empty_file_zero_fills() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (blocks, len) = make_source_blocks(b"", &params(4, 2), &mut rng).unwrap();
        assert_eq!(len, 0);
        assert_eq!(blocks.len(), 2);
        for (i, b) in blocks.iter().enumerate() {
            assert!(b.payload().iter().all(|s| s.is_zero()));
            assert_eq!(b.coeffs(), SymbolVector::unit(2, i));
        }
    }

    #[test]
    fn abc_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (blocks, _) = make_source_blocks(b"abc", &params(4, 2), &mut rng).unwrap();
        assert_eq!(&blocks[0].data()[..2], &[Gf256(0x61), Gf256(0x62)]);
        assert_eq!(&blocks[1].data()[..2], &[Gf256(0x63), Gf256(0x00)]);
        assert_eq!(blocks[0].coeffs().to_bytes(), vec![1, 0]);
        assert_eq!(blocks[1].coeffs().to_bytes(), vec![0, 1]);
        assert_eq!(blocks[0].n(), 4);
    }

    #[test]
    fn oversized_file_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = make_source_blocks(b"abcde", &params(4, 2), &mut rng).unwrap_err();
        assert!(matches!(err, BlockError::FileTooLarge { len: 5, m: 2, cap: 2 }));
    }

    #[test]
    fn exact_fit_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = params(6, 3);
        let file = b"abcdefghijkl";
        let (blocks, len) = make_source_blocks(file, &p, &mut rng).unwrap();
        let m = manifest_for(p, len);
        let refs: Vec<&CodedBlock> = blocks.iter().collect();
        assert_eq!(decode_file(&refs, &m).unwrap(), file.to_vec());
    }

    #[test]
    fn combine_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (blocks, _) = make_source_blocks(b"hello world!", &params(8, 3), &mut rng).unwrap();
        let one = combine_blocks(&[&blocks[0]], &[Gf256::ONE]).unwrap();
        assert_eq!(one, blocks[0]);
        let sum = combine_blocks(&[&blocks[0], &blocks[1]], &[Gf256::ONE, Gf256::ONE]).unwrap();
        assert_eq!(sum.coeffs().to_bytes(), vec![1, 1, 0]);

        let alphas = [Gf256(7), Gf256(0x80), Gf256(0x1F)];
        let refs: Vec<&CodedBlock> = blocks.iter().collect();
        let c = combine_blocks(&refs, &alphas).unwrap();
        assert_eq!(c.coeffs().as_slice(), &alphas);
        // independent per-coordinate recomputation
        for pos in 0..c.symbols().len() {
            let expect: Gf256 = (0..3).map(|i| alphas[i] * blocks[i].symbols()[pos]).sum();
            assert_eq!(c.symbols()[pos], expect);
        }
    }

    #[test]
    fn combine_rejects_mismatch() {
        let a = CodedBlock::zero(4, 2);
        let b = CodedBlock::zero(4, 3);
        assert!(matches!(
            combine_blocks(&[&a, &b], &[Gf256::ONE, Gf256::ONE]),
            Err(BlockError::Dimension { .. })
        ));
        assert!(matches!(
            combine_blocks(&[&a], &[Gf256::ONE, Gf256::ONE]),
            Err(BlockError::CoefficientCount { .. })
        ));
    }

    #[test]
    fn undecodable_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = params(6, 3);
        let (blocks, len) = make_source_blocks(b"xyz", &p, &mut rng).unwrap();
        let m = manifest_for(p, len);
        let err = decode_file(&[&blocks[0], &blocks[1]], &m).unwrap_err();
        assert!(matches!(err, BlockError::Undecodable { rank: 2, m: 3 }));
    }

    #[test]
    fn evenodd_nodes_three_and_four_decode() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = SystemParams::evenodd4(10, 1);
        let file: Vec<u8> = (0..32u8).collect();
        let (sources, len) = make_source_blocks(&file, &p, &mut rng).unwrap();
        let layout = CodeLayout::evenodd4();
        let manifest = FileManifest::new("f", p, len, &layout);
        let src: Vec<&CodedBlock> = sources.iter().collect();
        let coded: Vec<CodedBlock> = layout.rows[2]
            .iter()
            .chain(&layout.rows[3])
            .map(|r| combine_blocks(&src, r.as_slice()).unwrap())
            .collect();
        let refs: Vec<&CodedBlock> = coded.iter().collect();
        let recovered = decode_sources(&refs, 4).unwrap();
        assert_eq!(recovered, sources);
        assert_eq!(decode_file(&refs, &manifest).unwrap(), file);
    }

    #[test]
    fn block_wire_format() {
        let b = CodedBlock::from_parts(&[Gf256(1), Gf256(2), Gf256(3), Gf256(4)], &[Gf256(9)]);
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..5], b"NCAB\x01");
        assert_eq!(&bytes[5..13], &[0, 0, 0, 4, 0, 0, 0, 1]);
        assert_eq!(&bytes[13..], &[1, 2, 3, 4, 9]);
        assert_eq!(CodedBlock::from_bytes(&bytes).unwrap(), b);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(CodedBlock::from_bytes(&bad).is_err());
        assert!(CodedBlock::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let p = SystemParams::evenodd4(16, 2);
        let m = FileManifest::new("file-1", p, 20, &CodeLayout::evenodd4());
        assert_eq!(m.coefficient_symbols(), 4 * 2 * 4);
        let text = m.to_text();
        let file_id_at = text.find("file_id").unwrap();
        let params_at = text.find("params").unwrap();
        let coeffs_at = text.find("node_coeffs").unwrap();
        assert!(file_id_at < params_at && params_at < coeffs_at);
        assert_eq!(FileManifest::from_text(&text).unwrap(), m);
    }

    #[test]
    fn subsets_enumerate() {
        let all: Vec<_> = subsets_of_size(4, 2).collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 1]);
        assert_eq!(all[5], vec![2, 3]);
        assert_eq!(subsets_of_size(3, 0).count(), 1);
        assert_eq!(subsets_of_size(2, 3).count(), 0);
    }

    proptest! {
        #[test]
        fn combine_is_linear(seed: u64, a in proptest::collection::vec(any::<u8>(), 3), b in proptest::collection::vec(any::<u8>(), 3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blocks: Vec<CodedBlock> = (0..3).map(|_| CodedBlock::random(6, 3, &mut rng)).collect();
            let refs: Vec<&CodedBlock> = blocks.iter().collect();
            let a: Vec<Gf256> = a.into_iter().map(Gf256).collect();
            let b: Vec<Gf256> = b.into_iter().map(Gf256).collect();
            let ab: Vec<Gf256> = a.iter().zip(&b).map(|(x, y)| *x + *y).collect();
            let mut lhs = combine_blocks(&refs, &a).unwrap();
            lhs.symbols_mut().add_assign(combine_blocks(&refs, &b).unwrap().symbols()).unwrap();
            prop_assert_eq!(lhs, combine_blocks(&refs, &ab).unwrap());
        }

        #[test]
        fn full_rank_combinations_decode(seed: u64, len in 0usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = params(12, 4);
            let file: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let (sources, flen) = make_source_blocks(&file, &p, &mut rng).unwrap();
            let manifest = manifest_for(p, flen);
            let src: Vec<&CodedBlock> = sources.iter().collect();
            let coded: Vec<CodedBlock> = loop {
                let rows: Vec<SymbolVector> = (0..4).map(|_| SymbolVector::random(4, &mut rng)).collect();
                if linalg::rank(&rows) == 4 {
                    break rows.iter().map(|r| combine_blocks(&src, r.as_slice()).unwrap()).collect();
                }
            };
            let refs: Vec<&CodedBlock> = coded.iter().collect();
            prop_assert_eq!(decode_file(&refs, &manifest).unwrap(), file);
        }
    }
}

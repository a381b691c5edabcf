//! Homomorphic MAC over F_q^{n+m} with ℓ parallel tags.
//!
//! Tag `j` of a vector `e` is `e · r_j`, where `r_j` is derived from the
//! verification key under key index `j`. Tags of linear combinations are the
//! same linear combinations of tags, which is what lets storage nodes and
//! repair helpers produce valid tags without the key.

use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::CodedBlock;
use crate::field::{dot_slices, Gf256, SymbolVector};
use crate::prf::{derive_r_vector, PrfError, PrfKey};

#[derive(Debug, Error)]
pub enum MacError {
    #[error("tag length mismatch: expected {expected}, got {got}")]
    TagLength { expected: usize, got: usize },
    #[error("vector of length {got} exceeds the supported length")]
    Dimension { got: usize },
    #[error("{blocks} entries but {alphas} coefficients")]
    CoefficientCount { blocks: usize, alphas: usize },
    #[error(transparent)]
    Prf(#[from] PrfError),
}

/// ℓ tags, in key-index order. Serialized as ℓ raw bytes.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagVector(SymbolVector);

impl std::fmt::Debug for TagVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TagVector({})", crate::wire::to_hex(&self.0.to_bytes()))
    }
}

impl TagVector {
    pub fn zeros(ell: usize) -> Self {
        TagVector(SymbolVector::zeros(ell))
    }

    pub fn from_symbols(tags: SymbolVector) -> Self {
        TagVector(tags)
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        TagVector(SymbolVector::from_bytes(bytes))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    pub fn ell(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, j: usize) -> Gf256 {
        self.0[j]
    }

    pub fn symbols(&self) -> &SymbolVector {
        &self.0
    }

    pub fn symbols_mut(&mut self) -> &mut SymbolVector {
        &mut self.0
    }

    /// Component-wise sum.
    pub fn plus(&self, other: &TagVector) -> Result<TagVector, MacError> {
        self.check(other.ell())?;
        let mut out = self.clone();
        out.0.add_assign(&other.0).expect("lengths checked");
        Ok(out)
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: Gf256, other: &TagVector) -> Result<(), MacError> {
        self.check(other.ell())?;
        self.0.axpy(alpha, &other.0).expect("lengths checked");
        Ok(())
    }

    fn check(&self, got: usize) -> Result<(), MacError> {
        if got != self.ell() {
            return Err(MacError::TagLength {
                expected: self.ell(),
                got,
            });
        }
        Ok(())
    }
}

/// MAC state for one `(k_v, file_id)` pair. The r-vectors are derived on first
/// use and cached; later calls on longer vectors extend the cache, which is
/// sound because derivation is prefix-stable.
pub struct SpaceMac {
    key: PrfKey,
    file_id: String,
    ell: usize,
    r: RwLock<Vec<SymbolVector>>,
}

impl std::fmt::Debug for SpaceMac {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpaceMac")
            .field("file_id", &self.file_id)
            .field("ell", &self.ell)
            .finish_non_exhaustive()
    }
}

impl SpaceMac {
    pub fn new(k_v: &PrfKey, file_id: &str, ell: usize) -> Self {
        SpaceMac {
            key: k_v.clone(),
            file_id: file_id.to_string(),
            ell,
            r: RwLock::new(Vec::new()),
        }
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn file_id(&self) -> &str {
        &self.file_id
    }

    /// `r_j` (0-based `j`) truncated to `len` entries.
    pub fn r_vector(&self, j: usize, len: usize) -> Result<SymbolVector, MacError> {
        self.with_r(len, |r| r[j].as_slice()[..len].iter().copied().collect())
    }

    fn with_r<T>(&self, len: usize, f: impl FnOnce(&[SymbolVector]) -> T) -> Result<T, MacError> {
        if u32::try_from(len).is_err() {
            return Err(MacError::Dimension { got: len });
        }
        {
            let r = self.r.read().expect("r cache poisoned");
            if r.first().is_some_and(|v| v.len() >= len) {
                return Ok(f(&r));
            }
        }
        let mut r = self.r.write().expect("r cache poisoned");
        if !r.first().is_some_and(|v| v.len() >= len) {
            let fresh = (1..=self.ell as u32)
                .map(|j| derive_r_vector(&self.key, &self.file_id, j, len.max(1)))
                .collect::<Result<Vec<_>, _>>()?;
            *r = fresh;
        }
        Ok(f(&r))
    }

    /// Tags of an arbitrary symbol vector.
    pub fn mac_symbols(&self, symbols: &[Gf256]) -> Result<TagVector, MacError> {
        self.with_r(symbols.len(), |r| {
            TagVector(
                r.iter()
                    .map(|rj| dot_slices(symbols, &rj.as_slice()[..symbols.len()]))
                    .collect(),
            )
        })
    }

    pub fn mac(&self, block: &CodedBlock) -> Result<TagVector, MacError> {
        self.mac_symbols(block.symbols().as_slice())
    }

    /// Whether every tag equals the corresponding dot product.
    pub fn verify_symbols(&self, symbols: &[Gf256], tag: &TagVector) -> Result<bool, MacError> {
        if tag.ell() != self.ell {
            return Err(MacError::TagLength {
                expected: self.ell,
                got: tag.ell(),
            });
        }
        self.with_r(symbols.len(), |r| {
            r.iter()
                .zip(tag.0.iter())
                .all(|(rj, t)| dot_slices(symbols, &rj.as_slice()[..symbols.len()]) == *t)
        })
    }

    pub fn verify(&self, block: &CodedBlock, tag: &TagVector) -> Result<bool, MacError> {
        self.verify_symbols(block.symbols().as_slice(), tag)
    }
}

/// `Σ α_i · t_i`. Blocks are part of the signature for symmetry with the
/// block combiner; only tags and coefficients are read.
pub fn combine_tags(entries: &[(&CodedBlock, &TagVector, Gf256)]) -> Result<TagVector, MacError> {
    let tags: Vec<&TagVector> = entries.iter().map(|(_, t, _)| *t).collect();
    let alphas: Vec<Gf256> = entries.iter().map(|(_, _, a)| *a).collect();
    combine_tag_list(&tags, &alphas)
}

/// `Σ α_i · t_i` without the accompanying blocks.
pub fn combine_tag_list(tags: &[&TagVector], alphas: &[Gf256]) -> Result<TagVector, MacError> {
    if tags.len() != alphas.len() {
        return Err(MacError::CoefficientCount {
            blocks: tags.len(),
            alphas: alphas.len(),
        });
    }
    let Some(first) = tags.first() else {
        return Err(MacError::CoefficientCount { blocks: 0, alphas: 0 });
    };
    let mut acc = TagVector::zeros(first.ell());
    for (t, a) in tags.iter().zip(alphas) {
        acc.axpy(*a, t)?;
    }
    Ok(acc)
}

pub fn mac(k_v: &PrfKey, file_id: &str, ell: usize, block: &CodedBlock) -> Result<TagVector, MacError> {
    SpaceMac::new(k_v, file_id, ell).mac(block)
}

pub fn verify(k_v: &PrfKey, file_id: &str, block: &CodedBlock, tag: &TagVector) -> Result<bool, MacError> {
    SpaceMac::new(k_v, file_id, tag.ell()).verify(block, tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::combine_blocks;
    use crate::field::dot;
    use crate::prf::PrfMode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn key(seed: u64) -> PrfKey {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        PrfKey::generate(128, PrfMode::Production, &mut rng).unwrap()
    }

    #[test]
    fn zero_block_has_zero_tags() {
        let mac = SpaceMac::new(&key(1), "f", 3);
        let t = mac.mac(&CodedBlock::zero(6, 2)).unwrap();
        assert_eq!(t, TagVector::zeros(3));
    }

    #[test]
    fn unit_vector_projects_r() {
        let k = key(2);
        let mac = SpaceMac::new(&k, "f", 2);
        let unit = CodedBlock::from_symbols(6, SymbolVector::unit(8, 5));
        let t = mac.mac(&unit).unwrap();
        for j in 0..2 {
            let r = derive_r_vector(&k, "f", j as u32 + 1, 8).unwrap();
            assert_eq!(t.get(j), r[5]);
        }
    }

    #[test]
    fn tags_match_direct_dot_products() {
        let k = key(3);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let block = CodedBlock::random(10, 4, &mut rng);
        let t = mac(&k, "file", 2, &block).unwrap();
        for j in 0..2 {
            let r = derive_r_vector(&k, "file", j as u32 + 1, 14).unwrap();
            assert_eq!(t.get(j), dot(block.symbols(), &r).unwrap());
        }
    }

    #[test]
    fn combine_examples() {
        let b = CodedBlock::zero(4, 1);
        let t = TagVector::from_bytes(&[9, 200]);
        assert_eq!(combine_tags(&[(&b, &t, Gf256::ONE)]).unwrap(), t);
        let u = TagVector::from_bytes(&[1, 2]);
        assert_eq!(
            combine_tags(&[(&b, &t, Gf256::ZERO), (&b, &u, Gf256::ZERO)]).unwrap(),
            TagVector::zeros(2)
        );
        let t3 = TagVector::from_bytes(&[3]);
        let t5 = TagVector::from_bytes(&[5]);
        let c = combine_tags(&[(&b, &t3, Gf256(2)), (&b, &t5, Gf256(4))]).unwrap();
        assert_eq!(c.to_bytes(), vec![0x12]);
        let short = TagVector::from_bytes(&[1]);
        assert!(matches!(
            combine_tags(&[(&b, &t, Gf256::ONE), (&b, &short, Gf256::ONE)]),
            Err(MacError::TagLength { .. })
        ));
    }

    #[test]
    fn flipped_tag_rejected() {
        let mac = SpaceMac::new(&key(4), "f", 3);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let block = CodedBlock::random(8, 3, &mut rng);
        let mut t = mac.mac(&block).unwrap();
        assert!(mac.verify(&block, &t).unwrap());
        t.symbols_mut()[1] += Gf256(0x40);
        assert!(!mac.verify(&block, &t).unwrap());
    }

    #[test]
    fn cache_grows_consistently() {
        let k = key(5);
        let mac = SpaceMac::new(&k, "f", 2);
        let short = mac.r_vector(1, 4).unwrap();
        let long = mac.r_vector(1, 20).unwrap();
        assert_eq!(short.as_slice(), &long.as_slice()[..4]);
        assert_eq!(mac.r_vector(1, 4).unwrap(), short);
    }

    #[test]
    fn concurrent_readers_agree() {
        let mac = SpaceMac::new(&key(6), "f", 4);
        let block = CodedBlock::from_symbols(30, SymbolVector::from_bytes(&[7u8; 32]));
        let tags: Vec<TagVector> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..8).map(|_| s.spawn(|| mac.mac(&block).unwrap())).collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(tags.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn single_symbol_corruption_always_caught_with_ten_tags() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mac = SpaceMac::new(&key(7), "f", 10);
        for _ in 0..10_000 {
            let mut block = CodedBlock::random(16, 4, &mut rng);
            let t = mac.mac(&block).unwrap();
            let pos = rng.gen_range(0..20);
            block.symbols_mut()[pos] += Gf256(rng.gen_range(1..=255));
            assert!(!mac.verify(&block, &t).unwrap());
        }
    }

    proptest! {
        #[test]
        fn homomorphic(seed: u64, count in 1usize..6, ell in 1usize..4) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mac = SpaceMac::new(&key(seed), "prop", ell);
            let blocks: Vec<CodedBlock> = (0..count).map(|_| CodedBlock::random(9, 3, &mut rng)).collect();
            let tags: Vec<TagVector> = blocks.iter().map(|b| mac.mac(b).unwrap()).collect();
            let alphas: Vec<Gf256> = (0..count).map(|_| Gf256(rng.gen())).collect();
            let refs: Vec<&CodedBlock> = blocks.iter().collect();
            let combined = combine_blocks(&refs, &alphas).unwrap();
            let entries: Vec<_> = blocks.iter().zip(&tags).zip(&alphas).map(|((b, t), a)| (b, t, *a)).collect();
            let tag = combine_tags(&entries).unwrap();
            prop_assert!(mac.verify(&combined, &tag).unwrap());
        }
    }
}

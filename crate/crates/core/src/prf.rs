//! Keyed pseudorandom functions with domain separation.
//!
//! Three functions are derived from one primitive by a function-id byte:
//!
//! * `MacVector` yields the SpaceMac secret vector entries,
//! * `MaskBasis` yields the masking basis vectors,
//! * `MaskCoefficient` yields the per-nonce masking coefficients.
//!
//! The encoded domain is `function_id ‖ u32be(len(file_id)) ‖ file_id ‖ [u32be(len(nonce)) ‖ nonce] ‖ u32be(index)*`.
//! Production mode runs SipHash-2-4 keyed with the 128-bit key. Test mode is a
//! splitmix64 chain that is trivial to reproduce byte-for-byte elsewhere; it is
//! selected with `NCAUDIT_TEST_PRF=1` or explicitly through [`PrfMode::Test`].

use std::hash::Hasher;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher24;
use thiserror::Error;

use crate::field::{Gf256, SymbolVector};

pub const TEST_PRF_ENV: &str = "NCAUDIT_TEST_PRF";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrfError {
    #[error("{function:?} index {position} is {value}, outside [1, {max}]")]
    IndexOutOfRange {
        function: PrfFunction,
        position: usize,
        value: u32,
        max: u32,
    },
    #[error("derived vector length must be at least 1")]
    EmptyLength,
    #[error("key must be between 80 and 128 bits, got {0}")]
    KeyLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrfMode {
    #[default]
    Production,
    Test,
}

impl PrfMode {
    /// Test mode iff `NCAUDIT_TEST_PRF=1`.
    pub fn from_env() -> Self {
        match std::env::var(TEST_PRF_ENV) {
            Ok(v) if v == "1" => PrfMode::Test,
            _ => PrfMode::Production,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrfKey {
    #[serde(with = "hex_bytes")]
    bytes: Vec<u8>,
    mode: PrfMode,
}

impl std::fmt::Debug for PrfKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PrfKey({} bits, {:?})", self.bytes.len() * 8, self.mode)
    }
}

impl PrfKey {
    pub fn from_bytes(bytes: Vec<u8>, mode: PrfMode) -> Result<Self, PrfError> {
        if !(10..=16).contains(&bytes.len()) {
            return Err(PrfError::KeyLength(bytes.len() * 8));
        }
        Ok(PrfKey { bytes, mode })
    }

    pub fn generate<R: RngCore + CryptoRng + ?Sized>(
        bits: usize,
        mode: PrfMode,
        rng: &mut R,
    ) -> Result<Self, PrfError> {
        if !bits.is_multiple_of(8) {
            return Err(PrfError::KeyLength(bits));
        }
        let mut bytes = vec![0u8; bits / 8];
        rng.fill_bytes(&mut bytes);
        Self::from_bytes(bytes, mode)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bits(&self) -> usize {
        self.bytes.len() * 8
    }

    pub fn mode(&self) -> PrfMode {
        self.mode
    }

    fn eval_encoded(&self, encoded: &[u8]) -> u8 {
        match self.mode {
            PrfMode::Production => {
                let mut k = [0u8; 16];
                k[..self.bytes.len()].copy_from_slice(&self.bytes);
                let k0 = u64::from_le_bytes(k[..8].try_into().unwrap());
                let k1 = u64::from_le_bytes(k[8..].try_into().unwrap());
                let mut h = SipHasher24::new_with_keys(k0, k1);
                h.write(encoded);
                h.finish() as u8
            }
            PrfMode::Test => splitmix_prf(&self.bytes, encoded),
        }
    }
}

fn splitmix_mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The pinned test instantiation. Seed is the XOR of the first and last eight
/// key bytes read as little-endian words.
fn splitmix_prf(key: &[u8], encoded: &[u8]) -> u8 {
    let head = u64::from_le_bytes(key[..8].try_into().unwrap());
    let tail = u64::from_le_bytes(key[key.len() - 8..].try_into().unwrap());
    let mut state = head ^ tail;
    for &b in encoded {
        state = splitmix_mix(state ^ (b as u64).wrapping_mul(GOLDEN_GAMMA));
    }
    state as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrfFunction {
    /// F1: SpaceMac vector entries, indexed by (key index, position).
    MacVector,
    /// F2: masking basis entries, indexed by (basis vector, coordinate).
    MaskBasis,
    /// F3: masking coefficients, indexed by (nonce, basis vector).
    MaskCoefficient,
}

impl PrfFunction {
    pub fn id(self) -> u8 {
        match self {
            PrfFunction::MacVector => 1,
            PrfFunction::MaskBasis => 2,
            PrfFunction::MaskCoefficient => 3,
        }
    }
}

/// A fully specified PRF input. Indices are 1-based and each carries the
/// inclusive upper bound it was declared with.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PrfDomain {
    function: PrfFunction,
    file_id: Vec<u8>,
    nonce: Option<Vec<u8>>,
    indices: Vec<(u32, u32)>,
}

impl PrfDomain {
    /// Raw constructor; `indices` holds `(value, max)` pairs.
    pub fn new(
        function: PrfFunction,
        file_id: impl AsRef<[u8]>,
        nonce: Option<Vec<u8>>,
        indices: Vec<(u32, u32)>,
    ) -> Self {
        PrfDomain {
            function,
            file_id: file_id.as_ref().to_vec(),
            nonce,
            indices,
        }
    }

    /// F1 at `position` of the vector for `key_index`.
    pub fn mac_vector(file_id: impl AsRef<[u8]>, key_index: u32, ell: u32, position: u32, len: u32) -> Self {
        Self::new(
            PrfFunction::MacVector,
            file_id,
            None,
            vec![(key_index, ell), (position, len)],
        )
    }

    /// F2 at `(i, j)`, `i ∈ [1, n−1]`, `j ∈ [1, n−2]`.
    pub fn mask_basis(file_id: impl AsRef<[u8]>, i: u32, j: u32, n: u32) -> Self {
        Self::new(
            PrfFunction::MaskBasis,
            file_id,
            None,
            vec![(i, n.saturating_sub(1)), (j, n.saturating_sub(2))],
        )
    }

    /// F3 at `(nonce, i)`, `i ∈ [1, n−1]`.
    pub fn mask_coefficient(file_id: impl AsRef<[u8]>, nonce: &[u8], i: u32, n: u32) -> Self {
        Self::new(
            PrfFunction::MaskCoefficient,
            file_id,
            Some(nonce.to_vec()),
            vec![(i, n.saturating_sub(1))],
        )
    }

    pub fn function(&self) -> PrfFunction {
        self.function
    }

    pub fn validate(&self) -> Result<(), PrfError> {
        for (position, &(value, max)) in self.indices.iter().enumerate() {
            if value == 0 || value > max {
                return Err(PrfError::IndexOutOfRange {
                    function: self.function,
                    position,
                    value,
                    max,
                });
            }
        }
        Ok(())
    }

    fn encode_prefix(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 + self.file_id.len() + 24);
        out.push(self.function.id());
        out.extend_from_slice(&(self.file_id.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.file_id);
        if let Some(nonce) = &self.nonce {
            out.extend_from_slice(&(nonce.len() as u32).to_be_bytes());
            out.extend_from_slice(nonce);
        }
        out
    }

    /// The injective byte encoding fed to the primitive.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.encode_prefix();
        for &(v, _) in &self.indices {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }
}

pub fn prf_eval(key: &PrfKey, domain: &PrfDomain) -> Result<Gf256, PrfError> {
    domain.validate()?;
    Ok(Gf256(key.eval_encoded(&domain.encode())))
}

/// Evaluates a run of domains that share every field except the last index,
/// which sweeps `1..=count`. Reuses one encoding buffer.
fn eval_sweep(key: &PrfKey, template: &PrfDomain, count: u32) -> Vec<Gf256> {
    let mut buf = template.encode();
    let tail = buf.len() - 4;
    (1..=count)
        .map(|i| {
            buf[tail..].copy_from_slice(&i.to_be_bytes());
            Gf256(key.eval_encoded(&buf))
        })
        .collect()
}

/// The SpaceMac vector for `key_index` (1-based), entries `1..=length`.
/// Prefix-stable: entry `i` does not depend on `length`.
pub fn derive_r_vector(k_v: &PrfKey, file_id: &str, key_index: u32, length: usize) -> Result<SymbolVector, PrfError> {
    if length == 0 {
        return Err(PrfError::EmptyLength);
    }
    let len = length as u32;
    let template = PrfDomain::mac_vector(file_id, key_index, key_index.max(1), 1, len);
    template.validate()?;
    Ok(eval_sweep(k_v, &template, len).into())
}

/// Basis vector `i` (1-based) of the masking basis, `n − 2` entries.
pub fn derive_mask_basis_vector(k_e: &PrfKey, file_id: &str, i: u32, n: usize) -> Result<SymbolVector, PrfError> {
    let template = PrfDomain::mask_basis(file_id, i, 1, n as u32);
    template.validate()?;
    Ok(eval_sweep(k_e, &template, n as u32 - 2).into())
}

/// Masking coefficients `β_1..β_{n−1}` for a nonce.
pub fn derive_mask_coefficients(k_e: &PrfKey, file_id: &str, nonce: &[u8], n: usize) -> Result<Vec<Gf256>, PrfError> {
    let template = PrfDomain::mask_coefficient(file_id, nonce, 1, n as u32);
    template.validate()?;
    Ok(eval_sweep(k_e, &template, n as u32 - 1))
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::wire::to_hex(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        crate::wire::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn test_key() -> PrfKey {
        let mut bytes = vec![0u8; 16];
        bytes[15] = 1;
        PrfKey::from_bytes(bytes, PrfMode::Test).unwrap()
    }

    /// Straight transcription of the pinned construction, kept apart from the
    /// implementation above.
    fn reference_splitmix(key: &[u8], msg: &[u8]) -> u8 {
        let mut seed = 0u64;
        for i in 0..8 {
            seed |= ((key[i] ^ key[key.len() - 8 + i]) as u64) << (8 * i);
        }
        let mut s = seed;
        for &b in msg {
            let mut z = s ^ (b as u64).wrapping_mul(0x9E3779B97F4A7C15);
            z = z.wrapping_add(0x9E3779B97F4A7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            s = z ^ (z >> 31);
        }
        (s & 0xFF) as u8
    }

    #[test]
    fn domain_encoding_layout() {
        let d = PrfDomain::mac_vector("f", 1, 1, 1, 8);
        assert_eq!(d.encode(), vec![1, 0, 0, 0, 1, b'f', 0, 0, 0, 1, 0, 0, 0, 1]);
        let d = PrfDomain::mask_coefficient("f", &[0xAA, 0xBB], 3, 8);
        assert_eq!(
            d.encode(),
            vec![3, 0, 0, 0, 1, b'f', 0, 0, 0, 2, 0xAA, 0xBB, 0, 0, 0, 3]
        );
    }

    #[test]
    fn golden_vectors_in_test_mode() {
        let key = test_key();
        let d1 = PrfDomain::mac_vector("f", 1, 1, 1, 8);
        let v1 = prf_eval(&key, &d1).unwrap();
        assert_eq!(v1.0, reference_splitmix(key.as_bytes(), &d1.encode()));
        assert_eq!(v1, Gf256(GOLDEN_F1_F_1_1));

        let d2 = PrfDomain::mask_basis("f", 1, 1, 8);
        let v2 = prf_eval(&key, &d2).unwrap();
        assert_eq!(v2.0, reference_splitmix(key.as_bytes(), &d2.encode()));
        assert_eq!(v2, Gf256(GOLDEN_F2_F_1_1));
        assert_ne!(v1, v2);

        let r = derive_r_vector(&key, "f", 1, 4).unwrap();
        assert_eq!(r.to_bytes(), GOLDEN_R4.to_vec());
    }

    // Frozen from the reference transcription above.
    const GOLDEN_F1_F_1_1: u8 = 0x2c;
    const GOLDEN_F2_F_1_1: u8 = 0x78;
    const GOLDEN_R4: [u8; 4] = [0x2c, 0x95, 0x37, 0xe4];

    #[test]
    fn deterministic_in_both_modes() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for mode in [PrfMode::Production, PrfMode::Test] {
            let key = PrfKey::generate(128, mode, &mut rng).unwrap();
            let d = PrfDomain::mask_basis("file", 2, 3, 16);
            assert_eq!(prf_eval(&key, &d).unwrap(), prf_eval(&key, &d).unwrap());
        }
    }

    #[test]
    fn out_of_range_indices_rejected() {
        let key = test_key();
        assert!(matches!(
            prf_eval(&key, &PrfDomain::mask_basis("f", 0, 1, 8)),
            Err(PrfError::IndexOutOfRange { .. })
        ));
        assert!(prf_eval(&key, &PrfDomain::mask_basis("f", 8, 1, 8)).is_err());
        assert!(prf_eval(&key, &PrfDomain::mask_basis("f", 7, 7, 8)).is_err());
        assert!(prf_eval(&key, &PrfDomain::mask_basis("f", 7, 6, 8)).is_ok());
        assert!(prf_eval(&key, &PrfDomain::mac_vector("f", 1, 1, 9, 8)).is_err());
    }

    #[test]
    fn r_vector_rejects_zero_length() {
        assert_eq!(derive_r_vector(&test_key(), "f", 1, 0), Err(PrfError::EmptyLength));
    }

    #[test]
    fn key_lengths() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        assert_eq!(PrfKey::generate(80, PrfMode::Production, &mut rng).unwrap().bits(), 80);
        assert_eq!(
            PrfKey::generate(128, PrfMode::Production, &mut rng).unwrap().bits(),
            128
        );
        assert!(PrfKey::generate(64, PrfMode::Production, &mut rng).is_err());
    }

    #[test]
    fn sweep_matches_pointwise_eval() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let key = PrfKey::generate(128, PrfMode::Production, &mut rng).unwrap();
        let r = derive_r_vector(&key, "x", 2, 10).unwrap();
        for pos in 1..=10u32 {
            let d = PrfDomain::mac_vector("x", 2, 2, pos, 10);
            assert_eq!(r[pos as usize - 1], prf_eval(&key, &d).unwrap());
        }
        let nonce = [9u8; 16];
        let betas = derive_mask_coefficients(&key, "x", &nonce, 6).unwrap();
        for i in 1..=5u32 {
            let d = PrfDomain::mask_coefficient("x", &nonce, i, 6);
            assert_eq!(betas[i as usize - 1], prf_eval(&key, &d).unwrap());
        }
    }

    proptest! {
        #[test]
        fn r_vector_prefix_stable(seed: u64, len in 1usize..64) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let key = PrfKey::generate(128, PrfMode::Production, &mut rng).unwrap();
            let short = derive_r_vector(&key, "f", 1, len).unwrap();
            let long = derive_r_vector(&key, "f", 1, len + 1).unwrap();
            prop_assert_eq!(short.as_slice(), &long.as_slice()[..len]);
        }

        #[test]
        fn encoding_is_injective(
            f1 in 0usize..3, f2 in 0usize..3,
            id1 in "[a-c]{0,3}", id2 in "[a-c]{0,3}",
            n1 in proptest::option::of(proptest::collection::vec(any::<u8>(), 0..3)),
            n2 in proptest::option::of(proptest::collection::vec(any::<u8>(), 0..3)),
            i1 in proptest::collection::vec(1u32..4, 1..3),
            i2 in proptest::collection::vec(1u32..4, 1..3),
        ) {
            let funcs = [PrfFunction::MacVector, PrfFunction::MaskBasis, PrfFunction::MaskCoefficient];
            // The function id fixes the shape (nonce presence and index count).
            let shape = |f: usize, n: Option<Vec<u8>>, i: Vec<u32>| {
                let nonce = if f == 2 { Some(n.unwrap_or_default()) } else { None };
                let count = if f == 2 { 1 } else { 2 };
                let mut idx: Vec<(u32, u32)> = i.into_iter().map(|v| (v, 9)).collect();
                idx.resize(count, (1, 9));
                PrfDomain::new(funcs[f], "", nonce, idx)
            };
            let mut a = shape(f1, n1, i1);
            let mut b = shape(f2, n2, i2);
            a.file_id = id1.into_bytes();
            b.file_id = id2.into_bytes();
            if a != b {
                prop_assert_ne!(a.encode(), b.encode());
            } else {
                prop_assert_eq!(a.encode(), b.encode());
            }
        }
    }
}

//! Masking encryption compatible with the MAC.
//!
//! A plaintext `ē ∈ F_q^{n−2}` is hidden by adding a mask `m̄` drawn from the
//! span of a keyed basis `p̄_1..p̄_{n−1}`. The sender also reveals
//! `p_j = m̄ · r̄_j` for every key index, which is exactly the amount by which
//! the tag of the masked vector moves.

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{self, Phase};
use crate::field::{dot_slices, linalg, Gf256, SymbolVector};
use crate::prf::{derive_mask_basis_vector, derive_mask_coefficients, PrfError, PrfKey};
use crate::spacemac::{SpaceMac, TagVector};
use crate::wire::{Reader, WireError};

/// Basis rank is checked at setup only up to this `n`.
pub const RANK_CHECK_MAX_N: usize = 256;

#[derive(Debug, Error)]
pub enum CryptError {
    #[error("r-bar for key index {0} is all zero")]
    DegenerateR(usize),
    #[error("mask basis has rank {rank}, expected {expected}")]
    DegenerateBasis { rank: usize, expected: usize },
    #[error("plaintext length {got}, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("auxiliary elements are inconsistent: {0}")]
    Aux(String),
    #[error(transparent)]
    Prf(#[from] PrfError),
    #[error(transparent)]
    Mac(#[from] crate::spacemac::MacError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// The mask basis and, per key index, the basis vectors' MAC scalars.
/// Given to storage nodes along with `k_e`; `r̄` itself is never included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxiliaryElements {
    pub file_id: String,
    pub n: usize,
    /// `basis[i]` is `p̄_{i+1}`, length `n − 2`.
    pub basis: Vec<SymbolVector>,
    /// `scalars[i][j] = r̄_{j+1} · p̄_{i+1}`.
    pub scalars: Vec<SymbolVector>,
}

impl AuxiliaryElements {
    pub fn ell(&self) -> usize {
        self.scalars.first().map_or(0, |s| s.len())
    }

    /// Checks that the basis is the one `k_e` derives and that shapes agree.
    pub fn check_against(&self, k_e: &PrfKey) -> Result<(), CryptError> {
        if self.basis.len() != self.n - 1 || self.scalars.len() != self.n - 1 {
            return Err(CryptError::Aux(format!("expected {} basis vectors", self.n - 1)));
        }
        for (i, b) in self.basis.iter().enumerate() {
            if *b != derive_mask_basis_vector(k_e, &self.file_id, i as u32 + 1, self.n)? {
                return Err(CryptError::Aux(format!("basis vector {} does not match key", i + 1)));
            }
        }
        Ok(())
    }
}

/// Derives the auxiliary elements for `file_id`. `mac` supplies `r̄_j`.
pub fn setup(k_e: &PrfKey, mac: &SpaceMac, n: usize) -> Result<AuxiliaryElements, CryptError> {
    let file_id = mac.file_id();
    let r_bar: Vec<SymbolVector> = (0..mac.ell())
        .map(|j| mac.r_vector(j, n - 2))
        .collect::<Result<_, _>>()?;
    if let Some(j) = r_bar.iter().position(|r| r.is_zero()) {
        return Err(CryptError::DegenerateR(j + 1));
    }
    let basis: Vec<SymbolVector> = (1..n as u32)
        .map(|i| derive_mask_basis_vector(k_e, file_id, i, n))
        .collect::<Result<_, _>>()?;
    if n <= RANK_CHECK_MAX_N {
        let rank = linalg::rank(&basis);
        if rank != n - 2 {
            return Err(CryptError::DegenerateBasis { rank, expected: n - 2 });
        }
    }
    let scalars = basis
        .iter()
        .map(|p| r_bar.iter().map(|r| dot_slices(r.as_slice(), p.as_slice())).collect())
        .collect();
    Ok(AuxiliaryElements {
        file_id: file_id.to_string(),
        n,
        basis,
        scalars,
    })
}

/// `⟨c̄, (nonce, p)⟩`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    pub c_bar: SymbolVector,
    #[serde(with = "crate::prf::hex_bytes")]
    pub nonce: Vec<u8>,
    pub p: TagVector,
}

impl Ciphertext {
    /// `c̄ ‖ nonce ‖ p`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.c_bar.to_bytes();
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.p.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], n: usize, nonce_len: usize, ell: usize) -> Result<Self, CryptError> {
        let mut r = Reader::new(bytes);
        let ct = Self::read(&mut r, n, nonce_len, ell)?;
        r.finish()?;
        Ok(ct)
    }

    pub(crate) fn read(r: &mut Reader<'_>, n: usize, nonce_len: usize, ell: usize) -> Result<Self, WireError> {
        Ok(Ciphertext {
            c_bar: SymbolVector::from_bytes(r.take(n - 2)?),
            nonce: r.take(nonce_len)?.to_vec(),
            p: TagVector::from_bytes(r.take(ell)?),
        })
    }
}

/// A mask and its auxiliary tags, computed ahead of time so that encrypting
/// costs only additions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPrecomputation {
    pub nonce: Vec<u8>,
    pub mask: SymbolVector,
    pub p: TagVector,
}

impl MaskPrecomputation {
    pub fn new<R: RngCore + CryptoRng + ?Sized>(
        k_e: &PrfKey,
        aux: &AuxiliaryElements,
        rng: &mut R,
    ) -> Result<Self, CryptError> {
        let mut nonce = vec![0u8; k_e.bits() / 8];
        rng.fill_bytes(&mut nonce);
        Self::with_nonce(k_e, aux, nonce)
    }

    pub fn with_nonce(k_e: &PrfKey, aux: &AuxiliaryElements, nonce: Vec<u8>) -> Result<Self, CryptError> {
        let _phase = cost::phase(Phase::Mask);
        let beta = derive_mask_coefficients(k_e, &aux.file_id, &nonce, aux.n)?;
        let mut mask = SymbolVector::zeros(aux.n - 2);
        let mut p = SymbolVector::zeros(aux.ell());
        for ((b, basis), scalars) in beta.iter().zip(&aux.basis).zip(&aux.scalars) {
            mask.axpy(*b, basis).expect("basis length n - 2");
            p.axpy(*b, scalars).expect("scalar length ell");
        }
        Ok(MaskPrecomputation {
            nonce,
            mask,
            p: TagVector::from_symbols(p),
        })
    }

    pub fn apply(&self, e_bar: &[Gf256]) -> Result<Ciphertext, CryptError> {
        if e_bar.len() != self.mask.len() {
            return Err(CryptError::Length {
                expected: self.mask.len(),
                got: e_bar.len(),
            });
        }
        let mut c_bar: SymbolVector = e_bar.iter().copied().collect();
        c_bar.add_assign(&self.mask).expect("length checked");
        Ok(Ciphertext {
            c_bar,
            nonce: self.nonce.clone(),
            p: self.p.clone(),
        })
    }
}

pub fn enc<R: RngCore + CryptoRng + ?Sized>(
    k_e: &PrfKey,
    e_bar: &[Gf256],
    aux: &AuxiliaryElements,
    rng: &mut R,
) -> Result<Ciphertext, CryptError> {
    check_len(e_bar.len(), aux)?;
    MaskPrecomputation::new(k_e, aux, rng)?.apply(e_bar)
}

/// Encryption under a caller-chosen nonce. Reusing a nonce reuses the mask.
pub fn enc_with_nonce(
    k_e: &PrfKey,
    e_bar: &[Gf256],
    aux: &AuxiliaryElements,
    nonce: &[u8],
) -> Result<Ciphertext, CryptError> {
    check_len(e_bar.len(), aux)?;
    MaskPrecomputation::with_nonce(k_e, aux, nonce.to_vec())?.apply(e_bar)
}

pub fn dec(k_e: &PrfKey, ct: &Ciphertext, aux: &AuxiliaryElements) -> Result<SymbolVector, CryptError> {
    check_len(ct.c_bar.len(), aux)?;
    let pre = MaskPrecomputation::with_nonce(k_e, aux, ct.nonce.clone())?;
    let mut out = ct.c_bar.clone();
    out.add_assign(&pre.mask).expect("length checked");
    Ok(out)
}

fn check_len(got: usize, aux: &AuxiliaryElements) -> Result<(), CryptError> {
    if got != aux.n - 2 {
        return Err(CryptError::Length {
            expected: aux.n - 2,
            got,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prf::PrfMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys(seed: u64, mode: PrfMode) -> (PrfKey, PrfKey) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (
            PrfKey::generate(128, mode, &mut rng).unwrap(),
            PrfKey::generate(128, mode, &mut rng).unwrap(),
        )
    }

    fn test_mode_key(last: u8) -> PrfKey {
        let mut bytes = vec![0u8; 16];
        bytes[15] = last;
        PrfKey::from_bytes(bytes, PrfMode::Test).unwrap()
    }

    fn in_span(basis: &[SymbolVector], v: &SymbolVector) -> bool {
        linalg::express_in_rows(basis, v).is_some()
    }

    #[test]
    fn dimensions_for_n4() {
        let (k_e, k_v) = keys(1, PrfMode::Production);
        let mac = SpaceMac::new(&k_v, "f", 3);
        let aux = setup(&k_e, &mac, 4).unwrap();
        assert_eq!(aux.basis.len(), 3);
        assert!(aux.basis.iter().all(|b| b.len() == 2));
        assert_eq!(aux.scalars.len(), 3);
        assert!(aux.scalars.iter().all(|s| s.len() == 3));
        aux.check_against(&k_e).unwrap();
        for (i, p) in aux.basis.iter().enumerate() {
            for j in 0..3 {
                let r = mac.r_vector(j, 2).unwrap();
                assert_eq!(aux.scalars[i][j], crate::field::dot(&r, p).unwrap());
            }
        }
    }

    #[test]
    fn round_trip_and_mask_consistency() {
        let (k_e, k_v) = keys(2, PrfMode::Production);
        let mac = SpaceMac::new(&k_v, "file", 4);
        let aux = setup(&k_e, &mac, 34).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = SymbolVector::random(32, &mut rng);
            let ct = enc(&k_e, x.as_slice(), &aux, &mut rng).unwrap();
            assert_eq!(dec(&k_e, &ct, &aux).unwrap(), x);
            let mut mask = ct.c_bar.clone();
            mask.add_assign(&x).unwrap();
            assert!(in_span(&aux.basis, &mask));
            for j in 0..4 {
                let r = mac.r_vector(j, 32).unwrap();
                assert_eq!(crate::field::dot(&mask, &r).unwrap(), ct.p.get(j));
            }
        }
    }

    #[test]
    fn zero_plaintext_exposes_mask() {
        let (k_e, k_v) = keys(3, PrfMode::Production);
        let aux = setup(&k_e, &SpaceMac::new(&k_v, "f", 1), 10).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let ct = enc(&k_e, &[Gf256::ZERO; 8], &aux, &mut rng).unwrap();
        let pre = MaskPrecomputation::with_nonce(&k_e, &aux, ct.nonce.clone()).unwrap();
        assert_eq!(ct.c_bar, pre.mask);
        assert!(in_span(&aux.basis, &ct.c_bar));
    }

    #[test]
    fn fresh_nonces() {
        let (k_e, k_v) = keys(4, PrfMode::Production);
        let aux = setup(&k_e, &SpaceMac::new(&k_v, "f", 1), 18).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let x = SymbolVector::random(16, &mut rng);
        let mut distinct = 0;
        for _ in 0..1000 {
            let a = enc(&k_e, x.as_slice(), &aux, &mut rng).unwrap();
            let b = enc(&k_e, x.as_slice(), &aux, &mut rng).unwrap();
            if a.nonce != b.nonce && a.c_bar != b.c_bar {
                distinct += 1;
            }
        }
        assert_eq!(distinct, 1000);
    }

    #[test]
    fn tampering_changes_plaintext_silently() {
        let (k_e, k_v) = keys(5, PrfMode::Production);
        let aux = setup(&k_e, &SpaceMac::new(&k_v, "f", 1), 8).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = SymbolVector::random(6, &mut rng);
        let mut ct = enc(&k_e, x.as_slice(), &aux, &mut rng).unwrap();
        ct.c_bar[0] += Gf256::ONE;
        assert_ne!(dec(&k_e, &ct, &aux).unwrap(), x);
    }

    #[test]
    fn wire_layout() {
        let ct = Ciphertext {
            c_bar: SymbolVector::from_bytes(&[1, 2]),
            nonce: vec![0xAA; 10],
            p: TagVector::from_bytes(&[7, 8, 9]),
        };
        let bytes = ct.to_bytes();
        assert_eq!(bytes.len(), 2 + 10 + 3);
        assert_eq!(Ciphertext::from_bytes(&bytes, 4, 10, 3).unwrap(), ct);
        assert!(Ciphertext::from_bytes(&bytes, 4, 10, 2).is_err());
    }

    #[test]
    fn rejects_wrong_length() {
        let (k_e, k_v) = keys(6, PrfMode::Production);
        let aux = setup(&k_e, &SpaceMac::new(&k_v, "f", 1), 8).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        assert!(matches!(
            enc(&k_e, &[Gf256::ONE; 5], &aux, &mut rng),
            Err(CryptError::Length { expected: 6, got: 5 })
        ));
    }

    #[test]
    fn golden_basis_and_ciphertext() {
        let k_e = test_mode_key(1);
        let k_v = test_mode_key(2);
        let aux = setup(&k_e, &SpaceMac::new(&k_v, "f", 1), 4).unwrap();
        let basis: Vec<Vec<u8>> = aux.basis.iter().map(|b| b.to_bytes()).collect();
        assert_eq!(basis, GOLDEN_BASIS_N4.iter().map(|b| b.to_vec()).collect::<Vec<_>>());
        let ct = enc_with_nonce(&k_e, &[Gf256(0x61), Gf256(0x62)], &aux, &[0u8; 16]).unwrap();
        assert_eq!(ct.c_bar.to_bytes(), GOLDEN_C_BAR.to_vec());
    }

    // Computed with an independent transcription of the pinned test PRF.
    const GOLDEN_BASIS_N4: [[u8; 2]; 3] = [[0x78, 0x68], [0xbe, 0x10], [0x8a, 0xd3]];
    const GOLDEN_C_BAR: [u8; 2] = [0x59, 0x52];
}

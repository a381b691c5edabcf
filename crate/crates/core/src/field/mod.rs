//! Arithmetic over GF(2^8) with reduction polynomial x^8 + x^4 + x^3 + x + 1 (0x11B).
//!
//! Multiplication goes through a full 256x256 product table (64 KiB) that is
//! evaluated at compile time from the shift-and-reduce routine below. Vector
//! kernels report the number of field multiplications they perform to
//! [`crate::cost`], which is how the proof and verification cost formulas are
//! checked.

pub mod linalg;

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost;

/// Low byte of the reduction polynomial; the x^8 term is implicit.
pub const REDUCTION_POLY: u16 = 0x11B;

/// Number of elements in the field.
pub const FIELD_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("matrix shape mismatch: {0}")]
    Shape(String),
}

/// Carry-less shift-and-reduce multiplication. Used to build the product table.
pub const fn mul_shift_reduce(a: u8, b: u8) -> u8 {
    let mut acc: u8 = 0;
    let mut a = a;
    let mut b = b;
    while b != 0 {
        if b & 1 != 0 {
            acc ^= a;
        }
        let carry = a & 0x80;
        a <<= 1;
        if carry != 0 {
            a ^= (REDUCTION_POLY & 0xFF) as u8;
        }
        b >>= 1;
    }
    acc
}

const fn build_mul_table() -> [[u8; 256]; 256] {
    let mut table = [[0u8; 256]; 256];
    let mut a = 0;
    while a < 256 {
        let mut b = 0;
        while b < 256 {
            table[a][b] = mul_shift_reduce(a as u8, b as u8);
            b += 1;
        }
        a += 1;
    }
    table
}

const fn build_inv_table() -> [u8; 256] {
    let mut inv = [0u8; 256];
    let mut a = 1;
    while a < 256 {
        let mut b = 1;
        while b < 256 {
            if PRODUCTS[a][b] == 1 {
                inv[a] = b as u8;
                break;
            }
            b += 1;
        }
        a += 1;
    }
    inv
}

// Compile-time only; the runtime lookups go through the static copy.
#[allow(clippy::large_const_arrays)]
const PRODUCTS: [[u8; 256]; 256] = build_mul_table();
static MUL_TABLE: [[u8; 256]; 256] = PRODUCTS;
static INV_TABLE: [u8; 256] = build_inv_table();

/// One symbol of GF(2^8).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
#[repr(transparent)]
pub struct Gf256(pub u8);

impl Gf256 {
    pub const ZERO: Gf256 = Gf256(0);
    pub const ONE: Gf256 = Gf256(1);

    #[inline]
    pub const fn new(value: u8) -> Self {
        Gf256(value)
    }

    #[inline]
    pub const fn value(self) -> u8 {
        self.0
    }

    #[inline]
    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Multiplicative inverse; `None` for zero.
    #[inline]
    pub fn inv(self) -> Option<Gf256> {
        if self.0 == 0 {
            None
        } else {
            Some(Gf256(INV_TABLE[self.0 as usize]))
        }
    }

    pub fn pow(self, mut exp: u32) -> Gf256 {
        let mut base = self;
        let mut acc = Gf256::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc *= base;
            }
            base = base * base;
            exp >>= 1;
        }
        acc
    }

    /// The 256-entry row of the product table for this multiplier.
    #[inline]
    pub(crate) fn mul_row(self) -> &'static [u8; 256] {
        &MUL_TABLE[self.0 as usize]
    }
}

impl fmt::Debug for Gf256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#04x}", self.0)
    }
}

impl fmt::Display for Gf256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#04x}", self.0)
    }
}

impl From<u8> for Gf256 {
    fn from(v: u8) -> Self {
        Gf256(v)
    }
}

impl From<Gf256> for u8 {
    fn from(v: Gf256) -> Self {
        v.0
    }
}

impl Add for Gf256 {
    type Output = Gf256;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn add(self, rhs: Gf256) -> Gf256 {
        Gf256(self.0 ^ rhs.0)
    }
}

impl Sub for Gf256 {
    type Output = Gf256;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn sub(self, rhs: Gf256) -> Gf256 {
        Gf256(self.0 ^ rhs.0)
    }
}

impl Mul for Gf256 {
    type Output = Gf256;
    #[inline]
    fn mul(self, rhs: Gf256) -> Gf256 {
        Gf256(MUL_TABLE[self.0 as usize][rhs.0 as usize])
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Div for Gf256 {
    type Output = Gf256;
    /// Panics on division by zero.
    #[inline]
    fn div(self, rhs: Gf256) -> Gf256 {
        self * rhs.inv().expect("division by zero in GF(2^8)")
    }
}

// Addition and subtraction are both XOR in characteristic 2.
#[allow(clippy::suspicious_op_assign_impl)]
impl AddAssign for Gf256 {
    #[inline]
    fn add_assign(&mut self, rhs: Gf256) {
        self.0 ^= rhs.0;
    }
}

#[allow(clippy::suspicious_op_assign_impl)]
impl SubAssign for Gf256 {
    #[inline]
    fn sub_assign(&mut self, rhs: Gf256) {
        self.0 ^= rhs.0;
    }
}

impl MulAssign for Gf256 {
    #[inline]
    fn mul_assign(&mut self, rhs: Gf256) {
        *self = *self * rhs;
    }
}

impl std::iter::Sum for Gf256 {
    fn sum<I: Iterator<Item = Gf256>>(iter: I) -> Gf256 {
        iter.fold(Gf256::ZERO, |a, b| a + b)
    }
}

/// `a + b`
#[inline]
pub fn add(a: Gf256, b: Gf256) -> Gf256 {
    a + b
}

/// `a * b`
#[inline]
pub fn mul(a: Gf256, b: Gf256) -> Gf256 {
    a * b
}

/// `dst += alpha * src` over equal-length slices. Counts `src.len()` multiplications.
#[inline]
pub fn axpy(dst: &mut [Gf256], alpha: Gf256, src: &[Gf256]) {
    debug_assert_eq!(dst.len(), src.len());
    cost::record(src.len() as u64);
    if alpha.is_zero() {
        return;
    }
    if alpha == Gf256::ONE {
        for (d, s) in dst.iter_mut().zip(src) {
            d.0 ^= s.0;
        }
        return;
    }
    let row = alpha.mul_row();
    for (d, s) in dst.iter_mut().zip(src) {
        d.0 ^= row[s.0 as usize];
    }
}

/// Inner product of two equal-length slices. Counts `u.len()` multiplications.
#[inline]
pub fn dot_slices(u: &[Gf256], v: &[Gf256]) -> Gf256 {
    debug_assert_eq!(u.len(), v.len());
    cost::record(u.len() as u64);
    let mut acc = 0u8;
    for (a, b) in u.iter().zip(v) {
        acc ^= MUL_TABLE[a.0 as usize][b.0 as usize];
    }
    Gf256(acc)
}

/// An ordered, fixed-length sequence of field symbols.
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymbolVector(Vec<Gf256>);

impl SymbolVector {
    pub fn zeros(len: usize) -> Self {
        SymbolVector(vec![Gf256::ZERO; len])
    }

    /// The `index`-th standard basis vector of the given length.
    pub fn unit(len: usize, index: usize) -> Self {
        let mut v = Self::zeros(len);
        v.0[index] = Gf256::ONE;
        v
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        SymbolVector(bytes.iter().copied().map(Gf256).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.iter().map(|s| s.0).collect()
    }

    pub fn random<R: rand::Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut bytes = vec![0u8; len];
        rng.fill_bytes(&mut bytes);
        Self::from_bytes(&bytes)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|s| s.is_zero())
    }

    pub fn as_slice(&self) -> &[Gf256] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [Gf256] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<Gf256> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Gf256> {
        self.0.iter()
    }

    fn check_len(&self, other: &SymbolVector) -> Result<(), FieldError> {
        if self.len() != other.len() {
            return Err(FieldError::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &SymbolVector) -> Result<(), FieldError> {
        self.check_len(other)?;
        for (d, s) in self.0.iter_mut().zip(&other.0) {
            *d += *s;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: Gf256, other: &SymbolVector) -> Result<(), FieldError> {
        self.check_len(other)?;
        axpy(&mut self.0, alpha, &other.0);
        Ok(())
    }

    pub fn scale(&mut self, alpha: Gf256) {
        cost::record(self.0.len() as u64);
        let row = alpha.mul_row();
        for s in &mut self.0 {
            s.0 = row[s.0 as usize];
        }
    }

    pub fn scaled(&self, alpha: Gf256) -> SymbolVector {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// Appends `extra` zero symbols.
    pub fn extend_zeros(&mut self, extra: usize) {
        self.0.extend(std::iter::repeat_n(Gf256::ZERO, extra));
    }

    pub fn concat(parts: &[&[Gf256]]) -> SymbolVector {
        SymbolVector(parts.iter().flat_map(|p| p.iter().copied()).collect())
    }
}

impl std::ops::Index<usize> for SymbolVector {
    type Output = Gf256;
    fn index(&self, index: usize) -> &Gf256 {
        &self.0[index]
    }
}

impl std::ops::IndexMut<usize> for SymbolVector {
    fn index_mut(&mut self, index: usize) -> &mut Gf256 {
        &mut self.0[index]
    }
}

impl From<Vec<Gf256>> for SymbolVector {
    fn from(v: Vec<Gf256>) -> Self {
        SymbolVector(v)
    }
}

impl FromIterator<Gf256> for SymbolVector {
    fn from_iter<I: IntoIterator<Item = Gf256>>(iter: I) -> Self {
        SymbolVector(iter.into_iter().collect())
    }
}

impl fmt::Debug for SymbolVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{:02x}", s.0)?;
        }
        write!(f, "]")
    }
}

/// Inner product `Σ u_i · v_i`.
pub fn dot(u: &SymbolVector, v: &SymbolVector) -> Result<Gf256, FieldError> {
    u.check_len(v)?;
    Ok(dot_slices(&u.0, &v.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: carry-less product into 16 bits, then polynomial long division.
    fn clmul_reduce(a: u8, b: u8) -> u8 {
        let mut wide: u16 = 0;
        for bit in 0..8 {
            if (b >> bit) & 1 == 1 {
                wide ^= (a as u16) << bit;
            }
        }
        for bit in (8..16).rev() {
            if (wide >> bit) & 1 == 1 {
                wide ^= 0x11B << (bit - 8);
            }
        }
        wide as u8
    }

    #[test]
    fn add_examples() {
        assert_eq!(add(Gf256(0x00), Gf256(0x5A)), Gf256(0x5A));
        assert_eq!(add(Gf256(0x5A), Gf256(0x5A)), Gf256(0x00));
        assert_eq!(add(Gf256(0x57), Gf256(0x83)), Gf256(0xD4));
    }

    #[test]
    fn mul_examples() {
        assert_eq!(mul(Gf256(0x01), Gf256(0xC3)), Gf256(0xC3));
        assert_eq!(mul(Gf256(0x02), Gf256(0x03)), Gf256(0x06));
        assert_eq!(mul(Gf256(0x53), Gf256(0xCA)), Gf256(0x01));
        assert_eq!(clmul_reduce(0x53, 0xCA), 0x01);
    }

    #[test]
    fn table_matches_oracle_for_all_pairs() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!((Gf256(a) * Gf256(b)).0, clmul_reduce(a, b), "{a} * {b}");
            }
        }
    }

    #[test]
    fn inverse_matches_exhaustive_search() {
        assert_eq!(Gf256::ZERO.inv(), None);
        for a in 1..=255u8 {
            let brute = (1..=255u8).find(|&b| clmul_reduce(a, b) == 1).unwrap();
            assert_eq!(Gf256(a).inv(), Some(Gf256(brute)));
            assert_eq!(Gf256(a) * Gf256(brute), Gf256::ONE);
        }
    }

    #[test]
    fn multiplicative_group_has_order_255() {
        for a in 1..=255u8 {
            assert_eq!(Gf256(a).pow(255), Gf256::ONE);
        }
        // 0x03 generates the group under 0x11B.
        let g = Gf256(0x03);
        let order = (1..=255u32).find(|&k| g.pow(k) == Gf256::ONE).unwrap();
        assert_eq!(order, 255);
    }

    #[test]
    fn dot_examples() {
        let v = SymbolVector::from_bytes(&[7, 9, 200]);
        assert_eq!(dot(&SymbolVector::zeros(3), &v).unwrap(), Gf256::ZERO);
        for j in 0..3 {
            assert_eq!(dot(&SymbolVector::unit(3, j), &v).unwrap(), v[j]);
        }
        let u = SymbolVector::from_bytes(&[2, 4]);
        let w = SymbolVector::from_bytes(&[3, 5]);
        assert_eq!(dot(&u, &w).unwrap(), Gf256(0x12));
    }

    #[test]
    fn dot_rejects_length_mismatch() {
        let err = dot(&SymbolVector::zeros(2), &SymbolVector::zeros(3)).unwrap_err();
        assert_eq!(err, FieldError::LengthMismatch { left: 2, right: 3 });
    }

    proptest! {
        #[test]
        fn distributive(a: u8, b: u8, c: u8) {
            let (a, b, c) = (Gf256(a), Gf256(b), Gf256(c));
            prop_assert_eq!(a * (b + c), a * b + a * c);
        }

        #[test]
        fn self_inverse_addition(a: u8) {
            prop_assert_eq!(Gf256(a) + Gf256(a), Gf256::ZERO);
        }

        #[test]
        fn axpy_matches_scalar_loop(alpha: u8, src in proptest::collection::vec(any::<u8>(), 0..64)) {
            let src = SymbolVector::from_bytes(&src);
            let mut dst = SymbolVector::zeros(src.len());
            dst.axpy(Gf256(alpha), &src).unwrap();
            for i in 0..src.len() {
                prop_assert_eq!(dst[i], Gf256(alpha) * src[i]);
            }
        }
    }
}

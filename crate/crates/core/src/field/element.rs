use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use super::FieldError;

/// The field modulus `2^64 - 2^32 + 1`.
pub const MODULUS: u64 = 0xffff_ffff_0000_0001;

/// `2^64 mod p`, also `2^32 - 1`.
const EPSILON: u64 = 0xffff_ffff;

/// Largest magnitude accepted by [`encode`]: `(p - 1) / 2`.
pub const HALF_RANGE: u64 = (MODULUS - 1) / 2;

/// Element of the prime field with modulus [`MODULUS`], always kept canonical.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElement(u64);

impl FieldElement {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(1);

    /// Reduces an arbitrary `u64` into the field.
    #[inline]
    pub const fn new(v: u64) -> Self {
        if v >= MODULUS {
            Self(v - MODULUS)
        } else {
            Self(v)
        }
    }

    #[inline]
    pub const fn value(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Maps a signed integer onto the field without range checking; values
    /// outside the half range wrap.
    #[inline]
    pub fn from_i64(v: i64) -> Self {
        if v >= 0 {
            Self::new(v as u64)
        } else {
            -Self::new(v.unsigned_abs())
        }
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let mut base = self;
        let mut acc = Self::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc *= base;
            }
            base *= base;
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat; `None` for zero.
    pub fn inverse(self) -> Option<Self> {
        if self.is_zero() {
            None
        } else {
            Some(self.pow(MODULUS - 2))
        }
    }

    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    /// Parses 8 little-endian bytes; rejects non-canonical encodings.
    pub fn from_le_bytes(bytes: [u8; 8]) -> Option<Self> {
        let v = u64::from_le_bytes(bytes);
        (v < MODULUS).then_some(Self(v))
    }
}

#[inline]
fn reduce128(x: u128) -> u64 {
    let lo = x as u64;
    let hi = (x >> 64) as u64;
    let hi_hi = hi >> 32;
    let hi_lo = hi & EPSILON;

    // 2^96 = -1 mod p
    let (mut t0, borrow) = lo.overflowing_sub(hi_hi);
    if borrow {
        t0 = t0.wrapping_sub(EPSILON);
    }
    // 2^64 = EPSILON mod p
    let t1 = hi_lo * EPSILON;
    let (mut res, carry) = t0.overflowing_add(t1);
    if carry {
        res = res.wrapping_add(EPSILON);
    }
    if res >= MODULUS {
        res -= MODULUS;
    }
    res
}

impl Add for FieldElement {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let (mut sum, over) = self.0.overflowing_add(rhs.0);
        if over {
            // wrapped past 2^64, which is EPSILON mod p
            sum += EPSILON;
        }
        if sum >= MODULUS {
            sum -= MODULUS;
        }
        Self(sum)
    }
}

impl Sub for FieldElement {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let (diff, under) = self.0.overflowing_sub(rhs.0);
        Self(if under { diff.wrapping_add(MODULUS) } else { diff })
    }
}

impl Mul for FieldElement {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self(reduce128(self.0 as u128 * rhs.0 as u128))
    }
}

impl Neg for FieldElement {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        if self.0 == 0 {
            self
        } else {
            Self(MODULUS - self.0)
        }
    }
}

impl AddAssign for FieldElement {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for FieldElement {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for FieldElement {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F({})", decode(*self))
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Embeds a signed integer: non-negative values map to themselves, negative
/// values to `p - |v|`.
pub fn encode(v: i64) -> Result<FieldElement, FieldError> {
    if v.unsigned_abs() > HALF_RANGE {
        return Err(FieldError::OutsideHalfRange(v));
    }
    Ok(FieldElement::from_i64(v))
}

/// Inverse of [`encode`]: elements above `(p - 1) / 2` decode as negative.
#[inline]
pub fn decode(x: FieldElement) -> i64 {
    if x.0 <= HALF_RANGE {
        x.0 as i64
    } else {
        -((MODULUS - x.0) as i64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_examples() {
        assert_eq!(encode(0).unwrap(), FieldElement::ZERO);
        assert_eq!(encode(-128).unwrap().value(), 18446744069414584193);
        assert_eq!(encode(-32767).unwrap().value(), MODULUS - 32767);
    }

    #[test]
    fn encode_rejects_large_magnitudes() {
        assert!(encode(HALF_RANGE as i64).is_ok());
        assert!(encode(-(HALF_RANGE as i64)).is_ok());
        let err = encode(HALF_RANGE as i64 + 1).unwrap_err();
        assert_eq!(err.to_string(), "value outside field half-range: 9223372034707292161");
        assert!(encode(i64::MIN).is_err());
    }

    #[test]
    fn reduction_edge_cases() {
        let m1 = FieldElement::new(MODULUS - 1);
        assert_eq!(m1 * m1, FieldElement::ONE);
        assert_eq!(m1 + FieldElement::ONE, FieldElement::ZERO);
        assert_eq!(FieldElement::ZERO - FieldElement::ONE, m1);
        assert_eq!(FieldElement::new(u64::MAX).value(), u64::MAX - MODULUS);
    }

    #[test]
    fn inverse_of_zero_is_none() {
        assert!(FieldElement::ZERO.inverse().is_none());
        let a = FieldElement::new(12345);
        assert_eq!(a * a.inverse().unwrap(), FieldElement::ONE);
    }
}

//! Arithmetic in a prime field `Z_p` with `p < 2^128`.
//!
//! Elements are plain `u128` residues kept fully reduced; the [`Field`] value
//! carries the modulus and performs every operation. Multiplication is exact
//! for the whole 128-bit range through a double-width product.

use rand::{CryptoRng, Rng, RngCore};
use thiserror::Error;

/// Largest prime below `2^128` (`2^128 - 159`), the production modulus.
pub const PRODUCTION_MODULUS: u128 = u128::MAX - 158;
/// Mersenne prime `2^61 - 1`, used for fast desk-scale runs.
pub const TEST_MODULUS: u128 = (1u128 << 61) - 1;
/// Small prime for exhaustive tests.
pub const TINY_MODULUS: u128 = 101;

/// Wire size of one field element.
pub const ELEMENT_BYTES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u128),
    #[error("division by zero")]
    DivisionByZero,
    #[error("encoded value {0} is not below the modulus")]
    NonCanonical(u128),
    #[error("expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
}

/// A residue in `[0, p)`. Only meaningful together with the [`Field`] that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FieldElement(u128);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    pub fn value(self) -> u128 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl std::fmt::Display for FieldElement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The prime field `Z_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Field {
    p: u128,
    /// `2^128 mod p`, used to fold the high half of wide products.
    fold: u128,
    bits: u32,
}

impl Field {
    /// Builds the field, rejecting composite moduli.
    pub fn new(p: u128) -> Result<Self, FieldError> {
        if !is_prime(p) {
            return Err(FieldError::NotPrime(p));
        }
        Ok(Self::new_unchecked(p))
    }

    /// Builds the field without the primality check. `p` must be prime.
    pub fn new_unchecked(p: u128) -> Self {
        assert!(p >= 2, "modulus must be at least 2");
        let fold = (u128::MAX % p + 1) % p;
        Field {
            p,
            fold,
            bits: 128 - p.leading_zeros(),
        }
    }

    pub fn production() -> Self {
        Self::new_unchecked(PRODUCTION_MODULUS)
    }

    pub fn modulus(&self) -> u128 {
        self.p
    }

    /// Bit length of `p`.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Reduces an arbitrary integer.
    pub fn elem(&self, v: u128) -> FieldElement {
        FieldElement(v % self.p)
    }

    /// Embeds a signed integer, mapping negatives to `p - |v|`.
    pub fn from_i128(&self, v: i128) -> FieldElement {
        let m = self.elem(v.unsigned_abs());
        if v < 0 {
            self.neg(m)
        } else {
            m
        }
    }

    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        let (s, carry) = a.0.overflowing_add(b.0);
        if carry || s >= self.p {
            FieldElement(s.wrapping_sub(self.p))
        } else {
            FieldElement(s)
        }
    }

    pub fn sub(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        if a.0 >= b.0 {
            FieldElement(a.0 - b.0)
        } else {
            FieldElement(self.p - (b.0 - a.0))
        }
    }

    pub fn neg(&self, a: FieldElement) -> FieldElement {
        if a.0 == 0 {
            a
        } else {
            FieldElement(self.p - a.0)
        }
    }

    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement(self.mulmod(a.0, b.0))
    }

    fn mulmod(&self, a: u128, b: u128) -> u128 {
        if self.bits <= 64 {
            // both operands < 2^64
            return (a * b) % self.p;
        }
        let (hi, lo) = mul_wide(a, b);
        self.reduce_wide(hi, lo)
    }

    fn reduce_wide(&self, mut hi: u128, mut lo: u128) -> u128 {
        if self.fold.leading_zeros() >= 64 {
            // hi·2^128 + lo ≡ hi·fold + lo; shrinks hi by >= 64 bits per pass
            while hi != 0 {
                let (h2, l2) = mul_wide(hi, self.fold);
                let (l3, carry) = l2.overflowing_add(lo);
                hi = h2 + carry as u128;
                lo = l3;
            }
            return lo % self.p;
        }
        // generic shift-and-subtract over the low word
        let mut r = hi % self.p;
        for i in (0..128).rev() {
            let bit = (lo >> i) & 1;
            let (d, carry) = r.overflowing_add(r);
            let mut t = d;
            if carry || t >= self.p {
                t = t.wrapping_sub(self.p);
            }
            let (u, carry) = t.overflowing_add(bit);
            r = if carry || u >= self.p {
                u.wrapping_sub(self.p)
            } else {
                u
            };
        }
        r
    }

    pub fn pow(&self, base: FieldElement, mut exp: u128) -> FieldElement {
        let mut acc = 1u128 % self.p;
        let mut b = base.0;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mulmod(acc, b);
            }
            b = self.mulmod(b, b);
            exp >>= 1;
        }
        FieldElement(acc)
    }

    /// Multiplicative inverse by Fermat's little theorem.
    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, FieldError> {
        if a.0 == 0 {
            return Err(FieldError::DivisionByZero);
        }
        Ok(self.pow(a, self.p - 2))
    }

    /// Uniform element by rejection sampling over the minimal number of bytes covering `p`.
    pub fn sample<R: RngCore + CryptoRng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        let top = 128 - (self.p - 1).leading_zeros();
        let nbytes = (top as usize).div_ceil(8).max(1);
        let mask = if top == 128 {
            u128::MAX
        } else {
            (1u128 << top) - 1
        };
        let mut buf = [0u8; ELEMENT_BYTES];
        loop {
            rng.fill_bytes(&mut buf[..nbytes]);
            let v = u128::from_le_bytes(buf) & mask;
            if v < self.p {
                return FieldElement(v);
            }
        }
    }

    /// Uniform bit embedded in the field.
    pub fn sample_bit<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        FieldElement(rng.gen::<bool>() as u128)
    }

    /// `sum_i c_i * x_i`.
    pub fn dot(&self, coeffs: &[FieldElement], xs: &[FieldElement]) -> FieldElement {
        coeffs
            .iter()
            .zip(xs)
            .fold(FieldElement::ZERO, |acc, (&c, &x)| self.add(acc, self.mul(c, x)))
    }

    pub fn encode(&self, a: FieldElement) -> [u8; ELEMENT_BYTES] {
        a.0.to_le_bytes()
    }

    pub fn encode_into(&self, a: FieldElement, out: &mut Vec<u8>) {
        out.extend_from_slice(&a.0.to_le_bytes());
    }

    /// Decodes 16 little-endian bytes, rejecting non-canonical values.
    pub fn decode(&self, bytes: &[u8]) -> Result<FieldElement, FieldError> {
        let arr: [u8; ELEMENT_BYTES] = bytes.try_into().map_err(|_| FieldError::Length {
            expected: ELEMENT_BYTES,
            got: bytes.len(),
        })?;
        let v = u128::from_le_bytes(arr);
        if v >= self.p {
            return Err(FieldError::NonCanonical(v));
        }
        Ok(FieldElement(v))
    }

    pub fn decode_many(&self, bytes: &[u8]) -> Result<Vec<FieldElement>, FieldError> {
        if bytes.len() % ELEMENT_BYTES != 0 {
            return Err(FieldError::Length {
                expected: bytes.len().next_multiple_of(ELEMENT_BYTES),
                got: bytes.len(),
            });
        }
        bytes.chunks_exact(ELEMENT_BYTES).map(|c| self.decode(c)).collect()
    }
}

/// Full 256-bit product as `(high, low)`.
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    const M: u128 = u64::MAX as u128;
    let (a0, a1) = (a & M, a >> 64);
    let (b0, b1) = (b & M, b >> 64);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 & M) + (p10 & M);
    let lo = (p00 & M) | (mid << 64);
    let hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (hi, lo)
}

/// Primality test: deterministic Miller-Rabin below `2^64`, 48 random rounds above.
pub fn is_prime(n: u128) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u128; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &sp in &SMALL {
        if n == sp {
            return true;
        }
        if n % sp == 0 {
            return false;
        }
    }
    let f = Field::new_unchecked(n);
    let mut d = n - 1;
    let mut s = 0;
    while d & 1 == 0 {
        d >>= 1;
        s += 1;
    }
    let witness = |a: u128| -> bool {
        let mut x = f.pow(FieldElement(a % n), d).0;
        if x == 1 || x == n - 1 {
            return false;
        }
        for _ in 1..s {
            x = f.mulmod(x, x);
            if x == n - 1 {
                return false;
            }
        }
        true
    };
    if n < 1u128 << 64 {
        // the first twelve prime bases are exact for all n < 3.1e23
        return !SMALL.iter().any(|&a| witness(a));
    }
    let mut rng = rand::thread_rng();
    (0..48).all(|_| !witness(rng.gen_range(2..n - 1)))
}

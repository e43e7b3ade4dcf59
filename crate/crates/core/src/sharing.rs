//! Two-party additive secret sharing with optional SPDZ-style MACs.
//!
//! A secret `x` is split as `x = x_0 + x_1 mod p`. In authenticated mode each
//! party additionally holds `m_i` with `m_0 + m_1 = alpha * x`, where the global
//! key `alpha = alpha_0 + alpha_1` is known to no single party.

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::field::{Field, FieldElement, ELEMENT_BYTES};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShareError {
    #[error("operation requires {expected:?} mode")]
    ModeMismatch { expected: Mode },
    #[error("arity mismatch: {left} vs {right}")]
    Arity { left: usize, right: usize },
    #[error("invalid protocol configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    SemiHonest,
    Authenticated,
}

impl Mode {
    pub fn to_byte(self) -> u8 {
        match self {
            Mode::SemiHonest => 0,
            Mode::Authenticated => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Mode> {
        match b {
            0 => Some(Mode::SemiHonest),
            1 => Some(Mode::Authenticated),
            _ => None,
        }
    }

    pub fn is_authenticated(self) -> bool {
        self == Mode::Authenticated
    }

    /// Encoded size of one share in this mode.
    pub fn share_bytes(self) -> usize {
        match self {
            Mode::SemiHonest => ELEMENT_BYTES,
            Mode::Authenticated => 2 * ELEMENT_BYTES,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::SemiHonest => "semi-honest",
            Mode::Authenticated => "authenticated",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = ShareError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "semi-honest" | "semihonest" => Ok(Mode::SemiHonest),
            "authenticated" | "malicious" => Ok(Mode::Authenticated),
            other => Err(ShareError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Computing party index, 0 or 1. Party 0 absorbs public constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartyId(u8);

impl PartyId {
    pub const ZERO: PartyId = PartyId(0);
    pub const ONE: PartyId = PartyId(1);

    pub fn new(id: u8) -> Option<PartyId> {
        (id < 2).then_some(PartyId(id))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_u8(self) -> u8 {
        self.0
    }

    pub fn peer(self) -> PartyId {
        PartyId(1 - self.0)
    }

    pub fn absorbs_constants(self) -> bool {
        self.0 == 0
    }
}

impl std::fmt::Display for PartyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One party's share of a secret; `mac` is present exactly in authenticated mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Share {
    pub value: FieldElement,
    pub mac: Option<FieldElement>,
}

impl Share {
    pub fn plain(value: FieldElement) -> Share {
        Share { value, mac: None }
    }

    pub fn authenticated(value: FieldElement, mac: FieldElement) -> Share {
        Share {
            value,
            mac: Some(mac),
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.value.value().to_le_bytes());
        if let Some(m) = self.mac {
            out.extend_from_slice(&m.value().to_le_bytes());
        }
    }

    /// Decodes one share; `bytes` must be exactly `mode.share_bytes()` long.
    pub fn decode(field: &Field, mode: Mode, bytes: &[u8]) -> Result<Share, crate::field::FieldError> {
        match mode {
            Mode::SemiHonest => Ok(Share::plain(field.decode(bytes)?)),
            Mode::Authenticated => {
                if bytes.len() != 2 * ELEMENT_BYTES {
                    return Err(crate::field::FieldError::Length {
                        expected: 2 * ELEMENT_BYTES,
                        got: bytes.len(),
                    });
                }
                Ok(Share::authenticated(
                    field.decode(&bytes[..ELEMENT_BYTES])?,
                    field.decode(&bytes[ELEMENT_BYTES..])?,
                ))
            }
        }
    }
}

/// The dealer's view of the global MAC key.
#[derive(Debug, Clone, Copy)]
pub struct MacKey {
    pub alpha: FieldElement,
    pub shares: [FieldElement; 2],
}

impl MacKey {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(field: &Field, rng: &mut R) -> MacKey {
        let alpha = field.sample(rng);
        let s0 = field.sample(rng);
        MacKey {
            alpha,
            shares: [s0, field.sub(alpha, s0)],
        }
    }

    /// Builds a key with a chosen `alpha`, e.g. for worked examples.
    pub fn with_alpha<R: RngCore + CryptoRng + ?Sized>(
        field: &Field,
        alpha: FieldElement,
        rng: &mut R,
    ) -> MacKey {
        let s0 = field.sample(rng);
        MacKey {
            alpha,
            shares: [s0, field.sub(alpha, s0)],
        }
    }
}

/// Deployment-wide protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolConfig {
    pub n_parties: u8,
    pub corruption_tolerance: u8,
    pub mode: Mode,
    /// Statistical security parameter in bits.
    pub kappa: u32,
    pub field: Field,
}

impl ProtocolConfig {
    pub fn new(field: Field, mode: Mode, kappa: u32) -> Result<Self, ShareError> {
        let cfg = ProtocolConfig {
            n_parties: 2,
            corruption_tolerance: 1,
            mode,
            kappa,
            field,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ShareError> {
        if self.n_parties != 2 {
            return Err(ShareError::Config(format!(
                "only two computing parties are supported, got {}",
                self.n_parties
            )));
        }
        if self.corruption_tolerance >= self.n_parties {
            return Err(ShareError::Config("corruption tolerance must be below n".into()));
        }
        if self.kappa < 1 {
            return Err(ShareError::Config("kappa must be at least 1".into()));
        }
        Ok(())
    }

    /// Checks `p > 2^(ell + kappa + 2)`, the no-wrap bound of the comparison.
    pub fn check_comparison_bound(&self, ell: u32) -> Result<(), ShareError> {
        let need = ell + self.kappa + 2;
        if need >= 128 || self.field.modulus() <= 1u128 << need {
            return Err(ShareError::Config(format!(
                "modulus too small: need p > 2^{need} for ell={ell}, kappa={}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Splits `x` into two uniformly random additive shares.
pub fn share_secret<R: RngCore + CryptoRng + ?Sized>(
    field: &Field,
    x: FieldElement,
    rng: &mut R,
) -> (Share, Share) {
    let s0 = field.sample(rng);
    (Share::plain(s0), Share::plain(field.sub(x, s0)))
}

/// Dealer-side sharing of `x` together with shares of `alpha * x`.
pub fn share_authenticated<R: RngCore + CryptoRng + ?Sized>(
    config: &ProtocolConfig,
    x: FieldElement,
    key: &MacKey,
    rng: &mut R,
) -> Result<(Share, Share), ShareError> {
    if !config.mode.is_authenticated() {
        return Err(ShareError::ModeMismatch {
            expected: Mode::Authenticated,
        });
    }
    let f = &config.field;
    let v0 = f.sample(rng);
    let m0 = f.sample(rng);
    let mac = f.mul(key.alpha, x);
    Ok((
        Share::authenticated(v0, m0),
        Share::authenticated(f.sub(x, v0), f.sub(mac, m0)),
    ))
}

/// Shares `x` in whatever form `config.mode` requires.
pub fn share_for_mode<R: RngCore + CryptoRng + ?Sized>(
    config: &ProtocolConfig,
    x: FieldElement,
    key: Option<&MacKey>,
    rng: &mut R,
) -> Result<(Share, Share), ShareError> {
    match (config.mode, key) {
        (Mode::SemiHonest, _) => Ok(share_secret(&config.field, x, rng)),
        (Mode::Authenticated, Some(k)) => share_authenticated(config, x, k, rng),
        (Mode::Authenticated, None) => Err(ShareError::Config("authenticated sharing needs the MAC key".into())),
    }
}

pub fn reconstruct(field: &Field, s0: &Share, s1: &Share) -> FieldElement {
    field.add(s0.value, s1.value)
}

/// Sum of MAC shares, or `None` in semi-honest mode.
pub fn reconstruct_mac(field: &Field, s0: &Share, s1: &Share) -> Option<FieldElement> {
    Some(field.add(s0.mac?, s1.mac?))
}

/// Local (communication-free) operations for one party.
#[derive(Debug, Clone, Copy)]
pub struct LocalOps {
    pub field: Field,
    pub party: PartyId,
    /// This party's share of the MAC key; `None` in semi-honest mode.
    pub alpha_share: Option<FieldElement>,
}

impl LocalOps {
    pub fn new(field: Field, party: PartyId, alpha_share: Option<FieldElement>) -> Self {
        LocalOps {
            field,
            party,
            alpha_share,
        }
    }

    fn mode(&self) -> Mode {
        if self.alpha_share.is_some() {
            Mode::Authenticated
        } else {
            Mode::SemiHonest
        }
    }

    fn mac2(
        &self,
        a: Option<FieldElement>,
        b: Option<FieldElement>,
        op: impl Fn(FieldElement, FieldElement) -> FieldElement,
    ) -> Option<FieldElement> {
        match (a, b) {
            (Some(x), Some(y)) => Some(op(x, y)),
            _ => None,
        }
    }

    pub fn add(&self, a: &Share, b: &Share) -> Share {
        let f = self.field;
        Share {
            value: f.add(a.value, b.value),
            mac: self.mac2(a.mac, b.mac, |x, y| f.add(x, y)),
        }
    }

    pub fn sub(&self, a: &Share, b: &Share) -> Share {
        let f = self.field;
        Share {
            value: f.sub(a.value, b.value),
            mac: self.mac2(a.mac, b.mac, |x, y| f.sub(x, y)),
        }
    }

    pub fn scale(&self, a: &Share, c: FieldElement) -> Share {
        Share {
            value: self.field.mul(a.value, c),
            mac: a.mac.map(|m| self.field.mul(m, c)),
        }
    }

    /// Share of the public constant `c`.
    pub fn constant(&self, c: FieldElement) -> Share {
        let value = if self.party.absorbs_constants() {
            c
        } else {
            FieldElement::ZERO
        };
        Share {
            value,
            mac: self.alpha_share.map(|a| self.field.mul(a, c)),
        }
    }

    pub fn add_const(&self, a: &Share, c: FieldElement) -> Share {
        self.add(a, &self.constant(c))
    }

    /// `sum_j c_j * x_j + constant`, computed locally.
    pub fn linear_combine(
        &self,
        shares: &[Share],
        coeffs: &[FieldElement],
        constant: FieldElement,
    ) -> Result<Share, ShareError> {
        if shares.len() != coeffs.len() {
            return Err(ShareError::Arity {
                left: shares.len(),
                right: coeffs.len(),
            });
        }
        let mode = self.mode();
        if shares.iter().any(|s| s.mac.is_some() != mode.is_authenticated()) {
            return Err(ShareError::ModeMismatch { expected: mode });
        }
        let mut acc = self.constant(constant);
        for (s, &c) in shares.iter().zip(coeffs) {
            acc = self.add(&acc, &self.scale(s, c));
        }
        Ok(acc)
    }

    /// Sum of a slice of shares (empty sum is the zero share).
    pub fn sum<'a>(&self, shares: impl IntoIterator<Item = &'a Share>) -> Share {
        shares
            .into_iter()
            .fold(self.constant(FieldElement::ZERO), |acc, s| self.add(&acc, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TEST_MODULUS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn ops(f: Field, key: Option<&MacKey>) -> [LocalOps; 2] {
        [
            LocalOps::new(f, PartyId::ZERO, key.map(|k| k.shares[0])),
            LocalOps::new(f, PartyId::ONE, key.map(|k| k.shares[1])),
        ]
    }

    #[test]
    fn reconstruction_identity_exhaustive_101() {
        let f = Field::new(101).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for x in 0..101 {
            let x = f.elem(x);
            let (a, b) = share_secret(&f, x, &mut rng);
            assert_eq!(reconstruct(&f, &a, &b), x);
        }
        let (a, b) = (Share::plain(f.elem(77)), Share::plain(f.elem(64)));
        assert_eq!(reconstruct(&f, &a, &b), f.elem(40));
        assert_eq!(
            reconstruct(&f, &Share::plain(f.elem(0)), &Share::plain(f.elem(0))),
            f.elem(0)
        );
    }

    #[test]
    fn first_share_uniform() {
        let f = Field::new(101).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let n = 100_000;
        let mut bins = [0f64; 101];
        for _ in 0..n {
            let (a, _) = share_secret(&f, f.elem(40), &mut rng);
            bins[a.value.value() as usize] += 1.0;
        }
        let e = n as f64 / 101.0;
        let stat: f64 = bins.iter().map(|o| (o - e).powi(2) / e).sum();
        let pval = 1.0 - ChiSquared::new(100.0).unwrap().cdf(stat);
        assert!(pval > 0.001, "{pval}");
    }

    #[test]
    fn authenticated_examples() {
        let f = Field::new(101).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let cfg = ProtocolConfig::new(f, Mode::Authenticated, 1).unwrap();
        let key = MacKey::with_alpha(&f, f.elem(7), &mut rng);
        let (a, b) = share_authenticated(&cfg, f.elem(10), &key, &mut rng).unwrap();
        assert_eq!(reconstruct_mac(&f, &a, &b), Some(f.elem(70)));
        assert_eq!(reconstruct(&f, &a, &b), f.elem(10));
        let (a, b) = share_authenticated(&cfg, f.elem(0), &key, &mut rng).unwrap();
        assert_eq!(reconstruct_mac(&f, &a, &b), Some(f.elem(0)));

        let semi = ProtocolConfig::new(f, Mode::SemiHonest, 1).unwrap();
        assert_eq!(
            share_authenticated(&semi, f.elem(1), &key, &mut rng),
            Err(ShareError::ModeMismatch {
                expected: Mode::Authenticated
            })
        );
    }

    #[test]
    fn authenticated_random_pairs() {
        let f = Field::new(TEST_MODULUS).unwrap();
        let cfg = ProtocolConfig::new(f, Mode::Authenticated, 40).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let key = MacKey::generate(&f, &mut rng);
            let x = f.sample(&mut rng);
            let (a, b) = share_authenticated(&cfg, x, &key, &mut rng).unwrap();
            assert_eq!(reconstruct_mac(&f, &a, &b), Some(f.mul(key.alpha, x)));
        }
    }

    #[test]
    fn linear_combine_examples() {
        let f = Field::new(101).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let [o0, o1] = ops(f, None);
        let (x0, x1) = share_secret(&f, f.elem(3), &mut rng);
        let (y0, y1) = share_secret(&f, f.elem(4), &mut rng);
        let one = f.elem(1);
        let r0 = o0.linear_combine(&[x0, y0], &[one, one], f.elem(0)).unwrap();
        let r1 = o1.linear_combine(&[x1, y1], &[one, one], f.elem(0)).unwrap();
        assert_eq!(reconstruct(&f, &r0, &r1), f.elem(7));

        let m2 = f.from_i128(-2);
        let r0 = o0.linear_combine(&[x0], &[m2], f.elem(5)).unwrap();
        let r1 = o1.linear_combine(&[x1], &[m2], f.elem(5)).unwrap();
        assert_eq!(reconstruct(&f, &r0, &r1), f.elem(100));

        assert_eq!(
            o0.linear_combine(&[x0, y0], &[one], f.elem(0)),
            Err(ShareError::Arity { left: 2, right: 1 })
        );
    }

    #[test]
    fn random_affine_maps_preserve_value_and_mac() {
        let f = Field::new(TEST_MODULUS).unwrap();
        let cfg = ProtocolConfig::new(f, Mode::Authenticated, 40).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let key = MacKey::generate(&f, &mut rng);
            let [o0, o1] = ops(f, Some(&key));
            let k = rng.gen_range(1..5);
            let xs: Vec<_> = (0..k).map(|_| f.sample(&mut rng)).collect();
            let cs: Vec<_> = (0..k).map(|_| f.sample(&mut rng)).collect();
            let c = f.sample(&mut rng);
            let (s0, s1): (Vec<_>, Vec<_>) = xs
                .iter()
                .map(|&x| share_authenticated(&cfg, x, &key, &mut rng).unwrap())
                .unzip();
            let r0 = o0.linear_combine(&s0, &cs, c).unwrap();
            let r1 = o1.linear_combine(&s1, &cs, c).unwrap();
            let expect = f.add(f.dot(&cs, &xs), c);
            assert_eq!(reconstruct(&f, &r0, &r1), expect);
            assert_eq!(reconstruct_mac(&f, &r0, &r1), Some(f.mul(key.alpha, expect)));
        }
    }

    #[test]
    fn config_rejects_other_party_counts() {
        let f = Field::new(TEST_MODULUS).unwrap();
        let mut cfg = ProtocolConfig::new(f, Mode::SemiHonest, 40).unwrap();
        cfg.n_parties = 3;
        assert!(cfg.validate().is_err());
        let cfg = ProtocolConfig::new(f, Mode::SemiHonest, 40).unwrap();
        assert!(cfg.check_comparison_bound(8).is_ok());
        assert!(cfg.check_comparison_bound(19).is_err());
    }
}

//! Trusted-dealer preprocessing: Beaver triples, shared random bits and input masks.
//!
//! The dealer is an honest stand-in for a cryptographic offline phase. It does
//! NOT give the security of a real offline protocol: whoever runs it learns
//! every triple and the MAC key. Parties consume the material strictly in order,
//! so both cursors advance in lockstep under the deterministic protocol schedule.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::field::{Field, FieldElement, ELEMENT_BYTES};
use crate::sharing::{share_for_mode, MacKey, Mode, PartyId, ProtocolConfig, Share};

pub const STORE_MAGIC: &[u8; 16] = b"MPCCDSS-PREPROC\0";
pub const CLIENT_MASK_MAGIC: &[u8; 16] = b"MPCCDSS-CLMASKS\0";
pub const STORE_VERSION: u16 = 1;

pub type SessionId = [u8; 16];

#[derive(Debug, Error)]
pub enum PreprocError {
    #[error("out of preprocessing: {category} requested {requested}, {remaining} remaining")]
    OutOfPreprocessing {
        category: Category,
        requested: u64,
        remaining: u64,
    },
    #[error("input mask {id} already consumed or out of order (next unused is {next})")]
    MaskReuse { id: u64, next: u64 },
    #[error("corrupt preprocessing file: {0}")]
    Corrupt(String),
    #[error("dealing failed: {0}")]
    Deal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Triples,
    Bits,
    Masks,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Category::Triples => "triples",
            Category::Bits => "bits",
            Category::Masks => "masks",
        })
    }
}

/// One party's share of a multiplication triple `c = a * b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub a: Share,
    pub b: Share,
    pub c: Share,
}

/// Requested or consumed amounts of each category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub triples: u64,
    pub bits: u64,
    pub masks: u64,
}

impl Counts {
    pub fn new(triples: u64, bits: u64, masks: u64) -> Counts {
        Counts {
            triples,
            bits,
            masks,
        }
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts::new(self.triples + o.triples, self.bits + o.bits, self.masks + o.masks)
    }
}

impl std::ops::Mul<u64> for Counts {
    type Output = Counts;

    fn mul(self, k: u64) -> Counts {
        Counts::new(self.triples * k, self.bits * k, self.masks * k)
    }
}

/// Bit length `ceil(log2(n + 1))` of the comparison for genotypes of `n` bits.
pub fn comparison_bits(n: u64) -> u32 {
    64 - n.leading_zeros()
}

/// Exact triple and bit consumption of one query over `d` records.
pub fn budget_for_query(d: u64, n: u64, t: u64, ell: u32, kappa: u32) -> Counts {
    if d == 0 {
        return Counts::default();
    }
    let ell = ell as u64;
    Counts::new(d * (n + (2 * ell - 1) + 2 * t), d * (ell + kappa as u64), 0)
}

/// The client's half of the input masks: the plaintext `r` for each mask id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientMasks {
    pub session_id: SessionId,
    pub modulus: u128,
    pub values: Vec<FieldElement>,
}

impl ClientMasks {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CLIENT_MASK_MAGIC)?;
        w.write_all(&STORE_VERSION.to_be_bytes())?;
        w.write_all(&self.session_id)?;
        w.write_all(&self.modulus.to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_be_bytes())?;
        for v in &self.values {
            w.write_all(&v.value().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<ClientMasks, PreprocError> {
        let mut magic = [0u8; 16];
        read_exact(r, &mut magic)?;
        if &magic != CLIENT_MASK_MAGIC {
            return Err(PreprocError::Corrupt("bad client mask magic".into()));
        }
        let version = read_u16(r)?;
        if version != STORE_VERSION {
            return Err(PreprocError::Corrupt(format!("unsupported version {version}")));
        }
        let mut session_id = [0u8; 16];
        read_exact(r, &mut session_id)?;
        let modulus = read_u128_le(r)?;
        let field = Field::new(modulus).map_err(|e| PreprocError::Corrupt(e.to_string()))?;
        let n = read_u64(r)?;
        let mut values = Vec::with_capacity(n.min(1 << 24) as usize);
        let mut buf = [0u8; ELEMENT_BYTES];
        for _ in 0..n {
            read_exact(r, &mut buf)?;
            values.push(field.decode(&buf).map_err(|e| PreprocError::Corrupt(e.to_string()))?);
        }
        Ok(ClientMasks {
            session_id,
            modulus,
            values,
        })
    }

    pub fn load(path: &Path) -> Result<ClientMasks, PreprocError> {
        ClientMasks::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), PreprocError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// One party's preprocessing queues with monotone cursors.
#[derive(Debug, Clone)]
pub struct TripleStore {
    pub session_id: SessionId,
    pub mode: Mode,
    pub field: Field,
    /// This party's share of the MAC key (authenticated mode only).
    pub mac_key_share: Option<FieldElement>,
    triples: Vec<Triple>,
    bits: Vec<Share>,
    masks: Vec<Share>,
    triple_cursor: u64,
    bit_cursor: u64,
    /// Lowest mask id still available; masks are consumed by id in increasing order.
    mask_next: u64,
    masks_consumed: u64,
}

impl TripleStore {
    /// Builds an in-memory store from explicit material.
    pub fn from_material(
        session_id: SessionId,
        mode: Mode,
        field: Field,
        mac_key_share: Option<FieldElement>,
        triples: Vec<Triple>,
        bits: Vec<Share>,
        masks: Vec<Share>,
    ) -> TripleStore {
        TripleStore {
            session_id,
            mode,
            field,
            mac_key_share,
            triples,
            bits,
            masks,
            triple_cursor: 0,
            bit_cursor: 0,
            mask_next: 0,
            masks_consumed: 0,
        }
    }

    pub fn available(&self) -> Counts {
        Counts::new(self.triples.len() as u64, self.bits.len() as u64, self.masks.len() as u64)
    }

    pub fn remaining(&self) -> Counts {
        Counts::new(
            self.triples.len() as u64 - self.triple_cursor,
            self.bits.len() as u64 - self.bit_cursor,
            self.masks.len() as u64 - self.mask_next.min(self.masks.len() as u64),
        )
    }

    /// Totals dequeued so far.
    pub fn consumed(&self) -> Counts {
        Counts::new(self.triple_cursor, self.bit_cursor, self.masks_consumed)
    }

    pub fn mask_next(&self) -> u64 {
        self.mask_next
    }

    pub fn consume_triples(&mut self, k: usize) -> Result<Vec<Triple>, PreprocError> {
        let range = self.consume_triple_range(k)?;
        Ok(self.triples[range].to_vec())
    }

    /// Consumes `k` triples without copying them out; read them back with [`Self::triple_slice`].
    pub fn consume_triple_range(&mut self, k: usize) -> Result<Range<usize>, PreprocError> {
        let start = self.triple_cursor as usize;
        if k > self.triples.len() - start {
            return Err(PreprocError::OutOfPreprocessing {
                category: Category::Triples,
                requested: k as u64,
                remaining: (self.triples.len() - start) as u64,
            });
        }
        self.triple_cursor += k as u64;
        Ok(start..start + k)
    }

    pub fn triple_slice(&self, range: Range<usize>) -> &[Triple] {
        &self.triples[range]
    }

    pub fn consume_bits(&mut self, k: usize) -> Result<Vec<Share>, PreprocError> {
        let start = self.bit_cursor as usize;
        if k > self.bits.len() - start {
            return Err(PreprocError::OutOfPreprocessing {
                category: Category::Bits,
                requested: k as u64,
                remaining: (self.bits.len() - start) as u64,
            });
        }
        self.bit_cursor += k as u64;
        Ok(self.bits[start..start + k].to_vec())
    }

    /// Takes masks `first_id .. first_id + k`; ids below the high-water mark are refused.
    pub fn consume_masks(&mut self, first_id: u64, k: usize) -> Result<Vec<Share>, PreprocError> {
        if first_id < self.mask_next {
            return Err(PreprocError::MaskReuse {
                id: first_id,
                next: self.mask_next,
            });
        }
        let end = first_id
            .checked_add(k as u64)
            .filter(|&e| e <= self.masks.len() as u64)
            .ok_or(PreprocError::OutOfPreprocessing {
                category: Category::Masks,
                requested: k as u64,
                remaining: (self.masks.len() as u64).saturating_sub(first_id),
            })?;
        self.mask_next = end;
        self.masks_consumed += k as u64;
        Ok(self.masks[first_id as usize..end as usize].to_vec())
    }

    /// Checks that `need` more elements are available without consuming them.
    pub fn ensure(&self, need: Counts) -> Result<(), PreprocError> {
        let rem = self.remaining();
        for (category, requested, remaining) in [
            (Category::Triples, need.triples, rem.triples),
            (Category::Bits, need.bits, rem.bits),
        ] {
            if requested > remaining {
                return Err(PreprocError::OutOfPreprocessing {
                    category,
                    requested,
                    remaining,
                });
            }
        }
        Ok(())
    }

    /// Cursor fingerprint exchanged between parties to detect schedule drift.
    pub fn cursors(&self) -> (u64, u64) {
        (self.triple_cursor, self.bit_cursor)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_be_bytes())?;
        w.write_all(&self.session_id)?;
        w.write_all(&[self.mode.to_byte()])?;
        w.write_all(&self.field.modulus().to_le_bytes())?;
        if let Some(alpha) = self.mac_key_share {
            w.write_all(&alpha.value().to_le_bytes())?;
        }
        let c = self.available();
        for n in [c.triples, c.bits, c.masks] {
            w.write_all(&n.to_be_bytes())?;
        }
        let mut buf = Vec::with_capacity(6 * ELEMENT_BYTES);
        for t in &self.triples {
            buf.clear();
            t.a.encode_into(&mut buf);
            t.b.encode_into(&mut buf);
            t.c.encode_into(&mut buf);
            w.write_all(&buf)?;
        }
        for s in self.bits.iter().chain(&self.masks) {
            buf.clear();
            s.encode_into(&mut buf);
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<TripleStore, PreprocError> {
        let mut magic = [0u8; 16];
        read_exact(r, &mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(PreprocError::Corrupt("bad magic".into()));
        }
        let version = read_u16(r)?;
        if version != STORE_VERSION {
            return Err(PreprocError::Corrupt(format!("unsupported version {version}")));
        }
        let mut session_id = [0u8; 16];
        read_exact(r, &mut session_id)?;
        let mut mode = [0u8; 1];
        read_exact(r, &mut mode)?;
        let mode = Mode::from_byte(mode[0]).ok_or_else(|| PreprocError::Corrupt(format!("bad mode byte {}", mode[0])))?;
        let modulus = read_u128_le(r)?;
        let field = Field::new(modulus).map_err(|e| PreprocError::Corrupt(e.to_string()))?;
        let corrupt = |e: crate::field::FieldError| PreprocError::Corrupt(e.to_string());
        let mac_key_share = if mode.is_authenticated() {
            let mut buf = [0u8; ELEMENT_BYTES];
            read_exact(r, &mut buf)?;
            Some(field.decode(&buf).map_err(corrupt)?)
        } else {
            None
        };
        let (nt, nb, nm) = (read_u64(r)?, read_u64(r)?, read_u64(r)?);
        let sb = mode.share_bytes();
        let mut buf = vec![0u8; 3 * sb];
        let mut triples = Vec::with_capacity(nt.min(1 << 24) as usize);
        for _ in 0..nt {
            read_exact(r, &mut buf)?;
            let s = |i: usize| Share::decode(&field, mode, &buf[i * sb..(i + 1) * sb]).map_err(corrupt);
            triples.push(Triple {
                a: s(0)?,
                b: s(1)?,
                c: s(2)?,
            });
        }
        let mut read_shares = |n: u64| -> Result<Vec<Share>, PreprocError> {
            let mut out = Vec::with_capacity(n.min(1 << 24) as usize);
            for _ in 0..n {
                read_exact(r, &mut buf[..sb])?;
                out.push(Share::decode(&field, mode, &buf[..sb]).map_err(corrupt)?);
            }
            Ok(out)
        };
        let bits = read_shares(nb)?;
        let masks = read_shares(nm)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(PreprocError::Corrupt("trailing bytes after records".into()));
        }
        Ok(TripleStore {
            session_id,
            mode,
            field,
            mac_key_share,
            triples,
            bits,
            masks,
            triple_cursor: 0,
            bit_cursor: 0,
            mask_next: 0,
            masks_consumed: 0,
        })
    }

    /// Loads a store and, if present, its cursor sidecar so material is never reused across restarts.
    pub fn load(path: &Path) -> Result<TripleStore, PreprocError> {
        let mut store = TripleStore::read_from(&mut BufReader::new(File::open(path)?))?;
        let cpath = cursor_path(path);
        if cpath.exists() {
            let text = std::fs::read_to_string(&cpath)?;
            let nums: Vec<u64> = text
                .split_whitespace()
                .map(|s| s.parse::<u64>())
                .collect::<Result<_, _>>()
                .map_err(|e| PreprocError::Corrupt(format!("cursor file: {e}")))?;
            let [t, b, m, mc] = nums[..] else {
                return Err(PreprocError::Corrupt("cursor file needs four numbers".into()));
            };
            let avail = store.available();
            if t > avail.triples || b > avail.bits || m > avail.masks {
                return Err(PreprocError::Corrupt("cursor beyond store size".into()));
            }
            store.triple_cursor = t;
            store.bit_cursor = b;
            store.mask_next = m;
            store.masks_consumed = mc;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), PreprocError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn save_cursor(&self, store_path: &Path) -> Result<(), PreprocError> {
        let tmp = cursor_path(store_path).with_extension("cursor.tmp");
        std::fs::write(
            &tmp,
            format!(
                "{} {} {} {}\n",
                self.triple_cursor, self.bit_cursor, self.mask_next, self.masks_consumed
            ),
        )?;
        std::fs::rename(&tmp, cursor_path(store_path))?;
        Ok(())
    }
}

pub fn cursor_path(store_path: &Path) -> PathBuf {
    let mut s = store_path.as_os_str().to_owned();
    s.push(".cursor");
    PathBuf::from(s)
}

/// Output of one dealing run.
#[derive(Debug, Clone)]
pub struct Dealt {
    pub stores: [TripleStore; 2],
    pub client_masks: ClientMasks,
    /// Kept only so tests can check MAC relations; never handed to a party.
    pub mac_key: Option<MacKey>,
}

/// Generates `counts` of each category for both parties.
pub fn deal<R: RngCore + CryptoRng>(
    config: &ProtocolConfig,
    counts: Counts,
    rng: &mut R,
) -> Result<Dealt, PreprocError> {
    let f = config.field;
    let key = config.mode.is_authenticated().then(|| MacKey::generate(&f, rng));
    let mut session_id = [0u8; 16];
    rng.fill_bytes(&mut session_id);
    let share = |x: FieldElement, rng: &mut R| {
        share_for_mode(config, x, key.as_ref(), rng).map_err(|e| PreprocError::Deal(e.to_string()))
    };

    let mut triples = [Vec::with_capacity(counts.triples as usize), Vec::with_capacity(counts.triples as usize)];
    for _ in 0..counts.triples {
        let a = f.sample(rng);
        let b = f.sample(rng);
        let (a0, a1) = share(a, rng)?;
        let (b0, b1) = share(b, rng)?;
        let (c0, c1) = share(f.mul(a, b), rng)?;
        triples[0].push(Triple { a: a0, b: b0, c: c0 });
        triples[1].push(Triple { a: a1, b: b1, c: c1 });
    }
    let mut bits = [Vec::with_capacity(counts.bits as usize), Vec::with_capacity(counts.bits as usize)];
    for _ in 0..counts.bits {
        let bit = f.sample_bit(rng);
        let (s0, s1) = share(bit, rng)?;
        bits[0].push(s0);
        bits[1].push(s1);
    }
    let mut masks = [Vec::with_capacity(counts.masks as usize), Vec::with_capacity(counts.masks as usize)];
    let mut client = Vec::with_capacity(counts.masks as usize);
    for _ in 0..counts.masks {
        let r = f.sample(rng);
        let (s0, s1) = share(r, rng)?;
        client.push(r);
        masks[0].push(s0);
        masks[1].push(s1);
    }

    let [t0, t1] = triples;
    let [b0, b1] = bits;
    let [m0, m1] = masks;
    let store = |party: usize, triples, bits, masks| {
        TripleStore::from_material(session_id, config.mode, f, key.map(|k| k.shares[party]), triples, bits, masks)
    };
    Ok(Dealt {
        stores: [store(0, t0, b0, m0), store(1, t1, b1, m1)],
        client_masks: ClientMasks {
            session_id,
            modulus: f.modulus(),
            values: client,
        },
        mac_key: key,
    })
}

/// File names written by [`deal_to_dir`].
pub fn store_file_name(party: PartyId) -> String {
    format!("party{}.preproc", party.index())
}

pub const CLIENT_MASK_FILE: &str = "client.masks";

/// Deals and writes `party0.preproc`, `party1.preproc` and `client.masks` into `dir`.
pub fn deal_to_dir<R: RngCore + CryptoRng>(
    dir: &Path,
    config: &ProtocolConfig,
    counts: Counts,
    rng: &mut R,
) -> Result<SessionId, PreprocError> {
    std::fs::create_dir_all(dir)?;
    let dealt = deal(config, counts, rng)?;
    for (i, store) in dealt.stores.iter().enumerate() {
        let path = dir.join(store_file_name(PartyId::new(i as u8).unwrap()));
        store.save(&path)?;
        // a fresh store must not inherit a stale cursor
        let cpath = cursor_path(&path);
        if cpath.exists() {
            std::fs::remove_file(cpath)?;
        }
    }
    dealt.client_masks.save(&dir.join(CLIENT_MASK_FILE))?;
    Ok(dealt.stores[0].session_id)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), PreprocError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            PreprocError::Corrupt("truncated file".into())
        } else {
            PreprocError::Io(e)
        }
    })
}

fn read_u16(r: &mut impl Read) -> Result<u16, PreprocError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_be_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, PreprocError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_be_bytes(b))
}

fn read_u128_le(r: &mut impl Read) -> Result<u128, PreprocError> {
    let mut b = [0u8; 16];
    read_exact(r, &mut b)?;
    Ok(u128::from_le_bytes(b))
}

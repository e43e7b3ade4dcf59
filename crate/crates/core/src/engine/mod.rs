//! The online two-party protocol.
//!
//! Every interaction is symmetric: both parties send a frame of the same type
//! and then read the peer's. All multiplications of one layer are batched into
//! a single opening, so the number of rounds depends only on public sizes.

mod compare;
mod mac;

pub use compare::{comparison_offset, mask_coefficients};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::field::{Field, FieldElement, ELEMENT_BYTES};
use crate::preproc::{PreprocError, TripleStore};
use crate::sharing::{LocalOps, PartyId, ProtocolConfig, Share, ShareError};
use crate::wire::{Abort, MessageType, NetError, PayloadReader, Transport};

/// Elements per OPEN_BATCH frame; larger batches are split into chunks of one round.
pub const OPEN_CHUNK: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("out of preprocessing: {0}")]
    OutOfPreprocessing(String),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("parties out of sync: {0}")]
    DesyncAbort(String),
    #[error("MAC check failed")]
    MacAbort,
    #[error("invalid parameters: {0}")]
    Config(String),
    #[error("arity mismatch: {left} vs {right}")]
    Arity { left: usize, right: usize },
    #[error("peer aborted: {0}")]
    PeerAbort(Abort),
    #[error("malformed message: {0}")]
    Malformed(String),
}

impl From<PreprocError> for ProtocolError {
    fn from(e: PreprocError) -> Self {
        match e {
            PreprocError::OutOfPreprocessing { .. } => ProtocolError::OutOfPreprocessing(e.to_string()),
            other => ProtocolError::Config(other.to_string()),
        }
    }
}

impl From<NetError> for ProtocolError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Aborted(a) => ProtocolError::PeerAbort(a),
            NetError::Unexpected { .. } | NetError::Malformed(_) | NetError::Frame(_) => {
                ProtocolError::DesyncAbort(e.to_string())
            }
            other => ProtocolError::ConnectionLost(other.to_string()),
        }
    }
}

impl From<ShareError> for ProtocolError {
    fn from(e: ShareError) -> Self {
        match e {
            ShareError::Arity { left, right } => ProtocolError::Arity { left, right },
            other => ProtocolError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// One party's state for one run of the online protocol.
pub struct ProtocolSession<'s> {
    pub config: ProtocolConfig,
    ops: LocalOps,
    transport: &'s mut dyn Transport,
    store: &'s mut TripleStore,
    round: u64,
    /// `(opened value, my MAC share)` for every opening since the last check.
    opened: Vec<(FieldElement, FieldElement)>,
    opened_total: u64,
    rng: ChaCha20Rng,
}

impl<'s> ProtocolSession<'s> {
    pub fn new(
        config: ProtocolConfig,
        party: PartyId,
        transport: &'s mut dyn Transport,
        store: &'s mut TripleStore,
    ) -> Result<Self> {
        config.validate()?;
        if store.mode != config.mode {
            return Err(ProtocolError::Config(format!(
                "preprocessing is {} but session is {}",
                store.mode, config.mode
            )));
        }
        if store.field != config.field {
            return Err(ProtocolError::Config("preprocessing modulus differs from config".into()));
        }
        let alpha = store.mac_key_share;
        Ok(ProtocolSession {
            config,
            ops: LocalOps::new(config.field, party, alpha),
            transport,
            store,
            round: 0,
            opened: Vec::new(),
            opened_total: 0,
            rng: ChaCha20Rng::from_entropy(),
        })
    }

    pub fn party(&self) -> PartyId {
        self.ops.party
    }

    pub fn field(&self) -> &Field {
        &self.ops.field
    }

    pub fn ops(&self) -> &LocalOps {
        &self.ops
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn store(&self) -> &TripleStore {
        self.store
    }

    pub fn store_mut(&mut self) -> &mut TripleStore {
        self.store
    }

    /// Openings performed since the session started (for leakage accounting).
    pub fn opened_count(&self) -> u64 {
        self.opened_total
    }

    /// Openings awaiting a MAC check.
    pub fn pending_mac_log(&self) -> usize {
        self.opened.len()
    }

    /// Opens a batch of shares in one round: both parties publish their value shares.
    pub fn open(&mut self, shares: &[Share]) -> Result<Vec<FieldElement>> {
        if shares.is_empty() {
            return Ok(Vec::new());
        }
        self.round += 1;
        let round = self.round;
        let f = self.ops.field;
        let chunks: Vec<&[Share]> = shares.chunks(OPEN_CHUNK).collect();
        let n_chunks = chunks.len() as u32;
        for (i, chunk) in chunks.iter().enumerate() {
            let mut payload = Vec::with_capacity(16 + chunk.len() * ELEMENT_BYTES);
            payload.extend_from_slice(&round.to_be_bytes());
            payload.extend_from_slice(&(i as u32).to_be_bytes());
            payload.extend_from_slice(&n_chunks.to_be_bytes());
            for s in *chunk {
                f.encode_into(s.value, &mut payload);
            }
            self.transport.send(MessageType::OpenBatch, &payload)?;
        }
        let mut out = Vec::with_capacity(shares.len());
        for (i, chunk) in chunks.iter().enumerate() {
            let payload = self.transport.expect(MessageType::OpenBatch)?;
            let mut r = PayloadReader::new(&payload, MessageType::OpenBatch);
            let (peer_round, idx, total) = (r.u64()?, r.u32()?, r.u32()?);
            if peer_round != round || idx != i as u32 || total != n_chunks {
                return Err(ProtocolError::DesyncAbort(format!(
                    "open round {round} chunk {i}/{n_chunks}, peer sent round {peer_round} chunk {idx}/{total}"
                )));
            }
            let theirs = f
                .decode_many(r.rest())
                .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
            if theirs.len() != chunk.len() {
                return Err(ProtocolError::DesyncAbort(format!(
                    "open batch size {} vs peer {}",
                    chunk.len(),
                    theirs.len()
                )));
            }
            for (mine, t) in chunk.iter().zip(theirs) {
                let v = f.add(mine.value, t);
                out.push(v);
                if let Some(m) = mine.mac {
                    self.opened.push((v, m));
                }
            }
        }
        self.opened_total += shares.len() as u64;
        Ok(out)
    }

    /// Multiplies pairs of shares with one Beaver triple each, in a single round.
    pub fn beaver_mul_batch(&mut self, xs: &[Share], ys: &[Share]) -> Result<Vec<Share>> {
        if xs.len() != ys.len() {
            return Err(ProtocolError::Arity {
                left: xs.len(),
                right: ys.len(),
            });
        }
        self.beaver_mul_with(xs.len(), |i| xs[i], |i| ys[i])
    }

    /// Batched Beaver multiplication over operands produced on demand, so large
    /// batches need no copies of their inputs or of the consumed triples.
    pub(crate) fn beaver_mul_with(
        &mut self,
        n: usize,
        x: impl Fn(usize) -> Share,
        y: impl Fn(usize) -> Share,
    ) -> Result<Vec<Share>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let range = self.store.consume_triple_range(n)?;
        let ops = self.ops;
        let mut masked = Vec::with_capacity(2 * n);
        let triples = self.store.triple_slice(range.clone());
        masked.extend(triples.iter().enumerate().map(|(i, t)| ops.sub(&x(i), &t.a)));
        masked.extend(triples.iter().enumerate().map(|(i, t)| ops.sub(&y(i), &t.b)));
        let opened = self.open(&masked)?;
        drop(masked);
        let (ds, es) = opened.split_at(n);
        let f = ops.field;
        Ok(self
            .store
            .triple_slice(range)
            .iter()
            .zip(ds.iter().zip(es))
            .map(|(t, (&d, &e))| {
                let z = ops.add(&t.c, &ops.scale(&t.b, d));
                let z = ops.add(&z, &ops.scale(&t.a, e));
                ops.add_const(&z, f.mul(d, e))
            })
            .collect())
    }

    pub fn beaver_mul(&mut self, x: &Share, y: &Share) -> Result<Share> {
        Ok(self.beaver_mul_batch(std::slice::from_ref(x), std::slice::from_ref(y))?[0])
    }

    /// `a XOR b = a + b - 2ab` for shared bits, one triple per pair.
    pub fn xor_batch(&mut self, a: &[Share], b: &[Share]) -> Result<Vec<Share>> {
        let prods = self.beaver_mul_batch(a, b)?;
        let ops = self.ops;
        let minus_two = ops.field.from_i128(-2);
        Ok(a
            .iter()
            .zip(b)
            .zip(&prods)
            .map(|((x, y), p)| ops.add(&ops.add(x, y), &ops.scale(p, minus_two)))
            .collect())
    }

    pub fn xor_shared(&mut self, a: &Share, b: &Share) -> Result<Share> {
        Ok(self.xor_batch(std::slice::from_ref(a), std::slice::from_ref(b))?[0])
    }

    /// Hamming distances between `query` and every vector in `vectors`, all in one round.
    pub fn hamming_distance_many(&mut self, query: &[Share], vectors: &[&[Share]]) -> Result<Vec<Share>> {
        let n = query.len();
        if let Some(v) = vectors.iter().find(|v| v.len() != n) {
            return Err(ProtocolError::Arity {
                left: n,
                right: v.len(),
            });
        }
        // XOR of bit j of vector k is q_j + v_kj - 2 q_j v_kj; all n * m products go in one batch
        let prods = self.beaver_mul_with(n * vectors.len(), |i| query[i % n], |i| vectors[i / n][i % n])?;
        let ops = self.ops;
        let minus_two = ops.field.from_i128(-2);
        Ok(vectors
            .iter()
            .enumerate()
            .map(|(k, v)| {
                (0..n).fold(ops.constant(FieldElement::ZERO), |acc, j| {
                    let xor = ops.add(&ops.add(&query[j], &v[j]), &ops.scale(&prods[k * n + j], minus_two));
                    ops.add(&acc, &xor)
                })
            })
            .collect())
    }

    pub fn hamming_distance(&mut self, q: &[Share], v: &[Share]) -> Result<Share> {
        Ok(self.hamming_distance_many(q, &[v])?[0])
    }

    /// Exchanges the cursor fingerprint; any drift between the parties aborts.
    pub fn sync_check(&mut self) -> Result<()> {
        self.round += 1;
        let (t, b) = self.store.cursors();
        let mut payload = Vec::with_capacity(24);
        payload.extend_from_slice(&self.round.to_be_bytes());
        payload.extend_from_slice(&t.to_be_bytes());
        payload.extend_from_slice(&b.to_be_bytes());
        self.transport.send(MessageType::Sync, &payload)?;
        let theirs = self.transport.expect(MessageType::Sync)?;
        if theirs != payload {
            return Err(ProtocolError::DesyncAbort(format!(
                "round/cursor fingerprint differs at round {}",
                self.round
            )));
        }
        Ok(())
    }

    /// Batched MAC verification over every value opened since the last check.
    pub fn mac_check(&mut self) -> Result<()> {
        mac::mac_check(self)
    }

    /// Sends an ABORT to the peer (best effort).
    pub fn abort_peer(&mut self, abort: &Abort) {
        let _ = self.transport.send(MessageType::Abort, &abort.encode());
    }
}

#[cfg(test)]
mod tests;

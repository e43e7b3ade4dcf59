//! Batched MAC check with commit-and-reveal coin flipping.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::field::FieldElement;
use crate::wire::{MessageType, PayloadReader};

use super::{ProtocolError, ProtocolSession, Result};

/// `SHA-256(nonce ‖ payload)`.
pub(crate) fn commitment(nonce: &[u8; 32], payload: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(nonce);
    h.update(payload);
    h.finalize().into()
}

impl ProtocolSession<'_> {
    /// Commits to `payload`, exchanges commitments, then openings, and returns the peer's payload.
    fn commit_reveal(&mut self, payload: &[u8]) -> Result<Vec<u8>> {
        self.round += 1;
        let round = self.round.to_be_bytes();
        let mut nonce = [0u8; 32];
        self.rng.fill_bytes(&mut nonce);

        let mut msg = round.to_vec();
        msg.extend_from_slice(&commitment(&nonce, payload));
        self.transport.send(MessageType::Commit, &msg)?;
        let theirs = self.transport.expect(MessageType::Commit)?;
        let mut r = PayloadReader::new(&theirs, MessageType::Commit);
        if r.take(8)? != round {
            return Err(ProtocolError::DesyncAbort("commit round mismatch".into()));
        }
        let their_commit: [u8; 32] = r.take(32)?.try_into().unwrap();
        r.finish()?;

        let mut msg = round.to_vec();
        msg.extend_from_slice(&nonce);
        msg.extend_from_slice(payload);
        self.transport.send(MessageType::Reveal, &msg)?;
        let theirs = self.transport.expect(MessageType::Reveal)?;
        let mut r = PayloadReader::new(&theirs, MessageType::Reveal);
        if r.take(8)? != round {
            return Err(ProtocolError::DesyncAbort("reveal round mismatch".into()));
        }
        let their_nonce: [u8; 32] = r.take(32)?.try_into().unwrap();
        let their_payload = r.rest().to_vec();
        if commitment(&their_nonce, &their_payload) != their_commit {
            return Err(ProtocolError::MacAbort);
        }
        Ok(their_payload)
    }
}

pub(super) fn mac_check(s: &mut ProtocolSession<'_>) -> Result<()> {
    let Some(alpha) = s.ops.alpha_share else {
        s.opened.clear();
        return Ok(());
    };
    if s.opened.is_empty() {
        return Ok(());
    }
    let f = s.ops.field;

    let mut seed = [0u8; 32];
    s.rng.fill_bytes(&mut seed);
    let theirs = s.commit_reveal(&seed)?;
    if theirs.len() != 32 {
        return Err(ProtocolError::MacAbort);
    }
    for (a, b) in seed.iter_mut().zip(&theirs) {
        *a ^= b;
    }
    let mut coins = ChaCha20Rng::from_seed(seed);

    let mut sigma = FieldElement::ZERO;
    for &(opened, mac) in &s.opened {
        let rho = f.sample(&mut coins);
        let term = f.sub(mac, f.mul(alpha, opened));
        sigma = f.add(sigma, f.mul(rho, term));
    }
    s.opened.clear();

    let theirs = s.commit_reveal(&f.encode(sigma))?;
    let their_sigma = f.decode(&theirs).map_err(|_| ProtocolError::MacAbort)?;
    if f.add(sigma, their_sigma) != FieldElement::ZERO {
        return Err(ProtocolError::MacAbort);
    }
    Ok(())
}

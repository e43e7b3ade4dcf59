//! Runs both computing parties in-process over a loopback channel.

use std::time::Duration;

use crate::engine::{ProtocolSession, Result};
use crate::preproc::TripleStore;
use crate::sharing::{PartyId, ProtocolConfig};
use crate::wire::{Loopback, MessageType, NetError, Transport};

/// Runs `f` once per party, each in its own thread, over a fresh loopback pair.
pub fn run_pair<T, F>(config: ProtocolConfig, stores: &mut [TripleStore; 2], f: F) -> [Result<T>; 2]
where
    T: Send,
    F: Fn(&mut ProtocolSession<'_>) -> Result<T> + Sync,
{
    let (a, b) = Loopback::pair();
    run_pair_over(config, stores, [Box::new(a), Box::new(b)], f)
}

/// Like [`run_pair`] but over caller-supplied transports (e.g. recorded or tampering ones).
pub fn run_pair_over<T, F>(
    config: ProtocolConfig,
    stores: &mut [TripleStore; 2],
    transports: [Box<dyn Transport>; 2],
    f: F,
) -> [Result<T>; 2]
where
    T: Send,
    F: Fn(&mut ProtocolSession<'_>) -> Result<T> + Sync,
{
    let [s0, s1] = stores;
    let [mut t0, mut t1] = transports;
    t0.set_timeout(Some(Duration::from_secs(30)));
    t1.set_timeout(Some(Duration::from_secs(30)));
    let f = &f;
    std::thread::scope(|scope| {
        let h1 = scope.spawn(move || {
            let mut s = ProtocolSession::new(config, PartyId::ONE, t1.as_mut(), s1)?;
            f(&mut s)
        });
        let r0 = ProtocolSession::new(config, PartyId::ZERO, t0.as_mut(), s0).and_then(|mut s| f(&mut s));
        // unblock the peer if party 0 failed early
        drop(t0);
        let r1 = h1.join().expect("party 1 panicked");
        [r0, r1]
    })
}

/// Fault injection: shifts the first element of the `nth` outgoing OPEN_BATCH
/// (counting from 0), leaving every other frame untouched.
pub struct TamperOpen<T> {
    inner: T,
    nth: usize,
    seen: usize,
}

impl<T: Transport> TamperOpen<T> {
    pub fn new(inner: T, nth: usize) -> Self {
        TamperOpen { inner, nth, seen: 0 }
    }
}

impl<T: Transport> Transport for TamperOpen<T> {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> std::result::Result<(), NetError> {
        // OPEN_BATCH payload: u64 round, u32 chunk, u32 chunks, then 16-byte elements
        if msg_type == MessageType::OpenBatch && payload.len() >= 32 {
            let hit = self.seen == self.nth;
            self.seen += 1;
            if hit {
                let mut p = payload.to_vec();
                let v = u128::from_le_bytes(p[16..32].try_into().unwrap());
                // stays canonical for any modulus above 2
                let v = if v == 0 { 1 } else { v - 1 };
                p[16..32].copy_from_slice(&v.to_le_bytes());
                return self.inner.send(msg_type, &p);
            }
        }
        self.inner.send(msg_type, payload)
    }

    fn recv(&mut self) -> std::result::Result<(MessageType, Vec<u8>), NetError> {
        self.inner.recv()
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.inner.set_timeout(timeout)
    }
}

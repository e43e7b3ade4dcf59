//! The computing-party daemon.
//!
//! Each party listens for clients (and, for party 0, for the peer party).
//! Ingestion is handled per connection; queries run one at a time on a worker
//! that owns the peer link. Party 0 decides the query order and announces each
//! query to party 1 before both run the protocol, so both consume
//! preprocessing in the same order.

use std::collections::{HashMap, HashSet};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use log::{error, info, warn};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::database::{DatabaseFile, DbError, DbHeader};
use crate::engine::{ProtocolError, ProtocolSession};
use crate::preproc::{budget_for_query, PreprocError, TripleStore};
use crate::query::{evaluate_query, InputBundle, QueryError, QueryId, ResultShares, SharedRecord};
use crate::sharing::{LocalOps, PartyId};
use crate::wire::{
    accept_handshake, handshake, Abort, AbortReason, Hello, MessageType, NetError, PayloadReader, Role,
    TcpTransport, Transport, PROTOCOL_VERSION,
};

/// Ingestion frames are capped at this many records.
pub const MAX_INGEST_RECORDS: usize = 5_000;

const POLL: Duration = Duration::from_millis(200);

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Database(#[from] DbError),
    #[error(transparent)]
    Preproc(#[from] PreprocError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{0}")]
    Setup(String),
}

pub struct PartyOptions {
    pub id: PartyId,
    pub config: Config,
    pub listener: TcpListener,
    /// Party 0's address; only party 1 dials it.
    pub peer: String,
    pub db_path: PathBuf,
    pub preproc_path: PathBuf,
}

enum Reply {
    Result(Vec<u8>),
    Abort(Abort),
}

struct Job {
    query_id: QueryId,
    client_id: u8,
    input: InputBundle,
    reply: Sender<Reply>,
}

/// Per-client admitted-query counters.
#[derive(Debug, Default)]
pub struct QuotaState {
    counts: HashMap<u8, u64>,
}

impl QuotaState {
    /// Admits one more query for `client` unless it already reached `max`.
    pub fn admit(&mut self, client: u8, max: u64) -> bool {
        let c = self.counts.entry(client).or_insert(0);
        if *c >= max {
            return false;
        }
        *c += 1;
        true
    }

    pub fn used(&self, client: u8) -> u64 {
        self.counts.get(&client).copied().unwrap_or(0)
    }
}

struct Shared {
    id: PartyId,
    config: Config,
    hello: Hello,
    store: Mutex<TripleStore>,
    preproc_path: PathBuf,
    db: Mutex<DatabaseFile>,
    seen_batches: Mutex<HashSet<[u8; 16]>>,
    quota: Mutex<QuotaState>,
    /// Party 1: client queries waiting for party 0's announcement.
    pending: Mutex<HashMap<QueryId, Job>>,
    pending_cv: Condvar,
    /// Party 0: peer connection handed over by the acceptor.
    peer_slot: Mutex<Option<TcpTransport>>,
    peer_cv: Condvar,
    shutdown: AtomicBool,
}

/// A running party; dropping it does not stop the daemon, call [`PartyHandle::shutdown`].
pub struct PartyHandle {
    pub addr: std::net::SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl PartyHandle {
    pub fn shutdown(mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        self.shared.pending_cv.notify_all();
        self.shared.peer_cv.notify_all();
        // wake the acceptor
        let _ = std::net::TcpStream::connect(self.addr);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn record_count(&self) -> usize {
        self.shared.db.lock().unwrap().db.len()
    }

    pub fn consumed(&self) -> crate::preproc::Counts {
        self.shared.store.lock().unwrap().consumed()
    }
}

/// Loads state and starts the acceptor and worker threads.
pub fn spawn(opts: PartyOptions) -> Result<PartyHandle, ServiceError> {
    let cfg = opts.config.clone();
    cfg.validate()?;
    let field = cfg.field()?;
    let store = TripleStore::load(&opts.preproc_path)?;
    if store.field != field || store.mode != cfg.mode {
        return Err(ServiceError::Setup(
            "preprocessing store was dealt for a different modulus or mode".into(),
        ));
    }
    let header = DbHeader {
        party: opts.id,
        mode: cfg.mode,
        field,
        n_bits: cfg.n_bits,
        n_treatments: cfg.n_treatments,
    };
    let db = DatabaseFile::open_or_create(&opts.db_path, header)?;
    let hello = Hello {
        version: PROTOCOL_VERSION,
        session_id: store.session_id,
        role: Role::Party,
        id: opts.id.as_u8(),
        modulus: field.modulus(),
        n_bits: cfg.n_bits,
        n_treatments: cfg.n_treatments,
        mode: cfg.mode,
    };
    let addr = opts.listener.local_addr().map_err(NetError::Io)?;
    info!(
        "party {} listening on {addr}, {} records, {} triples remaining",
        opts.id,
        db.db.len(),
        store.remaining().triples
    );
    let shared = Arc::new(Shared {
        id: opts.id,
        config: cfg,
        hello,
        store: Mutex::new(store),
        preproc_path: opts.preproc_path,
        db: Mutex::new(db),
        seen_batches: Mutex::new(HashSet::new()),
        quota: Mutex::new(QuotaState::default()),
        pending: Mutex::new(HashMap::new()),
        pending_cv: Condvar::new(),
        peer_slot: Mutex::new(None),
        peer_cv: Condvar::new(),
        shutdown: AtomicBool::new(false),
    });

    let (jobs_tx, jobs_rx) = unbounded::<Job>();
    let mut threads = Vec::new();
    {
        let shared = shared.clone();
        let listener = opts.listener;
        threads.push(std::thread::spawn(move || accept_loop(shared, listener, jobs_tx)));
    }
    {
        let shared = shared.clone();
        let peer = opts.peer;
        threads.push(std::thread::spawn(move || {
            if shared.id == PartyId::ZERO {
                leader_loop(&shared, jobs_rx)
            } else {
                follower_loop(&shared, &peer)
            }
        }));
    }
    Ok(PartyHandle { addr, shared, threads })
}

/// Runs the daemon until the process is terminated.
pub fn serve(opts: PartyOptions) -> Result<(), ServiceError> {
    let handle = spawn(opts)?;
    for t in handle.threads {
        let _ = t.join();
    }
    Ok(())
}

fn accept_loop(shared: Arc<Shared>, listener: TcpListener, jobs: Sender<Job>) {
    for stream in listener.incoming() {
        if shared.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let Ok(stream) = stream else { continue };
        let shared = shared.clone();
        let jobs = jobs.clone();
        std::thread::spawn(move || {
            let Ok(mut t) = TcpTransport::new(stream) else { return };
            t.set_timeout(Some(shared.config.timeout()));
            let peer = match accept_handshake(&mut t, &shared.hello) {
                Ok(h) => h,
                Err(e) => {
                    warn!("handshake rejected: {e}");
                    return;
                }
            };
            match peer.role {
                Role::Party if shared.id == PartyId::ZERO && peer.id == 1 => {
                    info!("peer party connected");
                    *shared.peer_slot.lock().unwrap() = Some(t);
                    shared.peer_cv.notify_all();
                }
                Role::Party => warn!("unexpected party connection with id {}", peer.id),
                Role::Client => {
                    t.set_timeout(None);
                    client_loop(&shared, t, peer.id, jobs);
                }
            }
        });
    }
}

fn send_abort(t: &mut dyn Transport, abort: &Abort) {
    let _ = t.send(MessageType::Abort, &abort.encode());
}

fn client_loop(shared: &Arc<Shared>, mut t: TcpTransport, client_id: u8, jobs: Sender<Job>) {
    loop {
        let (mt, payload) = match t.recv() {
            Ok(x) => x,
            Err(_) => return,
        };
        match mt {
            MessageType::IngestBatch => match handle_ingest(shared, &payload) {
                Ok(ack) => {
                    if t.send(MessageType::IngestAck, &ack).is_err() {
                        return;
                    }
                }
                Err(abort) => {
                    warn!("ingest rejected: {abort}");
                    send_abort(&mut t, &abort);
                }
            },
            MessageType::QuerySubmit => {
                let reply = submit_query(shared, &payload, client_id, &jobs);
                let ok = match reply {
                    Reply::Result(bytes) => t.send(MessageType::ResultShare, &bytes),
                    Reply::Abort(a) => t.send(MessageType::Abort, &a.encode()),
                };
                if ok.is_err() {
                    return;
                }
            }
            other => {
                send_abort(
                    &mut t,
                    &Abort::new(AbortReason::Protocol, [0; 16], format!("unexpected {other:?}")),
                );
                return;
            }
        }
    }
}

/// INGEST_BATCH payload: `batch_id ‖ u32 records ‖ input bundle`; the ack is `batch_id ‖ u64 total`.
fn handle_ingest(shared: &Shared, payload: &[u8]) -> Result<Vec<u8>, Abort> {
    let cfg = &shared.config;
    let field = shared.hello_field();
    let mut r = PayloadReader::new(payload, MessageType::IngestBatch);
    let fail = |id: [u8; 16], msg: String| Abort::new(AbortReason::Validation, id, msg);
    let batch_id = r.id16().map_err(|e| fail([0; 16], e.to_string()))?;
    let count = r.u32().map_err(|e| fail(batch_id, e.to_string()))? as usize;
    let bundle = InputBundle::decode(&field, &mut r).map_err(|e| fail(batch_id, e.to_string()))?;
    r.finish().map_err(|e| fail(batch_id, e.to_string()))?;
    let (n, t) = (cfg.n_bits as usize, cfg.n_treatments as usize);
    if count > MAX_INGEST_RECORDS {
        return Err(fail(batch_id, format!("batch of {count} records exceeds {MAX_INGEST_RECORDS}")));
    }
    if bundle.len() != count * (n + 2 * t) {
        return Err(fail(
            batch_id,
            format!("expected {count} records of {} elements, got {} elements", n + 2 * t, bundle.len()),
        ));
    }

    let mut store = shared.store.lock().unwrap();
    let mut db = shared.db.lock().unwrap();
    if shared.seen_batches.lock().unwrap().contains(&batch_id) {
        let mut ack = batch_id.to_vec();
        ack.extend_from_slice(&(db.db.len() as u64).to_be_bytes());
        return Ok(ack);
    }
    let ops = LocalOps::new(field, shared.id, store.mac_key_share);
    let shares = bundle
        .into_shares(&ops, cfg.mode, &mut store)
        .map_err(|e| fail(batch_id, e.to_string()))?;
    if cfg.mode.is_authenticated() {
        store
            .save_cursor(&shared.preproc_path)
            .map_err(|e| Abort::new(AbortReason::Protocol, batch_id, e.to_string()))?;
    }
    let per = n + 2 * t;
    let records: Vec<SharedRecord> = shares
        .chunks(per)
        .map(|c| SharedRecord::from_flat(c.to_vec(), n, t).expect("chunk length checked"))
        .collect();
    let total = db
        .append(records)
        .map_err(|e| Abort::new(AbortReason::Protocol, batch_id, e.to_string()))?;
    shared.seen_batches.lock().unwrap().insert(batch_id);
    info!("ingested batch of {count} records, {total} stored");
    let mut ack = batch_id.to_vec();
    ack.extend_from_slice(&total.to_be_bytes());
    Ok(ack)
}

/// QUERY_SUBMIT payload from a client: `query_id ‖ input bundle`.
fn submit_query(shared: &Arc<Shared>, payload: &[u8], client_id: u8, jobs: &Sender<Job>) -> Reply {
    let field = shared.hello_field();
    let mut r = PayloadReader::new(payload, MessageType::QuerySubmit);
    let parsed = (|| -> Result<(QueryId, InputBundle), QueryError> {
        let id = r.id16()?;
        let b = InputBundle::decode(&field, &mut r)?;
        r.finish()?;
        Ok((id, b))
    })();
    let (query_id, input) = match parsed {
        Ok(x) => x,
        Err(e) => return Reply::Abort(Abort::new(AbortReason::Validation, [0; 16], e.to_string())),
    };
    if input.len() != shared.config.n_bits as usize {
        return Reply::Abort(Abort::new(
            AbortReason::Validation,
            query_id,
            format!("query genotype has {} elements, expected {}", input.len(), shared.config.n_bits),
        ));
    }
    let (tx, rx) = bounded(1);
    let job = Job {
        query_id,
        client_id,
        input,
        reply: tx,
    };
    if shared.id == PartyId::ZERO {
        if jobs.send(job).is_err() {
            return Reply::Abort(Abort::new(AbortReason::Protocol, query_id, "party shutting down"));
        }
    } else {
        shared.pending.lock().unwrap().insert(query_id, job);
        shared.pending_cv.notify_all();
    }
    rx.recv()
        .unwrap_or_else(|_| Reply::Abort(Abort::new(AbortReason::Protocol, query_id, "query dropped")))
}

impl Shared {
    fn hello_field(&self) -> crate::field::Field {
        crate::field::Field::new_unchecked(self.config.modulus)
    }

    fn stopping(&self) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }
}

fn abort_reason(e: &QueryError) -> AbortReason {
    match e {
        QueryError::Protocol(p) => match p {
            ProtocolError::OutOfPreprocessing(_) => AbortReason::Preproc,
            ProtocolError::DesyncAbort(_) => AbortReason::Desync,
            ProtocolError::MacAbort => AbortReason::Mac,
            ProtocolError::ConnectionLost(_) => AbortReason::Network,
            ProtocolError::PeerAbort(a) => a.reason,
            _ => AbortReason::Protocol,
        },
        QueryError::Preproc(PreprocError::OutOfPreprocessing { .. }) => AbortReason::Preproc,
        QueryError::Validation { .. } | QueryError::Preproc(_) => AbortReason::Validation,
        QueryError::Net(_) => AbortReason::Network,
        _ => AbortReason::Protocol,
    }
}

/// Query announcement on the peer link (QUERY_SUBMIT from party 0): `query_id ‖ u8 client ‖ u64 D`.
fn announce_payload(id: &QueryId, client: u8, d: u64) -> Vec<u8> {
    let mut p = id.to_vec();
    p.push(client);
    p.extend_from_slice(&d.to_be_bytes());
    p
}

enum Outcome {
    Done(Vec<u8>),
    /// Aborted before the protocol started; the peer link is still in a clean state.
    Refused(Abort),
    /// Aborted mid-protocol; the peer link has been resynchronized or dropped.
    Failed(Abort, bool),
}

/// Runs the joint protocol for one admitted query over the first `d` records.
fn run_protocol(
    shared: &Shared,
    peer: &mut TcpTransport,
    store: &mut TripleStore,
    records: &[SharedRecord],
    query: &[crate::sharing::Share],
    query_id: QueryId,
) -> Outcome {
    let cfg = &shared.config;
    peer.set_timeout(Some(cfg.timeout()));
    let d = records.len() as u64;
    let result = (|| -> Result<Vec<u8>, QueryError> {
        let mut session = ProtocolSession::new(cfg.protocol(), shared.id, peer, store)?;
        let agg = evaluate_query(
            &mut session,
            records,
            query,
            cfg.threshold_b,
            cfg.n_treatments as usize,
        )?;
        Ok(ResultShares {
            query_id,
            records: d,
            pairs: agg.iter().map(|(s, c)| (s.value, c.value)).collect(),
        }
        .encode())
    })();
    if let Err(e) = store.save_cursor(&shared.preproc_path) {
        error!("cannot persist preprocessing cursor: {e}");
    }
    match result {
        Ok(bytes) => Outcome::Done(bytes),
        Err(e) => {
            let reason = abort_reason(&e);
            let abort = Abort::new(reason, query_id, e.to_string());
            let link_ok = resync_after_failure(peer, &e, &abort, cfg.timeout());
            Outcome::Failed(abort, link_ok)
        }
    }
}

/// After a mid-protocol failure both sides exchange ABORTs so the link carries no stale frames.
fn resync_after_failure(peer: &mut TcpTransport, e: &QueryError, abort: &Abort, timeout: Duration) -> bool {
    if matches!(e, QueryError::Protocol(ProtocolError::ConnectionLost(_))) {
        return false;
    }
    send_abort(peer, abort);
    if matches!(e, QueryError::Protocol(ProtocolError::PeerAbort(_))) {
        return true;
    }
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        match peer.recv() {
            Ok((MessageType::Abort, _)) => return true,
            Ok(_) => continue,
            Err(NetError::Timeout) => continue,
            Err(_) => return false,
        }
    }
    false
}

fn leader_loop(shared: &Shared, jobs: Receiver<Job>) {
    let cfg = &shared.config;
    let mut peer: Option<TcpTransport> = None;
    loop {
        let job = match jobs.recv_timeout(POLL) {
            Ok(j) => j,
            Err(RecvTimeoutError::Timeout) => {
                if shared.stopping() {
                    return;
                }
                continue;
            }
            Err(RecvTimeoutError::Disconnected) => return,
        };
        let qid = job.query_id;
        let qhex = hex16(&qid);
        if !shared.quota.lock().unwrap().admit(job.client_id, cfg.max_queries_per_client) {
            let abort = Abort::new(
                AbortReason::Quota,
                qid,
                format!("client {} exceeded {} queries", job.client_id, cfg.max_queries_per_client),
            );
            warn!("query {qhex} refused: quota");
            if let Some(p) = peer.as_mut() {
                send_abort(p, &abort);
            }
            let _ = job.reply.send(Reply::Abort(abort));
            continue;
        }
        if peer.is_none() {
            let deadline = Instant::now() + cfg.timeout();
            while peer.is_none() && Instant::now() < deadline && !shared.stopping() {
                let mut slot = shared.peer_slot.lock().unwrap();
                peer = slot.take();
                if peer.is_none() {
                    drop(shared.peer_cv.wait_timeout(slot, POLL).unwrap());
                }
            }
        }
        // a newer peer connection replaces a stale one
        if let Some(newer) = shared.peer_slot.lock().unwrap().take() {
            peer = Some(newer);
        }
        let Some(link) = peer.as_mut() else {
            warn!("query {qhex} refused: peer party unavailable");
            let _ = job
                .reply
                .send(Reply::Abort(Abort::new(AbortReason::Network, qid, "peer party unavailable")));
            continue;
        };

        let mut store = shared.store.lock().unwrap();
        let db = shared.db.lock().unwrap();
        let d = db.db.len() as u64;
        let budget = budget_for_query(d, cfg.n_bits as u64, cfg.n_treatments as u64, cfg.ell(), cfg.kappa);
        let outcome = (|| {
            if let Err(e) = store.ensure(budget) {
                let abort = Abort::new(AbortReason::Preproc, qid, e.to_string());
                send_abort(link, &abort);
                return Outcome::Refused(abort);
            }
            let ops = LocalOps::new(shared.hello_field(), shared.id, store.mac_key_share);
            let query = match job.input.clone().into_shares(&ops, cfg.mode, &mut store) {
                Ok(q) => q,
                Err(e) => {
                    let abort = Abort::new(abort_reason(&e), qid, e.to_string());
                    send_abort(link, &abort);
                    return Outcome::Refused(abort);
                }
            };
            link.set_timeout(Some(cfg.timeout()));
            if let Err(e) = link.send(MessageType::QuerySubmit, &announce_payload(&qid, job.client_id, d)) {
                return Outcome::Failed(Abort::new(AbortReason::Network, qid, e.to_string()), false);
            }
            match link.expect(MessageType::Sync) {
                Ok(p) if p == qid => {}
                Ok(_) => {
                    return Outcome::Failed(Abort::new(AbortReason::Desync, qid, "peer acknowledged another query"), false)
                }
                Err(NetError::Aborted(a)) => return Outcome::Refused(Abort::new(a.reason, qid, a.detail)),
                Err(e) => return Outcome::Failed(Abort::new(AbortReason::Network, qid, e.to_string()), false),
            }
            info!("query {qhex} started over {d} records");
            run_protocol(shared, link, &mut store, &db.db.records, &query, qid)
        })();
        drop(db);
        drop(store);
        match outcome {
            Outcome::Done(bytes) => {
                info!("query {qhex} completed");
                let _ = job.reply.send(Reply::Result(bytes));
            }
            Outcome::Refused(a) => {
                warn!("query {qhex} refused: {}", a.reason.as_str());
                let _ = job.reply.send(Reply::Abort(a));
            }
            Outcome::Failed(a, link_ok) => {
                warn!("query {qhex} aborted: {}", a.reason.as_str());
                if !link_ok {
                    peer = None;
                }
                let _ = job.reply.send(Reply::Abort(a));
            }
        }
    }
}

fn dial_peer(shared: &Shared, addr: &str) -> Option<TcpTransport> {
    while !shared.stopping() {
        match TcpTransport::connect(addr, Duration::from_secs(1)) {
            Ok(mut t) => {
                t.set_timeout(Some(shared.config.timeout()));
                let mut hello = shared.hello;
                hello.role = Role::Party;
                match handshake(&mut t, &hello) {
                    Ok(_) => {
                        info!("connected to peer party");
                        return Some(t);
                    }
                    Err(e) => {
                        error!("peer handshake failed: {e}");
                        std::thread::sleep(Duration::from_secs(1));
                    }
                }
            }
            Err(_) => std::thread::sleep(POLL),
        }
    }
    None
}

/// Takes the client's pending job for `qid`, waiting up to the configured timeout.
fn take_pending(shared: &Shared, qid: &QueryId) -> Option<Job> {
    let deadline = Instant::now() + shared.config.timeout();
    let mut pending = shared.pending.lock().unwrap();
    loop {
        if let Some(j) = pending.remove(qid) {
            return Some(j);
        }
        let now = Instant::now();
        if now >= deadline || shared.stopping() {
            return None;
        }
        pending = shared.pending_cv.wait_timeout(pending, (deadline - now).min(POLL)).unwrap().0;
    }
}

fn follower_loop(shared: &Shared, peer_addr: &str) {
    let cfg = &shared.config;
    let mut link: Option<TcpTransport> = None;
    loop {
        if shared.stopping() {
            return;
        }
        let Some(peer) = link.as_mut() else {
            link = dial_peer(shared, peer_addr);
            continue;
        };
        peer.set_timeout(Some(POLL));
        let (mt, payload) = match peer.recv() {
            Ok(x) => x,
            Err(NetError::Timeout) => continue,
            Err(e) => {
                warn!("peer link lost: {e}");
                link = None;
                continue;
            }
        };
        match mt {
            MessageType::Abort => {
                // party 0 refused a query before starting it
                if let Ok(a) = Abort::decode(&payload) {
                    if let Some(job) = take_pending(shared, &a.request_id) {
                        let _ = job.reply.send(Reply::Abort(a));
                    }
                }
            }
            MessageType::QuerySubmit => {
                let mut r = PayloadReader::new(&payload, MessageType::QuerySubmit);
                let (Ok(qid), Ok(client), Ok(d)) = (r.id16(), r.u8(), r.u64()) else {
                    link = None;
                    continue;
                };
                let qhex = hex16(&qid);
                let refuse = |peer: &mut TcpTransport, reason, msg: String| {
                    let abort = Abort::new(reason, qid, msg);
                    send_abort(peer, &abort);
                    abort
                };
                let Some(job) = take_pending(shared, &qid) else {
                    refuse(peer, AbortReason::Protocol, "query never reached party 1".into());
                    warn!("query {qhex} refused: not received from client");
                    continue;
                };
                if !shared.quota.lock().unwrap().admit(client, cfg.max_queries_per_client) {
                    let a = refuse(peer, AbortReason::Quota, format!("client {client} exceeded quota"));
                    let _ = job.reply.send(Reply::Abort(a));
                    continue;
                }
                // wait until ingestion has caught up with party 0's record count
                let deadline = Instant::now() + cfg.timeout();
                while (shared.db.lock().unwrap().db.len() as u64) < d && Instant::now() < deadline {
                    std::thread::sleep(Duration::from_millis(20));
                }
                let mut store = shared.store.lock().unwrap();
                let db = shared.db.lock().unwrap();
                if (db.db.len() as u64) < d {
                    let a = refuse(peer, AbortReason::Desync, format!("party 1 holds fewer than {d} records"));
                    let _ = job.reply.send(Reply::Abort(a));
                    continue;
                }
                let budget = budget_for_query(d, cfg.n_bits as u64, cfg.n_treatments as u64, cfg.ell(), cfg.kappa);
                if let Err(e) = store.ensure(budget) {
                    let a = refuse(peer, AbortReason::Preproc, e.to_string());
                    let _ = job.reply.send(Reply::Abort(a));
                    continue;
                }
                let ops = LocalOps::new(shared.hello_field(), shared.id, store.mac_key_share);
                let query = match job.input.clone().into_shares(&ops, cfg.mode, &mut store) {
                    Ok(q) => q,
                    Err(e) => {
                        let a = refuse(peer, abort_reason(&e), e.to_string());
                        let _ = job.reply.send(Reply::Abort(a));
                        continue;
                    }
                };
                if peer.send(MessageType::Sync, &qid).is_err() {
                    link = None;
                    let _ = job.reply.send(Reply::Abort(Abort::new(AbortReason::Network, qid, "peer link lost")));
                    continue;
                }
                info!("query {qhex} started over {d} records");
                let outcome = run_protocol(shared, peer, &mut store, &db.db.records[..d as usize], &query, qid);
                drop(db);
                drop(store);
                match outcome {
                    Outcome::Done(bytes) => {
                        info!("query {qhex} completed");
                        let _ = job.reply.send(Reply::Result(bytes));
                    }
                    Outcome::Refused(a) | Outcome::Failed(a, true) => {
                        warn!("query {qhex} aborted: {}", a.reason.as_str());
                        let _ = job.reply.send(Reply::Abort(a));
                    }
                    Outcome::Failed(a, false) => {
                        warn!("query {qhex} aborted: {}", a.reason.as_str());
                        link = None;
                        let _ = job.reply.send(Reply::Abort(a));
                    }
                }
            }
            other => {
                warn!("unexpected {other:?} on idle peer link");
                link = None;
            }
        }
    }
}

pub(crate) fn hex16(id: &[u8; 16]) -> String {
    id.iter().map(|b| format!("{b:02x}")).collect()
}

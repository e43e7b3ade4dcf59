//! The clinician side: shares records and queries, talks to both parties, reconstructs results.

use std::path::{Path, PathBuf};

use rand::rngs::OsRng;
use rand::RngCore;
use thiserror::Error;

use crate::config::Config;
use crate::field::Field;
use crate::preproc::ClientMasks;
use crate::query::{
    finalize_result, parse_genotype, InputBundle, InputSharer, PatientRecord, QueryError, QueryResult, ResultShares,
};
use crate::service::MAX_INGEST_RECORDS;
use crate::sharing::Mode;
use crate::wire::{handshake, Abort, Hello, MessageType, NetError, PayloadReader, Role, TcpTransport, Transport, PROTOCOL_VERSION};

/// Result wait, in multiples of `timeout_secs`.
pub const QUERY_WAIT_FACTOR: u32 = 20;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Validation(QueryError),
    #[error("no answer from party {party} within {secs} s")]
    QueryTimeout { party: u8, secs: u64 },
    #[error("party {party}: {source}")]
    Network { party: u8, source: NetError },
    #[error("party {party} aborted: {abort}")]
    Aborted { party: u8, abort: Abort },
    #[error("ingest mismatch: party 0 holds {0} records, party 1 holds {1}")]
    IngestMismatch(u64, u64),
    #[error(transparent)]
    Result(QueryError),
    #[error("{0}")]
    Setup(String),
}

impl ClientError {
    /// Process exit code for the CLI: 2 validation, 3 network, 4 protocol abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Validation(_) | ClientError::Setup(_) => 2,
            ClientError::QueryTimeout { .. } | ClientError::Network { .. } => 3,
            ClientError::Aborted { .. } | ClientError::IngestMismatch(..) | ClientError::Result(_) => 4,
        }
    }
}

/// Parses a `genotype,treatment_id,ttf_days` file, validating every row.
pub fn parse_record_file(text: &str, n_bits: usize, n_treatments: u32) -> Result<Vec<PatientRecord>, QueryError> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: String| QueryError::Validation { line: Some(line), msg };
    match lines.next() {
        Some((_, h)) if h.trim() == "genotype,treatment_id,ttf_days" => {}
        _ => return Err(bad(1, "expected header genotype,treatment_id,ttf_days".into())),
    }
    for (i, raw) in lines {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        let cols: Vec<&str> = l.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad(line, format!("expected 3 columns, got {}", cols.len())));
        }
        let genotype = parse_genotype(cols[0]).map_err(|e| bad(line, e.to_string()))?;
        let treatment_id = cols[1]
            .parse()
            .map_err(|_| bad(line, format!("treatment_id {:?} is not a non-negative integer", cols[1])))?;
        let ttf_days = cols[2]
            .parse()
            .map_err(|_| bad(line, format!("ttf_days {:?} is not a non-negative integer", cols[2])))?;
        let rec = PatientRecord {
            genotype,
            treatment_id,
            ttf_days,
        };
        rec.validate(n_bits, n_treatments).map_err(|e| match e {
            QueryError::Validation { msg, .. } => bad(line, msg),
            other => other,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn render_record_file(records: &[PatientRecord]) -> String {
    let mut s = String::from("genotype,treatment_id,ttf_days\n");
    for r in records {
        s += &format!(
            "{},{},{}\n",
            crate::query::genotype_string(&r.genotype),
            r.treatment_id,
            r.ttf_days
        );
    }
    s
}

pub struct Clinician {
    config: Config,
    field: Field,
    masks: Option<(ClientMasks, PathBuf)>,
}

impl Clinician {
    pub fn new(config: Config) -> Result<Clinician, ClientError> {
        let field = config.field().map_err(|e| ClientError::Setup(e.to_string()))?;
        let masks = match config.mode {
            Mode::SemiHonest => None,
            Mode::Authenticated => {
                let path = config
                    .mask_file
                    .clone()
                    .ok_or_else(|| ClientError::Setup("authenticated mode needs mask_file".into()))?;
                let m = ClientMasks::load(&path).map_err(|e| ClientError::Setup(e.to_string()))?;
                if m.modulus != field.modulus() {
                    return Err(ClientError::Setup("mask file modulus differs from config".into()));
                }
                Some((m, path))
            }
        };
        Ok(Clinician { config, field, masks })
    }

    fn endpoint(&self, party: u8) -> Result<String, ClientError> {
        let e = if party == 0 { &self.config.party0 } else { &self.config.party1 };
        e.clone()
            .ok_or_else(|| ClientError::Setup(format!("config has no party{party} endpoint")))
    }

    fn mask_cursor_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".cursor");
        PathBuf::from(s)
    }

    fn mask_cursor(&self) -> u64 {
        self.masks
            .as_ref()
            .and_then(|(_, p)| std::fs::read_to_string(Self::mask_cursor_path(p)).ok())
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0)
    }

    fn save_mask_cursor(&self, next: u64) -> Result<(), ClientError> {
        if let Some((_, p)) = &self.masks {
            std::fs::write(Self::mask_cursor_path(p), format!("{next}\n"))
                .map_err(|e| ClientError::Setup(format!("cannot save mask cursor: {e}")))?;
        }
        Ok(())
    }

    fn share(&self, values: &[crate::field::FieldElement]) -> Result<[InputBundle; 2], ClientError> {
        let mut rng = OsRng;
        match &self.masks {
            None => InputSharer::SemiHonest
                .share(&self.field, values, &mut rng)
                .map_err(ClientError::Validation),
            Some((m, _)) => {
                let mut next = self.mask_cursor();
                let b = InputSharer::Authenticated { masks: m, next: &mut next }
                    .share(&self.field, values, &mut rng)
                    .map_err(ClientError::Validation)?;
                // advance before sending: a mask must never be used twice
                self.save_mask_cursor(next)?;
                Ok(b)
            }
        }
    }

    fn connect(&self, party: u8) -> Result<TcpTransport, ClientError> {
        let addr = self.endpoint(party)?;
        let timeout = self.config.timeout();
        let mut t = TcpTransport::connect(&addr, timeout).map_err(|e| match e {
            NetError::Connect { .. } | NetError::Timeout => ClientError::QueryTimeout {
                party,
                secs: self.config.timeout_secs,
            },
            source => ClientError::Network { party, source },
        })?;
        t.set_timeout(Some(timeout));
        let hello = Hello {
            version: PROTOCOL_VERSION,
            session_id: [0; 16],
            role: Role::Client,
            id: self.config.client_id,
            modulus: self.field.modulus(),
            n_bits: self.config.n_bits,
            n_treatments: self.config.n_treatments,
            mode: self.config.mode,
        };
        handshake(&mut t, &hello).map_err(|e| self.net_error(party, e))?;
        Ok(t)
    }

    fn net_error(&self, party: u8, e: NetError) -> ClientError {
        match e {
            NetError::Aborted(abort) => ClientError::Aborted { party, abort },
            NetError::Timeout => ClientError::QueryTimeout {
                party,
                secs: self.config.timeout_secs,
            },
            source => ClientError::Network { party, source },
        }
    }

    /// Sends one request to both parties concurrently and returns both replies.
    fn exchange(
        &self,
        msg_type: MessageType,
        payloads: [Vec<u8>; 2],
        reply: MessageType,
        links: &mut [TcpTransport; 2],
    ) -> Result<[Vec<u8>; 2], ClientError> {
        let [l0, l1] = links;
        let [p0, p1] = payloads;
        let run = |t: &mut TcpTransport, p: Vec<u8>| -> Result<Vec<u8>, NetError> {
            t.send(msg_type, &p)?;
            t.expect(reply)
        };
        let (r0, r1) = std::thread::scope(|s| {
            let h = s.spawn(|| run(l1, p1));
            let r0 = run(l0, p0);
            (r0, h.join().expect("party channel thread panicked"))
        });
        // an abort explains more than the other side's timeout
        match (r0, r1) {
            (Ok(a), Ok(b)) => Ok([a, b]),
            (Err(e @ NetError::Aborted(_)), _) => Err(self.net_error(0, e)),
            (_, Err(e @ NetError::Aborted(_))) => Err(self.net_error(1, e)),
            (Err(e), _) => Err(self.net_error(0, e)),
            (_, Err(e)) => Err(self.net_error(1, e)),
        }
    }

    fn connect_both(&self) -> Result<[TcpTransport; 2], ClientError> {
        let (a, b) = std::thread::scope(|s| {
            let h = s.spawn(|| self.connect(1));
            (self.connect(0), h.join().expect("connect thread panicked"))
        });
        Ok([a?, b?])
    }

    /// Shares and uploads `records`; returns the record count both parties acknowledged.
    pub fn ingest(&self, records: &[PatientRecord]) -> Result<u64, ClientError> {
        let n = self.config.n_bits as usize;
        let t = self.config.n_treatments as u32;
        for (i, r) in records.iter().enumerate() {
            r.validate(n, t).map_err(|e| match e {
                QueryError::Validation { msg, .. } => ClientError::Validation(QueryError::Validation {
                    line: Some(i + 2),
                    msg,
                }),
                other => ClientError::Validation(other),
            })?;
        }
        let mut links = self.connect_both()?;
        let mut total = None;
        for chunk in records.chunks(MAX_INGEST_RECORDS) {
            let flat: Vec<_> = chunk.iter().flat_map(|r| r.expand(&self.field, t)).collect();
            let bundles = self.share(&flat)?;
            let mut batch_id = [0u8; 16];
            OsRng.fill_bytes(&mut batch_id);
            let payloads = bundles.map(|b| {
                let mut p = batch_id.to_vec();
                p.extend_from_slice(&(chunk.len() as u32).to_be_bytes());
                b.encode_into(&mut p);
                p
            });
            let acks = self.exchange(MessageType::IngestBatch, payloads, MessageType::IngestAck, &mut links)?;
            let mut counts = [0u64; 2];
            for (i, ack) in acks.iter().enumerate() {
                let mut r = PayloadReader::new(ack, MessageType::IngestAck);
                let parsed = (|| -> Result<u64, NetError> {
                    let id = r.id16()?;
                    let c = r.u64()?;
                    r.finish()?;
                    if id != batch_id {
                        return Err(NetError::Malformed(MessageType::IngestAck));
                    }
                    Ok(c)
                })();
                counts[i] = parsed.map_err(|source| ClientError::Network { party: i as u8, source })?;
            }
            if counts[0] != counts[1] {
                return Err(ClientError::IngestMismatch(counts[0], counts[1]));
            }
            total = Some(counts[0]);
        }
        match total {
            Some(t) => Ok(t),
            None => Ok(0),
        }
    }

    /// Runs one similarity query and reconstructs the per-treatment result.
    pub fn query(&self, genotype: &[bool]) -> Result<QueryResult, ClientError> {
        let n = self.config.n_bits as usize;
        if genotype.len() != n {
            return Err(ClientError::Validation(QueryError::Validation {
                line: None,
                msg: format!("query genotype has {} bits, expected {n}", genotype.len()),
            }));
        }
        let mut links = self.connect_both()?;
        let values: Vec<_> = genotype.iter().map(|&b| self.field.elem(b as u128)).collect();
        let bundles = self.share(&values)?;
        let mut qid = [0u8; 16];
        OsRng.fill_bytes(&mut qid);
        let payloads = bundles.map(|b| {
            let mut p = qid.to_vec();
            b.encode_into(&mut p);
            p
        });
        // connecting is bounded by timeout_secs; the joint evaluation itself may run longer
        for l in links.iter_mut() {
            l.set_timeout(Some(self.config.timeout() * QUERY_WAIT_FACTOR));
        }
        let [a, b] = self.exchange(MessageType::QuerySubmit, payloads, MessageType::ResultShare, &mut links)?;
        let r0 = ResultShares::decode(&self.field, &a).map_err(ClientError::Result)?;
        let r1 = ResultShares::decode(&self.field, &b).map_err(ClientError::Result)?;
        if r0.query_id != qid || r1.query_id != qid {
            return Err(ClientError::Result(QueryError::QueryIdMismatch));
        }
        finalize_result(&self.field, &r0, &r1, self.config.n_treatments as u32).map_err(ClientError::Result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_file_round_trip_and_errors() {
        let text = "genotype,treatment_id,ttf_days\n0001,0,100\n0011,0,200\n1111,1,500\n";
        let recs = parse_record_file(text, 4, 2).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].ttf_days, 500);
        assert_eq!(render_record_file(&recs), text);

        let neg = "genotype,treatment_id,ttf_days\n0001,0,-1\n";
        match parse_record_file(neg, 4, 2) {
            Err(QueryError::Validation { line: Some(2), .. }) => {}
            other => panic!("{other:?}"),
        }
        let short = "genotype,treatment_id,ttf_days\n0001,0,1\n001,0,1\n";
        assert!(matches!(
            parse_record_file(short, 4, 2),
            Err(QueryError::Validation { line: Some(3), .. })
        ));
        assert!(parse_record_file("g,t\n", 4, 2).is_err());
        assert!(parse_record_file("genotype,treatment_id,ttf_days\n0001,2,1\n", 4, 2).is_err());
    }

    #[test]
    fn exit_codes() {
        let v = ClientError::Validation(QueryError::Integrity("x".into()));
        assert_eq!(v.exit_code(), 2);
        assert_eq!(ClientError::QueryTimeout { party: 0, secs: 1 }.exit_code(), 3);
        let a = ClientError::Aborted {
            party: 1,
            abort: Abort::new(crate::wire::AbortReason::Quota, [0; 16], ""),
        };
        assert_eq!(a.exit_code(), 4);
    }
}

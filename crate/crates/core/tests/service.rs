//! Both party daemons in-process over localhost TCP, driven through the clinician client.

use std::net::TcpListener;
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use cdss_core::bench::gen_synthetic_db;
use cdss_core::client::{ClientError, Clinician};
use cdss_core::config::Config;
use cdss_core::database::ShareDatabase;
use cdss_core::field::{FieldElement, TEST_MODULUS};
use cdss_core::preproc::{budget_for_query, deal_to_dir, store_file_name, Counts, CLIENT_MASK_FILE};
use cdss_core::query::{plaintext_oracle, InputBundle, PatientRecord};
use cdss_core::service::{spawn, PartyHandle, PartyOptions};
use cdss_core::sharing::{Mode, PartyId};
use cdss_core::wire::{
    handshake, AbortReason, Hello, MessageType, NetError, Role, TcpTransport, Transport, PROTOCOL_VERSION,
};
use rand::rngs::OsRng;

struct Capture(Mutex<Vec<String>>);

impl log::Log for Capture {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }
    fn log(&self, r: &log::Record) {
        self.0.lock().unwrap().push(format!("{} {}", r.level(), r.args()));
    }
    fn flush(&self) {}
}

fn logs() -> &'static Capture {
    static LOGGER: OnceLock<&'static Capture> = OnceLock::new();
    LOGGER.get_or_init(|| {
        let c: &'static Capture = Box::leak(Box::new(Capture(Mutex::new(Vec::new()))));
        log::set_logger(c).unwrap();
        log::set_max_level(log::LevelFilter::Info);
        c
    })
}

struct Deployment {
    parties: Vec<PartyHandle>,
    client_config: Config,
    dir: tempfile::TempDir,
}

impl Deployment {
    fn start(mut cfg: Config, counts: Counts) -> Deployment {
        logs();
        let dir = tempfile::tempdir().unwrap();
        deal_to_dir(dir.path(), &cfg.protocol(), counts, &mut OsRng).unwrap();
        let listeners = [
            TcpListener::bind("127.0.0.1:0").unwrap(),
            TcpListener::bind("127.0.0.1:0").unwrap(),
        ];
        let addrs: Vec<String> = listeners.iter().map(|l| l.local_addr().unwrap().to_string()).collect();
        let mut parties = Vec::new();
        for (i, listener) in listeners.into_iter().enumerate() {
            let id = PartyId::new(i as u8).unwrap();
            parties.push(
                spawn(PartyOptions {
                    id,
                    config: cfg.clone(),
                    listener,
                    peer: addrs[0].clone(),
                    db_path: dir.path().join(format!("party{i}.db")),
                    preproc_path: dir.path().join(store_file_name(id)),
                })
                .unwrap(),
            );
        }
        cfg.party0 = Some(addrs[0].clone());
        cfg.party1 = Some(addrs[1].clone());
        if cfg.mode == Mode::Authenticated {
            cfg.mask_file = Some(dir.path().join(CLIENT_MASK_FILE));
        }
        Deployment {
            parties,
            client_config: cfg,
            dir,
        }
    }

    fn client(&self) -> Clinician {
        Clinician::new(self.client_config.clone()).unwrap()
    }

    fn stop(self) -> tempfile::TempDir {
        for p in self.parties {
            p.shutdown();
        }
        self.dir
    }
}

fn small_config(n: u16, t: u16, b: u64) -> Config {
    let mut cfg = Config::new(n, t, b);
    cfg.modulus = TEST_MODULUS;
    cfg.timeout_secs = 10;
    cfg
}

fn query_budget(cfg: &Config, d: u64, queries: u64) -> Counts {
    budget_for_query(d, cfg.n_bits as u64, cfg.n_treatments as u64, cfg.ell(), cfg.kappa) * queries
}

#[test]
fn ingest_then_query_matches_oracle_in_both_modes() {
    for mode in [Mode::SemiHonest, Mode::Authenticated] {
        let mut cfg = small_config(16, 4, 5);
        cfg.mode = mode;
        let db = gen_synthetic_db(100, 16, 4, 42);
        let mut counts = query_budget(&cfg, 100, 2);
        counts.masks = 100 * (16 + 8) + 2 * 16;
        let dep = Deployment::start(cfg.clone(), counts);
        let client = dep.client();
        assert_eq!(client.ingest(&db).unwrap(), 100);
        for q in [db[0].genotype.clone(), db[7].genotype.clone()] {
            let got = client.query(&q).unwrap();
            assert_eq!(got, plaintext_oracle(&db, &q, 5, 4).unwrap(), "{mode}");
        }
        assert_eq!(dep.parties[0].consumed().triples, counts.triples);
        dep.stop();
    }
}

#[test]
fn queued_queries_equal_isolated_ones() {
    let cfg = small_config(8, 2, 3);
    let db = gen_synthetic_db(30, 8, 2, 5);
    let dep = Deployment::start(cfg.clone(), query_budget(&cfg, 30, 6));
    let client = dep.client();
    client.ingest(&db).unwrap();
    let queries: Vec<Vec<bool>> = db.iter().take(6).map(|r| r.genotype.clone()).collect();
    let results: Vec<_> = std::thread::scope(|s| {
        let hs: Vec<_> = queries.iter().map(|q| s.spawn(|| dep.client().query(q))).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (q, r) in queries.iter().zip(results) {
        assert_eq!(r.unwrap(), plaintext_oracle(&db, q, 3, 2).unwrap());
    }
    dep.stop();
}

#[test]
fn quota_is_enforced_on_the_sixth_query() {
    let mut cfg = small_config(8, 2, 3);
    cfg.max_queries_per_client = 5;
    let dep = Deployment::start(cfg.clone(), query_budget(&cfg, 3, 6));
    let client = dep.client();
    let db = gen_synthetic_db(3, 8, 2, 9);
    client.ingest(&db).unwrap();
    for _ in 0..5 {
        client.query(&db[0].genotype).unwrap();
    }
    match client.query(&db[0].genotype) {
        Err(ClientError::Aborted { abort, .. }) => assert_eq!(abort.reason, AbortReason::Quota),
        other => panic!("expected quota abort, got {other:?}"),
    }
    let used = dep.parties[0].consumed().triples;
    assert_eq!(used, query_budget(&cfg, 3, 5).triples);
    dep.stop();
}

#[test]
fn exhausted_preprocessing_aborts_before_running() {
    let cfg = small_config(8, 2, 3);
    let dep = Deployment::start(cfg.clone(), query_budget(&cfg, 10, 1));
    let client = dep.client();
    let db = gen_synthetic_db(10, 8, 2, 10);
    client.ingest(&db).unwrap();
    client.query(&db[0].genotype).unwrap();
    match client.query(&db[0].genotype) {
        Err(ClientError::Aborted { abort, .. }) => assert_eq!(abort.reason, AbortReason::Preproc),
        other => panic!("expected preproc abort, got {other:?}"),
    }
    dep.stop();
}

#[test]
fn malformed_ingest_leaves_database_unchanged() {
    let cfg = small_config(8, 2, 3);
    let dep = Deployment::start(cfg.clone(), Counts::new(0, 0, 0));
    let db = gen_synthetic_db(4, 8, 2, 11);
    dep.client().ingest(&db).unwrap();

    // a client configured with one bit fewer sends records of the wrong arity
    let mut short = dep.client_config.clone();
    short.n_bits = 7;
    let bad = gen_synthetic_db(2, 7, 2, 12);
    // the HELLO already disagrees on n_bits, so the parties refuse the connection
    assert!(Clinician::new(short).unwrap().ingest(&bad).is_err());
    assert_eq!(dep.parties[0].record_count(), 4);
    assert_eq!(dep.parties[1].record_count(), 4);

    // client-side validation catches bad rows before anything is sent
    let mut rows = gen_synthetic_db(2, 8, 2, 13);
    rows[1].genotype.pop();
    match dep.client().ingest(&rows) {
        Err(ClientError::Validation(e)) => assert!(e.to_string().contains("line 3"), "{e}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(dep.parties[0].record_count(), 4);

    // a hand-built batch whose single record is one genotype element short
    let addr = dep.client_config.party1.clone().unwrap();
    let mut t = TcpTransport::connect(&addr, Duration::from_secs(2)).unwrap();
    t.set_timeout(Some(Duration::from_secs(5)));
    let hello = Hello {
        version: PROTOCOL_VERSION,
        session_id: [0; 16],
        role: Role::Client,
        id: 0,
        modulus: TEST_MODULUS,
        n_bits: 8,
        n_treatments: 2,
        mode: Mode::SemiHonest,
    };
    handshake(&mut t, &hello).unwrap();
    let mut payload = vec![9u8; 16];
    payload.extend_from_slice(&1u32.to_be_bytes());
    InputBundle::Shares(vec![FieldElement::ZERO; 7 + 4]).encode_into(&mut payload);
    t.send(MessageType::IngestBatch, &payload).unwrap();
    match t.expect(MessageType::IngestAck) {
        Err(NetError::Aborted(a)) => assert_eq!(a.reason, AbortReason::Validation),
        other => panic!("{other:?}"),
    }
    drop(t);
    assert_eq!(dep.parties[1].record_count(), 4);

    let dir = dep.stop();
    for i in 0..2 {
        assert_eq!(ShareDatabase::load(&dir.path().join(format!("party{i}.db"))).unwrap().len(), 4);
    }
}

#[test]
fn empty_database_query_reports_no_data() {
    let cfg = small_config(8, 3, 8);
    let dep = Deployment::start(cfg.clone(), Counts::new(0, 0, 0));
    let r = dep.client().query(&[false; 8]).unwrap();
    assert!(r.stats.iter().all(|s| s.count == 0 && s.average().is_none()));
    dep.stop();
}

#[test]
fn party_down_is_a_timeout() {
    let mut cfg = small_config(8, 2, 3);
    cfg.timeout_secs = 1;
    let free = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    cfg.party0 = Some(free.clone());
    cfg.party1 = Some(free);
    let start = std::time::Instant::now();
    let e = Clinician::new(cfg).unwrap().query(&[false; 8]).unwrap_err();
    assert!(matches!(e, ClientError::QueryTimeout { .. }), "{e:?}");
    assert_eq!(e.exit_code(), 3);
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

fn scrub_ids(line: &str) -> String {
    line.split_whitespace()
        .filter(|w| !(w.len() == 32 && w.chars().all(|c| c.is_ascii_hexdigit())))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn party_logs_carry_no_secrets() {
    let cfg = small_config(16, 2, 4);
    let genotypes = ["1011001110001011", "0110111000110101", "1110001101011100"];
    let ttfs = [31_337u64, 27_183, 16_180];
    let db: Vec<PatientRecord> = genotypes
        .iter()
        .zip(ttfs)
        .map(|(g, ttf)| PatientRecord {
            genotype: cdss_core::query::parse_genotype(g).unwrap(),
            treatment_id: 1,
            ttf_days: ttf,
        })
        .collect();
    let dep = Deployment::start(cfg.clone(), query_budget(&cfg, 3, 1));
    let client = dep.client();
    client.ingest(&db).unwrap();
    let r = client.query(&db[0].genotype).unwrap();
    let stat = r.stat(1);
    assert!(stat.count >= 1);
    dep.stop();

    let mut secrets: Vec<String> = genotypes.iter().map(|g| g.to_string()).collect();
    secrets.extend(ttfs.iter().map(|t| t.to_string()));
    secrets.push(stat.sum_ttf.to_string());
    let lines = logs().0.lock().unwrap().clone();
    assert!(!lines.is_empty());
    for line in &lines {
        let l = scrub_ids(line);
        for s in &secrets {
            assert!(!l.contains(s.as_str()), "log line leaks {s}: {line}");
        }
    }
}

#[test]
fn restart_keeps_records_and_cursor() {
    let cfg = small_config(8, 2, 3);
    let db = gen_synthetic_db(5, 8, 2, 14);
    let dep = Deployment::start(cfg.clone(), query_budget(&cfg, 5, 2));
    dep.client().ingest(&db).unwrap();
    dep.client().query(&db[0].genotype).unwrap();
    let dir = dep.stop();

    // restart both parties on the same files
    let listeners = [
        TcpListener::bind("127.0.0.1:0").unwrap(),
        TcpListener::bind("127.0.0.1:0").unwrap(),
    ];
    let addrs: Vec<String> = listeners.iter().map(|l| l.local_addr().unwrap().to_string()).collect();
    let parties: Vec<PartyHandle> = listeners
        .into_iter()
        .enumerate()
        .map(|(i, listener)| {
            let id = PartyId::new(i as u8).unwrap();
            spawn(PartyOptions {
                id,
                config: cfg.clone(),
                listener,
                peer: addrs[0].clone(),
                db_path: dir.path().join(format!("party{i}.db")),
                preproc_path: dir.path().join(store_file_name(id)),
            })
            .unwrap()
        })
        .collect();
    assert_eq!(parties[0].record_count(), 5);
    let mut ccfg = cfg.clone();
    ccfg.party0 = Some(addrs[0].clone());
    ccfg.party1 = Some(addrs[1].clone());
    let client = Clinician::new(ccfg).unwrap();
    assert_eq!(client.query(&db[1].genotype).unwrap(), plaintext_oracle(&db, &db[1].genotype, 3, 2).unwrap());
    // the budget covered exactly two queries
    assert!(client.query(&db[1].genotype).is_err());
    for p in parties {
        p.shutdown();
    }
}

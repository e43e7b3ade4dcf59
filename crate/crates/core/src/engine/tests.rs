use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::field::{Field, TEST_MODULUS};
use crate::local::{run_pair, run_pair_over, TamperOpen};
use crate::preproc::{deal, Counts, Dealt, Triple};
use crate::sharing::{reconstruct, share_for_mode, share_secret, Mode, ProtocolConfig};
use crate::wire::{Direction, Loopback, Recorded};

fn config(mode: Mode, kappa: u32) -> ProtocolConfig {
    ProtocolConfig::new(Field::new(TEST_MODULUS).unwrap(), mode, kappa).unwrap()
}

fn dealt(cfg: &ProtocolConfig, triples: u64, bits: u64, seed: u64) -> Dealt {
    deal(cfg, Counts::new(triples, bits, 0), &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
}

/// Shares each secret for both parties: returns `[party0 shares, party1 shares]`.
fn share_all(cfg: &ProtocolConfig, d: &Dealt, xs: &[u128], rng: &mut ChaCha20Rng) -> [Vec<Share>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for &x in xs {
        let (a, b) = share_for_mode(cfg, cfg.field.elem(x), d.mac_key.as_ref(), rng).unwrap();
        out[0].push(a);
        out[1].push(b);
    }
    out
}

fn open_both(f: &Field, r: [Result<Vec<Share>>; 2]) -> Vec<u128> {
    let [a, b] = r;
    let (a, b) = (a.unwrap(), b.unwrap());
    a.iter().zip(&b).map(|(x, y)| reconstruct(f, x, y).value()).collect()
}

#[test]
fn beaver_with_explicit_triple() {
    let f = Field::new(101).unwrap();
    let cfg = ProtocolConfig::new(f, Mode::SemiHonest, 1).unwrap();
    // a = 3, b = 5, c = 15 split as (1,2), (4,1), (10,5)
    let t = |a, b, c| Triple {
        a: Share::plain(f.elem(a)),
        b: Share::plain(f.elem(b)),
        c: Share::plain(f.elem(c)),
    };
    let mk = |tr| TripleStore::from_material([7; 16], Mode::SemiHonest, f, None, vec![tr], vec![], vec![]);
    let mut stores = [mk(t(1, 4, 10)), mk(t(2, 1, 5))];
    // x = 6 = 2 + 4, y = 7 = 3 + 4
    let inputs = [(2u128, 3u128), (4, 4)];
    let r = run_pair(cfg, &mut stores, |s| {
        let (x, y) = inputs[s.party().index()];
        Ok(vec![s.beaver_mul(&Share::plain(f.elem(x)), &Share::plain(f.elem(y)))?])
    });
    assert_eq!(open_both(&f, r), vec![42]);
    assert_eq!(stores[0].consumed().triples, 1);
}

#[test]
fn beaver_random_products_both_modes() {
    for mode in [Mode::SemiHonest, Mode::Authenticated] {
        let cfg = config(mode, 40);
        let d = dealt(&cfg, 500, 0, 1);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let xs: Vec<u128> = (0..500).map(|_| rng.gen_range(0..TEST_MODULUS)).collect();
        let ys: Vec<u128> = (0..500).map(|_| rng.gen_range(0..TEST_MODULUS)).collect();
        let sx = share_all(&cfg, &d, &xs, &mut rng);
        let sy = share_all(&cfg, &d, &ys, &mut rng);
        let mut stores = d.stores.clone();
        let r = run_pair(cfg, &mut stores, |s| {
            let i = s.party().index();
            let z = s.beaver_mul_batch(&sx[i], &sy[i])?;
            s.mac_check()?;
            Ok(z)
        });
        let f = cfg.field;
        let expect: Vec<u128> = xs.iter().zip(&ys).map(|(&x, &y)| f.mul(f.elem(x), f.elem(y)).value()).collect();
        assert_eq!(open_both(&f, r), expect, "{mode}");
    }
}

#[test]
fn xor_truth_table() {
    let cfg = config(Mode::SemiHonest, 40);
    let d = dealt(&cfg, 4, 0, 3);
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let a = share_all(&cfg, &d, &[0, 0, 1, 1], &mut rng);
    let b = share_all(&cfg, &d, &[0, 1, 0, 1], &mut rng);
    let mut stores = d.stores.clone();
    let r = run_pair(cfg, &mut stores, |s| {
        let i = s.party().index();
        s.xor_batch(&a[i], &b[i])
    });
    assert_eq!(open_both(&cfg.field, r), vec![0, 1, 1, 0]);
}

#[test]
fn hamming_examples() {
    let cfg = config(Mode::Authenticated, 40);
    let d = dealt(&cfg, 15, 0, 5);
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let q = share_all(&cfg, &d, &[1, 0, 1, 1, 0], &mut rng);
    let v1 = share_all(&cfg, &d, &[1, 0, 0, 1, 1], &mut rng);
    let v2 = share_all(&cfg, &d, &[1, 0, 1, 1, 0], &mut rng);
    let v3 = share_all(&cfg, &d, &[0, 1, 0, 0, 1], &mut rng);
    let mut stores = d.stores.clone();
    let r = run_pair(cfg, &mut stores, |s| {
        let i = s.party().index();
        let h = s.hamming_distance_many(&q[i], &[&v1[i], &v2[i], &v3[i]])?;
        s.mac_check()?;
        Ok(h)
    });
    assert_eq!(open_both(&cfg.field, r), vec![2, 0, 5]);
    // one round of openings for all fifteen XORs
    assert_eq!(stores[0].consumed().triples, 15);
}

#[test]
fn bit_lt_public_exhaustive_four_bits() {
    let cfg = config(Mode::SemiHonest, 40);
    let ell = 4;
    let pairs: Vec<(u128, u128)> = (0..16).flat_map(|x| (0..16).map(move |r| (x, r))).collect();
    let d = dealt(&cfg, (pairs.len() * (2 * ell - 1)) as u64, 0, 7);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut rbits = [Vec::new(), Vec::new()];
    for &(_, r) in &pairs {
        let bits: Vec<u128> = (0..ell).map(|j| (r >> j) & 1).collect();
        let [a, b] = share_all(&cfg, &d, &bits, &mut rng);
        rbits[0].push(a);
        rbits[1].push(b);
    }
    let xs: Vec<u128> = pairs.iter().map(|p| p.0).collect();
    let mut stores = d.stores.clone();
    let r = run_pair(cfg, &mut stores, |s| s.bit_lt_public_batch(&xs, &rbits[s.party().index()]));
    let got = open_both(&cfg.field, r);
    for (i, &(x, r)) in pairs.iter().enumerate() {
        assert_eq!(got[i], (x < r) as u128, "x={x} r={r}");
    }
    assert_eq!(stores[0].consumed().triples, (pairs.len() * (2 * ell - 1)) as u64);
}

#[test]
fn comparison_examples_and_consumption() {
    let cfg = config(Mode::Authenticated, 40);
    let ell = 8u32;
    let cases: [(u128, u64); 8] = [(3, 4), (4, 4), (5, 4), (0, 0), (0, 1), (255, 255), (254, 255), (128, 200)];
    let n = cases.len() as u64;
    let d = dealt(&cfg, n * (2 * ell as u64 - 1), n * (ell + 40) as u64, 9);
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let hs = share_all(&cfg, &d, &cases.map(|c| c.0), &mut rng);
    let bs: Vec<u64> = cases.iter().map(|c| c.1).collect();
    let mut stores = d.stores.clone();
    let r = run_pair(cfg, &mut stores, |s| {
        let out = s.lt_public_threshold_batch(&hs[s.party().index()], &bs, ell)?;
        s.mac_check()?;
        Ok(out)
    });
    let expect: Vec<u128> = cases.iter().map(|&(h, b)| (h < b as u128) as u128).collect();
    assert_eq!(open_both(&cfg.field, r), expect);
    assert_eq!(stores[0].remaining(), Counts::new(0, 0, 0));
}

#[test]
fn comparison_refuses_before_consuming() {
    let cfg = config(Mode::SemiHonest, 40);
    let d = dealt(&cfg, 14, 47, 11);
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let hs = share_all(&cfg, &d, &[1], &mut rng);
    let mut stores = d.stores.clone();
    let r = run_pair(cfg, &mut stores, |s| s.lt_public_threshold(&hs[s.party().index()][0], 2, 8));
    assert!(matches!(r[0], Err(ProtocolError::OutOfPreprocessing(_))));
    assert_eq!(stores[0].consumed(), Counts::new(0, 0, 0));
    // modulus too small for ell + kappa
    let small = ProtocolConfig::new(Field::new(TEST_MODULUS).unwrap(), Mode::SemiHonest, 60).unwrap();
    let mut stores = d.stores.clone();
    let r = run_pair(small, &mut stores, |s| s.lt_public_threshold(&hs[s.party().index()][0], 2, 8));
    assert!(matches!(r[0], Err(ProtocolError::Config(_))));
}

#[test]
fn open_thousand_elements_in_one_frame() {
    let cfg = config(Mode::SemiHonest, 40);
    let f = cfg.field;
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let xs: Vec<u128> = (0..1000).map(|_| f.sample(&mut rng).value()).collect();
    let d = dealt(&cfg, 0, 0, 14);
    let sh = share_all(&cfg, &d, &xs, &mut rng);
    let mut stores = d.stores.clone();
    let (a, b) = Loopback::pair();
    let (a, log) = Recorded::new(a, false);
    let r = run_pair_over(cfg, &mut stores, [Box::new(a), Box::new(b)], |s| {
        s.open(&sh[s.party().index()])
    });
    let [r0, r1] = r;
    let (r0, r1) = (r0.unwrap(), r1.unwrap());
    assert_eq!(r0, r1);
    assert_eq!(r0.iter().map(|v| v.value()).collect::<Vec<_>>(), xs);
    let log = log.lock().unwrap();
    assert_eq!(log.count(Direction::Sent, MessageType::OpenBatch), 1);
    assert_eq!(log.entries[0].payload_len, 16 + 1000 * 16);
}

#[test]
fn empty_open_sends_nothing() {
    let cfg = config(Mode::SemiHonest, 40);
    let d = dealt(&cfg, 0, 0, 15);
    let mut stores = d.stores.clone();
    let (a, b) = Loopback::pair();
    let (a, log) = Recorded::new(a, false);
    let r = run_pair_over(cfg, &mut stores, [Box::new(a), Box::new(b)], |s| s.open(&[]));
    assert!(r[0].as_ref().unwrap().is_empty());
    assert!(log.lock().unwrap().entries.is_empty());
}

#[test]
fn mac_check_honest_and_tampered() {
    let cfg = config(Mode::Authenticated, 40);
    let d = dealt(&cfg, 20, 0, 16);
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let xs: Vec<u128> = (0..20).map(|i| i * 3).collect();
    let sh = share_all(&cfg, &d, &xs, &mut rng);
    let body = |s: &mut ProtocolSession<'_>| {
        let i = s.party().index();
        let z = s.beaver_mul_batch(&sh[i], &sh[i])?;
        s.mac_check()?;
        Ok(z)
    };

    let mut stores = d.stores.clone();
    let r = run_pair(cfg, &mut stores, body);
    assert!(r[0].is_ok() && r[1].is_ok());

    let mut stores = d.stores.clone();
    let (a, b) = Loopback::pair();
    let r = run_pair_over(cfg, &mut stores, [Box::new(a), Box::new(TamperOpen::new(b, 0))], body);
    assert!(matches!(r[0], Err(ProtocolError::MacAbort)), "{:?}", r[0]);
    assert!(matches!(r[1], Err(ProtocolError::MacAbort)), "{:?}", r[1]);
}

#[test]
fn semi_honest_mac_check_is_a_no_op() {
    let cfg = config(Mode::SemiHonest, 40);
    let d = dealt(&cfg, 0, 0, 18);
    let mut stores = d.stores.clone();
    let (a, b) = Loopback::pair();
    let (a, log) = Recorded::new(a, false);
    let r = run_pair_over(cfg, &mut stores, [Box::new(a), Box::new(b)], |s| s.mac_check());
    assert!(r[0].is_ok() && r[1].is_ok());
    assert!(log.lock().unwrap().entries.is_empty());
}

#[test]
fn sync_check_detects_drift() {
    let cfg = config(Mode::SemiHonest, 40);
    let d = dealt(&cfg, 3, 0, 19);
    let mut stores = d.stores.clone();
    stores[1].consume_triples(1).unwrap();
    let r = run_pair(cfg, &mut stores, |s| s.sync_check());
    assert!(matches!(r[0], Err(ProtocolError::DesyncAbort(_))));
    assert!(matches!(r[1], Err(ProtocolError::DesyncAbort(_))));

    let mut stores = d.stores.clone();
    let r = run_pair(cfg, &mut stores, |s| s.sync_check());
    assert!(r[0].is_ok() && r[1].is_ok());
}

#[test]
fn silent_peer_is_connection_lost() {
    let cfg = config(Mode::SemiHonest, 40);
    let f = cfg.field;
    let d = dealt(&cfg, 0, 0, 20);
    let mut store = d.stores[0].clone();
    let (mut a, _b) = Loopback::pair();
    a.set_timeout(Some(std::time::Duration::from_millis(100)));
    let mut s = ProtocolSession::new(cfg, crate::sharing::PartyId::ZERO, &mut a, &mut store).unwrap();
    let (x, _) = share_secret(&f, f.elem(5), &mut ChaCha20Rng::seed_from_u64(1));
    assert!(matches!(s.open(&[x]), Err(ProtocolError::ConnectionLost(_))));
}

#[test]
fn session_rejects_mismatched_store() {
    let cfg = config(Mode::SemiHonest, 40);
    let auth = config(Mode::Authenticated, 40);
    let d = dealt(&auth, 0, 0, 21);
    let mut store = d.stores[0].clone();
    let (mut a, _b) = Loopback::pair();
    assert!(matches!(
        ProtocolSession::new(cfg, crate::sharing::PartyId::ZERO, &mut a, &mut store),
        Err(ProtocolError::Config(_))
    ));
}

#[test]
fn out_of_triples_is_reported() {
    let cfg = config(Mode::SemiHonest, 40);
    let d = dealt(&cfg, 1, 0, 22);
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    let sh = share_all(&cfg, &d, &[1, 2], &mut rng);
    let mut stores = d.stores.clone();
    let r = run_pair(cfg, &mut stores, |s| {
        let i = s.party().index();
        s.beaver_mul_batch(&sh[i], &sh[i])
    });
    assert!(matches!(r[0], Err(ProtocolError::OutOfPreprocessing(_))));
}

//! Synthetic databases, in-process query runs and the scaling sweep.

use std::time::Instant;

use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::config::Config;
use crate::engine::ProtocolError;
use crate::local::run_pair_over;
use crate::preproc::{budget_for_query, deal, Counts, PreprocError};
use crate::query::{
    evaluate_query, finalize_result, plaintext_oracle, InputSharer, PatientRecord, QueryError,
    QueryResult, ResultShares, SharedRecord,
};
use crate::sharing::LocalOps;
use crate::wire::{Loopback, Recorded, Transport};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("oracle mismatch at D={db_size}, rep {rep}: timings of wrong results are meaningless")]
    BenchInvalid { db_size: usize, rep: usize },
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Preproc(#[from] PreprocError),
    #[error("{0}")]
    Invalid(String),
}

/// Deterministic synthetic records: Bernoulli(0.1) genotype bits, uniform treatment, TTF in [30, 3650].
pub fn gen_synthetic_db(d: usize, n: usize, t: u32, seed: u64) -> Vec<PatientRecord> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..d)
        .map(|_| PatientRecord {
            genotype: (0..n).map(|_| rng.gen_bool(0.1)).collect(),
            treatment_id: rng.gen_range(0..t),
            ttf_days: rng.gen_range(30..=3650),
        })
        .collect()
}

/// One complete query run between two in-process parties.
#[derive(Debug, Clone)]
pub struct LocalRun {
    pub result: QueryResult,
    pub wall_millis: f64,
    /// Preprocessing consumed by party 0 during the online phase.
    pub consumed: Counts,
    /// Bytes exchanged between the parties, both directions, frame headers included.
    pub wire_bytes: u64,
}

/// Deals exactly one query's preprocessing, shares `records` and `query` as a
/// client would, runs the online phase over loopback and reconstructs the result.
/// Only the online phase is timed.
pub fn run_local_query<R: RngCore + CryptoRng>(
    config: &Config,
    records: &[PatientRecord],
    query: &[bool],
    rng: &mut R,
) -> Result<LocalRun, QueryError> {
    let field = config.field().map_err(|e| QueryError::Validation {
        line: None,
        msg: e.to_string(),
    })?;
    let proto = config.protocol();
    let (n, t) = (config.n_bits as usize, config.n_treatments as u32);
    let d = records.len() as u64;
    let mut budget = budget_for_query(d, n as u64, t as u64, config.ell(), config.kappa);
    let input_len = records.len() * (n + 2 * t as usize) + n;
    if config.mode.is_authenticated() {
        budget.masks = input_len as u64;
    }
    let dealt = deal(&proto, budget, rng)?;
    let mut stores = dealt.stores;

    let flat: Vec<_> = records.iter().flat_map(|r| r.expand(&field, t)).collect();
    let qvals: Vec<_> = query.iter().map(|&b| field.elem(b as u128)).collect();
    let mut next = 0u64;
    let mut sharer = if config.mode.is_authenticated() {
        InputSharer::Authenticated {
            masks: &dealt.client_masks,
            next: &mut next,
        }
    } else {
        InputSharer::SemiHonest
    };
    let db_bundles = sharer.share(&field, &flat, rng)?;
    let q_bundles = sharer.share(&field, &qvals, rng)?;

    let mut inputs: Vec<(Vec<SharedRecord>, Vec<crate::sharing::Share>)> = Vec::with_capacity(2);
    for (i, (db_b, q_b)) in db_bundles.into_iter().zip(q_bundles).enumerate() {
        let store = &mut stores[i];
        let ops = LocalOps::new(field, crate::sharing::PartyId::new(i as u8).unwrap(), store.mac_key_share);
        let shares = db_b.into_shares(&ops, config.mode, store)?;
        let recs = shares
            .chunks(n + 2 * t as usize)
            .map(|c| SharedRecord::from_flat(c.to_vec(), n, t as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let q = q_b.into_shares(&ops, config.mode, store)?;
        inputs.push((recs, q));
    }
    let before = stores[0].consumed();

    let (a, b) = Loopback::pair();
    let (a, log) = Recorded::new(a, false);
    let transports: [Box<dyn Transport>; 2] = [Box::new(a), Box::new(b)];
    let threshold = config.threshold_b;
    let inputs = &inputs;
    let start = Instant::now();
    let [r0, r1] = run_pair_over(proto, &mut stores, transports, |s| {
        let (recs, q) = &inputs[s.party().index()];
        evaluate_query(s, recs, q, threshold, t as usize).map_err(|e| match e {
            QueryError::Protocol(p) => p,
            other => ProtocolError::Malformed(other.to_string()),
        })
    });
    let wall_millis = start.elapsed().as_secs_f64() * 1e3;
    let (a0, a1) = (r0?, r1?);

    let to_result = |agg: &Vec<(crate::sharing::Share, crate::sharing::Share)>| ResultShares {
        query_id: [0; 16],
        records: d,
        pairs: agg.iter().map(|(s, c)| (s.value, c.value)).collect(),
    };
    let result = finalize_result(&field, &to_result(&a0), &to_result(&a1), t)?;
    let after = stores[0].consumed();
    let wire_bytes = log.lock().unwrap().wire_bytes;
    Ok(LocalRun {
        result,
        wall_millis,
        consumed: Counts::new(
            after.triples - before.triples,
            after.bits - before.bits,
            after.masks - before.masks,
        ),
        wire_bytes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub db_size: usize,
    pub rep: usize,
    pub wall_millis: f64,
    pub triples: u64,
    pub bytes: u64,
}

/// Least-squares fit `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub runs: Vec<BenchRun>,
    pub fit: Option<LinearFit>,
}

impl SweepReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("db_size,rep,wall_millis,triples,bytes\n");
        for r in &self.runs {
            s += &format!("{},{},{:.3},{},{}\n", r.db_size, r.rep, r.wall_millis, r.triples, r.bytes);
        }
        s
    }

    pub fn fit_report(&self) -> String {
        match self.fit {
            Some(f) => format!(
                "wall_millis = {:.4} * D + {:.2}   R^2 = {:.4}",
                f.slope, f.intercept, f.r_squared
            ),
            None => "not enough distinct sizes for a fit".into(),
        }
    }
}

/// Times `reps` oracle-checked queries per size, after one untimed warm-up run.
/// `progress` sees each run as it completes.
pub fn run_sweep(
    config: &Config,
    sizes: &[usize],
    reps: usize,
    seed: u64,
    mut progress: impl FnMut(&BenchRun),
) -> Result<SweepReport, BenchError> {
    if sizes.is_empty() || reps == 0 {
        return Err(BenchError::Invalid("need at least one size and one repetition".into()));
    }
    let (n, t) = (config.n_bits as usize, config.n_treatments as u32);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut runs = Vec::new();
    let dbs: Vec<Vec<PatientRecord>> = sizes.iter().map(|&d| gen_synthetic_db(d, n, t, seed ^ d as u64)).collect();
    // one discarded pass so allocator and cache warm-up stay out of the timings
    for db in &dbs {
        run_local_query(config, db, &vec![false; n], &mut rng)?;
    }
    // sizes interleaved per repetition, so a burst of background load hits every size alike
    for rep in 0..reps {
        for db in &dbs {
            let d = db.len();
            // query near a stored genotype so some records fall under the threshold
            let mut query = db.first().map(|r| r.genotype.clone()).unwrap_or_else(|| vec![false; n]);
            for bit in query.iter_mut() {
                if rng.gen_bool(0.05) {
                    *bit = !*bit;
                }
            }
            let run = run_local_query(config, db, &query, &mut rng)?;
            let expected = plaintext_oracle(db, &query, config.threshold_b, t)?;
            if run.result != expected {
                return Err(BenchError::BenchInvalid { db_size: d, rep });
            }
            let b = BenchRun {
                db_size: d,
                rep,
                wall_millis: run.wall_millis,
                triples: run.consumed.triples,
                bytes: run.wire_bytes,
            };
            progress(&b);
            runs.push(b);
        }
    }
    runs.sort_by_key(|r| (r.db_size, r.rep));
    let points: Vec<(f64, f64)> = runs.iter().map(|r| (r.db_size as f64, r.wall_millis)).collect();
    Ok(SweepReport {
        fit: linear_fit(&points),
        runs,
    })
}

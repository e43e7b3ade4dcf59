//! The similarity query: per-treatment (sum of TTF, count) over patients whose
//! genotype is within Hamming distance `B` of the query, plus the plaintext oracle
//! and client-side result handling.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::engine::{ProtocolError, ProtocolSession};
use crate::field::{Field, FieldElement, ELEMENT_BYTES};
use crate::preproc::{comparison_bits, ClientMasks, PreprocError, TripleStore};
use crate::sharing::{share_secret, LocalOps, Mode, Share};
use crate::wire::{MessageType, NetError, PayloadReader};

/// Largest accepted time-to-treatment-failure, in days.
pub const TTF_MAX: u64 = 100_000;

pub type QueryId = [u8; 16];

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("{}invalid record: {msg}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Validation { line: Option<usize>, msg: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("result integrity violated: {0}")]
    Integrity(String),
    #[error("result shares belong to different queries")]
    QueryIdMismatch,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Preproc(#[from] PreprocError),
}

fn invalid(msg: impl Into<String>) -> QueryError {
    QueryError::Validation {
        line: None,
        msg: msg.into(),
    }
}

/// One plaintext database row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub genotype: Vec<bool>,
    pub treatment_id: u32,
    pub ttf_days: u64,
}

impl PatientRecord {
    pub fn validate(&self, n_bits: usize, n_treatments: u32) -> Result<(), QueryError> {
        if self.genotype.len() != n_bits {
            return Err(invalid(format!(
                "genotype has {} bits, expected {n_bits}",
                self.genotype.len()
            )));
        }
        if self.treatment_id >= n_treatments {
            return Err(invalid(format!(
                "treatment_id {} not below {n_treatments}",
                self.treatment_id
            )));
        }
        if self.ttf_days > TTF_MAX {
            return Err(invalid(format!("ttf_days {} exceeds {TTF_MAX}", self.ttf_days)));
        }
        Ok(())
    }

    /// Flattens to the `N + 2T` field values that get shared:
    /// genotype bits, treatment one-hot, TTF-scaled one-hot.
    pub fn expand(&self, field: &Field, n_treatments: u32) -> Vec<FieldElement> {
        let t = n_treatments as usize;
        let mut out = Vec::with_capacity(self.genotype.len() + 2 * t);
        out.extend(self.genotype.iter().map(|&b| field.elem(b as u128)));
        out.extend((0..t).map(|i| field.elem((i == self.treatment_id as usize) as u128)));
        out.extend((0..t).map(|i| {
            if i == self.treatment_id as usize {
                field.elem(self.ttf_days as u128)
            } else {
                FieldElement::ZERO
            }
        }));
        out
    }
}

/// Genotype with bit `j` set iff `j` is a listed mutation position.
pub fn encode_genotype(positions: &[usize], n_bits: usize) -> Result<Vec<bool>, QueryError> {
    let mut g = vec![false; n_bits];
    for &p in positions {
        if p >= n_bits {
            return Err(invalid(format!("mutation position {p} outside [0, {n_bits})")));
        }
        g[p] = true;
    }
    Ok(g)
}

pub fn parse_genotype(s: &str) -> Result<Vec<bool>, QueryError> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(invalid(format!("genotype character {other:?} is not 0 or 1"))),
        })
        .collect()
}

pub fn genotype_string(g: &[bool]) -> String {
    g.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Aggregate for one treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreatmentStat {
    pub treatment_id: u32,
    pub count: u64,
    pub sum_ttf: u64,
}

impl TreatmentStat {
    /// Average TTF, absent when no similar patient received this treatment.
    pub fn average(&self) -> Option<Average> {
        (self.count > 0).then_some(Average {
            sum: self.sum_ttf,
            count: self.count,
        })
    }
}

/// Exact rational `sum / count`.
#[derive(Debug, Clone, Copy)]
pub struct Average {
    pub sum: u64,
    pub count: u64,
}

impl Average {
    /// Value in tenths of a day, rounded half up.
    pub fn tenths(&self) -> u128 {
        (20 * self.sum as u128 + self.count as u128) / (2 * self.count as u128)
    }

    pub fn as_f64(&self) -> f64 {
        self.sum as f64 / self.count as f64
    }
}

impl PartialEq for Average {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Average {}

impl PartialOrd for Average {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Average {
    fn cmp(&self, o: &Self) -> Ordering {
        (self.sum as u128 * o.count as u128).cmp(&(o.sum as u128 * self.count as u128))
    }
}

impl std::fmt::Display for Average {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let t = self.tenths();
        write!(f, "{}.{}", t / 10, t % 10)
    }
}

/// Per-treatment aggregates, indexed by treatment id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResult {
    pub stats: Vec<TreatmentStat>,
}

impl QueryResult {
    pub fn stat(&self, treatment: u32) -> &TreatmentStat {
        &self.stats[treatment as usize]
    }
}

/// Direct evaluation of the query on plaintext records.
pub fn plaintext_oracle(
    db: &[PatientRecord],
    query: &[bool],
    threshold: u64,
    n_treatments: u32,
) -> Result<QueryResult, QueryError> {
    let mut stats: Vec<TreatmentStat> = (0..n_treatments)
        .map(|t| TreatmentStat {
            treatment_id: t,
            count: 0,
            sum_ttf: 0,
        })
        .collect();
    for (i, r) in db.iter().enumerate() {
        r.validate(query.len(), n_treatments).map_err(|e| match e {
            QueryError::Validation { msg, .. } => QueryError::Validation {
                line: Some(i + 1),
                msg,
            },
            other => other,
        })?;
        if (hamming(query, &r.genotype) as u64) < threshold {
            let s = &mut stats[r.treatment_id as usize];
            s.count += 1;
            s.sum_ttf += r.ttf_days;
        }
    }
    Ok(QueryResult { stats })
}

/// Treatments ordered by average TTF (descending), ties by id, absent averages last.
pub fn rank_treatments(result: &QueryResult) -> Vec<TreatmentStat> {
    let mut v = result.stats.clone();
    v.sort_by(|a, b| match (a.average(), b.average()) {
        (Some(x), Some(y)) => y.cmp(&x).then(a.treatment_id.cmp(&b.treatment_id)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.treatment_id.cmp(&b.treatment_id),
    });
    v
}

pub fn render_table(result: &QueryResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>12}  {:>8}  {:>12}", "treatment_id", "count", "avg_ttf_days");
    for s in rank_treatments(result) {
        let avg = s.average().map(|a| a.to_string()).unwrap_or_else(|| "no data".into());
        let _ = writeln!(out, "{:>12}  {:>8}  {:>12}", s.treatment_id, s.count, avg);
    }
    out
}

pub fn render_csv(result: &QueryResult) -> String {
    let mut out = String::from("treatment_id,count,sum_ttf,avg_ttf\n");
    for s in rank_treatments(result) {
        let avg = s.average().map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", s.treatment_id, s.count, s.sum_ttf, avg);
    }
    out
}

/// One party's shares of a stored record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedRecord {
    pub genotype: Vec<Share>,
    pub onehot: Vec<Share>,
    pub ttf_onehot: Vec<Share>,
}

impl SharedRecord {
    /// Splits a flat `N + 2T` share vector.
    pub fn from_flat(flat: Vec<Share>, n_bits: usize, n_treatments: usize) -> Result<SharedRecord, QueryError> {
        if flat.len() != n_bits + 2 * n_treatments {
            return Err(invalid(format!(
                "record has {} elements, expected {}",
                flat.len(),
                n_bits + 2 * n_treatments
            )));
        }
        let mut it = flat.into_iter();
        Ok(SharedRecord {
            genotype: it.by_ref().take(n_bits).collect(),
            onehot: it.by_ref().take(n_treatments).collect(),
            ttf_onehot: it.collect(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Share> {
        self.genotype.iter().chain(&self.onehot).chain(&self.ttf_onehot)
    }
}

/// Field values as sent by a client to one party.
///
/// Semi-honest mode: the client's own additive shares. Authenticated mode: the
/// public differences `x - r` against dealer masks starting at `first_mask_id`,
/// identical for both parties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputBundle {
    Shares(Vec<FieldElement>),
    Masked { first_mask_id: u64, values: Vec<FieldElement> },
}

impl InputBundle {
    pub fn len(&self) -> usize {
        match self {
            InputBundle::Shares(v) | InputBundle::Masked { values: v, .. } => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let (kind, id, vals) = match self {
            InputBundle::Shares(v) => (0u8, 0u64, v),
            InputBundle::Masked { first_mask_id, values } => (1u8, *first_mask_id, values),
        };
        out.push(kind);
        out.extend_from_slice(&id.to_be_bytes());
        out.extend_from_slice(&(vals.len() as u32).to_be_bytes());
        for v in vals {
            out.extend_from_slice(&v.value().to_le_bytes());
        }
    }

    pub fn decode(field: &Field, r: &mut PayloadReader<'_>) -> Result<InputBundle, QueryError> {
        let kind = r.u8()?;
        let id = r.u64()?;
        let n = r.u32()? as usize;
        let bytes = r.take(n.checked_mul(ELEMENT_BYTES).ok_or_else(|| invalid("element count overflow"))?)?;
        let vals = field
            .decode_many(bytes)
            .map_err(|e| invalid(format!("bad field element: {e}")))?;
        match kind {
            0 => Ok(InputBundle::Shares(vals)),
            1 => Ok(InputBundle::Masked {
                first_mask_id: id,
                values: vals,
            }),
            k => Err(invalid(format!("unknown input kind {k}"))),
        }
    }

    /// Turns the bundle into this party's shares, consuming dealer masks if needed.
    pub fn into_shares(self, ops: &LocalOps, mode: Mode, store: &mut TripleStore) -> Result<Vec<Share>, QueryError> {
        match (self, mode) {
            (InputBundle::Shares(v), Mode::SemiHonest) => Ok(v.into_iter().map(Share::plain).collect()),
            (InputBundle::Masked { first_mask_id, values }, Mode::Authenticated) => {
                let masks = store.consume_masks(first_mask_id, values.len())?;
                Ok(masks.iter().zip(values).map(|(m, eps)| ops.add_const(m, eps)).collect())
            }
            (_, mode) => Err(invalid(format!("input encoding does not match {mode} mode"))),
        }
    }
}

/// Client-side input preparation for both parties.
pub enum InputSharer<'a> {
    SemiHonest,
    Authenticated { masks: &'a ClientMasks, next: &'a mut u64 },
}

impl InputSharer<'_> {
    /// Produces the bundles for party 0 and party 1.
    pub fn share<R: RngCore + CryptoRng>(
        &mut self,
        field: &Field,
        values: &[FieldElement],
        rng: &mut R,
    ) -> Result<[InputBundle; 2], QueryError> {
        match self {
            InputSharer::SemiHonest => {
                let (a, b): (Vec<_>, Vec<_>) = values
                    .iter()
                    .map(|&x| {
                        let (s0, s1) = share_secret(field, x, rng);
                        (s0.value, s1.value)
                    })
                    .unzip();
                Ok([InputBundle::Shares(a), InputBundle::Shares(b)])
            }
            InputSharer::Authenticated { masks, next } => {
                let start = **next;
                let end = start + values.len() as u64;
                if end > masks.values.len() as u64 {
                    return Err(QueryError::Preproc(PreprocError::OutOfPreprocessing {
                        category: crate::preproc::Category::Masks,
                        requested: values.len() as u64,
                        remaining: (masks.values.len() as u64).saturating_sub(start),
                    }));
                }
                let masked: Vec<FieldElement> = values
                    .iter()
                    .zip(&masks.values[start as usize..end as usize])
                    .map(|(&x, &r)| field.sub(x, r))
                    .collect();
                **next = end;
                let b = InputBundle::Masked {
                    first_mask_id: start,
                    values: masked,
                };
                Ok([b.clone(), b])
            }
        }
    }
}

/// One party's result shares as sent to the client.
///
/// RESULT_SHARE payload: `query_id ‖ u64 D ‖ u16 T ‖ T × (sum ‖ count)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultShares {
    pub query_id: QueryId,
    pub records: u64,
    pub pairs: Vec<(FieldElement, FieldElement)>,
}

impl ResultShares {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(26 + self.pairs.len() * 2 * ELEMENT_BYTES);
        out.extend_from_slice(&self.query_id);
        out.extend_from_slice(&self.records.to_be_bytes());
        out.extend_from_slice(&(self.pairs.len() as u16).to_be_bytes());
        for (s, c) in &self.pairs {
            out.extend_from_slice(&s.value().to_le_bytes());
            out.extend_from_slice(&c.value().to_le_bytes());
        }
        out
    }

    pub fn decode(field: &Field, bytes: &[u8]) -> Result<ResultShares, QueryError> {
        let mut r = PayloadReader::new(bytes, MessageType::ResultShare);
        let query_id = r.id16()?;
        let records = r.u64()?;
        let t = r.u16()? as usize;
        let vals = field
            .decode_many(r.take(t * 2 * ELEMENT_BYTES)?)
            .map_err(|_| QueryError::Net(NetError::Malformed(MessageType::ResultShare)))?;
        r.finish()?;
        Ok(ResultShares {
            query_id,
            records,
            pairs: vals.chunks(2).map(|c| (c[0], c[1])).collect(),
        })
    }
}

/// Reconstructs both parties' result shares and checks them against the public bounds.
pub fn finalize_result(
    field: &Field,
    r0: &ResultShares,
    r1: &ResultShares,
    n_treatments: u32,
) -> Result<QueryResult, QueryError> {
    if r0.query_id != r1.query_id {
        return Err(QueryError::QueryIdMismatch);
    }
    if r0.records != r1.records {
        return Err(QueryError::Integrity(format!(
            "parties evaluated {} and {} records",
            r0.records, r1.records
        )));
    }
    let t = n_treatments as usize;
    if r0.pairs.len() != t || r1.pairs.len() != t {
        return Err(QueryError::Integrity("wrong number of treatments".into()));
    }
    let d = r0.records;
    let mut stats = Vec::with_capacity(t);
    for (i, ((s0, c0), (s1, c1))) in r0.pairs.iter().zip(&r1.pairs).enumerate() {
        let sum = field.add(*s0, *s1).value();
        let count = field.add(*c0, *c1).value();
        if count > d as u128 {
            return Err(QueryError::Integrity(format!(
                "treatment {i}: count {count} exceeds database size {d}"
            )));
        }
        if sum > d as u128 * TTF_MAX as u128 {
            return Err(QueryError::Integrity(format!("treatment {i}: sum exceeds D * TTF_MAX")));
        }
        if count == 0 && sum != 0 {
            return Err(QueryError::Integrity(format!("treatment {i}: nonzero sum with zero count")));
        }
        stats.push(TreatmentStat {
            treatment_id: i as u32,
            count: count as u64,
            sum_ttf: sum as u64,
        });
    }
    Ok(QueryResult { stats })
}

/// Shares of `(sum_t, count_t)` for every treatment.
pub type AggregateShares = Vec<(Share, Share)>;

/// The secure query. Opens only comparison masks and Beaver differences, and
/// consumes exactly `budget_for_query(D, N, T, ell, kappa)` preprocessing.
pub fn evaluate_query(
    session: &mut ProtocolSession<'_>,
    db: &[SharedRecord],
    query: &[Share],
    threshold: u64,
    n_treatments: usize,
) -> Result<AggregateShares, QueryError> {
    let n = query.len();
    if threshold > n as u64 {
        return Err(QueryError::Protocol(ProtocolError::Config(format!(
            "threshold {threshold} exceeds genotype length {n}"
        ))));
    }
    for rec in db {
        if rec.genotype.len() != n || rec.onehot.len() != n_treatments || rec.ttf_onehot.len() != n_treatments {
            return Err(invalid("record shape does not match query"));
        }
    }
    let ell = comparison_bits(n as u64).max(1);
    let d = db.len() as u64;
    let budget = crate::preproc::budget_for_query(d, n as u64, n_treatments as u64, ell, session.config.kappa);
    if d > 0 {
        session.config.check_comparison_bound(ell).map_err(ProtocolError::from)?;
    }
    session.sync_check()?;
    session.store().ensure(budget)?;

    let vectors: Vec<&[Share]> = db.iter().map(|r| r.genotype.as_slice()).collect();
    let distances = session.hamming_distance_many(query, &vectors)?;
    let similar = session.lt_public_threshold_batch(&distances, &vec![threshold; db.len()], ell)?;

    let t = n_treatments;
    // per record: similar * onehot, then similar * ttf_onehot
    let prods = session.beaver_mul_with(
        db.len() * 2 * t,
        |i| similar[i / (2 * t)],
        |i| {
            let (rec, j) = (&db[i / (2 * t)], i % (2 * t));
            if j < t {
                rec.onehot[j]
            } else {
                rec.ttf_onehot[j - t]
            }
        },
    )?;

    let ops = *session.ops();
    let zero = ops.constant(FieldElement::ZERO);
    let mut sums = vec![zero; t];
    let mut counts = vec![zero; t];
    for chunk in prods.chunks(2 * t) {
        for j in 0..t {
            counts[j] = ops.add(&counts[j], &chunk[j]);
            sums[j] = ops.add(&sums[j], &chunk[t + j]);
        }
    }
    session.mac_check()?;
    session.sync_check()?;
    Ok(sums.into_iter().zip(counts).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(g: &str, t: u32, ttf: u64) -> PatientRecord {
        PatientRecord {
            genotype: parse_genotype(g).unwrap(),
            treatment_id: t,
            ttf_days: ttf,
        }
    }

    fn three_records() -> Vec<PatientRecord> {
        vec![rec("0000", 0, 100), rec("0001", 0, 200), rec("1111", 0, 900)]
    }

    #[test]
    fn oracle_three_record_example() {
        let r = plaintext_oracle(&three_records(), &parse_genotype("0000").unwrap(), 2, 2).unwrap();
        assert_eq!((r.stat(0).sum_ttf, r.stat(0).count), (300, 2));
        assert_eq!((r.stat(1).sum_ttf, r.stat(1).count), (0, 0));
        assert_eq!(r.stat(0).average().unwrap().to_string(), "150.0");
        assert!(r.stat(1).average().is_none());
    }

    #[test]
    fn oracle_boundaries() {
        let db = three_records();
        let q = parse_genotype("0001").unwrap();
        let r = plaintext_oracle(&db, &q, 1, 2).unwrap();
        assert_eq!(r.stat(0).count, 1);
        assert_eq!(r.stat(0).sum_ttf, 200);
        let r = plaintext_oracle(&db, &q, 0, 2).unwrap();
        assert!(r.stats.iter().all(|s| s.count == 0));
        let r = plaintext_oracle(&[], &q, 3, 2).unwrap();
        assert!(r.stats.iter().all(|s| s.count == 0 && s.sum_ttf == 0));
    }

    #[test]
    fn oracle_single_record_like_the_worked_record() {
        // record 512: genotype prefix 1000000111101, treatment 57, TTF 257 days
        let g = parse_genotype("1000000111101").unwrap();
        let db = vec![PatientRecord {
            genotype: g.clone(),
            treatment_id: 57,
            ttf_days: 257,
        }];
        let r = plaintext_oracle(&db, &g, 1, 100).unwrap();
        let s = r.stat(57);
        assert_eq!((s.count, s.sum_ttf), (1, 257));
        assert_eq!(s.average().unwrap().to_string(), "257.0");
    }

    #[test]
    fn oracle_rejects_malformed() {
        let db = vec![rec("0000", 0, 1), rec("000", 0, 1)];
        let err = plaintext_oracle(&db, &[false; 4], 1, 2).unwrap_err();
        assert!(matches!(err, QueryError::Validation { line: Some(2), .. }));
        assert!(rec("0000", 2, 1).validate(4, 2).is_err());
        assert!(rec("0000", 1, TTF_MAX + 1).validate(4, 2).is_err());
        assert!(rec("0000", 1, TTF_MAX).validate(4, 2).is_ok());
    }

    #[test]
    fn genotype_encoding() {
        assert_eq!(genotype_string(&encode_genotype(&[], 8).unwrap()), "00000000");
        assert_eq!(genotype_string(&encode_genotype(&[0, 7], 8).unwrap()), "10000001");
        assert!(matches!(encode_genotype(&[8], 8), Err(QueryError::Validation { .. })));
        assert!(parse_genotype("01x").is_err());
    }

    fn stats(entries: &[(u32, u64, u64)]) -> QueryResult {
        QueryResult {
            stats: entries
                .iter()
                .map(|&(t, count, sum)| TreatmentStat {
                    treatment_id: t,
                    count,
                    sum_ttf: sum,
                })
                .collect(),
        }
    }

    #[test]
    fn ranking() {
        let order = |r: &QueryResult| rank_treatments(r).iter().map(|s| s.treatment_id).collect::<Vec<_>>();
        assert_eq!(order(&stats(&[(0, 2, 300), (1, 0, 0), (2, 1, 300)])), vec![2, 0, 1]);
        assert_eq!(order(&stats(&[(0, 0, 0), (1, 0, 0), (2, 0, 0)])), vec![0, 1, 2]);
        assert_eq!(
            order(&stats(&[(0, 0, 0), (1, 2, 200), (2, 0, 0), (3, 1, 100)])),
            vec![1, 3, 0, 2]
        );
    }

    #[test]
    fn averages_round_to_one_decimal() {
        let a = |sum, count| Average { sum, count }.to_string();
        assert_eq!(a(300, 2), "150.0");
        assert_eq!(a(1, 3), "0.3");
        assert_eq!(a(2, 3), "0.7");
        assert_eq!(a(1, 4), "0.3"); // 0.25 rounds half up
        assert_eq!(a(1000, 7), "142.9");
    }

    #[test]
    fn table_and_csv() {
        let r = plaintext_oracle(&three_records(), &parse_genotype("0000").unwrap(), 2, 2).unwrap();
        let table = render_table(&r);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[1].trim_start().starts_with('0') && lines[1].ends_with("150.0"));
        assert!(lines[2].ends_with("no data"));
        assert_eq!(render_csv(&r), "treatment_id,count,sum_ttf,avg_ttf\n0,2,300,150.0\n1,0,0,\n");
    }

    fn split(f: &Field, vals: &[(u128, u128)], rng: &mut (impl RngCore + CryptoRng)) -> (ResultShares, ResultShares) {
        let mut p0 = Vec::new();
        let mut p1 = Vec::new();
        for &(s, c) in vals {
            let (s0, s1) = share_secret(f, f.elem(s), rng);
            let (c0, c1) = share_secret(f, f.elem(c), rng);
            p0.push((s0.value, c0.value));
            p1.push((s1.value, c1.value));
        }
        let mk = |pairs| ResultShares {
            query_id: [1; 16],
            records: 3,
            pairs,
        };
        (mk(p0), mk(p1))
    }

    #[test]
    fn finalize_checks() {
        use rand::SeedableRng;
        let f = Field::new(crate::field::TEST_MODULUS).unwrap();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(9);
        let (a, b) = split(&f, &[(300, 2), (0, 0)], &mut rng);
        let r = finalize_result(&f, &a, &b, 2).unwrap();
        assert_eq!(r.stat(0).average().unwrap().to_string(), "150.0");
        assert!(r.stat(1).average().is_none());
        assert_eq!(ResultShares::decode(&f, &a.encode()).unwrap(), a);

        let (a, b) = split(&f, &[(300, 4), (0, 0)], &mut rng);
        assert!(matches!(finalize_result(&f, &a, &b, 2), Err(QueryError::Integrity(_))));

        let (a, mut b) = split(&f, &[(300, 2), (0, 0)], &mut rng);
        b.query_id = [2; 16];
        assert!(matches!(finalize_result(&f, &a, &b, 2), Err(QueryError::QueryIdMismatch)));
    }

    #[test]
    fn expand_layout() {
        let f = Field::new(101).unwrap();
        let v = rec("101", 1, 42).expand(&f, 3);
        let raw: Vec<u128> = v.iter().map(|x| x.value()).collect();
        assert_eq!(raw, vec![1, 0, 1, 0, 1, 0, 0, 42, 0]);
    }
}

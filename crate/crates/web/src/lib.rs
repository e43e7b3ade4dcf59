//! Browser demo: what a single computing party sees, and the query it helps answer.
//!
//! Everything runs locally in the page; nothing is sent anywhere.

use cdss_core::client::parse_record_file;
use cdss_core::engine::{comparison_offset, mask_coefficients};
use cdss_core::field::Field;
use cdss_core::preproc::{budget_for_query, comparison_bits};
use cdss_core::query::{parse_genotype, plaintext_oracle, render_table};
use cdss_core::sharing::share_secret;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Histogram of one party's share of `secret` over `samples` fresh sharings mod the prime `p`.
pub fn share_histogram(secret: u32, p: u32, party: u8, samples: u32, seed: u32) -> Result<Vec<u32>, String> {
    let f = Field::new(p as u128).map_err(|e| e.to_string())?;
    if p > 4096 {
        return Err("use a prime below 4096 so the histogram stays readable".to_string());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed as u64);
    let x = f.elem(secret as u128);
    let mut h = vec![0u32; p as usize];
    for _ in 0..samples {
        let (a, b) = share_secret(&f, x, &mut rng);
        let s = if party == 0 { a.value } else { b.value };
        h[s.value() as usize] += 1;
    }
    Ok(h)
}

/// Histogram of the value opened by the comparison `[h < threshold]`, in `bins` buckets.
///
/// The opened value is `h - threshold + 2^ell` plus `ell + kappa` random mask bits, so its
/// distribution barely moves with `h` once `kappa` is a few bits.
pub fn masked_opening_histogram(
    h: u32,
    threshold: u32,
    ell: u32,
    kappa: u32,
    samples: u32,
    bins: u32,
    seed: u32,
) -> Result<Vec<u32>, String> {
    if ell == 0 || ell > 16 || kappa > 40 || bins == 0 {
        return Err("need 1 <= ell <= 16, kappa <= 40, bins >= 1".to_string());
    }
    if (h as u64) >> ell != 0 || (threshold as u64) >> ell != 0 {
        return Err("h and threshold must fit in ell bits".to_string());
    }
    let f = Field::new_unchecked(cdss_core::field::TEST_MODULUS);
    let coeffs = mask_coefficients(&f, ell, kappa);
    let a = h as u128 + comparison_offset(ell, threshold as u64);
    let top = 1u128 << (ell + kappa + 1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed as u64);
    let mut hist = vec![0u32; bins as usize];
    for _ in 0..samples {
        let mask: u128 = coeffs.iter().filter(|_| rng.gen_bool(0.5)).map(|c| c.value()).sum();
        let z = a + mask;
        hist[(z * bins as u128 / top) as usize] += 1;
    }
    Ok(hist)
}

/// Plaintext reference of the similarity query over a `genotype,treatment_id,ttf_days` table,
/// followed by the preprocessing one secure run of it would consume.
pub fn similarity_query(records_csv: &str, genotype: &str, threshold: u32, n_treatments: u32) -> Result<String, String> {
    let query = parse_genotype(genotype.trim()).map_err(|e| e.to_string())?;
    let n = query.len();
    let records = parse_record_file(records_csv, n, n_treatments).map_err(|e| e.to_string())?;
    if threshold as usize > n {
        return Err("threshold exceeds genotype length".to_string());
    }
    let result = plaintext_oracle(&records, &query, threshold as u64, n_treatments).map_err(|e| e.to_string())?;
    let b = budget_for_query(records.len() as u64, n as u64, n_treatments as u64, comparison_bits(n as u64), 40);
    Ok(format!(
        "{}\nsecure evaluation: {} triples, {} random bits",
        render_table(&result),
        b.triples,
        b.bits
    ))
}

/// JavaScript bindings; errors surface as thrown `Error`s.
pub mod js {
    use wasm_bindgen::prelude::*;

    #[wasm_bindgen(js_name = shareHistogram)]
    pub fn share_histogram(secret: u32, p: u32, party: u8, samples: u32, seed: u32) -> Result<Vec<u32>, JsError> {
        super::share_histogram(secret, p, party, samples, seed).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = maskedOpeningHistogram)]
    pub fn masked_opening_histogram(
        h: u32,
        threshold: u32,
        ell: u32,
        kappa: u32,
        samples: u32,
        bins: u32,
        seed: u32,
    ) -> Result<Vec<u32>, JsError> {
        super::masked_opening_histogram(h, threshold, ell, kappa, samples, bins, seed).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = similarityQuery)]
    pub fn similarity_query(records_csv: &str, genotype: &str, threshold: u32, n_treatments: u32) -> Result<String, JsError> {
        super::similarity_query(records_csv, genotype, threshold, n_treatments).map_err(|e| JsError::new(&e))
    }
}

//! Comparison of a shared integer against a public threshold.
//!
//! `[h < B]` is computed by opening `z = (h - B + 2^ell) + r + 2^ell * r'` for
//! shared random bits `r` (ell bits) and `r'` (kappa bits). Bit `ell` of
//! `a = h - B + 2^ell` is `[h >= B]`; it is recovered from `z mod 2^ell` and a
//! borrow bit `[z mod 2^ell < r]` computed with a prefix-OR over the bits of `r`.
//! The opened `z` is statistically close (distance `2^-kappa`) to uniform noise.

use crate::field::{Field, FieldElement};
use crate::sharing::Share;

use super::{ProtocolError, ProtocolSession, Result};

/// Coefficients `2^0 .. 2^(ell + kappa - 1)` applied to the mask bits in `z`.
pub fn mask_coefficients(field: &Field, ell: u32, kappa: u32) -> Vec<FieldElement> {
    (0..ell + kappa).map(|j| field.pow(field.elem(2), j as u128)).collect()
}

/// Public offset `2^ell - B` added to `h`, so bit `ell` of the result is `[h >= B]`.
pub fn comparison_offset(ell: u32, threshold: u64) -> u128 {
    (1u128 << ell) - threshold as u128
}

impl ProtocolSession<'_> {
    /// `[x_i < r_i]` for public `x_i` and shared bit decompositions `r_i` (LSB first).
    /// Consumes `2 * ell - 1` triples per item over `ell` rounds.
    pub fn bit_lt_public_batch(&mut self, xs: &[u128], r_bits: &[Vec<Share>]) -> Result<Vec<Share>> {
        if xs.len() != r_bits.len() {
            return Err(ProtocolError::Arity {
                left: xs.len(),
                right: r_bits.len(),
            });
        }
        let Some(ell) = r_bits.first().map(|r| r.len()) else {
            return Ok(Vec::new());
        };
        if ell == 0 || r_bits.iter().any(|r| r.len() != ell) {
            return Err(ProtocolError::Config("bit decompositions must share a nonzero length".into()));
        }
        if ell < 128 && xs.iter().any(|&x| x >> ell != 0) {
            return Err(ProtocolError::Config(format!("public operand exceeds {ell} bits")));
        }
        let ops = *self.ops();
        let one = FieldElement::ONE;
        let n = xs.len();

        // d_j = x_j XOR r_j, linear because x_j is public
        let d: Vec<Vec<Share>> = xs
            .iter()
            .zip(r_bits)
            .map(|(&x, r)| {
                r.iter()
                    .enumerate()
                    .map(|(j, rj)| {
                        if (x >> j) & 1 == 1 {
                            ops.sub(&ops.constant(one), rj)
                        } else {
                            *rj
                        }
                    })
                    .collect()
            })
            .collect();

        // f_j = OR of d_(ell-1) .. d_j, from the most significant bit down
        let mut f: Vec<Vec<Share>> = d.iter().map(|di| vec![di[ell - 1]; ell]).collect();
        for j in (0..ell - 1).rev() {
            let prev: Vec<Share> = f.iter().map(|fi| fi[j + 1]).collect();
            let cur: Vec<Share> = d.iter().map(|di| di[j]).collect();
            let prods = self.beaver_mul_batch(&prev, &cur)?;
            for i in 0..n {
                let s = ops.add(&prev[i], &cur[i]);
                f[i][j] = ops.sub(&s, &prods[i]);
            }
        }

        // w_j marks the most significant differing position; [x < r] = sum_j w_j r_j
        let mut ws = Vec::with_capacity(n * ell);
        let mut rs = Vec::with_capacity(n * ell);
        for i in 0..n {
            for j in 0..ell {
                let w = if j == ell - 1 {
                    f[i][j]
                } else {
                    ops.sub(&f[i][j], &f[i][j + 1])
                };
                ws.push(w);
                rs.push(r_bits[i][j]);
            }
        }
        let prods = self.beaver_mul_batch(&ws, &rs)?;
        Ok(prods.chunks(ell).map(|c| ops.sum(c)).collect())
    }

    /// `[h_i < B_i]` for shared `h_i` and public thresholds, with `0 <= h_i, B_i < 2^ell`.
    /// Consumes `ell + kappa` shared bits and `2 * ell - 1` triples per item.
    pub fn lt_public_threshold_batch(
        &mut self,
        hs: &[Share],
        thresholds: &[u64],
        ell: u32,
    ) -> Result<Vec<Share>> {
        if hs.len() != thresholds.len() {
            return Err(ProtocolError::Arity {
                left: hs.len(),
                right: thresholds.len(),
            });
        }
        let kappa = self.config.kappa;
        if ell == 0 || ell > 64 {
            return Err(ProtocolError::Config(format!("comparison bit length {ell} out of range")));
        }
        self.config.check_comparison_bound(ell)?;
        if let Some(b) = thresholds.iter().find(|&&b| (b as u128) >> ell != 0) {
            return Err(ProtocolError::Config(format!("threshold {b} exceeds {ell} bits")));
        }
        let n = hs.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let (l, k) = (ell as usize, kappa as usize);
        // fail before consuming anything
        self.store().ensure(crate::preproc::Counts::new(
            (n * (2 * l - 1)) as u64,
            (n * (l + k)) as u64,
            0,
        ))?;

        let ops = *self.ops();
        let f = ops.field;
        let bits = self.store_mut().consume_bits(n * (l + k))?;
        let coeffs = mask_coefficients(&f, ell, kappa);

        let mut zs = Vec::with_capacity(n);
        for (i, (h, &b)) in hs.iter().zip(thresholds).enumerate() {
            let mask = &bits[i * (l + k)..(i + 1) * (l + k)];
            let offset = f.elem(comparison_offset(ell, b));
            let z = ops.add(&ops.linear_combine(mask, &coeffs, offset)?, h);
            zs.push(z);
        }
        let opened = self.open(&zs)?;

        let low_mask = (1u128 << ell) - 1;
        let z_low: Vec<u128> = opened.iter().map(|z| z.value() & low_mask).collect();
        let r_bits: Vec<Vec<Share>> = (0..n)
            .map(|i| bits[i * (l + k)..i * (l + k) + l].to_vec())
            .collect();
        let borrow = self.bit_lt_public_batch(&z_low, &r_bits)?;

        let two_l = f.elem(1u128 << ell);
        let inv_two_l = f.inv(two_l).map_err(|e| ProtocolError::Config(e.to_string()))?;
        let neg_coeffs: Vec<FieldElement> = coeffs[..l].iter().map(|&c| f.neg(c)).collect();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            // a mod 2^ell = z_low - r + 2^ell * u
            let a_low = ops.linear_combine(&r_bits[i], &neg_coeffs, f.elem(z_low[i]))?;
            let a_low = ops.add(&a_low, &ops.scale(&borrow[i], two_l));
            let a = ops.add_const(&hs[i], f.elem(comparison_offset(ell, thresholds[i])));
            let top = ops.scale(&ops.sub(&a, &a_low), inv_two_l);
            out.push(ops.sub(&ops.constant(FieldElement::ONE), &top));
        }
        Ok(out)
    }

    pub fn lt_public_threshold(&mut self, h: &Share, threshold: u64, ell: u32) -> Result<Share> {
        Ok(self.lt_public_threshold_batch(std::slice::from_ref(h), &[threshold], ell)?[0])
    }
}

//! Zero-forcing precoding, water-filling and sum-rate evaluation.

use num_complex::Complex64;

use crate::error::Result;
use crate::numerics::{gram, gram_pseudo_inverse, CMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct PowerAllocation {
    /// Transmit power per user `p̄_k` (W).
    pub transmit: Vec<f64>,
    /// Received power per user `p_k = p̄_k / u_k` (W).
    pub received: Vec<f64>,
    /// Common level `1/η` (W).
    pub water_level: f64,
}

/// `W = H (Hᴴ H)⁻¹ P^{1/2}` with `P = diag(received_powers)`.
pub fn zf_precode(h: &CMatrix, received_powers: &[f64]) -> Result<CMatrix> {
    assert_eq!(h.cols(), received_powers.len());
    let mut w = gram_pseudo_inverse(h)?;
    for (k, &p) in received_powers.iter().enumerate() {
        let s = p.max(0.0).sqrt();
        for m in 0..w.rows() {
            w[(m, k)] *= s;
        }
    }
    Ok(w)
}

/// Diagonal of `(Hᴴ H)⁻¹`: the transmit power each user needs per unit of
/// received power.
pub fn zf_power_costs(h: &CMatrix) -> Result<Vec<f64>> {
    let inv = gram(h).inverse()?;
    Ok((0..inv.rows()).map(|k| inv[(k, k)].re).collect())
}

/// Water-filling `p̄_k = max{1/η − σ_k² u_k, 0}` with `Σ p̄_k = P_d`.
///
/// Exact: sorts the floors `σ_k² u_k` and takes the largest prefix whose
/// common level stays above its highest floor.
pub fn water_fill(u: &[f64], noise: &[f64], total_power: f64) -> PowerAllocation {
    assert_eq!(u.len(), noise.len());
    assert!(!u.is_empty());
    assert!(total_power > 0.0);
    let floors: Vec<f64> = u.iter().zip(noise).map(|(u, s)| u * s).collect();
    let mut order: Vec<usize> = (0..floors.len()).collect();
    order.sort_by(|&a, &b| floors[a].total_cmp(&floors[b]).then(a.cmp(&b)));

    let mut level = total_power + floors[order[0]];
    let mut prefix = floors[order[0]];
    for (i, &k) in order.iter().enumerate().skip(1) {
        let candidate = (total_power + prefix + floors[k]) / (i + 1) as f64;
        if candidate <= floors[k] {
            break;
        }
        prefix += floors[k];
        level = candidate;
    }
    let mut transmit: Vec<f64> = floors.iter().map(|f| (level - f).max(0.0)).collect();
    // Fold the rounding residue into the largest allocation.
    let sum: f64 = transmit.iter().sum();
    let (imax, _) = transmit
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    transmit[imax] += total_power - sum;
    let received = transmit.iter().zip(u).map(|(p, u)| p / u).collect();
    PowerAllocation {
        transmit,
        received,
        water_level: level,
    }
}

/// `Σ log2(1 + p_k / σ_k²)`.
pub fn zf_sum_rate(alloc: &PowerAllocation, noise: &[f64]) -> f64 {
    rate_of_received(&alloc.received, noise)
}

pub(crate) fn rate_of_received(received: &[f64], noise: &[f64]) -> f64 {
    received
        .iter()
        .zip(noise)
        .map(|(p, s)| (p.max(0.0) / s).ln_1p())
        .sum::<f64>()
        / std::f64::consts::LN_2
}

/// Per-user `(signal, interference)` powers `|h_kᴴ w_k|²`, `Σ_{l≠k} |h_kᴴ w_l|²`.
pub fn signal_and_interference(h: &CMatrix, w: &CMatrix) -> Vec<(f64, f64)> {
    assert_eq!(h.rows(), w.rows());
    assert_eq!(h.cols(), w.cols());
    let k = h.cols();
    (0..k)
        .map(|i| {
            let mut signal = 0.0;
            let mut interference = 0.0;
            for l in 0..k {
                let mut acc = Complex64::new(0.0, 0.0);
                for m in 0..h.rows() {
                    acc += h[(m, i)].conj() * w[(m, l)];
                }
                if l == i {
                    signal = acc.norm_sqr();
                } else {
                    interference += acc.norm_sqr();
                }
            }
            (signal, interference)
        })
        .collect()
}

/// Sum rate of precoder `W` on channel `H` with full inter-user
/// interference.
pub fn sinr_sum_rate(h: &CMatrix, w: &CMatrix, noise: &[f64]) -> f64 {
    assert_eq!(noise.len(), h.cols());
    signal_and_interference(h, w)
        .iter()
        .zip(noise)
        .map(|(&(s, i), n)| (s / (i + n)).ln_1p())
        .sum::<f64>()
        / std::f64::consts::LN_2
}

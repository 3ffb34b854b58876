//! Closed-form received-power expressions for a single user served through
//! an environment-aware codebook, plus the rate conversions used to plot
//! them against simulation.

use std::f64::consts::PI;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::numerics::EULER_GAMMA;

/// LoS and NLoS amplitude weights `(F_1, F_2)` for a Rician factor.
pub fn rician_amplitudes(f_r: f64) -> (f64, f64) {
    if f_r.is_infinite() {
        (1.0, 0.0)
    } else {
        ((f_r / (f_r + 1.0)).sqrt(), (1.0 / (f_r + 1.0)).sqrt())
    }
}

#[allow(clippy::too_many_arguments)]
fn power_with_nlos_scale(p_d: f64, beta_r: f64, beta_g: f64, m: usize, n: usize, f_r: f64, q: u64, u: f64) -> f64 {
    assert!(n >= 1 && q >= 1 && f_r >= 0.0);
    let (f1, f2) = rician_amplitudes(f_r);
    let n_f = n as f64;
    let nlos = if f2 == 0.0 { 0.0 } else { f2 * f2 * u * ((q as f64).ln() + EULER_GAMMA) };
    p_d * beta_r * beta_g * m as f64 * n_f * (f1 * f1 * n_f + nlos + PI.sqrt() * f1 * f2)
}

/// Average received power with perfect training, natural-log `ln Q`.
pub fn prop1_power(p_d: f64, beta_r: f64, beta_g: f64, m: usize, n: usize, f_r: f64, q: u64) -> f64 {
    power_with_nlos_scale(p_d, beta_r, beta_g, m, n, f_r, q, 1.0)
}

/// Scaling `u` applied to the NLoS term when the composite estimate has
/// error variance `σ_q²`.
pub fn estimation_scale(beta_r: f64, beta_g: f64, n: usize, sigma_q2: f64) -> f64 {
    assert!(sigma_q2 >= 0.0);
    let n_f = n as f64;
    let bb = beta_r * beta_g;
    let shrink = if n == 1 { 0.0 } else { (bb / ((n_f - 1.0) * bb + sigma_q2)).sqrt() };
    (n_f + PI / 2.0 * (n_f - 1.0) * shrink) / (n_f + PI / 2.0 * (n_f - 1.0).sqrt())
}

/// Average received power under LS training error `σ_q²`.
#[allow(clippy::too_many_arguments)]
pub fn prop2_power(p_d: f64, beta_r: f64, beta_g: f64, m: usize, n: usize, f_r: f64, q: u64, sigma_q2: f64) -> f64 {
    let u = estimation_scale(beta_r, beta_g, n, sigma_q2);
    power_with_nlos_scale(p_d, beta_r, beta_g, m, n, f_r, q, u)
}

pub fn rate_from_power(p_r: f64, sigma2: f64) -> f64 {
    (1.0 + p_r / sigma2).log2()
}

/// `R_e = (T_c − τ)/T_c · R`.
pub fn effective_rate(rate: f64, coherence: f64, tau: f64) -> Result<f64> {
    if !(0.0..=coherence).contains(&tau) || coherence <= 0.0 {
        return Err(Error::InvalidOverhead { tau, coherence });
    }
    Ok((coherence - tau) / coherence * rate)
}

/// Phase indices that co-phase every cascaded path `h_r,n^* g_n` of user
/// `user` at BS antenna 0, rounded to the `2^bits` grid.
pub fn alignment_phases(channels: &ChannelRealization, user: usize, bits: u32) -> Vec<u16> {
    let levels = 1u32 << bits;
    let step = 2.0 * PI / levels as f64;
    channels.hr[user]
        .iter()
        .enumerate()
        .map(|(n, h)| {
            let ideal = h.arg() - channels.g[(n, 0)].arg();
            ((ideal / step).round().rem_euclid(levels as f64) as u32 % levels) as u16
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryInputs {
    pub p_d: f64,
    pub beta_r: f64,
    pub beta_g: f64,
    pub m: usize,
    pub n: usize,
    /// Linear Rician factor of the RIS-user link.
    pub f_r: f64,
    pub q: u64,
    pub sigma_q2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryPoint {
    pub inputs: TheoryInputs,
    pub received_power: f64,
    pub rate_bound: f64,
}

impl TheoryPoint {
    /// Evaluates the training-aware expression (which reduces to the
    /// perfect-training one at `σ_q² = 0`).
    pub fn evaluate(inputs: TheoryInputs, noise: f64) -> TheoryPoint {
        let i = inputs;
        let received_power = prop2_power(i.p_d, i.beta_r, i.beta_g, i.m, i.n, i.f_r, i.q, i.sigma_q2);
        TheoryPoint {
            inputs,
            received_power,
            rate_bound: rate_from_power(received_power, noise),
        }
    }
}

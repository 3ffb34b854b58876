//! Online stage: each codeword gets one training block of orthogonal uplink
//! pilots, the BS forms an LS estimate of the composite channel, precodes
//! against it and keeps the codeword with the best predicted sum rate.

use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::channel::{composite_matrix, ChannelRealization, ScenarioConfig};
use crate::codebook::{Codebook, Codeword};
use crate::error::{Error, Result};
use crate::numerics::{sample_cscg, CMatrix, RngStream};
use crate::precoding::{
    rate_of_received, signal_and_interference, sinr_sum_rate, water_fill, zf_power_costs, zf_precode,
};

/// `K × K` DFT pilot matrix, `X[k, t] = e^{-j2πkt/K}`.
pub fn pilot_matrix(k: usize) -> CMatrix {
    assert!(k >= 1, "pilot matrix needs at least one user");
    CMatrix::from_fn(k, k, |r, t| {
        // Reduce the exponent first so large K keeps exact unit modulus.
        let e = (r * t) % k;
        if e == 0 {
            Complex64::new(1.0, 0.0)
        } else if 2 * e == k {
            Complex64::new(-1.0, 0.0)
        } else {
            Complex64::from_polar(1.0, -2.0 * PI * e as f64 / k as f64)
        }
    })
}

/// `Y = √P_ul · H X + Z` with `Z` CSCG of variance `σ_z²`.
pub fn uplink_receive(h: &CMatrix, x: &CMatrix, p_ul: f64, sigma_z2: f64, stream: &mut RngStream) -> CMatrix {
    assert_eq!(h.cols(), x.rows(), "pilot rows must match users");
    let y = h.matmul(x).scale(Complex64::new(p_ul.sqrt(), 0.0));
    if sigma_z2 == 0.0 {
        return y;
    }
    let noise = CMatrix::from_rows(y.rows(), y.cols(), sample_cscg(stream, y.rows() * y.cols(), sigma_z2));
    y.add(&noise)
}

/// `H̃ = Y Xᴴ / (K √P_ul)`. With no uplink power the unscaled
/// correlation `Y Xᴴ / K` is returned, which is then pure noise.
pub fn ls_estimate(y: &CMatrix, x: &CMatrix, p_ul: f64) -> CMatrix {
    let k = x.rows() as f64;
    let denom = if p_ul > 0.0 { k * p_ul.sqrt() } else { k };
    y.matmul(&x.adjoint()).scale(Complex64::new(1.0 / denom, 0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockEstimate {
    /// 1-based block (codeword) index.
    pub q: usize,
    /// The block's true composite channel `H_q`.
    pub true_channel: CMatrix,
    pub estimate: CMatrix,
    /// `None` for invalid blocks.
    pub precoder: Option<CMatrix>,
    pub received_powers: Vec<f64>,
    pub predicted_rate: f64,
    pub valid: bool,
}

impl BlockEstimate {
    fn invalid(q: usize, true_channel: CMatrix, estimate: CMatrix) -> Self {
        let k = estimate.cols();
        BlockEstimate {
            q,
            true_channel,
            estimate,
            precoder: None,
            received_powers: vec![0.0; k],
            predicted_rate: 0.0,
            valid: false,
        }
    }
}

/// Trains one block: pilots through `H_q`, LS estimate, online ZF.
pub fn evaluate_block(
    channels: &ChannelRealization,
    codeword: &Codeword,
    q: usize,
    config: &ScenarioConfig,
    noise_on: bool,
    stream: &mut RngStream,
) -> Result<BlockEstimate> {
    let k = config.users();
    if codeword.phase_indices.len() != channels.ris_elements() {
        return Err(Error::DimensionMismatch {
            what: "codeword phases",
            expected: channels.ris_elements(),
            found: codeword.phase_indices.len(),
        });
    }
    if !(codeword.power_allocation.is_empty() || codeword.power_allocation.len() == k) {
        return Err(Error::DimensionMismatch {
            what: "codeword powers",
            expected: k,
            found: codeword.power_allocation.len(),
        });
    }
    let h = composite_matrix(channels, &codeword.phase_indices, config.phase_bits);
    let estimate = if noise_on {
        let x = pilot_matrix(k);
        let y = uplink_receive(&h, &x, config.p_ul, config.sigma_z2, stream);
        ls_estimate(&y, &x, config.p_ul)
    } else {
        h.clone()
    };
    let noise = config.user_noise();

    let Ok(u) = zf_power_costs(&estimate) else {
        return Ok(BlockEstimate::invalid(q, h, estimate));
    };
    if u.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
        return Ok(BlockEstimate::invalid(q, h, estimate));
    }
    let received: Vec<f64> = if codeword.power_allocation.is_empty() {
        water_fill(&u, &noise, config.p_d).received
    } else {
        codeword.power_allocation.iter().zip(&u).map(|(p, u)| p / u).collect()
    };
    let Ok(precoder) = zf_precode(&estimate, &received) else {
        return Ok(BlockEstimate::invalid(q, h, estimate));
    };
    Ok(BlockEstimate {
        q,
        true_channel: h,
        predicted_rate: rate_of_received(&received, &noise),
        estimate,
        precoder: Some(precoder),
        received_powers: received,
        valid: true,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingOutcome {
    /// 1-based index of the chosen codeword.
    pub selected_q: usize,
    pub predicted_rate: f64,
    /// Sum rate of the chosen precoder on the true channel, interference
    /// included.
    pub realized_rate: f64,
    /// Predicted rate of every block, in order.
    pub block_rates: Vec<f64>,
    /// True received signal powers `|h_kᴴ w_k|²` under the chosen block.
    pub signal_powers: Vec<f64>,
    /// Transmit power of the chosen precoder, `‖W̃‖_F²`.
    pub transmit_power: f64,
}

/// Picks the block with the largest predicted rate; ties go to the lowest
/// index. Realized quantities are evaluated on each block's true channel.
pub fn select_codeword(blocks: &[BlockEstimate], config: &ScenarioConfig) -> Result<TrainingOutcome> {
    let mut best: Option<&BlockEstimate> = None;
    for b in blocks.iter().filter(|b| b.valid) {
        if best.map_or(true, |cur| b.predicted_rate > cur.predicted_rate) {
            best = Some(b);
        }
    }
    let best = best.ok_or(Error::AllBlocksInvalid)?;
    let w = best.precoder.as_ref().expect("valid blocks carry a precoder");
    let noise = config.user_noise();
    Ok(TrainingOutcome {
        selected_q: best.q,
        predicted_rate: best.predicted_rate,
        realized_rate: sinr_sum_rate(&best.true_channel, w, &noise),
        block_rates: blocks.iter().map(|b| b.predicted_rate).collect(),
        signal_powers: signal_and_interference(&best.true_channel, w).iter().map(|s| s.0).collect(),
        transmit_power: w.frobenius_norm().powi(2),
    })
}

/// Full online stage over a codebook for one channel realization. Block `q`
/// draws its pilot noise from `stream.child(q)`.
pub fn run_training_epoch(
    channels: &ChannelRealization,
    codebook: &Codebook,
    config: &ScenarioConfig,
    noise_on: bool,
    stream: &RngStream,
) -> Result<TrainingOutcome> {
    codebook.check_against(config)?;
    let blocks: Vec<BlockEstimate> = codebook
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, cw)| evaluate_block(channels, cw, i + 1, config, noise_on, &mut stream.child(i as u64)))
        .collect::<Result<_>>()?;
    select_codeword(&blocks, config)
}

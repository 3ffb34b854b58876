//! Offline codebook synthesis.
//!
//! Each environment-aware codeword is the result of alternating between
//! water-filling and element-by-element discrete phase search on one virtual
//! channel drawn from the statistical CSI. Codeword `q` only ever touches
//! streams keyed by `(seed, q)`, so codebooks are identical however the
//! work is split across threads.

use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    composite_matrix, phase_rotation, sample_channel, ChannelRealization, ScenarioConfig,
    StatisticalCsi,
};
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, RngStream};
use crate::precoding::{rate_of_received, water_fill, zf_power_costs, PowerAllocation};

pub const FORMAT_NAME: &str = "ris-lab-codebook";
pub const FORMAT_VERSION: u32 = 1;

/// Link indices inside a codeword's `(seed, q)` stream family.
const LINK_VIRTUAL_CHANNEL: u64 = 0;
const LINK_AO_INIT: u64 = 1;
const LINK_RANDOM_PHASES: u64 = 2;

/// Candidates must beat the incumbent by this relative margin; keeps
/// round-off from flipping between equivalent phases.
const IMPROVEMENT_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "environment-aware")]
    EnvironmentAware,
    #[serde(rename = "random")]
    Random,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::EnvironmentAware => "environment-aware",
            Scheme::Random => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codeword {
    #[serde(rename = "phases")]
    pub phase_indices: Vec<u16>,
    /// Stored transmit powers `p̄_k`; empty when power is allocated online.
    #[serde(rename = "power_w")]
    pub power_allocation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub ris_elements: usize,
    pub users: usize,
    pub phase_bits: u32,
    pub scheme: Scheme,
    pub seed: u64,
    pub config_fingerprint: u64,
    pub entries: Vec<Codeword>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The first `q` codewords.
    pub fn prefix(&self, q: usize) -> Result<Codebook> {
        if q == 0 || q > self.len() {
            return Err(Error::DimensionMismatch {
                what: "codebook size Q",
                expected: q,
                found: self.len(),
            });
        }
        let mut cb = self.clone();
        cb.entries.truncate(q);
        Ok(cb)
    }

    /// Checks `N`, `K` and `b` against a scenario.
    pub fn check_against(&self, config: &ScenarioConfig) -> Result<()> {
        let checks = [
            ("RIS elements N", config.ris_elements(), self.ris_elements),
            ("users K", config.users(), self.users),
            ("phase bits b", config.phase_bits as usize, self.phase_bits as usize),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AoSettings {
    /// Stop once an outer round improves the objective by less than this
    /// fraction.
    pub epsilon: f64,
    pub max_outer: usize,
    /// Refinement sweeps per outer round.
    pub max_sweeps: usize,
    /// Fresh random starts after a degenerate one.
    pub max_retries: usize,
    /// Keep the objective after every water-filling step and element update.
    pub record_trace: bool,
}

impl Default for AoSettings {
    fn default() -> Self {
        AoSettings {
            epsilon: 1e-3,
            max_outer: 20,
            max_sweeps: 5,
            max_retries: 3,
            record_trace: false,
        }
    }
}

/// Virtual channel for one training block: fixed LoS, fresh NLoS.
pub fn gen_virtual_channel(csi: &StatisticalCsi, stream: &mut RngStream) -> ChannelRealization {
    sample_channel(csi, stream)
}

/// Incrementally updated composite rows `h_kᴴ` for a phase configuration.
struct PhaseSearch<'a> {
    /// `coeff[k][n][m] = conj(h_{r,k,n}) · G[n, m]`.
    coeff: Vec<Vec<Vec<Complex64>>>,
    rotations: Vec<Complex64>,
    channels: &'a ChannelRealization,
    bits: u32,
}

impl<'a> PhaseSearch<'a> {
    fn new(channels: &'a ChannelRealization, bits: u32) -> Self {
        let coeff = channels
            .hr
            .iter()
            .map(|hr| {
                hr.iter()
                    .enumerate()
                    .map(|(n, h)| channels.g.row(n).iter().map(|g| h.conj() * g).collect())
                    .collect()
            })
            .collect();
        let levels = 1u16 << bits;
        PhaseSearch {
            coeff,
            rotations: (0..levels).map(|i| phase_rotation(i, bits)).collect(),
            channels,
            bits,
        }
    }

    fn rows(&self, phases: &[u16]) -> Vec<Vec<Complex64>> {
        let h = composite_matrix(self.channels, phases, self.bits);
        (0..h.cols()).map(|k| h.column(k).iter().map(|z| z.conj()).collect()).collect()
    }
}

/// Gram `H^H H` from rows `h_kᴴ`, i.e. `Σ_m row_i[m] · conj(row_j[m])`.
fn rows_gram(rows: &[Vec<Complex64>]) -> CMatrix {
    let k = rows.len();
    let mut g = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let acc: Complex64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b.conj()).sum();
            g[(i, j)] = acc;
            g[(j, i)] = acc.conj();
        }
    }
    g
}

fn costs_from_rows(rows: &[Vec<Complex64>]) -> Result<Vec<f64>> {
    let inv = rows_gram(rows).inverse()?;
    Ok((0..rows.len()).map(|k| inv[(k, k)].re).collect())
}

/// Fixed-power objective `Σ log2(1 + p̄_k / (u_k σ_k²))`.
fn fixed_power_objective(u: &[f64], transmit: &[f64], noise: &[f64]) -> f64 {
    let received: Vec<f64> = transmit.iter().zip(u).map(|(p, u)| p / u).collect();
    rate_of_received(&received, noise)
}

fn rows_objective(rows: &[Vec<Complex64>], transmit: &[f64], noise: &[f64]) -> Result<f64> {
    let u = costs_from_rows(rows)?;
    if u.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::SingularGram {
            condition: f64::INFINITY,
        });
    }
    Ok(fixed_power_objective(&u, transmit, noise))
}

/// Objective `R_q(θ)` of a phase configuration under a fixed allocation.
pub fn phase_objective(
    channels: &ChannelRealization,
    phases: &[u16],
    bits: u32,
    transmit: &[f64],
    noise: &[f64],
) -> Result<f64> {
    let h = composite_matrix(channels, phases, bits);
    let u = zf_power_costs(&h)?;
    Ok(fixed_power_objective(&u, transmit, noise))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineOutcome {
    pub phases: Vec<u16>,
    pub objective: f64,
    pub sweeps: usize,
    /// The final sweep changed nothing, so no single-element change helps.
    pub stable: bool,
    /// Objective after each element visit (when requested).
    pub trace: Vec<f64>,
}

/// Successive refinement: visit elements in order and set each to the
/// best of its `2^b` phases with all others fixed. Ties keep the current
/// phase, otherwise the lowest index wins. Phase choices that make the
/// Gram matrix singular are skipped.
pub fn refine_phases(
    channels: &ChannelRealization,
    alloc: &PowerAllocation,
    phases_init: &[u16],
    bits: u32,
    sweeps: usize,
    noise: &[f64],
) -> Result<RefineOutcome> {
    refine_inner(channels, &alloc.transmit, phases_init, bits, sweeps, noise, false)
}

fn refine_inner(
    channels: &ChannelRealization,
    transmit: &[f64],
    phases_init: &[u16],
    bits: u32,
    sweeps: usize,
    noise: &[f64],
    record: bool,
) -> Result<RefineOutcome> {
    let n = channels.ris_elements();
    assert_eq!(phases_init.len(), n);
    assert_eq!(transmit.len(), channels.users());
    let search = PhaseSearch::new(channels, bits);
    let mut phases = phases_init.to_vec();
    let mut current = rows_objective(&search.rows(&phases), transmit, noise)?;
    let mut trace = Vec::new();
    let mut sweeps_run = 0;
    let mut stable = false;
    let mut cand: Vec<Vec<Complex64>> = Vec::new();

    while sweeps_run < sweeps {
        sweeps_run += 1;
        let mut rows = search.rows(&phases);
        let mut changed = false;
        for elem in 0..n {
            let old = search.rotations[phases[elem] as usize];
            let mut best = (phases[elem], current);
            for (v, &rot) in search.rotations.iter().enumerate() {
                if v as u16 == phases[elem] {
                    continue;
                }
                let delta = rot - old;
                cand.clone_from(&rows);
                for (k, row) in cand.iter_mut().enumerate() {
                    for (r, c) in row.iter_mut().zip(&search.coeff[k][elem]) {
                        *r += c * delta;
                    }
                }
                let Ok(obj) = rows_objective(&cand, transmit, noise) else {
                    continue;
                };
                if obj > best.1 + IMPROVEMENT_TOL * best.1.abs().max(1.0) {
                    best = (v as u16, obj);
                }
            }
            if best.0 != phases[elem] {
                let delta = search.rotations[best.0 as usize] - old;
                for (k, row) in rows.iter_mut().enumerate() {
                    for (r, c) in row.iter_mut().zip(&search.coeff[k][elem]) {
                        *r += c * delta;
                    }
                }
                phases[elem] = best.0;
                current = best.1;
                changed = true;
            }
            if record {
                trace.push(current);
            }
        }
        if !changed {
            stable = true;
            break;
        }
        // Drop accumulated incremental round-off before the next sweep.
        current = rows_objective(&search.rows(&phases), transmit, noise)?;
    }
    Ok(RefineOutcome {
        phases,
        objective: current,
        sweeps: sweeps_run,
        stable,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AoReport {
    pub codeword: Codeword,
    /// Objective of the final phases under the stored allocation.
    pub objective: f64,
    pub rounds: usize,
    /// The last refinement ended on a sweep without changes, so the stored
    /// phases are a 1-flip local optimum for the stored allocation.
    pub locally_optimal: bool,
    /// Random restarts consumed by degenerate starts.
    pub restarts: usize,
    pub trace: Vec<f64>,
}

fn random_phases(stream: &mut RngStream, n: usize, levels: usize) -> Vec<u16> {
    (0..n).map(|_| stream.index(levels) as u16).collect()
}

/// Alternates water-filling and successive refinement from a random start.
pub fn alternating_optimize(
    channels: &ChannelRealization,
    config: &ScenarioConfig,
    settings: &AoSettings,
    stream: &mut RngStream,
) -> Result<AoReport> {
    let noise = config.user_noise();
    let mut last_err = None;
    for restart in 0..=settings.max_retries {
        let init = random_phases(stream, channels.ris_elements(), config.phase_levels());
        match ao_from(channels, config, settings, &noise, init) {
            Ok(mut report) => {
                report.restarts = restart;
                return Ok(report);
            }
            Err(e @ Error::SingularGram { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Alternating optimization from a given starting configuration.
pub fn ao_from(
    channels: &ChannelRealization,
    config: &ScenarioConfig,
    settings: &AoSettings,
    noise: &[f64],
    init: Vec<u16>,
) -> Result<AoReport> {
    let bits = config.phase_bits;
    let mut phases = init;
    let mut trace = Vec::new();
    let mut previous: Option<f64> = None;
    let mut rounds = 0;
    let mut locally_optimal;
    let mut alloc;
    let mut objective;
    loop {
        rounds += 1;
        let h = composite_matrix(channels, &phases, bits);
        let u = zf_power_costs(&h)?;
        alloc = water_fill(&u, noise, config.p_d);
        if settings.record_trace {
            trace.push(fixed_power_objective(&u, &alloc.transmit, noise));
        }
        let refined = refine_inner(
            channels,
            &alloc.transmit,
            &phases,
            bits,
            settings.max_sweeps,
            noise,
            settings.record_trace,
        )?;
        trace.extend_from_slice(&refined.trace);
        let unchanged = refined.phases == phases;
        phases = refined.phases;
        objective = refined.objective;
        locally_optimal = refined.stable;
        if unchanged || rounds >= settings.max_outer {
            break;
        }
        if let Some(prev) = previous {
            if objective - prev <= settings.epsilon * prev.abs() {
                break;
            }
        }
        previous = Some(objective);
    }
    Ok(AoReport {
        codeword: Codeword {
            phase_indices: phases,
            power_allocation: alloc.transmit,
        },
        objective,
        rounds,
        locally_optimal,
        restarts: 0,
        trace,
    })
}

/// Environment-aware codebook: codeword `q` is AO on virtual channel `q`.
pub fn build_codebook(
    csi: &StatisticalCsi,
    config: &ScenarioConfig,
    seed: u64,
    settings: &AoSettings,
) -> Result<Codebook> {
    let q_total = config.training_overhead;
    if q_total == 0 {
        return Err(Error::config("Q", "must be at least 1"));
    }
    let entries: Vec<Result<Codeword>> = (0..q_total)
        .into_par_iter()
        .map(|q| {
            let mut vc_stream = RngStream::for_trial(seed, q as u64, LINK_VIRTUAL_CHANNEL);
            let mut init_stream = RngStream::for_trial(seed, q as u64, LINK_AO_INIT);
            let virtual_channel = gen_virtual_channel(csi, &mut vc_stream);
            alternating_optimize(&virtual_channel, config, settings, &mut init_stream)
                .map(|r| r.codeword)
                .map_err(|e| Error::Codeword {
                    q: q + 1,
                    source: Box::new(e),
                })
        })
        .collect();
    Ok(Codebook {
        ris_elements: config.ris_elements(),
        users: config.users(),
        phase_bits: config.phase_bits,
        scheme: Scheme::EnvironmentAware,
        seed,
        config_fingerprint: config.fingerprint(),
        entries: entries.into_iter().collect::<Result<_>>()?,
    })
}

/// Baseline codebook of i.i.d. uniform phases; power is left to the online
/// stage.
pub fn random_codebook(config: &ScenarioConfig, seed: u64) -> Result<Codebook> {
    if config.training_overhead == 0 {
        return Err(Error::config("Q", "must be at least 1"));
    }
    let entries = (0..config.training_overhead)
        .map(|q| {
            let mut s = RngStream::for_trial(seed, q as u64, LINK_RANDOM_PHASES);
            Codeword {
                phase_indices: random_phases(&mut s, config.ris_elements(), config.phase_levels()),
                power_allocation: Vec::new(),
            }
        })
        .collect();
    Ok(Codebook {
        ris_elements: config.ris_elements(),
        users: config.users(),
        phase_bits: config.phase_bits,
        scheme: Scheme::Random,
        seed,
        config_fingerprint: config.fingerprint(),
        entries,
    })
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    format: String,
    format_version: u32,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    b: u32,
    #[serde(rename = "Q")]
    q: usize,
    scheme: Scheme,
    seed: u64,
    config_fingerprint: String,
    entries: Vec<Codeword>,
}

pub fn codebook_to_json(cb: &Codebook) -> String {
    let file = CodebookFile {
        format: FORMAT_NAME.to_string(),
        format_version: FORMAT_VERSION,
        n: cb.ris_elements,
        k: cb.users,
        b: cb.phase_bits,
        q: cb.len(),
        scheme: cb.scheme,
        seed: cb.seed,
        config_fingerprint: format!("{:016x}", cb.config_fingerprint),
        entries: Vec::new(),
    };
    // Pretty header, then one line per codeword so diffs stay readable.
    let header = serde_json::to_string_pretty(&file).expect("codebook serialization cannot fail");
    let head = header
        .strip_suffix("\"entries\": []\n}")
        .expect("entries is the last header field");
    let lines: Vec<String> = cb
        .entries
        .iter()
        .map(|e| format!("    {}", serde_json::to_string(e).expect("codeword serializes")))
        .collect();
    format!("{head}\"entries\": [\n{}\n  ]\n}}\n", lines.join(",\n"))
}

pub fn codebook_from_json(text: &str) -> Result<Codebook> {
    let header: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("unreadable document: {e}")))?;
    match header.get("format").and_then(|v| v.as_str()) {
        Some(FORMAT_NAME) => {}
        other => return Err(Error::Format(format!("bad format tag {other:?}"))),
    }
    match header.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        other => return Err(Error::Format(format!("unsupported format_version {other:?}"))),
    }
    let file: CodebookFile =
        serde_json::from_value(header).map_err(|e| Error::Format(format!("bad field: {e}")))?;
    if file.q != file.entries.len() || file.q == 0 {
        return Err(Error::Format(format!(
            "header says Q = {} but {} entries follow",
            file.q,
            file.entries.len()
        )));
    }
    if !(1..=8).contains(&file.b) {
        return Err(Error::Format(format!("phase bits {} out of range", file.b)));
    }
    let levels = 1u32 << file.b;
    for (i, e) in file.entries.iter().enumerate() {
        if e.phase_indices.len() != file.n {
            return Err(Error::Format(format!("entry {} has {} phases, N = {}", i + 1, e.phase_indices.len(), file.n)));
        }
        if !(e.power_allocation.is_empty() || e.power_allocation.len() == file.k) {
            return Err(Error::Format(format!("entry {} has {} powers, K = {}", i + 1, e.power_allocation.len(), file.k)));
        }
        if e.phase_indices.iter().any(|&p| u32::from(p) >= levels) {
            return Err(Error::Format(format!("entry {} has a phase index >= 2^b", i + 1)));
        }
    }
    let config_fingerprint = u64::from_str_radix(&file.config_fingerprint, 16)
        .map_err(|_| Error::Format("config_fingerprint is not hex".into()))?;
    Ok(Codebook {
        ris_elements: file.n,
        users: file.k,
        phase_bits: file.b,
        scheme: file.scheme,
        seed: file.seed,
        config_fingerprint,
        entries: file.entries,
    })
}

pub fn save_codebook(cb: &Codebook, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, codebook_to_json(cb)).map_err(|e| Error::io(path, e))
}

/// Loads a codebook, optionally checking it against a scenario.
pub fn load_codebook(path: impl AsRef<Path>, expected: Option<&ScenarioConfig>) -> Result<Codebook> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cb = codebook_from_json(&text)?;
    if let Some(cfg) = expected {
        cb.check_against(cfg)?;
    }
    Ok(cb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::build_statistical_csi;
    use crate::numerics::sample_cscg;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// A random realization with given sizes and unit-variance entries.
    fn synthetic(seed: u64, n: usize, m: usize, k: usize) -> ChannelRealization {
        let mut s = RngStream::new(seed, 0);
        ChannelRealization {
            g: CMatrix::from_rows(n, m, sample_cscg(&mut s, n * m, 1.0)),
            hr: (0..k).map(|_| sample_cscg(&mut s, n, 1.0)).collect(),
            hd: (0..k).map(|_| sample_cscg(&mut s, m, 0.3)).collect(),
        }
    }

    fn small_config(n: usize, m: usize, k: usize, bits: u32) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::reference();
        cfg.ris_nx = n;
        cfg.ris_ny = 1;
        cfg.bs_antennas = m;
        cfg.active_users = (9 - k..=8).collect();
        cfg.phase_bits = bits;
        cfg.p_d = 1.0;
        cfg.sigma_k2 = 0.1;
        cfg
    }

    fn alloc_for(transmit: Vec<f64>) -> PowerAllocation {
        PowerAllocation {
            received: vec![0.0; transmit.len()],
            transmit,
            water_level: 0.0,
        }
    }

    #[test]
    fn one_element_one_bit_picks_the_better_sign() {
        let ch = ChannelRealization {
            g: CMatrix::from_rows(1, 1, vec![c(0.8, 0.3)]),
            hr: vec![vec![c(0.5, -1.0)]],
            hd: vec![vec![c(-0.2, 0.4)]],
        };
        let alloc = alloc_for(vec![1.0]);
        let out = refine_phases(&ch, &alloc, &[0], 1, 5, &[0.1]).unwrap();
        let gain = |theta: f64| {
            (ch.hr[0][0].conj() * Complex64::from_polar(1.0, theta) * ch.g[(0, 0)] + ch.hd[0][0].conj()).norm()
        };
        let want = if gain(PI) > gain(0.0) { 1 } else { 0 };
        assert_eq!(out.phases, vec![want]);
        assert!(out.stable);
    }

    #[test]
    fn refinement_of_an_optimum_is_a_fixed_point() {
        let ch = synthetic(3, 6, 4, 2);
        let alloc = alloc_for(vec![0.6, 0.4]);
        let noise = [0.1, 0.1];
        let first = refine_phases(&ch, &alloc, &[0; 6], 2, 50, &noise).unwrap();
        assert!(first.stable);
        let again = refine_phases(&ch, &alloc, &first.phases, 2, 50, &noise).unwrap();
        assert_eq!(again.phases, first.phases);
        assert_eq!(again.sweeps, 1);
    }

    #[test]
    fn refinement_result_beats_every_single_flip() {
        for seed in 0..20 {
            let ch = synthetic(100 + seed, 4, 3, 1);
            let alloc = alloc_for(vec![1.0]);
            let noise = [0.1];
            let init = [0u16, 1, 0, 1];
            let start = phase_objective(&ch, &init, 1, &alloc.transmit, &noise).unwrap();
            let out = refine_phases(&ch, &alloc, &init, 1, 50, &noise).unwrap();
            assert!(out.objective >= start - 1e-12);
            assert!(out.stable);
            for n in 0..4 {
                let mut flipped = out.phases.clone();
                flipped[n] ^= 1;
                let obj = phase_objective(&ch, &flipped, 1, &alloc.transmit, &noise).unwrap();
                assert!(out.objective >= obj - 1e-12);
            }
        }
    }

    #[test]
    fn single_user_los_ao_reaches_quantized_coherent_gain() {
        // M = 1, unit-modulus LoS G and h_r, no direct link.
        let n = 16;
        let bits = 3;
        let step = 2.0 * PI / 8.0;
        let mut cfg = small_config(n, 1, 1, bits);
        cfg.sigma_k2 = 1.0;
        let bound = (n * n) as f64 * ((PI / 8.0).sin() / (PI / 8.0)).powi(2) * 0.99;
        for inst in 0..20 {
            let mut s = RngStream::new(12 + inst, 0);
            let mut angle = || 2.0 * PI * s.index(1 << 20) as f64 / (1 << 20) as f64;
            let psi: Vec<f64> = (0..n).map(|_| angle()).collect();
            let g_phase: Vec<f64> = (0..n).map(|_| angle()).collect();
            let ch = ChannelRealization {
                g: CMatrix::from_rows(n, 1, g_phase.iter().map(|&a| Complex64::from_polar(1.0, a)).collect()),
                hr: vec![psi.iter().map(|&a| Complex64::from_polar(1.0, a)).collect()],
                hd: vec![vec![c(0.0, 0.0)]],
            };
            let report =
                alternating_optimize(&ch, &cfg, &AoSettings::default(), &mut RngStream::new(inst, 1)).unwrap();
            let gain = composite_matrix(&ch, &report.codeword.phase_indices, bits)[(0, 0)].norm_sqr();

            // Oracle: round the ideal continuous phases onto the grid, best
            // over a sub-step common offset.
            let rounded = (0..64)
                .map(|o| {
                    let offset = step * o as f64 / 64.0;
                    (0..n)
                        .map(|i| {
                            let ideal = psi[i] - g_phase[i] + offset;
                            Complex64::from_polar(1.0, (ideal / step).round() * step - ideal)
                        })
                        .sum::<Complex64>()
                        .norm_sqr()
                })
                .fold(0.0, f64::max);
            assert!(gain >= 0.98 * rounded, "instance {inst}: gain {gain} vs oracle {rounded}");
            assert!(gain >= bound, "instance {inst}: gain {gain} vs {bound}");
        }
    }

    #[test]
    fn ao_trace_is_monotone() {
        for seed in 0..30 {
            let ch = synthetic(500 + seed, 8, 4, 2);
            let cfg = small_config(8, 4, 2, 2);
            let settings = AoSettings {
                record_trace: true,
                ..AoSettings::default()
            };
            let r = alternating_optimize(&ch, &cfg, &settings, &mut RngStream::new(seed, 9)).unwrap();
            for w in r.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "seed {seed}: {} -> {}", w[0], w[1]);
            }
            let sum: f64 = r.codeword.power_allocation.iter().sum();
            assert!((sum - cfg.p_d).abs() <= 1e-9 * cfg.p_d);
        }
    }

    #[test]
    fn ao_beats_random_phases() {
        let cfg = small_config(4, 2, 1, 1);
        for seed in 0..100 {
            let ch = synthetic(900 + seed, 4, 2, 1);
            // Pair each run with its own random starting point.
            let stream = RngStream::new(seed, 0);
            let random = random_phases(&mut stream.clone(), 4, 2);
            let r = alternating_optimize(&ch, &cfg, &AoSettings::default(), &mut stream.clone()).unwrap();
            let h = composite_matrix(&ch, &random, 1);
            let u = zf_power_costs(&h).unwrap();
            let rr = crate::precoding::zf_sum_rate(&water_fill(&u, &cfg.user_noise(), cfg.p_d), &cfg.user_noise());
            assert!(r.objective >= rr - 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn degenerate_channel_fails_after_retries() {
        // Two users with identical channels never give an invertible Gram.
        let base = synthetic(1, 4, 3, 1);
        let ch = ChannelRealization {
            g: base.g.clone(),
            hr: vec![base.hr[0].clone(), base.hr[0].clone()],
            hd: vec![base.hd[0].clone(), base.hd[0].clone()],
        };
        let cfg = small_config(4, 3, 2, 1);
        let err = alternating_optimize(&ch, &cfg, &AoSettings::default(), &mut RngStream::new(0, 0)).unwrap_err();
        assert!(matches!(err, Error::SingularGram { .. }));
    }

    fn desk_config(q: usize) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::reference().with_ris_elements(16).unwrap();
        cfg.training_overhead = q;
        cfg
    }

    #[test]
    fn virtual_channels_share_los() {
        let mut cfg = desk_config(1);
        cfg.rician_r = 1e12;
        let csi = build_statistical_csi(&cfg);
        let a = gen_virtual_channel(&csi, &mut RngStream::new(1, 0));
        let b = gen_virtual_channel(&csi, &mut RngStream::new(1, 1));
        for k in 0..2 {
            for (x, y) in a.hr[k].iter().zip(&b.hr[k]) {
                assert!((x - y).norm() <= 1e-5 * x.norm());
            }
        }
        assert_ne!(a.hd, b.hd);
    }

    #[test]
    fn virtual_channel_variance_matches_path_loss() {
        let mut cfg = desk_config(1);
        cfg.rician_r = 0.0;
        let csi = build_statistical_csi(&cfg);
        let mut s = RngStream::new(4, 0);
        let draws = 10_000;
        let power: f64 = (0..draws).map(|_| gen_virtual_channel(&csi, &mut s).hr[0][3].norm_sqr()).sum();
        let ratio = power / draws as f64 / csi.beta_r[0];
        assert!((ratio - 1.0).abs() < 0.03, "ratio {ratio}");
    }

    #[test]
    fn codebook_is_seed_deterministic_and_prefix_stable() {
        let cfg = desk_config(4);
        let csi = build_statistical_csi(&cfg);
        let a = build_codebook(&csi, &cfg, 11, &AoSettings::default()).unwrap();
        let b = build_codebook(&csi, &cfg, 11, &AoSettings::default()).unwrap();
        assert_eq!(codebook_to_json(&a), codebook_to_json(&b));
        assert_eq!(a.len(), 4);
        let small = build_codebook(&csi, &desk_config(2), 11, &AoSettings::default()).unwrap();
        assert_eq!(small.entries[..], a.entries[..2]);
        for e in &a.entries {
            let sum: f64 = e.power_allocation.iter().sum();
            assert!((sum - cfg.p_d).abs() <= 1e-9 * cfg.p_d);
            assert!(e.phase_indices.iter().all(|&p| p < 2));
        }
    }

    #[test]
    fn random_codebook_frequencies() {
        let mut cfg = desk_config(1);
        cfg.training_overhead = 100_000 / cfg.ris_elements();
        let cb = random_codebook(&cfg, 3).unwrap();
        let total = cb.len() * cfg.ris_elements();
        let zeros = cb.entries.iter().flat_map(|e| &e.phase_indices).filter(|&&p| p == 0).count();
        assert!(((zeros as f64 / total as f64) - 0.5).abs() < 0.01);
        assert_eq!(cb, random_codebook(&cfg, 3).unwrap());
        assert!(cb.entries.iter().all(|e| e.power_allocation.is_empty()));

        let mut one = small_config(1, 1, 1, 1);
        one.training_overhead = 1;
        let cb = random_codebook(&one, 5).unwrap();
        assert_eq!(cb.len(), 1);
        assert!(cb.entries[0].phase_indices[0] <= 1);
    }

    #[test]
    fn codebook_file_round_trip_and_errors() {
        let cfg = desk_config(3);
        let csi = build_statistical_csi(&cfg);
        let cb = build_codebook(&csi, &cfg, 5, &AoSettings::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cb.eacb.json");
        save_codebook(&cb, &path).unwrap();
        assert_eq!(load_codebook(&path, Some(&cfg)).unwrap(), cb);

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_codebook(&path, None), Err(Error::Format(_))));

        std::fs::write(&path, text.replace("\"format_version\": 1", "\"format_version\": 7")).unwrap();
        assert!(matches!(load_codebook(&path, None), Err(Error::Format(_))));

        std::fs::write(&path, text.replace(FORMAT_NAME, "something-else")).unwrap();
        assert!(matches!(load_codebook(&path, None), Err(Error::Format(_))));

        std::fs::write(&path, &text).unwrap();
        let other = ScenarioConfig::reference();
        assert!(matches!(
            load_codebook(&path, Some(&other)),
            Err(Error::DimensionMismatch { what: "RIS elements N", .. })
        ));
    }
}

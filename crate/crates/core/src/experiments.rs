//! Monte Carlo harness: parameter sweeps over the codebook schemes and the
//! two baselines, theory-versus-simulation tables, and CSV output.
//!
//! Every random draw of trial `t` comes from a stream keyed by the master
//! seed, `t` and a fixed purpose tag. Schemes and sweep values therefore
//! see the same channels and pilot noise, which pairs all comparisons, and
//! results do not depend on how trials are spread across threads.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::channel::{build_statistical_csi, db_to_linear, dbm_to_watts, sample_channel, ChannelRealization, ScenarioConfig};
use crate::codebook::{
    alternating_optimize, build_codebook, random_codebook, AoReport, AoSettings, Codebook, Codeword, Scheme,
};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, RngStream};
use crate::theory::{alignment_phases, effective_rate, prop1_power, prop2_power, rate_from_power};
use crate::training::{evaluate_block, run_training_epoch, select_codeword, TrainingOutcome};

/// Purpose tags for per-trial streams.
const LINK_TRUTH: u64 = 0;
const LINK_PILOTS: u64 = 1;
const LINK_RANDOM_CONFIG: u64 = 2;
const LINK_OPTIMAL: u64 = 3;
const LINK_THEORY_VIRTUAL: u64 = 4;

/// Seed tags for the offline codebooks of one experiment.
const TAG_ENV_CODEBOOK: u64 = 0x0065_6e76;
const TAG_RANDOM_CODEBOOK: u64 = 0x0072_6e64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Codebook size.
    Q,
    /// RIS elements; values must be perfect squares.
    N,
    /// BS transmit power, values in dBm.
    Pd,
    /// Coherence time in slots; rates become effective rates.
    Tc,
    /// RIS-user Rician factor, values in dB.
    Fr,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Q => "Q",
            SweepAxis::N => "N",
            SweepAxis::Pd => "P_d",
            SweepAxis::Tc => "T_c",
            SweepAxis::Fr => "F_r",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "Q" | "q" => SweepAxis::Q,
            "N" | "n" => SweepAxis::N,
            "P_d" | "Pd" | "p_d" | "pd" => SweepAxis::Pd,
            "T_c" | "Tc" | "t_c" | "tc" => SweepAxis::Tc,
            "F_r" | "Fr" | "f_r" | "fr" => SweepAxis::Fr,
            other => return Err(Error::config("sweep", format!("unknown axis {other:?} (Q, N, P_d, T_c, F_r)"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchemeKind {
    EnvironmentAware,
    RandomCodebook,
    /// One uniformly random configuration per trial, power water-filled
    /// online.
    RandomConfig,
    /// Alternating optimization on the true channel.
    OptimalConfig,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::EnvironmentAware,
        SchemeKind::RandomCodebook,
        SchemeKind::RandomConfig,
        SchemeKind::OptimalConfig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::EnvironmentAware => "environment-aware",
            SchemeKind::RandomCodebook => "random-codebook",
            SchemeKind::RandomConfig => "random-config",
            SchemeKind::OptimalConfig => "optimal-config",
        }
    }

    /// Pilot slots spent before data transmission.
    fn overhead(self, config: &ScenarioConfig) -> f64 {
        let k = config.users() as f64;
        match self {
            SchemeKind::EnvironmentAware | SchemeKind::RandomCodebook => config.training_overhead as f64 * k,
            SchemeKind::RandomConfig => k,
            SchemeKind::OptimalConfig => 0.0,
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "environment-aware" | "env" => SchemeKind::EnvironmentAware,
            "random-codebook" | "random" => SchemeKind::RandomCodebook,
            "random-config" => SchemeKind::RandomConfig,
            "optimal-config" | "optimal" => SchemeKind::OptimalConfig,
            other => return Err(Error::config("schemes", format!("unknown scheme {other:?}"))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<SchemeKind>,
    pub trials: usize,
    pub noise_on: bool,
    pub seed: u64,
    /// Precomputed codebooks; a scheme without one gets a codebook built
    /// from the experiment seed.
    pub codebooks: Vec<Codebook>,
    pub ao: AoSettings,
}

impl ExperimentSpec {
    pub fn new(scenario: ScenarioConfig, axis: SweepAxis, values: Vec<f64>, schemes: Vec<SchemeKind>) -> Self {
        ExperimentSpec {
            scenario,
            axis,
            values,
            schemes,
            trials: 1000,
            noise_on: true,
            seed: 0,
            codebooks: Vec::new(),
            ao: AoSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "at least one scheme is required"));
        }
        if self.values.is_empty() {
            return Err(Error::config("values", "at least one sweep value is required"));
        }
        if self.values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("values", "sweep values must be strictly increasing"));
        }
        for &v in &self.values {
            self.config_at(v)?;
        }
        Ok(())
    }

    /// Scenario at one sweep value.
    pub fn config_at(&self, value: f64) -> Result<ScenarioConfig> {
        let mut cfg = self.scenario.clone();
        let whole = |key: &str| -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::config(key, format!("sweep value {value} is not a positive integer")))
            }
        };
        match self.axis {
            SweepAxis::Q => cfg.training_overhead = whole("Q")?,
            SweepAxis::N => cfg = cfg.with_ris_elements(whole("N")?)?,
            SweepAxis::Pd => cfg.p_d = dbm_to_watts(value),
            SweepAxis::Fr => cfg.rician_r = db_to_linear(value),
            SweepAxis::Tc => {
                if !(value > 0.0) {
                    return Err(Error::config("T_c", format!("coherence time {value} must be positive")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub sweep_param: String,
    pub sweep_value: f64,
    pub scheme: String,
    pub trials: usize,
    pub mean_rate: f64,
    pub stderr_rate: f64,
    pub theory_rate: Option<f64>,
    /// Mean total received signal power `Σ_k |h_kᴴ w_k|²`.
    pub mean_power: f64,
    pub stderr_power: f64,
    pub theory_power: Option<f64>,
    pub seed: u64,
}

/// Rows plus the per-trial samples behind them, for paired comparisons.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    /// `rates[value][scheme][trial]`, indexed like the experiment's value and scheme lists.
    pub rates: Vec<Vec<Vec<f64>>>,
}

impl ExperimentResult {
    pub fn rates_for(&self, value_index: usize, scheme_index: usize) -> &[f64] {
        &self.rates[value_index][scheme_index]
    }
}

/// Mean and standard error of the mean.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Per-trial rate and received power for one scheme.
#[derive(Clone, Copy, Debug)]
struct Sample {
    rate: f64,
    power: f64,
}

impl Sample {
    fn from_outcome(o: &TrainingOutcome) -> Self {
        Sample {
            rate: o.realized_rate,
            power: o.signal_powers.iter().sum(),
        }
    }
}

/// Perfect-CSI benchmark: AO run directly on the true channel.
pub fn optimal_config_baseline(
    truth: &ChannelRealization,
    config: &ScenarioConfig,
    settings: &AoSettings,
    stream: &mut RngStream,
) -> Result<AoReport> {
    if config.users() > config.bs_antennas {
        return Err(Error::config("K", "zero-forcing needs K <= M"));
    }
    alternating_optimize(truth, config, settings, stream)
}

/// Codebooks for one sweep value, one slot per scheme.
struct TrialResources {
    config: ScenarioConfig,
    csi: crate::channel::StatisticalCsi,
    codebooks: Vec<Option<Codebook>>,
}

fn rescale_powers(cb: &Codebook, total: f64) -> Codebook {
    let mut cb = cb.clone();
    for e in &mut cb.entries {
        let sum: f64 = e.power_allocation.iter().sum();
        if sum > 0.0 {
            let s = total / sum;
            e.power_allocation.iter_mut().for_each(|p| *p *= s);
        }
    }
    cb
}

fn prepare(spec: &ExperimentSpec, value: f64, cache: &mut Vec<(Scheme, Codebook)>) -> Result<TrialResources> {
    let config = spec.config_at(value)?;
    let csi = build_statistical_csi(&config);
    let q = config.training_overhead;
    let mut codebooks = Vec::with_capacity(spec.schemes.len());
    for &kind in &spec.schemes {
        let scheme = match kind {
            SchemeKind::EnvironmentAware => Scheme::EnvironmentAware,
            SchemeKind::RandomCodebook => Scheme::Random,
            _ => {
                codebooks.push(None);
                continue;
            }
        };
        let cb = if let Some(given) = spec.codebooks.iter().find(|c| c.scheme == scheme) {
            given.check_against(&config)?;
            let cb = given.prefix(q)?;
            if spec.axis == SweepAxis::Pd {
                rescale_powers(&cb, config.p_d)
            } else {
                cb
            }
        } else {
            // Q only truncates, so one codebook built at the largest Q
            // serves the whole sweep.
            let reusable = matches!(spec.axis, SweepAxis::Q | SweepAxis::Tc);
            match cache.iter().find(|(s, _)| *s == scheme).filter(|_| reusable) {
                Some((_, cb)) => cb.prefix(q)?,
                None => {
                    let mut full_cfg = config.clone();
                    if spec.axis == SweepAxis::Q {
                        full_cfg.training_overhead =
                            spec.values.iter().fold(0.0f64, |a, &b| a.max(b)) as usize;
                    }
                    let cb = match scheme {
                        Scheme::EnvironmentAware => {
                            build_codebook(&csi, &full_cfg, derive_seed(spec.seed, TAG_ENV_CODEBOOK), &spec.ao)?
                        }
                        Scheme::Random => random_codebook(&full_cfg, derive_seed(spec.seed, TAG_RANDOM_CODEBOOK))?,
                    };
                    let prefix = cb.prefix(q)?;
                    if reusable {
                        cache.push((scheme, cb));
                    }
                    prefix
                }
            }
        };
        codebooks.push(Some(cb));
    }
    Ok(TrialResources { config, csi, codebooks })
}

fn run_trial(spec: &ExperimentSpec, res: &TrialResources, trial: u64, value: f64) -> Result<Vec<Sample>> {
    let cfg = &res.config;
    let truth = sample_channel(&res.csi, &mut RngStream::for_trial(spec.seed, trial, LINK_TRUTH));
    let pilots = RngStream::for_trial(spec.seed, trial, LINK_PILOTS);
    spec.schemes
        .iter()
        .zip(&res.codebooks)
        .map(|(&kind, cb)| {
            let sample = match kind {
                SchemeKind::EnvironmentAware | SchemeKind::RandomCodebook => {
                    let cb = cb.as_ref().expect("codebook schemes carry a codebook");
                    run_training_epoch(&truth, cb, cfg, spec.noise_on, &pilots).map(|o| Sample::from_outcome(&o))
                }
                SchemeKind::RandomConfig => {
                    let mut one = cfg.clone();
                    one.training_overhead = 1;
                    let mut s = RngStream::for_trial(spec.seed, trial, LINK_RANDOM_CONFIG);
                    let cb = Codebook {
                        entries: vec![Codeword {
                            phase_indices: (0..cfg.ris_elements()).map(|_| s.index(cfg.phase_levels()) as u16).collect(),
                            power_allocation: Vec::new(),
                        }],
                        ..random_codebook(&one, 0)?
                    };
                    run_training_epoch(&truth, &cb, &one, spec.noise_on, &pilots).map(|o| Sample::from_outcome(&o))
                }
                SchemeKind::OptimalConfig => {
                    let mut s = RngStream::for_trial(spec.seed, trial, LINK_OPTIMAL);
                    optimal_config_baseline(&truth, cfg, &spec.ao, &mut s).and_then(|r| {
                        let block = evaluate_block(&truth, &r.codeword, 1, cfg, false, &mut s)?;
                        select_codeword(&[block], cfg).map(|o| Sample::from_outcome(&o))
                    })
                }
            };
            sample.map_err(|e| Error::Trial {
                sweep_value: value,
                scheme: kind.name().to_string(),
                trial: trial as usize,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    Ok(run_experiment_detailed(spec)?.rows)
}

pub fn run_experiment_detailed(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let mut cache = Vec::new();
    let mut rows = Vec::new();
    let mut rates = Vec::new();
    let mut tc_samples: Option<Vec<Vec<Sample>>> = None;
    for &value in &spec.values {
        let res = prepare(spec, value, &mut cache)?;
        let per_trial: Vec<Vec<Sample>> = if spec.axis == SweepAxis::Tc {
            // The channel statistics do not move along T_c; simulate once
            // and rescale.
            let raw = match &tc_samples {
                Some(s) => s.clone(),
                None => {
                    let s = simulate_trials(spec, &res, value)?;
                    tc_samples = Some(s.clone());
                    s
                }
            };
            raw.into_iter()
                .map(|trial| {
                    trial
                        .into_iter()
                        .zip(&spec.schemes)
                        .map(|(mut s, kind)| {
                            let tau = kind.overhead(&res.config);
                            // No slots are left for data once pilots fill
                            // the coherence time.
                            s.rate = if tau >= value { 0.0 } else { effective_rate(s.rate, value, tau)? };
                            Ok(s)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?
        } else {
            simulate_trials(spec, &res, value)?
        };
        let mut value_rates = Vec::new();
        for (i, kind) in spec.schemes.iter().enumerate() {
            let r: Vec<f64> = per_trial.iter().map(|t| t[i].rate).collect();
            let p: Vec<f64> = per_trial.iter().map(|t| t[i].power).collect();
            let (mean_rate, stderr_rate) = mean_and_stderr(&r);
            let (mean_power, stderr_power) = mean_and_stderr(&p);
            rows.push(ResultRow {
                sweep_param: spec.axis.name().to_string(),
                sweep_value: value,
                scheme: kind.name().to_string(),
                trials: spec.trials,
                mean_rate,
                stderr_rate,
                theory_rate: None,
                mean_power,
                stderr_power,
                theory_power: None,
                seed: spec.seed,
            });
            value_rates.push(r);
        }
        rates.push(value_rates);
    }
    Ok(ExperimentResult { rows, rates })
}

fn simulate_trials(spec: &ExperimentSpec, res: &TrialResources, value: f64) -> Result<Vec<Vec<Sample>>> {
    (0..spec.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(spec, res, t, value))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Proposition {
    /// Perfect training.
    One,
    /// LS training error.
    Two,
}

/// Single-user grid for checking the closed-form received power.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryGrid {
    /// Geometry, powers and path-loss constants; antenna count, direct link,
    /// users and BS-RIS fading are overridden.
    pub base: ScenarioConfig,
    pub n: Vec<usize>,
    pub f_r_db: Vec<f64>,
    pub q: Vec<usize>,
    /// Composite-channel estimation error variances; ignored for
    /// [`Proposition::One`].
    pub sigma_q2: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Layout position of the single served user.
    pub user: usize,
    /// Phase resolution of the aligned codewords.
    pub phase_bits: u32,
}

impl TheoryGrid {
    pub fn new(base: ScenarioConfig) -> Self {
        let sigma_q2 = base.sigma_z2 / base.p_ul;
        TheoryGrid {
            base,
            n: vec![64],
            f_r_db: vec![-15.0, 3.0, 15.0],
            q: (0..=8).map(|i| 1usize << i).collect(),
            sigma_q2: vec![sigma_q2],
            trials: 2000,
            seed: 0,
            user: 8,
            phase_bits: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        for (key, empty) in [("N", self.n.is_empty()), ("F_r", self.f_r_db.is_empty()), ("Q", self.q.is_empty())] {
            if empty {
                return Err(Error::config(key, "grid axis is empty"));
            }
        }
        if self.q.contains(&0) {
            return Err(Error::config("Q", "grid values must be at least 1"));
        }
        if self.sigma_q2.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("sigma_q2", "must be non-negative"));
        }
        if !(1..=8).contains(&self.phase_bits) {
            return Err(Error::config("b", "phase bits must lie in 1..=8"));
        }
        for &n in &self.n {
            self.config_for(n, 0.0, 0.0)?;
        }
        Ok(())
    }

    fn config_for(&self, n: usize, f_r_db: f64, sigma_q2: f64) -> Result<ScenarioConfig> {
        let mut cfg = self.base.with_ris_elements(n)?;
        cfg.bs_antennas = 1;
        cfg.active_users = vec![self.user];
        cfg.rician_g = f64::INFINITY;
        cfg.rician_r = db_to_linear(f_r_db);
        cfg.phase_bits = self.phase_bits;
        // One user, one pilot slot: the LS error variance is σ_z²/P_ul.
        cfg.sigma_z2 = sigma_q2 * cfg.p_ul;
        cfg.training_overhead = self.q.iter().copied().max().unwrap_or(1);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Simulated versus closed-form received power on every grid point; one
/// row per `(N, F_r, σ_q², Q)`.
pub fn run_theory_verification(which: Proposition, grid: &TheoryGrid) -> Result<Vec<ResultRow>> {
    grid.validate()?;
    let sigmas = match which {
        Proposition::One => vec![0.0],
        Proposition::Two => grid.sigma_q2.clone(),
    };
    let q_max = grid.q.iter().copied().max().expect("validated");
    let mut rows = Vec::new();
    for &n in &grid.n {
        for &f_db in &grid.f_r_db {
            for &sigma_q2 in &sigmas {
                let cfg = grid.config_for(n, f_db, sigma_q2)?;
                let mut csi = build_statistical_csi(&cfg);
                csi.beta_d = vec![0.0];
                let noise_on = sigma_q2 > 0.0;
                let per_trial: Vec<Vec<f64>> = (0..grid.trials as u64)
                    .into_par_iter()
                    .map(|t| {
                        let mut vs = RngStream::for_trial(grid.seed, t, LINK_THEORY_VIRTUAL);
                        let truth = sample_channel(&csi, &mut RngStream::for_trial(grid.seed, t, LINK_TRUTH));
                        let pilots = RngStream::for_trial(grid.seed, t, LINK_PILOTS);
                        let blocks = (0..q_max)
                            .map(|q| {
                                let virtual_channel = sample_channel(&csi, &mut vs);
                                let cw = Codeword {
                                    phase_indices: alignment_phases(&virtual_channel, 0, cfg.phase_bits),
                                    power_allocation: vec![cfg.p_d],
                                };
                                evaluate_block(&truth, &cw, q + 1, &cfg, noise_on, &mut pilots.child(q as u64))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        grid.q
                            .iter()
                            .map(|&q| select_codeword(&blocks[..q], &cfg).map(|o| o.signal_powers[0]))
                            .collect()
                    })
                    .collect::<Result<_>>()?;
                for (qi, &q) in grid.q.iter().enumerate() {
                    let powers: Vec<f64> = per_trial.iter().map(|t| t[qi]).collect();
                    let rates: Vec<f64> = powers.iter().map(|&p| rate_from_power(p, cfg.sigma_k2)).collect();
                    let (mean_power, stderr_power) = mean_and_stderr(&powers);
                    let (mean_rate, stderr_rate) = mean_and_stderr(&rates);
                    let (beta_r, beta_g) = (csi.beta_r[0], csi.beta_g);
                    let theory = match which {
                        Proposition::One => prop1_power(cfg.p_d, beta_r, beta_g, 1, n, cfg.rician_r, q as u64),
                        Proposition::Two => {
                            prop2_power(cfg.p_d, beta_r, beta_g, 1, n, cfg.rician_r, q as u64, sigma_q2)
                        }
                    };
                    rows.push(ResultRow {
                        sweep_param: format!("Q[N={n};F_r_db={f_db};sigma_q2={sigma_q2:e}]"),
                        sweep_value: q as f64,
                        scheme: Scheme::EnvironmentAware.to_string(),
                        trials: grid.trials,
                        mean_rate,
                        stderr_rate,
                        theory_rate: Some(rate_from_power(theory, cfg.sigma_k2)),
                        mean_power,
                        stderr_power,
                        theory_power: Some(theory),
                        seed: grid.seed,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// The row violates the upper bound by more than three standard errors.
pub fn violates_bound(row: &ResultRow) -> bool {
    match row.theory_power {
        Some(t) => row.mean_power > t + 3.0 * row.stderr_power,
        None => false,
    }
}

pub const CSV_COLUMNS: [&str; 10] = [
    "sweep_param",
    "sweep_value",
    "scheme",
    "trials",
    "mean_rate_bpshz",
    "stderr_rate_bpshz",
    "theory_rate_bpshz",
    "mean_power_w",
    "theory_power_w",
    "seed",
];

/// Round-trip exact decimal form with 17 significant digits.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn optional(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

pub fn csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.sweep_param.clone(),
            format_float(r.sweep_value),
            r.scheme.clone(),
            r.trials.to_string(),
            format_float(r.mean_rate),
            format_float(r.stderr_rate),
            optional(r.theory_rate),
            format_float(r.mean_power),
            optional(r.theory_power),
            r.seed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Experiment(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, csv_string(rows)?).map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`write_csv`]; `stderr_power` is not stored and
/// comes back as NaN.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(Error::Format(format!("{}: unexpected CSV header", path.display())));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number {s:?}"))) };
    let opt = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(ResultRow {
            sweep_param: rec[0].to_string(),
            sweep_value: num(&rec[1])?,
            scheme: rec[2].to_string(),
            trials: rec[3].parse().map_err(|_| Error::Format("bad trials".into()))?,
            mean_rate: num(&rec[4])?,
            stderr_rate: num(&rec[5])?,
            theory_rate: opt(&rec[6])?,
            mean_power: num(&rec[7])?,
            stderr_power: f64::NAN,
            theory_power: opt(&rec[8])?,
            seed: rec[9].parse().map_err(|_| Error::Format("bad seed".into()))?,
        });
    }
    Ok(rows)
}

/// Desk-scale scenario: the reference geometry with an 8×8 RIS and the
/// given RIS-user Rician factor in dB.
pub fn desk_scenario(f_r_db: f64, q: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::reference()
        .with_ris_elements(64)
        .expect("64 is a square");
    cfg.rician_r = db_to_linear(f_r_db);
    cfg.training_overhead = q;
    cfg
}

/// Named experiment layouts at `trials` trials each: `ordering`, `q-trend`,
/// `n-trend` and `coherence`. Theory grids are served by [`theory_preset`].
pub fn preset(name: &str, trials: usize, seed: u64) -> Result<ExperimentSpec> {
    let all = SchemeKind::ALL.to_vec();
    let codebooks = vec![SchemeKind::EnvironmentAware, SchemeKind::RandomCodebook];
    let mut spec = match name {
        "ordering" => ExperimentSpec::new(desk_scenario(10.0, 50), SweepAxis::Q, vec![50.0], all),
        "q-trend" => ExperimentSpec::new(desk_scenario(3.0, 64), SweepAxis::Q, vec![1.0, 4.0, 16.0, 64.0], codebooks),
        "n-trend" => ExperimentSpec::new(
            desk_scenario(3.0, 16),
            SweepAxis::N,
            vec![16.0, 36.0, 64.0, 100.0],
            vec![SchemeKind::EnvironmentAware],
        ),
        "coherence" => ExperimentSpec::new(
            desk_scenario(3.0, 1),
            SweepAxis::Tc,
            vec![150.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0, 20000.0],
            vec![SchemeKind::EnvironmentAware],
        ),
        other => return Err(Error::config("preset", format!("unknown preset {other:?}"))),
    };
    spec.trials = trials;
    spec.seed = seed;
    Ok(spec)
}

/// `perfect-training` and `ls-training` theory grids.
pub fn theory_preset(name: &str, trials: usize, seed: u64) -> Result<(Proposition, TheoryGrid)> {
    let which = match name {
        "perfect-training" => Proposition::One,
        "ls-training" => Proposition::Two,
        other => return Err(Error::config("preset", format!("unknown theory preset {other:?}"))),
    };
    let mut grid = TheoryGrid::new(ScenarioConfig::reference());
    grid.trials = trials;
    grid.seed = seed;
    Ok((which, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::phase_objective;

    fn tiny_spec(axis: SweepAxis, values: Vec<f64>, schemes: Vec<SchemeKind>) -> ExperimentSpec {
        let mut cfg = desk_scenario(3.0, 4).with_ris_elements(16).unwrap();
        cfg.training_overhead = 4;
        let mut spec = ExperimentSpec::new(cfg, axis, values, schemes);
        spec.trials = 20;
        spec.seed = 42;
        spec
    }

    #[test]
    fn rows_cover_every_value_and_scheme() {
        let spec = tiny_spec(SweepAxis::Q, vec![1.0, 2.0, 4.0], SchemeKind::ALL.to_vec());
        let rows = run_experiment(&spec).unwrap();
        assert_eq!(rows.len(), 12);
        for r in &rows {
            assert!(r.stderr_rate >= 0.0 && r.mean_rate >= 0.0);
            assert!(r.theory_rate.is_none());
        }
        assert_eq!(csv_string(&rows).unwrap(), csv_string(&run_experiment(&spec).unwrap()).unwrap());
    }

    #[test]
    fn same_scheme_twice_gives_identical_rows() {
        let mut spec = tiny_spec(
            SweepAxis::Q,
            vec![1.0],
            vec![SchemeKind::EnvironmentAware, SchemeKind::EnvironmentAware],
        );
        spec.trials = 1;
        spec.noise_on = false;
        let rows = run_experiment(&spec).unwrap();
        assert_eq!(rows[0], rows[1]);
    }

    #[test]
    fn effective_rate_axis_scales_and_clamps() {
        let mut spec = tiny_spec(SweepAxis::Tc, vec![4.0, 16.0, 1000.0], vec![SchemeKind::EnvironmentAware]);
        spec.noise_on = false;
        let rows = run_experiment(&spec).unwrap();
        let mut plain = tiny_spec(SweepAxis::Q, vec![4.0], vec![SchemeKind::EnvironmentAware]);
        plain.noise_on = false;
        let plain = run_experiment(&plain).unwrap();
        // τ = Q·K = 8 slots.
        assert_eq!(rows[0].mean_rate, 0.0);
        assert!((rows[1].mean_rate - plain[0].mean_rate * 0.5).abs() < 1e-12);
        assert!((rows[2].mean_rate - plain[0].mean_rate * 0.992).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let mut s = tiny_spec(SweepAxis::Q, vec![2.0, 1.0], vec![SchemeKind::EnvironmentAware]);
        assert!(matches!(s.validate(), Err(Error::Config { key, .. }) if key == "values"));
        s.values = vec![1.0];
        s.trials = 0;
        assert!(matches!(s.validate(), Err(Error::Config { key, .. }) if key == "trials"));
        s.trials = 1;
        s.schemes.clear();
        assert!(s.validate().is_err());
        let n = tiny_spec(SweepAxis::N, vec![15.0], vec![SchemeKind::EnvironmentAware]);
        assert!(matches!(n.validate(), Err(Error::Config { key, .. }) if key == "N"));
    }

    #[test]
    fn noiseless_codebook_schemes_are_ordered_against_optimal_on_average() {
        let mut spec = tiny_spec(SweepAxis::Q, vec![4.0], SchemeKind::ALL.to_vec());
        spec.noise_on = false;
        spec.trials = 40;
        let rows = run_experiment(&spec).unwrap();
        let opt = rows.iter().find(|r| r.scheme == "optimal-config").unwrap().mean_rate;
        for r in &rows {
            assert!(r.mean_rate <= opt + 1e-9, "{} beats optimal", r.scheme);
        }
    }

    fn exhaustive_optimum(ch: &ChannelRealization, cfg: &ScenarioConfig) -> f64 {
        let n = ch.ris_elements();
        (0..1u32 << n)
            .map(|mask| {
                let phases: Vec<u16> = (0..n).map(|i| ((mask >> i) & 1) as u16).collect();
                let h = crate::channel::composite_matrix(ch, &phases, 1);
                let u = crate::precoding::zf_power_costs(&h).unwrap();
                let alloc = crate::precoding::water_fill(&u, &cfg.user_noise(), cfg.p_d);
                crate::precoding::zf_sum_rate(&alloc, &cfg.user_noise())
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn optimal_baseline_against_exhaustive_search() {
        // Instances are fading draws of the reference scenario with a 2×2 RIS
        // serving user 8.
        let mut cfg = ScenarioConfig::reference().with_ris_elements(4).unwrap();
        cfg.active_users = vec![8];
        let csi = build_statistical_csi(&cfg);
        let mut matches = 0;
        for i in 0..100 {
            let ch = sample_channel(&csi, &mut RngStream::new(i, 0));
            let best = exhaustive_optimum(&ch, &cfg);
            let r = optimal_config_baseline(&ch, &cfg, &AoSettings::default(), &mut RngStream::new(i, 1)).unwrap();
            let obj = phase_objective(&ch, &r.codeword.phase_indices, 1, &r.codeword.power_allocation, &cfg.user_noise())
                .unwrap();
            assert!(obj <= best + 1e-12);
            if obj >= best - 1e-9 {
                matches += 1;
            }
            let again = optimal_config_baseline(&ch, &cfg, &AoSettings::default(), &mut RngStream::new(i, 1)).unwrap();
            assert_eq!(again, r);
        }
        assert!(matches >= 95, "{matches}/100");
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        write_csv(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), CSV_COLUMNS.join(",") + "\n");

        let row = ResultRow {
            sweep_param: "Q".into(),
            sweep_value: 16.0,
            scheme: "random-codebook".into(),
            trials: 7,
            mean_rate: 1.0 / 3.0,
            stderr_rate: 2f64.sqrt() * 1e-7,
            theory_rate: None,
            mean_power: 1.234_567_890_123_456_7e-9,
            stderr_power: 0.0,
            theory_power: Some(std::f64::consts::PI),
            seed: u64::MAX,
        };
        write_csv(std::slice::from_ref(&row), &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), 1);
        let b = &back[0];
        assert_eq!(b.mean_rate.to_bits(), row.mean_rate.to_bits());
        assert_eq!(b.stderr_rate.to_bits(), row.stderr_rate.to_bits());
        assert_eq!(b.mean_power.to_bits(), row.mean_power.to_bits());
        assert_eq!(b.theory_power, row.theory_power);
        assert_eq!(b.theory_rate, None);
        assert_eq!(b.seed, u64::MAX);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn theory_grid_pure_los_matches_n_squared() {
        let mut grid = TheoryGrid::new(ScenarioConfig::reference());
        grid.n = vec![16];
        grid.f_r_db = vec![60.0];
        grid.q = vec![1, 4];
        grid.trials = 100;
        let rows = run_theory_verification(Proposition::One, &grid).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            let ratio = r.mean_power / r.theory_power.unwrap();
            assert!((0.98..=1.0 + 1e-3).contains(&ratio), "{ratio}");
            assert!(!violates_bound(r));
        }
        let two = run_theory_verification(
            Proposition::Two,
            &TheoryGrid {
                sigma_q2: vec![0.0],
                ..grid.clone()
            },
        )
        .unwrap();
        for (a, b) in rows.iter().zip(&two) {
            assert_eq!(a.theory_power, b.theory_power);
        }
        let mut bad = grid.clone();
        bad.q = vec![0];
        assert!(run_theory_verification(Proposition::One, &bad).is_err());
    }
}

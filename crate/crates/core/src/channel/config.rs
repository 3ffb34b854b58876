//! Scenario configuration and its JSON document form.
//!
//! Documents use the symbol names of the system model as keys. Quantities
//! that are naturally quoted in decibels may instead be given with a `_db`
//! suffix (gains and Rician factors) or `_dbm` suffix (powers); they are
//! converted to linear units once, here, and never again.

use std::path::Path;

use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Number of user positions in the reference layout.
pub const LAYOUT_USERS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    /// BS antennas `M`.
    pub bs_antennas: usize,
    /// RIS elements per row `N_x`.
    pub ris_nx: usize,
    /// RIS rows `N_y`.
    pub ris_ny: usize,
    /// 1-based positions in the user layout, one per served user.
    pub active_users: Vec<usize>,
    /// BS element spacing in wavelengths.
    pub bs_spacing: f64,
    /// RIS element spacing in wavelengths.
    pub ris_spacing: f64,
    /// Rician factors (linear) of the BS–RIS, BS–user and RIS–user links.
    pub rician_g: f64,
    pub rician_d: f64,
    pub rician_r: f64,
    pub alpha_g: f64,
    pub alpha_r: f64,
    pub alpha_d: f64,
    /// Path loss at the reference distance (linear).
    pub c0: f64,
    pub d_m: f64,
    pub d_br: f64,
    pub d_0: f64,
    pub d_1: f64,
    pub h_bs: f64,
    pub h_r: f64,
    /// Powers in watts.
    pub p_d: f64,
    pub p_ul: f64,
    pub sigma_z2: f64,
    pub sigma_k2: f64,
    pub phase_bits: u32,
    pub training_overhead: usize,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl ScenarioConfig {
    /// Reference scenario: users 6 and 8, 10×10 RIS, 1-bit phases, Q = 100.
    pub fn reference() -> Self {
        ScenarioConfig {
            bs_antennas: 8,
            ris_nx: 10,
            ris_ny: 10,
            active_users: vec![6, 8],
            bs_spacing: 0.5,
            ris_spacing: 0.125,
            rician_g: db_to_linear(4.0),
            rician_d: db_to_linear(-3.0),
            rician_r: db_to_linear(3.0),
            alpha_g: 2.4,
            alpha_r: 2.5,
            alpha_d: 3.5,
            c0: db_to_linear(-20.0),
            d_m: 1.0,
            d_br: 100.0,
            d_0: 2.0,
            d_1: 10.0,
            h_bs: 5.0,
            h_r: 5.0,
            p_d: dbm_to_watts(40.0),
            p_ul: dbm_to_watts(-23.0),
            sigma_z2: dbm_to_watts(-110.0),
            sigma_k2: dbm_to_watts(-90.0),
            phase_bits: 1,
            training_overhead: 100,
        }
    }

    /// Number of RIS elements `N = N_x · N_y`.
    pub fn ris_elements(&self) -> usize {
        self.ris_nx * self.ris_ny
    }

    /// Number of served users `K`.
    pub fn users(&self) -> usize {
        self.active_users.len()
    }

    /// Number of discrete phase levels `2^b`.
    pub fn phase_levels(&self) -> usize {
        1usize << self.phase_bits
    }

    /// Per-user noise powers.
    pub fn user_noise(&self) -> Vec<f64> {
        vec![self.sigma_k2; self.users()]
    }

    /// Reshapes the RIS to a square `√n × √n` grid.
    pub fn with_ris_elements(&self, n: usize) -> Result<Self> {
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n || n == 0 {
            return Err(Error::config("N", format!("{n} is not a perfect square")));
        }
        let mut cfg = self.clone();
        cfg.ris_nx = side;
        cfg.ris_ny = side;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("M", self.bs_antennas),
            ("N_x", self.ris_nx),
            ("N_y", self.ris_ny),
            ("Q", self.training_overhead),
        ];
        for (key, v) in positive_counts {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.active_users.is_empty() {
            return Err(Error::config("active_users", "must name at least one user"));
        }
        let mut seen = [false; LAYOUT_USERS + 1];
        for &u in &self.active_users {
            if !(1..=LAYOUT_USERS).contains(&u) {
                return Err(Error::config(
                    "active_users",
                    format!("user {u} outside 1..={LAYOUT_USERS}"),
                ));
            }
            if seen[u] {
                return Err(Error::config("active_users", format!("user {u} repeated")));
            }
            seen[u] = true;
        }
        if self.users() > self.bs_antennas {
            return Err(Error::config(
                "K",
                format!(
                    "{} users exceed {} BS antennas (zero-forcing needs K <= M)",
                    self.users(),
                    self.bs_antennas
                ),
            ));
        }
        if !(1..=8).contains(&self.phase_bits) {
            return Err(Error::config("b", "must be between 1 and 8"));
        }
        let strictly_positive = [
            ("d_BS", self.bs_spacing),
            ("d_R", self.ris_spacing),
            ("C0", self.c0),
            ("d_m", self.d_m),
            ("d_BR", self.d_br),
            ("d_0", self.d_0),
            ("d_1", self.d_1),
            ("h_BS", self.h_bs),
            ("h_R", self.h_r),
            ("P_d", self.p_d),
            ("sigma_k2", self.sigma_k2),
        ];
        for (key, v) in strictly_positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be positive and finite, got {v}")));
            }
        }
        // A silent or noise-free uplink is a legitimate corner case.
        for (key, v) in [("P_ul", self.p_ul), ("sigma_z2", self.sigma_z2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, format!("must be non-negative and finite, got {v}")));
            }
        }
        let non_negative = [
            ("F_g", self.rician_g),
            ("F_d", self.rician_d),
            ("F_r", self.rician_r),
            ("alpha_g", self.alpha_g),
            ("alpha_r", self.alpha_r),
            ("alpha_d", self.alpha_d),
        ];
        for (key, v) in non_negative {
            if v.is_nan() || v < 0.0 {
                return Err(Error::config(key, format!("must be non-negative, got {v}")));
            }
        }
        for (key, v) in [("alpha_g", self.alpha_g), ("alpha_r", self.alpha_r), ("alpha_d", self.alpha_d)] {
            if !v.is_finite() {
                return Err(Error::config(key, "must be finite"));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::config("<document>", format!("not valid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(Error::config("<document>", "top level must be an object"));
        };
        Self::from_map(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    fn from_map(mut map: Map<String, Value>) -> Result<Self> {
        let base = ScenarioConfig::reference();
        map.remove("description");
        let mut doc = Document { map };

        let active_users = match doc.map.remove("active_users") {
            None => base.active_users.clone(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_u64()
                        .map(|u| u as usize)
                        .ok_or_else(|| Error::config("active_users", "entries must be integers"))
                })
                .collect::<Result<Vec<_>>>()?,
            Some(_) => return Err(Error::config("active_users", "must be an array")),
        };
        let declared_k = doc.count("K")?;

        let cfg = ScenarioConfig {
            bs_antennas: doc.count("M")?.unwrap_or(base.bs_antennas),
            ris_nx: doc.count("N_x")?.unwrap_or(base.ris_nx),
            ris_ny: doc.count("N_y")?.unwrap_or(base.ris_ny),
            active_users,
            bs_spacing: doc.real("d_BS")?.unwrap_or(base.bs_spacing),
            ris_spacing: doc.real("d_R")?.unwrap_or(base.ris_spacing),
            rician_g: doc.ratio("F_g")?.unwrap_or(base.rician_g),
            rician_d: doc.ratio("F_d")?.unwrap_or(base.rician_d),
            rician_r: doc.ratio("F_r")?.unwrap_or(base.rician_r),
            alpha_g: doc.real("alpha_g")?.unwrap_or(base.alpha_g),
            alpha_r: doc.real("alpha_r")?.unwrap_or(base.alpha_r),
            alpha_d: doc.real("alpha_d")?.unwrap_or(base.alpha_d),
            c0: doc.ratio("C0")?.unwrap_or(base.c0),
            d_m: doc.real("d_m")?.unwrap_or(base.d_m),
            d_br: doc.real("d_BR")?.unwrap_or(base.d_br),
            d_0: doc.real("d_0")?.unwrap_or(base.d_0),
            d_1: doc.real("d_1")?.unwrap_or(base.d_1),
            h_bs: doc.real("h_BS")?.unwrap_or(base.h_bs),
            h_r: doc.real("h_R")?.unwrap_or(base.h_r),
            p_d: doc.power("P_d")?.unwrap_or(base.p_d),
            p_ul: doc.power("P_ul")?.unwrap_or(base.p_ul),
            sigma_z2: doc.power("sigma_z2")?.unwrap_or(base.sigma_z2),
            sigma_k2: doc.power("sigma_k2")?.unwrap_or(base.sigma_k2),
            phase_bits: doc.count("b")?.map_or(base.phase_bits, |b| b as u32),
            training_overhead: doc.count("Q")?.unwrap_or(base.training_overhead),
        };
        if let Some(key) = doc.map.keys().next() {
            return Err(Error::config(key.clone(), "unknown key"));
        }
        if let Some(k) = declared_k {
            if k != cfg.users() {
                return Err(Error::config(
                    "K",
                    format!("K = {k} but active_users names {} users", cfg.users()),
                ));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Compact JSON dump in linear units with a fixed key order.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization cannot fail")
    }

    /// First 64 bits of the SHA-256 of [`canonical_json`](Self::canonical_json).
    pub fn fingerprint(&self) -> u64 {
        digest64(self.canonical_json().as_bytes())
    }
}

/// First 64 bits (big-endian) of a SHA-256 digest.
pub fn digest64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

struct Document {
    map: Map<String, Value>,
}

impl Document {
    fn take_number(&mut self, key: &str) -> Result<Option<f64>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::Number(n)) => Ok(n.as_f64()),
            Some(Value::String(s)) if s.eq_ignore_ascii_case("inf") => Ok(Some(f64::INFINITY)),
            Some(_) => Err(Error::config(key, "must be a number")),
        }
    }

    fn either(&mut self, key: &str, suffix: &str, convert: fn(f64) -> f64) -> Result<Option<f64>> {
        let alt = format!("{key}{suffix}");
        let linear = self.take_number(key)?;
        let log = self.take_number(&alt)?;
        match (linear, log) {
            (Some(_), Some(_)) => Err(Error::config(key, format!("given both `{key}` and `{alt}`"))),
            (Some(v), None) => Ok(Some(v)),
            (None, Some(v)) => Ok(Some(convert(v))),
            (None, None) => Ok(None),
        }
    }

    fn real(&mut self, key: &str) -> Result<Option<f64>> {
        self.take_number(key)
    }

    fn ratio(&mut self, key: &str) -> Result<Option<f64>> {
        self.either(key, "_db", db_to_linear)
    }

    fn power(&mut self, key: &str) -> Result<Option<f64>> {
        self.either(key, "_dbm", dbm_to_watts)
    }

    fn count(&mut self, key: &str) -> Result<Option<usize>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|n| Some(n as usize))
                .ok_or_else(|| Error::config(key, "must be a non-negative integer")),
        }
    }
}

fn finite_or_inf(v: f64) -> Value {
    if v.is_infinite() {
        Value::String("inf".into())
    } else {
        serde_json::json!(v)
    }
}

impl Serialize for ScenarioConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("ScenarioConfig", 27)?;
        st.serialize_field("M", &self.bs_antennas)?;
        st.serialize_field("N_x", &self.ris_nx)?;
        st.serialize_field("N_y", &self.ris_ny)?;
        st.serialize_field("K", &self.users())?;
        st.serialize_field("active_users", &self.active_users)?;
        st.serialize_field("d_BS", &self.bs_spacing)?;
        st.serialize_field("d_R", &self.ris_spacing)?;
        st.serialize_field("F_g", &finite_or_inf(self.rician_g))?;
        st.serialize_field("F_d", &finite_or_inf(self.rician_d))?;
        st.serialize_field("F_r", &finite_or_inf(self.rician_r))?;
        st.serialize_field("alpha_g", &self.alpha_g)?;
        st.serialize_field("alpha_r", &self.alpha_r)?;
        st.serialize_field("alpha_d", &self.alpha_d)?;
        st.serialize_field("C0", &self.c0)?;
        st.serialize_field("d_m", &self.d_m)?;
        st.serialize_field("d_BR", &self.d_br)?;
        st.serialize_field("d_0", &self.d_0)?;
        st.serialize_field("d_1", &self.d_1)?;
        st.serialize_field("h_BS", &self.h_bs)?;
        st.serialize_field("h_R", &self.h_r)?;
        st.serialize_field("P_d", &self.p_d)?;
        st.serialize_field("P_ul", &self.p_ul)?;
        st.serialize_field("sigma_z2", &self.sigma_z2)?;
        st.serialize_field("sigma_k2", &self.sigma_k2)?;
        st.serialize_field("b", &self.phase_bits)?;
        st.serialize_field("Q", &self.training_overhead)?;
        st.end()
    }
}

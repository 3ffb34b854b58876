//! Statistical CSI synthesis and Rician fading draws for the BS–RIS,
//! RIS–user and BS–user links.
//!
//! Coordinates (meters): BS at `(0, 0, h_BS)` with its ULA along `z`; RIS at
//! `(d_BR, 0, h_R)` with its UPA in the `y-z` plane; layout user `k ∈ 1..=8`
//! at `(d_BR − (8 − k)·d_1, d_0, 0)`, so user 8 stands next to the RIS.

mod config;

pub use config::{db_to_linear, dbm_to_watts, digest64, ScenarioConfig, LAYOUT_USERS};

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::numerics::{sample_cscg, CMatrix, RngStream};

/// Angles are clamped just below `π/2` to stay inside `[−π/2, π/2)`.
const HALF_PI_OPEN: f64 = FRAC_PI_2 - 1e-12;

/// `β = C0 · (d / d_m)^−α`.
pub fn path_loss(d: f64, alpha: f64, c0: f64, d_m: f64) -> f64 {
    assert!(d > 0.0, "link distance must be positive");
    c0 * (d / d_m).powf(-alpha)
}

/// ULA steering vector with `m`-th entry `exp(j2π·m·spacing·sin δ)`.
pub fn ula_steering(delta: f64, m: usize, spacing: f64) -> Vec<Complex64> {
    let k = 2.0 * PI * spacing * delta.sin();
    (0..m).map(|i| Complex64::from_polar(1.0, k * i as f64)).collect()
}

/// UPA steering vector; element `n` sits in row `n / N_x`, column `n % N_x`.
pub fn upa_steering(zeta: f64, gamma: f64, nx: usize, ny: usize, spacing: f64) -> Vec<Complex64> {
    let k = 2.0 * PI * spacing * gamma.sin();
    let (sz, cz) = zeta.sin_cos();
    (0..nx * ny)
        .map(|n| {
            let row = (n / nx) as f64;
            let col = (n % nx) as f64;
            Complex64::from_polar(1.0, k * (row * sz + col * cz))
        })
        .collect()
}

/// `exp(j·2π·index / 2^b)`.
pub fn phase_rotation(index: u16, bits: u32) -> Complex64 {
    let levels = 1u32 << bits;
    debug_assert!(u32::from(index) < levels, "phase index out of range");
    if index == 0 {
        return Complex64::new(1.0, 0.0);
    }
    Complex64::from_polar(1.0, 2.0 * PI * f64::from(index) / f64::from(levels))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    fn to(self, other: Point3) -> (f64, [f64; 3]) {
        let v = [other.x - self.x, other.y - self.y, other.z - self.z];
        let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        (d, [v[0] / d, v[1] / d, v[2] / d])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserGeometry {
    /// 1-based layout index.
    pub user: usize,
    pub position: Point3,
    /// Arrival angle at the BS array, `δ_d`.
    pub bs_aoa: f64,
    /// Azimuth / elevation of the user seen from the RIS, `ζ_r`, `γ_r`.
    pub ris_azimuth: f64,
    pub ris_elevation: f64,
    pub ris_distance: f64,
    pub bs_distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryAngles {
    pub bs: Point3,
    pub ris: Point3,
    /// Departure angle from the BS towards the RIS, `δ_g`.
    pub bs_aod: f64,
    /// Azimuth / elevation of the BS seen from the RIS, `ζ_g`, `γ_g`.
    pub ris_azimuth: f64,
    pub ris_elevation: f64,
    pub bs_ris_distance: f64,
    pub users: Vec<UserGeometry>,
}

/// Layout position of a 1-based user index.
pub fn user_position(config: &ScenarioConfig, user: usize) -> Point3 {
    let offset = (LAYOUT_USERS - user) as f64 * config.d_1;
    Point3::new(config.d_br - offset, config.d_0, 0.0)
}

/// Angle from the broadside of a ULA laid along `z`.
fn ula_angle(dir: [f64; 3]) -> f64 {
    dir[2].clamp(-1.0, 1.0).asin().min(HALF_PI_OPEN)
}

/// `(ζ, γ)` of a direction for a UPA in the `y-z` plane: `sin γ` is the
/// in-plane projection length and `ζ` its angle from the `y` axis, folded
/// into `ζ ∈ [0, π)` by flipping the sign of `γ`.
fn upa_angles(dir: [f64; 3]) -> (f64, f64) {
    let (uy, uz) = (dir[1], dir[2]);
    let r = (uy * uy + uz * uz).sqrt().min(1.0);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let mut zeta = uz.atan2(uy);
    let mut sin_gamma = r;
    if !(0.0..PI).contains(&zeta) {
        zeta = if zeta < 0.0 { zeta + PI } else { zeta - PI };
        sin_gamma = -r;
    }
    let gamma = sin_gamma.asin().clamp(-FRAC_PI_2, HALF_PI_OPEN);
    (zeta, gamma)
}

pub fn derive_geometry(config: &ScenarioConfig) -> GeometryAngles {
    let bs = Point3::new(0.0, 0.0, config.h_bs);
    let ris = Point3::new(config.d_br, 0.0, config.h_r);
    let (bs_ris_distance, bs_to_ris) = bs.to(ris);
    let (_, ris_to_bs) = ris.to(bs);
    let (ris_azimuth, ris_elevation) = upa_angles(ris_to_bs);
    let users = config
        .active_users
        .iter()
        .map(|&user| {
            let position = user_position(config, user);
            let (ris_distance, ris_to_user) = ris.to(position);
            let (bs_distance, bs_to_user) = bs.to(position);
            let (ris_azimuth, ris_elevation) = upa_angles(ris_to_user);
            UserGeometry {
                user,
                position,
                bs_aoa: ula_angle(bs_to_user),
                ris_azimuth,
                ris_elevation,
                ris_distance,
                bs_distance,
            }
        })
        .collect();
    GeometryAngles {
        bs,
        ris,
        bs_aod: ula_angle(bs_to_ris),
        ris_azimuth,
        ris_elevation,
        bs_ris_distance,
        users,
    }
}

/// LoS components, path losses and Rician factors of every link.
#[derive(Clone, Debug, PartialEq)]
pub struct StatisticalCsi {
    /// `G^LoS = a_R(ζ_g, γ_g) a_BS(δ_g)^H`, N×M.
    pub g_los: CMatrix,
    /// `h_{r,k}^LoS`, one length-N vector per user.
    pub hr_los: Vec<Vec<Complex64>>,
    /// `h_{d,k}^LoS`, one length-M vector per user.
    pub hd_los: Vec<Vec<Complex64>>,
    pub beta_g: f64,
    pub beta_r: Vec<f64>,
    /// Zero for a blocked direct link.
    pub beta_d: Vec<f64>,
    pub rician_g: f64,
    pub rician_r: f64,
    pub rician_d: f64,
}

impl StatisticalCsi {
    pub fn ris_elements(&self) -> usize {
        self.g_los.rows()
    }

    pub fn bs_antennas(&self) -> usize {
        self.g_los.cols()
    }

    pub fn users(&self) -> usize {
        self.hr_los.len()
    }
}

pub fn build_statistical_csi(config: &ScenarioConfig) -> StatisticalCsi {
    let geo = derive_geometry(config);
    let (m, nx, ny) = (config.bs_antennas, config.ris_nx, config.ris_ny);
    let a_r = upa_steering(geo.ris_azimuth, geo.ris_elevation, nx, ny, config.ris_spacing);
    let a_bs = ula_steering(geo.bs_aod, m, config.bs_spacing);
    let g_los = CMatrix::from_fn(nx * ny, m, |n, j| a_r[n] * a_bs[j].conj());
    let pl = |d: f64, alpha: f64| path_loss(d, alpha, config.c0, config.d_m);
    StatisticalCsi {
        g_los,
        hr_los: geo
            .users
            .iter()
            .map(|u| upa_steering(u.ris_azimuth, u.ris_elevation, nx, ny, config.ris_spacing))
            .collect(),
        hd_los: geo
            .users
            .iter()
            .map(|u| ula_steering(u.bs_aoa, m, config.bs_spacing))
            .collect(),
        beta_g: pl(geo.bs_ris_distance, config.alpha_g),
        beta_r: geo.users.iter().map(|u| pl(u.ris_distance, config.alpha_r)).collect(),
        beta_d: geo.users.iter().map(|u| pl(u.bs_distance, config.alpha_d)).collect(),
        rician_g: config.rician_g,
        rician_r: config.rician_r,
        rician_d: config.rician_d,
    }
}

/// One fading draw with path loss applied.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    /// BS–RIS channel, N×M.
    pub g: CMatrix,
    /// RIS–user channels, K vectors of length N.
    pub hr: Vec<Vec<Complex64>>,
    /// BS–user channels, K vectors of length M.
    pub hd: Vec<Vec<Complex64>>,
}

impl ChannelRealization {
    pub fn users(&self) -> usize {
        self.hr.len()
    }

    pub fn ris_elements(&self) -> usize {
        self.g.rows()
    }

    pub fn bs_antennas(&self) -> usize {
        self.g.cols()
    }
}

/// `(√(F/(F+1)), √(1/(F+1)))`, with `F = ∞` meaning pure LoS.
pub fn rician_weights(f: f64) -> (f64, f64) {
    if f.is_infinite() {
        (1.0, 0.0)
    } else {
        ((f / (f + 1.0)).sqrt(), (1.0 / (f + 1.0)).sqrt())
    }
}

fn rician_vector(
    los: &[Complex64],
    beta: f64,
    factor: f64,
    stream: &mut RngStream,
) -> Vec<Complex64> {
    let (wl, wn) = rician_weights(factor);
    let amp = beta.sqrt();
    let nlos = sample_cscg(stream, los.len(), 1.0);
    los.iter()
        .zip(nlos)
        .map(|(&l, n)| (l * wl + n * wn) * amp)
        .collect()
}

/// Draws fresh unit-variance NLoS parts around the fixed LoS parts. Draw
/// order is `G`, then per user `h_r` and `h_d`.
pub fn sample_channel(csi: &StatisticalCsi, stream: &mut RngStream) -> ChannelRealization {
    let (n, m) = (csi.ris_elements(), csi.bs_antennas());
    let g = CMatrix::from_rows(
        n,
        m,
        rician_vector(csi.g_los.as_slice(), csi.beta_g, csi.rician_g, stream),
    );
    let mut hr = Vec::with_capacity(csi.users());
    let mut hd = Vec::with_capacity(csi.users());
    for k in 0..csi.users() {
        hr.push(rician_vector(&csi.hr_los[k], csi.beta_r[k], csi.rician_r, stream));
        hd.push(rician_vector(&csi.hd_los[k], csi.beta_d[k], csi.rician_d, stream));
    }
    ChannelRealization { g, hr, hd }
}

/// Row channel `h^H = h_r^H Φ G + h_d^H` of one user.
pub fn composite_channel(
    hr: &[Complex64],
    phases: &[u16],
    g: &CMatrix,
    hd: &[Complex64],
    bits: u32,
) -> Vec<Complex64> {
    assert_eq!(hr.len(), g.rows());
    assert_eq!(phases.len(), g.rows());
    assert_eq!(hd.len(), g.cols());
    let mut row: Vec<Complex64> = hd.iter().map(|z| z.conj()).collect();
    for (n, (&h, &p)) in hr.iter().zip(phases).enumerate() {
        let coeff = h.conj() * phase_rotation(p, bits);
        for (out, &gv) in row.iter_mut().zip(g.row(n)) {
            *out += coeff * gv;
        }
    }
    row
}

/// `H = [h_1, …, h_K]` (M×K) for a phase configuration.
pub fn composite_matrix(channels: &ChannelRealization, phases: &[u16], bits: u32) -> CMatrix {
    let rows: Vec<Vec<Complex64>> = (0..channels.users())
        .map(|k| composite_channel(&channels.hr[k], phases, &channels.g, &channels.hd[k], bits))
        .collect();
    CMatrix::from_fn(channels.bs_antennas(), channels.users(), |m, k| rows[k][m].conj())
}

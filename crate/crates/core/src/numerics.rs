//! Small dense complex linear algebra, seeded random streams and
//! order-statistics helpers.
//!
//! Matrix sizes in this crate are tiny (K ≤ 8 users, M ≤ 16 antennas, N ≤ a
//! few hundred RIS elements), so everything is a plain row-major `Vec`.

use std::ops::{Index, IndexMut, Mul};

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};

/// Gram matrices whose 1-norm condition number exceeds this are treated as
/// singular.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        CMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| {
            if r == c {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        assert_eq!(data.len(), rows * cols, "entry count must equal rows × cols");
        CMatrix { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<Complex64>]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == rows), "ragged columns");
        Self::from_fn(rows, cols, |r, c| columns[c][r])
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |r, c| {
            if r == c {
                Complex64::new(values[r], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn scale(&self, s: Complex64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn sub(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions must agree");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let rhs_row = rhs.row(k);
                let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self[(r, c)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Inverse of a square matrix by Gauss–Jordan elimination with partial
    /// pivoting. Fails with `SingularGram` when the 1-norm condition number
    /// exceeds [`GRAM_CONDITION_LIMIT`].
    pub fn inverse(&self) -> Result<CMatrix> {
        assert_eq!(self.rows, self.cols, "inverse needs a square matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = CMatrix::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[(i, col)].norm().total_cmp(&a[(j, col)].norm()))
                .expect("non-empty range");
            let pivot_val = a[(pivot, col)];
            if pivot_val.norm() == 0.0 || !pivot_val.norm().is_finite() {
                return Err(Error::SingularGram {
                    condition: f64::INFINITY,
                });
            }
            if pivot != col {
                for c in 0..n {
                    a.data.swap(pivot * n + c, col * n + c);
                    inv.data.swap(pivot * n + c, col * n + c);
                }
            }
            let scale = pivot_val.inv();
            for c in 0..n {
                a.data[col * n + c] *= scale;
                inv.data[col * n + c] *= scale;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[(r, col)];
                if factor == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..n {
                    let ac = a.data[col * n + c];
                    let ic = inv.data[col * n + c];
                    a.data[r * n + c] -= factor * ac;
                    inv.data[r * n + c] -= factor * ic;
                }
            }
        }
        let condition = self.norm_one() * inv.norm_one();
        if !condition.is_finite() || condition > GRAM_CONDITION_LIMIT || !inv.is_finite() {
            return Err(Error::SingularGram { condition });
        }
        Ok(inv)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;

    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

/// `H (Hᴴ H)⁻¹` for a tall M×K matrix, so that `Hᴴ · result = I_K`.
pub fn gram_pseudo_inverse(h: &CMatrix) -> Result<CMatrix> {
    if h.cols() > h.rows() {
        return Err(Error::SingularGram {
            condition: f64::INFINITY,
        });
    }
    let gram_inv = gram(h).inverse()?;
    Ok(h.matmul(&gram_inv))
}

/// `Hᴴ H`.
pub fn gram(h: &CMatrix) -> CMatrix {
    let k = h.cols();
    let mut g = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..h.rows() {
                acc += h[(m, i)].conj() * h[(m, j)];
            }
            g[(i, j)] = acc;
            g[(j, i)] = acc.conj();
        }
    }
    g
}

/// `Σ_{j=1..Q} 1/j`, the mean of the largest of Q i.i.d. unit exponentials.
pub fn harmonic_number(q: u64) -> f64 {
    assert!(q >= 1, "harmonic number needs Q >= 1");
    // Summing smallest terms first keeps the rounding error at ~1 ulp per term.
    (1..=q).rev().map(|j| 1.0 / j as f64).sum()
}

/// SplitMix64 finalizer, used to derive child seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a tag into a seed; distinct tags yield unrelated seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto ChaCha's 64-bit stream
/// counter, so the draw sequence depends only on the pair and never on
/// which thread consumes it.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    /// Stream id layout used by the trial harness: `trial · 2^16 + link`.
    pub fn for_trial(seed: u64, trial: u64, link: u64) -> Self {
        assert!(link < 1 << 16, "link index must fit in 16 bits");
        Self::new(seed, (trial << 16) | link)
    }

    /// An independent stream derived from this stream's identity (not its
    /// position), so children are stable no matter how much of the parent
    /// has been consumed.
    pub fn child(&self, sub: u64) -> RngStream {
        RngStream::new(derive_seed(self.seed, self.stream_id), sub)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn unit_exponential(&mut self) -> f64 {
        self.rng.sample(Exp1)
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// `n` circularly-symmetric complex Gaussian draws with total variance
/// `variance` (each of the real and imaginary parts has `variance / 2`).
pub fn sample_cscg(stream: &mut RngStream, n: usize, variance: f64) -> Vec<Complex64> {
    assert!(variance >= 0.0, "variance must be non-negative");
    let sd = (variance / 2.0).sqrt();
    (0..n)
        .map(|_| {
            let re = stream.standard_normal();
            let im = stream.standard_normal();
            Complex64::new(re * sd, im * sd)
        })
        .collect()
}

/// `max` of `q` i.i.d. unit exponentials.
pub fn sample_exponential_max(stream: &mut RngStream, q: usize) -> f64 {
    (0..q).map(|_| stream.unit_exponential()).fold(0.0, f64::max)
}

//! Rayleigh-fading channel matrices and the ordered spectrum of `HH†`.
//!
//! Eigenvalues are always reported largest first: `lambdas()[0]` is λ₁, the
//! largest, and the last entry is λ_m, the smallest.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::special::ln_gamma;

/// Transmit/receive antenna counts of the link under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AntennaConfig {
    tx: usize,
    rx: usize,
}

impl AntennaConfig {
    pub fn new(tx: usize, rx: usize) -> Result<Self> {
        if tx == 0 || rx == 0 {
            return Err(Error::InvalidConfig(format!(
                "antenna counts must be positive (tx={tx}, rx={rx})"
            )));
        }
        Ok(Self { tx, rx })
    }

    /// M, the number of transmit antennas.
    pub fn tx(&self) -> usize {
        self.tx
    }

    /// N, the number of receive antennas.
    pub fn rx(&self) -> usize {
        self.rx
    }

    /// m = min(M, N), the number of nonzero eigenvalues of `HH†`.
    pub fn m(&self) -> usize {
        self.tx.min(self.rx)
    }

    /// n = max(M, N).
    pub fn n(&self) -> usize {
        self.tx.max(self.rx)
    }

    /// The (m tx, n rx) configuration with the same eigenvalue law.
    pub fn canonical(&self) -> Self {
        Self {
            tx: self.m(),
            rx: self.n(),
        }
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.m() {
            return domain(format!("eigenvalue index {i} outside 1..={}", self.m()));
        }
        Ok(())
    }
}

/// An N×M complex channel matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn from_rows(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::InvalidConfig(format!(
                "channel matrix needs {rows}x{cols} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    /// tr(HH†) = Σ|h_ij|².
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// The smaller of the two Gram matrices, H†H (if M ≤ N) or HH†, as a
    /// dense row-major min(M,N)×min(M,N) Hermitian matrix.
    pub fn gram(&self) -> (usize, Vec<Complex64>) {
        let mut out = Vec::new();
        let dim = self.rows.min(self.cols);
        gram_into(self.rows, self.cols, &self.data, &mut out);
        (dim, out)
    }
}

fn gram_into(rows: usize, cols: usize, h: &[Complex64], out: &mut Vec<Complex64>) {
    out.clear();
    if cols <= rows {
        // H†H: (a, b) = Σ_r conj(h_ra) h_rb
        out.resize(cols * cols, Complex64::new(0.0, 0.0));
        for a in 0..cols {
            for b in a..cols {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..rows {
                    acc += h[r * cols + a].conj() * h[r * cols + b];
                }
                out[a * cols + b] = acc;
                out[b * cols + a] = acc.conj();
            }
        }
    } else {
        // HH†: (a, b) = Σ_c h_ac conj(h_bc)
        out.resize(rows * rows, Complex64::new(0.0, 0.0));
        for a in 0..rows {
            for b in a..rows {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..cols {
                    acc += h[a * cols + c] * h[b * cols + c].conj();
                }
                out[a * rows + b] = acc;
                out[b * rows + a] = acc.conj();
            }
        }
    }
}

/// Nonzero-capable eigenvalues of `HH†`, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigSample {
    lambdas: Vec<f64>,
}

impl EigSample {
    /// Builds a sample from eigenvalues in any order; they are sorted
    /// descending. Negative or non-finite values are rejected.
    pub fn new(mut lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidChannel);
        }
        lambdas.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { lambdas })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// λ_i with i = 1 the largest.
    pub fn largest(&self, i: usize) -> f64 {
        self.lambdas[i - 1]
    }

    pub fn smallest(&self) -> f64 {
        *self.lambdas.last().expect("nonempty")
    }

    pub fn sum(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    pub fn product(&self) -> f64 {
        self.lambdas.iter().product()
    }
}

/// Draws H with i.i.d. CN(0,1) entries: real and imaginary parts are
/// independent N(0, 1/2).
pub fn sample_channel<R: Rng + ?Sized>(cfg: AntennaConfig, rng: &mut R) -> ChannelMatrix {
    let rows = cfg.rx();
    let cols = cfg.tx();
    let data = (0..rows * cols).map(|_| cn01(rng)).collect();
    ChannelMatrix { rows, cols, data }
}

#[inline]
fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}

/// Eigenvalues of `HH†` restricted to its min(M,N) nonzero-capable part.
pub fn eig_hh(h: &ChannelMatrix) -> Result<EigSample> {
    if h.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidChannel);
    }
    let (dim, mut g) = h.gram();
    let mut out = vec![0.0; dim];
    hermitian_eigenvalues(&mut g, dim, &mut out);
    Ok(EigSample { lambdas: out })
}

/// Cyclic complex Jacobi on a dense Hermitian matrix (row-major, destroyed).
/// Writes the eigenvalues into `out`, sorted descending; tiny negative
/// round-off is clamped to zero.
pub fn hermitian_eigenvalues(a: &mut [Complex64], dim: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), dim * dim);
    debug_assert_eq!(out.len(), dim);
    const MAX_SWEEPS: usize = 64;

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        let mut diag = 0.0;
        for p in 0..dim {
            diag += a[p * dim + p].re * a[p * dim + p].re;
            for q in p + 1..dim {
                off += a[p * dim + q].norm_sqr();
            }
        }
        if off <= 1e-34 * diag || off == 0.0 {
            break;
        }
        for p in 0..dim {
            for q in p + 1..dim {
                let apq = a[p * dim + q];
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                // Rotate the phase of row/column q so that a_pq becomes real.
                let phase = apq / mag;
                for k in 0..dim {
                    a[k * dim + q] *= phase.conj();
                    a[q * dim + k] *= phase;
                }
                let app = a[p * dim + p].re;
                let aqq = a[q * dim + q].re;
                let tau = (aqq - app) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[k * dim + p];
                    let akq = a[k * dim + q];
                    a[k * dim + p] = akp * c - akq * s;
                    a[k * dim + q] = akp * s + akq * c;
                }
                for k in 0..dim {
                    let apk = a[p * dim + k];
                    let aqk = a[q * dim + k];
                    a[p * dim + k] = apk * c - aqk * s;
                    a[q * dim + k] = apk * s + aqk * c;
                }
                a[p * dim + q] = Complex64::new(0.0, 0.0);
                a[q * dim + p] = Complex64::new(0.0, 0.0);
                a[p * dim + p] = Complex64::new(app - t * mag, 0.0);
                a[q * dim + q] = Complex64::new(aqq + t * mag, 0.0);
            }
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i * dim + i].re.max(0.0);
    }
    out.sort_by(|x, y| y.total_cmp(x));
}

/// Allocation-free repeated draws of the ordered spectrum for one antenna
/// configuration, for Monte Carlo loops.
#[derive(Debug, Clone)]
pub struct EigSampler {
    cfg: AntennaConfig,
    h: Vec<Complex64>,
    gram: Vec<Complex64>,
    lambdas: Vec<f64>,
}

impl EigSampler {
    pub fn new(cfg: AntennaConfig) -> Self {
        Self {
            cfg,
            h: vec![Complex64::new(0.0, 0.0); cfg.tx() * cfg.rx()],
            gram: Vec::with_capacity(cfg.m() * cfg.m()),
            lambdas: vec![0.0; cfg.m()],
        }
    }

    pub fn config(&self) -> AntennaConfig {
        self.cfg
    }

    /// Draws a fresh channel and returns its eigenvalues, descending.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        for z in self.h.iter_mut() {
            *z = cn01(rng);
        }
        if self.cfg.m() == 1 {
            self.lambdas[0] = self.h.iter().map(|z| z.norm_sqr()).sum();
            return &self.lambdas;
        }
        gram_into(self.cfg.rx(), self.cfg.tx(), &self.h, &mut self.gram);
        let dim = self.cfg.m();
        hermitian_eigenvalues(&mut self.gram, dim, &mut self.lambdas);
        &self.lambdas
    }
}

/// Independent, reproducible random streams keyed by a base seed and two
/// coordinates (for example sweep point and chunk index).
pub fn substream(seed: u64, major: u64, minor: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&major.to_le_bytes());
    key[16..24].copy_from_slice(b"fbdmt-rs");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(minor);
    rng
}

/// Joint density of the ordered eigenvalues,
/// `exp(-Σλ) Πλ^(n-m) Π_{i<j}(λ_i-λ_j)²`, optionally normalized so that it
/// integrates to one over the ordered cone λ₁ ≥ … ≥ λ_m ≥ 0.
pub fn joint_eig_density(lambdas: &[f64], cfg: AntennaConfig, normalized: bool) -> Result<f64> {
    let m = cfg.m();
    let n = cfg.n();
    if lambdas.len() != m {
        return domain(format!("expected {m} eigenvalues, got {}", lambdas.len()));
    }
    if lambdas.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidChannel);
    }
    if lambdas.iter().any(|&l| l < 0.0) || lambdas.windows(2).any(|w| w[1] > w[0]) {
        return Ok(0.0);
    }
    let raw = unnormalized_density(lambdas, n - m);
    if normalized {
        Ok(raw * normalization_constant(m, n)?)
    } else {
        Ok(raw)
    }
}

fn unnormalized_density(lambdas: &[f64], excess: usize) -> f64 {
    let mut v = (-lambdas.iter().sum::<f64>()).exp();
    for &l in lambdas {
        v *= l.powi(excess as i32);
    }
    for i in 0..lambdas.len() {
        for j in i + 1..lambdas.len() {
            let d = lambdas[i] - lambdas[j];
            v *= d * d;
        }
    }
    v
}

/// 1 / ∫_{ordered cone} of the unnormalized density, by tensor Gauss–Laguerre
/// quadrature (exact for the polynomial-times-exponential integrand).
/// Cached per (m, n).
pub fn normalization_constant(m: usize, n: usize) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(c) = cache.lock().expect("cache lock").get(&(m, n)) {
        return Ok(*c);
    }
    if m == 0 || n < m {
        return domain(format!("invalid dimensions m={m}, n={n}"));
    }
    let degree = (n - m) + 2 * (m - 1);
    let nodes = degree / 2 + 1;
    let total = (nodes as f64).powi(m as i32);
    if total > 2e7 {
        return Err(Error::Unsupported(format!(
            "normalization for m={m}, n={n} needs {total:.0} quadrature nodes"
        )));
    }
    let (x, w) = gauss_laguerre(nodes);
    let mut idx = vec![0usize; m];
    let mut point = vec![0.0; m];
    let mut full = 0.0;
    loop {
        let mut weight = 1.0;
        for (d, &k) in idx.iter().enumerate() {
            point[d] = x[k];
            weight *= w[k];
        }
        // Gauss–Laguerre already carries e^{-x}; integrate the polynomial part.
        let mut poly = 1.0;
        for &l in &point {
            poly *= l.powi((n - m) as i32);
        }
        for i in 0..m {
            for j in i + 1..m {
                let d = point[i] - point[j];
                poly *= d * d;
            }
        }
        full += weight * poly;

        let mut d = 0;
        loop {
            if d == m {
                break;
            }
            idx[d] += 1;
            if idx[d] < nodes {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == m {
            break;
        }
    }
    // The integrand is symmetric, so the ordered cone holds 1/m! of it.
    let ln_m_fact = ln_gamma(m as f64 + 1.0);
    let c = (ln_m_fact - full.ln()).exp();
    cache.lock().expect("cache lock").insert((m, n), c);
    Ok(c)
}

/// Nodes and weights of `k`-point Gauss–Laguerre quadrature for ∫₀^∞ e^{-x} g(x) dx.
pub fn gauss_laguerre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; k];
    let mut w = vec![0.0; k];
    let nf = k as f64;
    let mut z: f64 = 0.0;
    for i in 0..k {
        if i == 0 {
            z = 3.0 / (1.0 + 2.4 * nf);
        } else if i == 1 {
            z += 15.0 / (1.0 + 2.5 * nf);
        } else {
            let ai = (i - 1) as f64;
            z += (1.0 + 2.55 * ai) / (1.9 * ai) * (z - x[i - 2]);
        }
        let mut pp = 0.0;
        let mut p2 = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            p2 = 0.0;
            for j in 1..=k {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0 - z) * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = (nf * p1 - nf * p2) / z;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs() {
                break;
            }
        }
        x[i] = z;
        w[i] = -1.0 / (pp * nf * p2);
    }
    (x, w)
}

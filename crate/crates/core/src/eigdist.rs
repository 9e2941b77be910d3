//! Probability laws of a single ordered eigenvalue λ_i of HH†.
//!
//! All evaluation goes through the log domain (`ln_cdf`, `ln_sf`, `ln_pdf`)
//! because outage thresholds at high SNR sit far below the smallest positive
//! double.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::randmat::{substream, AntennaConfig, EigSampler};
use crate::special::{bisect, least_squares, ln_1m_exp, ln_gamma, ln_pq};

pub use crate::special::{incomplete_gamma, inverse_upper, IncompleteGammaPair};

/// Minimum sample count for an empirical table.
pub const MIN_SAMPLES: usize = 10_000;
/// Number of grid points of an empirical table.
pub const GRID_POINTS: usize = 256;
const GRID_LOW_Q: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum EigDistribution {
    /// Model law x^{n−m} e^{−x} / Γ(n−m+1) of the smallest eigenvalue; exact
    /// only for m = 1 (for n = m it is Exp(1), not the exact m·e^{−mx}).
    SmallestAnalytic(AntennaConfig),
    EmpiricalTable(EmpiricalTable),
    /// F(t) = β t^e, valid only for t ≤ t_max.
    AsymptoticPower { beta: f64, exponent: u32, t_max: f64 },
}

/// Density of the smallest eigenvalue in the Gamma(n−m+1) model.
pub fn smallest_eig_pdf(cfg: AntennaConfig, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return domain(format!("smallest_eig_pdf needs x >= 0, got {x}"));
    }
    let s = (cfg.n() - cfg.m()) as f64;
    if x == 0.0 {
        return Ok(if s == 0.0 { 1.0 } else { 0.0 });
    }
    Ok((s * x.ln() - x - ln_gamma(s + 1.0)).exp())
}

/// Near-origin exponent of F_{λ_i}: F(t) ≈ β t^{(n−i+1)(m−i+1)}.
pub fn cdf_exponent(cfg: AntennaConfig, i: usize) -> Result<u32> {
    cfg.check_index(i)?;
    Ok(((cfg.n() - i + 1) * (cfg.m() - i + 1)) as u32)
}

impl EigDistribution {
    pub fn smallest_analytic(cfg: AntennaConfig) -> Self {
        Self::SmallestAnalytic(cfg)
    }

    pub fn asymptotic_power(beta: f64, exponent: u32, t_max: f64) -> Result<Self> {
        if !(beta > 0.0) || exponent == 0 || !(t_max > 0.0) {
            return domain("asymptotic power law needs beta > 0, exponent >= 1, t_max > 0");
        }
        Ok(Self::AsymptoticPower { beta, exponent, t_max })
    }

    /// ln F(t) given ln t.
    pub fn ln_cdf(&self, ln_t: f64) -> Result<f64> {
        check_ln_t(ln_t)?;
        match self {
            Self::SmallestAnalytic(cfg) => Ok(ln_pq(shape(cfg), ln_t).0),
            Self::EmpiricalTable(t) => Ok(t.ln_cdf(ln_t)),
            Self::AsymptoticPower { beta, exponent, t_max } => {
                check_power_range(ln_t, *t_max)?;
                Ok(beta.ln() + *exponent as f64 * ln_t)
            }
        }
    }

    /// ln(1 − F(t)) given ln t.
    pub fn ln_sf(&self, ln_t: f64) -> Result<f64> {
        check_ln_t(ln_t)?;
        match self {
            Self::SmallestAnalytic(cfg) => Ok(ln_pq(shape(cfg), ln_t).1),
            Self::EmpiricalTable(t) => Ok(t.ln_sf(ln_t)),
            Self::AsymptoticPower { .. } => Ok(ln_1m_exp(self.ln_cdf(ln_t)?)),
        }
    }

    /// ln f(t) given ln t.
    pub fn ln_pdf(&self, ln_t: f64) -> Result<f64> {
        check_ln_t(ln_t)?;
        match self {
            Self::SmallestAnalytic(cfg) => {
                let s = shape(cfg);
                if ln_t == f64::NEG_INFINITY {
                    return Ok(if s == 1.0 { 0.0 } else { f64::NEG_INFINITY });
                }
                Ok((s - 1.0) * ln_t - ln_t.exp() - ln_gamma(s))
            }
            Self::EmpiricalTable(t) => Ok(t.ln_pdf(ln_t)),
            Self::AsymptoticPower { beta, exponent, t_max } => {
                check_power_range(ln_t, *t_max)?;
                let e = *exponent as f64;
                Ok(beta.ln() + e.ln() + (e - 1.0) * ln_t)
            }
        }
    }

    pub fn cdf(&self, t: f64) -> Result<f64> {
        Ok(self.ln_cdf(ln_arg(t)?)?.exp())
    }

    pub fn sf(&self, t: f64) -> Result<f64> {
        Ok(self.ln_sf(ln_arg(t)?)?.exp())
    }

    pub fn pdf(&self, t: f64) -> Result<f64> {
        Ok(self.ln_pdf(ln_arg(t)?)?.exp())
    }

    /// F(b) − F(a) for 0 ≤ a ≤ b ≤ ∞.
    pub fn mass(&self, a: f64, b: f64) -> Result<f64> {
        if !(a >= 0.0) || b.is_nan() {
            return domain(format!("mass needs 0 <= a <= b, got a={a}, b={b}"));
        }
        Ok(self.ln_mass(ln_arg(a)?, ln_arg(b)?)?.exp())
    }

    /// ln(F(b) − F(a)) given ln a ≤ ln b.
    pub fn ln_mass(&self, ln_a: f64, ln_b: f64) -> Result<f64> {
        if ln_a > ln_b {
            return domain(format!("mass needs a <= b, got ln a={ln_a}, ln b={ln_b}"));
        }
        if ln_a == ln_b {
            return Ok(f64::NEG_INFINITY);
        }
        let lfb = self.ln_cdf(ln_b)?;
        if lfb < -std::f64::consts::LN_2 {
            let lfa = self.ln_cdf(ln_a)?;
            Ok(lfb + ln_1m_exp((lfa - lfb).min(0.0)))
        } else {
            let lsa = self.ln_sf(ln_a)?;
            let lsb = self.ln_sf(ln_b)?;
            Ok(lsa + ln_1m_exp((lsb - lsa).min(0.0)))
        }
    }

    /// ln t such that ln F(t) = ln_p (bisection on ln t).
    pub fn ln_quantile(&self, ln_p: f64) -> Result<f64> {
        if !(ln_p <= 0.0) {
            return domain(format!("quantile probability must be in (0,1], got ln p={ln_p}"));
        }
        if ln_p == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        if ln_p == 0.0 {
            return Ok(f64::INFINITY);
        }
        let (lo, hi) = self.bracket(|lt| Ok(self.ln_cdf(lt)? - ln_p))?;
        bisect_fallible(|lt| Ok(self.ln_cdf(lt)? - ln_p), lo, hi)
    }

    /// ln t such that ln(1 − F(t)) = ln_q.
    pub fn ln_isf(&self, ln_q: f64) -> Result<f64> {
        if !(ln_q <= 0.0) {
            return domain(format!("tail probability must be in (0,1], got ln q={ln_q}"));
        }
        if ln_q == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        if ln_q == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let (lo, hi) = self.bracket(|lt| Ok(ln_q - self.ln_sf(lt)?))?;
        bisect_fallible(|lt| Ok(ln_q - self.ln_sf(lt)?), lo, hi)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        Ok(self.ln_quantile(p.ln())?.exp())
    }

    /// The upper end of the range on which evaluation is allowed.
    pub fn ln_t_max(&self) -> f64 {
        match self {
            Self::AsymptoticPower { t_max, .. } => t_max.ln(),
            _ => f64::INFINITY,
        }
    }

    /// Brackets the sign change of an increasing function of ln t.
    fn bracket(&self, g: impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
        let cap = self.ln_t_max();
        let mut lo = (-1.0f64).min(cap - 1.0);
        let mut hi = 1.0f64.min(cap);
        let mut step = 2.0;
        while g(lo)? > 0.0 {
            lo -= step;
            step *= 2.0;
            if lo < -1e5 {
                return Err(Error::Bracket("quantile below representable range".into()));
            }
        }
        step = 1.0;
        while g(hi)? < 0.0 {
            if hi >= cap {
                return Err(Error::Bracket("quantile beyond the valid range".into()));
            }
            hi = (hi + step).min(cap);
            step *= 2.0;
            if hi > 50.0 {
                return Err(Error::Bracket("quantile above representable range".into()));
            }
        }
        Ok((lo, hi))
    }
}

fn shape(cfg: &AntennaConfig) -> f64 {
    (cfg.n() - cfg.m()) as f64 + 1.0
}

fn ln_arg(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return domain(format!("eigenvalue argument must be >= 0, got {t}"));
    }
    Ok(t.ln())
}

fn check_ln_t(ln_t: f64) -> Result<()> {
    if ln_t.is_nan() {
        return domain("eigenvalue argument is NaN");
    }
    Ok(())
}

fn check_power_range(ln_t: f64, t_max: f64) -> Result<()> {
    if ln_t > t_max.ln() {
        return domain(format!(
            "asymptotic power law is valid only for t <= {t_max}, got t = {}",
            ln_t.exp()
        ));
    }
    Ok(())
}

fn bisect_fallible(g: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<f64> {
    // g is finite on [lo, hi] by construction of the bracket
    let mut err = None;
    let root = bisect(
        |x| match g(x) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        lo,
        hi,
        0.0,
    );
    match err {
        Some(e) => Err(e),
        None => Ok(root),
    }
}

/// Empirical law of λ_i: a monotone table on a logarithmic grid, a fitted
/// power-law tail below the grid and an exponential tail above it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTable {
    cfg: AntennaConfig,
    eig_index: usize,
    samples: usize,
    seed: Option<u64>,
    grid: Vec<f64>,
    cdf: Vec<f64>,
    ln_grid: Vec<f64>,
    slopes: Vec<f64>,
    tail_beta: f64,
    tail_exponent: u32,
    fitted_exponent: f64,
    upper_sf: f64,
    upper_mean: f64,
}

impl EmpiricalTable {
    /// Builds a table from raw draws of λ_i (any order).
    pub fn from_samples(cfg: AntennaConfig, i: usize, mut values: Vec<f64>) -> Result<Self> {
        let cfg = cfg.canonical();
        let exponent = cdf_exponent(cfg, i)?;
        let n = values.len();
        if n < MIN_SAMPLES {
            return Err(Error::TooFewSamples { got: n, min: MIN_SAMPLES });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidChannel);
        }
        values.sort_by(f64::total_cmp);
        let nf = n as f64;

        let t_lo = order_stat(&values, GRID_LOW_Q);
        let t_hi = order_stat(&values, 1.0 - GRID_LOW_Q);
        if !(t_lo > 0.0) || !(t_hi > t_lo) {
            return domain("degenerate eigenvalue sample");
        }
        let (l0, l1) = (t_lo.ln(), t_hi.ln());
        let grid: Vec<f64> = (0..GRID_POINTS)
            .map(|k| (l0 + (l1 - l0) * k as f64 / (GRID_POINTS - 1) as f64).exp())
            .collect();
        let mut cdf: Vec<f64> = grid
            .iter()
            .map(|&t| values.partition_point(|&x| x <= t) as f64 / nf)
            .collect();

        let tail_beta = fit_tail_beta(&values, exponent)?;
        cdf[0] = tail_beta * grid[0].powi(exponent as i32);
        let mut run = 0.0f64;
        for c in cdf.iter_mut() {
            run = run.max(*c).min(1.0);
            *c = run;
        }

        let last = *grid.last().expect("grid");
        let upper_sf = 1.0 - *cdf.last().expect("grid");
        let beyond = &values[values.partition_point(|&x| x <= last)..];
        let upper_mean = if beyond.is_empty() {
            last / GRID_POINTS as f64
        } else {
            beyond.iter().map(|x| x - last).sum::<f64>() / beyond.len() as f64
        };
        let fitted_exponent = fit_tail_exponent(&values).unwrap_or(f64::NAN);

        Self::assemble(
            cfg,
            i,
            n,
            None,
            grid,
            cdf,
            tail_beta,
            exponent,
            fitted_exponent,
            upper_sf,
            upper_mean,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: AntennaConfig,
        eig_index: usize,
        samples: usize,
        seed: Option<u64>,
        grid: Vec<f64>,
        cdf: Vec<f64>,
        tail_beta: f64,
        tail_exponent: u32,
        fitted_exponent: f64,
        upper_sf: f64,
        upper_mean: f64,
    ) -> Result<Self> {
        if grid.len() < 2 || grid.len() != cdf.len() {
            return Err(Error::Parse("table needs matching grid and cdf of length >= 2".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || !(grid[0] > 0.0) {
            return Err(Error::Parse("table grid must be positive and strictly increasing".into()));
        }
        if cdf.windows(2).any(|w| w[1] < w[0]) || cdf.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Parse("table cdf must be nondecreasing within [0,1]".into()));
        }
        if !(tail_beta > 0.0) || !(upper_mean > 0.0) || !(upper_sf >= 0.0) {
            return Err(Error::Parse("invalid tail parameters".into()));
        }
        let ln_grid: Vec<f64> = grid.iter().map(|t| t.ln()).collect();
        let slopes = pchip_slopes(&ln_grid, &cdf);
        Ok(Self {
            cfg,
            eig_index,
            samples,
            seed,
            grid,
            cdf,
            ln_grid,
            slopes,
            tail_beta,
            tail_exponent,
            fitted_exponent,
            upper_sf,
            upper_mean,
        })
    }

    pub fn config(&self) -> AntennaConfig {
        self.cfg
    }

    pub fn eig_index(&self) -> usize {
        self.eig_index
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    /// β̂ of the lower tail F(t) = β̂ t^e.
    pub fn tail_beta(&self) -> f64 {
        self.tail_beta
    }

    /// The exponent e used by the lower tail, (n−i+1)(m−i+1).
    pub fn tail_exponent(&self) -> u32 {
        self.tail_exponent
    }

    /// Near-origin slope of ln F against ln t estimated freely from the data.
    pub fn fitted_exponent(&self) -> f64 {
        self.fitted_exponent
    }

    fn ln_cdf(&self, ln_t: f64) -> f64 {
        if ln_t == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let last = self.ln_grid.len() - 1;
        if ln_t < self.ln_grid[0] {
            self.tail_beta.ln() + self.tail_exponent as f64 * ln_t
        } else if ln_t <= self.ln_grid[last] {
            self.interp(ln_t).0.ln()
        } else {
            ln_1m_exp(self.ln_sf(ln_t))
        }
    }

    fn ln_sf(&self, ln_t: f64) -> f64 {
        if ln_t == f64::INFINITY {
            return f64::NEG_INFINITY;
        }
        let last = self.ln_grid.len() - 1;
        if ln_t < self.ln_grid[0] {
            ln_1m_exp(self.ln_cdf(ln_t))
        } else if ln_t <= self.ln_grid[last] {
            (1.0 - self.interp(ln_t).0).ln()
        } else {
            let t = ln_t.exp();
            self.upper_sf.ln() - (t - self.grid[last]) / self.upper_mean
        }
    }

    fn ln_pdf(&self, ln_t: f64) -> f64 {
        let last = self.ln_grid.len() - 1;
        let e = self.tail_exponent as f64;
        if ln_t < self.ln_grid[0] {
            if ln_t == f64::NEG_INFINITY {
                return if e == 1.0 { self.tail_beta.ln() } else { f64::NEG_INFINITY };
            }
            self.tail_beta.ln() + e.ln() + (e - 1.0) * ln_t
        } else if ln_t <= self.ln_grid[last] {
            // dF/dt = (dF/d ln t) / t
            self.interp(ln_t).1.max(0.0).ln() - ln_t
        } else {
            self.ln_sf(ln_t) - self.upper_mean.ln()
        }
    }

    /// PCHIP value and derivative with respect to ln t.
    fn interp(&self, u: f64) -> (f64, f64) {
        let x = &self.ln_grid;
        let k = (x.partition_point(|&v| v <= u).max(1) - 1).min(x.len() - 2);
        let h = x[k + 1] - x[k];
        let s = ((u - x[k]) / h).clamp(0.0, 1.0);
        let (y0, y1) = (self.cdf[k], self.cdf[k + 1]);
        let (d0, d1) = (self.slopes[k], self.slopes[k + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let value = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
        let dh00 = (6.0 * s2 - 6.0 * s) / h;
        let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
        let dh01 = (-6.0 * s2 + 6.0 * s) / h;
        let dh11 = 3.0 * s2 - 2.0 * s;
        let deriv = dh00 * y0 + dh10 * d0 + dh01 * y1 + dh11 * d1;
        (value.clamp(y0, y1), deriv)
    }

    /// Writes the versioned cache CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "#eigdist v1,{},{},{},{},{}",
            self.cfg.m(),
            self.cfg.n(),
            self.eig_index,
            self.samples,
            self.seed.unwrap_or(0)
        )?;
        writeln!(
            w,
            "#tail,{},{},{}",
            self.tail_beta, self.tail_exponent, self.fitted_exponent
        )?;
        writeln!(w, "#upper,{},{}", self.upper_sf, self.upper_mean)?;
        writeln!(w, "t,cdf")?;
        for (t, c) in self.grid.iter().zip(&self.cdf) {
            writeln!(w, "{t},{c}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("truncated eigdist cache".into()))?
                .map_err(Error::from)
        };
        let header = next()?;
        let rest = header
            .strip_prefix("#eigdist v1,")
            .ok_or_else(|| Error::Parse(format!("unsupported cache header: {header}")))?;
        let key = parse_fields(rest, 5)?;
        let tail = next()?;
        let tail = parse_fields(
            tail.strip_prefix("#tail,")
                .ok_or_else(|| Error::Parse("missing #tail line".into()))?,
            3,
        )?;
        let upper = next()?;
        let upper = parse_fields(
            upper
                .strip_prefix("#upper,")
                .ok_or_else(|| Error::Parse("missing #upper line".into()))?,
            2,
        )?;
        if next()?.trim() != "t,cdf" {
            return Err(Error::Parse("missing t,cdf column header".into()));
        }
        let mut grid = Vec::new();
        let mut cdf = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v = parse_fields(&line, 2)?;
            grid.push(v[0]);
            cdf.push(v[1]);
        }
        let cfg = AntennaConfig::new(key[0] as usize, key[1] as usize)?;
        let i = key[2] as usize;
        let exponent = cdf_exponent(cfg, i)?;
        if tail[1] as u32 != exponent {
            return Err(Error::Parse("tail exponent does not match configuration".into()));
        }
        Self::assemble(
            cfg,
            i,
            key[3] as usize,
            Some(key[4] as u64),
            grid,
            cdf,
            tail[0],
            exponent,
            tail[2],
            upper[0],
            upper[1],
        )
    }
}

fn parse_fields(s: &str, count: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|f| f.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("{e} in '{s}'")))?;
    if v.len() != count {
        return Err(Error::Parse(format!("expected {count} fields in '{s}'")));
    }
    Ok(v)
}

/// The ⌈q·n⌉-th order statistic of sorted data.
fn order_stat(sorted: &[f64], q: f64) -> f64 {
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

/// β̂ for F(t) = β t^e with e fixed, by least squares of ln F − e ln t over
/// the lowest probability decade of the sample.
fn fit_tail_beta(sorted: &[f64], exponent: u32) -> Result<f64> {
    let n = sorted.len();
    let k_lo = ((GRID_LOW_Q * n as f64).round() as usize).max(1);
    let k_hi = (10 * k_lo).max(k_lo + 9).min(n);
    let e = exponent as f64;
    let mut acc = 0.0;
    let mut count = 0usize;
    for k in k_lo..=k_hi {
        let t = sorted[k - 1];
        if t > 0.0 {
            acc += (k as f64 / n as f64).ln() - e * t.ln();
            count += 1;
        }
    }
    if count == 0 {
        return domain("no positive samples in the lowest decade");
    }
    Ok((acc / count as f64).exp())
}

/// Near-origin exponent of the empirical CDF of sorted data: weighted least
/// squares of ln F̂ on (1, ln t, t, t²) at order statistics with ranks from 30
/// up to a tenth of the sample. The polynomial terms absorb the curvature of
/// ln F, which otherwise biases a plain log-log slope low when the exponent
/// is large.
pub fn fit_tail_exponent(sorted: &[f64]) -> Result<f64> {
    let n = sorted.len();
    if n < MIN_SAMPLES {
        return Err(Error::TooFewSamples { got: n, min: MIN_SAMPLES });
    }
    let (k_lo, k_hi) = (30.0f64, n as f64 / 10.0);
    let mut ranks: Vec<usize> = (0..60)
        .map(|j| (k_lo * (k_hi / k_lo).powf(j as f64 / 59.0)).round() as usize)
        .collect();
    ranks.dedup();
    let mut rows = Vec::with_capacity(ranks.len());
    let mut rhs = Vec::with_capacity(ranks.len());
    let mut weights = Vec::with_capacity(ranks.len());
    for &k in &ranks {
        let t = sorted[k - 1];
        if t <= 0.0 {
            continue;
        }
        rows.push(vec![1.0, t.ln(), t, t * t]);
        rhs.push((k as f64 / n as f64).ln());
        weights.push(k as f64);
    }
    let coef = least_squares(&rows, &rhs, Some(&weights))?;
    Ok(coef[1])
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    d[0] = pchip_end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = pchip_end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn pchip_end(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Draws `samples` channels with the given stream and tabulates λ_i.
pub fn build_empirical<R: Rng + ?Sized>(
    cfg: AntennaConfig,
    i: usize,
    samples: usize,
    rng: &mut R,
) -> Result<EigDistribution> {
    cfg.check_index(i)?;
    if samples < MIN_SAMPLES {
        return Err(Error::TooFewSamples { got: samples, min: MIN_SAMPLES });
    }
    let mut sampler = EigSampler::new(cfg.canonical());
    let values = (0..samples).map(|_| sampler.draw(rng)[i - 1]).collect();
    Ok(EigDistribution::EmpiricalTable(EmpiricalTable::from_samples(cfg, i, values)?))
}

const SAMPLE_CHUNK: usize = 1 << 16;

/// Draws λ_i for `samples` channels in parallel; the result depends only on
/// (cfg, i, samples, seed), never on the thread count.
pub fn sample_eigenvalues(cfg: AntennaConfig, i: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    cfg.check_index(i)?;
    let cfg = cfg.canonical();
    let major = ((cfg.m() as u64) << 16) | cfg.n() as u64 | (0xE16 << 32);
    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = SAMPLE_CHUNK.min(samples - c * SAMPLE_CHUNK);
            let mut rng = substream(seed, major, c as u64);
            let mut sampler = EigSampler::new(cfg);
            (0..len).map(|_| sampler.draw(&mut rng)[i - 1]).collect()
        })
        .collect();
    Ok(parts.concat())
}

/// Deterministic parallel build keyed by (cfg, i, samples, seed).
pub fn build_empirical_seeded(
    cfg: AntennaConfig,
    i: usize,
    samples: usize,
    seed: u64,
) -> Result<EmpiricalTable> {
    if samples < MIN_SAMPLES {
        return Err(Error::TooFewSamples { got: samples, min: MIN_SAMPLES });
    }
    let values = sample_eigenvalues(cfg, i, samples, seed)?;
    let mut table = EmpiricalTable::from_samples(cfg, i, values)?;
    table.seed = Some(seed);
    Ok(table)
}

/// Default cache directory for empirical tables.
pub const DEFAULT_CACHE_DIR: &str = ".eigdist-cache";

pub fn cache_path(dir: &Path, cfg: AntennaConfig, i: usize, samples: usize, seed: u64) -> PathBuf {
    let c = cfg.canonical();
    dir.join(format!("eig_m{}_n{}_i{}_s{}_seed{}.csv", c.m(), c.n(), i, samples, seed))
}

/// Loads a cached table or builds and stores it.
pub fn load_or_build(
    dir: &Path,
    cfg: AntennaConfig,
    i: usize,
    samples: usize,
    seed: u64,
) -> Result<EmpiricalTable> {
    let path = cache_path(dir, cfg, i, samples, seed);
    if let Ok(f) = fs::File::open(&path) {
        if let Ok(t) = EmpiricalTable::read_csv(BufReader::new(f)) {
            let c = cfg.canonical();
            if t.cfg == c && t.eig_index == i && t.samples == samples && t.seed == Some(seed) {
                return Ok(t);
            }
        }
    }
    let table = build_empirical_seeded(cfg, i, samples, seed)?;
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension("csv.tmp");
    table.write_csv(std::io::BufWriter::new(fs::File::create(&tmp)?))?;
    fs::rename(&tmp, &path)?;
    Ok(table)
}

/// Cached tables in a directory, as (path, key) pairs.
pub fn list_cache(dir: &Path) -> Result<Vec<(PathBuf, String)>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let mut first = String::new();
        BufReader::new(fs::File::open(&path)?).read_line(&mut first)?;
        if let Some(key) = first.trim().strip_prefix("#eigdist v1,") {
            out.push((path, key.to_string()));
        }
    }
    out.sort();
    Ok(out)
}

/// Removes every cached table in the directory; returns how many were removed.
pub fn clear_cache(dir: &Path) -> Result<usize> {
    let entries = list_cache(dir)?;
    for (p, _) in &entries {
        fs::remove_file(p)?;
    }
    Ok(entries.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(tx: usize, rx: usize) -> AntennaConfig {
        AntennaConfig::new(tx, rx).unwrap()
    }

    #[test]
    fn model_smallest_law_cases() {
        for x in [0.0, 0.3, 2.0, 9.0] {
            let v = smallest_eig_pdf(cfg(1, 1), x).unwrap();
            assert!((v - (-x).exp()).abs() < 1e-15);
            let v = smallest_eig_pdf(cfg(1, 2), x).unwrap();
            assert!((v - x * (-x).exp()).abs() < 1e-15);
        }
        assert!(smallest_eig_pdf(cfg(1, 1), -0.1).is_err());
    }

    #[test]
    fn exponents() {
        assert_eq!(cdf_exponent(cfg(1, 1), 1).unwrap(), 1);
        assert_eq!(cdf_exponent(cfg(2, 3), 1).unwrap(), 6);
        assert_eq!(cdf_exponent(cfg(3, 2), 2).unwrap(), 2);
        assert!(cdf_exponent(cfg(2, 3), 3).is_err());
        assert!(cdf_exponent(cfg(2, 3), 0).is_err());
    }

    #[test]
    fn analytic_masses() {
        let d = EigDistribution::smallest_analytic(cfg(1, 1));
        assert_eq!(d.mass(0.7, 0.7).unwrap(), 0.0);
        assert!((d.mass(0.0, 2f64.ln()).unwrap() - 0.5).abs() < 1e-14);
        let d = EigDistribution::smallest_analytic(cfg(1, 2));
        let want = 1.0 - 2.0 * (-1f64).exp();
        assert!((d.mass(0.0, 1.0).unwrap() - want).abs() < 1e-14);
        assert!((d.mass(0.0, f64::INFINITY).unwrap() - 1.0).abs() < 1e-12);
        assert!(d.mass(2.0, 1.0).is_err());
    }

    #[test]
    fn asymptotic_power_refuses_outside_its_range() {
        let d = EigDistribution::asymptotic_power(0.5, 2, 0.1).unwrap();
        assert!((d.cdf(0.1).unwrap() - 0.005).abs() < 1e-15);
        assert!(d.cdf(0.2).is_err());
        assert!(d.pdf(0.2).is_err());
        let lq = d.ln_quantile((0.5f64 * 0.05 * 0.05).ln()).unwrap();
        assert!((lq.exp() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let d = EigDistribution::smallest_analytic(cfg(2, 3));
        for p in [1e-300f64, 1e-9, 0.01, 0.5, 0.99] {
            let t = d.quantile(p).unwrap();
            assert!((d.cdf(t).unwrap() - p).abs() <= 1e-12 * p.max(1e-3), "p={p}");
        }
        let lt = d.ln_isf(-30.0).unwrap();
        assert!((d.ln_sf(lt).unwrap() + 30.0).abs() < 1e-9);
    }

    #[test]
    fn empirical_exponential_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = build_empirical(cfg(1, 1), 1, 200_000, &mut rng).unwrap();
        assert!((d.cdf(1.0).unwrap() - (1.0 - (-1f64).exp())).abs() < 0.01);
        assert!((d.mass(0.0, f64::INFINITY).unwrap() - 1.0).abs() == 0.0);
        let EigDistribution::EmpiricalTable(t) = &d else { unreachable!() };
        assert!(t.cdf_values().windows(2).all(|w| w[1] >= w[0]));
        assert!(t.grid().windows(2).all(|w| w[1] > w[0]));
        // density is close to e^{-t} in the bulk
        for x in [0.2, 1.0, 3.0] {
            let p = d.pdf(x).unwrap();
            assert!((p - (-x).exp()).abs() < 0.05, "pdf({x}) = {p}");
        }
    }

    #[test]
    fn empirical_tails_are_continuous_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = build_empirical(cfg(2, 3), 2, 100_000, &mut rng).unwrap();
        let EigDistribution::EmpiricalTable(t) = &d else { unreachable!() };
        let lo = t.grid()[0];
        let hi = *t.grid().last().unwrap();
        let below = d.cdf(lo * (1.0 - 1e-12)).unwrap();
        let at = d.cdf(lo).unwrap();
        assert!((below - at).abs() <= 1e-9 * at);
        let above = d.sf(hi * (1.0 + 1e-12)).unwrap();
        assert!((above - d.sf(hi).unwrap()).abs() <= 1e-9);
        let mut prev = 0.0;
        for k in 0..10_000 {
            let x = 1e-4 * (1e5f64).powf(k as f64 / 9_999.0);
            let c = d.cdf(x).unwrap();
            assert!(c >= prev);
            prev = c;
        }
        // deep-tail query follows β̂ t^e
        let tiny = 1e-40;
        let want = t.tail_beta() * tiny * tiny;
        assert!((d.cdf(tiny).unwrap() - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn too_few_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            build_empirical(cfg(1, 1), 1, 100, &mut rng),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let t = build_empirical_seeded(cfg(3, 2), 1, 20_000, 5).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#eigdist v1,2,3,1,20000,5\n"));
        let back = EmpiricalTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn seeded_build_is_reproducible() {
        let a = sample_eigenvalues(cfg(2, 2), 1, 70_000, 9).unwrap();
        let b = sample_eigenvalues(cfg(2, 2), 1, 70_000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pchip_preserves_monotone_data() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [0.0, 0.0, 0.5, 0.9, 1.0];
        let d = pchip_slopes(&x, &y);
        assert_eq!(d[1], 0.0);
        assert!(d.iter().all(|v| *v >= 0.0));
    }
}

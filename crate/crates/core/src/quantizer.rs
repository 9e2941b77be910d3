//! L-bin scalar feedback quantizers with channel-inversion power levels.
//!
//! Bin 0 is [0, γ₁), bin j is [γ_j, γ_{j+1}) and the last bin is
//! [γ_{L−1}, ∞). Bins j ≥ 1 use P_j = k/γ_j; bin 0 uses P₀ and the outage
//! cutoff is γ₀ = k/P₀. Thresholds and powers are held as logarithms.

use serde::{Deserialize, Serialize};

use crate::eigdist::EigDistribution;
use crate::error::{Error, Result};
use crate::schemes::g_function;
use crate::special::{bisect, least_squares, ln_add_exp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignMethod {
    Equi,
    Kkt,
}

impl std::str::FromStr for DesignMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equi" => Ok(Self::Equi),
            "kkt" => Ok(Self::Kkt),
            _ => Err(Error::Parse(format!("unknown design method '{s}' (equi|kkt)"))),
        }
    }
}

impl std::fmt::Display for DesignMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Equi => "equi",
            Self::Kkt => "kkt",
        })
    }
}

/// k = 2^R − 1.
pub fn rate_constant(rate_bits: f64) -> Result<f64> {
    if !(rate_bits > 0.0) || !rate_bits.is_finite() {
        return Err(Error::Domain(format!("rate must be > 0 bits/s/Hz, got {rate_bits}")));
    }
    Ok(rate_bits.exp2() - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    rate_bits: f64,
    k: f64,
    ln_thresholds: Vec<f64>,
    ln_powers: Vec<f64>,
    ln_gamma0: f64,
}

impl Quantizer {
    /// Builds a quantizer from ln γ₁..ln γ_{L−1} and ln P₀; the remaining
    /// powers follow from channel inversion.
    pub fn from_thresholds(rate_bits: f64, ln_thresholds: Vec<f64>, ln_p0: f64) -> Result<Self> {
        let k = rate_constant(rate_bits)?;
        if ln_thresholds.iter().any(|v| !v.is_finite())
            || ln_thresholds.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::Domain("quantizer thresholds must be finite and strictly increasing".into()));
        }
        // ln P₀ = −∞ marks a silent bin 0
        if ln_p0.is_nan() || ln_p0 == f64::INFINITY {
            return Err(Error::Domain("bin-0 power must be finite or zero".into()));
        }
        let ln_k = k.ln();
        let mut ln_powers = Vec::with_capacity(ln_thresholds.len() + 1);
        ln_powers.push(ln_p0);
        ln_powers.extend(ln_thresholds.iter().map(|g| ln_k - g));
        Ok(Self {
            rate_bits,
            k,
            ln_thresholds,
            ln_powers,
            ln_gamma0: ln_k - ln_p0,
        })
    }

    pub fn bins(&self) -> usize {
        self.ln_powers.len()
    }

    pub fn rate_bits(&self) -> f64 {
        self.rate_bits
    }

    /// k = 2^R − 1.
    pub fn rate_constant(&self) -> f64 {
        self.k
    }

    pub fn ln_thresholds(&self) -> &[f64] {
        &self.ln_thresholds
    }

    pub fn ln_powers(&self) -> &[f64] {
        &self.ln_powers
    }

    pub fn ln_gamma0(&self) -> f64 {
        self.ln_gamma0
    }

    /// γ₁..γ_{L−1} (may underflow to 0 at very high SNR; see `ln_thresholds`).
    pub fn thresholds(&self) -> Vec<f64> {
        self.ln_thresholds.iter().map(|v| v.exp()).collect()
    }

    /// P₀..P_{L−1} (may overflow to ∞ at very high SNR; see `ln_powers`).
    pub fn powers(&self) -> Vec<f64> {
        self.ln_powers.iter().map(|v| v.exp()).collect()
    }

    pub fn gamma0(&self) -> f64 {
        self.ln_gamma0.exp()
    }

    /// ln of the effective outage cutoff min(γ₀, γ₁): when the budget is so
    /// small that γ₀ ≥ γ₁, every channel in bin 0 fails.
    pub fn ln_outage_cutoff(&self) -> f64 {
        match self.ln_thresholds.first() {
            Some(&g1) => self.ln_gamma0.min(g1),
            None => self.ln_gamma0,
        }
    }

    /// True when bin 0 transmits nothing.
    pub fn is_silent_bin0(&self) -> bool {
        self.ln_powers[0] == f64::NEG_INFINITY
    }

    /// True when γ₀ ≥ γ₁ (bin 0 never decodes).
    pub fn is_degenerate(&self) -> bool {
        self.ln_thresholds.first().is_some_and(|&g1| self.ln_gamma0 >= g1)
    }

    /// Bin index of an eigenvalue given its logarithm.
    pub fn bin_of_ln(&self, ln_lambda: f64) -> usize {
        self.ln_thresholds.partition_point(|&g| g <= ln_lambda)
    }

    pub fn bin_of(&self, lambda: f64) -> usize {
        self.bin_of_ln(lambda.ln())
    }

    pub fn power_for(&self, lambda: f64) -> f64 {
        self.ln_powers[self.bin_of(lambda)].exp()
    }

    /// ln of (left, right) edges of bin j, with 0 and ∞ at the ends.
    fn ln_edges(&self, j: usize) -> (f64, f64) {
        let left = if j == 0 { f64::NEG_INFINITY } else { self.ln_thresholds[j - 1] };
        let right = self.ln_thresholds.get(j).copied().unwrap_or(f64::INFINITY);
        (left, right)
    }
}

/// ln E[P] = ln Σ_j P_j · F(γ_j, γ_{j+1}).
pub fn ln_avg_power(q: &Quantizer, dist: &EigDistribution) -> Result<f64> {
    let mut acc = f64::NEG_INFINITY;
    for j in 0..q.bins() {
        let (a, b) = q.ln_edges(j);
        acc = ln_add_exp(acc, q.ln_powers[j] + dist.ln_mass(a, b)?);
    }
    Ok(acc)
}

pub fn avg_power(q: &Quantizer, dist: &EigDistribution) -> Result<f64> {
    Ok(ln_avg_power(q, dist)?.exp())
}

/// ln Π = ln F(min(γ₀, γ₁)) under the law of the outage eigenvalue.
pub fn ln_outage_analytic(q: &Quantizer, outage_dist: &EigDistribution) -> Result<f64> {
    outage_dist.ln_cdf(q.ln_outage_cutoff())
}

pub fn outage_analytic(q: &Quantizer, outage_dist: &EigDistribution) -> Result<f64> {
    Ok(ln_outage_analytic(q, outage_dist)?.exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignReport {
    pub quantizer: Quantizer,
    pub method: DesignMethod,
    pub avg_power_used: f64,
    /// Relative residual of each design equation: the per-bin equal-power
    /// identity (equi) or each KKT row (kkt).
    pub residuals: Vec<f64>,
    /// Relative mismatch of the average power against the budget.
    pub power_residual: f64,
    pub iterations: usize,
}

impl DesignReport {
    pub fn residual_max(&self) -> f64 {
        self.residuals.iter().fold(0.0f64, |a, r| a.max(r.abs()))
    }
}

pub fn design(
    method: DesignMethod,
    dist: &EigDistribution,
    bins: usize,
    p_av: f64,
    rate_bits: f64,
) -> Result<DesignReport> {
    match method {
        DesignMethod::Equi => design_equi_power(dist, bins, p_av, rate_bits),
        DesignMethod::Kkt => design_kkt(dist, bins, p_av, rate_bits),
    }
}

fn check_inputs(bins: usize, p_av: f64) -> Result<()> {
    if bins == 0 {
        return Err(Error::Domain("quantizer needs at least one bin".into()));
    }
    if !(p_av > 0.0) || !p_av.is_finite() {
        return Err(Error::Domain(format!("average power must be positive, got {p_av}")));
    }
    Ok(())
}

/// Expands `[lo, hi]` downward until `g(lo) > 0`, for g decreasing in ln γ.
fn expand_down(g: &impl Fn(f64) -> Result<f64>, mut lo: f64) -> Result<f64> {
    let mut step = 1.0;
    while g(lo)? <= 0.0 {
        lo -= step;
        step *= 2.0;
        if lo < -1e5 {
            return Err(Error::InfeasiblePower("no threshold bracket below".into()));
        }
    }
    Ok(lo)
}

fn root_decreasing(g: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<(f64, usize)> {
    let mut err = None;
    let mut evals = 0usize;
    let root = bisect(
        |x| {
            evals += 1;
            match g(x) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            }
        },
        lo,
        hi,
        0.0,
    );
    match err {
        Some(e) => Err(e),
        None => Ok((root, evals)),
    }
}

/// Equal total power per bin, solved back to front. Besides the standard
/// design (P_av/L per bin) the variant with bin 0 silent and P_av/(L−1) per
/// served bin is solved; it wins at low SNR, where the standard recursion
/// leaves γ₀ ≥ γ₁. The one with smaller outage cutoff is returned.
pub fn design_equi_power(
    dist: &EigDistribution,
    bins: usize,
    p_av: f64,
    rate_bits: f64,
) -> Result<DesignReport> {
    check_inputs(bins, p_av)?;
    let standard = equi_candidate(dist, bins, p_av, rate_bits, false);
    if bins == 1 {
        return standard;
    }
    match (standard, equi_candidate(dist, bins, p_av, rate_bits, true)) {
        (Ok(a), Ok(b)) => {
            let iterations = a.iterations + b.iterations;
            let mut best =
                if b.quantizer.ln_outage_cutoff() < a.quantizer.ln_outage_cutoff() { b } else { a };
            best.iterations = iterations;
            Ok(best)
        }
        (Ok(a), Err(_)) => Ok(a),
        (Err(_), Ok(b)) => Ok(b),
        (Err(e), Err(_)) => Err(e),
    }
}

/// Only the standard equal-power recursion, P_av/L in every bin.
pub fn design_equi_power_standard(
    dist: &EigDistribution,
    bins: usize,
    p_av: f64,
    rate_bits: f64,
) -> Result<DesignReport> {
    check_inputs(bins, p_av)?;
    equi_candidate(dist, bins, p_av, rate_bits, false)
}

fn equi_candidate(
    dist: &EigDistribution,
    bins: usize,
    p_av: f64,
    rate_bits: f64,
    silent: bool,
) -> Result<DesignReport> {
    let k = rate_constant(rate_bits)?;
    let ln_k = k.ln();
    let served = if silent { bins - 1 } else { bins };
    let ln_share = p_av.ln() - (served as f64).ln();
    let mut ln_th = vec![0.0; bins - 1];
    let mut iterations = 0;

    for j in (1..bins).rev() {
        let right = ln_th.get(j).copied().unwrap_or(f64::INFINITY);
        // (k/γ)·F(γ, right) − share, in logs; decreasing in ln γ.
        let g = |lg: f64| Ok(ln_k - lg + dist.ln_mass(lg, right)? - ln_share);
        let (lo, hi) = if right.is_finite() {
            (expand_down(&g, right - 1.0)?, right)
        } else {
            let mut hi = (ln_k - ln_share).max(0.0) + 1.0;
            let mut step = 1.0;
            while g(hi)? > 0.0 {
                hi += step;
                step *= 2.0;
                if hi > 50.0 {
                    return Err(Error::InfeasiblePower("last-bin threshold unbounded".into()));
                }
            }
            (expand_down(&g, hi - 1.0)?, hi)
        };
        let (root, evals) = root_decreasing(g, lo, hi)?;
        ln_th[j - 1] = root;
        iterations += evals;
    }
    let ln_p0 = match ln_th.first() {
        _ if silent => f64::NEG_INFINITY,
        Some(&g1) => ln_share - dist.ln_cdf(g1)?,
        None => p_av.ln(),
    };
    let quantizer = Quantizer::from_thresholds(rate_bits, ln_th, ln_p0)?;
    let first = if silent { 1 } else { 0 };
    let residuals = (first..bins)
        .map(|j| {
            let (a, b) = quantizer.ln_edges(j);
            Ok((quantizer.ln_powers[j] + dist.ln_mass(a, b)? - ln_share).exp_m1())
        })
        .collect::<Result<Vec<_>>>()?;
    finish(quantizer, DesignMethod::Equi, dist, p_av, residuals, iterations)
}

fn finish(
    quantizer: Quantizer,
    method: DesignMethod,
    dist: &EigDistribution,
    p_av: f64,
    residuals: Vec<f64>,
    iterations: usize,
) -> Result<DesignReport> {
    let ln_used = ln_avg_power(&quantizer, dist)?;
    Ok(DesignReport {
        quantizer,
        method,
        avg_power_used: ln_used.exp(),
        residuals,
        power_residual: (ln_used - p_av.ln()).exp_m1(),
        iterations,
    })
}

/// Relative KKT residuals 1 − γ_{j−1}/γ_j − F(γ_j, γ_{j+1})·γ_{j−1}/(γ_j² f(γ_j))
/// for rows j = 1..L−1, where γ₀ is the outage cutoff. With bin 0 silent the
/// constraint P₀ ≥ 0 is active and only rows j ≥ 2 apply.
pub fn kkt_residuals(q: &Quantizer, dist: &EigDistribution) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(q.bins().saturating_sub(1));
    // a silent bin 0 drops the row that involves γ₀
    let first = if q.is_silent_bin0() { 2 } else { 1 };
    for j in first..q.bins() {
        let (lg, right) = q.ln_edges(j);
        let prev = if j == 1 { q.ln_gamma0 } else { q.ln_thresholds[j - 2] };
        let a = (prev - lg).exp();
        let b = (dist.ln_mass(lg, right)? + prev - 2.0 * lg - dist.ln_pdf(lg)?).exp();
        out.push(1.0 - a - b);
    }
    Ok(out)
}

/// Backward KKT recursion from ln γ_{L−1}: each row gives
/// γ_{j−1} = γ_j / (1 + F(γ_j, γ_{j+1}) / (γ_j f(γ_j))). Returns ln γ₁..ln γ_{L−1}
/// and ln γ₀.
fn kkt_chain(dist: &EigDistribution, bins: usize, ln_last: f64) -> Result<(Vec<f64>, f64)> {
    let mut ln_th = vec![0.0; bins - 1];
    ln_th[bins - 2] = ln_last;
    let mut ln_prev = 0.0;
    for j in (1..bins).rev() {
        let lg = ln_th[j - 1];
        let right = ln_th.get(j).copied().unwrap_or(f64::INFINITY);
        let ratio = dist.ln_mass(lg, right)? - lg - dist.ln_pdf(lg)?;
        ln_prev = lg - ln_add_exp(0.0, ratio);
        if j >= 2 {
            ln_th[j - 2] = ln_prev;
        }
    }
    Ok((ln_th, ln_prev))
}

/// Outage-optimal quantizer from the first-order conditions of the dual
/// problem, with the average power matched to `p_av`. Two KKT points are
/// solved: the interior one and the one with bin 0 silent (P₀ = 0, outage
/// cutoff γ₁), which wins at low SNR. The one with smaller outage cutoff is
/// returned.
pub fn design_kkt(
    dist: &EigDistribution,
    bins: usize,
    p_av: f64,
    rate_bits: f64,
) -> Result<DesignReport> {
    check_inputs(bins, p_av)?;
    if bins == 1 {
        let mut r = design_equi_power(dist, bins, p_av, rate_bits)?;
        r.method = DesignMethod::Kkt;
        r.residuals.clear();
        return Ok(r);
    }
    let interior = kkt_candidate(dist, bins, p_av, rate_bits, false);
    let silent = kkt_candidate(dist, bins, p_av, rate_bits, true);
    let (quantizer, iterations) = match (interior, silent) {
        (Ok(a), Ok(b)) => {
            if b.0.ln_outage_cutoff() < a.0.ln_outage_cutoff() {
                (b.0, a.1 + b.1)
            } else {
                (a.0, a.1 + b.1)
            }
        }
        (Ok(a), Err(_)) => a,
        (Err(_), Ok(b)) => b,
        (Err(e), Err(_)) => return Err(e),
    };
    let residuals = kkt_residuals(&quantizer, dist)?;
    finish(quantizer, DesignMethod::Kkt, dist, p_av, residuals, iterations)
}

fn kkt_candidate(
    dist: &EigDistribution,
    bins: usize,
    p_av: f64,
    rate_bits: f64,
    silent: bool,
) -> Result<(Quantizer, usize)> {
    let k = rate_constant(rate_bits)?;
    let ln_k = k.ln();
    let ln_budget = p_av.ln();
    let build = |ln_last: f64| -> Result<Quantizer> {
        if silent {
            // served bins 1..L−1 form a chain whose cutoff is γ₁ itself
            let (mut ln_th, ln_g1) = if bins == 2 {
                (Vec::new(), ln_last)
            } else {
                kkt_chain(dist, bins - 1, ln_last)?
            };
            ln_th.insert(0, ln_g1);
            Quantizer::from_thresholds(rate_bits, ln_th, f64::NEG_INFINITY)
        } else {
            let (ln_th, ln_g0) = kkt_chain(dist, bins, ln_last)?;
            Quantizer::from_thresholds(rate_bits, ln_th, ln_k - ln_g0)
        }
    };
    // power used minus budget, in logs; decreasing in ln γ_{L−1}
    let g = |ln_last: f64| -> Result<f64> { Ok(ln_avg_power(&build(ln_last)?, dist)? - ln_budget) };

    let mut hi = (ln_k - ln_budget).max(0.0) + 1.0;
    let mut step = 1.0;
    while g(hi)? > 0.0 {
        hi += step;
        step *= 2.0;
        if hi > 50.0 {
            return Err(Error::InfeasiblePower("KKT: no threshold meets the budget".into()));
        }
    }
    let lo = expand_down(&g, hi - 1.0)?;
    let (root, iterations) = root_decreasing(g, lo, hi)?;
    Ok((build(root)?, iterations))
}

/// Asymptotic surrogate γ₀ ≈ c · p_av^{−(1−r/i)·G(m,n,i,L)} with c fitted from
/// actual designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gamma0Asymptotic {
    /// (1−r/i)·G(m,n,i,L)
    pub exponent: f64,
    /// ln c, least squares with the slope fixed to −exponent.
    pub ln_c: f64,
    /// Free least-squares slope of ln γ₀ against ln p_av over the fit range.
    pub fitted_slope: f64,
    pub r_squared: f64,
}

impl Gamma0Asymptotic {
    pub fn ln_gamma0(&self, p_av: f64) -> f64 {
        self.ln_c - self.exponent * p_av.ln()
    }

    pub fn gamma0(&self, p_av: f64) -> f64 {
        self.ln_gamma0(p_av).exp()
    }
}

/// (1−r/i)·G(m,n,i,L).
pub fn gamma0_exponent(m: usize, n: usize, i: usize, bins: usize, r: f64) -> Result<f64> {
    if !(r >= 0.0) || r > i as f64 {
        return Err(Error::Domain(format!("multiplexing gain {r} outside [0, {i}]")));
    }
    Ok((1.0 - r / i as f64) * g_function(m, n, i, bins)?.as_f64())
}

/// Fits the asymptotic constant by designing equi-power quantizers on `snr_db`
/// points with per-mode rate (r/i)·log₂ p_av (or `fixed_rate` when r = 0).
#[allow(clippy::too_many_arguments)]
pub fn fit_gamma0_asymptotic(
    dist: &EigDistribution,
    m: usize,
    n: usize,
    i: usize,
    bins: usize,
    r: f64,
    fixed_rate: f64,
    snr_db: &[f64],
) -> Result<Gamma0Asymptotic> {
    let exponent = gamma0_exponent(m, n, i, bins, r)?;
    if snr_db.len() < 2 {
        return Err(Error::Domain("need at least two SNR points".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &s in snr_db {
        let p = 10f64.powf(s / 10.0);
        let rate = if r > 0.0 { r / i as f64 * p.log2() } else { fixed_rate };
        let q = design_equi_power(dist, bins, p, rate)?.quantizer;
        xs.push(p.ln());
        ys.push(q.ln_outage_cutoff());
    }
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
    let coef = least_squares(&rows, &ys, None)?;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - coef[0] - coef[1] * x).powi(2)).sum();
    let ln_c = xs.iter().zip(&ys).map(|(x, y)| y + exponent * x).sum::<f64>() / xs.len() as f64;
    Ok(Gamma0Asymptotic {
        exponent,
        ln_c,
        fitted_slope: coef[1],
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    })
}

/// JSON form of a designed quantizer. The linear fields are the documented
/// interface; the `ln_*` fields keep values that under- or overflow f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerDoc {
    pub m: usize,
    pub n: usize,
    pub eig_index: usize,
    #[serde(rename = "L")]
    pub bins: usize,
    pub rate_bits: f64,
    pub snr_db: f64,
    pub thresholds: Vec<f64>,
    pub powers: Vec<f64>,
    pub gamma0: f64,
    pub method: DesignMethod,
    pub residual_max: f64,
    pub avg_power: f64,
    pub dist: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_thresholds: Option<Vec<f64>>,
    /// null marks a silent bin (ln 0).
    #[serde(default, skip_serializing_if = "Option::is_none", with = "ln_or_null")]
    pub ln_powers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_gamma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Map<String, serde_json::Value>>,
}

impl QuantizerDoc {
    #[allow(clippy::too_many_arguments)]
    pub fn from_report(
        report: &DesignReport,
        m: usize,
        n: usize,
        eig_index: usize,
        snr_db: f64,
        dist: &str,
        samples: Option<usize>,
        seed: Option<u64>,
    ) -> Self {
        let q = &report.quantizer;
        Self {
            m,
            n,
            eig_index,
            bins: q.bins(),
            rate_bits: q.rate_bits(),
            snr_db,
            thresholds: q.thresholds(),
            powers: q.powers().into_iter().map(finite_or_max).collect(),
            gamma0: finite_or_max(q.gamma0()),
            method: report.method,
            residual_max: report.residual_max(),
            avg_power: report.avg_power_used,
            dist: dist.to_string(),
            samples,
            seed,
            ln_thresholds: Some(q.ln_thresholds().to_vec()),
            ln_powers: Some(q.ln_powers().to_vec()),
            ln_gamma0: Some(q.ln_gamma0()).filter(|v| v.is_finite()),
            config: None,
        }
    }

    /// Rebuilds the quantizer, preferring the lossless `ln_*` fields.
    pub fn quantizer(&self) -> Result<Quantizer> {
        let ln_th = match &self.ln_thresholds {
            Some(v) => v.clone(),
            None => self.thresholds.iter().map(|t| t.ln()).collect(),
        };
        let ln_p0 = match (&self.ln_powers, self.ln_gamma0) {
            (Some(p), _) if !p.is_empty() => p[0],
            (_, Some(g0)) => rate_constant(self.rate_bits)?.ln() - g0,
            _ => self
                .powers
                .first()
                .ok_or_else(|| Error::Parse("quantizer has no powers".into()))?
                .ln(),
        };
        if ln_th.len() + 1 != self.bins {
            return Err(Error::Parse(format!(
                "quantizer with L={} needs {} thresholds",
                self.bins,
                self.bins - 1
            )));
        }
        Quantizer::from_thresholds(self.rate_bits, ln_th, ln_p0)
    }
}

mod ln_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let mapped: Option<Vec<Option<f64>>> =
            v.as_ref().map(|v| v.iter().map(|x| x.is_finite().then_some(*x)).collect());
        serde::Serialize::serialize(&mapped, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        let raw: Option<Vec<Option<f64>>> = Option::deserialize(d)?;
        Ok(raw.map(|v| v.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect()))
    }
}

fn finite_or_max(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::MAX
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randmat::AntennaConfig;

    fn siso() -> EigDistribution {
        EigDistribution::smallest_analytic(AntennaConfig::new(1, 1).unwrap())
    }

    #[test]
    fn single_bin_is_truncated_inversion() {
        let r = design_equi_power(&siso(), 1, 100.0, 2.0).unwrap();
        let q = &r.quantizer;
        assert!((q.powers()[0] - 100.0).abs() < 1e-12);
        assert!((q.gamma0() - 0.03).abs() < 1e-15);
        assert!((r.avg_power_used - 100.0).abs() < 1e-9);
        let out = outage_analytic(q, &siso()).unwrap();
        assert!((out - (1.0 - (-0.03f64).exp())).abs() < 1e-15);
        assert!((out - 0.029554).abs() < 1e-6);
    }

    #[test]
    fn equi_power_identity_holds() {
        for bins in 1..=5 {
            for snr in [0.0, 10.0, 30.0, 60.0] {
                let p = 10f64.powf(snr / 10.0);
                let r = design_equi_power(&siso(), bins, p, 2.0).unwrap();
                assert!(r.residual_max() <= 1e-9, "L={bins} snr={snr}: {:?}", r.residuals);
                assert!(r.power_residual.abs() <= 1e-9);
                let th = r.quantizer.ln_thresholds();
                assert!(th.windows(2).all(|w| w[1] > w[0]));
            }
        }
    }

    #[test]
    fn hand_built_two_bin_average_power() {
        // Exp(1), γ₁ = 1, P₀ = 2, P₁ = 1 ⇒ k = 1 (R = 1 bit)
        let q = Quantizer::from_thresholds(1.0, vec![0.0], 2f64.ln()).unwrap();
        assert!((q.powers()[1] - 1.0).abs() < 1e-15);
        let want = 2.0 * (1.0 - (-1f64).exp()) + (-1f64).exp();
        assert!((avg_power(&q, &siso()).unwrap() - want).abs() < 1e-12);
        assert!((want - 1.63212).abs() < 1e-5);
    }

    #[test]
    fn equi_matches_grid_search_oracle() {
        // SISO, L=2, p_av=100, k=3: last bin solves (3/γ)e^{−γ} = 50 ⇒ γ ≈ 3/50 shrunk by e^{−γ}.
        let r = design_equi_power(&siso(), 2, 100.0, 2.0).unwrap();
        let g1 = r.quantizer.thresholds()[0];
        // dense grid then bisection on the closed form
        let f = |g: f64| 3.0 / g * (-g).exp() - 50.0;
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..100_000 {
            let g = k as f64 * 1e-6;
            if f(g).abs() < best.0 {
                best = (f(g).abs(), g);
            }
        }
        let (mut lo, mut hi) = (best.1 - 1e-6, best.1 + 1e-6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((g1 - lo).abs() <= 1e-6 * lo);
        let p0 = 50.0 / (1.0 - (-lo).exp());
        assert!((r.quantizer.powers()[0] - p0).abs() <= 1e-6 * p0);
    }

    #[test]
    fn kkt_satisfies_its_equations() {
        for bins in 2..=4 {
            for snr in [0.0, 10.0, 20.0, 30.0] {
                let p = 10f64.powf(snr / 10.0);
                let r = design_kkt(&siso(), bins, p, 2.0).unwrap();
                assert!(r.residual_max() <= 1e-8, "L={bins} snr={snr}: {:?}", r.residuals);
                assert!(r.power_residual.abs() <= 1e-8);
                let e = design_equi_power(&siso(), bins, p, 2.0).unwrap();
                let oe = outage_analytic(&e.quantizer, &siso()).unwrap();
                let ok = outage_analytic(&r.quantizer, &siso()).unwrap();
                assert!(ok <= oe * (1.0 + 1e-9), "L={bins} snr={snr}: kkt {ok} equi {oe}");
            }
        }
    }

    #[test]
    fn kkt_two_bins_matches_grid_oracle() {
        // L=2 on Exp(1), k=3, p_av=10^1.5: search γ₁ on a grid, with γ₀ set by
        // the single KKT row and the power by bisection of the budget.
        let p = 10f64.powf(1.5);
        let k = 3.0;
        let r = design_kkt(&siso(), 2, p, 2.0).unwrap();
        let g1 = r.quantizer.thresholds()[0];
        // row: e^{−γ₁}/γ₀ − e^{−γ₁}/γ₁² − e^{−γ₁}/γ₁ = 0 ⇒ γ₀ = γ₁²/(1+γ₁)
        let power = |g: f64| {
            let g0 = g * g / (1.0 + g);
            k / g0 * (1.0 - (-g).exp()) + k / g * (-g).exp()
        };
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..200_000 {
            let g = i as f64 * 1e-5;
            let d = (power(g) - p).abs();
            if d < best.0 {
                best = (d, g);
            }
        }
        assert!((g1 - best.1).abs() <= 1e-5 + 1e-6 * g1, "{g1} vs {}", best.1);
        let g0 = g1 * g1 / (1.0 + g1);
        assert!((r.quantizer.gamma0() - g0).abs() <= 1e-9 * g0);
    }

    #[test]
    fn low_snr_designs_silence_bin_zero() {
        // 0 dB, L=2, k=3 on Exp(1): with bin 0 silent the single served bin
        // solves (k/γ₁)e^{−γ₁} = p_av in both designs
        let r = design_equi_power(&siso(), 2, 1.0, 2.0).unwrap();
        let q = &r.quantizer;
        assert!(q.is_silent_bin0());
        let g1 = q.thresholds()[0];
        assert!((3.0 / g1 * (-g1).exp() - 1.0).abs() < 1e-12);
        assert!(r.residual_max() < 1e-12);
        assert_eq!(q.power_for(g1 / 2.0), 0.0);
        let kk = design_kkt(&siso(), 2, 1.0, 2.0).unwrap();
        assert!((kk.quantizer.thresholds()[0] - g1).abs() < 1e-12 * g1);
        // the interior stationary point has γ₀ = γ₁²/(1+γ₁) ≈ 2.986, outage 0.9495
        let out = outage_analytic(q, &siso()).unwrap();
        assert!((out - (-(-g1).exp_m1())).abs() < 1e-15);
        assert!(out < 0.66);
        // silent bin survives a JSON round trip
        let doc = QuantizerDoc::from_report(&r, 1, 1, 1, 0.0, "analytic", None, None);
        let text = serde_json::to_string(&doc).unwrap();
        let back: QuantizerDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back.quantizer().unwrap(), *q);
    }

    #[test]
    fn equi_tracks_kkt_over_low_snr() {
        for s in 0..=20 {
            let p = 10f64.powf(s as f64 / 10.0);
            let e = outage_analytic(&design_equi_power(&siso(), 3, p, 2.0).unwrap().quantizer, &siso()).unwrap();
            let k = outage_analytic(&design_kkt(&siso(), 3, p, 2.0).unwrap().quantizer, &siso()).unwrap();
            assert!(k <= e * (1.0 + 1e-9) && e <= 1.25 * k, "{s} dB: equi {e} kkt {k}");
        }
    }

    #[test]
    fn kkt_stays_interior_in_the_deep_tail() {
        // largest eigenvalue of 2×3 (exponent 6), L=4: the chain reaches
        // ln γ ≈ −420 where the mass/density ratio overflows f64 unless kept
        // in logs
        let cfg = crate::randmat::AntennaConfig::new(2, 3).unwrap();
        let dist = EigDistribution::EmpiricalTable(crate::eigdist::build_empirical_seeded(cfg, 1, 20_000, 3).unwrap());
        let e = design_equi_power(&dist, 4, 10.0, 2.0).unwrap().quantizer;
        let k = design_kkt(&dist, 4, 10.0, 2.0).unwrap();
        assert!(!k.quantizer.is_silent_bin0());
        assert!(k.residual_max() < 1e-8);
        let (le, lk) = (ln_outage_analytic(&e, &dist).unwrap(), ln_outage_analytic(&k.quantizer, &dist).unwrap());
        assert!(lk.is_finite() && lk < le, "kkt {lk} equi {le}");
    }

    #[test]
    fn more_bins_never_hurt() {
        let p = 10f64.powf(1.5);
        let mut prev = 1.0;
        for bins in 1..=4 {
            let r = design_equi_power(&siso(), bins, p, 2.0).unwrap();
            let o = outage_analytic(&r.quantizer, &siso()).unwrap();
            assert!(o <= prev, "L={bins}: {o} > {prev}");
            prev = o;
        }
    }

    #[test]
    fn served_bins_meet_the_rate() {
        let r = design_equi_power(&siso(), 4, 1000.0, 2.0).unwrap();
        let q = &r.quantizer;
        let th = q.thresholds();
        for j in 1..q.bins() {
            let lo = th[j - 1];
            let hi = th.get(j).copied().unwrap_or(lo * 100.0);
            for s in 0..=100 {
                let t = lo + (hi - lo) * s as f64 / 100.0;
                let b = q.bin_of(t);
                assert!(b >= 1);
                let rate = (1.0 + q.powers()[b] * t).log2();
                assert!(rate >= 2.0 - 1e-12);
            }
        }
    }

    #[test]
    fn doc_round_trip() {
        let r = design_kkt(&siso(), 3, 1000.0, 2.0).unwrap();
        let doc = QuantizerDoc::from_report(&r, 1, 1, 1, 30.0, "analytic", None, None);
        let text = serde_json::to_string_pretty(&doc).unwrap();
        assert!(text.contains("\"L\": 3"));
        assert!(text.contains("\"method\": \"kkt\""));
        let back: QuantizerDoc = serde_json::from_str(&text).unwrap();
        let q = back.quantizer().unwrap();
        assert_eq!(q, r.quantizer);
        let p = avg_power(&q, &siso()).unwrap();
        assert!((p - back.avg_power).abs() <= 1e-9 * back.avg_power);
    }

    #[test]
    fn zero_rate_is_rejected() {
        assert!(design_equi_power(&siso(), 2, 10.0, 0.0).is_err());
        assert!(design_kkt(&siso(), 2, 10.0, -1.0).is_err());
    }
}

//! Transmitter-knowledge policies: map the ordered spectrum of HH† to a
//! power per transmit eigen-direction, plus the perfect-CSIT threshold
//! equations and the joint rate+power scheme.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigdist::{cdf_exponent, EigDistribution};
use crate::error::{Error, Result};
use crate::quantizer::{design_equi_power, DesignMethod, Quantizer};
use crate::randmat::{substream, AntennaConfig, EigSampler};
use crate::special::{exp_int_e1, inverse_upper_ln, ln_gamma};

/// Value of the geometric sum G(m,n,i,L) = Σ_{l<L} [(n−i+1)(m−i+1)]^l.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GValue {
    pub value: u64,
    /// Set when the sum exceeds u64 and `value` is clamped to u64::MAX.
    pub saturated: bool,
}

impl GValue {
    pub fn as_f64(&self) -> f64 {
        self.value as f64
    }
}

pub fn g_function(m: usize, n: usize, i: usize, bins: usize) -> Result<GValue> {
    if m == 0 || m > n || i == 0 || i > m || bins == 0 {
        return Err(Error::Domain(format!(
            "G needs 1 <= i <= m <= n and L >= 1 (m={m}, n={n}, i={i}, L={bins})"
        )));
    }
    let base = ((n - i + 1) * (m - i + 1)) as u64;
    let mut sum: u64 = 0;
    let mut term: u64 = 1;
    for l in 0..bins {
        sum = match sum.checked_add(term) {
            Some(s) => s,
            None => return Ok(GValue { value: u64::MAX, saturated: true }),
        };
        if l + 1 < bins {
            term = match term.checked_mul(base) {
                Some(t) => t,
                None => return Ok(GValue { value: u64::MAX, saturated: true }),
            };
        }
    }
    Ok(GValue { value: sum, saturated: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    /// Physical power on each of the M transmit eigen-directions, strongest
    /// eigenmode first.
    pub per_mode: Vec<f64>,
    pub total: f64,
    pub transmitting: bool,
}

impl PowerAllocation {
    pub fn new(per_mode: Vec<f64>) -> Self {
        let total: f64 = per_mode.iter().sum();
        Self { per_mode, total, transmitting: total > 0.0 }
    }

    pub fn silent(tx: usize) -> Self {
        Self::new(vec![0.0; tx])
    }
}

/// Σ_k log₂(1 + p_k λ_k) over the nonzero eigenmodes.
pub fn mutual_information(lambdas: &[f64], alloc: &PowerAllocation) -> f64 {
    lambdas
        .iter()
        .zip(&alloc.per_mode)
        .map(|(l, p)| (p * l).ln_1p())
        .sum::<f64>()
        / std::f64::consts::LN_2
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchemeKind {
    /// p_av/M on every transmit antenna.
    NoCsit,
    /// All power on the strongest eigenmode.
    Beamforming,
    /// Truncated inversion of λ_m with equal power on the m modes.
    TemporalPerfect { ln_gamma0: f64, k_mode: f64 },
    /// Inverse water-filling to meet the rate; silent above `power_cut`.
    OptimalPerfect { power_cut: f64 },
    /// Quantized λ_i selects per-antenna power P_j on all M antennas; the
    /// rate is split over the top `decode_index` modes.
    QuantizedTemporal { quantizer: Quantizer, eig_index: usize, decode_index: usize },
    /// Rate r₁·log₂(1 + αp γ_th/M) at power αp when λ_i > γ_th, otherwise a
    /// fixed-rate inner quantizer at budget (1−α)p.
    JointRatePower {
        alpha: f64,
        r1: f64,
        inner: Quantizer,
        ln_gamma_th: f64,
        eig_index: usize,
        inner_rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scheme {
    pub cfg: AntennaConfig,
    pub kind: SchemeKind,
    pub p_av: f64,
    pub rate_bits: f64,
}

impl Scheme {
    pub fn no_csit(cfg: AntennaConfig, p_av: f64, rate_bits: f64) -> Self {
        Self { cfg, kind: SchemeKind::NoCsit, p_av, rate_bits }
    }

    pub fn beamforming(cfg: AntennaConfig, p_av: f64, rate_bits: f64) -> Self {
        Self { cfg, kind: SchemeKind::Beamforming, p_av, rate_bits }
    }

    /// Temporal power control with the cutoff that meets p_av for this rate.
    pub fn temporal_perfect(cfg: AntennaConfig, p_av: f64, rate_bits: f64) -> Result<Self> {
        let cut = temporal_cutoff_for_rate(cfg, rate_bits, p_av)?;
        Ok(Self {
            cfg,
            kind: SchemeKind::TemporalPerfect {
                ln_gamma0: cut.ln_gamma0,
                k_mode: mode_rate_constant(rate_bits, cfg.m()),
            },
            p_av,
            rate_bits,
        })
    }

    pub fn optimal_perfect(cfg: AntennaConfig, p_av: f64, rate_bits: f64, power_cut: f64) -> Self {
        Self { cfg, kind: SchemeKind::OptimalPerfect { power_cut }, p_av, rate_bits }
    }

    /// Quantized temporal control on λ_i (law `dist`); the quantizer is
    /// designed for the per-antenna budget p_av/M and per-mode rate R/j with
    /// j = `decode_index` ≤ i.
    #[allow(clippy::too_many_arguments)]
    pub fn quantized(
        cfg: AntennaConfig,
        p_av: f64,
        rate_bits: f64,
        eig_index: usize,
        decode_index: usize,
        bins: usize,
        method: DesignMethod,
        dist: &EigDistribution,
    ) -> Result<Self> {
        cfg.check_index(eig_index)?;
        if decode_index == 0 || decode_index > eig_index {
            return Err(Error::Domain(format!(
                "decode index {decode_index} must lie in [1, {eig_index}]"
            )));
        }
        let q = crate::quantizer::design(
            method,
            dist,
            bins,
            p_av / cfg.tx() as f64,
            rate_bits / decode_index as f64,
        )?
        .quantizer;
        Ok(Self {
            cfg,
            kind: SchemeKind::QuantizedTemporal { quantizer: q, eig_index, decode_index },
            p_av,
            rate_bits,
        })
    }

    /// Joint rate and power control with `bins` feedback levels: one level
    /// flags λ_i > γ_th, the other L−1 drive the inner quantizer.
    pub fn joint(
        cfg: AntennaConfig,
        p_av: f64,
        eig_index: usize,
        alpha: f64,
        r1: f64,
        bins: usize,
        dist: &EigDistribution,
    ) -> Result<Self> {
        cfg.check_index(eig_index)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
        }
        if bins < 2 {
            return Err(Error::Domain("joint scheme needs L >= 2".into()));
        }
        let gamma_th = joint_threshold(cfg, eig_index, alpha, p_av)?;
        let inner_rate = JOINT_INNER_RATE;
        let inner = design_equi_power(
            dist,
            bins - 1,
            (1.0 - alpha) * p_av / cfg.tx() as f64,
            inner_rate / eig_index as f64,
        )?
        .quantizer;
        Ok(Self {
            cfg,
            kind: SchemeKind::JointRatePower {
                alpha,
                r1,
                inner,
                ln_gamma_th: gamma_th.ln(),
                eig_index,
                inner_rate,
            },
            p_av,
            rate_bits: inner_rate,
        })
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            SchemeKind::NoCsit => "no-csit",
            SchemeKind::Beamforming => "beamforming",
            SchemeKind::TemporalPerfect { .. } => "temporal-perfect",
            SchemeKind::OptimalPerfect { .. } => "optimal-perfect",
            SchemeKind::QuantizedTemporal { .. } => "quantized",
            SchemeKind::JointRatePower { .. } => "joint",
        }
    }

    /// Power per transmit eigen-direction for descending eigenvalues.
    pub fn allocate(&self, lambdas: &[f64]) -> PowerAllocation {
        let tx = self.cfg.tx();
        let m = self.cfg.m();
        match &self.kind {
            SchemeKind::NoCsit => PowerAllocation::new(vec![self.p_av / tx as f64; tx]),
            SchemeKind::Beamforming => {
                let mut v = vec![0.0; tx];
                v[0] = self.p_av;
                PowerAllocation::new(v)
            }
            SchemeKind::TemporalPerfect { ln_gamma0, k_mode } => {
                let lm = lambdas[m - 1];
                if lm > 0.0 && lm.ln() > *ln_gamma0 {
                    let mut v = vec![0.0; tx];
                    v[..m].fill(k_mode / lm);
                    PowerAllocation::new(v)
                } else {
                    PowerAllocation::silent(tx)
                }
            }
            SchemeKind::OptimalPerfect { power_cut } => {
                let mut v = vec![0.0; tx];
                let p = inverse_water_filling(&lambdas[..m], self.rate_bits);
                let total: f64 = p.iter().sum();
                if total.is_finite() && total > 0.0 && total <= *power_cut {
                    v[..m].copy_from_slice(&p);
                    PowerAllocation::new(v)
                } else {
                    PowerAllocation::silent(tx)
                }
            }
            SchemeKind::QuantizedTemporal { quantizer, eig_index, .. } => {
                let p = quantizer.power_for(lambdas[eig_index - 1]);
                PowerAllocation::new(vec![p; tx])
            }
            SchemeKind::JointRatePower { alpha, inner, ln_gamma_th, eig_index, .. } => {
                let li = lambdas[eig_index - 1];
                if li > 0.0 && li.ln() > *ln_gamma_th {
                    PowerAllocation::new(vec![alpha * self.p_av / tx as f64; tx])
                } else {
                    PowerAllocation::new(vec![inner.power_for(li); tx])
                }
            }
        }
    }

    /// Codebook rate used in a slot with these eigenvalues (only the joint
    /// scheme varies it).
    pub fn rate_for(&self, lambdas: &[f64]) -> f64 {
        match &self.kind {
            SchemeKind::JointRatePower { alpha, r1, ln_gamma_th, eig_index, inner_rate, .. } => {
                let li = lambdas[eig_index - 1];
                if li > 0.0 && li.ln() > *ln_gamma_th {
                    joint_rate(*r1, *alpha, self.p_av, ln_gamma_th.exp(), self.cfg.tx())
                } else {
                    *inner_rate
                }
            }
            _ => self.rate_bits,
        }
    }
}

/// Rate of the fixed-rate inner codebook of the joint scheme.
pub const JOINT_INNER_RATE: f64 = 1.0;

/// r₁ · log₂(1 + αp γ_th / M): decodable whenever λ_i > γ_th with r₁ ≤ i.
pub fn joint_rate(r1: f64, alpha: f64, p_av: f64, gamma_th: f64, tx: usize) -> f64 {
    r1 * (alpha * p_av * gamma_th / tx as f64).ln_1p() / std::f64::consts::LN_2
}

/// k per mode when R bits are split equally over `modes` eigenmodes.
pub fn mode_rate_constant(rate_bits: f64, modes: usize) -> f64 {
    (rate_bits / modes as f64).exp2() - 1.0
}

/// Powers P_i = [μ − 1/λ_i]^+ with μ chosen so that Σ log₂(1 + P_i λ_i) = R.
/// When every mode is active, μ = 2^{R/m} / (Πλ_j)^{1/m}.
pub fn inverse_water_filling(lambdas: &[f64], rate_bits: f64) -> Vec<f64> {
    let m = lambdas.len();
    let mut out = vec![0.0; m];
    for active in (1..=m).rev() {
        let top = &lambdas[..active];
        if top.iter().any(|&l| l <= 0.0) {
            continue;
        }
        let ln_mu = (rate_bits * std::f64::consts::LN_2 - top.iter().map(|l| l.ln()).sum::<f64>())
            / active as f64;
        // the weakest active mode must sit below the water level
        if ln_mu + top[active - 1].ln() < 0.0 {
            continue;
        }
        let mu = ln_mu.exp();
        for (o, &l) in out.iter_mut().zip(top) {
            *o = (mu - 1.0 / l).max(0.0);
        }
        return out;
    }
    out
}

/// Exact cumulative-sum cut: the largest threshold on the total power such
/// that the average over a calibration sample, counting silent slots as
/// zero, stays within p_av.
pub fn calibrate_power_cut(
    cfg: AntennaConfig,
    p_av: f64,
    rate_bits: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Domain("power cut calibration needs samples".into()));
    }
    let m = cfg.m();
    const CHUNK: usize = 1 << 15;
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(samples - c * CHUNK);
            let mut rng = substream(seed, 0x0C47, c as u64);
            let mut sampler = EigSampler::new(cfg);
            (0..len)
                .map(|_| {
                    let l = sampler.draw(&mut rng);
                    let t: f64 = inverse_water_filling(&l[..m], rate_bits).iter().sum();
                    if t.is_finite() { t } else { f64::INFINITY }
                })
                .collect()
        })
        .collect();
    let mut totals = parts.concat();
    totals.sort_by(f64::total_cmp);
    let budget = p_av * samples as f64;
    let mut acc = 0.0;
    let mut cut = 0.0;
    for &t in &totals {
        if acc + t > budget {
            return Ok(cut);
        }
        acc += t;
        cut = t;
    }
    Ok(f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalCutoff {
    pub ln_gamma0: f64,
    pub gamma0: f64,
    pub zero_outage: bool,
}

impl TemporalCutoff {
    fn zero() -> Self {
        Self { ln_gamma0: f64::NEG_INFINITY, gamma0: 0.0, zero_outage: true }
    }

    fn at(ln_gamma0: f64) -> Self {
        Self { ln_gamma0, gamma0: ln_gamma0.exp(), zero_outage: false }
    }
}

/// Cutoff γ₀ of temporal power control at multiplexing gain r, from
/// ∫_{γ₀}^∞ x^{n−m−1} e^{−x} dx = Γ(n−m+1) p_av^{1−r/m} / m.
/// For n = m the logarithmic form γ₀ = exp(−p_av^{1−r/m}/m) is used.
pub fn temporal_cutoff_perfect(cfg: AntennaConfig, r: f64, p_av: f64) -> Result<TemporalCutoff> {
    let m = cfg.m() as f64;
    if !(r >= 0.0) || r > m {
        return Err(Error::Domain(format!("multiplexing gain {r} outside [0, {m}]")));
    }
    if !(p_av > 0.0) {
        return Err(Error::Domain("average power must be positive".into()));
    }
    let excess = (cfg.n() - cfg.m()) as f64;
    let ln_rhs = ln_gamma(excess + 1.0) + (1.0 - r / m) * p_av.ln() - m.ln();
    if excess == 0.0 {
        return Ok(TemporalCutoff::at(-(ln_rhs.exp())));
    }
    solve_cutoff(excess, ln_rhs)
}

/// Cutoff for an explicit rate R: power k/λ_m on each of the m modes with
/// k = 2^{R/m} − 1, under the Gamma(n−m+1) smallest-eigenvalue model:
/// m k Γ(n−m, γ₀) / Γ(n−m+1) = p_av.
pub fn temporal_cutoff_for_rate(cfg: AntennaConfig, rate_bits: f64, p_av: f64) -> Result<TemporalCutoff> {
    if !(rate_bits > 0.0) || !(p_av > 0.0) {
        return Err(Error::Domain("temporal cutoff needs positive rate and power".into()));
    }
    let m = cfg.m() as f64;
    let k = mode_rate_constant(rate_bits, cfg.m());
    let excess = (cfg.n() - cfg.m()) as f64;
    let ln_rhs = ln_gamma(excess + 1.0) + p_av.ln() - m.ln() - k.ln();
    if excess == 0.0 {
        return Ok(TemporalCutoff::at(inverse_upper_ln(0.0, ln_rhs)?));
    }
    solve_cutoff(excess, ln_rhs)
}

fn solve_cutoff(a: f64, ln_rhs: f64) -> Result<TemporalCutoff> {
    // the boundary case RHS = Γ(a) (n = 2m at r = m) counts as outage free
    if ln_rhs >= ln_gamma(a) - 1e-12 {
        return Ok(TemporalCutoff::zero());
    }
    match inverse_upper_ln(a, ln_rhs) {
        Ok(lg) => Ok(TemporalCutoff::at(lg)),
        Err(Error::NoFiniteThreshold) => Ok(TemporalCutoff::zero()),
        Err(e) => Err(e),
    }
}

/// Power above which temporal control at r < m is outage free:
/// p_av^{1−r/m} > m Γ(n−m) / Γ(n−m+1). None when no such power exists.
pub fn temporal_zero_outage_power(cfg: AntennaConfig, r: f64) -> Option<f64> {
    let m = cfg.m() as f64;
    let excess = (cfg.n() - cfg.m()) as f64;
    if excess == 0.0 {
        return None;
    }
    let ratio = m * (ln_gamma(excess) - ln_gamma(excess + 1.0)).exp();
    if r >= m {
        return if ratio <= 1.0 + 1e-12 { Some(0.0) } else { None };
    }
    Some(ratio.powf(1.0 / (1.0 - r / m)))
}

/// γ_th = (ln(α p_av))^{−1/k} with k = (n−i+1)(m−i+1).
pub fn joint_threshold(cfg: AntennaConfig, i: usize, alpha: f64, p_av: f64) -> Result<f64> {
    let k = cdf_exponent(cfg, i)? as f64;
    let ap = alpha * p_av;
    if !(ap > std::f64::consts::E) {
        return Err(Error::SnrTooLow(ap));
    }
    Ok(ap.ln().powf(-1.0 / k))
}

/// r · log₂(1 + α p_av γ_th) · (1 − F(γ_th)).
pub fn joint_throughput(
    cfg: AntennaConfig,
    i: usize,
    alpha: f64,
    r: f64,
    p_av: f64,
    dist: &EigDistribution,
) -> Result<f64> {
    let g = joint_threshold(cfg, i, alpha, p_av)?;
    let rate = r * (alpha * p_av * g).ln_1p() / std::f64::consts::LN_2;
    Ok(rate * dist.sf(g)?)
}

/// log(1 + αp γ_th) / log(αp): the multiplexing actually achieved by the
/// variable-rate codebook per unit r.
pub fn joint_mux_ratio(cfg: AntennaConfig, i: usize, alpha: f64, p_av: f64) -> Result<f64> {
    let g = joint_threshold(cfg, i, alpha, p_av)?;
    let ap = alpha * p_av;
    Ok((ap * g).ln_1p() / ap.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsirOutage {
    /// Pr{Πλ ≤ M^{−m}}, the limiting event as printed.
    pub printed_limit: f64,
    /// Pr{Πλ ≤ M^{m}}, the limit of the exact event below.
    pub derived_limit: f64,
    /// Pr{Σ log₂(1 + p_av λ_k / M) < m log₂ p_av} at the given p_av.
    pub at_snr: f64,
    pub trials: usize,
}

impl CsirOutage {
    /// Binomial standard error of a probability estimated from these trials.
    pub fn stderr(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// No-CSIT outage at full multiplexing (rate m·log₂ p_av).
pub fn csir_full_mux_outage<R: Rng + ?Sized>(
    cfg: AntennaConfig,
    p_av: f64,
    trials: usize,
    rng: &mut R,
) -> Result<CsirOutage> {
    if trials < 10_000 {
        return Err(Error::TooFewSamples { got: trials, min: 10_000 });
    }
    let m = cfg.m();
    let tx = cfg.tx() as f64;
    let ln_tx_m = m as f64 * tx.ln();
    let rate = m as f64 * p_av.log2();
    let mut sampler = EigSampler::new(cfg);
    let (mut printed, mut derived, mut finite) = (0usize, 0usize, 0usize);
    for _ in 0..trials {
        let l = sampler.draw(rng);
        let ln_prod: f64 = l.iter().map(|x| x.ln()).sum();
        printed += (ln_prod <= -ln_tx_m) as usize;
        derived += (ln_prod <= ln_tx_m) as usize;
        let mi: f64 = l.iter().map(|x| (p_av * x / tx).ln_1p()).sum::<f64>() / std::f64::consts::LN_2;
        finite += (mi < rate) as usize;
    }
    let t = trials as f64;
    Ok(CsirOutage {
        printed_limit: printed as f64 / t,
        derived_limit: derived as f64 / t,
        at_snr: finite as f64 / t,
        trials,
    })
}

/// Monte Carlo estimate of E[(Πλ_j)^{−1/m}] with its standard error, the
/// quantity deciding the r = m case of optimal power control.
pub fn conjecture_moment<R: Rng + ?Sized>(cfg: AntennaConfig, trials: usize, rng: &mut R) -> (f64, f64) {
    let m = cfg.m() as f64;
    let mut sampler = EigSampler::new(cfg);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..trials {
        let ln_prod: f64 = sampler.draw(rng).iter().map(|x| x.ln()).sum();
        let v = (-ln_prod / m).exp();
        s += v;
        s2 += v * v;
    }
    let n = trials as f64;
    let mean = s / n;
    (mean, ((s2 / n - mean * mean).max(0.0) / n).sqrt())
}

/// E₁ re-exported for the n = m cutoff.
pub fn e1(x: f64) -> f64 {
    exp_int_e1(x)
}
